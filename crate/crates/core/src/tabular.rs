//! Exact solvers for small deterministic MDPs.
//!
//! These are the ground truth the shaping checks are measured against:
//! synchronous value iteration, iterative policy evaluation and the
//! per-state enumeration of optimal actions.

use std::collections::BTreeSet;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Maximum number of synchronous sweeps before giving up.
pub const DEFAULT_MAX_SWEEPS: usize = 100_000;

/// Default tolerance used when grouping near-equal action values.
pub const DEFAULT_TIE_TOL: f64 = 1e-9;

/// Deterministic tabular MDP. Terminal states are absorbing with zero reward.
#[derive(Debug, Clone, PartialEq)]
pub struct MdpTable<T> {
    state_count: usize,
    action_count: usize,
    next_state: Vec<usize>,
    reward: Vec<T>,
    terminal: Vec<bool>,
}

impl<T: Scalar> MdpTable<T> {
    /// Builds a table from row-major `(state, action)` arrays.
    ///
    /// Terminal rows are overwritten with self-loops and zero reward.
    pub fn new(
        state_count: usize,
        action_count: usize,
        mut next_state: Vec<usize>,
        mut reward: Vec<T>,
        terminal: Vec<bool>,
    ) -> Result<Self> {
        if state_count == 0 || action_count == 0 {
            return Err(Error::Invalid("MDP needs at least one state and one action".into()));
        }
        let pairs = state_count * action_count;
        if next_state.len() != pairs || reward.len() != pairs || terminal.len() != state_count {
            return Err(Error::Shape(format!(
                "expected {pairs} transitions and {state_count} terminal flags, got {}/{}/{}",
                next_state.len(),
                reward.len(),
                terminal.len()
            )));
        }
        if let Some(bad) = next_state.iter().position(|&n| n >= state_count) {
            return Err(Error::Invalid(format!(
                "next state {} out of range at pair {bad}",
                next_state[bad]
            )));
        }
        for s in (0..state_count).filter(|&s| terminal[s]) {
            for a in 0..action_count {
                next_state[s * action_count + a] = s;
                reward[s * action_count + a] = T::zero();
            }
        }
        Ok(Self {
            state_count,
            action_count,
            next_state,
            reward,
            terminal,
        })
    }

    pub fn state_count(&self) -> usize {
        self.state_count
    }

    pub fn action_count(&self) -> usize {
        self.action_count
    }

    #[inline]
    pub fn next_state(&self, s: usize, a: usize) -> usize {
        self.next_state[s * self.action_count + a]
    }

    #[inline]
    pub fn reward(&self, s: usize, a: usize) -> T {
        self.reward[s * self.action_count + a]
    }

    #[inline]
    pub fn is_terminal(&self, s: usize) -> bool {
        self.terminal[s]
    }

    /// Same dynamics with a different reward table. Terminal rows stay zero.
    pub fn with_rewards(&self, reward: Vec<T>) -> Result<Self> {
        Self::new(
            self.state_count,
            self.action_count,
            self.next_state.clone(),
            reward,
            self.terminal.clone(),
        )
    }

    /// Applies `f(s, a, s', reward)` to every non-terminal pair.
    pub fn map_rewards(&self, mut f: impl FnMut(usize, usize, usize, T) -> T) -> Result<Self> {
        let mut reward = self.reward.clone();
        for s in 0..self.state_count {
            if self.terminal[s] {
                continue;
            }
            for a in 0..self.action_count {
                let i = s * self.action_count + a;
                reward[i] = f(s, a, self.next_state[i], self.reward[i]);
            }
        }
        self.with_rewards(reward)
    }
}

/// Action values together with the discount and final residual that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct QTable<T> {
    values: Vec<T>,
    action_count: usize,
    pub gamma: T,
    pub residual: T,
}

impl<T: Scalar> QTable<T> {
    /// Wraps a raw row-major table; used by tests and crafted examples.
    pub fn from_values(values: Vec<T>, action_count: usize, gamma: T) -> Result<Self> {
        if action_count == 0 || values.len() % action_count != 0 {
            return Err(Error::Shape(format!(
                "{} values do not split into rows of {action_count}",
                values.len()
            )));
        }
        Ok(Self {
            values,
            action_count,
            gamma,
            residual: T::zero(),
        })
    }

    #[inline]
    pub fn get(&self, s: usize, a: usize) -> T {
        self.values[s * self.action_count + a]
    }

    pub fn row(&self, s: usize) -> &[T] {
        &self.values[s * self.action_count..(s + 1) * self.action_count]
    }

    pub fn state_count(&self) -> usize {
        self.values.len() / self.action_count
    }

    pub fn action_count(&self) -> usize {
        self.action_count
    }

    pub fn max_value(&self, s: usize) -> T {
        self.row(s).iter().copied().fold(T::neg_infinity(), T::max)
    }

    /// Greedy policy, lowest index on ties.
    pub fn greedy_policy(&self) -> Vec<usize> {
        (0..self.state_count())
            .map(|s| {
                let row = self.row(s);
                let mut best = 0;
                for (a, &q) in row.iter().enumerate().skip(1) {
                    if q > row[best] {
                        best = a;
                    }
                }
                best
            })
            .collect()
    }
}

fn check_gamma<T: Scalar>(gamma: T) -> Result<()> {
    if !(gamma > T::zero() && gamma <= T::one()) {
        return Err(Error::Invalid(format!("gamma must lie in (0, 1], got {gamma}")));
    }
    Ok(())
}

/// Synchronous value iteration until `‖Q_{k+1} − Q_k‖∞ < tol`.
pub fn value_iteration<T: Scalar>(mdp: &MdpTable<T>, gamma: T, tol: T) -> Result<QTable<T>> {
    value_iteration_capped(mdp, gamma, tol, DEFAULT_MAX_SWEEPS)
}

pub fn value_iteration_capped<T: Scalar>(mdp: &MdpTable<T>, gamma: T, tol: T, max_sweeps: usize) -> Result<QTable<T>> {
    check_gamma(gamma)?;
    let (ns, na) = (mdp.state_count, mdp.action_count);
    let mut q = vec![T::zero(); ns * na];
    let mut next = vec![T::zero(); ns * na];
    let mut v = vec![T::zero(); ns];
    let mut residual = T::infinity();
    for _ in 0..max_sweeps {
        for (s, vs) in v.iter_mut().enumerate() {
            *vs = q[s * na..(s + 1) * na].iter().copied().fold(T::neg_infinity(), T::max);
        }
        residual = T::zero();
        for s in 0..ns {
            for a in 0..na {
                let i = s * na + a;
                let updated = if mdp.terminal[s] {
                    T::zero()
                } else {
                    mdp.reward[i] + gamma * v[mdp.next_state[i]]
                };
                residual = residual.max((updated - q[i]).abs());
                next[i] = updated;
            }
        }
        std::mem::swap(&mut q, &mut next);
        if residual < tol {
            return Ok(QTable {
                values: q,
                action_count: na,
                gamma,
                residual,
            });
        }
    }
    Err(Error::NonConvergence {
        gamma: gamma.as_f64(),
        residual: residual.as_f64(),
        sweeps: max_sweeps,
    })
}

/// Iterative evaluation of a deterministic stationary policy.
pub fn policy_evaluation<T: Scalar>(mdp: &MdpTable<T>, policy: &[usize], gamma: T, tol: T) -> Result<Vec<T>> {
    check_gamma(gamma)?;
    if policy.len() != mdp.state_count {
        return Err(Error::Shape(format!(
            "policy covers {} states, MDP has {}",
            policy.len(),
            mdp.state_count
        )));
    }
    if let Some(s) = policy.iter().position(|&a| a >= mdp.action_count) {
        return Err(Error::Invalid(format!("policy action out of range in state {s}")));
    }
    let mut v = vec![T::zero(); mdp.state_count];
    let mut next = v.clone();
    let mut residual = T::infinity();
    for _ in 0..DEFAULT_MAX_SWEEPS {
        residual = T::zero();
        for s in 0..mdp.state_count {
            let updated = if mdp.terminal[s] {
                T::zero()
            } else {
                let a = policy[s];
                mdp.reward(s, a) + gamma * v[mdp.next_state(s, a)]
            };
            residual = residual.max((updated - v[s]).abs());
            next[s] = updated;
        }
        std::mem::swap(&mut v, &mut next);
        if residual < tol {
            return Ok(v);
        }
    }
    Err(Error::NonConvergence {
        gamma: gamma.as_f64(),
        residual: residual.as_f64(),
        sweeps: DEFAULT_MAX_SWEEPS,
    })
}

pub type ActionSet = BTreeSet<usize>;

/// Per-state set of actions within `tie_tol` of the best action value.
///
/// States with the supplied terminal flag set map to every action.
pub fn optimal_action_sets<T: Scalar>(q: &QTable<T>, terminal: Option<&[bool]>, tie_tol: T) -> Vec<ActionSet> {
    (0..q.state_count())
        .map(|s| {
            if terminal.is_some_and(|t| t[s]) {
                return (0..q.action_count).collect();
            }
            let best = q.max_value(s);
            q.row(s)
                .iter()
                .enumerate()
                .filter(|(_, &v)| v >= best - tie_tol)
                .map(|(a, _)| a)
                .collect()
        })
        .collect()
}

/// Convenience wrapper that reads terminal flags from the MDP.
pub fn optimal_action_sets_for<T: Scalar>(mdp: &MdpTable<T>, q: &QTable<T>, tie_tol: T) -> Vec<ActionSet> {
    optimal_action_sets(q, Some(&mdp.terminal), tie_tol)
}

#[cfg(test)]
mod tests {
    use super::*;

    const LEFT: usize = 0;
    const RIGHT: usize = 1;

    /// Two cells on a line; cell 1 is the terminal goal.
    fn line() -> MdpTable<f64> {
        MdpTable::new(
            2,
            2,
            vec![0, 1, 1, 1],
            vec![-0.1, -0.1 + 1.0, 0.0, 0.0],
            vec![false, true],
        )
        .unwrap()
    }

    #[test]
    fn two_state_line_values() {
        let q = value_iteration(&line(), 0.9, 1e-12).unwrap();
        assert!((q.get(0, RIGHT) - 0.9).abs() < 1e-12);
        assert!((q.get(0, LEFT) - 0.71).abs() < 1e-10);
        assert_eq!(q.get(1, LEFT), 0.0);
        assert!(q.residual < 1e-12);
    }

    #[test]
    fn two_state_line_optimal_set() {
        let mdp = line();
        let q = value_iteration(&mdp, 0.9, 1e-12).unwrap();
        let sets = optimal_action_sets_for(&mdp, &q, DEFAULT_TIE_TOL);
        assert_eq!(sets[0], ActionSet::from([RIGHT]));
        assert_eq!(sets[1], ActionSet::from([LEFT, RIGHT]));
    }

    #[test]
    fn zero_rewards_give_zero_values() {
        let mdp = line().with_rewards(vec![0.0; 4]).unwrap();
        for gamma in [0.5, 0.9, 1.0] {
            let q = value_iteration(&mdp, gamma, 1e-12).unwrap();
            assert!((0..2).all(|s| q.row(s).iter().all(|&v| v == 0.0)));
            let sets = optimal_action_sets(&q, None, DEFAULT_TIE_TOL);
            assert!(sets.iter().all(|s| s.len() == 2));
            let v = policy_evaluation(&mdp, &[RIGHT, RIGHT], gamma, 1e-12).unwrap();
            assert_eq!(v, vec![0.0, 0.0]);
        }
    }

    #[test]
    fn exact_ties_are_kept() {
        let q = QTable::from_values(vec![1.0, 1.0, 0.5], 3, 0.9).unwrap();
        let sets = optimal_action_sets(&q, None, DEFAULT_TIE_TOL);
        assert_eq!(sets[0], ActionSet::from([0, 1]));
    }

    #[test]
    fn always_right_policy_value() {
        let v = policy_evaluation(&line(), &[RIGHT, RIGHT], 0.9, 1e-12).unwrap();
        assert!((v[0] - 0.9).abs() < 1e-12);
        assert_eq!(v[1], 0.0);
    }

    #[test]
    fn gamma_one_without_terminal_hits_the_cap() {
        // A self-loop with positive reward never converges undiscounted.
        let mdp = MdpTable::new(1, 1, vec![0], vec![1.0], vec![false]).unwrap();
        let err = value_iteration_capped(&mdp, 1.0, 1e-9, 500).unwrap_err();
        match err {
            Error::NonConvergence { gamma, residual, .. } => {
                assert_eq!(gamma, 1.0);
                assert!(residual >= 1.0);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn terminal_rows_become_absorbing() {
        let mdp = MdpTable::new(2, 1, vec![0, 0], vec![3.0, 7.0], vec![false, true]).unwrap();
        assert_eq!(mdp.next_state(1, 0), 1);
        assert_eq!(mdp.reward(1, 0), 0.0);
    }

    #[test]
    fn rejects_out_of_range_successor() {
        assert!(MdpTable::<f64>::new(1, 1, vec![1], vec![0.0], vec![false]).is_err());
    }

    #[test]
    fn works_in_single_precision() {
        let mdp = MdpTable::<f32>::new(2, 2, vec![0, 1, 1, 1], vec![-0.1, 0.9, 0.0, 0.0], vec![false, true]).unwrap();
        let q = value_iteration(&mdp, 0.9f32, 1e-6).unwrap();
        assert!((q.get(0, RIGHT) - 0.9).abs() < 1e-6);
    }
}
