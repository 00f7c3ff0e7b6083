//! Loss surfaces along two random directions and one-step sharpness.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::nn::Matrix;
use crate::scalar::Scalar;

/// Default perturbation radius for [`sharpness`].
pub const DEFAULT_RHO: f64 = 0.02;
/// Gradient norms below this make [`sharpness`] report a degenerate point.
pub const DEGENERATE_GRAD_NORM: f64 = 1e-12;
pub const DEFAULT_AXIS_LIMIT: f64 = 10.0;
pub const DEFAULT_AXIS_POINTS: usize = 41;

/// Scalar loss over a flat parameter vector on a frozen batch.
pub trait LossFunction<T> {
    fn loss(&self, params: &[T]) -> Result<T>;

    fn loss_and_grad(&self, params: &[T]) -> Result<(T, Vec<T>)>;

    /// Identifies the frozen batch; 0 when not tracked.
    fn batch_fingerprint(&self) -> u64 {
        0
    }
}

/// FNV-1a over the bit patterns of `values` (as `f64`).
pub fn fingerprint<T: Scalar>(values: &[T]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for v in values {
        for b in v.as_f64().to_bits().to_le_bytes() {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
    h
}

#[derive(Debug, Clone, PartialEq)]
pub struct DirectionPair<T> {
    pub x: Vec<T>,
    pub y: Vec<T>,
    pub seed: u64,
}

impl<T: Scalar> DirectionPair<T> {
    /// Same pair with `x` negated.
    pub fn reflect_x(&self) -> Self {
        Self {
            x: self.x.iter().map(|&v| -v).collect(),
            y: self.y.clone(),
            seed: self.seed,
        }
    }
}

fn dot64(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn normalize64(v: &mut [f64]) -> f64 {
    let n = dot64(v, v).sqrt();
    v.iter_mut().for_each(|x| *x /= n);
    n
}

/// Two seeded standard-normal vectors, orthogonalized and scaled to unit length.
pub fn make_directions<T: Scalar>(dim: usize, seed: u64) -> Result<DirectionPair<T>> {
    if dim < 2 {
        return Err(Error::Invalid(format!(
            "an orthogonal direction pair needs dimension ≥ 2, got {dim}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = || -> Vec<f64> { (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect() };
    let mut x = draw();
    normalize64(&mut x);
    loop {
        let mut y = draw();
        // Two Gram-Schmidt passes keep the residual overlap at rounding level.
        for _ in 0..2 {
            let c = dot64(&y, &x);
            y.iter_mut().zip(&x).for_each(|(yi, xi)| *yi -= c * xi);
        }
        if normalize64(&mut y) > 1e-8 {
            return Ok(DirectionPair {
                x: x.into_iter().map(T::lit).collect(),
                y: y.into_iter().map(T::lit).collect(),
                seed,
            });
        }
    }
}

/// `n` evenly spaced points from `lo` to `hi` inclusive.
pub fn axis<T: Scalar>(lo: f64, hi: f64, n: usize) -> Vec<T> {
    if n == 1 {
        return vec![T::lit(lo)];
    }
    (0..n)
        .map(|i| T::lit(lo + (hi - lo) * i as f64 / (n - 1) as f64))
        .collect()
}

/// 41 points over `[−10, 10]`.
pub fn default_axes<T: Scalar>() -> Vec<T> {
    axis(-DEFAULT_AXIS_LIMIT, DEFAULT_AXIS_LIMIT, DEFAULT_AXIS_POINTS)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LandscapeGrid<T> {
    pub alphas: Vec<T>,
    pub betas: Vec<T>,
    /// `losses[i][j] = L(θ + αᵢx + βⱼy)`; non-finite entries are stored as `T::max_value()`.
    pub losses: Matrix<T>,
    pub overflow: Vec<bool>,
    pub base_loss: T,
    pub checkpoint_step: u64,
    pub batch_fingerprint: u64,
}

impl<T: Scalar> LandscapeGrid<T> {
    pub fn overflowed(&self, i: usize, j: usize) -> bool {
        self.overflow[i * self.betas.len() + j]
    }

    pub fn center(&self) -> Option<T> {
        let i = self.alphas.iter().position(|a| a.is_zero())?;
        let j = self.betas.iter().position(|b| b.is_zero())?;
        Some(self.losses.get(i, j))
    }

    /// Finite loss range `(min, max)`, if any entry is finite.
    pub fn z_range(&self) -> Option<(T, T)> {
        let mut out: Option<(T, T)> = None;
        for (k, &v) in self.losses.as_slice().iter().enumerate() {
            if self.overflow[k] {
                continue;
            }
            out = Some(match out {
                None => (v, v),
                Some((lo, hi)) => (lo.min(v), hi.max(v)),
            });
        }
        out
    }
}

/// Evaluates `eval` on `θ + αx + βy` for every axis pair.
pub fn loss_grid<T: Scalar, L: LossFunction<T> + ?Sized>(
    eval: &L,
    theta: &[T],
    dirs: &DirectionPair<T>,
    alphas: &[T],
    betas: &[T],
    checkpoint_step: u64,
) -> Result<LandscapeGrid<T>> {
    if dirs.x.len() != theta.len() || dirs.y.len() != theta.len() {
        return Err(Error::Shape(format!(
            "directions have length {}/{}, parameters {}",
            dirs.x.len(),
            dirs.y.len(),
            theta.len()
        )));
    }
    if !alphas.iter().any(|a| a.is_zero()) || !betas.iter().any(|b| b.is_zero()) {
        return Err(Error::Invalid("both grid axes must contain 0".into()));
    }
    let base_loss = eval.loss(theta)?;
    if !base_loss.is_finite() {
        return Err(Error::NonFinite {
            what: "loss at the grid center".into(),
            index: 0,
        });
    }
    let mut losses = Matrix::zeros(alphas.len(), betas.len());
    let mut overflow = vec![false; alphas.len() * betas.len()];
    let mut probe = vec![T::zero(); theta.len()];
    for (i, &a) in alphas.iter().enumerate() {
        for (j, &b) in betas.iter().enumerate() {
            for k in 0..theta.len() {
                probe[k] = theta[k] + a * dirs.x[k] + b * dirs.y[k];
            }
            let v = eval.loss(&probe)?;
            if v.is_finite() {
                losses.set(i, j, v);
            } else {
                losses.set(i, j, T::max_value());
                overflow[i * betas.len() + j] = true;
            }
        }
    }
    Ok(LandscapeGrid {
        alphas: alphas.to_vec(),
        betas: betas.to_vec(),
        losses,
        overflow,
        base_loss,
        checkpoint_step,
        batch_fingerprint: eval.batch_fingerprint(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SharpnessReport<T> {
    pub rho: T,
    pub loss_at_theta: T,
    pub loss_at_perturbed: T,
    /// Signed `L(θ + ε̂) − L(θ)`.
    pub sharpness: T,
    pub gradient_norm: T,
    pub degenerate: bool,
}

/// One normalized-gradient ascent step of length `rho` (ℓ2 ball).
pub fn sharpness<T: Scalar, L: LossFunction<T> + ?Sized>(eval: &L, theta: &[T], rho: T) -> Result<SharpnessReport<T>> {
    if !(rho > T::zero()) {
        return Err(Error::Invalid("rho must be positive".into()));
    }
    let (base, grad) = eval.loss_and_grad(theta)?;
    if grad.len() != theta.len() {
        return Err(Error::Shape("gradient length differs from parameters".into()));
    }
    let norm = grad.iter().fold(T::zero(), |acc, &g| acc + g * g).sqrt();
    if !(norm >= T::lit(DEGENERATE_GRAD_NORM)) {
        return Ok(SharpnessReport {
            rho,
            loss_at_theta: base,
            loss_at_perturbed: base,
            sharpness: T::zero(),
            gradient_norm: norm,
            degenerate: true,
        });
    }
    let scale = rho / norm;
    let perturbed: Vec<T> = theta.iter().zip(&grad).map(|(&t, &g)| t + scale * g).collect();
    let after = eval.loss(&perturbed)?;
    if !after.is_finite() {
        return Err(Error::NonFinite {
            what: "loss at the perturbed point".into(),
            index: 0,
        });
    }
    Ok(SharpnessReport {
        rho,
        loss_at_theta: base,
        loss_at_perturbed: after,
        sharpness: after - base,
        gradient_norm: norm,
        degenerate: false,
    })
}

/// One grid of a paired comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossDensityGrid<T> {
    pub checkpoint_step: u64,
    /// 0 for the first run, 1 for the second.
    pub run: usize,
    /// Index of the reward definition the loss was built from.
    pub definition: usize,
    pub grid: LandscapeGrid<T>,
}

/// Grids for two runs' checkpoints under every reward definition, sharing directions.
///
/// `make_loss(definition, θ)` builds the evaluator for one snapshot.
pub fn cross_density<T, L, F>(
    snapshots: &[(u64, [&[T]; 2])],
    definitions: usize,
    mut make_loss: F,
    dirs: &DirectionPair<T>,
    alphas: &[T],
    betas: &[T],
) -> Result<Vec<CrossDensityGrid<T>>>
where
    T: Scalar,
    L: LossFunction<T>,
    F: FnMut(usize, &[T]) -> Result<L>,
{
    let mut out = Vec::with_capacity(snapshots.len() * 2 * definitions);
    for &(step, thetas) in snapshots {
        if thetas[0].len() != thetas[1].len() {
            return Err(Error::Shape(format!(
                "runs have {} and {} parameters",
                thetas[0].len(),
                thetas[1].len()
            )));
        }
        for (run, theta) in thetas.iter().enumerate() {
            for definition in 0..definitions {
                let eval = make_loss(definition, theta)?;
                let grid = loss_grid(&eval, theta, dirs, alphas, betas, step)?;
                out.push(CrossDensityGrid {
                    checkpoint_step: step,
                    run,
                    definition,
                    grid,
                });
            }
        }
    }
    Ok(out)
}
