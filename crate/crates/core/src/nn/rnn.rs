use super::{axpy, backward, dot, forward, DenseCache, Matrix, NetSpec, ParamVector};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Hidden states of one pass of the Elman cell over a sequence.
#[derive(Debug, Clone)]
pub struct RnnTrace<T> {
    inputs: Matrix<T>,
    h0: Vec<T>,
    /// Row `t` holds `h_{t+1}`.
    hidden: Matrix<T>,
}

impl<T: Scalar> RnnTrace<T> {
    pub fn hidden(&self) -> &Matrix<T> {
        &self.hidden
    }

    pub fn initial(&self) -> &[T] {
        &self.h0
    }

    /// Hidden state after the final step (`h0` for an empty sequence).
    pub fn last(&self) -> &[T] {
        if self.hidden.rows() == 0 {
            &self.h0
        } else {
            self.hidden.row(self.hidden.rows() - 1)
        }
    }
}

fn recurrent_block<'a, T: Scalar>(spec: &NetSpec, params: &'a [T]) -> Result<(usize, &'a [T], &'a [T], &'a [T])> {
    let r = spec
        .recurrent
        .ok_or_else(|| Error::Invalid("network spec has no recurrent cell".into()))?;
    spec.check_params(params)?;
    let h = r.hidden_size;
    let n_in = spec.input_size();
    let at = spec.recurrent_offset().expect("recurrent");
    let w_in = &params[at..at + h * n_in];
    let w_rec = &params[at + h * n_in..at + h * n_in + h * h];
    let b = &params[at + h * n_in + h * h..at + h * n_in + h * h + h];
    Ok((h, w_in, w_rec, b))
}

/// `h_t = tanh(W_in·o_t + W_rec·h_{t−1} + b)`, starting from `h0` (zeros when `None`).
pub fn rnn_forward<T: Scalar>(spec: &NetSpec, params: &[T], seq: &Matrix<T>, h0: Option<&[T]>) -> Result<RnnTrace<T>> {
    let (h, w_in, w_rec, b) = recurrent_block(spec, params)?;
    let n_in = spec.input_size();
    if seq.cols() != n_in {
        return Err(Error::Shape(format!(
            "observation width {} does not match recurrent input {n_in}",
            seq.cols()
        )));
    }
    let h0 = match h0 {
        Some(v) if v.len() != h => {
            return Err(Error::Shape(format!(
                "initial state has {} entries, cell has {h}",
                v.len()
            )))
        }
        Some(v) => v.to_vec(),
        None => vec![T::zero(); h],
    };
    let mut hidden = Matrix::zeros(seq.rows(), h);
    let mut prev = h0.clone();
    for t in 0..seq.rows() {
        let o = seq.row(t);
        let row = hidden.row_mut(t);
        for j in 0..h {
            let z = b[j] + dot(&w_in[j * n_in..(j + 1) * n_in], o) + dot(&w_rec[j * h..(j + 1) * h], &prev);
            row[j] = z.tanh();
        }
        prev.copy_from_slice(row);
    }
    Ok(RnnTrace {
        inputs: seq.clone(),
        h0,
        hidden,
    })
}

/// Backpropagation through the whole traced sequence.
///
/// `grad_hidden` row `t` is `∂L/∂h_{t+1}` from outside the recurrence.
/// Cell gradients are accumulated into `grads` (canonical layout);
/// the gradient with respect to `h0` is returned.
pub fn rnn_backward<T: Scalar>(
    spec: &NetSpec,
    params: &[T],
    trace: &RnnTrace<T>,
    grad_hidden: &Matrix<T>,
    grads: &mut [T],
) -> Result<Vec<T>> {
    let (h, _, w_rec, _) = recurrent_block(spec, params)?;
    let n_in = spec.input_size();
    if grad_hidden.rows() != trace.hidden.rows() || grad_hidden.cols() != h || trace.h0.len() != h {
        return Err(Error::Shape("hidden-state gradient does not match the trace".into()));
    }
    if grads.len() != params.len() {
        return Err(Error::Shape("gradient buffer length differs from parameters".into()));
    }
    let at = spec.recurrent_offset().expect("recurrent");
    let (g_in, rest) = grads[at..].split_at_mut(h * n_in);
    let (g_rec, g_b) = rest.split_at_mut(h * h);
    let mut carry = vec![T::zero(); h];
    let mut da = vec![T::zero(); h];
    for t in (0..trace.hidden.rows()).rev() {
        let ht = trace.hidden.row(t);
        let prev = if t == 0 { &trace.h0[..] } else { trace.hidden.row(t - 1) };
        let gh = grad_hidden.row(t);
        for j in 0..h {
            da[j] = (gh[j] + carry[j]) * (T::one() - ht[j] * ht[j]);
        }
        let o = trace.inputs.row(t);
        for j in 0..h {
            let d = da[j];
            g_b[j] += d;
            if d == T::zero() {
                continue;
            }
            axpy(d, o, &mut g_in[j * n_in..(j + 1) * n_in]);
            axpy(d, prev, &mut g_rec[j * h..(j + 1) * h]);
        }
        carry.iter_mut().for_each(|c| *c = T::zero());
        for j in 0..h {
            axpy(da[j], &w_rec[j * h..(j + 1) * h], &mut carry);
        }
    }
    Ok(carry)
}

/// Cache of a recurrent network pass: cell trace plus the dense head.
#[derive(Debug, Clone)]
pub struct SeqCache<T> {
    pub trace: RnnTrace<T>,
    pub head: DenseCache<T>,
}

/// Runs the cell over `seq` and the dense head on every hidden state.
pub fn seq_forward<T: Scalar>(
    spec: &NetSpec,
    params: &[T],
    seq: &Matrix<T>,
    h0: Option<&[T]>,
) -> Result<(Matrix<T>, SeqCache<T>)> {
    let trace = rnn_forward(spec, params, seq, h0)?;
    let (out, head) = forward(spec, params, trace.hidden())?;
    Ok((out, SeqCache { trace, head }))
}

/// Gradient of a loss on the outputs of [`seq_forward`], truncated at the
/// start of the traced sequence.
pub fn seq_backward<T: Scalar>(
    spec: &NetSpec,
    params: &[T],
    cache: &SeqCache<T>,
    grad_output: &Matrix<T>,
) -> Result<ParamVector<T>> {
    let (mut grads, grad_hidden) = backward(spec, params, &cache.head, grad_output)?;
    rnn_backward(spec, params, &cache.trace, &grad_hidden, &mut grads)?;
    Ok(grads)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_cell() -> (NetSpec, Vec<f64>) {
        // Head: 1 → 1 identity (w = 1, b = 0). Cell: W_in = 1, W_rec = 0.5, b = 0.
        let spec = NetSpec::recurrent(vec![1, 1], 1, 8).unwrap();
        (spec, vec![1.0, 0.0, 1.0, 0.5, 0.0])
    }

    #[test]
    fn scalar_cell_values() {
        let (spec, params) = scalar_cell();
        let seq = Matrix::from_rows(&[[1.0], [1.0]]).unwrap();
        let trace = rnn_forward(&spec, &params, &seq, None).unwrap();
        let h1 = 1f64.tanh();
        let h2 = (1.0 + 0.5 * h1).tanh();
        assert_eq!(trace.hidden().get(0, 0), h1);
        assert_eq!(trace.hidden().get(1, 0), h2);
        assert!((h1 - 0.76159).abs() < 1e-5);
        assert!((h2 - 0.88113).abs() < 1e-5);
    }

    #[test]
    fn single_step_is_one_cell_application() {
        let (spec, params) = scalar_cell();
        let seq = Matrix::from_rows(&[[0.3]]).unwrap();
        let trace = rnn_forward(&spec, &params, &seq, Some(&[0.2])).unwrap();
        assert_eq!(trace.last()[0], (0.3 + 0.5 * 0.2f64).tanh());
    }

    #[test]
    fn zero_params_zero_states() {
        let spec = NetSpec::recurrent(vec![3, 2], 4, 8).unwrap();
        let params = vec![0.0; spec.param_count()];
        let seq = Matrix::from_rows(&[[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]]).unwrap();
        let trace = rnn_forward(&spec, &params, &seq, None).unwrap();
        assert!(trace.hidden().as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn non_recurrent_spec_rejected() {
        let spec = NetSpec::mlp(vec![1, 1]).unwrap();
        let seq = Matrix::from_rows(&[[1.0]]).unwrap();
        assert!(matches!(
            rnn_forward(&spec, &[0.0, 0.0], &seq, None),
            Err(Error::Invalid(_))
        ));
    }

    #[test]
    fn two_step_gradient_by_hand() {
        // L = h2 through the identity head.
        let (spec, params) = scalar_cell();
        let seq = Matrix::from_rows(&[[1.0], [1.0]]).unwrap();
        let (_, cache) = seq_forward(&spec, &params, &seq, None).unwrap();
        let g = seq_backward(&spec, &params, &cache, &Matrix::from_rows(&[[0.0], [1.0]]).unwrap()).unwrap();
        let h1 = 1f64.tanh();
        let h2 = (1.0 + 0.5 * h1).tanh();
        let d2 = 1.0 - h2 * h2;
        let d1 = d2 * 0.5 * (1.0 - h1 * h1);
        assert!((g[2] - (d2 + d1)).abs() < 1e-15); // W_in
        assert!((g[3] - d2 * h1).abs() < 1e-15); // W_rec
        assert!((g[4] - (d2 + d1)).abs() < 1e-15); // b
        assert!((g[0] - h2).abs() < 1e-15); // head weight
    }
}
