use super::{axpy, dot, Matrix, NetSpec, ParamVector};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Activations kept by [`forward`] for the backward pass.
#[derive(Debug, Clone)]
pub struct DenseCache<T> {
    dims: Vec<(usize, usize)>,
    /// `acts[0]` is the input, `acts[l + 1]` the output of layer `l`.
    acts: Vec<Matrix<T>>,
}

impl<T: Scalar> DenseCache<T> {
    pub fn output(&self) -> &Matrix<T> {
        self.acts.last().expect("at least one layer")
    }

    pub fn input(&self) -> &Matrix<T> {
        &self.acts[0]
    }

    /// Activations of the last hidden layer (the input when there is none).
    pub fn penultimate(&self) -> &Matrix<T> {
        &self.acts[self.acts.len() - 2]
    }
}

/// Dense stack forward pass over a batch (one sample per row).
///
/// For a recurrent spec the rows are hidden states of the cell.
pub fn forward<T: Scalar>(spec: &NetSpec, params: &[T], input: &Matrix<T>) -> Result<(Matrix<T>, DenseCache<T>)> {
    spec.check_params(params)?;
    let dims = spec.dense_dims();
    if input.cols() != dims[0].0 {
        return Err(Error::Shape(format!(
            "input width {} does not match network input {}",
            input.cols(),
            dims[0].0
        )));
    }
    let offsets = spec.dense_offsets();
    let last = dims.len() - 1;
    let mut acts = Vec::with_capacity(dims.len() + 1);
    acts.push(input.clone());
    for (l, (&(fan_in, fan_out), &(w_at, b_at))) in dims.iter().zip(&offsets).enumerate() {
        let w = &params[w_at..w_at + fan_in * fan_out];
        let b = &params[b_at..b_at + fan_out];
        let x = &acts[l];
        let mut y = Matrix::zeros(x.rows(), fan_out);
        for i in 0..x.rows() {
            let xi = x.row(i);
            let yi = y.row_mut(i);
            for o in 0..fan_out {
                let z = b[o] + dot(xi, &w[o * fan_in..(o + 1) * fan_in]);
                yi[o] = if l < last { z.max(T::zero()) } else { z };
            }
        }
        acts.push(y);
    }
    let out = acts.last().expect("non-empty").clone();
    Ok((out, DenseCache { dims, acts }))
}

/// Reverse pass. Returns the parameter gradient (summed over the batch,
/// full canonical length) and the gradient with respect to the input rows.
pub fn backward<T: Scalar>(
    spec: &NetSpec,
    params: &[T],
    cache: &DenseCache<T>,
    grad_output: &Matrix<T>,
) -> Result<(ParamVector<T>, Matrix<T>)> {
    spec.check_params(params)?;
    if cache.dims != spec.dense_dims() {
        return Err(Error::Shape(
            "activation cache was produced by a different network spec".into(),
        ));
    }
    let out = cache.output();
    if grad_output.rows() != out.rows() || grad_output.cols() != out.cols() {
        return Err(Error::Shape(format!(
            "output gradient is {}×{}, outputs are {}×{}",
            grad_output.rows(),
            grad_output.cols(),
            out.rows(),
            out.cols()
        )));
    }
    let offsets = spec.dense_offsets();
    let mut grads = vec![T::zero(); spec.param_count()];
    let mut delta = grad_output.clone();
    let last = cache.dims.len() - 1;
    for l in (0..=last).rev() {
        let (fan_in, fan_out) = cache.dims[l];
        let (w_at, b_at) = offsets[l];
        if l < last {
            // ReLU: post-activation is positive exactly where the pre-activation is.
            let act = &cache.acts[l + 1];
            for (d, &a) in delta.as_mut_slice().iter_mut().zip(act.as_slice()) {
                if a <= T::zero() {
                    *d = T::zero();
                }
            }
        }
        let x = &cache.acts[l];
        let w = &params[w_at..w_at + fan_in * fan_out];
        let mut next = Matrix::zeros(x.rows(), fan_in);
        {
            let (gw, rest) = grads[w_at..].split_at_mut(fan_in * fan_out);
            debug_assert_eq!(b_at, w_at + fan_in * fan_out);
            let gb = &mut rest[..fan_out];
            for i in 0..x.rows() {
                let di = delta.row(i);
                let xi = x.row(i);
                let ni = next.row_mut(i);
                for o in 0..fan_out {
                    let g = di[o];
                    if g == T::zero() {
                        continue;
                    }
                    gb[o] += g;
                    axpy(g, xi, &mut gw[o * fan_in..(o + 1) * fan_in]);
                    axpy(g, &w[o * fan_in..(o + 1) * fan_in], ni);
                }
            }
        }
        delta = next;
    }
    Ok((ParamVector(grads), delta))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_linear_layer() {
        let spec = NetSpec::mlp(vec![1, 1]).unwrap();
        let params = [2.0, 1.0];
        let x = Matrix::from_rows(&[[3.0]]).unwrap();
        let (y, cache) = forward(&spec, &params, &x).unwrap();
        assert_eq!(y.get(0, 0), 7.0);
        // L = ½‖y‖², dL/dy = y.
        let (g, gx) = backward(&spec, &params, &cache, &y).unwrap();
        assert_eq!(g.0, vec![21.0, 7.0]);
        assert_eq!(gx.get(0, 0), 14.0);
    }

    #[test]
    fn zero_params_zero_output() {
        let spec = NetSpec::mlp(vec![3, 4, 2]).unwrap();
        let params = vec![0.0; spec.param_count()];
        let x = Matrix::from_rows(&[[1.0, -2.0, 3.0], [0.5, 0.5, 0.5]]).unwrap();
        let (y, _) = forward(&spec, &params, &x).unwrap();
        assert!(y.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn relu_blocks_negative_units() {
        // Hidden unit 0 has pre-activation −1, unit 1 has +1.
        let spec = NetSpec::mlp(vec![1, 2, 1]).unwrap();
        let params = [-1.0, 1.0, 0.0, 0.0, 5.0, 3.0, 0.0];
        let x = Matrix::from_rows(&[[1.0]]).unwrap();
        let (y, cache) = forward(&spec, &params, &x).unwrap();
        assert_eq!(y.get(0, 0), 3.0);
        let (g, _) = backward(&spec, &params, &cache, &Matrix::from_rows(&[[1.0]]).unwrap()).unwrap();
        assert_eq!(g[0], 0.0);
        assert_eq!(g[4], 0.0);
        assert_eq!(g[1], 3.0);
    }

    #[test]
    fn zero_output_gradient() {
        let spec = NetSpec::mlp(vec![2, 3, 2]).unwrap();
        let params: Vec<f64> = (0..spec.param_count()).map(|i| (i as f64 * 0.37).sin()).collect();
        let x = Matrix::from_rows(&[[0.3, -0.7]]).unwrap();
        let (_, cache) = forward(&spec, &params, &x).unwrap();
        let (g, _) = backward(&spec, &params, &cache, &Matrix::zeros(1, 2)).unwrap();
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn shape_errors() {
        let spec = NetSpec::mlp(vec![2, 2]).unwrap();
        let params = vec![0.0; 6];
        assert!(forward(&spec, &params, &Matrix::zeros(1, 3)).is_err());
        let (_, cache) = forward(&spec, &params, &Matrix::zeros(1, 2)).unwrap();
        let other = NetSpec::mlp(vec![2, 3, 2]).unwrap();
        let other_params = vec![0.0; other.param_count()];
        assert!(backward(&other, &other_params, &cache, &Matrix::zeros(1, 2)).is_err());
    }
}
