//! Small from-scratch networks with exact reverse-mode gradients.
//!
//! Parameters live in one flat [`ParamVector`] with a fixed layout: for each
//! dense layer its weight matrix (row-major, `out × in`) then its bias; the
//! recurrent cell's input matrix, recurrent matrix and bias come last.
//! A recurrent spec feeds the cell's hidden state into the dense stack.

mod adam;
mod checkpoint;
mod matrix;
mod mlp;
mod rnn;

pub use adam::AdamState;
pub use checkpoint::{parse_checkpoint, read_checkpoint, write_checkpoint, CheckpointBundle};
pub use matrix::Matrix;
pub use mlp::{backward, forward, DenseCache};
pub use rnn::{rnn_backward, rnn_forward, seq_backward, seq_forward, RnnTrace, SeqCache};

use std::ops::{Deref, DerefMut};

use rand::Rng;
use rand_distr::{Distribution, Uniform};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub(crate) use matrix::{axpy, dot};

/// Truncation length used for recurrent policies unless configured.
pub const DEFAULT_TRUNCATION: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RecurrentSpec {
    pub hidden_size: usize,
    pub truncation: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct NetSpec {
    /// Input width, hidden widths, output width. ReLU on hidden layers.
    pub layer_sizes: Vec<usize>,
    pub recurrent: Option<RecurrentSpec>,
}

impl NetSpec {
    pub fn mlp(layer_sizes: Vec<usize>) -> Result<Self> {
        let spec = Self {
            layer_sizes,
            recurrent: None,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn recurrent(layer_sizes: Vec<usize>, hidden_size: usize, truncation: usize) -> Result<Self> {
        let spec = Self {
            layer_sizes,
            recurrent: Some(RecurrentSpec {
                hidden_size,
                truncation,
            }),
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_sizes.len() < 2 || self.layer_sizes.contains(&0) {
            return Err(Error::Invalid(format!(
                "layer sizes must list at least input and output widths, all positive: {:?}",
                self.layer_sizes
            )));
        }
        if let Some(r) = self.recurrent {
            if r.hidden_size == 0 || r.truncation == 0 {
                return Err(Error::Invalid(
                    "recurrent hidden size and truncation must be ≥ 1".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn input_size(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_size(&self) -> usize {
        *self.layer_sizes.last().expect("validated")
    }

    pub fn is_recurrent(&self) -> bool {
        self.recurrent.is_some()
    }

    /// `(fan_in, fan_out)` of each dense layer.
    pub fn dense_dims(&self) -> Vec<(usize, usize)> {
        let mut dims: Vec<_> = self.layer_sizes.windows(2).map(|w| (w[0], w[1])).collect();
        if let Some(r) = self.recurrent {
            dims[0].0 = r.hidden_size;
        }
        dims
    }

    /// Offsets of `(weights, bias)` for every dense layer.
    pub(crate) fn dense_offsets(&self) -> Vec<(usize, usize)> {
        let mut at = 0;
        self.dense_dims()
            .into_iter()
            .map(|(i, o)| {
                let w = at;
                at += i * o;
                let b = at;
                at += o;
                (w, b)
            })
            .collect()
    }

    fn dense_param_count(&self) -> usize {
        self.dense_dims().iter().map(|&(i, o)| i * o + o).sum()
    }

    /// Offset of the recurrent block (`W_in`, `W_rec`, `b`), if any.
    pub(crate) fn recurrent_offset(&self) -> Option<usize> {
        self.recurrent.map(|_| self.dense_param_count())
    }

    pub fn param_count(&self) -> usize {
        let rec = self.recurrent.map_or(0, |r| {
            let h = r.hidden_size;
            h * self.input_size() + h * h + h
        });
        self.dense_param_count() + rec
    }

    /// Glorot-uniform weights, zero biases.
    pub fn init_params<T: Scalar, R: Rng + ?Sized>(&self, rng: &mut R) -> ParamVector<T> {
        let mut out = Vec::with_capacity(self.param_count());
        let mut glorot = |rows: usize, cols: usize, out: &mut Vec<T>| {
            let limit = (6.0 / (rows + cols) as f64).sqrt();
            let dist = Uniform::new_inclusive(-limit, limit);
            out.extend((0..rows * cols).map(|_| T::lit(dist.sample(rng))));
        };
        for (i, o) in self.dense_dims() {
            glorot(o, i, &mut out);
            out.extend(std::iter::repeat(T::zero()).take(o));
        }
        if let Some(r) = self.recurrent {
            let h = r.hidden_size;
            glorot(h, self.input_size(), &mut out);
            glorot(h, h, &mut out);
            out.extend(std::iter::repeat(T::zero()).take(h));
        }
        ParamVector(out)
    }

    pub(crate) fn check_params<T>(&self, params: &[T]) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(Error::Shape(format!(
                "parameter vector has {} entries, spec {:?} needs {}",
                params.len(),
                self.layer_sizes,
                self.param_count()
            )));
        }
        Ok(())
    }
}

/// Flat parameter vector in the canonical layout.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamVector<T>(pub Vec<T>);

impl<T> Deref for ParamVector<T> {
    type Target = [T];

    fn deref(&self) -> &[T] {
        &self.0
    }
}

impl<T> DerefMut for ParamVector<T> {
    fn deref_mut(&mut self) -> &mut [T] {
        &mut self.0
    }
}

impl<T> From<Vec<T>> for ParamVector<T> {
    fn from(v: Vec<T>) -> Self {
        ParamVector(v)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer<T> {
    pub weights: Matrix<T>,
    pub bias: Vec<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecurrentCell<T> {
    pub w_in: Matrix<T>,
    pub w_rec: Matrix<T>,
    pub bias: Vec<T>,
}

/// Structured view of a parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Layers<T> {
    pub dense: Vec<DenseLayer<T>>,
    pub cell: Option<RecurrentCell<T>>,
}

impl<T: Scalar> Layers<T> {
    pub fn from_params(spec: &NetSpec, params: &[T]) -> Result<Self> {
        spec.check_params(params)?;
        let mut at = 0;
        let mut take = |n: usize| {
            let s = params[at..at + n].to_vec();
            at += n;
            s
        };
        let mut dense = Vec::new();
        for (i, o) in spec.dense_dims() {
            let weights = Matrix::from_vec(o, i, take(i * o))?;
            dense.push(DenseLayer { weights, bias: take(o) });
        }
        let cell = match spec.recurrent {
            Some(r) => {
                let h = r.hidden_size;
                let w_in = Matrix::from_vec(h, spec.input_size(), take(h * spec.input_size()))?;
                let w_rec = Matrix::from_vec(h, h, take(h * h))?;
                Some(RecurrentCell {
                    w_in,
                    w_rec,
                    bias: take(h),
                })
            }
            None => None,
        };
        Ok(Self { dense, cell })
    }

    pub fn flatten(&self) -> ParamVector<T> {
        let mut out = Vec::new();
        for l in &self.dense {
            out.extend_from_slice(l.weights.as_slice());
            out.extend_from_slice(&l.bias);
        }
        if let Some(c) = &self.cell {
            out.extend_from_slice(c.w_in.as_slice());
            out.extend_from_slice(c.w_rec.as_slice());
            out.extend_from_slice(&c.bias);
        }
        ParamVector(out)
    }
}

/// Flatten → structured → flatten.
pub fn param_roundtrip<T: Scalar>(spec: &NetSpec, params: &[T]) -> Result<ParamVector<T>> {
    Ok(Layers::from_params(spec, params)?.flatten())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn param_counts() {
        let spec = NetSpec::mlp(vec![4, 64, 64, 4]).unwrap();
        assert_eq!(spec.param_count(), 4 * 64 + 64 + 64 * 64 + 64 + 64 * 4 + 4);
        let rec = NetSpec::recurrent(vec![75, 16, 4], 32, 8).unwrap();
        assert_eq!(rec.dense_dims(), vec![(32, 16), (16, 4)]);
        assert_eq!(rec.param_count(), 32 * 16 + 16 + 16 * 4 + 4 + 32 * 75 + 32 * 32 + 32);
        assert!(NetSpec::mlp(vec![4]).is_err());
        assert!(NetSpec::recurrent(vec![4, 2], 3, 0).is_err());
    }

    #[test]
    fn init_is_seeded_and_bounded() {
        let spec = NetSpec::mlp(vec![3, 5, 2]).unwrap();
        let a: ParamVector<f64> = spec.init_params(&mut ChaCha8Rng::seed_from_u64(3));
        let b: ParamVector<f64> = spec.init_params(&mut ChaCha8Rng::seed_from_u64(3));
        assert_eq!(a, b);
        let limit = (6.0f64 / 8.0).sqrt();
        assert!(a[..15].iter().all(|w| w.abs() <= limit));
        assert!(a[15..20].iter().all(|&b| b == 0.0));
    }

    #[test]
    fn roundtrip_rejects_wrong_length() {
        let spec = NetSpec::mlp(vec![2, 2]).unwrap();
        assert!(param_roundtrip(&spec, &[0.0f64; 5]).is_err());
    }
}
