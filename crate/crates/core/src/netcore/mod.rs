//! Reverse-mode building blocks for the speaker model: each operator is a
//! forward function plus an explicit adjoint, composed by hand in `xvector`.

pub mod adam;
mod conv;
mod dense;
pub mod gradcheck;
mod pool;
mod score;

pub use adam::{AdamConfig, AdamState};
pub use conv::{conv1d_backward, conv1d_forward, ConvShape};
pub use dense::{affine_backward, affine_forward, relu_backward, relu_forward};
pub use gradcheck::{gradcheck, GradCheckConfig, GradCheckReport};
pub use pool::{stats_pool_backward, stats_pool_forward, PoolCache, VARIANCE_FLOOR};
pub use score::{
    cross_entropy_grad, score_probs_backward, score_probs_forward, scores_backward, softmax,
    softmax_backward, HeadGrads, ScoreGrads, ScoringHead,
};

/// `len × channels` activations, row-major (one row per frame).
#[derive(Debug, Clone, PartialEq)]
pub struct Frames {
    pub data: Vec<f64>,
    pub len: usize,
    pub channels: usize,
}

impl Frames {
    pub fn new(data: Vec<f64>, len: usize, channels: usize) -> Self {
        debug_assert_eq!(data.len(), len * channels);
        Self {
            data,
            len,
            channels,
        }
    }

    pub fn zeros(len: usize, channels: usize) -> Self {
        Self::new(vec![0.0; len * channels], len, channels)
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.data[t * self.channels..(t + 1) * self.channels]
    }
}

/// A named trainable array and its gradient accumulator.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameter {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
    pub grad: Vec<f64>,
}

impl Parameter {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, values: Vec<f64>) -> Self {
        let n: usize = shape.iter().product();
        assert_eq!(n, values.len(), "parameter values do not match shape");
        Self {
            name: name.into(),
            shape,
            grad: vec![0.0; n],
            values,
        }
    }

    pub fn zeros(name: impl Into<String>, shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self::new(name, shape, vec![0.0; n])
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = 0.0);
    }
}

/// Dot product with four independent accumulators so the loop vectorizes.
#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0; 4];
    let mut ca = a.chunks_exact(4);
    let mut cb = b.chunks_exact(4);
    for (x, y) in (&mut ca).zip(&mut cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let tail: f64 = ca
        .remainder()
        .iter()
        .zip(cb.remainder())
        .map(|(x, y)| x * y)
        .sum();
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// `y += alpha * x`
#[inline]
pub(crate) fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}
