use super::{axpy, dot};
use crate::error::{Error, Result};

/// `y = W x + b` with `W` stored `out × in` row-major.
pub fn affine_forward(x: &[f64], weight: &[f64], bias: &[f64]) -> Result<Vec<f64>> {
    let (n_out, n_in) = (bias.len(), x.len());
    if weight.len() != n_out * n_in {
        return Err(Error::shape("affine", n_out * n_in, weight.len()));
    }
    Ok((0..n_out)
        .map(|o| bias[o] + dot(&weight[o * n_in..(o + 1) * n_in], x))
        .collect())
}

/// Returns `Wᵀ g`; accumulates `g xᵀ` and `g` into the optional buffers.
pub fn affine_backward(
    x: &[f64],
    weight: &[f64],
    grad_out: &[f64],
    grad_weight: Option<&mut [f64]>,
    grad_bias: Option<&mut [f64]>,
) -> Result<Vec<f64>> {
    let (n_out, n_in) = (grad_out.len(), x.len());
    if weight.len() != n_out * n_in {
        return Err(Error::shape("affine_backward", n_out * n_in, weight.len()));
    }
    let mut gx = vec![0.0; n_in];
    for (o, &g) in grad_out.iter().enumerate() {
        axpy(g, &weight[o * n_in..(o + 1) * n_in], &mut gx);
    }
    if let Some(gw) = grad_weight {
        for (o, &g) in grad_out.iter().enumerate() {
            axpy(g, x, &mut gw[o * n_in..(o + 1) * n_in]);
        }
    }
    if let Some(gb) = grad_bias {
        axpy(1.0, grad_out, gb);
    }
    Ok(gx)
}

pub fn relu_forward(x: &[f64]) -> Vec<f64> {
    x.iter().map(|&v| v.max(0.0)).collect()
}

/// Subgradient at 0 is 0. `x` is the pre-activation input.
pub fn relu_backward(x: &[f64], grad_out: &[f64]) -> Vec<f64> {
    x.iter()
        .zip(grad_out)
        .map(|(&v, &g)| if v > 0.0 { g } else { 0.0 })
        .collect()
}
