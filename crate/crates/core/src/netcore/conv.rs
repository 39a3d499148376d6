//! Dilated valid 1-D convolution over frames: the TDNN layer.

use super::{axpy, dot, Frames};
use crate::error::{Error, Result};

/// Kernel layout is `context × in_ch × out_ch`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvShape {
    pub context: usize,
    pub dilation: usize,
    pub in_ch: usize,
    pub out_ch: usize,
}

impl ConvShape {
    /// Frames consumed beyond the first: `(context - 1) * dilation`.
    pub fn span(&self) -> usize {
        (self.context - 1) * self.dilation
    }

    pub fn kernel_len(&self) -> usize {
        self.context * self.in_ch * self.out_ch
    }

    pub fn out_len(&self, in_len: usize) -> usize {
        in_len.saturating_sub(self.span())
    }

    fn check(&self, input: &Frames, kernel: &[f64]) -> Result<()> {
        if input.channels != self.in_ch {
            return Err(Error::shape("conv1d", self.in_ch, input.channels));
        }
        if kernel.len() != self.kernel_len() {
            return Err(Error::shape(
                "conv1d kernel",
                self.kernel_len(),
                kernel.len(),
            ));
        }
        if input.len < self.span() + 1 {
            return Err(Error::TooShort {
                got: input.len,
                min: self.span() + 1,
                unit: "frames",
            });
        }
        Ok(())
    }
}

/// `out[t][o] = bias[o] + Σ_j Σ_c in[t + j·d][c] · K[j][c][o]`
pub fn conv1d_forward(
    input: &Frames,
    kernel: &[f64],
    bias: &[f64],
    s: &ConvShape,
) -> Result<Frames> {
    s.check(input, kernel)?;
    if bias.len() != s.out_ch {
        return Err(Error::shape("conv1d bias", s.out_ch, bias.len()));
    }
    let t_out = s.out_len(input.len);
    let mut out = Frames::zeros(t_out, s.out_ch);
    for t in 0..t_out {
        let row = &mut out.data[t * s.out_ch..(t + 1) * s.out_ch];
        row.copy_from_slice(bias);
        for j in 0..s.context {
            let x = input.row(t + j * s.dilation);
            let kj = &kernel[j * s.in_ch * s.out_ch..(j + 1) * s.in_ch * s.out_ch];
            for (c, &xc) in x.iter().enumerate() {
                if xc != 0.0 {
                    axpy(xc, &kj[c * s.out_ch..(c + 1) * s.out_ch], row);
                }
            }
        }
    }
    Ok(out)
}

/// Returns the input gradient; kernel and bias gradients are accumulated into
/// the provided buffers when given.
pub fn conv1d_backward(
    input: &Frames,
    kernel: &[f64],
    s: &ConvShape,
    grad_out: &Frames,
    grad_kernel: Option<&mut [f64]>,
    grad_bias: Option<&mut [f64]>,
) -> Result<Frames> {
    s.check(input, kernel)?;
    let t_out = s.out_len(input.len);
    if grad_out.len != t_out || grad_out.channels != s.out_ch {
        return Err(Error::shape(
            "conv1d_backward",
            format!("{t_out}x{}", s.out_ch),
            format!("{}x{}", grad_out.len, grad_out.channels),
        ));
    }
    let mut grad_in = Frames::zeros(input.len, s.in_ch);
    for t in 0..t_out {
        let g = grad_out.row(t);
        for j in 0..s.context {
            let ti = t + j * s.dilation;
            let kj = &kernel[j * s.in_ch * s.out_ch..(j + 1) * s.in_ch * s.out_ch];
            let gi = &mut grad_in.data[ti * s.in_ch..(ti + 1) * s.in_ch];
            for (c, gic) in gi.iter_mut().enumerate() {
                *gic += dot(g, &kj[c * s.out_ch..(c + 1) * s.out_ch]);
            }
        }
    }
    if let Some(gk) = grad_kernel {
        for t in 0..t_out {
            let g = grad_out.row(t);
            for j in 0..s.context {
                let x = input.row(t + j * s.dilation);
                let gkj = &mut gk[j * s.in_ch * s.out_ch..(j + 1) * s.in_ch * s.out_ch];
                for (c, &xc) in x.iter().enumerate() {
                    if xc != 0.0 {
                        axpy(xc, g, &mut gkj[c * s.out_ch..(c + 1) * s.out_ch]);
                    }
                }
            }
        }
    }
    if let Some(gb) = grad_bias {
        for t in 0..t_out {
            axpy(1.0, grad_out.row(t), gb);
        }
    }
    Ok(grad_in)
}
