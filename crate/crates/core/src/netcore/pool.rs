//! Statistics pooling: per-channel mean and standard deviation over frames.

use super::Frames;
use crate::error::{Error, Result};

/// Added to the population variance before the square root.
pub const VARIANCE_FLOOR: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct PoolCache {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Output is `[mean_0..mean_C, std_0..std_C]`.
pub fn stats_pool_forward(input: &Frames) -> Result<(Vec<f64>, PoolCache)> {
    if input.len == 0 {
        return Err(Error::Empty("statistics pooling over zero frames"));
    }
    let (t, c) = (input.len as f64, input.channels);
    let mut mean = vec![0.0; c];
    for row in input.data.chunks_exact(c) {
        for (m, x) in mean.iter_mut().zip(row) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= t);
    let mut var = vec![0.0; c];
    for row in input.data.chunks_exact(c) {
        for ((v, x), m) in var.iter_mut().zip(row).zip(&mean) {
            *v += (x - m) * (x - m);
        }
    }
    let std: Vec<f64> = var
        .iter()
        .map(|v| (v / t + VARIANCE_FLOOR).sqrt())
        .collect();
    let out = mean.iter().chain(&std).copied().collect();
    Ok((out, PoolCache { mean, std }))
}

pub fn stats_pool_backward(input: &Frames, cache: &PoolCache, grad_out: &[f64]) -> Result<Frames> {
    let c = input.channels;
    if grad_out.len() != 2 * c {
        return Err(Error::shape("stats_pool_backward", 2 * c, grad_out.len()));
    }
    let t = input.len as f64;
    let (g_mean, g_std) = grad_out.split_at(c);
    let a: Vec<f64> = g_mean.iter().map(|g| g / t).collect();
    let b: Vec<f64> = g_std
        .iter()
        .zip(&cache.std)
        .map(|(g, s)| g / (t * s))
        .collect();
    let mut out = Frames::zeros(input.len, c);
    for (orow, row) in out.data.chunks_exact_mut(c).zip(input.data.chunks_exact(c)) {
        for ch in 0..c {
            orow[ch] = a[ch] + b[ch] * (row[ch] - cache.mean[ch]);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netcore::gradcheck::{adjoint_gap, gradcheck, GradCheckConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn constant_frames() {
        let x = Frames::new(vec![2.5; 8], 4, 2);
        let (y, _) = stats_pool_forward(&x).unwrap();
        assert_eq!(&y[..2], &[2.5, 2.5]);
        assert!((y[2] - VARIANCE_FLOOR.sqrt()).abs() < 1e-20);
    }

    #[test]
    fn population_variance() {
        let (y, _) = stats_pool_forward(&Frames::new(vec![0.0, 2.0], 2, 1)).unwrap();
        assert_eq!(y[0], 1.0);
        assert!((y[1] - 1.0).abs() < 1e-9);
        assert!(stats_pool_forward(&Frames::zeros(0, 3)).is_err());
    }

    #[test]
    fn adjoint_through_sqrt() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (t, c) = (7, 3);
        let x: Vec<f64> = (0..t * c).map(|_| rng.random_range(-1.0..1.0)).collect();
        let up: Vec<f64> = (0..2 * c).map(|_| rng.random_range(-1.0..1.0)).collect();
        let frames = Frames::new(x.clone(), t, c);
        let (_, cache) = stats_pool_forward(&frames).unwrap();
        let g = stats_pool_backward(&frames, &cache, &up).unwrap();
        let f = |p: &[f64]| -> f64 {
            let (y, _) = stats_pool_forward(&Frames::new(p.to_vec(), t, c)).unwrap();
            y.iter().zip(&up).map(|(a, b)| a * b).sum()
        };
        let report = gradcheck(
            &f,
            &x,
            &g.data,
            &[("input", 0..x.len())],
            &GradCheckConfig::default(),
        );
        assert!(report.passed, "{report}");
        let v: Vec<f64> = (0..t * c).map(|_| rng.random_range(-1.0..1.0)).collect();
        let fwd = |p: &[f64]| {
            stats_pool_forward(&Frames::new(p.to_vec(), t, c))
                .unwrap()
                .0
        };
        assert!(adjoint_gap(&fwd, &x, &v, &up, &g.data, 1e-5) < 1e-6);
    }
}
