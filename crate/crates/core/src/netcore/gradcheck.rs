//! Finite-difference verification of reverse-mode gradients.

use std::fmt;
use std::ops::Range;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckConfig {
    /// Central-difference step.
    pub step: f64,
    /// Maximum accepted relative error per block.
    pub tolerance: f64,
    /// Absolute floor on the error normalizer, so blocks whose gradient is
    /// (numerically) zero are not judged on rounding noise alone.
    pub abs_floor: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            step: 1e-6,
            tolerance: 1e-4,
            abs_floor: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BlockReport {
    pub name: String,
    /// `max_i |a_i − n_i| / max(‖a‖∞, ‖n‖∞, abs_floor)`
    pub max_rel_error: f64,
    pub worst_index: usize,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub blocks: Vec<BlockReport>,
    pub tolerance: f64,
    pub passed: bool,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.blocks
            .iter()
            .map(|b| b.max_rel_error)
            .fold(0.0, f64::max)
    }
}

impl fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "gradcheck {} (tol {:.1e}):",
            if self.passed { "ok" } else { "FAILED" },
            self.tolerance
        )?;
        for b in &self.blocks {
            write!(f, " {}={:.2e}@{}", b.name, b.max_rel_error, b.worst_index)?;
        }
        Ok(())
    }
}

/// Central-difference estimate of one partial derivative.
pub fn central_partial<F: Fn(&[f64]) -> f64 + ?Sized>(
    f: &F,
    point: &[f64],
    i: usize,
    h: f64,
) -> f64 {
    let mut p = point.to_vec();
    p[i] = point[i] + h;
    let up = f(&p);
    p[i] = point[i] - h;
    let down = f(&p);
    (up - down) / (2.0 * h)
}

/// Compare `analytic` against central differences of `f` at `point`, block by block.
pub fn gradcheck<F: Fn(&[f64]) -> f64 + ?Sized>(
    f: &F,
    point: &[f64],
    analytic: &[f64],
    blocks: &[(&str, Range<usize>)],
    cfg: &GradCheckConfig,
) -> GradCheckReport {
    assert_eq!(
        point.len(),
        analytic.len(),
        "gradient length does not match point"
    );
    let reports: Vec<BlockReport> = blocks
        .iter()
        .map(|(name, range)| {
            let numeric: Vec<f64> = range
                .clone()
                .map(|i| central_partial(f, point, i, cfg.step))
                .collect();
            let a = &analytic[range.clone()];
            let scale = a
                .iter()
                .chain(&numeric)
                .fold(cfg.abs_floor, |m, v| m.max(v.abs()));
            let (worst_index, err) = a
                .iter()
                .zip(&numeric)
                .map(|(x, y)| (x - y).abs())
                .enumerate()
                .fold((range.start, 0.0), |(wi, we), (i, e)| {
                    if e > we {
                        (range.start + i, e)
                    } else {
                        (wi, we)
                    }
                });
            BlockReport {
                name: name.to_string(),
                max_rel_error: err / scale,
                worst_index,
            }
        })
        .collect();
    let passed = reports.iter().all(|b| b.max_rel_error <= cfg.tolerance);
    GradCheckReport {
        blocks: reports,
        tolerance: cfg.tolerance,
        passed,
    }
}

#[derive(Debug, Clone, Copy)]
pub struct DirectionalReport {
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

/// Compare `⟨grad, v⟩` with the central difference of `f` along `v`; cheap for
/// high-dimensional inputs such as waveforms.
pub fn directional_check<F: Fn(&[f64]) -> f64 + ?Sized>(
    f: &F,
    point: &[f64],
    grad: &[f64],
    direction: &[f64],
    h: f64,
) -> DirectionalReport {
    let shifted = |s: f64| -> Vec<f64> {
        point
            .iter()
            .zip(direction)
            .map(|(x, v)| x + s * v)
            .collect()
    };
    let numeric = (f(&shifted(h)) - f(&shifted(-h))) / (2.0 * h);
    let analytic: f64 = grad.iter().zip(direction).map(|(g, v)| g * v).sum();
    let rel_error = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-300);
    DirectionalReport {
        analytic,
        numeric,
        rel_error,
    }
}

/// Relative gap of the adjoint identity `⟨u, J v⟩ = ⟨Jᵀu, v⟩`, where `J v` is
/// taken by central differences of `forward` along `v` and `jt_u` is the
/// reverse-mode pullback of `u`.
pub fn adjoint_gap<F: Fn(&[f64]) -> Vec<f64> + ?Sized>(
    forward: &F,
    point: &[f64],
    v: &[f64],
    u: &[f64],
    jt_u: &[f64],
    h: f64,
) -> f64 {
    let shifted = |s: f64| -> Vec<f64> { point.iter().zip(v).map(|(x, d)| x + s * d).collect() };
    let (fp, fm) = (forward(&shifted(h)), forward(&shifted(-h)));
    let u_jv: f64 = u
        .iter()
        .zip(fp.iter().zip(&fm))
        .map(|(ui, (a, b))| ui * (a - b) / (2.0 * h))
        .sum();
    let jtu_v: f64 = jt_u.iter().zip(v).map(|(a, b)| a * b).sum();
    (u_jv - jtu_v).abs() / u_jv.abs().max(jtu_v.abs()).max(1e-300)
}

/// Adjoint identity for a linear map, without differencing.
pub fn linear_adjoint_gap(jv: &[f64], u: &[f64], jt_u: &[f64], v: &[f64]) -> f64 {
    let a: f64 = u.iter().zip(jv).map(|(x, y)| x * y).sum();
    let b: f64 = jt_u.iter().zip(v).map(|(x, y)| x * y).sum();
    (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_matches_tightly() {
        let f = |p: &[f64]| p.iter().map(|x| 3.0 * x * x).sum::<f64>();
        let x = [0.3, -1.2, 2.0];
        let g: Vec<f64> = x.iter().map(|v| 6.0 * v).collect();
        let r = gradcheck(&f, &x, &g, &[("x", 0..3)], &GradCheckConfig::default());
        assert!(r.passed);
        assert!(r.max_rel_error() < 1e-9, "{r}");
    }

    #[test]
    fn corrupted_adjoint_fails() {
        let f = |p: &[f64]| p[0] * p[1] + p[1].sin();
        let x = [0.7_f64, 0.4];
        let good = [x[1], x[0] + x[1].cos()];
        assert!(gradcheck(&f, &x, &good, &[("x", 0..2)], &GradCheckConfig::default()).passed);
        let bad = [x[1], x[0] - x[1].cos()];
        let r = gradcheck(&f, &x, &bad, &[("x", 0..2)], &GradCheckConfig::default());
        assert!(!r.passed);
        assert_eq!(r.blocks[0].worst_index, 1);
    }

    #[test]
    fn directional_and_adjoint_helpers() {
        let f = |p: &[f64]| p[0].exp() * p[1];
        let x = [0.2_f64, 1.5];
        let g = [x[0].exp() * x[1], x[0].exp()];
        assert!(directional_check(&f, &x, &g, &[1.0, -2.0], 1e-5).rel_error < 1e-8);
        let fwd = |p: &[f64]| vec![p[0] * p[1], p[0] + p[1] * p[1]];
        let u = [0.5, -1.0];
        // Jᵀu with J = [[x1, x0], [1, 2 x1]]
        let jtu = [u[0] * x[1] + u[1], u[0] * x[0] + u[1] * 2.0 * x[1]];
        assert!(adjoint_gap(&fwd, &x, &[0.3, 0.9], &u, &jtu, 1e-5) < 1e-8);
    }
}
