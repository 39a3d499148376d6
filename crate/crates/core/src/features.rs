//! Differentiable MFCC front end.
//!
//! Pipeline: pre-emphasis, framing (incomplete trailing frame dropped), window,
//! zero-padded FFT power spectrum, triangular mel filterbank, floored log,
//! orthonormal DCT-II. [`Mfcc::backward`] is the exact adjoint of
//! [`Mfcc::forward`] given the cached forward state.

use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::{num_complex::Complex, Fft, FftPlanner};

use crate::audio::Waveform;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WindowKind {
    Hamming,
    Hann,
    Rectangular,
}

impl WindowKind {
    pub fn as_str(self) -> &'static str {
        match self {
            WindowKind::Hamming => "hamming",
            WindowKind::Hann => "hann",
            WindowKind::Rectangular => "rectangular",
        }
    }

    pub fn code(self) -> u8 {
        match self {
            WindowKind::Hamming => 0,
            WindowKind::Hann => 1,
            WindowKind::Rectangular => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Some(match code {
            0 => WindowKind::Hamming,
            1 => WindowKind::Hann,
            2 => WindowKind::Rectangular,
            _ => return None,
        })
    }

    fn coefficients(self, n: usize) -> Vec<f64> {
        let denom = (n.max(2) - 1) as f64;
        (0..n)
            .map(|i| {
                let c = (2.0 * PI * i as f64 / denom).cos();
                match self {
                    WindowKind::Hamming => 0.54 - 0.46 * c,
                    WindowKind::Hann => 0.5 - 0.5 * c,
                    WindowKind::Rectangular => 1.0,
                }
            })
            .collect()
    }
}

impl std::str::FromStr for WindowKind {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "hamming" => Ok(WindowKind::Hamming),
            "hann" => Ok(WindowKind::Hann),
            "rectangular" => Ok(WindowKind::Rectangular),
            other => Err(format!("unknown window '{other}'")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MfccConfig {
    pub sample_rate: u32,
    pub n_coeffs: usize,
    pub frame_len_ms: f64,
    pub frame_shift_ms: f64,
    pub n_mels: usize,
    pub fft_size: usize,
    pub preemphasis: f64,
    pub window: WindowKind,
    pub log_floor: f64,
}

impl Default for MfccConfig {
    fn default() -> Self {
        Self {
            sample_rate: crate::audio::DEFAULT_SAMPLE_RATE,
            n_coeffs: 30,
            frame_len_ms: 25.0,
            frame_shift_ms: 10.0,
            n_mels: 40,
            fft_size: 512,
            preemphasis: 0.97,
            window: WindowKind::Hamming,
            log_floor: 1e-10,
        }
    }
}

impl MfccConfig {
    pub fn frame_len(&self) -> usize {
        (self.frame_len_ms * self.sample_rate as f64 / 1000.0).round() as usize
    }

    pub fn frame_shift(&self) -> usize {
        (self.frame_shift_ms * self.sample_rate as f64 / 1000.0).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::Config(m));
        if self.sample_rate == 0 || self.frame_len() == 0 || self.frame_shift() == 0 {
            return err("frame length, shift and sample rate must be positive".into());
        }
        if self.fft_size < self.frame_len() {
            return err(format!(
                "fft_size {} is smaller than the frame length {}",
                self.fft_size,
                self.frame_len()
            ));
        }
        if self.n_coeffs == 0 || self.n_coeffs > self.n_mels {
            return err(format!(
                "n_coeffs {} must be in 1..={}",
                self.n_coeffs, self.n_mels
            ));
        }
        if !(self.log_floor > 0.0) {
            return err("log_floor must be positive".into());
        }
        Ok(())
    }

    /// Number of complete frames in a signal of `len` samples.
    pub fn n_frames(&self, len: usize) -> usize {
        let (l, s) = (self.frame_len(), self.frame_shift());
        if len < l {
            0
        } else {
            (len - l) / s + 1
        }
    }

    /// Samples needed to produce `frames` complete frames.
    pub fn min_samples(&self, frames: usize) -> usize {
        self.frame_len() + frames.saturating_sub(1) * self.frame_shift()
    }
}

/// `n_frames × n_coeffs` matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub values: Vec<f64>,
    pub n_frames: usize,
    pub n_coeffs: usize,
    pub frame_len: usize,
    pub frame_shift: usize,
}

impl FeatureMatrix {
    pub fn row(&self, t: usize) -> &[f64] {
        &self.values[t * self.n_coeffs..(t + 1) * self.n_coeffs]
    }
}

fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// One triangular filter stored sparsely over FFT bins.
#[derive(Debug, Clone)]
pub struct MelFilter {
    pub first_bin: usize,
    pub weights: Vec<f64>,
    pub centre_hz: f64,
}

/// Triangular filters equally spaced on the HTK mel scale over 0..fs/2,
/// evaluated at the FFT bin frequencies.
pub fn mel_filterbank(cfg: &MfccConfig) -> Vec<MelFilter> {
    let fs = cfg.sample_rate as f64;
    let n_bins = cfg.fft_size / 2 + 1;
    let top = hz_to_mel(fs / 2.0);
    let edges: Vec<f64> = (0..cfg.n_mels + 2)
        .map(|i| mel_to_hz(top * i as f64 / (cfg.n_mels + 1) as f64))
        .collect();
    (0..cfg.n_mels)
        .map(|m| {
            let (lo, mid, hi) = (edges[m], edges[m + 1], edges[m + 2]);
            let mut first = None;
            let mut weights = Vec::new();
            for k in 0..n_bins {
                let f = k as f64 * fs / cfg.fft_size as f64;
                let w = if f > lo && f <= mid {
                    (f - lo) / (mid - lo)
                } else if f > mid && f < hi {
                    (hi - f) / (hi - mid)
                } else {
                    0.0
                };
                if w > 0.0 {
                    first.get_or_insert(k);
                    weights.push(w);
                } else if first.is_some() {
                    break;
                }
            }
            MelFilter {
                first_bin: first.unwrap_or(0),
                weights,
                centre_hz: mid,
            }
        })
        .collect()
}

/// Orthonormal DCT-II, `n_out × n_in` row-major.
pub fn dct_matrix(n_out: usize, n_in: usize) -> Vec<f64> {
    let mut m = vec![0.0; n_out * n_in];
    for i in 0..n_out {
        let scale = if i == 0 {
            (1.0 / n_in as f64).sqrt()
        } else {
            (2.0 / n_in as f64).sqrt()
        };
        for j in 0..n_in {
            m[i * n_in + j] = scale * (PI * i as f64 * (j as f64 + 0.5) / n_in as f64).cos();
        }
    }
    m
}

/// Forward state kept for the adjoint pass.
#[derive(Debug, Clone)]
pub struct MfccCache {
    n_samples: usize,
    n_frames: usize,
    /// Per frame, the half spectrum `X[0..=N/2]`.
    spectra: Vec<Complex<f64>>,
    /// Per frame, mel energies before the floor.
    mel: Vec<f64>,
}

/// Precomputed MFCC plan for one configuration.
#[derive(Clone)]
pub struct Mfcc {
    cfg: MfccConfig,
    window: Vec<f64>,
    filters: Vec<MelFilter>,
    dct: Vec<f64>,
    fft: Arc<dyn Fft<f64>>,
    ifft: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Mfcc {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Mfcc").field("cfg", &self.cfg).finish()
    }
}

impl Mfcc {
    pub fn new(cfg: MfccConfig) -> Result<Self> {
        cfg.validate()?;
        let mut planner = FftPlanner::new();
        Ok(Self {
            window: cfg.window.coefficients(cfg.frame_len()),
            filters: mel_filterbank(&cfg),
            dct: dct_matrix(cfg.n_coeffs, cfg.n_mels),
            fft: planner.plan_fft_forward(cfg.fft_size),
            ifft: planner.plan_fft_inverse(cfg.fft_size),
            cfg,
        })
    }

    pub fn config(&self) -> &MfccConfig {
        &self.cfg
    }

    fn check_len(&self, len: usize) -> Result<usize> {
        let t = self.cfg.n_frames(len);
        if t == 0 {
            return Err(Error::TooShort {
                got: len,
                min: self.cfg.frame_len(),
                unit: "samples",
            });
        }
        Ok(t)
    }

    pub fn forward(&self, samples: &[f64]) -> Result<FeatureMatrix> {
        self.forward_cached(samples).map(|(f, _)| f)
    }

    pub fn forward_cached(&self, samples: &[f64]) -> Result<(FeatureMatrix, MfccCache)> {
        let n_frames = self.check_len(samples.len())?;
        let cfg = &self.cfg;
        let (flen, shift, nfft) = (cfg.frame_len(), cfg.frame_shift(), cfg.fft_size);
        let n_bins = nfft / 2 + 1;
        let a = cfg.preemphasis;
        let used = cfg.min_samples(n_frames);
        let emph: Vec<f64> = (0..used)
            .map(|n| {
                if n == 0 {
                    samples[0]
                } else {
                    samples[n] - a * samples[n - 1]
                }
            })
            .collect();

        let mut spectra = Vec::with_capacity(n_frames * n_bins);
        let mut mel = Vec::with_capacity(n_frames * cfg.n_mels);
        let mut values = Vec::with_capacity(n_frames * cfg.n_coeffs);
        let mut buf = vec![Complex::new(0.0, 0.0); nfft];
        let mut power = vec![0.0; n_bins];
        let mut logmel = vec![0.0; cfg.n_mels];
        for t in 0..n_frames {
            let start = t * shift;
            for (j, b) in buf.iter_mut().enumerate() {
                *b = if j < flen {
                    Complex::new(emph[start + j] * self.window[j], 0.0)
                } else {
                    Complex::new(0.0, 0.0)
                };
            }
            self.fft.process(&mut buf);
            for k in 0..n_bins {
                power[k] = buf[k].norm_sqr();
            }
            spectra.extend_from_slice(&buf[..n_bins]);
            for (m, f) in self.filters.iter().enumerate() {
                let e: f64 = f
                    .weights
                    .iter()
                    .zip(&power[f.first_bin..])
                    .map(|(w, p)| w * p)
                    .sum();
                mel.push(e);
                logmel[m] = e.max(cfg.log_floor).ln();
            }
            for i in 0..cfg.n_coeffs {
                let row = &self.dct[i * cfg.n_mels..(i + 1) * cfg.n_mels];
                values.push(row.iter().zip(&logmel).map(|(d, l)| d * l).sum());
            }
        }
        Ok((
            FeatureMatrix {
                values,
                n_frames,
                n_coeffs: cfg.n_coeffs,
                frame_len: flen,
                frame_shift: shift,
            },
            MfccCache {
                n_samples: samples.len(),
                n_frames,
                spectra,
                mel,
            },
        ))
    }

    /// Gradient with respect to the input samples of `<upstream, forward(samples)>`.
    pub fn backward(&self, cache: &MfccCache, upstream: &[f64]) -> Result<Vec<f64>> {
        let cfg = &self.cfg;
        let expected = cache.n_frames * cfg.n_coeffs;
        if upstream.len() != expected {
            return Err(Error::shape("mfcc_backward", expected, upstream.len()));
        }
        let (flen, shift, nfft) = (cfg.frame_len(), cfg.frame_shift(), cfg.fft_size);
        let n_bins = nfft / 2 + 1;
        let mut g_emph = vec![0.0; cfg.min_samples(cache.n_frames)];
        let mut g_logmel = vec![0.0; cfg.n_mels];
        let mut g_power = vec![0.0; n_bins];
        let mut buf = vec![Complex::new(0.0, 0.0); nfft];
        for t in 0..cache.n_frames {
            let up = &upstream[t * cfg.n_coeffs..(t + 1) * cfg.n_coeffs];
            if up.iter().all(|&u| u == 0.0) {
                continue;
            }
            g_logmel.iter_mut().for_each(|g| *g = 0.0);
            for (i, &u) in up.iter().enumerate() {
                let row = &self.dct[i * cfg.n_mels..(i + 1) * cfg.n_mels];
                for (g, d) in g_logmel.iter_mut().zip(row) {
                    *g += d * u;
                }
            }
            g_power.iter_mut().for_each(|g| *g = 0.0);
            let mel = &cache.mel[t * cfg.n_mels..(t + 1) * cfg.n_mels];
            for (m, f) in self.filters.iter().enumerate() {
                // The floor is flat: no gradient where it binds.
                if mel[m] <= cfg.log_floor {
                    continue;
                }
                let g = g_logmel[m] / mel[m];
                for (j, w) in f.weights.iter().enumerate() {
                    g_power[f.first_bin + j] += w * g;
                }
            }
            // d|X_k|^2/dx_n = 2 Re(conj(X_k) e^{-i2πkn/N}), summed against g_power:
            // 2 Re(Σ_k g_k X_k e^{+i2πkn/N}), an unnormalized inverse DFT.
            let spec = &cache.spectra[t * n_bins..(t + 1) * n_bins];
            for (k, b) in buf.iter_mut().enumerate() {
                *b = if k < n_bins {
                    spec[k] * g_power[k]
                } else {
                    Complex::new(0.0, 0.0)
                };
            }
            self.ifft.process(&mut buf);
            let start = t * shift;
            for j in 0..flen {
                g_emph[start + j] += 2.0 * buf[j].re * self.window[j];
            }
        }
        let a = cfg.preemphasis;
        let mut grad = vec![0.0; cache.n_samples];
        let used = g_emph.len();
        for n in 0..used {
            let next = if n + 1 < used { g_emph[n + 1] } else { 0.0 };
            grad[n] = g_emph[n] - a * next;
        }
        Ok(grad)
    }
}

/// One-shot forward pass.
pub fn mfcc_forward(w: &Waveform, cfg: &MfccConfig) -> Result<FeatureMatrix> {
    check_rate(w, cfg)?;
    Mfcc::new(cfg.clone())?.forward(&w.samples)
}

/// One-shot adjoint: recomputes the forward pass, then pulls `upstream` back
/// to the samples of `w`.
pub fn mfcc_backward(w: &Waveform, cfg: &MfccConfig, upstream: &[f64]) -> Result<Vec<f64>> {
    check_rate(w, cfg)?;
    let mfcc = Mfcc::new(cfg.clone())?;
    let (_, cache) = mfcc.forward_cached(&w.samples)?;
    mfcc.backward(&cache, upstream)
}

fn check_rate(w: &Waveform, cfg: &MfccConfig) -> Result<()> {
    if w.sample_rate != cfg.sample_rate {
        return Err(Error::SampleRate {
            left: w.sample_rate,
            right: cfg.sample_rate,
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netcore::gradcheck::{adjoint_gap, directional_check};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(n: usize, seed: u64, scale: f64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.random_range(-scale..scale)).collect()
    }

    #[test]
    fn defaults_geometry() {
        let cfg = MfccConfig::default();
        assert_eq!(cfg.frame_len(), 400);
        assert_eq!(cfg.frame_shift(), 160);
        assert_eq!(cfg.n_frames(399), 0);
        assert_eq!(cfg.n_frames(400), 1);
        assert_eq!(cfg.n_frames(559), 1);
        assert_eq!(cfg.n_frames(560), 2);
    }

    #[test]
    fn too_short_reports_minimum() {
        let w = Waveform::zeros(100, 16_000);
        match mfcc_forward(&w, &MfccConfig::default()) {
            Err(Error::TooShort { got, min, .. }) => assert_eq!((got, min), (100, 400)),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn invalid_configs_rejected() {
        let bad_fft = MfccConfig {
            fft_size: 256,
            ..MfccConfig::default()
        };
        assert!(bad_fft.validate().is_err());
        let bad_coeffs = MfccConfig {
            n_coeffs: 41,
            ..MfccConfig::default()
        };
        assert!(bad_coeffs.validate().is_err());
        let bad_floor = MfccConfig {
            log_floor: 0.0,
            ..MfccConfig::default()
        };
        assert!(bad_floor.validate().is_err());
    }

    #[test]
    fn zero_signal_gives_floor_and_only_c0() {
        let cfg = MfccConfig::default();
        let f = mfcc_forward(&Waveform::zeros(1000, 16_000), &cfg).unwrap();
        let c0 = cfg.log_floor.ln() * (cfg.n_mels as f64).sqrt();
        for t in 0..f.n_frames {
            let row = f.row(t);
            assert!((row[0] - c0).abs() < 1e-9);
            assert!(row[1..].iter().all(|v| v.abs() < 1e-9));
        }
    }

    #[test]
    fn sinusoid_peaks_in_its_filter() {
        let cfg = MfccConfig {
            preemphasis: 0.0,
            ..MfccConfig::default()
        };
        let mfcc = Mfcc::new(cfg.clone()).unwrap();
        for m in [8usize, 15, 22, 30] {
            let f0 = mfcc.filters[m].centre_hz;
            let x: Vec<f64> = (0..1600)
                .map(|n| 0.5 * (2.0 * PI * f0 * n as f64 / 16_000.0).sin())
                .collect();
            let (_, cache) = mfcc.forward_cached(&x).unwrap();
            let mel = &cache.mel[..cfg.n_mels];
            let best = (0..cfg.n_mels)
                .max_by(|&a, &b| mel[a].total_cmp(&mel[b]))
                .unwrap();
            assert_eq!(best, m, "sinusoid at {f0} Hz");
        }
    }

    #[test]
    fn doubling_amplitude_adds_log4_to_logmel() {
        let cfg = MfccConfig::default();
        let mfcc = Mfcc::new(cfg.clone()).unwrap();
        let x = random(2000, 3, 0.3);
        let x2: Vec<f64> = x.iter().map(|v| 2.0 * v).collect();
        let (_, a) = mfcc.forward_cached(&x).unwrap();
        let (_, b) = mfcc.forward_cached(&x2).unwrap();
        for (ea, eb) in a.mel.iter().zip(&b.mel) {
            assert!(*ea > cfg.log_floor);
            assert!((eb.ln() - ea.ln() - 4f64.ln()).abs() < 1e-9);
        }
    }

    #[test]
    fn zero_upstream_zero_gradient_and_dead_tail() {
        let cfg = MfccConfig::default();
        let mfcc = Mfcc::new(cfg.clone()).unwrap();
        let x = random(1000, 4, 0.3);
        let (f, cache) = mfcc.forward_cached(&x).unwrap();
        let g = mfcc.backward(&cache, &vec![0.0; f.values.len()]).unwrap();
        assert!(g.iter().all(|&v| v == 0.0));
        let g = mfcc
            .backward(&cache, &random(f.values.len(), 5, 1.0))
            .unwrap();
        let used = cfg.min_samples(f.n_frames);
        assert_eq!(used, 880);
        assert!(g[used..].iter().all(|&v| v == 0.0));
        assert!(g[..used].iter().any(|&v| v != 0.0));
        assert!(mfcc.backward(&cache, &[0.0; 3]).is_err());
    }

    #[test]
    fn backward_matches_finite_differences() {
        let cfg = MfccConfig::default();
        let mfcc = Mfcc::new(cfg).unwrap();
        let x = random(900, 6, 0.3);
        let (f, cache) = mfcc.forward_cached(&x).unwrap();
        let up = random(f.values.len(), 7, 1.0);
        let g = mfcc.backward(&cache, &up).unwrap();
        let loss = |p: &[f64]| -> f64 {
            let f = mfcc.forward(p).unwrap();
            f.values.iter().zip(&up).map(|(a, b)| a * b).sum()
        };
        for seed in 0..4 {
            let report = directional_check(&loss, &x, &g, &random(900, 100 + seed, 1.0), 1e-5);
            assert!(report.rel_error < 1e-4, "{report:?}");
        }
    }

    #[test]
    fn adjoint_identity() {
        let mfcc = Mfcc::new(MfccConfig::default()).unwrap();
        let x = random(1200, 8, 0.3);
        let (f, cache) = mfcc.forward_cached(&x).unwrap();
        let up = random(f.values.len(), 9, 1.0);
        let jt_u = mfcc.backward(&cache, &up).unwrap();
        let v = random(x.len(), 10, 1.0);
        let forward = |p: &[f64]| mfcc.forward(p).unwrap().values;
        let gap = adjoint_gap(&forward, &x, &v, &up, &jt_u, 1e-5);
        assert!(gap < 1e-6, "adjoint gap {gap}");
    }
}
