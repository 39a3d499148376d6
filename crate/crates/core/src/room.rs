//! Shoebox-room impulse responses by the image-source method, and the
//! length-preserving convolution that applies them.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::{num_complex::Complex, FftPlanner};

use crate::audio::{read_wav_f64, write_wav_f64, Split, Waveform};
use crate::error::{Error, Result};

/// Half-width of the Hann-windowed sinc used for fractional delays (81 taps).
const SINC_HALF_WIDTH: i64 = 40;
/// Direct convolution is used when the shorter operand is at most this long.
const DIRECT_CONV_MAX: usize = 64;
pub const MAX_REFLECTION_ORDER: usize = 20;

#[derive(Debug, Clone, PartialEq)]
pub struct RoomSpec {
    /// Width, depth, height in metres.
    pub dimensions: [f64; 3],
    /// Energy absorption of every wall, in (0, 1].
    pub absorption: f64,
    pub source: [f64; 3],
    pub mic: [f64; 3],
    pub max_order: usize,
    pub sample_rate: u32,
    pub speed_of_sound: f64,
}

impl Default for RoomSpec {
    fn default() -> Self {
        Self {
            dimensions: [5.0, 5.0, 3.0],
            absorption: 0.3,
            source: [1.5, 2.0, 1.5],
            mic: [3.5, 3.0, 1.2],
            max_order: 6,
            sample_rate: crate::audio::DEFAULT_SAMPLE_RATE,
            speed_of_sound: 343.0,
        }
    }
}

fn inside(p: &[f64; 3], dims: &[f64; 3]) -> bool {
    p.iter().zip(dims).all(|(&x, &l)| x > 0.0 && x < l)
}

fn distance(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

impl RoomSpec {
    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::Room(m));
        if self.dimensions.iter().any(|&d| !(d > 0.0 && d.is_finite())) {
            return err(format!("dimensions {:?} must be positive", self.dimensions));
        }
        if !(self.absorption > 0.0 && self.absorption <= 1.0) {
            return err(format!("absorption {} must lie in (0, 1]", self.absorption));
        }
        if !inside(&self.source, &self.dimensions) {
            return err(format!(
                "source {:?} is not strictly inside the room",
                self.source
            ));
        }
        if !inside(&self.mic, &self.dimensions) {
            return err(format!(
                "microphone {:?} is not strictly inside the room",
                self.mic
            ));
        }
        if distance(&self.source, &self.mic) == 0.0 {
            return err("source and microphone coincide".into());
        }
        if self.max_order > MAX_REFLECTION_ORDER {
            return err(format!(
                "max_order {} exceeds {MAX_REFLECTION_ORDER}",
                self.max_order
            ));
        }
        if self.sample_rate == 0 || !(self.speed_of_sound > 0.0) {
            return err("sample_rate and speed_of_sound must be positive".into());
        }
        Ok(())
    }

    pub fn reflection_coefficient(&self) -> f64 {
        (1.0 - self.absorption).sqrt()
    }

    /// Text record, one `key = value` per line.
    pub fn to_record(&self) -> String {
        let v = |p: &[f64; 3]| format!("{} {} {}", p[0], p[1], p[2]);
        format!(
            "dimensions = {}\nabsorption = {}\nsource = {}\nmic = {}\nmax_order = {}\nsample_rate = {}\nspeed_of_sound = {}\n",
            v(&self.dimensions),
            self.absorption,
            v(&self.source),
            v(&self.mic),
            self.max_order,
            self.sample_rate,
            self.speed_of_sound
        )
    }

    pub fn from_record(text: &str) -> Result<Self> {
        let mut spec = RoomSpec::default();
        let bad = |k: &str, v: &str| Error::Room(format!("bad value '{v}' for '{k}'"));
        let point = |k: &str, v: &str| -> Result<[f64; 3]> {
            let xs: Vec<f64> = v
                .split_whitespace()
                .map(|s| s.parse::<f64>().map_err(|_| bad(k, v)))
                .collect::<Result<_>>()?;
            xs.try_into().map_err(|_| bad(k, v))
        };
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let (k, v) = line
                .split_once('=')
                .map(|(k, v)| (k.trim(), v.trim()))
                .ok_or_else(|| Error::Room(format!("malformed line '{line}'")))?;
            match k {
                "dimensions" => spec.dimensions = point(k, v)?,
                "source" => spec.source = point(k, v)?,
                "mic" => spec.mic = point(k, v)?,
                "absorption" => spec.absorption = v.parse().map_err(|_| bad(k, v))?,
                "max_order" => spec.max_order = v.parse().map_err(|_| bad(k, v))?,
                "sample_rate" => spec.sample_rate = v.parse().map_err(|_| bad(k, v))?,
                "speed_of_sound" => spec.speed_of_sound = v.parse().map_err(|_| bad(k, v))?,
                other => return Err(Error::Room(format!("unknown key '{other}'"))),
            }
        }
        spec.validate()?;
        Ok(spec)
    }
}

/// One mirror image of the source.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageSource {
    pub position: [f64; 3],
    /// Total number of wall reflections.
    pub order: usize,
    pub distance: f64,
    /// Propagation delay in (fractional) samples.
    pub delay: f64,
    /// `β^order / (4π·distance)` with `β = sqrt(1 − absorption)`.
    pub amplitude: f64,
}

/// All images with at most `max_order` reflections. Per axis an image is
/// `(1 − 2p)·s + 2mL` with `|m − p| + |m|` reflections.
pub fn image_sources(spec: &RoomSpec) -> Result<Vec<ImageSource>> {
    spec.validate()?;
    let n = spec.max_order as i64;
    let beta = spec.reflection_coefficient();
    let fs = spec.sample_rate as f64;
    let axis_images = |axis: usize| -> Vec<(f64, usize)> {
        let (s, l) = (spec.source[axis], spec.dimensions[axis]);
        let mut v = Vec::new();
        for m in -n..=n {
            for p in 0..=1i64 {
                let order = ((m - p).abs() + m.abs()) as usize;
                if order <= spec.max_order {
                    v.push(((1 - 2 * p) as f64 * s + 2.0 * m as f64 * l, order));
                }
            }
        }
        v
    };
    let (xs, ys, zs) = (axis_images(0), axis_images(1), axis_images(2));
    let mut out = Vec::new();
    for &(x, ox) in &xs {
        for &(y, oy) in &ys {
            for &(z, oz) in &zs {
                let order = ox + oy + oz;
                if order > spec.max_order {
                    continue;
                }
                let position = [x, y, z];
                let d = distance(&position, &spec.mic);
                out.push(ImageSource {
                    position,
                    order,
                    distance: d,
                    delay: d / spec.speed_of_sound * fs,
                    amplitude: beta.powi(order as i32) / (4.0 * PI * d),
                });
            }
        }
    }
    Ok(out)
}

/// Hann-windowed sinc tap for offset `x` (samples) from a fractional delay.
fn windowed_sinc(x: f64) -> f64 {
    let half = SINC_HALF_WIDTH as f64 + 0.5;
    if x.abs() >= half {
        return 0.0;
    }
    let sinc = if x == 0.0 {
        1.0
    } else {
        (PI * x).sin() / (PI * x)
    };
    sinc * 0.5 * (1.0 + (PI * x / half).cos())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rir {
    pub taps: Vec<f64>,
    pub sample_rate: u32,
    pub provenance: Option<RoomSpec>,
}

impl Rir {
    /// The identity channel `[1]`.
    pub fn unit(sample_rate: u32) -> Self {
        Self {
            taps: vec![1.0],
            sample_rate,
            provenance: None,
        }
    }

    pub fn peak(&self) -> f64 {
        crate::audio::peak_abs(&self.taps)
    }

    /// Scale so the largest tap has magnitude 1.
    pub fn normalized(mut self) -> Self {
        let p = self.peak();
        if p > 0.0 {
            self.taps.iter_mut().for_each(|t| *t /= p);
        }
        self
    }
}

/// Accumulate every image's windowed-sinc fractional delay into one buffer,
/// dropping non-causal taps and trimming after the last significant tap.
pub fn image_source_rir(spec: &RoomSpec) -> Result<Rir> {
    let images = image_sources(spec)?;
    let last = images
        .iter()
        .map(|im| im.delay.floor() as i64 + SINC_HALF_WIDTH + 1)
        .max()
        .unwrap_or(1);
    let mut taps = vec![0.0; last as usize + 1];
    for im in &images {
        let centre = im.delay.floor() as i64;
        for n in (centre - SINC_HALF_WIDTH).max(0)..=centre + SINC_HALF_WIDTH + 1 {
            taps[n as usize] += im.amplitude * windowed_sinc(n as f64 - im.delay);
        }
    }
    let peak = crate::audio::peak_abs(&taps);
    let keep = taps
        .iter()
        .rposition(|t| t.abs() > 1e-9 * peak)
        .map_or(1, |i| i + 1);
    taps.truncate(keep);
    Ok(Rir {
        taps,
        sample_rate: spec.sample_rate,
        provenance: Some(spec.clone()),
    })
}

/// Full linear convolution by direct summation.
pub fn convolve_full_direct(a: &[f64], b: &[f64]) -> Vec<f64> {
    if a.is_empty() || b.is_empty() {
        return Vec::new();
    }
    let mut out = vec![0.0; a.len() + b.len() - 1];
    for (i, &x) in a.iter().enumerate() {
        if x != 0.0 {
            crate::netcore::axpy(x, b, &mut out[i..i + b.len()]);
        }
    }
    out
}

/// Full linear convolution through a zero-padded FFT.
pub fn convolve_full_fft(a: &[f64], b: &[f64]) -> Vec<f64> {
    if a.is_empty() || b.is_empty() {
        return Vec::new();
    }
    let len = a.len() + b.len() - 1;
    let n = len.next_power_of_two();
    let mut planner = FftPlanner::new();
    let (fwd, inv) = (planner.plan_fft_forward(n), planner.plan_fft_inverse(n));
    let pad = |x: &[f64]| -> Vec<Complex<f64>> {
        let mut v: Vec<Complex<f64>> = x.iter().map(|&r| Complex::new(r, 0.0)).collect();
        v.resize(n, Complex::new(0.0, 0.0));
        v
    };
    let (mut fa, mut fb) = (pad(a), pad(b));
    fwd.process(&mut fa);
    fwd.process(&mut fb);
    for (x, y) in fa.iter_mut().zip(&fb) {
        *x *= y;
    }
    inv.process(&mut fa);
    fa[..len].iter().map(|c| c.re / n as f64).collect()
}

fn convolve_full(a: &[f64], b: &[f64]) -> Vec<f64> {
    if a.len().min(b.len()) <= DIRECT_CONV_MAX {
        convolve_full_direct(a, b)
    } else {
        convolve_full_fft(a, b)
    }
}

/// `(x ∗ r)` cropped to the first `len(x)` samples.
pub fn convolve_samples(x: &[f64], taps: &[f64]) -> Vec<f64> {
    let mut y = convolve_full(x, taps);
    y.truncate(x.len());
    y
}

/// Adjoint of [`convolve_samples`]: `g[m] = Σ_k r[k]·u[m + k]` over `m + k < len(u)`.
pub fn convolve_samples_backward(upstream: &[f64], taps: &[f64]) -> Vec<f64> {
    let n = upstream.len();
    let reversed: Vec<f64> = upstream.iter().rev().copied().collect();
    let c = convolve_full(&reversed, taps);
    (0..n).map(|m| c[n - 1 - m]).collect()
}

/// Simulated recording `R(x) = x ∗ r`, cropped to the input length.
pub fn convolve(w: &Waveform, r: &Rir) -> Result<Waveform> {
    if w.sample_rate != r.sample_rate {
        return Err(Error::SampleRate {
            left: w.sample_rate,
            right: r.sample_rate,
        });
    }
    Ok(Waveform {
        samples: convolve_samples(&w.samples, &r.taps),
        sample_rate: w.sample_rate,
    })
}

/// Gradient w.r.t. the input of [`convolve`] given the gradient w.r.t. its output.
pub fn convolve_backward(upstream: &[f64], r: &Rir) -> Result<Vec<f64>> {
    if r.taps.is_empty() {
        return Err(Error::shape("convolve_backward", "non-empty RIR", 0));
    }
    Ok(convolve_samples_backward(upstream, &r.taps))
}

#[derive(Debug, Clone, PartialEq)]
pub struct RirSetConfig {
    /// Dimensions, absorption, order, rate and speed are taken from here;
    /// source and microphone positions are drawn.
    pub template: RoomSpec,
    pub n_locations: usize,
    pub n_train: usize,
    /// Minimum distance of drawn positions from every wall, metres.
    pub margin: f64,
    /// Minimum source–microphone distance, metres.
    pub min_distance: f64,
    /// Scale every RIR to unit peak.
    pub normalize: bool,
    pub seed: u64,
}

impl Default for RirSetConfig {
    fn default() -> Self {
        Self {
            template: RoomSpec::default(),
            n_locations: 120,
            n_train: 100,
            margin: 0.2,
            min_distance: 0.5,
            normalize: true,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RirSet {
    pub rirs: Vec<(Rir, Split)>,
    pub sample_rate: u32,
}

impl RirSet {
    pub fn subset(&self, split: Split) -> Vec<&Rir> {
        self.rirs
            .iter()
            .filter(|(_, s)| *s == split)
            .map(|(r, _)| r)
            .collect()
    }

    /// Write `rir_NNN.wav` (64-bit float, taps stored verbatim),
    /// `rir_NNN.room.txt` and an `index.tsv` of `file<TAB>split`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut index = String::new();
        for (i, (rir, split)) in self.rirs.iter().enumerate() {
            let name = format!("rir_{i:03}");
            write_wav_f64(
                dir.join(format!("{name}.wav")),
                &Waveform {
                    samples: rir.taps.clone(),
                    sample_rate: rir.sample_rate,
                },
            )?;
            if let Some(spec) = &rir.provenance {
                let p = dir.join(format!("{name}.room.txt"));
                fs::write(&p, spec.to_record()).map_err(|e| Error::io(&p, e))?;
            }
            index.push_str(&format!("{name}.wav\t{split}\n"));
        }
        let p = dir.join("index.tsv");
        fs::write(&p, index).map_err(|e| Error::io(&p, e))
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let p = dir.join("index.tsv");
        let text = fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
        let mut rirs = Vec::new();
        for (i, line) in text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
        {
            let (file, split) = line.split_once('\t').ok_or(Error::Manifest {
                line: i + 1,
                detail: "expected file<TAB>split".into(),
            })?;
            let split = split.parse::<Split>().map_err(|detail| Error::Manifest {
                line: i + 1,
                detail,
            })?;
            let w = read_wav_f64(dir.join(file))?;
            let room = dir.join(file.replace(".wav", ".room.txt"));
            let provenance = match fs::read_to_string(&room) {
                Ok(t) => Some(RoomSpec::from_record(&t)?),
                Err(_) => None,
            };
            rirs.push((
                Rir {
                    taps: w.samples,
                    sample_rate: w.sample_rate,
                    provenance,
                },
                split,
            ));
        }
        let sample_rate = rirs
            .first()
            .map(|(r, _)| r.sample_rate)
            .ok_or(Error::Empty("RIR set is empty"))?;
        if let Some((r, _)) = rirs.iter().find(|(r, _)| r.sample_rate != sample_rate) {
            return Err(Error::SampleRate {
                left: sample_rate,
                right: r.sample_rate,
            });
        }
        Ok(Self { rirs, sample_rate })
    }
}

/// Draw `n_locations` source/microphone placements uniformly inside the room
/// (respecting the wall margin) and simulate each; the first `n_train` are
/// tagged train and the rest test.
pub fn sample_rir_set(cfg: &RirSetConfig) -> Result<RirSet> {
    if cfg.n_locations == 0 {
        return Err(Error::Room("n_locations must be at least 1".into()));
    }
    if cfg.n_train > cfg.n_locations {
        return Err(Error::Room(format!(
            "n_train {} exceeds n_locations {}",
            cfg.n_train, cfg.n_locations
        )));
    }
    let dims = cfg.template.dimensions;
    if dims.iter().any(|&d| d <= 2.0 * cfg.margin) || cfg.margin < 0.0 {
        return Err(Error::Room(format!(
            "margin {} m leaves no room inside {:?}",
            cfg.margin, dims
        )));
    }
    let longest = (0..3)
        .map(|i| (dims[i] - 2.0 * cfg.margin).powi(2))
        .sum::<f64>()
        .sqrt();
    if cfg.min_distance >= longest {
        return Err(Error::Room(format!(
            "min_distance {} m cannot be met within the margins",
            cfg.min_distance
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let draw = |rng: &mut ChaCha8Rng| -> [f64; 3] {
        std::array::from_fn(|i| rng.random_range(cfg.margin..dims[i] - cfg.margin))
    };
    let mut rirs = Vec::with_capacity(cfg.n_locations);
    for i in 0..cfg.n_locations {
        let (source, mic) = loop {
            let (s, m) = (draw(&mut rng), draw(&mut rng));
            if distance(&s, &m) >= cfg.min_distance {
                break (s, m);
            }
        };
        let spec = RoomSpec {
            source,
            mic,
            ..cfg.template.clone()
        };
        let mut rir = image_source_rir(&spec)?;
        if cfg.normalize {
            rir = rir.normalized();
        }
        rirs.push((
            rir,
            if i < cfg.n_train {
                Split::Train
            } else {
                Split::Test
            },
        ));
    }
    Ok(RirSet {
        rirs,
        sample_rate: cfg.template.sample_rate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netcore::gradcheck::{directional_check, linear_adjoint_gap};
    use proptest::prelude::{prop_assert, proptest, ProptestConfig};

    fn random(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    /// Source and mic 64 samples apart at 16 kHz, so the direct path lands on
    /// an integer delay.
    fn aligned_room(absorption: f64, max_order: usize) -> (RoomSpec, f64) {
        let d = 64.0 * 343.0 / 16_000.0;
        let spec = RoomSpec {
            source: [1.0, 2.0, 1.5],
            mic: [1.0 + d, 2.0, 1.5],
            absorption,
            max_order,
            ..RoomSpec::default()
        };
        (spec, d)
    }

    #[test]
    fn fully_absorbent_room_is_direct_path_only() {
        let (spec, d) = aligned_room(1.0, 6);
        let rir = image_source_rir(&spec).unwrap();
        let peak_at = (0..rir.taps.len())
            .max_by(|&a, &b| rir.taps[a].abs().total_cmp(&rir.taps[b].abs()))
            .unwrap();
        assert_eq!(peak_at, 64);
        assert!((rir.taps[64] - 1.0 / (4.0 * PI * d)).abs() < 1e-12);
        let others: f64 = rir
            .taps
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != 64)
            .map(|(_, t)| t.abs())
            .sum();
        assert!(others < 1e-12);
    }

    #[test]
    fn order_zero_ignores_absorption() {
        let (a, _) = aligned_room(1.0, 0);
        let (b, _) = aligned_room(0.2, 0);
        let (c, _) = aligned_room(1.0, 5);
        let ra = image_source_rir(&a).unwrap();
        assert_eq!(ra.taps, image_source_rir(&b).unwrap().taps);
        assert_eq!(ra.taps, image_source_rir(&c).unwrap().taps);
    }

    #[test]
    fn inverse_distance_law() {
        let base = RoomSpec {
            source: [0.5, 2.5, 1.5],
            mic: [1.5, 2.5, 1.5],
            absorption: 1.0,
            ..RoomSpec::default()
        };
        let far = RoomSpec {
            mic: [2.5, 2.5, 1.5],
            ..base.clone()
        };
        let a = image_sources(&base).unwrap();
        let b = image_sources(&far).unwrap();
        let direct = |v: &[ImageSource]| v.iter().find(|i| i.order == 0).unwrap().amplitude;
        assert!((direct(&a) / direct(&b) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn image_count_and_amplitudes_match_closed_form() {
        for order in [0usize, 1, 3, 6] {
            let spec = RoomSpec {
                max_order: order,
                ..RoomSpec::default()
            };
            let images = image_sources(&spec).unwrap();
            // Lattice points with |i|₁ <= N in three dimensions.
            let n = order as i64;
            let mut count = 0;
            for a in -n..=n {
                for b in -n..=n {
                    for c in -n..=n {
                        if a.abs() + b.abs() + c.abs() <= n {
                            count += 1;
                        }
                    }
                }
            }
            assert_eq!(images.len(), count);
            let beta = (1.0f64 - spec.absorption).sqrt();
            for im in &images {
                let d = distance(&im.position, &spec.mic);
                assert!((im.amplitude - beta.powi(im.order as i32) / (4.0 * PI * d)).abs() < 1e-15);
            }
        }
        assert_eq!(image_sources(&RoomSpec::default()).unwrap().len(), 377);
    }

    #[test]
    fn reverberant_energy_decays() {
        let rir = image_source_rir(&RoomSpec::default()).unwrap();
        let q = rir.taps.len() / 4;
        let energy = |s: &[f64]| s.iter().map(|t| t * t).sum::<f64>();
        let quarters: Vec<f64> = rir.taps.chunks(q).map(energy).collect();
        assert!(quarters[0] > quarters[1] && quarters[1] > quarters[3]);
        assert!(rir.taps.iter().all(|t| t.is_finite()));
    }

    #[test]
    fn invalid_rooms_are_rejected() {
        let outside = RoomSpec {
            source: [6.0, 1.0, 1.0],
            ..RoomSpec::default()
        };
        assert!(matches!(image_source_rir(&outside), Err(Error::Room(_))));
        let same = RoomSpec {
            mic: RoomSpec::default().source,
            ..RoomSpec::default()
        };
        assert!(image_source_rir(&same).is_err());
        let zero = RoomSpec {
            absorption: 0.0,
            ..RoomSpec::default()
        };
        assert!(image_source_rir(&zero).is_err());
        let deep = RoomSpec {
            max_order: 21,
            ..RoomSpec::default()
        };
        assert!(image_source_rir(&deep).is_err());
    }

    #[test]
    fn room_record_roundtrip() {
        let spec = RoomSpec {
            source: [0.25, 1.125, 2.5],
            ..RoomSpec::default()
        };
        assert_eq!(RoomSpec::from_record(&spec.to_record()).unwrap(), spec);
        assert!(RoomSpec::from_record("colour = red").is_err());
    }

    #[test]
    fn unit_impulse_and_delay() {
        let w = Waveform::new(random(50, 1), 16_000).unwrap();
        assert_eq!(convolve(&w, &Rir::unit(16_000)).unwrap(), w);
        let delay = Rir {
            taps: vec![0.0, 1.0],
            sample_rate: 16_000,
            provenance: None,
        };
        let y = convolve(&w, &delay).unwrap();
        assert_eq!(y.samples[0], 0.0);
        assert_eq!(&y.samples[1..], &w.samples[..49]);
        assert_eq!(
            convolve_backward(&w.samples, &Rir::unit(16_000)).unwrap(),
            w.samples
        );
        assert!(matches!(
            convolve(&w, &Rir::unit(8_000)),
            Err(Error::SampleRate { .. })
        ));
    }

    #[test]
    fn fft_and_direct_agree() {
        for (n, m, seed) in [(300, 70, 1), (1000, 513, 2), (65, 4000, 3)] {
            let (a, b) = (random(n, seed), random(m, seed + 10));
            let d = convolve_full_direct(&a, &b);
            let f = convolve_full_fft(&a, &b);
            let scale = crate::audio::peak_abs(&d);
            let err = d
                .iter()
                .zip(&f)
                .map(|(x, y)| (x - y).abs())
                .fold(0.0, f64::max);
            assert!(err <= 1e-10 * scale, "{n}x{m}: {err}");
        }
    }

    #[test]
    fn time_invariance_on_padded_inputs() {
        let taps = image_source_rir(&RoomSpec::default()).unwrap().taps;
        let x = random(500, 4);
        let shift = 37;
        let mut padded = x.clone();
        padded.resize(500 + taps.len() + shift, 0.0);
        let mut shifted = vec![0.0; shift];
        shifted.extend_from_slice(&padded[..padded.len() - shift]);
        let y = convolve_samples(&padded, &taps);
        let ys = convolve_samples(&shifted, &taps);
        for i in 0..y.len() - shift {
            assert!((ys[i + shift] - y[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn backward_is_the_adjoint() {
        let taps = image_source_rir(&RoomSpec::default())
            .unwrap()
            .normalized()
            .taps;
        let (x, u) = (random(3000, 5), random(3000, 6));
        let jv = convolve_samples(&x, &taps);
        let jt_u = convolve_samples_backward(&u, &taps);
        assert!(linear_adjoint_gap(&jv, &u, &jt_u, &x) < 1e-6);
        // Nonlinear loss through the convolution.
        let loss = |p: &[f64]| {
            convolve_samples(p, &taps)
                .iter()
                .map(|y| (y * 3.0).sin())
                .sum::<f64>()
        };
        let y = convolve_samples(&x, &taps);
        let up: Vec<f64> = y.iter().map(|y| 3.0 * (y * 3.0).cos()).collect();
        let g = convolve_samples_backward(&up, &taps);
        let r = directional_check(&loss, &x, &g, &random(3000, 7), 1e-6);
        assert!(r.rel_error < 1e-4, "{r:?}");
    }

    #[test]
    fn rir_set_split_determinism_and_margins() {
        let cfg = RirSetConfig {
            template: RoomSpec {
                max_order: 2,
                ..RoomSpec::default()
            },
            seed: 9,
            ..RirSetConfig::default()
        };
        let a = sample_rir_set(&cfg).unwrap();
        assert_eq!(a.subset(Split::Train).len(), 100);
        assert_eq!(a.subset(Split::Test).len(), 20);
        assert_eq!(a, sample_rir_set(&cfg).unwrap());
        for (r, _) in &a.rirs {
            let spec = r.provenance.as_ref().unwrap();
            for p in [spec.source, spec.mic] {
                for (x, l) in p.iter().zip(spec.dimensions) {
                    assert!(*x >= 0.2 && *x <= l - 0.2);
                }
            }
            assert!((r.peak() - 1.0).abs() < 1e-12);
        }
        let bad = RirSetConfig {
            margin: 1.6,
            ..cfg.clone()
        };
        assert!(sample_rir_set(&bad).is_err());
        let dir = tempfile::tempdir().unwrap();
        let small = RirSetConfig {
            n_locations: 3,
            n_train: 2,
            ..cfg
        };
        let set = sample_rir_set(&small).unwrap();
        set.save(dir.path()).unwrap();
        assert_eq!(RirSet::load(dir.path()).unwrap(), set);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn convolution_is_linear(
            seed in 0u64..1000,
            n in 1usize..400,
            m in 1usize..200,
            a in -3.0f64..3.0,
            b in -3.0f64..3.0,
        ) {
            let (w1, w2, r) = (random(n, seed), random(n, seed + 1), random(m, seed + 2));
            let mix: Vec<f64> = w1.iter().zip(&w2).map(|(x, y)| a * x + b * y).collect();
            let lhs = convolve_samples(&mix, &r);
            let (y1, y2) = (convolve_samples(&w1, &r), convolve_samples(&w2, &r));
            for i in 0..n {
                prop_assert!((lhs[i] - (a * y1[i] + b * y2[i])).abs() < 1e-9);
            }
        }
    }
}
