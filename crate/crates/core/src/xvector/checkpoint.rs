//! Self-describing binary checkpoint.
//!
//! Layout (little-endian): magic `SPKXVEC\0`, u32 version, MFCC config,
//! architecture, label table, feature standardization, parameter blobs
//! (name, dims, f64 values), then a SHA-256 digest of all preceding bytes.

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::{Architecture, SpeakerModel, TdnnSpec};
use crate::error::{Error, Result};
use crate::features::{MfccConfig, WindowKind};

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"SPKXVEC\0";
const DIGEST_LEN: usize = 32;

#[derive(Default)]
struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: usize) {
        self.0.extend_from_slice(&(v as u32).to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn str(&mut self, s: &str) {
        self.u32(s.len());
        self.0.extend_from_slice(s.as_bytes());
    }
    fn f64s(&mut self, vs: &[f64]) {
        self.u32(vs.len());
        vs.iter().for_each(|&v| self.f64(v));
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| {
                Error::Checkpoint(format!("unexpected end of data at byte {}", self.pos))
            })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }
    fn str(&mut self) -> Result<String> {
        let n = self.u32()?;
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| Error::Checkpoint("label is not UTF-8".into()))
    }
    fn f64s(&mut self) -> Result<Vec<f64>> {
        let n = self.u32()?;
        if n > self.buf.len() / 8 {
            return Err(Error::Checkpoint(format!(
                "array length {n} exceeds file size"
            )));
        }
        (0..n).map(|_| self.f64()).collect()
    }
}

pub fn encode_checkpoint(m: &SpeakerModel) -> Vec<u8> {
    let mut w = Writer::default();
    w.0.extend_from_slice(MAGIC);
    w.u32(CHECKPOINT_VERSION as usize);

    let c = &m.mfcc_config;
    w.u32(c.sample_rate as usize);
    w.u32(c.n_coeffs);
    w.f64(c.frame_len_ms);
    w.f64(c.frame_shift_ms);
    w.u32(c.n_mels);
    w.u32(c.fft_size);
    w.f64(c.preemphasis);
    w.u8(c.window.code());
    w.f64(c.log_floor);

    w.u32(m.arch.tdnn.len());
    for l in &m.arch.tdnn {
        w.u32(l.context);
        w.u32(l.dilation);
        w.u32(l.channels);
    }
    w.u32(m.arch.embedding_dim);
    w.u32(m.arch.n_speakers);

    w.u32(m.labels.len());
    m.labels.iter().for_each(|l| w.str(l));

    w.f64s(&m.feature_shift);
    w.f64s(&m.feature_scale);

    let params = m.params();
    w.u32(params.len());
    for p in params {
        w.str(&p.name);
        w.u32(p.shape.len());
        p.shape.iter().for_each(|&d| w.u32(d));
        w.f64s(&p.values);
    }

    let digest = Sha256::digest(&w.0);
    w.0.extend_from_slice(&digest);
    w.0
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<SpeakerModel> {
    if bytes.len() < MAGIC.len() + 4 || &bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::Checkpoint(
            "not a speaker model checkpoint (bad magic)".into(),
        ));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != CHECKPOINT_VERSION {
        return Err(Error::Version {
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    if bytes.len() < 12 + DIGEST_LEN {
        return Err(Error::Checksum);
    }
    let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
    if Sha256::digest(body).as_slice() != digest {
        return Err(Error::Checksum);
    }
    let mut r = Reader { buf: body, pos: 12 };

    let sample_rate = r.u32()? as u32;
    let n_coeffs = r.u32()?;
    let frame_len_ms = r.f64()?;
    let frame_shift_ms = r.f64()?;
    let n_mels = r.u32()?;
    let fft_size = r.u32()?;
    let preemphasis = r.f64()?;
    let window_code = r.u8()?;
    let window = WindowKind::from_code(window_code)
        .ok_or_else(|| Error::Checkpoint(format!("unknown window code {window_code}")))?;
    let log_floor = r.f64()?;
    let mfcc_config = MfccConfig {
        sample_rate,
        n_coeffs,
        frame_len_ms,
        frame_shift_ms,
        n_mels,
        fft_size,
        preemphasis,
        window,
        log_floor,
    };

    let n_layers = r.u32()?;
    if n_layers > 64 {
        return Err(Error::Checkpoint(format!(
            "implausible layer count {n_layers}"
        )));
    }
    let tdnn = (0..n_layers)
        .map(|_| {
            Ok(TdnnSpec {
                context: r.u32()?,
                dilation: r.u32()?,
                channels: r.u32()?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let arch = Architecture {
        tdnn,
        embedding_dim: r.u32()?,
        n_speakers: r.u32()?,
    };

    let n_labels = r.u32()?;
    if n_labels != arch.n_speakers {
        return Err(Error::shape("checkpoint labels", arch.n_speakers, n_labels));
    }
    let labels = (0..n_labels).map(|_| r.str()).collect::<Result<Vec<_>>>()?;
    let feature_shift = r.f64s()?;
    let feature_scale = r.f64s()?;
    if feature_shift.len() != n_coeffs || feature_scale.len() != n_coeffs {
        return Err(Error::shape(
            "checkpoint feature normalization",
            n_coeffs,
            feature_shift.len(),
        ));
    }

    let mut model = SpeakerModel::new(arch, mfcc_config, 0)?;
    model.labels = labels;
    model.feature_shift = feature_shift;
    model.feature_scale = feature_scale;
    let n_params = r.u32()?;
    let expected = model.params().len();
    if n_params != expected {
        return Err(Error::shape(
            "checkpoint parameter count",
            expected,
            n_params,
        ));
    }
    for p in model.params_mut() {
        let name = r.str()?;
        if name != p.name {
            return Err(Error::Checkpoint(format!(
                "expected parameter '{}', found '{name}'",
                p.name
            )));
        }
        let ndims = r.u32()?;
        let shape = (0..ndims).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
        if shape != p.shape {
            return Err(Error::shape(
                "checkpoint parameter",
                format!("{} {:?}", p.name, p.shape),
                format!("{shape:?}"),
            ));
        }
        let values = r.f64s()?;
        if values.len() != p.len() {
            return Err(Error::shape(
                "checkpoint parameter values",
                p.len(),
                values.len(),
            ));
        }
        p.values = values;
    }
    if r.pos != body.len() {
        return Err(Error::Checkpoint(format!(
            "{} trailing bytes",
            body.len() - r.pos
        )));
    }
    Ok(model)
}

pub fn save_checkpoint(m: &SpeakerModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_checkpoint(m)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<SpeakerModel> {
    let path = path.as_ref();
    decode_checkpoint(&fs::read(path).map_err(|e| Error::io(path, e))?)
}
