//! Minimal RIFF/WAVE codec: 16-bit PCM mono for audio, 64-bit IEEE float mono for
//! artifacts that must survive a round trip bit-exactly (perturbations, RIRs).

use std::fs;
use std::path::Path;

use super::Waveform;
use crate::error::{Error, Result};

const FORMAT_PCM: u16 = 1;
const FORMAT_IEEE_FLOAT: u16 = 3;

/// Quantize one amplitude to 16-bit PCM after a saturating clamp to [-1, 1].
pub(crate) fn quantize_pcm16(x: f64) -> i16 {
    let clamped = if x.is_nan() { 0.0 } else { x.clamp(-1.0, 1.0) };
    (clamped * 32768.0).round().clamp(-32768.0, 32767.0) as i16
}

fn header(format: u16, bits: u16, sample_rate: u32, data_len: u32) -> Vec<u8> {
    let block_align = bits / 8;
    let fmt_len: u32 = if format == FORMAT_PCM { 16 } else { 18 };
    let mut out = Vec::with_capacity(46);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(4 + 8 + fmt_len + 8 + data_len).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&fmt_len.to_le_bytes());
    out.extend_from_slice(&format.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&sample_rate.to_le_bytes());
    out.extend_from_slice(&(sample_rate * block_align as u32).to_le_bytes());
    out.extend_from_slice(&block_align.to_le_bytes());
    out.extend_from_slice(&bits.to_le_bytes());
    if format != FORMAT_PCM {
        out.extend_from_slice(&0u16.to_le_bytes());
    }
    out.extend_from_slice(b"data");
    out.extend_from_slice(&data_len.to_le_bytes());
    out
}

pub fn encode_wav_pcm16(w: &Waveform) -> Vec<u8> {
    let mut out = header(FORMAT_PCM, 16, w.sample_rate, (w.len() * 2) as u32);
    for &s in &w.samples {
        out.extend_from_slice(&quantize_pcm16(s).to_le_bytes());
    }
    out
}

pub fn encode_wav_f64(w: &Waveform) -> Vec<u8> {
    let mut out = header(FORMAT_IEEE_FLOAT, 64, w.sample_rate, (w.len() * 8) as u32);
    for &s in &w.samples {
        out.extend_from_slice(&s.to_le_bytes());
    }
    out
}

fn u16_at(b: &[u8], at: usize) -> u16 {
    u16::from_le_bytes([b[at], b[at + 1]])
}

fn u32_at(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes([b[at], b[at + 1], b[at + 2], b[at + 3]])
}

fn bad(field: &'static str, detail: impl Into<String>) -> Error {
    Error::WavDecode {
        field,
        detail: detail.into(),
    }
}

struct Fmt {
    format: u16,
    bits: u16,
    sample_rate: u32,
}

/// Decode a mono WAV that is either 16-bit PCM or 64-bit float.
pub fn decode_wav(bytes: &[u8]) -> Result<Waveform> {
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" {
        return Err(bad("riff", "missing RIFF signature"));
    }
    if &bytes[8..12] != b"WAVE" {
        return Err(bad("wave", "missing WAVE form type"));
    }
    let mut pos = 12;
    let mut fmt: Option<Fmt> = None;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let len = u32_at(bytes, pos + 4) as usize;
        let body = pos + 8;
        let end = body
            .checked_add(len)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| {
                bad(
                    "chunk_size",
                    format!("chunk '{}' overruns file", String::from_utf8_lossy(id)),
                )
            })?;
        match id {
            b"fmt " => {
                if len < 16 {
                    return Err(bad("fmt.size", format!("fmt chunk of {len} bytes")));
                }
                let format = u16_at(bytes, body);
                let channels = u16_at(bytes, body + 2);
                let sample_rate = u32_at(bytes, body + 4);
                let bits = u16_at(bytes, body + 14);
                if channels != 1 {
                    return Err(bad(
                        "fmt.channels",
                        format!("{channels} channels, expected mono"),
                    ));
                }
                if sample_rate == 0 {
                    return Err(bad("fmt.sample_rate", "zero sample rate"));
                }
                match (format, bits) {
                    (FORMAT_PCM, 16) | (FORMAT_IEEE_FLOAT, 64) => {}
                    (FORMAT_PCM, b) | (FORMAT_IEEE_FLOAT, b) => {
                        return Err(bad(
                            "fmt.bits_per_sample",
                            format!("{b}-bit samples are not supported for format {format}"),
                        ))
                    }
                    (f, _) => {
                        return Err(bad("fmt.format_tag", format!("unsupported encoding {f}")))
                    }
                }
                fmt = Some(Fmt {
                    format,
                    bits,
                    sample_rate,
                });
            }
            b"data" => {
                let fmt = fmt.ok_or_else(|| bad("fmt", "data chunk before fmt chunk"))?;
                let width = fmt.bits as usize / 8;
                let data = &bytes[body..end];
                if !data.len().is_multiple_of(width) {
                    return Err(bad("data", "length is not a whole number of frames"));
                }
                let samples = if fmt.format == FORMAT_PCM {
                    data.chunks_exact(2)
                        .map(|c| i16::from_le_bytes([c[0], c[1]]) as f64 / 32768.0)
                        .collect()
                } else {
                    data.chunks_exact(8)
                        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                        .collect()
                };
                return Waveform::new(samples, fmt.sample_rate);
            }
            _ => {}
        }
        // Chunks are padded to even length.
        pos = end + (len & 1);
    }
    Err(bad("data", "no data chunk"))
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

/// Read a 16-bit PCM mono WAV; samples are scaled by 1/32768.
pub fn read_wav(path: impl AsRef<Path>) -> Result<Waveform> {
    let path = path.as_ref();
    let bytes = read_bytes(path)?;
    if bytes.len() >= 36 && u16_at(&bytes, 20) == FORMAT_IEEE_FLOAT && &bytes[12..16] == b"fmt " {
        return Err(bad(
            "fmt.format_tag",
            "float WAV where 16-bit PCM was expected",
        ));
    }
    decode_wav(&bytes)
}

/// As [`read_wav`], additionally requiring the given sample rate.
pub fn read_wav_at(path: impl AsRef<Path>, sample_rate: u32) -> Result<Waveform> {
    let w = read_wav(path)?;
    if w.sample_rate != sample_rate {
        return Err(bad(
            "fmt.sample_rate",
            format!("{} Hz, configured {} Hz", w.sample_rate, sample_rate),
        ));
    }
    Ok(w)
}

pub fn write_wav(path: impl AsRef<Path>, w: &Waveform) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_wav_pcm16(w)).map_err(|e| Error::io(path, e))
}

pub fn write_wav_f64(path: impl AsRef<Path>, w: &Waveform) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_wav_f64(w)).map_err(|e| Error::io(path, e))
}

pub fn read_wav_f64(path: impl AsRef<Path>) -> Result<Waveform> {
    decode_wav(&read_bytes(path.as_ref())?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pcm_of(w: &Waveform) -> Vec<i16> {
        encode_wav_pcm16(w)[44..]
            .chunks_exact(2)
            .map(|c| i16::from_le_bytes([c[0], c[1]]))
            .collect()
    }

    #[test]
    fn zero_frames_decode_to_zeros() {
        let w = Waveform::zeros(160, 16_000);
        let back = decode_wav(&encode_wav_pcm16(&w)).unwrap();
        assert_eq!(back.samples, vec![0.0; 160]);
        assert_eq!(back.sample_rate, 16_000);
    }

    #[test]
    fn pcm_min_is_minus_one() {
        let mut bytes = header(FORMAT_PCM, 16, 16_000, 2);
        bytes.extend_from_slice(&(-32768i16).to_le_bytes());
        assert_eq!(decode_wav(&bytes).unwrap().samples, vec![-1.0]);
    }

    #[test]
    fn write_quantization_and_saturation() {
        let w = |s: Vec<f64>| Waveform::new(s, 16_000).unwrap();
        assert_eq!(pcm_of(&w(vec![0.0])), vec![0]);
        assert_eq!(pcm_of(&w(vec![2.0])), vec![32767]);
        assert_eq!(pcm_of(&w(vec![1.0, -1.0])), vec![32767, -32768]);
    }

    #[test]
    fn rejects_stereo_and_names_field() {
        let mut bytes = header(FORMAT_PCM, 16, 16_000, 4);
        bytes[22] = 2;
        bytes.extend_from_slice(&[0; 4]);
        match decode_wav(&bytes) {
            Err(Error::WavDecode { field, .. }) => assert_eq!(field, "fmt.channels"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rejects_8_bit_and_bad_magic() {
        let mut bytes = header(FORMAT_PCM, 16, 16_000, 0);
        bytes[34] = 8;
        assert!(matches!(
            decode_wav(&bytes),
            Err(Error::WavDecode {
                field: "fmt.bits_per_sample",
                ..
            })
        ));
        assert!(matches!(
            decode_wav(b"RIFX\0\0\0\0WAVE"),
            Err(Error::WavDecode { field: "riff", .. })
        ));
    }

    #[test]
    fn sample_rate_mismatch_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.wav");
        write_wav(&p, &Waveform::zeros(10, 8_000)).unwrap();
        assert!(matches!(
            read_wav_at(&p, 16_000),
            Err(Error::WavDecode {
                field: "fmt.sample_rate",
                ..
            })
        ));
    }

    #[test]
    fn skips_unknown_chunks() {
        let w = Waveform::new(vec![0.5, -0.25], 16_000).unwrap();
        let enc = encode_wav_pcm16(&w);
        let mut bytes = enc[..36].to_vec();
        bytes.extend_from_slice(b"LIST");
        bytes.extend_from_slice(&3u32.to_le_bytes());
        bytes.extend_from_slice(&[1, 2, 3, 0]);
        bytes.extend_from_slice(&enc[36..]);
        assert_eq!(decode_wav(&bytes).unwrap().samples, vec![0.5, -0.25]);
    }

    #[test]
    fn float_roundtrip_is_bit_exact() {
        let w = Waveform::new(vec![1e-17, -0.3, 3.5, f64::MIN_POSITIVE], 22_050).unwrap();
        assert_eq!(decode_wav(&encode_wav_f64(&w)).unwrap(), w);
    }

    proptest! {
        #[test]
        fn pcm_roundtrip_within_one_step(samples in proptest::collection::vec(-1.0f64..1.0, 1..300)) {
            let w = Waveform::new(samples, 16_000).unwrap();
            let back = decode_wav(&encode_wav_pcm16(&w)).unwrap();
            prop_assert_eq!(back.len(), w.len());
            for (a, b) in w.samples.iter().zip(&back.samples) {
                prop_assert!((a - b).abs() <= 1.0 / 32768.0);
            }
        }
    }
}
