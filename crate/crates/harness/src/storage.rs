//! On-disk formats: JSON-lines manifests, LFBE feature files, WAV audio and
//! the impulse-response cache.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use arbiter_core::features::{FeatureMatrix, NUM_BINS};
use arbiter_core::rir::{RirOptions, RoomImpulseResponse};
use arbiter_core::scene::{distance, Point, SceneSpec};
use arbiter_core::synth::{IsmRirProvider, RirProvider, Waveform};
use serde::de::DeserializeOwned;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{format_err, io_err, Error, Result};

pub fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(io_err(path))
}

fn create_file(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent() {
        create_dir(parent)?;
    }
    Ok(BufWriter::new(File::create(path).map_err(io_err(path))?))
}

/// Writes `bytes` to `path` through a temporary sibling and a rename, so
/// readers never observe a half-written file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("partial");
    {
        let mut w = create_file(&tmp)?;
        w.write_all(bytes).map_err(io_err(&tmp))?;
        w.flush().map_err(io_err(&tmp))?;
    }
    std::fs::rename(&tmp, path).map_err(io_err(path))
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let mut buf = Vec::new();
    for item in items {
        serde_json::to_writer(&mut buf, item).map_err(|e| format_err(path, e.to_string()))?;
        buf.push(b'\n');
    }
    write_atomic(path, &buf)
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let f = File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| format_err(path, format!("line {}: {e}", i + 1)))?);
    }
    Ok(out)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| format_err(path, e.to_string()))?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| format_err(path, e.to_string()))
}

pub const FEATURE_MAGIC: [u8; 4] = *b"LFBE";
pub const FEATURE_VERSION: u32 = 1;
const FEATURE_HEADER_LEN: usize = 4 + 4 + 4 + 4 + 1;

/// Serialises feature matrices back to back, each as a fixed header
/// (magic, version, frames, bins, normalised flag) followed by row-major
/// little-endian `f32` values.
pub fn encode_features(mats: &[FeatureMatrix]) -> Vec<u8> {
    let total: usize = mats.iter().map(|m| FEATURE_HEADER_LEN + 4 * m.values.len()).sum();
    let mut out = Vec::with_capacity(total);
    for m in mats {
        out.extend_from_slice(&FEATURE_MAGIC);
        out.extend_from_slice(&FEATURE_VERSION.to_le_bytes());
        out.extend_from_slice(&(m.frames as u32).to_le_bytes());
        out.extend_from_slice(&(NUM_BINS as u32).to_le_bytes());
        out.push(u8::from(m.normalized));
        for v in &m.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode_features(bytes: &[u8], path: &Path) -> Result<Vec<FeatureMatrix>> {
    let mut out = Vec::new();
    let mut rest = bytes;
    let u32_at = |b: &[u8], at: usize| u32::from_le_bytes(b[at..at + 4].try_into().expect("4 bytes"));
    while !rest.is_empty() {
        if rest.len() < FEATURE_HEADER_LEN || rest[..4] != FEATURE_MAGIC {
            return Err(format_err(path, "bad feature header"));
        }
        let version = u32_at(rest, 4);
        if version != FEATURE_VERSION {
            return Err(format_err(path, format!("unsupported feature version {version}")));
        }
        let frames = u32_at(rest, 8) as usize;
        let bins = u32_at(rest, 12) as usize;
        if bins != NUM_BINS {
            return Err(format_err(path, format!("{bins} bins, expected {NUM_BINS}")));
        }
        let normalized = match rest[16] {
            0 => false,
            1 => true,
            v => return Err(format_err(path, format!("bad normalised flag {v}"))),
        };
        let n = frames * bins;
        let body = &rest[FEATURE_HEADER_LEN..];
        if body.len() < 4 * n {
            return Err(format_err(path, "truncated feature data"));
        }
        let values = body[..4 * n]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        out.push(FeatureMatrix::new(frames, values, normalized)?);
        rest = &body[4 * n..];
    }
    Ok(out)
}

pub fn write_features(path: &Path, mats: &[FeatureMatrix]) -> Result<()> {
    write_atomic(path, &encode_features(mats))
}

pub fn read_features(path: &Path) -> Result<Vec<FeatureMatrix>> {
    let mut bytes = Vec::new();
    File::open(path)
        .map_err(io_err(path))?
        .read_to_end(&mut bytes)
        .map_err(io_err(path))?;
    decode_features(&bytes, path)
}

fn wav_spec(channels: u16, sample_rate: u32) -> hound::WavSpec {
    hound::WavSpec {
        channels,
        sample_rate,
        bits_per_sample: 32,
        sample_format: hound::SampleFormat::Float,
    }
}

fn wav_err(path: &Path) -> impl FnOnce(hound::Error) -> Error + '_ {
    move |source| Error::Wav {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes a mono 32-bit float WAV.
pub fn write_wav_mono(path: &Path, w: &Waveform) -> Result<()> {
    write_wav_packed(path, std::slice::from_ref(w))
}

/// Writes equal-length channels interleaved into one 32-bit float WAV.
pub fn write_wav_packed(path: &Path, channels: &[Waveform]) -> Result<()> {
    let first = channels.first().ok_or_else(|| Error::Invalid("no channels to write".into()))?;
    if channels.iter().any(|c| c.len() != first.len() || c.sample_rate != first.sample_rate) {
        return Err(Error::Invalid("packed channels differ in length or sample rate".into()));
    }
    let n = u16::try_from(channels.len()).map_err(|_| Error::Invalid("too many channels".into()))?;
    if let Some(parent) = path.parent() {
        create_dir(parent)?;
    }
    let mut w = hound::WavWriter::create(path, wav_spec(n, first.sample_rate)).map_err(wav_err(path))?;
    for i in 0..first.len() {
        for c in channels {
            w.write_sample(c.samples[i] as f32).map_err(wav_err(path))?;
        }
    }
    w.finalize().map_err(wav_err(path))
}

/// Reads every channel of a 32-bit float WAV.
pub fn read_wav_channels(path: &Path) -> Result<Vec<Waveform>> {
    let mut r = hound::WavReader::open(path).map_err(wav_err(path))?;
    let spec = r.spec();
    if spec.sample_format != hound::SampleFormat::Float || spec.bits_per_sample != 32 {
        return Err(format_err(path, "expected 32-bit float samples"));
    }
    let n = usize::from(spec.channels);
    let data: Vec<f32> = r.samples::<f32>().collect::<std::result::Result<_, _>>().map_err(wav_err(path))?;
    if n == 0 || data.len() % n != 0 {
        return Err(format_err(path, "sample count is not a multiple of the channel count"));
    }
    (0..n)
        .map(|c| {
            let samples = data.iter().skip(c).step_by(n).map(|&v| f64::from(v)).collect();
            Ok(Waveform::new(samples, spec.sample_rate)?)
        })
        .collect()
}

pub fn read_wav_mono(path: &Path) -> Result<Waveform> {
    let mut ch = read_wav_channels(path)?;
    if ch.len() != 1 {
        return Err(format_err(path, format!("expected one channel, found {}", ch.len())));
    }
    Ok(ch.remove(0))
}

/// Impulse responses cached on disk, one file per (room, rt60, source,
/// microphone, sample rate, options), named by a SHA-256 of those inputs.
///
/// Taps are stored as `f32`, and freshly synthesised responses are rounded
/// the same way, so cold and warm runs produce identical audio.
#[derive(Debug, Clone)]
pub struct CachedRirProvider {
    pub inner: IsmRirProvider,
    pub dir: PathBuf,
}

impl CachedRirProvider {
    pub fn new(dir: impl Into<PathBuf>, sample_rate: u32, options: RirOptions) -> Self {
        Self {
            inner: IsmRirProvider { sample_rate, options },
            dir: dir.into(),
        }
    }

    pub fn key(&self, scene: &SceneSpec, source: &Point, mic: &Point) -> String {
        let mut h = Sha256::new();
        let mut put = |v: f64| h.update(v.to_bits().to_le_bytes());
        scene.room_dims.iter().chain(source).chain(mic).for_each(|&v| put(v));
        put(scene.rt60);
        h.update(self.inner.sample_rate.to_le_bytes());
        h.update(serde_json::to_vec(&self.inner.options).expect("options serialise"));
        hex::encode(h.finalize())
    }

    fn path_for(&self, key: &str) -> PathBuf {
        self.dir.join(&key[..2]).join(format!("{key}.f32"))
    }
}

impl RirProvider for CachedRirProvider {
    fn rir(&self, scene: &SceneSpec, source: &Point, mic: &Point) -> arbiter_core::Result<RoomImpulseResponse> {
        let fs = self.inner.sample_rate;
        let path = self.path_for(&self.key(scene, source, mic));
        if let Ok(bytes) = std::fs::read(&path) {
            if bytes.len() % 4 == 0 && !bytes.is_empty() {
                let taps = bytes
                    .chunks_exact(4)
                    .map(|c| f64::from(f32::from_le_bytes(c.try_into().expect("4 bytes"))))
                    .collect();
                return Ok(RoomImpulseResponse {
                    sample_rate: fs,
                    taps,
                    source: *source,
                    mic: *mic,
                    rt60_target: scene.rt60,
                    direct_delay: f64::from(fs) * distance(source, mic) / arbiter_core::rir::SPEED_OF_SOUND,
                });
            }
        }
        let mut rir = self.inner.rir(scene, source, mic)?;
        let mut bytes = Vec::with_capacity(4 * rir.taps.len());
        for t in &mut rir.taps {
            let v = *t as f32;
            *t = f64::from(v);
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        // A failed cache write only costs a recomputation next time.
        if let Some(parent) = path.parent() {
            if std::fs::create_dir_all(parent).is_ok() {
                let _ = write_atomic(&path, &bytes);
            }
        }
        Ok(rir)
    }
}
