//! Dataset manifests and WAV clip loading.
//!
//! A manifest is a JSON-lines file, one record per clip:
//!
//! ```text
//! {"path": "clips/a.wav", "label": 0, "split": "train"}
//! {"path": "clips/b.wav", "split": "train"}
//! ```
//!
//! Relative paths resolve against the manifest's directory. Clips are loaded
//! as mono, resampled, padded or center-cropped to a fixed length and then
//! peak-normalized.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use rubato::{
    Resampler, SincFixedIn, SincInterpolationParameters, SincInterpolationType, WindowFunction,
};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// One decoded, fixed-length mono clip.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    pub clip_id: String,
    pub samples: Vec<f32>,
    pub sample_rate: u32,
    pub label: Option<u32>,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestRecord {
    path: String,
    #[serde(default)]
    label: Option<u32>,
    split: Split,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    /// The path exactly as written in the manifest; doubles as the clip id.
    pub clip_id: String,
    /// `clip_id` resolved against the manifest directory.
    pub path: PathBuf,
    pub label: Option<u32>,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
    /// `max(label) + 1` when at least one entry is labelled.
    pub num_classes: Option<u32>,
}

impl DatasetManifest {
    /// Builds a manifest from already-resolved entries, enforcing the same
    /// invariants as [`load_manifest`].
    pub fn from_entries(entries: Vec<ManifestEntry>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::Validation("empty manifest".into()));
        }
        let mut seen = HashSet::new();
        for e in &entries {
            if !seen.insert(e.clip_id.as_str()) {
                return Err(Error::Validation(format!("duplicate path {}", e.clip_id)));
            }
        }
        let num_classes = entries.iter().filter_map(|e| e.label).max().map(|m| m + 1);
        Ok(Self {
            entries,
            num_classes,
        })
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    pub fn has_split(&self, split: Split) -> bool {
        self.split(split).next().is_some()
    }

    /// Fails unless every entry of `split` carries a label.
    pub fn require_labels(&self, split: Split) -> Result<()> {
        if let Some(e) = self.split(split).find(|e| e.label.is_none()) {
            return Err(Error::Validation(format!(
                "entry {} in {:?} split has no label",
                e.clip_id, split
            )));
        }
        Ok(())
    }
}

pub fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let mut entries = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: ManifestRecord = serde_json::from_str(line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            msg: e.to_string(),
        })?;
        entries.push(ManifestEntry {
            path: base.join(&rec.path),
            clip_id: rec.path,
            label: rec.label,
            split: rec.split,
        });
    }
    DatasetManifest::from_entries(entries)
}

/// Writes entries back out in the manifest line format, with paths made
/// relative to nothing (the `clip_id` is written verbatim).
pub fn write_manifest(path: &Path, entries: &[ManifestEntry]) -> Result<()> {
    #[derive(Serialize)]
    struct Out<'a> {
        path: &'a str,
        #[serde(skip_serializing_if = "Option::is_none")]
        label: Option<u32>,
        split: Split,
    }
    let mut text = String::new();
    for e in entries {
        text.push_str(&serde_json::to_string(&Out {
            path: &e.clip_id,
            label: e.label,
            split: e.split,
        })?);
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Decodes a linear-PCM WAV into interleaved-averaged mono samples.
fn decode_wav_mono(path: &Path) -> Result<(Vec<f64>, u32)> {
    let decode_err = |msg: String| Error::Decode {
        path: path.to_path_buf(),
        msg,
    };
    let mut reader = hound::WavReader::open(path).map_err(|e| decode_err(e.to_string()))?;
    let spec = reader.spec();
    let channels = spec.channels as usize;
    if channels == 0 || spec.sample_rate == 0 {
        return Err(decode_err("invalid wav header".into()));
    }
    let interleaved: Vec<f64> = match spec.sample_format {
        hound::SampleFormat::Float => {
            if spec.bits_per_sample != 32 {
                return Err(decode_err(format!(
                    "unsupported float width {}",
                    spec.bits_per_sample
                )));
            }
            reader
                .samples::<f32>()
                .map(|s| s.map(f64::from))
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| decode_err(e.to_string()))?
        }
        hound::SampleFormat::Int => {
            let scale = 1.0 / f64::from(1u32 << (spec.bits_per_sample - 1));
            reader
                .samples::<i32>()
                .map(|s| s.map(|v| f64::from(v) * scale))
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| decode_err(e.to_string()))?
        }
    };
    if interleaved.len() < channels {
        return Err(decode_err("zero-length audio".into()));
    }
    let mono = interleaved
        .chunks_exact(channels)
        .map(|frame| frame.iter().sum::<f64>() / channels as f64)
        .collect();
    Ok((mono, spec.sample_rate))
}

/// Band-limited sinc resampling of a whole mono buffer.
pub fn resample(samples: &[f64], from_rate: u32, to_rate: u32) -> Result<Vec<f64>> {
    if from_rate == to_rate || samples.is_empty() {
        return Ok(samples.to_vec());
    }
    let ratio = f64::from(to_rate) / f64::from(from_rate);
    let params = SincInterpolationParameters {
        sinc_len: 128,
        f_cutoff: 0.95,
        interpolation: SincInterpolationType::Cubic,
        oversampling_factor: 128,
        window: WindowFunction::BlackmanHarris2,
    };
    let rs_err = |e: &dyn std::fmt::Display| Error::InvalidArgument(format!("resampler: {e}"));
    let mut rs = SincFixedIn::<f64>::new(ratio, 1.0, params, samples.len(), 1)
        .map_err(|e| rs_err(&e))?;
    let delay = rs.output_delay();
    let expected = (samples.len() as f64 * ratio).round() as usize;
    let mut out = rs.process(&[samples], None).map_err(|e| rs_err(&e))?.remove(0);
    while out.len() < expected + delay {
        let tail = rs
            .process_partial(None::<&[&[f64]]>, None)
            .map_err(|e| rs_err(&e))?
            .remove(0);
        if tail.is_empty() {
            break;
        }
        out.extend(tail);
    }
    let end = (delay + expected).min(out.len());
    let mut out = out[delay.min(end)..end].to_vec();
    out.resize(expected, 0.0);
    Ok(out)
}

/// Zero-pads on the right or center-crops to exactly `len` samples.
pub fn fit_length(samples: &[f64], len: usize) -> Vec<f64> {
    if samples.len() >= len {
        let start = (samples.len() - len) / 2;
        samples[start..start + len].to_vec()
    } else {
        let mut out = samples.to_vec();
        out.resize(len, 0.0);
        out
    }
}

/// Scales so that the largest magnitude is exactly 1. Silence is returned unchanged.
pub fn peak_normalize(samples: &mut [f64]) {
    let peak = samples.iter().fold(0.0f64, |m, &s| m.max(s.abs()));
    if peak > 0.0 {
        for s in samples.iter_mut() {
            *s /= peak;
        }
    }
}

pub fn load_clip(entry: &ManifestEntry, target_rate: u32, duration: f64) -> Result<AudioClip> {
    if target_rate == 0 || !(duration > 0.0) {
        return Err(Error::InvalidArgument(
            "target_rate and duration must be positive".into(),
        ));
    }
    let (mono, rate) = decode_wav_mono(&entry.path)?;
    let resampled = resample(&mono, rate, target_rate)?;
    let len = (duration * f64::from(target_rate)).round() as usize;
    let mut fitted = fit_length(&resampled, len);
    peak_normalize(&mut fitted);
    Ok(AudioClip {
        clip_id: entry.clip_id.clone(),
        samples: fitted.into_iter().map(|s| s as f32).collect(),
        sample_rate: target_rate,
        label: entry.label,
        split: entry.split,
    })
}

/// Writes mono samples as 16-bit PCM.
pub fn write_wav_pcm16(path: &Path, samples: &[f32], sample_rate: u32) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let to_err = |e: hound::Error| Error::Decode {
        path: path.to_path_buf(),
        msg: e.to_string(),
    };
    let mut w = hound::WavWriter::create(path, spec).map_err(to_err)?;
    for &s in samples {
        let v = (s.clamp(-1.0, 1.0) * 32767.0).round() as i16;
        w.write_sample(v).map_err(to_err)?;
    }
    w.finalize().map_err(to_err)
}
