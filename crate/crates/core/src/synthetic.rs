//! Synthetic labelled audio: ten classes of band-limited tone and noise
//! mixtures over a shared noise floor. Class identity lives in spectral and
//! temporal texture; centre frequencies and levels are randomized per clip
//! with overlapping ranges, so no single mel band gives the class away.

use std::cell::RefCell;
use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::{num_complex::Complex, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::data::{peak_normalize, write_manifest, write_wav_pcm16, AudioClip, ManifestEntry, Split};
use crate::error::{Error, Result};
use crate::util::mix_seed;

pub const CLASS_NAMES: [&str; 10] = [
    "steady_tone",
    "harmonic_stack",
    "narrow_noise",
    "broad_noise",
    "rising_chirps",
    "falling_chirps",
    "tremolo_tone",
    "tone_pips",
    "vibrato_tone",
    "noise_bursts",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSpec {
    pub num_clips: usize,
    pub num_classes: usize,
    pub duration: f64,
    pub sample_rate: u32,
    /// One clip in every `test_every` of each class goes to the test split.
    pub test_every: usize,
    /// Noise floor amplitude relative to the foreground, drawn per clip.
    pub noise_range: (f64, f64),
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            num_clips: 2000,
            num_classes: 10,
            duration: 10.0,
            sample_rate: 16_000,
            test_every: 5,
            noise_range: (0.05, 0.3),
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes == 0 || self.num_classes > CLASS_NAMES.len() {
            return Err(Error::InvalidArgument(format!(
                "num_classes must be in 1..={}",
                CLASS_NAMES.len()
            )));
        }
        if self.num_clips == 0 || self.test_every < 2 || !(self.duration > 0.0) {
            return Err(Error::InvalidArgument(
                "need clips, a positive duration and test_every >= 2".into(),
            ));
        }
        Ok(())
    }

    pub fn split_of(&self, index: usize) -> Split {
        if (index / self.num_classes) % self.test_every == self.test_every - 1 {
            Split::Test
        } else {
            Split::Train
        }
    }

    pub fn label_of(&self, index: usize) -> u32 {
        (index % self.num_classes) as u32
    }
}

fn log_uniform(rng: &mut impl Rng, lo: f64, hi: f64) -> f64 {
    (rng.random_range(lo.ln()..hi.ln())).exp()
}

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

/// Noise with a flat spectrum between `lo` and `hi` Hz, unit RMS.
fn band_noise(rng: &mut impl Rng, len: usize, sr: f64, lo: f64, hi: f64) -> Vec<f64> {
    let mut spec = vec![Complex::new(0.0, 0.0); len];
    for (k, s) in spec.iter_mut().enumerate().take(len / 2 + 1).skip(1) {
        let f = k as f64 * sr / len as f64;
        if f >= lo && f <= hi {
            let phase = rng.random_range(0.0..2.0 * PI);
            *s = Complex::from_polar(1.0, phase);
        }
    }
    for k in 1..len.div_ceil(2) {
        spec[len - k] = spec[k].conj();
    }
    PLANNER.with(|p| p.borrow_mut().plan_fft_inverse(len)).process(&mut spec);
    let out: Vec<f64> = spec.iter().map(|c| c.re).collect();
    let rms = (out.iter().map(|v| v * v).sum::<f64>() / len as f64).sqrt();
    out.into_iter().map(|v| if rms > 0.0 { v / rms } else { 0.0 }).collect()
}

/// Phase-continuous oscillator following an instantaneous frequency track.
fn oscillator(freq: impl Fn(usize) -> f64, len: usize, sr: f64, phase0: f64) -> Vec<f64> {
    let mut phase = phase0;
    (0..len)
        .map(|i| {
            let v = phase.sin();
            phase += 2.0 * PI * freq(i) / sr;
            v
        })
        .collect()
}

/// Raised-cosine gate that is 1 inside `[start, start + width)` seconds.
fn gate(t: f64, start: f64, width: f64) -> f64 {
    let ramp = 0.005;
    if t < start || t >= start + width {
        return 0.0;
    }
    let edge = (t - start).min(start + width - t);
    if edge >= ramp {
        1.0
    } else {
        0.5 - 0.5 * (PI * edge / ramp).cos()
    }
}

/// Foreground waveform of one class, before the noise floor is added.
fn foreground(class: u32, rng: &mut ChaCha8Rng, len: usize, sr: f64) -> Vec<f64> {
    let t = |i: usize| i as f64 / sr;
    let phase = rng.random_range(0.0..2.0 * PI);
    match class {
        0 => {
            let f = log_uniform(rng, 300.0, 3000.0);
            oscillator(|_| f, len, sr, phase)
        }
        1 => {
            let f0 = log_uniform(rng, 150.0, 500.0);
            let mut out = vec![0.0; len];
            for h in 1..=6 {
                let p = rng.random_range(0.0..2.0 * PI);
                let tone = oscillator(|_| f0 * h as f64, len, sr, p);
                for (o, v) in out.iter_mut().zip(tone) {
                    *o += v / h as f64;
                }
            }
            out
        }
        2 => {
            let c = log_uniform(rng, 400.0, 3000.0);
            band_noise(rng, len, sr, c * 0.93, c * 1.07)
        }
        3 => {
            let lo = log_uniform(rng, 200.0, 800.0);
            band_noise(rng, len, sr, lo, lo * 6.0)
        }
        4 | 5 => {
            let f = log_uniform(rng, 300.0, 1500.0);
            let period = rng.random_range(0.4..0.8);
            let offset = rng.random_range(0.0..period);
            let rising = class == 4;
            oscillator(
                |i| {
                    let frac = ((t(i) + offset) % period) / period;
                    let x = if rising { frac } else { 1.0 - frac };
                    f * 2f64.powf(1.5 * x)
                },
                len,
                sr,
                phase,
            )
        }
        6 => {
            let f = log_uniform(rng, 300.0, 3000.0);
            let rate = rng.random_range(3.0..7.0);
            let tone = oscillator(|_| f, len, sr, phase);
            tone.into_iter()
                .enumerate()
                .map(|(i, v)| v * (0.5 + 0.5 * (2.0 * PI * rate * t(i)).sin()).powi(2))
                .collect()
        }
        7 => {
            let f = log_uniform(rng, 300.0, 3000.0);
            let period = rng.random_range(0.15..0.3);
            let offset = rng.random_range(0.0..period);
            let tone = oscillator(|_| f, len, sr, phase);
            tone.into_iter()
                .enumerate()
                .map(|(i, v)| v * gate((t(i) + offset) % period, 0.0, 0.05))
                .collect()
        }
        8 => {
            let f = log_uniform(rng, 300.0, 2500.0);
            let rate = rng.random_range(4.0..8.0);
            let depth = rng.random_range(0.08..0.15);
            oscillator(|i| f * (1.0 + depth * (2.0 * PI * rate * t(i)).sin()), len, sr, phase)
        }
        _ => {
            let lo = log_uniform(rng, 200.0, 800.0);
            let noise = band_noise(rng, len, sr, lo, lo * 6.0);
            let dur = len as f64 / sr;
            let mut bursts = Vec::new();
            let mut at = rng.random_range(0.0..0.4);
            while at < dur {
                bursts.push(at);
                at += rng.random_range(0.2..0.6);
            }
            noise
                .into_iter()
                .enumerate()
                .map(|(i, v)| {
                    let x = t(i);
                    v * bursts.iter().map(|&b| gate(x, b, 0.04)).fold(0.0, f64::max)
                })
                .collect()
        }
    }
}

/// Peak-normalized clip `index` of the dataset; deterministic in
/// `(spec.seed, index)` alone.
pub fn generate_clip(spec: &SyntheticSpec, index: usize) -> AudioClip {
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(spec.seed, &[index as u64]));
    let sr = f64::from(spec.sample_rate);
    let len = (spec.duration * sr).round() as usize;
    let label = spec.label_of(index);
    let fg = foreground(label, &mut rng, len, sr);
    let fg_rms = (fg.iter().map(|v| v * v).sum::<f64>() / len as f64).sqrt().max(1e-12);
    let level = rng.random_range(spec.noise_range.0..=spec.noise_range.1);
    let floor = band_noise(&mut rng, len, sr, 50.0, sr / 2.0);
    let mut samples: Vec<f64> = fg
        .iter()
        .zip(&floor)
        .map(|(f, n)| f / fg_rms + level * n)
        .collect();
    peak_normalize(&mut samples);
    let gain = rng.random_range(0.3..1.0);
    AudioClip {
        clip_id: format!("{}_{index:05}", CLASS_NAMES[label as usize]),
        samples: samples.into_iter().map(|s| (s * gain) as f32).collect(),
        sample_rate: spec.sample_rate,
        label: Some(label),
        split: spec.split_of(index),
    }
}

pub fn generate(spec: &SyntheticSpec) -> Result<Vec<AudioClip>> {
    spec.validate()?;
    Ok((0..spec.num_clips).map(|i| generate_clip(spec, i)).collect())
}

/// Writes every clip as 16-bit WAV under `dir/audio` plus `dir/manifest.jsonl`.
pub fn write_dataset(spec: &SyntheticSpec, dir: &Path) -> Result<PathBuf> {
    spec.validate()?;
    let audio = dir.join("audio");
    std::fs::create_dir_all(&audio).map_err(|e| Error::io(&audio, e))?;
    let mut entries = Vec::with_capacity(spec.num_clips);
    for i in 0..spec.num_clips {
        let clip = generate_clip(spec, i);
        let rel = format!("audio/{}.wav", clip.clip_id);
        write_wav_pcm16(&dir.join(&rel), &clip.samples, clip.sample_rate)?;
        entries.push(ManifestEntry {
            path: dir.join(&rel),
            clip_id: rel,
            label: clip.label,
            split: clip.split,
        });
    }
    let manifest = dir.join("manifest.jsonl");
    write_manifest(&manifest, &entries)?;
    Ok(manifest)
}
