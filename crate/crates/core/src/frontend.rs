//! Log-mel filterbank features and SpecAugment-style masking.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::{num_complex::Complex, Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::data::{load_clip, AudioClip, ManifestEntry};
use crate::error::{Error, Result};
use crate::util::stable_hash;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FrontendConfig {
    pub win_ms: f64,
    pub hop_ms: f64,
    /// FFT size; `None` picks the next power of two at or above the window length.
    pub n_fft: Option<usize>,
    pub n_mels: usize,
    pub fmin: f64,
    pub fmax: f64,
    /// Power floor applied before the logarithm.
    pub floor: f64,
}

impl Default for FrontendConfig {
    fn default() -> Self {
        Self {
            win_ms: 25.0,
            hop_ms: 10.0,
            n_fft: None,
            n_mels: 64,
            fmin: 60.0,
            fmax: 7800.0,
            floor: 1e-10,
        }
    }
}

impl FrontendConfig {
    pub fn win_length(&self, sample_rate: u32) -> usize {
        (self.win_ms * 1e-3 * f64::from(sample_rate)).round() as usize
    }

    pub fn hop_length(&self, sample_rate: u32) -> usize {
        (self.hop_ms * 1e-3 * f64::from(sample_rate)).round() as usize
    }

    pub fn fft_size(&self, sample_rate: u32) -> usize {
        self.n_fft
            .unwrap_or_else(|| self.win_length(sample_rate).next_power_of_two())
    }

    /// Frames produced for a clip of `num_samples`, if it holds at least one window.
    pub fn frame_count(&self, num_samples: usize, sample_rate: u32) -> Option<usize> {
        let win = self.win_length(sample_rate);
        let hop = self.hop_length(sample_rate);
        (num_samples >= win).then(|| 1 + (num_samples - win) / hop)
    }

    pub fn validate(&self, sample_rate: u32) -> Result<()> {
        let field = |f: &str| format!("frontend.{f}");
        if !(self.win_ms > 0.0) {
            return Err(Error::config(field("win_ms"), "must be positive"));
        }
        if self.hop_length(sample_rate) == 0 {
            return Err(Error::config(field("hop_ms"), "hop must be at least one sample"));
        }
        if self.n_mels == 0 {
            return Err(Error::config(field("n_mels"), "must be positive"));
        }
        if !(self.fmin >= 0.0 && self.fmin < self.fmax) {
            return Err(Error::config(field("fmin"), "need 0 <= fmin < fmax"));
        }
        if self.fmax > f64::from(sample_rate) / 2.0 {
            return Err(Error::config(field("fmax"), "above the Nyquist frequency"));
        }
        if !(self.floor > 0.0) {
            return Err(Error::config(field("floor"), "must be positive"));
        }
        if self.fft_size(sample_rate) < self.win_length(sample_rate) {
            return Err(Error::config(field("n_fft"), "shorter than the window"));
        }
        Ok(())
    }
}

/// Time × frequency matrix of natural-log mel energies, stored row-major by frame.
#[derive(Debug, Clone, PartialEq)]
pub struct MelSpectrogram {
    pub clip_id: String,
    pub frames: usize,
    pub bins: usize,
    pub values: Vec<f32>,
}

impl MelSpectrogram {
    pub fn new(clip_id: impl Into<String>, frames: usize, bins: usize, values: Vec<f32>) -> Self {
        assert_eq!(values.len(), frames * bins, "mel buffer does not match its shape");
        Self {
            clip_id: clip_id.into(),
            frames,
            bins,
            values,
        }
    }

    #[inline]
    pub fn at(&self, frame: usize, bin: usize) -> f32 {
        self.values[frame * self.bins + bin]
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().map(|&v| f64::from(v)).sum::<f64>() / self.values.len() as f64
    }
}

/// Slaney mel scale: linear below 1 kHz, logarithmic above.
pub fn hz_to_mel(hz: f64) -> f64 {
    const F_SP: f64 = 200.0 / 3.0;
    const MIN_LOG_HZ: f64 = 1000.0;
    let min_log_mel = MIN_LOG_HZ / F_SP;
    let logstep = 6.4f64.ln() / 27.0;
    if hz >= MIN_LOG_HZ {
        min_log_mel + (hz / MIN_LOG_HZ).ln() / logstep
    } else {
        hz / F_SP
    }
}

pub fn mel_to_hz(mel: f64) -> f64 {
    const F_SP: f64 = 200.0 / 3.0;
    const MIN_LOG_HZ: f64 = 1000.0;
    let min_log_mel = MIN_LOG_HZ / F_SP;
    let logstep = 6.4f64.ln() / 27.0;
    if mel >= min_log_mel {
        MIN_LOG_HZ * (logstep * (mel - min_log_mel)).exp()
    } else {
        mel * F_SP
    }
}

/// Triangular mel filterbank with Slaney area normalization, stored sparsely.
#[derive(Debug, Clone)]
pub struct MelFilterbank {
    /// `n_mels + 2` band edges in Hz; filter `m` peaks at `edges[m + 1]`.
    pub edges_hz: Vec<f64>,
    filters: Vec<(usize, Vec<f64>)>,
}

impl MelFilterbank {
    pub fn new(n_fft: usize, sample_rate: u32, n_mels: usize, fmin: f64, fmax: f64) -> Self {
        let n_freqs = n_fft / 2 + 1;
        let (mlo, mhi) = (hz_to_mel(fmin), hz_to_mel(fmax));
        let edges_hz: Vec<f64> = (0..n_mels + 2)
            .map(|i| mel_to_hz(mlo + (mhi - mlo) * i as f64 / (n_mels + 1) as f64))
            .collect();
        let bin_hz = f64::from(sample_rate) / n_fft as f64;
        let filters = (0..n_mels)
            .map(|m| {
                let (lo, c, hi) = (edges_hz[m], edges_hz[m + 1], edges_hz[m + 2]);
                let norm = 2.0 / (hi - lo);
                let mut start = None;
                let mut weights = Vec::new();
                for k in 0..n_freqs {
                    let f = k as f64 * bin_hz;
                    let w = ((f - lo) / (c - lo)).min((hi - f) / (hi - c)).max(0.0) * norm;
                    if w > 0.0 {
                        start.get_or_insert(k);
                        weights.push(w);
                    } else if start.is_some() {
                        break;
                    }
                }
                (start.unwrap_or(0), weights)
            })
            .collect();
        Self { edges_hz, filters }
    }

    pub fn n_mels(&self) -> usize {
        self.filters.len()
    }

    pub fn center_hz(&self, m: usize) -> f64 {
        self.edges_hz[m + 1]
    }

    pub fn apply(&self, power: &[f64], out: &mut [f64]) {
        for (o, (start, w)) in out.iter_mut().zip(&self.filters) {
            *o = w.iter().zip(&power[*start..]).map(|(a, b)| a * b).sum();
        }
    }
}

/// Reusable log-mel extractor: owns the FFT plan, window and filterbank.
pub struct LogMel {
    config: FrontendConfig,
    sample_rate: u32,
    win: usize,
    hop: usize,
    n_fft: usize,
    window: Vec<f64>,
    fft: Arc<dyn Fft<f64>>,
    filterbank: MelFilterbank,
}

impl LogMel {
    pub fn new(config: &FrontendConfig, sample_rate: u32) -> Result<Self> {
        config.validate(sample_rate)?;
        let win = config.win_length(sample_rate);
        let n_fft = config.fft_size(sample_rate);
        // Periodic Hann.
        let window = (0..win)
            .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / win as f64).cos())
            .collect();
        Ok(Self {
            config: config.clone(),
            sample_rate,
            win,
            hop: config.hop_length(sample_rate),
            n_fft,
            window,
            fft: FftPlanner::new().plan_fft_forward(n_fft),
            filterbank: MelFilterbank::new(
                n_fft,
                sample_rate,
                config.n_mels,
                config.fmin,
                config.fmax,
            ),
        })
    }

    pub fn filterbank(&self) -> &MelFilterbank {
        &self.filterbank
    }

    pub fn compute(&self, clip: &AudioClip) -> Result<MelSpectrogram> {
        if clip.sample_rate != self.sample_rate {
            return Err(Error::InvalidArgument(format!(
                "clip rate {} != frontend rate {}",
                clip.sample_rate, self.sample_rate
            )));
        }
        let frames = self
            .config
            .frame_count(clip.samples.len(), self.sample_rate)
            .ok_or(Error::ClipTooShort {
                samples: clip.samples.len(),
                window: self.win,
            })?;
        let n_mels = self.filterbank.n_mels();
        let log_floor = self.config.floor.ln();
        let mut buf = vec![Complex::new(0.0, 0.0); self.n_fft];
        let mut scratch = vec![Complex::new(0.0, 0.0); self.fft.get_inplace_scratch_len()];
        let mut power = vec![0.0; self.n_fft / 2 + 1];
        let mut mel = vec![0.0; n_mels];
        let mut values = Vec::with_capacity(frames * n_mels);
        for t in 0..frames {
            let seg = &clip.samples[t * self.hop..t * self.hop + self.win];
            for (b, (&s, &w)) in buf.iter_mut().zip(seg.iter().zip(&self.window)) {
                *b = Complex::new(f64::from(s) * w, 0.0);
            }
            buf[self.win..].fill(Complex::new(0.0, 0.0));
            self.fft.process_with_scratch(&mut buf, &mut scratch);
            for (p, b) in power.iter_mut().zip(&buf) {
                *p = b.norm_sqr();
            }
            self.filterbank.apply(&power, &mut mel);
            values.extend(mel.iter().map(|&e| {
                if e > self.config.floor {
                    e.ln() as f32
                } else {
                    log_floor as f32
                }
            }));
        }
        Ok(MelSpectrogram::new(clip.clip_id.clone(), frames, n_mels, values))
    }
}

pub fn compute_logmel(clip: &AudioClip, config: &FrontendConfig) -> Result<MelSpectrogram> {
    LogMel::new(config, clip.sample_rate)?.compute(clip)
}

/// What masked cells are overwritten with.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaskValue {
    /// Mean of the unmasked input spectrogram.
    Mean,
    Constant(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpecAugmentPolicy {
    pub num_freq_masks: usize,
    pub max_freq_width: usize,
    pub num_time_masks: usize,
    pub max_time_width: usize,
    pub mask_value: MaskValue,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskAxis {
    Frequency,
    Time,
}

/// One drawn band: `width` consecutive bins or frames starting at `start`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MaskBand {
    pub axis: MaskAxis,
    pub start: usize,
    pub width: usize,
}

/// Masks frequency bands first, then time bands. Widths larger than the
/// spectrogram are clamped to its extent.
pub fn spec_augment_with_bands(
    mel: &MelSpectrogram,
    policy: &SpecAugmentPolicy,
) -> (MelSpectrogram, Vec<MaskBand>) {
    let mut rng = ChaCha8Rng::seed_from_u64(policy.seed);
    let fill = match policy.mask_value {
        MaskValue::Mean => mel.mean() as f32,
        MaskValue::Constant(v) => v as f32,
    };
    let mut out = mel.clone();
    let mut bands = Vec::with_capacity(policy.num_freq_masks + policy.num_time_masks);
    let draws = [
        (MaskAxis::Frequency, policy.num_freq_masks, policy.max_freq_width, mel.bins),
        (MaskAxis::Time, policy.num_time_masks, policy.max_time_width, mel.frames),
    ];
    for (axis, count, max_width, extent) in draws {
        let max_width = max_width.min(extent);
        for _ in 0..count {
            let width = rng.random_range(0..=max_width);
            let start = rng.random_range(0..=extent - width);
            bands.push(MaskBand { axis, start, width });
            match axis {
                MaskAxis::Frequency => {
                    for row in out.values.chunks_exact_mut(mel.bins) {
                        row[start..start + width].fill(fill);
                    }
                }
                MaskAxis::Time => {
                    out.values[start * mel.bins..(start + width) * mel.bins].fill(fill);
                }
            }
        }
    }
    (out, bands)
}

pub fn spec_augment(mel: &MelSpectrogram, policy: &SpecAugmentPolicy) -> MelSpectrogram {
    spec_augment_with_bands(mel, policy).0
}

/// Augmentation settings as they appear in run configuration; the time-mask
/// width is a fraction of the spectrogram length so it adapts to clip duration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentConfig {
    pub num_freq_masks: usize,
    pub max_freq_width: usize,
    pub num_time_masks: usize,
    pub max_time_frac: f64,
    pub mask_value: MaskValue,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            num_freq_masks: 2,
            max_freq_width: 8,
            num_time_masks: 2,
            max_time_frac: 0.1,
            mask_value: MaskValue::Mean,
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.max_time_frac) {
            return Err(Error::config("augment.max_time_frac", "must lie in [0, 1]"));
        }
        Ok(())
    }

    pub fn policy_for(&self, mel: &MelSpectrogram, seed: u64) -> SpecAugmentPolicy {
        SpecAugmentPolicy {
            num_freq_masks: self.num_freq_masks,
            max_freq_width: self.max_freq_width.min(mel.bins),
            num_time_masks: self.num_time_masks,
            max_time_width: ((self.max_time_frac * mel.frames as f64).floor() as usize)
                .min(mel.frames),
            mask_value: self.mask_value,
            seed,
        }
    }
}

/// On-disk cache of log-mel matrices: `<key>.npy` plus a `<key>.json` sidecar
/// recording the hash of the configuration that produced it.
#[derive(Debug, Clone)]
pub struct MelCache {
    dir: PathBuf,
    config_hash: String,
}

#[derive(Serialize, Deserialize)]
struct CacheSidecar {
    clip_id: String,
    config_hash: String,
}

impl MelCache {
    /// `fingerprint` should cover everything that influences the features
    /// (frontend settings, target rate, duration).
    pub fn new<T: Serialize>(dir: impl Into<PathBuf>, fingerprint: &T) -> Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        Ok(Self {
            dir,
            config_hash: stable_hash(fingerprint),
        })
    }

    pub fn config_hash(&self) -> &str {
        &self.config_hash
    }

    fn stem(&self, clip_id: &str) -> PathBuf {
        let safe: String = clip_id
            .chars()
            .map(|c| if c.is_ascii_alphanumeric() { c } else { '_' })
            .collect();
        let tag = &stable_hash(&clip_id)[..12];
        self.dir.join(format!("{safe}-{tag}"))
    }

    pub fn get(&self, clip_id: &str) -> Option<MelSpectrogram> {
        let stem = self.stem(clip_id);
        let side: CacheSidecar =
            serde_json::from_slice(&fs::read(stem.with_extension("json")).ok()?).ok()?;
        if side.config_hash != self.config_hash || side.clip_id != clip_id {
            return None;
        }
        let arr: Array2<f32> = ndarray_npy::read_npy(stem.with_extension("npy")).ok()?;
        let (frames, bins) = arr.dim();
        Some(MelSpectrogram::new(clip_id, frames, bins, arr.into_raw_vec_and_offset().0))
    }

    pub fn put(&self, mel: &MelSpectrogram) -> Result<()> {
        let stem = self.stem(&mel.clip_id);
        let arr = Array2::from_shape_vec((mel.frames, mel.bins), mel.values.clone())
            .expect("shape matches buffer");
        let npy = stem.with_extension("npy");
        ndarray_npy::write_npy(&npy, &arr)
            .map_err(|e| Error::io(&npy, std::io::Error::other(e.to_string())))?;
        let side = stem.with_extension("json");
        let body = serde_json::to_vec(&CacheSidecar {
            clip_id: mel.clip_id.clone(),
            config_hash: self.config_hash.clone(),
        })?;
        fs::write(&side, body).map_err(|e| Error::io(&side, e))
    }
}

/// Decodes, frames and log-mels every entry in order, consulting `cache`
/// first when one is given.
pub fn load_mels(
    entries: &[&ManifestEntry],
    target_rate: u32,
    duration: f64,
    config: &FrontendConfig,
    cache: Option<&MelCache>,
) -> Result<Vec<MelSpectrogram>> {
    let extractor = LogMel::new(config, target_rate)?;
    entries
        .iter()
        .map(|entry| {
            if let Some(mel) = cache.and_then(|c| c.get(&entry.clip_id)) {
                return Ok(mel);
            }
            let mel = extractor.compute(&load_clip(entry, target_rate, duration)?)?;
            if let Some(c) = cache {
                c.put(&mel)?;
            }
            Ok(mel)
        })
        .collect()
}

/// Path helper used by tests and the CLI to locate a cache directory.
pub fn cache_dir_from_env(default: Option<&Path>) -> Option<PathBuf> {
    std::env::var_os("DECAR_CACHE_DIR")
        .map(PathBuf::from)
        .or_else(|| default.map(Path::to_path_buf))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Split;
    use std::f64::consts::PI;

    fn clip(samples: Vec<f32>) -> AudioClip {
        AudioClip {
            clip_id: "c".into(),
            samples,
            sample_rate: 16_000,
            label: None,
            split: Split::Train,
        }
    }

    #[test]
    fn ten_second_clip_has_998_frames() {
        let m = compute_logmel(&clip(vec![0.1; 160_000]), &FrontendConfig::default()).unwrap();
        assert_eq!((m.frames, m.bins), (998, 64));
    }

    #[test]
    fn silence_is_log_floor_everywhere() {
        let cfg = FrontendConfig::default();
        let m = compute_logmel(&clip(vec![0.0; 16_000]), &cfg).unwrap();
        let lf = cfg.floor.ln() as f32;
        assert!(m.values.iter().all(|&v| v == lf));
    }

    #[test]
    fn too_short_clip_is_rejected() {
        let r = compute_logmel(&clip(vec![0.0; 399]), &FrontendConfig::default());
        assert!(matches!(r, Err(Error::ClipTooShort { samples: 399, window: 400 })));
    }

    #[test]
    fn entries_never_fall_below_the_floor() {
        let samples = (0..8000).map(|i| ((i * 37 % 101) as f32 / 101.0) - 0.5).collect();
        let cfg = FrontendConfig::default();
        let m = compute_logmel(&clip(samples), &cfg).unwrap();
        let lf = cfg.floor.ln() as f32;
        assert!(m.values.iter().all(|&v| v >= lf));
    }

    #[test]
    fn scaling_shifts_log_energies_by_a_constant() {
        let x: Vec<f32> = (0..16_000)
            .map(|i| {
                let t = i as f32 / 16_000.0;
                (2.0 * std::f32::consts::PI * 440.0 * t).sin() * 0.3
                    + (2.0 * std::f32::consts::PI * 3000.0 * t).sin() * 0.2
            })
            .collect();
        let alpha = 2.5f32;
        let y: Vec<f32> = x.iter().map(|v| v * alpha).collect();
        let cfg = FrontendConfig::default();
        let mx = compute_logmel(&clip(x), &cfg).unwrap();
        let my = compute_logmel(&clip(y), &cfg).unwrap();
        // Only cells well above the numerical noise floor of the FFT.
        let top = mx.values.iter().copied().fold(f32::MIN, f32::max);
        let expected = 2.0 * f64::from(alpha).ln();
        for (a, b) in mx.values.iter().zip(&my.values) {
            if *a > top - 15.0 {
                assert!((f64::from(b - a) - expected).abs() < 1e-4);
            }
        }
    }

    #[test]
    fn slaney_scale_round_trips() {
        for hz in [0.0, 60.0, 500.0, 999.0, 1000.0, 2500.0, 7800.0] {
            assert!((mel_to_hz(hz_to_mel(hz)) - hz).abs() < 1e-9);
        }
        assert!((hz_to_mel(1000.0) - 15.0).abs() < 1e-12);
    }

    fn ramp(frames: usize, bins: usize) -> MelSpectrogram {
        MelSpectrogram::new(
            "r",
            frames,
            bins,
            (0..frames * bins).map(|i| i as f32).collect(),
        )
    }

    #[test]
    fn zero_count_policy_is_identity() {
        let m = ramp(50, 16);
        let p = SpecAugmentPolicy {
            num_freq_masks: 0,
            max_freq_width: 8,
            num_time_masks: 0,
            max_time_width: 10,
            mask_value: MaskValue::Mean,
            seed: 3,
        };
        assert_eq!(spec_augment(&m, &p), m);
    }

    #[test]
    fn full_width_frequency_mask_covers_everything_at_most() {
        let m = ramp(20, 8);
        // Find a seed whose single draw is the full width.
        let hit = (0..1000u64)
            .map(|seed| {
                let p = SpecAugmentPolicy {
                    num_freq_masks: 1,
                    max_freq_width: 8,
                    num_time_masks: 0,
                    max_time_width: 0,
                    mask_value: MaskValue::Constant(-1.0),
                    seed,
                };
                spec_augment_with_bands(&m, &p)
            })
            .find(|(_, b)| b[0].width == 8)
            .expect("some seed draws the full width");
        let changed = hit.0.values.iter().zip(&m.values).filter(|(a, b)| a != b).count();
        assert_eq!(changed, 20 * 8);
    }

    #[test]
    fn mean_fill_uses_input_mean() {
        let m = ramp(10, 4);
        let p = SpecAugmentPolicy {
            num_freq_masks: 0,
            max_freq_width: 0,
            num_time_masks: 1,
            max_time_width: 10,
            mask_value: MaskValue::Mean,
            seed: 11,
        };
        let (out, bands) = spec_augment_with_bands(&m, &p);
        let b = bands[0];
        for t in b.start..b.start + b.width {
            for f in 0..4 {
                assert_eq!(out.at(t, f), m.mean() as f32);
            }
        }
    }

    #[test]
    fn oversized_widths_are_clamped() {
        let m = ramp(5, 4);
        let p = SpecAugmentPolicy {
            num_freq_masks: 3,
            max_freq_width: 100,
            num_time_masks: 3,
            max_time_width: 100,
            mask_value: MaskValue::Constant(0.0),
            seed: 1,
        };
        let (_, bands) = spec_augment_with_bands(&m, &p);
        for b in bands {
            let extent = if b.axis == MaskAxis::Frequency { 4 } else { 5 };
            assert!(b.start + b.width <= extent);
        }
    }

    #[test]
    fn cache_round_trip_and_invalidation() {
        let dir = tempfile::tempdir().unwrap();
        let m = MelSpectrogram::new("a/b.wav", 3, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let cache = MelCache::new(dir.path(), &("cfg", 1)).unwrap();
        assert!(cache.get("a/b.wav").is_none());
        cache.put(&m).unwrap();
        assert_eq!(cache.get("a/b.wav"), Some(m));
        let other = MelCache::new(dir.path(), &("cfg", 2)).unwrap();
        assert!(other.get("a/b.wav").is_none());
    }

    /// Brute-force reference: direct DFT of each Hann-windowed frame and
    /// triangular filters built from the Slaney formulas written out again.
    fn oracle_logmel(x: &[f64], sr: f64, frames: usize) -> Vec<Vec<f64>> {
        let (win, hop, n_fft, n_mels) = (400usize, 160usize, 512usize, 64usize);
        let mel = |f: f64| {
            if f < 1000.0 {
                3.0 * f / 200.0
            } else {
                15.0 + 27.0 * (f / 1000.0).ln() / 6.4f64.ln()
            }
        };
        let hz = |m: f64| {
            if m < 15.0 {
                200.0 * m / 3.0
            } else {
                1000.0 * (6.4f64.ln() * (m - 15.0) / 27.0).exp()
            }
        };
        let (a, b) = (mel(60.0), mel(7800.0));
        let edges: Vec<f64> = (0..n_mels + 2)
            .map(|i| hz(a + (b - a) * i as f64 / (n_mels + 1) as f64))
            .collect();
        (0..frames)
            .map(|t| {
                let power: Vec<f64> = (0..=n_fft / 2)
                    .map(|k| {
                        let (mut re, mut im) = (0.0, 0.0);
                        for n in 0..win {
                            let w = 0.5 - 0.5 * (2.0 * PI * n as f64 / win as f64).cos();
                            let v = x[t * hop + n] * w;
                            let ang = -2.0 * PI * (k * n) as f64 / n_fft as f64;
                            re += v * ang.cos();
                            im += v * ang.sin();
                        }
                        re * re + im * im
                    })
                    .collect();
                (0..n_mels)
                    .map(|m| {
                        let (lo, c, hi) = (edges[m], edges[m + 1], edges[m + 2]);
                        let e: f64 = power
                            .iter()
                            .enumerate()
                            .map(|(k, p)| {
                                let f = k as f64 * sr / n_fft as f64;
                                let tri = if f > lo && f <= c {
                                    (f - lo) / (c - lo)
                                } else if f > c && f < hi {
                                    (hi - f) / (hi - c)
                                } else {
                                    0.0
                                };
                                tri * 2.0 / (hi - lo) * p
                            })
                            .sum();
                        e.max(1e-10).ln()
                    })
                    .collect()
            })
            .collect()
    }

    #[test]
    fn sine_peaks_in_nearest_mel_bin_and_matches_dft_oracle() {
        let sr = 16_000.0;
        let x: Vec<f64> = (0..4000).map(|i| 0.8 * (2.0 * PI * 1000.0 * i as f64 / sr).sin()).collect();
        let c = clip(x.iter().map(|&v| v as f32).collect());
        let lm = LogMel::new(&FrontendConfig::default(), 16_000).unwrap();
        let m = lm.compute(&c).unwrap();
        let oracle = oracle_logmel(&c.samples.iter().map(|&v| f64::from(v)).collect::<Vec<_>>(), sr, m.frames);
        for (t, row) in oracle.iter().enumerate() {
            for (b, &o) in row.iter().enumerate() {
                if o > -10.0 {
                    assert!((f64::from(m.at(t, b)) - o).abs() < 1e-3, "t={t} b={b}");
                }
            }
        }
        let avg = |get: &dyn Fn(usize, usize) -> f64| {
            (0..64)
                .map(|b| (0..m.frames).map(|t| get(t, b)).sum::<f64>())
                .enumerate()
                .fold((0, f64::MIN), |best, (b, v)| if v > best.1 { (b, v) } else { best })
                .0
        };
        let got = avg(&|t, b| f64::from(m.at(t, b)));
        let want = avg(&|t, b| oracle[t][b]);
        let nearest = (0..64)
            .min_by(|&i, &j| {
                let di = (lm.filterbank().center_hz(i) - 1000.0).abs();
                let dj = (lm.filterbank().center_hz(j) - 1000.0).abs();
                di.partial_cmp(&dj).unwrap()
            })
            .unwrap();
        assert_eq!(got, want);
        assert_eq!(got, nearest);
    }

    #[test]
    fn masked_count_matches_painted_bands() {
        let ones = MelSpectrogram::new("ones", 120, 64, vec![1.0; 120 * 64]);
        for seed in 0..50 {
            let policy = SpecAugmentPolicy {
                num_freq_masks: 2,
                max_freq_width: 8,
                num_time_masks: 2,
                max_time_width: 20,
                mask_value: MaskValue::Constant(0.0),
                seed,
            };
            let (out, bands) = spec_augment_with_bands(&ones, &policy);
            let mut painted = vec![vec![false; 64]; 120];
            for band in &bands {
                for t in 0..120 {
                    for f in 0..64 {
                        let idx = if band.axis == MaskAxis::Frequency { f } else { t };
                        if idx >= band.start && idx < band.start + band.width {
                            painted[t][f] = true;
                        }
                    }
                }
            }
            let want = painted.iter().flatten().filter(|&&p| p).count();
            let got = out.values.iter().filter(|&&v| v == 0.0).count();
            assert_eq!(got, want, "seed {seed}");
            let bound = 2 * 8 * 120 + 2 * 20 * 64;
            assert!(got <= bound);
        }
    }
}
