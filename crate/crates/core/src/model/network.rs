//! Encoder `f`, projection `g` and prediction head `p`, plus the downstream classifier.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::{relu_in_place, Conv2d, ConvCache, Linear, Tensor3};
use super::loss::cross_entropy_grad;
use super::scalar::Real;
use crate::error::{Error, Result};
use crate::frontend::MelSpectrogram;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvBlockConfig {
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
}

/// How a log-mel matrix is scaled before the first convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputNorm {
    None,
    /// Per-spectrogram zero mean and unit variance.
    Instance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub conv_blocks: Vec<ConvBlockConfig>,
    /// Width `n` of the max-pooled embedding.
    pub embedding_dim: usize,
    /// Width of the ReLU projection layer.
    pub projection_width: usize,
    pub input_norm: InputNorm,
    /// Standard deviation of the prediction-head weights; fan-in scaled when unset.
    pub head_init_std: Option<f64>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            conv_blocks: [32, 64, 128, 256]
                .into_iter()
                .map(|c| ConvBlockConfig {
                    out_channels: c,
                    kernel: 3,
                    stride: 2,
                })
                .collect(),
            embedding_dim: 1280,
            projection_width: 512,
            input_norm: InputNorm::Instance,
            head_init_std: None,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.conv_blocks.is_empty() {
            return Err(Error::config("model.conv_blocks", "need at least one block"));
        }
        for (i, b) in self.conv_blocks.iter().enumerate() {
            if b.out_channels == 0 || b.kernel == 0 || b.stride == 0 {
                return Err(Error::config(
                    format!("model.conv_blocks[{i}]"),
                    "channels, kernel and stride must be positive",
                ));
            }
            if b.kernel % 2 == 0 {
                return Err(Error::config(
                    format!("model.conv_blocks[{i}].kernel"),
                    "kernel must be odd",
                ));
            }
        }
        if self.embedding_dim == 0 {
            return Err(Error::config("model.embedding_dim", "must be positive"));
        }
        if self.projection_width == 0 {
            return Err(Error::config("model.projection_width", "must be positive"));
        }
        if self.head_init_std.is_some_and(|s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::config("model.head_init_std", "must be positive"));
        }
        Ok(())
    }
}

/// Named view of every trainable tensor, in a fixed order.
pub trait ParamSet<T: Real> {
    fn named_tensors(&self) -> Vec<(String, &[T])>;
    fn tensors_mut(&mut self) -> Vec<&mut [T]>;

    fn num_params(&self) -> usize {
        self.named_tensors().iter().map(|(_, t)| t.len()).sum()
    }

    fn all_finite(&self) -> bool {
        self.named_tensors()
            .iter()
            .all(|(_, t)| t.iter().all(|v| v.is_finite()))
    }

    /// Copies values in from `(name, data)` pairs; every tensor must be present.
    fn load_tensors(&mut self, lookup: &dyn Fn(&str) -> Option<Vec<T>>) -> Result<()> {
        let names: Vec<(String, usize)> = self
            .named_tensors()
            .into_iter()
            .map(|(n, t)| (n, t.len()))
            .collect();
        for ((name, len), dst) in names.into_iter().zip(self.tensors_mut()) {
            let src = lookup(&name)
                .ok_or_else(|| Error::Checkpoint(format!("missing tensor {name}")))?;
            if src.len() != len {
                return Err(Error::Checkpoint(format!(
                    "tensor {name}: expected {len} values, found {}",
                    src.len()
                )));
            }
            dst.copy_from_slice(&src);
        }
        Ok(())
    }
}

/// Convolutional encoder: conv blocks, a 1×1 conv to `embedding_dim`
/// channels, then global max-pooling over time and frequency.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoder<T> {
    pub input_norm: InputNorm,
    pub blocks: Vec<Conv2d<T>>,
    pub embed: Conv2d<T>,
}

/// Forward state kept for backpropagation through the encoder.
pub struct EncoderTrace<T> {
    blocks: Vec<ConvCache<T>>,
    embed: ConvCache<T>,
    argmax: Vec<usize>,
    pub h: Vec<T>,
}

impl<T: Real> Encoder<T> {
    pub fn new(config: &ModelConfig, rng: &mut ChaCha8Rng) -> Self {
        let mut in_ch = 1;
        let mut blocks = Vec::with_capacity(config.conv_blocks.len());
        for b in &config.conv_blocks {
            blocks.push(Conv2d::new(in_ch, b.out_channels, b.kernel, b.stride, rng));
            in_ch = b.out_channels;
        }
        let embed = Conv2d::new(in_ch, config.embedding_dim, 1, 1, rng);
        Self {
            input_norm: config.input_norm,
            blocks,
            embed,
        }
    }

    pub fn embedding_dim(&self) -> usize {
        self.embed.out_channels
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            input_norm: self.input_norm,
            blocks: self.blocks.iter().map(Conv2d::zeros_like).collect(),
            embed: self.embed.zeros_like(),
        }
    }

    fn input(&self, mel: &MelSpectrogram) -> Result<Tensor3<T>> {
        if mel.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("mel {}", mel.clip_id)));
        }
        let (shift, scale) = match self.input_norm {
            InputNorm::None => (0.0, 1.0),
            InputNorm::Instance => {
                let n = mel.values.len() as f64;
                let mean = mel.mean();
                let var = mel
                    .values
                    .iter()
                    .map(|&v| (f64::from(v) - mean).powi(2))
                    .sum::<f64>()
                    / n;
                let std = var.sqrt();
                (mean, if std > 1e-6 { 1.0 / std } else { 1.0 })
            }
        };
        let data = mel
            .values
            .iter()
            .map(|&v| T::lit((f64::from(v) - shift) * scale))
            .collect();
        Ok(Tensor3::new(1, mel.frames, mel.bins, data))
    }

    pub fn forward_trace(&self, mel: &MelSpectrogram) -> Result<EncoderTrace<T>> {
        let mut caches: Vec<ConvCache<T>> = Vec::with_capacity(self.blocks.len());
        let x = self.input(mel)?;
        for block in &self.blocks {
            let c = block.forward(caches.last().map_or(&x, |c| &c.output));
            caches.push(c);
        }
        let embed = self.embed.forward(&caches.last().expect("at least one block").output);
        let plane = embed.output.height * embed.output.width;
        let mut argmax = Vec::with_capacity(self.embed.out_channels);
        let mut h = Vec::with_capacity(self.embed.out_channels);
        for chan in embed.output.data.chunks_exact(plane) {
            let mut best = 0;
            for (i, &v) in chan.iter().enumerate() {
                if v > chan[best] {
                    best = i;
                }
            }
            argmax.push(best);
            h.push(chan[best]);
        }
        Ok(EncoderTrace {
            blocks: caches,
            embed,
            argmax,
            h,
        })
    }

    /// `h = f(mel)`.
    pub fn embed_one(&self, mel: &MelSpectrogram) -> Result<Vec<T>> {
        Ok(self.forward_trace(mel)?.h)
    }

    pub fn backward(&self, trace: &EncoderTrace<T>, dh: &[T], grad: &mut Encoder<T>) {
        let out = &trace.embed.output;
        let plane = out.height * out.width;
        let mut d = vec![T::zero(); out.data.len()];
        for (c, (&idx, &g)) in trace.argmax.iter().zip(dh).enumerate() {
            d[c * plane + idx] = g;
        }
        let mut d_in = self
            .embed
            .backward(&trace.embed, &mut d, &mut grad.embed, true)
            .expect("input gradient requested");
        for (i, block) in self.blocks.iter().enumerate().rev() {
            match block.backward(&trace.blocks[i], &mut d_in.data, &mut grad.blocks[i], i > 0) {
                Some(next) => d_in = next,
                None => break,
            }
        }
    }

    fn push_named<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a [T])>) {
        for (i, b) in self.blocks.iter().enumerate() {
            out.push((format!("{prefix}.block{i}.weight"), &b.weight));
            out.push((format!("{prefix}.block{i}.bias"), &b.bias));
        }
        out.push((format!("{prefix}.embed.weight"), &self.embed.weight));
        out.push((format!("{prefix}.embed.bias"), &self.embed.bias));
    }

    fn push_mut<'a>(&'a mut self, out: &mut Vec<&'a mut [T]>) {
        for b in &mut self.blocks {
            out.push(&mut b.weight);
            out.push(&mut b.bias);
        }
        out.push(&mut self.embed.weight);
        out.push(&mut self.embed.bias);
    }
}

impl<T: Real> ParamSet<T> for Encoder<T> {
    fn named_tensors(&self) -> Vec<(String, &[T])> {
        let mut v = Vec::new();
        self.push_named("encoder", &mut v);
        v
    }

    fn tensors_mut(&mut self) -> Vec<&mut [T]> {
        let mut v = Vec::new();
        self.push_mut(&mut v);
        v
    }
}

/// `f`, `g` and `p` trained together during pretraining.
#[derive(Debug, Clone, PartialEq)]
pub struct PretrainNet<T> {
    pub encoder: Encoder<T>,
    pub projection: Linear<T>,
    pub head: Linear<T>,
    pub head_init_std: Option<f64>,
}

fn init_head<T: Real>(in_dim: usize, out_dim: usize, std: Option<f64>, rng: &mut ChaCha8Rng) -> Linear<T> {
    match std {
        Some(s) => Linear::with_std(in_dim, out_dim, s, rng),
        None => Linear::new(in_dim, out_dim, rng),
    }
}

impl<T: Real> PretrainNet<T> {
    pub fn new(config: &ModelConfig, num_clusters: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let encoder = Encoder::new(config, &mut rng);
        let projection = Linear::new(config.embedding_dim, config.projection_width, &mut rng);
        let head = init_head(config.projection_width, num_clusters, config.head_init_std, &mut rng);
        Self {
            encoder,
            projection,
            head,
            head_init_std: config.head_init_std,
        }
    }

    pub fn num_clusters(&self) -> usize {
        self.head.out_dim
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            encoder: self.encoder.zeros_like(),
            projection: self.projection.zeros_like(),
            head: self.head.zeros_like(),
            head_init_std: self.head_init_std,
        }
    }

    /// Redraws the prediction head from its initializer; `f` and `g` are untouched.
    pub fn reinit_head(&mut self, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.head = init_head(self.head.in_dim, self.head.out_dim, self.head_init_std, &mut rng);
    }

    /// `h` for each mel, row-major `batch × n`.
    pub fn encode(&self, mels: &[&MelSpectrogram]) -> Result<Vec<T>> {
        encode_batch(&self.encoder, mels)
    }

    /// `z = relu(g(h))`, row-major.
    pub fn project(&self, h: &[T], rows: usize) -> Vec<T> {
        let mut z = self.projection.forward_batch(h, rows);
        relu_in_place(&mut z);
        z
    }

    /// Logits `p(z)`; softmax is left to the loss.
    pub fn predict(&self, z: &[T], rows: usize) -> Vec<T> {
        self.head.forward_batch(z, rows)
    }

    /// `z` for one clip: the vector that gets clustered.
    pub fn embed_projected(&self, mel: &MelSpectrogram) -> Result<Vec<T>> {
        let h = self.encoder.embed_one(mel)?;
        Ok(self.project(&h, 1))
    }

    /// Mean cross-entropy of the batch; gradients of that mean are added to `grad`.
    pub fn loss_and_grad(
        &self,
        mels: &[&MelSpectrogram],
        labels: &[u32],
        grad: &mut PretrainNet<T>,
    ) -> Result<f64> {
        if mels.len() != labels.len() || mels.is_empty() {
            return Err(Error::InvalidArgument("batch and label counts differ".into()));
        }
        let batch = mels.len();
        let mut total = 0.0;
        for (mel, &label) in mels.iter().zip(labels) {
            let trace = self.encoder.forward_trace(mel)?;
            let z = self.project(&trace.h, 1);
            let logits = self.predict(&z, 1);
            let (loss, mut dlogits) = cross_entropy_grad(&logits, &[label], self.head.out_dim)?;
            let scale = T::lit(1.0 / batch as f64);
            for v in dlogits.iter_mut() {
                *v *= scale;
            }
            total += loss;
            let mut dz = self
                .head
                .backward_batch(&z, &dlogits, 1, &mut grad.head, true)
                .expect("input gradient requested");
            for (d, &zv) in dz.iter_mut().zip(&z) {
                if zv <= T::zero() {
                    *d = T::zero();
                }
            }
            let dh = self
                .projection
                .backward_batch(&trace.h, &dz, 1, &mut grad.projection, true)
                .expect("input gradient requested");
            self.encoder.backward(&trace, &dh, &mut grad.encoder);
        }
        Ok(total / batch as f64)
    }

    /// Mean loss only, no gradients.
    pub fn loss(&self, mels: &[&MelSpectrogram], labels: &[u32]) -> Result<f64> {
        let h = self.encode(mels)?;
        let z = self.project(&h, mels.len());
        let logits = self.predict(&z, mels.len());
        super::loss::cross_entropy(&logits, labels, self.head.out_dim)
    }
}

impl<T: Real> ParamSet<T> for PretrainNet<T> {
    fn named_tensors(&self) -> Vec<(String, &[T])> {
        let mut v = Vec::new();
        self.encoder.push_named("encoder", &mut v);
        v.push(("projection.weight".into(), &self.projection.weight));
        v.push(("projection.bias".into(), &self.projection.bias));
        v.push(("head.weight".into(), &self.head.weight));
        v.push(("head.bias".into(), &self.head.bias));
        v
    }

    fn tensors_mut(&mut self) -> Vec<&mut [T]> {
        let mut v = Vec::new();
        self.encoder.push_mut(&mut v);
        v.push(&mut self.projection.weight);
        v.push(&mut self.projection.bias);
        v.push(&mut self.head.weight);
        v.push(&mut self.head.bias);
        v
    }
}

pub fn encode_batch<T: Real>(encoder: &Encoder<T>, mels: &[&MelSpectrogram]) -> Result<Vec<T>> {
    let mut out = Vec::with_capacity(mels.len() * encoder.embedding_dim());
    for mel in mels {
        out.extend(encoder.embed_one(mel)?);
    }
    Ok(out)
}

/// Encoder plus a fresh affine classifier on `h`, used for downstream tasks.
/// `h` passes through a fixed per-channel affine map (`(h - shift) * scale`,
/// identity by default) before the classifier; it is not trained.
#[derive(Debug, Clone, PartialEq)]
pub struct Classifier<T> {
    pub encoder: Encoder<T>,
    pub head: Linear<T>,
    pub input_shift: Vec<T>,
    pub input_scale: Vec<T>,
}

impl<T: Real> Classifier<T> {
    pub fn new(encoder: Encoder<T>, num_classes: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dim = encoder.embedding_dim();
        let head = Linear::new(dim, num_classes, &mut rng);
        Self {
            encoder,
            head,
            input_shift: vec![T::zero(); dim],
            input_scale: vec![T::one(); dim],
        }
    }

    pub fn with_input_affine(mut self, shift: Vec<T>, scale: Vec<T>) -> Self {
        assert_eq!(shift.len(), self.encoder.embedding_dim());
        assert_eq!(scale.len(), self.encoder.embedding_dim());
        self.input_shift = shift;
        self.input_scale = scale;
        self
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            encoder: self.encoder.zeros_like(),
            head: self.head.zeros_like(),
            input_shift: self.input_shift.clone(),
            input_scale: self.input_scale.clone(),
        }
    }

    fn head_input(&self, h: &[T]) -> Vec<T> {
        h.iter()
            .zip(self.input_shift.iter().zip(&self.input_scale))
            .map(|(&v, (&m, &s))| (v - m) * s)
            .collect()
    }

    pub fn logits(&self, mel: &MelSpectrogram) -> Result<Vec<T>> {
        let h = self.encoder.embed_one(mel)?;
        Ok(self.head.forward(&self.head_input(&h)))
    }

    /// Mean cross-entropy of the batch with gradients for encoder and head.
    /// Returns the loss and the number of correct argmax predictions.
    pub fn loss_and_grad(
        &self,
        mels: &[&MelSpectrogram],
        labels: &[u32],
        grad: &mut Classifier<T>,
    ) -> Result<(f64, usize)> {
        if mels.len() != labels.len() || mels.is_empty() {
            return Err(Error::InvalidArgument("batch and label counts differ".into()));
        }
        let batch = mels.len();
        let scale = T::lit(1.0 / batch as f64);
        let mut total = 0.0;
        let mut correct = 0;
        for (mel, &label) in mels.iter().zip(labels) {
            let trace = self.encoder.forward_trace(mel)?;
            let x = self.head_input(&trace.h);
            let logits = self.head.forward(&x);
            if argmax(&logits) == label as usize {
                correct += 1;
            }
            let (loss, mut dlogits) = cross_entropy_grad(&logits, &[label], self.head.out_dim)?;
            for v in dlogits.iter_mut() {
                *v *= scale;
            }
            total += loss;
            let mut dh = self
                .head
                .backward_batch(&x, &dlogits, 1, &mut grad.head, true)
                .expect("input gradient requested");
            for (d, &s) in dh.iter_mut().zip(&self.input_scale) {
                *d *= s;
            }
            self.encoder.backward(&trace, &dh, &mut grad.encoder);
        }
        Ok((total / batch as f64, correct))
    }
}

impl<T: Real> ParamSet<T> for Classifier<T> {
    fn named_tensors(&self) -> Vec<(String, &[T])> {
        let mut v = Vec::new();
        self.encoder.push_named("encoder", &mut v);
        v.push(("classifier.weight".into(), &self.head.weight));
        v.push(("classifier.bias".into(), &self.head.bias));
        v
    }

    fn tensors_mut(&mut self) -> Vec<&mut [T]> {
        let mut v = Vec::new();
        self.encoder.push_mut(&mut v);
        v.push(&mut self.head.weight);
        v.push(&mut self.head.bias);
        v
    }
}

impl<T: Real> ParamSet<T> for Linear<T> {
    fn named_tensors(&self) -> Vec<(String, &[T])> {
        vec![
            ("weight".into(), &self.weight),
            ("bias".into(), &self.bias),
        ]
    }

    fn tensors_mut(&mut self) -> Vec<&mut [T]> {
        vec![&mut self.weight, &mut self.bias]
    }
}

/// First index of the largest value.
pub fn argmax<T: Real>(v: &[T]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use statrs::distribution::{ChiSquared, ContinuousCDF};

    fn tiny_config() -> ModelConfig {
        ModelConfig {
            conv_blocks: vec![ConvBlockConfig {
                out_channels: 3,
                kernel: 3,
                stride: 2,
            }],
            embedding_dim: 8,
            projection_width: 8,
            input_norm: InputNorm::Instance,
            head_init_std: None,
        }
    }

    fn random_mel(frames: usize, bins: usize, seed: u64) -> MelSpectrogram {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let values = (0..frames * bins).map(|_| rng.random_range(-3.0f32..3.0)).collect();
        MelSpectrogram::new(format!("m{seed}"), frames, bins, values)
    }

    /// Moves a fresh network off the zero-bias point, where a dead ReLU
    /// channel can sit exactly on its kink.
    fn jitter_biases<P: ParamSet<f64>>(p: &mut P, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let names: Vec<bool> = p.named_tensors().iter().map(|(n, _)| n.ends_with("bias")).collect();
        for (t, is_bias) in p.tensors_mut().into_iter().zip(names) {
            if is_bias {
                t.iter_mut().for_each(|v| *v = rng.random_range(-0.1..0.1));
            }
        }
    }

    fn group_of(name: &str) -> &str {
        name.rsplit_once('.').map_or(name, |(g, _)| g)
    }

    #[test]
    fn gradients_match_central_differences() {
        let mut net = PretrainNet::<f64>::new(&tiny_config(), 4, 3);
        jitter_biases(&mut net, 8);
        let mels = [random_mel(11, 9, 1), random_mel(11, 9, 2)];
        let refs: Vec<&MelSpectrogram> = mels.iter().collect();
        let labels = [1, 3];
        let mut grad = net.zeros_like();
        net.loss_and_grad(&refs, &labels, &mut grad).unwrap();
        let analytic: Vec<(String, Vec<f64>)> = grad
            .named_tensors()
            .into_iter()
            .map(|(n, t)| (n, t.to_vec()))
            .collect();
        let step = 1e-3;
        for (ti, (name, a)) in analytic.iter().enumerate() {
            let mut numeric = vec![0.0; a.len()];
            for (j, slot) in numeric.iter_mut().enumerate() {
                let mut plus = net.clone();
                plus.tensors_mut()[ti][j] += step;
                let mut minus = net.clone();
                minus.tensors_mut()[ti][j] -= step;
                *slot = (plus.loss(&refs, &labels).unwrap() - minus.loss(&refs, &labels).unwrap())
                    / (2.0 * step);
            }
            let diff: f64 = a.iter().zip(&numeric).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
            let scale = a.iter().map(|x| x * x).sum::<f64>().sqrt()
                .max(numeric.iter().map(|x| x * x).sum::<f64>().sqrt());
            if scale > 1e-10 {
                assert!(diff / scale <= 1e-4, "{name} ({}): rel err {}", group_of(name), diff / scale);
            }
        }
    }

    #[test]
    fn identical_inputs_give_identical_embeddings() {
        let net = PretrainNet::<f32>::new(&tiny_config(), 4, 0);
        let m = random_mel(20, 16, 5);
        let h = net.encode(&[&m, &m]).unwrap();
        assert_eq!(h[..8], h[8..]);
        assert_eq!(net.encode(&[&m]).unwrap(), net.encode(&[&m]).unwrap());
    }

    #[test]
    fn constant_mel_is_finite() {
        let net = PretrainNet::<f32>::new(&tiny_config(), 4, 0);
        let m = MelSpectrogram::new("c", 20, 16, vec![-23.0; 320]);
        assert!(net.encode(&[&m]).unwrap().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn non_finite_input_is_rejected() {
        let net = PretrainNet::<f32>::new(&tiny_config(), 4, 0);
        let mut m = random_mel(20, 16, 5);
        m.values[7] = f32::NAN;
        assert!(matches!(net.encode(&[&m]), Err(Error::NonFinite(_))));
    }

    #[test]
    fn max_pool_is_monotone_in_the_input() {
        let mut cfg = tiny_config();
        cfg.input_norm = InputNorm::None;
        let mut enc = PretrainNet::<f64>::new(&cfg, 4, 9).encoder;
        for t in enc.tensors_mut() {
            for v in t.iter_mut() {
                *v = v.abs();
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for trial in 0..20 {
            let m = random_mel(16, 12, trial);
            let mut lowered = m.clone();
            let frame = rng.random_range(0..16);
            for b in 0..12 {
                lowered.values[frame * 12 + b] -= rng.random_range(0.01f32..2.0);
            }
            let h0 = enc.embed_one(&m).unwrap();
            let h1 = enc.embed_one(&lowered).unwrap();
            assert!(h1.iter().zip(&h0).all(|(a, b)| a <= b));
        }
    }

    fn naive_affine(w: &[f64], b: &[f64], x: &[f64], out: usize) -> Vec<f64> {
        (0..out)
            .map(|o| b[o] + (0..x.len()).map(|i| w[o * x.len() + i] * x[i]).sum::<f64>())
            .collect()
    }

    #[test]
    fn project_and_predict_match_matmul() {
        let net = PretrainNet::<f64>::new(&tiny_config(), 4, 11);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut net = net;
        for v in net.projection.bias.iter_mut().chain(net.head.bias.iter_mut()) {
            *v = rng.random_range(-0.5..0.5);
        }
        let h: Vec<f64> = (0..8).map(|_| rng.random_range(-2.0..2.0)).collect();
        let z = net.project(&h, 1);
        let expect: Vec<f64> = naive_affine(&net.projection.weight, &net.projection.bias, &h, 8)
            .into_iter()
            .map(|v| v.max(0.0))
            .collect();
        assert!(z.iter().zip(&expect).all(|(a, b)| (a - b).abs() < 1e-6));
        let y = net.predict(&z, 1);
        let expect = naive_affine(&net.head.weight, &net.head.bias, &z, 4);
        assert!(y.iter().zip(&expect).all(|(a, b)| (a - b).abs() < 1e-6));
    }

    #[test]
    fn projection_clamps_and_zero_weights() {
        let mut net = PretrainNet::<f64>::new(&tiny_config(), 4, 0);
        net.projection.bias.iter_mut().for_each(|b| *b = -1e6);
        assert!(net.project(&[1.0; 8], 1).iter().all(|&v| v == 0.0));
        net.projection.weight.iter_mut().for_each(|w| *w = 0.0);
        net.projection.bias.iter_mut().for_each(|b| *b = 0.0);
        assert!(net.project(&[3.0; 8], 1).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identity_head_passes_z_through() {
        let mut cfg = tiny_config();
        cfg.projection_width = 4;
        let mut net = PretrainNet::<f64>::new(&cfg, 4, 0);
        net.head.weight.iter_mut().for_each(|w| *w = 0.0);
        for i in 0..4 {
            net.head.weight[i * 4 + i] = 1.0;
        }
        let z = [0.5, 0.0, 2.0, 1.0];
        assert_eq!(net.predict(&z, 1), z);
    }

    #[test]
    fn head_reinit_is_seeded_and_isolated() {
        let mut a = PretrainNet::<f32>::new(&tiny_config(), 4, 0);
        let enc = a.encoder.clone();
        let proj = a.projection.clone();
        a.reinit_head(42);
        let head = a.head.clone();
        a.reinit_head(42);
        assert_eq!(a.head, head);
        assert_eq!(a.encoder, enc);
        assert_eq!(a.projection, proj);
        a.reinit_head(43);
        assert_ne!(a.head, head);
    }

    #[test]
    fn reinit_head_argmax_is_unbiased() {
        let mut net = PretrainNet::<f64>::new(&tiny_config(), 4, 0);
        let z = [0.3, 1.2, 0.0, 0.7, 2.0, 0.1, 0.9, 0.4];
        let mut counts = [0usize; 4];
        let trials = 10_000;
        for seed in 0..trials {
            net.reinit_head(seed);
            counts[argmax(&net.predict(&z, 1))] += 1;
        }
        let expected = trials as f64 / 4.0;
        let stat: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
        let p = 1.0 - ChiSquared::new(3.0).unwrap().cdf(stat);
        assert!(p > 0.01, "counts {counts:?}, p = {p}");
    }

    #[test]
    fn classifier_gradients_match_central_differences() {
        let enc = PretrainNet::<f64>::new(&tiny_config(), 4, 6).encoder;
        let dim = enc.embedding_dim();
        let shift = (0..dim).map(|i| 0.1 * i as f64).collect();
        let scale = (0..dim).map(|i| 0.5 + 0.25 * i as f64).collect();
        let mut clf = Classifier::new(enc, 3, 1).with_input_affine(shift, scale);
        jitter_biases(&mut clf, 8);
        let mels = [random_mel(9, 10, 3), random_mel(9, 10, 4)];
        let refs: Vec<&MelSpectrogram> = mels.iter().collect();
        let labels = [2, 0];
        let mut grad = clf.zeros_like();
        clf.loss_and_grad(&refs, &labels, &mut grad).unwrap();
        let loss = |c: &Classifier<f64>| {
            let logits: Vec<f64> = refs.iter().flat_map(|m| c.logits(m).unwrap()).collect();
            crate::model::cross_entropy(&logits, &labels, 3).unwrap()
        };
        let grads: Vec<Vec<f64>> = grad.named_tensors().into_iter().map(|(_, t)| t.to_vec()).collect();
        for (ti, a) in grads.iter().enumerate() {
            for (j, &g) in a.iter().enumerate() {
                let mut p = clf.clone();
                p.tensors_mut()[ti][j] += 1e-4;
                let mut m = clf.clone();
                m.tensors_mut()[ti][j] -= 1e-4;
                let num = (loss(&p) - loss(&m)) / 2e-4;
                assert!((num - g).abs() <= 1e-6 + 1e-4 * g.abs().max(num.abs()));
            }
        }
    }
}
