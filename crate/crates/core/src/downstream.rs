//! Transfer evaluation: a linear probe on frozen `h` embeddings and
//! end-to-end fine-tuning, both trained with Adam, plus the grid that sets
//! random-init against pretrained encoders in both regimes.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frontend::MelSpectrogram;
use crate::model::{argmax, cross_entropy_grad, encode_batch, Adam, Classifier, Encoder, Linear};
use crate::util::mix_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalMode {
    Frozen,
    Finetune,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalInit {
    Pretrained,
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub mode: EvalMode,
    pub init: EvalInit,
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Derived from the run seed when unset.
    pub seed: Option<u64>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            mode: EvalMode::Frozen,
            init: EvalInit::Pretrained,
            lr: 1e-3,
            batch_size: 64,
            max_epochs: 50,
            seed: None,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) {
            return Err(Error::config("eval.lr", "must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("eval.batch_size", "must be positive"));
        }
        if self.max_epochs == 0 {
            return Err(Error::config("eval.max_epochs", "must be positive"));
        }
        Ok(())
    }
}

/// Labelled mels for one split.
#[derive(Debug, Clone, Default)]
pub struct LabeledSet<'a> {
    pub mels: Vec<&'a MelSpectrogram>,
    pub labels: Vec<u32>,
}

impl<'a> LabeledSet<'a> {
    pub fn new(mels: Vec<&'a MelSpectrogram>, labels: Vec<u32>) -> Result<Self> {
        if mels.len() != labels.len() {
            return Err(Error::InvalidArgument("mel and label counts differ".into()));
        }
        if mels.is_empty() {
            return Err(Error::InvalidArgument("empty split".into()));
        }
        Ok(Self { mels, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub epoch: usize,
    pub loss: f64,
    pub train_acc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub task_name: String,
    pub mode: EvalMode,
    pub init: EvalInit,
    /// Percent correct on the test split after the final epoch.
    pub test_accuracy: f64,
    pub train_curve: Vec<CurvePoint>,
    pub num_classes: usize,
    pub num_samples: usize,
    pub selection: String,
    #[serde(default)]
    pub warnings: Vec<String>,
}

fn class_warnings(train: &LabeledSet, test: &LabeledSet) -> Vec<String> {
    let seen: BTreeSet<u32> = train.labels.iter().copied().collect();
    let missing: BTreeSet<u32> = test.labels.iter().copied().filter(|l| !seen.contains(l)).collect();
    missing
        .into_iter()
        .map(|l| format!("class {l} appears in test but not in train"))
        .collect()
}

fn check_classes(set: &LabeledSet, num_classes: usize) -> Result<()> {
    match set.labels.iter().find(|&&l| l as usize >= num_classes) {
        Some(l) => Err(Error::InvalidArgument(format!(
            "label {l} out of range for {num_classes} classes"
        ))),
        None => Ok(()),
    }
}

fn shuffled_batches(n: usize, batch: usize, seed: u64, epoch: usize) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(mix_seed(seed, &[epoch as u64])));
    order.chunks(batch).map(<[usize]>::to_vec).collect()
}

fn percent(correct: usize, total: usize) -> f64 {
    100.0 * correct as f64 / total as f64
}

/// Per-dimension z-scoring fitted on the training embeddings.
struct Standardizer {
    mean: Vec<f32>,
    inv_std: Vec<f32>,
}

impl Standardizer {
    fn fit(h: &[f32], dim: usize) -> Self {
        let rows = h.len() / dim;
        let mut mean = vec![0.0f64; dim];
        let mut sq = vec![0.0f64; dim];
        for row in h.chunks_exact(dim) {
            for (j, &v) in row.iter().enumerate() {
                mean[j] += f64::from(v);
            }
        }
        mean.iter_mut().for_each(|m| *m /= rows as f64);
        for row in h.chunks_exact(dim) {
            for (j, &v) in row.iter().enumerate() {
                sq[j] += (f64::from(v) - mean[j]).powi(2);
            }
        }
        let inv_std = sq
            .iter()
            .map(|&s| {
                let sd = (s / rows as f64).sqrt();
                if sd > 1e-6 { (1.0 / sd) as f32 } else { 1.0 }
            })
            .collect();
        Self {
            mean: mean.into_iter().map(|m| m as f32).collect(),
            inv_std,
        }
    }

    fn apply(&self, h: &mut [f32]) {
        let dim = self.mean.len();
        for row in h.chunks_exact_mut(dim) {
            for ((v, m), s) in row.iter_mut().zip(&self.mean).zip(&self.inv_std) {
                *v = (*v - m) * s;
            }
        }
    }
}

/// Trains an affine classifier on frozen encoder outputs. Embeddings are
/// standardized with training-split statistics before the classifier.
pub fn linear_probe(
    encoder: &Encoder<f32>,
    train: &LabeledSet,
    test: &LabeledSet,
    num_classes: usize,
    config: &EvalConfig,
    task_name: &str,
) -> Result<EvalReport> {
    config.validate()?;
    check_classes(train, num_classes)?;
    check_classes(test, num_classes)?;
    let seed = config.seed.unwrap_or(0);
    let dim = encoder.embedding_dim();
    let mut h_train = encode_batch(encoder, &train.mels)?;
    let mut h_test = encode_batch(encoder, &test.mels)?;
    let scaler = Standardizer::fit(&h_train, dim);
    scaler.apply(&mut h_train);
    scaler.apply(&mut h_test);

    let mut head = Linear::<f32>::new(dim, num_classes, &mut ChaCha8Rng::seed_from_u64(seed));
    let mut adam = Adam::new(&head, config.lr);
    let mut curve = Vec::with_capacity(config.max_epochs);
    for epoch in 1..=config.max_epochs {
        let (mut loss_sum, mut correct) = (0.0, 0);
        for batch in shuffled_batches(train.len(), config.batch_size, seed, epoch) {
            let x: Vec<f32> = batch
                .iter()
                .flat_map(|&i| h_train[i * dim..(i + 1) * dim].iter().copied())
                .collect();
            let labels: Vec<u32> = batch.iter().map(|&i| train.labels[i]).collect();
            let logits = head.forward_batch(&x, batch.len());
            correct += logits
                .chunks_exact(num_classes)
                .zip(&labels)
                .filter(|(row, &l)| argmax(row) == l as usize)
                .count();
            let (loss, dlogits) = cross_entropy_grad(&logits, &labels, num_classes)?;
            loss_sum += loss * batch.len() as f64;
            let mut grad = head.zeros_like();
            head.backward_batch(&x, &dlogits, batch.len(), &mut grad, false);
            adam.step(&mut head, &grad);
        }
        if !loss_sum.is_finite() {
            return Err(Error::NonFinite(format!("probe loss at epoch {epoch}")));
        }
        curve.push(CurvePoint {
            epoch,
            loss: loss_sum / train.len() as f64,
            train_acc: percent(correct, train.len()),
        });
    }
    let logits = head.forward_batch(&h_test, test.len());
    let correct = logits
        .chunks_exact(num_classes)
        .zip(&test.labels)
        .filter(|(row, &l)| argmax(row) == l as usize)
        .count();
    Ok(EvalReport {
        task_name: task_name.into(),
        mode: EvalMode::Frozen,
        init: config.init,
        test_accuracy: percent(correct, test.len()),
        train_curve: curve,
        num_classes,
        num_samples: train.len() + test.len(),
        selection: "final_epoch".into(),
        warnings: class_warnings(train, test),
    })
}

/// Trains the encoder and a fresh classifier on `h` jointly. As in the probe,
/// `h` is standardized, with statistics of the starting encoder held fixed.
pub fn finetune(
    encoder: Encoder<f32>,
    train: &LabeledSet,
    test: &LabeledSet,
    num_classes: usize,
    config: &EvalConfig,
    task_name: &str,
) -> Result<(EvalReport, Classifier<f32>)> {
    config.validate()?;
    check_classes(train, num_classes)?;
    check_classes(test, num_classes)?;
    let seed = config.seed.unwrap_or(0);
    let dim = encoder.embedding_dim();
    let scaler = Standardizer::fit(&encode_batch(&encoder, &train.mels)?, dim);
    let mut model =
        Classifier::new(encoder, num_classes, seed).with_input_affine(scaler.mean, scaler.inv_std);
    let mut adam = Adam::new(&model, config.lr);
    let mut curve = Vec::with_capacity(config.max_epochs);
    for epoch in 1..=config.max_epochs {
        let (mut loss_sum, mut correct) = (0.0, 0);
        for batch in shuffled_batches(train.len(), config.batch_size, seed, epoch) {
            let mels: Vec<&MelSpectrogram> = batch.iter().map(|&i| train.mels[i]).collect();
            let labels: Vec<u32> = batch.iter().map(|&i| train.labels[i]).collect();
            let mut grad = model.zeros_like();
            let (loss, hits) = model.loss_and_grad(&mels, &labels, &mut grad)?;
            if !loss.is_finite() {
                return Err(Error::NonFinite(format!("fine-tune loss at epoch {epoch}")));
            }
            adam.step(&mut model, &grad);
            loss_sum += loss * batch.len() as f64;
            correct += hits;
        }
        curve.push(CurvePoint {
            epoch,
            loss: loss_sum / train.len() as f64,
            train_acc: percent(correct, train.len()),
        });
    }
    let mut correct = 0;
    for (mel, &label) in test.mels.iter().zip(&test.labels) {
        if argmax(&model.logits(mel)?) == label as usize {
            correct += 1;
        }
    }
    let report = EvalReport {
        task_name: task_name.into(),
        mode: EvalMode::Finetune,
        init: config.init,
        test_accuracy: percent(correct, test.len()),
        train_curve: curve,
        num_classes,
        num_samples: train.len() + test.len(),
        selection: "final_epoch".into(),
        warnings: class_warnings(train, test),
    };
    Ok((report, model))
}

/// One task's row: mean test accuracy per (init, mode) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub task: String,
    pub random_frozen: Option<f64>,
    pub random_finetune: Option<f64>,
    pub pretrained_frozen: Option<f64>,
    pub pretrained_finetune: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportGrid {
    pub rows: Vec<GridRow>,
}

const HEADERS: [&str; 5] = [
    "Task",
    "Random Init. Frozen",
    "Random Init. Fine-tuned",
    "Pretrained Frozen",
    "Pretrained Fine-tuned",
];

impl ReportGrid {
    pub fn to_text(&self) -> String {
        let cell = |v: Option<f64>| v.map_or_else(|| "—".to_string(), |a| format!("{a:.1}"));
        let rows: Vec<[String; 5]> = self
            .rows
            .iter()
            .map(|r| {
                [
                    r.task.clone(),
                    cell(r.random_frozen),
                    cell(r.random_finetune),
                    cell(r.pretrained_frozen),
                    cell(r.pretrained_finetune),
                ]
            })
            .collect();
        let mut widths = HEADERS.map(|h| h.chars().count());
        for r in &rows {
            for (w, c) in widths.iter_mut().zip(r) {
                *w = (*w).max(c.chars().count());
            }
        }
        let mut out = String::new();
        let mut line = |cells: &[String]| {
            let parts: Vec<String> = cells
                .iter()
                .zip(&widths)
                .map(|(c, &w)| format!("{c}{}", " ".repeat(w - c.chars().count())))
                .collect();
            let _ = writeln!(out, "{}", parts.join(" | ").trim_end());
        };
        line(&HEADERS.map(String::from));
        line(&widths.map(|w| "-".repeat(w)));
        for r in &rows {
            line(r);
        }
        out
    }
}

/// Groups reports by task, averaging repeated cells; tasks come out sorted.
pub fn report_grid(reports: &[EvalReport]) -> ReportGrid {
    let mut cells: BTreeMap<&str, BTreeMap<(EvalInit, EvalMode), Vec<f64>>> = BTreeMap::new();
    for r in reports {
        cells
            .entry(&r.task_name)
            .or_default()
            .entry((r.init, r.mode))
            .or_default()
            .push(r.test_accuracy);
    }
    let rows = cells
        .into_iter()
        .map(|(task, m)| {
            let get = |init, mode| {
                m.get(&(init, mode))
                    .map(|v: &Vec<f64>| v.iter().sum::<f64>() / v.len() as f64)
            };
            GridRow {
                task: task.to_string(),
                random_frozen: get(EvalInit::Random, EvalMode::Frozen),
                random_finetune: get(EvalInit::Random, EvalMode::Finetune),
                pretrained_frozen: get(EvalInit::Pretrained, EvalMode::Frozen),
                pretrained_finetune: get(EvalInit::Pretrained, EvalMode::Finetune),
            }
        })
        .collect();
    ReportGrid { rows }
}
