//! Pretraining loop. Every epoch runs two passes over the dataset: pass 1
//! embeds each clip through `f` and `g` without augmentation and clusters the
//! result into pseudo-labels; pass 2 trains all parameters to predict those
//! labels on SpecAugmented inputs drawn by the balanced sampler.

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::archive::{Archive, TensorData};
use crate::clustering::{cluster_embeddings, nmi, Algorithm, ClusteringConfig, PicParams, PseudoLabelAssignment};
use crate::error::{Error, Result};
use crate::frontend::{spec_augment, AugmentConfig, MelSpectrogram};
use crate::model::{ModelConfig, ParamSet, PretrainNet, Sgd};
use crate::sampler::build_epoch;
use crate::util::{derive_seed, mix_seed, stable_hash};

/// Per-component seeds. Unset entries are derived from the run seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Seeds {
    pub model: Option<u64>,
    pub clustering: Option<u64>,
    pub sampler: Option<u64>,
    pub augment: Option<u64>,
}

impl Seeds {
    pub fn resolve(&self, global: u64) -> Seeds {
        let pick = |s: Option<u64>, name: &str| Some(s.unwrap_or_else(|| derive_seed(global, name)));
        Seeds {
            model: pick(self.model, "model"),
            clustering: pick(self.clustering, "clustering"),
            sampler: pick(self.sampler, "sampler"),
            augment: pick(self.augment, "augment"),
        }
    }

    fn get(s: Option<u64>) -> u64 {
        s.unwrap_or(0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PretrainConfig {
    pub algorithm: Algorithm,
    pub num_clusters: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub pca_dim: usize,
    pub momentum: f64,
    pub weight_decay: f64,
    pub kmeans_max_iter: usize,
    pub kmeans_restarts: usize,
    pub pic: PicParams,
    pub augment: AugmentConfig,
    pub seeds: Seeds,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        let c = ClusteringConfig::default();
        Self {
            algorithm: c.algorithm,
            num_clusters: c.num_clusters,
            lr: 0.05,
            batch_size: 64,
            max_epochs: 100,
            patience: 10,
            pca_dim: c.pca_dim,
            momentum: 0.9,
            weight_decay: 1e-5,
            kmeans_max_iter: c.kmeans_max_iter,
            kmeans_restarts: c.kmeans_restarts,
            pic: c.pic,
            augment: AugmentConfig::default(),
            seeds: Seeds::default(),
        }
    }
}

impl PretrainConfig {
    pub fn clustering(&self) -> ClusteringConfig {
        ClusteringConfig {
            algorithm: self.algorithm,
            num_clusters: self.num_clusters,
            pca_dim: self.pca_dim,
            kmeans_max_iter: self.kmeans_max_iter,
            kmeans_restarts: self.kmeans_restarts,
            pic: self.pic.clone(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.clustering().validate("pretrain")?;
        if !(self.lr > 0.0) {
            return Err(Error::config("pretrain.lr", "must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("pretrain.batch_size", "must be positive"));
        }
        if self.max_epochs == 0 {
            return Err(Error::config("pretrain.max_epochs", "must be positive"));
        }
        if self.patience == 0 {
            return Err(Error::config("pretrain.patience", "must be positive"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::config("pretrain.momentum", "must lie in [0, 1)"));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::config("pretrain.weight_decay", "must be non-negative"));
        }
        self.augment.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// NMI against the previous epoch's assignment; `None` on the first epoch.
    pub nmi_vs_prev: Option<f64>,
    pub mean_loss: f64,
    pub cluster_size_histogram: Vec<usize>,
    /// Kept out of `metrics.jsonl` so that log is reproducible bit for bit.
    #[serde(skip)]
    pub wall_time: f64,
}

/// Running-maximum patience on consecutive-epoch NMI.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct StopState {
    pub best_nmi: Option<f64>,
    pub best_epoch: usize,
    pub stale: usize,
}

impl StopState {
    /// Folds in one epoch; returns true when that epoch set a new maximum.
    pub fn observe(&mut self, epoch: usize, nmi: Option<f64>) -> bool {
        let Some(v) = nmi else { return false };
        if self.best_nmi.is_none_or(|b| v > b) {
            self.best_nmi = Some(v);
            self.best_epoch = epoch;
            self.stale = 0;
            true
        } else {
            self.stale += 1;
            false
        }
    }

    pub fn should_stop(&self, patience: usize) -> bool {
        self.best_nmi.is_some() && self.stale >= patience
    }
}

/// Everything needed to continue pretraining or to reuse the encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model_config: ModelConfig,
    pub net: PretrainNet<f32>,
    pub velocity: Vec<Vec<f32>>,
    pub assignment: Option<PseudoLabelAssignment>,
    pub epoch: usize,
    pub stop: StopState,
    pub config_hash: String,
}

impl Checkpoint {
    pub fn to_archive(&self) -> Archive {
        let mut a = Archive::new(json!({
            "kind": "pretrain",
            "epoch": self.epoch,
            "config_hash": self.config_hash,
            "model_config": self.model_config,
            "num_clusters": self.net.num_clusters(),
            "stop": self.stop,
        }));
        for ((name, t), v) in self.net.named_tensors().into_iter().zip(&self.velocity) {
            a.insert(format!("param/{name}"), vec![t.len()], TensorData::F32(t.to_vec()));
            a.insert(format!("velocity/{name}"), vec![v.len()], TensorData::F32(v.clone()));
        }
        if let Some(asg) = &self.assignment {
            a.insert("assignment", vec![asg.len()], TensorData::U32(asg.labels.clone()));
        }
        a
    }

    pub fn from_archive(a: &Archive) -> Result<Self> {
        let meta = &a.meta;
        if meta["kind"] != "pretrain" {
            return Err(Error::Checkpoint("not a pretraining checkpoint".into()));
        }
        let field = |k: &str| {
            meta.get(k)
                .cloned()
                .ok_or_else(|| Error::Checkpoint(format!("header missing {k}")))
        };
        let model_config: ModelConfig = serde_json::from_value(field("model_config")?)?;
        let num_clusters: usize = serde_json::from_value(field("num_clusters")?)?;
        let epoch: usize = serde_json::from_value(field("epoch")?)?;
        let stop: StopState = serde_json::from_value(field("stop")?)?;
        let config_hash: String = serde_json::from_value(field("config_hash")?)?;
        let mut net = PretrainNet::new(&model_config, num_clusters, 0);
        net.load_tensors(&|n| a.f32(&format!("param/{n}")).map(<[f32]>::to_vec))?;
        let velocity = net
            .named_tensors()
            .iter()
            .map(|(n, t)| {
                a.f32(&format!("velocity/{n}"))
                    .map(<[f32]>::to_vec)
                    .filter(|v| v.len() == t.len())
                    .ok_or_else(|| Error::Checkpoint(format!("missing velocity for {n}")))
            })
            .collect::<Result<_>>()?;
        let assignment = a
            .u32("assignment")
            .map(|l| PseudoLabelAssignment::from_labels(l.to_vec(), num_clusters, epoch))
            .transpose()?;
        Ok(Self {
            model_config,
            net,
            velocity,
            assignment,
            epoch,
            stop,
            config_hash,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_archive().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_archive(&Archive::load(path)?)
    }
}

/// Hash of every setting that shapes the training trajectory. The epoch
/// budget and patience are left out so a run can be resumed with a larger one.
pub fn config_hash(model: &ModelConfig, pretrain: &PretrainConfig) -> String {
    let trajectory = PretrainConfig {
        max_epochs: 0,
        patience: 0,
        ..pretrain.clone()
    };
    stable_hash(&(model, trajectory))
}

/// Pass 1: `z = g(f(x))` for every clip in dataset order, no augmentation.
pub fn embed_dataset(net: &PretrainNet<f32>, mels: &[MelSpectrogram]) -> Result<Array2<f64>> {
    let k = net.projection.out_dim;
    let mut z = Array2::zeros((mels.len(), k));
    for (mut row, mel) in z.rows_mut().into_iter().zip(mels) {
        for (dst, v) in row.iter_mut().zip(net.embed_projected(mel)?) {
            *dst = f64::from(v);
        }
    }
    Ok(z)
}

/// One two-pass epoch. `epoch` is 1-based and seeds every random stream.
pub fn pretrain_epoch(
    net: &mut PretrainNet<f32>,
    optimizer: &mut Sgd<f32>,
    mels: &[MelSpectrogram],
    config: &PretrainConfig,
    prev: Option<&PseudoLabelAssignment>,
    epoch: usize,
) -> Result<(PseudoLabelAssignment, EpochRecord)> {
    if mels.is_empty() {
        return Err(Error::InvalidArgument("empty dataset".into()));
    }
    let start = Instant::now();
    let seeds = config.seeds;
    let e = epoch as u64;

    let z = embed_dataset(net, mels)?;
    let (_, mut assignment) =
        cluster_embeddings(z.view(), &config.clustering(), mix_seed(Seeds::get(seeds.clustering), &[e]))?;
    assignment.epoch = epoch;

    net.reinit_head(mix_seed(Seeds::get(seeds.model), &[e]));
    optimizer.reset_state(net, "head.");

    let plan = build_epoch(&assignment, config.batch_size, mix_seed(Seeds::get(seeds.sampler), &[e]))?;
    let augment_seed = Seeds::get(seeds.augment);
    let mut total = 0.0;
    for (b, batch) in plan.batches.iter().enumerate() {
        let augmented: Vec<MelSpectrogram> = batch
            .iter()
            .enumerate()
            .map(|(s, &i)| {
                let policy = config
                    .augment
                    .policy_for(&mels[i], mix_seed(augment_seed, &[e, b as u64, s as u64]));
                spec_augment(&mels[i], &policy)
            })
            .collect();
        let refs: Vec<&MelSpectrogram> = augmented.iter().collect();
        let labels: Vec<u32> = batch.iter().map(|&i| assignment.labels[i]).collect();
        let mut grad = net.zeros_like();
        let loss = net.loss_and_grad(&refs, &labels, &mut grad)?;
        if !loss.is_finite() || !grad.all_finite() {
            return Err(Error::NonFinite(format!("loss {loss} at epoch {epoch}, batch {b}")));
        }
        optimizer.step(net, &grad);
        total += loss;
    }

    let nmi_vs_prev = prev.map(|p| nmi(&assignment.labels, &p.labels)).transpose()?;
    let record = EpochRecord {
        epoch,
        nmi_vs_prev,
        mean_loss: total / plan.batches.len() as f64,
        cluster_size_histogram: assignment.cluster_sizes.clone(),
        wall_time: start.elapsed().as_secs_f64(),
    };
    Ok((assignment, record))
}

#[derive(Debug, Clone)]
pub struct PretrainOutcome {
    pub last: Checkpoint,
    pub records: Vec<EpochRecord>,
    pub stopped_early: bool,
}

/// Where a run writes its artifacts.
pub struct RunDir {
    pub path: PathBuf,
}

impl RunDir {
    pub const METRICS: &'static str = "metrics.jsonl";
    pub const TIMINGS: &'static str = "timings.jsonl";
    pub const BEST: &'static str = "ckpt_best.bin";
    pub const LAST: &'static str = "ckpt_last.bin";
    pub const DIVERGED: &'static str = "ckpt_diverged.bin";

    pub fn create(path: impl Into<PathBuf>) -> Result<Self> {
        let path = path.into();
        fs::create_dir_all(&path).map_err(|e| Error::io(&path, e))?;
        Ok(Self { path })
    }

    pub fn file(&self, name: &str) -> PathBuf {
        self.path.join(name)
    }

    fn append_line(&self, name: &str, line: &str) -> Result<()> {
        let p = self.file(name);
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&p)
            .map_err(|e| Error::io(&p, e))?;
        writeln!(f, "{line}").map_err(|e| Error::io(&p, e))
    }

    /// Keeps only log lines up to `epoch`, so a resumed run continues the log.
    fn truncate_logs(&self, epoch: usize) -> Result<()> {
        for name in [Self::METRICS, Self::TIMINGS] {
            let p = self.file(name);
            let Ok(text) = fs::read_to_string(&p) else { continue };
            let kept: String = text
                .lines()
                .filter(|l| {
                    serde_json::from_str::<serde_json::Value>(l)
                        .ok()
                        .and_then(|v| v["epoch"].as_u64())
                        .is_some_and(|e| e as usize <= epoch)
                })
                .map(|l| format!("{l}\n"))
                .collect();
            fs::write(&p, kept).map_err(|e| Error::io(&p, e))?;
        }
        Ok(())
    }
}

/// Runs epochs until the NMI patience rule or `max_epochs` stops training.
/// With `out`, writes `metrics.jsonl`, `timings.jsonl` and the best / last
/// checkpoints after every epoch.
pub fn pretrain(
    mels: &[MelSpectrogram],
    model_config: &ModelConfig,
    config: &PretrainConfig,
    out: Option<&RunDir>,
    resume: Option<Checkpoint>,
) -> Result<PretrainOutcome> {
    model_config.validate()?;
    config.validate()?;
    let hash = config_hash(model_config, config);
    let mut state = match resume {
        Some(ck) => {
            if ck.config_hash != hash {
                return Err(Error::Checkpoint(
                    "checkpoint was produced by a different configuration".into(),
                ));
            }
            ck
        }
        None => {
            let net = PretrainNet::new(model_config, config.num_clusters, Seeds::get(config.seeds.model));
            let velocity = Sgd::new(&net, config.lr, config.momentum, config.weight_decay).velocity;
            Checkpoint {
                model_config: model_config.clone(),
                net,
                velocity,
                assignment: None,
                epoch: 0,
                stop: StopState::default(),
                config_hash: hash,
            }
        }
    };
    if let Some(dir) = out {
        if state.epoch == 0 {
            for name in [RunDir::METRICS, RunDir::TIMINGS] {
                let p = dir.file(name);
                fs::write(&p, "").map_err(|e| Error::io(&p, e))?;
            }
        } else {
            dir.truncate_logs(state.epoch)?;
        }
    }
    let mut optimizer = Sgd::new(&state.net, config.lr, config.momentum, config.weight_decay);
    optimizer.velocity = std::mem::take(&mut state.velocity);
    let mut records = Vec::new();
    let mut stopped_early = state.stop.should_stop(config.patience);

    while !stopped_early && state.epoch < config.max_epochs {
        let epoch = state.epoch + 1;
        let before = state.net.clone();
        let result = pretrain_epoch(
            &mut state.net,
            &mut optimizer,
            mels,
            config,
            state.assignment.as_ref(),
            epoch,
        );
        let (assignment, record) = match result {
            Ok(r) => r,
            Err(err @ Error::NonFinite(_)) => {
                if let Some(dir) = out {
                    let diag = Checkpoint {
                        net: before,
                        velocity: optimizer.velocity.clone(),
                        ..state.clone()
                    };
                    diag.save(&dir.file(RunDir::DIVERGED))?;
                }
                return Err(err);
            }
            Err(e) => return Err(e),
        };
        let improved = state.stop.observe(epoch, record.nmi_vs_prev);
        state.epoch = epoch;
        state.assignment = Some(assignment);
        stopped_early = state.stop.should_stop(config.patience);
        if let Some(dir) = out {
            dir.append_line(RunDir::METRICS, &serde_json::to_string(&record)?)?;
            dir.append_line(
                RunDir::TIMINGS,
                &json!({"epoch": epoch, "wall_time": record.wall_time}).to_string(),
            )?;
            let snapshot = Checkpoint {
                velocity: optimizer.velocity.clone(),
                ..state.clone()
            };
            snapshot.save(&dir.file(RunDir::LAST))?;
            if improved || epoch == 1 {
                snapshot.save(&dir.file(RunDir::BEST))?;
            }
        }
        records.push(record);
    }
    state.velocity = optimizer.velocity;
    Ok(PretrainOutcome {
        last: state,
        records,
        stopped_early,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ConvBlockConfig, InputNorm};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tiny_model() -> ModelConfig {
        ModelConfig {
            conv_blocks: vec![
                ConvBlockConfig { out_channels: 4, kernel: 3, stride: 2 },
                ConvBlockConfig { out_channels: 8, kernel: 3, stride: 2 },
            ],
            embedding_dim: 16,
            projection_width: 8,
            input_norm: InputNorm::Instance,
            head_init_std: None,
        }
    }

    fn tiny_config(c: usize) -> PretrainConfig {
        PretrainConfig {
            algorithm: Algorithm::KMeans,
            num_clusters: c,
            batch_size: 4,
            max_epochs: 3,
            patience: 2,
            pca_dim: 4,
            seeds: Seeds::default().resolve(7),
            ..PretrainConfig::default()
        }
    }

    fn mels(n: usize, seed: u64) -> Vec<MelSpectrogram> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| {
                let tilt = rng.random_range(-1.0f32..1.0);
                let values = (0..24 * 16)
                    .map(|j| tilt * (j % 16) as f32 + rng.random_range(-0.5f32..0.5))
                    .collect();
                MelSpectrogram::new(format!("clip{i}"), 24, 16, values)
            })
            .collect()
    }

    #[test]
    fn smoke_epoch_returns_populated_clusters() {
        let cfg = tiny_config(2);
        let data = mels(8, 1);
        let mut net = PretrainNet::new(&tiny_model(), 2, 3);
        let mut opt = Sgd::new(&net, cfg.lr, cfg.momentum, cfg.weight_decay);
        let (asg, rec) = pretrain_epoch(&mut net, &mut opt, &data, &cfg, None, 1).unwrap();
        assert!(asg.cluster_sizes.iter().all(|&s| s > 0));
        assert!(rec.mean_loss.is_finite());
        assert!(rec.nmi_vs_prev.is_none());
    }

    #[test]
    fn pass_one_does_not_touch_parameters() {
        let net = PretrainNet::<f32>::new(&tiny_model(), 2, 3);
        let copy = net.clone();
        embed_dataset(&net, &mels(5, 2)).unwrap();
        assert_eq!(net, copy);
    }

    #[test]
    fn epochs_are_deterministic() {
        let cfg = tiny_config(3);
        let data = mels(12, 4);
        let run = || {
            let mut net = PretrainNet::new(&tiny_model(), 3, 3);
            let mut opt = Sgd::new(&net, cfg.lr, cfg.momentum, cfg.weight_decay);
            let (a, mut r) = pretrain_epoch(&mut net, &mut opt, &data, &cfg, None, 1).unwrap();
            r.wall_time = 0.0;
            (net, a, r)
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn pass_two_lowers_loss_on_its_plan() {
        let mut cfg = tiny_config(2);
        cfg.lr = 0.01;
        cfg.augment.num_freq_masks = 0;
        cfg.augment.num_time_masks = 0;
        let data = mels(16, 5);
        let mut net = PretrainNet::new(&tiny_model(), 2, 3);
        let mut opt = Sgd::new(&net, cfg.lr, cfg.momentum, cfg.weight_decay);
        // Replay the epoch's clustering and head reinit to score the plan before training.
        let z = embed_dataset(&net, &data).unwrap();
        let seeds = cfg.seeds;
        let (_, asg) =
            cluster_embeddings(z.view(), &cfg.clustering(), mix_seed(seeds.clustering.unwrap(), &[1])).unwrap();
        let mut before = net.clone();
        before.reinit_head(mix_seed(seeds.model.unwrap(), &[1]));
        let plan = build_epoch(&asg, cfg.batch_size, mix_seed(seeds.sampler.unwrap(), &[1])).unwrap();
        let idx: Vec<usize> = plan.slots().collect();
        let refs: Vec<&MelSpectrogram> = idx.iter().map(|&i| &data[i]).collect();
        let labels: Vec<u32> = idx.iter().map(|&i| asg.labels[i]).collect();
        let pre = before.loss(&refs, &labels).unwrap();
        let (asg2, _) = pretrain_epoch(&mut net, &mut opt, &data, &cfg, None, 1).unwrap();
        assert_eq!(asg2.labels, asg.labels);
        let post = net.loss(&refs, &labels).unwrap();
        assert!(post < pre, "post {post} >= pre {pre}");
    }

    #[test]
    fn stop_state_arithmetic() {
        let mut s = StopState::default();
        assert!(!s.observe(1, None));
        assert!(!s.should_stop(1));
        assert!(s.observe(2, Some(1.0)));
        assert!(!s.should_stop(1));
        assert!(!s.observe(3, Some(1.0)));
        assert!(s.should_stop(1));
        assert_eq!(s.best_epoch, 2);
    }

    #[test]
    fn repeated_clip_plateau_stops_at_epoch_three() {
        let mut cfg = tiny_config(2);
        cfg.patience = 1;
        cfg.max_epochs = 10;
        let one = mels(1, 9).pop().unwrap();
        let data: Vec<MelSpectrogram> = (0..6)
            .map(|i| MelSpectrogram { clip_id: format!("r{i}"), ..one.clone() })
            .collect();
        let out = pretrain(&data, &tiny_model(), &cfg, None, None).unwrap();
        assert_eq!(out.records.len(), 3);
        assert!(out.stopped_early);
        assert_eq!(out.records[1].nmi_vs_prev, Some(1.0));
        assert_eq!(out.records[2].nmi_vs_prev, Some(1.0));
    }

    #[test]
    fn max_epochs_caps_the_run() {
        let mut cfg = tiny_config(2);
        cfg.max_epochs = 2;
        cfg.patience = 2;
        let out = pretrain(&mels(8, 3), &tiny_model(), &cfg, None, None).unwrap();
        assert_eq!(out.records.len(), 2);
    }

    #[test]
    fn checkpoint_round_trip_preserves_outputs() {
        let cfg = tiny_config(2);
        let data = mels(8, 6);
        let dir = tempfile::tempdir().unwrap();
        let run = RunDir::create(dir.path()).unwrap();
        let out = pretrain(&data, &tiny_model(), &cfg, Some(&run), None).unwrap();
        let loaded = Checkpoint::load(&run.file(RunDir::LAST)).unwrap();
        assert_eq!(loaded, out.last);
        let probe: Vec<&MelSpectrogram> = data.iter().collect();
        let a = out.last.net.encode(&probe).unwrap();
        let b = loaded.net.encode(&probe).unwrap();
        assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
        assert!(run.file(RunDir::BEST).exists());
        let lines = fs::read_to_string(run.file(RunDir::METRICS)).unwrap();
        assert_eq!(lines.lines().count(), out.records.len());
    }

    #[test]
    fn resume_matches_uninterrupted_run() {
        let mut cfg = tiny_config(2);
        cfg.max_epochs = 3;
        cfg.patience = 3;
        let data = mels(8, 8);
        let full_dir = tempfile::tempdir().unwrap();
        let full_run = RunDir::create(full_dir.path()).unwrap();
        let full = pretrain(&data, &tiny_model(), &cfg, Some(&full_run), None).unwrap();

        let part_dir = tempfile::tempdir().unwrap();
        let part_run = RunDir::create(part_dir.path()).unwrap();
        let mut short = cfg.clone();
        short.max_epochs = 1;
        short.patience = 1;
        pretrain(&data, &tiny_model(), &short, Some(&part_run), None).unwrap();
        let ck = Checkpoint::load(&part_run.file(RunDir::LAST)).unwrap();
        let resumed = pretrain(&data, &tiny_model(), &cfg, Some(&part_run), Some(ck)).unwrap();
        assert_eq!(resumed.last.net, full.last.net);
        assert_eq!(
            fs::read(part_run.file(RunDir::METRICS)).unwrap(),
            fs::read(full_run.file(RunDir::METRICS)).unwrap()
        );
    }

    #[test]
    fn resume_rejects_foreign_config() {
        let cfg = tiny_config(2);
        let data = mels(8, 8);
        let ck = pretrain(&data, &tiny_model(), &cfg, None, None).unwrap().last;
        let mut other = cfg.clone();
        other.lr *= 2.0;
        assert!(matches!(
            pretrain(&data, &tiny_model(), &other, None, Some(ck)),
            Err(Error::Checkpoint(_))
        ));
    }

    #[test]
    fn divergence_writes_a_diagnostic_checkpoint() {
        let mut cfg = tiny_config(2);
        cfg.lr = 1e30;
        cfg.max_epochs = 5;
        let dir = tempfile::tempdir().unwrap();
        let run = RunDir::create(dir.path()).unwrap();
        let r = pretrain(&mels(8, 2), &tiny_model(), &cfg, Some(&run), None);
        assert!(matches!(r, Err(Error::NonFinite(_))));
        assert!(Checkpoint::load(&run.file(RunDir::DIVERGED)).unwrap().net.all_finite());
    }

    #[test]
    fn invalid_config_is_reported_with_field() {
        let mut cfg = tiny_config(2);
        cfg.patience = 0;
        match cfg.validate() {
            Err(Error::Config { field, .. }) => assert_eq!(field, "pretrain.patience"),
            other => panic!("{other:?}"),
        }
    }
}
