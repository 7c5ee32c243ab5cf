//! Command-line front end. Every subcommand writes only under `--out` (and
//! the mel cache), starting with `config.resolved.json`.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::archive::{Archive, TensorData};
use crate::clustering::cluster_embeddings;
use crate::config::RunConfig;
use crate::data::{load_manifest, DatasetManifest, ManifestEntry, Split};
use crate::downstream::{finetune, linear_probe, report_grid, EvalInit, EvalMode, EvalReport, LabeledSet};
use crate::error::{Error, Result};
use crate::frontend::{cache_dir_from_env, load_mels, MelCache, MelSpectrogram};
use crate::model::{encode_batch, Encoder};
use crate::sampler::build_epoch;
use crate::trainer::{pretrain, Checkpoint, RunDir};
use crate::util::mix_seed;

pub const RESOLVED_CONFIG: &str = "config.resolved.json";
pub const REPORT: &str = "report.json";

#[derive(Debug, Parser)]
#[command(name = "decar", version, about = "Deep-clustering audio pretraining and evaluation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Pretrain an encoder on the train split of a manifest.
    Pretrain {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Cluster an embedding matrix (.npy, one row per clip).
    Cluster {
        #[arg(long)]
        embeddings: PathBuf,
        /// JSON list of clip ids, one per row; row numbers are used otherwise.
        #[arg(long)]
        index: Option<PathBuf>,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also write the balanced batch plan for these labels to plan.json.
        #[arg(long)]
        dump_plan: bool,
    },
    /// Write encoder embeddings for every clip of a manifest.
    Extract {
        /// Pretraining checkpoint, or `random`.
        #[arg(long)]
        ckpt: String,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Linear probe on the frozen encoder.
    Probe(EvalArgs),
    /// Fine-tune the whole encoder with a new classifier.
    Finetune(EvalArgs),
    /// Collect `report.json` files from run directories into one grid.
    Report {
        #[arg(long, num_args = 1.., required = true)]
        runs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, clap::Args)]
pub struct EvalArgs {
    /// Pretraining checkpoint, or `random`.
    #[arg(long)]
    pub ckpt: String,
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Row name in the report grid; defaults to the manifest file stem.
    #[arg(long)]
    pub task: Option<String>,
}

/// Parses `args` (program name first), runs, and returns the exit code.
pub fn main_with_args<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{}", error_line(&e));
            1
        }
    }
}

/// `error kind=<tag> msg=<text>` on one line.
pub fn error_line(e: &Error) -> String {
    let msg = e.to_string().replace(['\n', '\r'], " ");
    format!("error kind={} msg={msg}", e.kind())
}

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::Pretrain {
            config,
            manifest,
            out,
            resume,
        } => cmd_pretrain(&config, &manifest, &out, resume.as_deref()),
        Command::Cluster {
            embeddings,
            index,
            config,
            out,
            dump_plan,
        } => cmd_cluster(&embeddings, index.as_deref(), &config, &out, dump_plan),
        Command::Extract {
            ckpt,
            manifest,
            config,
            out,
        } => cmd_extract(&ckpt, &manifest, &config, &out),
        Command::Probe(args) => cmd_eval(&args, EvalMode::Frozen),
        Command::Finetune(args) => cmd_eval(&args, EvalMode::Finetune),
        Command::Report { runs, out } => cmd_report(&runs, &out),
    }
}

fn prepare(config: &Path, out: &Path) -> Result<(RunConfig, RunDir)> {
    let cfg = RunConfig::load(config)?;
    let dir = RunDir::create(out)?;
    write_file(&dir.file(RESOLVED_CONFIG), cfg.to_json_pretty().as_bytes())?;
    Ok((cfg, dir))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_file(path, text.as_bytes())
}

fn mels_for(cfg: &RunConfig, entries: &[&ManifestEntry]) -> Result<Vec<MelSpectrogram>> {
    let cache = cache_dir_from_env(cfg.data.cache_dir.as_deref())
        .map(|dir| MelCache::new(dir, &cfg.feature_fingerprint()))
        .transpose()?;
    load_mels(entries, cfg.data.target_rate, cfg.data.duration, &cfg.frontend, cache.as_ref())
}

fn cmd_pretrain(config: &Path, manifest: &Path, out: &Path, resume: Option<&Path>) -> Result<()> {
    let (cfg, dir) = prepare(config, out)?;
    let manifest = load_manifest(manifest)?;
    let entries: Vec<&ManifestEntry> = manifest.split(Split::Train).collect();
    if entries.is_empty() {
        return Err(Error::Validation("manifest has no train entries".into()));
    }
    let mels = mels_for(&cfg, &entries)?;
    let resume = resume.map(Checkpoint::load).transpose()?;
    let outcome = pretrain(&mels, &cfg.model, &cfg.pretrain, Some(&dir), resume)?;
    let last = outcome.records.last();
    eprintln!(
        "pretrain done: epoch {} stopped_early={} last_nmi={}",
        outcome.last.epoch,
        outcome.stopped_early,
        last.and_then(|r| r.nmi_vs_prev).map_or("-".into(), |v| format!("{v:.4}")),
    );
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct LabelLine {
    clip_id: String,
    label: u32,
}

fn read_matrix(path: &Path) -> Result<Array2<f64>> {
    let as_io = |e: &dyn std::fmt::Display| Error::io(path, std::io::Error::other(e.to_string()));
    match ndarray_npy::read_npy::<_, Array2<f64>>(path) {
        Ok(m) => Ok(m),
        Err(_) => ndarray_npy::read_npy::<_, Array2<f32>>(path)
            .map(|m| m.mapv(f64::from))
            .map_err(|e| as_io(&e)),
    }
}

fn cmd_cluster(embeddings: &Path, index: Option<&Path>, config: &Path, out: &Path, dump_plan: bool) -> Result<()> {
    let (cfg, dir) = prepare(config, out)?;
    let z = read_matrix(embeddings)?;
    let ids: Vec<String> = match index {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            serde_json::from_str(&text)?
        }
        None => (0..z.nrows()).map(|i| i.to_string()).collect(),
    };
    if ids.len() != z.nrows() {
        return Err(Error::InvalidArgument(format!(
            "index has {} ids but the matrix has {} rows",
            ids.len(),
            z.nrows()
        )));
    }
    let seeds = cfg.pretrain.seeds;
    let seed = seeds.clustering.unwrap_or_default();
    let (model, assignment) = cluster_embeddings(z.view(), &cfg.pretrain.clustering(), seed)?;

    let mut lines = String::new();
    for (id, &label) in ids.iter().zip(&assignment.labels) {
        lines += &serde_json::to_string(&LabelLine {
            clip_id: id.clone(),
            label,
        })?;
        lines.push('\n');
    }
    write_file(&dir.file("labels.jsonl"), lines.as_bytes())?;

    let mut archive = Archive::new(json!({
        "kind": "cluster_model",
        "algorithm": model.algorithm,
        "num_clusters": model.num_clusters,
        "inertia": model.inertia,
        "seed": model.seed,
        "cluster_sizes": assignment.cluster_sizes,
    }));
    let (rows, cols) = model.centroids.dim();
    archive.insert(
        "centroids",
        vec![rows, cols],
        TensorData::F64(model.centroids.iter().copied().collect()),
    );
    archive.insert("labels", vec![assignment.len()], TensorData::U32(assignment.labels.clone()));
    archive.save(&dir.file("cluster_model.bin"))?;

    if dump_plan {
        let plan = build_epoch(&assignment, cfg.pretrain.batch_size, mix_seed(seeds.sampler.unwrap_or_default(), &[1]))?;
        write_json(&dir.file("plan.json"), &plan)?;
    }
    Ok(())
}

/// The encoder of a pretraining checkpoint, or a fresh one for `random`.
fn load_encoder(ckpt: &str, cfg: &RunConfig) -> Result<(Encoder<f32>, EvalInit)> {
    if ckpt == "random" {
        let seed = mix_seed(cfg.pretrain.seeds.model.unwrap_or_default(), &[0]);
        let encoder = Encoder::new(&cfg.model, &mut ChaCha8Rng::seed_from_u64(seed));
        return Ok((encoder, EvalInit::Random));
    }
    let ck = Checkpoint::load(Path::new(ckpt))?;
    Ok((ck.net.encoder, EvalInit::Pretrained))
}

fn cmd_extract(ckpt: &str, manifest: &Path, config: &Path, out: &Path) -> Result<()> {
    let (cfg, dir) = prepare(config, out)?;
    let manifest = load_manifest(manifest)?;
    let (encoder, _) = load_encoder(ckpt, &cfg)?;
    let entries: Vec<&ManifestEntry> = manifest.entries.iter().collect();
    let mels = mels_for(&cfg, &entries)?;
    let refs: Vec<&MelSpectrogram> = mels.iter().collect();
    let h = encode_batch(&encoder, &refs)?;
    let h = Array2::from_shape_vec((mels.len(), encoder.embedding_dim()), h).expect("encoder output shape");
    let npy = dir.file("embeddings.npy");
    ndarray_npy::write_npy(&npy, &h).map_err(|e| Error::io(&npy, std::io::Error::other(e.to_string())))?;
    let ids: Vec<&str> = entries.iter().map(|e| e.clip_id.as_str()).collect();
    write_json(&dir.file("index.json"), &ids)
}

fn labeled<'a>(manifest: &DatasetManifest, split: Split, mels: &'a [MelSpectrogram]) -> Result<LabeledSet<'a>> {
    let labels: Vec<u32> = manifest.split(split).map(|e| e.label.unwrap_or_default()).collect();
    let start = match split {
        Split::Train => 0,
        Split::Test => manifest.split(Split::Train).count(),
    };
    LabeledSet::new(mels[start..start + labels.len()].iter().collect(), labels)
}

fn cmd_eval(args: &EvalArgs, mode: EvalMode) -> Result<()> {
    let (cfg, dir) = prepare(&args.config, &args.out)?;
    let manifest = load_manifest(&args.manifest)?;
    for split in [Split::Train, Split::Test] {
        if !manifest.has_split(split) {
            return Err(Error::Validation(format!("manifest has no {split:?} entries")));
        }
        manifest.require_labels(split)?;
    }
    let num_classes = manifest.num_classes.unwrap_or_default() as usize;
    let (encoder, init) = load_encoder(&args.ckpt, &cfg)?;
    let entries: Vec<&ManifestEntry> = manifest
        .split(Split::Train)
        .chain(manifest.split(Split::Test))
        .collect();
    let mels = mels_for(&cfg, &entries)?;
    let train = labeled(&manifest, Split::Train, &mels)?;
    let test = labeled(&manifest, Split::Test, &mels)?;
    let task = args.task.clone().unwrap_or_else(|| {
        args.manifest
            .file_stem()
            .map_or_else(|| "task".into(), |s| s.to_string_lossy().into_owned())
    });
    let mut eval = cfg.eval.clone();
    eval.mode = mode;
    eval.init = init;
    let report = match mode {
        EvalMode::Frozen => linear_probe(&encoder, &train, &test, num_classes, &eval, &task)?,
        EvalMode::Finetune => finetune(encoder, &train, &test, num_classes, &eval, &task)?.0,
    };
    eprintln!("{task} {mode:?} {init:?}: test accuracy {:.1}%", report.test_accuracy);
    write_json(&dir.file(REPORT), &report)
}

fn cmd_report(runs: &[PathBuf], out: &Path) -> Result<()> {
    let mut reports = Vec::with_capacity(runs.len());
    for run in runs {
        let p = run.join(REPORT);
        let text = fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
        reports.push(serde_json::from_str::<EvalReport>(&text)?);
    }
    let grid = report_grid(&reports);
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    write_file(&out.join("grid.txt"), grid.to_text().as_bytes())?;
    write_json(&out.join("grid.json"), &grid)
}
