//! Workflows behind the `tyee` command line.
//!
//! Exit codes: 0 success, 1 configuration error, 2 data error, 3 training
//! error. A run writes into `common.output_dir`:
//!
//! ```text
//! config.yaml        effective configuration (file + overrides)
//! train.log          one tab-separated line per epoch
//! history.jsonl      one JSON record per epoch
//! checkpoints/       epoch_NNNN.ckpt and best.ckpt
//! report             final metrics as JSON, written only on success
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::{apply_overrides, load_config, validate, ConfigError, ExperimentConfig, Issue, Override};
use crate::dataset::{self, build_dataset, cache, Dataset, DatasetError, Splits};
use crate::metrics::MetricReport;
use crate::signal_io;
use crate::trainer::{self, checkpoint, Batch, Evaluation, FitOptions, StandardSteps, Task, TrainerError};

pub const CACHE_ENV: &str = "TYEE_CACHE_DIR";
pub const REPORT: &str = "report";
pub const EFFECTIVE_CONFIG: &str = "config.yaml";

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("invalid configuration:\n{}", format_issues(.0))]
    Invalid(Vec<Issue>),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    /// Trainer errors that stem from the configuration.
    #[error("{0}")]
    Setup(TrainerError),
    #[error(transparent)]
    Training(#[from] TrainerError),
    #[error("i/o failed at {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot inspect {path}: {reason}")]
    Inspect { path: String, reason: String },
}

fn format_issues(issues: &[Issue]) -> String {
    issues.iter().map(|i| format!("  {i}")).collect::<Vec<_>>().join("\n")
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) | RunError::Invalid(_) | RunError::Setup(_) => 1,
            RunError::Dataset(e) => match e.root() {
                DatasetError::InvalidConfig(_)
                | DatasetError::UnknownClass(_)
                | DatasetError::MissingLabel(_)
                | DatasetError::InvalidSplit(_) => 1,
                _ => 2,
            },
            RunError::Inspect { .. } => 2,
            RunError::Training(_) | RunError::Io { .. } => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, RunError>;

fn io(path: &Path, source: std::io::Error) -> RunError {
    RunError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn setup(e: TrainerError) -> RunError {
    match e {
        TrainerError::ShapeMismatch(_)
        | TrainerError::UnknownComponent { .. }
        | TrainerError::InvalidSpec(_)
        | TrainerError::LabelOutOfRange { .. } => RunError::Setup(e),
        other => RunError::Training(other),
    }
}

/// Loads, overrides and validates a configuration. `seed` wins over both.
pub fn prepare(path: &Path, overrides: &[Override], seed: Option<u64>) -> Result<ExperimentConfig> {
    let mut cfg = apply_overrides(&load_config(path)?, overrides)?;
    if let Some(seed) = seed {
        cfg.common.seed = seed;
    }
    for w in cfg.warnings() {
        log::warn!("{w}");
    }
    let issues = validate(&cfg);
    if !issues.is_empty() {
        return Err(RunError::Invalid(issues));
    }
    if let Ok(level) = cfg.common.log_level.parse::<log::LevelFilter>() {
        log::set_max_level(level);
    }
    Ok(cfg)
}

/// `dataset.cache_dir`, then `$TYEE_CACHE_DIR`, then `<output_dir>/cache`.
pub fn cache_dir(cfg: &ExperimentConfig) -> PathBuf {
    cfg.dataset
        .cache_dir
        .clone()
        .or_else(|| std::env::var_os(CACHE_ENV).filter(|v| !v.is_empty()).map(PathBuf::from))
        .unwrap_or_else(|| cfg.common.output_dir.join("cache"))
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub resume: Option<PathBuf>,
    /// Stop after this many epochs without writing a report, as if killed.
    pub stop_after: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSizes {
    pub train: usize,
    pub valid: usize,
    pub test: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    /// Validation metrics of the selected checkpoint, or test metrics when
    /// there is no validation split.
    pub metrics: BTreeMap<String, f64>,
    pub aggregate: Option<f64>,
    pub best_epoch: Option<usize>,
    pub epochs: usize,
    pub samples: SplitSizes,
    pub valid_loss: Option<f64>,
    pub valid: Option<MetricReport>,
    pub test_loss: Option<f64>,
    pub test: Option<MetricReport>,
}

struct Prepared {
    task: Task,
    train: Batch,
    valid: Batch,
    test: Batch,
    sizes: SplitSizes,
}

fn assemble(cfg: &ExperimentConfig, dataset: &Dataset, splits: &Splits) -> Result<Prepared> {
    let task = Task::new(&cfg.task, &cfg.model, &cfg.optimizer, cfg.common.seed).map_err(setup)?;
    if !dataset.is_empty() {
        let s = dataset.get_item(0)?;
        let features: usize = s.data.iter().map(Vec::len).sum();
        if features != cfg.model.input_dim {
            return Err(RunError::Setup(TrainerError::ShapeMismatch(format!(
                "samples have {} channels × {} points = {features} features, model.input_dim is {}",
                s.data.len(),
                s.data.first().map_or(0, Vec::len),
                cfg.model.input_dim
            ))));
        }
    }
    let load = |ix: &[usize]| Batch::from_dataset(dataset, ix, cfg.task.kind).map_err(setup);
    let (train, valid, test) = (load(&splits.train)?, load(&splits.valid)?, load(&splits.test)?);
    let width = cfg.model.output_dim;
    for b in [&train, &valid, &test] {
        match &b.targets {
            trainer::Targets::Classes(c) => {
                if let Some(&label) = c.iter().find(|&&l| l >= width) {
                    return Err(RunError::Setup(TrainerError::LabelOutOfRange { label, classes: width }));
                }
            }
            trainer::Targets::Values(v) if !v.is_empty() && v.ncols() != width => {
                return Err(RunError::Setup(TrainerError::ShapeMismatch(format!(
                    "targets have {} values, model.output_dim is {width}",
                    v.ncols()
                ))))
            }
            _ => {}
        }
    }
    let sizes = SplitSizes {
        train: train.len(),
        valid: valid.len(),
        test: test.len(),
    };
    Ok(Prepared {
        task,
        train,
        valid,
        test,
        sizes,
    })
}

fn load_data(cfg: &ExperimentConfig) -> Result<(Dataset, Splits)> {
    let cache = cache_dir(cfg);
    let dataset = build_dataset(&cfg.dataset, Some(&cache))?;
    let reprocessed = dataset.records().iter().filter(|r| !r.cache_hit).count();
    log::info!(
        "dataset: {} samples from {} records ({} reprocessed, cache {})",
        dataset.len(),
        dataset.records().len(),
        reprocessed,
        cache.display()
    );
    let splits = dataset::split(&dataset, &cfg.dataset.split, cfg.common.seed)?;
    Ok((dataset, splits))
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes).map_err(|e| io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| io(path, e))
}

fn split_eval(e: Option<Evaluation>) -> (Option<f64>, Option<MetricReport>) {
    match e {
        Some(e) => (Some(e.loss), e.report),
        None => (None, None),
    }
}

/// Runs a validated configuration end to end. Returns `None` when
/// `stop_after` cut the run short.
pub fn run_experiment(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<Option<RunReport>> {
    let out = &cfg.common.output_dir;
    let resume = opts.resume.as_deref().map(read_checkpoint).transpose()?;

    let (dataset, splits) = load_data(cfg)?;
    let mut p = assemble(cfg, &dataset, &splits)?;

    std::fs::create_dir_all(out).map_err(|e| io(out, e))?;
    let report_path = out.join(REPORT);
    if report_path.exists() {
        std::fs::remove_file(&report_path).map_err(|e| io(&report_path, e))?;
    }
    write_atomic(&out.join(EFFECTIVE_CONFIG), cfg.to_yaml().as_bytes())?;

    let fit_opts = FitOptions {
        trainer: cfg.trainer.clone(),
        seed: cfg.common.seed,
        out_dir: out.clone(),
        resume,
        stop_after: opts.stop_after,
    };
    let outcome = trainer::fit(&mut p.task, &mut StandardSteps, &p.train, &p.valid, &fit_opts).map_err(|e| match e {
        TrainerError::ShapeMismatch(_) => RunError::Setup(e),
        other => RunError::Training(other),
    })?;
    if outcome.completed < cfg.trainer.epochs {
        return Ok(None);
    }

    let best_path = trainer::checkpoint_dir(out).join(trainer::BEST);
    if outcome.best.is_some() {
        let best = checkpoint::load(&best_path)?;
        trainer::restore(&mut p.task, &best)?;
    }
    let bs = cfg.trainer.batch_size;
    let (valid_loss, valid) = split_eval(trainer::evaluate(&p.task, &StandardSteps, &p.valid, bs)?);
    let (test_loss, test) = split_eval(trainer::evaluate(&p.task, &StandardSteps, &p.test, bs)?);
    let headline = valid.as_ref().or(test.as_ref());
    let report = RunReport {
        metrics: headline.map(|r| r.values.clone()).unwrap_or_default(),
        aggregate: headline.map(|r| r.aggregate),
        best_epoch: outcome.best.map(|b| b.epoch),
        epochs: outcome.completed,
        samples: p.sizes,
        valid_loss,
        valid,
        test_loss,
        test,
    };
    let text = serde_json::to_string_pretty(&report).expect("report serializes");
    write_atomic(&report_path, format!("{text}\n").as_bytes())?;
    Ok(Some(report))
}

fn finish(result: Result<()>) -> i32 {
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            e.exit_code()
        }
    }
}

pub fn cmd_run(config: &Path, overrides: &[Override], seed: Option<u64>, resume: Option<PathBuf>) -> i32 {
    finish((|| {
        let cfg = prepare(config, overrides, seed)?;
        let report = run_experiment(
            &cfg,
            &RunOptions {
                resume,
                stop_after: None,
            },
        )?
        .expect("a run without stop_after completes");
        println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
        Ok(())
    })())
}

pub fn cmd_preprocess(config: &Path, overrides: &[Override]) -> i32 {
    finish((|| {
        let cfg = prepare(config, overrides, None)?;
        let cache = cache_dir(&cfg);
        let dataset = build_dataset(&cfg.dataset, Some(&cache))?;
        println!("record\tsubject\twindows\tcache\tkey");
        for r in dataset.records() {
            let state = if r.cache_hit { "hit" } else { "miss" };
            println!("{}\t{}\t{}\t{}\t{}", r.record_id, r.subject_id, r.windows, state, r.key);
        }
        println!("{} samples under {}", dataset.len(), cache.display());
        Ok(())
    })())
}

/// Unreadable checkpoints are data errors.
fn read_checkpoint(path: &Path) -> Result<checkpoint::Checkpoint> {
    checkpoint::load(path).map_err(|e| RunError::Inspect {
        path: path.display().to_string(),
        reason: e.to_string(),
    })
}

/// Validation and test metrics of a saved checkpoint.
pub fn evaluate_checkpoint(cfg: &ExperimentConfig, ckpt_path: &Path) -> Result<RunReport> {
    let ckpt = read_checkpoint(ckpt_path)?;
    let (dataset, splits) = load_data(cfg)?;
    let mut p = assemble(cfg, &dataset, &splits)?;
    trainer::restore(&mut p.task, &ckpt).map_err(setup)?;
    let bs = cfg.trainer.batch_size;
    let (valid_loss, valid) = split_eval(trainer::evaluate(&p.task, &StandardSteps, &p.valid, bs)?);
    let (test_loss, test) = split_eval(trainer::evaluate(&p.task, &StandardSteps, &p.test, bs)?);
    let headline = valid.as_ref().or(test.as_ref());
    Ok(RunReport {
        metrics: headline.map(|r| r.values.clone()).unwrap_or_default(),
        aggregate: headline.map(|r| r.aggregate),
        best_epoch: Some(ckpt.epoch),
        epochs: ckpt.epoch,
        samples: p.sizes,
        valid_loss,
        valid,
        test_loss,
        test,
    })
}

pub fn cmd_evaluate(config: &Path, checkpoint: &Path, overrides: &[Override]) -> i32 {
    finish((|| {
        let cfg = prepare(config, overrides, None)?;
        let report = evaluate_checkpoint(&cfg, checkpoint)?;
        println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
        Ok(())
    })())
}

fn describe_entry(dir: &Path, key: &str) -> Result<String> {
    let m = cache::load_entry(dir, key)?.ok_or_else(|| RunError::Inspect {
        path: dir.join(key).display().to_string(),
        reason: "no cache entry".into(),
    })?;
    let labels: Vec<String> = m.channel_info.iter().map(|c| c.label.clone()).collect();
    let rate = m.channel_info.first().map_or(0.0, |c| c.sampling_rate);
    let record = m.samples.first().map_or("-", |s| s.record_id.as_str());
    Ok(format!(
        "{key}\t{record}\t{} samples\t{} x {}\t{rate} Hz\t{:?}\t[{}]",
        m.sample_count,
        m.channels,
        m.length,
        m.label_kind,
        labels.join(", ")
    ))
}

fn inspect_text(path: &Path) -> Result<String> {
    if path.is_dir() {
        if path.join(cache::MANIFEST).is_file() {
            let key = path.file_name().and_then(|n| n.to_str()).unwrap_or_default();
            let parent = path.parent().unwrap_or(Path::new("."));
            return Ok(format!("cache entry\n{}", describe_entry(parent, key)?));
        }
        let mut keys: Vec<String> = std::fs::read_dir(path)
            .map_err(|e| io(path, e))?
            .filter_map(|e| e.ok())
            .filter(|e| e.path().join(cache::MANIFEST).is_file())
            .filter_map(|e| e.file_name().into_string().ok())
            .collect();
        if keys.is_empty() {
            return Err(RunError::Inspect {
                path: path.display().to_string(),
                reason: "not a cache directory".into(),
            });
        }
        keys.sort();
        let mut lines = vec![format!("cache directory with {} entries", keys.len())];
        for k in &keys {
            lines.push(describe_entry(path, k)?);
        }
        return Ok(lines.join("\n"));
    }
    let magic = std::fs::read(path).map_err(|e| RunError::Inspect {
        path: path.display().to_string(),
        reason: e.to_string(),
    })?;
    if magic.starts_with(checkpoint::MAGIC) {
        let c = read_checkpoint(path)?;
        let m = &c.model;
        return Ok(format!(
            "checkpoint after epoch {}\nmodel {} {} -> {:?} -> {} ({})\noptimizer {} at step {}\nbest {:?}",
            c.epoch, m.kind, m.input_dim, m.hidden, m.output_dim, m.activation, c.optimizer_kind, c.optimizer.step, c.best
        ));
    }
    let record = signal_io::read_record(path, None).map_err(|e| RunError::Inspect {
        path: path.display().to_string(),
        reason: e.to_string(),
    })?;
    let mut lines = vec![
        format!("record {}  subject {}  start {}", record.record_id, record.subject_id, record.start_time),
        format!("duration {:.3} s  annotations {}", record.duration(), record.annotations.len()),
        "label\tunit\trate_hz\tsamples\tphys_min\tphys_max".into(),
    ];
    for (c, d) in record.channels.iter().zip(&record.data) {
        lines.push(format!(
            "{}\t{}\t{}\t{}\t{}\t{}",
            c.label,
            c.physical_unit,
            c.sampling_rate,
            d.len(),
            c.physical_min,
            c.physical_max
        ));
    }
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for a in &record.annotations {
        *counts.entry(a.label.as_str()).or_default() += 1;
    }
    for (label, n) in counts {
        lines.push(format!("annotation {label:?}: {n}"));
    }
    Ok(lines.join("\n"))
}

pub fn cmd_inspect(path: &Path) -> i32 {
    finish(inspect_text(path).map(|text| println!("{text}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes() {
        let cfg_err = RunError::Config(ConfigError::UnknownKey("x".into()));
        assert_eq!(cfg_err.exit_code(), 1);
        assert_eq!(RunError::Invalid(vec![]).exit_code(), 1);
        let missing = DatasetError::Record {
            record_id: "r".into(),
            source: Box::new(DatasetError::Signal(signal_io::SignalIoError::TruncatedData { expected: 2, found: 1 })),
        };
        assert_eq!(RunError::Dataset(missing).exit_code(), 2);
        assert_eq!(RunError::Dataset(DatasetError::MissingLabel("r".into())).exit_code(), 1);
        assert_eq!(RunError::Training(TrainerError::NonFinite(3)).exit_code(), 3);
        assert_eq!(setup(TrainerError::ShapeMismatch("x".into())).exit_code(), 1);
    }

    #[test]
    fn inspect_rejects_unknown_files() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("notes.txt");
        std::fs::write(&p, "hello").unwrap();
        assert_eq!(cmd_inspect(&p), 2);
        assert_eq!(cmd_inspect(dir.path()), 2);
        assert_eq!(cmd_inspect(&dir.path().join("absent.ckpt")), 2);
    }
}
