//! Models, losses, optimizers and the training loop.
//!
//! A [`Task`] bundles a model with its criterion, optimizer and metric list.
//! [`fit`] drives it over pre-assembled train and validation sets through a
//! [`Steps`] implementation, so a task type can replace the per-batch logic
//! while reusing the loop, logging and checkpointing.

pub mod checkpoint;
pub mod loss;
pub mod model;
pub mod optim;

use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, DatasetError, Label};
use crate::metrics::{self, MetricError, MetricReport, Outputs};
use crate::rng::{self, RngState};
pub use checkpoint::{Best, Checkpoint};
pub use model::{Model, ModelSpec};
pub use optim::{scheduled_lr, OptimState, Optimizer, OptimizerSpec, SchedulerSpec};

#[derive(Debug, thiserror::Error)]
pub enum TrainerError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("backward called without a matching forward pass")]
    StaleCache,
    #[error("label {label} is outside 0..{classes}")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("empty batch")]
    EmptyBatch,
    #[error("unknown {section} component {name:?}")]
    UnknownComponent { section: String, name: String },
    #[error("invalid specification: {0}")]
    InvalidSpec(String),
    #[error("checkpoint version {found} is not supported (expected {supported})")]
    VersionMismatch { found: u32, supported: u32 },
    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),
    #[error("i/o failed at {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("non-finite loss at epoch {0}")]
    NonFinite(usize),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Metric(#[from] MetricError),
}

pub type Result<T> = std::result::Result<T, TrainerError>;

fn io(path: &Path, source: std::io::Error) -> TrainerError {
    TrainerError::Io {
        path: path.display().to_string(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Classification,
    Regression,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSpec {
    #[serde(rename = "type")]
    pub kind: TaskKind,
    /// `cross_entropy` for classification and `mse` for regression when absent.
    #[serde(default)]
    pub criterion: Option<String>,
    #[serde(default)]
    pub metrics: Vec<String>,
}

impl TaskSpec {
    pub fn criterion(&self) -> &str {
        match (&self.criterion, self.kind) {
            (Some(c), _) => c,
            (None, TaskKind::Classification) => "cross_entropy",
            (None, TaskKind::Regression) => "mse",
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectBy {
    /// Highest aggregate validation metric.
    #[default]
    Metric,
    /// Lowest validation loss.
    Loss,
}

fn batch_size() -> usize {
    32
}
fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainerSpec {
    pub epochs: usize,
    #[serde(default = "batch_size")]
    pub batch_size: usize,
    /// Write `checkpoints/epoch_NNNN.ckpt` every this many epochs; 0 disables.
    #[serde(default = "one")]
    pub checkpoint_interval: usize,
    #[serde(default)]
    pub select_by: SelectBy,
    #[serde(default)]
    pub eval_initial: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Targets {
    Classes(Vec<usize>),
    Values(Array2<f64>),
}

/// Inputs as rows (flattened channels × window) and their targets.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub inputs: Array2<f64>,
    pub targets: Targets,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn select(&self, rows: &[usize]) -> Batch {
        Batch {
            inputs: self.inputs.select(Axis(0), rows),
            targets: match &self.targets {
                Targets::Classes(c) => Targets::Classes(rows.iter().map(|&i| c[i]).collect()),
                Targets::Values(v) => Targets::Values(v.select(Axis(0), rows)),
            },
        }
    }

    /// Collects dataset samples into one matrix.
    pub fn from_dataset(dataset: &Dataset, indices: &[usize], kind: TaskKind) -> Result<Batch> {
        let mut rows: Vec<f64> = Vec::new();
        let mut width = None;
        let mut classes = Vec::new();
        let mut values: Vec<f64> = Vec::new();
        let mut target_width = 0;
        for &i in indices {
            let s = dataset.get_item(i)?;
            let flat: Vec<f64> = s.data.concat();
            if *width.get_or_insert(flat.len()) != flat.len() {
                return Err(TrainerError::ShapeMismatch(format!("sample {i} has {} features", flat.len())));
            }
            rows.extend(flat);
            match (kind, s.label) {
                (TaskKind::Classification, Label::Class(c)) => classes.push(c),
                (TaskKind::Regression, Label::Values(v)) => {
                    target_width = v.len();
                    values.extend(v);
                }
                _ => return Err(TrainerError::ShapeMismatch(format!("sample {i} has a label of the wrong kind"))),
            }
        }
        let n = indices.len();
        let inputs = Array2::from_shape_vec((n, width.unwrap_or(0)), rows).expect("rows have equal width");
        let targets = match kind {
            TaskKind::Classification => Targets::Classes(classes),
            TaskKind::Regression => {
                if values.len() != n * target_width {
                    return Err(TrainerError::ShapeMismatch("regression targets differ in length".into()));
                }
                Targets::Values(Array2::from_shape_vec((n, target_width), values).expect("checked above"))
            }
        };
        Ok(Batch { inputs, targets })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Criterion {
    CrossEntropy,
    Mse,
}

impl Criterion {
    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "cross_entropy" => Ok(Criterion::CrossEntropy),
            "mse" => Ok(Criterion::Mse),
            other => Err(TrainerError::UnknownComponent {
                section: "task.criterion".into(),
                name: other.into(),
            }),
        }
    }

    pub fn loss(self, outputs: &Array2<f64>, targets: &Targets) -> Result<(f64, Array2<f64>)> {
        match (self, targets) {
            (Criterion::CrossEntropy, Targets::Classes(c)) => loss::cross_entropy(outputs, c),
            (Criterion::Mse, Targets::Values(v)) => loss::mse(outputs, v),
            _ => Err(TrainerError::InvalidSpec("criterion does not fit the target kind".into())),
        }
    }
}

/// Everything a training step touches.
#[derive(Debug, Clone)]
pub struct Task {
    pub kind: TaskKind,
    pub model: Model,
    pub criterion: Criterion,
    pub optimizer: Optimizer,
    pub metrics: Vec<String>,
    /// Learning rate for the current epoch.
    pub lr: f64,
}

impl Task {
    pub fn new(task: &TaskSpec, model: &ModelSpec, optimizer: &OptimizerSpec, seed: u64) -> Result<Self> {
        let criterion = Criterion::from_name(task.criterion())?;
        match (task.kind, criterion) {
            (TaskKind::Classification, Criterion::CrossEntropy) | (TaskKind::Regression, Criterion::Mse) => {}
            _ => {
                return Err(TrainerError::InvalidSpec(format!(
                    "criterion {} does not suit a {:?} task",
                    task.criterion(),
                    task.kind
                )))
            }
        }
        for m in &task.metrics {
            if !metrics::is_known(m) {
                return Err(TrainerError::UnknownComponent {
                    section: "task.metrics".into(),
                    name: m.clone(),
                });
            }
        }
        let model = Model::init(model, &mut rng::stream(seed, rng::INIT))?;
        let optimizer = Optimizer::new(optimizer, &model.blocks())?;
        Ok(Self {
            kind: task.kind,
            lr: optimizer.spec.lr,
            model,
            criterion,
            optimizer,
            metrics: task.metrics.clone(),
        })
    }

    /// Forward, loss, backward and one optimizer update.
    pub fn train_step(&mut self, batch: &Batch) -> Result<f64> {
        if batch.is_empty() {
            return Err(TrainerError::EmptyBatch);
        }
        let out = self.model.forward(&batch.inputs)?;
        let (loss, grad) = self.criterion.loss(&out, &batch.targets)?;
        let grads = self.model.backward(&grad)?;
        let lr = self.lr;
        self.optimizer.step(&mut self.model.blocks_mut(), &grads, lr)?;
        Ok(loss)
    }

    /// Outputs and loss without changing any state.
    pub fn valid_step(&self, batch: &Batch) -> Result<(Array2<f64>, f64)> {
        let out = self.model.predict(&batch.inputs)?;
        let (loss, _) = self.criterion.loss(&out, &batch.targets)?;
        Ok((out, loss))
    }
}

/// Per-batch behaviour of a task type. The defaults run the standard
/// supervised step.
pub trait Steps {
    fn train_step(&mut self, task: &mut Task, batch: &Batch) -> Result<f64> {
        task.train_step(batch)
    }

    fn valid_step(&self, task: &Task, batch: &Batch) -> Result<(Array2<f64>, f64)> {
        task.valid_step(batch)
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct StandardSteps;

impl Steps for StandardSteps {}

/// One line of the history file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based; 0 is the optional evaluation before training.
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: Option<f64>,
    pub valid_loss: Option<f64>,
    pub metrics: BTreeMap<String, f64>,
    pub aggregate: Option<f64>,
}

/// Loss and metrics of a task over a whole set, in batches.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub loss: f64,
    pub report: Option<MetricReport>,
}

pub fn evaluate(task: &Task, steps: &dyn Steps, data: &Batch, batch_size: usize) -> Result<Option<Evaluation>> {
    if data.is_empty() {
        return Ok(None);
    }
    let mut outputs = Vec::new();
    let mut total = 0.0;
    let rows: Vec<usize> = (0..data.len()).collect();
    for chunk in rows.chunks(batch_size.max(1)) {
        let (out, loss) = steps.valid_step(task, &data.select(chunk))?;
        total += loss * chunk.len() as f64;
        outputs.push(out);
    }
    let views: Vec<_> = outputs.iter().map(|o| o.view()).collect();
    let out = ndarray::concatenate(Axis(0), &views).expect("outputs share a width");
    let loss = total / data.len() as f64;
    if task.metrics.is_empty() {
        return Ok(Some(Evaluation { loss, report: None }));
    }
    let rows_of = |a: &Array2<f64>| a.outer_iter().map(|r| r.to_vec()).collect::<Vec<_>>();
    let report = match &data.targets {
        Targets::Classes(labels) => {
            let probs = rows_of(&loss::softmax(&out));
            metrics::evaluate(&task.metrics, Outputs::Classification { probs: &probs, labels })?
        }
        Targets::Values(target) => {
            let (pred, target) = (rows_of(&out), rows_of(target));
            metrics::evaluate(&task.metrics, Outputs::Regression { pred: &pred, target: &target })?
        }
    };
    Ok(Some(Evaluation {
        loss,
        report: Some(report),
    }))
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitOptions {
    pub trainer: TrainerSpec,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub resume: Option<Checkpoint>,
    /// Return after this many completed epochs, as if interrupted.
    pub stop_after: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitOutcome {
    pub history: Vec<EpochRecord>,
    pub best: Option<Best>,
    pub completed: usize,
}

pub const HISTORY: &str = "history.jsonl";
pub const TRAIN_LOG: &str = "train.log";
pub const BEST: &str = "best.ckpt";

pub fn checkpoint_dir(out_dir: &Path) -> PathBuf {
    out_dir.join("checkpoints")
}

fn snapshot(task: &Task, epoch: usize, shuffle: &ChaCha8Rng, best: Option<Best>, history: &[EpochRecord]) -> Checkpoint {
    Checkpoint {
        epoch,
        model: task.model.spec().clone(),
        params: task.model.blocks().iter().map(|b| b.to_vec()).collect(),
        optimizer_kind: task.optimizer.spec.kind.clone(),
        optimizer: task.optimizer.state.clone(),
        scheduler: task.optimizer.spec.scheduler.clone(),
        rng: RngState::capture(shuffle),
        best,
        history: history.to_vec(),
    }
}

/// Puts a checkpoint's parameters and optimizer state into `task`.
pub fn restore(task: &mut Task, ckpt: &Checkpoint) -> Result<()> {
    if &ckpt.model != task.model.spec() {
        return Err(TrainerError::ShapeMismatch(format!(
            "checkpoint holds a {} {}→{:?}→{} model, config asks for {} {}→{:?}→{}",
            ckpt.model.kind,
            ckpt.model.input_dim,
            ckpt.model.hidden,
            ckpt.model.output_dim,
            task.model.spec().kind,
            task.model.spec().input_dim,
            task.model.spec().hidden,
            task.model.spec().output_dim
        )));
    }
    task.model.set_blocks(&ckpt.params)?;
    if ckpt.optimizer_kind == task.optimizer.spec.kind
        && ckpt.optimizer.m.len() == task.optimizer.state.m.len()
        && ckpt.optimizer.v.len() == task.optimizer.state.v.len()
    {
        task.optimizer.state = ckpt.optimizer.clone();
    } else {
        return Err(TrainerError::ShapeMismatch("checkpoint optimizer state does not fit".into()));
    }
    Ok(())
}

fn log_line(record: &EpochRecord) -> String {
    let mut fields = vec![
        chrono::Local::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, false),
        format!("epoch={}", record.epoch),
        format!("lr={:e}", record.lr),
    ];
    fields.push(match record.train_loss {
        Some(l) => format!("train_loss={l:.6}"),
        None => "train_loss=-".into(),
    });
    if let Some(l) = record.valid_loss {
        fields.push(format!("valid_loss={l:.6}"));
    }
    for (k, v) in &record.metrics {
        fields.push(format!("{k}={v:.6}"));
    }
    if let Some(a) = record.aggregate {
        fields.push(format!("aggregate={a:.6}"));
    }
    fields.join("\t")
}

struct Journal {
    log: fs::File,
    history: fs::File,
    log_path: PathBuf,
    history_path: PathBuf,
}

impl Journal {
    fn open(out_dir: &Path, existing: &[EpochRecord]) -> Result<Self> {
        fs::create_dir_all(out_dir).map_err(|e| io(out_dir, e))?;
        let history_path = out_dir.join(HISTORY);
        let log_path = out_dir.join(TRAIN_LOG);
        let mut history = fs::File::create(&history_path).map_err(|e| io(&history_path, e))?;
        for r in existing {
            writeln!(history, "{}", serde_json::to_string(r).expect("record serializes")).map_err(|e| io(&history_path, e))?;
        }
        let log = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&log_path)
            .map_err(|e| io(&log_path, e))?;
        Ok(Self {
            log,
            history,
            log_path,
            history_path,
        })
    }

    fn write(&mut self, record: &EpochRecord) -> Result<()> {
        let line = log_line(record);
        log::info!("{line}");
        writeln!(self.log, "{line}").map_err(|e| io(&self.log_path, e))?;
        writeln!(self.history, "{}", serde_json::to_string(record).expect("record serializes"))
            .map_err(|e| io(&self.history_path, e))?;
        self.history.flush().map_err(|e| io(&self.history_path, e))
    }
}

fn epoch_record(epoch: usize, lr: f64, train_loss: Option<f64>, eval: Option<&Evaluation>) -> EpochRecord {
    let report = eval.and_then(|e| e.report.as_ref());
    EpochRecord {
        epoch,
        lr,
        train_loss,
        valid_loss: eval.map(|e| e.loss),
        metrics: report.map(|r| r.values.clone()).unwrap_or_default(),
        aggregate: report.map(|r| r.aggregate),
    }
}

/// Larger is better.
fn score(select_by: SelectBy, record: &EpochRecord) -> f64 {
    let loss = record.valid_loss.or(record.train_loss).unwrap_or(f64::INFINITY);
    match (select_by, record.aggregate) {
        (SelectBy::Metric, Some(a)) => a,
        _ => -loss,
    }
}

/// Trains for the configured epochs, writing `history.jsonl`, `train.log`
/// and checkpoints under `opts.out_dir`.
pub fn fit(task: &mut Task, steps: &mut dyn Steps, train: &Batch, valid: &Batch, opts: &FitOptions) -> Result<FitOutcome> {
    let spec = &opts.trainer;
    if spec.batch_size == 0 {
        return Err(TrainerError::InvalidSpec("batch_size must be positive".into()));
    }
    let ckpt_dir = checkpoint_dir(&opts.out_dir);
    let lr0 = task.optimizer.spec.lr;
    let sched = task.optimizer.spec.scheduler.clone();

    let (mut shuffle, mut best, mut history, start) = match &opts.resume {
        Some(ckpt) => {
            restore(task, ckpt)?;
            let rng = ckpt
                .rng
                .restore()
                .ok_or_else(|| TrainerError::CorruptCheckpoint("unreadable generator state".into()))?;
            (rng, ckpt.best, ckpt.history.clone(), ckpt.epoch)
        }
        None => (rng::stream(opts.seed, rng::SHUFFLE), None, Vec::new(), 0),
    };
    let mut journal = Journal::open(&opts.out_dir, &history)?;

    if spec.eval_initial && opts.resume.is_none() {
        let eval = evaluate(task, steps, valid, spec.batch_size)?;
        let record = epoch_record(0, scheduled_lr(lr0, &sched, spec.epochs, 0), None, eval.as_ref());
        journal.write(&record)?;
        history.push(record);
    }

    let mut completed = start;
    for e in start..spec.epochs {
        if opts.stop_after.is_some_and(|k| completed >= k) {
            break;
        }
        task.lr = scheduled_lr(lr0, &sched, spec.epochs, e);
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut shuffle);
        let mut total = 0.0;
        for chunk in order.chunks(spec.batch_size) {
            match steps.train_step(task, &train.select(chunk)) {
                Ok(loss) => total += loss * chunk.len() as f64,
                Err(err) => {
                    let abort = snapshot(task, completed, &shuffle, best, &history);
                    if let Err(e2) = checkpoint::save(&abort, task.model.block_info(), &ckpt_dir.join("abort.ckpt")) {
                        log::error!("could not write abort checkpoint: {e2}");
                    }
                    return Err(err);
                }
            }
        }
        let train_loss = if train.is_empty() { None } else { Some(total / train.len() as f64) };
        if train_loss.is_some_and(|l| !l.is_finite()) {
            return Err(TrainerError::NonFinite(e + 1));
        }
        let eval = evaluate(task, steps, valid, spec.batch_size)?;
        let record = epoch_record(e + 1, task.lr, train_loss, eval.as_ref());
        journal.write(&record)?;
        let s = score(spec.select_by, &record);
        history.push(record);
        completed = e + 1;

        let improved = best.is_none_or(|b| s > b.score);
        if improved {
            best = Some(Best { epoch: completed, score: s });
        }
        let ckpt = snapshot(task, completed, &shuffle, best, &history);
        if spec.checkpoint_interval > 0 && completed % spec.checkpoint_interval == 0 {
            checkpoint::save(&ckpt, task.model.block_info(), &ckpt_dir.join(format!("epoch_{completed:04}.ckpt")))?;
        }
        if improved {
            checkpoint::save(&ckpt, task.model.block_info(), &ckpt_dir.join(BEST))?;
        }
    }
    Ok(FitOutcome {
        history,
        best,
        completed,
    })
}
