//! Records to labeled samples: epoching, the on-disk sample cache, retrieval
//! and train/valid/test splits.

pub mod cache;
mod epoch;
mod split;

use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use epoch::{epoch_record, window_count, EpochSpec, LabelScheme};
pub use split::{split, split_groups, Fractions, SplitMode, SplitSpec, Splits};

use crate::signal_io::{self, ChannelInfo, Format, ReadOptions, SignalIoError};
use crate::transforms::{compile_pipeline, Pipeline, Signal, SignalMut, Stage, TransformError, TransformSpec};
use cache::{Creation, Manifest};

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("invalid epoch: {0}")]
    InvalidEpoch(String),
    #[error("channels have mixed sampling rates: {0}")]
    MixedRates(String),
    #[error("window of {window} s is longer than the record ({duration} s)")]
    WindowTooLong { window: f64, duration: f64 },
    #[error("target channel {0:?} not found")]
    MissingTargetChannel(String),
    #[error(transparent)]
    Signal(#[from] SignalIoError),
    #[error(transparent)]
    Transform(#[from] TransformError),
    #[error("record {record_id}: {source}")]
    Record {
        record_id: String,
        #[source]
        source: Box<DatasetError>,
    },
    #[error("cache entry {key} is corrupt: {reason}")]
    CacheCorrupt { key: String, reason: String },
    #[error("cache i/o failed at {path}: {source}")]
    CacheIo {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("index {index} is out of range for {len} samples")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("split needs at least {needed} groups but the dataset has {found}")]
    InsufficientGroups { needed: usize, found: usize },
    #[error("invalid split: {0}")]
    InvalidSplit(String),
    #[error("record {0} has no label")]
    MissingLabel(String),
    #[error("unknown class {0:?}")]
    UnknownClass(String),
    #[error("invalid dataset section: {0}")]
    InvalidConfig(String),
}

impl DatasetError {
    /// The underlying error with any per-record context removed.
    pub fn root(&self) -> &DatasetError {
        match self {
            DatasetError::Record { source, .. } => source.root(),
            other => other,
        }
    }
}

pub type Result<T> = std::result::Result<T, DatasetError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Class(usize),
    Values(Vec<f64>),
}

/// One model input: a channels × window matrix and its label.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub data: Vec<Vec<f64>>,
    pub channels: Vec<ChannelInfo>,
    pub label: Label,
    pub subject_id: String,
    pub record_id: String,
    pub window_index: usize,
}

impl Signal for Sample {
    fn signal_mut(&mut self) -> SignalMut<'_> {
        SignalMut {
            channels: &mut self.channels,
            data: &mut self.data,
            annotations: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ClassRef {
    Index(usize),
    Name(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceEntry {
    pub path: PathBuf,
    #[serde(default)]
    pub subject_id: Option<String>,
    #[serde(default)]
    pub record_id: Option<String>,
    #[serde(default)]
    pub label: Option<ClassRef>,
}

/// A bare path or a path with identity and label overrides.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Source {
    Path(PathBuf),
    Entry(SourceEntry),
}

impl Source {
    pub fn entry(&self) -> SourceEntry {
        match self {
            Source::Path(p) => SourceEntry {
                path: p.clone(),
                subject_id: None,
                record_id: None,
                label: None,
            },
            Source::Entry(e) => e.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchemeKind {
    #[default]
    PerRecord,
    PerEvent,
    Regression,
}

/// The `dataset` section of an experiment config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    /// `edf`, `bdf`, `csv` or a registered identifier; detected per file when absent.
    #[serde(default)]
    pub format: Option<String>,
    pub paths: Vec<Source>,
    /// Sampling rate for CSV sources.
    #[serde(default)]
    pub sampling_rate: Option<f64>,
    #[serde(default)]
    pub offline_transforms: Vec<TransformSpec>,
    #[serde(default)]
    pub online_transforms: Vec<TransformSpec>,
    pub epoch: EpochSpec,
    #[serde(default)]
    pub label_scheme: SchemeKind,
    /// Class names; label indices refer to positions in this list.
    #[serde(default)]
    pub classes: Vec<String>,
    #[serde(default)]
    pub target_channel: Option<String>,
    #[serde(default)]
    pub split: SplitSpec,
    #[serde(default)]
    pub cache_dir: Option<PathBuf>,
}

impl DatasetConfig {
    pub fn format(&self) -> Result<Option<Format>> {
        self.format
            .as_deref()
            .map(|f| f.parse::<Format>().map_err(DatasetError::from))
            .transpose()
    }

    pub fn offline_pipeline(&self) -> Result<Pipeline> {
        Ok(compile_pipeline(&self.offline_transforms, Stage::Offline)?)
    }

    pub fn online_pipeline(&self) -> Result<Pipeline> {
        Ok(compile_pipeline(&self.online_transforms, Stage::Online)?)
    }

    /// Number of classes for classification schemes.
    pub fn class_count(&self) -> Option<usize> {
        (!self.classes.is_empty()).then_some(self.classes.len())
    }

    fn resolve_class(&self, class: &ClassRef) -> Result<usize> {
        match class {
            ClassRef::Index(i) if self.classes.is_empty() || *i < self.classes.len() => Ok(*i),
            ClassRef::Index(i) => Err(DatasetError::UnknownClass(i.to_string())),
            ClassRef::Name(name) => self
                .classes
                .iter()
                .position(|c| c == name)
                .ok_or_else(|| DatasetError::UnknownClass(name.clone())),
        }
    }

    fn scheme_for(&self, entry: &SourceEntry, record_id: &str) -> Result<LabelScheme> {
        match self.label_scheme {
            SchemeKind::PerRecord => {
                let class = entry
                    .label
                    .as_ref()
                    .ok_or_else(|| DatasetError::MissingLabel(record_id.to_string()))?;
                Ok(LabelScheme::PerRecord(self.resolve_class(class)?))
            }
            SchemeKind::PerEvent => {
                if self.classes.is_empty() {
                    return Err(DatasetError::InvalidConfig("per_event labels need a class list".into()));
                }
                Ok(LabelScheme::PerEvent {
                    classes: self.classes.clone(),
                })
            }
            SchemeKind::Regression => Ok(LabelScheme::Regression {
                target_channel: self
                    .target_channel
                    .clone()
                    .ok_or_else(|| DatasetError::InvalidConfig("regression needs target_channel".into()))?,
            }),
        }
    }
}

/// What happened to one source during `build_dataset`.
#[derive(Debug, Clone, PartialEq)]
pub struct RecordSummary {
    pub record_id: String,
    pub subject_id: String,
    pub windows: usize,
    /// Empty when the cache is disabled.
    pub key: String,
    pub cache_hit: bool,
}

#[derive(Debug, Clone)]
enum Payload {
    Memory(Arc<Vec<Vec<f64>>>),
    Block { dir: Arc<PathBuf>, manifest: Arc<Manifest>, index: usize },
}

#[derive(Debug, Clone)]
struct Item {
    subject_id: String,
    record_id: String,
    window_index: usize,
    label: Label,
    channels: Arc<Vec<ChannelInfo>>,
    payload: Payload,
}

/// Handle over every sample of a configured dataset.
#[derive(Debug, Clone)]
pub struct Dataset {
    items: Vec<Item>,
    online: Pipeline,
    summary: Vec<RecordSummary>,
}

fn with_record<T>(record_id: &str, r: Result<T>) -> Result<T> {
    r.map_err(|e| DatasetError::Record {
        record_id: record_id.to_string(),
        source: Box::new(e),
    })
}

fn quantize(samples: &mut [Sample]) {
    for s in samples {
        for row in &mut s.data {
            for v in row {
                *v = *v as f32 as f64;
            }
        }
        if let Label::Values(values) = &mut s.label {
            for v in values {
                *v = *v as f32 as f64;
            }
        }
    }
}

fn source_digest(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| signal_io::io_err(path, e))?;
    Ok(cache::sha256_hex(&bytes))
}

fn provenance(cfg: &DatasetConfig, entry: &SourceEntry, scheme: &LabelScheme) -> String {
    format!(
        "format={:?};rate={:?};subject={:?};record={:?};labels={}",
        cfg.format,
        cfg.sampling_rate,
        entry.subject_id,
        entry.record_id,
        scheme.canonical()
    )
}

/// Fallback identifier before the file has been parsed.
fn provisional_id(entry: &SourceEntry) -> String {
    entry
        .record_id
        .clone()
        .unwrap_or_else(|| signal_io::file_stem(&entry.path))
}

fn process_source(
    cfg: &DatasetConfig,
    entry: &SourceEntry,
    offline: &Pipeline,
    cache_root: Option<&Path>,
) -> Result<(RecordSummary, Vec<Item>)> {
    let id = provisional_id(entry);
    let scheme = cfg.scheme_for(entry, &id)?;
    let epoch = cfg.epoch.canonical();

    let key = match cache_root {
        Some(_) => {
            let digest = source_digest(&entry.path)?;
            cache::cache_key(&digest, &offline.canonical(), &epoch, &provenance(cfg, entry, &scheme))
        }
        None => String::new(),
    };
    if let Some(root) = cache_root {
        if let Some(manifest) = cache::load_entry(root, &key)? {
            let summary = RecordSummary {
                record_id: manifest.samples.first().map_or(id.clone(), |s| s.record_id.clone()),
                subject_id: manifest.samples.first().map_or_else(String::new, |s| s.subject_id.clone()),
                windows: manifest.sample_count,
                key: key.clone(),
                cache_hit: true,
            };
            return Ok((summary, block_items(root, manifest)));
        }
    }

    let options = ReadOptions {
        format: cfg.format()?,
        sampling_rate: cfg.sampling_rate,
    };
    let mut record = signal_io::read_record_with(&entry.path, &options)?;
    if let Some(r) = &entry.record_id {
        record.record_id = r.clone();
    }
    if let Some(s) = &entry.subject_id {
        record.subject_id = s.clone();
    }
    if record.subject_id.is_empty() {
        record.subject_id = record.record_id.clone();
    }
    let record = offline.apply(&record)?;
    let mut samples = epoch_record(&record, &cfg.epoch, &scheme)?;
    quantize(&mut samples);

    let mut summary = RecordSummary {
        record_id: record.record_id.clone(),
        subject_id: record.subject_id.clone(),
        windows: samples.len(),
        key: key.clone(),
        cache_hit: false,
    };
    match cache_root {
        Some(root) => {
            let created = Creation::new(&entry.path, &offline.canonical(), &epoch);
            let manifest = cache::write_entry(root, &key, &samples, created)?;
            summary.windows = manifest.sample_count;
            Ok((summary, block_items(root, manifest)))
        }
        None => Ok((summary, memory_items(samples))),
    }
}

fn block_items(root: &Path, manifest: Manifest) -> Vec<Item> {
    let dir = Arc::new(cache::entry_dir(root, &manifest.key));
    let channels = Arc::new(manifest.channel_info.clone());
    let manifest = Arc::new(manifest);
    manifest
        .samples
        .iter()
        .enumerate()
        .map(|(index, s)| Item {
            subject_id: s.subject_id.clone(),
            record_id: s.record_id.clone(),
            window_index: s.window_index,
            label: s.label.clone(),
            channels: channels.clone(),
            payload: Payload::Block {
                dir: dir.clone(),
                manifest: manifest.clone(),
                index,
            },
        })
        .collect()
}

fn memory_items(samples: Vec<Sample>) -> Vec<Item> {
    samples
        .into_iter()
        .map(|s| Item {
            subject_id: s.subject_id,
            record_id: s.record_id,
            window_index: s.window_index,
            label: s.label,
            channels: Arc::new(s.channels),
            payload: Payload::Memory(Arc::new(s.data)),
        })
        .collect()
}

/// Reads, preprocesses and epochs every source, reusing cache entries under
/// `cache_root` when present. `None` keeps all samples in memory.
pub fn build_dataset(cfg: &DatasetConfig, cache_root: Option<&Path>) -> Result<Dataset> {
    let offline = cfg.offline_pipeline()?;
    let online = cfg.online_pipeline()?;
    let entries: Vec<SourceEntry> = cfg.paths.iter().map(Source::entry).collect();
    let results: Vec<Result<(RecordSummary, Vec<Item>)>> = entries
        .par_iter()
        .map(|entry| with_record(&provisional_id(entry), process_source(cfg, entry, &offline, cache_root)))
        .collect();

    let mut items = Vec::new();
    let mut summary = Vec::with_capacity(results.len());
    for r in results {
        let (s, mut it) = r?;
        log::debug!("{}: {} windows, cache {}", s.record_id, s.windows, if s.cache_hit { "hit" } else { "miss" });
        summary.push(s);
        items.append(&mut it);
    }
    Ok(Dataset { items, online, summary })
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn records(&self) -> &[RecordSummary] {
        &self.summary
    }

    fn item(&self, index: usize) -> Result<&Item> {
        self.items.get(index).ok_or(DatasetError::IndexOutOfRange {
            index,
            len: self.items.len(),
        })
    }

    pub fn subject_id(&self, index: usize) -> Result<&str> {
        Ok(&self.item(index)?.subject_id)
    }

    pub fn record_id(&self, index: usize) -> Result<&str> {
        Ok(&self.item(index)?.record_id)
    }

    pub fn label(&self, index: usize) -> Result<&Label> {
        Ok(&self.item(index)?.label)
    }

    /// The stored offline sample, before the online pipeline.
    pub fn get_offline(&self, index: usize) -> Result<Sample> {
        let item = self.item(index)?;
        let data = match &item.payload {
            Payload::Memory(data) => data.as_ref().clone(),
            Payload::Block { dir, manifest, index } => cache::read_block(dir, &manifest.samples[*index], manifest)?,
        };
        Ok(Sample {
            data,
            channels: item.channels.as_ref().clone(),
            label: item.label.clone(),
            subject_id: item.subject_id.clone(),
            record_id: item.record_id.clone(),
            window_index: item.window_index,
        })
    }

    /// The sample at `index` with the online pipeline applied.
    pub fn get_item(&self, index: usize) -> Result<Sample> {
        let sample = self.get_offline(index)?;
        if self.online.is_empty() {
            return Ok(sample);
        }
        Ok(self.online.apply(&sample)?)
    }
}

#[cfg(test)]
mod tests;
