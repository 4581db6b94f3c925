//! Experiment configuration.
//!
//! One YAML document with the sections `common`, `dataset`, `model`,
//! `optimizer`, `task`, `trainer` and `distributed`. Only plain data is
//! accepted: mappings, sequences and scalars. Anchors, aliases, tags and
//! multiple documents are rejected, as are duplicate or unknown keys.
//!
//! ```yaml
//! common: {seed: 7, output_dir: runs/demo}
//! dataset:
//!   paths: [{path: a.edf, label: 0}, {path: b.edf, label: 1}]
//!   offline_transforms: [{name: bandpass, low: 1, high: 40}]
//!   epoch: {window: 2, stride: 1}
//! model: {kind: mlp, input_dim: 512, output_dim: 2, hidden: [32]}
//! optimizer: {kind: adam, lr: 0.001}
//! task: {type: classification, metrics: [accuracy]}
//! trainer: {epochs: 20}
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Deserializer, Serialize};
use serde_json::{Map, Number, Value};
use yaml_rust2::parser::{Event, Parser};
use yaml_rust2::scanner::{Marker, TScalarStyle};

use crate::dataset::{DatasetConfig, SchemeKind};
use crate::metrics;
use crate::signal_io::{self, Format};
use crate::trainer::{ModelSpec, OptimizerSpec, TaskKind, TaskSpec, TrainerSpec};
use crate::transforms::{compile_pipeline, Stage};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("syntax error at line {line}, column {col}: {message}")]
    Syntax { line: usize, col: usize, message: String },
    #[error("schema error at {path}: {reason}")]
    Schema { path: String, reason: String },
    #[error("override targets unknown key {0}")]
    UnknownKey(String),
    #[error("override of {path} has the wrong type: {reason}")]
    TypeMismatch { path: String, reason: String },
    #[error("malformed override {0:?}; expected key.path=value")]
    BadOverride(String),
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, ConfigError>;

fn output_dir() -> PathBuf {
    PathBuf::from("output")
}
fn log_level() -> String {
    "info".into()
}

pub const LOG_LEVELS: [&str; 6] = ["off", "error", "warn", "info", "debug", "trace"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CommonConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "output_dir")]
    pub output_dir: PathBuf,
    #[serde(default = "log_level")]
    pub log_level: String,
}

impl Default for CommonConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            output_dir: output_dir(),
            log_level: log_level(),
        }
    }
}

fn present<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Option<Value>, D::Error> {
    Value::deserialize(d).map(Some)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub common: CommonConfig,
    pub dataset: DatasetConfig,
    pub model: ModelSpec,
    pub optimizer: OptimizerSpec,
    pub task: TaskSpec,
    pub trainer: TrainerSpec,
    /// Accepted for compatibility and otherwise ignored.
    #[serde(default, deserialize_with = "present", skip_serializing_if = "Option::is_none")]
    pub distributed: Option<Value>,
}

impl ExperimentConfig {
    /// Non-fatal remarks about the configuration.
    pub fn warnings(&self) -> Vec<String> {
        match self.distributed {
            Some(_) => vec!["the distributed section is ignored; training runs in a single process".into()],
            None => vec![],
        }
    }

    pub fn to_value(&self) -> Value {
        serde_json::to_value(self).expect("config serializes")
    }

    pub fn to_yaml(&self) -> String {
        emit_yaml(&self.to_value())
    }
}

// ---------------------------------------------------------------- reading

fn syntax(mark: &Marker, message: impl Into<String>) -> ConfigError {
    ConfigError::Syntax {
        line: mark.line(),
        col: mark.col() + 1,
        message: message.into(),
    }
}

fn is_int(s: &str) -> bool {
    let digits = s.strip_prefix(['-', '+']).unwrap_or(s);
    !digits.is_empty() && digits.bytes().all(|b| b.is_ascii_digit())
}

fn is_float(s: &str) -> bool {
    let body = s.strip_prefix(['-', '+']).unwrap_or(s);
    let (mantissa, exponent) = match body.find(['e', 'E']) {
        Some(i) => (&body[..i], Some(&body[i + 1..])),
        None => (body, None),
    };
    let (int, frac) = match mantissa.split_once('.') {
        Some((a, b)) => (a, Some(b)),
        None => (mantissa, None),
    };
    let digits = |x: &str| x.bytes().all(|b| b.is_ascii_digit());
    let mantissa_ok = digits(int) && frac.is_none_or(digits) && (int.len() + frac.map_or(0, str::len)) > 0;
    let exponent_ok = exponent.is_none_or(|e| is_int(e));
    mantissa_ok && exponent_ok && (frac.is_some() || exponent.is_some())
}

/// Types a plain (unquoted) scalar: null, bool, integer, float or text.
pub fn plain_scalar(s: &str) -> Value {
    match s {
        "" | "~" | "null" | "Null" | "NULL" => return Value::Null,
        "true" | "True" | "TRUE" => return Value::Bool(true),
        "false" | "False" | "FALSE" => return Value::Bool(false),
        _ => {}
    }
    if is_int(s) {
        if let Ok(v) = s.parse::<i64>() {
            return Value::Number(v.into());
        }
        if let Ok(v) = s.parse::<u64>() {
            return Value::Number(v.into());
        }
    }
    if is_float(s) {
        if let Some(n) = s.parse::<f64>().ok().and_then(Number::from_f64) {
            return Value::Number(n);
        }
    }
    Value::String(s.to_string())
}

enum Frame {
    Seq(Vec<Value>),
    Map(Map<String, Value>, Option<String>),
}

/// Parses the restricted YAML subset into a JSON value.
pub fn parse_yaml(text: &str) -> Result<Value> {
    let mut parser = Parser::new_from_str(text);
    let mut stack: Vec<Frame> = Vec::new();
    let mut root: Option<Value> = None;
    let mut documents = 0;
    loop {
        let (event, mark) = parser.next_token().map_err(|e| syntax(e.marker(), e.info()))?;
        let finished = match event {
            Event::StreamEnd => break,
            Event::StreamStart | Event::DocumentEnd | Event::Nothing => continue,
            Event::DocumentStart => {
                documents += 1;
                if documents > 1 {
                    return Err(syntax(&mark, "only one document is allowed"));
                }
                continue;
            }
            Event::Alias(_) => return Err(syntax(&mark, "aliases are not supported")),
            Event::Scalar(_, _, anchor, _) | Event::SequenceStart(anchor, _) | Event::MappingStart(anchor, _)
                if anchor != 0 =>
            {
                return Err(syntax(&mark, "anchors are not supported"))
            }
            Event::Scalar(_, _, _, Some(_)) | Event::SequenceStart(_, Some(_)) | Event::MappingStart(_, Some(_)) => {
                return Err(syntax(&mark, "tags are not supported"))
            }
            Event::SequenceStart(..) => {
                stack.push(Frame::Seq(Vec::new()));
                continue;
            }
            Event::MappingStart(..) => {
                stack.push(Frame::Map(Map::new(), None));
                continue;
            }
            Event::SequenceEnd => match stack.pop() {
                Some(Frame::Seq(items)) => Value::Array(items),
                _ => return Err(syntax(&mark, "unbalanced sequence")),
            },
            Event::MappingEnd => match stack.pop() {
                Some(Frame::Map(map, None)) => Value::Object(map),
                _ => return Err(syntax(&mark, "unbalanced mapping")),
            },
            Event::Scalar(text, style, _, None) => {
                let is_key = matches!(stack.last(), Some(Frame::Map(_, None)));
                if is_key {
                    if let Some(Frame::Map(map, pending)) = stack.last_mut() {
                        if map.contains_key(&text) {
                            return Err(syntax(&mark, format!("duplicate key {text:?}")));
                        }
                        *pending = Some(text);
                    }
                    continue;
                }
                match style {
                    TScalarStyle::Plain => plain_scalar(&text),
                    _ => Value::String(text),
                }
            }
        };
        match stack.last_mut() {
            Some(Frame::Seq(items)) => items.push(finished),
            Some(Frame::Map(map, pending)) => {
                let key = pending.take().ok_or_else(|| syntax(&mark, "mapping keys must be scalars"))?;
                map.insert(key, finished);
            }
            None => root = Some(finished),
        }
    }
    root.ok_or_else(|| ConfigError::Syntax {
        line: 1,
        col: 1,
        message: "the document is empty".into(),
    })
}

fn from_value(value: Value) -> Result<ExperimentConfig> {
    serde_path_to_error::deserialize(value).map_err(|e| {
        let path = e.path().to_string();
        ConfigError::Schema {
            path: if path == "." { "<top level>".into() } else { path },
            reason: e.into_inner().to_string(),
        }
    })
}

pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let value = parse_yaml(text)?;
    if !value.is_object() {
        return Err(ConfigError::Schema {
            path: "<top level>".into(),
            reason: "the document must be a mapping of sections".into(),
        });
    }
    from_value(value)
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_config(&text)
}

// ---------------------------------------------------------------- overrides

/// `key.path=value`; numeric segments index into lists.
#[derive(Debug, Clone, PartialEq)]
pub struct Override {
    pub path: Vec<String>,
    pub value: Value,
}

impl std::str::FromStr for Override {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self> {
        let (path, raw) = s.split_once('=').ok_or_else(|| ConfigError::BadOverride(s.into()))?;
        let path: Vec<String> = path.trim().split('.').map(str::to_string).collect();
        if path.iter().any(String::is_empty) {
            return Err(ConfigError::BadOverride(s.into()));
        }
        let raw = raw.trim();
        let value = if raw.starts_with('[') || raw.starts_with('{') || raw.starts_with('"') || raw.starts_with('\'') {
            parse_yaml(raw).map_err(|_| ConfigError::BadOverride(s.into()))?
        } else {
            plain_scalar(raw)
        };
        Ok(Override { path, value })
    }
}

impl Override {
    pub fn new(path: &str, value: Value) -> Self {
        Self {
            path: path.split('.').map(str::to_string).collect(),
            value,
        }
    }

    pub fn dotted(&self) -> String {
        self.path.join(".")
    }
}

fn slot<'a>(root: &'a mut Value, path: &[String]) -> Option<&'a mut Value> {
    let mut cur = root;
    for key in path {
        cur = match cur {
            Value::Object(map) => map.get_mut(key)?,
            Value::Array(items) => items.get_mut(key.parse::<usize>().ok()?)?,
            _ => return None,
        };
    }
    Some(cur)
}

/// Applies overrides in order; later ones win. Every key must already exist
/// once defaults are filled in.
pub fn apply_overrides(config: &ExperimentConfig, overrides: &[Override]) -> Result<ExperimentConfig> {
    let mut current = config.clone();
    for o in overrides {
        let mut value = current.to_value();
        let target = slot(&mut value, &o.path).ok_or_else(|| ConfigError::UnknownKey(o.dotted()))?;
        *target = o.value.clone();
        current = from_value(value).map_err(|e| ConfigError::TypeMismatch {
            path: o.dotted(),
            reason: match e {
                ConfigError::Schema { reason, .. } => reason,
                other => other.to_string(),
            },
        })?;
    }
    Ok(current)
}

// ---------------------------------------------------------------- writing

fn needs_quotes(s: &str) -> bool {
    if plain_scalar(s) != Value::String(s.to_string()) {
        return true;
    }
    let first_ok = s.chars().next().is_some_and(|c| c.is_ascii_alphanumeric() || "_./".contains(c));
    let chars_ok = s.chars().all(|c| c.is_ascii_alphanumeric() || "_./-+ ()".contains(c));
    !(first_ok && chars_ok) || s.ends_with(' ')
}

fn scalar(v: &Value) -> String {
    match v {
        Value::Null => "null".into(),
        Value::Bool(b) => b.to_string(),
        Value::Number(n) => n.to_string(),
        Value::String(s) if needs_quotes(s) => serde_json::to_string(s).expect("string serializes"),
        Value::String(s) => s.clone(),
        Value::Array(_) => "[]".into(),
        Value::Object(_) => "{}".into(),
    }
}

fn is_block(v: &Value) -> bool {
    match v {
        Value::Array(a) => !a.is_empty(),
        Value::Object(m) => !m.is_empty(),
        _ => false,
    }
}

fn emit(v: &Value, indent: usize, out: &mut String) {
    let pad = " ".repeat(indent);
    match v {
        Value::Object(map) => {
            for (k, child) in map {
                let key = scalar(&Value::String(k.clone()));
                if is_block(child) {
                    out.push_str(&format!("{pad}{key}:\n"));
                    emit(child, indent + 2, out);
                } else {
                    out.push_str(&format!("{pad}{key}: {}\n", scalar(child)));
                }
            }
        }
        Value::Array(items) => {
            for item in items {
                if is_block(item) {
                    let mut nested = String::new();
                    emit(item, indent + 2, &mut nested);
                    // the first line moves up beside the dash
                    out.push_str(&format!("{pad}- {}", &nested[indent + 2..]));
                } else {
                    out.push_str(&format!("{pad}- {}\n", scalar(item)));
                }
            }
        }
        other => out.push_str(&format!("{pad}{}\n", scalar(other))),
    }
}

/// Block-style YAML that [`parse_yaml`] reads back to the same value.
pub fn emit_yaml(v: &Value) -> String {
    let mut out = String::new();
    emit(v, 0, &mut out);
    out
}

// ---------------------------------------------------------------- validation

/// One problem found by [`validate`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Issue {
    pub path: String,
    pub message: String,
}

impl std::fmt::Display for Issue {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

/// The sampling rate windows will be cut at, when the config pins it.
fn epoch_rate(cfg: &ExperimentConfig) -> Option<f64> {
    cfg.dataset
        .offline_transforms
        .iter()
        .rev()
        .find(|t| t.name == "resample")
        .and_then(|t| t.params.get("target_rate").and_then(Value::as_f64))
        .or(cfg.dataset.sampling_rate)
}

/// Every problem that can be found without touching the data.
pub fn validate(cfg: &ExperimentConfig) -> Vec<Issue> {
    let mut issues = Vec::new();
    let mut add = |path: &str, message: String| {
        issues.push(Issue {
            path: path.into(),
            message,
        })
    };

    if !LOG_LEVELS.contains(&cfg.common.log_level.as_str()) {
        add("common.log_level", format!("unknown level {:?}", cfg.common.log_level));
    }

    let ds = &cfg.dataset;
    if ds.paths.is_empty() {
        add("dataset.paths", "no sources listed".into());
    }
    if let Some(f) = &ds.format {
        match f.parse::<Format>() {
            Ok(format) if signal_io::is_registered(&format) => {}
            _ => add("dataset.format", format!("unknown format {f:?}")),
        }
    }
    for (stage, specs, path) in [
        (Stage::Offline, &ds.offline_transforms, "dataset.offline_transforms"),
        (Stage::Online, &ds.online_transforms, "dataset.online_transforms"),
    ] {
        if let Err(e) = compile_pipeline(specs, stage) {
            add(path, e.to_string());
        }
    }
    let (w, s) = (ds.epoch.window, ds.epoch.stride);
    if !(w > 0.0 && w.is_finite() && s > 0.0 && s.is_finite()) {
        add("dataset.epoch", format!("window {w} and stride {s} must be positive"));
    } else if let Some(rate) = epoch_rate(cfg) {
        if let Err(e) = ds.epoch.samples(rate) {
            add("dataset.epoch", e.to_string());
        }
    }
    if let Err(e) = ds.split.fractions.validate() {
        add("dataset.split.fractions", e.to_string());
    }
    match ds.label_scheme {
        SchemeKind::PerEvent if ds.classes.is_empty() => add("dataset.classes", "per_event labels need a class list".into()),
        SchemeKind::Regression if ds.target_channel.is_none() => {
            add("dataset.target_channel", "regression needs a target channel".into())
        }
        _ => {}
    }
    let regression_scheme = ds.label_scheme == SchemeKind::Regression;
    if regression_scheme != (cfg.task.kind == TaskKind::Regression) {
        add("task.type", format!("{:?} task with {:?} labels", cfg.task.kind, ds.label_scheme));
    }
    if cfg.task.kind == TaskKind::Classification && !ds.classes.is_empty() && ds.classes.len() != cfg.model.output_dim {
        add(
            "model.output_dim",
            format!("{} outputs for {} classes", cfg.model.output_dim, ds.classes.len()),
        );
    }

    if let Err(e) = cfg.model.check() {
        add("model", e.to_string());
    }
    if let Err(e) = cfg.optimizer.check() {
        add("optimizer", e.to_string());
    }

    let criterion = cfg.task.criterion();
    match (cfg.task.kind, criterion) {
        (TaskKind::Classification, "cross_entropy") | (TaskKind::Regression, "mse") => {}
        (_, c) if crate::trainer::loss::CRITERIA.contains(&c) => {
            add("task.criterion", format!("{c} does not suit a {:?} task", cfg.task.kind))
        }
        (_, c) => add("task.criterion", format!("unknown criterion {c:?}")),
    }
    for (i, m) in cfg.task.metrics.iter().enumerate() {
        let path = format!("task.metrics.{i}");
        let fits = match cfg.task.kind {
            TaskKind::Classification => metrics::CLASSIFICATION.contains(&m.as_str()),
            TaskKind::Regression => metrics::REGRESSION.contains(&m.as_str()),
        };
        if !metrics::is_known(m) {
            add(&path, format!("unknown metric {m:?}"));
        } else if !fits {
            add(&path, format!("{m} does not apply to a {:?} task", cfg.task.kind));
        } else if metrics::binary_only(m) && cfg.model.output_dim != 2 {
            add(&path, format!("{m} needs binary classification, model has {} outputs", cfg.model.output_dim));
        }
    }

    if cfg.trainer.batch_size == 0 {
        add("trainer.batch_size", "must be positive".into());
    }
    issues
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    pub const MINIMAL: &str = "\
dataset:
  paths:
    - {path: a.edf, label: 0}
  epoch: {window: 2, stride: 1}
model: {kind: linear, input_dim: 512, output_dim: 2}
optimizer: {lr: 0.001}
task: {type: classification, metrics: [accuracy]}
trainer: {epochs: 3}
";

    #[test]
    fn minimal_config_fills_defaults() {
        let c = parse_config(MINIMAL).unwrap();
        assert_eq!(c.common, CommonConfig::default());
        assert_eq!(c.optimizer.kind, "adam");
        assert_eq!(c.optimizer.beta2, 0.999);
        assert_eq!(c.trainer.batch_size, 32);
        assert_eq!(c.model.activation, "relu");
        assert_eq!(c.dataset.epoch.window, 2.0);
        assert!(c.distributed.is_none() && c.warnings().is_empty());
        assert!(validate(&c).is_empty(), "{:?}", validate(&c));
    }

    #[test]
    fn schema_errors_carry_paths() {
        let bad = MINIMAL.replace("dataset:", "datasets:");
        match parse_config(&bad) {
            Err(ConfigError::Schema { path, reason }) => {
                // the offending key sits directly under the root
                assert_eq!(path, "datasets");
                assert!(reason.contains("unknown field"));
            }
            other => panic!("{other:?}"),
        }
        let bad = MINIMAL.replace("lr: 0.001", "lr: abc");
        match parse_config(&bad) {
            Err(ConfigError::Schema { path, .. }) => assert_eq!(path, "optimizer.lr"),
            other => panic!("{other:?}"),
        }
        let bad = MINIMAL.replace("epochs: 3", "epochs: 3, patience: 2");
        assert!(matches!(parse_config(&bad), Err(ConfigError::Schema { path, .. }) if path == "trainer.patience"));
    }

    #[test]
    fn unsupported_yaml_is_a_syntax_error() {
        for (text, line) in [
            ("a: &x 1\nb: *x\n", 1),
            ("a: !!str 1\n", 1),
            ("a: 1\n---\nb: 2\n", 2),
            ("a: 1\na: 2\n", 2),
            ("a: [1, 2\n", 2),
            ("", 1),
        ] {
            match parse_yaml(text) {
                Err(ConfigError::Syntax { line: l, .. }) => assert_eq!(l, line, "{text:?}"),
                other => panic!("{text:?} gave {other:?}"),
            }
        }
    }

    #[test]
    fn scalar_rules() {
        assert_eq!(plain_scalar("12"), Value::from(12));
        assert_eq!(plain_scalar("-3"), Value::from(-3));
        assert_eq!(plain_scalar("0.5"), Value::from(0.5));
        assert_eq!(plain_scalar("1e-3"), Value::from(1e-3));
        assert_eq!(plain_scalar("2."), Value::from(2.0));
        assert_eq!(plain_scalar("true"), Value::Bool(true));
        assert_eq!(plain_scalar("~"), Value::Null);
        assert_eq!(plain_scalar("1.2.3"), Value::from("1.2.3"));
        assert_eq!(plain_scalar("e5"), Value::from("e5"));
        assert_eq!(plain_scalar(".inf"), Value::from(".inf"));
        let v = parse_yaml("a: '12'\nb: \"x\"\nc: |\n  line\n").unwrap();
        assert_eq!(v["a"], Value::from("12"));
        assert_eq!(v["c"], Value::from("line\n"));
    }

    #[test]
    fn overrides() {
        let c = parse_config(MINIMAL).unwrap();
        let o: Override = "optimizer.lr=0.01".parse().unwrap();
        let c2 = apply_overrides(&c, &[o]).unwrap();
        assert_eq!(c2.optimizer.lr, 0.01);

        let two: Vec<Override> = ["trainer.epochs=5", "trainer.epochs=9"].iter().map(|s| s.parse().unwrap()).collect();
        assert_eq!(apply_overrides(&c, &two).unwrap().trainer.epochs, 9);

        let typo: Override = "optimizer.lrr=0.01".parse().unwrap();
        assert!(matches!(apply_overrides(&c, &[typo]), Err(ConfigError::UnknownKey(k)) if k == "optimizer.lrr"));
        let wrong: Override = "trainer.epochs=many".parse().unwrap();
        assert!(matches!(apply_overrides(&c, &[wrong]), Err(ConfigError::TypeMismatch { .. })));

        // defaults count as existing keys; list items are addressable
        let more: Vec<Override> = ["common.seed=11", "model.hidden=[8, 4]", "model.kind=mlp", "dataset.paths.0.label=1"]
            .iter()
            .map(|s| s.parse().unwrap())
            .collect();
        let c3 = apply_overrides(&c, &more).unwrap();
        assert_eq!(c3.common.seed, 11);
        assert_eq!(c3.model.hidden, vec![8, 4]);
        assert!(c3.to_yaml().contains("label: 1"));
        assert!("novalue".parse::<Override>().is_err());
    }

    #[test]
    fn distributed_section_warns_once() {
        for extra in ["distributed:\n", "distributed: {backend: nccl, world_size: 4}\n"] {
            let c = parse_config(&format!("{MINIMAL}{extra}")).unwrap();
            assert_eq!(c.warnings().len(), 1);
            let plain = parse_config(MINIMAL).unwrap();
            assert_eq!(ExperimentConfig { distributed: None, ..c.clone() }, plain);
            assert_eq!(parse_config(&c.to_yaml()).unwrap(), c);
        }
    }

    #[test]
    fn validation_rules() {
        let mut c = parse_config(MINIMAL).unwrap();
        c.model.output_dim = 3;
        c.task.metrics = vec!["auroc".into()];
        assert_eq!(validate(&c).len(), 1);

        let mut c = parse_config(MINIMAL).unwrap();
        c.dataset.split.fractions = crate::dataset::Fractions {
            train: 0.5,
            valid: 0.3,
            test: 0.3,
        };
        let issues = validate(&c);
        assert_eq!(issues.len(), 1);
        assert_eq!(issues[0].path, "dataset.split.fractions");

        let mut c = parse_config(MINIMAL).unwrap();
        c.dataset.offline_transforms = vec![crate::transforms::TransformSpec::new("wavelet")];
        c.model.kind = "transformer".into();
        c.task.metrics.push("f2".into());
        c.task.metrics.push("mae".into());
        c.dataset.sampling_rate = Some(3.0);
        c.dataset.epoch.stride = 0.1;
        let paths: Vec<String> = validate(&c).into_iter().map(|i| i.path).collect();
        assert_eq!(
            paths,
            ["dataset.offline_transforms", "dataset.epoch", "model", "task.metrics.1", "task.metrics.2"]
        );
    }

    fn arb_value() -> impl Strategy<Value = Value> {
        let leaf = prop_oneof![
            Just(Value::Null),
            any::<bool>().prop_map(Value::Bool),
            any::<i64>().prop_map(Value::from),
            (-1e12f64..1e12).prop_map(Value::from),
            "[ -~]{0,12}".prop_map(Value::from),
        ];
        leaf.prop_recursive(3, 24, 4, |inner| {
            prop_oneof![
                proptest::collection::vec(inner.clone(), 0..4).prop_map(Value::Array),
                proptest::collection::btree_map("[a-z_][a-z0-9_ ]{0,6}", inner, 0..4)
                    .prop_map(|m| Value::Object(m.into_iter().collect())),
            ]
        })
    }

    proptest! {
        #[test]
        fn emitter_round_trips(map in proptest::collection::btree_map("[a-z]{1,6}", arb_value(), 1..5)) {
            let v = Value::Object(map.into_iter().collect());
            let text = emit_yaml(&v);
            prop_assert_eq!(parse_yaml(&text).unwrap(), v, "{}", text);
        }

        #[test]
        fn override_always_wins(lr in 1e-6f64..1.0, file_lr in 1e-6f64..1.0, epochs in 0usize..1000) {
            let text = MINIMAL.replace("lr: 0.001", &format!("lr: {file_lr:?}"));
            let c = parse_config(&text).unwrap();
            let o: Vec<Override> = vec![format!("optimizer.lr={lr:?}").parse().unwrap(), format!("trainer.epochs={epochs}").parse().unwrap()];
            let c2 = apply_overrides(&c, &o).unwrap();
            prop_assert_eq!(c2.optimizer.lr, lr);
            prop_assert_eq!(c2.trainer.epochs, epochs);
            prop_assert_eq!(parse_config(&c2.to_yaml()).unwrap(), c2);
        }
    }
}
