//! Named signal transforms and the pipelines compiled from them.
//!
//! A [`TransformSpec`] is what a configuration file contains: a registry name
//! plus a parameter map. [`compile_pipeline`] resolves and validates a list of
//! specs into an immutable [`Pipeline`] that can be applied to anything
//! implementing [`Signal`] (whole records offline, samples online).

pub mod filter;
pub mod resample;

use std::collections::HashMap;
use std::fmt;
use std::sync::{Arc, LazyLock, RwLock};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::signal_io::{ChannelInfo, EventAnnotation, Record};

/// Added to the denominators of both normalisers.
pub const NORM_EPS: f64 = 1e-8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TransformError {
    #[error("unknown transform {0:?}")]
    UnknownTransform(String),
    #[error("invalid parameters for {name}: {reason}")]
    InvalidParams { name: String, reason: String },
    #[error("invalid band: {0}")]
    InvalidBand(String),
    #[error("invalid rate: {0}")]
    InvalidRate(String),
    #[error("missing channel {0:?}")]
    MissingChannel(String),
    #[error("invalid window: {0}")]
    InvalidWindow(String),
    #[error("step {index} ({name}) failed: {source}")]
    Step {
        index: usize,
        name: String,
        source: Box<TransformError>,
    },
    #[error("transform {name} already registered")]
    DuplicateTransform { name: String },
}

impl TransformError {
    /// The underlying error with any step wrapper removed.
    pub fn root(&self) -> &TransformError {
        match self {
            TransformError::Step { source, .. } => source.root(),
            other => other,
        }
    }
}

pub type Result<T> = std::result::Result<T, TransformError>;

/// Mutable view over the parts of a signal transforms may change.
pub struct SignalMut<'a> {
    pub channels: &'a mut Vec<ChannelInfo>,
    pub data: &'a mut Vec<Vec<f64>>,
    pub annotations: Option<&'a mut Vec<EventAnnotation>>,
}

/// Anything a pipeline can be applied to.
pub trait Signal: Clone {
    fn signal_mut(&mut self) -> SignalMut<'_>;
}

impl Signal for Record {
    fn signal_mut(&mut self) -> SignalMut<'_> {
        SignalMut {
            channels: &mut self.channels,
            data: &mut self.data,
            annotations: Some(&mut self.annotations),
        }
    }
}

pub trait Transform: Send + Sync + fmt::Debug {
    fn name(&self) -> &str;
    /// Stable textual form of the validated parameters, used in cache keys.
    fn canonical(&self) -> String;
    fn apply(&self, signal: SignalMut<'_>) -> Result<()>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformSpec {
    pub name: String,
    #[serde(flatten)]
    pub params: Map<String, Value>,
}

impl TransformSpec {
    pub fn new(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            params: Map::new(),
        }
    }

    pub fn param(mut self, key: &str, value: impl Into<Value>) -> Self {
        self.params.insert(key.to_string(), value.into());
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Offline,
    Online,
}

/// Validated, ordered transforms. Cheap to clone and share.
#[derive(Debug, Clone)]
pub struct Pipeline {
    stage: Stage,
    steps: Arc<[Arc<dyn Transform>]>,
}

impl Pipeline {
    pub fn empty(stage: Stage) -> Self {
        Self {
            stage,
            steps: Arc::from(Vec::new()),
        }
    }

    pub fn stage(&self) -> Stage {
        self.stage
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn steps(&self) -> impl Iterator<Item = &dyn Transform> {
        self.steps.iter().map(|s| s.as_ref())
    }

    /// Canonical serialisation of every step in order.
    pub fn canonical(&self) -> String {
        self.steps.iter().map(|s| s.canonical()).collect::<Vec<_>>().join("|")
    }

    /// Applies the steps left to right to a copy of `input`.
    pub fn apply<S: Signal>(&self, input: &S) -> Result<S> {
        let mut out = input.clone();
        for (index, step) in self.steps.iter().enumerate() {
            step.apply(out.signal_mut()).map_err(|e| TransformError::Step {
                index,
                name: step.name().to_string(),
                source: Box::new(e),
            })?;
        }
        Ok(out)
    }
}

/// Parameter accessor that tracks which keys were consumed.
pub struct Params<'a> {
    name: &'a str,
    map: &'a Map<String, Value>,
    used: Vec<&'a str>,
}

impl<'a> Params<'a> {
    fn new(name: &'a str, map: &'a Map<String, Value>) -> Self {
        Self { name, map, used: Vec::new() }
    }

    pub fn invalid(&self, reason: impl Into<String>) -> TransformError {
        TransformError::InvalidParams {
            name: self.name.to_string(),
            reason: reason.into(),
        }
    }

    fn get(&mut self, key: &'a str) -> Option<&'a Value> {
        self.used.push(key);
        self.map.get(key)
    }

    pub fn f64(&mut self, key: &'a str, default: Option<f64>) -> Result<f64> {
        match self.get(key) {
            Some(v) => v
                .as_f64()
                .filter(|x| x.is_finite())
                .ok_or_else(|| self.invalid(format!("{key} must be a number"))),
            None => default.ok_or_else(|| self.invalid(format!("missing {key}"))),
        }
    }

    pub fn usize(&mut self, key: &'a str, default: Option<usize>) -> Result<usize> {
        match self.get(key) {
            Some(v) => v
                .as_u64()
                .map(|x| x as usize)
                .ok_or_else(|| self.invalid(format!("{key} must be a non-negative integer"))),
            None => default.ok_or_else(|| self.invalid(format!("missing {key}"))),
        }
    }

    pub fn strings(&mut self, key: &'a str) -> Result<Vec<String>> {
        let v = self.get(key).ok_or_else(|| self.invalid(format!("missing {key}")))?;
        v.as_array()
            .and_then(|a| a.iter().map(|s| s.as_str().map(str::to_string)).collect())
            .ok_or_else(|| self.invalid(format!("{key} must be a list of strings")))
    }

    /// Rejects keys no accessor asked for.
    pub fn finish(self) -> Result<()> {
        match self.map.keys().find(|k| !self.used.contains(&k.as_str())) {
            Some(k) => Err(self.invalid(format!("unknown parameter {k:?}"))),
            None => Ok(()),
        }
    }
}

pub type Factory = Arc<dyn Fn(&mut Params<'_>) -> Result<Arc<dyn Transform>> + Send + Sync>;

static REGISTRY: LazyLock<RwLock<HashMap<String, Factory>>> = LazyLock::new(|| {
    let mut m: HashMap<String, Factory> = HashMap::new();
    m.insert("bandpass".into(), Arc::new(|p| Ok(Arc::new(Bandpass::from_params(p)?) as Arc<dyn Transform>)));
    m.insert("notch".into(), Arc::new(|p| Ok(Arc::new(Notch::from_params(p)?) as Arc<dyn Transform>)));
    m.insert("resample".into(), Arc::new(|p| Ok(Arc::new(Resample::from_params(p)?) as Arc<dyn Transform>)));
    m.insert("zscore".into(), Arc::new(|_| Ok(Arc::new(ZScore) as Arc<dyn Transform>)));
    m.insert("minmax".into(), Arc::new(|_| Ok(Arc::new(MinMax) as Arc<dyn Transform>)));
    m.insert(
        "select_channels".into(),
        Arc::new(|p| Ok(Arc::new(SelectChannels { labels: p.strings("labels")? }) as Arc<dyn Transform>)),
    );
    m.insert("crop".into(), Arc::new(|p| Ok(Arc::new(Crop::from_params(p)?) as Arc<dyn Transform>)));
    RwLock::new(m)
});

/// Adds a transform factory under a new name.
pub fn register_transform<F>(name: &str, factory: F) -> Result<()>
where
    F: Fn(&mut Params<'_>) -> Result<Arc<dyn Transform>> + Send + Sync + 'static,
{
    let mut reg = REGISTRY.write().expect("transform registry poisoned");
    if reg.contains_key(name) {
        return Err(TransformError::DuplicateTransform { name: name.to_string() });
    }
    reg.insert(name.to_string(), Arc::new(factory));
    Ok(())
}

pub fn is_registered(name: &str) -> bool {
    REGISTRY.read().expect("transform registry poisoned").contains_key(name)
}

pub fn compile_transform(spec: &TransformSpec) -> Result<Arc<dyn Transform>> {
    let factory = REGISTRY
        .read()
        .expect("transform registry poisoned")
        .get(&spec.name)
        .cloned()
        .ok_or_else(|| TransformError::UnknownTransform(spec.name.clone()))?;
    let mut params = Params::new(&spec.name, &spec.params);
    let t = factory(&mut params)?;
    params.finish()?;
    Ok(t)
}

pub fn compile_pipeline(specs: &[TransformSpec], stage: Stage) -> Result<Pipeline> {
    let steps = specs.iter().map(compile_transform).collect::<Result<Vec<_>>>()?;
    Ok(Pipeline {
        stage,
        steps: Arc::from(steps),
    })
}

fn check_band(label: &str, rate: f64, freqs: &[f64]) -> Result<()> {
    let nyquist = rate / 2.0;
    if let Some(f) = freqs.iter().find(|f| !(**f > 0.0 && **f < nyquist)) {
        return Err(TransformError::InvalidBand(format!(
            "{f} Hz outside (0, {nyquist}) Hz on channel {label:?}"
        )));
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct Bandpass {
    pub low: f64,
    pub high: f64,
    pub order: usize,
}

impl Bandpass {
    fn from_params(p: &mut Params<'_>) -> Result<Self> {
        let low = p.f64("low", None)?;
        let high = p.f64("high", None)?;
        let order = p.usize("order", Some(4))?;
        if order == 0 || order % 2 != 0 {
            return Err(p.invalid(format!("order must be even and positive, got {order}")));
        }
        if !(low > 0.0 && high > low) {
            return Err(TransformError::InvalidBand(format!("need 0 < low < high, got {low}..{high}")));
        }
        Ok(Self { low, high, order })
    }
}

impl Transform for Bandpass {
    fn name(&self) -> &str {
        "bandpass"
    }

    fn canonical(&self) -> String {
        format!("bandpass(low={:?},high={:?},order={})", self.low, self.high, self.order)
    }

    fn apply(&self, s: SignalMut<'_>) -> Result<()> {
        for (ch, x) in s.channels.iter().zip(s.data.iter_mut()) {
            check_band(&ch.label, ch.sampling_rate, &[self.low, self.high])?;
            let sos = filter::butterworth_bandpass(self.low, self.high, self.order, ch.sampling_rate);
            *x = filter::filtfilt(&sos, x, 3 * self.order);
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Notch {
    pub freq: f64,
    pub q: f64,
}

impl Notch {
    fn from_params(p: &mut Params<'_>) -> Result<Self> {
        let freq = p.f64("freq", None)?;
        let q = p.f64("q", Some(30.0))?;
        if q <= 0.0 {
            return Err(p.invalid("q must be positive"));
        }
        if freq <= 0.0 {
            return Err(TransformError::InvalidBand(format!("notch frequency {freq} Hz")));
        }
        Ok(Self { freq, q })
    }
}

impl Transform for Notch {
    fn name(&self) -> &str {
        "notch"
    }

    fn canonical(&self) -> String {
        format!("notch(freq={:?},q={:?})", self.freq, self.q)
    }

    fn apply(&self, s: SignalMut<'_>) -> Result<()> {
        for (ch, x) in s.channels.iter().zip(s.data.iter_mut()) {
            check_band(&ch.label, ch.sampling_rate, &[self.freq])?;
            let section = filter::notch(self.freq, self.q, ch.sampling_rate);
            *x = filter::filtfilt(&[section], x, 6);
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Resample {
    pub target_rate: f64,
}

impl Resample {
    fn from_params(p: &mut Params<'_>) -> Result<Self> {
        let target_rate = p.f64("target_rate", None)?;
        if target_rate <= 0.0 {
            return Err(TransformError::InvalidRate(format!("target rate {target_rate}")));
        }
        Ok(Self { target_rate })
    }
}

impl Transform for Resample {
    fn name(&self) -> &str {
        "resample"
    }

    fn canonical(&self) -> String {
        format!("resample(target_rate={:?})", self.target_rate)
    }

    fn apply(&self, s: SignalMut<'_>) -> Result<()> {
        for (ch, x) in s.channels.iter_mut().zip(s.data.iter_mut()) {
            if ch.sampling_rate == self.target_rate {
                continue;
            }
            let (up, down) = resample::rational_ratio(self.target_rate, ch.sampling_rate).ok_or_else(|| {
                TransformError::InvalidRate(format!(
                    "{} -> {} Hz is not a ratio with denominator <= 1000",
                    ch.sampling_rate, self.target_rate
                ))
            })?;
            *x = resample::resample_channel(x, up, down);
            ch.sampling_rate = self.target_rate;
        }
        Ok(())
    }
}

fn mean_std(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Per-channel `(x - mean) / (std + eps)` with the population std.
#[derive(Debug, Clone, Copy)]
pub struct ZScore;

impl Transform for ZScore {
    fn name(&self) -> &str {
        "zscore"
    }

    fn canonical(&self) -> String {
        "zscore()".into()
    }

    fn apply(&self, s: SignalMut<'_>) -> Result<()> {
        for x in s.data.iter_mut().filter(|x| !x.is_empty()) {
            let (mean, std) = mean_std(x);
            x.iter_mut().for_each(|v| *v = (*v - mean) / (std + NORM_EPS));
        }
        Ok(())
    }
}

/// Per-channel `(x - min) / (max - min + eps)`.
#[derive(Debug, Clone, Copy)]
pub struct MinMax;

impl Transform for MinMax {
    fn name(&self) -> &str {
        "minmax"
    }

    fn canonical(&self) -> String {
        "minmax()".into()
    }

    fn apply(&self, s: SignalMut<'_>) -> Result<()> {
        for x in s.data.iter_mut().filter(|x| !x.is_empty()) {
            let lo = x.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            x.iter_mut().for_each(|v| *v = (*v - lo) / (hi - lo + NORM_EPS));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SelectChannels {
    pub labels: Vec<String>,
}

impl Transform for SelectChannels {
    fn name(&self) -> &str {
        "select_channels"
    }

    fn canonical(&self) -> String {
        format!("select_channels(labels={:?})", self.labels)
    }

    fn apply(&self, s: SignalMut<'_>) -> Result<()> {
        let idx = self
            .labels
            .iter()
            .map(|l| {
                s.channels
                    .iter()
                    .position(|c| &c.label == l)
                    .ok_or_else(|| TransformError::MissingChannel(l.clone()))
            })
            .collect::<Result<Vec<_>>>()?;
        *s.channels = idx.iter().map(|&i| s.channels[i].clone()).collect();
        *s.data = idx.iter().map(|&i| std::mem::take(&mut s.data[i])).collect();
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Crop {
    pub start: f64,
    pub end: f64,
}

impl Crop {
    fn from_params(p: &mut Params<'_>) -> Result<Self> {
        let start = p.f64("start", None)?;
        let end = p.f64("end", None)?;
        if !(start >= 0.0 && end > start) {
            return Err(TransformError::InvalidWindow(format!("[{start}, {end})")));
        }
        Ok(Self { start, end })
    }
}

impl Transform for Crop {
    fn name(&self) -> &str {
        "crop"
    }

    fn canonical(&self) -> String {
        format!("crop(start={:?},end={:?})", self.start, self.end)
    }

    fn apply(&self, s: SignalMut<'_>) -> Result<()> {
        let duration = s
            .channels
            .iter()
            .zip(s.data.iter())
            .map(|(c, d)| d.len() as f64 / c.sampling_rate)
            .fold(0.0, f64::max);
        if self.end > duration + 1e-9 {
            return Err(TransformError::InvalidWindow(format!(
                "[{}, {}) exceeds duration {duration} s",
                self.start, self.end
            )));
        }
        for (ch, x) in s.channels.iter().zip(s.data.iter_mut()) {
            let i0 = ((self.start * ch.sampling_rate).round() as usize).min(x.len());
            let i1 = ((self.end * ch.sampling_rate).round() as usize).min(x.len());
            *x = x[i0..i1].to_vec();
        }
        if let Some(annotations) = s.annotations {
            let (start, end) = (self.start, self.end);
            *annotations = annotations
                .iter()
                .filter(|a| {
                    let stop = a.onset + a.duration;
                    if a.duration == 0.0 {
                        a.onset >= start && a.onset < end
                    } else {
                        a.onset < end && stop > start
                    }
                })
                .map(|a| {
                    let onset = a.onset.max(start);
                    EventAnnotation {
                        onset: onset - start,
                        duration: (a.onset + a.duration).min(end) - onset,
                        label: a.label.clone(),
                    }
                })
                .collect();
        }
        Ok(())
    }
}
