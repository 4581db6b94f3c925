//! Loading recordings from disk into a single in-memory [`Record`].
//!
//! EDF and BDF (including the EDF+/BDF+ annotation channel) and a fixed CSV
//! dialect are built in. Additional formats can be plugged in at runtime with
//! [`register_format`].

mod csv;
mod edf;

use std::collections::HashMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::{Arc, LazyLock, RwLock};

use chrono::NaiveDateTime;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use self::csv::parse_csv;
pub use self::edf::{parse_edf_bytes, write_bdf_bytes, write_edf, write_edf_bytes};

#[derive(Debug, Error)]
pub enum SignalIoError {
    #[error("unknown format: {0}")]
    UnknownFormat(String),
    #[error("i/o failure on {path}: {source}")]
    IoFailure {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("truncated data: expected {expected} bytes of samples, found {found}")]
    TruncatedData { expected: u64, found: u64 },
    #[error("degenerate calibration on channel {0:?}")]
    DegenerateCalibration(String),
    #[error("sample {value} on channel {channel:?} outside physical range [{min}, {max}]")]
    RangeOverflow {
        channel: String,
        value: f64,
        min: f64,
        max: f64,
    },
    #[error("format {0} is already registered")]
    DuplicateFormat(String),
    #[error("malformed csv: {0}")]
    MalformedCsv(String),
    #[error("invalid record: {0}")]
    InvalidRecord(String),
}

pub type Result<T> = std::result::Result<T, SignalIoError>;

pub(crate) fn io_err(path: &Path, source: std::io::Error) -> SignalIoError {
    SignalIoError::IoFailure {
        path: path.display().to_string(),
        source,
    }
}

/// Per-channel metadata, including the linear digital/physical calibration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelInfo {
    pub label: String,
    pub physical_unit: String,
    pub sampling_rate: f64,
    pub physical_min: f64,
    pub physical_max: f64,
    pub digital_min: i32,
    pub digital_max: i32,
}

impl ChannelInfo {
    /// Channel with a 16-bit digital range.
    pub fn new(label: impl Into<String>, sampling_rate: f64, physical_min: f64, physical_max: f64) -> Self {
        Self {
            label: label.into(),
            physical_unit: "uV".to_string(),
            sampling_rate,
            physical_min,
            physical_max,
            digital_min: i16::MIN as i32,
            digital_max: i16::MAX as i32,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sampling_rate > 0.0 && self.sampling_rate.is_finite()) {
            return Err(SignalIoError::InvalidRecord(format!(
                "channel {:?}: sampling rate {} is not positive",
                self.label, self.sampling_rate
            )));
        }
        if self.digital_max == self.digital_min || self.physical_max == self.physical_min {
            return Err(SignalIoError::DegenerateCalibration(self.label.clone()));
        }
        if self.digital_max < self.digital_min || !(self.physical_max > self.physical_min) {
            return Err(SignalIoError::InvalidRecord(format!(
                "channel {:?}: inverted calibration range",
                self.label
            )));
        }
        Ok(())
    }

    /// Physical value of one stored digital sample.
    #[inline]
    pub fn to_physical(&self, digital: i32) -> f64 {
        (digital as f64 - self.digital_min as f64) * (self.physical_max - self.physical_min)
            / (self.digital_max as f64 - self.digital_min as f64)
            + self.physical_min
    }

    /// One digital quantization step expressed in physical units.
    pub fn quantization_step(&self) -> f64 {
        (self.physical_max - self.physical_min) / (self.digital_max as f64 - self.digital_min as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventAnnotation {
    /// Seconds from record start.
    pub onset: f64,
    pub duration: f64,
    pub label: String,
}

/// One recording session. Immutable once constructed through [`Record::new`].
#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub record_id: String,
    pub subject_id: String,
    pub start_time: NaiveDateTime,
    pub channels: Vec<ChannelInfo>,
    pub data: Vec<Vec<f64>>,
    pub annotations: Vec<EventAnnotation>,
}

impl Record {
    pub fn new(
        record_id: impl Into<String>,
        subject_id: impl Into<String>,
        start_time: NaiveDateTime,
        channels: Vec<ChannelInfo>,
        data: Vec<Vec<f64>>,
        annotations: Vec<EventAnnotation>,
    ) -> Result<Self> {
        let record = Self {
            record_id: record_id.into(),
            subject_id: subject_id.into(),
            start_time,
            channels,
            data,
            annotations,
        };
        record.validate()?;
        Ok(record)
    }

    /// Checks the structural invariants: matching channel/data counts,
    /// equal channel durations (within one sample period) and annotations
    /// inside the recording.
    pub fn validate(&self) -> Result<()> {
        if self.channels.len() != self.data.len() {
            return Err(SignalIoError::InvalidRecord(format!(
                "{} channels but {} data rows",
                self.channels.len(),
                self.data.len()
            )));
        }
        for ch in &self.channels {
            ch.validate()?;
        }
        let duration = self.duration();
        for (ch, samples) in self.channels.iter().zip(&self.data) {
            let d = samples.len() as f64 / ch.sampling_rate;
            if (d - duration).abs() > 1.0 / ch.sampling_rate + 1e-9 {
                return Err(SignalIoError::InvalidRecord(format!(
                    "channel {:?} lasts {d} s, record lasts {duration} s",
                    ch.label
                )));
            }
        }
        for a in &self.annotations {
            if !(a.onset >= 0.0 && a.duration >= 0.0) || a.onset + a.duration > duration + 1e-9 {
                return Err(SignalIoError::InvalidRecord(format!(
                    "annotation {:?} at {} s (+{} s) outside the record",
                    a.label, a.onset, a.duration
                )));
            }
        }
        Ok(())
    }

    /// Duration in seconds, taken from the longest channel.
    pub fn duration(&self) -> f64 {
        self.channels
            .iter()
            .zip(&self.data)
            .map(|(c, d)| d.len() as f64 / c.sampling_rate)
            .fold(0.0, f64::max)
    }

    pub fn channel_index(&self, label: &str) -> Option<usize> {
        self.channels.iter().position(|c| c.label == label)
    }
}

/// File format identifier.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Format {
    Edf,
    Bdf,
    Csv,
    Custom(String),
}

impl Format {
    pub fn is_builtin(&self) -> bool {
        !matches!(self, Format::Custom(_))
    }
}

impl fmt::Display for Format {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Format::Edf => f.write_str("EDF"),
            Format::Bdf => f.write_str("BDF"),
            Format::Csv => f.write_str("CSV"),
            Format::Custom(name) => f.write_str(name),
        }
    }
}

impl FromStr for Format {
    type Err = SignalIoError;

    fn from_str(s: &str) -> Result<Self> {
        let upper = s.trim().to_ascii_uppercase();
        Ok(match upper.as_str() {
            "" => return Err(SignalIoError::UnknownFormat(s.to_string())),
            "EDF" | "EDF+" => Format::Edf,
            "BDF" | "BDF+" => Format::Bdf,
            "CSV" => Format::Csv,
            _ => Format::Custom(upper),
        })
    }
}

/// Extra inputs for formats that do not carry everything in the file.
#[derive(Debug, Clone, Default)]
pub struct ReadOptions {
    pub format: Option<Format>,
    /// Required for CSV files without a time column.
    pub sampling_rate: Option<f64>,
}

pub type Parser = Arc<dyn Fn(&Path) -> Result<Record> + Send + Sync>;

static CUSTOM_FORMATS: LazyLock<RwLock<HashMap<String, Parser>>> =
    LazyLock::new(|| RwLock::new(HashMap::new()));

/// Registers a parser for a new format identifier. Built-in identifiers and
/// identifiers registered earlier are rejected.
pub fn register_format<F>(format: &str, parser: F) -> Result<()>
where
    F: Fn(&Path) -> Result<Record> + Send + Sync + 'static,
{
    let id = match format.parse::<Format>()? {
        Format::Custom(id) => id,
        builtin => return Err(SignalIoError::DuplicateFormat(builtin.to_string())),
    };
    let mut formats = CUSTOM_FORMATS.write().expect("format registry poisoned");
    if formats.contains_key(&id) {
        return Err(SignalIoError::DuplicateFormat(id));
    }
    formats.insert(id, Arc::new(parser));
    Ok(())
}

pub fn is_registered(format: &Format) -> bool {
    match format {
        Format::Custom(id) => CUSTOM_FORMATS.read().expect("format registry poisoned").contains_key(id),
        _ => true,
    }
}

/// Identifies the format from the file's magic bytes, falling back to the
/// `.csv` extension.
pub fn detect_format(path: impl AsRef<Path>) -> Result<Format> {
    use std::io::Read;

    let path = path.as_ref();
    let mut file = std::fs::File::open(path).map_err(|e| io_err(path, e))?;
    let mut magic = [0u8; 8];
    let mut filled = 0;
    while filled < magic.len() {
        match file.read(&mut magic[filled..]) {
            Ok(0) => break,
            Ok(n) => filled += n,
            Err(e) => return Err(io_err(path, e)),
        }
    }
    if filled == 8 {
        if &magic == b"0       " {
            return Ok(Format::Edf);
        }
        if magic[0] == 0xFF && &magic[1..] == b"BIOSEMI" {
            return Ok(Format::Bdf);
        }
    }
    let is_csv = path
        .extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("csv"));
    if is_csv {
        return Ok(Format::Csv);
    }
    Err(SignalIoError::UnknownFormat(path.display().to_string()))
}

/// Reads a record, detecting the format when none is given.
pub fn read_record(path: impl AsRef<Path>, format: Option<Format>) -> Result<Record> {
    read_record_with(
        path,
        &ReadOptions {
            format,
            sampling_rate: None,
        },
    )
}

pub fn read_record_with(path: impl AsRef<Path>, options: &ReadOptions) -> Result<Record> {
    let path = path.as_ref();
    let format = match &options.format {
        Some(f) => f.clone(),
        None => detect_format(path)?,
    };
    match format {
        Format::Edf | Format::Bdf => {
            let bytes = std::fs::read(path).map_err(|e| io_err(path, e))?;
            parse_edf_bytes(&bytes, &file_stem(path))
        }
        Format::Csv => {
            let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
            parse_csv(&text, &file_stem(path), options.sampling_rate)
        }
        Format::Custom(id) => {
            let parser = CUSTOM_FORMATS
                .read()
                .expect("format registry poisoned")
                .get(&id)
                .cloned()
                .ok_or(SignalIoError::UnknownFormat(id))?;
            parser(path)
        }
    }
}

pub(crate) fn file_stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "record".to_string())
}
