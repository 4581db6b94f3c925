//! Configuration-driven engine for physiological signal experiments.
//!
//! The crate covers the whole offline workflow:
//!
//! ```text
//! EDF / BDF / CSV file
//!   │
//!   ├─ signal_io::read_record()     parse into an in-memory Record
//!   ├─ transforms (offline stage)   bandpass, notch, resample, zscore, ...
//!   ├─ dataset::epoch_record()      fixed-length labeled windows
//!   ├─ dataset cache                content-addressed f32 sample blocks
//!   ├─ transforms (online stage)    applied at retrieval time
//!   ├─ trainer                      linear / MLP models, SGD / Adam, checkpoints
//!   └─ metrics                      accuracy, BA, F1, kappa, AUROC, AP, MAE, CC
//! ```
//!
//! Everything is driven by one YAML document (see [`config`]) and the `tyee`
//! command line front end in [`runner`].

pub mod config;
pub mod dataset;
pub mod metrics;
pub mod rng;
pub mod runner;
pub mod signal_io;
pub mod trainer;
pub mod transforms;

pub use signal_io::{read_record, write_edf, ChannelInfo, EventAnnotation, Format, Record};
pub use config::ExperimentConfig;
pub use dataset::{Dataset, EpochSpec, Label, Sample};
pub use metrics::MetricReport;
pub use transforms::{compile_pipeline, Pipeline, Stage, TransformSpec};
