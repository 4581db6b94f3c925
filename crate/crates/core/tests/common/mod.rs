//! Helpers shared by the integration tests.
#![allow(dead_code)]

use std::f64::consts::PI;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use chrono::NaiveDateTime;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use tyee_core::runner;
use tyee_core::signal_io::{write_edf, ChannelInfo, Record};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn tyee(args: &[&str]) -> Output {
    tyee_with(args, &[("RUST_LOG", "warn")])
}

/// Runs the binary with extra environment variables and no inherited cache root.
pub fn tyee_with(args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_tyee"));
    cmd.args(args).env_remove(runner::CACHE_ENV).env_remove("RUST_LOG");
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().expect("tyee binary runs")
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

pub struct Corpus {
    _dir: tempfile::TempDir,
    pub root: PathBuf,
}

/// Subjects × 2 records of one-channel EDF: record 0 carries a 10 Hz sine
/// (class 0), record 1 a 20 Hz sine (class 1), both starting at zero phase
/// with Gaussian noise.
pub fn synth_corpus(subjects: usize, seconds: usize, seed: u64) -> Corpus {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().to_path_buf();
    let rate = 256.0;
    let noise = Normal::new(0.0, 0.5).unwrap();
    let mut r = rng(seed);
    for s in 0..subjects {
        for (k, freq) in [10.0, 20.0].into_iter().enumerate() {
            let n = seconds * rate as usize;
            let data: Vec<f64> = (0..n)
                .map(|i| (2.0 * PI * freq * i as f64 / rate).sin() + noise.sample(&mut r))
                .collect();
            let ch = ChannelInfo::new("EEG", rate, -10.0, 10.0);
            let rec = Record::new(format!("s{s}r{k}"), format!("s{s}"), NaiveDateTime::default(), vec![ch], vec![data], vec![]).unwrap();
            write_edf(&rec, root.join(format!("s{s}r{k}.edf"))).unwrap();
        }
    }
    Corpus { _dir: dir, root }
}

impl Corpus {
    pub fn paths_yaml(&self, subjects: usize) -> String {
        let mut s = String::new();
        for sub in 0..subjects {
            for k in 0..2 {
                let p = self.root.join(format!("s{sub}r{k}.edf"));
                s.push_str(&format!("    - {{path: {:?}, subject_id: s{sub}, label: {k}}}\n", p.display().to_string()));
            }
        }
        s
    }

    pub fn config(&self, subjects: usize, out: &Path, extra_dataset: &str, epochs: usize, tail: &str) -> String {
        format!(
            "\
common:
  seed: 7
  output_dir: {out:?}
  log_level: warn
dataset:
  format: edf
  paths:
{paths}  offline_transforms:
    - {{name: bandpass, low: 1, high: 40}}
    - {{name: zscore}}
  epoch: {{window: 2, stride: 1}}
  split:
    mode: by_subject
    fractions: {{train: 0.6666666666666667, valid: 0.3333333333333333, test: 0}}
{extra_dataset}model:
  kind: mlp
  input_dim: 512
  hidden: [32]
  output_dim: 2
optimizer:
  kind: adam
  lr: 0.001
task:
  type: classification
  metrics: [accuracy, balanced_accuracy, kappa]
trainer:
  epochs: {epochs}
  batch_size: 32
{tail}",
            out = out.display().to_string(),
            paths = self.paths_yaml(subjects),
        )
    }
}

pub fn write(path: &Path, text: &str) -> PathBuf {
    std::fs::write(path, text).unwrap();
    path.to_path_buf()
}

