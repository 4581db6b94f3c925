use serde::{Deserialize, Serialize};

use super::{Result, TrainerError};

pub const OPTIMIZERS: [&str; 2] = ["sgd", "adam"];
pub const SCHEDULERS: [&str; 3] = ["none", "step", "cosine"];

fn adam() -> String {
    "adam".into()
}
fn none() -> String {
    "none".into()
}
fn beta1() -> f64 {
    0.9
}
fn beta2() -> f64 {
    0.999
}
fn eps() -> f64 {
    1e-8
}
fn step_size() -> usize {
    10
}
fn gamma() -> f64 {
    0.1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchedulerSpec {
    #[serde(default = "none")]
    pub kind: String,
    #[serde(default = "step_size")]
    pub step_size: usize,
    #[serde(default = "gamma")]
    pub gamma: f64,
    /// Defaults to the number of training epochs.
    #[serde(default)]
    pub t_max: Option<usize>,
    #[serde(default)]
    pub lr_min: f64,
}

impl Default for SchedulerSpec {
    fn default() -> Self {
        Self {
            kind: none(),
            step_size: step_size(),
            gamma: gamma(),
            t_max: None,
            lr_min: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerSpec {
    #[serde(default = "adam")]
    pub kind: String,
    pub lr: f64,
    #[serde(default)]
    pub momentum: f64,
    #[serde(default = "beta1")]
    pub beta1: f64,
    #[serde(default = "beta2")]
    pub beta2: f64,
    #[serde(default = "eps")]
    pub eps: f64,
    #[serde(default)]
    pub weight_decay: f64,
    #[serde(default)]
    pub scheduler: SchedulerSpec,
}

impl OptimizerSpec {
    pub fn sgd(lr: f64, momentum: f64) -> Self {
        Self {
            kind: "sgd".into(),
            lr,
            momentum,
            beta1: beta1(),
            beta2: beta2(),
            eps: eps(),
            weight_decay: 0.0,
            scheduler: SchedulerSpec::default(),
        }
    }

    pub fn adam(lr: f64) -> Self {
        Self {
            kind: adam(),
            ..Self::sgd(lr, 0.0)
        }
    }

    pub fn check(&self) -> Result<()> {
        let bad = |why: &str| Err(TrainerError::InvalidSpec(format!("optimizer: {why}")));
        if !OPTIMIZERS.contains(&self.kind.as_str()) {
            return Err(TrainerError::UnknownComponent {
                section: "optimizer".into(),
                name: self.kind.clone(),
            });
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr must be positive");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must lie in [0, 1)");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("betas must lie in [0, 1)");
        }
        if self.eps.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater) {
            return bad("eps must be positive");
        }
        if self.weight_decay.partial_cmp(&0.0).is_none_or(|o| o.is_lt()) {
            return bad("weight_decay must be >= 0");
        }
        let s = &self.scheduler;
        match s.kind.as_str() {
            "none" => Ok(()),
            "step" if s.step_size == 0 || s.gamma.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater) => {
                bad("step scheduler needs step_size > 0 and gamma > 0")
            }
            "step" => Ok(()),
            "cosine" if s.t_max == Some(0) || s.lr_min.partial_cmp(&0.0).is_none_or(|o| o.is_lt()) => {
                bad("cosine scheduler needs t_max > 0 and lr_min >= 0")
            }
            "cosine" => Ok(()),
            other => Err(TrainerError::UnknownComponent {
                section: "optimizer.scheduler".into(),
                name: other.into(),
            }),
        }
    }
}

/// Learning rate for a 0-based epoch. Cosine holds `lr_min` past `t_max`.
pub fn scheduled_lr(lr0: f64, spec: &SchedulerSpec, epochs: usize, epoch: usize) -> f64 {
    match spec.kind.as_str() {
        "step" => lr0 * spec.gamma.powi((epoch / spec.step_size) as i32),
        "cosine" => {
            let t_max = spec.t_max.unwrap_or(epochs).max(1);
            let t = epoch.min(t_max) as f64;
            spec.lr_min + 0.5 * (lr0 - spec.lr_min) * (1.0 + (std::f64::consts::PI * t / t_max as f64).cos())
        }
        _ => lr0,
    }
}

/// Moments and step count; everything an optimizer needs to resume.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct OptimState {
    pub step: u64,
    /// SGD velocity or Adam first moment, per block.
    pub m: Vec<Vec<f64>>,
    /// Adam second moment, per block.
    pub v: Vec<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct Optimizer {
    pub spec: OptimizerSpec,
    pub state: OptimState,
}

impl Optimizer {
    pub fn new(spec: &OptimizerSpec, blocks: &[&[f64]]) -> Result<Self> {
        spec.check()?;
        let zeros: Vec<Vec<f64>> = blocks.iter().map(|b| vec![0.0; b.len()]).collect();
        Ok(Self {
            spec: spec.clone(),
            state: OptimState {
                step: 0,
                v: if spec.kind == "adam" { zeros.clone() } else { Vec::new() },
                m: zeros,
            },
        })
    }

    /// One update with coupled weight decay (`g + wd·w`).
    pub fn step(&mut self, params: &mut [&mut [f64]], grads: &[Vec<f64>], lr: f64) -> Result<()> {
        if params.len() != grads.len()
            || params.len() != self.state.m.len()
            || params.iter().zip(grads).any(|(p, g)| p.len() != g.len())
        {
            return Err(TrainerError::ShapeMismatch("gradients do not match parameters".into()));
        }
        self.state.step += 1;
        let s = &self.spec;
        let t = self.state.step as i32;
        for (k, (w, g)) in params.iter_mut().zip(grads).enumerate() {
            let m = &mut self.state.m[k];
            if s.kind == "adam" {
                let v = &mut self.state.v[k];
                let (c1, c2) = (1.0 - s.beta1.powi(t), 1.0 - s.beta2.powi(t));
                for i in 0..w.len() {
                    let gi = g[i] + s.weight_decay * w[i];
                    m[i] = s.beta1 * m[i] + (1.0 - s.beta1) * gi;
                    v[i] = s.beta2 * v[i] + (1.0 - s.beta2) * gi * gi;
                    w[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + s.eps);
                }
            } else {
                for i in 0..w.len() {
                    let gi = g[i] + s.weight_decay * w[i];
                    m[i] = s.momentum * m[i] + gi;
                    w[i] -= lr * m[i];
                }
            }
        }
        Ok(())
    }
}
