//! Evaluation metrics.
//!
//! Classification metrics are computed from a [`ConfusionMatrix`] (rows are
//! the true class). Classes with zero support are left out of macro and
//! balanced averages.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricError {
    #[error("metric needs at least one sample")]
    EmptyInput,
    #[error("auroc needs both classes present")]
    SingleClass,
    #[error("auprc needs at least one positive")]
    NoPositives,
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("scaled MAE is undefined for MAE {0} <= 0")]
    NonPositiveMae(f64),
    #[error("unknown metric {0:?}")]
    UnknownMetric(String),
    #[error("metric {name} does not apply here: {reason}")]
    Incompatible { name: String, reason: String },
    #[error("class {class} is outside 0..{classes}")]
    ClassOutOfRange { class: usize, classes: usize },
}

pub type Result<T> = std::result::Result<T, MetricError>;

pub const CLASSIFICATION: [&str; 7] = [
    "accuracy",
    "balanced_accuracy",
    "f1_macro",
    "f1_weighted",
    "kappa",
    "auroc",
    "auprc",
];
pub const REGRESSION: [&str; 3] = ["mae", "scaled_mae", "mean_cc"];

pub fn is_known(name: &str) -> bool {
    CLASSIFICATION.contains(&name) || REGRESSION.contains(&name)
}

/// Metrics that are only defined for two-class problems.
pub fn binary_only(name: &str) -> bool {
    matches!(name, "auroc" | "auprc")
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        Self {
            counts: vec![vec![0; classes]; classes],
        }
    }

    pub fn from_labels(truth: &[usize], pred: &[usize], classes: usize) -> Result<Self> {
        if truth.len() != pred.len() {
            return Err(MetricError::LengthMismatch(truth.len(), pred.len()));
        }
        let mut cm = Self::new(classes);
        for (&t, &p) in truth.iter().zip(pred) {
            cm.add(t, p)?;
        }
        Ok(cm)
    }

    pub fn add(&mut self, truth: usize, pred: usize) -> Result<()> {
        let classes = self.classes();
        for class in [truth, pred] {
            if class >= classes {
                return Err(MetricError::ClassOutOfRange { class, classes });
            }
        }
        self.counts[truth][pred] += 1;
        Ok(())
    }

    pub fn classes(&self) -> usize {
        self.counts.len()
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth][pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn support(&self, class: usize) -> u64 {
        self.counts[class].iter().sum()
    }

    pub fn predicted(&self, class: usize) -> u64 {
        self.counts.iter().map(|row| row[class]).sum()
    }

    fn nonempty(&self) -> Result<f64> {
        match self.total() {
            0 => Err(MetricError::EmptyInput),
            n => Ok(n as f64),
        }
    }
}

pub fn accuracy(cm: &ConfusionMatrix) -> Result<f64> {
    let total = cm.nonempty()?;
    let trace: u64 = (0..cm.classes()).map(|c| cm.get(c, c)).sum();
    Ok(trace as f64 / total)
}

pub fn balanced_accuracy(cm: &ConfusionMatrix) -> Result<f64> {
    cm.nonempty()?;
    let recalls: Vec<f64> = (0..cm.classes())
        .filter(|&c| cm.support(c) > 0)
        .map(|c| cm.get(c, c) as f64 / cm.support(c) as f64)
        .collect();
    Ok(recalls.iter().sum::<f64>() / recalls.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Averaging {
    Macro,
    Weighted,
}

fn class_f1(cm: &ConfusionMatrix, c: usize) -> f64 {
    let tp = cm.get(c, c) as f64;
    let (predicted, support) = (cm.predicted(c) as f64, cm.support(c) as f64);
    let precision = if predicted > 0.0 { tp / predicted } else { 0.0 };
    let recall = if support > 0.0 { tp / support } else { 0.0 };
    if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    }
}

pub fn f1(cm: &ConfusionMatrix, averaging: Averaging) -> Result<f64> {
    let total = cm.nonempty()?;
    let present: Vec<usize> = (0..cm.classes()).filter(|&c| cm.support(c) > 0).collect();
    Ok(match averaging {
        Averaging::Macro => present.iter().map(|&c| class_f1(cm, c)).sum::<f64>() / present.len() as f64,
        Averaging::Weighted => {
            present.iter().map(|&c| cm.support(c) as f64 * class_f1(cm, c)).sum::<f64>() / total
        }
    })
}

pub fn cohen_kappa(cm: &ConfusionMatrix) -> Result<f64> {
    let total = cm.nonempty()?;
    let po = accuracy(cm)?;
    let pe = (0..cm.classes())
        .map(|c| cm.support(c) as f64 * cm.predicted(c) as f64)
        .sum::<f64>()
        / (total * total);
    if (1.0 - pe).abs() < 1e-12 {
        return Ok(if po == 1.0 { 1.0 } else { 0.0 });
    }
    Ok((po - pe) / (1.0 - pe))
}

fn check_binary(scores: &[f64], labels: &[bool]) -> Result<()> {
    if scores.len() != labels.len() {
        return Err(MetricError::LengthMismatch(scores.len(), labels.len()));
    }
    if scores.is_empty() {
        return Err(MetricError::EmptyInput);
    }
    Ok(())
}

/// Indices sorted by ascending score, split into runs of equal score.
fn tie_groups(scores: &[f64]) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for i in order {
        match groups.last_mut() {
            Some(g) if scores[g[0]] == scores[i] => g.push(i),
            _ => groups.push(vec![i]),
        }
    }
    groups
}

/// Probability that a random positive outscores a random negative, ties
/// counting one half.
pub fn auroc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    check_binary(scores, labels)?;
    let pos = labels.iter().filter(|&&l| l).count() as u64;
    let neg = labels.len() as u64 - pos;
    if pos == 0 || neg == 0 {
        return Err(MetricError::SingleClass);
    }
    // twice the win count, so ties stay integral
    let (mut doubled, mut neg_below) = (0u64, 0u64);
    for group in tie_groups(scores) {
        let p = group.iter().filter(|&&i| labels[i]).count() as u64;
        let n = group.len() as u64 - p;
        doubled += p * (2 * neg_below + n);
        neg_below += n;
    }
    Ok(doubled as f64 / (2 * pos * neg) as f64)
}

/// Average precision with tied scores entering the ranking together.
pub fn auprc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    check_binary(scores, labels)?;
    let pos = labels.iter().filter(|&&l| l).count();
    if pos == 0 {
        return Err(MetricError::NoPositives);
    }
    let (mut tp, mut seen, mut ap, mut prev_recall) = (0usize, 0usize, 0.0, 0.0);
    for group in tie_groups(scores).into_iter().rev() {
        tp += group.iter().filter(|&&i| labels[i]).count();
        seen += group.len();
        let recall = tp as f64 / pos as f64;
        ap += (recall - prev_recall) * (tp as f64 / seen as f64);
        prev_recall = recall;
    }
    Ok(ap)
}

pub fn mae(pred: &[f64], target: &[f64]) -> Result<f64> {
    if pred.len() != target.len() {
        return Err(MetricError::LengthMismatch(pred.len(), target.len()));
    }
    if pred.is_empty() {
        return Err(MetricError::EmptyInput);
    }
    Ok(pred.iter().zip(target).map(|(p, t)| (p - t).abs()).sum::<f64>() / pred.len() as f64)
}

/// `100 / ln(1 + m)`: maps an error onto a larger-is-better scale.
pub fn scale_mae(m: f64) -> Result<f64> {
    if m.is_nan() || m <= 0.0 {
        return Err(MetricError::NonPositiveMae(m));
    }
    Ok(100.0 / m.ln_1p())
}

fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    (sxy / n) / ((sxx / n).sqrt() * (syy / n).sqrt() + 1e-12)
}

/// Pearson correlation per row, averaged over rows.
pub fn mean_cc(pred: &[Vec<f64>], target: &[Vec<f64>]) -> Result<f64> {
    if pred.len() != target.len() || pred.is_empty() {
        return Err(MetricError::ShapeMismatch(format!("{} vs {} channels", pred.len(), target.len())));
    }
    let mut total = 0.0;
    for (p, t) in pred.iter().zip(target) {
        if p.len() != t.len() || p.len() < 2 {
            return Err(MetricError::ShapeMismatch(format!("rows of {} and {} samples", p.len(), t.len())));
        }
        total += pearson(p, t);
    }
    Ok(total / pred.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub values: BTreeMap<String, f64>,
    pub aggregate: f64,
}

pub fn aggregate_report(values: BTreeMap<String, f64>) -> Result<MetricReport> {
    if values.is_empty() {
        return Err(MetricError::EmptyInput);
    }
    let aggregate = values.values().sum::<f64>() / values.len() as f64;
    Ok(MetricReport { values, aggregate })
}

/// Model outputs over an evaluation set.
#[derive(Debug, Clone, Copy)]
pub enum Outputs<'a> {
    /// Class probabilities per sample and the true class.
    Classification { probs: &'a [Vec<f64>], labels: &'a [usize] },
    /// Predicted and true vectors per sample.
    Regression { pred: &'a [Vec<f64>], target: &'a [Vec<f64>] },
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

fn transpose(rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let width = rows.first().map_or(0, Vec::len);
    (0..width).map(|j| rows.iter().map(|r| r[j]).collect()).collect()
}

/// Computes each named metric. For regression, `mean_cc` treats each output
/// dimension as a channel whose trajectory runs across samples.
pub fn evaluate(names: &[String], outputs: Outputs<'_>) -> Result<MetricReport> {
    let mut values = BTreeMap::new();
    match outputs {
        Outputs::Classification { probs, labels } => {
            if probs.len() != labels.len() {
                return Err(MetricError::LengthMismatch(probs.len(), labels.len()));
            }
            let classes = probs.first().map_or(0, Vec::len);
            let pred: Vec<usize> = probs.iter().map(|p| argmax(p)).collect();
            let cm = ConfusionMatrix::from_labels(labels, &pred, classes)?;
            for name in names {
                let v = match name.as_str() {
                    "accuracy" => accuracy(&cm)?,
                    "balanced_accuracy" => balanced_accuracy(&cm)?,
                    "f1_macro" => f1(&cm, Averaging::Macro)?,
                    "f1_weighted" => f1(&cm, Averaging::Weighted)?,
                    "kappa" => cohen_kappa(&cm)?,
                    "auroc" | "auprc" => {
                        if classes != 2 {
                            return Err(MetricError::Incompatible {
                                name: name.clone(),
                                reason: format!("needs 2 classes, got {classes}"),
                            });
                        }
                        let scores: Vec<f64> = probs.iter().map(|p| p[1]).collect();
                        let positive: Vec<bool> = labels.iter().map(|&l| l == 1).collect();
                        if name == "auroc" {
                            auroc(&scores, &positive)?
                        } else {
                            auprc(&scores, &positive)?
                        }
                    }
                    other if is_known(other) => {
                        return Err(MetricError::Incompatible {
                            name: other.into(),
                            reason: "regression metric on a classification task".into(),
                        })
                    }
                    other => return Err(MetricError::UnknownMetric(other.into())),
                };
                values.insert(name.clone(), v);
            }
        }
        Outputs::Regression { pred, target } => {
            if pred.len() != target.len() {
                return Err(MetricError::LengthMismatch(pred.len(), target.len()));
            }
            let flat_p: Vec<f64> = pred.iter().flatten().copied().collect();
            let flat_t: Vec<f64> = target.iter().flatten().copied().collect();
            for name in names {
                let v = match name.as_str() {
                    "mae" => mae(&flat_p, &flat_t)?,
                    "scaled_mae" => scale_mae(mae(&flat_p, &flat_t)?)?,
                    "mean_cc" => mean_cc(&transpose(pred), &transpose(target))?,
                    other if is_known(other) => {
                        return Err(MetricError::Incompatible {
                            name: other.into(),
                            reason: "classification metric on a regression task".into(),
                        })
                    }
                    other => return Err(MetricError::UnknownMetric(other.into())),
                };
                values.insert(name.clone(), v);
            }
        }
    }
    aggregate_report(values)
}
