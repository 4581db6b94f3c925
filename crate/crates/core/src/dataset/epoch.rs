use serde::{Deserialize, Serialize};

use super::{DatasetError, Label, Result, Sample};
use crate::signal_io::Record;

/// Window length and hop, both in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpochSpec {
    pub window: f64,
    pub stride: f64,
}

impl EpochSpec {
    pub fn new(window: f64, stride: f64) -> Self {
        Self { window, stride }
    }

    /// Window and stride in samples at `rate`.
    pub fn samples(&self, rate: f64) -> Result<(usize, usize)> {
        let to_samples = |secs: f64, what: &str| {
            let n = (secs * rate).round();
            if secs > 0.0 && n >= 1.0 && n.is_finite() {
                Ok(n as usize)
            } else {
                Err(DatasetError::InvalidEpoch(format!(
                    "{what} of {secs} s at {rate} Hz is not a positive sample count"
                )))
            }
        };
        Ok((to_samples(self.window, "window")?, to_samples(self.stride, "stride")?))
    }

    pub fn canonical(&self) -> String {
        format!("epoch(window={:?},stride={:?})", self.window, self.stride)
    }
}

/// Number of whole windows; the last partial window is dropped.
pub fn window_count(samples: usize, window: usize, stride: usize) -> usize {
    if samples < window {
        0
    } else {
        (samples - window) / stride + 1
    }
}

/// How windows get their labels.
#[derive(Debug, Clone, PartialEq)]
pub enum LabelScheme {
    /// Every window inherits the record's class.
    PerRecord(usize),
    /// The annotation covering the window centre, looked up in `classes`.
    /// Windows without a covering, known annotation are dropped.
    PerEvent { classes: Vec<String> },
    /// The named channel becomes the target vector and is removed from the
    /// input data.
    Regression { target_channel: String },
}

impl LabelScheme {
    pub fn canonical(&self) -> String {
        match self {
            LabelScheme::PerRecord(c) => format!("per_record({c})"),
            LabelScheme::PerEvent { classes } => format!("per_event({classes:?})"),
            LabelScheme::Regression { target_channel } => format!("regression({target_channel:?})"),
        }
    }
}

/// Slices a record into labeled fixed-length samples.
pub fn epoch_record(record: &Record, spec: &EpochSpec, scheme: &LabelScheme) -> Result<Vec<Sample>> {
    let Some(first) = record.channels.first() else {
        return Ok(Vec::new());
    };
    let rate = first.sampling_rate;
    if let Some(other) = record.channels.iter().find(|c| c.sampling_rate != rate) {
        return Err(DatasetError::MixedRates(format!(
            "{:?} at {} Hz vs {:?} at {} Hz",
            first.label, rate, other.label, other.sampling_rate
        )));
    }
    let (w, s) = spec.samples(rate)?;
    let n = record.data.iter().map(Vec::len).min().unwrap_or(0);
    if w > n {
        return Err(DatasetError::WindowTooLong {
            window: spec.window,
            duration: n as f64 / rate,
        });
    }

    let target = match scheme {
        LabelScheme::Regression { target_channel } => Some(
            record
                .channel_index(target_channel)
                .ok_or_else(|| DatasetError::MissingTargetChannel(target_channel.clone()))?,
        ),
        _ => None,
    };
    let inputs: Vec<usize> = (0..record.channels.len()).filter(|&i| Some(i) != target).collect();
    let channels: Vec<_> = inputs.iter().map(|&i| record.channels[i].clone()).collect();

    let mut out = Vec::new();
    for k in 0..window_count(n, w, s) {
        let start = k * s;
        let label = match scheme {
            LabelScheme::PerRecord(class) => Label::Class(*class),
            LabelScheme::PerEvent { classes } => {
                let centre = (start as f64 + w as f64 / 2.0) / rate;
                // earliest onset wins when spans touch at the centre
                let hit = record
                    .annotations
                    .iter()
                    .filter(|a| a.onset <= centre && centre <= a.onset + a.duration)
                    .filter_map(|a| classes.iter().position(|c| *c == a.label).map(|c| (a.onset, c)))
                    .min_by(|a, b| a.0.total_cmp(&b.0));
                match hit {
                    Some((_, class)) => Label::Class(class),
                    None => continue,
                }
            }
            LabelScheme::Regression { .. } => {
                Label::Values(record.data[target.expect("resolved above")][start..start + w].to_vec())
            }
        };
        out.push(Sample {
            data: inputs.iter().map(|&i| record.data[i][start..start + w].to_vec()).collect(),
            channels: channels.clone(),
            label,
            subject_id: record.subject_id.clone(),
            record_id: record.record_id.clone(),
            window_index: k,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal_io::{ChannelInfo, EventAnnotation};
    use chrono::NaiveDateTime;
    use proptest::prelude::*;

    fn rec(rate: f64, n: usize, annotations: Vec<EventAnnotation>) -> Record {
        Record::new(
            "r1",
            "s1",
            NaiveDateTime::default(),
            vec![ChannelInfo::new("A", rate, -1e9, 1e9), ChannelInfo::new("B", rate, -1e9, 1e9)],
            vec![(0..n).map(|i| i as f64).collect(), (0..n).map(|i| -(i as f64)).collect()],
            annotations,
        )
        .unwrap()
    }

    #[test]
    fn closed_form_window_count() {
        let samples = epoch_record(&rec(100.0, 1000, vec![]), &EpochSpec::new(2.0, 1.0), &LabelScheme::PerRecord(1)).unwrap();
        assert_eq!(samples.len(), 9);
        assert_eq!(samples[3].data[0][0], 300.0);
        assert_eq!(samples[3].window_index, 3);
        assert!(samples.iter().all(|s| s.label == Label::Class(1) && s.data[0].len() == 200));
    }

    #[test]
    fn full_length_window() {
        for stride in [0.5, 1.0, 7.0] {
            let samples = epoch_record(&rec(100.0, 1000, vec![]), &EpochSpec::new(10.0, stride), &LabelScheme::PerRecord(0)).unwrap();
            assert_eq!(samples.len(), 1);
        }
    }

    #[test]
    fn per_event_centre_rule() {
        let ann = vec![EventAnnotation { onset: 0.0, duration: 2.0, label: "A".into() }];
        let scheme = LabelScheme::PerEvent { classes: vec!["A".into(), "B".into()] };
        let samples = epoch_record(&rec(10.0, 40, ann), &EpochSpec::new(1.0, 1.0), &scheme).unwrap();
        // centres 0.5, 1.5, 2.5, 3.5 s against the [0, 2] s span
        let kept: Vec<_> = samples.iter().map(|s| (s.window_index, s.label.clone())).collect();
        assert_eq!(kept, vec![(0, Label::Class(0)), (1, Label::Class(0))]);
    }

    #[test]
    fn per_event_tie_goes_to_earliest_onset() {
        let ann = vec![
            EventAnnotation { onset: 1.0, duration: 1.0, label: "B".into() },
            EventAnnotation { onset: 0.0, duration: 1.0, label: "A".into() },
        ];
        let scheme = LabelScheme::PerEvent { classes: vec!["A".into(), "B".into()] };
        // window [0.5, 1.5) has its centre on the shared boundary at 1.0 s
        let samples = epoch_record(&rec(10.0, 20, ann), &EpochSpec::new(1.0, 0.5), &scheme).unwrap();
        let w1 = samples.iter().find(|s| s.window_index == 1).unwrap();
        assert_eq!(w1.label, Label::Class(0));
    }

    #[test]
    fn regression_target_removed_from_inputs() {
        let scheme = LabelScheme::Regression { target_channel: "B".into() };
        let samples = epoch_record(&rec(10.0, 30, vec![]), &EpochSpec::new(1.0, 1.0), &scheme).unwrap();
        assert_eq!(samples[1].channels.len(), 1);
        assert_eq!(samples[1].label, Label::Values((10..20).map(|i| -(i as f64)).collect()));
        let missing = LabelScheme::Regression { target_channel: "Z".into() };
        assert!(matches!(
            epoch_record(&rec(10.0, 30, vec![]), &EpochSpec::new(1.0, 1.0), &missing),
            Err(DatasetError::MissingTargetChannel(_))
        ));
    }

    #[test]
    fn errors() {
        let r = rec(100.0, 100, vec![]);
        assert!(matches!(
            epoch_record(&r, &EpochSpec::new(2.0, 1.0), &LabelScheme::PerRecord(0)),
            Err(DatasetError::WindowTooLong { .. })
        ));
        let mut mixed = r.clone();
        mixed.channels[1].sampling_rate = 50.0;
        mixed.data[1].truncate(50);
        assert!(matches!(
            epoch_record(&mixed, &EpochSpec::new(0.5, 0.5), &LabelScheme::PerRecord(0)),
            Err(DatasetError::MixedRates(_))
        ));
        assert!(matches!(
            epoch_record(&r, &EpochSpec::new(0.001, 0.5), &LabelScheme::PerRecord(0)),
            Err(DatasetError::InvalidEpoch(_))
        ));
    }

    proptest! {
        #[test]
        fn window_arithmetic(n in 50usize..2000, w in 1usize..50, s in 1usize..50) {
            let rate = 100.0;
            let r = rec(rate, n, vec![]);
            let spec = EpochSpec::new(w as f64 / rate, s as f64 / rate);
            let samples = epoch_record(&r, &spec, &LabelScheme::PerRecord(0)).unwrap();
            prop_assert_eq!(samples.len(), (n - w) / s + 1);
            for smp in &samples {
                // provenance: the window maps back to its source slice
                prop_assert_eq!(smp.data[0][0], (smp.window_index * s) as f64);
            }
        }
    }
}
