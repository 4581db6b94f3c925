//! Comma-separated signals: the first row holds channel labels, an optional
//! leading `t`/`time` column is ignored for data, one row per sample.

use chrono::NaiveDateTime;

use super::{ChannelInfo, Record, Result, SignalIoError};

fn is_time_column(label: &str) -> bool {
    matches!(label.trim().to_ascii_lowercase().as_str(), "t" | "time")
}

/// Parses CSV text. Without an explicit `sampling_rate` the rate is taken
/// from the spacing of the first two time-column entries.
pub fn parse_csv(text: &str, record_id: &str, sampling_rate: Option<f64>) -> Result<Record> {
    let mut lines = text.lines().map(str::trim_end).filter(|l| !l.trim().is_empty());
    let header = lines
        .next()
        .ok_or_else(|| SignalIoError::MalformedCsv("empty file".into()))?;
    let labels: Vec<&str> = header.split(',').map(str::trim).collect();
    let has_time = labels.first().is_some_and(|l| is_time_column(l));
    let first_data = usize::from(has_time);
    if labels.len() <= first_data {
        return Err(SignalIoError::MalformedCsv("no signal columns".into()));
    }

    let mut times = Vec::new();
    let mut data = vec![Vec::new(); labels.len() - first_data];
    for (row, line) in lines.enumerate() {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != labels.len() {
            return Err(SignalIoError::MalformedCsv(format!(
                "row {} has {} fields, header has {}",
                row + 2,
                fields.len(),
                labels.len()
            )));
        }
        let parse = |s: &str| {
            s.trim().parse::<f64>().map_err(|_| {
                SignalIoError::MalformedCsv(format!("row {}: {:?} is not a number", row + 2, s.trim()))
            })
        };
        if has_time {
            times.push(parse(fields[0])?);
        }
        for (col, f) in data.iter_mut().zip(&fields[first_data..]) {
            col.push(parse(f)?);
        }
    }

    let rate = match sampling_rate {
        Some(r) => r,
        None if times.len() >= 2 => 1.0 / (times[1] - times[0]),
        None => {
            return Err(SignalIoError::MalformedCsv(
                "sampling rate not supplied and no time column to infer it from".into(),
            ))
        }
    };
    if !(rate.is_finite() && rate > 0.0) {
        return Err(SignalIoError::MalformedCsv(format!("invalid sampling rate {rate}")));
    }

    let channels = labels[first_data..]
        .iter()
        .zip(&data)
        .map(|(label, samples)| {
            let lo = samples.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = samples.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let (lo, hi) = if lo.is_finite() && hi > lo { (lo, hi) } else { (lo.min(0.0) - 1.0, hi.max(0.0) + 1.0) };
            let (lo, hi) = if lo.is_finite() { (lo, hi) } else { (-1.0, 1.0) };
            ChannelInfo {
                physical_unit: String::new(),
                ..ChannelInfo::new(*label, rate, lo, hi)
            }
        })
        .collect();
    Record::new(record_id, record_id, NaiveDateTime::default(), channels, data, Vec::new())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn direct_transcription() {
        let rec = parse_csv("t,C1\n0,1.5\n0.01,2.5", "sig", Some(100.0)).unwrap();
        assert_eq!(rec.channels.len(), 1);
        assert_eq!(rec.channels[0].label, "C1");
        assert_eq!(rec.data[0], vec![1.5, 2.5]);
        assert_eq!(rec.channels[0].sampling_rate, 100.0);
    }

    #[test]
    fn rate_inferred_from_time_column() {
        let rec = parse_csv("time,A,B\n0,1,2\n0.5,3,4\n1.0,5,6\n", "sig", None).unwrap();
        assert_eq!(rec.channels[0].sampling_rate, 2.0);
        assert_eq!(rec.data[1], vec![2.0, 4.0, 6.0]);
    }

    #[test]
    fn without_time_column_needs_rate() {
        assert!(parse_csv("A,B\n1,2\n", "sig", None).is_err());
        let rec = parse_csv("A,B\n1,2\n", "sig", Some(10.0)).unwrap();
        assert_eq!(rec.data, vec![vec![1.0], vec![2.0]]);
    }

    #[test]
    fn ragged_rows_rejected() {
        assert!(matches!(
            parse_csv("t,A\n0,1\n0.1\n", "sig", Some(10.0)),
            Err(SignalIoError::MalformedCsv(_))
        ));
    }

    #[test]
    fn constant_channel_gets_nonzero_range() {
        let rec = parse_csv("A\n5\n5\n", "sig", Some(1.0)).unwrap();
        assert!(rec.channels[0].physical_max > rec.channels[0].physical_min);
    }
}
