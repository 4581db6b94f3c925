//! EDF / BDF reader and writer.
//!
//! Header layout: a 256-byte fixed block followed by 256 bytes per signal,
//! with every per-signal field stored as consecutive arrays (all labels,
//! then all transducers, ...). Samples follow as interleaved data records,
//! 16-bit little-endian for EDF and 24-bit little-endian for BDF.

use std::path::Path;

use chrono::{NaiveDate, NaiveDateTime, NaiveTime};

use super::{io_err, ChannelInfo, EventAnnotation, Record, Result, SignalIoError};

const FIXED_HEADER: usize = 256;
const EDF_MAGIC: &[u8; 8] = b"0       ";
const BDF_MAGIC: &[u8; 8] = b"\xFFBIOSEMI";
const TAL_DURATION: u8 = 0x15;
const TAL_SEPARATOR: u8 = 0x14;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Width {
    Edf,
    Bdf,
}

impl Width {
    fn bytes(self) -> usize {
        match self {
            Width::Edf => 2,
            Width::Bdf => 3,
        }
    }

    fn digital_limits(self) -> (i32, i32) {
        match self {
            Width::Edf => (i16::MIN as i32, i16::MAX as i32),
            Width::Bdf => (-(1 << 23), (1 << 23) - 1),
        }
    }

    fn annotation_label(self) -> &'static str {
        match self {
            Width::Edf => "EDF Annotations",
            Width::Bdf => "BDF Annotations",
        }
    }
}

/// Text field: non-ASCII bytes become '?', trailing padding is dropped.
fn text_field(bytes: &[u8]) -> String {
    bytes
        .iter()
        .map(|&b| if b.is_ascii() && !b.is_ascii_control() { b as char } else { '?' })
        .collect::<String>()
        .trim()
        .to_string()
}

/// Structural field: must be ASCII and parse as `T`.
fn number_field<T: std::str::FromStr>(bytes: &[u8], name: &str) -> Result<T> {
    if !bytes.is_ascii() {
        return Err(SignalIoError::MalformedHeader(format!("{name}: non-ASCII bytes")));
    }
    let s = std::str::from_utf8(bytes).expect("ascii").trim();
    s.parse::<T>()
        .map_err(|_| SignalIoError::MalformedHeader(format!("{name}: cannot parse {s:?}")))
}

fn parse_start(date: &[u8], time: &[u8]) -> Result<NaiveDateTime> {
    let fields = |bytes: &[u8], name: &str| -> Result<[u32; 3]> {
        let s = text_field(bytes);
        let parts: Vec<&str> = s.split(['.', ':']).collect();
        if parts.len() != 3 {
            return Err(SignalIoError::MalformedHeader(format!("{name}: {s:?}")));
        }
        let mut out = [0u32; 3];
        for (o, p) in out.iter_mut().zip(&parts) {
            *o = p
                .trim()
                .parse()
                .map_err(|_| SignalIoError::MalformedHeader(format!("{name}: {s:?}")))?;
        }
        Ok(out)
    };
    let [day, month, yy] = fields(date, "start date")?;
    let [h, m, s] = fields(time, "start time")?;
    // two-digit years: 85..99 -> 19xx, otherwise 20xx
    let year = if yy >= 85 { 1900 + yy } else { 2000 + yy } as i32;
    let date = NaiveDate::from_ymd_opt(year, month, day)
        .ok_or_else(|| SignalIoError::MalformedHeader(format!("start date {day}.{month}.{yy}")))?;
    let time = NaiveTime::from_hms_opt(h, m, s)
        .ok_or_else(|| SignalIoError::MalformedHeader(format!("start time {h}.{m}.{s}")))?;
    Ok(NaiveDateTime::new(date, time))
}

/// Snaps `spr / duration` to an integer rate when the ratio only misses one
/// because the duration field is a decimal approximation.
fn sampling_rate(samples_per_record: usize, record_duration: f64) -> f64 {
    let rate = samples_per_record as f64 / record_duration;
    let rounded = rate.round();
    if rounded > 0.0 && (rate - rounded).abs() <= 1e-9 * rounded {
        rounded
    } else {
        rate
    }
}

struct SignalHeader {
    info: ChannelInfo,
    samples_per_record: usize,
    annotation: bool,
}

/// Parses an EDF(+) or BDF(+) file held in memory. Any input yields either a
/// complete record or a typed error.
pub fn parse_edf_bytes(bytes: &[u8], record_id: &str) -> Result<Record> {
    if bytes.len() < FIXED_HEADER {
        return Err(SignalIoError::MalformedHeader(format!(
            "file is {} bytes, shorter than the fixed header",
            bytes.len()
        )));
    }
    let width = match &bytes[0..8] {
        m if m == EDF_MAGIC => Width::Edf,
        m if m == BDF_MAGIC => Width::Bdf,
        _ => return Err(SignalIoError::MalformedHeader("unrecognised version field".into())),
    };
    let patient = text_field(&bytes[8..88]);
    let start_time = parse_start(&bytes[168..176], &bytes[176..184])?;
    let header_bytes: usize = number_field(&bytes[184..192], "header bytes")?;
    let record_count: i64 = number_field(&bytes[236..244], "number of data records")?;
    let record_duration: f64 = number_field(&bytes[244..252], "data record duration")?;
    let ns: usize = number_field(&bytes[252..256], "number of signals")?;
    if ns == 0 {
        return Err(SignalIoError::MalformedHeader("no signals".into()));
    }
    let expected_header = FIXED_HEADER * (ns + 1);
    if header_bytes != expected_header {
        return Err(SignalIoError::MalformedHeader(format!(
            "header bytes field {header_bytes} != 256 x ({ns} + 1)"
        )));
    }
    if bytes.len() < expected_header {
        return Err(SignalIoError::MalformedHeader(format!(
            "file is {} bytes, header needs {expected_header}",
            bytes.len()
        )));
    }
    if !(record_duration.is_finite() && record_duration > 0.0) {
        return Err(SignalIoError::MalformedHeader(format!(
            "data record duration {record_duration} must be positive"
        )));
    }

    let field = |offset: usize, width: usize, i: usize| {
        let start = FIXED_HEADER + offset * ns + i * width;
        &bytes[start..start + width]
    };
    let mut signals = Vec::with_capacity(ns);
    for i in 0..ns {
        let label = text_field(field(0, 16, i));
        let annotation = label == width.annotation_label();
        let samples_per_record: usize = number_field(field(216, 8, i), "samples per record")?;
        if samples_per_record == 0 {
            return Err(SignalIoError::MalformedHeader(format!(
                "signal {label:?} has zero samples per record"
            )));
        }
        let physical_min: f64 = number_field(field(104, 8, i), "physical minimum")?;
        let physical_max: f64 = number_field(field(112, 8, i), "physical maximum")?;
        let digital_min: i32 = number_field(field(120, 8, i), "digital minimum")?;
        let digital_max: i32 = number_field(field(128, 8, i), "digital maximum")?;
        if !annotation {
            if digital_min == digital_max || physical_min == physical_max {
                return Err(SignalIoError::DegenerateCalibration(label));
            }
            if digital_min > digital_max || !(physical_max > physical_min) || !physical_min.is_finite() || !physical_max.is_finite()
            {
                return Err(SignalIoError::MalformedHeader(format!(
                    "signal {label:?}: inverted or non-finite calibration range"
                )));
            }
        }
        signals.push(SignalHeader {
            info: ChannelInfo {
                physical_unit: text_field(field(96, 8, i)),
                sampling_rate: sampling_rate(samples_per_record, record_duration),
                physical_min,
                physical_max,
                digital_min,
                digital_max,
                label,
            },
            samples_per_record,
            annotation,
        });
    }

    let sample_bytes = width.bytes();
    let record_size = signals
        .iter()
        .try_fold(0usize, |acc, s| s.samples_per_record.checked_mul(sample_bytes)?.checked_add(acc))
        .ok_or_else(|| SignalIoError::MalformedHeader("data record size overflows".into()))?;
    let available = (bytes.len() - expected_header) as u64;
    let records: u64 = match record_count {
        -1 => available / record_size as u64,
        n if n >= 0 => n as u64,
        n => return Err(SignalIoError::MalformedHeader(format!("number of data records {n}"))),
    };
    let expected = records
        .checked_mul(record_size as u64)
        .ok_or_else(|| SignalIoError::MalformedHeader("data size overflows".into()))?;
    if available < expected {
        return Err(SignalIoError::TruncatedData {
            expected,
            found: available,
        });
    }
    let records = records as usize;
    let data_region = &bytes[expected_header..expected_header + expected as usize];

    let mut channels = Vec::new();
    let mut data: Vec<Vec<f64>> = Vec::new();
    let mut slot = Vec::with_capacity(ns);
    for s in &signals {
        if s.annotation {
            slot.push(None);
        } else {
            slot.push(Some(data.len()));
            channels.push(s.info.clone());
            data.push(Vec::with_capacity(records * s.samples_per_record));
        }
    }
    let mut annotations = Vec::new();
    for record in data_region.chunks_exact(record_size.max(1)).take(records) {
        let mut offset = 0;
        for (s, target) in signals.iter().zip(&slot) {
            let len = s.samples_per_record * sample_bytes;
            let raw = &record[offset..offset + len];
            offset += len;
            match target {
                Some(idx) => {
                    let out = &mut data[*idx];
                    match width {
                        Width::Edf => out.extend(
                            raw.chunks_exact(2)
                                .map(|b| s.info.to_physical(i16::from_le_bytes([b[0], b[1]]) as i32)),
                        ),
                        Width::Bdf => out.extend(raw.chunks_exact(3).map(|b| {
                            let v = i32::from_le_bytes([b[0], b[1], b[2], 0]);
                            s.info.to_physical((v << 8) >> 8)
                        })),
                    }
                }
                None => parse_tals(raw, &mut annotations),
            }
        }
    }

    let duration = records as f64 * record_duration;
    let annotations = annotations
        .into_iter()
        .filter(|a: &EventAnnotation| a.onset >= 0.0 && a.onset <= duration)
        .map(|mut a| {
            a.duration = a.duration.max(0.0).min(duration - a.onset);
            a
        })
        .collect();

    let subject_id = match patient.split_whitespace().next() {
        Some(tok) if tok != "X" => tok.to_string(),
        _ => record_id.to_string(),
    };
    let record = Record {
        record_id: record_id.to_string(),
        subject_id,
        start_time,
        channels,
        data,
        annotations,
    };
    record.validate().map_err(|e| SignalIoError::MalformedHeader(e.to_string()))?;
    Ok(record)
}

/// Time-stamped annotation lists: `+onset[\x15duration]\x14label\x14...\x00`.
/// The leading timekeeping TAL of each data record has no label and is
/// skipped; unparseable TALs are ignored.
fn parse_tals(raw: &[u8], out: &mut Vec<EventAnnotation>) {
    for tal in raw.split(|&b| b == 0).filter(|t| !t.is_empty()) {
        let mut parts = tal.split(|&b| b == TAL_SEPARATOR);
        let Some(head) = parts.next() else { continue };
        let mut timing = head.split(|&b| b == TAL_DURATION);
        let onset = timing
            .next()
            .and_then(|b| std::str::from_utf8(b).ok())
            .and_then(|s| s.trim().parse::<f64>().ok());
        let duration = match timing.next() {
            Some(b) => std::str::from_utf8(b).ok().and_then(|s| s.trim().parse::<f64>().ok()),
            None => Some(0.0),
        };
        let (Some(onset), Some(duration)) = (onset, duration) else { continue };
        if !onset.is_finite() || !duration.is_finite() {
            continue;
        }
        for label in parts.filter(|l| !l.is_empty()) {
            out.push(EventAnnotation {
                onset,
                duration,
                label: String::from_utf8_lossy(label).into_owned(),
            });
        }
    }
}

#[derive(Clone, Copy)]
enum Rounding {
    Down,
    Up,
}

/// Formats `value` into at most 8 characters, rounding in the given
/// direction so a physical range only ever widens.
fn format_bounded(value: f64, rounding: Rounding) -> Option<String> {
    if !value.is_finite() {
        return None;
    }
    for precision in (0..=7).rev() {
        let scale = 10f64.powi(precision);
        let scaled = value * scale;
        let q = match rounding {
            Rounding::Down => scaled.floor(),
            Rounding::Up => scaled.ceil(),
        };
        let mut s = format!("{:.*}", precision as usize, q / scale);
        if s.contains('.') {
            s = s.trim_end_matches('0').trim_end_matches('.').to_string();
        }
        if s == "-0" {
            s = "0".into();
        }
        if s.len() > 8 {
            continue;
        }
        let back: f64 = s.parse().ok()?;
        let ok = match rounding {
            Rounding::Down => back <= value,
            Rounding::Up => back >= value,
        };
        if ok {
            return Some(s);
        }
    }
    None
}

fn put(header: &mut Vec<u8>, value: &str, width: usize) -> Result<()> {
    let bytes: Vec<u8> = value.bytes().map(|b| if b.is_ascii() && !b.is_ascii_control() { b } else { b'?' }).collect();
    if bytes.len() > width {
        return Err(SignalIoError::InvalidRecord(format!(
            "header value {value:?} does not fit in {width} bytes"
        )));
    }
    header.extend_from_slice(&bytes);
    header.resize(header.len() + width - bytes.len(), b' ');
    Ok(())
}

/// Picks a data-record duration that divides every channel evenly.
fn choose_record_duration(record: &Record) -> Result<(String, f64, Vec<usize>, usize)> {
    let total = format_bounded(record.duration(), Rounding::Up);
    let candidates = ["1", "0.5", "0.25", "0.2", "0.1", "2", "5", "10"]
        .into_iter()
        .map(String::from)
        .chain(total);
    'candidates: for text in candidates {
        let d: f64 = text.parse().expect("candidate durations parse");
        if d <= 0.0 {
            continue;
        }
        let mut per_record = Vec::with_capacity(record.channels.len());
        let mut count = None;
        for (ch, samples) in record.channels.iter().zip(&record.data) {
            let spr = ch.sampling_rate * d;
            let rounded = spr.round();
            if rounded < 1.0 || (spr - rounded).abs() > 1e-9 * rounded {
                continue 'candidates;
            }
            let spr = rounded as usize;
            if samples.len() % spr != 0 || sampling_rate(spr, d) != ch.sampling_rate {
                continue 'candidates;
            }
            let n = samples.len() / spr;
            if count.is_some_and(|c| c != n) {
                continue 'candidates;
            }
            count = Some(n);
            per_record.push(spr);
        }
        return Ok((text, d, per_record, count.unwrap_or(0)));
    }
    Err(SignalIoError::InvalidRecord(
        "no data-record duration divides every channel evenly".into(),
    ))
}

fn encode(record: &Record, width: Width) -> Result<Vec<u8>> {
    record.validate()?;
    for (ch, samples) in record.channels.iter().zip(&record.data) {
        if let Some(&value) = samples
            .iter()
            .find(|v| !(**v >= ch.physical_min && **v <= ch.physical_max))
        {
            return Err(SignalIoError::RangeOverflow {
                channel: ch.label.clone(),
                value,
                min: ch.physical_min,
                max: ch.physical_max,
            });
        }
    }
    let (duration_text, duration, spr, records) = choose_record_duration(record)?;
    let (lo, hi) = width.digital_limits();

    struct Encoded {
        pmin: String,
        pmax: String,
        pmin_v: f64,
        pmax_v: f64,
        dmin: i32,
        dmax: i32,
    }
    let mut encoded = Vec::with_capacity(record.channels.len());
    for ch in &record.channels {
        let range_err = || SignalIoError::InvalidRecord(format!("physical range of {:?} not representable", ch.label));
        let pmin = format_bounded(ch.physical_min, Rounding::Down).ok_or_else(range_err)?;
        let pmax = format_bounded(ch.physical_max, Rounding::Up).ok_or_else(range_err)?;
        let (mut dmin, mut dmax) = (ch.digital_min.max(lo), ch.digital_max.min(hi));
        if dmin >= dmax {
            (dmin, dmax) = (lo, hi);
        }
        encoded.push(Encoded {
            pmin_v: pmin.parse().expect("formatted"),
            pmax_v: pmax.parse().expect("formatted"),
            pmin,
            pmax,
            dmin,
            dmax,
        });
    }

    // one TAL list per data record, each opened by a timekeeping TAL
    let tals: Vec<Vec<u8>> = if record.annotations.is_empty() {
        Vec::new()
    } else {
        let mut lists: Vec<Vec<u8>> = (0..records.max(1))
            .map(|k| format!("+{}\x14\x14\x00", k as f64 * duration).into_bytes())
            .collect();
        for a in &record.annotations {
            let k = ((a.onset / duration).floor() as usize).min(lists.len() - 1);
            let label: String = a.label.chars().map(|c| if c == '\x14' || c == '\0' { '?' } else { c }).collect();
            let tal = if a.duration > 0.0 {
                format!("+{}\x15{}\x14{}\x14\x00", a.onset, a.duration, label)
            } else {
                format!("+{}\x14{}\x14\x00", a.onset, label)
            };
            lists[k].extend_from_slice(tal.as_bytes());
        }
        lists
    };
    let annotation_spr = tals.iter().map(|t| t.len().div_ceil(width.bytes())).max().unwrap_or(0);
    let ns = record.channels.len() + usize::from(!tals.is_empty());

    let mut h = Vec::with_capacity(FIXED_HEADER * (ns + 1));
    match width {
        Width::Edf => h.extend_from_slice(EDF_MAGIC),
        Width::Bdf => h.extend_from_slice(BDF_MAGIC),
    }
    let subject = if record.subject_id.trim().is_empty() {
        "X".to_string()
    } else {
        record.subject_id.split_whitespace().collect::<Vec<_>>().join("_")
    };
    put(&mut h, &format!("{subject} X X X"), 80)?;
    let recording = if tals.is_empty() {
        record.record_id.clone()
    } else {
        format!(
            "Startdate {} X X {}",
            record.start_time.format("%d-%b-%Y").to_string().to_uppercase(),
            record.record_id.split_whitespace().collect::<Vec<_>>().join("_")
        )
    };
    let recording: String = recording.chars().take(80).collect();
    put(&mut h, &recording, 80)?;
    put(&mut h, &record.start_time.format("%d.%m.%y").to_string(), 8)?;
    put(&mut h, &record.start_time.format("%H.%M.%S").to_string(), 8)?;
    put(&mut h, &(FIXED_HEADER * (ns + 1)).to_string(), 8)?;
    let reserved = match (width, tals.is_empty()) {
        (_, true) => "",
        (Width::Edf, false) => "EDF+C",
        (Width::Bdf, false) => "BDF+C",
    };
    put(&mut h, reserved, 44)?;
    put(&mut h, &records.to_string(), 8)?;
    put(&mut h, &duration_text, 8)?;
    put(&mut h, &ns.to_string(), 4)?;

    let annotation = !tals.is_empty();
    let labels = record.channels.iter().map(|c| c.label.as_str()).chain(annotation.then(|| width.annotation_label()));
    for l in labels {
        put(&mut h, l, 16)?;
    }
    for _ in 0..ns {
        put(&mut h, "", 80)?;
    }
    for c in &record.channels {
        put(&mut h, &c.physical_unit, 8)?;
    }
    if annotation {
        put(&mut h, "", 8)?;
    }
    let (alo, ahi) = (lo.to_string(), hi.to_string());
    for e in &encoded {
        put(&mut h, &e.pmin, 8)?;
    }
    if annotation {
        put(&mut h, "-1", 8)?;
    }
    for e in &encoded {
        put(&mut h, &e.pmax, 8)?;
    }
    if annotation {
        put(&mut h, "1", 8)?;
    }
    for e in &encoded {
        put(&mut h, &e.dmin.to_string(), 8)?;
    }
    if annotation {
        put(&mut h, &alo, 8)?;
    }
    for e in &encoded {
        put(&mut h, &e.dmax.to_string(), 8)?;
    }
    if annotation {
        put(&mut h, &ahi, 8)?;
    }
    for _ in 0..ns {
        put(&mut h, "", 80)?;
    }
    for s in spr.iter().copied().chain(annotation.then_some(annotation_spr)) {
        put(&mut h, &s.to_string(), 8)?;
    }
    for _ in 0..ns {
        put(&mut h, "", 32)?;
    }
    debug_assert_eq!(h.len(), FIXED_HEADER * (ns + 1));

    let sample_bytes = width.bytes();
    for k in 0..records {
        for ((samples, e), &n) in record.data.iter().zip(&encoded).zip(&spr) {
            let scale = (e.dmax - e.dmin) as f64 / (e.pmax_v - e.pmin_v);
            for &v in &samples[k * n..(k + 1) * n] {
                let d = ((v - e.pmin_v) * scale + e.dmin as f64).round().clamp(e.dmin as f64, e.dmax as f64) as i32;
                h.extend_from_slice(&d.to_le_bytes()[..sample_bytes]);
            }
        }
        if annotation {
            let mut block = tals[k].clone();
            block.resize(annotation_spr * sample_bytes, 0);
            h.extend_from_slice(&block);
        }
    }
    Ok(h)
}

/// Encodes a record as EDF (EDF+C when it carries annotations).
pub fn write_edf_bytes(record: &Record) -> Result<Vec<u8>> {
    encode(record, Width::Edf)
}

/// Encodes a record as 24-bit BDF.
pub fn write_bdf_bytes(record: &Record) -> Result<Vec<u8>> {
    encode(record, Width::Bdf)
}

pub fn write_edf(record: &Record, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = write_edf_bytes(record)?;
    std::fs::write(path, bytes).map_err(|e| io_err(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Hand-assembled EDF with one 3-sample channel, independent of the writer.
    fn raw_edf(digital: &[i16], dmin: i32, dmax: i32) -> Vec<u8> {
        let mut h = Vec::new();
        let mut put = |s: &str, w: usize| {
            h.extend_from_slice(s.as_bytes());
            h.extend(std::iter::repeat_n(b' ', w - s.len()));
        };
        put("0", 8);
        put("P01 M 01-JAN-1990 Doe", 80);
        put("rec", 80);
        put("01.02.03", 8);
        put("04.05.06", 8);
        put("512", 8);
        put("", 44);
        put("1", 8);
        put("1", 8);
        put("1", 4);
        put("Fp1", 16);
        put("", 80);
        put("uV", 8);
        put("-500", 8);
        put("500", 8);
        put(&dmin.to_string(), 8);
        put(&dmax.to_string(), 8);
        put("", 80);
        put(&digital.len().to_string(), 8);
        put("", 32);
        for d in digital {
            h.extend_from_slice(&d.to_le_bytes());
        }
        h
    }

    #[test]
    fn calibration_of_hand_built_file() {
        let rec = parse_edf_bytes(&raw_edf(&[0, 100, -100], -32768, 32767), "r").unwrap();
        // (d - dmin) * (pmax - pmin) / (dmax - dmin) + pmin, evaluated by hand
        let phys = |d: f64| (d + 32768.0) * 1000.0 / 65535.0 - 500.0;
        let expected = [phys(0.0), phys(100.0), phys(-100.0)];
        for (a, b) in rec.data[0].iter().zip(expected) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!((rec.data[0][0] - 0.007629).abs() < 1e-6);
        assert!((rec.data[0][1] - 1.533).abs() < 1e-3);
        assert!((rec.data[0][2] - (-1.518)).abs() < 1e-3);
        assert_eq!(rec.subject_id, "P01");
        assert_eq!(rec.channels[0].sampling_rate, 3.0);
        assert_eq!(rec.start_time.to_string(), "2003-02-01 04:05:06");
    }

    #[test]
    fn degenerate_digital_range() {
        let err = parse_edf_bytes(&raw_edf(&[0, 0, 0], 5, 5), "r").unwrap_err();
        assert!(matches!(err, SignalIoError::DegenerateCalibration(l) if l == "Fp1"));
    }

    #[test]
    fn header_length_mismatch() {
        let mut bytes = raw_edf(&[1, 2, 3], -32768, 32767);
        bytes[184..192].copy_from_slice(b"768     ");
        assert!(matches!(parse_edf_bytes(&bytes, "r"), Err(SignalIoError::MalformedHeader(_))));
    }

    #[test]
    fn truncated_data_region() {
        let mut bytes = raw_edf(&[1, 2, 3], -32768, 32767);
        bytes.pop();
        assert!(matches!(
            parse_edf_bytes(&bytes, "r"),
            Err(SignalIoError::TruncatedData { expected: 6, found: 5 })
        ));
    }

    #[test]
    fn unknown_record_count_inferred_from_size() {
        let mut bytes = raw_edf(&[1, 2, 3], -32768, 32767);
        bytes[236..244].copy_from_slice(b"-1      ");
        bytes.extend_from_slice(&[0, 0, 1, 0, 2, 0]);
        let rec = parse_edf_bytes(&bytes, "r").unwrap();
        assert_eq!(rec.data[0].len(), 6);
    }

    #[test]
    fn non_ascii_text_fields_are_replaced() {
        let mut bytes = raw_edf(&[1, 2, 3], -32768, 32767);
        bytes[8] = 0xE9;
        let rec = parse_edf_bytes(&bytes, "r").unwrap();
        assert!(rec.subject_id.starts_with('?'));
    }

    #[test]
    fn bdf_24_bit_samples() {
        let ch = ChannelInfo {
            digital_min: -(1 << 23),
            digital_max: (1 << 23) - 1,
            ..ChannelInfo::new("C3", 4.0, -100.0, 100.0)
        };
        let rec = Record::new(
            "b",
            "S1",
            NaiveDateTime::default(),
            vec![ch.clone()],
            vec![vec![-100.0, -0.5, 0.25, 100.0]],
            vec![],
        )
        .unwrap();
        let bytes = write_bdf_bytes(&rec).unwrap();
        assert_eq!(&bytes[..8], BDF_MAGIC);
        let back = parse_edf_bytes(&bytes, "b").unwrap();
        for (a, b) in back.data[0].iter().zip(&rec.data[0]) {
            assert!((a - b).abs() <= ch.quantization_step());
        }
        // negative 24-bit values sign-extend
        let first = &bytes[bytes.len() - 12..bytes.len() - 9];
        assert_eq!(first, &[0x00, 0x00, 0x80]);
    }

    #[test]
    fn annotations_survive_round_trip() {
        let ch = ChannelInfo::new("Cz", 100.0, -10.0, 10.0);
        let annotations = vec![
            EventAnnotation { onset: 0.0, duration: 2.0, label: "A".into() },
            EventAnnotation { onset: 2.5, duration: 0.0, label: "spike".into() },
            EventAnnotation { onset: 3.25, duration: 0.5, label: "B".into() },
        ];
        let rec = Record::new("r", "S9", NaiveDateTime::default(), vec![ch], vec![vec![0.0; 400]], annotations.clone()).unwrap();
        let back = parse_edf_bytes(&write_edf_bytes(&rec).unwrap(), "r").unwrap();
        assert_eq!(back.annotations, annotations);
        assert_eq!(back.channels.len(), 1);
        assert_eq!(back.subject_id, "S9");
    }

    #[test]
    fn range_overflow_rejected() {
        let ch = ChannelInfo::new("Cz", 10.0, -1.0, 1.0);
        let mut samples = vec![0.0; 10];
        samples[3] = 1.5;
        let rec = Record::new("r", "s", NaiveDateTime::default(), vec![ch], vec![samples], vec![]).unwrap();
        assert!(matches!(write_edf_bytes(&rec), Err(SignalIoError::RangeOverflow { value, .. }) if value == 1.5));
    }

    #[test]
    fn zero_record_round_trips_near_zero() {
        let ch = ChannelInfo::new("Cz", 256.0, -200.0, 200.0);
        let step = ch.quantization_step();
        let rec = Record::new("r", "s", NaiveDateTime::default(), vec![ch], vec![vec![0.0; 512]], vec![]).unwrap();
        let back = parse_edf_bytes(&write_edf_bytes(&rec).unwrap(), "r").unwrap();
        assert!(back.data[0].iter().all(|v| v.abs() <= step));
    }

    #[test]
    fn bounded_formatting_widens() {
        assert_eq!(format_bounded(-500.0, Rounding::Down).unwrap(), "-500");
        assert_eq!(format_bounded(1.0 / 3.0, Rounding::Down).unwrap(), "0.333333");
        assert_eq!(format_bounded(1.0 / 3.0, Rounding::Up).unwrap(), "0.333334");
        assert_eq!(format_bounded(-123.456789, Rounding::Down).unwrap(), "-123.457");
        assert!(format_bounded(1e12, Rounding::Up).is_none());
    }
}
