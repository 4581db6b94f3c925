use super::*;
use crate::signal_io::{write_edf, EventAnnotation, Record};
use crate::transforms::TransformSpec;
use chrono::NaiveDateTime;
use std::f64::consts::PI;

fn synth(subject: &str, id: &str, freq: f64, secs: usize) -> Record {
    let rate = 128.0;
    let n = secs * rate as usize;
    let data = vec![
        (0..n).map(|i| (2.0 * PI * freq * i as f64 / rate).sin() * 50.0).collect(),
        (0..n).map(|i| ((i * 7919) % 101) as f64 - 50.0).collect(),
    ];
    Record::new(
        id,
        subject,
        NaiveDateTime::default(),
        vec![ChannelInfo::new("C3", rate, -200.0, 200.0), ChannelInfo::new("C4", rate, -200.0, 200.0)],
        data,
        vec![EventAnnotation {
            onset: 0.0,
            duration: 3.0,
            label: "W".into(),
        }],
    )
    .unwrap()
}

fn write_corpus(dir: &Path) -> Vec<Source> {
    let mut out = Vec::new();
    for s in 0..3 {
        for (k, f) in [5.0, 12.0].into_iter().enumerate() {
            let path = dir.join(format!("s{s}_r{k}.edf"));
            write_edf(&synth(&format!("subj{s}"), "x", f, 8), &path).unwrap();
            out.push(Source::Entry(SourceEntry {
                path,
                subject_id: None,
                record_id: None,
                label: Some(ClassRef::Index(k)),
            }));
        }
    }
    out
}

fn config(paths: Vec<Source>, low: f64) -> DatasetConfig {
    DatasetConfig {
        format: None,
        paths,
        sampling_rate: None,
        offline_transforms: vec![
            TransformSpec::new("bandpass").param("low", low).param("high", 30.0),
            TransformSpec::new("zscore"),
        ],
        online_transforms: vec![],
        epoch: EpochSpec::new(2.0, 1.0),
        label_scheme: SchemeKind::PerRecord,
        classes: vec![],
        target_channel: None,
        split: SplitSpec::default(),
        cache_dir: None,
    }
}

#[test]
fn cache_transparency_and_reuse() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(write_corpus(dir.path()), 1.0);
    let cache = dir.path().join("cache");

    let plain = build_dataset(&cfg, None).unwrap();
    let first = build_dataset(&cfg, Some(&cache)).unwrap();
    assert_eq!(plain.len(), 6 * 7);
    assert_eq!(first.len(), plain.len());
    assert!(first.records().iter().all(|r| !r.cache_hit && r.key.len() == 64 && r.windows == 7));
    for i in 0..plain.len() {
        let a = plain.get_item(i).unwrap();
        let b = first.get_item(i).unwrap();
        assert_eq!(a, b);
        for (x, y) in a.data.iter().flatten().zip(b.data.iter().flatten()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }
    assert_eq!(first.subject_id(0).unwrap(), "subj0");
    assert_eq!(first.label(7).unwrap(), &Label::Class(1));

    let second = build_dataset(&cfg, Some(&cache)).unwrap();
    assert!(second.records().iter().all(|r| r.cache_hit));
    assert_eq!(second.len(), first.len());
    assert_eq!(second.get_item(11).unwrap(), first.get_item(11).unwrap());

    let changed = build_dataset(&config(cfg.paths.clone(), 1.5), Some(&cache)).unwrap();
    assert!(changed.records().iter().all(|r| !r.cache_hit));
    let old: Vec<_> = first.records().iter().map(|r| r.key.clone()).collect();
    assert!(changed.records().iter().all(|r| !old.contains(&r.key)));
}

#[test]
fn corrupt_block_names_key() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(write_corpus(dir.path()), 1.0);
    let cache = dir.path().join("cache");
    let ds = build_dataset(&cfg, Some(&cache)).unwrap();
    let key = ds.records()[2].key.clone();
    let block = cache.join(&key).join("block_000003.bin");
    let mut bytes = std::fs::read(&block).unwrap();
    bytes[40] ^= 0x01;
    std::fs::write(&block, bytes).unwrap();

    match ds.get_item(2 * 7 + 3).unwrap_err() {
        DatasetError::CacheCorrupt { key: k, .. } => assert_eq!(k, key),
        e => panic!("unexpected {e}"),
    }
    let err = build_dataset(&cfg, Some(&cache)).unwrap_err();
    assert!(matches!(err.root(), DatasetError::CacheCorrupt { key: k, .. } if *k == key));
}

#[test]
fn incomplete_entry_is_never_accepted() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(write_corpus(dir.path()), 1.0);
    let cache = dir.path().join("cache");
    let ds = build_dataset(&cfg, Some(&cache)).unwrap();
    let key = ds.records()[0].key.clone();
    std::fs::remove_file(cache.join(&key).join("block_000006.bin")).unwrap();
    assert!(matches!(cache::load_entry(&cache, &key), Err(DatasetError::CacheCorrupt { .. })));
    std::fs::remove_file(cache.join(&key).join(cache::MANIFEST)).unwrap();
    assert!(matches!(cache::load_entry(&cache, &key), Err(DatasetError::CacheCorrupt { .. })));
}

#[test]
fn online_pipeline_and_bounds() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config(write_corpus(dir.path()), 1.0);
    cfg.offline_transforms.clear();
    let raw = build_dataset(&cfg, None).unwrap();
    cfg.online_transforms = vec![TransformSpec::new("zscore")];
    let ds = build_dataset(&cfg, None).unwrap();

    let cached = ds.get_offline(5).unwrap();
    assert_eq!(cached, raw.get_item(5).unwrap());
    let s = ds.get_item(5).unwrap();
    for (row, src) in s.data.iter().zip(&cached.data) {
        let n = src.len() as f64;
        let mean = src.iter().sum::<f64>() / n;
        let sd = (src.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        for (a, b) in row.iter().zip(src) {
            assert!((a - (b - mean) / (sd + crate::transforms::NORM_EPS)).abs() < 1e-12);
        }
        assert!(row.iter().sum::<f64>().abs() / n < 1e-9);
    }
    assert_eq!(ds.get_item(5).unwrap(), s);
    assert!(matches!(
        ds.get_item(ds.len()),
        Err(DatasetError::IndexOutOfRange { index, len }) if index == len
    ));
}

#[test]
fn per_event_and_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("a.edf");
    write_edf(&synth("p", "x", 5.0, 6), &path).unwrap();
    let mut cfg = config(
        vec![Source::Entry(SourceEntry {
            path,
            subject_id: Some("S9".into()),
            record_id: Some("night1".into()),
            label: None,
        })],
        1.0,
    );
    cfg.offline_transforms.clear();
    cfg.label_scheme = SchemeKind::PerEvent;
    cfg.classes = vec!["S".into(), "W".into()];
    let ds = build_dataset(&cfg, None).unwrap();
    // centres at 1, 2, 3 s fall inside the [0, 3] s span; later ones do not
    assert_eq!(ds.len(), 3);
    assert_eq!(ds.get_item(0).unwrap().label, Label::Class(1));
    assert_eq!(ds.subject_id(0).unwrap(), "S9");
    assert_eq!(ds.record_id(0).unwrap(), "night1");
}

#[test]
fn missing_label_and_path_errors() {
    let dir = tempfile::tempdir().unwrap();
    let mut paths = write_corpus(dir.path());
    paths.truncate(1);
    let mut cfg = config(paths, 1.0);
    if let Source::Entry(e) = &mut cfg.paths[0] {
        e.label = None;
    }
    assert!(matches!(build_dataset(&cfg, None).unwrap_err().root(), DatasetError::MissingLabel(_)));
    cfg.paths = vec![Source::Entry(SourceEntry {
        path: dir.path().join("nope.edf"),
        subject_id: None,
        record_id: None,
        label: Some(ClassRef::Index(0)),
    })];
    let err = build_dataset(&cfg, None).unwrap_err();
    assert!(matches!(err.root(), DatasetError::Signal(_)));
    assert!(err.to_string().contains("nope"));
}

#[test]
fn split_keeps_subjects_whole() {
    let dir = tempfile::tempdir().unwrap();
    let ds = build_dataset(&config(write_corpus(dir.path()), 1.0), None).unwrap();
    let spec = SplitSpec {
        mode: SplitMode::BySubject,
        fractions: Fractions {
            train: 2.0 / 3.0,
            valid: 1.0 / 3.0,
            test: 0.0,
        },
        seed: None,
    };
    let s = split(&ds, &spec, 42).unwrap();
    assert_eq!(s.train.len(), 28);
    assert_eq!(s.valid.len(), 14);
    let subj = |ix: &[usize]| ix.iter().map(|&i| ds.subject_id(i).unwrap().to_string()).collect::<std::collections::HashSet<_>>();
    assert!(subj(&s.train).is_disjoint(&subj(&s.valid)));
    assert_eq!(s, split(&ds, &spec, 42).unwrap());

    let by_record = split(&ds, &SplitSpec { mode: SplitMode::ByRecord, ..spec }, 1).unwrap();
    assert_eq!(by_record.train.len(), 28);
    let by_fraction = split(&ds, &SplitSpec { mode: SplitMode::ByFraction, ..spec }, 1).unwrap();
    assert_eq!(by_fraction.train.len(), 28);
    assert_eq!(by_fraction.valid.len(), 14);
}

#[test]
fn config_shapes() {
    let v = serde_json::json!({
        "paths": ["a.edf", {"path": "b.edf", "label": "W", "subject_id": "s1"}],
        "epoch": {"window": 2.0, "stride": 1.0},
        "split": {"mode": "by_record", "fractions": [0.5, 0.5, 0.0]}
    });
    let cfg: DatasetConfig = serde_json::from_value(v).unwrap();
    assert_eq!(cfg.paths[0], Source::Path("a.edf".into()));
    assert_eq!(cfg.split.fractions.valid, 0.5);
    assert_eq!(cfg.label_scheme, SchemeKind::PerRecord);
    let back: DatasetConfig = serde_json::from_value(serde_json::to_value(&cfg).unwrap()).unwrap();
    assert_eq!(back, cfg);
    let bad = serde_json::json!({"paths": [], "epoch": {"window": 1, "stride": 1}, "cache": "x"});
    assert!(serde_json::from_value::<DatasetConfig>(bad).is_err());
}
