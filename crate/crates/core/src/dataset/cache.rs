//! Content-addressed store for offline-processed samples.
//!
//! Layout: `<root>/<key>/manifest.json` plus one `block_NNNNNN.bin` per
//! sample. A block is a 17-byte header (`"TYE1"`, version u32, channels
//! u32, length u32, label kind u8; integers little-endian) followed by
//! row-major little-endian f32 samples. Entries are written to a temporary
//! directory and renamed into place, so a visible entry is always complete.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{DatasetError, Label, Result, Sample};
use crate::signal_io::ChannelInfo;

pub const FORMAT_VERSION: u32 = 1;
pub const BLOCK_MAGIC: &[u8; 4] = b"TYE1";
pub const BLOCK_HEADER_LEN: usize = 17;
pub const MANIFEST: &str = "manifest.json";

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes).as_slice())
}

/// SHA-256 over the length-prefixed inputs that determine an entry's content.
pub fn cache_key(source_digest: &str, pipeline: &str, epoch: &str, provenance: &str) -> String {
    let mut h = Sha256::new();
    for part in [source_digest, pipeline, epoch, provenance] {
        h.update((part.len() as u64).to_le_bytes());
        h.update(part.as_bytes());
    }
    h.update(FORMAT_VERSION.to_le_bytes());
    hex::encode(h.finalize().as_slice())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelKind {
    Class,
    Values,
}

impl LabelKind {
    fn of(label: &Label) -> Self {
        match label {
            Label::Class(_) => LabelKind::Class,
            Label::Values(_) => LabelKind::Values,
        }
    }

    fn byte(self) -> u8 {
        match self {
            LabelKind::Class => 0,
            LabelKind::Values => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleEntry {
    pub subject_id: String,
    pub record_id: String,
    pub window_index: usize,
    pub label: Label,
    pub block: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Creation {
    pub source: String,
    pub pipeline: String,
    pub epoch: String,
    pub unix_time: u64,
    pub tool_version: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub key: String,
    pub sample_count: usize,
    pub channels: usize,
    pub length: usize,
    pub label_kind: LabelKind,
    pub channel_info: Vec<ChannelInfo>,
    pub samples: Vec<SampleEntry>,
    pub created: Creation,
}

impl Creation {
    pub fn new(source: &Path, pipeline: &str, epoch: &str) -> Self {
        Self {
            source: source.display().to_string(),
            pipeline: pipeline.to_string(),
            epoch: epoch.to_string(),
            unix_time: SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
        }
    }
}

fn corrupt(key: &str, reason: impl Into<String>) -> DatasetError {
    DatasetError::CacheCorrupt {
        key: key.to_string(),
        reason: reason.into(),
    }
}

fn io(path: &Path, source: std::io::Error) -> DatasetError {
    DatasetError::CacheIo {
        path: path.display().to_string(),
        source,
    }
}

pub fn encode_block(data: &[Vec<f64>], kind: LabelKind) -> Vec<u8> {
    let length = data.first().map_or(0, Vec::len);
    let mut out = Vec::with_capacity(BLOCK_HEADER_LEN + 4 * data.len() * length);
    out.extend_from_slice(BLOCK_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(data.len() as u32).to_le_bytes());
    out.extend_from_slice(&(length as u32).to_le_bytes());
    out.push(kind.byte());
    for row in data {
        for &v in row {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

/// Decodes a block, checking its header against the manifest.
pub fn decode_block(bytes: &[u8], manifest: &Manifest) -> std::result::Result<Vec<Vec<f64>>, String> {
    if bytes.len() < BLOCK_HEADER_LEN || &bytes[..4] != BLOCK_MAGIC {
        return Err("bad block magic".into());
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().expect("4 bytes")) as usize;
    let (version, channels, length) = (word(4) as u32, word(8), word(12));
    if version != FORMAT_VERSION {
        return Err(format!("block version {version}"));
    }
    if channels != manifest.channels || length != manifest.length || bytes[16] != manifest.label_kind.byte() {
        return Err("block header disagrees with manifest".into());
    }
    let payload = &bytes[BLOCK_HEADER_LEN..];
    if payload.len() != 4 * channels * length {
        return Err(format!("payload is {} bytes, expected {}", payload.len(), 4 * channels * length));
    }
    Ok(payload
        .chunks_exact(4 * length.max(1))
        .take(channels)
        .map(|row| {
            row.chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")) as f64)
                .collect()
        })
        .collect())
}

pub fn entry_dir(root: &Path, key: &str) -> PathBuf {
    root.join(key)
}

/// Writes a complete entry for `samples` and returns its manifest.
pub fn write_entry(root: &Path, key: &str, samples: &[Sample], created: Creation) -> Result<Manifest> {
    fs::create_dir_all(root).map_err(|e| io(root, e))?;
    let nonce = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.subsec_nanos()).unwrap_or(0);
    let tmp = root.join(format!(".tmp-{key}-{}-{nonce}", std::process::id()));
    fs::create_dir_all(&tmp).map_err(|e| io(&tmp, e))?;

    let label_kind = samples.first().map_or(LabelKind::Class, |s| LabelKind::of(&s.label));
    let mut entries = Vec::with_capacity(samples.len());
    for (i, s) in samples.iter().enumerate() {
        let block = format!("block_{i:06}.bin");
        let bytes = encode_block(&s.data, label_kind);
        let path = tmp.join(&block);
        fs::write(&path, &bytes).map_err(|e| io(&path, e))?;
        entries.push(SampleEntry {
            subject_id: s.subject_id.clone(),
            record_id: s.record_id.clone(),
            window_index: s.window_index,
            label: s.label.clone(),
            block,
            sha256: sha256_hex(&bytes),
        });
    }
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        key: key.to_string(),
        sample_count: samples.len(),
        channels: samples.first().map_or(0, |s| s.data.len()),
        length: samples.first().and_then(|s| s.data.first()).map_or(0, Vec::len),
        label_kind,
        channel_info: samples.first().map(|s| s.channels.clone()).unwrap_or_default(),
        samples: entries,
        created,
    };
    let text = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
    let path = tmp.join(MANIFEST);
    fs::write(&path, text).map_err(|e| io(&path, e))?;

    let dest = entry_dir(root, key);
    if let Err(e) = fs::rename(&tmp, &dest) {
        let _ = fs::remove_dir_all(&tmp);
        // a concurrent writer finished the same entry first
        if !dest.join(MANIFEST).exists() {
            return Err(io(&dest, e));
        }
    }
    Ok(manifest)
}

/// Loads and fully verifies an entry. `Ok(None)` when no entry exists.
pub fn load_entry(root: &Path, key: &str) -> Result<Option<Manifest>> {
    let dir = entry_dir(root, key);
    let path = dir.join(MANIFEST);
    if !dir.exists() {
        return Ok(None);
    }
    let bytes = fs::read(&path).map_err(|_| corrupt(key, "manifest missing or unreadable"))?;
    let manifest: Manifest =
        serde_json::from_slice(&bytes).map_err(|e| corrupt(key, format!("manifest does not parse: {e}")))?;
    if manifest.key != key || manifest.format_version != FORMAT_VERSION {
        return Err(corrupt(key, "manifest key or version mismatch"));
    }
    if manifest.sample_count != manifest.samples.len() {
        return Err(corrupt(key, "sample count mismatch"));
    }
    for entry in &manifest.samples {
        read_block(&dir, entry, &manifest)?;
    }
    Ok(Some(manifest))
}

/// Reads one sample's block, verifying its digest and header.
pub fn read_block(dir: &Path, entry: &SampleEntry, manifest: &Manifest) -> Result<Vec<Vec<f64>>> {
    let path = dir.join(&entry.block);
    let bytes = fs::read(&path).map_err(|_| corrupt(&manifest.key, format!("{} unreadable", entry.block)))?;
    if sha256_hex(&bytes) != entry.sha256 {
        return Err(corrupt(&manifest.key, format!("{} digest mismatch", entry.block)));
    }
    decode_block(&bytes, manifest).map_err(|r| corrupt(&manifest.key, format!("{}: {r}", entry.block)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn manifest_for(channels: usize, length: usize, kind: LabelKind) -> Manifest {
        Manifest {
            format_version: FORMAT_VERSION,
            key: "k".into(),
            sample_count: 0,
            channels,
            length,
            label_kind: kind,
            channel_info: vec![],
            samples: vec![],
            created: Creation::new(Path::new("x"), "", ""),
        }
    }

    #[test]
    fn block_header_layout() {
        let bytes = encode_block(&[vec![1.0, 2.0], vec![3.0, 4.0]], LabelKind::Values);
        assert_eq!(&bytes[..4], b"TYE1");
        assert_eq!(&bytes[4..8], &1u32.to_le_bytes());
        assert_eq!(&bytes[8..12], &2u32.to_le_bytes());
        assert_eq!(&bytes[12..16], &2u32.to_le_bytes());
        assert_eq!(bytes[16], 1);
        assert_eq!(&bytes[17..21], &1.0f32.to_le_bytes());
        assert_eq!(&bytes[29..33], &4.0f32.to_le_bytes());
        assert_eq!(bytes.len(), 17 + 16);
    }

    #[test]
    fn key_depends_on_every_input() {
        let base = cache_key("a", "b", "c", "d");
        assert_eq!(base.len(), 64);
        assert_eq!(base, cache_key("a", "b", "c", "d"));
        assert_ne!(base, cache_key("a", "b2", "c", "d"));
        assert_ne!(base, cache_key("a", "b", "c", "d2"));
        // length prefixes keep boundaries unambiguous
        assert_ne!(cache_key("ab", "", "c", "d"), cache_key("a", "b", "c", "d"));
    }

    #[test]
    fn decode_rejects_mismatches() {
        let bytes = encode_block(&[vec![1.0, 2.0]], LabelKind::Class);
        assert!(decode_block(&bytes, &manifest_for(1, 2, LabelKind::Class)).is_ok());
        assert!(decode_block(&bytes, &manifest_for(1, 3, LabelKind::Class)).is_err());
        assert!(decode_block(&bytes, &manifest_for(1, 2, LabelKind::Values)).is_err());
        assert!(decode_block(&bytes[..bytes.len() - 1], &manifest_for(1, 2, LabelKind::Class)).is_err());
    }

    proptest! {
        #[test]
        fn block_round_trip_is_f32_exact(rows in proptest::collection::vec(proptest::collection::vec(-1e6f64..1e6, 7), 1..5)) {
            let bytes = encode_block(&rows, LabelKind::Class);
            let back = decode_block(&bytes, &manifest_for(rows.len(), 7, LabelKind::Class)).unwrap();
            for (a, b) in back.iter().flatten().zip(rows.iter().flatten()) {
                prop_assert_eq!(*a, *b as f32 as f64);
            }
        }
    }
}
