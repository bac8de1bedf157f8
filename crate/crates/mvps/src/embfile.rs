//! Binary embedding files and their JSON manifests.
//!
//! Layout, little-endian: magic `MVPSEMB1`, `u32` record count, `u32` d,
//! `u32` mask height, `u32` mask width, then per record `u64` image id,
//! `u16` class label, `u16` domain id, `d` x `f32` embedding and
//! `ceil(h*w/8)` bytes of bit-packed mask.

use std::collections::{BTreeSet, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use mvps_core::datamodel::{split_heldout, Dataset, EmbeddingRecord};
use mvps_core::mask::{packed_len, Mask};
use serde::{Deserialize, Serialize};

use crate::binio::{u32_field, Cursor};
use crate::error::FormatError;

pub const EMB_MAGIC: &str = "MVPSEMB1";

/// Serializes `ds`. Embeddings are stored at `f32` precision.
pub fn encode_embeddings(ds: &Dataset) -> Result<Vec<u8>, FormatError> {
    let (h, w) = ds.mask_geometry();
    let mut out = Vec::with_capacity(24 + ds.len() * (12 + 4 * ds.d() + packed_len(h, w)));
    out.extend_from_slice(EMB_MAGIC.as_bytes());
    out.extend_from_slice(&u32_field(ds.len(), "record count")?);
    out.extend_from_slice(&u32_field(ds.d(), "d")?);
    out.extend_from_slice(&u32_field(h, "mask height")?);
    out.extend_from_slice(&u32_field(w, "mask width")?);
    for r in ds.records() {
        out.extend_from_slice(&r.image_id.to_le_bytes());
        out.extend_from_slice(&r.class_label.to_le_bytes());
        out.extend_from_slice(&r.domain_id.to_le_bytes());
        for &v in &r.embedding {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
        out.extend_from_slice(ds.mask(r.mask_id).packed());
    }
    Ok(out)
}

pub fn decode_embeddings(name: &str, bytes: &[u8]) -> Result<Dataset, FormatError> {
    let mut cur = Cursor::new(bytes);
    cur.magic(EMB_MAGIC)?;
    let count = cur.u32("record count")? as usize;
    let d = cur.u32("d")? as usize;
    let h = cur.u32("mask height")? as usize;
    let w = cur.u32("mask width")? as usize;
    if d == 0 || h == 0 || w == 0 {
        return Err(FormatError::Header(format!("zero dimension (d={d}, mask {h}x{w})")));
    }
    let record_bytes = (h as u64 * w as u64).div_ceil(8) + 12 + 4 * d as u64;
    let body = record_bytes.checked_mul(count as u64).ok_or_else(|| FormatError::Header("size overflow".into()))?;
    if body > cur.remaining() as u64 {
        return Err(FormatError::Truncated(format!(
            "header promises {count} records of {record_bytes} bytes, {} bytes follow",
            cur.remaining()
        )));
    }
    let mut seen = HashSet::with_capacity(count);
    let mut records = Vec::with_capacity(count);
    let mut masks = Vec::with_capacity(count);
    for i in 0..count {
        let image_id = cur.u64("image id")?;
        if !seen.insert(image_id) {
            return Err(FormatError::DuplicateId(image_id));
        }
        let class_label = cur.u16("class label")?;
        let domain_id = cur.u16("domain id")?;
        let embedding = (0..d).map(|_| cur.f32("embedding").map(f64::from)).collect::<Result<Vec<_>, _>>()?;
        let mask = Mask::from_packed(h, w, cur.take(packed_len(h, w), "mask")?).map_err(FormatError::Record)?;
        masks.push(mask);
        records.push(EmbeddingRecord { image_id, embedding, class_label, domain_id, mask_id: i });
    }
    cur.finish()?;
    Dataset::new(name, d, (h, w), records, masks).map_err(FormatError::Record)
}

/// Reads an embedding file. The dataset is named after the file stem and has
/// no held-out labels.
pub fn load_dataset(path: &Path) -> Result<Dataset, FormatError> {
    let bytes = fs::read(path).map_err(FormatError::io(path))?;
    let name = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    decode_embeddings(&name, &bytes)
}

pub fn save_dataset(ds: &Dataset, path: &Path) -> Result<(), FormatError> {
    fs::write(path, encode_embeddings(ds)?).map_err(FormatError::io(path))
}

/// Dataset description stored next to an embedding file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub name: String,
    /// Embedding file, relative to the manifest's directory unless absolute.
    pub path: String,
    pub records: usize,
    pub d: usize,
    pub heldout_labels: Vec<u16>,
}

impl Manifest {
    pub fn describe(ds: &Dataset, path: impl Into<String>) -> Self {
        Manifest {
            name: ds.name().to_owned(),
            path: path.into(),
            records: ds.len(),
            d: ds.d(),
            heldout_labels: ds.heldout_labels().iter().copied().collect(),
        }
    }

    pub fn read(path: &Path) -> Result<Self, FormatError> {
        let text = fs::read_to_string(path).map_err(FormatError::io(path))?;
        serde_json::from_str(&text).map_err(|e| FormatError::Manifest(format!("{}: {e}", path.display())))
    }

    fn data_path(&self, manifest_path: &Path) -> PathBuf {
        let p = Path::new(&self.path);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            manifest_path.parent().unwrap_or(Path::new(".")).join(p)
        }
    }
}

/// Writes `<dir>/<stem>.emb` and `<dir>/<stem>.json`; returns the manifest path.
pub fn write_with_manifest(ds: &Dataset, dir: &Path, stem: &str) -> Result<PathBuf, FormatError> {
    fs::create_dir_all(dir).map_err(FormatError::io(dir))?;
    let file = format!("{stem}.emb");
    save_dataset(ds, &dir.join(&file))?;
    let manifest = Manifest::describe(ds, file);
    let path = dir.join(format!("{stem}.json"));
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&path, text + "\n").map_err(FormatError::io(&path))?;
    Ok(path)
}

/// Loads the dataset a manifest points at and applies its held-out labels.
pub fn load_manifest(path: &Path) -> Result<Dataset, FormatError> {
    let manifest = Manifest::read(path)?;
    let bytes = fs::read(manifest.data_path(path)).map_err(FormatError::io(manifest.data_path(path)))?;
    let ds = decode_embeddings(&manifest.name, &bytes)?;
    if ds.d() != manifest.d {
        return Err(FormatError::DimensionMismatch { expected: manifest.d, found: ds.d() });
    }
    if ds.len() != manifest.records {
        return Err(FormatError::CountMismatch { manifest: manifest.records, file: ds.len() });
    }
    let labels: BTreeSet<u16> = manifest.heldout_labels.iter().copied().collect();
    split_heldout(&ds, &labels).map_err(|e| FormatError::Manifest(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use mvps_core::environment::{synth_generate, SynthSpec};

    fn small() -> Dataset {
        synth_generate(&SynthSpec { records: 3, d: 4, ..SynthSpec::default() }).unwrap()
    }

    #[test]
    fn three_records_round_trip() {
        let ds = small();
        let back = decode_embeddings(ds.name(), &encode_embeddings(&ds).unwrap()).unwrap();
        assert_eq!(back.len(), 3);
        assert_eq!(back, ds);
    }

    #[test]
    fn header_errors_are_distinct() {
        let bytes = encode_embeddings(&small()).unwrap();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert_eq!(decode_embeddings("x", &bad).unwrap_err().code(), "bad-magic");
        assert_eq!(decode_embeddings("x", &bytes[..bytes.len() - 1]).unwrap_err().code(), "truncated");
        let mut extra = bytes.clone();
        extra.push(0);
        assert_eq!(decode_embeddings("x", &extra).unwrap_err().code(), "trailing");
        let mut zero_d = bytes.clone();
        zero_d[12..16].copy_from_slice(&0u32.to_le_bytes());
        assert_eq!(decode_embeddings("x", &zero_d).unwrap_err().code(), "header");
    }

    #[test]
    fn duplicate_id_rejected() {
        let ds = small();
        let mut bytes = encode_embeddings(&ds).unwrap();
        let rec = 12 + 4 * 4 + packed_len(16, 16);
        let first = ds.records()[0].image_id.to_le_bytes();
        bytes[24 + rec..24 + rec + 8].copy_from_slice(&first);
        let err = decode_embeddings("x", &bytes).unwrap_err();
        assert!(matches!(err, FormatError::DuplicateId(id) if id == ds.records()[0].image_id));
        assert!(err.to_string().contains("duplicate id"));
    }
}
