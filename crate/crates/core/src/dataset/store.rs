//! On-disk dataset layout.
//!
//! A dataset directory holds two files:
//!
//! * `manifest.jsonl`: a header line followed by one metadata record per
//!   image, keyed by `id`, carrying the byte offset of the image's block in
//!   the descriptor store.
//! * `descriptors.bin`: `LMDE` magic, `u16` version, `u32` descriptor length
//!   `D`, then one block per image: `u64` feature count followed by that many
//!   features, each `x, y, scale, orientation` as `f64` and `D` descriptor
//!   components as `f32`. Everything is little-endian.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use byteorder::{ByteOrder, LittleEndian, WriteBytesExt};
use serde::{Deserialize, Serialize};

use super::{Dataset, ImageRecord, ImageSource, LocalFeature};
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const DESCRIPTOR_FILE: &str = "descriptors.bin";

const MAGIC: &[u8; 4] = b"LMDE";
const VERSION: u16 = 1;
const HEADER_LEN: u64 = 4 + 2 + 4;
const GEOMETRY_BYTES: usize = 4 * 8;

fn feature_bytes(dim: usize) -> usize {
    GEOMETRY_BYTES + 4 * dim
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub width: u32,
    pub height: u32,
    /// Descriptor length of this image's features; must equal the store's.
    pub dim: usize,
    pub owner: String,
    #[serde(default)]
    pub title: String,
    #[serde(default)]
    pub tags: Vec<String>,
    #[serde(default)]
    pub category: Option<String>,
    pub source: ImageSource,
    pub offset: u64,
    pub feature_count: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub descriptor_dim: usize,
    pub taxonomy: Vec<String>,
    pub entries: Vec<ManifestEntry>,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum ManifestLine {
    Header {
        version: u16,
        descriptor_dim: usize,
        image_count: usize,
        taxonomy: Vec<String>,
    },
    Image(ManifestEntry),
}

impl DatasetManifest {
    pub fn for_records(descriptor_dim: usize, taxonomy: Vec<String>, records: &[ImageRecord]) -> Self {
        let entries = records
            .iter()
            .map(|r| ManifestEntry {
                id: r.image_id.clone(),
                width: r.width,
                height: r.height,
                dim: descriptor_dim,
                owner: r.owner_id.clone(),
                title: r.title.clone(),
                tags: r.tags.clone(),
                category: r.category.clone(),
                source: r.source,
                offset: 0,
                feature_count: r.features.len() as u64,
            })
            .collect();
        DatasetManifest {
            descriptor_dim,
            taxonomy,
            entries,
        }
    }

    pub fn image_count(&self) -> usize {
        self.entries.len()
    }

    pub fn image_ids(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.id.as_str())
    }
}

/// A loaded dataset whose image records are decoded on demand.
#[derive(Debug, Clone)]
pub struct DatasetReader {
    manifest: DatasetManifest,
    store: Vec<u8>,
}

impl DatasetReader {
    pub fn manifest(&self) -> &DatasetManifest {
        &self.manifest
    }

    pub fn len(&self) -> usize {
        self.manifest.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.manifest.entries.is_empty()
    }

    pub fn read_image(&self, idx: usize) -> Result<ImageRecord> {
        let entry = &self.manifest.entries[idx];
        let dim = self.manifest.descriptor_dim;
        let mut pos = entry.offset as usize + 8;
        let fb = feature_bytes(dim);
        let mut features = Vec::with_capacity(entry.feature_count as usize);
        for _ in 0..entry.feature_count {
            let chunk = &self.store[pos..pos + fb];
            let mut descriptor = vec![0f32; dim];
            LittleEndian::read_f32_into(&chunk[GEOMETRY_BYTES..], &mut descriptor);
            features.push(LocalFeature {
                x: LittleEndian::read_f64(&chunk[0..8]),
                y: LittleEndian::read_f64(&chunk[8..16]),
                scale: LittleEndian::read_f64(&chunk[16..24]),
                orientation: LittleEndian::read_f64(&chunk[24..32]),
                descriptor,
            });
            pos += fb;
        }
        Ok(ImageRecord {
            image_id: entry.id.clone(),
            width: entry.width,
            height: entry.height,
            features,
            owner_id: entry.owner.clone(),
            title: entry.title.clone(),
            tags: entry.tags.clone(),
            category: entry.category.clone(),
            source: entry.source,
        })
    }

    /// Decodes every image, in manifest order.
    pub fn read_all(&self) -> Result<Dataset> {
        let images = (0..self.len()).map(|i| self.read_image(i)).collect::<Result<Vec<_>>>()?;
        Dataset::new(self.manifest.descriptor_dim, self.manifest.taxonomy.clone(), images)
    }
}

/// Reads a dataset directory, validating the manifest against the store.
pub fn load_dataset(dir: &Path) -> Result<DatasetReader> {
    let manifest_path = dir.join(MANIFEST_FILE);
    let store_path = dir.join(DESCRIPTOR_FILE);
    let manifest = read_manifest(&manifest_path)?;
    let store = fs::read(&store_path)?;
    validate_store(&manifest, &store)?;
    Ok(DatasetReader { manifest, store })
}

fn read_manifest(path: &Path) -> Result<DatasetManifest> {
    let reader = BufReader::new(File::open(path)?);
    let mut header = None;
    let mut entries = Vec::new();
    let mut offset = 0u64;
    for line in reader.lines() {
        let line = line?;
        let line_len = line.len() as u64 + 1;
        if line.trim().is_empty() {
            offset += line_len;
            continue;
        }
        let parsed: ManifestLine =
            serde_json::from_str(&line).map_err(|e| Error::format(offset, format!("{}: {}", path.display(), e)))?;
        match parsed {
            ManifestLine::Header {
                version,
                descriptor_dim,
                image_count,
                taxonomy,
            } => {
                if header.is_some() {
                    return Err(Error::format(offset, "duplicate manifest header"));
                }
                if version != VERSION {
                    return Err(Error::format(offset, format!("unsupported manifest version {version}")));
                }
                header = Some((descriptor_dim, image_count, taxonomy));
            }
            ManifestLine::Image(entry) => {
                if header.is_none() {
                    return Err(Error::format(offset, "image record before manifest header"));
                }
                entries.push(entry);
            }
        }
        offset += line_len;
    }
    let (descriptor_dim, image_count, taxonomy) =
        header.ok_or_else(|| Error::format(0, format!("{}: missing header line", path.display())))?;
    if image_count != entries.len() {
        return Err(Error::validation(format!(
            "manifest header declares {} images but lists {}",
            image_count,
            entries.len()
        )));
    }
    Ok(DatasetManifest {
        descriptor_dim,
        taxonomy,
        entries,
    })
}

fn validate_store(manifest: &DatasetManifest, store: &[u8]) -> Result<()> {
    if store.len() < HEADER_LEN as usize {
        return Err(Error::format(store.len() as u64, "descriptor store shorter than its header"));
    }
    if &store[0..4] != MAGIC {
        return Err(Error::format(0, "bad magic, expected LMDE"));
    }
    let version = LittleEndian::read_u16(&store[4..6]);
    if version != VERSION {
        return Err(Error::format(4, format!("unsupported descriptor store version {version}")));
    }
    let dim = LittleEndian::read_u32(&store[6..10]) as usize;
    if dim == 0 {
        return Err(Error::format(6, "descriptor dimensionality is zero"));
    }
    if dim != manifest.descriptor_dim {
        return Err(Error::validation(format!(
            "descriptor store has D={} but manifest declares {}",
            dim, manifest.descriptor_dim
        )));
    }
    let fb = feature_bytes(dim) as u64;
    let len = store.len() as u64;
    for entry in &manifest.entries {
        if entry.dim != dim {
            return Err(Error::validation(format!(
                "image {} declares descriptor length {} but the store holds {}",
                entry.id, entry.dim, dim
            )));
        }
        if entry.offset < HEADER_LEN || entry.offset + 8 > len {
            return Err(Error::format(
                entry.offset,
                format!("offset of image {} does not resolve to a block", entry.id),
            ));
        }
        let count = LittleEndian::read_u64(&store[entry.offset as usize..entry.offset as usize + 8]);
        if count != entry.feature_count {
            return Err(Error::validation(format!(
                "image {}: block holds {} features, manifest says {}",
                entry.id, count, entry.feature_count
            )));
        }
        let body = entry.offset + 8;
        let end = body
            .checked_add(count.checked_mul(fb).ok_or_else(|| Error::format(entry.offset, "feature count overflow"))?)
            .ok_or_else(|| Error::format(entry.offset, "feature count overflow"))?;
        if end > len {
            // Report the first feature record that does not fit.
            let complete = (len - body) / fb;
            return Err(Error::format(
                body + complete * fb,
                format!("descriptor record of image {} truncated (feature {})", entry.id, complete),
            ));
        }
    }
    Ok(())
}

/// Writes `records` to `dir` and returns the manifest with resolved offsets.
///
/// The manifest entries must list the records' ids in order.
pub fn save_dataset(dir: &Path, manifest: &DatasetManifest, records: &[ImageRecord]) -> Result<DatasetManifest> {
    if manifest.entries.len() != records.len() {
        return Err(Error::validation(format!(
            "manifest lists {} images but {} records were given",
            manifest.entries.len(),
            records.len()
        )));
    }
    let dim = manifest.descriptor_dim;
    for (entry, rec) in manifest.entries.iter().zip(records) {
        if entry.id != rec.image_id {
            return Err(Error::validation(format!(
                "manifest entry {} does not match record {}",
                entry.id, rec.image_id
            )));
        }
        rec.validate(dim)?;
    }
    fs::create_dir_all(dir)?;

    let mut out = manifest.clone();
    let mut store = BufWriter::new(File::create(dir.join(DESCRIPTOR_FILE))?);
    store.write_all(MAGIC)?;
    store.write_u16::<LittleEndian>(VERSION)?;
    store.write_u32::<LittleEndian>(dim as u32)?;
    let mut offset = HEADER_LEN;
    for (entry, rec) in out.entries.iter_mut().zip(records) {
        entry.offset = offset;
        entry.feature_count = rec.features.len() as u64;
        entry.dim = dim;
        store.write_u64::<LittleEndian>(rec.features.len() as u64)?;
        for f in &rec.features {
            store.write_f64::<LittleEndian>(f.x)?;
            store.write_f64::<LittleEndian>(f.y)?;
            store.write_f64::<LittleEndian>(f.scale)?;
            store.write_f64::<LittleEndian>(f.orientation)?;
            for &v in &f.descriptor {
                store.write_f32::<LittleEndian>(v)?;
            }
        }
        offset += 8 + rec.features.len() as u64 * feature_bytes(dim) as u64;
    }
    store.flush()?;

    let mut mf = BufWriter::new(File::create(dir.join(MANIFEST_FILE))?);
    let header = ManifestLine::Header {
        version: VERSION,
        descriptor_dim: dim,
        image_count: out.entries.len(),
        taxonomy: out.taxonomy.clone(),
    };
    serde_json::to_writer(&mut mf, &header)?;
    mf.write_all(b"\n")?;
    for entry in &out.entries {
        serde_json::to_writer(&mut mf, &ManifestLine::Image(entry.clone()))?;
        mf.write_all(b"\n")?;
    }
    mf.flush()?;
    Ok(out)
}

impl Dataset {
    pub fn save(&self, dir: &Path) -> Result<DatasetManifest> {
        save_dataset(dir, &self.manifest(), self.images())
    }

    pub fn load(dir: &Path) -> Result<Dataset> {
        load_dataset(dir)?.read_all()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::default_taxonomy;

    fn record(id: &str, n: usize, dim: usize) -> ImageRecord {
        ImageRecord {
            image_id: id.into(),
            width: 640,
            height: 480,
            features: (0..n)
                .map(|i| LocalFeature {
                    x: 1.0 + i as f64 * 0.1,
                    y: 2.5,
                    scale: 1.5,
                    orientation: 0.25,
                    descriptor: (0..dim).map(|d| (i * dim + d) as f32 * 0.01).collect(),
                })
                .collect(),
            owner_id: format!("user-{id}"),
            title: "t".into(),
            tags: vec!["x".into(), "y".into()],
            category: Some("Paintings".into()),
            source: ImageSource::Ingested,
        }
    }

    #[test]
    fn empty_dataset_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let ds = Dataset::new(128, default_taxonomy(), vec![]).unwrap();
        ds.save(dir.path()).unwrap();
        let reader = load_dataset(dir.path()).unwrap();
        assert_eq!(reader.len(), 0);
        assert_eq!(reader.manifest().descriptor_dim, 128);
    }

    #[test]
    fn three_images_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let recs = vec![record("a", 3, 128), record("b", 0, 128), record("c", 5, 128)];
        let ds = Dataset::new(128, default_taxonomy(), recs.clone()).unwrap();
        ds.save(dir.path()).unwrap();
        let reader = load_dataset(dir.path()).unwrap();
        let ids: Vec<_> = reader.manifest().image_ids().collect();
        assert_eq!(ids, vec!["a", "b", "c"]);
        assert_eq!(reader.manifest().descriptor_dim, 128);
        assert_eq!(reader.read_all().unwrap().images(), &recs[..]);
    }

    #[test]
    fn truncated_record_reports_offset() {
        let dir = tempfile::tempdir().unwrap();
        let ds = Dataset::new(8, default_taxonomy(), vec![record("a", 2, 8)]).unwrap();
        ds.save(dir.path()).unwrap();
        let path = dir.path().join(DESCRIPTOR_FILE);
        let bytes = fs::read(&path).unwrap();
        // Cut the second feature in half.
        let fb = feature_bytes(8);
        let cut = HEADER_LEN as usize + 8 + fb + fb / 2;
        fs::write(&path, &bytes[..cut]).unwrap();
        match load_dataset(dir.path()).unwrap_err() {
            Error::Format { offset, .. } => assert_eq!(offset, HEADER_LEN + 8 + fb as u64),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn corrupt_magic() {
        let dir = tempfile::tempdir().unwrap();
        Dataset::new(8, default_taxonomy(), vec![]).unwrap().save(dir.path()).unwrap();
        let path = dir.path().join(DESCRIPTOR_FILE);
        let mut bytes = fs::read(&path).unwrap();
        bytes[0] = b'X';
        fs::write(&path, bytes).unwrap();
        assert!(matches!(load_dataset(dir.path()).unwrap_err(), Error::Format { offset: 0, .. }));
    }

    #[test]
    fn dimension_mismatch_names_image() {
        let dir = tempfile::tempdir().unwrap();
        Dataset::new(8, default_taxonomy(), vec![record("imgA", 1, 8)]).unwrap().save(dir.path()).unwrap();
        let mpath = dir.path().join(MANIFEST_FILE);
        let text = fs::read_to_string(&mpath).unwrap().replace("\"dim\":8", "\"dim\":16");
        fs::write(&mpath, text).unwrap();
        let err = load_dataset(dir.path()).unwrap_err();
        assert!(matches!(err, Error::Validation(_)));
        assert!(err.to_string().contains("imgA"));
    }

    #[test]
    fn count_mismatch_is_validation_error() {
        let dir = tempfile::tempdir().unwrap();
        let recs = vec![record("a", 1, 8), record("b", 1, 8)];
        let manifest = DatasetManifest::for_records(8, default_taxonomy(), &recs[..1]);
        assert!(matches!(save_dataset(dir.path(), &manifest, &recs), Err(Error::Validation(_))));
    }

    #[test]
    fn empty_tags_stay_lists() {
        let dir = tempfile::tempdir().unwrap();
        let mut r = record("a", 1, 8);
        r.tags.clear();
        r.title.clear();
        Dataset::new(8, default_taxonomy(), vec![r]).unwrap().save(dir.path()).unwrap();
        let text = fs::read_to_string(dir.path().join(MANIFEST_FILE)).unwrap();
        assert!(text.contains("\"tags\":[]"));
        let back = Dataset::load(dir.path()).unwrap();
        assert!(back.image(0).tags.is_empty());
    }
}
