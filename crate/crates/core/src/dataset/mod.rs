//! Core domain types shared by every stage: local features, image records,
//! dataset manifests and relevance annotations, plus their on-disk formats.

mod annotations;
mod store;

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use annotations::{read_annotations, write_annotations, Annotations, Rating, RelevanceAnnotation};
pub use store::{load_dataset, save_dataset, DatasetManifest, DatasetReader, ManifestEntry, DESCRIPTOR_FILE, MANIFEST_FILE};

/// Descriptor length used when a manifest does not say otherwise.
pub const DEFAULT_DESCRIPTOR_DIM: usize = 128;

/// Query / object categories, in reporting order.
pub const DEFAULT_TAXONOMY: [&str; 13] = [
    "Landmark Buildings",
    "Panoramas",
    "Sculptures",
    "Interior Views",
    "Building Details",
    "Paintings",
    "Windows",
    "Landmark Objects",
    "Murals",
    "Cafes / Shops",
    "Artifacts",
    "Other",
    "Multiple Objects",
];

pub fn default_taxonomy() -> Vec<String> {
    DEFAULT_TAXONOMY.iter().map(|s| s.to_string()).collect()
}

/// A keypoint with its descriptor. Coordinates are in pixels of the owning image.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalFeature {
    pub x: f64,
    pub y: f64,
    pub scale: f64,
    /// Radians in `[0, 2π)`.
    pub orientation: f64,
    pub descriptor: Vec<f32>,
}

impl LocalFeature {
    pub fn position(&self) -> [f64; 2] {
        [self.x, self.y]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ImageSource {
    Ingested,
    Synthetic,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageRecord {
    pub image_id: String,
    pub width: u32,
    pub height: u32,
    pub features: Vec<LocalFeature>,
    pub owner_id: String,
    /// Free text, possibly empty. Kept apart from `tags` so tag mining can
    /// decide how to treat it.
    pub title: String,
    pub tags: Vec<String>,
    pub category: Option<String>,
    pub source: ImageSource,
}

impl ImageRecord {
    pub fn frame_area(&self) -> f64 {
        self.width as f64 * self.height as f64
    }

    fn validate(&self, descriptor_dim: usize) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::validation(format!(
                "image {} has an empty frame ({}x{})",
                self.image_id, self.width, self.height
            )));
        }
        let (w, h) = (self.width as f64, self.height as f64);
        for (i, f) in self.features.iter().enumerate() {
            if f.descriptor.len() != descriptor_dim {
                return Err(Error::validation(format!(
                    "image {}: feature {} has descriptor length {}, expected {}",
                    self.image_id,
                    i,
                    f.descriptor.len(),
                    descriptor_dim
                )));
            }
            if !(0.0..=w).contains(&f.x) || !(0.0..=h).contains(&f.y) {
                return Err(Error::validation(format!(
                    "image {}: feature {} at ({}, {}) lies outside the {}x{} frame",
                    self.image_id, i, f.x, f.y, self.width, self.height
                )));
            }
            if f.scale <= 0.0 || !f.scale.is_finite() {
                return Err(Error::validation(format!(
                    "image {}: feature {} has non-positive scale",
                    self.image_id, i
                )));
            }
        }
        Ok(())
    }
}

/// Position of an image inside a [`Dataset`].
pub type ImageIdx = usize;

/// A fully decoded, immutable collection of images.
#[derive(Debug, Clone)]
pub struct Dataset {
    descriptor_dim: usize,
    taxonomy: Vec<String>,
    images: Vec<ImageRecord>,
    lookup: HashMap<String, ImageIdx>,
}

impl Dataset {
    pub fn new(descriptor_dim: usize, taxonomy: Vec<String>, images: Vec<ImageRecord>) -> Result<Self> {
        if descriptor_dim == 0 {
            return Err(Error::validation("descriptor dimensionality must be positive"));
        }
        let mut lookup = HashMap::with_capacity(images.len());
        for (i, img) in images.iter().enumerate() {
            if lookup.insert(img.image_id.clone(), i).is_some() {
                return Err(Error::validation(format!("duplicate image id {}", img.image_id)));
            }
            img.validate(descriptor_dim)?;
            if let Some(cat) = &img.category {
                if !taxonomy.iter().any(|t| t == cat) {
                    return Err(Error::validation(format!(
                        "image {} has category {:?} which is not in the taxonomy",
                        img.image_id, cat
                    )));
                }
            }
        }
        Ok(Dataset {
            descriptor_dim,
            taxonomy,
            images,
            lookup,
        })
    }

    pub fn empty(descriptor_dim: usize) -> Self {
        Dataset {
            descriptor_dim,
            taxonomy: default_taxonomy(),
            images: Vec::new(),
            lookup: HashMap::new(),
        }
    }

    pub fn descriptor_dim(&self) -> usize {
        self.descriptor_dim
    }

    pub fn taxonomy(&self) -> &[String] {
        &self.taxonomy
    }

    pub fn images(&self) -> &[ImageRecord] {
        &self.images
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn image(&self, idx: ImageIdx) -> &ImageRecord {
        &self.images[idx]
    }

    pub fn id(&self, idx: ImageIdx) -> &str {
        &self.images[idx].image_id
    }

    pub fn index_of(&self, image_id: &str) -> Option<ImageIdx> {
        self.lookup.get(image_id).copied()
    }

    pub fn get(&self, image_id: &str) -> Option<&ImageRecord> {
        self.index_of(image_id).map(|i| &self.images[i])
    }

    pub fn into_images(self) -> Vec<ImageRecord> {
        self.images
    }

    /// Builds a manifest for this dataset. Offsets are filled in by
    /// [`save_dataset`].
    pub fn manifest(&self) -> DatasetManifest {
        DatasetManifest::for_records(self.descriptor_dim, self.taxonomy.clone(), &self.images)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn feature(x: f64, y: f64, dim: usize) -> LocalFeature {
        LocalFeature {
            x,
            y,
            scale: 2.0,
            orientation: 0.0,
            descriptor: vec![0.5; dim],
        }
    }

    fn image(id: &str, features: Vec<LocalFeature>) -> ImageRecord {
        ImageRecord {
            image_id: id.into(),
            width: 100,
            height: 50,
            features,
            owner_id: "u".into(),
            title: String::new(),
            tags: vec![],
            category: None,
            source: ImageSource::Synthetic,
        }
    }

    #[test]
    fn rejects_duplicate_ids() {
        let err = Dataset::new(4, default_taxonomy(), vec![image("a", vec![]), image("a", vec![])]).unwrap_err();
        assert!(matches!(err, Error::Validation(_)));
    }

    #[test]
    fn rejects_wrong_descriptor_length() {
        let err = Dataset::new(4, default_taxonomy(), vec![image("a", vec![feature(1.0, 1.0, 3)])]).unwrap_err();
        assert!(err.to_string().contains("descriptor length"));
    }

    #[test]
    fn rejects_feature_outside_frame() {
        let err = Dataset::new(4, default_taxonomy(), vec![image("a", vec![feature(101.0, 1.0, 4)])]).unwrap_err();
        assert!(err.to_string().contains("outside"));
    }

    #[test]
    fn rejects_unknown_category() {
        let mut img = image("a", vec![]);
        img.category = Some("Spaceships".into());
        assert!(Dataset::new(4, default_taxonomy(), vec![img]).is_err());
    }

    #[test]
    fn lookup_by_id() {
        let ds = Dataset::new(4, default_taxonomy(), vec![image("b", vec![]), image("a", vec![])]).unwrap();
        assert_eq!(ds.index_of("a"), Some(1));
        assert_eq!(ds.id(0), "b");
        assert!(ds.get("zzz").is_none());
    }
}
