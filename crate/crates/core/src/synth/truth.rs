use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Archetype, Scene};
use crate::dataset::{Annotations, Rating};
use crate::error::{Error, Result};
use crate::geometry::Homography;

pub const GROUND_TRUTH_FILE: &str = "ground_truth.jsonl";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectTruth {
    pub object_id: String,
    pub true_name: String,
    pub archetype: Archetype,
    pub category: Option<String>,
    pub parent: Option<String>,
    pub scene: usize,
    /// Normalized tags that name the object correctly.
    pub good_names: Vec<String>,
    /// Normalized tags that name a related object.
    pub ok_names: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FaceHomography {
    pub face: usize,
    /// Plane coordinates to image pixels.
    pub homography: Homography,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageTruth {
    pub image_id: String,
    /// Object the view was taken of; `None` for clutter images.
    pub object_id: Option<String>,
    pub query: bool,
    pub scene: Option<usize>,
    pub faces: Vec<FaceHomography>,
    /// Query re-shot from the same viewpoint as this one.
    pub duplicate_of: Option<String>,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum Line {
    Object(ObjectTruth),
    Image(ImageTruth),
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct GroundTruth {
    objects: BTreeMap<String, ObjectTruth>,
    images: BTreeMap<String, ImageTruth>,
}

fn norm(s: &str) -> String {
    s.trim().to_lowercase()
}

impl GroundTruth {
    pub fn new(scenes: &[Scene], images: Vec<ImageTruth>) -> Self {
        let mut objects = BTreeMap::new();
        for (si, scene) in scenes.iter().enumerate() {
            for o in &scene.objects {
                let parent_name = o
                    .parent
                    .as_ref()
                    .and_then(|p| scene.objects.iter().find(|x| &x.object_id == p))
                    .map(|p| norm(&p.true_name));
                let mut good_names = vec![norm(&o.true_name)];
                good_names.extend(parent_name);
                let ok_names = scene
                    .objects
                    .iter()
                    .filter(|x| x.parent.as_ref() == Some(&o.object_id))
                    .map(|x| norm(&x.true_name))
                    .collect();
                objects.insert(
                    o.object_id.clone(),
                    ObjectTruth {
                        object_id: o.object_id.clone(),
                        true_name: o.true_name.clone(),
                        archetype: o.archetype,
                        category: o.category.clone(),
                        parent: o.parent.clone(),
                        scene: si,
                        good_names,
                        ok_names,
                    },
                );
            }
        }
        GroundTruth {
            objects,
            images: images.into_iter().map(|i| (i.image_id.clone(), i)).collect(),
        }
    }

    pub fn objects(&self) -> impl Iterator<Item = &ObjectTruth> {
        self.objects.values()
    }

    pub fn images(&self) -> impl Iterator<Item = &ImageTruth> {
        self.images.values()
    }

    pub fn object(&self, object_id: &str) -> Option<&ObjectTruth> {
        self.objects.get(object_id)
    }

    pub fn image(&self, image_id: &str) -> Option<&ImageTruth> {
        self.images.get(image_id)
    }

    pub fn object_of(&self, image_id: &str) -> Option<&str> {
        self.images.get(image_id)?.object_id.as_deref()
    }

    /// Good for the same object, ok for a detail and its whole, bad
    /// otherwise (sibling details included).
    pub fn rating(&self, query_object: &str, object: &str) -> Rating {
        if query_object == object {
            return Rating::Good;
        }
        let parent = |o: &str| self.objects.get(o).and_then(|t| t.parent.as_deref());
        if parent(query_object) == Some(object) || parent(object) == Some(query_object) {
            return Rating::Ok;
        }
        Rating::Bad
    }

    /// Rating of `tag` as a name for what `query_object` shows.
    pub fn semantic_rating(&self, query_object: &str, tag: &str) -> Rating {
        let Some(o) = self.objects.get(query_object) else {
            return Rating::Bad;
        };
        let t = norm(tag);
        if o.good_names.contains(&t) {
            Rating::Good
        } else if o.ok_names.contains(&t) {
            Rating::Ok
        } else {
            Rating::Bad
        }
    }

    /// True map from image `a` to image `b` through their first common face.
    pub fn true_homography(&self, a: &str, b: &str) -> Option<Homography> {
        let (ia, ib) = (self.images.get(a)?, self.images.get(b)?);
        if ia.scene.is_none() || ia.scene != ib.scene {
            return None;
        }
        let fa = ia.faces.iter().find(|fa| ib.faces.iter().any(|fb| fb.face == fa.face))?;
        let fb = ib.faces.iter().find(|fb| fb.face == fa.face)?;
        Some(fa.homography.inverse()?.then(&fb.homography))
    }

    /// Plane-to-image homography of `image` for `face`.
    pub fn face_homography(&self, image: &str, face: usize) -> Option<Homography> {
        self.images
            .get(image)?
            .faces
            .iter()
            .find(|f| f.face == face)
            .map(|f| f.homography)
    }

    /// Every (query image, object) pair rated.
    pub fn object_annotations(&self) -> Annotations {
        let mut out = Annotations::new();
        for img in self.images.values().filter(|i| i.query) {
            let Some(q) = &img.object_id else { continue };
            for o in self.objects.keys() {
                out.insert(&img.image_id, o, self.rating(q, o)).expect("pairs are unique");
            }
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(fs::File::create(path)?);
        for o in self.objects.values() {
            serde_json::to_writer(&mut w, &Line::Object(o.clone()))?;
            w.write_all(b"\n")?;
        }
        for i in self.images.values() {
            serde_json::to_writer(&mut w, &Line::Image(i.clone()))?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let r = BufReader::new(fs::File::open(path)?);
        let mut gt = GroundTruth::default();
        let mut offset = 0u64;
        for line in r.lines() {
            let line = line?;
            let len = line.len() as u64 + 1;
            if !line.trim().is_empty() {
                match serde_json::from_str::<Line>(&line).map_err(|e| Error::format(offset, e.to_string()))? {
                    Line::Object(o) => {
                        gt.objects.insert(o.object_id.clone(), o);
                    }
                    Line::Image(i) => {
                        gt.images.insert(i.image_id.clone(), i);
                    }
                }
            }
            offset += len;
        }
        Ok(gt)
    }
}
