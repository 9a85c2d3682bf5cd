//! Synthetic photo collections with full ground truth: which object every
//! image shows, the true plane-to-image homographies, relevance ratings and
//! the names users should have tagged.

mod naming;
mod scene;
mod truth;

use std::collections::HashSet;
use std::path::Path;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use scene::{
    render_view, render_view_traced, Camera, ConstellationFeature, Face, RenderedView, Scene, SceneObject, Vec3, ViewSpec,
};
pub use truth::{FaceHomography, GroundTruth, ImageTruth, ObjectTruth, GROUND_TRUTH_FILE};

use crate::dataset::{default_taxonomy, write_annotations, Dataset, ImageRecord};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Archetype {
    FlatSmall,
    FlatLarge,
    Solid3d,
    FacadeDetail,
    Panorama,
}

impl Archetype {
    pub fn default_category(self) -> &'static str {
        match self {
            Archetype::FlatSmall => "Paintings",
            Archetype::FlatLarge | Archetype::Solid3d => "Landmark Buildings",
            Archetype::FacadeDetail => "Building Details",
            Archetype::Panorama => "Panoramas",
        }
    }

    fn default_size(self) -> [f64; 2] {
        match self {
            Archetype::FlatSmall => [1.0, 0.75],
            Archetype::FlatLarge => [30.0, 20.0],
            Archetype::Solid3d => [20.0, 25.0],
            Archetype::FacadeDetail => [7.5, 5.6],
            Archetype::Panorama => [80.0, 15.0],
        }
    }

    fn default_features(self) -> usize {
        match self {
            Archetype::FlatSmall => 120,
            Archetype::FlatLarge => 300,
            Archetype::Solid3d => 150,
            Archetype::FacadeDetail => 30,
            Archetype::Panorama => 500,
        }
    }

    /// Half-range of the camera azimuth around the face normal, degrees.
    fn default_azimuth(self) -> f64 {
        match self {
            Archetype::FlatSmall => 15.0,
            Archetype::FlatLarge => 35.0,
            Archetype::Solid3d => 180.0,
            Archetype::FacadeDetail => 25.0,
            Archetype::Panorama => 10.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum TagStyle {
    /// Every photo carries exactly the object's name.
    Clean,
    /// Correct, misspelled, generic and spam channels mixed.
    #[default]
    Noisy,
    /// Only generic terms; the name never appears.
    Generic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ObjectGroup {
    pub archetype: Archetype,
    pub count: usize,
    /// Views of the first object; later objects follow `views_exponent`.
    pub views: usize,
    /// Power-law decay of views over the objects of the group
    /// (`views · (i+1)^-exponent`), 0 for uniform.
    pub views_exponent: f64,
    pub min_views: usize,
    /// Query images per object, overriding the global setting.
    pub queries: Option<usize>,
    /// Coarse constellation size per face (extra coarse points for details).
    pub features: Option<usize>,
    /// Fine-scale points of a detail, visible only close up.
    pub fine_features: usize,
    pub category: Option<String>,
    pub tag_style: TagStyle,
    /// Index of the flat-large group that hosts these details.
    pub parent_group: Option<usize>,
    /// Details per parent object.
    pub per_parent: usize,
    /// Detail width as a fraction of the parent width.
    pub detail_fraction: f64,
    /// Object width and height in plane units.
    pub size: Option<[f64; 2]>,
    /// Half-range of camera azimuth, degrees.
    pub azimuth_deg: Option<f64>,
    /// Descriptor drift per radian of viewing angle.
    pub drift_gain: Option<f32>,
}

impl Default for ObjectGroup {
    fn default() -> Self {
        ObjectGroup {
            archetype: Archetype::FlatSmall,
            count: 0,
            views: 10,
            views_exponent: 0.0,
            min_views: 2,
            queries: None,
            features: None,
            fine_features: 60,
            category: None,
            tag_style: TagStyle::Noisy,
            parent_group: None,
            per_parent: 1,
            detail_fraction: 0.25,
            size: None,
            azimuth_deg: None,
            drift_gain: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseConfig {
    pub descriptor_sigma: f32,
    pub position_sigma: f64,
    pub dropout: f64,
    /// Clutter features with random descriptors per image.
    pub distractors: usize,
    pub drift_gain: f32,
    pub max_view_angle_deg: f64,
    pub min_scale_px: f64,
    pub max_scale_px: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig {
            descriptor_sigma: 4.0,
            position_sigma: 0.0,
            dropout: 0.1,
            distractors: 20,
            drift_gain: 250.0,
            max_view_angle_deg: 75.0,
            min_scale_px: 1.0,
            max_scale_px: 100.0,
        }
    }
}

impl NoiseConfig {
    /// No noise, dropout, clutter or drift.
    pub fn clean() -> Self {
        NoiseConfig {
            descriptor_sigma: 0.0,
            position_sigma: 0.0,
            dropout: 0.0,
            distractors: 0,
            drift_gain: 0.0,
            ..NoiseConfig::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TagNoiseConfig {
    pub p_name: f64,
    pub p_misspelling: f64,
    pub p_generic: f64,
    /// Detail photos tagged with the parent's name instead of their own.
    pub p_parent_name: f64,
    pub p_filename_title: f64,
    pub p_name_title: f64,
    /// Share of an object's photos uploaded by a single spam user.
    pub spam_fraction: f64,
    /// Probability that a photo's owner already photographed the object.
    pub p_repeat_owner: f64,
    pub generic_terms: Vec<String>,
}

impl Default for TagNoiseConfig {
    fn default() -> Self {
        TagNoiseConfig {
            p_name: 0.6,
            p_misspelling: 0.15,
            p_generic: 0.5,
            p_parent_name: 0.3,
            p_filename_title: 0.3,
            p_name_title: 0.2,
            spam_fraction: 0.1,
            p_repeat_owner: 0.2,
            generic_terms: [
                "paris", "france", "europe", "vacation", "photo", "canon", "travel", "architecture", "art", "city",
                "holiday", "museum",
            ]
            .iter()
            .map(|s| s.to_string())
            .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    pub descriptor_dim: usize,
    /// Prototype descriptor entries are drawn from `[0, range)`.
    pub descriptor_range: f32,
    /// Minimum L2 distance between any two prototypes.
    pub prototype_margin: f32,
    pub image_width: u32,
    pub image_height: u32,
    pub focal_px: f64,
    pub queries_per_object: usize,
    /// Queries re-shot from an existing query's viewpoint.
    pub query_duplicates: usize,
    /// Images showing no object at all.
    pub distractor_images: usize,
    pub noise: NoiseConfig,
    pub tags: TagNoiseConfig,
    pub groups: Vec<ObjectGroup>,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            descriptor_dim: 32,
            descriptor_range: 255.0,
            prototype_margin: 150.0,
            image_width: 640,
            image_height: 480,
            focal_px: 600.0,
            queries_per_object: 2,
            query_duplicates: 0,
            distractor_images: 0,
            noise: NoiseConfig::default(),
            tags: TagNoiseConfig::default(),
            groups: Vec::new(),
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.descriptor_dim == 0 {
            return Err(Error::validation("descriptor_dim must be positive"));
        }
        if !(0.0..1.0).contains(&self.noise.dropout) {
            return Err(Error::validation("dropout must lie in [0, 1)"));
        }
        if self.image_width == 0 || self.image_height == 0 || self.focal_px <= 0.0 {
            return Err(Error::validation("camera frame and focal length must be positive"));
        }
        let taxonomy = default_taxonomy();
        for (gi, g) in self.groups.iter().enumerate() {
            if let Some(c) = &g.category {
                if !taxonomy.contains(c) {
                    return Err(Error::Validation(format!("group {gi}: unknown category {c:?}")));
                }
            }
            if g.archetype == Archetype::FacadeDetail {
                match g.parent_group {
                    Some(p) if p < self.groups.len() && self.groups[p].archetype == Archetype::FlatLarge => {}
                    _ => {
                        return Err(Error::Validation(format!(
                            "group {gi}: facade-detail objects need a parent_group of flat-large objects"
                        )))
                    }
                }
                if !(g.detail_fraction > 0.0 && g.detail_fraction < 1.0) {
                    return Err(Error::Validation(format!("group {gi}: detail_fraction must lie in (0, 1)")));
                }
            } else if g.parent_group.is_some() {
                return Err(Error::Validation(format!("group {gi}: only facade-detail groups take a parent_group")));
            }
        }
        Ok(())
    }
}

/// Output of [`generate_dataset`].
#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub dataset: Dataset,
    pub queries: Vec<ImageRecord>,
    pub truth: GroundTruth,
    pub scenes: Vec<Scene>,
}

pub const QUERY_DIR: &str = "queries";
pub const ANNOTATIONS_FILE: &str = "annotations.csv";

impl SyntheticData {
    /// Writes the dataset, the query set, ground truth and object-level
    /// relevance annotations under `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        self.dataset.save(dir)?;
        let queries = Dataset::new(self.dataset.descriptor_dim(), self.dataset.taxonomy().to_vec(), self.queries.clone())?;
        queries.save(&dir.join(QUERY_DIR))?;
        self.truth.save(&dir.join(GROUND_TRUTH_FILE))?;
        write_annotations(&dir.join(ANNOTATIONS_FILE), &self.truth.object_annotations())?;
        Ok(())
    }
}

struct ObjectPlan {
    scene: usize,
    object: usize,
    group: usize,
    views: usize,
    queries: usize,
    hotspots: Vec<f64>,
}

/// A view before rendering.
struct PlannedView {
    plan: usize,
    spec: ViewSpec,
    query: bool,
    duplicate_of: Option<usize>,
}

struct PrototypeSampler {
    dim: usize,
    range: f32,
    margin_sq: f32,
    accepted: Vec<Vec<f32>>,
}

impl PrototypeSampler {
    fn draw(&mut self, rng: &mut ChaCha8Rng) -> Result<Vec<f32>> {
        for _ in 0..1000 {
            let p: Vec<f32> = (0..self.dim).map(|_| rng.random_range(0.0..self.range)).collect();
            let clear = self
                .accepted
                .iter()
                .all(|q| crate::geometry::sq_dist(&p, q) >= self.margin_sq);
            if clear {
                self.accepted.push(p.clone());
                return Ok(p);
            }
        }
        Err(Error::validation("prototype_margin too large for the descriptor range and dimension"))
    }
}

fn random_direction(rng: &mut ChaCha8Rng, dim: usize, gain: f32) -> Vec<f32> {
    let v: Vec<f32> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
    let n = v.iter().map(|x| x * x).sum::<f32>().sqrt().max(1e-12);
    v.into_iter().map(|x| x / n * gain).collect()
}

/// Deterministically generates a dataset, a query set and their ground truth.
pub fn generate_dataset(config: &GeneratorConfig, seed: u64) -> Result<SyntheticData> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sampler = PrototypeSampler {
        dim: config.descriptor_dim,
        range: config.descriptor_range,
        margin_sq: config.prototype_margin * config.prototype_margin,
        accepted: Vec::new(),
    };
    let mut names = HashSet::new();
    let mut scenes: Vec<Scene> = Vec::new();
    let mut plans: Vec<ObjectPlan> = Vec::new();
    // Root objects of each flat-large group, for attaching details.
    let mut roots_by_group: Vec<Vec<usize>> = vec![Vec::new(); config.groups.len()];
    let mut object_counter = 0usize;

    let views_for = |g: &ObjectGroup, i: usize| -> usize {
        if g.views_exponent > 0.0 {
            ((g.views as f64 * ((i + 1) as f64).powf(-g.views_exponent)).round() as usize).max(g.min_views)
        } else {
            g.views
        }
    };

    for (gi, g) in config.groups.iter().enumerate() {
        if g.archetype == Archetype::FacadeDetail {
            continue;
        }
        let size = g.size.unwrap_or(g.archetype.default_size());
        let category = g.category.clone().unwrap_or_else(|| g.archetype.default_category().to_string());
        let gain = g.drift_gain.unwrap_or(config.noise.drift_gain);
        for i in 0..g.count {
            let faces = scene::root_faces(g.archetype, size);
            let n_feat = g.features.unwrap_or(g.archetype.default_features());
            let mut features = Vec::new();
            for (fi, face) in faces.iter().enumerate() {
                for _ in 0..n_feat {
                    features.push(ConstellationFeature {
                        face: fi,
                        u: rng.random_range(0.0..face.width),
                        v: rng.random_range(0.0..face.height),
                        scale: size[0] * rng.random_range(0.004..0.02),
                        orientation: rng.random_range(0.0..std::f64::consts::TAU),
                        prototype: sampler.draw(&mut rng)?,
                        drift_u: random_direction(&mut rng, config.descriptor_dim, gain),
                        drift_v: random_direction(&mut rng, config.descriptor_dim, gain),
                    });
                }
            }
            let name = naming::object_name(&mut rng, g.archetype, Some(&category), &mut names);
            let views = views_for(g, i);
            let object = SceneObject {
                object_id: format!("obj{object_counter:04}"),
                archetype: g.archetype,
                true_name: name,
                category: Some(category.clone()),
                parent: None,
                popularity: views,
                region: (0, [0.0, 0.0, faces[0].width, faces[0].height]),
                constellation: (0..features.len() as u32).collect(),
            };
            object_counter += 1;
            let hotspots = (0..3).map(|_| rng.random_range(0.15..0.85)).collect();
            plans.push(ObjectPlan {
                scene: scenes.len(),
                object: 0,
                group: gi,
                views,
                queries: g.queries.unwrap_or(config.queries_per_object),
                hotspots,
            });
            roots_by_group[gi].push(scenes.len());
            scenes.push(Scene {
                faces,
                features,
                objects: vec![object],
                descriptor_dim: config.descriptor_dim,
                descriptor_range: config.descriptor_range,
            });
        }
    }

    for (gi, g) in config.groups.iter().enumerate() {
        if g.archetype != Archetype::FacadeDetail {
            continue;
        }
        let parent_group = g.parent_group.expect("validated");
        let category = g.category.clone().unwrap_or_else(|| g.archetype.default_category().to_string());
        let gain = g.drift_gain.unwrap_or(config.noise.drift_gain);
        let mut detail_index = 0;
        for &si in &roots_by_group[parent_group] {
            for _ in 0..g.per_parent {
                if detail_index >= g.count {
                    break;
                }
                let scene = &mut scenes[si];
                let face = scene.faces[0].clone();
                let dw = face.width * g.detail_fraction;
                let dh = (dw * 0.75).min(face.height * 0.9);
                let taken: Vec<[f64; 4]> = scene.objects[1..].iter().map(|o| o.region.1).collect();
                let mut rect = [0.0; 4];
                for _ in 0..50 {
                    let u0 = rng.random_range(0.0..face.width - dw);
                    let v0 = rng.random_range(0.0..face.height - dh);
                    rect = [u0, v0, u0 + dw, v0 + dh];
                    let clash = taken.iter().any(|t| rect[0] < t[2] && t[0] < rect[2] && rect[1] < t[3] && t[1] < rect[3]);
                    if !clash {
                        break;
                    }
                }
                let extra = g.features.unwrap_or(Archetype::FacadeDetail.default_features());
                let first_new = scene.features.len();
                for k in 0..extra + g.fine_features {
                    let fine = k >= extra;
                    let scale = if fine {
                        dw * rng.random_range(0.0025..0.008)
                    } else {
                        face.width * rng.random_range(0.004..0.02)
                    };
                    scene.features.push(ConstellationFeature {
                        face: 0,
                        u: rng.random_range(rect[0]..rect[2]),
                        v: rng.random_range(rect[1]..rect[3]),
                        scale,
                        orientation: rng.random_range(0.0..std::f64::consts::TAU),
                        prototype: sampler.draw(&mut rng)?,
                        drift_u: random_direction(&mut rng, config.descriptor_dim, gain),
                        drift_v: random_direction(&mut rng, config.descriptor_dim, gain),
                    });
                }
                // Coarse parent points that fall inside the region belong to
                // the detail as well.
                let mut constellation: Vec<u32> = scene.features[..first_new]
                    .iter()
                    .enumerate()
                    .filter(|(_, f)| f.face == 0 && f.u >= rect[0] && f.u <= rect[2] && f.v >= rect[1] && f.v <= rect[3])
                    .map(|(i, _)| i as u32)
                    .collect();
                constellation.extend(first_new as u32..scene.features.len() as u32);
                let len = scene.features.len() as u32;
                scene.objects[0].constellation = (0..len).collect();
                let name = naming::object_name(&mut rng, g.archetype, Some(&category), &mut names);
                let views = views_for(g, detail_index);
                let parent_id = scene.objects[0].object_id.clone();
                scene.objects.push(SceneObject {
                    object_id: format!("obj{object_counter:04}"),
                    archetype: g.archetype,
                    true_name: name,
                    category: Some(category.clone()),
                    parent: Some(parent_id),
                    popularity: views,
                    region: (0, rect),
                    constellation,
                });
                object_counter += 1;
                plans.push(ObjectPlan {
                    scene: si,
                    object: scene.objects.len() - 1,
                    group: gi,
                    views,
                    queries: g.queries.unwrap_or(config.queries_per_object),
                    hotspots: Vec::new(),
                });
                detail_index += 1;
            }
        }
    }
    // Canonical order: objects by id.
    plans.sort_by(|a, b| {
        scenes[a.scene].objects[a.object]
            .object_id
            .cmp(&scenes[b.scene].objects[b.object].object_id)
    });

    let mut planned: Vec<PlannedView> = Vec::new();
    let mut user_counter = 0usize;
    let mut new_user = || {
        user_counter += 1;
        format!("u{:05}", user_counter - 1)
    };
    for (pi, plan) in plans.iter().enumerate() {
        let g = &config.groups[plan.group];
        let scene = &scenes[plan.scene];
        let obj = &scene.objects[plan.object];
        let parent_name = obj
            .parent
            .as_ref()
            .map(|_| scene.objects[0].true_name.clone());
        let spam_user = new_user();
        let spam_tag = format!("{spam_user}pics");
        let mut owners: Vec<String> = Vec::new();
        for k in 0..plan.views + plan.queries {
            let query = k >= plan.views;
            let camera = sample_camera(config, g, scene, plan, &mut rng);
            let faces: Vec<(usize, crate::geometry::Homography)> = scene
                .faces
                .iter()
                .enumerate()
                .filter(|(_, f)| camera.sees(f))
                .filter_map(|(i, f)| Some((i, camera.face_homography(f)?)))
                .collect();
            let spam = !query && rng.random_bool(config.tags.spam_fraction.clamp(0.0, 1.0));
            let owner = if spam {
                spam_user.clone()
            } else if !owners.is_empty() && rng.random_bool(config.tags.p_repeat_owner.clamp(0.0, 1.0)) {
                owners[rng.random_range(0..owners.len())].clone()
            } else {
                let u = new_user();
                owners.push(u.clone());
                u
            };
            let (tags, title) = emit_tags(
                &config.tags,
                g.tag_style,
                &obj.true_name,
                parent_name.as_deref(),
                spam.then_some(spam_tag.as_str()),
                &mut rng,
            );
            planned.push(PlannedView {
                plan: pi,
                spec: ViewSpec {
                    object_id: obj.object_id.clone(),
                    width: config.image_width,
                    height: config.image_height,
                    faces,
                    camera: Some(camera),
                    max_view_angle: config.noise.max_view_angle_deg.to_radians(),
                    scale_range: [config.noise.min_scale_px, config.noise.max_scale_px],
                    descriptor_noise: config.noise.descriptor_sigma,
                    position_noise: config.noise.position_sigma,
                    dropout: config.noise.dropout,
                    distractors: config.noise.distractors,
                    owner_id: owner,
                    title,
                    tags,
                    category: obj.category.clone(),
                },
                query,
                duplicate_of: None,
            });
        }
    }
    let query_positions: Vec<usize> = (0..planned.len()).filter(|&i| planned[i].query).collect();
    for d in 0..config.query_duplicates.min(query_positions.len()) {
        let src = query_positions[rng.random_range(0..query_positions.len())];
        let mut copy = PlannedView {
            plan: planned[src].plan,
            spec: planned[src].spec.clone(),
            query: true,
            duplicate_of: Some(src),
        };
        copy.spec.owner_id = format!("d{d:05}");
        planned.push(copy);
    }
    let mut distractor_specs = Vec::new();
    for _ in 0..config.distractor_images {
        distractor_specs.push(ViewSpec {
            object_id: String::new(),
            width: config.image_width,
            height: config.image_height,
            faces: Vec::new(),
            camera: None,
            max_view_angle: 0.0,
            scale_range: [0.0, 0.0],
            descriptor_noise: 0.0,
            position_noise: 0.0,
            dropout: 0.0,
            distractors: config.noise.distractors.max(50),
            owner_id: new_user(),
            title: naming::camera_filename(&mut rng),
            tags: vec![config.tags.generic_terms.first().cloned().unwrap_or_default()]
                .into_iter()
                .filter(|t| !t.is_empty())
                .collect(),
            category: None,
        });
    }
    let render_seed: u64 = rng.random();

    // Ids in plan order: database images, then queries.
    let mut db_ids = vec![String::new(); planned.len()];
    let mut q_ids = vec![String::new(); planned.len()];
    let (mut nd, mut nq) = (0, 0);
    for (i, p) in planned.iter().enumerate() {
        if p.query {
            q_ids[i] = format!("q{nq:05}");
            nq += 1;
        } else {
            db_ids[i] = format!("img{nd:05}");
            nd += 1;
        }
    }
    let seed_for = |i: usize| -> u64 {
        let mut r = ChaCha8Rng::seed_from_u64(render_seed);
        r.set_stream(i as u64);
        r.random()
    };
    let rendered: Vec<ImageRecord> = planned
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            let id = if p.query { &q_ids[i] } else { &db_ids[i] };
            render_view(&scenes[plans[p.plan].scene], &p.spec, id, seed_for(i))
        })
        .collect();
    let empty_scene = Scene {
        faces: Vec::new(),
        features: Vec::new(),
        objects: Vec::new(),
        descriptor_dim: config.descriptor_dim,
        descriptor_range: config.descriptor_range,
    };
    let distractors: Vec<ImageRecord> = distractor_specs
        .par_iter()
        .enumerate()
        .map(|(k, spec)| render_view(&empty_scene, spec, &format!("img{:05}", nd + k), seed_for(planned.len() + k)))
        .collect();

    let mut images = Vec::new();
    let mut queries = Vec::new();
    let mut truth_images = Vec::new();
    for (p, rec) in planned.iter().zip(rendered) {
        let plan = &plans[p.plan];
        truth_images.push(ImageTruth {
            image_id: rec.image_id.clone(),
            object_id: Some(scenes[plan.scene].objects[plan.object].object_id.clone()),
            query: p.query,
            scene: Some(plan.scene),
            faces: p
                .spec
                .faces
                .iter()
                .map(|&(face, homography)| FaceHomography { face, homography })
                .collect(),
            duplicate_of: p.duplicate_of.map(|s| q_ids[s].clone()),
        });
        if p.query {
            queries.push(rec);
        } else {
            images.push(rec);
        }
    }
    for rec in distractors {
        truth_images.push(ImageTruth {
            image_id: rec.image_id.clone(),
            object_id: None,
            query: false,
            scene: None,
            faces: Vec::new(),
            duplicate_of: None,
        });
        images.push(rec);
    }
    let truth = GroundTruth::new(&scenes, truth_images);
    let dataset = Dataset::new(config.descriptor_dim, default_taxonomy(), images)?;
    Ok(SyntheticData { dataset, queries, truth, scenes })
}

fn emit_tags(
    cfg: &TagNoiseConfig,
    style: TagStyle,
    name: &str,
    parent_name: Option<&str>,
    spam_tag: Option<&str>,
    rng: &mut ChaCha8Rng,
) -> (Vec<String>, String) {
    let mut tags = Vec::new();
    let mut title = String::new();
    match style {
        TagStyle::Clean => tags.push(name.to_string()),
        TagStyle::Generic => {
            let n = rng.random_range(1..=3);
            for _ in 0..n {
                if let Some(t) = pick(&cfg.generic_terms, rng) {
                    tags.push(naming::user_casing(rng, &t));
                }
            }
            if rng.random_bool(cfg.p_filename_title.clamp(0.0, 1.0)) {
                title = naming::camera_filename(rng);
            }
        }
        TagStyle::Noisy => {
            if rng.random_bool(cfg.p_name.clamp(0.0, 1.0)) {
                let own = match parent_name {
                    Some(p) if rng.random_bool(cfg.p_parent_name.clamp(0.0, 1.0)) => p,
                    _ => name,
                };
                tags.push(naming::user_casing(rng, own));
            }
            if rng.random_bool(cfg.p_misspelling.clamp(0.0, 1.0)) {
                tags.push(naming::misspell(rng, name));
            }
            if rng.random_bool(cfg.p_generic.clamp(0.0, 1.0)) {
                if let Some(t) = pick(&cfg.generic_terms, rng) {
                    tags.push(naming::user_casing(rng, &t));
                }
            }
            let r: f64 = rng.random();
            if r < cfg.p_filename_title {
                title = naming::camera_filename(rng);
            } else if r < cfg.p_filename_title + cfg.p_name_title {
                title = naming::user_casing(rng, name);
            }
        }
    }
    if let Some(s) = spam_tag {
        tags.push(s.to_string());
    }
    (tags, title)
}

fn pick(terms: &[String], rng: &mut ChaCha8Rng) -> Option<String> {
    if terms.is_empty() {
        None
    } else {
        Some(terms[rng.random_range(0..terms.len())].clone())
    }
}

fn sample_camera(config: &GeneratorConfig, g: &ObjectGroup, scene: &Scene, plan: &ObjectPlan, rng: &mut ChaCha8Rng) -> Camera {
    let obj = &scene.objects[plan.object];
    let face = &scene.faces[obj.region.0];
    let [u0, v0, u1, v1] = obj.region.1;
    let (ow, oh) = (u1 - u0, v1 - v0);
    let az_max = g.azimuth_deg.unwrap_or(g.archetype.default_azimuth()).to_radians();
    let width_px = config.image_width as f64;
    let f = config.focal_px;
    let gauss = |rng: &mut ChaCha8Rng, s: f64| -> f64 { Normal::new(0.0, s).expect("finite").sample(rng) };
    let roll = rng.random_range(-3f64..3.0).to_radians();

    let (target, dir, dist) = match g.archetype {
        Archetype::Solid3d => {
            let az = rng.random_range(-az_max..=az_max);
            let el = rng.random_range(0f64..15.0).to_radians();
            let w = scene.faces[0].width;
            let target = Vector3::new(gauss(rng, 0.05 * w), gauss(rng, 0.05 * w), gauss(rng, 0.05 * w));
            let frac = rng.random_range(0.6..0.9);
            (target, scene::view_direction(az, el), f * 1.3 * w / (frac * width_px))
        }
        Archetype::Panorama => {
            let u = if rng.random_bool(0.75) && !plan.hotspots.is_empty() {
                let spot = plan.hotspots[rng.random_range(0..plan.hotspots.len())];
                (spot * ow + gauss(rng, 0.04 * ow)).clamp(0.05 * ow, 0.95 * ow)
            } else {
                rng.random_range(0.1 * ow..0.9 * ow)
            };
            let v = oh / 2.0 + gauss(rng, 0.05 * oh);
            let az = rng.random_range(-az_max..=az_max);
            let el = rng.random_range(-5f64..5.0).to_radians();
            let frac = rng.random_range(0.2..0.3);
            (face.point(u0 + u, v0 + v), scene::view_direction(az, el), f * frac * ow / width_px)
        }
        arch => {
            let (jitter, el_range, frac_range): (f64, (f64, f64), (f64, f64)) = match arch {
                Archetype::FlatSmall => (0.05, (-8.0, 8.0), (0.45, 0.85)),
                Archetype::FlatLarge => (0.1, (-2.0, 15.0), (0.6, 1.2)),
                _ => (0.05, (-5.0, 10.0), (0.55, 0.9)),
            };
            let u = (ow / 2.0 + gauss(rng, jitter * ow)).clamp(0.0, ow);
            let v = (oh / 2.0 + gauss(rng, jitter * oh)).clamp(0.0, oh);
            let az = rng.random_range(-az_max..=az_max);
            let el = rng.random_range(el_range.0..el_range.1).to_radians();
            let frac = rng.random_range(frac_range.0..frac_range.1);
            (face.point(u0 + u, v0 + v), scene::view_direction(az, el), f * ow / (frac * width_px))
        }
    };
    Camera::look_at(target + dir * dist, target, roll, f, config.image_width, config.image_height)
}

#[cfg(test)]
mod tests;
