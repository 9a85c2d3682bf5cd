//! Planar scene geometry, pinhole cameras and view rendering.

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::Archetype;
use crate::dataset::{ImageRecord, ImageSource, LocalFeature};
use crate::geometry::{Homography, Point};

pub type Vec3 = [f64; 3];

fn v3(a: Vec3) -> Vector3<f64> {
    Vector3::new(a[0], a[1], a[2])
}

/// A planar rectangle in world coordinates. Plane coordinates `(u, v)` run
/// over `[0, width] × [0, height]` along the unit axes; the outward normal
/// is `v_axis × u_axis`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Face {
    pub origin: Vec3,
    pub u_axis: Vec3,
    pub v_axis: Vec3,
    pub width: f64,
    pub height: f64,
}

impl Face {
    pub fn point(&self, u: f64, v: f64) -> Vector3<f64> {
        v3(self.origin) + v3(self.u_axis) * u + v3(self.v_axis) * v
    }

    pub fn center(&self) -> Vector3<f64> {
        self.point(self.width / 2.0, self.height / 2.0)
    }

    pub fn normal(&self) -> Vector3<f64> {
        v3(self.v_axis).cross(&v3(self.u_axis))
    }
}

/// One point of an object's canonical constellation.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstellationFeature {
    pub face: usize,
    pub u: f64,
    pub v: f64,
    /// In plane units.
    pub scale: f64,
    pub orientation: f64,
    pub prototype: Vec<f32>,
    /// Descriptor change per radian of viewing angle along the face axes.
    pub drift_u: Vec<f32>,
    pub drift_v: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneObject {
    pub object_id: String,
    pub archetype: Archetype,
    pub true_name: String,
    pub category: Option<String>,
    /// Object whose plane this detail lies on.
    pub parent: Option<String>,
    /// Expected number of database views.
    pub popularity: usize,
    /// Face and `[u0, v0, u1, v1]` rectangle the object occupies.
    pub region: (usize, [f64; 4]),
    /// Indices into the scene's feature list.
    pub constellation: Vec<u32>,
}

/// A rigid physical arrangement: a root object plus any details on its faces.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub faces: Vec<Face>,
    pub features: Vec<ConstellationFeature>,
    pub objects: Vec<SceneObject>,
    pub descriptor_dim: usize,
    pub descriptor_range: f32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Camera {
    pub center: Vec3,
    /// Rows: image right, image down, viewing direction.
    pub rotation: Matrix3<f64>,
    pub focal: f64,
    pub width: u32,
    pub height: u32,
}

impl Camera {
    /// Camera at `center` looking at `target`, rolled about the optical axis.
    pub fn look_at(center: Vector3<f64>, target: Vector3<f64>, roll: f64, focal: f64, width: u32, height: u32) -> Camera {
        let fwd = (target - center).normalize();
        let down = Vector3::new(0.0, 1.0, 0.0);
        let mut right = down.cross(&fwd);
        if right.norm() < 1e-9 {
            right = Vector3::new(1.0, 0.0, 0.0);
        }
        let right = right.normalize();
        let cam_down = fwd.cross(&right);
        let (s, c) = roll.sin_cos();
        let r2 = right * c + cam_down * s;
        let d2 = -right * s + cam_down * c;
        Camera {
            center: [center.x, center.y, center.z],
            rotation: Matrix3::from_rows(&[r2.transpose(), d2.transpose(), fwd.transpose()]),
            focal,
            width,
            height,
        }
    }

    pub fn intrinsics(&self) -> Matrix3<f64> {
        Matrix3::new(
            self.focal,
            0.0,
            self.width as f64 / 2.0,
            0.0,
            self.focal,
            self.height as f64 / 2.0,
            0.0,
            0.0,
            1.0,
        )
    }

    pub fn depth(&self, p: &Vector3<f64>) -> f64 {
        (self.rotation * (p - v3(self.center))).z
    }

    /// Plane-to-image homography `K R [u | v | o - C]`.
    pub fn face_homography(&self, face: &Face) -> Option<Homography> {
        let mut m = Matrix3::zeros();
        m.set_column(0, &v3(face.u_axis));
        m.set_column(1, &v3(face.v_axis));
        m.set_column(2, &(v3(face.origin) - v3(self.center)));
        Homography::new(self.intrinsics() * self.rotation * m)
    }

    /// The camera is in front of the face and the face center is ahead of it.
    pub fn sees(&self, face: &Face) -> bool {
        let c = face.center();
        (v3(self.center) - c).dot(&face.normal()) > 0.0 && self.depth(&c) > 0.0
    }
}

/// Everything needed to render one image of a scene.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewSpec {
    pub object_id: String,
    pub width: u32,
    pub height: u32,
    /// Visible faces with their plane-to-image homographies.
    pub faces: Vec<(usize, Homography)>,
    /// When present, enables per-feature visibility, depth checks and
    /// viewpoint-dependent descriptor drift.
    pub camera: Option<Camera>,
    /// Largest angle between viewing ray and face normal at which a feature
    /// is still detected, radians.
    pub max_view_angle: f64,
    /// Detectable feature scales in pixels.
    pub scale_range: [f64; 2],
    pub descriptor_noise: f32,
    pub position_noise: f64,
    pub dropout: f64,
    pub distractors: usize,
    pub owner_id: String,
    pub title: String,
    pub tags: Vec<String>,
    pub category: Option<String>,
}

/// A rendered image plus, per feature, the constellation index it came from
/// (`None` for distractors).
#[derive(Debug, Clone)]
pub struct RenderedView {
    pub record: ImageRecord,
    pub sources: Vec<Option<u32>>,
}

pub fn render_view(scene: &Scene, view: &ViewSpec, image_id: &str, seed: u64) -> ImageRecord {
    render_view_traced(scene, view, image_id, seed).record
}

pub fn render_view_traced(scene: &Scene, view: &ViewSpec, image_id: &str, seed: u64) -> RenderedView {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0f32, view.descriptor_noise.max(0.0)).expect("finite sigma");
    let pos_noise = Normal::new(0.0f64, view.position_noise.max(0.0)).expect("finite sigma");
    let (w, h) = (view.width as f64, view.height as f64);
    let cos_max = view.max_view_angle.cos();
    let mut features = Vec::new();
    let mut sources = Vec::new();

    for (fi, f) in scene.features.iter().enumerate() {
        let Some((_, hom)) = view.faces.iter().find(|(face, _)| *face == f.face) else {
            continue;
        };
        let face = &scene.faces[f.face];
        let mut angles = (0.0, 0.0);
        if let Some(cam) = &view.camera {
            let p = face.point(f.u, f.v);
            if cam.depth(&p) <= 0.0 {
                continue;
            }
            let toward = v3(cam.center) - p;
            let n = face.normal();
            let along_n = toward.dot(&n);
            if along_n <= 0.0 || along_n / toward.norm() < cos_max {
                continue;
            }
            angles = (
                toward.dot(&v3(face.u_axis)).atan2(along_n),
                toward.dot(&v3(face.v_axis)).atan2(along_n),
            );
        }
        let Some((pt, jac_det, rot)) = project(hom, [f.u, f.v]) else {
            continue;
        };
        if !(pt[0] >= 0.0 && pt[0] < w && pt[1] >= 0.0 && pt[1] < h) {
            continue;
        }
        let scale = f.scale * jac_det.abs().sqrt();
        if scale < view.scale_range[0] || scale > view.scale_range[1] {
            continue;
        }
        if view.dropout > 0.0 && rng.random::<f64>() < view.dropout {
            continue;
        }
        let descriptor: Vec<f32> = (0..f.prototype.len())
            .map(|j| {
                let mut d = f.prototype[j] + f.drift_u[j] * angles.0 as f32 + f.drift_v[j] * angles.1 as f32;
                if view.descriptor_noise > 0.0 {
                    d += noise.sample(&mut rng);
                }
                d.max(0.0)
            })
            .collect();
        let (mut x, mut y) = (pt[0], pt[1]);
        if view.position_noise > 0.0 {
            x = (x + pos_noise.sample(&mut rng)).clamp(0.0, w);
            y = (y + pos_noise.sample(&mut rng)).clamp(0.0, h);
        }
        features.push(LocalFeature {
            x,
            y,
            scale,
            orientation: (f.orientation + rot).rem_euclid(std::f64::consts::TAU),
            descriptor,
        });
        sources.push(Some(fi as u32));
    }

    for _ in 0..view.distractors {
        features.push(LocalFeature {
            x: rng.random_range(0.0..w),
            y: rng.random_range(0.0..h),
            scale: rng.random_range(1.5..10.0),
            orientation: rng.random_range(0.0..std::f64::consts::TAU),
            descriptor: (0..scene.descriptor_dim)
                .map(|_| rng.random_range(0.0..scene.descriptor_range))
                .collect(),
        });
        sources.push(None);
    }

    RenderedView {
        record: ImageRecord {
            image_id: image_id.to_string(),
            width: view.width,
            height: view.height,
            features,
            owner_id: view.owner_id.clone(),
            title: view.title.clone(),
            tags: view.tags.clone(),
            category: view.category.clone(),
            source: ImageSource::Synthetic,
        },
        sources,
    }
}

/// Image of `p` with the local area scale and in-plane rotation of `h` there.
fn project(h: &Homography, p: Point) -> Option<(Point, f64, f64)> {
    let m = h.matrix();
    let q = h.apply(p)?;
    let wh = m[(2, 0)] * p[0] + m[(2, 1)] * p[1] + m[(2, 2)];
    let j00 = (m[(0, 0)] - q[0] * m[(2, 0)]) / wh;
    let j01 = (m[(0, 1)] - q[0] * m[(2, 1)]) / wh;
    let j10 = (m[(1, 0)] - q[1] * m[(2, 0)]) / wh;
    let j11 = (m[(1, 1)] - q[1] * m[(2, 1)]) / wh;
    Some((q, j00 * j11 - j01 * j10, j10.atan2(j00)))
}

/// World-space geometry of a new root object.
pub(super) fn root_faces(archetype: Archetype, size: [f64; 2]) -> Vec<Face> {
    let [w, h] = size;
    match archetype {
        Archetype::Solid3d => {
            let d = w;
            vec![
                Face { origin: [-w / 2.0, -h / 2.0, -d / 2.0], u_axis: [1.0, 0.0, 0.0], v_axis: [0.0, 1.0, 0.0], width: w, height: h },
                Face { origin: [w / 2.0, -h / 2.0, -d / 2.0], u_axis: [0.0, 0.0, 1.0], v_axis: [0.0, 1.0, 0.0], width: d, height: h },
                Face { origin: [w / 2.0, -h / 2.0, d / 2.0], u_axis: [-1.0, 0.0, 0.0], v_axis: [0.0, 1.0, 0.0], width: w, height: h },
                Face { origin: [-w / 2.0, -h / 2.0, d / 2.0], u_axis: [0.0, 0.0, -1.0], v_axis: [0.0, 1.0, 0.0], width: d, height: h },
            ]
        }
        _ => vec![Face {
            origin: [-w / 2.0, -h / 2.0, 0.0],
            u_axis: [1.0, 0.0, 0.0],
            v_axis: [0.0, 1.0, 0.0],
            width: w,
            height: h,
        }],
    }
}

/// Unit viewing direction from a target toward the camera. Azimuth zero
/// looks along +z; positive elevation places the camera above the target.
pub(super) fn view_direction(azimuth: f64, elevation: f64) -> Vector3<f64> {
    Vector3::new(
        azimuth.sin() * elevation.cos(),
        -elevation.sin(),
        -azimuth.cos() * elevation.cos(),
    )
}
