use nalgebra::{DMatrix, Matrix3, SMatrix, SVector, Vector3};

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

pub type Point = [f64; 2];

impl Serialize for Homography {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_array().serialize(s)
    }
}

impl<'de> Deserialize<'de> for Homography {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let a = <[f64; 9]>::deserialize(d)?;
        Homography::from_normalized_array(a).map_err(serde::de::Error::custom)
    }
}

/// Smallest |det| a normalized homography may have.
const MIN_ABS_DET: f64 = 1e-12;

/// A planar projective transform.
///
/// Stored normalized: unit Frobenius norm, largest-magnitude entry positive.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Homography(Matrix3<f64>);

impl Homography {
    /// Normalizes `m`; returns `None` for singular or non-finite input.
    pub fn new(m: Matrix3<f64>) -> Option<Self> {
        if m.iter().any(|v| !v.is_finite()) {
            return None;
        }
        let norm = m.norm();
        if norm == 0.0 {
            return None;
        }
        let mut n = m / norm;
        let mut largest = 0.0f64;
        for v in n.iter() {
            if v.abs() > largest.abs() {
                largest = *v;
            }
        }
        if largest < 0.0 {
            n = -n;
        }
        if n.determinant().abs() <= MIN_ABS_DET {
            return None;
        }
        Some(Homography(n))
    }

    pub fn identity() -> Self {
        Homography::new(Matrix3::identity()).expect("identity is regular")
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    /// Row-major entries.
    pub fn to_array(&self) -> [f64; 9] {
        let m = &self.0;
        [
            m[(0, 0)],
            m[(0, 1)],
            m[(0, 2)],
            m[(1, 0)],
            m[(1, 1)],
            m[(1, 2)],
            m[(2, 0)],
            m[(2, 1)],
            m[(2, 2)],
        ]
    }

    pub fn from_array(a: [f64; 9]) -> Result<Self> {
        Homography::new(Matrix3::from_row_slice(&a)).ok_or_else(|| Error::validation("singular homography"))
    }

    /// Accepts already normalized entries verbatim so stored matrices
    /// round-trip bit-exactly.
    pub fn from_normalized_array(a: [f64; 9]) -> Result<Self> {
        let m = Matrix3::from_row_slice(&a);
        if m.iter().any(|v| !v.is_finite()) || m.determinant().abs() <= MIN_ABS_DET {
            return Err(Error::validation("singular homography"));
        }
        if ((m.norm() - 1.0).abs()) > 1e-9 {
            return Homography::from_array(a);
        }
        Ok(Homography(m))
    }

    /// Homogeneous image of `p`.
    pub fn apply_h(&self, p: Point) -> Vector3<f64> {
        self.0 * Vector3::new(p[0], p[1], 1.0)
    }

    /// Maps `p`; `None` when it lands on the line at infinity.
    pub fn apply(&self, p: Point) -> Option<Point> {
        let v = self.apply_h(p);
        if v.z.abs() < 1e-15 {
            return None;
        }
        Some([v.x / v.z, v.y / v.z])
    }

    pub fn inverse(&self) -> Option<Homography> {
        self.0.try_inverse().and_then(Homography::new)
    }

    /// `next ∘ self`: first `self`, then `next`.
    pub fn then(&self, next: &Homography) -> Homography {
        Homography::new(next.0 * self.0).expect("product of regular homographies is regular")
    }

    /// Largest displacement between `self` and `other` over `points`.
    pub fn max_displacement(&self, other: &Homography, points: &[Point]) -> f64 {
        points
            .iter()
            .map(|&p| match (self.apply(p), other.apply(p)) {
                (Some(a), Some(b)) => dist(a, b),
                _ => f64::INFINITY,
            })
            .fold(0.0, f64::max)
    }
}

pub fn dist(a: Point, b: Point) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// Similarity transform moving the centroid to the origin with mean distance √2.
fn normalizing_transform(points: &[Point]) -> Option<Matrix3<f64>> {
    let n = points.len() as f64;
    let cx = points.iter().map(|p| p[0]).sum::<f64>() / n;
    let cy = points.iter().map(|p| p[1]).sum::<f64>() / n;
    let mean = points.iter().map(|p| dist(*p, [cx, cy])).sum::<f64>() / n;
    if mean <= 0.0 || !mean.is_finite() {
        return None;
    }
    let s = std::f64::consts::SQRT_2 / mean;
    Some(Matrix3::new(s, 0.0, -s * cx, 0.0, s, -s * cy, 0.0, 0.0, 1.0))
}

fn transform(t: &Matrix3<f64>, p: Point) -> Point {
    let v = t * Vector3::new(p[0], p[1], 1.0);
    [v.x / v.z, v.y / v.z]
}

/// Normalized direct linear transform over ≥ 4 point pairs (`src[i] ↦ dst[i]`).
pub fn fit_dlt(src: &[Point], dst: &[Point]) -> Option<Homography> {
    let n = src.len();
    if n < 4 || dst.len() != n {
        return None;
    }
    let ts = normalizing_transform(src)?;
    let td = normalizing_transform(dst)?;
    // Pad to at least 9 rows so the SVD yields the full right null space.
    let rows = (2 * n).max(9);
    let mut a = DMatrix::<f64>::zeros(rows, 9);
    for i in 0..n {
        let [x, y] = transform(&ts, src[i]);
        let [u, v] = transform(&td, dst[i]);
        let r = 2 * i;
        a[(r, 0)] = -x;
        a[(r, 1)] = -y;
        a[(r, 2)] = -1.0;
        a[(r, 6)] = u * x;
        a[(r, 7)] = u * y;
        a[(r, 8)] = u;
        a[(r + 1, 3)] = -x;
        a[(r + 1, 4)] = -y;
        a[(r + 1, 5)] = -1.0;
        a[(r + 1, 6)] = v * x;
        a[(r + 1, 7)] = v * y;
        a[(r + 1, 8)] = v;
    }
    let svd = a.svd(false, true);
    let v_t = svd.v_t?;
    let (min_idx, _) = svd
        .singular_values
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))?;
    let h = v_t.row(min_idx);
    let hn = Matrix3::new(h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7], h[8]);
    let denorm = td.try_inverse()? * hn * ts;
    Homography::new(denorm)
}

/// Exact homography through four point pairs, solved as an 8×8 linear
/// system in normalized coordinates with the last entry fixed to 1. Falls
/// back to [`fit_dlt`] when that parameterization is singular.
pub fn fit_minimal(src: &[Point; 4], dst: &[Point; 4]) -> Option<Homography> {
    let ts = normalizing_transform(src)?;
    let td = normalizing_transform(dst)?;
    let mut a = SMatrix::<f64, 8, 8>::zeros();
    let mut rhs = SVector::<f64, 8>::zeros();
    for i in 0..4 {
        let [x, y] = transform(&ts, src[i]);
        let [u, v] = transform(&td, dst[i]);
        let r = 2 * i;
        a[(r, 0)] = x;
        a[(r, 1)] = y;
        a[(r, 2)] = 1.0;
        a[(r, 6)] = -u * x;
        a[(r, 7)] = -u * y;
        rhs[r] = u;
        a[(r + 1, 3)] = x;
        a[(r + 1, 4)] = y;
        a[(r + 1, 5)] = 1.0;
        a[(r + 1, 6)] = -v * x;
        a[(r + 1, 7)] = -v * y;
        rhs[r + 1] = v;
    }
    let Some(h) = a.lu().solve(&rhs).filter(|h| h.iter().all(|x| x.is_finite())) else {
        return fit_dlt(src, dst);
    };
    let hn = Matrix3::new(h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7], 1.0);
    Homography::new(td.try_inverse()? * hn * ts)
}

/// `sqrt(|H a − b|² + |H⁻¹ b − a|²)`.
pub fn symmetric_transfer_error(h: &Homography, h_inv: &Homography, a: Point, b: Point) -> f64 {
    let fwd = match h.apply(a) {
        Some(p) => (p[0] - b[0]).powi(2) + (p[1] - b[1]).powi(2),
        None => return f64::INFINITY,
    };
    let bwd = match h_inv.apply(b) {
        Some(p) => (p[0] - a[0]).powi(2) + (p[1] - a[1]).powi(2),
        None => return f64::INFINITY,
    };
    (fwd + bwd).sqrt()
}

/// True when three points are (nearly) collinear relative to their spread.
pub fn collinear(a: Point, b: Point, c: Point) -> bool {
    let cross = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]);
    let scale = dist(a, b).max(dist(a, c)).max(dist(b, c));
    cross.abs() <= 1e-6 * scale * scale
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_h() -> Homography {
        Homography::new(Matrix3::new(1.1, 0.05, 20.0, -0.03, 0.95, 10.0, 1e-4, -5e-5, 1.0)).unwrap()
    }

    #[test]
    fn minimal_solver_agrees_with_dlt() {
        let h = sample_h();
        let src = [[10.0, 20.0], [600.0, 35.0], [580.0, 410.0], [40.0, 380.0]];
        let dst = src.map(|p| h.apply(p).unwrap());
        let fast = fit_minimal(&src, &dst).unwrap();
        assert!(fast.max_displacement(&h, &src) < 1e-9);
        assert!(fast.max_displacement(&fit_dlt(&src, &dst).unwrap(), &src) < 1e-9);
    }

    #[test]
    fn normalization_invariants() {
        let h = sample_h();
        assert!((h.matrix().norm() - 1.0).abs() < 1e-12);
        let largest = h.matrix().iter().cloned().fold(0.0f64, |a, v| if v.abs() > a.abs() { v } else { a });
        assert!(largest > 0.0);
        let neg = Homography::new(-h.matrix() * 3.0).unwrap();
        assert!((neg.matrix() - h.matrix()).abs().max() < 1e-15);
    }

    #[test]
    fn singular_rejected() {
        assert!(Homography::new(Matrix3::new(1.0, 2.0, 3.0, 2.0, 4.0, 6.0, 0.0, 0.0, 1.0)).is_none());
        assert!(Homography::new(Matrix3::zeros()).is_none());
    }

    #[test]
    fn exact_four_point_fit() {
        let h = sample_h();
        let src = [[0.0, 0.0], [300.0, 10.0], [280.0, 250.0], [5.0, 240.0]];
        let dst: Vec<Point> = src.iter().map(|&p| h.apply(p).unwrap()).collect();
        let fit = fit_dlt(&src, &dst).unwrap();
        for (s, d) in src.iter().zip(&dst) {
            assert!(dist(fit.apply(*s).unwrap(), *d) < 1e-6);
        }
        for (a, b) in fit.to_array().iter().zip(h.to_array().iter()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn inverse_and_then() {
        let h = sample_h();
        let back = h.then(&h.inverse().unwrap());
        assert!(back.max_displacement(&Homography::identity(), &[[10.0, 20.0], [400.0, 300.0]]) < 1e-9);
    }

    #[test]
    fn collinearity() {
        assert!(collinear([0.0, 0.0], [1.0, 1.0], [2.0, 2.0]));
        assert!(!collinear([0.0, 0.0], [1.0, 0.0], [0.0, 1.0]));
    }
}
