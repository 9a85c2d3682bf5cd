use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::dataset::LocalFeature;

/// A putative match: feature `a` of the first image with feature `b` of the second.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Correspondence {
    pub a: u32,
    pub b: u32,
}

/// Squared Euclidean distance between two descriptors.
#[inline]
pub fn sq_dist(a: &[f32], b: &[f32]) -> f32 {
    let mut acc = [0f32; 8];
    let (ca, cb) = (a.chunks_exact(8), b.chunks_exact(8));
    let tail: f32 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| (x - y) * (x - y)).sum();
    for (x, y) in ca.zip(cb) {
        for k in 0..8 {
            let d = x[k] - y[k];
            acc[k] += d * d;
        }
    }
    acc.iter().sum::<f32>() + tail
}

/// Squared distances between all descriptor pairs, row-major by `a`.
/// Computed as `|x|² + |y|² − 2x·y` with one matrix product, clamped at 0.
fn distance_matrix(a: &[LocalFeature], b: &[LocalFeature]) -> Vec<f32> {
    let dim = a[0].descriptor.len();
    let flat = |fs: &[LocalFeature]| DMatrix::from_row_iterator(fs.len(), dim, fs.iter().flat_map(|f| f.descriptor.iter().copied()));
    let (ma, mb) = (flat(a), flat(b));
    let gram = &ma * mb.transpose();
    let na: Vec<f32> = a.iter().map(|f| f.descriptor.iter().map(|x| x * x).sum()).collect();
    let nb: Vec<f32> = b.iter().map(|f| f.descriptor.iter().map(|x| x * x).sum()).collect();
    let mut out = vec![0f32; a.len() * b.len()];
    for i in 0..a.len() {
        for j in 0..b.len() {
            out[i * b.len() + j] = (na[i] + nb[j] - 2.0 * gram[(i, j)]).max(0.0);
        }
    }
    out
}

/// Ratio-test matching with mutual-best filtering.
///
/// A feature of `a` is kept when its nearest neighbor in `b` is closer than
/// `ratio` times the second nearest and that neighbor's own nearest feature
/// in `a` is the query feature. Ties resolve to the lowest index.
pub fn match_descriptors(a: &[LocalFeature], b: &[LocalFeature], ratio: f32) -> Vec<Correspondence> {
    if a.is_empty() || b.is_empty() {
        return Vec::new();
    }
    let nb = b.len();
    let dists = distance_matrix(a, b);
    // Nearest feature of `a` for every feature of `b`.
    let mut best_in_a = vec![(f32::INFINITY, u32::MAX); nb];
    for i in 0..a.len() {
        for j in 0..nb {
            let d = dists[i * nb + j];
            if d < best_in_a[j].0 {
                best_in_a[j] = (d, i as u32);
            }
        }
    }
    let ratio_sq = ratio * ratio;
    let mut out = Vec::new();
    for i in 0..a.len() {
        let row = &dists[i * nb..(i + 1) * nb];
        let (mut d1, mut j1, mut d2) = (f32::INFINITY, usize::MAX, f32::INFINITY);
        for (j, &d) in row.iter().enumerate() {
            if d < d1 {
                d2 = d1;
                d1 = d;
                j1 = j;
            } else if d < d2 {
                d2 = d;
            }
        }
        if j1 == usize::MAX {
            continue;
        }
        let passes = d2.is_infinite() || d1 < ratio_sq * d2;
        if passes && best_in_a[j1].1 == i as u32 {
            out.push(Correspondence { a: i as u32, b: j1 as u32 });
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn feat(desc: &[f32]) -> LocalFeature {
        LocalFeature {
            x: 0.0,
            y: 0.0,
            scale: 1.0,
            orientation: 0.0,
            descriptor: desc.to_vec(),
        }
    }

    #[test]
    fn identical_sets_match_themselves() {
        let fs: Vec<_> = (0..10).map(|i| feat(&[i as f32, (i * i) as f32, 1.0])).collect();
        let m = match_descriptors(&fs, &fs, 0.8);
        assert_eq!(m.len(), 10);
        assert!(m.iter().all(|c| c.a == c.b));
    }

    #[test]
    fn empty_side() {
        let fs = vec![feat(&[1.0])];
        assert!(match_descriptors(&fs, &[], 0.8).is_empty());
        assert!(match_descriptors(&[], &fs, 0.8).is_empty());
    }

    #[test]
    fn ambiguous_match_rejected() {
        let a = vec![feat(&[0.0, 0.0])];
        let b = vec![feat(&[1.0, 0.0]), feat(&[0.0, 1.05])];
        assert!(match_descriptors(&a, &b, 0.8).is_empty());
    }

    #[test]
    fn mutual_best_enforced() {
        // Both a-features prefer b0; only the closer one survives.
        let a = vec![feat(&[0.0]), feat(&[0.3])];
        let b = vec![feat(&[0.1]), feat(&[10.0])];
        let m = match_descriptors(&a, &b, 0.8);
        assert_eq!(m, vec![Correspondence { a: 0, b: 0 }]);
    }
}
