//! Robust homography estimation: RANSAC over 4-point DLT samples, drawing
//! hypotheses from a spatially consistent subset of the correspondences.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::homography::{collinear, fit_dlt, fit_minimal, symmetric_transfer_error, Homography, Point};
use super::GeometryConfig;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct HomographyFit {
    pub homography: Homography,
    /// Indices into the input correspondence list, ascending.
    pub inliers: Vec<usize>,
}

const REFIT_ROUNDS: usize = 5;

/// Estimates `src[i] ↦ dst[i]`. Returns `Ok(None)` when no model reaches
/// `config.min_model_inliers`.
pub fn estimate_homography(src: &[Point], dst: &[Point], config: &GeometryConfig) -> Result<Option<HomographyFit>> {
    let n = src.len();
    if dst.len() != n {
        return Err(Error::Precondition("source and destination point counts differ".into()));
    }
    if n < 4 {
        return Err(Error::Precondition(format!(
            "homography estimation needs at least 4 correspondences, got {n}"
        )));
    }
    let mut pool = spatially_consistent(src, dst, config);
    if pool.len() < 4 {
        pool = (0..n).collect();
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.ransac_seed);
    let tau = config.transfer_error_px;
    let mut best: Option<(Homography, Vec<usize>)> = None;
    let mut needed = config.ransac_max_iterations;
    let mut iter = 0;
    while iter < needed {
        iter += 1;
        let picks = sample(&mut rng, pool.len(), 4);
        let idx: Vec<usize> = picks.iter().map(|k| pool[k]).collect();
        let s: [Point; 4] = std::array::from_fn(|k| src[idx[k]]);
        let d: [Point; 4] = std::array::from_fn(|k| dst[idx[k]]);
        if degenerate(&s) || degenerate(&d) {
            continue;
        }
        let Some(h) = fit_minimal(&s, &d) else { continue };
        let inliers = inliers_of(&h, src, dst, tau);
        if best.as_ref().is_none_or(|(_, b)| inliers.len() > b.len()) {
            let w = inliers.len() as f64 / n as f64;
            needed = adaptive_iterations(w, config.ransac_confidence, config.ransac_max_iterations);
            best = Some((h, inliers));
        }
    }

    let Some((mut h, mut inliers)) = best else {
        return Ok(None);
    };
    for _ in 0..REFIT_ROUNDS {
        if inliers.len() < 4 {
            break;
        }
        let s: Vec<Point> = inliers.iter().map(|&i| src[i]).collect();
        let d: Vec<Point> = inliers.iter().map(|&i| dst[i]).collect();
        let Some(refit) = fit_dlt(&s, &d) else { break };
        let next = inliers_of(&refit, src, dst, tau);
        if next.len() < inliers.len() {
            break;
        }
        let done = next == inliers;
        h = refit;
        inliers = next;
        if done {
            break;
        }
    }
    if inliers.len() < config.min_model_inliers.max(4) {
        return Ok(None);
    }
    Ok(Some(HomographyFit { homography: h, inliers }))
}

fn adaptive_iterations(inlier_ratio: f64, confidence: f64, cap: usize) -> usize {
    let p = inlier_ratio.powi(4);
    if p >= 1.0 - f64::EPSILON {
        return 1;
    }
    if p <= 0.0 {
        return cap;
    }
    let k = (1.0 - confidence).ln() / (1.0 - p).ln();
    if !k.is_finite() {
        return cap;
    }
    (k.ceil() as usize).clamp(1, cap)
}

fn degenerate(pts: &[Point]) -> bool {
    for i in 0..pts.len() {
        for j in i + 1..pts.len() {
            for k in j + 1..pts.len() {
                if collinear(pts[i], pts[j], pts[k]) {
                    return true;
                }
            }
        }
    }
    false
}

fn inliers_of(h: &Homography, src: &[Point], dst: &[Point], tau: f64) -> Vec<usize> {
    let Some(h_inv) = h.inverse() else {
        return Vec::new();
    };
    (0..src.len())
        .filter(|&i| symmetric_transfer_error(h, &h_inv, src[i], dst[i]) < tau)
        .collect()
}

/// Correspondences with at least `s` of their `q` nearest source-side
/// neighbors also among their `r` nearest destination-side neighbors.
///
/// Skipped (everything kept) when there are too few correspondences for
/// neighborhoods to be meaningful.
pub fn spatially_consistent(src: &[Point], dst: &[Point], config: &GeometryConfig) -> Vec<usize> {
    let n = src.len();
    let q = config.consistency_neighbors;
    let r = config.consistency_radius.max(q);
    if q == 0 || n <= q + 1 {
        return (0..n).collect();
    }
    let src_nn = knn(src, q);
    let dst_nn = knn(dst, r.min(n - 1));
    let mut mark = vec![usize::MAX; n];
    (0..n)
        .filter(|&i| {
            for &j in &dst_nn[i] {
                mark[j] = i;
            }
            let support = src_nn[i].iter().filter(|&&j| mark[j] == i).count();
            support >= config.consistency_min_support
        })
        .collect()
}

/// The `k` nearest other points of every point, ties by index.
fn knn(points: &[Point], k: usize) -> Vec<Vec<usize>> {
    let mut d: Vec<(f64, usize)> = Vec::with_capacity(points.len());
    points
        .iter()
        .enumerate()
        .map(|(i, p)| {
            d.clear();
            d.extend(
                points
                    .iter()
                    .enumerate()
                    .filter(|(j, _)| *j != i)
                    .map(|(j, o)| ((o[0] - p[0]).powi(2) + (o[1] - p[1]).powi(2), j)),
            );
            let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
            if k < d.len() {
                d.select_nth_unstable_by(k, cmp);
                d.truncate(k);
            }
            d.sort_unstable_by(cmp);
            d.iter().map(|&(_, j)| j).collect()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Matrix3;
    use rand::Rng;

    fn truth() -> Homography {
        Homography::new(Matrix3::new(0.9, 0.1, 30.0, -0.05, 1.05, -12.0, 2e-4, 1e-4, 1.0)).unwrap()
    }

    #[test]
    fn fewer_than_four_is_precondition_error() {
        let pts = [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]];
        assert!(matches!(
            estimate_homography(&pts, &pts, &GeometryConfig::default()),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn collinear_only_gives_no_model() {
        let src: Vec<Point> = (0..8).map(|i| [i as f64 * 10.0, i as f64 * 10.0]).collect();
        let fit = estimate_homography(&src, &src, &GeometryConfig::default()).unwrap();
        assert!(fit.is_none());
    }

    #[test]
    fn recovers_with_outliers_and_is_deterministic() {
        let h = truth();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut src = Vec::new();
        let mut dst = Vec::new();
        for _ in 0..20 {
            let p = [rng.random_range(0.0..600.0), rng.random_range(0.0..400.0)];
            src.push(p);
            dst.push(h.apply(p).unwrap());
        }
        for _ in 0..10 {
            src.push([rng.random_range(0.0..600.0), rng.random_range(0.0..400.0)]);
            dst.push([rng.random_range(0.0..600.0), rng.random_range(0.0..400.0)]);
        }
        let cfg = GeometryConfig::default();
        let fit = estimate_homography(&src, &dst, &cfg).unwrap().unwrap();
        assert_eq!(fit.inliers, (0..20).collect::<Vec<_>>());
        let again = estimate_homography(&src, &dst, &cfg).unwrap().unwrap();
        assert_eq!(fit, again);
    }

    #[test]
    fn adaptive_iteration_bounds() {
        assert_eq!(adaptive_iterations(1.0, 0.99, 2000), 1);
        assert_eq!(adaptive_iterations(0.0, 0.99, 2000), 2000);
        let k = adaptive_iterations(0.5, 0.99, 2000);
        assert!((70..=75).contains(&k), "{k}");
    }
}
