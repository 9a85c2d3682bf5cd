use std::cmp::Ordering;

use rayon::prelude::*;

use super::{estimate_homography, match_descriptors, Correspondence, GeometryConfig, Homography, Point};
use crate::dataset::{Dataset, LocalFeature};
use crate::index::RankedMatch;

/// Geometric fit between two feature sets.
#[derive(Debug, Clone, PartialEq)]
pub struct PairFit {
    /// Maps coordinates of the first image into the second.
    pub homography: Homography,
    /// Inlier correspondences, sorted.
    pub inliers: Vec<Correspondence>,
}

impl PairFit {
    pub fn inlier_count(&self) -> usize {
        self.inliers.len()
    }
}

/// Matches descriptors and fits a homography, with no inlier threshold
/// beyond the model minimum.
pub fn fit_pair(a: &[LocalFeature], b: &[LocalFeature], config: &GeometryConfig) -> Option<PairFit> {
    let corr = match_descriptors(a, b, config.ratio_test);
    if corr.len() < 4 || corr.len() < config.min_model_inliers {
        return None;
    }
    let src: Vec<Point> = corr.iter().map(|c| a[c.a as usize].position()).collect();
    let dst: Vec<Point> = corr.iter().map(|c| b[c.b as usize].position()).collect();
    let fit = estimate_homography(&src, &dst, config).ok().flatten()?;
    Some(PairFit {
        homography: fit.homography,
        inliers: fit.inliers.iter().map(|&i| corr[i]).collect(),
    })
}

/// Like [`fit_pair`] but only returns fits with at least
/// `config.inlier_threshold` inliers.
pub fn verify_pair(a: &[LocalFeature], b: &[LocalFeature], config: &GeometryConfig) -> Option<PairFit> {
    // Cheap exit: the ratio test alone caps the inlier count.
    let corr = match_descriptors(a, b, config.ratio_test);
    if corr.len() < config.inlier_threshold.max(4) {
        return None;
    }
    let src: Vec<Point> = corr.iter().map(|c| a[c.a as usize].position()).collect();
    let dst: Vec<Point> = corr.iter().map(|c| b[c.b as usize].position()).collect();
    let fit = estimate_homography(&src, &dst, config).ok().flatten()?;
    if fit.inliers.len() < config.inlier_threshold {
        return None;
    }
    Some(PairFit {
        homography: fit.homography,
        inliers: fit.inliers.iter().map(|&i| corr[i]).collect(),
    })
}

/// Spatially verifies the first `verify_depth` matches against the query and
/// moves verified matches (by inlier count, then tf-idf score) in front of
/// the unverified ones, which keep their tf-idf order.
pub fn verify_and_rerank(
    query: &[LocalFeature],
    ranked: Vec<RankedMatch>,
    dataset: &Dataset,
    config: &GeometryConfig,
) -> Vec<RankedMatch> {
    let depth = config.verify_depth.min(ranked.len());
    let fits: Vec<Option<PairFit>> = ranked[..depth]
        .par_iter()
        .map(|m| {
            let img = dataset.get(&m.image_id)?;
            verify_pair(query, &img.features, config)
        })
        .collect();

    let mut verified = Vec::new();
    let mut unverified = Vec::new();
    for (i, mut m) in ranked.into_iter().enumerate() {
        match fits.get(i).cloned().flatten() {
            Some(fit) => {
                m.verified = true;
                m.inliers = fit.inlier_count();
                m.homography = Some(fit.homography);
                verified.push(m);
            }
            None => {
                m.verified = false;
                m.inliers = 0;
                m.homography = None;
                unverified.push(m);
            }
        }
    }
    verified.sort_by(|a, b| {
        b.inliers
            .cmp(&a.inliers)
            .then_with(|| b.tfidf_score.partial_cmp(&a.tfidf_score).unwrap_or(Ordering::Equal))
            .then_with(|| a.image_id.cmp(&b.image_id))
    });
    verified.extend(unverified);
    verified
}
