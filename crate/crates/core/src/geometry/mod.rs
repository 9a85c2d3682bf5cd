//! Descriptor matching, robust homography estimation and spatial verification.

mod homography;
mod matching;
mod polygon;
mod ransac;
mod verify;

use serde::{Deserialize, Serialize};

pub use homography::{dist, fit_dlt, fit_minimal, symmetric_transfer_error, Homography, Point};
pub use matching::{match_descriptors, sq_dist, Correspondence};
pub use polygon::Polygon;
pub use ransac::{estimate_homography, spatially_consistent, HomographyFit};
pub use verify::{fit_pair, verify_and_rerank, verify_pair, PairFit};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeometryConfig {
    /// Lowe ratio threshold, in (0, 1).
    pub ratio_test: f32,
    /// Minimum inliers for a match to count as verified.
    pub inlier_threshold: usize,
    /// Number of tf-idf ranked matches that undergo verification.
    pub verify_depth: usize,
    pub ransac_seed: u64,
    /// Symmetric transfer error tolerance in pixels.
    pub transfer_error_px: f64,
    pub ransac_confidence: f64,
    pub ransac_max_iterations: usize,
    /// Source-side neighborhood size of the spatial consistency filter.
    pub consistency_neighbors: usize,
    /// Destination-side neighborhood size of the spatial consistency filter.
    pub consistency_radius: usize,
    /// Shared neighbors a correspondence needs to survive the filter.
    pub consistency_min_support: usize,
    /// Smallest inlier count for which a model is reported at all.
    pub min_model_inliers: usize,
}

impl Default for GeometryConfig {
    fn default() -> Self {
        GeometryConfig {
            ratio_test: 0.8,
            inlier_threshold: 15,
            verify_depth: 300,
            ransac_seed: 0,
            transfer_error_px: 4.0,
            ransac_confidence: 0.99,
            ransac_max_iterations: 2000,
            consistency_neighbors: 10,
            consistency_radius: 20,
            consistency_min_support: 3,
            min_model_inliers: 4,
        }
    }
}

impl GeometryConfig {
    pub fn validate(&self) -> crate::error::Result<()> {
        if !(self.ratio_test > 0.0 && self.ratio_test < 1.0) {
            return Err(crate::error::Error::validation("ratio_test must lie in (0, 1)"));
        }
        if self.transfer_error_px <= 0.0 {
            return Err(crate::error::Error::validation("transfer_error_px must be positive"));
        }
        if !(self.ransac_confidence > 0.0 && self.ransac_confidence < 1.0) {
            return Err(crate::error::Error::validation("ransac_confidence must lie in (0, 1)"));
        }
        Ok(())
    }
}
