//! Homography overlap propagation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Homography, Polygon};
use crate::graph::MatchingGraph;

/// Denominator of the overlap fraction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OverlapMode {
    /// Smaller of the source-side and target-side area ratios; symmetric.
    #[default]
    Min,
    /// Area ratio within the target frame only.
    TargetFrame,
}

/// One step of a chain: forward and backward maps plus the frame reached.
#[derive(Debug, Clone, Copy)]
pub struct Hop {
    pub forward: Homography,
    pub backward: Homography,
    pub width: f64,
    pub height: f64,
}

/// Overlap of a source frame with the last frame of `hops`. The region is
/// the source frame carried forward and clipped at every frame on the way;
/// it is then pulled back to the source for the source-side ratio.
pub fn chain_overlap(source: (f64, f64), hops: &[Hop], mode: OverlapMode) -> f64 {
    let mut region = Polygon::rect(source.0, source.1);
    for h in hops {
        region = region.map(&h.forward).clip_to_frame(h.width, h.height);
        if region.is_empty() {
            return 0.0;
        }
    }
    let Some(last) = hops.last() else {
        return 1.0;
    };
    let target_ratio = (region.area() / (last.width * last.height)).clamp(0.0, 1.0);
    if mode == OverlapMode::TargetFrame {
        return target_ratio;
    }
    let mut back = region;
    for h in hops.iter().rev() {
        back = back.map(&h.backward);
    }
    let source_ratio = (back.area() / (source.0 * source.1)).clamp(0.0, 1.0);
    target_ratio.min(source_ratio)
}

/// Hops along a node path of the graph.
pub fn path_hops(graph: &MatchingGraph, path: &[usize]) -> Result<Vec<Hop>> {
    path.windows(2)
        .map(|w| {
            let (forward, backward) = graph
                .homography(w[0], w[1])
                .zip(graph.homography(w[1], w[0]))
                .ok_or_else(|| {
                    Error::validation(format!("no edge between {} and {}", graph.id(w[0]), graph.id(w[1])))
                })?;
            let n = graph.node(w[1]);
            Ok(Hop { forward, backward, width: n.width as f64, height: n.height as f64 })
        })
        .collect()
}

/// Overlap between the first and last node of `path`, propagated hop by hop.
pub fn hop_overlap(graph: &MatchingGraph, path: &[usize], mode: OverlapMode) -> Result<f64> {
    let first = *path.first().ok_or_else(|| Error::validation("empty path"))?;
    let n = graph.node(first);
    Ok(chain_overlap((n.width as f64, n.height as f64), &path_hops(graph, path)?, mode))
}
