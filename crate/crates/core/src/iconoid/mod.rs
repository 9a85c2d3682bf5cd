//! Iconoid Shift: medoid shift over the matching graph in homography-overlap
//! space. Each run starts at a seed image, explores everything overlapping
//! the current medoid and moves to the explored image with the largest
//! kernel-weighted overlap sum until it stops moving.

mod hop;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::{Arc, Mutex};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use hop::{chain_overlap, hop_overlap, path_hops, Hop, OverlapMode};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::graph::MatchingGraph;

pub const CLUSTERS_FILE: &str = "clusters.jsonl";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IconoidShiftConfig {
    /// Kernel bandwidth; support members overlap the iconoid by at least 1 − β.
    pub beta: f64,
    /// Number of random seed images.
    pub seeds: usize,
    pub rng_seed: u64,
    pub max_iterations: usize,
    /// Exploration does not expand past images overlapping less than this.
    pub exploration_floor: f64,
    /// Clusters with smaller support are kept but flagged.
    pub min_support: usize,
    pub overlap_mode: OverlapMode,
}

impl Default for IconoidShiftConfig {
    fn default() -> Self {
        IconoidShiftConfig {
            beta: 0.9,
            seeds: 1000,
            rng_seed: 0,
            max_iterations: 20,
            exploration_floor: 0.05,
            min_support: 5,
            overlap_mode: OverlapMode::Min,
        }
    }
}

impl IconoidShiftConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0 && self.beta < 1.0) {
            return Err(Error::validation(format!("beta must lie in (0, 1), got {}", self.beta)));
        }
        if !(0.0..=1.0).contains(&self.exploration_floor) {
            return Err(Error::validation("exploration_floor must lie in [0, 1]"));
        }
        if self.max_iterations == 0 {
            return Err(Error::validation("max_iterations must be positive"));
        }
        Ok(())
    }

    pub fn support_cut(&self) -> f64 {
        1.0 - self.beta
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupportMember {
    pub image_id: String,
    pub overlap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectCluster {
    pub object_id: String,
    pub iconoid: String,
    /// Ascending by image id; contains the iconoid with overlap 1.
    pub support: Vec<SupportMember>,
    pub beta: f64,
    /// Smallest seed id among the runs that converged here.
    pub seed: String,
    pub runs: usize,
    /// Support reaches the configured minimum size.
    pub reportable: bool,
}

impl ObjectCluster {
    pub fn size(&self) -> usize {
        self.support.len()
    }

    pub fn contains(&self, image_id: &str) -> bool {
        self.support.binary_search_by(|m| m.image_id.as_str().cmp(image_id)).is_ok()
    }

    pub fn member_ids(&self) -> impl Iterator<Item = &str> {
        self.support.iter().map(|m| m.image_id.as_str())
    }
}

pub fn cluster_id(iconoid: &str) -> String {
    format!("obj-{iconoid}")
}

/// Explores the graph breadth first from `center`. Returns every reached
/// image with its overlap to `center`, in discovery order. An image is
/// reached along the widest shortest path through already accepted images,
/// and is not expanded further when its overlap falls below `floor`.
///
/// The result is reproducible with [`MatchingGraph::path_tree`] restricted
/// to the accepted images followed by [`hop_overlap`].
pub fn explore(graph: &MatchingGraph, center: usize, floor: f64, mode: OverlapMode) -> Vec<(usize, f64)> {
    let n = graph.len();
    let mut seen = vec![false; n];
    let mut parent = vec![usize::MAX; n];
    let mut width = vec![0usize; n];
    seen[center] = true;
    width[center] = usize::MAX;
    let mut out = vec![(center, 1.0)];
    let mut frontier = vec![center];
    let mut depth = 0;
    let mut found_at = vec![0usize; n];
    while !frontier.is_empty() {
        depth += 1;
        let mut found: Vec<usize> = Vec::new();
        for &p in &frontier {
            for &(u, e) in graph.neighbors(p) {
                let w = width[p].min(graph.edges()[e].inliers);
                if !seen[u] {
                    seen[u] = true;
                    found_at[u] = depth;
                    found.push(u);
                    parent[u] = p;
                    width[u] = w;
                } else if found_at[u] == depth
                    && (w > width[u] || (w == width[u] && graph.id(p) < graph.id(parent[u])))
                {
                    parent[u] = p;
                    width[u] = w;
                }
            }
        }
        found.sort_by(|a, b| graph.id(*a).cmp(graph.id(*b)));
        let mut next = Vec::new();
        for u in found {
            let mut path = vec![u];
            while *path.last().unwrap() != center {
                path.push(parent[*path.last().unwrap()]);
            }
            path.reverse();
            let ov = hop_overlap(graph, &path, mode).expect("tree paths follow graph edges");
            if ov >= floor {
                out.push((u, ov));
                next.push(u);
            }
        }
        frontier = next;
    }
    out
}

/// Overlaps from `source` to every node of `members`, along widest shortest
/// paths inside the members' subgraph. Unreachable members get 0.
pub fn overlaps_within(graph: &MatchingGraph, source: usize, members: &[usize], mode: OverlapMode) -> Vec<f64> {
    let mut mask = vec![false; graph.len()];
    for &m in members {
        mask[m] = true;
    }
    let tree = graph.path_tree(source, Some(&mask));
    members
        .iter()
        .map(|&z| match tree.path_to(z) {
            Some(p) => hop_overlap(graph, &p, mode).expect("tree paths follow graph edges"),
            None => 0.0,
        })
        .collect()
}

/// Kernel-weighted overlap sum of a row of overlaps.
pub fn medoid_score(row: &[f64], beta: f64) -> f64 {
    let cut = 1.0 - beta;
    row.iter().map(|&o| (o - cut).max(0.0)).sum()
}

/// Index into `candidates` of the next medoid given the pairwise overlap
/// matrix (`overlaps[y][z]`). Ties go to the smaller image id.
pub fn medoid_step(ids: &[&str], overlaps: &[Vec<f64>], beta: f64) -> Result<usize> {
    if ids.is_empty() {
        return Err(Error::Precondition("medoid step over an empty candidate set".into()));
    }
    let mut best = 0;
    let mut best_score = medoid_score(&overlaps[0], beta);
    for y in 1..ids.len() {
        let s = medoid_score(&overlaps[y], beta);
        if s > best_score || (s == best_score && ids[y] < ids[best]) {
            best = y;
            best_score = s;
        }
    }
    Ok(best)
}

/// Memoized medoid shift over one graph.
pub struct IconoidShift<'g> {
    graph: &'g MatchingGraph,
    config: IconoidShiftConfig,
    explored: Mutex<HashMap<usize, Arc<Vec<(usize, f64)>>>>,
    next: Mutex<HashMap<usize, usize>>,
    converged: Mutex<HashMap<usize, usize>>,
}

impl<'g> IconoidShift<'g> {
    pub fn new(graph: &'g MatchingGraph, config: &IconoidShiftConfig) -> Result<Self> {
        config.validate()?;
        Ok(IconoidShift {
            graph,
            config: config.clone(),
            explored: Mutex::new(HashMap::new()),
            next: Mutex::new(HashMap::new()),
            converged: Mutex::new(HashMap::new()),
        })
    }

    pub fn graph(&self) -> &MatchingGraph {
        self.graph
    }

    pub fn explore(&self, center: usize) -> Arc<Vec<(usize, f64)>> {
        if let Some(e) = self.explored.lock().unwrap().get(&center) {
            return e.clone();
        }
        let e = Arc::new(explore(self.graph, center, self.config.exploration_floor, self.config.overlap_mode));
        self.explored.lock().unwrap().insert(center, e.clone());
        e
    }

    /// Explored candidates around `center` and their pairwise overlaps.
    pub fn candidate_overlaps(&self, center: usize) -> (Vec<usize>, Vec<Vec<f64>>) {
        let mut cands: Vec<usize> = self.explore(center).iter().map(|&(v, _)| v).collect();
        cands.sort_by(|a, b| self.graph.id(*a).cmp(self.graph.id(*b)));
        let rows = cands
            .iter()
            .map(|&y| overlaps_within(self.graph, y, &cands, self.config.overlap_mode))
            .collect();
        (cands, rows)
    }

    /// Medoid of the images explored from `center`.
    pub fn step(&self, center: usize) -> usize {
        if let Some(&n) = self.next.lock().unwrap().get(&center) {
            return n;
        }
        let (cands, rows) = self.candidate_overlaps(center);
        let ids: Vec<&str> = cands.iter().map(|&v| self.graph.id(v)).collect();
        let n = cands[medoid_step(&ids, &rows, self.config.beta).expect("center is a candidate")];
        self.next.lock().unwrap().insert(center, n);
        n
    }

    /// Iconoid reached from `seed`. A run that revisits an earlier medoid
    /// settles on the smallest image id of the cycle; a run that exhausts
    /// the iteration budget stops where it is.
    pub fn converge(&self, seed: usize) -> usize {
        if let Some(&c) = self.converged.lock().unwrap().get(&seed) {
            return c;
        }
        let mut history = vec![seed];
        let mut center = seed;
        for _ in 0..self.config.max_iterations {
            let next = self.step(center);
            if next == center {
                break;
            }
            if let Some(pos) = history.iter().position(|&h| h == next) {
                center = *history[pos..].iter().min_by(|a, b| self.graph.id(**a).cmp(self.graph.id(**b))).unwrap();
                break;
            }
            history.push(next);
            center = next;
        }
        self.converged.lock().unwrap().insert(seed, center);
        center
    }

    /// Cluster around a converged iconoid; `seeds` are the runs that led here.
    pub fn cluster(&self, iconoid: usize, seeds: &[usize]) -> ObjectCluster {
        let cut = self.config.support_cut();
        let mut support: Vec<SupportMember> = self
            .explore(iconoid)
            .iter()
            .filter(|&&(_, ov)| ov >= cut)
            .map(|&(v, ov)| SupportMember { image_id: self.graph.id(v).to_string(), overlap: ov })
            .collect();
        support.sort_by(|a, b| a.image_id.cmp(&b.image_id));
        let seed = seeds.iter().map(|&s| self.graph.id(s)).min().unwrap_or(self.graph.id(iconoid));
        let icon = self.graph.id(iconoid).to_string();
        ObjectCluster {
            object_id: cluster_id(&icon),
            iconoid: icon,
            reportable: support.len() >= self.config.min_support,
            support,
            beta: self.config.beta,
            seed: seed.to_string(),
            runs: seeds.len(),
        }
    }

    /// Runs every seed to convergence and merges runs by iconoid. Clusters
    /// are ordered by iconoid id; repeated seeds count once.
    pub fn run(&self, seeds: &[usize]) -> Vec<ObjectCluster> {
        let unique: BTreeSet<usize> = seeds.iter().copied().collect();
        let unique: Vec<usize> = unique.into_iter().collect();
        let icons: Vec<usize> = unique.par_iter().map(|&s| self.converge(s)).collect();
        let mut by_icon: BTreeMap<&str, (usize, Vec<usize>)> = BTreeMap::new();
        for (&s, &i) in unique.iter().zip(&icons) {
            by_icon.entry(self.graph.id(i)).or_insert((i, Vec::new())).1.push(s);
        }
        let groups: Vec<(usize, Vec<usize>)> = by_icon.into_values().collect();
        groups.par_iter().map(|(i, s)| self.cluster(*i, s)).collect()
    }
}

/// The first `count` images of a seeded random permutation of `0..n`.
/// Smaller counts are prefixes of larger ones.
pub fn draw_seeds(n: usize, count: usize, rng_seed: u64) -> Vec<usize> {
    let mut all: Vec<usize> = (0..n).collect();
    all.shuffle(&mut ChaCha8Rng::seed_from_u64(rng_seed));
    all.truncate(count.min(n));
    all
}

/// Draws `config.seeds` seeds and clusters the graph.
pub fn run_clustering(graph: &MatchingGraph, config: &IconoidShiftConfig) -> Result<Vec<ObjectCluster>> {
    let shift = IconoidShift::new(graph, config)?;
    Ok(shift.run(&draw_seeds(graph.len(), config.seeds, config.rng_seed)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub seeds: usize,
    pub clusters: usize,
    pub reportable_clusters: usize,
    /// Images in the support of at least one reportable cluster.
    pub images_covered: usize,
    /// Reportable clusters by the iconoid's category label.
    pub per_category: BTreeMap<String, usize>,
    /// Iconoids of the reportable clusters, ascending.
    pub iconoids: Vec<String>,
}

/// Clusters with growing seed counts. Each count uses a prefix of the same
/// seed permutation, so runs are shared between rows.
pub fn seed_sweep(
    dataset: &Dataset,
    graph: &MatchingGraph,
    config: &IconoidShiftConfig,
    seed_counts: &[usize],
) -> Result<Vec<SweepRow>> {
    if seed_counts.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::validation("seed counts must be ascending"));
    }
    let shift = IconoidShift::new(graph, config)?;
    let max = seed_counts.last().copied().unwrap_or(0);
    let order = draw_seeds(graph.len(), max, config.rng_seed);
    let category = |image_id: &str| {
        dataset
            .get(image_id)
            .and_then(|r| r.category.clone())
            .unwrap_or_else(|| "uncategorized".into())
    };
    let mut rows = Vec::new();
    for &count in seed_counts {
        let clusters = shift.run(&order[..count.min(order.len())]);
        let reportable: Vec<&ObjectCluster> = clusters.iter().filter(|c| c.reportable).collect();
        let covered: BTreeSet<&str> = reportable.iter().flat_map(|c| c.member_ids()).collect();
        let mut per_category = BTreeMap::new();
        for c in &reportable {
            *per_category.entry(category(&c.iconoid)).or_insert(0) += 1;
        }
        rows.push(SweepRow {
            seeds: count,
            clusters: clusters.len(),
            reportable_clusters: reportable.len(),
            images_covered: covered.len(),
            per_category,
            iconoids: reportable.iter().map(|c| c.iconoid.clone()).collect(),
        });
    }
    Ok(rows)
}

pub fn save_clusters(path: &Path, clusters: &[ObjectCluster]) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for c in clusters {
        serde_json::to_writer(&mut w, c)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_clusters(path: &Path) -> Result<Vec<ObjectCluster>> {
    let r = BufReader::new(fs::File::open(path)?);
    let mut out = Vec::new();
    let mut offset = 0u64;
    for line in r.lines() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line).map_err(|e| Error::format(offset, e.to_string()))?);
        }
        offset += line.len() as u64 + 1;
    }
    Ok(out)
}

#[cfg(test)]
mod tests;
