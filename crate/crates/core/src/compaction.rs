//! Cluster summarization: shrink each cluster's representative set so the
//! recognition index gets smaller.

use std::collections::BTreeSet;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::MatchingGraph;
use crate::iconoid::ObjectCluster;

pub const KEPT_FILE: &str = "kept.jsonl";
pub const TRADEOFF_FILE: &str = "tradeoff.csv";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CompactionMethod {
    None,
    CompleteLink,
    Kvq,
    DominatingSet,
    FineIconoids,
    Random,
}

impl CompactionMethod {
    pub fn name(self) -> &'static str {
        match self {
            CompactionMethod::None => "none",
            CompactionMethod::CompleteLink => "complete-link",
            CompactionMethod::Kvq => "kvq",
            CompactionMethod::DominatingSet => "dominating-set",
            CompactionMethod::FineIconoids => "fine-iconoids",
            CompactionMethod::Random => "random",
        }
    }
}

impl std::str::FromStr for CompactionMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        use CompactionMethod::*;
        [None, CompleteLink, Kvq, DominatingSet, FineIconoids, Random]
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::validation(format!("unknown compaction method {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompactionConfig {
    pub method: CompactionMethod,
    /// Edge threshold θ in inliers.
    pub threshold: usize,
    /// KVQ radius r: minimum matching score for one image to cover another.
    pub radius: usize,
    /// Bandwidth of the fine clustering.
    pub fine_beta: f64,
    pub keep_fraction: f64,
    pub rng_seed: u64,
}

impl Default for CompactionConfig {
    fn default() -> Self {
        CompactionConfig {
            method: CompactionMethod::DominatingSet,
            threshold: 30,
            radius: 30,
            fine_beta: 0.7,
            keep_fraction: 0.5,
            rng_seed: 0,
        }
    }
}

impl CompactionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.keep_fraction > 0.0 && self.keep_fraction <= 1.0) {
            return Err(Error::validation("keep_fraction must lie in (0, 1]"));
        }
        if self.radius == 0 {
            return Err(Error::validation("radius must be positive"));
        }
        if !(self.fine_beta > 0.0 && self.fine_beta < 1.0) {
            return Err(Error::validation("fine_beta must lie in (0, 1)"));
        }
        Ok(())
    }

    /// The parameter that matters for the configured method.
    pub fn param(&self) -> f64 {
        match self.method {
            CompactionMethod::CompleteLink | CompactionMethod::DominatingSet => self.threshold as f64,
            CompactionMethod::Kvq => self.radius as f64,
            CompactionMethod::FineIconoids => self.fine_beta,
            CompactionMethod::Random => self.keep_fraction,
            CompactionMethod::None => 1.0,
        }
    }
}

/// Cluster members as graph nodes, in support order. Members missing from
/// the graph are kept by every method.
struct Members {
    ids: Vec<String>,
    nodes: Vec<Option<usize>>,
}

impl Members {
    fn of(cluster: &ObjectCluster, graph: &MatchingGraph) -> Self {
        let ids: Vec<String> = cluster.member_ids().map(String::from).collect();
        let nodes = ids.iter().map(|id| graph.index_of(id)).collect();
        Members { ids, nodes }
    }

    fn inliers(&self, graph: &MatchingGraph, i: usize, j: usize) -> usize {
        match (self.nodes[i], self.nodes[j]) {
            (Some(a), Some(b)) => graph.inliers(a, b).unwrap_or(0),
            _ => 0,
        }
    }
}

fn with_iconoid(cluster: &ObjectCluster, kept: impl IntoIterator<Item = String>) -> Vec<String> {
    let mut set: BTreeSet<String> = kept.into_iter().collect();
    set.insert(cluster.iconoid.clone());
    set.into_iter().collect()
}

/// Greedy set cover of `0..n` where `covers[u]` lists what `u` covers.
/// Picks by largest gain, then smallest `order` key. Returns picked indices
/// in pick order.
pub fn greedy_cover(covers: &[Vec<usize>], order: &[&str]) -> Vec<usize> {
    let n = covers.len();
    let mut covered = vec![false; n];
    let mut left = n;
    let mut picked = Vec::new();
    while left > 0 {
        let mut best: Option<(usize, usize)> = None;
        for u in 0..n {
            let gain = covers[u].iter().filter(|&&v| !covered[v]).count();
            let better = match best {
                None => gain > 0,
                Some((b, g)) => gain > g || (gain == g && order[u] < order[b]),
            };
            if better {
                best = Some((u, gain));
            }
        }
        let Some((u, _)) = best else { break };
        for &v in &covers[u] {
            if !covered[v] {
                covered[v] = true;
                left -= 1;
            }
        }
        picked.push(u);
    }
    picked
}

/// Closed neighborhoods under "inliers ≥ min".
fn neighborhoods(m: &Members, graph: &MatchingGraph, min: usize) -> Vec<Vec<usize>> {
    (0..m.ids.len())
        .map(|u| (0..m.ids.len()).filter(|&v| v == u || m.inliers(graph, u, v) >= min).collect())
        .collect()
}

/// Greedy cover where `u` covers `v` iff `u = v` or their matching score
/// reaches `radius`.
pub fn kvq_reduce(cluster: &ObjectCluster, graph: &MatchingGraph, radius: usize) -> Vec<String> {
    let m = Members::of(cluster, graph);
    let order: Vec<&str> = m.ids.iter().map(|s| s.as_str()).collect();
    let picked = greedy_cover(&neighborhoods(&m, graph, radius), &order);
    with_iconoid(cluster, picked.into_iter().map(|u| m.ids[u].clone()))
}

/// Greedy dominating set of the members' subgraph pruned at `threshold`.
pub fn dominating_set_reduce(cluster: &ObjectCluster, graph: &MatchingGraph, threshold: usize) -> Vec<String> {
    let pruned = graph.prune_edges(threshold);
    let m = Members::of(cluster, &pruned);
    let order: Vec<&str> = m.ids.iter().map(|s| s.as_str()).collect();
    let covers: Vec<Vec<usize>> = (0..m.ids.len())
        .map(|u| {
            let mut nb: Vec<usize> = vec![u];
            if let Some(a) = m.nodes[u] {
                for (v, node) in m.nodes.iter().enumerate() {
                    if node.is_some_and(|b| pruned.edge_between(a, b).is_some()) {
                        nb.push(v);
                    }
                }
            }
            nb
        })
        .collect();
    let picked = greedy_cover(&covers, &order);
    with_iconoid(cluster, picked.into_iter().map(|u| m.ids[u].clone()))
}

/// Complete-link agglomeration with inlier similarity, stopping once no
/// pair of groups has all cross pairs at or above `threshold`. Groups of 3
/// or more collapse to their member of highest degree in the full graph.
pub fn complete_link_reduce(cluster: &ObjectCluster, graph: &MatchingGraph, threshold: usize) -> Vec<String> {
    let m = Members::of(cluster, graph);
    let n = m.ids.len();
    let sim: Vec<Vec<usize>> = (0..n).map(|i| (0..n).map(|j| m.inliers(graph, i, j)).collect()).collect();
    // Each group: members ascending by support position (ids are sorted).
    let mut groups: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
    // link[a][b]: complete-link similarity between groups a and b.
    let mut link = sim.clone();
    let mut alive = vec![true; n];
    loop {
        let mut best: Option<(usize, usize, usize)> = None;
        for a in 0..n {
            if !alive[a] {
                continue;
            }
            for b in a + 1..n {
                if alive[b] && link[a][b] >= threshold && best.is_none_or(|(_, _, s)| link[a][b] > s) {
                    best = Some((a, b, link[a][b]));
                }
            }
        }
        let Some((a, b, _)) = best else { break };
        let moved = std::mem::take(&mut groups[b]);
        groups[a].extend(moved);
        groups[a].sort_unstable();
        alive[b] = false;
        for c in 0..n {
            if alive[c] && c != a {
                let s = link[a][c].min(link[b][c]);
                link[a][c] = s;
                link[c][a] = s;
            }
        }
    }
    let degree = |i: usize| m.nodes[i].map(|v| graph.degree(v)).unwrap_or(0);
    let mut kept = Vec::new();
    for g in groups.iter().filter(|g| !g.is_empty()) {
        if g.len() < 3 {
            kept.extend(g.iter().map(|&i| m.ids[i].clone()));
        } else {
            // Ascending ids, so the first maximum wins ties.
            let best = g.iter().copied().fold(g[0], |b, i| if degree(i) > degree(b) { i } else { b });
            kept.push(m.ids[best].clone());
        }
    }
    with_iconoid(cluster, kept)
}

/// Fine iconoids inside the coarse support.
pub fn fine_iconoid_reduce(cluster: &ObjectCluster, fine: &[ObjectCluster]) -> Vec<String> {
    with_iconoid(
        cluster,
        fine.iter().filter(|f| cluster.contains(&f.iconoid)).map(|f| f.iconoid.clone()),
    )
}

/// Iconoid plus `count − 1` other members drawn uniformly.
pub fn random_reduce_count(cluster: &ObjectCluster, count: usize, seed: u64) -> Vec<String> {
    let others: Vec<&str> = cluster.member_ids().filter(|id| *id != cluster.iconoid).collect();
    let take = count.saturating_sub(1).min(others.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ stable_hash(&cluster.object_id));
    let mut picks = sample(&mut rng, others.len(), take).into_vec();
    picks.sort_unstable();
    with_iconoid(cluster, picks.into_iter().map(|i| others[i].to_string()))
}

/// Keeps `round(fraction · size)` members, at least one, iconoid included.
pub fn random_reduce(cluster: &ObjectCluster, fraction: f64, seed: u64) -> Vec<String> {
    let count = ((fraction * cluster.size() as f64).round() as usize).max(1);
    random_reduce_count(cluster, count, seed)
}

/// FNV-1a, stable across runs and platforms.
fn stable_hash(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeptSet {
    pub object_id: String,
    pub method: CompactionMethod,
    pub param: f64,
    pub original: usize,
    /// Ascending image ids.
    pub kept: Vec<String>,
}

/// Applies the configured method to every cluster. `fine` is required for
/// [`CompactionMethod::FineIconoids`].
pub fn reduce_clusters(
    clusters: &[ObjectCluster],
    graph: &MatchingGraph,
    config: &CompactionConfig,
    fine: Option<&[ObjectCluster]>,
) -> Result<Vec<KeptSet>> {
    config.validate()?;
    if config.method == CompactionMethod::FineIconoids && fine.is_none() {
        return Err(Error::Precondition("fine-iconoid reduction needs a fine clustering".into()));
    }
    let pruned = (config.method == CompactionMethod::DominatingSet).then(|| graph.prune_edges(config.threshold));
    Ok(clusters
        .iter()
        .map(|c| {
            let kept = match config.method {
                CompactionMethod::None => c.member_ids().map(String::from).collect(),
                CompactionMethod::CompleteLink => complete_link_reduce(c, graph, config.threshold),
                CompactionMethod::Kvq => kvq_reduce(c, graph, config.radius),
                CompactionMethod::DominatingSet => {
                    dominating_set_reduce(c, pruned.as_ref().expect("pruned above"), config.threshold)
                }
                CompactionMethod::FineIconoids => fine_iconoid_reduce(c, fine.expect("checked above")),
                CompactionMethod::Random => random_reduce(c, config.keep_fraction, config.rng_seed),
            };
            KeptSet { object_id: c.object_id.clone(), method: config.method, param: config.param(), original: c.size(), kept }
        })
        .collect())
}

/// Random reduction keeping as many members per cluster as `reference`.
pub fn random_matching(clusters: &[ObjectCluster], reference: &[KeptSet], seed: u64) -> Vec<KeptSet> {
    clusters
        .iter()
        .zip(reference)
        .map(|(c, r)| KeptSet {
            object_id: c.object_id.clone(),
            method: CompactionMethod::Random,
            param: r.kept.len() as f64 / c.size().max(1) as f64,
            original: c.size(),
            kept: random_reduce_count(c, r.kept.len(), seed),
        })
        .collect()
}

/// Clusters restricted to their kept members.
pub fn apply_kept(clusters: &[ObjectCluster], kept: &[KeptSet]) -> Vec<ObjectCluster> {
    clusters
        .iter()
        .zip(kept)
        .map(|(c, k)| {
            let mut c = c.clone();
            c.support.retain(|m| k.kept.binary_search(&m.image_id).is_ok());
            c
        })
        .collect()
}

pub fn save_kept(path: &Path, kept: &[KeptSet]) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for k in kept {
        serde_json::to_writer(&mut w, k)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_kept(path: &Path) -> Result<Vec<KeptSet>> {
    let mut out = Vec::new();
    let mut offset = 0u64;
    for line in BufReader::new(fs::File::open(path)?).lines() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line).map_err(|e| Error::format(offset, e.to_string()))?);
        }
        offset += line.len() as u64 + 1;
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TradeoffRow {
    pub method: CompactionMethod,
    pub param: f64,
    pub kept: usize,
    pub kept_fraction: f64,
    /// Postings in the reduced index.
    pub index_size: usize,
    pub good1: f64,
    pub ok1: f64,
    pub good3: f64,
    pub ok3: f64,
}

pub fn write_tradeoff(path: &Path, rows: &[TradeoffRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["method", "param", "kept", "kept_fraction", "index_size", "good1", "ok1", "good3", "ok3"])?;
    for r in rows {
        w.write_record([
            r.method.name().to_string(),
            r.param.to_string(),
            r.kept.to_string(),
            format!("{:.4}", r.kept_fraction),
            r.index_size.to_string(),
            format!("{:.2}", r.good1),
            format!("{:.2}", r.ok1),
            format!("{:.2}", r.good3),
            format!("{:.2}", r.ok3),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Homography;
    use crate::graph::{GraphNode, MatchEdge};
    use crate::iconoid::SupportMember;

    fn graph(n: usize, edges: &[(usize, usize, usize)]) -> MatchingGraph {
        let nodes = (0..n).map(|i| GraphNode { image_id: format!("i{i:02}"), width: 10, height: 10 }).collect();
        let edges = edges
            .iter()
            .map(|&(a, b, inliers)| MatchEdge {
                image_a: format!("i{a:02}"),
                image_b: format!("i{b:02}"),
                inliers,
                h_ab: Homography::identity(),
                h_ba: Homography::identity(),
                correspondences: vec![],
            })
            .collect();
        MatchingGraph::new(nodes, edges).unwrap()
    }

    fn cluster(n: usize, iconoid: usize) -> ObjectCluster {
        ObjectCluster {
            object_id: "obj".into(),
            iconoid: format!("i{iconoid:02}"),
            support: (0..n).map(|i| SupportMember { image_id: format!("i{i:02}"), overlap: 0.5 }).collect(),
            beta: 0.9,
            seed: "i00".into(),
            runs: 1,
            reportable: true,
        }
    }

    fn ids(v: &[usize]) -> Vec<String> {
        v.iter().map(|i| format!("i{i:02}")).collect()
    }

    #[test]
    fn complete_link_rules() {
        let c = cluster(5, 0);
        // No pair reaches θ: identity.
        let g = graph(5, &[(0, 1, 20), (2, 3, 29)]);
        assert_eq!(complete_link_reduce(&c, &g, 30), ids(&[0, 1, 2, 3, 4]));
        // 4-clique 1..4 collapses to its highest-degree member (3, via the extra edge).
        let g = graph(6, &[(1, 2, 40), (1, 3, 40), (1, 4, 40), (2, 3, 40), (2, 4, 40), (3, 4, 40), (3, 5, 15)]);
        assert_eq!(complete_link_reduce(&c, &g, 30), ids(&[0, 3]));
        // A pair stays whole.
        let g = graph(5, &[(1, 2, 50)]);
        assert_eq!(complete_link_reduce(&c, &g, 30), ids(&[0, 1, 2, 3, 4]));
    }

    #[test]
    fn complete_link_needs_every_cross_pair() {
        // 1-2 and 2-3 strong but 1-3 weak: only one pair merges.
        let c = cluster(4, 0);
        let g = graph(4, &[(1, 2, 50), (2, 3, 40), (1, 3, 10)]);
        assert_eq!(complete_link_reduce(&c, &g, 30), ids(&[0, 1, 2, 3]));
        let g = graph(4, &[(1, 2, 50), (2, 3, 40), (1, 3, 35)]);
        assert_eq!(complete_link_reduce(&c, &g, 30).len(), 2);
    }

    #[test]
    fn covers() {
        let c = cluster(3, 0);
        let none = graph(3, &[]);
        assert_eq!(kvq_reduce(&c, &none, 30), ids(&[0, 1, 2]));
        assert_eq!(dominating_set_reduce(&c, &none, 30), ids(&[0, 1, 2]));
        let path = graph(3, &[(0, 1, 40), (1, 2, 40)]);
        let c1 = cluster(3, 1);
        assert_eq!(dominating_set_reduce(&c1, &path, 30), ids(&[1]));
        assert_eq!(kvq_reduce(&c1, &path, 30), ids(&[1]));
        // Iconoid retained on top of the cover.
        assert_eq!(dominating_set_reduce(&c, &path, 30), ids(&[0, 1]));
    }

    #[test]
    fn fine_and_random() {
        let c = cluster(10, 4);
        let mut f = cluster(3, 2);
        assert_eq!(fine_iconoid_reduce(&c, &[f.clone()]), ids(&[2, 4]));
        f.iconoid = "zz".into();
        assert_eq!(fine_iconoid_reduce(&c, &[f]), ids(&[4]));
        assert_eq!(random_reduce(&c, 1.0, 1), ids(&(0..10).collect::<Vec<_>>()));
        assert_eq!(random_reduce(&c, 0.01, 1), ids(&[4]));
        let half = random_reduce(&c, 0.5, 7);
        assert_eq!(half.len(), 5);
        assert!(half.contains(&"i04".to_string()));
        assert_eq!(half, random_reduce(&c, 0.5, 7));
    }

    #[test]
    fn method_names() {
        for m in ["none", "complete-link", "kvq", "dominating-set", "fine-iconoids", "random"] {
            assert_eq!(m.parse::<CompactionMethod>().unwrap().name(), m);
        }
        assert!("scene-maps".parse::<CompactionMethod>().is_err());
    }

    #[test]
    fn kept_round_trip() {
        let c = cluster(4, 0);
        let g = graph(4, &[(0, 1, 40)]);
        let kept = reduce_clusters(&[c], &g, &CompactionConfig::default(), None).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join(KEPT_FILE);
        save_kept(&p, &kept).unwrap();
        assert_eq!(load_kept(&p).unwrap(), kept);
    }
}
