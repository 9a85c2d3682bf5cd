//! The image matching graph: nodes are images, edges are spatially verified
//! pairs weighted by inlier count, with homographies stored both ways.

use std::collections::{BTreeSet, HashMap, VecDeque};
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::geometry::{verify_pair, Correspondence, GeometryConfig, Homography};
use crate::index::InvertedIndex;
use crate::vocab::WeightedBovw;

pub const GRAPH_FILE: &str = "graph.jsonl";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchEdge {
    /// Lexicographically smaller endpoint.
    pub image_a: String,
    pub image_b: String,
    pub inliers: usize,
    pub h_ab: Homography,
    pub h_ba: Homography,
    /// Feature index pairs, `a` indexing `image_a`.
    pub correspondences: Vec<Correspondence>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphNode {
    pub image_id: String,
    pub width: u32,
    pub height: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchingGraph {
    nodes: Vec<GraphNode>,
    lookup: HashMap<String, usize>,
    edges: Vec<MatchEdge>,
    /// Per node: (neighbor, edge index), ascending by neighbor id.
    adjacency: Vec<Vec<(usize, usize)>>,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum Line {
    Node(GraphNode),
    Edge(MatchEdge),
}

impl MatchingGraph {
    pub fn new(nodes: Vec<GraphNode>, mut edges: Vec<MatchEdge>) -> Result<Self> {
        let mut lookup = HashMap::with_capacity(nodes.len());
        for (i, n) in nodes.iter().enumerate() {
            if lookup.insert(n.image_id.clone(), i).is_some() {
                return Err(Error::Validation(format!("duplicate graph node {}", n.image_id)));
            }
        }
        edges.sort_by(|x, y| (&x.image_a, &x.image_b).cmp(&(&y.image_a, &y.image_b)));
        let mut adjacency = vec![Vec::new(); nodes.len()];
        for (ei, e) in edges.iter().enumerate() {
            if e.image_a >= e.image_b {
                return Err(Error::Validation(format!(
                    "edge {}-{} is a self-loop or not in canonical order",
                    e.image_a, e.image_b
                )));
            }
            if ei > 0 && edges[ei - 1].image_a == e.image_a && edges[ei - 1].image_b == e.image_b {
                return Err(Error::Validation(format!("duplicate edge {}-{}", e.image_a, e.image_b)));
            }
            let a = *lookup
                .get(&e.image_a)
                .ok_or_else(|| Error::Validation(format!("edge refers to unknown image {}", e.image_a)))?;
            let b = *lookup
                .get(&e.image_b)
                .ok_or_else(|| Error::Validation(format!("edge refers to unknown image {}", e.image_b)))?;
            adjacency[a].push((b, ei));
            adjacency[b].push((a, ei));
        }
        for list in &mut adjacency {
            list.sort_by(|x, y| nodes[x.0].image_id.cmp(&nodes[y.0].image_id));
        }
        Ok(MatchingGraph { nodes, lookup, edges, adjacency })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[GraphNode] {
        &self.nodes
    }

    pub fn node(&self, v: usize) -> &GraphNode {
        &self.nodes[v]
    }

    pub fn id(&self, v: usize) -> &str {
        &self.nodes[v].image_id
    }

    pub fn index_of(&self, image_id: &str) -> Option<usize> {
        self.lookup.get(image_id).copied()
    }

    pub fn edges(&self) -> &[MatchEdge] {
        &self.edges
    }

    pub fn neighbors(&self, v: usize) -> &[(usize, usize)] {
        &self.adjacency[v]
    }

    pub fn degree(&self, v: usize) -> usize {
        self.adjacency[v].len()
    }

    pub fn edge_between(&self, u: usize, v: usize) -> Option<&MatchEdge> {
        self.adjacency[u]
            .iter()
            .find(|(n, _)| *n == v)
            .map(|&(_, e)| &self.edges[e])
    }

    pub fn inliers(&self, u: usize, v: usize) -> Option<usize> {
        self.edge_between(u, v).map(|e| e.inliers)
    }

    /// Homography taking coordinates of `from` into `to`.
    pub fn homography(&self, from: usize, to: usize) -> Option<Homography> {
        let e = self.edge_between(from, to)?;
        Some(if self.nodes[from].image_id == e.image_a { e.h_ab } else { e.h_ba })
    }

    /// Subgraph keeping edges with at least `min_inliers`; all nodes stay.
    pub fn prune_edges(&self, min_inliers: usize) -> MatchingGraph {
        let edges = self.edges.iter().filter(|e| e.inliers >= min_inliers).cloned().collect();
        MatchingGraph::new(self.nodes.clone(), edges).expect("subgraph of a valid graph")
    }

    /// Connected components, each ascending by node index, ordered by
    /// smallest member.
    pub fn components(&self) -> Vec<Vec<usize>> {
        let mut seen = vec![false; self.len()];
        let mut out = Vec::new();
        for s in 0..self.len() {
            if seen[s] {
                continue;
            }
            seen[s] = true;
            let mut comp = vec![s];
            let mut queue = VecDeque::from([s]);
            while let Some(v) = queue.pop_front() {
                for &(u, _) in &self.adjacency[v] {
                    if !seen[u] {
                        seen[u] = true;
                        comp.push(u);
                        queue.push_back(u);
                    }
                }
            }
            comp.sort_unstable();
            out.push(comp);
        }
        out
    }

    /// Shortest-path tree from `source` over nodes allowed by `allowed`
    /// (all nodes when `None`). See [`PathTree`] for the tie rules.
    pub fn path_tree(&self, source: usize, allowed: Option<&[bool]>) -> PathTree {
        let n = self.len();
        let ok = |v: usize| allowed.is_none_or(|a| a[v]);
        let mut level = vec![usize::MAX; n];
        let mut parent = vec![usize::MAX; n];
        let mut width = vec![0usize; n];
        let mut order = vec![source];
        level[source] = 0;
        width[source] = usize::MAX;
        let mut frontier = vec![source];
        let mut depth = 0;
        while !frontier.is_empty() {
            depth += 1;
            let mut next: Vec<usize> = Vec::new();
            for &p in &frontier {
                for &(u, e) in &self.adjacency[p] {
                    if !ok(u) || (level[u] != usize::MAX && level[u] < depth) {
                        continue;
                    }
                    let w = width[p].min(self.edges[e].inliers);
                    let better = level[u] == usize::MAX
                        || w > width[u]
                        || (w == width[u] && self.nodes[p].image_id < self.nodes[parent[u]].image_id);
                    if level[u] == usize::MAX {
                        next.push(u);
                    }
                    if better {
                        level[u] = depth;
                        parent[u] = p;
                        width[u] = w;
                    }
                }
            }
            next.sort_by(|a, b| self.nodes[*a].image_id.cmp(&self.nodes[*b].image_id));
            order.extend(&next);
            frontier = next;
        }
        PathTree { source, level, parent, width, order }
    }

    /// Fewest hops from `a` to `b`, then widest (largest minimum inlier
    /// count), then smallest predecessor ids walking back from `b`.
    /// Returns the node sequence including both ends; `[a]` when `a == b`.
    pub fn shortest_path(&self, a: usize, b: usize) -> Option<Vec<usize>> {
        self.path_tree(a, None).path_to(b)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(fs::File::create(path)?);
        for n in &self.nodes {
            serde_json::to_writer(&mut w, &Line::Node(n.clone()))?;
            w.write_all(b"\n")?;
        }
        for e in &self.edges {
            serde_json::to_writer(&mut w, &Line::Edge(e.clone()))?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let r = BufReader::new(fs::File::open(path)?);
        let (mut nodes, mut edges) = (Vec::new(), Vec::new());
        let mut offset = 0u64;
        for line in r.lines() {
            let line = line?;
            if !line.trim().is_empty() {
                match serde_json::from_str::<Line>(&line).map_err(|e| Error::format(offset, e.to_string()))? {
                    Line::Node(n) => nodes.push(n),
                    Line::Edge(e) => edges.push(e),
                }
            }
            offset += line.len() as u64 + 1;
        }
        MatchingGraph::new(nodes, edges)
    }
}

/// Single-source shortest paths: fewest hops first, then the widest path
/// (largest minimum edge inliers), then the predecessor with the smallest
/// image id. Every prefix of a tree path is itself a tree path.
#[derive(Debug, Clone)]
pub struct PathTree {
    pub source: usize,
    /// Hop count, `usize::MAX` when unreachable.
    pub level: Vec<usize>,
    pub parent: Vec<usize>,
    /// Minimum edge inliers along the tree path.
    pub width: Vec<usize>,
    /// Reached nodes in breadth-first order.
    pub order: Vec<usize>,
}

impl PathTree {
    pub fn reaches(&self, v: usize) -> bool {
        self.level[v] != usize::MAX
    }

    pub fn path_to(&self, v: usize) -> Option<Vec<usize>> {
        if !self.reaches(v) {
            return None;
        }
        let mut path = vec![v];
        let mut cur = v;
        while cur != self.source {
            cur = self.parent[cur];
            path.push(cur);
        }
        path.reverse();
        Some(path)
    }
}

/// Queries every image against the index, verifies the top `depth` results
/// and links verified pairs. Each unordered pair is verified once, in id
/// order, so the edge set does not depend on processing order.
pub fn build_graph(
    dataset: &Dataset,
    index: &InvertedIndex,
    bovws: &[WeightedBovw],
    config: &GeometryConfig,
    depth: usize,
) -> Result<MatchingGraph> {
    if bovws.len() != dataset.len() {
        return Err(Error::Precondition(format!(
            "{} BoVW vectors for {} images",
            bovws.len(),
            dataset.len()
        )));
    }
    let candidates: Vec<Vec<(usize, usize)>> = (0..dataset.len())
        .into_par_iter()
        .map(|i| {
            index
                .query(&bovws[i], depth + 1)
                .into_iter()
                .filter_map(|m| dataset.index_of(&m.image_id))
                .filter(|&j| j != i)
                .take(depth)
                .map(|j| if dataset.id(i) < dataset.id(j) { (i, j) } else { (j, i) })
                .collect()
        })
        .collect();
    let pairs: BTreeSet<(usize, usize)> = candidates.into_iter().flatten().collect();
    let pairs: Vec<(usize, usize)> = pairs.into_iter().collect();
    let edges: Vec<Option<MatchEdge>> = pairs
        .par_iter()
        .map(|&(a, b)| {
            let (ia, ib) = (dataset.image(a), dataset.image(b));
            let fit = verify_pair(&ia.features, &ib.features, config)?;
            let h_ba = fit.homography.inverse()?;
            Some(MatchEdge {
                image_a: ia.image_id.clone(),
                image_b: ib.image_id.clone(),
                inliers: fit.inlier_count(),
                h_ab: fit.homography,
                h_ba,
                correspondences: fit.inliers,
            })
        })
        .collect();
    let nodes = dataset
        .images()
        .iter()
        .map(|r| GraphNode { image_id: r.image_id.clone(), width: r.width, height: r.height })
        .collect();
    MatchingGraph::new(nodes, edges.into_iter().flatten().collect())
}
