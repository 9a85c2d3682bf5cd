//! Object recognition: rank discovered objects for a query image from the
//! verified retrieval ranking over their representatives.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, ImageRecord};
use crate::engine::{retrieve, BovwCorpus};
use crate::error::{Error, Result};
use crate::geometry::{GeometryConfig, Homography};
use crate::graph::{MatchingGraph, PathTree};
use crate::iconoid::{chain_overlap, path_hops, Hop, ObjectCluster, OverlapMode};
use crate::index::{InvertedIndex, RankedMatch};
use crate::vocab::Vocabulary;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScoringMethod {
    Center,
    Size,
    Voting,
    BestMatch,
    Overlap,
}

impl ScoringMethod {
    pub const ALL: [ScoringMethod; 5] = [
        ScoringMethod::Center,
        ScoringMethod::Size,
        ScoringMethod::Voting,
        ScoringMethod::BestMatch,
        ScoringMethod::Overlap,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ScoringMethod::Center => "center",
            ScoringMethod::Size => "size",
            ScoringMethod::Voting => "voting",
            ScoringMethod::BestMatch => "best-match",
            ScoringMethod::Overlap => "overlap",
        }
    }
}

impl fmt::Display for ScoringMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ScoringMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ScoringMethod::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::validation(format!("unknown scoring method {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectScore {
    pub object_id: String,
    pub method: ScoringMethod,
    pub score: f64,
    /// 1-based.
    pub rank: usize,
    /// Backed by at least one spatially verified match.
    pub verified: bool,
}

/// Per-object evidence gathered from one ranking.
#[derive(Debug, Clone)]
struct Candidate {
    cluster: usize,
    best_rank: usize,
    votes: usize,
    verified: bool,
}

/// Immutable recognition state over a set of object clusters.
pub struct Recognizer<'a> {
    dataset: &'a Dataset,
    vocab: &'a Vocabulary,
    graph: &'a MatchingGraph,
    geometry: GeometryConfig,
    clusters: Vec<ObjectCluster>,
    index: InvertedIndex,
    iconoid_index: InvertedIndex,
    /// Image id to the clusters whose support holds it.
    membership: HashMap<String, Vec<usize>>,
    /// Per cluster: shortest-path tree from the iconoid inside its support.
    trees: Vec<Option<PathTree>>,
    mode: OverlapMode,
}

impl<'a> Recognizer<'a> {
    /// Indexes every support member of `clusters` as a representative.
    pub fn new(
        dataset: &'a Dataset,
        vocab: &'a Vocabulary,
        corpus: &BovwCorpus,
        graph: &'a MatchingGraph,
        clusters: Vec<ObjectCluster>,
        geometry: &GeometryConfig,
        mode: OverlapMode,
    ) -> Result<Self> {
        let mut membership: HashMap<String, Vec<usize>> = HashMap::new();
        for (ci, c) in clusters.iter().enumerate() {
            for id in c.member_ids() {
                membership.entry(id.to_string()).or_default().push(ci);
            }
        }
        let mut reps: Vec<&str> = membership.keys().map(|s| s.as_str()).collect();
        reps.sort_unstable();
        let index = corpus.index_subset(reps)?;
        let mut icons: Vec<&str> = clusters.iter().map(|c| c.iconoid.as_str()).collect();
        icons.sort_unstable();
        icons.dedup();
        let iconoid_index = corpus.index_subset(icons)?;
        let trees = clusters
            .iter()
            .map(|c| {
                let root = graph.index_of(&c.iconoid)?;
                let mut mask = vec![false; graph.len()];
                for id in c.member_ids() {
                    if let Some(v) = graph.index_of(id) {
                        mask[v] = true;
                    }
                }
                Some(graph.path_tree(root, Some(&mask)))
            })
            .collect();
        Ok(Recognizer {
            dataset,
            vocab,
            graph,
            geometry: geometry.clone(),
            clusters,
            index,
            iconoid_index,
            membership,
            trees,
            mode,
        })
    }

    pub fn clusters(&self) -> &[ObjectCluster] {
        &self.clusters
    }

    pub fn index(&self) -> &InvertedIndex {
        &self.index
    }

    pub fn geometry(&self) -> &GeometryConfig {
        &self.geometry
    }

    /// Verified ranking of the query against all representatives.
    pub fn ranking(&self, query: &ImageRecord) -> Result<Vec<RankedMatch>> {
        retrieve(query, self.vocab, &self.index, self.dataset, &self.geometry)
    }

    pub fn recognize(&self, query: &ImageRecord, method: ScoringMethod, k: usize) -> Result<Vec<ObjectScore>> {
        let ranking = if method == ScoringMethod::Center {
            retrieve(query, self.vocab, &self.iconoid_index, self.dataset, &self.geometry)?
        } else {
            self.ranking(query)?
        };
        Ok(self.score(query, &ranking, method, k))
    }

    /// Scores objects from an existing ranking. For [`ScoringMethod::Center`]
    /// the ranking must come from the iconoid index.
    pub fn score(&self, query: &ImageRecord, ranking: &[RankedMatch], method: ScoringMethod, k: usize) -> Vec<ObjectScore> {
        let scored = match method {
            ScoringMethod::Center => self.center(ranking),
            ScoringMethod::Size => self.by_candidates(ranking, |c| self.clusters[c.cluster].size() as f64),
            ScoringMethod::Voting => self.voting(ranking),
            ScoringMethod::BestMatch => self.best_match(ranking, k),
            ScoringMethod::Overlap => self.overlap(query, ranking),
        };
        scored
            .into_iter()
            .take(k)
            .enumerate()
            .map(|(i, (ci, score, verified))| ObjectScore {
                object_id: self.clusters[ci].object_id.clone(),
                method,
                score,
                rank: i + 1,
                verified,
            })
            .collect()
    }

    /// Object ids whose support holds `image_id`.
    pub fn objects_of(&self, image_id: &str) -> impl Iterator<Item = &str> {
        self.memberships(image_id).iter().map(|&ci| self.clusters[ci].object_id.as_str())
    }

    fn memberships(&self, image_id: &str) -> &[usize] {
        self.membership.get(image_id).map(|v| &v[..]).unwrap_or(&[])
    }

    /// Objects with a verified representative. With no verified match at
    /// all, the objects of the top unverified match stand in with one vote.
    fn candidates(&self, ranking: &[RankedMatch]) -> Vec<Candidate> {
        let mut out: BTreeMap<usize, Candidate> = BTreeMap::new();
        let any_verified = ranking.iter().any(|m| m.verified);
        let considered: Box<dyn Iterator<Item = (usize, &RankedMatch)>> = if any_verified {
            Box::new(ranking.iter().enumerate().filter(|(_, m)| m.verified))
        } else {
            Box::new(ranking.iter().enumerate().take(1))
        };
        for (rank, m) in considered {
            for &ci in self.memberships(&m.image_id) {
                let c = out.entry(ci).or_insert(Candidate { cluster: ci, best_rank: rank, votes: 0, verified: m.verified });
                c.votes += 1;
                c.best_rank = c.best_rank.min(rank);
            }
        }
        out.into_values().collect()
    }

    fn by_candidates(&self, ranking: &[RankedMatch], score: impl Fn(&Candidate) -> f64) -> Vec<(usize, f64, bool)> {
        let mut cands: Vec<(Candidate, f64)> = self.candidates(ranking).into_iter().map(|c| { let s = score(&c); (c, s) }).collect();
        cands.sort_by(|(a, sa), (b, sb)| {
            sb.total_cmp(sa)
                .then(a.best_rank.cmp(&b.best_rank))
                .then(self.clusters[b.cluster].size().cmp(&self.clusters[a.cluster].size()))
                .then(self.clusters[a.cluster].object_id.cmp(&self.clusters[b.cluster].object_id))
        });
        cands.into_iter().map(|(c, s)| (c.cluster, s, c.verified)).collect()
    }

    fn voting(&self, ranking: &[RankedMatch]) -> Vec<(usize, f64, bool)> {
        self.by_candidates(ranking, |c| c.votes as f64)
    }

    fn center(&self, ranking: &[RankedMatch]) -> Vec<(usize, f64, bool)> {
        let mut out: Vec<(usize, f64, bool)> = Vec::new();
        for m in ranking.iter().filter(|m| m.verified) {
            for (ci, c) in self.clusters.iter().enumerate() {
                if c.iconoid == m.image_id && !out.iter().any(|o| o.0 == ci) {
                    out.push((ci, m.inliers as f64, true));
                }
            }
        }
        out
    }

    fn best_match(&self, ranking: &[RankedMatch], k: usize) -> Vec<(usize, f64, bool)> {
        let mut out: Vec<(usize, f64, bool)> = Vec::new();
        for m in ranking {
            let mut objs: Vec<usize> = self.memberships(&m.image_id).to_vec();
            objs.sort_by(|&a, &b| {
                self.clusters[b]
                    .size()
                    .cmp(&self.clusters[a].size())
                    .then(self.clusters[a].object_id.cmp(&self.clusters[b].object_id))
            });
            let score = if m.verified { m.inliers as f64 } else { m.tfidf_score };
            for ci in objs {
                if !out.iter().any(|o| o.0 == ci) {
                    out.push((ci, score, m.verified));
                }
            }
            if out.len() >= k {
                break;
            }
        }
        out
    }

    /// Overlap of the query with the iconoid of cluster `ci`, through the
    /// verified representative `rep` whose homography maps query to `rep`.
    pub fn query_overlap(&self, query: &ImageRecord, rep: &str, h: &Homography, ci: usize) -> f64 {
        let (Some(tree), Some(r)) = (&self.trees[ci], self.graph.index_of(rep)) else {
            return 0.0;
        };
        let Some(mut path) = tree.path_to(r) else {
            return 0.0;
        };
        path.reverse();
        let Some(back) = h.inverse() else { return 0.0 };
        let node = self.graph.node(r);
        let mut hops = vec![Hop { forward: *h, backward: back, width: node.width as f64, height: node.height as f64 }];
        hops.extend(path_hops(self.graph, &path).expect("tree paths follow graph edges"));
        chain_overlap((query.width as f64, query.height as f64), &hops, self.mode)
    }

    fn overlap(&self, query: &ImageRecord, ranking: &[RankedMatch]) -> Vec<(usize, f64, bool)> {
        let mut best: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
        for (rank, m) in ranking.iter().enumerate().filter(|(_, m)| m.verified) {
            let Some(h) = &m.homography else { continue };
            for &ci in self.memberships(&m.image_id) {
                let ov = self.query_overlap(query, &m.image_id, h, ci);
                let e = best.entry(ci).or_insert((ov, rank));
                if ov > e.0 {
                    e.0 = ov;
                }
            }
        }
        let mut out: Vec<(usize, f64, usize)> = best.into_iter().map(|(ci, (ov, r))| (ci, ov, r)).collect();
        out.sort_by(|a, b| {
            b.1.total_cmp(&a.1)
                .then(a.2.cmp(&b.2))
                .then(self.clusters[a.0].object_id.cmp(&self.clusters[b.0].object_id))
        });
        out.into_iter().map(|(ci, ov, _)| (ci, ov, true)).collect()
    }
}
