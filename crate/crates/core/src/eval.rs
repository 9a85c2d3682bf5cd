//! Evaluation protocol: query grouping, the annotation pre-filter,
//! good/ok metrics with a per-category breakdown, and semantic scoring.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{Annotations, ImageRecord, Rating};
use crate::error::{Error, Result};
use crate::geometry::{verify_pair, GeometryConfig};
use crate::iconoid::{chain_overlap, Hop, ObjectCluster, OverlapMode};
use crate::recognition::Recognizer;
use crate::synth::GroundTruth;
use crate::tags::ClusterNames;

pub const REPORT_FILE: &str = "report.json";
pub const UNCATEGORIZED: &str = "uncategorized";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Inliers needed to call two queries the same view.
    pub group_min_inliers: usize,
    /// Overlap needed to call two queries the same view.
    pub group_min_overlap: f64,
    /// Auto-rate objects never verified for a query group as bad.
    pub candidate_filter: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { group_min_inliers: 30, group_min_overlap: 0.95, candidate_filter: true }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryGroup {
    pub group_id: usize,
    /// Sorted.
    pub members: Vec<String>,
    pub representative: String,
}

fn find(parent: &mut [usize], mut x: usize) -> usize {
    while parent[x] != x {
        parent[x] = parent[parent[x]];
        x = parent[x];
    }
    x
}

/// Whether `b` shows exactly the view of `a`.
pub fn same_view(a: &ImageRecord, b: &ImageRecord, geometry: &GeometryConfig, config: &EvalConfig) -> bool {
    let Some(fit) = verify_pair(&a.features, &b.features, geometry) else {
        return false;
    };
    if fit.inlier_count() < config.group_min_inliers {
        return false;
    }
    let Some(back) = fit.homography.inverse() else {
        return false;
    };
    let hop = Hop { forward: fit.homography, backward: back, width: b.width as f64, height: b.height as f64 };
    chain_overlap((a.width as f64, a.height as f64), &[hop], OverlapMode::Min) >= config.group_min_overlap
}

/// Connected components of the same-view relation, ordered by representative.
pub fn group_queries(queries: &[ImageRecord], geometry: &GeometryConfig, config: &EvalConfig) -> Vec<QueryGroup> {
    let n = queries.len();
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
    let linked: Vec<(usize, usize)> = pairs
        .into_par_iter()
        .filter(|&(i, j)| same_view(&queries[i], &queries[j], geometry, config))
        .collect();
    let mut parent: Vec<usize> = (0..n).collect();
    for (i, j) in linked {
        let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
        if ri != rj {
            parent[ri.max(rj)] = ri.min(rj);
        }
    }
    let mut comps: BTreeMap<usize, Vec<String>> = BTreeMap::new();
    for i in 0..n {
        let r = find(&mut parent, i);
        comps.entry(r).or_default().push(queries[i].image_id.clone());
    }
    let mut groups: Vec<(String, Vec<String>)> = comps
        .into_values()
        .map(|mut m| {
            m.sort();
            (m[0].clone(), m)
        })
        .collect();
    groups.sort();
    groups
        .into_iter()
        .enumerate()
        .map(|(group_id, (representative, members))| QueryGroup { group_id, members, representative })
        .collect()
}

/// Objects with a representative verified for at least one group member.
pub fn candidate_filter(group: &QueryGroup, queries: &[ImageRecord], recognizer: &Recognizer) -> Result<BTreeSet<String>> {
    let mut out = BTreeSet::new();
    for id in &group.members {
        let q = queries
            .iter()
            .find(|q| &q.image_id == id)
            .ok_or_else(|| Error::validation(format!("query {id} is not in the query set")))?;
        for m in recognizer.ranking(q)?.iter().filter(|m| m.verified) {
            out.extend(recognizer.objects_of(&m.image_id).map(str::to_string));
        }
    }
    Ok(out)
}

/// Outcome of applying the pre-filter to a set of annotations.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FilterStats {
    /// Good or ok pairs before filtering.
    pub positives: usize,
    /// Good or ok pairs turned bad by the filter.
    pub filtered_positives: usize,
}

impl FilterStats {
    pub fn false_negative_rate(&self) -> f64 {
        if self.positives == 0 {
            0.0
        } else {
            self.filtered_positives as f64 / self.positives as f64
        }
    }
}

/// Rates every pair outside the group's candidate set as bad.
pub fn apply_candidate_filter(
    annotations: &Annotations,
    groups: &[QueryGroup],
    candidates: &[BTreeSet<String>],
) -> (Annotations, FilterStats) {
    let mut group_of: BTreeMap<&str, usize> = BTreeMap::new();
    for (gi, g) in groups.iter().enumerate() {
        for m in &g.members {
            group_of.insert(m, gi);
        }
    }
    let mut stats = FilterStats::default();
    let mut out = Annotations::new();
    for a in annotations.iter() {
        let keep = group_of.get(a.query_id.as_str()).is_none_or(|&gi| candidates[gi].contains(&a.object_id));
        if a.rating.at_least_ok() {
            stats.positives += 1;
            if !keep {
                stats.filtered_positives += 1;
            }
        }
        let rating = if keep { a.rating } else { Rating::Bad };
        out.insert(&a.query_id, &a.object_id, rating).expect("source pairs are unique");
    }
    (out, stats)
}

/// Rates each discovered cluster for each query by the ground-truth object
/// its iconoid shows.
pub fn cluster_annotations(truth: &GroundTruth, queries: &[ImageRecord], clusters: &[ObjectCluster]) -> Result<Annotations> {
    let mut out = Annotations::new();
    for q in queries {
        let Some(qo) = truth.object_of(&q.image_id) else { continue };
        for c in clusters {
            let rating = truth.object_of(&c.iconoid).map_or(Rating::Bad, |co| truth.rating(qo, co));
            out.insert(&q.image_id, &c.object_id, rating)?;
        }
    }
    Ok(out)
}

/// Percentages over a query set.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub queries: usize,
    pub good1: f64,
    pub ok1: f64,
    pub good3: f64,
    pub ok3: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
struct Counts {
    queries: usize,
    good1: usize,
    ok1: usize,
    good3: usize,
    ok3: usize,
}

impl Counts {
    fn add(&mut self, ratings: &[Rating]) {
        self.queries += 1;
        let top = ratings.first().copied().unwrap_or(Rating::Bad);
        let top3 = &ratings[..ratings.len().min(3)];
        self.good1 += (top == Rating::Good) as usize;
        self.ok1 += top.at_least_ok() as usize;
        self.good3 += top3.contains(&Rating::Good) as usize;
        self.ok3 += top3.iter().any(|r| r.at_least_ok()) as usize;
    }

    fn metrics(&self) -> Metrics {
        let pct = |x: usize| if self.queries == 0 { 0.0 } else { 100.0 * x as f64 / self.queries as f64 };
        Metrics {
            queries: self.queries,
            good1: pct(self.good1),
            ok1: pct(self.ok1),
            good3: pct(self.good3),
            ok3: pct(self.ok3),
        }
    }
}

impl Metrics {
    /// ok-1 ≥ good-1, good-3 ≥ good-1, ok-3 ≥ ok-1 and ok-3 ≥ good-3.
    pub fn is_monotone(&self) -> bool {
        self.ok1 >= self.good1 && self.good3 >= self.good1 && self.ok3 >= self.ok1 && self.ok3 >= self.good3
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    #[serde(flatten)]
    pub overall: Metrics,
    pub per_category: BTreeMap<String, Metrics>,
}

/// Ratings of one query's returned list, best first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryOutcome {
    pub query_id: String,
    pub category: String,
    pub ratings: Vec<Rating>,
}

impl MetricReport {
    pub fn from_outcomes(outcomes: &[QueryOutcome]) -> Self {
        let mut overall = Counts::default();
        let mut cats: BTreeMap<String, Counts> = BTreeMap::new();
        for o in outcomes {
            overall.add(&o.ratings);
            cats.entry(o.category.clone()).or_default().add(&o.ratings);
        }
        let report = MetricReport {
            overall: overall.metrics(),
            per_category: cats.into_iter().map(|(k, c)| (k, c.metrics())).collect(),
        };
        debug_assert!(report.overall.is_monotone());
        report
    }
}

/// Objects returned for one query, best first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryResult {
    pub query_id: String,
    pub category: Option<String>,
    pub objects: Vec<String>,
}

fn category_of(r: &QueryResult) -> String {
    r.category.clone().unwrap_or_else(|| UNCATEGORIZED.to_string())
}

/// Rates the top three objects of every query; an unannotated pair is an error.
pub fn recognition_outcomes(results: &[QueryResult], annotations: &Annotations) -> Result<Vec<QueryOutcome>> {
    results
        .iter()
        .map(|r| {
            let ratings = r
                .objects
                .iter()
                .take(3)
                .map(|o| {
                    annotations.get(&r.query_id, o).ok_or_else(|| {
                        Error::Validation(format!("no annotation for query {} and object {o}", r.query_id))
                    })
                })
                .collect::<Result<_>>()?;
            Ok(QueryOutcome { query_id: r.query_id.clone(), category: category_of(r), ratings })
        })
        .collect()
}

pub fn evaluate_recognition(results: &[QueryResult], annotations: &Annotations) -> Result<MetricReport> {
    Ok(MetricReport::from_outcomes(&recognition_outcomes(results, annotations)?))
}

/// Rates the top tag of each of the top three objects against the name
/// table of the query's true object. An object without tags rates bad.
pub fn semantic_outcomes(results: &[QueryResult], names: &[ClusterNames], truth: &GroundTruth) -> Result<Vec<QueryOutcome>> {
    let top: BTreeMap<&str, &str> =
        names.iter().filter_map(|n| n.top().map(|t| (n.object_id.as_str(), t))).collect();
    results
        .iter()
        .map(|r| {
            let qo = truth
                .object_of(&r.query_id)
                .ok_or_else(|| Error::Validation(format!("query {} has no ground-truth object", r.query_id)))?;
            let ratings = r
                .objects
                .iter()
                .take(3)
                .map(|o| top.get(o.as_str()).map_or(Rating::Bad, |t| truth.semantic_rating(qo, t)))
                .collect();
            Ok(QueryOutcome { query_id: r.query_id.clone(), category: category_of(r), ratings })
        })
        .collect()
}

pub fn evaluate_semantics(results: &[QueryResult], names: &[ClusterNames], truth: &GroundTruth) -> Result<MetricReport> {
    Ok(MetricReport::from_outcomes(&semantic_outcomes(results, names, truth)?))
}

/// Recognition minus semantic metrics, overall and per category.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Gap {
    pub good1: f64,
    pub ok1: f64,
    pub per_category: BTreeMap<String, (f64, f64)>,
}

pub fn semantic_gap(recognition: &MetricReport, semantics: &MetricReport) -> Gap {
    Gap {
        good1: recognition.overall.good1 - semantics.overall.good1,
        ok1: recognition.overall.ok1 - semantics.overall.ok1,
        per_category: recognition
            .per_category
            .iter()
            .filter_map(|(k, r)| {
                semantics.per_category.get(k).map(|s| (k.clone(), (r.good1 - s.good1, r.ok1 - s.ok1)))
            })
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use Rating::*;

    fn outcome(id: &str, cat: &str, ratings: Vec<Rating>) -> QueryOutcome {
        QueryOutcome { query_id: id.into(), category: cat.into(), ratings }
    }

    #[test]
    fn hand_computed_report() {
        let r = MetricReport::from_outcomes(&[
            outcome("a", "x", vec![Good, Bad, Bad]),
            outcome("b", "x", vec![Bad, Bad, Bad]),
        ]);
        assert_eq!((r.overall.good1, r.overall.good3), (50.0, 50.0));
    }

    #[test]
    fn ok_then_good() {
        let r = MetricReport::from_outcomes(&[outcome("a", "x", vec![Ok, Bad, Good])]);
        assert_eq!(r.overall.good1, 0.0);
        assert_eq!((r.overall.ok1, r.overall.good3, r.overall.ok3), (100.0, 100.0, 100.0));
    }

    #[test]
    fn empty_report() {
        let r = MetricReport::from_outcomes(&[]);
        assert_eq!(r.overall, Metrics::default());
        assert!(r.per_category.is_empty());
    }

    #[test]
    fn unannotated_pair_is_an_error() {
        let mut ann = Annotations::new();
        ann.insert("q1", "obj-a", Good).unwrap();
        let res = vec![QueryResult { query_id: "q1".into(), category: None, objects: vec!["obj-a".into(), "obj-b".into()] }];
        assert!(matches!(evaluate_recognition(&res, &ann), Err(Error::Validation(_))));
        let res = vec![QueryResult { query_id: "q1".into(), category: None, objects: vec!["obj-a".into()] }];
        let r = evaluate_recognition(&res, &ann).unwrap();
        assert_eq!(r.per_category[UNCATEGORIZED].good1, 100.0);
    }

    #[test]
    fn filter_turns_non_candidates_bad() {
        let mut ann = Annotations::new();
        ann.insert("q1", "a", Good).unwrap();
        ann.insert("q1", "b", Ok).unwrap();
        ann.insert("q2", "a", Bad).unwrap();
        let groups = vec![QueryGroup { group_id: 0, members: vec!["q1".into(), "q2".into()], representative: "q1".into() }];
        let cands = vec![BTreeSet::from(["a".to_string()])];
        let (out, stats) = apply_candidate_filter(&ann, &groups, &cands);
        assert_eq!(out.get("q1", "a"), Some(Good));
        assert_eq!(out.get("q1", "b"), Some(Bad));
        assert_eq!(stats, FilterStats { positives: 2, filtered_positives: 1 });
    }

    fn rating() -> impl Strategy<Value = Rating> {
        prop_oneof![Just(Good), Just(Ok), Just(Bad)]
    }

    proptest! {
        #[test]
        fn monotone_and_category_weighted(
            rows in prop::collection::vec((0usize..4, prop::collection::vec(rating(), 0..5)), 0..40)
        ) {
            let outcomes: Vec<QueryOutcome> = rows
                .iter()
                .enumerate()
                .map(|(i, (c, r))| outcome(&format!("q{i}"), &format!("c{c}"), r.clone()))
                .collect();
            let rep = MetricReport::from_outcomes(&outcomes);
            prop_assert!(rep.overall.is_monotone());
            for m in rep.per_category.values() {
                prop_assert!(m.is_monotone());
            }
            if rep.overall.queries > 0 {
                let n = rep.overall.queries as f64;
                let w = |f: fn(&Metrics) -> f64| rep.per_category.values().map(|m| f(m) * m.queries as f64).sum::<f64>() / n;
                prop_assert!((w(|m| m.good1) - rep.overall.good1).abs() < 1e-9);
                prop_assert!((w(|m| m.ok3) - rep.overall.ok3).abs() < 1e-9);
            }
        }
    }
}
