//! End-to-end orchestration over in-memory data, shared by the command-line
//! driver and the test suites.

use std::collections::BTreeMap;
use std::path::PathBuf;

use log::info;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::compaction::{apply_kept, random_matching, reduce_clusters, CompactionConfig, CompactionMethod, TradeoffRow};
use crate::dataset::{Annotations, Dataset, ImageRecord};
use crate::engine::{train_dataset_vocab, BovwCorpus};
use crate::error::{Error, Result};
use crate::eval::{
    apply_candidate_filter, candidate_filter, cluster_annotations, evaluate_recognition, evaluate_semantics,
    group_queries, semantic_gap, EvalConfig, FilterStats, Gap, MetricReport, QueryResult,
};
use crate::geometry::GeometryConfig;
use crate::graph::{build_graph, MatchingGraph};
use crate::iconoid::{run_clustering, IconoidShiftConfig, ObjectCluster};
use crate::index::InvertedIndex;
use crate::recognition::{Recognizer, ScoringMethod};
use crate::synth::{GeneratorConfig, GroundTruth};
use crate::tags::{name_clusters, ClusterNames, TagConfig};
use crate::vocab::{VocabConfig, Vocabulary};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Synthesize the dataset; exclusive with `path`.
    pub generator: Option<GeneratorConfig>,
    pub generator_seed: u64,
    /// Directory holding an ingestible dataset.
    pub path: Option<PathBuf>,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig { generator: Some(GeneratorConfig::default()), generator_seed: 0, path: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GraphConfig {
    /// Retrieval results verified per image.
    pub depth: usize,
}

impl Default for GraphConfig {
    fn default() -> Self {
        GraphConfig { depth: 100 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RecognitionConfig {
    pub method: ScoringMethod,
    pub top_k: usize,
}

impl Default for RecognitionConfig {
    fn default() -> Self {
        RecognitionConfig { method: ScoringMethod::Voting, top_k: 3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    /// Ascending.
    pub seed_counts: Vec<usize>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig { seed_counts: vec![10, 30, 100, 300, 1000] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TradeoffConfig {
    /// Inlier thresholds for complete-link and dominating-set, and radii for KVQ.
    pub thresholds: Vec<usize>,
    pub fine_betas: Vec<f64>,
    pub methods: Vec<CompactionMethod>,
}

impl Default for TradeoffConfig {
    fn default() -> Self {
        TradeoffConfig {
            thresholds: vec![15, 30, 50],
            fine_betas: vec![0.7],
            methods: vec![
                CompactionMethod::CompleteLink,
                CompactionMethod::Kvq,
                CompactionMethod::DominatingSet,
                CompactionMethod::FineIconoids,
            ],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub data: DataConfig,
    pub vocab: VocabConfig,
    pub geometry: GeometryConfig,
    pub graph: GraphConfig,
    pub clustering: IconoidShiftConfig,
    pub sweep: SweepConfig,
    pub recognition: RecognitionConfig,
    pub compaction: CompactionConfig,
    pub tradeoff: TradeoffConfig,
    pub tags: TagConfig,
    pub evaluation: EvalConfig,
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        match (&self.data.generator, &self.data.path) {
            (Some(g), None) => g.validate()?,
            (None, Some(_)) => {}
            _ => return Err(Error::validation("data needs exactly one of `generator` and `path`")),
        }
        self.geometry.validate()?;
        self.clustering.validate()?;
        self.compaction.validate()?;
        if self.recognition.top_k == 0 {
            return Err(Error::validation("recognition.top_k must be positive"));
        }
        if self.sweep.seed_counts.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::validation("sweep.seed_counts must be ascending"));
        }
        Ok(())
    }

    /// Sets the seed of every stochastic stage.
    pub fn with_rng_seed(mut self, seed: u64) -> Self {
        self.data.generator_seed = seed;
        self.vocab.seed = seed;
        self.geometry.ransac_seed = seed;
        self.clustering.rng_seed = seed;
        self.compaction.rng_seed = seed;
        self
    }

    /// Clustering used by fine-iconoid compaction.
    pub fn fine_clustering(&self, beta: f64) -> IconoidShiftConfig {
        IconoidShiftConfig { beta, min_support: 1, ..self.clustering.clone() }
    }
}

/// Vocabulary, database vectors and the full index.
pub struct Retrieval {
    pub vocab: Vocabulary,
    pub corpus: BovwCorpus,
    pub index: InvertedIndex,
}

pub fn build_retrieval(dataset: &Dataset, config: &VocabConfig) -> Result<Retrieval> {
    let vocab = train_dataset_vocab(dataset, config)?;
    let corpus = BovwCorpus::build(dataset, &vocab)?;
    let index = corpus.index_all()?;
    Ok(Retrieval { vocab, corpus, index })
}

/// Everything derived from the database before any query is seen.
pub struct Model {
    pub retrieval: Retrieval,
    pub graph: MatchingGraph,
    pub clusters: Vec<ObjectCluster>,
}

impl Model {
    pub fn build(dataset: &Dataset, config: &PipelineConfig) -> Result<Self> {
        let retrieval = build_retrieval(dataset, &config.vocab)?;
        info!("vocabulary of {} words over {} images", retrieval.vocab.k(), dataset.len());
        let graph = build_graph(dataset, &retrieval.index, &retrieval.corpus.bovws, &config.geometry, config.graph.depth)?;
        info!("matching graph with {} edges", graph.edges().len());
        let clusters = run_clustering(&graph, &config.clustering)?;
        info!("{} clusters", clusters.len());
        Ok(Model { retrieval, graph, clusters })
    }

    pub fn reportable(&self) -> Vec<ObjectCluster> {
        self.clusters.iter().filter(|c| c.reportable).cloned().collect()
    }

    pub fn recognizer<'a>(
        &'a self,
        dataset: &'a Dataset,
        clusters: Vec<ObjectCluster>,
        config: &PipelineConfig,
    ) -> Result<Recognizer<'a>> {
        Recognizer::new(
            dataset,
            &self.retrieval.vocab,
            &self.retrieval.corpus,
            &self.graph,
            clusters,
            &config.geometry,
            config.clustering.overlap_mode,
        )
    }
}

pub fn recognize_queries(
    recognizer: &Recognizer,
    queries: &[ImageRecord],
    method: ScoringMethod,
    k: usize,
) -> Result<Vec<QueryResult>> {
    queries
        .par_iter()
        .map(|q| {
            let scores = recognizer.recognize(q, method, k)?;
            Ok(QueryResult {
                query_id: q.image_id.clone(),
                category: q.category.clone(),
                objects: scores.into_iter().map(|s| s.object_id).collect(),
            })
        })
        .collect()
}

/// Annotations after the pre-filter, with its statistics.
pub fn filtered_annotations(
    annotations: &Annotations,
    queries: &[ImageRecord],
    recognizer: &Recognizer,
    geometry: &GeometryConfig,
    config: &EvalConfig,
) -> Result<(Annotations, FilterStats, usize)> {
    let groups = group_queries(queries, geometry, config);
    if !config.candidate_filter {
        return Ok((annotations.clone(), FilterStats::default(), groups.len()));
    }
    let candidates = groups
        .par_iter()
        .map(|g| candidate_filter(g, queries, recognizer))
        .collect::<Result<Vec<_>>>()?;
    let (out, stats) = apply_candidate_filter(annotations, &groups, &candidates);
    Ok((out, stats, groups.len()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EndToEndReport {
    pub images: usize,
    pub queries: usize,
    pub query_groups: usize,
    pub graph_edges: usize,
    pub clusters: usize,
    pub reportable_clusters: usize,
    pub filter: FilterStats,
    pub recognition: BTreeMap<String, MetricReport>,
    pub semantic_method: ScoringMethod,
    pub semantics: MetricReport,
    /// Recognition minus semantics for the semantic method.
    pub gap: Gap,
    pub names: Vec<ClusterNames>,
}

/// Clusters, names, recognizes every query with every scoring method and
/// evaluates recognition and semantics against ground truth.
pub fn end_to_end(
    dataset: &Dataset,
    queries: &[ImageRecord],
    truth: &GroundTruth,
    config: &PipelineConfig,
) -> Result<EndToEndReport> {
    let model = Model::build(dataset, config)?;
    evaluate_model(&model, dataset, queries, truth, config)
}

pub fn evaluate_model(
    model: &Model,
    dataset: &Dataset,
    queries: &[ImageRecord],
    truth: &GroundTruth,
    config: &PipelineConfig,
) -> Result<EndToEndReport> {
    let reportable = model.reportable();
    let names = name_clusters(&reportable, dataset, &config.tags);
    let recognizer = model.recognizer(dataset, reportable.clone(), config)?;
    let annotations = cluster_annotations(truth, queries, &reportable)?;
    let (annotations, filter, query_groups) =
        filtered_annotations(&annotations, queries, &recognizer, &config.geometry, &config.evaluation)?;
    let mut recognition = BTreeMap::new();
    let mut semantic_results = Vec::new();
    for method in ScoringMethod::ALL {
        let results = recognize_queries(&recognizer, queries, method, config.recognition.top_k)?;
        recognition.insert(method.name().to_string(), evaluate_recognition(&results, &annotations)?);
        if method == config.recognition.method {
            semantic_results = results;
        }
    }
    let semantics = evaluate_semantics(&semantic_results, &names, truth)?;
    let gap = semantic_gap(&recognition[config.recognition.method.name()], &semantics);
    Ok(EndToEndReport {
        images: dataset.len(),
        queries: queries.len(),
        query_groups,
        graph_edges: model.graph.edges().len(),
        clusters: model.clusters.len(),
        reportable_clusters: reportable.len(),
        filter,
        recognition,
        semantic_method: config.recognition.method,
        semantics,
        gap,
        names,
    })
}

/// One compaction run with its evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TradeoffEntry {
    pub row: TradeoffRow,
    pub report: MetricReport,
}

fn evaluate_compaction(
    model: &Model,
    dataset: &Dataset,
    queries: &[ImageRecord],
    annotations: &Annotations,
    clusters: Vec<ObjectCluster>,
    method: CompactionMethod,
    param: f64,
    original: usize,
    config: &PipelineConfig,
) -> Result<TradeoffEntry> {
    let kept: usize = clusters.iter().map(ObjectCluster::size).sum();
    let recognizer = model.recognizer(dataset, clusters, config)?;
    let results = recognize_queries(&recognizer, queries, config.recognition.method, config.recognition.top_k)?;
    let report = evaluate_recognition(&results, annotations)?;
    let m = report.overall;
    Ok(TradeoffEntry {
        row: TradeoffRow {
            method,
            param,
            kept,
            kept_fraction: if original == 0 { 0.0 } else { kept as f64 / original as f64 },
            index_size: recognizer.index().size(),
            good1: m.good1,
            ok1: m.ok1,
            good3: m.good3,
            ok3: m.ok3,
        },
        report,
    })
}

/// Evaluates every configured compaction run next to a random reduction
/// keeping the same number of members per cluster. Rows come in pairs:
/// the method, then its random match. The first row is the uncompacted index.
pub fn compaction_tradeoff(
    model: &Model,
    dataset: &Dataset,
    queries: &[ImageRecord],
    annotations: &Annotations,
    config: &PipelineConfig,
) -> Result<Vec<TradeoffEntry>> {
    let reportable = model.reportable();
    let original: usize = reportable.iter().map(ObjectCluster::size).sum();
    let mut runs: Vec<CompactionConfig> = Vec::new();
    for &method in &config.tradeoff.methods {
        let base = CompactionConfig { method, ..config.compaction.clone() };
        match method {
            CompactionMethod::CompleteLink | CompactionMethod::DominatingSet => {
                runs.extend(config.tradeoff.thresholds.iter().map(|&t| CompactionConfig { threshold: t, ..base.clone() }))
            }
            CompactionMethod::Kvq => {
                runs.extend(config.tradeoff.thresholds.iter().map(|&r| CompactionConfig { radius: r, ..base.clone() }))
            }
            CompactionMethod::FineIconoids => {
                runs.extend(config.tradeoff.fine_betas.iter().map(|&b| CompactionConfig { fine_beta: b, ..base.clone() }))
            }
            CompactionMethod::Random | CompactionMethod::None => runs.push(base),
        }
    }
    let mut fine_cache: BTreeMap<u64, Vec<ObjectCluster>> = BTreeMap::new();
    let mut out = vec![evaluate_compaction(
        model,
        dataset,
        queries,
        annotations,
        reportable.clone(),
        CompactionMethod::None,
        1.0,
        original,
        config,
    )?];
    for run in runs {
        let fine = if run.method == CompactionMethod::FineIconoids {
            let key = run.fine_beta.to_bits();
            if !fine_cache.contains_key(&key) {
                fine_cache.insert(key, run_clustering(&model.graph, &config.fine_clustering(run.fine_beta))?);
            }
            fine_cache.get(&key).map(|v| &v[..])
        } else {
            None
        };
        let kept = reduce_clusters(&reportable, &model.graph, &run, fine)?;
        info!("compaction {} {}", run.method.name(), run.param());
        out.push(evaluate_compaction(
            model,
            dataset,
            queries,
            annotations,
            apply_kept(&reportable, &kept),
            run.method,
            run.param(),
            original,
            config,
        )?);
        if run.method != CompactionMethod::Random {
            let random = random_matching(&reportable, &kept, run.rng_seed);
            out.push(evaluate_compaction(
                model,
                dataset,
                queries,
                annotations,
                apply_kept(&reportable, &random),
                CompactionMethod::Random,
                run.param(),
                original,
                config,
            )?);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_rejects_unknown_keys() {
        let err = serde_json::from_str::<PipelineConfig>(r#"{"vocab": {"k": 10, "kk": 1}}"#);
        assert!(err.is_err());
        let err = serde_json::from_str::<PipelineConfig>(r#"{"extra": 1}"#);
        assert!(err.is_err());
        let ok: PipelineConfig = serde_json::from_str(r#"{"vocab": {"k": 10}}"#).unwrap();
        assert_eq!(ok.vocab.k, 10);
        ok.validate().unwrap();
    }

    #[test]
    fn data_source_is_exclusive() {
        let mut c = PipelineConfig::default();
        c.data.path = Some("x".into());
        assert!(matches!(c.validate(), Err(Error::Validation(_))));
        c.data.generator = None;
        c.validate().unwrap();
    }

    #[test]
    fn rng_seed_reaches_every_stage() {
        let c = PipelineConfig::default().with_rng_seed(42);
        assert_eq!(
            [c.data.generator_seed, c.vocab.seed, c.geometry.ransac_seed, c.clustering.rng_seed, c.compaction.rng_seed],
            [42; 5]
        );
    }
}
