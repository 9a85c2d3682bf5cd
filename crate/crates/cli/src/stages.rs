use std::fs;
use std::io::Write;
use std::path::Path;

use anyhow::{Context as _, Result};
use log::info;
use lmrec_core::compaction::{reduce_clusters, save_kept, write_tradeoff, CompactionMethod, KEPT_FILE, TRADEOFF_FILE};
use lmrec_core::dataset::{read_annotations, write_annotations, Dataset, MANIFEST_FILE};
use lmrec_core::engine::{quantize_record, train_dataset_vocab, BovwCorpus};
use lmrec_core::eval::{cluster_annotations, evaluate_recognition, REPORT_FILE};
use lmrec_core::graph::{build_graph, MatchingGraph, GRAPH_FILE};
use lmrec_core::iconoid::{load_clusters, run_clustering, save_clusters, seed_sweep, ObjectCluster, CLUSTERS_FILE};
use lmrec_core::index::{InvertedIndex, INDEX_FILE};
use lmrec_core::pipeline::{
    compaction_tradeoff, evaluate_model, recognize_queries, Model, PipelineConfig, Retrieval,
};
use lmrec_core::synth::{generate_dataset, GroundTruth, ANNOTATIONS_FILE, GROUND_TRUTH_FILE, QUERY_DIR};
use lmrec_core::tags::{name_clusters, write_tags, TAGS_FILE};
use lmrec_core::vocab::{build_bovw, Vocabulary, VOCAB_FILE};
use lmrec_core::Error;
use serde::Serialize;

use crate::artifacts::{sha256_hex, RunDir, DATASET_DIR, RECOGNITIONS_FILE, SWEEP_FILE};
use crate::{CompactArgs, Command, EvaluateArgs, IndexArgs, RecognizeArgs};

pub struct Context {
    config: PipelineConfig,
    run: RunDir,
}

fn load_config(path: Option<&Path>) -> Result<PipelineConfig> {
    let Some(path) = path else {
        return Ok(PipelineConfig::default());
    };
    let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    let parsed = if path.extension().is_some_and(|e| e == "json") {
        serde_json::from_str(&text).map_err(|e| e.to_string())
    } else {
        toml::from_str(&text).map_err(|e| e.to_string())
    };
    parsed.map_err(|e| Error::validation(format!("config {}: {e}", path.display())).into())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(Error::from)?;
    bytes.push(b'\n');
    fs::write(path, bytes)?;
    Ok(())
}

fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = std::io::BufWriter::new(fs::File::create(path)?);
    for r in rows {
        serde_json::to_writer(&mut w, r).map_err(Error::from)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

impl Context {
    pub fn new(config: Option<&Path>, out: &Path, rng_seed: Option<u64>) -> Result<Self> {
        let mut config = load_config(config)?;
        if let Some(seed) = rng_seed {
            config = config.with_rng_seed(seed);
        }
        config.validate()?;
        let digest = sha256_hex(&serde_json::to_vec(&config).map_err(Error::from)?);
        info!("config digest {digest}");
        Ok(Context { config, run: RunDir::open(out, digest)? })
    }

    pub fn run(&mut self, command: &Command) -> Result<()> {
        match command {
            Command::Generate => self.generate(),
            Command::Ingest { path } => self.ingest(path.as_deref()),
            Command::Vocab => self.vocab(),
            Command::Index(args) => self.index(args),
            Command::Graph { min_inliers } => self.graph(*min_inliers),
            Command::Cluster { beta, seeds } => self.cluster(*beta, *seeds),
            Command::SeedsSweep => self.seeds_sweep(),
            Command::Compact(args) => self.compact(args),
            Command::Tags => self.tags(),
            Command::Recognize(args) => self.recognize(args),
            Command::Evaluate(args) => self.evaluate(args),
            Command::EndToEnd => self.end_to_end(),
        }
    }

    fn data_stage(&self) -> &'static str {
        if self.config.data.generator.is_some() {
            "generate"
        } else {
            "ingest"
        }
    }

    fn dataset(&self) -> Result<Dataset> {
        let stage = self.data_stage();
        self.run.input(&format!("{DATASET_DIR}/{MANIFEST_FILE}"), stage)?;
        Ok(Dataset::load(&self.run.dataset_dir())?)
    }

    fn queries(&self) -> Result<Dataset> {
        let stage = self.data_stage();
        self.run.input(&format!("{DATASET_DIR}/{QUERY_DIR}/{MANIFEST_FILE}"), stage)?;
        Ok(Dataset::load(&self.run.dataset_dir().join(QUERY_DIR))?)
    }

    fn truth(&self) -> Result<GroundTruth> {
        let path = self.run.input(&format!("{DATASET_DIR}/{GROUND_TRUTH_FILE}"), self.data_stage())?;
        Ok(GroundTruth::load(&path)?)
    }

    fn load_vocab(&self) -> Result<Vocabulary> {
        Ok(Vocabulary::load(&self.run.input(VOCAB_FILE, "vocab")?)?)
    }

    fn load_index(&self) -> Result<InvertedIndex> {
        Ok(InvertedIndex::load(&self.run.input(INDEX_FILE, "index")?)?)
    }

    fn load_graph(&self) -> Result<MatchingGraph> {
        Ok(MatchingGraph::load(&self.run.input(GRAPH_FILE, "graph")?)?)
    }

    fn load_clusters(&self) -> Result<Vec<ObjectCluster>> {
        Ok(load_clusters(&self.run.input(CLUSTERS_FILE, "cluster")?)?)
    }

    /// Model assembled from stored artifacts; the index is checked first.
    fn model(&self, dataset: &Dataset) -> Result<Model> {
        let index = self.load_index()?;
        let vocab = self.load_vocab()?;
        let graph = self.load_graph()?;
        let clusters = self.load_clusters()?;
        let corpus = BovwCorpus::build(dataset, &vocab)?;
        Ok(Model { retrieval: Retrieval { vocab, corpus, index }, graph, clusters })
    }

    fn generate(&mut self) -> Result<()> {
        let generator = self
            .config
            .data
            .generator
            .as_ref()
            .ok_or_else(|| Error::validation("`generate` needs data.generator in the config"))?;
        info!("generating with seed {}", self.config.data.generator_seed);
        let data = generate_dataset(generator, self.config.data.generator_seed)?;
        let dir = self.run.dataset_dir();
        if dir.exists() {
            fs::remove_dir_all(&dir)?;
        }
        data.save(&dir)?;
        println!("generated {} images and {} queries", data.dataset.len(), data.queries.len());
        self.run.record("generate", DATASET_DIR)
    }

    fn ingest(&mut self, path: Option<&Path>) -> Result<()> {
        let src = path
            .map(Path::to_path_buf)
            .or_else(|| self.config.data.path.clone())
            .ok_or_else(|| Error::validation("`ingest` needs --path or data.path in the config"))?;
        let dataset = Dataset::load(&src)?;
        let dir = self.run.dataset_dir();
        if dir.exists() {
            fs::remove_dir_all(&dir)?;
        }
        dataset.save(&dir)?;
        if src.join(QUERY_DIR).join(MANIFEST_FILE).exists() {
            Dataset::load(&src.join(QUERY_DIR))?.save(&dir.join(QUERY_DIR))?;
        }
        if src.join(GROUND_TRUTH_FILE).exists() {
            GroundTruth::load(&src.join(GROUND_TRUTH_FILE))?.save(&dir.join(GROUND_TRUTH_FILE))?;
        }
        if src.join(ANNOTATIONS_FILE).exists() {
            write_annotations(&dir.join(ANNOTATIONS_FILE), &read_annotations(&src.join(ANNOTATIONS_FILE))?)?;
        }
        println!("ingested {} images from {}", dataset.len(), src.display());
        self.run.record("ingest", DATASET_DIR)
    }

    fn vocab(&mut self) -> Result<()> {
        let dataset = self.dataset()?;
        let vocab = train_dataset_vocab(&dataset, &self.config.vocab)?;
        vocab.save(&self.run.path(VOCAB_FILE))?;
        println!("vocabulary of {} words", vocab.k());
        self.run.record("vocab", VOCAB_FILE)
    }

    fn index(&mut self, args: &IndexArgs) -> Result<()> {
        if let Some(id) = &args.query {
            let index = self.load_index()?;
            let vocab = self.load_vocab()?;
            let dataset = self.dataset()?;
            let record = match dataset.get(id) {
                Some(r) => r.clone(),
                None => self
                    .queries()?
                    .get(id)
                    .cloned()
                    .ok_or_else(|| Error::validation(format!("no image or query with id {id:?}")))?,
            };
            let q = build_bovw(&quantize_record(&vocab, &record)?, index.idf());
            for (rank, m) in index.query(&q, args.top_k).iter().enumerate() {
                println!("{}\t{}\t{:.6}", rank + 1, m.image_id, m.tfidf_score);
            }
            return Ok(());
        }
        let dataset = self.dataset()?;
        let vocab = self.load_vocab()?;
        let index = BovwCorpus::build(&dataset, &vocab)?.index_all()?;
        index.save(&self.run.path(INDEX_FILE))?;
        println!("indexed {} images, {} postings", index.len(), index.size());
        self.run.record("index", INDEX_FILE)
    }

    fn graph(&mut self, min_inliers: Option<usize>) -> Result<()> {
        let graph = if let Some(m) = min_inliers {
            self.load_graph()?.prune_edges(m)
        } else {
            let dataset = self.dataset()?;
            let index = self.load_index()?;
            let vocab = self.load_vocab()?;
            let corpus = BovwCorpus::build(&dataset, &vocab)?;
            build_graph(&dataset, &index, &corpus.bovws, &self.config.geometry, self.config.graph.depth)?
        };
        graph.save(&self.run.path(GRAPH_FILE))?;
        println!("matching graph: {} images, {} edges", graph.len(), graph.edges().len());
        self.run.record("graph", GRAPH_FILE)
    }

    fn cluster(&mut self, beta: Option<f64>, seeds: Option<usize>) -> Result<()> {
        let graph = self.load_graph()?;
        let mut cfg = self.config.clustering.clone();
        cfg.beta = beta.unwrap_or(cfg.beta);
        cfg.seeds = seeds.unwrap_or(cfg.seeds);
        let clusters = run_clustering(&graph, &cfg)?;
        save_clusters(&self.run.path(CLUSTERS_FILE), &clusters)?;
        let reportable = clusters.iter().filter(|c| c.reportable).count();
        println!("{} clusters, {reportable} reportable", clusters.len());
        self.run.record("cluster", CLUSTERS_FILE)
    }

    fn seeds_sweep(&mut self) -> Result<()> {
        let dataset = self.dataset()?;
        let graph = self.load_graph()?;
        let rows = seed_sweep(&dataset, &graph, &self.config.clustering, &self.config.sweep.seed_counts)?;
        write_jsonl(&self.run.path(SWEEP_FILE), &rows)?;
        println!("seeds\tclusters\treportable\tcovered");
        for r in &rows {
            println!("{}\t{}\t{}\t{}", r.seeds, r.clusters, r.reportable_clusters, r.images_covered);
        }
        self.run.record("seeds-sweep", SWEEP_FILE)
    }

    fn compact(&mut self, args: &CompactArgs) -> Result<()> {
        let graph = self.load_graph()?;
        let clusters: Vec<ObjectCluster> = self.load_clusters()?.into_iter().filter(|c| c.reportable).collect();
        let mut cfg = self.config.compaction.clone();
        cfg.method = args.method.unwrap_or(cfg.method);
        if let Some(t) = args.threshold {
            cfg.threshold = t;
            cfg.radius = t;
        }
        let fine = (cfg.method == CompactionMethod::FineIconoids)
            .then(|| run_clustering(&graph, &self.config.fine_clustering(cfg.fine_beta)))
            .transpose()?;
        let kept = reduce_clusters(&clusters, &graph, &cfg, fine.as_deref())?;
        save_kept(&self.run.path(KEPT_FILE), &kept)?;
        let (before, after): (usize, usize) = kept.iter().fold((0, 0), |(b, a), k| (b + k.original, a + k.kept.len()));
        println!("{} {}: kept {after} of {before} images", cfg.method.name(), cfg.param());
        self.run.record("compact", KEPT_FILE)?;
        if args.tradeoff {
            let dataset = self.dataset()?;
            let queries = self.queries()?;
            let truth = self.truth()?;
            let model = Model { graph, ..self.model(&dataset)? };
            let annotations = cluster_annotations(&truth, queries.images(), &model.reportable())?;
            let entries = compaction_tradeoff(&model, &dataset, queries.images(), &annotations, &self.config)?;
            let rows: Vec<_> = entries.into_iter().map(|e| e.row).collect();
            write_tradeoff(&self.run.path(TRADEOFF_FILE), &rows)?;
            println!("tradeoff: {} runs", rows.len());
            self.run.record("compact", TRADEOFF_FILE)?;
        }
        Ok(())
    }

    fn tags(&mut self) -> Result<()> {
        let dataset = self.dataset()?;
        let clusters: Vec<ObjectCluster> = self.load_clusters()?.into_iter().filter(|c| c.reportable).collect();
        let names = name_clusters(&clusters, &dataset, &self.config.tags);
        write_tags(&self.run.path(TAGS_FILE), &names)?;
        for n in &names {
            println!("{}\t{}", n.object_id, n.tags.iter().map(|t| t.tag.as_str()).collect::<Vec<_>>().join(", "));
        }
        self.run.record("tags", TAGS_FILE)
    }

    fn recognize(&mut self, args: &RecognizeArgs) -> Result<()> {
        let method = args.method.unwrap_or(self.config.recognition.method);
        let k = args.top_k.unwrap_or(self.config.recognition.top_k);
        // The index is the stage recognition depends on most directly.
        self.load_index()?;
        let dataset = self.dataset()?;
        let model = self.model(&dataset)?;
        let queries = match &args.queries {
            Some(dir) => Dataset::load(dir)?,
            None => self.queries()?,
        };
        let recognizer = model.recognizer(&dataset, model.reportable(), &self.config)?;
        let mut rows = Vec::new();
        for q in queries.images() {
            let scores = recognizer.recognize(q, method, k)?;
            for s in &scores {
                println!("{}\t{}\t{}\t{:.6}\t{}", q.image_id, s.rank, s.object_id, s.score, s.verified);
            }
            rows.push(serde_json::json!({ "query_id": q.image_id, "objects": scores }));
        }
        write_jsonl(&self.run.path(RECOGNITIONS_FILE), &rows)?;
        self.run.record("recognize", RECOGNITIONS_FILE)
    }

    fn evaluate(&mut self, args: &EvaluateArgs) -> Result<()> {
        let mut config = self.config.clone();
        config.recognition.method = args.method.unwrap_or(config.recognition.method);
        let dataset = self.dataset()?;
        let model = self.model(&dataset)?;
        let queries = self.queries()?;
        let path = self.run.path(REPORT_FILE);
        if let Some(annotations) = &args.annotations {
            let annotations = read_annotations(annotations)?;
            let recognizer = model.recognizer(&dataset, model.reportable(), &config)?;
            let results =
                recognize_queries(&recognizer, queries.images(), config.recognition.method, config.recognition.top_k)?;
            let report = evaluate_recognition(&results, &annotations)?;
            println!(
                "{}: good-1 {:.1} ok-1 {:.1} good-3 {:.1} ok-3 {:.1}",
                config.recognition.method, report.overall.good1, report.overall.ok1, report.overall.good3, report.overall.ok3
            );
            write_json(&path, &report)?;
        } else {
            let truth = self.truth()?;
            let report = evaluate_model(&model, &dataset, queries.images(), &truth, &config)?;
            for (method, r) in &report.recognition {
                println!(
                    "{method}: good-1 {:.1} ok-1 {:.1} good-3 {:.1} ok-3 {:.1}",
                    r.overall.good1, r.overall.ok1, r.overall.good3, r.overall.ok3
                );
            }
            let s = &report.semantics.overall;
            println!("semantic ({}): good-1 {:.1} ok-1 {:.1} good-3 {:.1} ok-3 {:.1}", report.semantic_method, s.good1, s.ok1, s.good3, s.ok3);
            write_json(&path, &report)?;
        }
        self.run.record("evaluate", REPORT_FILE)
    }

    fn end_to_end(&mut self) -> Result<()> {
        if self.config.data.generator.is_some() {
            self.generate()?;
        } else {
            self.ingest(None)?;
        }
        self.vocab()?;
        self.index(&IndexArgs { query: None, top_k: 0 })?;
        self.graph(None)?;
        self.cluster(None, None)?;
        self.seeds_sweep()?;
        let has_truth = self.run.path(DATASET_DIR).join(GROUND_TRUTH_FILE).exists();
        self.compact(&CompactArgs { method: None, threshold: None, tradeoff: has_truth })?;
        self.tags()?;
        self.recognize(&RecognizeArgs { method: None, top_k: None, queries: None })?;
        let annotations = (!has_truth).then(|| self.run.path(DATASET_DIR).join(ANNOTATIONS_FILE));
        self.evaluate(&EvaluateArgs { method: None, annotations })
    }
}
