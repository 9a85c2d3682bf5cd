//! Shared retrieval state: vocabulary, per-image tf-idf vectors and the
//! indices built from them.

use std::collections::HashMap;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::dataset::{Dataset, ImageRecord};
use crate::error::{Error, Result};
use crate::geometry::{verify_and_rerank, GeometryConfig};
use crate::index::{InvertedIndex, RankedMatch};
use crate::vocab::{build_bovw, compute_idf, train_vocab, Idf, VocabConfig, Vocabulary, WeightedBovw};

/// Up to `size` descriptors drawn uniformly without replacement from all
/// features of the dataset, in dataset order.
pub fn training_sample(dataset: &Dataset, size: usize, seed: u64) -> Vec<&[f32]> {
    let all: Vec<&[f32]> = dataset
        .images()
        .iter()
        .flat_map(|r| r.features.iter().map(|f| f.descriptor.as_slice()))
        .collect();
    if all.len() <= size {
        return all;
    }
    let mut picks = sample(&mut ChaCha8Rng::seed_from_u64(seed), all.len(), size).into_vec();
    picks.sort_unstable();
    picks.into_iter().map(|i| all[i]).collect()
}

pub fn train_dataset_vocab(dataset: &Dataset, config: &VocabConfig) -> Result<Vocabulary> {
    let sample = training_sample(dataset, config.sample_size, config.seed);
    train_vocab(&sample, config)
}

pub fn quantize_record(vocab: &Vocabulary, record: &ImageRecord) -> Result<Vec<u32>> {
    let descs: Vec<&[f32]> = record.features.iter().map(|f| f.descriptor.as_slice()).collect();
    vocab.quantize(&descs)
}

/// Tf-idf vectors of every database image, aligned with dataset order.
#[derive(Debug, Clone)]
pub struct BovwCorpus {
    pub idf: Idf,
    pub bovws: Vec<WeightedBovw>,
    lookup: HashMap<String, usize>,
    ids: Vec<String>,
}

impl BovwCorpus {
    pub fn build(dataset: &Dataset, vocab: &Vocabulary) -> Result<Self> {
        let words: Vec<Vec<u32>> = dataset
            .images()
            .par_iter()
            .map(|r| quantize_record(vocab, r))
            .collect::<Result<_>>()?;
        let idf = compute_idf(&words, vocab.k())?;
        let bovws = words.iter().map(|w| build_bovw(w, &idf)).collect();
        let ids: Vec<String> = dataset.images().iter().map(|r| r.image_id.clone()).collect();
        let lookup = ids.iter().enumerate().map(|(i, id)| (id.clone(), i)).collect();
        Ok(BovwCorpus { idf, bovws, lookup, ids })
    }

    pub fn get(&self, image_id: &str) -> Option<&WeightedBovw> {
        self.lookup.get(image_id).map(|&i| &self.bovws[i])
    }

    pub fn index_all(&self) -> Result<InvertedIndex> {
        InvertedIndex::build(self.idf.clone(), self.ids.iter().cloned().zip(self.bovws.iter().cloned()).collect())
    }

    /// Index over a subset of the images, keeping the full-corpus idf.
    pub fn index_subset<'a>(&self, image_ids: impl IntoIterator<Item = &'a str>) -> Result<InvertedIndex> {
        let docs = image_ids
            .into_iter()
            .map(|id| {
                self.get(id)
                    .map(|b| (id.to_string(), b.clone()))
                    .ok_or_else(|| Error::validation(format!("image {id} is not in the corpus")))
            })
            .collect::<Result<Vec<_>>>()?;
        InvertedIndex::build(self.idf.clone(), docs)
    }
}

/// Retrieval followed by spatial verification of the top `verify_depth`.
pub fn retrieve(
    query: &ImageRecord,
    vocab: &Vocabulary,
    index: &InvertedIndex,
    dataset: &Dataset,
    geometry: &GeometryConfig,
) -> Result<Vec<RankedMatch>> {
    let q = build_bovw(&quantize_record(vocab, query)?, index.idf());
    let ranked = index.query(&q, geometry.verify_depth);
    Ok(verify_and_rerank(&query.features, ranked, dataset, geometry))
}
