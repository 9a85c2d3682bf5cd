use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Inverse document frequencies, `ln(N / n_w)`, zero for unseen words.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Idf {
    pub corpus_size: usize,
    pub weights: Vec<f64>,
}

impl Idf {
    pub fn get(&self, w: u32) -> f64 {
        self.weights.get(w as usize).copied().unwrap_or(0.0)
    }

    pub fn k(&self) -> usize {
        self.weights.len()
    }
}

/// `corpus` holds the word ids of each image; `k` is the vocabulary size.
pub fn compute_idf<W: AsRef<[u32]>>(corpus: &[W], k: usize) -> Result<Idf> {
    if corpus.is_empty() {
        return Err(Error::Precondition("idf needs a non-empty corpus".into()));
    }
    let mut df = vec![0usize; k];
    let mut seen = vec![usize::MAX; k];
    for (i, words) in corpus.iter().enumerate() {
        for &w in words.as_ref() {
            let w = w as usize;
            if w >= k {
                return Err(Error::Validation(format!("word id {w} outside vocabulary of size {k}")));
            }
            if seen[w] != i {
                seen[w] = i;
                df[w] += 1;
            }
        }
    }
    let n = corpus.len() as f64;
    let weights = df
        .iter()
        .map(|&c| if c == 0 { 0.0 } else { (n / c as f64).ln() })
        .collect();
    Ok(Idf { corpus_size: corpus.len(), weights })
}

/// Sparse, L2-normalized tf-idf vector sorted by word id. Words with zero
/// weight are omitted.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct WeightedBovw {
    pub entries: Vec<(u32, f64)>,
}

impl WeightedBovw {
    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn weight(&self, w: u32) -> f64 {
        self.entries
            .binary_search_by_key(&w, |e| e.0)
            .map(|i| self.entries[i].1)
            .unwrap_or(0.0)
    }

    /// Sparse dot product.
    pub fn dot(&self, other: &WeightedBovw) -> f64 {
        let (mut i, mut j, mut s) = (0, 0, 0.0);
        while i < self.entries.len() && j < other.entries.len() {
            let (a, b) = (self.entries[i], other.entries[j]);
            match a.0.cmp(&b.0) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    s += a.1 * b.1;
                    i += 1;
                    j += 1;
                }
            }
        }
        s
    }
}

pub fn build_bovw(words: &[u32], idf: &Idf) -> WeightedBovw {
    if words.is_empty() {
        return WeightedBovw::default();
    }
    let mut sorted = words.to_vec();
    sorted.sort_unstable();
    let total = words.len() as f64;
    let mut entries = Vec::new();
    let mut i = 0;
    while i < sorted.len() {
        let w = sorted[i];
        let mut j = i;
        while j < sorted.len() && sorted[j] == w {
            j += 1;
        }
        let weight = (j - i) as f64 / total * idf.get(w);
        if weight > 0.0 {
            entries.push((w, weight));
        }
        i = j;
    }
    let norm = entries.iter().map(|e| e.1 * e.1).sum::<f64>().sqrt();
    if norm > 0.0 {
        for e in &mut entries {
            e.1 /= norm;
        }
    }
    WeightedBovw { entries }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn ubiquitous_word_has_zero_idf() {
        let idf = compute_idf(&[vec![0, 1], vec![0], vec![0, 2]], 4).unwrap();
        assert_eq!(idf.get(0), 0.0);
        assert_eq!(idf.get(3), 0.0);
    }

    #[test]
    fn toy_corpus_by_hand() {
        let idf = compute_idf(&[vec![0, 1, 1], vec![1, 2], vec![2, 2, 2]], 3).unwrap();
        let expect = [3f64.ln(), 1.5f64.ln(), 1.5f64.ln()];
        for (w, e) in expect.iter().enumerate() {
            assert!((idf.get(w as u32) - e).abs() < 1e-15);
        }
    }

    #[test]
    fn one_in_e_is_about_one() {
        let corpus: Vec<Vec<u32>> = (0..1000).map(|i| if i == 0 { vec![1] } else { vec![0] }).collect();
        let idf = compute_idf(&corpus, 2).unwrap();
        assert!((idf.get(1) - 1000f64.ln()).abs() < 1e-12);
        let corpus: Vec<Vec<u32>> = (0..3).map(|i| if i == 0 { vec![1] } else { vec![0] }).collect();
        assert!((compute_idf(&corpus, 2).unwrap().get(1) - 1.0).abs() < 0.1);
    }

    #[test]
    fn empty_corpus_rejected() {
        assert!(compute_idf::<Vec<u32>>(&[], 3).is_err());
    }

    #[test]
    fn single_feature_is_unit_vector() {
        let idf = Idf { corpus_size: 2, weights: vec![0.0; 5].into_iter().chain([0.7]).collect() };
        let b = build_bovw(&[5], &idf);
        assert_eq!(b.entries, vec![(5, 1.0)]);
        assert!(build_bovw(&[], &idf).is_empty());
    }

    #[test]
    fn two_image_corpus_by_hand() {
        // Image A: words 0,0,1; image B: words 1,2.
        let idf = compute_idf(&[vec![0, 0, 1], vec![1, 2]], 3).unwrap();
        let a = build_bovw(&[0, 0, 1], &idf);
        let b = build_bovw(&[1, 2], &idf);
        // Word 1 is ubiquitous and drops out.
        assert_eq!(a.entries, vec![(0, 1.0)]);
        assert_eq!(b.entries, vec![(2, 1.0)]);

        let idf = Idf { corpus_size: 4, weights: vec![2f64.ln(), 4f64.ln()] };
        let v = build_bovw(&[0, 0, 1], &idf);
        let raw = [2.0 / 3.0 * 2f64.ln(), 1.0 / 3.0 * 4f64.ln()];
        let n = (raw[0] * raw[0] + raw[1] * raw[1]).sqrt();
        assert!((v.weight(0) - raw[0] / n).abs() < 1e-15);
        assert!((v.weight(1) - raw[1] / n).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn unit_norm_and_duplication_invariant(words in prop::collection::vec(0u32..20, 1..60)) {
            let idf = Idf { corpus_size: 30, weights: (0..20).map(|w| 0.1 + w as f64 * 0.05).collect() };
            let b = build_bovw(&words, &idf);
            let norm: f64 = b.entries.iter().map(|e| e.1 * e.1).sum::<f64>().sqrt();
            prop_assert!((norm - 1.0).abs() < 1e-12);
            prop_assert!(b.entries.iter().all(|e| e.1 > 0.0));
            let doubled: Vec<u32> = words.iter().chain(words.iter()).copied().collect();
            prop_assert_eq!(build_bovw(&doubled, &idf), b);
        }
    }
}
