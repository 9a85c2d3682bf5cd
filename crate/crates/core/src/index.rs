//! Inverted-file index over tf-idf vectors with term-at-a-time cosine scoring.

use std::cmp::Ordering;
use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Homography;
use crate::vocab::{Idf, WeightedBovw};

pub const INDEX_FILE: &str = "index.bin";
const MAGIC: &[u8; 4] = b"LMIX";
const VERSION: u16 = 1;

/// One retrieval result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedMatch {
    pub image_id: String,
    /// Cosine similarity of the tf-idf vectors.
    pub tfidf_score: f64,
    pub verified: bool,
    /// Homography inliers, zero when unverified.
    pub inliers: usize,
    /// Maps query coordinates into the matched image.
    pub homography: Option<Homography>,
}

impl RankedMatch {
    pub fn unverified(image_id: String, tfidf_score: f64) -> Self {
        RankedMatch {
            image_id,
            tfidf_score,
            verified: false,
            inliers: 0,
            homography: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InvertedIndex {
    idf: Idf,
    /// Sorted ascending.
    ids: Vec<String>,
    norms: Vec<f64>,
    /// Per word: (position in `ids`, weight), ascending by position.
    postings: Vec<Vec<(u32, f64)>>,
}

impl InvertedIndex {
    pub fn build(idf: Idf, bovws: Vec<(String, WeightedBovw)>) -> Result<Self> {
        let mut docs = bovws;
        docs.sort_by(|a, b| a.0.cmp(&b.0));
        if let Some(w) = docs.windows(2).find(|w| w[0].0 == w[1].0) {
            return Err(Error::Validation(format!("duplicate image id {} in index", w[0].0)));
        }
        let k = idf.k();
        let mut postings = vec![Vec::new(); k];
        let mut norms = Vec::with_capacity(docs.len());
        for (pos, (id, v)) in docs.iter().enumerate() {
            for &(w, weight) in &v.entries {
                let list = postings
                    .get_mut(w as usize)
                    .ok_or_else(|| Error::Validation(format!("image {id} uses word {w} outside vocabulary of size {k}")))?;
                if weight > 0.0 {
                    list.push((pos as u32, weight));
                }
            }
            norms.push(v.entries.iter().map(|e| e.1 * e.1).sum::<f64>().sqrt());
        }
        Ok(InvertedIndex {
            idf,
            ids: docs.into_iter().map(|d| d.0).collect(),
            norms,
            postings,
        })
    }

    pub fn idf(&self) -> &Idf {
        &self.idf
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn image_ids(&self) -> &[String] {
        &self.ids
    }

    pub fn contains(&self, image_id: &str) -> bool {
        self.ids.binary_search_by(|x| x.as_str().cmp(image_id)).is_ok()
    }

    /// Total number of postings.
    pub fn size(&self) -> usize {
        self.postings.iter().map(Vec::len).sum()
    }

    pub fn posting(&self, w: u32) -> &[(u32, f64)] {
        self.postings.get(w as usize).map(|p| &p[..]).unwrap_or(&[])
    }

    /// Cosine scores of every image sharing at least one word with `q`,
    /// unsorted.
    pub fn scores(&self, q: &WeightedBovw) -> Vec<(usize, f64)> {
        let mut acc = vec![0f64; self.ids.len()];
        let mut touched = Vec::new();
        let mut hit = vec![false; self.ids.len()];
        for &(w, qw) in &q.entries {
            for &(pos, dw) in self.posting(w) {
                let pos = pos as usize;
                if !hit[pos] {
                    hit[pos] = true;
                    touched.push(pos);
                }
                acc[pos] += qw * dw;
            }
        }
        let qn = q.entries.iter().map(|e| e.1 * e.1).sum::<f64>().sqrt();
        touched
            .into_iter()
            .map(|pos| (pos, cosine(acc[pos], qn, self.norms[pos])))
            .collect()
    }

    /// Top-`k` matches by descending score, ties by ascending image id.
    pub fn query(&self, q: &WeightedBovw, k: usize) -> Vec<RankedMatch> {
        let mut scored = self.scores(q);
        sort_ranked(&mut scored);
        scored
            .into_iter()
            .take(k)
            .map(|(pos, s)| RankedMatch::unverified(self.ids[pos].clone(), s))
            .collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = BufWriter::new(fs::File::create(path)?);
        out.write_all(MAGIC)?;
        out.write_u16::<LittleEndian>(VERSION)?;
        out.write_u64::<LittleEndian>(self.idf.corpus_size as u64)?;
        out.write_u32::<LittleEndian>(self.idf.k() as u32)?;
        for &w in &self.idf.weights {
            out.write_f64::<LittleEndian>(w)?;
        }
        out.write_u32::<LittleEndian>(self.ids.len() as u32)?;
        for (id, &n) in self.ids.iter().zip(&self.norms) {
            out.write_u32::<LittleEndian>(id.len() as u32)?;
            out.write_all(id.as_bytes())?;
            out.write_f64::<LittleEndian>(n)?;
        }
        for list in &self.postings {
            out.write_u32::<LittleEndian>(list.len() as u32)?;
            for &(pos, w) in list {
                out.write_u32::<LittleEndian>(pos)?;
                out.write_f64::<LittleEndian>(w)?;
            }
        }
        out.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path)?;
        let total = bytes.len() as u64;
        let mut r = CountingReader { inner: BufReader::new(&bytes[..]), pos: 0 };
        let trunc = |pos: u64| Error::format(pos, "index file truncated");
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(|_| trunc(0))?;
        if &magic != MAGIC {
            return Err(Error::format(0, "bad index magic"));
        }
        let version = r.read_u16::<LittleEndian>().map_err(|_| trunc(4))?;
        if version != VERSION {
            return Err(Error::format(4, format!("unsupported index version {version}")));
        }
        macro_rules! rd {
            ($e:expr) => {{
                let at = r.pos;
                $e.map_err(|_| trunc(at))?
            }};
        }
        let corpus_size = rd!(r.read_u64::<LittleEndian>()) as usize;
        let k = rd!(r.read_u32::<LittleEndian>()) as usize;
        if k as u64 * 8 > total {
            return Err(Error::format(r.pos, "implausible vocabulary size"));
        }
        let mut weights = vec![0f64; k];
        rd!(r.read_f64_into::<LittleEndian>(&mut weights));
        let n = rd!(r.read_u32::<LittleEndian>()) as usize;
        let mut ids = Vec::with_capacity(n.min(1 << 20));
        let mut norms = Vec::with_capacity(n.min(1 << 20));
        for _ in 0..n {
            let len = rd!(r.read_u32::<LittleEndian>()) as usize;
            if len as u64 > total {
                return Err(trunc(r.pos));
            }
            let mut buf = vec![0u8; len];
            rd!(r.read_exact(&mut buf));
            let at = r.pos;
            ids.push(String::from_utf8(buf).map_err(|_| Error::format(at, "image id is not UTF-8"))?);
            norms.push(rd!(r.read_f64::<LittleEndian>()));
        }
        let mut postings = Vec::with_capacity(k);
        for _ in 0..k {
            let len = rd!(r.read_u32::<LittleEndian>()) as usize;
            if len > n {
                return Err(Error::format(r.pos, "posting list longer than the image count"));
            }
            let mut list = Vec::with_capacity(len);
            for _ in 0..len {
                let pos = rd!(r.read_u32::<LittleEndian>());
                let w = rd!(r.read_f64::<LittleEndian>());
                if pos as usize >= n {
                    return Err(Error::format(r.pos, "posting refers to an unknown image"));
                }
                list.push((pos, w));
            }
            postings.push(list);
        }
        Ok(InvertedIndex {
            idf: Idf { corpus_size, weights },
            ids,
            norms,
            postings,
        })
    }
}

struct CountingReader<R> {
    inner: R,
    pos: u64,
}

impl<R: Read> Read for CountingReader<R> {
    fn read(&mut self, buf: &mut [u8]) -> std::io::Result<usize> {
        let n = self.inner.read(buf)?;
        self.pos += n as u64;
        Ok(n)
    }
}

fn cosine(dot: f64, qn: f64, dn: f64) -> f64 {
    if qn == 0.0 || dn == 0.0 {
        return 0.0;
    }
    dot / (qn * dn)
}

fn sort_ranked(scored: &mut [(usize, f64)]) {
    // Positions follow image id order, so comparing them breaks ties by id.
    scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap_or(Ordering::Equal).then(a.0.cmp(&b.0)));
}

/// Reference ranking by explicit pairwise cosine, for testing.
pub fn brute_force_query(corpus: &[(String, WeightedBovw)], q: &WeightedBovw, k: usize) -> Vec<RankedMatch> {
    let qn = q.entries.iter().map(|e| e.1 * e.1).sum::<f64>().sqrt();
    let mut out: Vec<RankedMatch> = corpus
        .iter()
        .filter(|(_, v)| v.entries.iter().any(|e| q.weight(e.0) > 0.0))
        .map(|(id, v)| {
            let dn = v.entries.iter().map(|e| e.1 * e.1).sum::<f64>().sqrt();
            RankedMatch::unverified(id.clone(), cosine(q.dot(v), qn, dn))
        })
        .collect();
    out.sort_by(|a, b| {
        b.tfidf_score
            .partial_cmp(&a.tfidf_score)
            .unwrap_or(Ordering::Equal)
            .then_with(|| a.image_id.cmp(&b.image_id))
    });
    out.truncate(k);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vocab::build_bovw;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn idf(k: usize) -> Idf {
        Idf { corpus_size: 10, weights: (0..k).map(|w| 0.5 + (w % 7) as f64 * 0.3).collect() }
    }

    fn corpus(n: usize, k: u32, seed: u64) -> Vec<(String, WeightedBovw)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let idf = idf(k as usize);
        (0..n)
            .map(|i| {
                let len = rng.random_range(0..30);
                let words: Vec<u32> = (0..len).map(|_| rng.random_range(0..k)).collect();
                (format!("im{i:04}"), build_bovw(&words, &idf))
            })
            .collect()
    }

    #[test]
    fn empty_corpus_answers_empty() {
        let ix = InvertedIndex::build(idf(5), vec![]).unwrap();
        let q = build_bovw(&[1, 2], &idf(5));
        assert!(ix.query(&q, 10).is_empty());
    }

    #[test]
    fn self_similarity_and_duplicates() {
        let v = build_bovw(&[1, 2, 2, 4], &idf(5));
        let ix = InvertedIndex::build(idf(5), vec![("b".into(), v.clone()), ("a".into(), v.clone())]).unwrap();
        let r = ix.query(&v, 5);
        assert_eq!(r.len(), 2);
        assert_eq!(r[0].image_id, "a");
        assert!((r[0].tfidf_score - 1.0).abs() < 1e-12);
        assert_eq!(r[0].tfidf_score, r[1].tfidf_score);
    }

    #[test]
    fn no_shared_words() {
        let ix = InvertedIndex::build(idf(5), vec![("a".into(), build_bovw(&[0], &idf(5)))]).unwrap();
        assert!(ix.query(&build_bovw(&[3], &idf(5)), 3).is_empty());
    }

    #[test]
    fn duplicate_id_rejected() {
        let v = build_bovw(&[1], &idf(3));
        let r = InvertedIndex::build(idf(3), vec![("a".into(), v.clone()), ("a".into(), v)]);
        assert!(matches!(r, Err(Error::Validation(_))));
    }

    #[test]
    fn matches_brute_force() {
        let c = corpus(200, 60, 3);
        let ix = InvertedIndex::build(idf(60), c.clone()).unwrap();
        let queries = corpus(50, 60, 4);
        for (_, q) in &queries {
            assert_eq!(ix.query(q, 10), brute_force_query(&c, q, 10));
        }
    }

    #[test]
    fn persistence_round_trip() {
        let c = corpus(40, 30, 5);
        let ix = InvertedIndex::build(idf(30), c).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join(INDEX_FILE);
        ix.save(&p).unwrap();
        assert_eq!(InvertedIndex::load(&p).unwrap(), ix);
        let bytes = fs::read(&p).unwrap();
        fs::write(&p, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(InvertedIndex::load(&p), Err(Error::Format { .. })));
    }

    proptest! {
        #[test]
        fn oracle_and_prefix(seed in 0u64..500, n in 0usize..60, k in 1usize..12) {
            let c = corpus(n, 25, seed);
            let ix = InvertedIndex::build(idf(25), c.clone()).unwrap();
            let (_, q) = &corpus(1, 25, seed + 1000)[0];
            let top = ix.query(q, k);
            prop_assert_eq!(&top, &brute_force_query(&c, q, k));
            let more = ix.query(q, k + 1);
            prop_assert_eq!(&more[..top.len()], &top[..]);
        }
    }
}
