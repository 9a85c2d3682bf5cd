//! Visual vocabulary: k-means training, exact quantization and tf-idf
//! weighted bag-of-visual-words vectors.

mod bovw;
mod kdtree;

use std::fs;
use std::io::{Cursor, Read};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use bovw::{build_bovw, compute_idf, Idf, WeightedBovw};
pub use kdtree::KdTree;

use crate::error::{Error, Result};
use crate::geometry::sq_dist;

pub const VOCAB_FILE: &str = "vocab.bin";
const MAGIC: &[u8; 4] = b"LMVC";
const VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VocabConfig {
    /// Number of visual words.
    pub k: usize,
    pub seed: u64,
    pub max_iterations: usize,
    /// Stop when no center moves farther than this (L2).
    pub tolerance: f32,
    /// Upper bound on descriptors sampled for training.
    pub sample_size: usize,
    pub leaf_size: usize,
}

impl Default for VocabConfig {
    fn default() -> Self {
        VocabConfig {
            k: 1000,
            seed: 0,
            max_iterations: 30,
            tolerance: 1e-4,
            sample_size: 50_000,
            leaf_size: 8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Vocabulary {
    dim: usize,
    seed: u64,
    centers: Vec<f32>,
    tree: KdTree,
}

impl PartialEq for Vocabulary {
    fn eq(&self, other: &Self) -> bool {
        self.dim == other.dim
            && self.seed == other.seed
            && self.tree.leaf_size() == other.tree.leaf_size()
            && self.centers.len() == other.centers.len()
            && self.centers.iter().zip(&other.centers).all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

impl Vocabulary {
    /// Builds a vocabulary from row-major centers.
    pub fn from_centers(dim: usize, centers: Vec<f32>, seed: u64, leaf_size: usize) -> Result<Self> {
        if dim == 0 || centers.is_empty() || centers.len() % dim != 0 {
            return Err(Error::validation("vocabulary needs K >= 1 centers of dimension D >= 1"));
        }
        let tree = KdTree::build(&centers, dim, leaf_size);
        Ok(Vocabulary { dim, seed, centers, tree })
    }

    pub fn k(&self) -> usize {
        self.centers.len() / self.dim
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn leaf_size(&self) -> usize {
        self.tree.leaf_size()
    }

    pub fn center(&self, w: u32) -> &[f32] {
        &self.centers[w as usize * self.dim..(w as usize + 1) * self.dim]
    }

    pub fn centers(&self) -> &[f32] {
        &self.centers
    }

    /// Exact nearest word; ties go to the lowest id.
    pub fn nearest(&self, descriptor: &[f32]) -> u32 {
        self.tree.nearest(&self.centers, self.dim, descriptor).0
    }

    /// Linear-scan reference for [`Vocabulary::nearest`].
    pub fn nearest_brute(&self, descriptor: &[f32]) -> u32 {
        let mut best = (0u32, f32::INFINITY);
        for w in 0..self.k() as u32 {
            let d = sq_dist(descriptor, self.center(w));
            if d < best.1 {
                best = (w, d);
            }
        }
        best.0
    }

    pub fn quantize<D: AsRef<[f32]> + Sync>(&self, descriptors: &[D]) -> Result<Vec<u32>> {
        if let Some(bad) = descriptors.iter().find(|d| d.as_ref().len() != self.dim) {
            return Err(Error::Validation(format!(
                "descriptor dimension {} does not match vocabulary dimension {}",
                bad.as_ref().len(),
                self.dim
            )));
        }
        Ok(descriptors.par_iter().map(|d| self.nearest(d.as_ref())).collect())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::with_capacity(30 + self.centers.len() * 4);
        buf.extend_from_slice(MAGIC);
        buf.write_u16::<LittleEndian>(VERSION)?;
        buf.write_u32::<LittleEndian>(self.k() as u32)?;
        buf.write_u32::<LittleEndian>(self.dim as u32)?;
        buf.write_u64::<LittleEndian>(self.seed)?;
        buf.write_u32::<LittleEndian>(self.leaf_size() as u32)?;
        for &c in &self.centers {
            buf.write_f32::<LittleEndian>(c)?;
        }
        fs::write(path, buf)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path)?;
        let mut cur = Cursor::new(&bytes[..]);
        let mut magic = [0u8; 4];
        cur.read_exact(&mut magic).map_err(|_| Error::format(0, "vocabulary header truncated"))?;
        if &magic != MAGIC {
            return Err(Error::format(0, "bad vocabulary magic"));
        }
        let header = |cur: &mut Cursor<&[u8]>| -> std::io::Result<(u16, u32, u32, u64, u32)> {
            Ok((
                cur.read_u16::<LittleEndian>()?,
                cur.read_u32::<LittleEndian>()?,
                cur.read_u32::<LittleEndian>()?,
                cur.read_u64::<LittleEndian>()?,
                cur.read_u32::<LittleEndian>()?,
            ))
        };
        let (version, k, dim, seed, leaf) =
            header(&mut cur).map_err(|_| Error::format(4, "vocabulary header truncated"))?;
        if version != VERSION {
            return Err(Error::format(4, format!("unsupported vocabulary version {version}")));
        }
        let n = k as usize * dim as usize;
        let start = cur.position();
        if bytes.len() as u64 - start < n as u64 * 4 {
            return Err(Error::format(start, "vocabulary centers truncated"));
        }
        let mut centers = vec![0f32; n];
        cur.read_f32_into::<LittleEndian>(&mut centers)?;
        Vocabulary::from_centers(dim as usize, centers, seed, leaf as usize)
    }
}

/// Lloyd's k-means with k-means++ seeding over `sample`.
pub fn train_vocab<D: AsRef<[f32]> + Sync>(sample: &[D], config: &VocabConfig) -> Result<Vocabulary> {
    let k = config.k;
    if k == 0 {
        return Err(Error::validation("K must be at least 1"));
    }
    if k > sample.len() {
        return Err(Error::Validation(format!(
            "K = {k} exceeds the training sample size {}",
            sample.len()
        )));
    }
    let dim = sample[0].as_ref().len();
    if dim == 0 || sample.iter().any(|d| d.as_ref().len() != dim) {
        return Err(Error::validation("training descriptors have inconsistent dimension"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut centers = seed_plus_plus(sample, k, dim, &mut rng)?;

    for _ in 0..config.max_iterations {
        let tree = KdTree::build(&centers, dim, config.leaf_size);
        let assign: Vec<u32> = sample
            .par_iter()
            .map(|d| tree.nearest(&centers, dim, d.as_ref()).0)
            .collect();
        let mut sums = vec![0f64; k * dim];
        let mut counts = vec![0usize; k];
        for (d, &w) in sample.iter().zip(&assign) {
            let w = w as usize;
            counts[w] += 1;
            for (s, &v) in sums[w * dim..(w + 1) * dim].iter_mut().zip(d.as_ref()) {
                *s += v as f64;
            }
        }
        let mut shift = 0f32;
        for w in 0..k {
            if counts[w] == 0 {
                continue;
            }
            let row = &mut centers[w * dim..(w + 1) * dim];
            let mut moved = 0f32;
            for (c, s) in row.iter_mut().zip(&sums[w * dim..(w + 1) * dim]) {
                let next = (s / counts[w] as f64) as f32;
                moved += (next - *c) * (next - *c);
                *c = next;
            }
            shift = shift.max(moved.sqrt());
        }
        if shift < config.tolerance {
            break;
        }
    }
    check_distinct(&centers, dim)?;
    Vocabulary::from_centers(dim, centers, config.seed, config.leaf_size)
}

fn seed_plus_plus<D: AsRef<[f32]> + Sync>(sample: &[D], k: usize, dim: usize, rng: &mut ChaCha8Rng) -> Result<Vec<f32>> {
    let n = sample.len();
    let mut centers = Vec::with_capacity(k * dim);
    let first = rng.random_range(0..n);
    centers.extend_from_slice(sample[first].as_ref());
    let mut d2: Vec<f64> = sample
        .par_iter()
        .map(|d| sq_dist(d.as_ref(), &centers[..dim]) as f64)
        .collect();
    for _ in 1..k {
        let total: f64 = d2.iter().sum();
        if total <= 0.0 {
            return Err(Error::Validation(format!(
                "training sample has fewer than K = {k} distinct descriptors"
            )));
        }
        let mut target = rng.random::<f64>() * total;
        let mut pick = n - 1;
        for (i, &v) in d2.iter().enumerate() {
            if v > 0.0 && target < v {
                pick = i;
                break;
            }
            target -= v;
        }
        while d2[pick] <= 0.0 {
            pick -= 1;
        }
        let c: Vec<f32> = sample[pick].as_ref().to_vec();
        d2.par_iter_mut().zip(sample.par_iter()).for_each(|(best, d)| {
            let v = sq_dist(d.as_ref(), &c) as f64;
            if v < *best {
                *best = v;
            }
        });
        centers.extend_from_slice(&c);
    }
    Ok(centers)
}

fn check_distinct(centers: &[f32], dim: usize) -> Result<()> {
    let mut rows: Vec<&[f32]> = centers.chunks(dim).collect();
    rows.sort_by(|a, b| {
        a.iter()
            .zip(b.iter())
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    if rows.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::validation("k-means produced coincident centers"));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{prop, prop_assert_eq, proptest};
    use rand_distr::{Distribution, Normal};

    fn cfg(k: usize) -> VocabConfig {
        VocabConfig { k, seed: 7, ..VocabConfig::default() }
    }

    #[test]
    fn k_one_is_mean() {
        let s = vec![vec![0.0f32, 2.0], vec![2.0, 4.0], vec![4.0, 0.0]];
        let v = train_vocab(&s, &cfg(1)).unwrap();
        assert_eq!(v.center(0), &[2.0, 2.0]);
    }

    #[test]
    fn k_exceeds_sample() {
        let s = vec![vec![0.0f32; 3]; 2];
        assert!(matches!(train_vocab(&s, &cfg(3)), Err(Error::Validation(_))));
    }

    #[test]
    fn too_few_distinct() {
        let s = vec![vec![1.0f32; 3]; 5];
        assert!(matches!(train_vocab(&s, &cfg(2)), Err(Error::Validation(_))));
    }

    #[test]
    fn k_equals_distinct_points() {
        let s: Vec<Vec<f32>> = (0..6).map(|i| vec![i as f32 * 3.0, (i * i) as f32]).collect();
        let v = train_vocab(&s, &cfg(6)).unwrap();
        for d in &s {
            let w = v.nearest(d);
            assert_eq!(v.center(w), &d[..]);
        }
    }

    #[test]
    fn two_blobs() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let sigma = 1.0f32;
        let noise = Normal::new(0.0f32, sigma).unwrap();
        let n = 400;
        let means = [[0.0f32, 0.0], [50.0, 50.0]];
        let mut s = Vec::new();
        for m in &means {
            for _ in 0..n {
                s.push(vec![m[0] + noise.sample(&mut rng), m[1] + noise.sample(&mut rng)]);
            }
        }
        // Empirical blob means are the fixed point of Lloyd on separated blobs.
        let emp: Vec<[f32; 2]> = s
            .chunks(n)
            .map(|c| {
                let sx: f32 = c.iter().map(|p| p[0]).sum();
                let sy: f32 = c.iter().map(|p| p[1]).sum();
                [sx / n as f32, sy / n as f32]
            })
            .collect();
        let v = train_vocab(&s, &cfg(2)).unwrap();
        let tol = 3.0 * sigma / (n as f32).sqrt();
        for (m, e) in means.iter().zip(&emp) {
            let w = v.nearest(m);
            let c = v.center(w);
            assert!((c[0] - m[0]).abs() < tol && (c[1] - m[1]).abs() < tol, "{c:?} vs {m:?}");
            assert!((c[0] - e[0]).abs() < 1e-3 && (c[1] - e[1]).abs() < 1e-3);
        }
    }

    #[test]
    fn tie_goes_to_lowest_id() {
        let mut centers = vec![0f32; 10 * 2];
        for w in 0..10 {
            centers[w * 2] = 100.0 + w as f32 * 10.0;
        }
        centers[3 * 2] = -1.0;
        centers[7 * 2] = 1.0;
        let v = Vocabulary::from_centers(2, centers, 0, 2).unwrap();
        assert_eq!(v.nearest(&[0.0, 0.0]), 3);
        assert_eq!(v.nearest(&[1.0, 0.0]), 7);
    }

    #[test]
    fn quantize_dimension_mismatch() {
        let v = Vocabulary::from_centers(2, vec![0.0, 0.0], 0, 4).unwrap();
        assert!(matches!(v.quantize(&[vec![1.0f32]]), Err(Error::Validation(_))));
    }

    #[test]
    fn deterministic_and_round_trips() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let s: Vec<Vec<f32>> = (0..500).map(|_| (0..8).map(|_| rng.random_range(0.0..10.0)).collect()).collect();
        let a = train_vocab(&s, &cfg(20)).unwrap();
        let b = train_vocab(&s, &cfg(20)).unwrap();
        assert_eq!(a, b);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join(VOCAB_FILE);
        a.save(&p).unwrap();
        assert_eq!(Vocabulary::load(&p).unwrap(), a);
    }

    #[test]
    fn thousand_random_match_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let centers: Vec<f32> = (0..200 * 16).map(|_| rng.random_range(0.0..1.0)).collect();
        let v = Vocabulary::from_centers(16, centers, 0, 8).unwrap();
        let qs: Vec<Vec<f32>> = (0..1000).map(|_| (0..16).map(|_| rng.random_range(0.0..1.0)).collect()).collect();
        let got = v.quantize(&qs).unwrap();
        for (q, w) in qs.iter().zip(got) {
            assert_eq!(w, v.nearest_brute(q));
        }
    }

    proptest! {
        #[test]
        fn kdtree_exact_on_small_grids(
            centers in prop::collection::vec(0u8..4, 2..60),
            queries in prop::collection::vec(0u8..4, 2..40),
            leaf in 1usize..5,
        ) {
            // Integer grids make exact ties common.
            let c: Vec<f32> = centers.iter().map(|&x| x as f32).collect();
            let c = c[..c.len() / 2 * 2].to_vec();
            let v = Vocabulary::from_centers(2, c, 0, leaf).unwrap();
            for q in queries.chunks(2).filter(|q| q.len() == 2) {
                let q = [q[0] as f32 + 0.5 * (q[1] % 2) as f32, q[1] as f32];
                prop_assert_eq!(v.nearest(&q), v.nearest_brute(&q));
            }
        }
    }
}
