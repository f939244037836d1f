//! Trainable log encoder.
//!
//! The reference encoder hashes word unigrams and bigrams into `H` buckets
//! and maps the count vector through an `H x D` projection, followed by L2
//! normalization. Projection rows start from a seeded uniform draw in
//! `[-1/sqrt(H), 1/sqrt(H)]`; only rows that training has touched are stored,
//! the rest are regenerated on demand from the init seed. Row `r` uses the
//! ChaCha8 stream of `init_seed` positioned at word `2 * r * D`, one `u64`
//! per entry, mapped as `(2 * u - 1) / sqrt(H)` with `u = (x >> 11) * 2^-53`.

mod pairs;
mod train;

use std::borrow::Cow;
use std::collections::BTreeMap;
use std::hash::Hasher;

use fnv::FnvHasher;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::CategoryId;
use crate::error::{Error, Result};
use crate::preprocess::ProcessedLog;
use crate::scalar::{l2_norm, Scalar};

pub use pairs::{cosine, generate_pairs, pair_loss, Pair};
pub use train::{batch_gradient, finetune, mean_pair_loss, TrainConfig};

pub const DEFAULT_HASH_DIM: usize = 1 << 18;
pub const DEFAULT_EMBED_DIM: usize = 256;

/// Sparse bucket counts sorted by bucket index.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SparseCounts {
    entries: Vec<(usize, u32)>,
}

impl SparseCounts {
    pub fn entries(&self) -> &[(usize, u32)] {
        &self.entries
    }

    pub fn get(&self, bucket: usize) -> u32 {
        self.entries
            .binary_search_by_key(&bucket, |&(b, _)| b)
            .map(|i| self.entries[i].1)
            .unwrap_or(0)
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    pub fn is_zero(&self) -> bool {
        self.entries.is_empty()
    }

    /// Counts from a list of bucket hits, in any order.
    pub fn from_buckets(mut buckets: Vec<usize>) -> Self {
        buckets.sort_unstable();
        let mut entries: Vec<(usize, u32)> = Vec::new();
        for b in buckets {
            match entries.last_mut() {
                Some((last, n)) if *last == b => *n += 1,
                _ => entries.push((b, 1)),
            }
        }
        SparseCounts { entries }
    }
}

/// Embedding backends: anything that turns a normalized log into a unit
/// vector and can be contrastively fine-tuned on labeled logs.
pub trait TextEncoder<F: Scalar>: Sized {
    fn embed_dim(&self) -> usize;

    fn encode(&self, log: &ProcessedLog) -> Vec<F>;

    fn finetune(&self, logs: &[ProcessedLog], labels: &[CategoryId], cfg: &TrainConfig) -> Result<Self>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderModel<F> {
    hash_dim: usize,
    embed_dim: usize,
    hash_seed: u64,
    init_seed: u64,
    rows: BTreeMap<usize, Vec<F>>,
}

impl<F: Scalar> EncoderModel<F> {
    pub fn new(hash_dim: usize, embed_dim: usize, hash_seed: u64, init_seed: u64) -> Result<Self> {
        if hash_dim == 0 || embed_dim == 0 {
            return Err(Error::invalid("encoder dimensions must be positive"));
        }
        Ok(EncoderModel {
            hash_dim,
            embed_dim,
            hash_seed,
            init_seed,
            rows: BTreeMap::new(),
        })
    }

    /// Rebuilds a model from stored rows (as written by [`Self::stored_rows`]).
    pub fn from_parts(
        hash_dim: usize,
        embed_dim: usize,
        hash_seed: u64,
        init_seed: u64,
        rows: BTreeMap<usize, Vec<F>>,
    ) -> Result<Self> {
        let mut model = Self::new(hash_dim, embed_dim, hash_seed, init_seed)?;
        for (&r, row) in &rows {
            if r >= hash_dim {
                return Err(Error::invalid(format!("projection row {r} out of range")));
            }
            if row.len() != embed_dim {
                return Err(Error::DimensionMismatch {
                    expected: embed_dim,
                    found: row.len(),
                });
            }
        }
        model.rows = rows;
        Ok(model)
    }

    pub fn hash_dim(&self) -> usize {
        self.hash_dim
    }

    pub fn embed_dim(&self) -> usize {
        self.embed_dim
    }

    pub fn hash_seed(&self) -> u64 {
        self.hash_seed
    }

    pub fn init_seed(&self) -> u64 {
        self.init_seed
    }

    /// Rows that differ from (or were written over) their seeded initial value.
    pub fn stored_rows(&self) -> &BTreeMap<usize, Vec<F>> {
        &self.rows
    }

    pub fn initial_row(&self, r: usize) -> Vec<F> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.init_seed);
        rng.set_word_pos(2 * (r as u128) * (self.embed_dim as u128));
        let scale = 1.0 / (self.hash_dim as f64).sqrt();
        (0..self.embed_dim)
            .map(|_| {
                let u = (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
                F::of(scale * (2.0 * u - 1.0))
            })
            .collect()
    }

    pub fn row(&self, r: usize) -> Cow<'_, [F]> {
        match self.rows.get(&r) {
            Some(row) => Cow::Borrowed(row),
            None => Cow::Owned(self.initial_row(r)),
        }
    }

    pub(crate) fn row_mut(&mut self, r: usize) -> &mut Vec<F> {
        if !self.rows.contains_key(&r) {
            let init = self.initial_row(r);
            self.rows.insert(r, init);
        }
        self.rows.get_mut(&r).unwrap()
    }

    pub fn entry(&self, r: usize, c: usize) -> F {
        self.row(r)[c]
    }

    pub fn set_entry(&mut self, r: usize, c: usize, value: F) {
        self.row_mut(r)[c] = value;
    }

    /// True when both models have the same shape, seeds and effective
    /// projection values, however many rows each happens to store.
    pub fn same_parameters(&self, other: &Self) -> bool {
        if (self.hash_dim, self.embed_dim, self.hash_seed, self.init_seed)
            != (other.hash_dim, other.embed_dim, other.hash_seed, other.init_seed)
        {
            return false;
        }
        self.rows
            .keys()
            .chain(other.rows.keys())
            .all(|&r| self.row(r) == other.row(r))
    }

    fn bucket(&self, term: &str) -> usize {
        let mut h = FnvHasher::with_key(self.hash_seed);
        h.write(term.as_bytes());
        (h.finish() % self.hash_dim as u64) as usize
    }

    /// Hashed unigram and bigram counts over the whitespace tokens of all
    /// lines joined with a space.
    pub fn featurize(&self, log: &ProcessedLog) -> SparseCounts {
        let tokens: Vec<&str> = log.lines().iter().flat_map(|l| l.split_whitespace()).collect();
        let mut buckets = Vec::with_capacity(tokens.len() * 2);
        let mut bigram = String::new();
        for (i, tok) in tokens.iter().enumerate() {
            buckets.push(self.bucket(tok));
            if let Some(next) = tokens.get(i + 1) {
                bigram.clear();
                bigram.push_str(tok);
                bigram.push(' ');
                bigram.push_str(next);
                buckets.push(self.bucket(&bigram));
            }
        }
        SparseCounts::from_buckets(buckets)
    }

    /// `projection^T x` before normalization.
    pub fn project(&self, x: &SparseCounts) -> Vec<F> {
        let mut z = vec![F::zero(); self.embed_dim];
        for &(r, n) in x.entries() {
            let w = F::of(n as f64);
            for (zc, &p) in z.iter_mut().zip(self.row(r).iter()) {
                *zc += w * p;
            }
        }
        z
    }

    /// Unit-norm embedding of hashed features; the zero vector maps to `e_0`.
    pub fn encode_features(&self, x: &SparseCounts) -> Vec<F> {
        normalize_or_basis(self.project(x))
    }

    pub fn encode(&self, log: &ProcessedLog) -> Vec<F> {
        self.encode_features(&self.featurize(log))
    }
}

pub(crate) fn normalize_or_basis<F: Scalar>(mut z: Vec<F>) -> Vec<F> {
    let norm = l2_norm(&z);
    if norm > F::zero() && norm.is_finite() {
        z.iter_mut().for_each(|v| *v /= norm);
    } else {
        z.iter_mut().for_each(|v| *v = F::zero());
        if let Some(first) = z.first_mut() {
            *first = F::one();
        }
    }
    z
}

impl<F: Scalar> TextEncoder<F> for EncoderModel<F> {
    fn embed_dim(&self) -> usize {
        self.embed_dim
    }

    fn encode(&self, log: &ProcessedLog) -> Vec<F> {
        EncoderModel::encode(self, log)
    }

    fn finetune(&self, logs: &[ProcessedLog], labels: &[CategoryId], cfg: &TrainConfig) -> Result<Self> {
        let feats: Vec<SparseCounts> = logs.iter().map(|l| self.featurize(l)).collect();
        finetune(self, &feats, labels, cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::preprocess::{preprocess_log, PreprocessConfig, RawLog};

    fn processed(lines: &[&str]) -> ProcessedLog {
        preprocess_log(&RawLog::from_lines(lines), &PreprocessConfig::default())
    }

    fn small() -> EncoderModel<f64> {
        EncoderModel::new(1 << 12, 16, 7, 11).unwrap()
    }

    #[test]
    fn featurize_counts() {
        let m = small();
        assert!(m.featurize(&ProcessedLog::default()).is_zero());
        let x = m.featurize(&ProcessedLog::from_lines(["a a a"]));
        assert_eq!(x.get(m.bucket("a")), 3);
        assert_eq!(x.get(m.bucket("a a")), 2);
        assert_eq!(x.entries().iter().map(|e| e.1).sum::<u32>(), 5);
    }

    #[test]
    fn featurize_is_deterministic() {
        let m = small();
        let log = processed(&["fatal error pulling image", "retrying"]);
        assert_eq!(m.featurize(&log), m.featurize(&log));
    }

    #[test]
    fn bigrams_cross_line_boundaries() {
        let m = small();
        let x = m.featurize(&processed(&["alpha", "beta"]));
        assert_eq!(x.get(m.bucket("alpha beta")), 1);
    }

    #[test]
    fn encode_is_unit_norm() {
        let m = small();
        let e = m.encode(&processed(&["docker daemon not reachable", "exit code 1"]));
        let n = l2_norm(&e);
        assert!((n - 1.0).abs() < 1e-9);
        assert!((cosine(&e, &e) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn empty_log_maps_to_first_basis_vector() {
        let m = small();
        let e = m.encode(&ProcessedLog::default());
        assert_eq!(e[0], 1.0);
        assert!(e[1..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn initial_rows_are_seeded_and_bounded() {
        let m = small();
        let bound = 1.0 / (m.hash_dim() as f64).sqrt();
        for r in [0, 1, 4095] {
            let row = m.initial_row(r);
            assert_eq!(row, m.initial_row(r));
            assert!(row.iter().all(|v| v.abs() <= bound));
        }
        assert_ne!(m.initial_row(0), m.initial_row(1));
        let other = EncoderModel::<f64>::new(1 << 12, 16, 7, 12).unwrap();
        assert_ne!(m.initial_row(0), other.initial_row(0));
    }

    #[test]
    fn materializing_keeps_values() {
        let mut m = small();
        let before = m.row(5).into_owned();
        let _ = m.row_mut(5);
        assert_eq!(m.stored_rows().len(), 1);
        assert_eq!(m.row(5).as_ref(), before.as_slice());
        assert!(m.same_parameters(&small()));
        m.set_entry(5, 0, 0.5);
        assert!(!m.same_parameters(&small()));
    }

    #[test]
    fn f32_encoder() {
        let m = EncoderModel::<f32>::new(1 << 10, 8, 1, 2).unwrap();
        let e = m.encode(&processed(&["timeout waiting for pod"]));
        assert!((l2_norm(&e) - 1.0).abs() < 1e-5);
    }
}
