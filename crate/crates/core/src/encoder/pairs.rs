use rand::Rng;

use crate::dataset::CategoryId;
use crate::error::{Error, Result};
use crate::scalar::{dot, Scalar};
use crate::seed;

/// Two training examples and whether they share a category (`label == 1`).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Pair {
    pub i: usize,
    pub j: usize,
    pub label: u8,
}

impl Pair {
    pub fn is_positive(&self) -> bool {
        self.label == 1
    }
}

/// For each of `rounds` rounds and each example `i` in order: one positive
/// pair with a different example of the same category, then one negative
/// pair with an example of another category. Partners are drawn uniformly.
/// Examples alone in their category get no positive pair.
pub fn generate_pairs(labels: &[CategoryId], rounds: usize, seed: u64) -> Result<Vec<Pair>> {
    let max_cat = labels.iter().copied().max().map_or(0, |m| m + 1);
    let mut members = vec![Vec::new(); max_cat];
    for (i, &c) in labels.iter().enumerate() {
        members[c].push(i);
    }
    let present = members.iter().filter(|m| !m.is_empty()).count();
    if present < 2 {
        return Err(Error::invalid(format!(
            "contrastive pairs need at least 2 categories, found {present}"
        )));
    }
    for (c, m) in members.iter().enumerate() {
        if m.len() == 1 {
            log::warn!("category {c} has a single example; skipping its positive pairs");
        }
    }

    let mut rng = seed::rng(seed);
    let mut pairs = Vec::with_capacity(2 * rounds * labels.len());
    for _ in 0..rounds {
        for (i, &c) in labels.iter().enumerate() {
            let same = &members[c];
            if same.len() > 1 {
                // Draw among the other members by skipping over `i`.
                let pos = same.binary_search(&i).expect("i is a member of its own category");
                let mut k = rng.gen_range(0..same.len() - 1);
                if k >= pos {
                    k += 1;
                }
                pairs.push(Pair { i, j: same[k], label: 1 });
            }
            let others = labels.len() - same.len();
            let k = rng.gen_range(0..others);
            // k-th example outside category c, without building the list.
            let j = labels
                .iter()
                .enumerate()
                .filter(|&(_, &lc)| lc != c)
                .nth(k)
                .map(|(j, _)| j)
                .expect("k < number of other-category examples");
            pairs.push(Pair { i, j, label: 0 });
        }
    }
    Ok(pairs)
}

pub fn cosine<F: Scalar>(u: &[F], v: &[F]) -> F {
    dot(u, v)
}

/// Squared error between the pair label and the cosine of two unit vectors.
pub fn pair_loss<F: Scalar>(u: &[F], v: &[F], label: u8) -> F {
    let y = F::of(label as f64);
    let d = y - cosine(u, v);
    d * d
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_by_two_single_round() {
        let labels = [0, 0, 1, 1];
        let pairs = generate_pairs(&labels, 1, 5).unwrap();
        assert_eq!(pairs.len(), 8);
        assert_eq!(pairs.iter().filter(|p| p.is_positive()).count(), 4);
        for p in &pairs {
            assert_ne!(p.i, p.j);
            assert_eq!(labels[p.i] == labels[p.j], p.is_positive());
        }
    }

    #[test]
    fn singleton_category_skips_positive() {
        let labels = [0, 1, 1];
        let pairs = generate_pairs(&labels, 1, 0).unwrap();
        let from0: Vec<_> = pairs.iter().filter(|p| p.i == 0).collect();
        assert_eq!(from0.len(), 1);
        assert!(!from0[0].is_positive());
        assert_eq!(pairs.len(), 5);
    }

    #[test]
    fn needs_two_categories() {
        assert!(generate_pairs(&[0, 0, 0], 1, 0).is_err());
        assert!(generate_pairs(&[], 1, 0).is_err());
    }

    #[test]
    fn pairs_are_seeded() {
        let labels = [0, 0, 0, 1, 1, 2, 2, 2];
        let a = generate_pairs(&labels, 3, 9).unwrap();
        assert_eq!(a, generate_pairs(&labels, 3, 9).unwrap());
        assert_ne!(a, generate_pairs(&labels, 3, 10).unwrap());
        assert_eq!(a.len(), 2 * 3 * labels.len());
    }

    #[test]
    fn loss_values() {
        let u = [1.0, 0.0];
        let v = [0.0, 1.0];
        assert_eq!(pair_loss(&u, &u, 1), 0.0);
        assert_eq!(pair_loss(&u, &v, 0), 0.0);
        assert_eq!(pair_loss(&u, &v, 1), 1.0);
    }
}
