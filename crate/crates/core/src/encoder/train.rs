//! Contrastive fine-tuning by plain mini-batch gradient descent on the mean
//! squared cosine error over labeled pairs.

use std::collections::{BTreeMap, HashMap};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{generate_pairs, normalize_or_basis, EncoderModel, Pair, SparseCounts};
use crate::dataset::CategoryId;
use crate::error::{Error, Result};
use crate::scalar::{dot, l2_norm, Scalar};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub body_learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Pair-sampling rounds over the training set.
    pub pair_rounds: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            body_learning_rate: 1e-4,
            epochs: 1,
            batch_size: 4,
            pair_rounds: 20,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.body_learning_rate >= 0.0 && self.body_learning_rate.is_finite()) {
            return Err(Error::invalid("body learning rate must be finite and non-negative"));
        }
        if self.epochs == 0 || self.batch_size == 0 || self.pair_rounds == 0 {
            return Err(Error::invalid("epochs, batch size and pair rounds must be positive"));
        }
        Ok(())
    }
}

struct Slot<F> {
    example: usize,
    unit: Vec<F>,
    norm: F,
    grad_unit: Vec<F>,
}

/// Loss of a batch and, per example, the gradient w.r.t. its unnormalized
/// projection `z = P^T x`.
struct Backward<F> {
    loss: F,
    grads: Vec<(usize, Vec<F>)>,
}

fn backward<F: Scalar>(model: &EncoderModel<F>, feats: &[SparseCounts], pairs: &[Pair]) -> Backward<F> {
    let mut index: HashMap<usize, usize> = HashMap::new();
    let mut slots: Vec<Slot<F>> = Vec::new();
    let mut slot_of = |ex: usize, slots: &mut Vec<Slot<F>>| -> usize {
        *index.entry(ex).or_insert_with(|| {
            let z = model.project(&feats[ex]);
            let norm = l2_norm(&z);
            slots.push(Slot {
                example: ex,
                unit: normalize_or_basis(z),
                norm,
                grad_unit: vec![F::zero(); model.embed_dim()],
            });
            slots.len() - 1
        })
    };

    let mut loss = F::zero();
    for p in pairs {
        let a = slot_of(p.i, &mut slots);
        let b = slot_of(p.j, &mut slots);
        let c = dot(&slots[a].unit, &slots[b].unit);
        let diff = F::of(p.label as f64) - c;
        loss += diff * diff;
        let g = F::of(-2.0) * diff;
        for k in 0..model.embed_dim() {
            let (ua, ub) = (slots[a].unit[k], slots[b].unit[k]);
            slots[a].grad_unit[k] += g * ub;
            slots[b].grad_unit[k] += g * ua;
        }
    }

    let n = F::of(pairs.len().max(1) as f64);
    let grads = slots
        .into_iter()
        .filter(|s| s.norm > F::zero())
        .map(|s| {
            // d(z/|z|)/dz = (I - u u^T) / |z|
            let radial = dot(&s.unit, &s.grad_unit);
            let dz = s
                .grad_unit
                .iter()
                .zip(&s.unit)
                .map(|(&g, &u)| (g - radial * u) / (s.norm * n))
                .collect();
            (s.example, dz)
        })
        .collect();
    Backward {
        loss: loss / n,
        grads,
    }
}

/// Mean pair loss over `pairs` and its gradient w.r.t. the projection, as
/// a map from row index to row gradient (rows absent from the map have zero
/// gradient).
pub fn batch_gradient<F: Scalar>(
    model: &EncoderModel<F>,
    feats: &[SparseCounts],
    pairs: &[Pair],
) -> (F, BTreeMap<usize, Vec<F>>) {
    let bw = backward(model, feats, pairs);
    let mut grad: BTreeMap<usize, Vec<F>> = BTreeMap::new();
    for (ex, dz) in &bw.grads {
        for &(r, n) in feats[*ex].entries() {
            let w = F::of(n as f64);
            let row = grad
                .entry(r)
                .or_insert_with(|| vec![F::zero(); model.embed_dim()]);
            for (g, &d) in row.iter_mut().zip(dz) {
                *g += w * d;
            }
        }
    }
    (bw.loss, grad)
}

pub fn mean_pair_loss<F: Scalar>(model: &EncoderModel<F>, feats: &[SparseCounts], pairs: &[Pair]) -> F {
    if pairs.is_empty() {
        return F::zero();
    }
    let emb: Vec<Vec<F>> = feats.iter().map(|x| model.encode_features(x)).collect();
    let total: F = pairs
        .iter()
        .map(|p| super::pair_loss(&emb[p.i], &emb[p.j], p.label))
        .sum();
    total / F::of(pairs.len() as f64)
}

fn apply<F: Scalar>(model: &mut EncoderModel<F>, feats: &[SparseCounts], bw: &Backward<F>, lr: F) {
    for (ex, dz) in &bw.grads {
        for &(r, n) in feats[*ex].entries() {
            let step = lr * F::of(n as f64);
            for (p, &d) in model.row_mut(r).iter_mut().zip(dz) {
                *p -= step * d;
            }
        }
    }
}

/// Fine-tunes a copy of `model` on `feats`/`labels`. Pairs are generated once,
/// then reshuffled every epoch and consumed in batches of `batch_size`.
pub fn finetune<F: Scalar>(
    model: &EncoderModel<F>,
    feats: &[SparseCounts],
    labels: &[CategoryId],
    cfg: &TrainConfig,
) -> Result<EncoderModel<F>> {
    cfg.validate()?;
    if feats.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: feats.len(),
            found: labels.len(),
        });
    }
    let mut pairs = generate_pairs(labels, cfg.pair_rounds, seed::derive(cfg.seed, 1))?;
    let mut rng = seed::rng(seed::derive(cfg.seed, 2));
    let lr = F::of(cfg.body_learning_rate);
    let mut out = model.clone();
    for epoch in 0..cfg.epochs {
        pairs.shuffle(&mut rng);
        let mut epoch_loss = F::zero();
        for batch in pairs.chunks(cfg.batch_size) {
            let bw = backward(&out, feats, batch);
            epoch_loss += bw.loss * F::of(batch.len() as f64);
            apply(&mut out, feats, &bw, lr);
        }
        log::debug!(
            "encoder epoch {}: mean pair loss {:.6}",
            epoch + 1,
            epoch_loss / F::of(pairs.len() as f64)
        );
    }
    Ok(out)
}
