//! Multinomial logistic-regression head over embeddings.

use serde::{Deserialize, Serialize};

use crate::dataset::{CategoryId, CategoryRegistry};
use crate::error::{Error, Result};
use crate::scalar::{dot, Scalar};

pub const DEFAULT_L2_LAMBDA: f64 = 1e-4;
pub const HEAD_STEP: f64 = 0.1;

/// A probability distribution over categories.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbVector<F>(Vec<F>);

impl<F: Scalar> ProbVector<F> {
    /// Validates non-negativity and unit sum (within 1e-6, loose enough for `f32`).
    pub fn new(p: Vec<F>) -> Result<Self> {
        if p.is_empty() || p.iter().any(|&v| v.is_nan() || v < F::zero()) {
            return Err(Error::invalid("probabilities must be non-negative and non-empty"));
        }
        let sum: F = p.iter().copied().sum();
        if (sum.as_f64() - 1.0).abs() > 1e-6 {
            return Err(Error::invalid(format!("probabilities sum to {sum}, not 1")));
        }
        Ok(ProbVector(p))
    }

    pub fn as_slice(&self) -> &[F] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Max-subtracted softmax.
pub fn softmax<F: Scalar>(logits: &[F]) -> Vec<F> {
    let max = logits.iter().copied().fold(F::neg_infinity(), F::max);
    let exps: Vec<F> = logits.iter().map(|&l| (l - max).exp()).collect();
    let total: F = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / total).collect()
}

fn log_sum_exp<F: Scalar>(logits: &[F]) -> F {
    let max = logits.iter().copied().fold(F::neg_infinity(), F::max);
    max + logits.iter().map(|&l| (l - max).exp()).sum::<F>().ln()
}

/// Lowest id among those attaining the maximum probability.
pub fn argmax_category<F: Scalar>(p: &ProbVector<F>) -> CategoryId {
    let mut best = 0;
    for (k, &v) in p.0.iter().enumerate() {
        if v > p.0[best] {
            best = k;
        }
    }
    best
}

/// Ids by descending probability, ties broken by ascending id.
pub fn topk_categories<F: Scalar>(p: &ProbVector<F>, k: usize) -> Result<Vec<CategoryId>> {
    if k == 0 || k > p.len() {
        return Err(Error::invalid(format!("top-k needs 1 <= k <= {}, got {k}", p.len())));
    }
    let mut ids: Vec<CategoryId> = (0..p.len()).collect();
    ids.sort_by(|&a, &b| p.0[b].partial_cmp(&p.0[a]).unwrap().then(a.cmp(&b)));
    ids.truncate(k);
    Ok(ids)
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeadModel<F> {
    classes: usize,
    dim: usize,
    /// Row-major `classes x dim`.
    weights: Vec<F>,
    bias: Vec<F>,
    l2_lambda: f64,
}

impl<F: Scalar> HeadModel<F> {
    /// All-zero weights and bias.
    pub fn new(classes: usize, dim: usize, l2_lambda: f64) -> Result<Self> {
        if classes == 0 || dim == 0 {
            return Err(Error::invalid("head needs at least one class and one input dimension"));
        }
        if !(l2_lambda >= 0.0 && l2_lambda.is_finite()) {
            return Err(Error::invalid("l2 lambda must be finite and non-negative"));
        }
        Ok(HeadModel {
            classes,
            dim,
            weights: vec![F::zero(); classes * dim],
            bias: vec![F::zero(); classes],
            l2_lambda,
        })
    }

    pub fn from_parts(weights: Vec<Vec<F>>, bias: Vec<F>, l2_lambda: f64) -> Result<Self> {
        let classes = weights.len();
        let dim = weights.first().map_or(0, Vec::len);
        let mut m = Self::new(classes, dim, l2_lambda)?;
        if bias.len() != classes {
            return Err(Error::DimensionMismatch {
                expected: classes,
                found: bias.len(),
            });
        }
        for row in &weights {
            if row.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: row.len(),
                });
            }
        }
        m.weights = weights.into_iter().flatten().collect();
        m.bias = bias;
        Ok(m)
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn l2_lambda(&self) -> f64 {
        self.l2_lambda
    }

    pub fn weight_row(&self, k: usize) -> &[F] {
        &self.weights[k * self.dim..(k + 1) * self.dim]
    }

    pub fn weight_row_mut(&mut self, k: usize) -> &mut [F] {
        &mut self.weights[k * self.dim..(k + 1) * self.dim]
    }

    pub fn bias(&self) -> &[F] {
        &self.bias
    }

    pub fn bias_mut(&mut self) -> &mut [F] {
        &mut self.bias
    }

    fn check_dim(&self, e: &[F]) -> Result<()> {
        if e.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: e.len(),
            });
        }
        Ok(())
    }

    pub fn logits(&self, e: &[F]) -> Result<Vec<F>> {
        self.check_dim(e)?;
        Ok((0..self.classes)
            .map(|k| dot(self.weight_row(k), e) + self.bias[k])
            .collect())
    }

    pub fn predict_proba(&self, e: &[F]) -> Result<ProbVector<F>> {
        Ok(ProbVector(softmax(&self.logits(e)?)))
    }

    fn l2_term(&self) -> F {
        F::of(0.5 * self.l2_lambda) * dot(&self.weights, &self.weights)
    }

    /// Mean cross-entropy plus `(lambda / 2) * ||W||_F^2`.
    pub fn objective(&self, embeddings: &[Vec<F>], labels: &[CategoryId]) -> Result<F> {
        let mut total = F::zero();
        for (e, &y) in embeddings.iter().zip(labels) {
            let logits = self.logits(e)?;
            total += log_sum_exp(&logits) - logits[y];
        }
        Ok(total / F::of(embeddings.len().max(1) as f64) + self.l2_term())
    }

    /// Gradient of [`Self::objective`] as `(dW row-major, db)`.
    pub fn gradient(&self, embeddings: &[Vec<F>], labels: &[CategoryId]) -> Result<(Vec<F>, Vec<F>)> {
        let mut gw = vec![F::zero(); self.weights.len()];
        let mut gb = vec![F::zero(); self.classes];
        let n = F::of(embeddings.len().max(1) as f64);
        for (e, &y) in embeddings.iter().zip(labels) {
            let p = softmax(&self.logits(e)?);
            for k in 0..self.classes {
                let r = (p[k] - if k == y { F::one() } else { F::zero() }) / n;
                gb[k] += r;
                for (g, &x) in gw[k * self.dim..(k + 1) * self.dim].iter_mut().zip(e) {
                    *g += r * x;
                }
            }
        }
        let lambda = F::of(self.l2_lambda);
        for (g, &w) in gw.iter_mut().zip(&self.weights) {
            *g += lambda * w;
        }
        Ok((gw, gb))
    }

    fn stepped(&self, gw: &[F], gb: &[F], step: F) -> Self {
        let mut next = self.clone();
        for (w, &g) in next.weights.iter_mut().zip(gw) {
            *w -= step * g;
        }
        for (b, &g) in next.bias.iter_mut().zip(gb) {
            *b -= step * g;
        }
        next
    }
}

pub fn head_predict_proba<F: Scalar>(e: &[F], m: &HeadModel<F>) -> Result<ProbVector<F>> {
    m.predict_proba(e)
}

/// Full-batch gradient descent for exactly `max_iter` iterations starting at
/// step 0.1. A step that would increase the objective is halved until it
/// does not, and the smaller step is kept from then on.
pub fn head_train<F: Scalar>(
    embeddings: &[Vec<F>],
    labels: &[CategoryId],
    max_iter: usize,
    m: &HeadModel<F>,
    registry: &CategoryRegistry,
) -> Result<HeadModel<F>> {
    if embeddings.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: embeddings.len(),
            found: labels.len(),
        });
    }
    if registry.len() != m.classes {
        return Err(Error::DimensionMismatch {
            expected: m.classes,
            found: registry.len(),
        });
    }
    let mut present = vec![false; m.classes];
    for &y in labels {
        *present
            .get_mut(y)
            .ok_or_else(|| Error::invalid(format!("label {y} outside the head's {} classes", m.classes)))? = true;
    }
    if let Some(missing) = present.iter().position(|&p| !p) {
        return Err(Error::InsufficientExamples {
            category: registry.name(missing).to_string(),
            needed: 1,
            found: 0,
        });
    }
    for e in embeddings {
        m.check_dim(e)?;
    }

    let mut model = m.clone();
    let mut step = F::of(HEAD_STEP);
    let mut obj = model.objective(embeddings, labels)?;
    let min_step = F::of(1e-30);
    for _ in 0..max_iter {
        let (gw, gb) = model.gradient(embeddings, labels)?;
        while step > min_step {
            let cand = model.stepped(&gw, &gb, step);
            let cand_obj = cand.objective(embeddings, labels)?;
            if cand_obj <= obj {
                model = cand;
                obj = cand_obj;
                break;
            }
            step /= F::of(2.0);
        }
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_model_is_uniform() {
        let m = HeadModel::<f64>::new(4, 3, 0.0).unwrap();
        let p = m.predict_proba(&[0.3, -1.0, 2.0]).unwrap();
        assert!(p.as_slice().iter().all(|&v| (v - 0.25).abs() < 1e-15));
    }

    #[test]
    fn softmax_is_stable() {
        let p = softmax(&[1000.0f64, 0.0]);
        assert!((p[0] - 1.0).abs() < 1e-12 && p[1] >= 0.0 && p[1] < 1e-300);
        assert!(p.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn dimension_mismatch() {
        let m = HeadModel::<f64>::new(2, 3, 0.0).unwrap();
        assert!(matches!(
            m.predict_proba(&[1.0]),
            Err(Error::DimensionMismatch { expected: 3, found: 1 })
        ));
    }

    #[test]
    fn argmax_and_topk() {
        let p = ProbVector::new(vec![0.1, 0.7, 0.2]).unwrap();
        assert_eq!(argmax_category(&p), 1);
        let tie = ProbVector::new(vec![0.5, 0.5]).unwrap();
        assert_eq!(argmax_category(&tie), 0);
        let p = ProbVector::new(vec![0.5, 0.3, 0.2]).unwrap();
        assert_eq!(topk_categories(&p, 2).unwrap(), [0, 1]);
        let mut all = topk_categories(&p, 3).unwrap();
        all.sort();
        assert_eq!(all, [0, 1, 2]);
        let tie = ProbVector::new(vec![0.4, 0.4, 0.2]).unwrap();
        assert_eq!(topk_categories(&tie, 1).unwrap(), [0]);
        assert!(topk_categories(&p, 4).is_err());
        let onehot = ProbVector::new(vec![0.0, 0.0, 1.0]).unwrap();
        assert_eq!(argmax_category(&onehot), 2);
    }

    #[test]
    fn zero_iterations_is_identity() {
        let reg = CategoryRegistry::from_names(["a", "b"]).unwrap();
        let m = HeadModel::<f64>::new(2, 2, 1e-4).unwrap();
        let emb = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        assert_eq!(head_train(&emb, &[0, 1], 0, &m, &reg).unwrap(), m);
    }

    #[test]
    fn missing_category_is_named() {
        let reg = CategoryRegistry::from_names(["a", "b"]).unwrap();
        let m = HeadModel::<f64>::new(2, 2, 1e-4).unwrap();
        let emb = vec![vec![1.0, 0.0]];
        match head_train(&emb, &[0], 10, &m, &reg) {
            Err(Error::InsufficientExamples { category, .. }) => assert_eq!(category, "b"),
            other => panic!("unexpected {other:?}"),
        }
    }
}
