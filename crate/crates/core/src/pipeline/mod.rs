//! End-to-end predictor: preprocessing, encoder, head, and persistence.

mod model_file;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::{CategoryId, CategoryRegistry, LabeledExample};
use crate::encoder::{finetune, EncoderModel, SparseCounts, TrainConfig, DEFAULT_EMBED_DIM, DEFAULT_HASH_DIM};
use crate::error::{Error, Result};
use crate::head::{argmax_category, head_train, topk_categories, HeadModel, ProbVector, DEFAULT_L2_LAMBDA};
use crate::preprocess::{preprocess_log, PreprocessConfig, ProcessedLog, RawLog};
use crate::scalar::Scalar;

pub use model_file::{FORMAT_VERSION, MAGIC};

/// Everything about a model that is fixed before training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineSettings {
    pub preprocess: PreprocessConfig,
    pub hash_dim: usize,
    pub embed_dim: usize,
    pub hash_seed: u64,
    pub init_seed: u64,
    pub l2_lambda: f64,
}

impl Default for PipelineSettings {
    fn default() -> Self {
        PipelineSettings {
            preprocess: PreprocessConfig::default(),
            hash_dim: DEFAULT_HASH_DIM,
            embed_dim: DEFAULT_EMBED_DIM,
            hash_seed: 0x5EED,
            init_seed: 0x1A17,
            l2_lambda: DEFAULT_L2_LAMBDA,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineModel<F> {
    preprocess: PreprocessConfig,
    encoder: EncoderModel<F>,
    head: HeadModel<F>,
    registry: CategoryRegistry,
    format_version: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction<F> {
    pub category: CategoryId,
    pub proba: ProbVector<F>,
    pub topk: Vec<CategoryId>,
}

impl<F: Scalar> PipelineModel<F> {
    pub fn new(
        preprocess: PreprocessConfig,
        encoder: EncoderModel<F>,
        head: HeadModel<F>,
        registry: CategoryRegistry,
    ) -> Result<Self> {
        if encoder.embed_dim() != head.dim() {
            return Err(Error::DimensionMismatch {
                expected: encoder.embed_dim(),
                found: head.dim(),
            });
        }
        if head.classes() != registry.len() {
            return Err(Error::DimensionMismatch {
                expected: registry.len(),
                found: head.classes(),
            });
        }
        Ok(PipelineModel {
            preprocess,
            encoder,
            head,
            registry,
            format_version: FORMAT_VERSION,
        })
    }

    pub fn preprocess_config(&self) -> &PreprocessConfig {
        &self.preprocess
    }

    pub fn encoder(&self) -> &EncoderModel<F> {
        &self.encoder
    }

    pub fn head(&self) -> &HeadModel<F> {
        &self.head
    }

    pub fn registry(&self) -> &CategoryRegistry {
        &self.registry
    }

    pub fn format_version(&self) -> u32 {
        self.format_version
    }

    pub fn preprocess(&self, log: &RawLog) -> ProcessedLog {
        preprocess_log(log, &self.preprocess)
    }

    pub fn embed(&self, log: &ProcessedLog) -> Vec<F> {
        self.encoder.encode(log)
    }

    pub fn proba_processed(&self, log: &ProcessedLog) -> ProbVector<F> {
        self.head
            .predict_proba(&self.embed(log))
            .expect("encoder and head dimensions checked at construction")
    }

    /// Predicts from an already-normalized log. `k` is clamped to `1..=K`.
    pub fn predict_processed(&self, log: &ProcessedLog, k: usize) -> Prediction<F> {
        let proba = self.proba_processed(log);
        let k = k.clamp(1, self.registry.len());
        let topk = topk_categories(&proba, k).expect("k clamped to the class count");
        Prediction {
            category: argmax_category(&proba),
            proba,
            topk,
        }
    }

    pub fn predict(&self, log: &RawLog, k: usize) -> Prediction<F> {
        self.predict_processed(&self.preprocess(log), k)
    }

    /// Category of a raw log segment, the classification function sifted over.
    pub fn classify_lines<S: AsRef<str>>(&self, lines: &[S]) -> CategoryId {
        let proba = self.proba_processed(&self.preprocess(&RawLog::from_lines(lines)));
        argmax_category(&proba)
    }

    pub fn to_text(&self) -> String {
        model_file::write(self)
    }

    pub fn from_text(text: &str) -> Result<Self> {
        model_file::read(text)
    }
}

pub fn predict<F: Scalar>(log: &RawLog, m: &PipelineModel<F>, k: usize) -> Prediction<F> {
    m.predict(log, k)
}

/// Trains from already-normalized logs: fine-tune the encoder, embed every
/// training log, then fit the head.
pub fn train_pipeline_processed<F: Scalar>(
    logs: &[ProcessedLog],
    labels: &[CategoryId],
    cfg: &TrainConfig,
    max_iter: usize,
    registry: &CategoryRegistry,
    settings: &PipelineSettings,
) -> Result<PipelineModel<F>> {
    if logs.is_empty() {
        return Err(Error::invalid("training set is empty"));
    }
    if logs.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: logs.len(),
            found: labels.len(),
        });
    }
    let base = base_encoder::<F>(settings)?;
    let feats: Vec<SparseCounts> = logs.iter().map(|l| base.featurize(l)).collect();
    train_pipeline_features(&feats, labels, cfg, max_iter, registry, settings)
}

/// Untrained encoder described by `settings`; its features are what
/// [`train_pipeline_features`] expects.
pub fn base_encoder<F: Scalar>(settings: &PipelineSettings) -> Result<EncoderModel<F>> {
    EncoderModel::new(
        settings.hash_dim,
        settings.embed_dim,
        settings.hash_seed,
        settings.init_seed,
    )
}

/// Trains from hashed features, letting callers featurize a corpus once.
pub fn train_pipeline_features<F: Scalar>(
    feats: &[SparseCounts],
    labels: &[CategoryId],
    cfg: &TrainConfig,
    max_iter: usize,
    registry: &CategoryRegistry,
    settings: &PipelineSettings,
) -> Result<PipelineModel<F>> {
    if feats.is_empty() {
        return Err(Error::invalid("training set is empty"));
    }
    if feats.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: feats.len(),
            found: labels.len(),
        });
    }
    let base = base_encoder(settings)?;
    let encoder = finetune(&base, feats, labels, cfg)?;
    let embeddings: Vec<Vec<F>> = feats.iter().map(|x| encoder.encode_features(x)).collect();
    let head0 = HeadModel::new(registry.len(), settings.embed_dim, settings.l2_lambda)?;
    let head = head_train(&embeddings, labels, max_iter, &head0, registry)?;
    PipelineModel::new(settings.preprocess.clone(), encoder, head, registry.clone())
}

pub fn train_pipeline<F: Scalar>(
    train: &[LabeledExample],
    cfg: &TrainConfig,
    max_iter: usize,
    registry: &CategoryRegistry,
    settings: &PipelineSettings,
) -> Result<PipelineModel<F>> {
    let logs: Vec<ProcessedLog> = train
        .iter()
        .map(|ex| preprocess_log(&ex.raw, &settings.preprocess))
        .collect();
    let labels: Vec<CategoryId> = train.iter().map(|ex| ex.category).collect();
    train_pipeline_processed(&logs, &labels, cfg, max_iter, registry, settings)
}

pub fn save_model<F: Scalar>(m: &PipelineModel<F>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, m.to_text()).map_err(|e| Error::io(path, e))
}

pub fn load_model<F: Scalar>(path: impl AsRef<Path>) -> Result<PipelineModel<F>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    PipelineModel::from_text(&text)
}
