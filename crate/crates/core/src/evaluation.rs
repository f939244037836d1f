//! Monte Carlo cross-validation with per-iteration random hyperparameter
//! search, plus drivers for category-count sweeps and sift sweeps.
//!
//! Iteration `i` uses seed `base_seed + i` for its stratified split; shot
//! sampling and each trial's draws and training derive from that seed on
//! fixed streams, so iterations are independent and can run in any order.

use std::collections::BTreeMap;
use std::convert::Infallible;
use std::path::{Path, PathBuf};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{
    check_4n, restrict_corpus, sample_shot_indices, split_indices, CategoryId, CategoryRegistry, FewShotConfig,
    LabeledExample, SplitSpec,
};
use crate::encoder::{SparseCounts, TrainConfig};
use crate::error::{Error, Result};
use crate::head::ProbVector;
use crate::logsift::{logsift, n_consistency, sift_reduction_ratio, SiftConfig, SiftReport, SiftResult};
use crate::metrics::{aggregate, macro_f1, ConfusionMatrix, MetricsReport};
use crate::pipeline::{base_encoder, train_pipeline_features, PipelineModel, PipelineSettings};
use crate::preprocess::preprocess_log;
use crate::scalar::Scalar;
use crate::seed;

pub const LR_MIN: f64 = 1e-6;
pub const LR_MAX: f64 = 1e-3;
pub const EPOCH_CHOICES: [usize; 2] = [1, 2];
pub const BATCH_CHOICES: [usize; 3] = [2, 4, 8];
pub const MAX_ITER_CHOICES: [usize; 6] = [50, 100, 150, 200, 250, 300];

const STREAM_SHOTS: u64 = 1;
const STREAM_TRIAL: u64 = 100;
const STREAM_TRAIN: u64 = 200;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    pub body_learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub max_iter: usize,
}

impl HyperParams {
    pub fn train_config(&self, pair_rounds: usize, seed: u64) -> TrainConfig {
        TrainConfig {
            body_learning_rate: self.body_learning_rate,
            epochs: self.epochs,
            batch_size: self.batch_size,
            pair_rounds,
            seed,
        }
    }
}

/// Learning rate log-uniform over its range; the rest uniform over their sets.
pub fn sample_hyperparams(seed: u64) -> HyperParams {
    let mut rng = seed::rng(seed);
    let log_lr = rng.gen_range(LR_MIN.ln()..=LR_MAX.ln());
    HyperParams {
        body_learning_rate: log_lr.exp().clamp(LR_MIN, LR_MAX),
        epochs: EPOCH_CHOICES[rng.gen_range(0..EPOCH_CHOICES.len())],
        batch_size: BATCH_CHOICES[rng.gen_range(0..BATCH_CHOICES.len())],
        max_iter: MAX_ITER_CHOICES[rng.gen_range(0..MAX_ITER_CHOICES.len())],
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MccvConfig {
    pub iterations: usize,
    pub trials: usize,
    pub shots: usize,
    pub split: SplitSpec,
    pub base_seed: u64,
    pub pair_rounds: usize,
    /// Worker threads; 1 runs iterations inline.
    pub jobs: usize,
    pub settings: PipelineSettings,
}

impl Default for MccvConfig {
    fn default() -> Self {
        MccvConfig {
            iterations: 30,
            trials: 5,
            shots: 12,
            split: SplitSpec::default(),
            base_seed: 0,
            pair_rounds: TrainConfig::default().pair_rounds,
            jobs: 1,
            settings: PipelineSettings::default(),
        }
    }
}

impl MccvConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 || self.trials == 0 || self.shots == 0 || self.jobs == 0 {
            return Err(Error::invalid("iterations, trials, shots and jobs must all be at least 1"));
        }
        Ok(())
    }

    fn iteration_seed(&self, i: usize) -> u64 {
        self.base_seed.wrapping_add(i as u64)
    }
}

/// Outcome of one search trial on the validation partition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub hyperparams: HyperParams,
    pub validation_macro_f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub seed: u64,
    pub trials: Vec<TrialRecord>,
    pub best_trial: usize,
    pub test_size: usize,
    pub report: MetricsReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MccvResult {
    pub mean: MetricsReport,
    pub std: MetricsReport,
    pub iterations: Vec<IterationRecord>,
}

/// Corpus normalized and hashed once, shared by every iteration.
struct Prepared<'a> {
    labels: Vec<CategoryId>,
    feats: Vec<SparseCounts>,
    registry: &'a CategoryRegistry,
}

impl<'a> Prepared<'a> {
    fn new<F: Scalar>(data: &[LabeledExample], settings: &PipelineSettings, registry: &'a CategoryRegistry) -> Result<Self> {
        let base = base_encoder::<F>(settings)?;
        let feats = data
            .par_iter()
            .map(|ex| base.featurize(&preprocess_log(&ex.raw, &settings.preprocess)))
            .collect();
        Ok(Prepared {
            labels: data.iter().map(|e| e.category).collect(),
            feats,
            registry,
        })
    }

    fn probas<F: Scalar>(&self, model: &PipelineModel<F>, idx: &[usize]) -> Vec<ProbVector<F>> {
        idx.iter()
            .map(|&i| {
                let e = model.encoder().encode_features(&self.feats[i]);
                model.head().predict_proba(&e).expect("dimensions checked at construction")
            })
            .collect()
    }

    fn labels_of(&self, idx: &[usize]) -> Vec<CategoryId> {
        idx.iter().map(|&i| self.labels[i]).collect()
    }
}

fn ensure_4n(data: &[LabeledExample], shots: usize, registry: &CategoryRegistry) -> Result<()> {
    let short = check_4n(data, shots, registry);
    if short.is_empty() {
        Ok(())
    } else {
        Err(Error::BelowFourN {
            shots,
            categories: short,
        })
    }
}

fn iterate<F: Scalar>(p: &Prepared, i: usize, cfg: &MccvConfig) -> Result<(IterationRecord, PipelineModel<F>)> {
    let it_seed = cfg.iteration_seed(i);
    let split = split_indices(&p.labels, &cfg.split.with_seed(it_seed), p.registry)?;
    let learn_labels = p.labels_of(&split.learn);
    let shots = sample_shot_indices(
        &learn_labels,
        &FewShotConfig {
            shots_per_category: cfg.shots,
            seed: seed::derive(it_seed, STREAM_SHOTS),
        },
        p.registry,
    )?;
    let train_idx: Vec<usize> = shots.iter().map(|&k| split.learn[k]).collect();
    let train_feats: Vec<SparseCounts> = train_idx.iter().map(|&k| p.feats[k].clone()).collect();
    let train_labels = p.labels_of(&train_idx);
    let valid_labels = p.labels_of(&split.valid);
    let k = p.registry.len();

    let mut trials = Vec::with_capacity(cfg.trials);
    let mut best: Option<(usize, f64, PipelineModel<F>)> = None;
    for t in 0..cfg.trials {
        let hp = sample_hyperparams(seed::derive(it_seed, STREAM_TRIAL + t as u64));
        let train_cfg = hp.train_config(cfg.pair_rounds, seed::derive(it_seed, STREAM_TRAIN + t as u64));
        let model = train_pipeline_features::<F>(
            &train_feats,
            &train_labels,
            &train_cfg,
            hp.max_iter,
            p.registry,
            &cfg.settings,
        )?;
        let score = if split.valid.is_empty() {
            0.0
        } else {
            let predicted: Vec<CategoryId> = p
                .probas(&model, &split.valid)
                .iter()
                .map(crate::head::argmax_category)
                .collect();
            macro_f1(&ConfusionMatrix::from_predictions(&valid_labels, &predicted, k)?)?
        };
        log::debug!("iteration {i} trial {t}: {hp:?} validation macro F1 {score:.4}");
        trials.push(TrialRecord {
            hyperparams: hp,
            validation_macro_f1: score,
        });
        // strict comparison keeps the earliest trial on ties
        if best.as_ref().is_none_or(|b| score > b.1) {
            best = Some((t, score, model));
        }
    }
    let (best_trial, _, model) = best.expect("at least one trial");

    if split.test.is_empty() {
        return Err(Error::invalid("test partition is empty"));
    }
    let report = MetricsReport::compute(&p.probas(&model, &split.test), &p.labels_of(&split.test), k)?;
    log::info!("iteration {i}: macro F1 {:.4}, top-1 {:.4}", report.macro_f1, report.top1);
    Ok((
        IterationRecord {
            iteration: i,
            seed: it_seed,
            trials,
            best_trial,
            test_size: split.test.len(),
            report,
        },
        model,
    ))
}

/// One iteration: split, sample shots, search, then score the best trial's
/// model on the held-out test partition.
pub fn mccv_iteration<F: Scalar>(
    data: &[LabeledExample],
    i: usize,
    cfg: &MccvConfig,
    registry: &CategoryRegistry,
) -> Result<(IterationRecord, PipelineModel<F>)> {
    cfg.validate()?;
    ensure_4n(data, cfg.shots, registry)?;
    let p = Prepared::new::<F>(data, &cfg.settings, registry)?;
    iterate(&p, i, cfg)
}

pub fn run_mccv<F: Scalar>(data: &[LabeledExample], cfg: &MccvConfig, registry: &CategoryRegistry) -> Result<MccvResult> {
    cfg.validate()?;
    ensure_4n(data, cfg.shots, registry)?;
    let p = Prepared::new::<F>(data, &cfg.settings, registry)?;
    let run = |i: usize| iterate::<F>(&p, i, cfg).map(|(rec, _)| rec);
    let iterations: Vec<IterationRecord> = if cfg.jobs > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.jobs)
            .build()
            .map_err(|e| Error::invalid(format!("cannot start worker pool: {e}")))?;
        pool.install(|| (0..cfg.iterations).into_par_iter().map(run).collect::<Result<_>>())?
    } else {
        (0..cfg.iterations).map(run).collect::<Result<_>>()?
    };
    let reports: Vec<MetricsReport> = iterations.iter().map(|r| r.report.clone()).collect();
    let (mean, std) = aggregate(&reports)?;
    Ok(MccvResult { mean, std, iterations })
}

/// Aggregate for one category subset, with per-class F1 keyed by name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsetReport {
    pub categories: Vec<String>,
    pub mean: MetricsReport,
    pub std: MetricsReport,
    pub per_class_f1: BTreeMap<String, f64>,
    pub per_class_f1_std: BTreeMap<String, f64>,
    pub iterations: Vec<IterationRecord>,
}

impl SubsetReport {
    pub fn k(&self) -> usize {
        self.categories.len()
    }
}

/// An independent MCCV run per subset of category ids, restricted to the
/// matching examples.
pub fn run_incremental_k<F: Scalar>(
    data: &[LabeledExample],
    cfg: &MccvConfig,
    registry: &CategoryRegistry,
    k_sets: &[Vec<CategoryId>],
) -> Result<Vec<SubsetReport>> {
    k_sets
        .iter()
        .map(|ids| {
            let (sub_reg, sub_data) = restrict_corpus(data, registry, ids)?;
            let res = run_mccv::<F>(&sub_data, cfg, &sub_reg)?;
            let names: Vec<String> = sub_reg.iter().map(|c| c.name.clone()).collect();
            let keyed = |v: &[f64]| names.iter().cloned().zip(v.iter().copied()).collect();
            Ok(SubsetReport {
                per_class_f1: keyed(&res.mean.per_class_f1),
                per_class_f1_std: keyed(&res.std.per_class_f1),
                categories: names,
                mean: res.mean,
                std: res.std,
                iterations: res.iterations,
            })
        })
        .collect()
}

/// Category ids whose priority rank lies in `lo..=hi`.
pub fn rank_subset(registry: &CategoryRegistry, lo: u32, hi: u32) -> Result<Vec<CategoryId>> {
    let ids = registry.ids_by_rank(lo, hi);
    if ids.is_empty() {
        return Err(Error::invalid(format!("no categories with rank in {lo}..={hi}")));
    }
    Ok(ids)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub logs: usize,
    pub mean_reduction: f64,
    pub std_reduction: f64,
    pub consistency_2: f64,
    pub consistency_10: f64,
    pub consistency_30: f64,
    pub mean_elapsed_ms: f64,
    pub mean_classifier_calls: f64,
    pub records: Vec<SiftReport>,
}

/// Sifts every log with `model` as the oracle.
pub fn run_sift_sweep<F: Scalar>(
    test: &[LabeledExample],
    model: &PipelineModel<F>,
    cfg: &SiftConfig,
) -> Result<SweepReport> {
    if test.is_empty() {
        return Err(Error::invalid("sift sweep needs at least one log"));
    }
    let mut results: Vec<SiftResult> = Vec::with_capacity(test.len());
    let mut records = Vec::with_capacity(test.len());
    for ex in test {
        let lines = ex.raw.lines();
        let r = logsift(lines, |seg: &[String]| Ok::<_, Infallible>(model.classify_lines(seg)), cfg)
            .unwrap_or_else(|never| match never {});
        let category = model.registry().name(r.original_category).to_string();
        records.push(SiftReport::new(ex.id.clone(), category, lines.len(), &r));
        results.push(r);
    }
    let n = test.len() as f64;
    let ratios: Vec<f64> = test
        .iter()
        .zip(&results)
        .map(|(ex, r)| sift_reduction_ratio(ex.raw.len(), r))
        .collect();
    let mean_reduction = ratios.iter().sum::<f64>() / n;
    let var = ratios.iter().map(|r| (r - mean_reduction).powi(2)).sum::<f64>() / n;
    Ok(SweepReport {
        logs: test.len(),
        mean_reduction,
        std_reduction: var.sqrt(),
        consistency_2: n_consistency(&results, 2),
        consistency_10: n_consistency(&results, 10),
        consistency_30: n_consistency(&results, 30),
        mean_elapsed_ms: results.iter().map(|r| r.elapsed.as_secs_f64() * 1e3).sum::<f64>() / n,
        mean_classifier_calls: results.iter().map(|r| r.classifier_calls as f64).sum::<f64>() / n,
        records,
    })
}

/// Experiment description read from TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub corpus: PathBuf,
    pub registry: Option<PathBuf>,
    #[serde(default = "default_shots")]
    pub shots: usize,
    #[serde(default = "default_iterations")]
    pub iterations: usize,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default)]
    pub seed: u64,
    /// Inclusive priority-rank ranges, e.g. `[[1, 8], [1, 13]]`.
    #[serde(default)]
    pub k_sets: Vec<[u32; 2]>,
    #[serde(default = "default_tau")]
    pub tau: usize,
    pub output_dir: PathBuf,
}

fn default_shots() -> usize {
    12
}
fn default_iterations() -> usize {
    30
}
fn default_trials() -> usize {
    5
}
fn default_tau() -> usize {
    SiftConfig::default().tau
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Parse {
            line: e.span().map_or(0, |s| text[..s.start].lines().count().max(1)),
            message: e.message().to_string(),
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn mccv(&self) -> MccvConfig {
        MccvConfig {
            iterations: self.iterations,
            trials: self.trials,
            shots: self.shots,
            base_seed: self.seed,
            ..MccvConfig::default()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hyperparams_within_bounds() {
        for s in 0..1000 {
            let hp = sample_hyperparams(s);
            assert!((LR_MIN..=LR_MAX).contains(&hp.body_learning_rate));
            assert!(EPOCH_CHOICES.contains(&hp.epochs));
            assert!(BATCH_CHOICES.contains(&hp.batch_size));
            assert!(hp.max_iter.is_multiple_of(50) && (50..=300).contains(&hp.max_iter));
        }
        assert_eq!(sample_hyperparams(42), sample_hyperparams(42));
    }

    #[test]
    fn hyperparams_cover_the_space() {
        let hps: Vec<HyperParams> = (0..500).map(sample_hyperparams).collect();
        for m in MAX_ITER_CHOICES {
            assert!(hps.iter().any(|h| h.max_iter == m));
        }
        // log-uniform: roughly a third of draws per decade
        let low = hps.iter().filter(|h| h.body_learning_rate < 1e-5).count();
        assert!((100..240).contains(&low), "{low}");
    }

    #[test]
    fn experiment_config_from_toml() {
        let cfg = ExperimentConfig::from_toml(
            r#"
corpus = "corpus.jsonl"
output_dir = "out"
shots = 8
k_sets = [[1, 8], [1, 13]]
"#,
        )
        .unwrap();
        assert_eq!(cfg.shots, 8);
        assert_eq!(cfg.iterations, 30);
        assert_eq!(cfg.tau, 2);
        assert_eq!(cfg.k_sets, vec![[1, 8], [1, 13]]);
        assert_eq!(cfg.mccv().shots, 8);
        assert!(ExperimentConfig::from_toml("corpus = 1").is_err());
    }

    #[test]
    fn invalid_config_rejected() {
        let cfg = MccvConfig {
            trials: 0,
            ..MccvConfig::default()
        };
        assert!(cfg.validate().is_err());
    }
}
