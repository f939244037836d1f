//! Few-shot classification of intermittent CI job failures from raw logs,
//! and bisection search for the log lines behind each prediction.
//!
//! The numeric core is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix the precision for the common cases.

pub mod corpus_gen;
pub mod dataset;
pub mod encoder;
pub mod error;
pub mod evaluation;
pub mod head;
pub mod logsift;
pub mod metrics;
pub mod pipeline;
pub mod preprocess;
pub mod scalar;
pub mod seed;

pub use dataset::{CategoryId, CategoryRegistry, LabeledExample};
pub use error::{Error, Result};
pub use logsift::{logsift, LineRange, SiftConfig, SiftResult};
pub use metrics::MetricsReport;
pub use pipeline::PipelineSettings;
pub use preprocess::{preprocess_log, PreprocessConfig, ProcessedLog, RawLog};
pub use scalar::Scalar;

pub type Pipeline = pipeline::PipelineModel<f64>;
pub type Encoder = encoder::EncoderModel<f64>;
pub type Head = head::HeadModel<f64>;
pub type Prediction = pipeline::Prediction<f64>;
pub type ProbVector = head::ProbVector<f64>;

pub type Pipeline32 = pipeline::PipelineModel<f32>;
pub type Encoder32 = encoder::EncoderModel<f32>;
pub type Head32 = head::HeadModel<f32>;
