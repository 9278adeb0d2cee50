//! Partially-supervised temporal sentence grounding.
//!
//! Given per-sample video/query feature matrices and partial (single-frame or
//! short-clip) labels, the partial branch learns aligned event-query
//! representations through a quadruple constraint pipeline and an anchor-based
//! event detector, emits grounding pseudo-labels, and a span-based full branch
//! trains on those pseudo-labels for label-free inference.

pub mod checkpoint;
pub mod config;
pub mod constraints;
pub mod corpus;
pub mod detector;
pub mod encoder;
pub mod error;
pub mod fullbranch;
pub mod gradcheck;
pub mod metrics;
pub mod nn;
pub mod pipeline;
pub mod tape;
pub mod tensor;
pub mod train;

pub use config::TrainConfig;
pub use corpus::{Annotation, FeatureRecord, PseudoLabel, SyntheticSpec, TimeSpan};
pub use error::{Error, Result};
pub use metrics::EvalReport;
pub use tensor::Tensor;
