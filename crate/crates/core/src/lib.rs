//! Bootstrapped detection of abusive intent in forum text: corpus cleaning,
//! intent templates, co-trained n-gram and sequence learners, abuse/intent
//! fusion and the annotation service.

pub mod abuse;
pub mod annotation;
pub mod bootstrap;
pub mod config;
pub mod corpus;
pub mod embedding;
pub mod io;
pub mod ngram;
pub mod pipeline;
pub mod scoring;
pub mod seed;
pub mod sequence;

mod error;

pub use annotation::{AnnotationConfig, AnnotationService, ServiceReport};
pub use bootstrap::{LabelSource, LabelState, RoundReport};
pub use config::{load_config, RunConfig};
pub use corpus::{RawDocument, Segment, Source};
pub use embedding::{ConeConfig, EmbeddingTable};
pub use error::{AnnotationError, Error, Result, TrainError};
pub use ngram::{NgramIndex, NgramScore};
pub use pipeline::{run_pipeline, RunManifest};
pub use scoring::{DocumentScore, ScoreRecord};
pub use seed::{DesireVerbs, InitialLabel, SegmentParse, TemplateMatcher};
pub use sequence::{ModelConfig, SequenceModel, TextEncoder};
