//! Object-centric open-vocabulary image retrieval.
//!
//! Dense per-patch vision-language embeddings are condensed into a handful of
//! representative vectors per image, stored in flat binary packs, indexed,
//! and ranked against text-query vectors by maximum cosine similarity.
//!
//! The pipeline has two stages:
//!
//! * offline: [`tensor`] turns a backbone's final feature grid into dense
//!   embeddings, [`aggregate`] compresses them into a [`RepresentativeSet`],
//!   [`store`] persists them and [`index`] builds a [`FlatIndex`];
//! * online: [`index::search`] ranks images for a [`QueryVector`], either
//!   in-process, from the CLI or through the HTTP [`service`].
//!
//! [`eval`] implements the retrieval metrics (AP, mAP, mAP@k, size bands,
//! rare-category splits) and [`synth`] generates planted-concept datasets for
//! desk-scale benchmarking without any model weights.

pub mod aggregate;
pub mod cli;
pub mod error;
pub mod eval;
pub mod index;
pub mod seed;
pub mod service;
pub mod store;
pub mod synth;
pub mod tensor;

pub use aggregate::{AggregationConfig, ClusterAssignment, Method, RepresentativeSet, SegmentMask};
pub use error::{Error, Result};
pub use eval::{EvalReport, EvalSpec};
pub use index::{FlatIndex, QueryVector, RankedList};
pub use tensor::{EmbeddingMap, FeatureGrid, ProjectionWeights};
