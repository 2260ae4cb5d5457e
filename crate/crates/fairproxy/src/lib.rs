//! Unsupervised proxy labels for a withheld sensitive attribute, plus the
//! in-processing bias mitigation that consumes them.
//!
//! The pipeline has two stages. Stage one trains a self-supervised embedding
//! generator (a tabular autoencoder or a masked-field transformer) over all
//! rows of a dataset whose sensitive column is withheld from the features.
//! Stage two clusters the embeddings into two groups that stand in for the
//! unavailable sensitive attribute. The proxy labels then feed standard
//! in-processing mitigation (adversarial debiasing, fair mixup), and fairness
//! is evaluated against the true, withheld attribute.
//!
//! Modules map onto the pipeline stages:
//!
//! - [`dataset`]: Adult Income ingestion/encoding, splits, synthetic oracles
//! - [`nncore`]: dense layers, losses, Adam, finite-difference gradient checks
//! - [`embedding`]: autoencoder and transformer embedding generators
//! - [`clustering`]: k-means, agglomerative, BIRCH, proxy assignment
//! - [`mitigation`]: ERM / adversarial debiasing / fair mixup trainers
//! - [`metrics`]: average precision, SPD, equalized-odds differences
//! - [`probe`]: linear probes over frozen embeddings, weight cosines
//! - [`artifact`]: manifests, checkpoints, CSV persistence
//! - [`pipeline`]: the staged commands the CLI exposes

pub mod artifact;
pub mod clustering;
pub mod dataset;
pub mod embedding;
pub mod error;
pub mod metrics;
pub mod mitigation;
pub mod nncore;
pub mod pipeline;
pub mod probe;

pub use error::{Error, Result};
