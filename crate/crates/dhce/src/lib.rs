//! DHCE: sequential diagnosis prediction over dynamic per-visit
//! hypergraphs, with clinical-event fusion.
//!
//! The crate ingests chronological patient visit records, builds one
//! hypergraph per visit with a chronic/acute split of the diagnoses,
//! runs an attention/GRU pipeline over the visit sequence, fuses in an
//! encoded representation of the visit's clinical events, and predicts
//! the diseases of the next visit. Training runs on a built-in
//! reverse-mode differentiation kernel; every gradient is exact and
//! checkable against finite differences.
//!
//! Modules:
//! - [`ehr`]: data model, JSONL ingestion, splitting, synthetic records
//! - [`hypergraph`]: incidence matrices and chronic/acute subgraphs
//! - [`numkit`]: tensors, the differentiation tape, Adam, grad checking
//! - [`model`]: the network itself (embeddings through loss)
//! - [`events`]: clinical-event serialization and text encoders
//! - [`harness`]: training, evaluation, checkpoints, configuration

pub mod ehr;
pub mod events;
pub mod harness;
pub mod hypergraph;
pub mod model;
pub mod numkit;
