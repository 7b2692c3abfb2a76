//! Multimodal top-K recommendation that aligns LLM-derived item and user
//! features with collaborative ID embeddings.
//!
//! The crate is organised bottom-up:
//!
//! * [`datamodel`] ingests interactions and feature files, filters, splits and
//!   generates synthetic data.
//! * [`graphs`] builds the frozen KNN modality graphs and the normalised
//!   user-item bipartite graph.
//! * [`autodiff`] is a small matrix-level reverse-mode tape used by every
//!   trainable component.
//! * [`encoders`] holds multi-head graph attention and LightGCN propagation.
//! * [`alignment`] implements contrastive (InfoNCE) and optimal-transport
//!   alignment plus the fusion rules.
//! * [`trainer`] assembles the composite objective and optimises it.
//! * [`evaluator`] computes full-ranking Recall@K / NDCG@K.
//! * [`theory`] numerically checks the alignment error bounds.
//! * [`cli`] wires everything into pipeline commands.

pub mod alignment;
pub mod autodiff;
pub mod cli;
pub mod datamodel;
pub mod encoders;
pub mod error;
pub mod evaluator;
pub mod graphs;
pub mod theory;
pub mod trainer;

pub use error::{Error, Result};
