//! Explainable micro-segmentation of network flows.
//!
//! Flow tables are encoded by an autoencoder trained with simulated federated
//! averaging, related through a latent-space hypergraph, embedded spectrally,
//! clustered into micro-segments, scored for operational risk, and turned into
//! allow/block policies with LIME and SHAP justifications.
//!
//! Each stage lives in its own module; [`pipeline`] wires them together with
//! content-hashed artifacts.

pub mod dnae;
pub mod error;
pub mod eval;
pub mod explain;
pub mod hypergraph;
pub mod ingest;
pub mod io;
pub mod linalg;
pub mod pipeline;
pub mod risk;
pub mod rng;
pub mod segment;

pub use error::{Error, Result};
