//! Separation of overlapping radar echoes from multiple body sites and
//! pulse-transit-time estimation.
//!
//! Three separation methods share one pipeline (simulate or ingest, gate,
//! remove DC, separate, estimate):
//!
//! * [`beamforming`]: MVDR weights steered at known target directions;
//! * [`jade`]: blind separation by fourth-order cumulant ICA;
//! * [`modelsep`] + [`ga`]: a genetic search maximizing a physical-model
//!   objective (flat I-Q trajectories, sparse and causal impulse responses,
//!   orthogonal beams).

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod beamforming;
pub mod error;
pub mod estimate;
pub mod experiment;
pub mod ga;
pub mod ingest;
pub mod jade;
pub mod linalg;
pub mod modelsep;
pub mod scenario;
pub mod series;

pub use error::{Error, Result};
pub use series::SlowTimeSeries;
