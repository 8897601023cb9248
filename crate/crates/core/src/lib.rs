//! Threshold-mix traffic simulation and the statistical disclosure attack family.
//!
//! * [`traffic`] draws synthetic rounds from sender frequencies and profiles.
//! * [`attacks`] estimates sender profiles from round observations
//!   (SDA, SDA0, SDA1, SDA2 and the least-squares LSDA).
//! * [`theory`] predicts the asymptotic error of LSDA and SDA2 from ground truth.
//! * [`metrics`] and [`harness`] measure and sweep those errors.
//!
//! With the default `parallel` feature per-user attacks and experiment
//! repetitions run on rayon; without it everything is sequential.

pub mod attacks;
pub mod error;
pub mod harness;
pub mod io;
pub mod metrics;
pub mod model;
pub mod par;
pub mod theory;
pub mod traffic;

pub use attacks::{run_attack, AttackKind, AttackOptions};
pub use error::{Error, Result};
pub use model::{
    background_vector, binary_indicator, validate, CountMatrix, EstimatedProfiles, MixConfig, ObservationPair,
    SenderFrequencies, SenderProfiles,
};
