//! Medication recommendation from longitudinal EHR data.
//!
//! The pipeline builds per-visit heterogeneous graphs over a patient's
//! medical codes, encodes them with evolving graph-attention layers and
//! per-type recurrent encoders, represents drugs through molecular,
//! co-occurrence/interaction and prescription-history views, and trains a
//! multi-label predictor with a safety-penalized loss. Everything runs at
//! desk scale on seeded synthetic cohorts; adapters accept user-supplied
//! clinical extracts.

pub mod bundle;
pub mod commands;
pub mod dynamic;
pub mod metrics;
pub mod model;
pub mod ehr;
pub mod error;
pub mod nn;
pub mod run;
pub mod util;

pub use error::{Error, Result};
