//! Sourcerer: asset-centric security triage for Android apps.
//!
//! The pipeline runs in three phases:
//!
//! 1. [`assets`] derives candidate assets from the store description and the
//!    manifest's dangerous permissions.
//! 2. [`reconcile`] lifts static-analyzer reports into a shared taxonomy and
//!    keeps findings that enough tools agree on; [`mapping`] links them to
//!    accepted assets and ranks them.
//! 3. [`mitigation`] attaches MASVS/MSTG guidance.
//!
//! [`session`] ties the phases into an event-sourced, persistable triage
//! session, and [`report`] renders the result.

pub mod assets;
pub mod domain;
pub mod error;
pub mod ingest;
pub mod mapping;
pub mod mitigation;
pub mod reconcile;
pub mod report;
pub mod session;
pub mod validate;
pub mod views;

pub use error::{Error, Result};
