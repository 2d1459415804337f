//! Synthesis of realistically degraded cardiac-MR-like images via k-space
//! manipulation, plus an optimisation-based meta-learner that detects
//! artefact classes it has never been trained on from a handful of
//! labelled samples.
//!
//! The crate is organised around one pipeline:
//!
//! 1. [`phantom`] renders synthetic short-axis cine phantoms.
//! 2. [`kspace`] degrades them with respiratory motion, cardiac motion,
//!    Gibbs ringing or aliasing, all done in the Fourier domain.
//! 3. [`corpus`] assembles balanced labelled splits with a firewalled
//!    hidden-label test set.
//! 4. [`nn`] + [`meta`] train a small convolutional classifier with a
//!    bi-level (support/query) meta-update, then fine-tune it on the
//!    few labelled samples of the unseen classes.
//! 5. [`metrics`] + [`experiment`] score predictions and drive the full
//!    seeded experiment grid with CSV reports.
//!
//! Data-parallel loops (corpus generation, per-sample convolutions,
//! per-task inner updates, experiment cells) run on rayon when the
//! default `parallel` feature is enabled and fall back to plain
//! sequential iteration otherwise; both paths produce identical bytes.

pub mod corpus;
pub mod error;
pub mod exec;
pub mod experiment;
pub mod image;
pub mod kspace;
pub mod meta;
pub mod metrics;
pub mod nn;
pub mod phantom;
pub mod seeds;

pub use error::{Error, Result};
pub use image::{CineStack, ImageGray};
pub use kspace::{ArtefactClass, ArtefactParams, KSpaceGrid};
