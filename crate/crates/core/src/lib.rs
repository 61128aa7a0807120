//! Monte-Carlo simulator for the SNR statistics of coupled-core multi-core
//! fiber (CC-MCF) links impaired by mode-dependent loss (MDL) and spatial
//! mode dispersion (SMD).
//!
//! The crate is organized around five subsystems:
//!
//! * [`mdl`]: random waveplate/MDL transfer-matrix model and its singular
//!   spectrum;
//! * [`ssfm`]: coupled-Manakov split-step propagation with distributed
//!   waveplates, lumped MDL elements and ASE-injecting amplifiers;
//! * [`transceiver`]: WDM transmitter, zero-forcing receiver, carrier
//!   phase recovery and SNR estimation;
//! * [`ensemble`]: seeded Monte-Carlo orchestration, SNR statistics and
//!   the matrix-only linear-SNR oracle;
//! * [`config`]/[`report`]: scenario schema, presets, run manifests and
//!   table output.

pub mod config;
pub mod ensemble;
pub mod error;
pub mod field;
pub mod io;
pub mod mdl;
pub mod report;
pub mod rng;
pub mod ssfm;
pub mod stats;
pub mod transceiver;

pub use error::{Error, Result};
