//! Simulator for electronic entanglement concentration with charge detection.
//!
//! A source shares the lesser-entangled state α|↑↑⟩ + β|↓↓⟩; Bob adds a single
//! matched ancilla electron, bit-flips it, and routes his two electrons
//! through a polarizing beam splitter into a QND charge detector. Reading
//! charge 1 heralds a maximally entangled state, finished locally by a
//! Hadamard, a Z measurement, and a conditional phase flip; reading charge 0
//! leaves a lesser-entangled residual that recycles into further rounds with
//! squared coefficients. The same machinery concentrates N-party GHZ-form
//! states with only Bob operating, and only Bob ever sends classical messages.
//!
//! Modules:
//! - [`state`]: sparse pure states of labeled electrons, measurement,
//!   fidelity, Schmidt coefficients.
//! - [`elements`]: PBS routing, spin unitaries, charge detector, Z readout.
//! - [`protocol`]: preparation, rounds, recycling, multi-round and N-party
//!   orchestration, message log.
//! - [`analysis`]: exact branch enumeration, Monte Carlo estimation, and the
//!   per-round probability formulas.
//! - [`cli`] / [`output`]: command-line front end and deterministic CSV/JSON
//!   emission.

pub mod analysis;
pub mod cli;
pub mod elements;
pub mod error;
pub mod output;
pub mod protocol;
pub mod state;

pub use error::{Error, Result};
pub use state::{Configuration, ElectronId, MeasurementRecord, ModeLabel, PureState, Spin};
