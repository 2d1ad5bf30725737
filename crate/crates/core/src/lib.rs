//! Metastable transitions in a ring of coupled double wells.
//!
//! The crate evaluates the chain potential and its spectra, the
//! Eyring–Kramers prefactor in both of its common readings, numeric
//! capacity brackets from explicit Dirichlet-form test functions, and the
//! empirical first-hitting times of the rescaled Langevin dynamics.

// negated comparisons are deliberate: they also reject NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod capacity;
pub mod committor;
pub mod error;
pub mod experiment;
pub mod fourier;
pub mod numerics;
pub mod parallel;
pub mod potential;
pub mod rng;
pub mod simulate;
pub mod spectral;

pub use error::{Error, Result};
pub use potential::{gamma_threshold, ChainParams, StateVector, StationaryPoints};
pub use spectral::{
    mass_asymptotic, predict_mean_time_fixed_n, predict_mean_time_rescaled, prefactor, spectrum, v_mu,
    LogValue, MeanTimePrediction, PrefactorReport, Spectrum,
};
pub use capacity::{capacity_bracket, CapacityBracket, CapacityBudget};
pub use experiment::{run_campaign, run_instance, CampaignConfig, ResultRecord};
pub use fourier::{ModeVector, NeighborhoodSpec};
pub use simulate::{simulate_hitting, HittingBatch, SimConfig};
