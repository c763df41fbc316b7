//! Asymptotic conference key rates for a three-user quantum conference key
//! agreement protocol built on twin-field-style single-photon interference
//! with phase-randomized weak coherent pulses.
//!
//! The crate provides:
//!
//! - the closed-form channel model: pair gains, sifted Z statistics,
//!   phase-matched X statistics, single-photon yields ([`gains`]);
//! - decoy-state bounds on the joint single-photon yield and phase error
//!   rate ([`decoy`]);
//! - the practical and single-photon key-rate assemblies ([`rate`]);
//! - a derivative-free optimizer over the free parameters (t, mu, nu) and
//!   distance sweeps ([`optimizer`]);
//! - an independent pulse-level Monte Carlo simulator used to cross-validate
//!   every analytic quantity ([`sim`]).

pub mod decoy;
pub mod error;
pub mod gains;
pub mod optimizer;
pub mod params;
pub mod rate;
pub mod sim;
pub mod special;

pub use decoy::{decoy_estimate, e1x_upper_bound, y1_lower_bound, DecoyEstimate};
pub use error::{Error, Result};
pub use gains::{
    gain_x_pair, gain_z_pair, single_photon_yields, x_basis_pm_statistics,
    x_basis_pm_statistics_exact, z_basis_statistics, GainTable, SinglePhotonYields,
};
pub use optimizer::{
    optimize_at_distance, optimize_at_distance_warm, optimize_single_photon, sweep,
    OptimizationResult, OptimizerConfig, SearchBounds,
};
pub use params::{flush_tiny, p_pm, sqrt_eta, ChannelPoint, ProtocolParams, SystemParams};
pub use rate::{
    practical_rate, practical_rate_with, single_photon_rate, single_photon_rate_with, PointFlag,
    ProtocolKind, QberConvention, RateDiagnostics, RatePoint,
};
pub use sim::{
    compare_with_analytic, simulate_gains, simulate_single_photon_component,
    simulate_single_photon_component_conditioned, simulate_x_pair_gain, simulate_x_pm,
    simulate_z_pair_gain, simulate_z_sift, write_trial_log, SimEstimate, SinglePhotonSim,
    TrialRecord, ValidationRow,
};
