//! Restoration of AC-power-flow-feasible operating points from relaxed or
//! approximated optimal power flow solutions.
//!
//! The pipeline: a [`Network`] is parsed from a case file, a relaxed or
//! approximated solution is turned into a [`MeasurementSet`], and
//! [`wls_restore`] finds the voltage state whose AC injections and flows best
//! match it under a diagonal [`WeightVector`]. The weights are trained offline
//! by [`train_weights`] using the analytic sensitivities of [`sens`].

#![allow(clippy::neg_cmp_op_on_partial_ord)] // `!(x > 0.0)` also rejects NaN

pub mod acpf;
pub mod error;
pub mod eval;
pub mod fixtures;
pub mod formats;
pub mod lpac;
pub mod netmodel;
pub mod opf;
pub mod scenarios;
pub mod sens;
pub mod train;
pub mod wls;

pub use acpf::{
    benchmark_restore, constraint_report, eval_h, eval_jacobian, newton_pf, Layout, MeasurementKind,
    MeasurementSet, OperatingPoint, PfOptions, PfSpec, StateVector, ViolationReport,
};
pub use error::{Error, Result};
pub use lpac::{
    build_lpac, lpac_to_measurements, simplex_solve, LinearProgram, LpacOptions, LpacSolution, TieBreak,
};
pub use netmodel::{branch_two_port, parse_case, write_case, Branch, Bus, BusType, Generator, Network};
pub use scenarios::{build_lpac_dataset, gen_load_scenarios, synth_dataset, NoiseProfile, ScenarioSpec};
pub use sens::{solution_sensitivity, solution_sensitivity_with, SensitivityMatrix, SensitivityMode};
pub use train::{
    accumulate_gradient, adam_step, default_initial_weights, loss, train_weights, Dataset, ScenarioRecord,
    SourceTag, TrainConfig, TrainTrace,
};
pub use wls::{wls_restore, wls_restore_from, WeightVector, WlsOptions, WlsResult};
