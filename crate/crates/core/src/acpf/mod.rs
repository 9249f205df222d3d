//! AC power flow: measurement model, Newton power flow, and the benchmark
//! restoration method.

mod measurement;
mod model;
mod newton;
mod operating;
mod state;

pub use measurement::{Family, Layout, MeasurementKind, MeasurementSet};
pub use model::{branch_flows, eval_h, eval_jacobian, injections, weighted_hessian, BranchFlow};
pub use newton::{newton_pf, BusSpec, PfOptions, PfResult, PfSpec};
pub use operating::{
    benchmark_restore, benchmark_restore_with, constraint_report, OperatingPoint, ViolationReport,
};
pub(crate) use state::va_column;
pub use state::StateVector;
