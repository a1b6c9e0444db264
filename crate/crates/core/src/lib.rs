//! Receding-horizon control of state-dependent jump linear systems under
//! chance constraints: plant model, pre-stabilizing gain synthesis, a dense
//! QP solver, constraint tightening, the one-step controller and a seeded
//! Monte Carlo simulator.

pub mod chance;
pub mod config;
pub mod error;
pub mod fixtures;
mod linalg;
pub mod lmi;
pub mod model;
pub mod prob;
pub mod qp;
pub mod rhc;
pub mod sim;

pub use chance::{ChanceMode, ChanceSpec, TightenedConstraints};
pub use config::{Config, GainsFile};
pub use error::{Error, LawMatrix, Result, Violation};
pub use lmi::{
    assemble_prestab_lmis, extract_gains, solve_lmi_feasibility, verify_ms_stability,
    InfeasibilityReport, LmiSystem, MarginReport, SynthesisResult,
};
pub use model::{PolyhedronSchedule, Region, SdjlsModel, TransitionLaw};
pub use prob::{chi_square_quantile, normal_cdf, normal_quantile, QuantileResult};
pub use qp::{solve_qp, QpProblem, QpSolution, QpStatus};
pub use rhc::{InputSet, RhcController, RhcWeights, StepSolution};
pub use sim::{
    moment_diagnostics, monte_carlo, rollout, Boundedness, Experiment, MomentDiagnostics,
    MonteCarloReport, Policy, RngSpec, RolloutOptions, Trajectory,
};
