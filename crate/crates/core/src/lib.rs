//! Tabular robust constrained MDPs: exact and robust policy evaluation,
//! the epigraph bisection solver with projected policy gradient, Lagrangian
//! baselines, an occupancy LP for the non-robust case, environment generation
//! and an experiment harness.

pub mod envgen;
pub mod epigraph;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod lagrange;
pub mod linalg;
pub mod lp;
pub mod mdp;
pub mod robust;
pub mod validation;

pub use envgen::{counterexample_instance, random_instance, GenSpec, Setting};
pub use epigraph::{
    bisection_search, bisection_solve, delta_hat, pgs_subroutine, project_policy, project_simplex,
    theoretical_params, BisectionConfig, EpigraphOracle, SubroutineConfig, TheoreticalParams,
};
pub use error::{Error, Result};
pub use eval::{occupancy, policy_gradient, q_function, return_value, PolicyEvaluation};
pub use experiment::{run_experiment, select_marked_policy, Algorithm, ExperimentConfig, MetricRow};
pub use lagrange::{lf_solve, LagrangeConfig};
pub use lp::{solve_cmdp_lp, CmdpLpSolution};
pub use mdp::{validate_instance, CostFunction, Instance, Policy, TransitionKernel, UncertaintySet};
pub use robust::{robust_eval, robust_eval_all, robust_values, EvalResult};
