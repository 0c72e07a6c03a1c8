//! Approximate optimal feedback laws for finite-horizon control problems.
//!
//! The value function is represented as a multivariate polynomial whose
//! coefficient tensor is a fixed-rank tensor train. It is propagated backward
//! in time by policy iteration, where each policy-evaluation step either
//! integrates the linearized HJB equation on the tangent space of the
//! fixed-rank manifold (dynamical low-rank approximation) or regresses
//! trajectory costs with alternating least squares (Bellman method).

pub mod baselines;
pub mod basis;
pub mod error;
mod linalg;
pub mod ocp;
pub mod regression;
pub mod solver;
pub mod tt;
pub mod value;

pub use baselines::{
    lqr_for, open_loop_cost, open_loop_optimize, solve_dre, solve_dre_from, LqrController, OpenLoopOptions, OpenLoopSolution,
    RiccatiPath,
};
pub use basis::{BasisKind, BasisSet};
pub use error::{Error, Result};
pub use ocp::{
    ghjb_targets, sample_domain, sample_initial_conditions, simulate_closed_loop, Benchmark, ConstantControl,
    ControlProblem, Controller, FnController, InitialConditionKind, Integrator, OpenLoopControl, Trajectory,
};
pub use regression::{
    als_fit, assemble_design, tangent_fit, AlsFit, AlsOptions, HardPoint, RegressionProblem, SampleSet,
    SolveMethod, TangentFit, TangentFrame,
};
pub use solver::{
    hybrid_schedule, solve_value_function, solve_value_function_with, IntervalMethod, IntervalReport, Method,
    Solution, SolverConfig,
};
pub use tt::{tangent_dim, Core, Orthogonality, TangentVector, TensorTrain};
pub use value::{
    build_quadratic_tt, eval_gradient, eval_value, eval_value_and_gradient, FeedbackLaw,
    Interpolation, ValueFunctionPath,
};
