//! Run configuration read from a TOML file with `[problem]`, `[solver]`,
//! `[evaluate]` and `[output]` sections. Every key is optional and unknown
//! keys are rejected.

use std::path::{Path, PathBuf};

use dlra_hjb::{
    AlsOptions, Benchmark, InitialConditionKind, Integrator, Interpolation, Method, OpenLoopOptions, SolveMethod,
    SolverConfig,
};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub problem: ProblemSection,
    pub solver: SolverSection,
    pub evaluate: EvaluateSection,
    pub output: OutputSection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProblemSection {
    pub dim: usize,
    pub sigma: f64,
    pub gamma: f64,
    pub terminal_weight: f64,
    /// Include the `x³` reaction term.
    pub cubic: bool,
}

impl Default for ProblemSection {
    fn default() -> Self {
        Self {
            dim: 12,
            sigma: 1.0,
            gamma: 0.1,
            terminal_weight: 1.0,
            cubic: true,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodName {
    Dlra,
    Bellman,
    Hybrid,
}

impl MethodName {
    pub fn label(self) -> &'static str {
        match self {
            MethodName::Dlra => "dlra",
            MethodName::Bellman => "bellman",
            MethodName::Hybrid => "hybrid",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveMethodName {
    NormalEquations,
    Qr,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InterpolationName {
    PiecewiseConstant,
    Linear,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSection {
    pub method: MethodName,
    /// Bellman period `m` of the hybrid method.
    pub period: usize,
    pub horizon: f64,
    pub tau: f64,
    /// Interior TT ranks; defaults to `(3, 5, ..., 5, 3)`.
    pub ranks: Option<Vec<usize>>,
    pub basis_size: usize,
    pub samples: usize,
    pub pi_tol: f64,
    pub max_pi_iterations: usize,
    pub ridge: f64,
    pub hard_point_weight: f64,
    pub warmup: usize,
    pub micro_steps: usize,
    pub als_max_sweeps: usize,
    pub als_tol: f64,
    pub solve_method: SolveMethodName,
    pub resample: bool,
    pub seed: u64,
    pub interpolation: InterpolationName,
}

impl Default for SolverSection {
    fn default() -> Self {
        let base = SolverConfig::default();
        Self {
            method: MethodName::Dlra,
            period: 10,
            horizon: base.horizon,
            tau: base.tau,
            ranks: None,
            basis_size: base.basis_size,
            samples: base.samples,
            pi_tol: base.pi_tol,
            max_pi_iterations: base.max_pi_iterations,
            ridge: base.ridge,
            hard_point_weight: base.hard_point_weight,
            warmup: base.warmup,
            micro_steps: base.micro_steps,
            als_max_sweeps: base.als.max_sweeps,
            als_tol: base.als.tol,
            solve_method: SolveMethodName::NormalEquations,
            resample: base.resample,
            seed: base.seed,
            interpolation: InterpolationName::PiecewiseConstant,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IcKind {
    Polynomial,
    Constant,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntegratorName {
    Euler,
    Rk4,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateSection {
    pub ic_kind: IcKind,
    pub ic_count: usize,
    pub seed: u64,
    pub lqr: bool,
    pub open_loop: bool,
    pub open_loop_max_iters: usize,
    pub open_loop_grad_tol: f64,
    pub open_loop_cost_tol: f64,
    pub integrator: IntegratorName,
    /// Constant initial condition whose control traces are written for every
    /// controller. Disabled when absent.
    pub trace_constant: Option<f64>,
    /// Number of sampled initial conditions with trace output.
    pub trace_ics: usize,
    /// Worker threads for the evaluation; 0 uses all cores.
    pub threads: usize,
}

impl Default for EvaluateSection {
    fn default() -> Self {
        let ol = OpenLoopOptions::default();
        Self {
            ic_kind: IcKind::Polynomial,
            ic_count: 500,
            seed: 2024,
            lqr: true,
            open_loop: true,
            open_loop_max_iters: ol.max_iters,
            open_loop_grad_tol: ol.grad_tol,
            open_loop_cost_tol: ol.cost_tol,
            integrator: IntegratorName::Euler,
            trace_constant: Some(1.28),
            trace_ics: 1,
            threads: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
    /// Write a partial checkpoint every this many intervals; 0 disables.
    pub checkpoint_interval: usize,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("out"),
            checkpoint_interval: 0,
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> CliResult<Self> {
        let config: RunConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        config.check()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            CliError::Config(msg) => CliError::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Cross-field checks that serde cannot express.
    pub fn check(&self) -> CliResult<()> {
        if self.problem.dim < 3 {
            return Err(CliError::Config(format!("problem.dim must be at least 3, got {}", self.problem.dim)));
        }
        if self.solver.method == MethodName::Hybrid && self.solver.period == 0 {
            return Err(CliError::Config("solver.period must be at least 1".into()));
        }
        if self.solver.basis_size < 2 {
            return Err(CliError::Config("solver.basis_size must be at least 2".into()));
        }
        self.solver_config()
            .validate(self.problem.dim)
            .map_err(|e| CliError::Config(format!("[solver] {e}")))
    }

    pub fn degree(&self) -> usize {
        self.solver.basis_size.saturating_sub(1)
    }

    pub fn ranks(&self) -> Vec<usize> {
        match &self.solver.ranks {
            Some(r) => r.clone(),
            None => default_ranks(self.problem.dim),
        }
    }

    pub fn method(&self) -> Method {
        match self.solver.method {
            MethodName::Dlra => Method::Dlra,
            MethodName::Bellman => Method::Bellman,
            MethodName::Hybrid => Method::Hybrid {
                period: self.solver.period,
            },
        }
    }

    pub fn solver_config(&self) -> SolverConfig {
        let s = &self.solver;
        SolverConfig {
            horizon: s.horizon,
            tau: s.tau,
            ranks: self.ranks(),
            basis_size: s.basis_size,
            samples: s.samples,
            pi_tol: s.pi_tol,
            max_pi_iterations: s.max_pi_iterations,
            ridge: s.ridge,
            hard_point_weight: s.hard_point_weight,
            method: self.method(),
            warmup: s.warmup,
            micro_steps: s.micro_steps,
            als: AlsOptions {
                max_sweeps: s.als_max_sweeps,
                tol: s.als_tol,
                method: self.solve_method(),
            },
            solve_method: self.solve_method(),
            resample: s.resample,
            seed: s.seed,
            interpolation: match s.interpolation {
                InterpolationName::PiecewiseConstant => Interpolation::PiecewiseConstant,
                InterpolationName::Linear => Interpolation::Linear,
            },
        }
    }

    fn solve_method(&self) -> SolveMethod {
        match self.solver.solve_method {
            SolveMethodName::NormalEquations => SolveMethod::NormalEquations,
            SolveMethodName::Qr => SolveMethod::Qr,
        }
    }

    pub fn benchmark(&self) -> CliResult<Benchmark> {
        let p = &self.problem;
        Benchmark::new(p.dim, p.sigma, p.gamma, p.terminal_weight)
            .map(|b| b.with_cubic(p.cubic))
            .map_err(|e| CliError::Config(format!("[problem] {e}")))
    }

    pub fn ic_kind(&self) -> InitialConditionKind {
        match self.evaluate.ic_kind {
            IcKind::Polynomial => InitialConditionKind::Polynomial,
            IcKind::Constant => InitialConditionKind::Constant,
        }
    }

    pub fn integrator(&self) -> Integrator {
        match self.evaluate.integrator {
            IntegratorName::Euler => Integrator::Euler,
            IntegratorName::Rk4 => Integrator::Rk4,
        }
    }

    pub fn open_loop_options(&self) -> OpenLoopOptions {
        OpenLoopOptions {
            max_iters: self.evaluate.open_loop_max_iters,
            grad_tol: self.evaluate.open_loop_grad_tol,
            cost_tol: self.evaluate.open_loop_cost_tol,
        }
    }
}

/// `(3, 5, ..., 5, 3)` with `d - 1` entries.
pub fn default_ranks(d: usize) -> Vec<usize> {
    (0..d.saturating_sub(1))
        .map(|k| if k == 0 || k + 2 == d { 3 } else { 5 })
        .collect()
}
