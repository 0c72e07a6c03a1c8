//! Backward-in-time solution of the HJB equation by policy iteration on
//! consecutive subintervals.
//!
//! The horizon `[0, T]` is split into `N = T / τ` intervals which are solved
//! from the terminal side. On interval `i` the terminal value `V̂_{i+1}` is
//! known and policy iteration alternates between evaluating the current
//! policy and improving it with `α = -½γ⁻¹ gᵀ∇V̂`. Policy evaluation is one
//! of
//!
//! * DLRA: explicit Euler steps of the linearized HJB flow projected onto the
//!   tangent space of the fixed-rank manifold, followed by a rank
//!   truncation;
//! * Bellman: costs of short trajectories plus the terminal value, regressed
//!   onto a rank-`r` train by ALS.
//!
//! When stepping from micro node `ℓ` to `ℓ + 1` the DLRA scheme uses the
//! policy of the previous iterate at node `ℓ + 1`, so that policy iteration
//! also acts when the interval has a single micro step.

use std::time::Instant;

use crate::basis::BasisSet;
use crate::error::{Error, Result};
use crate::ocp::{ghjb_targets, sample_domain, values_and_policy, ControlProblem, Integrator, Scratch};
use crate::regression::{
    als_fit, tangent_fit, AlsOptions, HardPoint, RegressionProblem, SampleSet, SolveMethod, TangentFrame,
};
use crate::tt::TensorTrain;
use crate::value::{build_quadratic_tt, Interpolation, ValueFunctionPath};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Method {
    Dlra,
    Bellman,
    /// DLRA with an `m`-step Bellman update whenever the number of solved
    /// intervals is a multiple of `m`.
    Hybrid { period: usize },
}

/// Update used on one interval.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum IntervalMethod {
    Dlra,
    /// Bellman update over `steps` intervals.
    Bellman { steps: usize },
}

impl IntervalMethod {
    pub fn name(&self) -> &'static str {
        match self {
            IntervalMethod::Dlra => "dlra",
            IntervalMethod::Bellman { .. } => "bellman",
        }
    }
}

/// Method for the interval that is the `j`-th one solved (`j = 0` ends at
/// the horizon). The first `warmup` intervals and every `m`-th interval use
/// a Bellman update; `m = 1` is the pure Bellman method and `m` larger than
/// the number of intervals the pure DLRA method.
pub fn hybrid_schedule(j: usize, m: usize, warmup: usize) -> IntervalMethod {
    let m = m.max(1);
    if (j + 1) % m == 0 {
        IntervalMethod::Bellman { steps: m }
    } else if j < warmup {
        IntervalMethod::Bellman { steps: 1 }
    } else {
        IntervalMethod::Dlra
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolverConfig {
    pub horizon: f64,
    pub tau: f64,
    /// Interior ranks `r_1, ..., r_{d-1}`.
    pub ranks: Vec<usize>,
    pub basis_size: usize,
    pub samples: usize,
    /// Threshold of the policy-iteration criterion.
    pub pi_tol: f64,
    pub max_pi_iterations: usize,
    pub ridge: f64,
    pub hard_point_weight: f64,
    pub method: Method,
    /// Intervals at the terminal side that always use a one-step Bellman
    /// update.
    pub warmup: usize,
    /// Euler steps per interval of the DLRA scheme.
    pub micro_steps: usize,
    pub als: AlsOptions,
    pub solve_method: SolveMethod,
    /// Draw new domain samples for every interval.
    pub resample: bool,
    pub seed: u64,
    pub interpolation: Interpolation,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            horizon: 0.3,
            tau: 1e-3,
            ranks: vec![3, 5, 5, 5, 5, 5, 5, 5, 5, 5, 3],
            basis_size: 9,
            samples: 16200,
            pi_tol: 1e-6,
            max_pi_iterations: 50,
            ridge: 1e-10,
            hard_point_weight: 1e10,
            method: Method::Dlra,
            warmup: 10,
            micro_steps: 1,
            als: AlsOptions::default(),
            solve_method: SolveMethod::NormalEquations,
            resample: false,
            seed: 0,
            interpolation: Interpolation::PiecewiseConstant,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self, d: usize) -> Result<()> {
        if !(self.tau > 0.0) || !(self.horizon > 0.0) {
            return Err(Error::Parameter("horizon and step must be positive".into()));
        }
        crate::ocp::step_count(0.0, self.horizon, self.tau)?;
        if !(self.pi_tol > 0.0) {
            return Err(Error::Parameter("policy-iteration threshold must be positive".into()));
        }
        if self.ranks.len() + 1 != d {
            return Err(Error::Rank(format!("{} interior ranks for dimension {d}", self.ranks.len())));
        }
        if self.samples == 0 || self.max_pi_iterations == 0 || self.micro_steps == 0 {
            return Err(Error::Parameter("samples, iterations and micro steps must be positive".into()));
        }
        if let Method::Hybrid { period: 0 } = self.method {
            return Err(Error::Parameter("hybrid period must be at least 1".into()));
        }
        if self.ridge < 0.0 || self.hard_point_weight < 0.0 {
            return Err(Error::Parameter("regularization weights must be non-negative".into()));
        }
        Ok(())
    }

    pub fn intervals(&self) -> usize {
        ((self.horizon / self.tau).round()) as usize
    }

    /// Method of the interval with index `i` (counted from `t = 0`).
    pub fn interval_method(&self, i: usize) -> IntervalMethod {
        let n = self.intervals();
        let j = n - 1 - i;
        match self.method {
            Method::Bellman => IntervalMethod::Bellman { steps: 1 },
            Method::Dlra => hybrid_schedule(j, usize::MAX, self.warmup),
            Method::Hybrid { period } => hybrid_schedule(j, period, self.warmup),
        }
    }
}

/// Diagnostics of one interval.
#[derive(Clone, Debug, PartialEq)]
pub struct IntervalReport {
    pub interval: usize,
    pub method: IntervalMethod,
    pub iterations: usize,
    /// Criterion value of every policy iteration.
    pub metrics: Vec<f64>,
    pub converged: bool,
    /// Relative residual of the last fit of the accepted iterate.
    pub fit_residual: f64,
    /// Samples dropped because their trajectory blew up.
    pub dropped: usize,
    pub seconds: f64,
}

impl IntervalReport {
    pub fn final_metric(&self) -> f64 {
        self.metrics.last().copied().unwrap_or(f64::NAN)
    }

    /// `key=value` line for logs.
    pub fn log_line(&self) -> String {
        format!(
            "interval={} method={} iterations={} metric={:.6e} residual={:.6e} converged={} dropped={} seconds={:.3}",
            self.interval,
            self.method.name(),
            self.iterations,
            self.final_metric(),
            self.fit_residual,
            self.converged,
            self.dropped,
            self.seconds
        )
    }
}

#[derive(Clone, Debug)]
pub struct Solution {
    pub path: ValueFunctionPath,
    pub basis: BasisSet,
    pub reports: Vec<IntervalReport>,
}

/// Result of policy iteration on one interval.
#[derive(Clone, Debug)]
pub struct PolicyIterate {
    /// Trains at the computed micro nodes, ordered backward in time (the
    /// last one belongs to the left end of the interval).
    pub tensors: Vec<TensorTrain>,
    pub iterations: usize,
    pub metrics: Vec<f64>,
    pub converged: bool,
    pub fit_residual: f64,
    pub dropped: usize,
}

/// Everything an interval solver needs besides the policy.
pub struct IntervalContext<'a, P: ControlProblem + ?Sized> {
    pub problem: &'a P,
    pub basis: &'a BasisSet,
    pub samples: &'a SampleSet,
    pub config: &'a SolverConfig,
    /// Left end `t_i`.
    pub start: f64,
    /// The computed part of the path, `path[k]` at `t_{i+1+k}`.
    pub later: &'a [TensorTrain],
}

impl<'a, P: ControlProblem + ?Sized> IntervalContext<'a, P> {
    fn terminal(&self) -> &TensorTrain {
        &self.later[0]
    }

    fn gamma(&self) -> f64 {
        self.problem.control_weight()
    }
}

/// Solves the whole horizon; see [`solve_value_function_with`].
pub fn solve_value_function<P: ControlProblem + ?Sized>(problem: &P, config: &SolverConfig) -> Result<Solution> {
    solve_value_function_with(problem, config, |_, _| Ok(()))
}

/// Solves the whole horizon and calls `observer` after every interval with
/// its report and the trains computed so far (ordered from `t_i` to `T`).
pub fn solve_value_function_with<P, F>(problem: &P, config: &SolverConfig, mut observer: F) -> Result<Solution>
where
    P: ControlProblem + ?Sized,
    F: FnMut(&IntervalReport, &[TensorTrain]) -> Result<()>,
{
    let d = problem.dim();
    config.validate(d)?;
    let basis = BasisSet::h2(config.basis_size)?;
    let weights = problem
        .terminal_weights()
        .ok_or_else(|| Error::Parameter("terminal cost must be a diagonal quadratic form".into()))?;
    let modes = vec![config.basis_size; d];
    let target = TensorTrain::clamp_ranks(&modes, &config.ranks);
    let terminal = build_quadratic_tt(&basis, &weights, 0.0)?;
    let start_ranks: Vec<usize> = terminal.ranks().iter().zip(&target).map(|(a, b)| (*a).min(*b)).collect();
    let terminal = terminal
        .truncate(&start_ranks)?
        .pad_ranks(&target)?
        .orthogonalize(d - 1)?;

    let n = config.intervals();
    let draw = |interval: usize| -> Result<SampleSet> {
        let seed = if config.resample {
            config.seed.wrapping_add(interval as u64 + 1)
        } else {
            config.seed
        };
        SampleSet::new(&basis, &sample_domain(d, config.samples, seed))
    };
    let fixed = if config.resample { None } else { Some(draw(0)?) };

    // reversed[k] is the train at t_{N-k}
    let mut reversed = vec![terminal];
    let mut reports = Vec::with_capacity(n);
    for i in (0..n).rev() {
        let clock = Instant::now();
        let fresh;
        let samples = match &fixed {
            Some(s) => s,
            None => {
                fresh = draw(i)?;
                &fresh
            }
        };
        let later: Vec<TensorTrain> = reversed.iter().rev().cloned().collect();
        let ctx = IntervalContext {
            problem,
            basis: &basis,
            samples,
            config,
            start: i as f64 * config.tau,
            later: &later,
        };
        let method = config.interval_method(i);
        let result = policy_iteration_interval(&ctx, method).map_err(|e| Error::Interval {
            interval: i,
            source: Box::new(e),
        })?;
        let report = IntervalReport {
            interval: i,
            method,
            iterations: result.iterations,
            metrics: result.metrics,
            converged: result.converged,
            fit_residual: result.fit_residual,
            dropped: result.dropped,
            seconds: clock.elapsed().as_secs_f64(),
        };
        if !report.converged {
            log::warn!("interval={i} policy iteration did not converge; keeping the best iterate");
        }
        log::info!("{}", report.log_line());
        let node = result
            .tensors
            .into_iter()
            .last()
            .ok_or_else(|| Error::State("interval solver returned no tensors".into()))?;
        reversed.push(node);
        let forward: Vec<TensorTrain> = reversed.iter().rev().cloned().collect();
        observer(&report, &forward)?;
        reports.push(report);
    }
    reversed.reverse();
    let times = (0..=n).map(|k| k as f64 * config.tau).collect();
    let path = ValueFunctionPath::new(times, reversed, config.interpolation)?;
    Ok(Solution { path, basis, reports })
}

/// Policy iteration on one interval with the given update.
pub fn policy_iteration_interval<P: ControlProblem + ?Sized>(
    ctx: &IntervalContext<'_, P>,
    method: IntervalMethod,
) -> Result<PolicyIterate> {
    let config = ctx.config;
    let g = ctx.problem.interface();
    let gamma = ctx.gamma();
    let nodes = match method {
        IntervalMethod::Dlra => config.micro_steps,
        IntervalMethod::Bellman { .. } => 1,
    };
    let (terminal_values, terminal_policy) = values_and_policy(ctx.terminal(), ctx.samples, g, gamma);
    let mut current: Vec<TensorTrain> = vec![ctx.terminal().clone(); nodes];
    let mut old_values = vec![terminal_values; nodes];
    let mut old_policy = vec![terminal_policy; nodes];

    let mut metrics = Vec::new();
    let mut best: Option<(f64, Vec<TensorTrain>, f64)> = None;
    let mut dropped = 0;
    let mut converged = false;
    for _ in 0..config.max_pi_iterations {
        let (tensors, residual, drop) = match method {
            IntervalMethod::Dlra => dlra_interval_solver(ctx, &old_policy)?,
            IntervalMethod::Bellman { steps } => {
                let t = bellman_interval_solver(ctx, &current[0], &old_policy[0], steps)?;
                (vec![t.0], t.1, t.2)
            }
        };
        dropped = drop;
        let mut sum = 0.0;
        let mut new_values = Vec::with_capacity(nodes);
        let mut new_policy = Vec::with_capacity(nodes);
        for (l, tt) in tensors.iter().enumerate() {
            let (v, a) = values_and_policy(tt, ctx.samples, g, gamma);
            for k in 0..v.len() {
                sum += (v[k] - old_values[l][k]).powi(2) + (a[k] - old_policy[l][k]).powi(2);
            }
            new_values.push(v);
            new_policy.push(a);
        }
        let metric = sum / (nodes.max(1) * ctx.samples.len()) as f64;
        if !metric.is_finite() {
            return Err(Error::Numeric("policy-iteration criterion is not finite".into()));
        }
        metrics.push(metric);
        if best.as_ref().map_or(true, |b| metric < b.0) {
            best = Some((metric, tensors.clone(), residual));
        }
        current = tensors;
        old_values = new_values;
        old_policy = new_policy;
        if metric < config.pi_tol {
            converged = true;
            best = Some((metric, current.clone(), residual));
            break;
        }
    }
    let (_, tensors, fit_residual) = best.ok_or_else(|| Error::State("no policy iteration was run".into()))?;
    Ok(PolicyIterate {
        tensors,
        iterations: metrics.len(),
        metrics,
        converged,
        fit_residual,
        dropped,
    })
}

/// One policy evaluation by the DLRA scheme. `policy[ℓ]` holds the policy at
/// micro node `ℓ + 1` at every sample. Returns the trains at the micro nodes
/// `1..=L` and the relative residual of the last tangent fit.
pub fn dlra_interval_solver<P: ControlProblem + ?Sized>(
    ctx: &IntervalContext<'_, P>,
    policy: &[Vec<f64>],
) -> Result<(Vec<TensorTrain>, f64, usize)> {
    let config = ctx.config;
    let steps = config.micro_steps;
    let h = config.tau / steps as f64;
    let end = ctx.start + config.tau;
    let d = ctx.problem.dim();
    let mut a = ctx.terminal().orthogonalize(d - 1)?;
    let mut out = Vec::with_capacity(steps);
    let mut residual = f64::NAN;
    for (l, alpha) in policy.iter().enumerate().take(steps) {
        let t = end - l as f64 * h;
        let targets = ghjb_targets(ctx.problem, &a, ctx.samples, alpha, t)?;
        let frame = TangentFrame::new(&a)?;
        let problem = RegressionProblem::new(ctx.samples, &targets, config.ridge)?.with_hard_point(HardPoint {
            state: vec![0.0; d],
            target: 0.0,
            weight: config.hard_point_weight,
        });
        let fit = tangent_fit(&frame, ctx.basis, &problem, config.solve_method)?;
        residual = fit.relative_residual;
        a = fit.tangent.tangent_add(h).truncate(&config.ranks)?;
        out.push(a.clone());
    }
    Ok((out, residual, 0))
}

/// One policy evaluation by the Bellman method over `steps` intervals:
/// every sample is moved along the closed loop, the first step controlled by
/// `policy` (the current policy at the samples) and later steps by the
/// feedback of the already computed trains. Returns the fitted train at the
/// left end, the relative ALS residual and the number of dropped samples.
pub fn bellman_interval_solver<P: ControlProblem + ?Sized>(
    ctx: &IntervalContext<'_, P>,
    warm_start: &TensorTrain,
    policy: &[f64],
    steps: usize,
) -> Result<(TensorTrain, f64, usize)> {
    let config = ctx.config;
    let steps = steps.min(ctx.later.len()).max(1);
    let problem = ctx.problem;
    let d = problem.dim();
    let tau = config.tau;
    let gamma = ctx.gamma();
    let g = problem.interface();
    let m = ctx.samples.len();

    let mut kept = Vec::with_capacity(m);
    let mut end_states = Vec::with_capacity(m * d);
    let mut running = Vec::with_capacity(m);
    let mut scratch = Scratch::new(d);
    let mut grad = vec![0.0; d];
    let mut vals = vec![vec![0.0; ctx.basis.len()]; d];
    let mut ders = vec![vec![0.0; ctx.basis.len()]; d];
    'samples: for k in 0..m {
        let mut x = ctx.samples.point(k).to_vec();
        let mut cost = 0.0;
        for s in 0..steps {
            let t = ctx.start + s as f64 * tau;
            let u = if s == 0 {
                policy[k]
            } else {
                for mu in 0..d {
                    ctx.basis.eval_into(x[mu], &mut vals[mu], &mut ders[mu]);
                }
                let v: Vec<&[f64]> = vals.iter().map(Vec::as_slice).collect();
                let dv: Vec<&[f64]> = ders.iter().map(Vec::as_slice).collect();
                crate::value::value_and_gradient_rows(&ctx.later[s - 1], &v, &dv, &mut grad);
                crate::value::policy_from_gradient(g, gamma, &grad)
            };
            cost += tau * (problem.running_cost(t, &x) + gamma * u * u);
            crate::ocp::step(problem, Integrator::Euler, t, tau, u, &mut x, &mut scratch);
            if !cost.is_finite() || x.iter().any(|v| !v.is_finite()) {
                continue 'samples;
            }
        }
        kept.push(k);
        end_states.extend_from_slice(&x);
        running.push(cost);
    }
    let dropped = m - kept.len();
    if dropped > 0 {
        log::warn!("bellman update: dropped {dropped} samples whose trajectories blew up");
    }
    if kept.is_empty() {
        return Err(Error::Numeric("every Bellman trajectory blew up".into()));
    }
    let ends = SampleSet::from_flat(ctx.basis, d, end_states)?;
    let terminal = &ctx.later[steps - 1];
    let mut targets = Vec::with_capacity(kept.len());
    for (j, c) in running.iter().enumerate() {
        let y = c + terminal.evaluate_unchecked(&ends.phi_rows(j));
        if !y.is_finite() {
            return Err(Error::Numeric(format!("Bellman target of sample {} is not finite", kept[j])));
        }
        targets.push(y);
    }
    let subset;
    let samples = if dropped == 0 {
        ctx.samples
    } else {
        let pts: Vec<f64> = kept.iter().flat_map(|&k| ctx.samples.point(k).to_vec()).collect();
        subset = SampleSet::from_flat(ctx.basis, d, pts)?;
        &subset
    };
    let regression = RegressionProblem::new(samples, &targets, config.ridge)?;
    let fit = als_fit(warm_start, ctx.basis, &regression, config.als)?;
    Ok((fit.tt, fit.relative_residual, dropped))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_extremes() {
        for j in 0..50 {
            assert_eq!(hybrid_schedule(j, 1, 0), IntervalMethod::Bellman { steps: 1 });
            assert_eq!(hybrid_schedule(j, 100, 0), IntervalMethod::Dlra);
        }
        let bellman = (0..300).filter(|&j| hybrid_schedule(j, 10, 0) != IntervalMethod::Dlra).count();
        assert_eq!(bellman, 30);
        assert_eq!(hybrid_schedule(3, 10, 10), IntervalMethod::Bellman { steps: 1 });
        assert_eq!(hybrid_schedule(9, 10, 10), IntervalMethod::Bellman { steps: 10 });
        assert_eq!(hybrid_schedule(10, 10, 10), IntervalMethod::Dlra);
    }

    #[test]
    fn never_more_than_m_minus_one_dlra_in_a_row() {
        let mut run = 0;
        for j in 0..300 {
            if hybrid_schedule(j, 7, 0) == IntervalMethod::Dlra {
                run += 1;
                assert!(run <= 6);
            } else {
                run = 0;
            }
        }
    }

    #[test]
    fn config_validation() {
        let mut c = SolverConfig::default();
        assert!(c.validate(12).is_ok());
        assert!(c.validate(6).is_err());
        c.tau = 0.0007;
        assert!(c.validate(12).is_err());
        assert_eq!(SolverConfig::default().intervals(), 300);
    }
}
