//! Reference controllers: the finite-horizon LQR of the linearized problem
//! and a gradient-based open-loop optimizer.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::ocp::{step_count, ControlProblem, Controller, OpenLoopControl};

/// Solution of the differential Riccati equation on a uniform grid.
#[derive(Clone, Debug)]
pub struct RiccatiPath {
    times: Vec<f64>,
    matrices: Vec<DMatrix<f64>>,
}

impl RiccatiPath {
    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn matrices(&self) -> &[DMatrix<f64>] {
        &self.matrices
    }

    /// `P(t)`, linearly interpolated between nodes and clamped to the span.
    pub fn at(&self, t: f64) -> DMatrix<f64> {
        let n = self.times.len();
        let t0 = self.times[0];
        let t1 = self.times[n - 1];
        if n == 1 || t <= t0 {
            return self.matrices[0].clone();
        }
        if t >= t1 {
            return self.matrices[n - 1].clone();
        }
        let h = (t1 - t0) / (n - 1) as f64;
        let pos = (t - t0) / h;
        let k = (pos.floor() as usize).min(n - 2);
        let w = pos - k as f64;
        if w < 1e-9 {
            return self.matrices[k].clone();
        }
        if w > 1.0 - 1e-9 {
            return self.matrices[k + 1].clone();
        }
        &self.matrices[k] * (1.0 - w) + &self.matrices[k + 1] * w
    }

    pub fn value(&self, t: f64, x: &[f64]) -> f64 {
        let p = self.at(t);
        let x = DVector::from_column_slice(x);
        x.dot(&(&p * &x))
    }
}

/// Integrates `-Ṗ = AᵀP + PA - γ⁻¹ P g gᵀ P + Q` backward from
/// `P(T) = c_T Q` with RK4 at step `tau`.
pub fn solve_dre(
    a: &DMatrix<f64>,
    g: &[f64],
    q: &DMatrix<f64>,
    gamma: f64,
    terminal_weight: f64,
    horizon: f64,
    tau: f64,
) -> Result<RiccatiPath> {
    solve_dre_from(a, g, q, gamma, &(q * terminal_weight), horizon, tau)
}

/// As [`solve_dre`] with an arbitrary terminal matrix `P(T)`.
pub fn solve_dre_from(
    a: &DMatrix<f64>,
    g: &[f64],
    q: &DMatrix<f64>,
    gamma: f64,
    terminal: &DMatrix<f64>,
    horizon: f64,
    tau: f64,
) -> Result<RiccatiPath> {
    let d = g.len();
    if a.shape() != (d, d) || q.shape() != (d, d) || terminal.shape() != (d, d) {
        return Err(Error::Shape("Riccati data have inconsistent sizes".into()));
    }
    if !(gamma > 0.0) {
        return Err(Error::Parameter(format!("control weight must be positive, got {gamma}")));
    }
    let steps = step_count(0.0, horizon, tau)?;
    let gv = DVector::from_column_slice(g);
    let ggt = &gv * gv.transpose() / gamma;
    // dP/ds in reversed time s = T - t
    let field = |p: &DMatrix<f64>| -> DMatrix<f64> { a.transpose() * p + p * a - p * &ggt * p + q };
    let mut p = terminal.clone();
    let mut matrices = vec![p.clone()];
    for k in 0..steps {
        let k1 = field(&p);
        let k2 = field(&(&p + &k1 * (0.5 * tau)));
        let k3 = field(&(&p + &k2 * (0.5 * tau)));
        let k4 = field(&(&p + &k3 * tau));
        p += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (tau / 6.0);
        p = (&p + p.transpose()) * 0.5;
        if p.iter().any(|v| !v.is_finite()) {
            let time = horizon - (k + 1) as f64 * tau;
            return Err(Error::Numeric(format!("Riccati solution escaped to infinity at t = {time}")));
        }
        matrices.push(p.clone());
    }
    matrices.reverse();
    let times = (0..=steps).map(|k| k as f64 * tau).collect();
    Ok(RiccatiPath { times, matrices })
}

/// Riccati solution of the problem linearized at the origin.
pub fn lqr_for<P: ControlProblem + ?Sized>(problem: &P, horizon: f64, tau: f64) -> Result<LqrController> {
    let q = problem
        .running_cost_matrix()
        .ok_or_else(|| Error::Parameter("LQR needs a quadratic running cost".into()))?;
    let weights = problem
        .terminal_weights()
        .ok_or_else(|| Error::Parameter("LQR needs a quadratic terminal cost".into()))?;
    // terminal cost c_T xᵀQx: recover c_T from the ratio of the weights
    let terminal = weights
        .iter()
        .zip(q.diagonal().iter())
        .find(|(_, &qd)| qd != 0.0)
        .map_or(0.0, |(w, qd)| w / qd);
    let path = solve_dre(
        &problem.linearization(),
        problem.interface(),
        &q,
        problem.control_weight(),
        terminal,
        horizon,
        tau,
    )?;
    Ok(LqrController {
        path,
        interface: problem.interface().to_vec(),
        gamma: problem.control_weight(),
    })
}

/// `u = -γ⁻¹ gᵀ P(t) x`.
#[derive(Clone, Debug)]
pub struct LqrController {
    pub path: RiccatiPath,
    pub interface: Vec<f64>,
    pub gamma: f64,
}

impl Controller for LqrController {
    fn control(&self, t: f64, x: &[f64]) -> Result<f64> {
        let p = self.path.at(t);
        let mut u = 0.0;
        for i in 0..x.len() {
            let mut px = 0.0;
            for j in 0..x.len() {
                px += p[(i, j)] * x[j];
            }
            u += self.interface[i] * px;
        }
        Ok(-u / self.gamma)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OpenLoopOptions {
    pub max_iters: usize,
    /// Stop when `max_k |∂J/∂u_k| / τ` falls below this value.
    pub grad_tol: f64,
    /// Stop when the relative cost decrease over the last 5 iterations falls
    /// below this value.
    pub cost_tol: f64,
}

impl Default for OpenLoopOptions {
    fn default() -> Self {
        Self {
            max_iters: 5000,
            grad_tol: 1e-6,
            cost_tol: 1e-10,
        }
    }
}

#[derive(Clone, Debug)]
pub struct OpenLoopSolution {
    pub controls: OpenLoopControl,
    pub cost: f64,
    pub converged: bool,
    pub iterations: usize,
}

/// Cost `J(u) = Σ_k τ (c(x_k) + γ u_k²) + c_T(x_N)` of the explicit Euler
/// discretization, and optionally its gradient by the discrete adjoint
/// `λ_N = ∇c_T(x_N)`, `λ_k = τ∇c(x_k) + (I + τ ∂f/∂x(x_k))ᵀ λ_{k+1}`,
/// `∂J/∂u_k = τ (2γu_k + gᵀλ_{k+1})`.
pub fn open_loop_cost<P: ControlProblem + ?Sized>(
    problem: &P,
    x0: &[f64],
    tau: f64,
    u: &[f64],
    gradient: Option<&mut [f64]>,
) -> f64 {
    let d = problem.dim();
    let n = u.len();
    let g = problem.interface();
    let gamma = problem.control_weight();
    let mut states = Vec::with_capacity((n + 1) * d);
    states.extend_from_slice(x0);
    let mut f = vec![0.0; d];
    let mut cost = 0.0;
    for k in 0..n {
        let t = k as f64 * tau;
        let x = &states[k * d..(k + 1) * d];
        cost += tau * (problem.running_cost(t, x) + gamma * u[k] * u[k]);
        problem.drift(t, x, &mut f);
        let next: Vec<f64> = (0..d).map(|i| x[i] + tau * (f[i] + g[i] * u[k])).collect();
        states.extend(next);
    }
    let xn = &states[n * d..];
    cost += problem.terminal_cost(xn);
    if !cost.is_finite() {
        return f64::INFINITY;
    }
    if let Some(grad) = gradient {
        let mut lambda = vec![0.0; d];
        problem.terminal_cost_gradient(xn, &mut lambda);
        let mut jt = vec![0.0; d];
        let mut dc = vec![0.0; d];
        for k in (0..n).rev() {
            let t = k as f64 * tau;
            let gl: f64 = g.iter().zip(&lambda).map(|(a, b)| a * b).sum();
            grad[k] = tau * (2.0 * gamma * u[k] + gl);
            let x = &states[k * d..(k + 1) * d];
            problem.drift_jacobian_tr_mul(t, x, &lambda, &mut jt);
            problem.running_cost_gradient(t, x, &mut dc);
            for i in 0..d {
                lambda[i] += tau * (jt[i] + dc[i]);
            }
        }
    }
    cost
}

/// Minimizes the discretized cost over the control values by gradient
/// descent with Barzilai–Borwein step sizes and Armijo backtracking,
/// starting from `init`.
pub fn open_loop_optimize<P: ControlProblem + ?Sized>(
    problem: &P,
    x0: &[f64],
    horizon: f64,
    tau: f64,
    init: &[f64],
    options: OpenLoopOptions,
) -> Result<OpenLoopSolution> {
    if x0.len() != problem.dim() || x0.iter().any(|v| !v.is_finite()) {
        return Err(Error::Parameter("initial state must be finite and match the problem".into()));
    }
    let n = step_count(0.0, horizon, tau)?;
    if init.len() != n {
        return Err(Error::Shape(format!("{} initial controls for {n} steps", init.len())));
    }
    let mut u = init.to_vec();
    let mut grad = vec![0.0; n];
    let mut cost = open_loop_cost(problem, x0, tau, &u, Some(&mut grad));
    if !cost.is_finite() {
        u.iter_mut().for_each(|v| *v = 0.0);
        cost = open_loop_cost(problem, x0, tau, &u, Some(&mut grad));
    }
    if !cost.is_finite() {
        return Err(Error::BlowUp { step: n, time: horizon });
    }
    // the Hessian of the control penalty is 2γτ I
    let mut alpha = 1.0 / (2.0 * problem.control_weight() * tau);
    let mut history = vec![cost];
    let mut trial = vec![0.0; n];
    let mut trial_grad = vec![0.0; n];
    let mut converged = false;
    let mut iterations = 0;
    while iterations < options.max_iters {
        let gnorm = grad.iter().fold(0.0_f64, |m, v| m.max(v.abs())) / tau;
        if gnorm < options.grad_tol {
            converged = true;
            break;
        }
        let g_sq: f64 = grad.iter().map(|v| v * v).sum();
        let mut step = alpha;
        let mut accepted = false;
        for _ in 0..60 {
            for k in 0..n {
                trial[k] = u[k] - step * grad[k];
            }
            let c = open_loop_cost(problem, x0, tau, &trial, Some(&mut trial_grad));
            if c.is_finite() && c <= cost - 1e-4 * step * g_sq {
                accepted = c < cost;
                if accepted {
                    let mut sy = 0.0;
                    let mut ss = 0.0;
                    for k in 0..n {
                        let s = trial[k] - u[k];
                        sy += s * (trial_grad[k] - grad[k]);
                        ss += s * s;
                    }
                    alpha = if sy > 0.0 { ss / sy } else { 2.0 * step };
                    std::mem::swap(&mut u, &mut trial);
                    std::mem::swap(&mut grad, &mut trial_grad);
                    cost = c;
                }
                break;
            }
            step *= 0.5;
        }
        iterations += 1;
        if !accepted {
            // no descent possible at working precision
            converged = true;
            break;
        }
        history.push(cost);
        if history.len() > 5 {
            let old = history[history.len() - 6];
            if (old - cost).abs() <= options.cost_tol * cost.abs().max(f64::MIN_POSITIVE) {
                converged = true;
                break;
            }
        }
    }
    Ok(OpenLoopSolution {
        controls: OpenLoopControl {
            start: 0.0,
            step: tau,
            values: u,
        },
        cost,
        converged,
        iterations,
    })
}
