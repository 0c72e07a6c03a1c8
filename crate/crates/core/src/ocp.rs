//! Finite-horizon control problems `ẋ = f(t, x) + g u` with cost
//! `∫ c(t, x) + γ u² dt + c_T(x(T))`, closed-loop simulation and the
//! right-hand side of the linearized HJB equation.

use std::io::Write;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::regression::SampleSet;
use crate::tt::TensorTrain;
use crate::value::{policy_from_gradient, value_and_gradient_rows, FeedbackLaw};

/// A control problem with scalar control, constant control interface and
/// constant control weight.
pub trait ControlProblem: Sync {
    fn dim(&self) -> usize;

    /// `out = f(t, x)`.
    fn drift(&self, t: f64, x: &[f64], out: &mut [f64]);

    /// `out = (∂f/∂x)(t, x)ᵀ v`.
    fn drift_jacobian_tr_mul(&self, t: f64, x: &[f64], v: &[f64], out: &mut [f64]);

    /// The control interface `g`.
    fn interface(&self) -> &[f64];

    fn running_cost(&self, t: f64, x: &[f64]) -> f64;

    /// `∇_x c(t, x)`.
    fn running_cost_gradient(&self, t: f64, x: &[f64], out: &mut [f64]);

    /// The control weight `γ`.
    fn control_weight(&self) -> f64;

    fn terminal_cost(&self, x: &[f64]) -> f64;

    fn terminal_cost_gradient(&self, x: &[f64], out: &mut [f64]);

    /// `w` with `c_T(x) = Σ_k w_k x_k²`, when the terminal cost has this form.
    fn terminal_weights(&self) -> Option<Vec<f64>>;

    /// Jacobian of the drift at the origin.
    fn linearization(&self) -> DMatrix<f64>;

    /// Matrix `Q` of the running cost when it is the quadratic form `xᵀQx`.
    fn running_cost_matrix(&self) -> Option<DMatrix<f64>>;
}

/// Discretized reaction-diffusion equation
/// `ẋ = A x + x³ + g u`, cost `xᵀQx + γu²`, terminal cost `c_T xᵀQx`, with
/// `Q` diagonal.
#[derive(Clone, Debug)]
pub struct Benchmark {
    a: DMatrix<f64>,
    g: Vec<f64>,
    q: Vec<f64>,
    gamma: f64,
    terminal_weight: f64,
    cubic: bool,
}

impl Benchmark {
    /// Neumann finite differences on `d` equidistant nodes of `[-1, 1]`,
    /// actuator on `|s| ≤ 0.4` and `Q = h I` with `h = 2 / (d - 1)`.
    pub fn new(d: usize, sigma: f64, gamma: f64, terminal_weight: f64) -> Result<Self> {
        if d < 3 {
            return Err(Error::Parameter(format!("the benchmark needs at least 3 grid points, got {d}")));
        }
        let h = 2.0 / (d as f64 - 1.0);
        let s = sigma / (h * h);
        let mut a = DMatrix::zeros(d, d);
        for k in 0..d {
            a[(k, k)] = -2.0 * s;
            if k == 0 {
                a[(0, 1)] = 2.0 * s;
            } else if k == d - 1 {
                a[(k, k - 1)] = 2.0 * s;
            } else {
                a[(k, k - 1)] = s;
                a[(k, k + 1)] = s;
            }
        }
        let g = grid(d)
            .into_iter()
            .map(|sk| if sk.abs() <= 0.4 + 1e-12 { 1.0 } else { 0.0 })
            .collect();
        Self::from_parts(a, g, vec![h; d], gamma, terminal_weight, true)
    }

    pub fn from_parts(
        a: DMatrix<f64>,
        g: Vec<f64>,
        q: Vec<f64>,
        gamma: f64,
        terminal_weight: f64,
        cubic: bool,
    ) -> Result<Self> {
        let d = g.len();
        if a.shape() != (d, d) || q.len() != d {
            return Err(Error::Shape(format!(
                "drift matrix {:?}, interface {d}, cost weights {}",
                a.shape(),
                q.len()
            )));
        }
        if !(gamma > 0.0) {
            return Err(Error::Parameter(format!("control weight must be positive, got {gamma}")));
        }
        if q.iter().any(|&v| v < 0.0) || terminal_weight < 0.0 {
            return Err(Error::Parameter("cost weights must be non-negative".into()));
        }
        Ok(Self {
            a,
            g,
            q,
            gamma,
            terminal_weight,
            cubic,
        })
    }

    pub fn with_cubic(mut self, cubic: bool) -> Self {
        self.cubic = cubic;
        self
    }

    pub fn has_cubic(&self) -> bool {
        self.cubic
    }

    pub fn drift_matrix(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn cost_weights(&self) -> &[f64] {
        &self.q
    }

    pub fn terminal_weight(&self) -> f64 {
        self.terminal_weight
    }
}

/// Equidistant grid `s_k = -1 + 2k / (d - 1)`.
pub fn grid(d: usize) -> Vec<f64> {
    if d == 1 {
        return vec![0.0];
    }
    (0..d).map(|k| -1.0 + 2.0 * k as f64 / (d as f64 - 1.0)).collect()
}

impl ControlProblem for Benchmark {
    fn dim(&self) -> usize {
        self.g.len()
    }

    fn drift(&self, _t: f64, x: &[f64], out: &mut [f64]) {
        let d = self.g.len();
        for i in 0..d {
            let mut acc = 0.0;
            for j in 0..d {
                acc += self.a[(i, j)] * x[j];
            }
            if self.cubic {
                acc += x[i] * x[i] * x[i];
            }
            out[i] = acc;
        }
    }

    fn drift_jacobian_tr_mul(&self, _t: f64, x: &[f64], v: &[f64], out: &mut [f64]) {
        let d = self.g.len();
        for j in 0..d {
            let mut acc = 0.0;
            for i in 0..d {
                acc += self.a[(i, j)] * v[i];
            }
            if self.cubic {
                acc += 3.0 * x[j] * x[j] * v[j];
            }
            out[j] = acc;
        }
    }

    fn interface(&self) -> &[f64] {
        &self.g
    }

    fn running_cost(&self, _t: f64, x: &[f64]) -> f64 {
        self.q.iter().zip(x).map(|(q, v)| q * v * v).sum()
    }

    fn running_cost_gradient(&self, _t: f64, x: &[f64], out: &mut [f64]) {
        for ((o, q), v) in out.iter_mut().zip(&self.q).zip(x) {
            *o = 2.0 * q * v;
        }
    }

    fn control_weight(&self) -> f64 {
        self.gamma
    }

    fn terminal_cost(&self, x: &[f64]) -> f64 {
        self.terminal_weight * self.running_cost(0.0, x)
    }

    fn terminal_cost_gradient(&self, x: &[f64], out: &mut [f64]) {
        self.running_cost_gradient(0.0, x, out);
        out.iter_mut().for_each(|v| *v *= self.terminal_weight);
    }

    fn terminal_weights(&self) -> Option<Vec<f64>> {
        Some(self.q.iter().map(|q| q * self.terminal_weight).collect())
    }

    fn linearization(&self) -> DMatrix<f64> {
        self.a.clone()
    }

    fn running_cost_matrix(&self) -> Option<DMatrix<f64>> {
        Some(DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(&self.q)))
    }
}

/// A (possibly time-varying) feedback `u = κ(t, x)`.
pub trait Controller {
    fn control(&self, t: f64, x: &[f64]) -> Result<f64>;
}

impl Controller for FeedbackLaw {
    fn control(&self, t: f64, x: &[f64]) -> Result<f64> {
        FeedbackLaw::control(self, t, x)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConstantControl(pub f64);

impl Controller for ConstantControl {
    fn control(&self, _t: f64, _x: &[f64]) -> Result<f64> {
        Ok(self.0)
    }
}

/// Adapts a closure to [`Controller`].
pub struct FnController<F>(pub F);

impl<F: Fn(f64, &[f64]) -> f64> Controller for FnController<F> {
    fn control(&self, t: f64, x: &[f64]) -> Result<f64> {
        Ok((self.0)(t, x))
    }
}

/// Piecewise-constant open-loop control on a uniform grid.
#[derive(Clone, Debug, PartialEq)]
pub struct OpenLoopControl {
    pub start: f64,
    pub step: f64,
    pub values: Vec<f64>,
}

impl Controller for OpenLoopControl {
    fn control(&self, t: f64, _x: &[f64]) -> Result<f64> {
        if self.values.is_empty() {
            return Err(Error::State("open-loop control has no values".into()));
        }
        let k = ((t - self.start) / self.step + 1e-9).floor().max(0.0) as usize;
        Ok(self.values[k.min(self.values.len() - 1)])
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Integrator {
    #[default]
    Euler,
    /// Classical Runge–Kutta with the control held over each step.
    Rk4,
}

#[derive(Clone, Debug)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    /// `controls[k]` acts on `[t_k, t_{k+1})`.
    pub controls: Vec<f64>,
    pub cost: f64,
}

impl Trajectory {
    /// CSV with columns `t, x_1, ..., x_d, u`; `u` is empty in the last row.
    pub fn write_csv<W: Write>(&self, w: &mut W) -> Result<()> {
        let d = self.states.first().map_or(0, Vec::len);
        let mut header = vec!["t".to_string()];
        header.extend((1..=d).map(|k| format!("x_{k}")));
        header.push("u".into());
        writeln!(w, "{}", header.join(","))?;
        for (k, (t, x)) in self.times.iter().zip(&self.states).enumerate() {
            let mut row = vec![format!("{t}")];
            row.extend(x.iter().map(|v| format!("{v}")));
            row.push(self.controls.get(k).map(|u| format!("{u}")).unwrap_or_default());
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// Number of steps of size `tau` in `[t0, t1]`, which must divide it.
pub fn step_count(t0: f64, t1: f64, tau: f64) -> Result<usize> {
    if !(tau > 0.0) || !(t1 >= t0) {
        return Err(Error::Parameter(format!("invalid time grid [{t0}, {t1}] with step {tau}")));
    }
    let steps = ((t1 - t0) / tau).round();
    if ((t1 - t0) - steps * tau).abs() > 1e-9 * tau.max(t1 - t0) {
        return Err(Error::Parameter(format!("step {tau} does not divide [{t0}, {t1}]")));
    }
    Ok(steps as usize)
}

/// Simulates the closed loop and evaluates the cost with the left rectangle
/// rule at the integrator step.
pub fn simulate_closed_loop<P: ControlProblem + ?Sized, C: Controller + ?Sized>(
    problem: &P,
    controller: &C,
    x0: &[f64],
    t0: f64,
    horizon: f64,
    tau: f64,
    integrator: Integrator,
) -> Result<Trajectory> {
    let d = problem.dim();
    if x0.len() != d {
        return Err(Error::Shape(format!("initial state has {} entries, expected {d}", x0.len())));
    }
    let steps = step_count(t0, horizon, tau)?;
    let gamma = problem.control_weight();
    let mut times = Vec::with_capacity(steps + 1);
    let mut states = Vec::with_capacity(steps + 1);
    let mut controls = Vec::with_capacity(steps);
    let mut x = x0.to_vec();
    let mut cost = 0.0;
    let mut scratch = Scratch::new(d);
    for k in 0..steps {
        let t = t0 + k as f64 * tau;
        let u = controller.control(t, &x)?;
        if !u.is_finite() {
            return Err(Error::BlowUp { step: k, time: t });
        }
        cost += tau * (problem.running_cost(t, &x) + gamma * u * u);
        times.push(t);
        states.push(x.clone());
        controls.push(u);
        step(problem, integrator, t, tau, u, &mut x, &mut scratch);
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::BlowUp { step: k + 1, time: t + tau });
        }
    }
    cost += problem.terminal_cost(&x);
    times.push(t0 + steps as f64 * tau);
    states.push(x);
    Ok(Trajectory {
        times,
        states,
        controls,
        cost,
    })
}

pub(crate) struct Scratch {
    k: [Vec<f64>; 4],
    y: Vec<f64>,
}

impl Scratch {
    pub(crate) fn new(d: usize) -> Self {
        Self {
            k: [vec![0.0; d], vec![0.0; d], vec![0.0; d], vec![0.0; d]],
            y: vec![0.0; d],
        }
    }
}

fn rhs<P: ControlProblem + ?Sized>(problem: &P, t: f64, x: &[f64], u: f64, out: &mut [f64]) {
    problem.drift(t, x, out);
    for (o, g) in out.iter_mut().zip(problem.interface()) {
        *o += g * u;
    }
}

/// One step of the controlled dynamics with the control held fixed.
pub(crate) fn step<P: ControlProblem + ?Sized>(
    problem: &P,
    integrator: Integrator,
    t: f64,
    tau: f64,
    u: f64,
    x: &mut [f64],
    s: &mut Scratch,
) {
    match integrator {
        Integrator::Euler => {
            rhs(problem, t, x, u, &mut s.k[0]);
            for (xi, ki) in x.iter_mut().zip(&s.k[0]) {
                *xi += tau * ki;
            }
        }
        Integrator::Rk4 => {
            let [k1, k2, k3, k4] = &mut s.k;
            let y = &mut s.y;
            rhs(problem, t, x, u, k1);
            for i in 0..x.len() {
                y[i] = x[i] + 0.5 * tau * k1[i];
            }
            rhs(problem, t + 0.5 * tau, y, u, k2);
            for i in 0..x.len() {
                y[i] = x[i] + 0.5 * tau * k2[i];
            }
            rhs(problem, t + 0.5 * tau, y, u, k3);
            for i in 0..x.len() {
                y[i] = x[i] + tau * k3[i];
            }
            rhs(problem, t + tau, y, u, k4);
            for i in 0..x.len() {
                x[i] += tau / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            }
        }
    }
}

/// Right-hand side of the linearized HJB equation in reversed time,
/// `F(x) = ∇V(x)·(f(t, x) + g α(x)) + c(t, x) + γ α(x)²`, at every sample,
/// where `V` is given by `tt` and `alpha[k] = α(x_k)`. An explicit Euler step
/// `V(t - τ) ≈ V(t) + τ F` then follows the backward flow.
pub fn ghjb_targets<P: ControlProblem + ?Sized>(
    problem: &P,
    tt: &TensorTrain,
    samples: &SampleSet,
    alpha: &[f64],
    t: f64,
) -> Result<Vec<f64>> {
    let d = problem.dim();
    if samples.dim() != d || tt.order() != d || alpha.len() != samples.len() {
        return Err(Error::Shape("samples, train, policy and problem disagree in size".into()));
    }
    let g = problem.interface();
    let gamma = problem.control_weight();
    let mut grad = vec![0.0; d];
    let mut f = vec![0.0; d];
    let mut out = Vec::with_capacity(samples.len());
    for k in 0..samples.len() {
        let x = samples.point(k);
        value_and_gradient_rows(tt, &samples.phi_rows(k), &samples.dphi_rows(k), &mut grad);
        problem.drift(t, x, &mut f);
        let a = alpha[k];
        let mut y = problem.running_cost(t, x) + gamma * a * a;
        for i in 0..d {
            y += grad[i] * (f[i] + g[i] * a);
        }
        if !y.is_finite() {
            return Err(Error::Numeric(format!("target at sample {k} is not finite")));
        }
        out.push(y);
    }
    Ok(out)
}

/// Values and feedback `α = -½γ⁻¹ gᵀ∇V` of a train at every sample.
pub fn values_and_policy(tt: &TensorTrain, samples: &SampleSet, interface: &[f64], gamma: f64) -> (Vec<f64>, Vec<f64>) {
    let d = tt.order();
    let mut grad = vec![0.0; d];
    let mut values = Vec::with_capacity(samples.len());
    let mut policy = Vec::with_capacity(samples.len());
    for k in 0..samples.len() {
        values.push(value_and_gradient_rows(tt, &samples.phi_rows(k), &samples.dphi_rows(k), &mut grad));
        policy.push(policy_from_gradient(interface, gamma, &grad));
    }
    (values, policy)
}

/// `count` states, uniform on `(-2, 2)^d`.
pub fn sample_domain(d: usize, count: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| (0..d).map(|_| rng.gen_range(-2.0..2.0)).collect()).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InitialConditionKind {
    /// `(s-1)²(s+1)² p(s)` with a random polynomial `p` of degree 2 to 20,
    /// scaled to maximum modulus 1.9 on `[-1, 1]`.
    Polynomial,
    /// `x ≡ c` with `c` uniform in `[1, 2)`.
    Constant,
}

const IC_MAX: f64 = 1.9;
const IC_GRID: usize = 1001;

pub fn sample_initial_conditions(kind: InitialConditionKind, count: usize, d: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let nodes = grid(d);
    let fine = grid(IC_GRID);
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        match kind {
            InitialConditionKind::Constant => {
                let c = rng.gen_range(1.0..2.0);
                out.push(vec![c; d]);
            }
            InitialConditionKind::Polynomial => {
                let degree = rng.gen_range(2..=20usize);
                let coeffs: Vec<f64> = (0..=degree).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let shape = |s: f64| {
                    let p = coeffs.iter().rev().fold(0.0, |acc, c| acc * s + c);
                    (s - 1.0).powi(2) * (s + 1.0).powi(2) * p
                };
                let peak = fine.iter().map(|&s| shape(s).abs()).fold(0.0, f64::max);
                if !(peak > 1e-12) {
                    continue;
                }
                out.push(nodes.iter().map(|&s| IC_MAX * shape(s) / peak).collect());
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> Benchmark {
        Benchmark::from_parts(DMatrix::zeros(1, 1), vec![1.0], vec![1.0], 1.0, 1.0, false).unwrap()
    }

    #[test]
    fn three_point_stiffness_matrix() {
        let b = Benchmark::new(3, 1.0, 0.1, 1.0).unwrap();
        let expected = DMatrix::from_row_slice(3, 3, &[-2.0, 2.0, 0.0, 1.0, -2.0, 1.0, 0.0, 2.0, -2.0]);
        assert_eq!(b.drift_matrix(), &expected);
        assert_eq!(b.cost_weights(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn benchmark_actuator_support() {
        let b = Benchmark::new(12, 1.0, 0.1, 1.0).unwrap();
        let s = grid(12);
        for (k, &g) in b.interface().iter().enumerate() {
            assert_eq!(g == 1.0, s[k].abs() <= 0.4, "node {k}");
        }
        assert_eq!(b.interface().iter().sum::<f64>(), 4.0);
        let row_sums = b.drift_matrix() * nalgebra::DVector::from_element(12, 1.0);
        assert!(row_sums.iter().all(|&v| v == 0.0));
        let mut f = vec![1.0; 12];
        b.drift(0.0, &[0.0; 12], &mut f);
        assert!(f.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn small_grid_is_rejected() {
        assert!(matches!(Benchmark::new(2, 1.0, 0.1, 1.0), Err(Error::Parameter(_))));
    }

    #[test]
    fn hand_euler_cost() {
        let traj = simulate_closed_loop(&toy(), &ConstantControl(1.0), &[0.0], 0.0, 1.0, 0.5, Integrator::Euler).unwrap();
        assert_eq!(traj.states, vec![vec![0.0], vec![0.5], vec![1.0]]);
        assert!((traj.cost - 2.125).abs() < 1e-14);
    }

    #[test]
    fn origin_is_an_equilibrium() {
        let b = Benchmark::new(12, 1.0, 0.1, 1.0).unwrap();
        let traj = simulate_closed_loop(&b, &ConstantControl(0.0), &[0.0; 12], 0.0, 0.3, 0.001, Integrator::Euler).unwrap();
        assert!(traj.states.iter().flatten().all(|&v| v == 0.0));
        assert_eq!(traj.cost, 0.0);
    }

    #[test]
    fn blow_up_is_reported() {
        let b = Benchmark::from_parts(DMatrix::zeros(1, 1), vec![1.0], vec![1.0], 1.0, 1.0, true).unwrap();
        let err = simulate_closed_loop(&b, &ConstantControl(0.0), &[100.0], 0.0, 1.0, 0.1, Integrator::Euler).unwrap_err();
        assert!(matches!(err, Error::BlowUp { .. }));
    }

    #[test]
    fn step_must_divide_horizon() {
        assert!(step_count(0.0, 1.0, 0.3).is_err());
        assert_eq!(step_count(0.0, 0.3, 0.001).unwrap(), 300);
    }

    #[test]
    fn initial_conditions() {
        let polys = sample_initial_conditions(InitialConditionKind::Polynomial, 20, 12, 3);
        for x in &polys {
            assert!(x.iter().all(|v| v.abs() <= IC_MAX + 1e-12));
            assert!(x[0].abs() < 1e-12 && x[11].abs() < 1e-12);
        }
        let consts = sample_initial_conditions(InitialConditionKind::Constant, 20, 12, 3);
        for x in &consts {
            assert!(x.iter().all(|&v| v == x[0]) && (1.0..2.0).contains(&x[0]));
        }
        assert_eq!(polys, sample_initial_conditions(InitialConditionKind::Polynomial, 20, 12, 3));
    }

    #[test]
    fn trajectory_csv_layout() {
        let traj = simulate_closed_loop(&toy(), &ConstantControl(1.0), &[0.0], 0.0, 1.0, 0.5, Integrator::Euler).unwrap();
        let mut buf = Vec::new();
        traj.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, "t,x_1,u\n0,0,1\n0.5,0.5,1\n1,1,\n");
    }
}
