//! Least-squares fits on the fixed-rank manifold.
//!
//! `tangent_fit` solves the linear empirical risk over the tangent space at a
//! `(d-1)`-orthogonal train. The gauge `L(Uᵘ)ᵀ L(Wᵘ) = 0` is built into the
//! parametrization `L(Wᵘ) = Q⊥ᵤ Cᵤ`, where `Q⊥ᵤ` spans the orthogonal
//! complement of `range L(Uᵘ)` and `Cᵤ` is free. The last component is
//! ungauged. Coefficients are stacked core by core, and within a core
//! column by column: `x[j K + k] = Cᵤ[k, j]` with `K = r_{μ-1} n_μ - r_μ`.
//!
//! `als_fit` is the nonlinear fit used by the Bellman method.

use nalgebra::DMatrix;

use crate::basis::BasisSet;
use crate::error::{Error, Result};
use crate::linalg::{orthogonal_complement, qr_positive, ridge_solve, Layout};
use crate::tt::{Core, Orthogonality, TangentVector, TensorTrain};

pub use crate::linalg::SolveMethod;

/// States together with their tabulated basis values and derivatives.
#[derive(Clone, Debug)]
pub struct SampleSet {
    dim: usize,
    n: usize,
    points: Vec<f64>,
    values: Vec<f64>,
    derivs: Vec<f64>,
}

impl SampleSet {
    pub fn new(basis: &BasisSet, points: &[Vec<f64>]) -> Result<Self> {
        let dim = points.first().map_or(0, Vec::len);
        if points.iter().any(|p| p.len() != dim) {
            return Err(Error::Shape("samples have different dimensions".into()));
        }
        let flat: Vec<f64> = points.iter().flatten().copied().collect();
        Self::from_flat(basis, dim, flat)
    }

    /// `points` holds the states back to back.
    pub fn from_flat(basis: &BasisSet, dim: usize, points: Vec<f64>) -> Result<Self> {
        if dim == 0 || points.len() % dim != 0 {
            return Err(Error::Shape(format!(
                "{} coordinates do not split into states of dimension {dim}",
                points.len()
            )));
        }
        let n = basis.len();
        let mut values = vec![0.0; points.len() * n];
        let mut derivs = vec![0.0; points.len() * n];
        for (j, &x) in points.iter().enumerate() {
            basis.eval_into(x, &mut values[j * n..(j + 1) * n], &mut derivs[j * n..(j + 1) * n]);
        }
        Ok(Self {
            dim,
            n,
            points,
            values,
            derivs,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn basis_len(&self) -> usize {
        self.n
    }

    pub fn point(&self, k: usize) -> &[f64] {
        &self.points[k * self.dim..(k + 1) * self.dim]
    }

    pub fn points(&self) -> impl Iterator<Item = &[f64]> {
        self.points.chunks_exact(self.dim)
    }

    /// `φ(x_μ)` for sample `k`.
    pub fn phi(&self, k: usize, mu: usize) -> &[f64] {
        let s = (k * self.dim + mu) * self.n;
        &self.values[s..s + self.n]
    }

    /// `φ′(x_μ)` for sample `k`.
    pub fn dphi(&self, k: usize, mu: usize) -> &[f64] {
        let s = (k * self.dim + mu) * self.n;
        &self.derivs[s..s + self.n]
    }

    pub fn phi_rows(&self, k: usize) -> Vec<&[f64]> {
        (0..self.dim).map(|mu| self.phi(k, mu)).collect()
    }

    pub fn dphi_rows(&self, k: usize) -> Vec<&[f64]> {
        (0..self.dim).map(|mu| self.dphi(k, mu)).collect()
    }
}

/// An extra data point entering the risk with weight `weight`.
#[derive(Clone, Debug, PartialEq)]
pub struct HardPoint {
    pub state: Vec<f64>,
    pub target: f64,
    pub weight: f64,
}

/// Data of `min Σ_k (V(x_k) - y_k)² + δ ‖V‖² + Σ_h δ_h (V(x_h) - y_h)²`.
#[derive(Clone, Debug)]
pub struct RegressionProblem<'a> {
    pub samples: &'a SampleSet,
    pub targets: &'a [f64],
    pub ridge: f64,
    pub hard_points: Vec<HardPoint>,
}

impl<'a> RegressionProblem<'a> {
    pub fn new(samples: &'a SampleSet, targets: &'a [f64], ridge: f64) -> Result<Self> {
        let problem = Self {
            samples,
            targets,
            ridge,
            hard_points: Vec::new(),
        };
        problem.validate()?;
        Ok(problem)
    }

    pub fn with_hard_point(mut self, point: HardPoint) -> Self {
        self.hard_points.push(point);
        self
    }

    fn validate(&self) -> Result<()> {
        if self.samples.is_empty() {
            return Err(Error::Parameter("regression needs at least one sample".into()));
        }
        if self.targets.len() != self.samples.len() {
            return Err(Error::Shape(format!(
                "{} targets for {} samples",
                self.targets.len(),
                self.samples.len()
            )));
        }
        if !(self.ridge >= 0.0) {
            return Err(Error::Parameter(format!("ridge weight must be non-negative, got {}", self.ridge)));
        }
        for h in &self.hard_points {
            if !(h.weight >= 0.0) {
                return Err(Error::Parameter(format!("hard-point weight must be non-negative, got {}", h.weight)));
            }
            if h.state.len() != self.samples.dim() {
                return Err(Error::Shape("hard point has the wrong dimension".into()));
            }
        }
        Ok(())
    }
}

/// Rows of the least-squares system: the samples followed by the weighted
/// hard points.
struct Rows<'a> {
    problem: &'a RegressionProblem<'a>,
    hard_phi: Vec<Vec<Vec<f64>>>,
}

impl<'a> Rows<'a> {
    fn new(problem: &'a RegressionProblem<'a>, basis: &BasisSet) -> Result<Self> {
        problem.validate()?;
        if basis.len() != problem.samples.basis_len() {
            return Err(Error::Shape("samples were tabulated with a different basis".into()));
        }
        let hard_phi = problem
            .hard_points
            .iter()
            .map(|h| h.state.iter().map(|&x| basis.eval(x).0).collect())
            .collect();
        Ok(Self { problem, hard_phi })
    }

    fn len(&self) -> usize {
        self.problem.samples.len() + self.hard_phi.len()
    }

    fn sample_count(&self) -> usize {
        self.problem.samples.len()
    }

    fn phi(&self, k: usize, mu: usize) -> &[f64] {
        let m = self.sample_count();
        if k < m {
            self.problem.samples.phi(k, mu)
        } else {
            &self.hard_phi[k - m][mu]
        }
    }

    fn weight(&self, k: usize) -> f64 {
        let m = self.sample_count();
        if k < m {
            1.0
        } else {
            self.problem.hard_points[k - m].weight.sqrt()
        }
    }

    fn target(&self, k: usize) -> f64 {
        let m = self.sample_count();
        if k < m {
            self.problem.targets[k]
        } else {
            self.problem.hard_points[k - m].target
        }
    }

    fn weighted_targets(&self) -> Vec<f64> {
        (0..self.len()).map(|k| self.weight(k) * self.target(k)).collect()
    }
}

/// Gauge-respecting coordinates of the tangent space at a train.
#[derive(Clone, Debug)]
pub struct TangentFrame {
    reference: TensorTrain,
    /// `Q⊥ᵤᵀ`, row-major, one per non-final core.
    complements_t: Vec<Vec<f64>>,
    widths: Vec<usize>,
    offsets: Vec<usize>,
    dim: usize,
}

impl TangentFrame {
    /// Requires the reference to be orthogonalized at its last core.
    pub fn new(reference: &TensorTrain) -> Result<Self> {
        if !reference.is_last_core_orthogonal() {
            return Err(Error::State(
                "tangent frames need a reference orthogonalized at its last core".into(),
            ));
        }
        let d = reference.order();
        let mut complements_t = Vec::with_capacity(d - 1);
        let mut widths = Vec::with_capacity(d);
        let mut offsets = Vec::with_capacity(d);
        let mut dim = 0;
        for (mu, core) in reference.cores().iter().enumerate() {
            offsets.push(dim);
            let (rl, n, rr) = core.shape();
            if mu + 1 < d {
                let comp = orthogonal_complement(&core.left_unfolding());
                let k = comp.ncols();
                let mut t = vec![0.0; k * rl * n];
                for j in 0..k {
                    for p in 0..rl * n {
                        t[j * rl * n + p] = comp[(p, j)];
                    }
                }
                complements_t.push(t);
                widths.push(k);
                dim += k * rr;
            } else {
                widths.push(rl * n * rr);
                dim += rl * n * rr;
            }
        }
        Ok(Self {
            reference: reference.clone(),
            complements_t,
            widths,
            offsets,
            dim,
        })
    }

    pub fn reference(&self) -> &TensorTrain {
        &self.reference
    }

    /// Number of free coefficients.
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// `Q⊥ᵤ` as a matrix with orthonormal columns; `None` for the last core.
    pub fn complement(&self, mu: usize) -> Option<DMatrix<f64>> {
        let t = self.complements_t.get(mu)?;
        let rows = self.reference.core(mu).left() * self.reference.core(mu).mode();
        let k = self.widths[mu];
        Some(DMatrix::from_fn(rows, k, |p, j| t[j * rows + p]))
    }

    /// True when `r_{μ-1} n_μ = r_μ`, so the core has no gauged freedom.
    pub fn is_skipped(&self, mu: usize) -> bool {
        self.core_dim(mu) == 0
    }

    /// Number of coefficients belonging to core `mu`.
    pub fn core_dim(&self, mu: usize) -> usize {
        let next = self.offsets.get(mu + 1).copied().unwrap_or(self.dim);
        next - self.offsets[mu]
    }

    pub fn core_offset(&self, mu: usize) -> usize {
        self.offsets[mu]
    }

    /// Writes the design row `x ↦ 𝔒(W(x))(state)` for one state given by its
    /// basis rows.
    pub fn design_row(&self, phi: &[&[f64]], out: &mut [f64]) {
        let cores = self.reference.cores();
        let d = cores.len();
        debug_assert_eq!(out.len(), self.dim);
        let mut lefts: Vec<Vec<f64>> = Vec::with_capacity(d);
        lefts.push(vec![1.0]);
        for mu in 0..d - 1 {
            let mut next = vec![0.0; cores[mu].right()];
            cores[mu].contract_left(&lefts[mu], phi[mu], &mut next);
            lefts.push(next);
        }
        let mut right = vec![1.0];
        let mut v = Vec::new();
        let mut proj = Vec::new();
        for mu in (0..d).rev() {
            let core = &cores[mu];
            let (rl, n, rr) = core.shape();
            let left = &lefts[mu];
            v.clear();
            for &p in phi[mu] {
                v.extend(left.iter().map(|&l| l * p));
            }
            let off = self.offsets[mu];
            if mu + 1 == d {
                out[off..off + rl * n].copy_from_slice(&v);
            } else {
                let k = self.widths[mu];
                if k > 0 {
                    let t = &self.complements_t[mu];
                    proj.clear();
                    proj.extend(t.chunks_exact(rl * n).map(|row| row.iter().zip(&v).map(|(a, b)| a * b).sum::<f64>()));
                    for b in 0..rr {
                        let seg = &mut out[off + b * k..off + (b + 1) * k];
                        for (o, &p) in seg.iter_mut().zip(&proj) {
                            *o = right[b] * p;
                        }
                    }
                }
            }
            if mu > 0 {
                let mut next = vec![0.0; rl];
                core.contract_right(&right, phi[mu], &mut next);
                right = next;
            }
        }
    }

    /// Gauged components `Wᵘ` from stacked coefficients.
    pub fn to_tangent(&self, coefficients: &[f64]) -> Result<TangentVector> {
        if coefficients.len() != self.dim {
            return Err(Error::Shape(format!(
                "{} coefficients for a tangent space of dimension {}",
                coefficients.len(),
                self.dim
            )));
        }
        let cores = self.reference.cores();
        let d = cores.len();
        let mut deltas = Vec::with_capacity(d);
        for (mu, core) in cores.iter().enumerate() {
            let (rl, n, rr) = core.shape();
            let off = self.offsets[mu];
            if mu + 1 == d {
                deltas.push(Core::from_vec(rl, n, rr, coefficients[off..off + rl * n * rr].to_vec())?);
                continue;
            }
            let k = self.widths[mu];
            let t = &self.complements_t[mu];
            let mut w = Core::zeros(rl, n, rr);
            let data = w.data_mut();
            for b in 0..rr {
                let c = &coefficients[off + b * k..off + (b + 1) * k];
                let col = &mut data[b * rl * n..(b + 1) * rl * n];
                for (j, &cj) in c.iter().enumerate() {
                    for (o, q) in col.iter_mut().zip(&t[j * rl * n..(j + 1) * rl * n]) {
                        *o += cj * q;
                    }
                }
            }
            deltas.push(w);
        }
        TangentVector::new(self.reference.clone(), deltas)
    }

    /// Coefficients of a gauged tangent vector: `Cᵤ = Q⊥ᵤᵀ L(Wᵘ)`.
    pub fn coefficients(&self, tangent: &TangentVector) -> Result<Vec<f64>> {
        if tangent.deltas().len() != self.reference.order() {
            return Err(Error::Shape("tangent vector has the wrong order".into()));
        }
        let d = self.reference.order();
        let mut out = vec![0.0; self.dim];
        for (mu, w) in tangent.deltas().iter().enumerate() {
            if w.shape() != self.reference.core(mu).shape() {
                return Err(Error::Shape(format!("delta {mu} has the wrong shape")));
            }
            let (rl, n, rr) = w.shape();
            let off = self.offsets[mu];
            if mu + 1 == d {
                out[off..off + rl * n * rr].copy_from_slice(w.data());
                continue;
            }
            let k = self.widths[mu];
            let t = &self.complements_t[mu];
            for b in 0..rr {
                let col = &w.data()[b * rl * n..(b + 1) * rl * n];
                for j in 0..k {
                    out[off + b * k + j] = t[j * rl * n..(j + 1) * rl * n].iter().zip(col).map(|(a, c)| a * c).sum();
                }
            }
        }
        Ok(out)
    }
}

/// Design matrix with one row per sample, stored column-major.
pub fn assemble_design(frame: &TangentFrame, samples: &SampleSet) -> Result<DMatrix<f64>> {
    check_samples(&frame.reference, samples)?;
    let m = samples.len();
    let mut a = DMatrix::zeros(m, frame.dim());
    let mut row = vec![0.0; frame.dim()];
    for k in 0..m {
        frame.design_row(&samples.phi_rows(k), &mut row);
        for (j, &v) in row.iter().enumerate() {
            a[(k, j)] = v;
        }
    }
    Ok(a)
}

fn check_samples(tt: &TensorTrain, samples: &SampleSet) -> Result<()> {
    if samples.dim() != tt.order() {
        return Err(Error::Shape(format!(
            "samples have dimension {}, train has order {}",
            samples.dim(),
            tt.order()
        )));
    }
    if tt.mode_sizes().iter().any(|&n| n != samples.basis_len()) {
        return Err(Error::Shape("mode sizes do not match the sample basis".into()));
    }
    Ok(())
}

#[derive(Clone, Debug)]
pub struct TangentFit {
    pub tangent: TangentVector,
    pub coefficients: Vec<f64>,
    /// `‖A x − y‖ / ‖y‖` over the samples (hard points excluded); the
    /// absolute residual when `y = 0`.
    pub relative_residual: f64,
    /// The system was singular and the minimum-norm solution was used.
    pub degenerate: bool,
}

/// Ridge-regularized least squares over the tangent space at
/// `frame.reference()`.
pub fn tangent_fit(
    frame: &TangentFrame,
    basis: &BasisSet,
    problem: &RegressionProblem<'_>,
    method: SolveMethod,
) -> Result<TangentFit> {
    check_samples(&frame.reference, problem.samples)?;
    let rows = Rows::new(problem, basis)?;
    let total = rows.len();
    let cols = frame.dim();
    let clock = std::time::Instant::now();
    let mut a = vec![0.0; total * cols];
    // rows are produced contiguously and transposed in blocks
    const BLOCK: usize = 64;
    let mut block = vec![0.0; BLOCK * cols];
    let d = frame.reference.order();
    for start in (0..total).step_by(BLOCK) {
        let len = BLOCK.min(total - start);
        for r in 0..len {
            let k = start + r;
            let phi: Vec<&[f64]> = (0..d).map(|mu| rows.phi(k, mu)).collect();
            let row = &mut block[r * cols..(r + 1) * cols];
            frame.design_row(&phi, row);
            let w = rows.weight(k);
            if w != 1.0 {
                row.iter_mut().for_each(|v| *v *= w);
            }
        }
        for j in 0..cols {
            let col = &mut a[j * total + start..j * total + start + len];
            for (r, c) in col.iter_mut().enumerate() {
                *c = block[r * cols + j];
            }
        }
    }
    let y = rows.weighted_targets();
    let assembled = clock.elapsed().as_secs_f64();
    let (x, degenerate) = ridge_solve(&a, Layout::ColumnMajor, total, cols, &y, problem.ridge, method);
    log::debug!(
        "tangent fit: rows={total} cols={cols} assemble={assembled:.3}s solve={:.3}s",
        clock.elapsed().as_secs_f64() - assembled
    );
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("tangent fit produced non-finite coefficients".into()));
    }
    if degenerate && problem.ridge == 0.0 {
        log::warn!("tangent fit: singular system, using the minimum-norm solution");
    } else if degenerate {
        log::debug!("tangent fit: singular system, ridge raised");
    }
    let m = rows.sample_count();
    let mut pred = vec![0.0; m];
    for (j, &xj) in x.iter().enumerate() {
        if xj == 0.0 {
            continue;
        }
        for (p, &aij) in pred.iter_mut().zip(&a[j * total..j * total + m]) {
            *p += aij * xj;
        }
    }
    let relative_residual = relative_residual(&pred, problem.targets);
    let tangent = frame.to_tangent(&x)?;
    Ok(TangentFit {
        tangent,
        coefficients: x,
        relative_residual,
        degenerate,
    })
}

fn relative_residual(pred: &[f64], y: &[f64]) -> f64 {
    let res: f64 = pred.iter().zip(y).map(|(p, t)| (p - t) * (p - t)).sum::<f64>().sqrt();
    let norm: f64 = y.iter().map(|t| t * t).sum::<f64>().sqrt();
    if norm > 0.0 {
        res / norm
    } else {
        res
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AlsOptions {
    pub max_sweeps: usize,
    pub tol: f64,
    pub method: SolveMethod,
}

impl Default for AlsOptions {
    fn default() -> Self {
        Self {
            max_sweeps: 20,
            tol: 1e-10,
            method: SolveMethod::NormalEquations,
        }
    }
}

#[derive(Clone, Debug)]
pub struct AlsFit {
    /// The fitted train, orthogonalized at its last core.
    pub tt: TensorTrain,
    /// Relative residual over the samples after the last sweep.
    pub relative_residual: f64,
    pub sweeps: usize,
    /// Ridge weight after the last decay.
    pub ridge: f64,
    /// Regularized risk after every core update, starting with the risk of
    /// the initial train. The ridge weight changes between sweeps, so the
    /// sequence is only monotone within one sweep.
    pub risks: Vec<Vec<f64>>,
}

/// `δ ← max(0.9, ‖Mc − y‖² / ‖y‖²) · δ`.
pub fn decay_ridge(ridge: f64, residual_sq: f64, target_sq: f64) -> f64 {
    let ratio = if target_sq > 0.0 { residual_sq / target_sq } else { 0.0 };
    ratio.max(0.9) * ridge
}

/// Alternating least squares for a train of fixed rank, warm-started at
/// `init`. One sweep updates every core left to right and then right to
/// left; `problem.ridge` is the initial ridge weight.
pub fn als_fit(
    init: &TensorTrain,
    basis: &BasisSet,
    problem: &RegressionProblem<'_>,
    options: AlsOptions,
) -> Result<AlsFit> {
    check_samples(init, problem.samples)?;
    let rows = Rows::new(problem, basis)?;
    let total = rows.len();
    let m = rows.sample_count();
    let d = init.order();
    let y = rows.weighted_targets();
    let y_sq: f64 = problem.targets.iter().map(|t| t * t).sum();

    let mut cores = init.orthogonalize(0)?.into_cores();
    // lefts[μ][k], rights[μ][k]: partial contractions of cores < μ and > μ.
    let mut lefts: Vec<Vec<f64>> = (0..d).map(|_| Vec::new()).collect();
    let mut rights: Vec<Vec<f64>> = (0..d).map(|_| Vec::new()).collect();
    lefts[0] = vec![1.0; total];
    rights[d - 1] = vec![1.0; total];
    for mu in (0..d - 1).rev() {
        rights[mu] = contract_rights(&cores[mu + 1], &rights[mu + 1], &rows, mu + 1);
    }

    let mut ridge = problem.ridge;
    let mut sweeps = 0;
    let mut previous = f64::INFINITY;
    let mut residual = f64::INFINITY;
    let mut all_risks = Vec::new();
    let mut local = Vec::new();

    while sweeps < options.max_sweeps {
        let mut risks = vec![risk(&cores[0], &lefts[0], &rights[0], &rows, &y, ridge, 0, &mut local)];
        let order: Vec<usize> = (0..d).chain((0..d.saturating_sub(1)).rev()).collect();
        let mut res_sq = 0.0;
        for (step, &mu) in order.iter().enumerate() {
            let forward = step < d;
            if !forward {
                // move the orthogonality center from μ+1 to μ
                let (q, r) = qr_positive(cores[mu + 1].right_unfolding().transpose());
                let (_, n1, rr1) = cores[mu + 1].shape();
                cores[mu + 1] = Core::from_right_unfolding(n1, rr1, &q.transpose());
                let (rl, n, _) = cores[mu].shape();
                let merged = cores[mu].left_unfolding() * r.transpose();
                cores[mu] = Core::from_left_unfolding(rl, n, &merged);
                rights[mu] = contract_rights(&cores[mu + 1], &rights[mu + 1], &rows, mu + 1);
            }
            let (rl, n, rr) = cores[mu].shape();
            let cols = rl * n * rr;
            local_design(&lefts[mu], &rights[mu], &rows, mu, (rl, n, rr), &mut local);
            let (c, _) = ridge_solve(&local, Layout::RowMajor, total, cols, &y, ridge, options.method);
            if c.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numeric(format!("ALS update of core {mu} is not finite")));
            }
            cores[mu] = Core::from_vec(rl, n, rr, c)?;
            let (r_sq, reg) = local_risk(&local, total, m, &cores[mu], &y);
            res_sq = r_sq;
            let value = r_sq + reg + ridge * cores[mu].data().iter().map(|v| v * v).sum::<f64>();
            if !value.is_finite() {
                return Err(Error::Numeric("ALS residual is not finite".into()));
            }
            risks.push(value);
            if forward && mu + 1 < d {
                // move the orthogonality center from μ to μ+1
                let (q, r) = qr_positive(cores[mu].left_unfolding());
                cores[mu] = Core::from_left_unfolding(rl, n, &q);
                let (_, n1, rr1) = cores[mu + 1].shape();
                let merged = r * cores[mu + 1].right_unfolding();
                cores[mu + 1] = Core::from_right_unfolding(n1, rr1, &merged);
                lefts[mu + 1] = contract_lefts(&cores[mu], &lefts[mu], &rows, mu);
            }
        }
        sweeps += 1;
        all_risks.push(risks);
        residual = if y_sq > 0.0 { (res_sq / y_sq).sqrt() } else { res_sq.sqrt() };
        ridge = decay_ridge(ridge, res_sq, y_sq);
        log::debug!("als sweep={sweeps} residual={residual:.3e} ridge={ridge:.3e}");
        if (previous - residual).abs() < options.tol {
            break;
        }
        previous = residual;
    }

    let tt = TensorTrain::from_parts(cores, Orthogonality::Core(0)).orthogonalize(d - 1)?;
    Ok(AlsFit {
        tt,
        relative_residual: residual,
        sweeps,
        ridge,
        risks: all_risks,
    })
}

fn contract_lefts(core: &Core, lefts: &[f64], rows: &Rows<'_>, mu: usize) -> Vec<f64> {
    let (rl, _, rr) = core.shape();
    let mut out = vec![0.0; rows.len() * rr];
    for k in 0..rows.len() {
        core.contract_left(&lefts[k * rl..(k + 1) * rl], rows.phi(k, mu), &mut out[k * rr..(k + 1) * rr]);
    }
    out
}

fn contract_rights(core: &Core, rights: &[f64], rows: &Rows<'_>, mu: usize) -> Vec<f64> {
    let (rl, _, rr) = core.shape();
    let mut out = vec![0.0; rows.len() * rl];
    for k in 0..rows.len() {
        core.contract_right(&rights[k * rr..(k + 1) * rr], rows.phi(k, mu), &mut out[k * rl..(k + 1) * rl]);
    }
    out
}

/// Row-major matrix of the map `core ↦ (weighted) predictions`, with
/// entries `ℓ_a φ_i ρ_b` in core storage order.
fn local_design(
    lefts: &[f64],
    rights: &[f64],
    rows: &Rows<'_>,
    mu: usize,
    (rl, n, rr): (usize, usize, usize),
    out: &mut Vec<f64>,
) {
    let total = rows.len();
    let cols = rl * n * rr;
    out.clear();
    out.resize(total * cols, 0.0);
    for (k, row) in out.chunks_exact_mut(cols).enumerate() {
        let w = rows.weight(k);
        let l = &lefts[k * rl..(k + 1) * rl];
        let r = &rights[k * rr..(k + 1) * rr];
        let phi = rows.phi(k, mu);
        let mut p = 0;
        for &rb in r {
            let rb = w * rb;
            for &ph in phi {
                let f = rb * ph;
                for &la in l {
                    row[p] = f * la;
                    p += 1;
                }
            }
        }
    }
}

/// Squared sample residual and weighted hard-point residual of a core.
fn local_risk(local: &[f64], total: usize, m: usize, core: &Core, y: &[f64]) -> (f64, f64) {
    let c = core.data();
    let pred: Vec<f64> = local
        .chunks_exact(c.len())
        .map(|row| row.iter().zip(c).map(|(a, b)| a * b).sum())
        .collect();
    debug_assert_eq!(pred.len(), total);
    let sq = |range: std::ops::Range<usize>| range.map(|k| (pred[k] - y[k]).powi(2)).sum::<f64>();
    (sq(0..m), sq(m..total))
}

#[allow(clippy::too_many_arguments)]
fn risk(
    core: &Core,
    lefts: &[f64],
    rights: &[f64],
    rows: &Rows<'_>,
    y: &[f64],
    ridge: f64,
    mu: usize,
    scratch: &mut Vec<f64>,
) -> f64 {
    local_design(lefts, rights, rows, mu, core.shape(), scratch);
    let (a, b) = local_risk(scratch, rows.len(), rows.sample_count(), core, y);
    a + b + ridge * core.data().iter().map(|v| v * v).sum::<f64>()
}
