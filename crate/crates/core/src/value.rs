//! Value-function surrogates `V(x) = A φ(x)` and the feedback laws they
//! induce.

use std::io::{Read, Write};

use crate::basis::BasisSet;
use crate::error::{Error, Result};
use crate::tt::{read_u32, Core, TensorTrain};

/// Per-dimension basis values and derivatives at one state.
pub(crate) fn basis_rows(basis: &BasisSet, x: &[f64]) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    x.iter().map(|&xi| basis.eval(xi)).unzip()
}

fn check_state(tt: &TensorTrain, basis: &BasisSet, x: &[f64]) -> Result<()> {
    if x.len() != tt.order() {
        return Err(Error::Shape(format!(
            "state has {} entries, value function has order {}",
            x.len(),
            tt.order()
        )));
    }
    if tt.mode_sizes().iter().any(|&n| n != basis.len()) {
        return Err(Error::Shape(format!(
            "mode sizes {:?} do not match a basis of size {}",
            tt.mode_sizes(),
            basis.len()
        )));
    }
    Ok(())
}

pub fn eval_value(tt: &TensorTrain, basis: &BasisSet, x: &[f64]) -> Result<f64> {
    check_state(tt, basis, x)?;
    let (vals, _) = basis_rows(basis, x);
    let refs: Vec<&[f64]> = vals.iter().map(Vec::as_slice).collect();
    Ok(tt.evaluate_unchecked(&refs))
}

/// Value and spatial gradient from precomputed basis rows, sharing the
/// partial contractions: `∂_k V = ℓ_k (Σ_i φ′_i(x_k) U^k[i]) ρ_{k+1}`.
pub(crate) fn value_and_gradient_rows(
    tt: &TensorTrain,
    vals: &[&[f64]],
    ders: &[&[f64]],
    grad: &mut [f64],
) -> f64 {
    let cores = tt.cores();
    let d = cores.len();
    let mut lefts: Vec<Vec<f64>> = Vec::with_capacity(d + 1);
    lefts.push(vec![1.0]);
    for (k, core) in cores.iter().enumerate() {
        let mut next = vec![0.0; core.right()];
        core.contract_left(&lefts[k], vals[k], &mut next);
        lefts.push(next);
    }
    let mut right = vec![1.0];
    let mut tmp = Vec::new();
    for k in (0..d).rev() {
        let core = &cores[k];
        tmp.resize(core.right(), 0.0);
        core.contract_left(&lefts[k], ders[k], &mut tmp);
        grad[k] = tmp.iter().zip(&right).map(|(a, b)| a * b).sum();
        if k > 0 {
            let mut next = vec![0.0; core.left()];
            core.contract_right(&right, vals[k], &mut next);
            right = next;
        }
    }
    lefts[d][0]
}

pub fn eval_value_and_gradient(tt: &TensorTrain, basis: &BasisSet, x: &[f64]) -> Result<(f64, Vec<f64>)> {
    check_state(tt, basis, x)?;
    let (vals, ders) = basis_rows(basis, x);
    let v: Vec<&[f64]> = vals.iter().map(Vec::as_slice).collect();
    let dv: Vec<&[f64]> = ders.iter().map(Vec::as_slice).collect();
    let mut grad = vec![0.0; x.len()];
    let value = value_and_gradient_rows(tt, &v, &dv, &mut grad);
    Ok((value, grad))
}

pub fn eval_gradient(tt: &TensorTrain, basis: &BasisSet, x: &[f64]) -> Result<Vec<f64>> {
    eval_value_and_gradient(tt, basis, x).map(|(_, g)| g)
}

/// Exact rank-2 train of `f(x) = Σ_k w_k x_k² + c`.
pub fn build_quadratic_tt(basis: &BasisSet, weights: &[f64], constant: f64) -> Result<TensorTrain> {
    if basis.len() < 3 {
        return Err(Error::Parameter(format!(
            "a basis of size {} cannot represent x² (need at least 3 functions)",
            basis.len()
        )));
    }
    if weights.is_empty() {
        return Err(Error::Shape("at least one weight is required".into()));
    }
    let (one, res_one) = basis.expand_polynomial(&[1.0])?;
    let (square, res_square) = basis.expand_polynomial(&[0.0, 0.0, 1.0])?;
    if res_one.max(res_square) > 1e-10 {
        return Err(Error::Numeric(format!(
            "basis expansion of 1 and x² left residual {:.3e}",
            res_one.max(res_square)
        )));
    }
    let n = basis.len();
    let d = weights.len();
    if d == 1 {
        let data = (0..n).map(|i| weights[0] * square[i] + constant * one[i]).collect();
        return TensorTrain::new(vec![Core::from_vec(1, n, 1, data)?]);
    }
    // left state (partial sum, 1)
    let mut cores = Vec::with_capacity(d);
    let mut first = Core::zeros(1, n, 2);
    for i in 0..n {
        first.set(0, i, 0, weights[0] * square[i] + constant * one[i]);
        first.set(0, i, 1, one[i]);
    }
    cores.push(first);
    for &w in &weights[1..d - 1] {
        let mut c = Core::zeros(2, n, 2);
        for i in 0..n {
            c.set(0, i, 0, one[i]);
            c.set(1, i, 0, w * square[i]);
            c.set(1, i, 1, one[i]);
        }
        cores.push(c);
    }
    let mut last = Core::zeros(2, n, 1);
    for i in 0..n {
        last.set(0, i, 0, one[i]);
        last.set(1, i, 0, weights[d - 1] * square[i]);
    }
    cores.push(last);
    TensorTrain::new(cores)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Interpolation {
    /// `V̂(t) = A_ℓ` for `t ∈ [t_ℓ, t_{ℓ+1})`.
    #[default]
    PiecewiseConstant,
    Linear,
}

/// Time grid with one coefficient train per node.
#[derive(Clone, Debug, PartialEq)]
pub struct ValueFunctionPath {
    times: Vec<f64>,
    tensors: Vec<TensorTrain>,
    interpolation: Interpolation,
}

const PATH_MAGIC: &[u8; 4] = b"VFP1";

impl ValueFunctionPath {
    pub fn new(times: Vec<f64>, tensors: Vec<TensorTrain>, interpolation: Interpolation) -> Result<Self> {
        if times.is_empty() {
            return Err(Error::Shape("empty value-function path".into()));
        }
        if times.len() != tensors.len() {
            return Err(Error::Shape(format!(
                "{} time nodes but {} tensors",
                times.len(),
                tensors.len()
            )));
        }
        if times.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::Parameter("time nodes must be strictly increasing".into()));
        }
        let modes = tensors[0].mode_sizes();
        if tensors.iter().any(|t| t.mode_sizes() != modes) {
            return Err(Error::Shape("all tensors of a path must share mode sizes".into()));
        }
        Ok(Self {
            times,
            tensors,
            interpolation,
        })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn tensors(&self) -> &[TensorTrain] {
        &self.tensors
    }

    pub fn interpolation(&self) -> Interpolation {
        self.interpolation
    }

    pub fn with_interpolation(mut self, interpolation: Interpolation) -> Self {
        self.interpolation = interpolation;
        self
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn order(&self) -> usize {
        self.tensors[0].order()
    }

    /// Node index `ℓ` with `t_ℓ ≤ t < t_{ℓ+1}` (clamped to the grid) and the
    /// linear weight of node `ℓ + 1`. Times within `1e-9` of a node snap to it.
    pub fn locate(&self, t: f64) -> (usize, f64) {
        let last = self.times.len() - 1;
        let span = (self.times[last] - self.times[0]).abs().max(1.0);
        let snap = 1e-9 * span;
        if t <= self.times[0] + snap {
            return (0, 0.0);
        }
        if t >= self.times[last] - snap {
            return (last, 0.0);
        }
        let idx = self.times.partition_point(|&s| s <= t + snap) - 1;
        let (a, b) = (self.times[idx], self.times[idx + 1]);
        let w = ((t - a) / (b - a)).clamp(0.0, 1.0);
        (idx, if (t - a).abs() <= snap { 0.0 } else { w })
    }

    fn blend<T>(&self, t: f64, f: impl Fn(&TensorTrain) -> Result<T>, mix: impl Fn(T, T, f64) -> T) -> Result<T> {
        let (idx, w) = self.locate(t);
        match self.interpolation {
            Interpolation::PiecewiseConstant => f(&self.tensors[idx]),
            Interpolation::Linear if w == 0.0 => f(&self.tensors[idx]),
            Interpolation::Linear => Ok(mix(f(&self.tensors[idx])?, f(&self.tensors[idx + 1])?, w)),
        }
    }

    pub fn value(&self, basis: &BasisSet, t: f64, x: &[f64]) -> Result<f64> {
        self.blend(t, |tt| eval_value(tt, basis, x), |a, b, w| (1.0 - w) * a + w * b)
    }

    pub fn gradient(&self, basis: &BasisSet, t: f64, x: &[f64]) -> Result<Vec<f64>> {
        self.blend(
            t,
            |tt| eval_gradient(tt, basis, x),
            |a, b, w| a.iter().zip(&b).map(|(p, q)| (1.0 - w) * p + w * q).collect(),
        )
    }

    /// Checkpoint: magic `VFP1`, node count (u32), time nodes (f64 LE), then
    /// one tensor-train block per node.
    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(PATH_MAGIC)?;
        w.write_all(&(self.times.len() as u32).to_le_bytes())?;
        for t in &self.times {
            w.write_all(&t.to_le_bytes())?;
        }
        for tt in &self.tensors {
            tt.write_to(w)?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != PATH_MAGIC {
            return Err(Error::Format(format!("bad value-function magic {magic:?}")));
        }
        let count = read_u32(r)? as usize;
        let mut times = Vec::with_capacity(count);
        for _ in 0..count {
            let mut b = [0u8; 8];
            r.read_exact(&mut b)?;
            times.push(f64::from_le_bytes(b));
        }
        let tensors = (0..count)
            .map(|_| TensorTrain::read_from(r))
            .collect::<Result<Vec<_>>>()?;
        Self::new(times, tensors, Interpolation::default()).map_err(|e| Error::Format(e.to_string()))
    }
}

/// `α(t, x) = -½ R⁻¹ g(x)ᵀ ∇V̂(t, x)` for a scalar control with constant
/// control interface `g` and weight `R = γ`.
#[derive(Clone, Debug)]
pub struct FeedbackLaw {
    path: ValueFunctionPath,
    basis: BasisSet,
    gamma: f64,
    interface: Vec<f64>,
}

impl FeedbackLaw {
    pub fn new(path: ValueFunctionPath, basis: BasisSet, gamma: f64, interface: Vec<f64>) -> Result<Self> {
        if !(gamma > 0.0) {
            return Err(Error::Parameter(format!("control weight must be positive, got {gamma}")));
        }
        if interface.len() != path.order() {
            return Err(Error::Shape(format!(
                "control interface has {} entries for a {}-dimensional state",
                interface.len(),
                path.order()
            )));
        }
        Ok(Self {
            path,
            basis,
            gamma,
            interface,
        })
    }

    pub fn path(&self) -> &ValueFunctionPath {
        &self.path
    }

    pub fn basis(&self) -> &BasisSet {
        &self.basis
    }

    pub fn control(&self, t: f64, x: &[f64]) -> Result<f64> {
        let grad = self.path.gradient(&self.basis, t, x)?;
        Ok(policy_from_gradient(&self.interface, self.gamma, &grad))
    }
}

#[inline]
pub(crate) fn policy_from_gradient(interface: &[f64], gamma: f64, grad: &[f64]) -> f64 {
    let gv: f64 = interface.iter().zip(grad).map(|(g, v)| g * v).sum();
    -0.5 * gv / gamma
}
