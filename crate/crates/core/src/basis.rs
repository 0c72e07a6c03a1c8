//! One-dimensional polynomial bases.
//!
//! The production basis is orthonormal in `H²(a, b)` with the inner product
//! `⟨p, q⟩ = ∫ p q + p′ q′ + p″ q″`. It is obtained from Legendre polynomials
//! mapped to `[a, b]` by whitening their Gram matrix with a Cholesky factor,
//! so `φ_j` has degree exactly `j - 1` (one-based).

use nalgebra::DMatrix;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BasisKind {
    H2Orthonormal,
    /// `φ_j(x) = x^{j-1}`; only meant for tests.
    MonomialTest,
}

#[derive(Clone, Debug)]
pub struct BasisSet {
    n: usize,
    lower: f64,
    upper: f64,
    kind: BasisKind,
    /// Row `j` holds the Legendre coefficients of `φ_j` (lower triangular).
    coeffs: DMatrix<f64>,
}

/// Values and first two derivatives (w.r.t. `t`) of `P_0..P_{n-1}` at `t`.
fn legendre_with_derivatives(t: f64, p: &mut [f64], dp: &mut [f64], ddp: &mut [f64]) {
    let n = p.len();
    if n == 0 {
        return;
    }
    p[0] = 1.0;
    dp[0] = 0.0;
    ddp[0] = 0.0;
    if n == 1 {
        return;
    }
    p[1] = t;
    dp[1] = 1.0;
    ddp[1] = 0.0;
    for k in 1..n - 1 {
        let kf = k as f64;
        p[k + 1] = ((2.0 * kf + 1.0) * t * p[k] - kf * p[k - 1]) / (kf + 1.0);
        dp[k + 1] = dp[k - 1] + (2.0 * kf + 1.0) * p[k];
        ddp[k + 1] = ddp[k - 1] + (2.0 * kf + 1.0) * dp[k];
    }
}

/// Gauss–Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(order: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; order];
    let mut weights = vec![0.0; order];
    let mut p = vec![0.0; order + 1];
    let mut dp = vec![0.0; order + 1];
    let mut ddp = vec![0.0; order + 1];
    for i in 0..order {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (order as f64 + 0.5)).cos();
        for _ in 0..100 {
            legendre_with_derivatives(x, &mut p, &mut dp, &mut ddp);
            let step = p[order] / dp[order];
            x -= step;
            if step.abs() < 1e-16 {
                break;
            }
        }
        legendre_with_derivatives(x, &mut p, &mut dp, &mut ddp);
        nodes[i] = x;
        weights[i] = 2.0 / ((1.0 - x * x) * dp[order] * dp[order]);
    }
    (nodes, weights)
}

impl BasisSet {
    pub fn build(n: usize, interval: (f64, f64), kind: BasisKind) -> Result<Self> {
        if n < 1 {
            return Err(Error::Parameter("basis needs at least one function".into()));
        }
        let (lower, upper) = interval;
        if !(lower < upper) || !lower.is_finite() || !upper.is_finite() {
            return Err(Error::Parameter(format!("invalid interval ({lower}, {upper})")));
        }
        let coeffs = match kind {
            BasisKind::MonomialTest => DMatrix::identity(n, n),
            BasisKind::H2Orthonormal => h2_whitening(n, lower, upper)?,
        };
        Ok(Self {
            n,
            lower,
            upper,
            kind,
            coeffs,
        })
    }

    /// The configuration used throughout: `H²`-orthonormal on `(-2, 2)`.
    pub fn h2(n: usize) -> Result<Self> {
        Self::build(n, (-2.0, 2.0), BasisKind::H2Orthonormal)
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn interval(&self) -> (f64, f64) {
        (self.lower, self.upper)
    }

    pub fn kind(&self) -> BasisKind {
        self.kind
    }

    pub fn max_degree(&self) -> usize {
        self.n - 1
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.lower && x <= self.upper
    }

    /// `(φ(x), φ′(x))`. Points outside the interval are extrapolated.
    pub fn eval(&self, x: f64) -> (Vec<f64>, Vec<f64>) {
        let mut values = vec![0.0; self.n];
        let mut derivs = vec![0.0; self.n];
        self.eval_into(x, &mut values, &mut derivs);
        (values, derivs)
    }

    pub fn eval_into(&self, x: f64, values: &mut [f64], derivs: &mut [f64]) {
        self.eval_all_into(x, values, derivs, None);
    }

    /// Values, first and second derivatives.
    pub fn eval_all(&self, x: f64) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let mut v = vec![0.0; self.n];
        let mut d1 = vec![0.0; self.n];
        let mut d2 = vec![0.0; self.n];
        self.eval_all_into(x, &mut v, &mut d1, Some(&mut d2));
        (v, d1, d2)
    }

    fn eval_all_into(&self, x: f64, values: &mut [f64], d1: &mut [f64], mut d2: Option<&mut [f64]>) {
        const STACK: usize = 32;
        match self.kind {
            BasisKind::MonomialTest => {
                let mut pow = 1.0;
                let mut pow_m1 = 0.0;
                let mut pow_m2 = 0.0;
                for j in 0..self.n {
                    let jf = j as f64;
                    values[j] = pow;
                    d1[j] = jf * pow_m1;
                    if let Some(d2) = d2.as_deref_mut() {
                        d2[j] = jf * (jf - 1.0) * pow_m2;
                    }
                    pow_m2 = pow_m1;
                    pow_m1 = pow;
                    pow *= x;
                }
            }
            BasisKind::H2Orthonormal => {
                let n = self.n;
                let mut stack = [0.0; 3 * STACK];
                let mut heap = Vec::new();
                let buf: &mut [f64] = if n <= STACK {
                    &mut stack[..3 * n]
                } else {
                    heap.resize(3 * n, 0.0);
                    &mut heap
                };
                let (p, rest) = buf.split_at_mut(n);
                let (dp, ddp) = rest.split_at_mut(n);
                let scale = 2.0 / (self.upper - self.lower);
                let t = (2.0 * x - self.lower - self.upper) / (self.upper - self.lower);
                legendre_with_derivatives(t, p, dp, ddp);
                for j in 0..n {
                    let (mut v, mut a, mut b) = (0.0, 0.0, 0.0);
                    for k in 0..=j {
                        let c = self.coeffs[(j, k)];
                        v += c * p[k];
                        a += c * dp[k];
                        b += c * ddp[k];
                    }
                    values[j] = v;
                    d1[j] = a * scale;
                    if let Some(d2) = d2.as_deref_mut() {
                        d2[j] = b * scale * scale;
                    }
                }
            }
        }
    }

    /// Coefficients `c` with `Σ_j c_j φ_j = f` for a polynomial `f` given by
    /// its monomial coefficients, computed by an `L²` least-squares fit with
    /// exact Gauss quadrature. Returns the coefficients and the largest
    /// pointwise residual at the quadrature nodes.
    pub fn expand_polynomial(&self, monomial: &[f64]) -> Result<(Vec<f64>, f64)> {
        let n = self.n;
        let degree = monomial.len().saturating_sub(1).max(n - 1);
        let (nodes, weights) = gauss_legendre(degree + 2);
        let half = 0.5 * (self.upper - self.lower);
        let mid = 0.5 * (self.upper + self.lower);
        let mut gram = DMatrix::<f64>::zeros(n, n);
        let mut rhs = nalgebra::DVector::<f64>::zeros(n);
        let mut samples = Vec::with_capacity(nodes.len());
        for (&t, &w) in nodes.iter().zip(&weights) {
            let x = mid + half * t;
            let (phi, _) = self.eval(x);
            let f = eval_monomial(monomial, x);
            for i in 0..n {
                rhs[i] += w * phi[i] * f;
                for j in 0..n {
                    gram[(i, j)] += w * phi[i] * phi[j];
                }
            }
            samples.push((phi, f));
        }
        let chol = gram
            .cholesky()
            .ok_or_else(|| Error::Numeric("basis L² Gram matrix is not positive definite".into()))?;
        let c = chol.solve(&rhs);
        let residual = samples
            .iter()
            .map(|(phi, f)| (phi.iter().zip(c.iter()).map(|(p, ci)| p * ci).sum::<f64>() - f).abs())
            .fold(0.0, f64::max);
        Ok((c.as_slice().to_vec(), residual))
    }
}

fn eval_monomial(coeffs: &[f64], x: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, c| acc * x + c)
}

fn h2_whitening(n: usize, lower: f64, upper: f64) -> Result<DMatrix<f64>> {
    let (nodes, weights) = gauss_legendre(n + 2);
    let half = 0.5 * (upper - lower);
    let scale = 1.0 / half;
    let mut gram = DMatrix::<f64>::zeros(n, n);
    let mut p = vec![0.0; n];
    let mut dp = vec![0.0; n];
    let mut ddp = vec![0.0; n];
    for (&t, &w) in nodes.iter().zip(&weights) {
        legendre_with_derivatives(t, &mut p, &mut dp, &mut ddp);
        for k in 0..n {
            for l in 0..n {
                gram[(k, l)] += w
                    * half
                    * (p[k] * p[l] + scale * scale * dp[k] * dp[l] + scale.powi(4) * ddp[k] * ddp[l]);
            }
        }
    }
    let chol = gram
        .cholesky()
        .ok_or_else(|| Error::Numeric("H² Gram matrix of the Legendre family is singular".into()))?;
    let l = chol.l();
    l.solve_lower_triangular(&DMatrix::identity(n, n))
        .ok_or_else(|| Error::Numeric("singular Cholesky factor".into()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_functions_rejected() {
        assert!(matches!(
            BasisSet::build(0, (-2.0, 2.0), BasisKind::H2Orthonormal),
            Err(Error::Parameter(_))
        ));
    }

    #[test]
    fn constant_function_has_unit_h2_norm() {
        let b = BasisSet::h2(1).unwrap();
        for x in [-1.7, 0.0, 0.4, 2.0] {
            let (v, d) = b.eval(x);
            assert!((v[0] - 0.5).abs() < 1e-15);
            assert_eq!(d[0], 0.0);
        }
    }

    #[test]
    fn monomial_values_and_derivatives() {
        let b = BasisSet::build(3, (-2.0, 2.0), BasisKind::MonomialTest).unwrap();
        let (v, d) = b.eval(2.0);
        assert_eq!(v, vec![1.0, 2.0, 4.0]);
        assert_eq!(d, vec![0.0, 1.0, 4.0]);
    }

    #[test]
    fn default_configuration_has_degree_eight() {
        let b = BasisSet::h2(9).unwrap();
        assert_eq!(b.max_degree(), 8);
        // leading Legendre coefficient of φ_9 is nonzero, higher ones absent
        assert!(b.coeffs[(8, 8)].abs() > 0.0);
        assert_eq!(b.coeffs[(7, 8)], 0.0);
    }

    #[test]
    fn gauss_legendre_integrates_polynomials_exactly() {
        let (x, w) = gauss_legendre(5);
        let integral: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(8)).sum();
        assert!((integral - 2.0 / 9.0).abs() < 1e-14);
        assert!((w.iter().sum::<f64>() - 2.0).abs() < 1e-14);
    }

    #[test]
    fn expansion_of_square_is_exact() {
        let b = BasisSet::h2(4).unwrap();
        let (c, res) = b.expand_polynomial(&[0.0, 0.0, 1.0]).unwrap();
        assert!(res < 1e-12);
        let (phi, _) = b.eval(1.3);
        let v: f64 = phi.iter().zip(&c).map(|(p, c)| p * c).sum();
        assert!((v - 1.69).abs() < 1e-12);
    }
}
