//! Brute-force references shared by the integration tests. Nothing here
//! calls into the library except to read core entries.

#![allow(dead_code)]

use dlra_hjb::{Core, TensorTrain};
use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tt(modes: &[usize], ranks: &[usize], seed: u64) -> TensorTrain {
    TensorTrain::random(modes, ranks, &mut rng(seed)).unwrap()
}

/// Full tensor with the first index running fastest.
pub fn dense(tt: &TensorTrain) -> Vec<f64> {
    let modes = tt.mode_sizes();
    let total: usize = modes.iter().product();
    let mut out = vec![0.0; total];
    let mut idx = vec![0usize; modes.len()];
    for (flat, entry) in out.iter_mut().enumerate() {
        let mut rem = flat;
        for (k, &n) in modes.iter().enumerate() {
            idx[k] = rem % n;
            rem /= n;
        }
        // row vector times each slice
        let mut row = vec![1.0];
        for (mu, core) in tt.cores().iter().enumerate() {
            let (l, _, r) = core.shape();
            let mut next = vec![0.0; r];
            for (b, slot) in next.iter_mut().enumerate() {
                for a in 0..l {
                    *slot += row[a] * core.get(a, idx[mu], b);
                }
            }
            row = next;
        }
        *entry = row[0];
    }
    out
}

/// `Σ_i T[i] Π_μ rows[μ][i_μ]`.
pub fn dense_eval(full: &[f64], modes: &[usize], rows: &[&[f64]]) -> f64 {
    let mut sum = 0.0;
    for (flat, &v) in full.iter().enumerate() {
        let mut rem = flat;
        let mut w = v;
        for (k, &n) in modes.iter().enumerate() {
            w *= rows[k][rem % n];
            rem /= n;
        }
        sum += w;
    }
    sum
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn rel_diff(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    diff / norm(b).max(f64::MIN_POSITIVE)
}

/// Matricization with the first `mu + 1` indices as rows.
pub fn unfolding(full: &[f64], modes: &[usize], mu: usize) -> DMatrix<f64> {
    let rows: usize = modes[..=mu].iter().product();
    let cols = full.len() / rows;
    DMatrix::from_column_slice(rows, cols, full)
}

pub fn singular_values(m: &DMatrix<f64>) -> Vec<f64> {
    let mut s: Vec<f64> = m.clone().svd(false, false).singular_values.iter().copied().collect();
    s.sort_by(|a, b| b.partial_cmp(a).unwrap());
    s
}

pub fn numerical_rank(m: &DMatrix<f64>, rel: f64) -> usize {
    let s = singular_values(m);
    let top = s.first().copied().unwrap_or(0.0);
    s.iter().filter(|&&v| v > rel * top).count()
}

/// `‖L(U)ᵀL(U) − I‖_max` from raw core entries.
pub fn left_defect(core: &Core) -> f64 {
    let (l, n, r) = core.shape();
    let mut worst: f64 = 0.0;
    for b in 0..r {
        for c in 0..r {
            let mut s = 0.0;
            for a in 0..l {
                for i in 0..n {
                    s += core.get(a, i, b) * core.get(a, i, c);
                }
            }
            let target = if b == c { 1.0 } else { 0.0 };
            worst = worst.max((s - target).abs());
        }
    }
    worst
}

/// `‖R(U)R(U)ᵀ − I‖_max` from raw core entries.
pub fn right_defect(core: &Core) -> f64 {
    let (l, n, r) = core.shape();
    let mut worst: f64 = 0.0;
    for a in 0..l {
        for c in 0..l {
            let mut s = 0.0;
            for i in 0..n {
                for b in 0..r {
                    s += core.get(a, i, b) * core.get(c, i, b);
                }
            }
            let target = if a == c { 1.0 } else { 0.0 };
            worst = worst.max((s - target).abs());
        }
    }
    worst
}

/// `Σ_μ U_1 … W_μ … U_d` as a dense tensor.
pub fn dense_tangent(reference: &TensorTrain, deltas: &[Core]) -> Vec<f64> {
    let mut total = vec![0.0; reference.mode_sizes().iter().product()];
    for (mu, w) in deltas.iter().enumerate() {
        let mut cores = reference.cores().to_vec();
        cores[mu] = w.clone();
        let term = dense(&TensorTrain::new(cores).unwrap());
        for (t, v) in total.iter_mut().zip(term) {
            *t += v;
        }
    }
    total
}

/// Composite Simpson rule with `m` (even) panels.
pub fn simpson<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, m: usize) -> f64 {
    let h = (b - a) / m as f64;
    let mut s = f(a) + f(b);
    for k in 1..m {
        let w = if k % 2 == 1 { 4.0 } else { 2.0 };
        s += w * f(a + k as f64 * h);
    }
    s * h / 3.0
}

/// Central differences of a scalar field.
pub fn fd_gradient<F: Fn(&[f64]) -> f64>(f: F, x: &[f64], h: f64) -> Vec<f64> {
    let mut y = x.to_vec();
    (0..x.len())
        .map(|i| {
            y[i] = x[i] + h;
            let up = f(&y);
            y[i] = x[i] - h;
            let down = f(&y);
            y[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}
