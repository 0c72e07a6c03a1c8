//! Small dense helpers with deterministic sign conventions.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Thin QR with a non-negative diagonal in `R`.
pub(crate) fn qr_positive(m: DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let qr = m.qr();
    let mut q = qr.q();
    let mut r = qr.r();
    for k in 0..r.nrows().min(r.ncols()) {
        if r[(k, k)] < 0.0 {
            r.row_mut(k).neg_mut();
            q.column_mut(k).neg_mut();
        }
    }
    (q, r)
}

/// Thin SVD `m = U diag(s) Vᵀ` with singular values in descending order and
/// the first non-negligible entry of every left singular vector positive.
pub(crate) fn svd_sorted(m: DMatrix<f64>) -> Result<(DMatrix<f64>, Vec<f64>, DMatrix<f64>)> {
    let (rows, cols) = m.shape();
    let k = rows.min(cols);
    if k == 0 {
        return Ok((
            DMatrix::zeros(rows, 0),
            Vec::new(),
            DMatrix::zeros(0, cols),
        ));
    }
    let fail = || Error::Numeric("SVD of a non-finite or overflowing matrix".into());
    let svd = m.try_svd_unordered(true, true, f64::EPSILON, 0).ok_or_else(fail)?;
    if svd.singular_values.iter().any(|v| !v.is_finite()) {
        return Err(fail());
    }
    let u = svd.u.expect("left singular vectors requested");
    let vt = svd.v_t.expect("right singular vectors requested");
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));

    let mut u_out = DMatrix::zeros(rows, k);
    let mut vt_out = DMatrix::zeros(k, cols);
    let mut s_out = Vec::with_capacity(k);
    for (dst, &src) in order.iter().enumerate() {
        let mut ucol = u.column(src).clone_owned();
        let mut vrow = vt.row(src).clone_owned();
        let scale = ucol.amax().max(f64::MIN_POSITIVE);
        if let Some(first) = ucol.iter().find(|v| v.abs() > 1e-10 * scale) {
            if *first < 0.0 {
                ucol.neg_mut();
                vrow.neg_mut();
            }
        }
        u_out.set_column(dst, &ucol);
        vt_out.set_row(dst, &vrow);
        s_out.push(svd.singular_values[src]);
    }
    Ok((u_out, s_out, vt_out))
}

/// Orthonormal basis of the orthogonal complement of the column span of a
/// matrix with orthonormal columns, taken from the trailing columns of the
/// full Householder `Q`.
pub(crate) fn orthogonal_complement(basis: &DMatrix<f64>) -> DMatrix<f64> {
    let (rows, cols) = basis.shape();
    if cols >= rows {
        return DMatrix::zeros(rows, 0);
    }
    let qr = basis.clone().qr();
    let mut q_t = DMatrix::<f64>::identity(rows, rows);
    qr.q_tr_mul(&mut q_t);
    // rows of Qᵀ are the columns of the full Q
    q_t.rows(cols, rows - cols).transpose()
}

pub(crate) fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

/// How the regularized least-squares problems are solved.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum SolveMethod {
    /// `(AᵀA + δI) x = Aᵀy` by Cholesky.
    #[default]
    NormalEquations,
    /// Householder QR of `[A; √δ I]`.
    Qr,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Layout {
    ColumnMajor,
    RowMajor,
}

/// Solution of `min ‖Ax − y‖² + δ‖x‖²` for `a` with `rows` rows. The flag is set when the system was numerically singular: for
/// `δ > 0` the ridge was raised to `1e-13` times the largest diagonal entry
/// of the normal matrix, for `δ = 0` the minimum-norm solution is returned.
pub(crate) fn ridge_solve(
    a: &[f64],
    layout: Layout,
    rows: usize,
    cols: usize,
    y: &[f64],
    ridge: f64,
    method: SolveMethod,
) -> (Vec<f64>, bool) {
    use faer::linalg::matmul::triangular::{matmul, BlockStructure};
    use faer::linalg::solvers::{Solve, SolveLstsq};
    use faer::{Accum, Mat, MatRef, Par, Side};

    debug_assert_eq!(a.len(), rows * cols);
    if cols == 0 {
        return (Vec::new(), false);
    }
    let am = match layout {
        Layout::ColumnMajor => MatRef::from_column_major_slice(a, rows, cols),
        Layout::RowMajor => MatRef::from_row_major_slice(a, rows, cols),
    };
    let yv = MatRef::from_column_major_slice(y, rows, 1);

    if method == SolveMethod::Qr && ridge > 0.0 && rows > 0 {
        let sq = ridge.sqrt();
        let aug = Mat::<f64>::from_fn(rows + cols, cols, |i, j| {
            if i < rows {
                am[(i, j)]
            } else if i - rows == j {
                sq
            } else {
                0.0
            }
        });
        let rhs = Mat::<f64>::from_fn(rows + cols, 1, |i, _| if i < rows { y[i] } else { 0.0 });
        let x = aug.qr().solve_lstsq(&rhs);
        let out: Vec<f64> = (0..cols).map(|i| x[(i, 0)]).collect();
        if out.iter().all(|v| v.is_finite()) {
            return (out, false);
        }
    }

    let mut gram = Mat::<f64>::zeros(cols, cols);
    matmul(
        gram.as_mut(),
        BlockStructure::TriangularLower,
        Accum::Replace,
        am.transpose(),
        BlockStructure::Rectangular,
        am,
        BlockStructure::Rectangular,
        1.0,
        Par::Seq,
    );
    let mut rhs = Mat::<f64>::zeros(cols, 1);
    faer::linalg::matmul::matmul(rhs.as_mut(), Accum::Replace, am.transpose(), yv, 1.0, Par::Seq);
    for i in 0..cols {
        gram[(i, i)] += ridge;
    }
    let mut degenerate = false;

    let mut llt = gram.llt(Side::Lower);
    if llt.is_err() && ridge > 0.0 {
        // Numerically singular despite the ridge: happens when the model has
        // negligible singular values and a heavily weighted row spoils the
        // pivots. Retry with a ridge at roundoff level of the largest entry.
        let top = (0..cols).map(|i| gram[(i, i)]).fold(0.0, f64::max);
        let extra = (1e-13 * top - ridge).max(0.0);
        if extra > 0.0 {
            log::debug!("ridge solve: Cholesky failed, raising the ridge by {extra:.3e}");
            for i in 0..cols {
                gram[(i, i)] += extra;
            }
            llt = gram.llt(Side::Lower);
            if llt.is_ok() {
                degenerate = true;
            }
            for i in 0..cols {
                gram[(i, i)] -= extra;
            }
        }
    }
    if let Ok(llt) = llt {
        let l = llt.L();
        let (mut lo, mut hi) = (f64::INFINITY, 0.0_f64);
        for i in 0..cols {
            lo = lo.min(l[(i, i)].abs());
            hi = hi.max(l[(i, i)].abs());
        }
        // Only an unregularized system can be singular in exact arithmetic;
        // a tiny pivot then signals rank deficiency rather than scaling.
        let well_posed = ridge > 0.0 || lo > 1e-7 * hi;
        if well_posed {
            let x = llt.solve(&rhs);
            let out: Vec<f64> = (0..cols).map(|i| x[(i, 0)]).collect();
            if out.iter().all(|v| v.is_finite()) {
                return (out, degenerate);
            }
        }
    }

    // Minimum-norm fallback through the eigendecomposition of the Gram matrix.
    for j in 0..cols {
        for i in 0..j {
            gram[(i, j)] = gram[(j, i)];
        }
    }
    let out = match gram.self_adjoint_eigen(Side::Lower) {
        Ok(eig) => {
            let u = eig.U();
            let s = eig.S().column_vector();
            let top = (0..cols).map(|i| s[i].abs()).fold(0.0, f64::max);
            let cut = top * 1e-12 * cols as f64;
            let mut x = vec![0.0; cols];
            for k in 0..cols {
                if s[k] <= cut {
                    continue;
                }
                let mut proj = 0.0;
                for i in 0..cols {
                    proj += u[(i, k)] * rhs[(i, 0)];
                }
                let c = proj / s[k];
                for i in 0..cols {
                    x[i] += c * u[(i, k)];
                }
            }
            x
        }
        Err(_) => vec![f64::NAN; cols],
    };
    (out, true)
}
