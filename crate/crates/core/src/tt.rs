//! Tensor-train (TT) representation of order-d coefficient tensors.
//!
//! A tensor `A[i_1, ..., i_d]` is stored as the matrix product
//! `U^1[i_1] U^2[i_2] ... U^d[i_d]`, where component `U^μ` has shape
//! `r_{μ-1} × n_μ × r_μ` and the boundary ranks are `r_0 = r_d = 1`.
//!
//! # Storage and unfoldings
//!
//! Component entries `(a, i, b)` are stored column-major, i.e. at offset
//! `a + r_{μ-1} * (i + n_μ * b)`. With this layout the same buffer is, read
//! column-major,
//!
//! * the left unfolding `L(U)` of shape `(r_{μ-1} n_μ) × r_μ` with row index
//!   `a + r_{μ-1} i`, and
//! * the right unfolding `R(U)` of shape `r_{μ-1} × (n_μ r_μ)` with column
//!   index `i + n_μ b`.
//!
//! Core indices in this API are zero-based; a "d-orthogonal" train in the
//! usual one-based notation is `Orthogonality::Core(d - 1)` here. Rank tuples
//! passed to and returned from this module list the interior ranks
//! `r_1, ..., r_{d-1}` only.

use std::io::{Read, Write};

use nalgebra::DMatrix;
use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg::{qr_positive, svd_sorted};

/// One TT component, a real 3-tensor of shape `left × mode × right`.
#[derive(Clone, Debug, PartialEq)]
pub struct Core {
    left: usize,
    mode: usize,
    right: usize,
    data: Vec<f64>,
}

impl Core {
    pub fn zeros(left: usize, mode: usize, right: usize) -> Self {
        Self {
            left,
            mode,
            right,
            data: vec![0.0; left * mode * right],
        }
    }

    pub fn from_vec(left: usize, mode: usize, right: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != left * mode * right {
            return Err(Error::Shape(format!(
                "core of shape {left}x{mode}x{right} needs {} entries, got {}",
                left * mode * right,
                data.len()
            )));
        }
        Ok(Self {
            left,
            mode,
            right,
            data,
        })
    }

    /// Builds a component from its left unfolding `(left * mode) × right`.
    pub fn from_left_unfolding(left: usize, mode: usize, m: &DMatrix<f64>) -> Self {
        debug_assert_eq!(m.nrows(), left * mode);
        Self {
            left,
            mode,
            right: m.ncols(),
            data: m.as_slice().to_vec(),
        }
    }

    /// Builds a component from its right unfolding `left × (mode * right)`.
    pub fn from_right_unfolding(mode: usize, right: usize, m: &DMatrix<f64>) -> Self {
        debug_assert_eq!(m.ncols(), mode * right);
        Self {
            left: m.nrows(),
            mode,
            right,
            data: m.as_slice().to_vec(),
        }
    }

    pub fn left(&self) -> usize {
        self.left
    }

    pub fn mode(&self) -> usize {
        self.mode
    }

    pub fn right(&self) -> usize {
        self.right
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.left, self.mode, self.right)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn offset(&self, a: usize, i: usize, b: usize) -> usize {
        a + self.left * (i + self.mode * b)
    }

    #[inline]
    pub fn get(&self, a: usize, i: usize, b: usize) -> f64 {
        self.data[self.offset(a, i, b)]
    }

    #[inline]
    pub fn set(&mut self, a: usize, i: usize, b: usize, value: f64) {
        let k = self.offset(a, i, b);
        self.data[k] = value;
    }

    pub fn left_unfolding(&self) -> DMatrix<f64> {
        DMatrix::from_column_slice(self.left * self.mode, self.right, &self.data)
    }

    pub fn right_unfolding(&self) -> DMatrix<f64> {
        DMatrix::from_column_slice(self.left, self.mode * self.right, &self.data)
    }

    /// Slice `U[i]` as a `left × right` matrix.
    pub fn slice(&self, i: usize) -> DMatrix<f64> {
        DMatrix::from_fn(self.left, self.right, |a, b| self.get(a, i, b))
    }

    /// `out = vᵀ Σ_i w_i U[i]`, with `v` of length `left` and `out` of
    /// length `right`.
    #[inline]
    pub fn contract_left(&self, v: &[f64], w: &[f64], out: &mut [f64]) {
        let lm = self.left * self.mode;
        for (b, o) in out.iter_mut().enumerate() {
            let col = &self.data[lm * b..lm * (b + 1)];
            let mut acc = 0.0;
            for (i, &wi) in w.iter().enumerate() {
                let seg = &col[self.left * i..self.left * (i + 1)];
                let mut s = 0.0;
                for (x, y) in seg.iter().zip(v) {
                    s += x * y;
                }
                acc += wi * s;
            }
            *o = acc;
        }
    }

    /// `out = Σ_i w_i U[i] v`, with `v` of length `right` and `out` of
    /// length `left`.
    #[inline]
    pub fn contract_right(&self, v: &[f64], w: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        for (b, &vb) in v.iter().enumerate() {
            for (i, &wi) in w.iter().enumerate() {
                let f = vb * wi;
                if f == 0.0 {
                    continue;
                }
                let start = self.left * (i + self.mode * b);
                for (o, x) in out.iter_mut().zip(&self.data[start..start + self.left]) {
                    *o += f * x;
                }
            }
        }
    }
}

/// Which component (if any) is the non-orthogonal core of the representation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Orthogonality {
    None,
    /// Components before the index are left-orthogonal, components after it
    /// right-orthogonal.
    Core(usize),
}

/// Order-d tensor in TT format.
#[derive(Clone, Debug, PartialEq)]
pub struct TensorTrain {
    cores: Vec<Core>,
    orthogonality: Orthogonality,
}

const CHECKPOINT_MAGIC: &[u8; 4] = b"TT01";

impl TensorTrain {
    pub fn new(cores: Vec<Core>) -> Result<Self> {
        if cores.is_empty() {
            return Err(Error::Shape("tensor train needs at least one core".into()));
        }
        if cores[0].left != 1 || cores[cores.len() - 1].right != 1 {
            return Err(Error::Rank("boundary ranks must be 1".into()));
        }
        for (mu, pair) in cores.windows(2).enumerate() {
            if pair[0].right != pair[1].left {
                return Err(Error::Rank(format!(
                    "rank mismatch between cores {mu} and {}: {} vs {}",
                    mu + 1,
                    pair[0].right,
                    pair[1].left
                )));
            }
        }
        if let Some(c) = cores.iter().find(|c| c.mode == 0) {
            return Err(Error::Shape(format!("zero mode size in core {c:?}")));
        }
        Ok(Self {
            cores,
            orthogonality: Orthogonality::None,
        })
    }

    pub(crate) fn from_parts(cores: Vec<Core>, orthogonality: Orthogonality) -> Self {
        Self {
            cores,
            orthogonality,
        }
    }

    fn full_ranks_for(mode_sizes: &[usize], ranks: &[usize]) -> Result<Vec<usize>> {
        if mode_sizes.is_empty() {
            return Err(Error::Shape("order must be at least 1".into()));
        }
        if ranks.len() + 1 != mode_sizes.len() {
            return Err(Error::Rank(format!(
                "order {} needs {} interior ranks, got {}",
                mode_sizes.len(),
                mode_sizes.len() - 1,
                ranks.len()
            )));
        }
        if ranks.contains(&0) {
            return Err(Error::Rank("ranks must be positive".into()));
        }
        let mut full = Vec::with_capacity(mode_sizes.len() + 1);
        full.push(1);
        full.extend_from_slice(ranks);
        full.push(1);
        Ok(full)
    }

    pub fn zeros(mode_sizes: &[usize], ranks: &[usize]) -> Result<Self> {
        let full = Self::full_ranks_for(mode_sizes, ranks)?;
        let cores = mode_sizes
            .iter()
            .enumerate()
            .map(|(mu, &n)| Core::zeros(full[mu], n, full[mu + 1]))
            .collect();
        Self::new(cores)
    }

    /// Train with i.i.d. entries uniform on `[-1, 1)`.
    pub fn random<R: Rng + ?Sized>(mode_sizes: &[usize], ranks: &[usize], rng: &mut R) -> Result<Self> {
        let mut tt = Self::zeros(mode_sizes, ranks)?;
        for core in &mut tt.cores {
            for v in &mut core.data {
                *v = rng.gen_range(-1.0..1.0);
            }
        }
        Ok(tt)
    }

    pub fn order(&self) -> usize {
        self.cores.len()
    }

    pub fn mode_sizes(&self) -> Vec<usize> {
        self.cores.iter().map(|c| c.mode).collect()
    }

    /// Interior ranks `r_1, ..., r_{d-1}`.
    pub fn ranks(&self) -> Vec<usize> {
        self.cores[..self.cores.len() - 1]
            .iter()
            .map(|c| c.right)
            .collect()
    }

    pub fn cores(&self) -> &[Core] {
        &self.cores
    }

    pub fn core(&self, mu: usize) -> &Core {
        &self.cores[mu]
    }

    pub fn into_cores(self) -> Vec<Core> {
        self.cores
    }

    pub fn is_finite(&self) -> bool {
        self.cores.iter().all(|c| c.data.iter().all(|v| v.is_finite()))
    }

    pub fn orthogonality(&self) -> Orthogonality {
        self.orthogonality
    }

    pub fn is_last_core_orthogonal(&self) -> bool {
        self.orthogonality == Orthogonality::Core(self.order() - 1)
    }

    /// Number of stored coefficients.
    pub fn parameter_count(&self) -> usize {
        self.cores.iter().map(|c| c.data.len()).sum()
    }

    fn check_rows(&self, rows: &[&[f64]]) -> Result<()> {
        if rows.len() != self.order() {
            return Err(Error::Shape(format!(
                "expected {} basis rows, got {}",
                self.order(),
                rows.len()
            )));
        }
        for (mu, (row, core)) in rows.iter().zip(&self.cores).enumerate() {
            if row.len() != core.mode {
                return Err(Error::Shape(format!(
                    "basis row {mu} has length {}, mode size is {}",
                    row.len(),
                    core.mode
                )));
            }
        }
        Ok(())
    }

    /// `Σ A[i_1..i_d] Π_μ w_μ[i_μ]` by left-to-right rank-vector contraction.
    pub fn evaluate(&self, rows: &[&[f64]]) -> Result<f64> {
        self.check_rows(rows)?;
        Ok(self.evaluate_unchecked(rows))
    }

    pub(crate) fn evaluate_unchecked(&self, rows: &[&[f64]]) -> f64 {
        let mut v = vec![1.0];
        let mut next = Vec::new();
        for (core, w) in self.cores.iter().zip(rows) {
            next.resize(core.right, 0.0);
            core.contract_left(&v, w, &mut next);
            std::mem::swap(&mut v, &mut next);
        }
        v[0]
    }

    /// Returns a `mu`-orthogonal representation of the same tensor, computed
    /// by QR sweeps. Ranks only shrink where they exceed the size of the
    /// unfolding they live in.
    pub fn orthogonalize(&self, mu: usize) -> Result<TensorTrain> {
        let d = self.order();
        if mu >= d {
            return Err(Error::Shape(format!("core index {mu} out of range for order {d}")));
        }
        let (left_from, right_from) = match self.orthogonality {
            Orthogonality::Core(k) if k == mu => return Ok(self.clone()),
            Orthogonality::Core(k) if k < mu => (k, mu),
            Orthogonality::Core(k) => (mu, k),
            Orthogonality::None => (0, d - 1),
        };
        let mut cores = self.cores.clone();
        for k in left_from..mu {
            left_orthogonalize_step(&mut cores, k);
        }
        for k in (mu + 1..=right_from).rev() {
            right_orthogonalize_step(&mut cores, k);
        }
        Ok(Self::from_parts(cores, Orthogonality::Core(mu)))
    }

    /// Checks the orthogonality conditions of a `mu`-orthogonal
    /// representation directly and returns the largest deviation from the
    /// identity.
    pub fn orthogonality_defect(&self, mu: usize) -> f64 {
        let mut worst = 0.0_f64;
        for (k, core) in self.cores.iter().enumerate() {
            let gram = if k < mu {
                let l = core.left_unfolding();
                l.transpose() * l
            } else if k > mu {
                let r = core.right_unfolding();
                &r * r.transpose()
            } else {
                continue;
            };
            let n = gram.nrows();
            let defect = gram - DMatrix::<f64>::identity(n, n);
            worst = worst.max(crate::linalg::max_abs(&defect));
        }
        worst
    }

    /// Clamps a requested interior rank tuple to the largest ranks admitted by
    /// the mode sizes.
    pub fn clamp_ranks(mode_sizes: &[usize], target: &[usize]) -> Vec<usize> {
        let d = mode_sizes.len();
        let mut r: Vec<usize> = target.to_vec();
        let mut prev = 1usize;
        for mu in 0..d.saturating_sub(1) {
            r[mu] = r[mu].min(prev.saturating_mul(mode_sizes[mu]));
            prev = r[mu];
        }
        let mut next = 1usize;
        for mu in (0..d.saturating_sub(1)).rev() {
            r[mu] = r[mu].min(next.saturating_mul(mode_sizes[mu + 1]));
            next = r[mu];
        }
        r
    }

    /// Fixed-rank TT-SVD: right-orthogonalize, then sweep left to right
    /// keeping the leading singular triplets. The result is
    /// `(d-1)`-orthogonal with exactly the clamped target ranks.
    pub fn truncate(&self, target: &[usize]) -> Result<TensorTrain> {
        let d = self.order();
        if target.len() + 1 != d {
            return Err(Error::Rank(format!(
                "order {d} needs {} target ranks, got {}",
                d - 1,
                target.len()
            )));
        }
        if target.contains(&0) {
            return Err(Error::Rank("target ranks must be positive".into()));
        }
        if !self.is_finite() {
            return Err(Error::Numeric("cannot truncate a train with non-finite entries".into()));
        }
        let clamped = Self::clamp_ranks(&self.mode_sizes(), target);
        let mut cores = self.orthogonalize(0)?.cores;
        for mu in 0..d - 1 {
            let keep = clamped[mu];
            let core = &cores[mu];
            if core.right < keep {
                return Err(Error::Rank(format!(
                    "rank {} at position {} is below the target {keep}",
                    core.right,
                    mu + 1
                )));
            }
            let (left, mode) = (core.left, core.mode);
            let (u, s, vt) = svd_sorted(core.left_unfolding())?;
            if u.ncols() < keep {
                return Err(Error::Rank(format!(
                    "unfolding at position {} admits rank {}, target {keep}",
                    mu + 1,
                    u.ncols()
                )));
            }
            let u_keep = u.columns(0, keep).clone_owned();
            let mut sv = vt.rows(0, keep).clone_owned();
            for (k, sk) in s.iter().take(keep).enumerate() {
                sv.row_mut(k).scale_mut(*sk);
            }
            cores[mu] = Core::from_left_unfolding(left, mode, &u_keep);
            let next = &cores[mu + 1];
            let merged = sv * next.right_unfolding();
            cores[mu + 1] = Core::from_right_unfolding(next.mode, next.right, &merged);
        }
        Ok(Self::from_parts(cores, Orthogonality::Core(d - 1)))
    }

    /// Embeds the train into larger interior ranks by zero padding.
    pub fn pad_ranks(&self, target: &[usize]) -> Result<TensorTrain> {
        let d = self.order();
        let mut full = Self::full_ranks_for(&self.mode_sizes(), target)?;
        let current = self.ranks();
        for (mu, (&t, &c)) in target.iter().zip(&current).enumerate() {
            if t < c {
                return Err(Error::Rank(format!(
                    "cannot pad rank {c} down to {t} at position {}",
                    mu + 1
                )));
            }
        }
        full[0] = 1;
        full[d] = 1;
        let cores = self
            .cores
            .iter()
            .enumerate()
            .map(|(mu, c)| {
                let mut out = Core::zeros(full[mu], c.mode, full[mu + 1]);
                for b in 0..c.right {
                    for i in 0..c.mode {
                        for a in 0..c.left {
                            out.set(a, i, b, c.get(a, i, b));
                        }
                    }
                }
                out
            })
            .collect();
        Self::new(cores)
    }

    fn check_same_modes(&self, other: &TensorTrain) -> Result<()> {
        if self.mode_sizes() != other.mode_sizes() {
            return Err(Error::Shape(format!(
                "mode sizes differ: {:?} vs {:?}",
                self.mode_sizes(),
                other.mode_sizes()
            )));
        }
        Ok(())
    }

    /// Frobenius inner product of the represented tensors.
    pub fn dot(&self, other: &TensorTrain) -> Result<f64> {
        self.check_same_modes(other)?;
        // e has shape (rank of self) × (rank of other), stored column-major
        let mut e = vec![1.0];
        let (mut ra, mut rb) = (1usize, 1usize);
        for (ca, cb) in self.cores.iter().zip(&other.cores) {
            let (na, nb) = (ca.right, cb.right);
            let mut next = vec![0.0; na * nb];
            for i in 0..ca.mode {
                // tmp = e * B[i]  (ra × nb)
                let mut tmp = vec![0.0; ra * nb];
                for b in 0..nb {
                    for c in 0..rb {
                        let w = cb.get(c, i, b);
                        if w == 0.0 {
                            continue;
                        }
                        for a in 0..ra {
                            tmp[a + ra * b] += e[a + ra * c] * w;
                        }
                    }
                }
                // next += A[i]ᵀ tmp
                for b in 0..nb {
                    for a2 in 0..na {
                        let mut s = 0.0;
                        for a in 0..ra {
                            s += ca.get(a, i, a2) * tmp[a + ra * b];
                        }
                        next[a2 + na * b] += s;
                    }
                }
            }
            e = next;
            ra = na;
            rb = nb;
        }
        Ok(e[0])
    }

    pub fn norm(&self) -> f64 {
        match self.orthogonality {
            Orthogonality::Core(mu) => self.cores[mu]
                .data
                .iter()
                .map(|v| v * v)
                .sum::<f64>()
                .sqrt(),
            Orthogonality::None => self.dot(self).map(|v| v.max(0.0).sqrt()).unwrap_or(f64::NAN),
        }
    }

    /// Representation of `self + other` with block-diagonal components.
    pub fn add(&self, other: &TensorTrain) -> Result<TensorTrain> {
        self.check_same_modes(other)?;
        let d = self.order();
        if d == 1 {
            let mut c = self.cores[0].clone();
            for (x, y) in c.data.iter_mut().zip(&other.cores[0].data) {
                *x += y;
            }
            return Self::new(vec![c]);
        }
        let cores = self
            .cores
            .iter()
            .zip(&other.cores)
            .enumerate()
            .map(|(mu, (ca, cb))| {
                let left = if mu == 0 { 1 } else { ca.left + cb.left };
                let right = if mu == d - 1 { 1 } else { ca.right + cb.right };
                let (la, ra) = (if mu == 0 { 0 } else { ca.left }, if mu == d - 1 { 0 } else { ca.right });
                let mut out = Core::zeros(left, ca.mode, right);
                for i in 0..ca.mode {
                    for b in 0..ca.right {
                        for a in 0..ca.left {
                            out.set(a, i, b, ca.get(a, i, b));
                        }
                    }
                    for b in 0..cb.right {
                        for a in 0..cb.left {
                            out.set(a + la, i, b + ra, cb.get(a, i, b));
                        }
                    }
                }
                out
            })
            .collect();
        Self::new(cores)
    }

    /// Multiplies the represented tensor by `s` (applied to the orthogonality
    /// core, so the tag survives).
    pub fn scaled(&self, s: f64) -> TensorTrain {
        let mut out = self.clone();
        let mu = match self.orthogonality {
            Orthogonality::Core(mu) => mu,
            Orthogonality::None => 0,
        };
        out.cores[mu].data.iter_mut().for_each(|v| *v *= s);
        out
    }

    /// Writes the binary checkpoint block: magic `TT01`, order (u32), mode
    /// sizes, boundary-inclusive ranks, then every component's entries as
    /// little-endian f64 in storage order.
    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&(self.order() as u32).to_le_bytes())?;
        for c in &self.cores {
            w.write_all(&(c.mode as u32).to_le_bytes())?;
        }
        w.write_all(&1u32.to_le_bytes())?;
        for c in &self.cores {
            w.write_all(&(c.right as u32).to_le_bytes())?;
        }
        for c in &self.cores {
            for v in &c.data {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<TensorTrain> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(Error::Format(format!("bad tensor-train magic {magic:?}")));
        }
        let d = read_u32(r)? as usize;
        if d == 0 {
            return Err(Error::Format("order 0".into()));
        }
        let modes = (0..d).map(|_| read_u32(r).map(|v| v as usize)).collect::<Result<Vec<_>>>()?;
        let ranks = (0..=d).map(|_| read_u32(r).map(|v| v as usize)).collect::<Result<Vec<_>>>()?;
        if ranks[0] != 1 || ranks[d] != 1 {
            return Err(Error::Format(format!("boundary ranks {ranks:?}")));
        }
        let mut cores = Vec::with_capacity(d);
        for mu in 0..d {
            let len = ranks[mu] * modes[mu] * ranks[mu + 1];
            let mut buf = vec![0u8; 8 * len];
            r.read_exact(&mut buf)?;
            let data = buf
                .chunks_exact(8)
                .map(|b| f64::from_le_bytes(b.try_into().expect("chunk of 8")))
                .collect();
            cores.push(Core::from_vec(ranks[mu], modes[mu], ranks[mu + 1], data)?);
        }
        TensorTrain::new(cores).map_err(|e| Error::Format(e.to_string()))
    }
}

pub(crate) fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn left_orthogonalize_step(cores: &mut [Core], k: usize) {
    let (left, mode) = (cores[k].left, cores[k].mode);
    let (q, r) = qr_positive(cores[k].left_unfolding());
    cores[k] = Core::from_left_unfolding(left, mode, &q);
    let next = &cores[k + 1];
    let merged = r * next.right_unfolding();
    cores[k + 1] = Core::from_right_unfolding(next.mode, next.right, &merged);
}

fn right_orthogonalize_step(cores: &mut [Core], k: usize) {
    let (mode, right) = (cores[k].mode, cores[k].right);
    let (q, r) = qr_positive(cores[k].right_unfolding().transpose());
    cores[k] = Core::from_right_unfolding(mode, right, &q.transpose());
    let prev = &cores[k - 1];
    let merged = prev.left_unfolding() * r.transpose();
    cores[k - 1] = Core::from_left_unfolding(prev.left, prev.mode, &merged);
}

/// Dimension of the tangent space of the fixed-rank manifold,
/// `Σ_μ r_{μ-1} n_μ r_μ - Σ_{μ<d} r_μ²`.
pub fn tangent_dim(mode_sizes: &[usize], ranks: &[usize]) -> Result<usize> {
    let full = TensorTrain::full_ranks_for(mode_sizes, ranks)?;
    let total: usize = mode_sizes
        .iter()
        .enumerate()
        .map(|(mu, &n)| full[mu] * n * full[mu + 1])
        .sum();
    let gauge: usize = ranks.iter().map(|r| r * r).sum();
    Ok(total - gauge)
}

/// First-order variation `(W^1, ..., W^d)` of a `(d-1)`-orthogonal train,
/// representing `Σ_μ U^1 ⋯ U^{μ-1} W^μ U^{μ+1} ⋯ U^d`.
#[derive(Clone, Debug)]
pub struct TangentVector {
    reference: TensorTrain,
    deltas: Vec<Core>,
}

impl TangentVector {
    pub fn new(reference: TensorTrain, deltas: Vec<Core>) -> Result<Self> {
        if !reference.is_last_core_orthogonal() {
            return Err(Error::State(
                "tangent vectors need a reference orthogonalized at its last core".into(),
            ));
        }
        if deltas.len() != reference.order() {
            return Err(Error::Shape(format!(
                "{} deltas for a train of order {}",
                deltas.len(),
                reference.order()
            )));
        }
        for (mu, (w, u)) in deltas.iter().zip(reference.cores()).enumerate() {
            if w.shape() != u.shape() {
                return Err(Error::Shape(format!(
                    "delta {mu} has shape {:?}, component has {:?}",
                    w.shape(),
                    u.shape()
                )));
            }
        }
        Ok(Self { reference, deltas })
    }

    pub fn reference(&self) -> &TensorTrain {
        &self.reference
    }

    pub fn deltas(&self) -> &[Core] {
        &self.deltas
    }

    /// Largest entry of `L(U^μ)ᵀ L(W^μ)` over the gauged components.
    pub fn gauge_residual(&self) -> f64 {
        let d = self.deltas.len();
        self.deltas[..d - 1]
            .iter()
            .zip(self.reference.cores())
            .map(|(w, u)| {
                let m = u.left_unfolding().transpose() * w.left_unfolding();
                crate::linalg::max_abs(&m)
            })
            .fold(0.0, f64::max)
    }

    /// `U + step·δU` as an explicit train of rank `2r` built from the block
    /// components `[step·W¹ U¹]`, `[[Uᵘ, 0], [step·Wᵘ, Uᵘ]]`,
    /// `[[Uᵈ], [Uᵈ + step·Wᵈ]]`.
    pub fn tangent_add(&self, step: f64) -> TensorTrain {
        let us = self.reference.cores();
        let d = us.len();
        if d == 1 {
            let mut c = us[0].clone();
            for (x, w) in c.data.iter_mut().zip(&self.deltas[0].data) {
                *x += step * w;
            }
            return TensorTrain::from_parts(vec![c], Orthogonality::None);
        }
        let mut cores = Vec::with_capacity(d);
        for (mu, (u, w)) in us.iter().zip(&self.deltas).enumerate() {
            let (rl, n, rr) = u.shape();
            let core = if mu == 0 {
                let mut c = Core::zeros(1, n, 2 * rr);
                for i in 0..n {
                    for b in 0..rr {
                        c.set(0, i, b, step * w.get(0, i, b));
                        c.set(0, i, b + rr, u.get(0, i, b));
                    }
                }
                c
            } else if mu == d - 1 {
                let mut c = Core::zeros(2 * rl, n, 1);
                for i in 0..n {
                    for a in 0..rl {
                        c.set(a, i, 0, u.get(a, i, 0));
                        c.set(a + rl, i, 0, u.get(a, i, 0) + step * w.get(a, i, 0));
                    }
                }
                c
            } else {
                let mut c = Core::zeros(2 * rl, n, 2 * rr);
                for i in 0..n {
                    for b in 0..rr {
                        for a in 0..rl {
                            let uv = u.get(a, i, b);
                            c.set(a, i, b, uv);
                            c.set(a + rl, i, b, step * w.get(a, i, b));
                            c.set(a + rl, i, b + rr, uv);
                        }
                    }
                }
                c
            };
            cores.push(core);
        }
        TensorTrain::from_parts(cores, Orthogonality::None)
    }
}
