//! Dense real linear algebra sized for small bond dimensions.
//!
//! Everything here is row-major `f64`. The heavier entry points are the
//! closure solver, which materializes a CP map as a `D² × D²` matrix and
//! factors `I - E` by partial-pivot LU, and the power iteration used to
//! bound the spectral radius of such maps.

use std::ops::{Deref, Index, IndexMut};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, UmpsError};

/// Condition estimates above this reject a closure solve.
pub const MAX_CONDITION: f64 = 1e12;

/// Chains shorter than this are reduced on the calling thread.
const PAR_THRESHOLD: usize = 64;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(dim: usize) -> Self {
        let mut m = Matrix::zeros(dim, dim);
        for i in 0..dim {
            m.data[i * dim + i] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(UmpsError::Dim(format!(
                "{} entries cannot fill a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    /// Builds a matrix from nested rows; panics on ragged input.
    pub fn from_rows(rows: &[&[f64]]) -> Self {
        let cols = rows.first().map_or(0, |r| r.len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.len(), cols, "ragged rows");
            data.extend_from_slice(r);
        }
        Matrix {
            rows: rows.len(),
            cols,
            data,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        out
    }

    pub fn trace(&self) -> f64 {
        (0..self.rows.min(self.cols))
            .map(|i| self.data[i * self.cols + i])
            .sum()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    pub fn scale(&mut self, s: f64) {
        self.data.iter_mut().for_each(|x| *x *= s);
    }

    pub fn scaled(&self, s: f64) -> Matrix {
        let mut out = self.clone();
        out.scale(s);
        out
    }

    /// `self += s * other`
    pub fn add_scaled(&mut self, other: &Matrix, s: f64) {
        debug_assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        self.data
            .iter_mut()
            .zip(&other.data)
            .for_each(|(a, b)| *a += s * b);
    }

    /// Replaces the matrix by `(M + Mᵀ) / 2`.
    pub fn symmetrize(&mut self) {
        let n = self.rows;
        debug_assert!(self.is_square());
        for i in 0..n {
            for j in (i + 1)..n {
                let avg = 0.5 * (self.data[i * n + j] + self.data[j * n + i]);
                self.data[i * n + j] = avg;
                self.data[j * n + i] = avg;
            }
        }
    }

    /// Standard product `self · other`.
    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(UmpsError::Dim(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        Ok(self.mul_unchecked(other))
    }

    pub(crate) fn mul_unchecked(&self, other: &Matrix) -> Matrix {
        let (n, k, m) = (self.rows, self.cols, other.cols);
        let mut out = Matrix::zeros(n, m);
        for i in 0..n {
            let orow = &mut out.data[i * m..(i + 1) * m];
            for p in 0..k {
                let a = self.data[i * k + p];
                if a == 0.0 {
                    continue;
                }
                let brow = &other.data[p * m..(p + 1) * m];
                for (o, b) in orow.iter_mut().zip(brow) {
                    *o += a * b;
                }
            }
        }
        out
    }

    /// `self · otherᵀ`
    pub(crate) fn mul_transb(&self, other: &Matrix) -> Matrix {
        let (n, k, m) = (self.rows, self.cols, other.rows);
        debug_assert_eq!(k, other.cols);
        let mut out = Matrix::zeros(n, m);
        for i in 0..n {
            let arow = &self.data[i * k..(i + 1) * k];
            for j in 0..m {
                let brow = &other.data[j * k..(j + 1) * k];
                out.data[i * m + j] = dot(arow, brow);
            }
        }
        out
    }

    /// `selfᵀ · other`
    pub(crate) fn transa_mul(&self, other: &Matrix) -> Matrix {
        let (k, n, m) = (self.rows, self.cols, other.cols);
        debug_assert_eq!(k, other.rows);
        let mut out = Matrix::zeros(n, m);
        for p in 0..k {
            let brow = &other.data[p * m..(p + 1) * m];
            for i in 0..n {
                let a = self.data[p * n + i];
                if a == 0.0 {
                    continue;
                }
                let orow = &mut out.data[i * m..(i + 1) * m];
                for (o, b) in orow.iter_mut().zip(brow) {
                    *o += a * b;
                }
            }
        }
        out
    }

    /// `self · v`
    pub fn matvec(&self, v: &[f64]) -> Vec<f64> {
        debug_assert_eq!(self.cols, v.len());
        (0..self.rows).map(|i| dot(self.row(i), v)).collect()
    }

    /// `vᵀ · self`
    pub fn vecmat(&self, v: &[f64]) -> Vec<f64> {
        debug_assert_eq!(self.rows, v.len());
        let mut out = vec![0.0; self.cols];
        for (i, &vi) in v.iter().enumerate() {
            for (o, a) in out.iter_mut().zip(self.row(i)) {
                *o += vi * a;
            }
        }
        out
    }

    /// `a · q · aᵀ`, the single Kraus term of a right transfer map.
    pub(crate) fn kraus_right(a: &Matrix, q: &Matrix) -> Matrix {
        a.mul_unchecked(q).mul_transb(a)
    }

    /// `aᵀ · q · a`, the single Kraus term of a left transfer map.
    pub(crate) fn kraus_left(a: &Matrix, q: &Matrix) -> Matrix {
        a.transa_mul(&q.mul_unchecked(a))
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

/// A real vector, used for the boundary conditions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Vector(Vec<f64>);

impl Vector {
    pub fn new(v: Vec<f64>) -> Self {
        Vector(v)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn norm(&self) -> f64 {
        norm(&self.0)
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

impl Deref for Vector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl From<Vec<f64>> for Vector {
    fn from(v: Vec<f64>) -> Self {
        Vector(v)
    }
}

/// A symmetric positive-semidefinite matrix, the latent state carried by
/// transfer operators.
///
/// The wrapper does not re-verify positivity on every operation; values built
/// through the CP maps stay PSD up to rounding and are re-symmetrized after
/// each step. [`PsdMatrix::check`] tests the invariant explicitly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PsdMatrix(Matrix);

impl PsdMatrix {
    /// Wraps a square matrix, symmetrizing it.
    pub fn new(mut m: Matrix) -> Result<Self> {
        if !m.is_square() {
            return Err(UmpsError::Dim(format!(
                "PSD matrix must be square, got {}x{}",
                m.rows, m.cols
            )));
        }
        m.symmetrize();
        Ok(PsdMatrix(m))
    }

    pub(crate) fn from_symmetric(mut m: Matrix) -> Self {
        m.symmetrize();
        PsdMatrix(m)
    }

    pub fn identity(dim: usize) -> Self {
        PsdMatrix(Matrix::identity(dim))
    }

    pub fn zeros(dim: usize) -> Self {
        PsdMatrix(Matrix::zeros(dim, dim))
    }

    pub fn dim(&self) -> usize {
        self.0.rows
    }

    pub fn trace(&self) -> f64 {
        self.0.trace()
    }

    pub fn matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn into_matrix(self) -> Matrix {
        self.0
    }

    /// Rescales to unit trace and returns the natural log of the factor
    /// removed. A zero matrix is left untouched and reports `-inf`.
    pub fn normalize_trace(&mut self) -> f64 {
        let t = self.trace();
        if t > 0.0 && t.is_finite() {
            self.0.scale(1.0 / t);
            t.ln()
        } else {
            f64::NEG_INFINITY
        }
    }

    /// Checks symmetry to `1e-12` relative and `λ_min ≥ -1e-10 · trace`.
    ///
    /// The smallest eigenvalue is bounded with a Cholesky attempt on
    /// `Q + shift·I`, which is cheap and needs no eigensolver.
    pub fn check(&self) -> bool {
        let n = self.dim();
        let scale = self.0.max_abs().max(f64::MIN_POSITIVE);
        for i in 0..n {
            for j in (i + 1)..n {
                if (self.0[(i, j)] - self.0[(j, i)]).abs() > 1e-12 * scale {
                    return false;
                }
            }
        }
        let shift = 1e-10 * self.trace().abs().max(f64::MIN_POSITIVE);
        let mut shifted = self.0.clone();
        for i in 0..n {
            shifted[(i, i)] += shift;
        }
        cholesky_ok(&shifted)
    }
}

fn cholesky_ok(m: &Matrix) -> bool {
    let n = m.rows;
    let mut l = vec![0.0; n * n];
    for j in 0..n {
        let mut d = m[(j, j)];
        for k in 0..j {
            d -= l[j * n + k] * l[j * n + k];
        }
        if d < 0.0 {
            return false;
        }
        let d = d.sqrt();
        l[j * n + j] = d;
        for i in (j + 1)..n {
            let mut s = m[(i, j)];
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            l[i * n + j] = if d > 0.0 { s / d } else { 0.0 };
        }
    }
    true
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ChainMode {
    Sequential,
    Parallel,
}

/// Ordered product of a chain of equally sized square matrices.
///
/// `Parallel` mode multiplies nearest-neighbour pairs `(1,2), (3,4), …` in
/// `⌈log₂ n⌉` rounds, carrying an odd trailing element into the next round.
pub fn chain_reduce(mats: &[Matrix], mode: ChainMode) -> Result<Matrix> {
    let first = mats.first().ok_or(UmpsError::EmptyChain)?;
    let dim = first.rows;
    for m in mats {
        if m.rows != dim || m.cols != dim {
            return Err(UmpsError::Dim(format!(
                "chain expects {dim}x{dim} matrices, found {}x{}",
                m.rows, m.cols
            )));
        }
    }
    match mode {
        ChainMode::Sequential => {
            let mut acc = first.clone();
            for m in &mats[1..] {
                acc = acc.mul_unchecked(m);
            }
            Ok(acc)
        }
        ChainMode::Parallel => {
            let mut level: Vec<Matrix> = pair_round(mats);
            while level.len() > 1 {
                level = pair_round(&level);
            }
            Ok(level.pop().expect("non-empty chain"))
        }
    }
}

fn pair_round(mats: &[Matrix]) -> Vec<Matrix> {
    if mats.len() == 1 {
        return vec![mats[0].clone()];
    }
    let pair = |c: &[Matrix]| match c {
        [a, b] => a.mul_unchecked(b),
        [a] => a.clone(),
        _ => unreachable!(),
    };
    if mats.len() >= PAR_THRESHOLD {
        mats.par_chunks(2).map(pair).collect()
    } else {
        mats.chunks(2).map(pair).collect()
    }
}

/// `Tr(a · b)` for two symmetric matrices of the same size.
pub fn trace_product(a: &PsdMatrix, b: &PsdMatrix) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(UmpsError::Dim(format!(
            "trace product of {} and {} dimensional states",
            a.dim(),
            b.dim()
        )));
    }
    Ok(trace_of_product(&a.0, &b.0))
}

/// `Tr(a · b)` for arbitrary square matrices of equal size.
pub(crate) fn trace_of_product(a: &Matrix, b: &Matrix) -> f64 {
    let n = a.rows;
    let mut t = 0.0;
    for i in 0..n {
        for j in 0..n {
            t += a.data[i * n + j] * b.data[j * n + i];
        }
    }
    t
}

/// Rank-one PSD matrix `v vᵀ`.
pub fn outer(v: &[f64]) -> PsdMatrix {
    let n = v.len();
    let mut m = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            m.data[i * n + j] = v[i] * v[j];
        }
    }
    PsdMatrix(m)
}

/// A linear map acting on `D × D` matrices.
pub trait LinearMap {
    fn dim(&self) -> usize;
    fn apply(&self, q: &Matrix) -> Matrix;
}

/// Adapts a closure to [`LinearMap`].
pub struct FnMap<F> {
    dim: usize,
    f: F,
}

impl<F: Fn(&Matrix) -> Matrix> FnMap<F> {
    pub fn new(dim: usize, f: F) -> Self {
        FnMap { dim, f }
    }
}

impl<F: Fn(&Matrix) -> Matrix> LinearMap for FnMap<F> {
    fn dim(&self) -> usize {
        self.dim
    }
    fn apply(&self, q: &Matrix) -> Matrix {
        (self.f)(q)
    }
}

/// A CP map given by explicit Kraus operators, `Q ↦ Σᵢ Aᵢ Q Aᵢᵀ`.
#[derive(Clone, Debug)]
pub struct KrausMap {
    ops: Vec<Matrix>,
}

impl KrausMap {
    pub fn new(ops: Vec<Matrix>) -> Result<Self> {
        let dim = ops.first().ok_or(UmpsError::EmptyChain)?.rows;
        if ops.iter().any(|a| a.rows != dim || a.cols != dim) {
            return Err(UmpsError::Dim("Kraus operators must share one square shape".into()));
        }
        Ok(KrausMap { ops })
    }

    pub fn ops(&self) -> &[Matrix] {
        &self.ops
    }

    /// The adjoint map `Q ↦ Σᵢ Aᵢᵀ Q Aᵢ`.
    pub fn adjoint(&self) -> KrausMap {
        KrausMap {
            ops: self.ops.iter().map(Matrix::transpose).collect(),
        }
    }
}

impl LinearMap for KrausMap {
    fn dim(&self) -> usize {
        self.ops[0].rows
    }
    fn apply(&self, q: &Matrix) -> Matrix {
        let n = self.dim();
        let mut out = Matrix::zeros(n, n);
        for a in &self.ops {
            out.add_scaled(&Matrix::kraus_right(a, q), 1.0);
        }
        out
    }
}

/// Materializes a map as the `D² × D²` matrix acting on row-major `vec(Q)`.
pub fn map_matrix(op: &dyn LinearMap) -> Matrix {
    let d = op.dim();
    let n = d * d;
    let mut out = Matrix::zeros(n, n);
    let mut basis = Matrix::zeros(d, d);
    for col in 0..n {
        basis.data[col] = 1.0;
        let image = op.apply(&basis);
        basis.data[col] = 0.0;
        for (row, v) in image.data.iter().enumerate() {
            out.data[row * n + col] = *v;
        }
    }
    out
}

/// Partial-pivot LU factorization of a dense square matrix.
#[derive(Clone, Debug)]
pub struct Lu {
    n: usize,
    lu: Vec<f64>,
    perm: Vec<usize>,
    singular: bool,
}

impl Lu {
    pub fn factor(m: &Matrix) -> Lu {
        let n = m.rows;
        let mut lu = m.data.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        let mut singular = false;
        let scale = m.max_abs().max(f64::MIN_POSITIVE);
        for k in 0..n {
            let (p, pmax) = (k..n)
                .map(|i| (i, lu[i * n + k].abs()))
                .fold((k, -1.0), |best, c| if c.1 > best.1 { c } else { best });
            if pmax <= f64::EPSILON * scale * 1e-4 {
                singular = true;
                continue;
            }
            if p != k {
                for j in 0..n {
                    lu.swap(k * n + j, p * n + j);
                }
                perm.swap(k, p);
            }
            let pivot = lu[k * n + k];
            for i in (k + 1)..n {
                let f = lu[i * n + k] / pivot;
                lu[i * n + k] = f;
                if f != 0.0 {
                    let (top, bottom) = lu.split_at_mut(i * n);
                    let krow = &top[k * n + k + 1..k * n + n];
                    let irow = &mut bottom[k + 1..n];
                    for (x, y) in irow.iter_mut().zip(krow) {
                        *x -= f * y;
                    }
                }
            }
        }
        Lu {
            n,
            lu,
            perm,
            singular,
        }
    }

    pub fn is_singular(&self) -> bool {
        self.singular
    }

    /// Solves `A x = b`.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut x: Vec<f64> = self.perm.iter().map(|&p| b[p]).collect();
        for i in 0..n {
            let s = dot(&self.lu[i * n..i * n + i], &x[..i]);
            x[i] -= s;
        }
        for i in (0..n).rev() {
            let s = dot(&self.lu[i * n + i + 1..(i + 1) * n], &x[i + 1..]);
            x[i] = (x[i] - s) / self.lu[i * n + i];
        }
        x
    }

    /// Solves `Aᵀ x = b`.
    pub fn solve_transpose(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        // Uᵀ z = b
        let mut z = b.to_vec();
        for i in 0..n {
            let mut s = z[i];
            for k in 0..i {
                s -= self.lu[k * n + i] * z[k];
            }
            z[i] = s / self.lu[i * n + i];
        }
        // Lᵀ y = z
        for i in (0..n).rev() {
            let mut s = z[i];
            for k in (i + 1)..n {
                s -= self.lu[k * n + i] * z[k];
            }
            z[i] = s;
        }
        let mut x = vec![0.0; n];
        for (i, &p) in self.perm.iter().enumerate() {
            x[p] = z[i];
        }
        x
    }

    /// Hager–Higham estimate of `‖A⁻¹‖₁`.
    fn inverse_norm1_estimate(&self) -> f64 {
        let n = self.n;
        let mut x = vec![1.0 / n as f64; n];
        let mut est = 0.0;
        for _ in 0..5 {
            let y = self.solve(&x);
            let new_est: f64 = y.iter().map(|v| v.abs()).sum();
            let xi: Vec<f64> = y.iter().map(|v| if *v >= 0.0 { 1.0 } else { -1.0 }).collect();
            let z = self.solve_transpose(&xi);
            let (jmax, zmax) = z
                .iter()
                .enumerate()
                .fold((0, 0.0), |b, (j, v)| if v.abs() > b.1 { (j, v.abs()) } else { b });
            if new_est <= est || zmax <= dot(&z, &x) {
                est = est.max(new_est);
                break;
            }
            est = new_est;
            x = vec![0.0; n];
            x[jmax] = 1.0;
        }
        est
    }
}

fn norm1(m: &Matrix) -> f64 {
    (0..m.cols)
        .map(|j| (0..m.rows).map(|i| m[(i, j)].abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Factored `I - E` for a CP map `E`, reusable across right-hand sides.
#[derive(Clone, Debug)]
pub struct ClosureSolver {
    dim: usize,
    lu: Lu,
    condition: f64,
}

impl ClosureSolver {
    /// Materializes and factors `I - E`.
    pub fn new(op: &dyn LinearMap) -> Result<Self> {
        Self::from_map_matrix(map_matrix(op))
    }

    /// Factors `I - E` given the dense `D² × D²` matrix of `E`.
    pub fn from_map_matrix(mut system: Matrix) -> Result<Self> {
        let n = system.rows;
        let dim = (n as f64).sqrt().round() as usize;
        if dim * dim != n || !system.is_square() {
            return Err(UmpsError::Dim(format!(
                "{}x{} is not the matrix of a map on square matrices",
                system.rows, system.cols
            )));
        }
        system.scale(-1.0);
        for i in 0..n {
            system[(i, i)] += 1.0;
        }
        let lu = Lu::factor(&system);
        if lu.is_singular() {
            return Err(UmpsError::IllConditioned {
                cond: f64::INFINITY,
            });
        }
        let condition = norm1(&system) * lu.inverse_norm1_estimate();
        if !(condition <= MAX_CONDITION) {
            return Err(UmpsError::IllConditioned { cond: condition });
        }
        Ok(ClosureSolver { dim, lu, condition })
    }

    pub fn condition(&self) -> f64 {
        self.condition
    }

    /// Solves `(I - E) X = rhs`; the result is symmetrized.
    pub fn solve(&self, rhs: &Matrix) -> Matrix {
        let mut x = self.solve_raw(rhs);
        x.symmetrize();
        x
    }

    /// Solves `(I - E) X = rhs` without symmetrizing, valid for any `rhs`.
    pub fn solve_raw(&self, rhs: &Matrix) -> Matrix {
        debug_assert_eq!(rhs.rows, self.dim);
        let x = self.lu.solve(&rhs.data);
        Matrix {
            rows: self.dim,
            cols: self.dim,
            data: x,
        }
    }

    /// Solves the adjoint system `(I - E)ᵀ X = rhs` in the `vec` sense.
    pub fn solve_adjoint_raw(&self, rhs: &Matrix) -> Matrix {
        let x = self.lu.solve_transpose(&rhs.data);
        Matrix {
            rows: self.dim,
            cols: self.dim,
            data: x,
        }
    }
}

/// Solves `(I - E) Q* = rhs` for the CP map `op`.
pub fn solve_linear(op: &dyn LinearMap, rhs: &PsdMatrix) -> Result<PsdMatrix> {
    if rhs.dim() != op.dim() {
        return Err(UmpsError::Dim(format!(
            "right-hand side is {}-dimensional, map acts on {}",
            rhs.dim(),
            op.dim()
        )));
    }
    let solver = ClosureSolver::new(op)?;
    Ok(PsdMatrix(solver.solve(rhs.matrix())))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectralEstimate {
    pub rho: f64,
    pub converged: bool,
    pub iterations: usize,
}

/// Power iteration from the identity for the dominant eigenvalue magnitude.
///
/// Starting at `I`, which lies inside the PSD cone, guarantees overlap with the
/// Perron eigenvector of any CP map. Convergence means two consecutive
/// estimates agree to relative `tol`.
pub fn power_spectral_radius(op: &dyn LinearMap, max_iter: usize, tol: f64) -> SpectralEstimate {
    let r: Result<_> = power_iterate(op.dim(), |x| Ok(op.apply(x)), max_iter, tol);
    r.expect("infallible map")
}

/// [`power_spectral_radius`] for a map whose evaluation can fail.
pub(crate) fn power_iterate<E>(
    dim: usize,
    mut apply: impl FnMut(&Matrix) -> std::result::Result<Matrix, E>,
    max_iter: usize,
    tol: f64,
) -> std::result::Result<SpectralEstimate, E> {
    let mut x = Matrix::identity(dim);
    x.scale(1.0 / (dim as f64).sqrt());
    let mut prev = f64::NAN;
    let mut streak = 0;
    let mut est = 0.0;
    for it in 1..=max_iter.max(1) {
        let mut y = apply(&x)?;
        let n = y.frobenius_norm();
        if n == 0.0 || !n.is_finite() {
            return Ok(SpectralEstimate {
                rho: if n == 0.0 { 0.0 } else { f64::INFINITY },
                converged: n == 0.0,
                iterations: it,
            });
        }
        est = n;
        y.scale(1.0 / n);
        x = y;
        if (est - prev).abs() <= tol * est {
            streak += 1;
            if streak >= 2 {
                return Ok(SpectralEstimate {
                    rho: est,
                    converged: true,
                    iterations: it,
                });
            }
        } else {
            streak = 0;
        }
        prev = est;
    }
    Ok(SpectralEstimate {
        rho: est,
        converged: false,
        iterations: max_iter,
    })
}
