//! Dense numerical linear algebra used by every other module: symmetric
//! eigendecomposition, positive-definiteness tests, Lyapunov solves, matrix
//! exponentials with input integrals, and LU-based linear solves.
//!
//! Everything here targets small dense matrices (dimension ~20 and below),
//! so the algorithms favour robustness over asymptotic speed: cyclic Jacobi
//! for symmetric eigenproblems, partial-pivot LU for solves, and
//! scaling-and-squaring Pade for the exponential.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NumError {
    #[error("matrix is not symmetric (relative asymmetry {asymmetry:.3e})")]
    NonSymmetric { asymmetry: f64 },
    #[error("eigen iteration failed to converge after {sweeps} sweeps")]
    NoConvergence { sweeps: usize },
    #[error("matrix is not Hurwitz (estimated max real part {max_re:.3e})")]
    NotHurwitz { max_re: f64 },
    #[error("matrix is singular or numerically rank-deficient")]
    Singular,
    #[error("dimension mismatch: {context}")]
    DimensionMismatch { context: String },
    #[error("matrix entries must be finite")]
    NonFinite,
}

pub type NumResult<T> = Result<T, NumError>;

/// Dense row-major matrix of `f64`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows >= 1 && cols >= 1, "matrix dimensions must be >= 1");
        Matrix { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        assert!(!rows.is_empty());
        let cols = rows[0].len();
        assert!(rows.iter().all(|r| r.len() == cols), "ragged rows");
        let data = rows.iter().flat_map(|r| r.iter().copied()).collect();
        Matrix { rows: rows.len(), cols, data }
    }

    pub fn diag(d: &[f64]) -> Self {
        let mut m = Matrix::zeros(d.len(), d.len());
        for (i, &v) in d.iter().enumerate() {
            m[(i, i)] = v;
        }
        m
    }

    pub fn from_column(v: &[f64]) -> Self {
        Matrix { rows: v.len(), cols: 1, data: v.to_vec() }
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

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    pub fn matmul(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.cols, other.rows, "matmul dimension mismatch");
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == 0.0 {
                    continue;
                }
                let orow = other.row(k);
                let dst = &mut out.data[i * other.cols..(i + 1) * other.cols];
                for (d, &o) in dst.iter_mut().zip(orow.iter()) {
                    *d += a * o;
                }
            }
        }
        out
    }

    /// `self * v` for a dense vector.
    pub fn matvec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(self.cols, v.len(), "matvec dimension mismatch");
        (0..self.rows)
            .map(|i| self.row(i).iter().zip(v).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// `v^T * self` as a dense vector.
    pub fn vecmat(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(self.rows, v.len(), "vecmat dimension mismatch");
        let mut out = vec![0.0; self.cols];
        for i in 0..self.rows {
            let a = v[i];
            if a == 0.0 {
                continue;
            }
            for (o, &r) in out.iter_mut().zip(self.row(i)) {
                *o += a * r;
            }
        }
        out
    }

    pub fn add(&self, other: &Matrix) -> Matrix {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect();
        Matrix { rows: self.rows, cols: self.cols, data }
    }

    pub fn sub(&self, other: &Matrix) -> Matrix {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect();
        Matrix { rows: self.rows, cols: self.cols, data }
    }

    pub fn scale(&self, s: f64) -> Matrix {
        let data = self.data.iter().map(|a| a * s).collect();
        Matrix { rows: self.rows, cols: self.cols, data }
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn inf_norm(&self) -> f64 {
        (0..self.rows)
            .map(|i| self.row(i).iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    pub fn trace(&self) -> f64 {
        assert!(self.is_square());
        (0..self.rows).map(|i| self[(i, i)]).sum()
    }

    /// Quadratic form `x^T self x`.
    pub fn quad_form(&self, x: &[f64]) -> f64 {
        let mx = self.matvec(x);
        x.iter().zip(&mx).map(|(a, b)| a * b).sum()
    }

    pub fn symmetrize(&self) -> Matrix {
        assert!(self.is_square());
        let mut s = self.clone();
        for i in 0..self.rows {
            for j in (i + 1)..self.cols {
                let v = 0.5 * (self[(i, j)] + self[(j, i)]);
                s[(i, j)] = v;
                s[(j, i)] = v;
            }
        }
        s
    }

    fn asymmetry(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..self.rows {
            for j in (i + 1)..self.cols {
                worst = worst.max((self[(i, j)] - self[(j, i)]).abs());
            }
        }
        worst / (1.0 + self.frobenius_norm())
    }

    /// Horizontal concatenation `[self | other]`.
    pub fn hcat(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.rows, other.rows);
        let mut out = Matrix::zeros(self.rows, self.cols + other.cols);
        for i in 0..self.rows {
            out.data[i * out.cols..i * out.cols + self.cols].copy_from_slice(self.row(i));
            out.data[i * out.cols + self.cols..(i + 1) * out.cols].copy_from_slice(other.row(i));
        }
        out
    }

    pub fn block(&self, r0: usize, c0: usize, rows: usize, cols: usize) -> Matrix {
        assert!(r0 + rows <= self.rows && c0 + cols <= self.cols);
        let mut out = Matrix::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                out[(i, j)] = self[(r0 + i, c0 + j)];
            }
        }
        out
    }

    pub fn set_block(&mut self, r0: usize, c0: usize, b: &Matrix) {
        assert!(r0 + b.rows <= self.rows && c0 + b.cols <= self.cols);
        for i in 0..b.rows {
            for j in 0..b.cols {
                self[(r0 + i, c0 + j)] = b[(i, j)];
            }
        }
    }
}

impl std::ops::Index<(usize, usize)> for Matrix {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

/// LU factorization with partial pivoting.
pub struct Lu {
    lu: Matrix,
    perm: Vec<usize>,
}

impl Lu {
    pub fn factor(a: &Matrix) -> NumResult<Lu> {
        if !a.is_square() {
            return Err(NumError::DimensionMismatch { context: "LU of non-square matrix".into() });
        }
        let n = a.rows;
        let mut lu = a.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        let scale = a.inf_norm().max(1.0);
        for k in 0..n {
            let mut p = k;
            let mut best = lu[(k, k)].abs();
            for i in (k + 1)..n {
                let v = lu[(i, k)].abs();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            if best <= 1e-14 * scale {
                return Err(NumError::Singular);
            }
            if p != k {
                perm.swap(p, k);
                for j in 0..n {
                    let tmp = lu[(k, j)];
                    lu[(k, j)] = lu[(p, j)];
                    lu[(p, j)] = tmp;
                }
            }
            let piv = lu[(k, k)];
            for i in (k + 1)..n {
                let f = lu[(i, k)] / piv;
                lu[(i, k)] = f;
                if f != 0.0 {
                    for j in (k + 1)..n {
                        let v = lu[(k, j)];
                        lu[(i, j)] -= f * v;
                    }
                }
            }
        }
        Ok(Lu { lu, perm })
    }

    pub fn solve_vec(&self, b: &[f64]) -> Vec<f64> {
        let n = self.lu.rows;
        assert_eq!(b.len(), n);
        let mut x: Vec<f64> = self.perm.iter().map(|&p| b[p]).collect();
        for i in 1..n {
            let mut s = x[i];
            for j in 0..i {
                s -= self.lu[(i, j)] * x[j];
            }
            x[i] = s;
        }
        for i in (0..n).rev() {
            let mut s = x[i];
            for j in (i + 1)..n {
                s -= self.lu[(i, j)] * x[j];
            }
            x[i] = s / self.lu[(i, i)];
        }
        x
    }

    pub fn solve_matrix(&self, b: &Matrix) -> Matrix {
        let mut out = Matrix::zeros(b.rows(), b.cols());
        for j in 0..b.cols() {
            let col = self.solve_vec(&b.column(j));
            for i in 0..b.rows() {
                out[(i, j)] = col[i];
            }
        }
        out
    }
}

/// Solve `a x = b` for a single right-hand side.
pub fn solve(a: &Matrix, b: &[f64]) -> NumResult<Vec<f64>> {
    Ok(Lu::factor(a)?.solve_vec(b))
}

/// Dense inverse. Only sensible at the small sizes used here.
pub fn inverse(a: &Matrix) -> NumResult<Matrix> {
    let lu = Lu::factor(a)?;
    Ok(lu.solve_matrix(&Matrix::identity(a.rows())))
}

/// Symmetric eigendecomposition, eigenvalues ascending with orthonormal
/// eigenvector columns.
#[derive(Debug, Clone)]
pub struct SymEig {
    pub eigenvalues: Vec<f64>,
    pub eigenvectors: Matrix,
}

const SYM_TOL: f64 = 1e-10;
const JACOBI_MAX_SWEEPS: usize = 64;

/// Cyclic Jacobi eigendecomposition of a symmetric matrix.
pub fn sym_eig(s: &Matrix) -> NumResult<SymEig> {
    if !s.is_square() {
        return Err(NumError::DimensionMismatch { context: "sym_eig of non-square matrix".into() });
    }
    if !s.all_finite() {
        return Err(NumError::NonFinite);
    }
    let asym = s.asymmetry();
    if asym > SYM_TOL {
        return Err(NumError::NonSymmetric { asymmetry: asym });
    }
    let n = s.rows();
    let mut a = s.symmetrize();
    let mut v = Matrix::identity(n);
    let norm = a.frobenius_norm().max(1e-300);

    let mut converged = false;
    for _sweep in 0..JACOBI_MAX_SWEEPS {
        let mut off = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                off += a[(i, j)] * a[(i, j)];
            }
        }
        if off.sqrt() <= 1e-14 * norm {
            converged = true;
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[(p, q)];
                if apq.abs() <= 1e-300 {
                    continue;
                }
                let app = a[(p, p)];
                let aqq = a[(q, q)];
                let theta = (aqq - app) / (2.0 * apq);
                let t = if theta >= 0.0 {
                    1.0 / (theta + (1.0 + theta * theta).sqrt())
                } else {
                    -1.0 / (-theta + (1.0 + theta * theta).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let sn = t * c;
                // Apply the rotation to rows/columns p and q.
                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = c * akp - sn * akq;
                    a[(k, q)] = sn * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = c * apk - sn * aqk;
                    a[(q, k)] = sn * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - sn * vkq;
                    v[(k, q)] = sn * vkp + c * vkq;
                }
            }
        }
    }
    if !converged {
        // One last check: the sweep loop may have exited right at the bound.
        let mut off = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                off += a[(i, j)] * a[(i, j)];
            }
        }
        if off.sqrt() > 1e-12 * norm {
            return Err(NumError::NoConvergence { sweeps: JACOBI_MAX_SWEEPS });
        }
    }

    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&i, &j| a[(i, i)].partial_cmp(&a[(j, j)]).unwrap());
    let eigenvalues: Vec<f64> = idx.iter().map(|&i| a[(i, i)]).collect();
    let mut eigenvectors = Matrix::zeros(n, n);
    for (new_j, &old_j) in idx.iter().enumerate() {
        for i in 0..n {
            eigenvectors[(i, new_j)] = v[(i, old_j)];
        }
    }
    Ok(SymEig { eigenvalues, eigenvectors })
}

/// True iff the minimum eigenvalue of symmetric `s` exceeds `tol`.
pub fn is_pd(s: &Matrix, tol: f64) -> NumResult<bool> {
    let eig = sym_eig(s)?;
    Ok(eig.eigenvalues[0] > tol)
}

/// Largest eigenvalue of the symmetric pencil `(a, b)` with `b` positive
/// definite, i.e. max lambda with `det(a - lambda b) = 0`. Computed through
/// the Cholesky congruence `L^-1 a L^-T`.
pub fn generalized_eig_max(a: &Matrix, b: &Matrix) -> NumResult<f64> {
    let l = cholesky(b)?;
    let n = a.rows();
    // w = L^-1 a L^-T by triangular solves.
    let mut w = Matrix::zeros(n, n);
    for j in 0..n {
        // forward solve L y = a[:, j]
        let mut y = a.column(j);
        for i in 0..n {
            let mut s = y[i];
            for k in 0..i {
                s -= l[(i, k)] * y[k];
            }
            y[i] = s / l[(i, i)];
        }
        for i in 0..n {
            w[(i, j)] = y[i];
        }
    }
    let mut w2 = Matrix::zeros(n, n);
    for i in 0..n {
        let mut y = w.row(i).to_vec();
        for r in 0..n {
            let mut s = y[r];
            for k in 0..r {
                s -= l[(r, k)] * y[k];
            }
            y[r] = s / l[(r, r)];
        }
        for j in 0..n {
            w2[(i, j)] = y[j];
        }
    }
    let eig = sym_eig(&w2.symmetrize())?;
    Ok(*eig.eigenvalues.last().unwrap())
}

/// Lower Cholesky factor of a symmetric positive definite matrix.
pub fn cholesky(s: &Matrix) -> NumResult<Matrix> {
    if !s.is_square() {
        return Err(NumError::DimensionMismatch { context: "cholesky of non-square".into() });
    }
    let n = s.rows();
    let mut l = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let mut sum = s[(i, j)];
            for k in 0..j {
                sum -= l[(i, k)] * l[(j, k)];
            }
            if i == j {
                if sum <= 0.0 {
                    return Err(NumError::Singular);
                }
                l[(i, j)] = sum.sqrt();
            } else {
                l[(i, j)] = sum / l[(j, j)];
            }
        }
    }
    Ok(l)
}

/// Estimate of the spectral abscissa (max real part of eigenvalues) of a
/// general square matrix. Uses rho(exp(A)) = exp(max Re lambda), with the
/// spectral radius estimated by repeated squaring of exp(A) under norm
/// renormalization. Used only for diagnostics in NotHurwitz errors.
pub fn spectral_abscissa_estimate(a: &Matrix) -> f64 {
    let mut m = match expm(a) {
        Ok(e) => e,
        Err(_) => return f64::NAN,
    };
    // After k squarings m ~ exp(A)^(2^k) up to the accumulated scale;
    // log rho = (sum of rescale logs + log||m||) / 2^k.
    let k = 8u32;
    let mut acc = 0.0f64;
    for _ in 0..k {
        let s = m.frobenius_norm();
        if !s.is_finite() || s == 0.0 {
            return f64::NAN;
        }
        acc = 2.0 * (acc + s.ln());
        m = m.scale(1.0 / s);
        m = m.matmul(&m);
    }
    let final_norm = m.frobenius_norm().max(1e-300);
    (acc + final_norm.ln()) / 2.0f64.powi(k as i32)
}

/// Strict Hurwitz test via the Lyapunov criterion: `A` is Hurwitz iff
/// `A^T M + M A = -I` has a positive definite solution.
pub fn hurwitz_check(a: &Matrix) -> NumResult<()> {
    let n = a.rows();
    match lyapunov_raw(a, &Matrix::identity(n)) {
        Ok(m) => {
            if is_pd(&m, 0.0)? {
                Ok(())
            } else {
                Err(NumError::NotHurwitz { max_re: spectral_abscissa_estimate(a) })
            }
        }
        Err(NumError::Singular) => {
            Err(NumError::NotHurwitz { max_re: spectral_abscissa_estimate(a) })
        }
        Err(e) => Err(e),
    }
}

/// Pre-factored Kronecker operator for repeated Lyapunov solves against the
/// same `A`: solves `A^T M + M A = -Q` for many `Q`.
pub struct LyapunovSolver {
    lu: Lu,
    n: usize,
}

impl LyapunovSolver {
    pub fn new(a: &Matrix) -> NumResult<Self> {
        let n = a.rows();
        let k = lyapunov_kron(a);
        Ok(LyapunovSolver { lu: Lu::factor(&k)?, n })
    }

    pub fn solve(&self, q: &Matrix) -> Matrix {
        let n = self.n;
        let mut rhs = vec![0.0; n * n];
        for col in 0..n {
            for row in 0..n {
                rhs[col * n + row] = -q[(row, col)];
            }
        }
        let sol = self.lu.solve_vec(&rhs);
        let mut m = Matrix::zeros(n, n);
        for col in 0..n {
            for row in 0..n {
                m[(row, col)] = sol[col * n + row];
            }
        }
        m.symmetrize()
    }
}

/// Solve the adjoint equation `A W + W A^T = -P` (controllability-gramian
/// form), used for gradients of Lyapunov-parameterized certificates.
pub fn lyapunov_dual(a: &Matrix, p: &Matrix) -> NumResult<Matrix> {
    lyapunov_raw(&a.transpose(), p)
}

fn lyapunov_kron(a: &Matrix) -> Matrix {
    let n = a.rows();
    let nn = n * n;
    let mut k = Matrix::zeros(nn, nn);
    let at = a.transpose();
    for col in 0..n {
        for row in 0..n {
            for r2 in 0..n {
                k[(col * n + row, col * n + r2)] += at[(row, r2)];
            }
            for c2 in 0..n {
                k[(col * n + row, c2 * n + row)] += at[(col, c2)];
            }
        }
    }
    k
}

/// Solve `A^T M + M A = -Q` by Kronecker vectorization (no Hurwitz check).
fn lyapunov_raw(a: &Matrix, q: &Matrix) -> NumResult<Matrix> {
    let n = a.rows();
    if !a.is_square() || !q.is_square() || q.rows() != n {
        return Err(NumError::DimensionMismatch { context: "lyapunov dimensions".into() });
    }
    // vec(A^T M) = (I (x) A^T) vec(M), vec(M A) = (A^T (x) I) vec(M),
    // with vec stacking columns.
    Ok(LyapunovSolver::new(a)?.solve(q))
}

/// Solve `A^T M + M A + mu M = -Q` for a shifted-Hurwitz `A` and symmetric
/// positive definite `Q`. The shifted matrix `A + (mu/2) I` must be Hurwitz.
pub fn lyapunov_solve(a: &Matrix, q: &Matrix, mu: f64) -> NumResult<Matrix> {
    assert!(mu >= 0.0, "decay rate mu must be nonnegative");
    let n = a.rows();
    if q.rows() != n || !q.is_square() {
        return Err(NumError::DimensionMismatch { context: "lyapunov_solve Q size".into() });
    }
    let mut shifted = a.clone();
    for i in 0..n {
        shifted[(i, i)] += 0.5 * mu;
    }
    hurwitz_check(&shifted)?;
    let m = lyapunov_raw(&shifted, q)?;
    // Residual check: A^T M + M A + mu M + Q should vanish.
    let residual = a.transpose().matmul(&m).add(&m.matmul(a)).add(&m.scale(mu)).add(q);
    let tol = 1e-8 * q.frobenius_norm().max(1.0) * (1.0 + m.frobenius_norm());
    if residual.frobenius_norm() > tol {
        return Err(NumError::NoConvergence { sweeps: 0 });
    }
    Ok(m)
}

/// Dense matrix exponential by scaling and squaring with a degree-13 Pade
/// approximant.
pub fn expm(a: &Matrix) -> NumResult<Matrix> {
    if !a.is_square() {
        return Err(NumError::DimensionMismatch { context: "expm of non-square".into() });
    }
    if !a.all_finite() {
        return Err(NumError::NonFinite);
    }
    let norm = a.inf_norm();
    let theta13 = 5.371920351148152;
    let s = if norm > theta13 { (norm / theta13).log2().ceil() as i32 } else { 0 };
    let a_scaled = a.scale(0.5f64.powi(s));
    let mut e = pade13(&a_scaled);
    for _ in 0..s {
        e = e.matmul(&e);
    }
    Ok(e)
}

fn pade13(a: &Matrix) -> Matrix {
    let b = [
        64764752532480000.0,
        32382376266240000.0,
        7771770303897600.0,
        1187353796428800.0,
        129060195264000.0,
        10559470521600.0,
        670442572800.0,
        33522128640.0,
        1323241920.0,
        40840800.0,
        960960.0,
        16380.0,
        182.0,
        1.0,
    ];
    let n = a.rows();
    let ident = Matrix::identity(n);
    let a2 = a.matmul(a);
    let a4 = a2.matmul(&a2);
    let a6 = a2.matmul(&a4);
    let u_inner = a6
        .matmul(&a6.scale(b[13]).add(&a4.scale(b[11])).add(&a2.scale(b[9])))
        .add(&a6.scale(b[7]))
        .add(&a4.scale(b[5]))
        .add(&a2.scale(b[3]))
        .add(&ident.scale(b[1]));
    let u = a.matmul(&u_inner);
    let v = a6
        .matmul(&a6.scale(b[12]).add(&a4.scale(b[10])).add(&a2.scale(b[8])))
        .add(&a6.scale(b[6]))
        .add(&a4.scale(b[4]))
        .add(&a2.scale(b[2]))
        .add(&ident.scale(b[0]));
    let p = v.add(&u);
    let q = v.sub(&u);
    Lu::factor(&q).expect("Pade denominator must be invertible").solve_matrix(&p)
}

/// Exact zero-order-hold discretization: returns `(exp(A dt), int_0^dt exp(A tau) dtau * B)`
/// via the augmented-matrix exponential.
pub fn expm_with_input(a: &Matrix, b: &Matrix, dt: f64) -> NumResult<(Matrix, Matrix)> {
    assert!(dt > 0.0, "dt must be positive");
    let n = a.rows();
    if a.rows() != a.cols() || b.rows() != n {
        return Err(NumError::DimensionMismatch {
            context: format!("expm_with_input: A {}x{}, B {}x{}", a.rows(), a.cols(), b.rows(), b.cols()),
        });
    }
    let p = b.cols();
    let m = n + p;
    let mut aug = Matrix::zeros(m, m);
    for i in 0..n {
        for j in 0..n {
            aug[(i, j)] = a[(i, j)] * dt;
        }
        for j in 0..p {
            aug[(i, n + j)] = b[(i, j)] * dt;
        }
    }
    let e = expm(&aug)?;
    let ad = e.block(0, 0, n, n);
    let bd = e.block(0, n, n, p);
    Ok((ad, bd))
}

/// Euclidean norm of a slice.
pub fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
