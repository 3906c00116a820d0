//! Dense symmetric eigenstructure, inertia, and continuous-time Riccati and
//! Lyapunov kernels.
//!
//! Everything here is domain-agnostic. Matrices are small (a handful of
//! states per plant plus one copy state per nonlinearity), so the solvers
//! favour robustness and determinism over asymptotic cost.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use thiserror::Error;

/// Relative asymmetry tolerated on entry to the symmetric routines.
pub const SYMMETRY_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LinalgError {
    #[error("matrix is not square ({rows}x{cols})")]
    NonSquare { rows: usize, cols: usize },
    #[error("matrix is not symmetric (relative asymmetry {asymmetry:.3e})")]
    NotSymmetric { asymmetry: f64 },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("no stabilizing solution: {0}")]
    NoStabilizingSolution(String),
    #[error("matrix is not Hurwitz (largest real part {max_real:.3e})")]
    NotHurwitz { max_real: f64 },
    #[error("matrix is singular")]
    Singular,
    #[error("matrix contains non-finite entries")]
    NonFinite,
    #[error("eigenvalue iteration failed to converge")]
    EigenvalueFailure,
    #[error("fractional power of a matrix with negative eigenvalue {0:.3e}")]
    NegativeEigenvalue(f64),
}

/// Eigendecomposition of a symmetric matrix.
///
/// `values` are sorted ascending and column `j` of `vectors` pairs with
/// `values[j]`. Each eigenvector has its largest-magnitude component positive.
#[derive(Debug, Clone, PartialEq)]
pub struct SymEig {
    pub values: DVector<f64>,
    pub vectors: DMatrix<f64>,
}

impl SymEig {
    /// `V·diag(f(values))·Vᵀ`.
    pub fn map_values(&self, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
        let scaled = DVector::from_iterator(self.values.len(), self.values.iter().map(|&v| f(v)));
        &self.vectors * DMatrix::from_diagonal(&scaled) * self.vectors.transpose()
    }
}

/// Stabilizing solution of a continuous-time game-type Riccati equation.
#[derive(Debug, Clone, PartialEq)]
pub struct AreSolution {
    pub x: DMatrix<f64>,
    /// Frobenius norm of the equation's left-hand side at `x`.
    pub residual: f64,
    /// Eigenvalues of `Ac + Rq·X`.
    pub closed_loop_spectrum: Vec<Complex64>,
}

fn ensure_square(s: &DMatrix<f64>) -> Result<usize, LinalgError> {
    if s.nrows() != s.ncols() {
        return Err(LinalgError::NonSquare { rows: s.nrows(), cols: s.ncols() });
    }
    Ok(s.nrows())
}

/// Checks near-symmetry and returns the exactly symmetric part.
pub fn symmetrize_checked(s: &DMatrix<f64>) -> Result<DMatrix<f64>, LinalgError> {
    ensure_square(s)?;
    let asym = (s - s.transpose()).norm();
    let scale = s.norm();
    if asym > SYMMETRY_TOL * scale {
        return Err(LinalgError::NotSymmetric { asymmetry: if scale > 0.0 { asym / scale } else { asym } });
    }
    Ok(symmetrize(s))
}

/// `(S + Sᵀ)/2`; the result is bitwise symmetric.
pub fn symmetrize(s: &DMatrix<f64>) -> DMatrix<f64> {
    (s + s.transpose()) * 0.5
}

pub fn sym_eig(s: &DMatrix<f64>) -> Result<SymEig, LinalgError> {
    let sym = symmetrize_checked(s)?;
    let n = sym.nrows();
    if n == 0 {
        return Ok(SymEig { values: DVector::zeros(0), vectors: DMatrix::zeros(0, 0) });
    }
    let eig = nalgebra::SymmetricEigen::try_new(sym, f64::EPSILON, 10_000).ok_or(LinalgError::EigenvalueFailure)?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[a]
            .total_cmp(&eig.eigenvalues[b])
            .then(a.cmp(&b))
    });
    let values = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vectors = DMatrix::zeros(n, n);
    for (j, &i) in order.iter().enumerate() {
        let mut col = eig.eigenvectors.column(i).clone_owned();
        let pivot = col.iamax();
        if col[pivot] < 0.0 {
            col.neg_mut();
        }
        vectors.set_column(j, &col);
    }
    Ok(SymEig { values, vectors })
}

/// Counts of negative, zero and positive eigenvalues, with `zero_tol`
/// defining the zero band `[-zero_tol, zero_tol]`.
pub fn inertia(s: &DMatrix<f64>, zero_tol: f64) -> Result<(usize, usize, usize), LinalgError> {
    let eig = sym_eig(s)?;
    Ok(count_inertia(eig.values.as_slice(), zero_tol))
}

pub(crate) fn count_inertia(values: &[f64], zero_tol: f64) -> (usize, usize, usize) {
    values.iter().fold((0, 0, 0), |(neg, zero, pos), &v| {
        if v < -zero_tol {
            (neg + 1, zero, pos)
        } else if v > zero_tol {
            (neg, zero, pos + 1)
        } else {
            (neg, zero + 1, pos)
        }
    })
}

/// True iff the smallest eigenvalue exceeds `margin`.
pub fn is_pos_def(s: &DMatrix<f64>, margin: f64) -> Result<bool, LinalgError> {
    Ok(min_eigenvalue(s)? > margin)
}

pub fn min_eigenvalue(s: &DMatrix<f64>) -> Result<f64, LinalgError> {
    let eig = sym_eig(s)?;
    Ok(eig.values.iter().copied().fold(f64::INFINITY, f64::min))
}

/// Real power of a symmetric positive (semi)definite matrix through its
/// eigendecomposition. Negative powers require strictly positive spectrum.
pub fn sym_power(s: &DMatrix<f64>, power: f64) -> Result<DMatrix<f64>, LinalgError> {
    let eig = sym_eig(s)?;
    let scale = eig.values.amax().max(f64::MIN_POSITIVE);
    for &v in eig.values.iter() {
        if v < -1e-14 * scale || (power < 0.0 && v <= 0.0) {
            return Err(LinalgError::NegativeEigenvalue(v));
        }
    }
    Ok(symmetrize(&eig.map_values(|v| v.max(0.0).powf(power))))
}

pub fn eigenvalues(a: &DMatrix<f64>) -> Result<Vec<Complex64>, LinalgError> {
    ensure_square(a)?;
    if a.nrows() == 0 {
        return Ok(Vec::new());
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(LinalgError::NonFinite);
    }
    let dense = faer::Mat::<f64>::from_fn(a.nrows(), a.ncols(), |i, j| a[(i, j)]);
    let mut eigs: Vec<Complex64> = dense
        .eigenvalues()
        .map_err(|_| LinalgError::EigenvalueFailure)?
        .into_iter()
        .map(|c| Complex64::new(c.re, c.im))
        .collect();
    eigs.sort_by(|p, q| p.re.total_cmp(&q.re).then(p.im.total_cmp(&q.im)));
    Ok(eigs)
}

pub fn max_real_part(eigs: &[Complex64]) -> f64 {
    eigs.iter().map(|c| c.re).fold(f64::NEG_INFINITY, f64::max)
}

/// Solves `Aᵀ·P + P·A + Q = 0` by vectorization. `Q` need not be symmetric.
fn solve_sylvester_transpose(a: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<DMatrix<f64>, LinalgError> {
    let n = a.nrows();
    let eye = DMatrix::<f64>::identity(n, n);
    let at = a.transpose();
    // column-major vec: vec(AᵀP) = (I⊗Aᵀ)vec(P), vec(PA) = (Aᵀ⊗I)vec(P)
    let op = eye.kronecker(&at) + at.kronecker(&eye);
    let rhs = DVector::from_column_slice(q.as_slice()) * -1.0;
    let sol = op.lu().solve(&rhs).ok_or(LinalgError::Singular)?;
    if sol.iter().any(|v| !v.is_finite()) {
        return Err(LinalgError::Singular);
    }
    Ok(DMatrix::from_column_slice(n, n, sol.as_slice()))
}

/// Solves `Aclᵀ·P + P·Acl + Q = 0` for Hurwitz `Acl`.
pub fn solve_lyapunov(acl: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<DMatrix<f64>, LinalgError> {
    let n = ensure_square(acl)?;
    if q.nrows() != n || q.ncols() != n {
        return Err(LinalgError::DimensionMismatch(format!(
            "Q is {}x{}, expected {n}x{n}",
            q.nrows(),
            q.ncols()
        )));
    }
    let q = symmetrize_checked(q)?;
    let max_real = max_real_part(&eigenvalues(acl)?);
    if n > 0 && max_real >= 0.0 {
        return Err(LinalgError::NotHurwitz { max_real });
    }
    let p = symmetrize(&solve_sylvester_transpose(acl, &q)?);
    Ok(p)
}

/// Left-hand side `AcᵀX + XAc + X·Rq·X + Q`.
pub fn game_are_lhs(ac: &DMatrix<f64>, rq: &DMatrix<f64>, q: &DMatrix<f64>, x: &DMatrix<f64>) -> DMatrix<f64> {
    ac.transpose() * x + x * ac + x * rq * x + q
}

/// Matrix sign function by the scaled Newton iteration.
fn matrix_sign(h: &DMatrix<f64>) -> Result<DMatrix<f64>, LinalgError> {
    let n = h.nrows();
    let mut z = h.clone();
    let mut scaling = true;
    for _ in 0..100 {
        let lu = z.clone().lu();
        let c = if scaling {
            let log_det: f64 = lu.u().diagonal().iter().map(|d| d.abs().ln()).sum();
            let c = (-log_det / n as f64).exp();
            if c.is_finite() && c > 0.0 { c } else { 1.0 }
        } else {
            1.0
        };
        let inv = lu.try_inverse().ok_or_else(|| {
            LinalgError::NoStabilizingSolution("singular sign-function iterate".into())
        })?;
        let next = (&z * c + inv / c) * 0.5;
        let change = (&next - &z).norm() / next.norm().max(f64::MIN_POSITIVE);
        z = next;
        if !change.is_finite() {
            break;
        }
        if change < 1e-2 {
            scaling = false;
        }
        if change < 1e-13 {
            return Ok(z);
        }
    }
    // accept a stagnated but accurate iterate: sign(H)² = I
    let eye = DMatrix::<f64>::identity(n, n);
    let defect = (&z * &z - &eye).norm() / (n as f64).sqrt();
    if defect.is_finite() && defect < 1e-8 {
        Ok(z)
    } else {
        Err(LinalgError::NoStabilizingSolution("sign iteration did not converge".into()))
    }
}

/// Solves `AcᵀX + X·Ac + X·Rq·X + Q = 0` for the stabilizing solution, the
/// one making `Ac + Rq·X` Hurwitz.
///
/// The solution is read off the stable invariant subspace of the Hamiltonian
/// `[[Ac, Rq], [-Q, -Acᵀ]]`, obtained from its matrix sign function, then
/// polished by Newton steps on the equation itself.
pub fn solve_game_are(ac: &DMatrix<f64>, rq: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<AreSolution, LinalgError> {
    let n = ensure_square(ac)?;
    for (name, m) in [("Rq", rq), ("Q", q)] {
        if m.nrows() != n || m.ncols() != n {
            return Err(LinalgError::DimensionMismatch(format!(
                "{name} is {}x{}, expected {n}x{n}",
                m.nrows(),
                m.ncols()
            )));
        }
    }
    let rq = symmetrize_checked(rq)?;
    let q = symmetrize_checked(q)?;
    if n == 0 {
        return Ok(AreSolution { x: DMatrix::zeros(0, 0), residual: 0.0, closed_loop_spectrum: Vec::new() });
    }

    let mut h = DMatrix::zeros(2 * n, 2 * n);
    h.view_mut((0, 0), (n, n)).copy_from(ac);
    h.view_mut((0, n), (n, n)).copy_from(&rq);
    h.view_mut((n, 0), (n, n)).copy_from(&(-&q));
    h.view_mut((n, n), (n, n)).copy_from(&(-ac.transpose()));

    let h_scale = 1.0 + h.norm();
    let spectrum = eigenvalues(&h)?;
    if let Some(bad) = spectrum.iter().find(|c| c.re.abs() <= 1e-9 * h_scale) {
        return Err(LinalgError::NoStabilizingSolution(format!(
            "Hamiltonian eigenvalue {:.6e}{:+.6e}i on the imaginary axis",
            bad.re, bad.im
        )));
    }

    let w = matrix_sign(&h)?;
    let eye = DMatrix::<f64>::identity(n, n);
    // (W + I)[I; X] = 0
    let mut lhs = DMatrix::zeros(2 * n, n);
    lhs.view_mut((0, 0), (n, n)).copy_from(&w.view((0, n), (n, n)));
    lhs.view_mut((n, 0), (n, n)).copy_from(&(w.view((n, n), (n, n)) + &eye));
    let mut rhs = DMatrix::zeros(2 * n, n);
    rhs.view_mut((0, 0), (n, n)).copy_from(&(-(w.view((0, 0), (n, n)) + &eye)));
    rhs.view_mut((n, 0), (n, n)).copy_from(&(-w.view((n, 0), (n, n))));
    let svd = lhs.svd(true, true);
    let smin = svd.singular_values.min();
    let smax = svd.singular_values.max();
    if !(smin > 1e-12 * smax) {
        return Err(LinalgError::NoStabilizingSolution("stable subspace basis is singular".into()));
    }
    let x = svd
        .solve(&rhs, 0.0)
        .map_err(|e| LinalgError::NoStabilizingSolution(e.to_string()))?;
    let mut x = symmetrize(&x);

    let mut residual = game_are_lhs(ac, &rq, &q, &x).norm();
    for _ in 0..8 {
        if residual <= 1e-14 * (1.0 + x.norm()) {
            break;
        }
        let acl = ac + &rq * &x;
        let lhs = game_are_lhs(ac, &rq, &q, &x);
        let Ok(delta) = solve_sylvester_transpose(&acl, &lhs) else { break };
        let candidate = symmetrize(&(&x + delta));
        let cand_res = game_are_lhs(ac, &rq, &q, &candidate).norm();
        if !(cand_res < residual) {
            break;
        }
        x = candidate;
        residual = cand_res;
    }

    if !x.iter().all(|v| v.is_finite()) {
        return Err(LinalgError::NoStabilizingSolution("non-finite solution".into()));
    }
    if residual > 1e-8 * (1.0 + x.norm()) {
        return Err(LinalgError::NoStabilizingSolution(format!("residual {residual:.3e} too large")));
    }
    let closed_loop_spectrum = eigenvalues(&(ac + &rq * &x))?;
    let max_real = max_real_part(&closed_loop_spectrum);
    if max_real >= 0.0 {
        return Err(LinalgError::NoStabilizingSolution(format!(
            "closed loop not Hurwitz (largest real part {max_real:.3e})"
        )));
    }
    Ok(AreSolution { x, residual, closed_loop_spectrum })
}

/// Horizontal block concatenation; all blocks share the row count `rows`.
pub(crate) fn hstack(rows: usize, blocks: &[&DMatrix<f64>]) -> DMatrix<f64> {
    let cols = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let mut c = 0;
    for b in blocks {
        out.view_mut((0, c), (rows, b.ncols())).copy_from(*b);
        c += b.ncols();
    }
    out
}

/// Vertical block concatenation; all blocks share the column count `cols`.
pub(crate) fn vstack(cols: usize, blocks: &[&DMatrix<f64>]) -> DMatrix<f64> {
    let rows = blocks.iter().map(|b| b.nrows()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let mut r = 0;
    for b in blocks {
        out.view_mut((r, 0), (b.nrows(), cols)).copy_from(*b);
        r += b.nrows();
    }
    out
}
