//! τ-scaled synthesis data, the game Riccati equation, the state-feedback gain
//! and the guaranteed cost bound.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use thiserror::Error;

use crate::augment::MultiplierPoint;
use crate::linalg::{self, hstack, vstack, LinalgError};
use crate::loopshift::CheckSystem;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RiccatiError {
    #[error("D_tau has rank-deficient columns")]
    GtauSingular,
    #[error("no stabilizing Riccati solution: {0}")]
    NoStabilizingSolution(String),
    #[error("Riccati solution is not positive semidefinite (min eigenvalue {0:e})")]
    XNotPSD(f64),
    #[error("invalid synthesis data: {0}")]
    Invalid(String),
}

impl From<LinalgError> for RiccatiError {
    fn from(e: LinalgError) -> Self {
        match e {
            LinalgError::NoStabilizingSolution(s) => Self::NoStabilizingSolution(s),
            LinalgError::NotHurwitz { max_real } => {
                Self::NoStabilizingSolution(format!("closed loop not Hurwitz ({max_real:e})"))
            }
            other => Self::Invalid(other.to_string()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TauSystem {
    pub c: DMatrix<f64>,
    pub d: DMatrix<f64>,
    pub g: DMatrix<f64>,
    pub b2: DMatrix<f64>,
}

/// Stacks `C_τ = [R^½; 0; √τⱼC̃₁ⱼ…; Č₂ᵢ…]`, `D_τ = [0; G^½; √τⱼD̃₁ⱼ…; Ď₂ᵢ…]`
/// and `B₂τ = [B̃₁ⱼ/√τⱼ…, B̌₂ᵢ…]`.
pub fn assemble(
    check: &CheckSystem,
    point: &MultiplierPoint,
    r: &DMatrix<f64>,
    g: &DMatrix<f64>,
) -> Result<TauSystem, RiccatiError> {
    let nx = check.a.nrows();
    let nu = check.b2u.ncols();
    if point.tau.len() != check.c1.len() {
        return Err(RiccatiError::Invalid(format!(
            "{} tau values for {} uncertainty channels",
            point.tau.len(),
            check.c1.len()
        )));
    }
    if let Some(t) = point.tau.iter().find(|t| !(**t > 0.0)) {
        return Err(RiccatiError::Invalid(format!("tau must be positive, got {t}")));
    }
    let r_half = linalg::sym_power(r, 0.5)?;
    let g_half = linalg::sym_power(g, 0.5)?;

    let zx = DMatrix::zeros(nu, nx);
    let zu = DMatrix::zeros(nx, nu);
    let scaled_c: Vec<_> = check.c1.iter().zip(&point.tau).map(|(c, t)| c * t.sqrt()).collect();
    let scaled_d: Vec<_> = check.d1.iter().zip(&point.tau).map(|(d, t)| d * t.sqrt()).collect();
    let scaled_b: Vec<_> = check.b1.iter().zip(&point.tau).map(|(b, t)| b / t.sqrt()).collect();

    let mut c_blocks = vec![&r_half, &zx];
    c_blocks.extend(scaled_c.iter());
    c_blocks.extend(check.c2.iter());
    let mut d_blocks = vec![&zu, &g_half];
    d_blocks.extend(scaled_d.iter());
    d_blocks.extend(check.d2.iter());
    let mut b_blocks: Vec<&DMatrix<f64>> = scaled_b.iter().collect();
    b_blocks.extend(check.b2_chan.iter());

    let c = vstack(nx, &c_blocks);
    let d = vstack(nu, &d_blocks);
    let b2 = hstack(nx, &b_blocks);
    let gt = linalg::symmetrize(&(d.transpose() * &d));
    let min_eig = linalg::min_eigenvalue(&gt)?;
    if !(min_eig > 1e-12 * (1.0 + gt.norm())) {
        return Err(RiccatiError::GtauSingular);
    }
    Ok(TauSystem { c, d, g: gt, b2 })
}

#[derive(Debug, Clone, PartialEq)]
pub struct GameSolution {
    pub k: DMatrix<f64>,
    pub x: DMatrix<f64>,
    pub residual: f64,
    /// Eigenvalues of `Ǎ + B̌₂K`.
    pub closed_loop_spectrum: Vec<Complex64>,
}

/// The Riccati data `(Ac, Rq, Q)` formed from the assembled system.
pub fn riccati_data(tau: &TauSystem, check: &CheckSystem) -> Result<(DMatrix<f64>, DMatrix<f64>, DMatrix<f64>), RiccatiError> {
    let g_inv = linalg::sym_power(&tau.g, -1.0)?;
    let b2 = &check.b2u;
    let ac = &check.a - b2 * &g_inv * tau.d.transpose() * &tau.c;
    let rows = tau.d.nrows();
    let proj = DMatrix::identity(rows, rows) - &tau.d * &g_inv * tau.d.transpose();
    let q = linalg::symmetrize(&(tau.c.transpose() * proj * &tau.c));
    let rq = linalg::symmetrize(&(&tau.b2 * tau.b2.transpose() - b2 * &g_inv * b2.transpose()));
    Ok((ac, rq, q))
}

pub fn synthesize(tau: &TauSystem, check: &CheckSystem) -> Result<GameSolution, RiccatiError> {
    let (ac, rq, q) = riccati_data(tau, check)?;
    let sol = linalg::solve_game_are(&ac, &rq, &q)?;
    let x = sol.x;
    let x_min = linalg::min_eigenvalue(&x)?;
    if x_min < -1e-9 * (1.0 + x.norm()) {
        return Err(RiccatiError::XNotPSD(x_min));
    }
    let g_inv = linalg::sym_power(&tau.g, -1.0)?;
    let k = -(&g_inv * (check.b2u.transpose() * &x + tau.d.transpose() * &tau.c));
    let spectrum = linalg::eigenvalues(&(&check.a + &check.b2u * &k))?;
    if linalg::max_real_part(&spectrum) >= 0.0 {
        return Err(RiccatiError::NoStabilizingSolution("state feedback does not stabilize".into()));
    }
    Ok(GameSolution { k, x, residual: sol.residual, closed_loop_spectrum: spectrum })
}

/// `x̃₀ᵀXx̃₀ + Σⱼ τⱼ x₀ᵀS₁ⱼx₀ + Σᵢ x̃₀ᵀS̃₂ᵢx̃₀` with `x̃₀ = [x₀; 0]`.
///
/// `s1` are n×n and are zero-padded; `s2` may be n×n or (n+g)×(n+g).
pub fn cost_bound(
    x: &DMatrix<f64>,
    tau: &[f64],
    s1: &[DMatrix<f64>],
    s2: &[DMatrix<f64>],
    x0: &DVector<f64>,
) -> f64 {
    let n = x0.len();
    let mut x0aug = DVector::zeros(x.nrows());
    x0aug.rows_mut(0, n).copy_from(x0);
    let quad_aug = |m: &DMatrix<f64>| {
        let k = m.nrows().min(x0aug.len());
        let v = x0aug.rows(0, k);
        (v.transpose() * m.view((0, 0), (k, k)) * v)[(0, 0)]
    };
    quad_aug(x)
        + tau.iter().zip(s1).map(|(t, s)| t * quad_aug(s)).sum::<f64>()
        + s2.iter().map(quad_aug).sum::<f64>()
}
