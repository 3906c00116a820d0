//! Inertia check on the combined multiplier, congruence to `diag(-I, I)`, and
//! the change of nonlinearity-channel coordinates that turns each lifted IQC
//! into a norm bound `‖ξ̄‖ ≤ ‖ζ̄‖`.
//!
//! With `T` such that `TᵀM̃T = diag(-I₂, I₂)`, the new signals are
//! `[ξ̄; ζ̄] = T⁻¹[ξ̃; ζ̃]`, and `T̃ᵢⱼ` denote the 2×2 blocks of `T⁻¹`.

use nalgebra::{DMatrix, Matrix2};
use thiserror::Error;

use crate::augment::AugmentedPlant;
use crate::linalg::{self, LinalgError};

/// Eigenvalues within this distance of zero count as zero.
pub const INERTIA_TOL: f64 = 1e-9;
/// Minimum `|det U₁₁|` for a feasible multiplier.
pub const DET_U11_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SfactorError {
    #[error("multiplier has {pi_count} negative and {zero_count} zero eigenvalues (need 2 and 0)")]
    WrongInertia { pi_count: usize, zero_count: usize },
    #[error("U11 block is singular (|det| = {det_u11:e})")]
    SingularU11 { det_u11: f64 },
    #[error("T11 block of channel {} is singular", .channel + 1)]
    SingularT11 { channel: usize },
    #[error("channel count mismatch: {0}")]
    ChannelMismatch(String),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Conditions {
    pub pi_count: usize,
    pub zero_count: usize,
    pub det_u11: f64,
    pub feasible: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Congruence {
    /// `TᵀM̃T = diag(-I, I)`
    pub t: DMatrix<f64>,
    pub t_inv: DMatrix<f64>,
    pub t11: Matrix2<f64>,
    pub t12: Matrix2<f64>,
    pub t21: Matrix2<f64>,
    pub t22: Matrix2<f64>,
    pub pi_count: usize,
    pub det_u11: f64,
}

fn block(m: &DMatrix<f64>, r: usize, c: usize) -> Matrix2<f64> {
    Matrix2::new(m[(r, c)], m[(r, c + 1)], m[(r + 1, c)], m[(r + 1, c + 1)])
}

fn to_dyn(m: &Matrix2<f64>) -> DMatrix<f64> {
    DMatrix::from_column_slice(2, 2, m.as_slice())
}

/// Adjugate inverse with a relative conditioning check.
fn inv2(m: &Matrix2<f64>) -> Option<Matrix2<f64>> {
    let det = m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)];
    let scale = m.norm_squared();
    if !det.is_finite() || det.abs() <= 1e-12 * scale || scale == 0.0 {
        return None;
    }
    Some(Matrix2::new(m[(1, 1)], -m[(0, 1)], -m[(1, 0)], m[(0, 0)]) / det)
}

pub fn check_conditions(mcomb: &DMatrix<f64>) -> Result<Conditions, SfactorError> {
    let eig = linalg::sym_eig(mcomb)?;
    let (neg, zero, _) = linalg::count_inertia(eig.values.as_slice(), INERTIA_TOL);
    let det_u11 = if eig.vectors.nrows() >= 2 && eig.vectors.ncols() >= 2 {
        block(&eig.vectors, 0, 0).determinant()
    } else {
        0.0
    };
    Ok(Conditions {
        pi_count: neg,
        zero_count: zero,
        det_u11,
        feasible: neg == 2 && zero == 0 && det_u11.abs() > DET_U11_TOL,
    })
}

pub fn build_congruence(mcomb: &DMatrix<f64>) -> Result<Congruence, SfactorError> {
    let cond = check_conditions(mcomb)?;
    if cond.pi_count != 2 || cond.zero_count != 0 {
        return Err(SfactorError::WrongInertia { pi_count: cond.pi_count, zero_count: cond.zero_count });
    }
    if cond.det_u11.abs() <= DET_U11_TOL {
        return Err(SfactorError::SingularU11 { det_u11: cond.det_u11 });
    }
    let eig = linalg::sym_eig(mcomb)?;
    let dim = eig.values.len();
    let mut t = eig.vectors.clone();
    let mut t_inv = eig.vectors.transpose();
    for j in 0..dim {
        let s = eig.values[j].abs().sqrt();
        t.column_mut(j).scale_mut(1.0 / s);
        t_inv.row_mut(j).scale_mut(s);
    }
    Ok(Congruence {
        t11: block(&t_inv, 0, 0),
        t12: block(&t_inv, 0, 2),
        t21: block(&t_inv, 2, 0),
        t22: block(&t_inv, 2, 2),
        t,
        t_inv,
        pi_count: cond.pi_count,
        det_u11: cond.det_u11,
    })
}

/// Blocks of the map `[ξ̄; ζ̃] ↦ [ξ̃; ζ̄]` implied by `[ξ̄; ζ̄] = T⁻¹[ξ̃; ζ̃]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scattering {
    /// `T̃₁₁⁻¹`
    pub s11: Matrix2<f64>,
    /// `-T̃₁₁⁻¹T̃₁₂`
    pub s12: Matrix2<f64>,
    /// `T̃₂₁T̃₁₁⁻¹`, the feedthrough `D̄₁₁`
    pub s21: Matrix2<f64>,
    /// `T̃₂₂ - T̃₂₁T̃₁₁⁻¹T̃₁₂`
    pub s22: Matrix2<f64>,
}

impl Congruence {
    pub fn scattering(&self) -> Option<Scattering> {
        let t11_inv = inv2(&self.t11)?;
        Some(Scattering {
            s11: t11_inv,
            s12: -t11_inv * self.t12,
            s21: self.t21 * t11_inv,
            s22: self.t22 - self.t21 * t11_inv * self.t12,
        })
    }
}

/// The system seen by the transformed nonlinearity channels.
#[derive(Debug, Clone, PartialEq)]
pub struct BarSystem {
    pub a: DMatrix<f64>,
    pub b1: Vec<DMatrix<f64>>,
    pub c1: Vec<DMatrix<f64>>,
    pub d1: Vec<DMatrix<f64>>,
    pub b2_chan: Vec<DMatrix<f64>>,
    pub b2u: DMatrix<f64>,
    pub c2: Vec<DMatrix<f64>>,
    pub d2: Vec<DMatrix<f64>>,
    pub d11: Vec<DMatrix<f64>>,
}

pub fn transform_system(aug: &AugmentedPlant, congs: &[Congruence]) -> Result<BarSystem, SfactorError> {
    if congs.len() != aug.b2_chan.len() {
        return Err(SfactorError::ChannelMismatch(format!(
            "{} congruences for {} channels",
            congs.len(),
            aug.b2_chan.len()
        )));
    }
    let mut a = aug.a.clone();
    let mut b2u = aug.b2u.clone();
    let (mut b2_chan, mut c2, mut d2, mut d11) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for (i, cong) in congs.iter().enumerate() {
        let s = cong.scattering().ok_or(SfactorError::SingularT11 { channel: i })?;
        let bi = &aug.b2_chan[i];
        let feed = bi * to_dyn(&s.s12);
        a += &feed * &aug.c2[i];
        b2u += &feed * &aug.d2[i];
        b2_chan.push(bi * to_dyn(&s.s11));
        let s22 = to_dyn(&s.s22);
        c2.push(&s22 * &aug.c2[i]);
        d2.push(&s22 * &aug.d2[i]);
        d11.push(to_dyn(&s.s21));
    }
    Ok(BarSystem {
        a,
        b1: aug.b1.clone(),
        c1: aug.c1.clone(),
        d1: aug.d1.clone(),
        b2_chan,
        b2u,
        c2,
        d2,
        d11,
    })
}
