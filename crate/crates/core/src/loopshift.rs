//! Removal of the feedthrough `D̄₁₁` from each transformed nonlinearity
//! channel. With `Φ = I - D̄₁₁ᵀD̄₁₁` and `Φ̄ = I - D̄₁₁D̄₁₁ᵀ`, the new channel
//! signals are
//!
//! ```text
//! ξ̄ = D̄₁₁ᵀΦ̄⁻¹ζ₀ + Φ^{-1/2}ξ̌,   ζ̌ = Φ̄^{-1/2}ζ₀,   ζ₀ = C̄₂x + D̄₂u,
//! ```
//!
//! which keep `‖ξ̌‖² - ‖ζ̌‖² = ‖ξ̄‖² - ‖ζ̄‖²`.

use nalgebra::DMatrix;
use thiserror::Error;

use crate::linalg::{self, LinalgError};
use crate::sfactor::BarSystem;

pub const D11_MARGIN: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LoopShiftError {
    #[error("feedthrough of channel {} is not a strict contraction (margin {margin:e})", .channel + 1)]
    D11TooLarge { channel: usize, margin: f64 },
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckSystem {
    pub a: DMatrix<f64>,
    pub b1: Vec<DMatrix<f64>>,
    pub c1: Vec<DMatrix<f64>>,
    pub d1: Vec<DMatrix<f64>>,
    pub b2_chan: Vec<DMatrix<f64>>,
    pub b2u: DMatrix<f64>,
    pub c2: Vec<DMatrix<f64>>,
    pub d2: Vec<DMatrix<f64>>,
    pub phi_half_inv: Vec<DMatrix<f64>>,
    pub phi_bar_half_inv: Vec<DMatrix<f64>>,
}

/// `(Φ, Φ̄)` for one feedthrough block.
pub fn phi_matrices(d11: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let phi = DMatrix::identity(d11.ncols(), d11.ncols()) - d11.transpose() * d11;
    let phi_bar = DMatrix::identity(d11.nrows(), d11.nrows()) - d11 * d11.transpose();
    (linalg::symmetrize(&phi), linalg::symmetrize(&phi_bar))
}

/// Smallest eigenvalue of `Φ`; positive iff `‖D̄₁₁‖ < 1`.
pub fn d11_margin(d11: &DMatrix<f64>) -> Result<f64, LinalgError> {
    linalg::min_eigenvalue(&phi_matrices(d11).0)
}

pub fn check_d11(bar: &BarSystem) -> Result<Vec<bool>, LinalgError> {
    bar.d11.iter().map(|d| Ok(d11_margin(d)? > D11_MARGIN)).collect()
}

pub fn shift(bar: &BarSystem) -> Result<CheckSystem, LoopShiftError> {
    let mut a = bar.a.clone();
    let mut b2u = bar.b2u.clone();
    let mut out = CheckSystem {
        a: DMatrix::zeros(0, 0),
        b1: bar.b1.clone(),
        c1: bar.c1.clone(),
        d1: bar.d1.clone(),
        b2_chan: Vec::new(),
        b2u: DMatrix::zeros(0, 0),
        c2: Vec::new(),
        d2: Vec::new(),
        phi_half_inv: Vec::new(),
        phi_bar_half_inv: Vec::new(),
    };
    for (i, d11) in bar.d11.iter().enumerate() {
        let margin = d11_margin(d11)?;
        if margin <= D11_MARGIN {
            return Err(LoopShiftError::D11TooLarge { channel: i, margin });
        }
        let (phi, phi_bar) = phi_matrices(d11);
        let phi_half_inv = linalg::sym_power(&phi, -0.5)?;
        let phi_bar_inv = linalg::sym_power(&phi_bar, -1.0)?;
        let phi_bar_half_inv = linalg::sym_power(&phi_bar, -0.5)?;
        let gain = &bar.b2_chan[i] * d11.transpose() * &phi_bar_inv;
        a += &gain * &bar.c2[i];
        b2u += &gain * &bar.d2[i];
        out.b2_chan.push(&bar.b2_chan[i] * &phi_half_inv);
        out.c2.push(&phi_bar_half_inv * &bar.c2[i]);
        out.d2.push(&phi_bar_half_inv * &bar.d2[i]);
        out.phi_half_inv.push(phi_half_inv);
        out.phi_bar_half_inv.push(phi_bar_half_inv);
    }
    out.a = a;
    out.b2u = b2u;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DVector;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_bar(rng: &mut ChaCha8Rng, d11: DMatrix<f64>) -> BarSystem {
        let mut r = |rows, cols| DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0));
        BarSystem {
            a: r(3, 3),
            b1: vec![r(3, 1)],
            c1: vec![r(1, 3)],
            d1: vec![r(1, 3)],
            b2_chan: vec![r(3, 2)],
            b2u: r(3, 3),
            c2: vec![r(2, 3)],
            d2: vec![r(2, 3)],
            d11: vec![d11],
        }
    }

    fn random_contraction(rng: &mut ChaCha8Rng, n: usize, max_norm: f64) -> DMatrix<f64> {
        let d = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        let norm = d.clone().svd(false, false).singular_values.max();
        d * (rng.random_range(0.0..max_norm) / norm)
    }

    #[test]
    fn margin_examples() {
        assert!(d11_margin(&DMatrix::zeros(2, 2)).unwrap() > D11_MARGIN);
        assert!(d11_margin(&DMatrix::identity(2, 2)).unwrap() <= D11_MARGIN);
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let q = DMatrix::from_fn(2, 2, |_, _| rng.random_range(-1.0..1.0)).qr().q();
        assert!((d11_margin(&(q * 0.5)).unwrap() - 0.75).abs() < 1e-12);
    }

    #[test]
    fn zero_feedthrough_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let bar = random_bar(&mut rng, DMatrix::zeros(2, 2));
        let chk = shift(&bar).unwrap();
        assert_eq!(check_d11(&bar).unwrap(), vec![true]);
        assert!((&chk.a - &bar.a).norm() < 1e-15);
        assert!((&chk.b2u - &bar.b2u).norm() < 1e-15);
        assert!((&chk.b2_chan[0] - &bar.b2_chan[0]).norm() < 1e-15);
        assert!((&chk.c2[0] - &bar.c2[0]).norm() < 1e-15);
    }

    #[test]
    fn scalar_block_feedthrough() {
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        let d = 0.6;
        let bar = random_bar(&mut rng, DMatrix::identity(2, 2) * d);
        let chk = shift(&bar).unwrap();
        let (phi, _) = phi_matrices(&bar.d11[0]);
        assert!((phi - DMatrix::identity(2, 2) * (1.0 - d * d)).norm() < 1e-15);
        let expected = &bar.b2_chan[0] / (1.0 - d * d).sqrt();
        assert!((&chk.b2_chan[0] - expected).norm() < 1e-13);
    }

    #[test]
    fn refuses_unit_feedthrough() {
        let mut rng = ChaCha8Rng::seed_from_u64(44);
        let bar = random_bar(&mut rng, DMatrix::identity(2, 2));
        assert!(matches!(shift(&bar), Err(LoopShiftError::D11TooLarge { channel: 0, .. })));
        assert_eq!(check_d11(&bar).unwrap(), vec![false]);
    }

    #[test]
    fn push_through_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(45);
        for _ in 0..1000 {
            let d = random_contraction(&mut rng, 2, 0.95);
            let (phi, phi_bar) = phi_matrices(&d);
            let lhs = phi.try_inverse().unwrap() * d.transpose();
            let rhs = d.transpose() * phi_bar.try_inverse().unwrap();
            assert!((lhs - rhs).norm() <= 1e-12);
        }
    }

    #[test]
    fn square_roots() {
        let mut rng = ChaCha8Rng::seed_from_u64(46);
        for _ in 0..200 {
            let d = random_contraction(&mut rng, 2, 0.95);
            let (phi, _) = phi_matrices(&d);
            let root = linalg::sym_power(&phi, 0.5).unwrap();
            assert!((&root * &root - &phi).norm() <= 1e-10);
        }
    }

    #[test]
    fn iqc_preserved_by_substitution() {
        let mut rng = ChaCha8Rng::seed_from_u64(47);
        for _ in 0..500 {
            let d = random_contraction(&mut rng, 2, 0.95);
            let bar = random_bar(&mut rng, d.clone());
            let chk = shift(&bar).unwrap();
            let x = DVector::from_fn(3, |_, _| rng.random_range(-1.0..1.0));
            let u = DVector::from_fn(3, |_, _| rng.random_range(-1.0..1.0));
            let xi_check = DVector::from_fn(2, |_, _| rng.random_range(-1.0..1.0));

            let zeta0 = &bar.c2[0] * &x + &bar.d2[0] * &u;
            let (_, phi_bar) = phi_matrices(&d);
            let xi_bar = d.transpose() * phi_bar.try_inverse().unwrap() * &zeta0 + &chk.phi_half_inv[0] * &xi_check;
            let zeta_bar = &zeta0 + &d * &xi_bar;
            let zeta_check = &chk.c2[0] * &x + &chk.d2[0] * &u;

            let lhs = xi_check.norm_squared() - zeta_check.norm_squared();
            let rhs = xi_bar.norm_squared() - zeta_bar.norm_squared();
            assert!((lhs - rhs).abs() <= 1e-9 * (1.0 + rhs.abs()));

            // The state derivative agrees under the substitution.
            let xdot_bar = &bar.a * &x + &bar.b2_chan[0] * &xi_bar + &bar.b2u * &u;
            let xdot_check = &chk.a * &x + &chk.b2_chan[0] * &xi_check + &chk.b2u * &u;
            assert!((xdot_bar - xdot_check).norm() <= 1e-9 * (1.0 + x.norm() + u.norm()) * 100.0);
        }
    }
}
