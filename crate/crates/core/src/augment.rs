//! Lifting the plant into the augmented linear system with controller copy
//! states, and lifting each pairwise nonlinearity constraint into the three
//! IQCs on `(μ, μ̄, ν, ν̃)`.
//!
//! Signal conventions per nonlinearity channel `i`:
//! - `ξ̃₂ = [μ; μ̄]`: plant nonlinearity output and controller-copy output,
//! - `ζ̃₂ = [ν; ν̃]`: plant nonlinearity input and controller-copy input,
//! - the augmented control is `ũ = [u; ν̃₁..ν̃_g; z̄₁..z̄_g]` and the copy
//!   states obey `μ̃̇ᵢ = μ̄ᵢ + z̄ᵢ`.

use nalgebra::DMatrix;
use thiserror::Error;

use crate::linalg;
use crate::model::{Dims, ValidatedPlant};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AugmentError {
    #[error("N must be a symmetric 2x2 matrix")]
    NotSymmetric,
    #[error("all multipliers of a channel are zero")]
    AllZeroMultiplier,
    #[error("invalid multiplier: {0}")]
    InvalidMultiplier(String),
}

/// One candidate multiplier point: `τ_j > 0` per uncertainty channel and
/// `λ_i ∈ ℝ³₊` per nonlinearity channel.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiplierPoint {
    pub tau: Vec<f64>,
    pub lambda: Vec<[f64; 3]>,
}

impl MultiplierPoint {
    pub fn new(tau: Vec<f64>, lambda: Vec<[f64; 3]>) -> Result<Self, AugmentError> {
        let point = Self { tau, lambda };
        point.check()?;
        Ok(point)
    }

    pub fn check(&self) -> Result<(), AugmentError> {
        if let Some(t) = self.tau.iter().find(|t| !(t.is_finite() && **t > 0.0)) {
            return Err(AugmentError::InvalidMultiplier(format!("tau must be positive, got {t}")));
        }
        if let Some(l) = self.lambda.iter().flatten().find(|l| !(l.is_finite() && **l >= 0.0)) {
            return Err(AugmentError::InvalidMultiplier(format!("lambda must be nonnegative, got {l}")));
        }
        Ok(())
    }

    pub fn check_dims(&self, dims: Dims) -> Result<(), AugmentError> {
        if self.tau.len() != dims.k || self.lambda.len() != dims.g {
            return Err(AugmentError::InvalidMultiplier(format!(
                "expected {} tau and {} lambda triples, got {} and {}",
                dims.k,
                dims.g,
                self.tau.len(),
                self.lambda.len()
            )));
        }
        Ok(())
    }
}

/// The three lifted IQCs of one nonlinearity channel.
#[derive(Debug, Clone, PartialEq)]
pub struct LiftedIqc {
    /// 4×4 symmetric forms on `(μ, μ̄, ν, ν̃)`: difference, plant, copy.
    pub m: [DMatrix<f64>; 3],
    /// Matching initial-condition matrices.
    pub s: [DMatrix<f64>; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedPlant {
    pub dims: Dims,
    /// `blockdiag(A, 0_g)`
    pub a: DMatrix<f64>,
    /// per uncertainty channel, (n+g)×p_j
    pub b1: Vec<DMatrix<f64>>,
    /// per uncertainty channel, q_j×(n+g)
    pub c1: Vec<DMatrix<f64>>,
    /// per uncertainty channel, q_j×(m+2g)
    pub d1: Vec<DMatrix<f64>>,
    /// per nonlinearity channel, (n+g)×2
    pub b2_chan: Vec<DMatrix<f64>>,
    /// (n+g)×(m+2g)
    pub b2u: DMatrix<f64>,
    /// per nonlinearity channel, 2×(n+g)
    pub c2: Vec<DMatrix<f64>>,
    /// per nonlinearity channel, 2×(m+2g)
    pub d2: Vec<DMatrix<f64>>,
    pub lifted: Vec<LiftedIqc>,
}

/// Builds the augmented system for a validated plant.
pub fn build_augmented(plant: &ValidatedPlant) -> AugmentedPlant {
    let dims = plant.dims();
    let Dims { n, m, g, .. } = dims;
    let nx = dims.nx();
    let nu = dims.nu();

    let mut a = DMatrix::zeros(nx, nx);
    a.view_mut((0, 0), (n, n)).copy_from(&plant.a);

    let mut b2u = DMatrix::zeros(nx, nu);
    b2u.view_mut((0, 0), (n, m)).copy_from(&plant.b2);
    for i in 0..g {
        b2u[(n + i, m + g + i)] = 1.0;
    }

    let (mut b1, mut c1, mut d1) = (Vec::new(), Vec::new(), Vec::new());
    for ch in &plant.uncertainty_channels {
        let (p, q) = (ch.input_dim(), ch.output_dim());
        let mut b = DMatrix::zeros(nx, p);
        b.view_mut((0, 0), (n, p)).copy_from(&ch.b1);
        let mut c = DMatrix::zeros(q, nx);
        c.view_mut((0, 0), (q, n)).copy_from(&ch.c1);
        let mut d = DMatrix::zeros(q, nu);
        d.view_mut((0, 0), (q, m)).copy_from(&ch.d1);
        b1.push(b);
        c1.push(c);
        d1.push(d);
    }

    let sbase = DMatrix::<f64>::identity(nx, nx) * plant.s_epsilon;
    let (mut b2_chan, mut c2, mut d2, mut lifted) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for (i, ch) in plant.nonlinear_channels.iter().enumerate() {
        let mut b = DMatrix::zeros(nx, 2);
        b.view_mut((0, 0), (n, 1)).copy_from(&ch.b1bar);
        b[(n + i, 1)] = 1.0;
        let mut c = DMatrix::zeros(2, nx);
        c.view_mut((0, 0), (1, n)).copy_from(&ch.c1bar);
        let mut d = DMatrix::zeros(2, nu);
        d.view_mut((0, 0), (1, m)).copy_from(&ch.d1bar);
        d[(1, m + i)] = 1.0;
        b2_chan.push(b);
        c2.push(c);
        d2.push(d);
        lifted.push(lift_iqcs(&ch.n, &sbase).expect("N symmetry is checked by validation"));
    }

    AugmentedPlant { dims, a, b1, c1, d1, b2_chan, b2u, c2, d2, lifted }
}

fn embed(n: &DMatrix<f64>, coords: [usize; 2]) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(4, 4);
    for (r, &cr) in coords.iter().enumerate() {
        for (c, &cc) in coords.iter().enumerate() {
            out[(cr, cc)] = n[(r, c)];
        }
    }
    out
}

/// Lifts `N` to the difference IQC `EᵀNE` with `E = [[1,-1,0,0],[0,0,1,-1]]`,
/// the plant-channel IQC on `(μ, ν)` and the copy-channel IQC on `(μ̄, ν̃)`.
pub fn lift_iqcs(n: &DMatrix<f64>, sbase: &DMatrix<f64>) -> Result<LiftedIqc, AugmentError> {
    if n.nrows() != 2 || n.ncols() != 2 {
        return Err(AugmentError::NotSymmetric);
    }
    let n = linalg::symmetrize_checked(n).map_err(|_| AugmentError::NotSymmetric)?;
    let e = DMatrix::from_row_slice(2, 4, &[1.0, -1.0, 0.0, 0.0, 0.0, 0.0, 1.0, -1.0]);
    let diff = e.transpose() * &n * &e;
    Ok(LiftedIqc {
        m: [diff, embed(&n, [0, 2]), embed(&n, [1, 3])],
        s: [sbase.clone(), sbase.clone(), sbase.clone()],
    })
}

/// `M̃(λ) = Σ_p λ_p M̃_p` and `S̃(λ) = Σ_p λ_p S̆_p`.
pub fn combine_multipliers(
    lifted: &LiftedIqc,
    lambda: [f64; 3],
) -> Result<(DMatrix<f64>, DMatrix<f64>), AugmentError> {
    if lambda.iter().any(|l| !(l.is_finite() && *l >= 0.0)) {
        return Err(AugmentError::InvalidMultiplier(format!("lambda must be nonnegative, got {lambda:?}")));
    }
    if lambda.iter().all(|&l| l == 0.0) {
        return Err(AugmentError::AllZeroMultiplier);
    }
    let m = (0..3).fold(DMatrix::zeros(4, 4), |acc, p| acc + &lifted.m[p] * lambda[p]);
    let ns = lifted.s[0].nrows();
    let s = (0..3).fold(DMatrix::zeros(ns, ns), |acc, p| acc + &lifted.s[p] * lambda[p]);
    Ok((m, s))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{compressor_example, monotone_n, PlantModel};
    use nalgebra::{dmatrix, DVector};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn swap_n() -> DMatrix<f64> {
        monotone_n()
    }

    fn quad(m: &DMatrix<f64>, v: &DVector<f64>) -> f64 {
        (v.transpose() * m * v)[(0, 0)]
    }

    #[test]
    fn compressor_augmentation() {
        let plant = compressor_example(monotone_n()).validate().unwrap();
        let aug = build_augmented(&plant);
        assert_eq!(aug.a, dmatrix![1.5, -1.0, 0.0; 0.0, 0.0, 0.0; 0.0, 0.0, 0.0]);
        assert_eq!(aug.b2u, dmatrix![0.0, 0.0, 0.0; 1.0, 0.0, 0.0; 0.0, 0.0, 1.0]);
        assert_eq!(aug.b2_chan[0], dmatrix![-1.0, 0.0; 0.0, 0.0; 0.0, 1.0]);
        assert_eq!(aug.c2[0], dmatrix![1.0, 0.0, 0.0; 0.0, 0.0, 0.0]);
        assert_eq!(aug.d2[0], dmatrix![0.0, 0.0, 0.0; 0.0, 1.0, 0.0]);
        assert_eq!(aug.b1[0], dmatrix![0.0; 1.0; 0.0]);
        assert_eq!(aug.c1[0], dmatrix![0.1, 0.0, 0.0]);
    }

    #[test]
    fn no_nonlinearity_reduces_to_plant() {
        let mut p = compressor_example(monotone_n());
        p.nonlinear_channels.clear();
        p.r = DMatrix::identity(2, 2);
        p.g = DMatrix::identity(1, 1);
        let plant = p.validate().unwrap();
        let aug = build_augmented(&plant);
        assert_eq!(aug.a, plant.a);
        assert_eq!(aug.b2u, plant.b2);
        assert!(aug.lifted.is_empty());
    }

    #[test]
    fn smallest_nontrivial_case() {
        let plant = PlantModel {
            a: dmatrix![0.0],
            b2: dmatrix![1.0],
            nonlinear_channels: vec![crate::model::NonlinearChannel {
                b1bar: dmatrix![1.0],
                c1bar: dmatrix![1.0],
                d1bar: dmatrix![0.0],
                n: swap_n(),
                psi: crate::model::Nonlinearity::Polynomial(vec![0.0, 1.0]),
            }],
            uncertainty_channels: vec![],
            r: DMatrix::identity(2, 2),
            g: DMatrix::identity(3, 3),
            x0: DVector::from_vec(vec![1.0]),
            s_epsilon: 1e-6,
        }
        .validate()
        .unwrap();
        let aug = build_augmented(&plant);
        assert_eq!(aug.a, DMatrix::zeros(2, 2));
        assert_eq!(aug.b2_chan[0], DMatrix::identity(2, 2));
    }

    #[test]
    fn lifted_monotone_entries() {
        let l = lift_iqcs(&swap_n(), &DMatrix::identity(2, 2)).unwrap();
        let mut m1 = DMatrix::zeros(4, 4);
        for (r, c, v) in [(0, 2, 1.0), (0, 3, -1.0), (1, 2, -1.0), (1, 3, 1.0)] {
            m1[(r, c)] = v;
            m1[(c, r)] = v;
        }
        assert_eq!(l.m[0], m1);
        let mut m2 = DMatrix::zeros(4, 4);
        m2[(0, 2)] = 1.0;
        m2[(2, 0)] = 1.0;
        assert_eq!(l.m[1], m2);
        let mut m3 = DMatrix::zeros(4, 4);
        m3[(1, 3)] = 1.0;
        m3[(3, 1)] = 1.0;
        assert_eq!(l.m[2], m3);
    }

    #[test]
    fn lift_of_zero_and_identity() {
        let l = lift_iqcs(&DMatrix::zeros(2, 2), &DMatrix::identity(2, 2)).unwrap();
        assert!(l.m.iter().all(|m| m.iter().all(|&v| v == 0.0)));
        let l = lift_iqcs(&DMatrix::identity(2, 2), &DMatrix::identity(2, 2)).unwrap();
        assert_eq!(l.m[1], DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 0.0, 1.0, 0.0])));
        assert!(lift_iqcs(&dmatrix![0.0, 1.0; 0.0, 0.0], &DMatrix::identity(2, 2)).is_err());
    }

    #[test]
    fn reference_multiplier_combination() {
        let l = lift_iqcs(&swap_n(), &DMatrix::identity(3, 3)).unwrap();
        let (m, s) = combine_multipliers(&l, [1.0, 0.1, 0.12]).unwrap();
        let expected = dmatrix![
            0.0, 0.0, 1.1, -1.0;
            0.0, 0.0, -1.0, 1.12;
            1.1, -1.0, 0.0, 0.0;
            -1.0, 1.12, 0.0, 0.0
        ];
        assert!((m - expected).norm() < 1e-15);
        assert!((s - DMatrix::identity(3, 3) * 1.22).norm() < 1e-15);
    }

    #[test]
    fn single_multiplier_and_zero() {
        let l = lift_iqcs(&swap_n(), &DMatrix::identity(2, 2)).unwrap();
        assert_eq!(combine_multipliers(&l, [0.0, 1.0, 0.0]).unwrap().0, l.m[1]);
        assert_eq!(combine_multipliers(&l, [0.0; 3]), Err(AugmentError::AllZeroMultiplier));
    }

    #[test]
    fn scaling_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..200 {
            let a: f64 = rng.random_range(-2.0..2.0);
            let b: f64 = rng.random_range(-2.0..2.0);
            let d: f64 = rng.random_range(-2.0..2.0);
            let n = dmatrix![a, b; b, d];
            let c: f64 = rng.random_range(0.1..10.0);
            let lambda = [rng.random_range(0.0..2.0), rng.random_range(0.0..2.0), rng.random_range(0.1..2.0)];
            let base = lift_iqcs(&n, &DMatrix::identity(2, 2)).unwrap();
            let scaled = lift_iqcs(&(&n * c), &DMatrix::identity(2, 2)).unwrap();
            for p in 0..3 {
                assert!((&scaled.m[p] - &base.m[p] * c).norm() <= 1e-12 * (1.0 + c));
            }
            let lambda_over_c = lambda.map(|l| l / c);
            let lhs = combine_multipliers(&scaled, lambda_over_c).unwrap().0;
            let rhs = combine_multipliers(&base, lambda).unwrap().0;
            assert!((lhs - rhs).norm() <= 1e-12 * (1.0 + c));
        }
    }

    #[test]
    fn quadratic_form_identities() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let n = dmatrix![-0.3, 0.8; 0.8, 0.25];
        let l = lift_iqcs(&n, &DMatrix::identity(2, 2)).unwrap();
        let pair = |x: f64, y: f64| crate::model::pair_form(&n, x, y);
        for _ in 0..1000 {
            let v = DVector::from_fn(4, |_, _| rng.random_range(-3.0..3.0));
            let (mu, mub, nu, nut) = (v[0], v[1], v[2], v[3]);
            assert!((quad(&l.m[0], &v) - pair(mu - mub, nu - nut)).abs() < 1e-12);
            assert!((quad(&l.m[1], &v) - pair(mu, nu)).abs() < 1e-12);
            assert!((quad(&l.m[2], &v) - pair(mub, nut)).abs() < 1e-12);
        }
    }
}
