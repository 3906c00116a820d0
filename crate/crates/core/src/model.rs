//! The uncertain nonlinear plant: linear dynamics, scalar nonlinearity
//! channels with generalized monotonicity, and norm-bounded uncertainty
//! channels.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::linalg;

/// Default scale `ε` of the initial-condition matrices `ε·I`.
pub const DEFAULT_S_EPSILON: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("dimension mismatch in {field}: expected {expected}, got {got}")]
    DimensionMismatch { field: String, expected: String, got: String },
    #[error("{field} is not symmetric")]
    NotSymmetric { field: String },
    #[error("{field} is not positive definite")]
    NotPositiveDefinite { field: String },
    #[error("nonlinearity of channel {} has a nonzero constant term", .channel + 1)]
    ConstantTermInPsi { channel: usize },
    #[error("uncertainty channel {}: M must be diag(-I, I) (norm-bounded form)", .channel + 1)]
    UnsupportedUncertaintyIqc { channel: usize },
    #[error("{field} contains a non-finite value")]
    NonFinite { field: String },
    #[error("initial-condition scale must be positive and finite, got {0}")]
    InvalidEpsilon(f64),
}

/// A scalar memoryless nonlinearity `μ = ψ(ν)`.
#[derive(Clone)]
pub enum Nonlinearity {
    /// Ascending coefficients `[c₀, c₁, …, c_d]`; `c₀` must be zero.
    Polynomial(Vec<f64>),
    /// Arbitrary function, for simulation-only use at the library boundary.
    Function(Arc<dyn Fn(f64) -> f64 + Send + Sync>),
}

impl Nonlinearity {
    pub fn eval(&self, nu: f64) -> f64 {
        match self {
            Nonlinearity::Polynomial(c) => c.iter().rev().fold(0.0, |acc, &ci| acc * nu + ci),
            Nonlinearity::Function(f) => f(nu),
        }
    }

    pub fn zero() -> Self {
        Nonlinearity::Polynomial(vec![0.0])
    }
}

impl fmt::Debug for Nonlinearity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Nonlinearity::Polynomial(c) => f.debug_tuple("Polynomial").field(c).finish(),
            Nonlinearity::Function(_) => f.write_str("Function(..)"),
        }
    }
}

impl PartialEq for Nonlinearity {
    fn eq(&self, other: &Self) -> bool {
        match (self, other) {
            (Nonlinearity::Polynomial(a), Nonlinearity::Polynomial(b)) => a == b,
            (Nonlinearity::Function(a), Nonlinearity::Function(b)) => Arc::ptr_eq(a, b),
            _ => false,
        }
    }
}

/// Scalar nonlinearity channel: `μ = ψ(ν)`, `ν = C̄₁x + D̄₁u`, entering the
/// state through `B̄₁`, with the pairwise quadratic constraint `N`.
#[derive(Debug, Clone, PartialEq)]
pub struct NonlinearChannel {
    /// n×1
    pub b1bar: DMatrix<f64>,
    /// 1×n
    pub c1bar: DMatrix<f64>,
    /// 1×m
    pub d1bar: DMatrix<f64>,
    /// 2×2 symmetric, acting on `[Δψ, Δν]`.
    pub n: DMatrix<f64>,
    pub psi: Nonlinearity,
}

/// Uncertainty channel `ξ = φ(ζ)`, `ζ = Č₁x + Ď₁u`, entering through `B̌₁`,
/// with the integral constraint `∫[ξ;ζ]ᵀM[ξ;ζ] + x₀ᵀSx₀ ≥ 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct UncertaintyChannel {
    /// n×p
    pub b1: DMatrix<f64>,
    /// q×n
    pub c1: DMatrix<f64>,
    /// q×m
    pub d1: DMatrix<f64>,
    /// (p+q)×(p+q)
    pub m: DMatrix<f64>,
    /// n×n positive definite
    pub s: DMatrix<f64>,
}

impl UncertaintyChannel {
    pub fn input_dim(&self) -> usize {
        self.b1.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.c1.nrows()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlantModel {
    pub a: DMatrix<f64>,
    pub b2: DMatrix<f64>,
    pub nonlinear_channels: Vec<NonlinearChannel>,
    pub uncertainty_channels: Vec<UncertaintyChannel>,
    /// State weight on `[x; μ̃]`, (n+g)×(n+g).
    pub r: DMatrix<f64>,
    /// Control weight on `[u; ν̃; z̄]`, (m+2g)×(m+2g).
    pub g: DMatrix<f64>,
    pub x0: DVector<f64>,
    /// Scale of the default initial-condition matrices of the copy IQCs.
    pub s_epsilon: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dims {
    /// plant states
    pub n: usize,
    /// plant inputs
    pub m: usize,
    /// nonlinearity channels
    pub g: usize,
    /// uncertainty channels
    pub k: usize,
}

impl Dims {
    /// Augmented state dimension `n + g`.
    pub fn nx(&self) -> usize {
        self.n + self.g
    }

    /// Augmented control dimension `m + 2g`.
    pub fn nu(&self) -> usize {
        self.m + 2 * self.g
    }
}

/// A plant whose dimensional, symmetry and definiteness invariants hold.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidatedPlant {
    plant: PlantModel,
    dims: Dims,
}

impl ValidatedPlant {
    pub fn plant(&self) -> &PlantModel {
        &self.plant
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn into_inner(self) -> PlantModel {
        self.plant
    }
}

impl std::ops::Deref for ValidatedPlant {
    type Target = PlantModel;

    fn deref(&self) -> &PlantModel {
        &self.plant
    }
}

fn shape(m: &DMatrix<f64>) -> String {
    format!("{}x{}", m.nrows(), m.ncols())
}

fn expect_shape(field: &str, m: &DMatrix<f64>, rows: usize, cols: usize) -> Result<(), ModelError> {
    if m.nrows() != rows || m.ncols() != cols {
        return Err(ModelError::DimensionMismatch {
            field: field.to_string(),
            expected: format!("{rows}x{cols}"),
            got: shape(m),
        });
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(ModelError::NonFinite { field: field.to_string() });
    }
    Ok(())
}

fn expect_symmetric(field: &str, m: &DMatrix<f64>) -> Result<(), ModelError> {
    linalg::symmetrize_checked(m)
        .map(|_| ())
        .map_err(|_| ModelError::NotSymmetric { field: field.to_string() })
}

fn expect_pos_def(field: &str, m: &DMatrix<f64>) -> Result<(), ModelError> {
    expect_symmetric(field, m)?;
    match linalg::is_pos_def(m, 0.0) {
        Ok(true) => Ok(()),
        _ => Err(ModelError::NotPositiveDefinite { field: field.to_string() }),
    }
}

impl PlantModel {
    pub fn validate(self) -> Result<ValidatedPlant, ModelError> {
        validate(self)
    }
}

/// Checks every dimensional and definiteness invariant of the plant.
pub fn validate(plant: PlantModel) -> Result<ValidatedPlant, ModelError> {
    let n = plant.a.nrows();
    expect_shape("A", &plant.a, n, n)?;
    let m = plant.b2.ncols();
    expect_shape("B2", &plant.b2, n, m)?;
    let g = plant.nonlinear_channels.len();
    let k = plant.uncertainty_channels.len();

    if !(plant.s_epsilon.is_finite() && plant.s_epsilon > 0.0) {
        return Err(ModelError::InvalidEpsilon(plant.s_epsilon));
    }

    for (i, ch) in plant.nonlinear_channels.iter().enumerate() {
        expect_shape(&format!("nonlinear_channels[{i}].B1bar"), &ch.b1bar, n, 1)?;
        expect_shape(&format!("nonlinear_channels[{i}].C1bar"), &ch.c1bar, 1, n)?;
        expect_shape(&format!("nonlinear_channels[{i}].D1bar"), &ch.d1bar, 1, m)?;
        let field = format!("nonlinear_channels[{i}].N");
        expect_shape(&field, &ch.n, 2, 2)?;
        expect_symmetric(&field, &ch.n)?;
        if let Nonlinearity::Polynomial(c) = &ch.psi {
            if c.iter().any(|v| !v.is_finite()) {
                return Err(ModelError::NonFinite { field: format!("nonlinear_channels[{i}].psi") });
            }
            if c.first().is_some_and(|&c0| c0 != 0.0) {
                return Err(ModelError::ConstantTermInPsi { channel: i });
            }
        }
    }

    for (j, ch) in plant.uncertainty_channels.iter().enumerate() {
        let p = ch.b1.ncols();
        let q = ch.c1.nrows();
        expect_shape(&format!("uncertainty_channels[{j}].B1"), &ch.b1, n, p)?;
        expect_shape(&format!("uncertainty_channels[{j}].C1"), &ch.c1, q, n)?;
        expect_shape(&format!("uncertainty_channels[{j}].D1"), &ch.d1, q, m)?;
        let field = format!("uncertainty_channels[{j}].M");
        expect_shape(&field, &ch.m, p + q, p + q)?;
        expect_symmetric(&field, &ch.m)?;
        let field = format!("uncertainty_channels[{j}].S");
        expect_shape(&field, &ch.s, n, n)?;
        expect_pos_def(&field, &ch.s)?;
        let mut normalized = DMatrix::<f64>::identity(p + q, p + q);
        for d in 0..p {
            normalized[(d, d)] = -1.0;
        }
        if (&ch.m - normalized).norm() > 1e-12 {
            return Err(ModelError::UnsupportedUncertaintyIqc { channel: j });
        }
    }

    expect_shape("R", &plant.r, n + g, n + g)?;
    expect_pos_def("R", &plant.r)?;
    expect_shape("G", &plant.g, m + 2 * g, m + 2 * g)?;
    expect_pos_def("G", &plant.g)?;
    if plant.x0.len() != n {
        return Err(ModelError::DimensionMismatch {
            field: "x0".into(),
            expected: n.to_string(),
            got: plant.x0.len().to_string(),
        });
    }
    if plant.x0.iter().any(|v| !v.is_finite()) {
        return Err(ModelError::NonFinite { field: "x0".into() });
    }

    Ok(ValidatedPlant { plant, dims: Dims { n, m, g, k } })
}

/// `ψ_i(ν)` for the channel.
pub fn eval_psi(channel: &NonlinearChannel, nu: f64) -> f64 {
    channel.psi.eval(nu)
}

/// Quadratic form `[Δψ Δν]·N·[Δψ; Δν]`.
pub fn pair_form(n: &DMatrix<f64>, dpsi: f64, dnu: f64) -> f64 {
    n[(0, 0)] * dpsi * dpsi + (n[(0, 1)] + n[(1, 0)]) * dpsi * dnu + n[(1, 1)] * dnu * dnu
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MonotonicityViolation {
    pub nu1: f64,
    pub nu2: f64,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MonotonicityReport {
    pub samples: usize,
    pub violations: Vec<MonotonicityViolation>,
}

impl MonotonicityReport {
    pub fn is_consistent(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Tolerance on the pairwise quadratic form.
pub const MONOTONICITY_TOL: f64 = 1e-12;

/// Samples `samples` pairs uniformly from `range` (fixed seed) and reports
/// every pair whose quadratic form falls below `-1e-12`.
pub fn check_monotonicity(channel: &NonlinearChannel, samples: usize, range: (f64, f64)) -> MonotonicityReport {
    let mut rng = ChaCha8Rng::seed_from_u64(0x6d6f6e6f);
    let (lo, hi) = if range.0 <= range.1 { range } else { (range.1, range.0) };
    let mut violations = Vec::new();
    for _ in 0..samples {
        let (nu1, nu2) = if hi > lo {
            (rng.random_range(lo..=hi), rng.random_range(lo..=hi))
        } else {
            (lo, lo)
        };
        let value = pair_form(&channel.n, eval_psi(channel, nu1) - eval_psi(channel, nu2), nu1 - nu2);
        if value < -MONOTONICITY_TOL {
            violations.push(MonotonicityViolation { nu1, nu2, value });
        }
    }
    MonotonicityReport { samples, violations }
}

/// The axial compressor surge model with a monotone-ized cubic, one
/// nonlinearity channel and one matched uncertainty channel, `R = I`, `G = I`.
pub fn compressor_example(n_matrix: DMatrix<f64>) -> PlantModel {
    let eps = DEFAULT_S_EPSILON;
    PlantModel {
        a: DMatrix::from_row_slice(2, 2, &[1.5, -1.0, 0.0, 0.0]),
        b2: DMatrix::from_row_slice(2, 1, &[0.0, 1.0]),
        nonlinear_channels: vec![NonlinearChannel {
            b1bar: DMatrix::from_row_slice(2, 1, &[-1.0, 0.0]),
            c1bar: DMatrix::from_row_slice(1, 2, &[1.0, 0.0]),
            d1bar: DMatrix::zeros(1, 1),
            n: n_matrix,
            psi: Nonlinearity::Polynomial(vec![0.0, 1.5, 1.5, 0.5]),
        }],
        uncertainty_channels: vec![UncertaintyChannel {
            b1: DMatrix::from_row_slice(2, 1, &[0.0, 1.0]),
            c1: DMatrix::from_row_slice(1, 2, &[0.1, 0.0]),
            d1: DMatrix::zeros(1, 1),
            m: DMatrix::from_row_slice(2, 2, &[-1.0, 0.0, 0.0, 1.0]),
            s: DMatrix::identity(2, 2) * eps,
        }],
        r: DMatrix::identity(3, 3),
        g: DMatrix::identity(3, 3),
        x0: DVector::from_vec(vec![1.0, 0.0]),
        s_epsilon: eps,
    }
}

/// `N` for a plain monotone (slope ≥ 0) nonlinearity.
pub fn monotone_n() -> DMatrix<f64> {
    DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0])
}

/// `N` for chord slopes in `[0, max_slope]`: `2ΔψΔν − (2/max_slope)Δψ² ≥ 0`.
pub fn slope_bounded_n(max_slope: f64) -> DMatrix<f64> {
    DMatrix::from_row_slice(2, 2, &[-2.0 / max_slope, 1.0, 1.0, 0.0])
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn compressor() -> PlantModel {
        compressor_example(monotone_n())
    }

    #[test]
    fn compressor_validates() {
        let v = compressor().validate().unwrap();
        assert_eq!(v.dims(), Dims { n: 2, m: 1, g: 1, k: 1 });
    }

    #[test]
    fn validate_is_idempotent() {
        let v = compressor().validate().unwrap();
        let again = v.clone().into_inner().validate().unwrap();
        assert_eq!(v, again);
    }

    #[test]
    fn wrong_cost_weight_dimension() {
        let mut p = compressor();
        p.r = DMatrix::identity(2, 2);
        assert!(matches!(p.validate(), Err(ModelError::DimensionMismatch { field, .. }) if field == "R"));
    }

    #[test]
    fn constant_term_rejected() {
        let mut p = compressor();
        p.nonlinear_channels[0].psi = Nonlinearity::Polynomial(vec![0.1, 1.0]);
        assert_eq!(p.validate(), Err(ModelError::ConstantTermInPsi { channel: 0 }));
    }

    #[test]
    fn indefinite_weight_rejected() {
        let mut p = compressor();
        p.g[(1, 1)] = -1.0;
        assert!(matches!(p.validate(), Err(ModelError::NotPositiveDefinite { .. })));
        let mut p = compressor();
        p.uncertainty_channels[0].s = DMatrix::zeros(2, 2);
        assert!(matches!(p.validate(), Err(ModelError::NotPositiveDefinite { .. })));
    }

    #[test]
    fn asymmetric_n_rejected() {
        let mut p = compressor();
        p.nonlinear_channels[0].n = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
        assert!(matches!(p.validate(), Err(ModelError::NotSymmetric { .. })));
    }

    #[test]
    fn non_normalized_uncertainty_iqc_rejected() {
        let mut p = compressor();
        p.uncertainty_channels[0].m = DMatrix::from_row_slice(2, 2, &[-1.0, 0.0, 0.0, 4.0]);
        assert_eq!(p.validate(), Err(ModelError::UnsupportedUncertaintyIqc { channel: 0 }));
    }

    #[test]
    fn psi_values() {
        let ch = &compressor().nonlinear_channels[0];
        assert_eq!(eval_psi(ch, 1.0), 3.5);
        assert_eq!(eval_psi(ch, 0.0), 0.0);
        assert_eq!(eval_psi(ch, -1.0), -0.5);
    }

    #[test]
    fn compressor_nonlinearity_is_monotone() {
        let ch = &compressor().nonlinear_channels[0];
        let report = check_monotonicity(ch, 10_000, (-5.0, 5.0));
        assert!(report.is_consistent(), "{:?}", &report.violations[..1]);
    }

    #[test]
    fn decreasing_nonlinearity_violates() {
        let mut ch = compressor().nonlinear_channels[0].clone();
        ch.psi = Nonlinearity::Polynomial(vec![0.0, -1.0]);
        assert!(!check_monotonicity(&ch, 100, (-1.0, 1.0)).is_consistent());
    }

    #[test]
    fn zero_nonlinearity_is_consistent() {
        let mut ch = compressor().nonlinear_channels[0].clone();
        ch.psi = Nonlinearity::zero();
        ch.n = DMatrix::from_row_slice(2, 2, &[-3.0, 0.4, 0.4, 0.5]);
        assert!(check_monotonicity(&ch, 1000, (-2.0, 2.0)).is_consistent());
    }

    #[test]
    fn slope_bounded_cubic_holds_locally_only() {
        let mut ch = compressor().nonlinear_channels[0].clone();
        ch.n = slope_bounded_n(10.0);
        // ψ'(ν) = 1.5(ν+1)² ≤ 10 on |ν+1| ≤ 2.58
        assert!(check_monotonicity(&ch, 10_000, (-3.5, 1.5)).is_consistent());
        assert!(!check_monotonicity(&ch, 10_000, (-5.0, 5.0)).is_consistent());
    }

    proptest! {
        #[test]
        fn horner_matches_power_sum(
            coeffs in proptest::collection::vec(-5.0f64..5.0, 1..7),
            nu in -10.0f64..10.0,
        ) {
            let mut c = coeffs.clone();
            c[0] = 0.0;
            let naive: f64 = c.iter().enumerate().map(|(p, ci)| ci * nu.powi(p as i32)).sum();
            let scale: f64 = c.iter().enumerate().map(|(p, ci)| (ci * nu.powi(p as i32)).abs()).sum();
            let horner = Nonlinearity::Polynomial(c).eval(nu);
            prop_assert!((horner - naive).abs() <= 1e-13 * scale.max(1.0));
        }
    }
}
