//! Full pipeline at one multiplier point, and the search over multiplier
//! space: a Cartesian grid followed by an optional Nelder–Mead refinement on
//! `(log τ, λ)`.

use std::collections::BTreeMap;
use std::fmt;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::augment::{self, AugmentError, AugmentedPlant, MultiplierPoint};
use crate::loopshift::{self, LoopShiftError};
use crate::model::ValidatedPlant;
use crate::riccati::{self, RiccatiError};
use crate::sfactor::{self, SfactorError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum InfeasibleReason {
    AllZeroMultiplier,
    WrongInertia,
    SingularU11,
    SingularT11,
    D11TooLarge,
    GtauSingular,
    NoStabilizingSolution,
    XNotPSD,
}

impl InfeasibleReason {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::AllZeroMultiplier => "AllZeroMultiplier",
            Self::WrongInertia => "WrongInertia",
            Self::SingularU11 => "SingularU11",
            Self::SingularT11 => "SingularT11",
            Self::D11TooLarge => "D11TooLarge",
            Self::GtauSingular => "GtauSingular",
            Self::NoStabilizingSolution => "NoStabilizingSolution",
            Self::XNotPSD => "XNotPSD",
        }
    }
}

impl fmt::Display for InfeasibleReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Error)]
pub enum SynthesisError {
    #[error("search space is empty: {0}")]
    EmptySearchSpace(String),
    #[error(transparent)]
    Multiplier(#[from] AugmentError),
    #[error("numerical failure: {0}")]
    Numerical(String),
}

/// Per-point diagnostics; filled as far as the pipeline got.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Diagnostics {
    pub pi_counts: Vec<usize>,
    pub det_u11: Vec<f64>,
    pub d11_margins: Vec<f64>,
    pub are_residual: Option<f64>,
    pub closed_loop_spectrum: Vec<Complex64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthesisResult {
    pub point: MultiplierPoint,
    /// (m+2g)×(n+g); `ũ = Kx̃`.
    pub k: DMatrix<f64>,
    pub x: DMatrix<f64>,
    pub v_tau: f64,
    pub diagnostics: Diagnostics,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Infeasibility {
    pub reason: InfeasibleReason,
    pub channel: Option<usize>,
    pub detail: String,
    pub diagnostics: Diagnostics,
}

#[derive(Debug, Clone, PartialEq)]
pub enum PointOutcome {
    Feasible(Box<SynthesisResult>),
    Infeasible(Infeasibility),
}

impl PointOutcome {
    pub fn v_tau(&self) -> Option<f64> {
        match self {
            Self::Feasible(r) => Some(r.v_tau),
            Self::Infeasible(_) => None,
        }
    }

    pub fn reason(&self) -> Option<InfeasibleReason> {
        match self {
            Self::Feasible(_) => None,
            Self::Infeasible(i) => Some(i.reason),
        }
    }
}

/// Runs augment → combine → inertia check → congruence → transform →
/// feedthrough check → loop shift → assemble → Riccati → bound.
pub fn evaluate_point(plant: &ValidatedPlant, point: &MultiplierPoint) -> Result<PointOutcome, SynthesisError> {
    let aug = augment::build_augmented(plant);
    evaluate_augmented(plant, &aug, point)
}

fn evaluate_augmented(
    plant: &ValidatedPlant,
    aug: &AugmentedPlant,
    point: &MultiplierPoint,
) -> Result<PointOutcome, SynthesisError> {
    point.check()?;
    point.check_dims(plant.dims())?;
    let mut diag = Diagnostics::default();
    let infeasible = |reason, channel, detail: String, diag: &Diagnostics| {
        Ok(PointOutcome::Infeasible(Infeasibility { reason, channel, detail, diagnostics: diag.clone() }))
    };
    let numerical = |e: &dyn fmt::Display| SynthesisError::Numerical(e.to_string());

    let mut congs = Vec::with_capacity(aug.lifted.len());
    let mut s2 = Vec::with_capacity(aug.lifted.len());
    for (i, (lifted, &lambda)) in aug.lifted.iter().zip(&point.lambda).enumerate() {
        let (m, s) = match augment::combine_multipliers(lifted, lambda) {
            Ok(v) => v,
            Err(AugmentError::AllZeroMultiplier) => {
                return infeasible(InfeasibleReason::AllZeroMultiplier, Some(i), "lambda = 0".into(), &diag)
            }
            Err(e) => return Err(e.into()),
        };
        s2.push(s);
        let cond = sfactor::check_conditions(&m).map_err(|e| numerical(&e))?;
        diag.pi_counts.push(cond.pi_count);
        diag.det_u11.push(cond.det_u11);
        match sfactor::build_congruence(&m) {
            Ok(c) => congs.push(c),
            Err(e @ SfactorError::WrongInertia { .. }) => {
                return infeasible(InfeasibleReason::WrongInertia, Some(i), e.to_string(), &diag)
            }
            Err(e @ SfactorError::SingularU11 { .. }) => {
                return infeasible(InfeasibleReason::SingularU11, Some(i), e.to_string(), &diag)
            }
            Err(e) => return Err(numerical(&e)),
        }
    }

    let bar = match sfactor::transform_system(aug, &congs) {
        Ok(b) => b,
        Err(e @ SfactorError::SingularT11 { channel }) => {
            return infeasible(InfeasibleReason::SingularT11, Some(channel), e.to_string(), &diag)
        }
        Err(e) => return Err(numerical(&e)),
    };
    for d in &bar.d11 {
        diag.d11_margins.push(loopshift::d11_margin(d).map_err(|e| numerical(&e))?);
    }
    let check = match loopshift::shift(&bar) {
        Ok(c) => c,
        Err(e @ LoopShiftError::D11TooLarge { channel, .. }) => {
            return infeasible(InfeasibleReason::D11TooLarge, Some(channel), e.to_string(), &diag)
        }
        Err(e) => return Err(numerical(&e)),
    };

    let riccati_fail = |e: RiccatiError, diag: &Diagnostics| match e {
        RiccatiError::GtauSingular => infeasible(InfeasibleReason::GtauSingular, None, e.to_string(), diag),
        RiccatiError::NoStabilizingSolution(_) => {
            infeasible(InfeasibleReason::NoStabilizingSolution, None, e.to_string(), diag)
        }
        RiccatiError::XNotPSD(_) => infeasible(InfeasibleReason::XNotPSD, None, e.to_string(), diag),
        RiccatiError::Invalid(_) => Err(numerical(&e)),
    };
    let tau_sys = match riccati::assemble(&check, point, &plant.r, &plant.g) {
        Ok(t) => t,
        Err(e) => return riccati_fail(e, &diag),
    };
    let sol = match riccati::synthesize(&tau_sys, &check) {
        Ok(s) => s,
        Err(e) => return riccati_fail(e, &diag),
    };
    diag.are_residual = Some(sol.residual);
    diag.closed_loop_spectrum = sol.closed_loop_spectrum.clone();

    let s1: Vec<_> = plant.uncertainty_channels.iter().map(|c| c.s.clone()).collect();
    let v_tau = riccati::cost_bound(&sol.x, &point.tau, &s1, &s2, &plant.x0);
    Ok(PointOutcome::Feasible(Box::new(SynthesisResult {
        point: point.clone(),
        k: sol.k,
        x: sol.x,
        v_tau,
        diagnostics: diag,
    })))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchSpec {
    /// Candidate τ values, one list per uncertainty channel.
    pub tau_grid: Vec<Vec<f64>>,
    /// Candidate λ triples, one list per nonlinearity channel.
    pub lambda_grid: Vec<Vec<[f64; 3]>>,
    pub refine: bool,
    pub refine_iters: usize,
    /// Nelder–Mead shrink coefficient.
    pub refine_shrink: f64,
    pub seed: u64,
}

impl Default for SearchSpec {
    fn default() -> Self {
        Self {
            tau_grid: Vec::new(),
            lambda_grid: Vec::new(),
            refine: false,
            refine_iters: 200,
            refine_shrink: 0.5,
            seed: 0,
        }
    }
}

/// Every triple of the product `l1 × l2 × l3`, last component fastest.
pub fn lambda_product(l1: &[f64], l2: &[f64], l3: &[f64]) -> Vec<[f64; 3]> {
    let mut out = Vec::with_capacity(l1.len() * l2.len() * l3.len());
    for &a in l1 {
        for &b in l2 {
            for &c in l3 {
                out.push([a, b, c]);
            }
        }
    }
    out
}

impl SearchSpec {
    /// Grid points in declaration order: τ channels first, last index fastest.
    pub fn grid_points(&self) -> Vec<MultiplierPoint> {
        let tau_sizes: Vec<usize> = self.tau_grid.iter().map(Vec::len).collect();
        let lam_sizes: Vec<usize> = self.lambda_grid.iter().map(Vec::len).collect();
        let sizes: Vec<usize> = tau_sizes.iter().chain(&lam_sizes).copied().collect();
        let total: usize = sizes.iter().product();
        let k = tau_sizes.len();
        let mut points = Vec::with_capacity(total);
        let mut idx = vec![0usize; sizes.len()];
        for _ in 0..total {
            points.push(MultiplierPoint {
                tau: (0..k).map(|j| self.tau_grid[j][idx[j]]).collect(),
                lambda: (0..lam_sizes.len()).map(|i| self.lambda_grid[i][idx[k + i]]).collect(),
            });
            for pos in (0..sizes.len()).rev() {
                idx[pos] += 1;
                if idx[pos] < sizes[pos] {
                    break;
                }
                idx[pos] = 0;
            }
        }
        points
    }

    fn validate(&self, plant: &ValidatedPlant) -> Result<(), SynthesisError> {
        let dims = plant.dims();
        if self.tau_grid.len() != dims.k || self.lambda_grid.len() != dims.g {
            return Err(SynthesisError::EmptySearchSpace(format!(
                "grid has {} tau and {} lambda lists for {} uncertainty and {} nonlinearity channels",
                self.tau_grid.len(),
                self.lambda_grid.len(),
                dims.k,
                dims.g
            )));
        }
        if self.tau_grid.iter().any(Vec::is_empty) || self.lambda_grid.iter().any(Vec::is_empty) {
            return Err(SynthesisError::EmptySearchSpace("a channel has no candidate values".into()));
        }
        if !(self.refine_shrink > 0.0 && self.refine_shrink < 1.0) {
            return Err(SynthesisError::EmptySearchSpace(format!(
                "refine_shrink must lie in (0, 1), got {}",
                self.refine_shrink
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Grid,
    Refine,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceEntry {
    pub point: MultiplierPoint,
    pub stage: Stage,
    pub v_tau: Option<f64>,
    pub reason: Option<InfeasibleReason>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchReport {
    pub best: Option<SynthesisResult>,
    pub evaluated: usize,
    pub feasible: usize,
    pub infeasible_reasons: BTreeMap<InfeasibleReason, usize>,
    pub trace: Vec<TraceEntry>,
}

impl SearchReport {
    fn record(&mut self, point: MultiplierPoint, stage: Stage, outcome: PointOutcome) {
        self.evaluated += 1;
        let entry = TraceEntry { point, stage, v_tau: outcome.v_tau(), reason: outcome.reason() };
        match outcome {
            PointOutcome::Feasible(r) => {
                self.feasible += 1;
                if self.best.as_ref().is_none_or(|b| r.v_tau < b.v_tau) {
                    self.best = Some(*r);
                }
            }
            PointOutcome::Infeasible(i) => *self.infeasible_reasons.entry(i.reason).or_default() += 1,
        }
        self.trace.push(entry);
    }
}

const TAU_FLOOR: f64 = 1e-8;

fn encode(p: &MultiplierPoint) -> Vec<f64> {
    p.tau.iter().map(|t| t.ln()).chain(p.lambda.iter().flatten().copied()).collect()
}

/// Projection onto `τ ≥ 1e-8`, `λ ≥ 0`.
fn decode(v: &[f64], k: usize) -> MultiplierPoint {
    let tau = v[..k].iter().map(|l| l.exp().max(TAU_FLOOR)).collect();
    let lambda = v[k..]
        .chunks(3)
        .map(|c| [c[0].max(0.0), c[1].max(0.0), c[2].max(0.0)])
        .collect();
    MultiplierPoint { tau, lambda }
}

pub fn search(plant: &ValidatedPlant, spec: &SearchSpec) -> Result<SearchReport, SynthesisError> {
    spec.validate(plant)?;
    let aug = augment::build_augmented(plant);
    let points = spec.grid_points();
    let outcomes: Vec<_> = points
        .par_iter()
        .map(|p| evaluate_augmented(plant, &aug, p))
        .collect::<Result<_, _>>()?;

    let mut report = SearchReport {
        best: None,
        evaluated: 0,
        feasible: 0,
        infeasible_reasons: BTreeMap::new(),
        trace: Vec::with_capacity(points.len()),
    };
    for (p, o) in points.into_iter().zip(outcomes) {
        report.record(p, Stage::Grid, o);
    }
    if spec.refine && spec.refine_iters > 0 {
        if let Some(start) = report.best.as_ref().map(|b| b.point.clone()) {
            refine(plant, &aug, spec, &start, &mut report)?;
        }
    }
    Ok(report)
}

fn refine(
    plant: &ValidatedPlant,
    aug: &AugmentedPlant,
    spec: &SearchSpec,
    start: &MultiplierPoint,
    report: &mut SearchReport,
) -> Result<(), SynthesisError> {
    let k = start.tau.len();
    let x0 = encode(start);
    let dim = x0.len();
    if dim == 0 {
        return Ok(());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let eval = |v: &[f64], report: &mut SearchReport| -> Result<f64, SynthesisError> {
        let p = decode(v, k);
        let outcome = evaluate_augmented(plant, aug, &p)?;
        let f = outcome.v_tau().unwrap_or(f64::INFINITY);
        report.record(p, Stage::Refine, outcome);
        Ok(f)
    };

    let f0 = report.best.as_ref().map_or(f64::INFINITY, |b| b.v_tau);
    let mut simplex = vec![(x0.clone(), f0)];
    for d in 0..dim {
        let mut v = x0.clone();
        let jitter = 1.0 + 0.1 * rng.random_range(-1.0..1.0);
        let step = if d < k { 0.5 } else { 0.25 * x0[d].abs().max(0.4) };
        v[d] += step * jitter;
        let f = eval(&v, report)?;
        simplex.push((v, f));
    }

    let (alpha, gamma, rho, sigma) = (1.0, 2.0, 0.5, spec.refine_shrink);
    for _ in 0..spec.refine_iters {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let (best_f, worst_f) = (simplex[0].1, simplex[dim].1);
        let size = simplex[1..]
            .iter()
            .map(|(v, _)| v.iter().zip(&simplex[0].0).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
            .fold(0.0, f64::max);
        if best_f.is_finite() && worst_f.is_finite() && (worst_f - best_f) <= 1e-12 * (1.0 + best_f.abs()) || size < 1e-10 {
            break;
        }
        let centroid: Vec<f64> = (0..dim)
            .map(|d| simplex[..dim].iter().map(|(v, _)| v[d]).sum::<f64>() / dim as f64)
            .collect();
        let along = |t: f64| -> Vec<f64> {
            centroid.iter().zip(&simplex[dim].0).map(|(c, w)| c + t * (c - w)).collect()
        };
        let xr = along(alpha);
        let fr = eval(&xr, report)?;
        if fr < simplex[0].1 {
            let xe = along(gamma);
            let fe = eval(&xe, report)?;
            simplex[dim] = if fe < fr { (xe, fe) } else { (xr, fr) };
        } else if fr < simplex[dim - 1].1 {
            simplex[dim] = (xr, fr);
        } else {
            let (xc, fc) = if fr < simplex[dim].1 {
                let xc = along(rho);
                let fc = eval(&xc, report)?;
                (xc, fc)
            } else {
                let xc = along(-rho);
                let fc = eval(&xc, report)?;
                (xc, fc)
            };
            if fc < fr.min(simplex[dim].1) {
                simplex[dim] = (xc, fc);
            } else {
                let best = simplex[0].0.clone();
                for vertex in simplex.iter_mut().skip(1) {
                    let v: Vec<f64> = best.iter().zip(&vertex.0).map(|(b, x)| b + sigma * (x - b)).collect();
                    let f = eval(&v, report)?;
                    *vertex = (v, f);
                }
            }
        }
    }
    Ok(())
}
