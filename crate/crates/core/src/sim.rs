//! Closed-loop simulation of the plant with the copy-of-nonlinearity
//! controller, realized cost, and IQC checks along the trajectory.
//!
//! The controller is `ũ = Kx̃` with `ũ = [u; ν̃; z̄]`, `x̃ = [x; μ̃]` and
//! copy dynamics `μ̃̇ᵢ = ψᵢ(ν̃ᵢ) + z̄ᵢ`, `μ̃(0) = 0`.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::model::{pair_form, ValidatedPlant};

pub const DIVERGENCE_LIMIT: f64 = 1e12;
pub const CONVERGENCE_TOL: f64 = 1e-8;

type Hook = Arc<dyn Fn(f64, usize, &DVector<f64>) -> DVector<f64> + Send + Sync>;

/// How the uncertainty inputs `ξ₁ⱼ` respond to the outputs `ζ₁ⱼ`.
#[derive(Clone)]
pub enum UncertaintyRealization {
    Zero,
    /// `ξ = δ·ζ` on every channel; satisfies the norm-bound IQC for `|δ| ≤ 1`.
    ScaledOutput(f64),
    /// `(t, channel, ζ) ↦ ξ`
    Custom(Hook),
}

impl UncertaintyRealization {
    fn apply(&self, t: f64, channel: usize, zeta: &DVector<f64>, p: usize) -> DVector<f64> {
        match self {
            Self::Zero => DVector::zeros(p),
            Self::ScaledOutput(delta) => {
                let mut xi = DVector::zeros(p);
                let k = p.min(zeta.len());
                xi.rows_mut(0, k).copy_from(&(zeta.rows(0, k) * *delta));
                xi
            }
            Self::Custom(f) => f(t, channel, zeta),
        }
    }
}

impl fmt::Debug for UncertaintyRealization {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Zero => f.write_str("Zero"),
            Self::ScaledOutput(d) => write!(f, "ScaledOutput({d})"),
            Self::Custom(_) => f.write_str("Custom(..)"),
        }
    }
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid step: dt = {dt}, t_final = {t_final}")]
    InvalidStep { dt: f64, t_final: f64 },
    #[error("gain is {got:?}, expected {expected:?}")]
    GainShape { expected: (usize, usize), got: (usize, usize) },
    #[error("initial state has length {got}, expected {expected}")]
    InitialState { expected: usize, got: usize },
    #[error("custom realization returned {got} values for channel {}, expected {expected}", .channel + 1)]
    RealizationShape { channel: usize, expected: usize, got: usize },
    #[error("state diverged at t = {t}")]
    Diverged { t: f64, partial: Box<Trajectory> },
}

/// Uniformly sampled closed-loop signals; every series has one entry per
/// time sample.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trajectory {
    pub t: Vec<f64>,
    pub x: Vec<DVector<f64>>,
    pub mu_tilde: Vec<DVector<f64>>,
    pub u: Vec<DVector<f64>>,
    pub nu: Vec<DVector<f64>>,
    pub nu_tilde: Vec<DVector<f64>>,
    pub zbar: Vec<DVector<f64>>,
    /// `ψ(ν)`
    pub mu: Vec<DVector<f64>>,
    /// `ψ(ν̃)`
    pub mu_bar: Vec<DVector<f64>>,
    /// Uncertainty inputs and outputs, channels concatenated.
    pub xi1: Vec<DVector<f64>>,
    pub zeta1: Vec<DVector<f64>>,
    pub running_cost: Vec<f64>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    /// Norm of `x̃ = [x; μ̃]` at the last sample.
    pub fn final_state_norm(&self) -> f64 {
        match (self.x.last(), self.mu_tilde.last()) {
            (Some(x), Some(m)) => (x.norm_squared() + m.norm_squared()).sqrt(),
            _ => 0.0,
        }
    }

    pub fn converged(&self) -> bool {
        self.final_state_norm() < CONVERGENCE_TOL
    }

    /// The stacked control `ũ = [u; ν̃; z̄]` at sample `k`.
    pub fn u_aug(&self, k: usize) -> DVector<f64> {
        stack(&[&self.u[k], &self.nu_tilde[k], &self.zbar[k]])
    }

    pub fn x_aug(&self, k: usize) -> DVector<f64> {
        stack(&[&self.x[k], &self.mu_tilde[k]])
    }
}

fn stack(parts: &[&DVector<f64>]) -> DVector<f64> {
    DVector::from_iterator(parts.iter().map(|p| p.len()).sum(), parts.iter().flat_map(|p| p.iter().copied()))
}

struct Signals {
    u: DVector<f64>,
    nu: DVector<f64>,
    nu_tilde: DVector<f64>,
    zbar: DVector<f64>,
    mu: DVector<f64>,
    mu_bar: DVector<f64>,
    xi1: DVector<f64>,
    zeta1: DVector<f64>,
    deriv: DVector<f64>,
}

struct Loop<'a> {
    plant: &'a ValidatedPlant,
    k: &'a DMatrix<f64>,
    realization: &'a UncertaintyRealization,
}

impl Loop<'_> {
    /// Signals and state derivative at packed state `[x; μ̃; J]`.
    fn eval(&self, t: f64, s: &DVector<f64>) -> Result<Signals, SimError> {
        let p = self.plant;
        let dims = p.dims();
        let (n, m, g) = (dims.n, dims.m, dims.g);
        let x = s.rows(0, n).into_owned();
        let xa = s.rows(0, n + g).into_owned();
        let ua = self.k * &xa;
        let u = ua.rows(0, m).into_owned();
        let nu_tilde = ua.rows(m, g).into_owned();
        let zbar = ua.rows(m + g, g).into_owned();

        let mut nu = DVector::zeros(g);
        let mut mu = DVector::zeros(g);
        let mut mu_bar = DVector::zeros(g);
        let mut xdot = &p.a * &x + &p.b2 * &u;
        for (i, ch) in p.nonlinear_channels.iter().enumerate() {
            nu[i] = (&ch.c1bar * &x + &ch.d1bar * &u)[0];
            mu[i] = ch.psi.eval(nu[i]);
            mu_bar[i] = ch.psi.eval(nu_tilde[i]);
            xdot += &ch.b1bar * mu[i];
        }
        let mut xi_parts = Vec::new();
        let mut zeta_parts = Vec::new();
        for (j, ch) in p.uncertainty_channels.iter().enumerate() {
            let zeta = &ch.c1 * &x + &ch.d1 * &u;
            let xi = self.realization.apply(t, j, &zeta, ch.input_dim());
            if xi.len() != ch.input_dim() {
                return Err(SimError::RealizationShape { channel: j, expected: ch.input_dim(), got: xi.len() });
            }
            xdot += &ch.b1 * &xi;
            xi_parts.push(xi);
            zeta_parts.push(zeta);
        }
        let cost_rate = (xa.transpose() * &p.r * &xa)[0] + (ua.transpose() * &p.g * &ua)[0];

        let mut deriv = DVector::zeros(n + g + 1);
        deriv.rows_mut(0, n).copy_from(&xdot);
        deriv.rows_mut(n, g).copy_from(&(&mu_bar + &zbar));
        deriv[n + g] = cost_rate;
        Ok(Signals {
            u,
            nu,
            nu_tilde,
            zbar,
            mu,
            mu_bar,
            xi1: stack(&xi_parts.iter().collect::<Vec<_>>()),
            zeta1: stack(&zeta_parts.iter().collect::<Vec<_>>()),
            deriv,
        })
    }
}

fn push(traj: &mut Trajectory, t: f64, s: &DVector<f64>, sig: Signals, n: usize, g: usize) {
    traj.t.push(t);
    traj.x.push(s.rows(0, n).into_owned());
    traj.mu_tilde.push(s.rows(n, g).into_owned());
    traj.running_cost.push(s[n + g]);
    traj.u.push(sig.u);
    traj.nu.push(sig.nu);
    traj.nu_tilde.push(sig.nu_tilde);
    traj.zbar.push(sig.zbar);
    traj.mu.push(sig.mu);
    traj.mu_bar.push(sig.mu_bar);
    traj.xi1.push(sig.xi1);
    traj.zeta1.push(sig.zeta1);
}

/// Fixed-step classical RK4 on `[x; μ̃; J]` over `round(t_final/dt)` steps.
pub fn simulate(
    plant: &ValidatedPlant,
    k: &DMatrix<f64>,
    x0: &DVector<f64>,
    realization: &UncertaintyRealization,
    dt: f64,
    t_final: f64,
) -> Result<Trajectory, SimError> {
    let dims = plant.dims();
    let (n, g) = (dims.n, dims.g);
    if !(dt > 0.0 && dt.is_finite() && t_final.is_finite() && t_final >= dt * (1.0 - 1e-9)) {
        return Err(SimError::InvalidStep { dt, t_final });
    }
    if k.shape() != (dims.nu(), dims.nx()) {
        return Err(SimError::GainShape { expected: (dims.nu(), dims.nx()), got: k.shape() });
    }
    if x0.len() != n {
        return Err(SimError::InitialState { expected: n, got: x0.len() });
    }
    let steps = ((t_final / dt).round() as usize).max(1);
    let lp = Loop { plant, k, realization };

    let mut s = DVector::zeros(n + g + 1);
    s.rows_mut(0, n).copy_from(x0);
    let mut traj = Trajectory::default();
    let mut sig = lp.eval(0.0, &s)?;
    for step in 0..steps {
        let t = step as f64 * dt;
        let k1 = sig.deriv.clone();
        push(&mut traj, t, &s, sig, n, g);
        let k2 = lp.eval(t + 0.5 * dt, &(&s + &k1 * (0.5 * dt)))?.deriv;
        let k3 = lp.eval(t + 0.5 * dt, &(&s + &k2 * (0.5 * dt)))?.deriv;
        let k4 = lp.eval(t + dt, &(&s + &k3 * dt))?.deriv;
        s += (k1 + (k2 + k3) * 2.0 + k4) * (dt / 6.0);
        let t_next = (step + 1) as f64 * dt;
        if s.iter().any(|v| !v.is_finite() || v.abs() > DIVERGENCE_LIMIT) {
            return Err(SimError::Diverged { t: t_next, partial: Box::new(traj) });
        }
        sig = lp.eval(t_next, &s)?;
    }
    push(&mut traj, steps as f64 * dt, &s, sig, n, g);
    Ok(traj)
}

/// `∫ x̃ᵀRx̃ + ũᵀGũ dt` recomputed from the stored samples (trapezoid rule).
pub fn realized_cost(traj: &Trajectory, r: &DMatrix<f64>, g: &DMatrix<f64>) -> f64 {
    let rate = |k: usize| {
        let xa = traj.x_aug(k);
        let ua = traj.u_aug(k);
        (xa.transpose() * r * &xa)[0] + (ua.transpose() * g * &ua)[0]
    };
    (1..traj.len())
        .map(|k| 0.5 * (traj.t[k] - traj.t[k - 1]) * (rate(k) + rate(k - 1)))
        .sum()
}

/// Worst (most negative) value of each constraint along a trajectory.
///
/// Integral constraints report the minimum over horizon endpoints of the
/// accumulated integrand plus the initial-condition term; the pairwise
/// constraint reports the minimum pairwise quadratic form over sampled time
/// pairs (plant channel against itself and against its copy).
#[derive(Debug, Clone, PartialEq)]
pub struct IqcReport {
    pub pairwise: Vec<f64>,
    pub uncertainty: Vec<f64>,
    /// Difference, plant-channel and copy-channel constraints per channel.
    pub copy: Vec<[f64; 3]>,
}

impl IqcReport {
    pub fn worst(&self) -> f64 {
        self.pairwise
            .iter()
            .chain(&self.uncertainty)
            .chain(self.copy.iter().flatten())
            .copied()
            .fold(f64::INFINITY, f64::min)
    }
}

const PAIR_SAMPLES: usize = 400;

pub fn check_trajectory_iqcs(traj: &Trajectory, plant: &ValidatedPlant) -> IqcReport {
    let len = traj.len();
    let x0 = traj.x.first().cloned().unwrap_or_else(|| DVector::zeros(plant.dims().n));
    let x0_energy = plant.s_epsilon * x0.norm_squared();

    let accumulate = |f: &dyn Fn(usize) -> f64, init: f64| -> f64 {
        let mut acc = init;
        let mut worst = init;
        for k in 1..len {
            acc += 0.5 * (traj.t[k] - traj.t[k - 1]) * (f(k) + f(k - 1));
            worst = worst.min(acc);
        }
        worst
    };

    let mut pairwise = Vec::new();
    let mut copy = Vec::new();
    for (i, ch) in plant.nonlinear_channels.iter().enumerate() {
        let stride = (len / PAIR_SAMPLES).max(1);
        let mut samples: Vec<(f64, f64)> = (0..len)
            .step_by(stride)
            .flat_map(|k| [(traj.nu[k][i], traj.mu[k][i]), (traj.nu_tilde[k][i], traj.mu_bar[k][i])])
            .collect();
        // sparse random pairs from the full trajectory catch what the stride skips
        let mut rng = ChaCha8Rng::seed_from_u64(0x7061_6972);
        for _ in 0..len.min(2 * PAIR_SAMPLES) {
            let k = rng.random_range(0..len);
            samples.push((traj.nu[k][i], traj.mu[k][i]));
        }
        let mut worst = f64::INFINITY;
        for (a, &(nu_a, mu_a)) in samples.iter().enumerate() {
            for &(nu_b, mu_b) in &samples[a + 1..] {
                worst = worst.min(pair_form(&ch.n, mu_a - mu_b, nu_a - nu_b));
            }
        }
        pairwise.push(if worst.is_finite() { worst } else { 0.0 });

        let diff = |k: usize| {
            pair_form(&ch.n, traj.mu[k][i] - traj.mu_bar[k][i], traj.nu[k][i] - traj.nu_tilde[k][i])
        };
        let plant_ch = |k: usize| pair_form(&ch.n, traj.mu[k][i], traj.nu[k][i]);
        let copy_ch = |k: usize| pair_form(&ch.n, traj.mu_bar[k][i], traj.nu_tilde[k][i]);
        copy.push([
            accumulate(&diff, x0_energy),
            accumulate(&plant_ch, x0_energy),
            accumulate(&copy_ch, x0_energy),
        ]);
    }

    let mut uncertainty = Vec::new();
    let (mut xi_off, mut zeta_off) = (0, 0);
    for ch in &plant.uncertainty_channels {
        let (p, q) = (ch.input_dim(), ch.output_dim());
        let form = |k: usize| {
            let v = stack(&[
                &traj.xi1[k].rows(xi_off, p).into_owned(),
                &traj.zeta1[k].rows(zeta_off, q).into_owned(),
            ]);
            (v.transpose() * &ch.m * &v)[0]
        };
        let init = (x0.transpose() * &ch.s * &x0)[0];
        uncertainty.push(accumulate(&form, init));
        xi_off += p;
        zeta_off += q;
    }
    IqcReport { pairwise, uncertainty, copy }
}
