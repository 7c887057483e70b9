//! Simulation of the detection record under a known field.
//!
//! The simulator propagates the four-variable Gaussian state
//! `(x_at, p_at, x_ph, p_ph)` of an observer who knows the field exactly, and
//! draws each polarimetry outcome around that observer's predicted mean.

use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::gaussian::{BlockPartition, GaussianBelief};
use crate::physics::{OuParams, PhysicsParams};
use crate::SimRng;

pub const X_AT: usize = 0;
pub const P_AT: usize = 1;
pub const X_PH: usize = 2;
pub const P_PH: usize = 3;

/// Default cap on the number of steps in one realization.
pub const DEFAULT_STEP_CAP: u64 = 100_000_000;

/// Variance of the shot-noise term added to each outcome.
pub const SHOT_NOISE_VARIANCE: f64 = 0.5;

/// Outcomes of a simulated run together with the hidden field.
///
/// `true_field[k]` is the field during segment `k`, which starts at `k * tau`.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementRecord {
    pub tau: f64,
    pub outcomes: Vec<f64>,
    pub true_field: Vec<f64>,
    pub seed: u64,
}

impl MeasurementRecord {
    pub fn len(&self) -> usize {
        self.outcomes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outcomes.is_empty()
    }

    pub fn time(&self, k: usize) -> f64 {
        k as f64 * self.tau
    }

    pub fn check(&self) -> Result<()> {
        if self.outcomes.len() != self.true_field.len() {
            return Err(Error::LengthMismatch(format!(
                "{} outcomes but {} field samples",
                self.outcomes.len(),
                self.true_field.len()
            )));
        }
        if let Some(x) = self
            .outcomes
            .iter()
            .chain(&self.true_field)
            .find(|x| !x.is_finite())
        {
            return Err(Error::NonFiniteField(*x));
        }
        Ok(())
    }
}

/// Where the field acting on the atoms comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum FieldSource {
    /// Start from a draw of the prior `N(0, delta_b0^2)` and evolve as an OU
    /// process.
    Ou(OuParams),
    /// Use the given samples, one per segment.
    Trajectory(Vec<f64>),
}

/// Coherent atoms and light: zero mean, `gamma = 1`.
pub fn init_truth() -> GaussianBelief {
    GaussianBelief::diagonal(&[1.0; 4])
}

fn light_partition() -> BlockPartition {
    BlockPartition::new(vec![X_AT, P_AT], vec![X_PH, P_PH], 4).expect("static partition")
}

/// One segment with a given shot-noise sample `chi`.
///
/// The Larmor shift acts before the atom-light coupling, so the outcome mean
/// is `kappa sqrt(tau)` times the already rotated `p_at`.
pub fn step_truth_with_noise(
    state: &GaussianBelief,
    b: f64,
    params: &PhysicsParams,
    chi: f64,
) -> Result<(GaussianBelief, f64)> {
    if state.dim() != 4 {
        return Err(Error::DimensionMismatch {
            expected: 4,
            actual: state.dim(),
            context: "truth state",
        });
    }
    if !b.is_finite() {
        return Err(Error::NonFiniteField(b));
    }
    let mut next = state.clone();
    let x = advance(&mut next, b, params, chi, &light_partition());
    Ok((next, x))
}

pub fn step_truth<R: Rng + ?Sized>(
    state: &GaussianBelief,
    b: f64,
    params: &PhysicsParams,
    rng: &mut R,
) -> Result<(GaussianBelief, f64)> {
    let chi = draw_chi(rng);
    step_truth_with_noise(state, b, params, chi)
}

fn draw_chi<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    let z: f64 = rng.sample(StandardNormal);
    SHOT_NOISE_VARIANCE.sqrt() * z
}

fn advance(
    state: &mut GaussianBelief,
    b: f64,
    params: &PhysicsParams,
    chi: f64,
    part: &BlockPartition,
) -> f64 {
    let kt = params.kappa_sqrt_tau();
    let shifted = state.mean()[P_AT] - params.mu_tau() * b;
    state.set_mean(P_AT, shifted);
    state.shear(X_AT, P_PH, kt);
    state.shear(X_PH, P_AT, kt);
    state.symmetrize();
    let x_meas = state.mean()[X_PH] + chi;
    state.condition_in_place(part, x_meas);
    x_meas
}

/// Number of `tau` steps in `duration`, checked against `cap`.
pub fn step_count(duration: f64, tau: f64, cap: u64) -> Result<usize> {
    if !(duration.is_finite() && duration >= 0.0) {
        return Err(Error::param("duration", "must be finite and >= 0"));
    }
    if !(tau.is_finite() && tau > 0.0) {
        return Err(Error::param("tau", "must be positive"));
    }
    let ratio = duration / tau;
    let steps = ratio.round();
    if (ratio - steps).abs() > 1e-6 * steps.max(1.0) {
        return Err(Error::NonIntegralSteps { duration, tau });
    }
    if steps > cap as f64 {
        return Err(Error::StepCapExceeded {
            steps: steps as u64,
            cap,
        });
    }
    Ok(steps as usize)
}

/// Simulates `duration` seconds of probing with a generator seeded by `seed`.
///
/// Per step the generator is consumed in a fixed order: the field increment
/// (or, on the first step, the prior draw) and then the shot noise.
pub fn run_truth(
    params: &PhysicsParams,
    source: &FieldSource,
    duration: f64,
    seed: u64,
    cap: u64,
) -> Result<MeasurementRecord> {
    let steps = step_count(duration, params.tau, cap)?;
    let mut rng = SimRng::seed_from_u64(seed);
    let mut record = run_truth_steps(params, source, steps, &mut rng)?;
    record.seed = seed;
    Ok(record)
}

pub fn run_truth_steps<R: Rng + ?Sized>(
    params: &PhysicsParams,
    source: &FieldSource,
    steps: usize,
    rng: &mut R,
) -> Result<MeasurementRecord> {
    if let FieldSource::Trajectory(traj) = source {
        if traj.len() < steps {
            return Err(Error::LengthMismatch(format!(
                "trajectory has {} samples, run needs {steps}",
                traj.len()
            )));
        }
    }
    if let FieldSource::Ou(ou) = source {
        ou.validate()?;
    }
    let part = light_partition();
    let mut state = init_truth();
    let mut outcomes = Vec::with_capacity(steps);
    let mut true_field = Vec::with_capacity(steps);
    let mut b = 0.0;
    for k in 0..steps {
        b = match source {
            FieldSource::Ou(_) if k == 0 => {
                let z: f64 = rng.sample(StandardNormal);
                params.delta_b0 * z
            }
            FieldSource::Ou(ou) => ou.step(b, params.tau, rng),
            FieldSource::Trajectory(traj) => traj[k],
        };
        if !b.is_finite() {
            return Err(Error::NonFiniteField(b));
        }
        let chi = draw_chi(rng);
        let x = advance(&mut state, b, params, chi, &part);
        outcomes.push(x);
        true_field.push(b);
    }
    Ok(MeasurementRecord {
        tau: params.tau,
        outcomes,
        true_field,
        seed: 0,
    })
}
