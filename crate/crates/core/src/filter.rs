//! Causal estimation of the field from the detection record alone.
//!
//! The estimator carries a joint Gaussian over `(B, x_at, p_at, x_ph, p_ph)`.
//! Each segment is a predict (Larmor rotation, atom-light coupling, OU
//! damping and diffusion) followed by conditioning on the measured `x_ph`.
//! The covariance flow does not depend on the outcomes.

use crate::error::{Error, Result};
use crate::gaussian::{BlockPartition, GaussianBelief};
use crate::physics::{OuParams, PhysicsParams};
use crate::truth::MeasurementRecord;

/// Coordinate layout shared by the filter and the history-augmented smoother.
#[derive(Debug, Clone)]
pub(crate) struct Layout {
    pub n_history: usize,
    partition: BlockPartition,
}

impl Layout {
    pub const FIELD: usize = 0;

    pub fn new(n_history: usize) -> Self {
        let dim = 5 + n_history;
        let partition = BlockPartition::trailing(dim - 2, dim).expect("static layout");
        Self {
            n_history,
            partition,
        }
    }

    pub fn dim(&self) -> usize {
        5 + self.n_history
    }

    pub fn history(&self, slot: usize) -> usize {
        debug_assert!(slot >= 1 && slot <= self.n_history);
        slot
    }

    pub fn x_at(&self) -> usize {
        self.n_history + 1
    }

    pub fn p_at(&self) -> usize {
        self.n_history + 2
    }

    pub fn x_ph(&self) -> usize {
        self.n_history + 3
    }

    pub fn p_ph(&self) -> usize {
        self.n_history + 4
    }

    pub fn initial(&self, delta_b0: f64) -> GaussianBelief {
        let mut diag = vec![1.0; self.dim()];
        for d in diag.iter_mut().take(1 + self.n_history) {
            *d = 2.0 * delta_b0 * delta_b0;
        }
        GaussianBelief::diagonal(&diag)
    }

    /// Interaction map followed by OU damping and diffusion of the current
    /// field. History coordinates only pick up correlations.
    pub fn predict(&self, belief: &mut GaussianBelief, maps: &StepMaps) {
        // The three shears compose to the 5x5 interaction matrix exactly
        // when x_ph reads p_at before the Larmor shift.
        belief.shear(self.x_ph(), self.p_at(), maps.kappa_sqrt_tau);
        belief.shear(self.p_at(), Self::FIELD, -maps.mu_tau);
        belief.shear(self.x_at(), self.p_ph(), maps.kappa_sqrt_tau);
        belief.scale(Self::FIELD, maps.decay);
        belief.add_gamma_diagonal(Self::FIELD, maps.diffusion);
        belief.symmetrize();
    }

    pub fn update(&self, belief: &mut GaussianBelief, x_meas: f64) {
        belief.condition_in_place(&self.partition, x_meas);
    }
}

/// Scalars of one predict step, precomputed from the parameters.
#[derive(Debug, Clone, Copy)]
pub(crate) struct StepMaps {
    pub kappa_sqrt_tau: f64,
    pub mu_tau: f64,
    pub decay: f64,
    pub diffusion: f64,
}

impl StepMaps {
    pub fn new(params: &PhysicsParams, ou: &OuParams) -> Result<Self> {
        ou.validate()?;
        Ok(Self {
            kappa_sqrt_tau: params.kappa_sqrt_tau(),
            mu_tau: params.mu_tau(),
            decay: ou.first_order_decay(params.tau)?,
            diffusion: ou.gamma_diffusion(params.tau),
        })
    }
}

/// Posterior field estimate after every update.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EstimateTrace {
    /// Time the estimate refers to: `(k + 1) tau` after segment `k`.
    pub times: Vec<f64>,
    pub b_hat: Vec<f64>,
    pub b_var: Vec<f64>,
}

impl EstimateTrace {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    fn push(&mut self, t: f64, belief: &GaussianBelief) {
        self.times.push(t);
        self.b_hat.push(belief.mean()[Layout::FIELD]);
        self.b_var.push(belief.variance(Layout::FIELD));
    }
}

/// Prior: zero mean, `gamma = diag(2 delta_b0^2, 1, 1, 1, 1)`.
pub fn init_filter(delta_b0: f64) -> Result<GaussianBelief> {
    if !(delta_b0.is_finite() && delta_b0 > 0.0) {
        return Err(Error::param("delta_b0", "must be positive"));
    }
    Ok(Layout::new(0).initial(delta_b0))
}

fn check_dim(belief: &GaussianBelief) -> Result<()> {
    if belief.dim() != 5 {
        return Err(Error::DimensionMismatch {
            expected: 5,
            actual: belief.dim(),
            context: "filter state",
        });
    }
    Ok(())
}

pub fn predict(
    belief: &GaussianBelief,
    params: &PhysicsParams,
    ou: &OuParams,
) -> Result<GaussianBelief> {
    check_dim(belief)?;
    let maps = StepMaps::new(params, ou)?;
    let mut next = belief.clone();
    Layout::new(0).predict(&mut next, &maps);
    Ok(next)
}

/// Conditions on an outcome; the innovation is `x_meas` minus the filter's
/// own predicted `x_ph`.
pub fn update(belief: &GaussianBelief, x_meas: f64) -> Result<GaussianBelief> {
    check_dim(belief)?;
    let mut next = belief.clone();
    Layout::new(0).update(&mut next, x_meas);
    Ok(next)
}

pub(crate) fn check_tau(record: &MeasurementRecord, params: &PhysicsParams) -> Result<()> {
    if (record.tau - params.tau).abs() > 1e-12 * params.tau {
        return Err(Error::TauMismatch {
            record: record.tau,
            config: params.tau,
        });
    }
    Ok(())
}

pub fn run_filter(
    record: &MeasurementRecord,
    params: &PhysicsParams,
    ou: &OuParams,
) -> Result<EstimateTrace> {
    record.check()?;
    check_tau(record, params)?;
    let maps = StepMaps::new(params, ou)?;
    let layout = Layout::new(0);
    let mut belief = init_filter(params.delta_b0)?;
    let mut trace = EstimateTrace {
        times: Vec::with_capacity(record.len()),
        b_hat: Vec::with_capacity(record.len()),
        b_var: Vec::with_capacity(record.len()),
    };
    for (k, &x) in record.outcomes.iter().enumerate() {
        layout.predict(&mut belief, &maps);
        layout.update(&mut belief, x);
        trace.push((k + 1) as f64 * params.tau, &belief);
    }
    Ok(trace)
}

/// Filter state after `steps` segments, for any record: the covariance is
/// record independent and the outcomes are taken equal to the predicted
/// means, so the mean stays zero.
pub fn covariance_after(
    params: &PhysicsParams,
    ou: &OuParams,
    steps: usize,
) -> Result<GaussianBelief> {
    let maps = StepMaps::new(params, ou)?;
    let layout = Layout::new(0);
    let mut belief = init_filter(params.delta_b0)?;
    for _ in 0..steps {
        layout.predict(&mut belief, &maps);
        let x = belief.mean()[layout.x_ph()];
        layout.update(&mut belief, x);
    }
    Ok(belief)
}

/// Field variance every `every` steps over `steps` steps, as `(t, var)`.
pub fn variance_curve(
    params: &PhysicsParams,
    ou: &OuParams,
    steps: usize,
    every: usize,
) -> Result<Vec<(f64, f64)>> {
    let every = every.max(1);
    let maps = StepMaps::new(params, ou)?;
    let layout = Layout::new(0);
    let mut belief = init_filter(params.delta_b0)?;
    let mut out = Vec::with_capacity(steps / every + 1);
    for k in 0..steps {
        layout.predict(&mut belief, &maps);
        layout.update(&mut belief, 0.0);
        if (k + 1) % every == 0 {
            out.push(((k + 1) as f64 * params.tau, belief.variance(Layout::FIELD)));
        }
    }
    Ok(out)
}

/// Closed-form variance for a static field after probing for `t`.
pub fn static_variance(delta_b0: f64, kappa_sq: f64, mu: f64, t: f64) -> f64 {
    let v0 = delta_b0 * delta_b0;
    let kt = kappa_sq * t;
    let denom = 1.0
        + kt
        + (2.0 / 3.0) * kappa_sq * mu * mu * v0 * t.powi(3)
        + (1.0 / 6.0) * kappa_sq * kappa_sq * mu * mu * v0 * t.powi(4);
    v0 * (1.0 + kt) / denom
}

/// Late-time asymptote `6 / (kappa^2 mu^2 t^3)` of [`static_variance`].
pub fn static_variance_asymptote(kappa_sq: f64, mu: f64, t: f64) -> f64 {
    6.0 / (kappa_sq * mu * mu * t.powi(3))
}

/// Steady-state field variance for a field whose `gamma_BB` diffuses at rate
/// `q` (so the ordinary variance diffuses at `q / 2`).
pub fn steady_variance_for_gamma_diffusion(kappa_sq: f64, mu: f64, gamma_b: f64, q: f64) -> f64 {
    let kappa = kappa_sq.sqrt();
    let drive = 2.0 * mu * q.sqrt() * kappa;
    let root = (gamma_b * gamma_b + drive).sqrt();
    // root - gamma_b without cancellation
    let gap = drive / (root + gamma_b);
    gap * gap * root / (4.0 * kappa_sq * mu * mu)
}

/// Steady-state variance of the filter for OU parameters `ou`.
///
/// The OU process injects covariance `sigma_b tau` per step, i.e. `gamma_BB`
/// grows by `2 sigma_b tau`; the closed form is evaluated with that rate.
pub fn steady_variance(kappa_sq: f64, mu: f64, ou: &OuParams) -> f64 {
    steady_variance_for_gamma_diffusion(kappa_sq, mu, ou.gamma_b, 2.0 * ou.sigma_b)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FixedPoint {
    pub variance: f64,
    pub steps: usize,
    pub converged: bool,
}

/// Iterates the one-step covariance map until the field variance changes by
/// less than `tol` (relative) over a block of `block` steps.
pub fn steady_variance_fixed_point(
    params: &PhysicsParams,
    ou: &OuParams,
    tol: f64,
    block: usize,
    max_steps: usize,
) -> Result<FixedPoint> {
    let maps = StepMaps::new(params, ou)?;
    let layout = Layout::new(0);
    let mut belief = init_filter(params.delta_b0)?;
    let block = block.max(1);
    let mut steps = 0;
    let mut last = belief.variance(Layout::FIELD);
    while steps < max_steps {
        for _ in 0..block {
            layout.predict(&mut belief, &maps);
            layout.update(&mut belief, 0.0);
        }
        steps += block;
        let v = belief.variance(Layout::FIELD);
        if (v - last).abs() <= tol * v.abs() {
            return Ok(FixedPoint {
                variance: v,
                steps,
                converged: true,
            });
        }
        last = v;
    }
    Ok(FixedPoint {
        variance: last,
        steps,
        converged: false,
    })
}
