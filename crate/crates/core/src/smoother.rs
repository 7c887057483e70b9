//! Fixed-lag smoothing by state augmentation.
//!
//! Past field values are appended to the filter state as extra Gaussian
//! coordinates. They do not evolve; every `slot_stride` steps the history is
//! pushed one slot towards the past and the newest slot receives a copy of
//! the current field. Later measurements then refine the stored values
//! through their correlations with the atoms.
//!
//! Coordinates: `(B_now, B(t - D), ..., B(t - n D), x_at, p_at, x_ph, p_ph)`
//! with `D = slot_stride * tau`.

use crate::error::{Error, Result};
use crate::filter::{check_tau, init_filter, Layout, StepMaps};
use crate::gaussian::GaussianBelief;
use crate::physics::{OuParams, PhysicsParams};
use crate::truth::MeasurementRecord;

pub const DEFAULT_DIM_CAP: usize = 128;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LagConfig {
    pub n_slots: usize,
    /// Filter steps between history slots.
    pub slot_stride: usize,
}

impl Default for LagConfig {
    /// 50 slots spanning 0.1 ms at the default `tau = 1e-8 s`.
    fn default() -> Self {
        Self {
            n_slots: 50,
            slot_stride: 200,
        }
    }
}

impl LagConfig {
    pub fn new(n_slots: usize, slot_stride: usize) -> Result<Self> {
        let lag = Self {
            n_slots,
            slot_stride,
        };
        lag.validate(DEFAULT_DIM_CAP)?;
        Ok(lag)
    }

    pub fn validate(&self, dim_cap: usize) -> Result<()> {
        if self.n_slots == 0 {
            return Err(Error::param("lag_slots", "must be >= 1"));
        }
        if self.slot_stride == 0 {
            return Err(Error::param("lag_stride", "must be >= 1"));
        }
        let dim = self.dim();
        if dim > dim_cap {
            return Err(Error::DimensionCapExceeded { dim, cap: dim_cap });
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        5 + self.n_slots
    }

    pub fn slot_spacing(&self, tau: f64) -> f64 {
        self.slot_stride as f64 * tau
    }

    pub fn total_lag(&self, tau: f64) -> f64 {
        (self.n_slots * self.slot_stride) as f64 * tau
    }

    /// Delay of every emitted column, starting with 0 for the current value.
    pub fn delays(&self, tau: f64) -> Vec<f64> {
        (0..=self.n_slots)
            .map(|j| (j * self.slot_stride) as f64 * tau)
            .collect()
    }
}

/// Estimates of the field at each delay, emitted every `slot_stride` steps.
///
/// `b_hat[e][j]` is the estimate, made at `times[e]`, of the field at
/// `times[e] - delays[j]`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SmoothedTrace {
    pub delays: Vec<f64>,
    pub times: Vec<f64>,
    pub b_hat: Vec<Vec<f64>>,
    pub b_var: Vec<Vec<f64>>,
}

impl SmoothedTrace {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Column `slot` as `(times, b_hat, b_var)`.
    pub fn column(&self, slot: usize) -> (Vec<f64>, Vec<f64>) {
        (
            self.b_hat.iter().map(|row| row[slot]).collect(),
            self.b_var.iter().map(|row| row[slot]).collect(),
        )
    }
}

/// Precomputed maps for one (params, ou, lag) combination.
#[derive(Debug, Clone)]
pub struct Smoother {
    layout: Layout,
    maps: StepMaps,
    lag: LagConfig,
    delta_b0: f64,
}

impl Smoother {
    pub fn new(params: &PhysicsParams, ou: &OuParams, lag: LagConfig) -> Result<Self> {
        lag.validate(DEFAULT_DIM_CAP)?;
        Self::with_cap(params, ou, lag, DEFAULT_DIM_CAP)
    }

    pub fn with_cap(
        params: &PhysicsParams,
        ou: &OuParams,
        lag: LagConfig,
        dim_cap: usize,
    ) -> Result<Self> {
        lag.validate(dim_cap)?;
        Ok(Self {
            layout: Layout::new(lag.n_slots),
            maps: StepMaps::new(params, ou)?,
            lag,
            delta_b0: params.delta_b0,
        })
    }

    pub fn lag(&self) -> LagConfig {
        self.lag
    }

    pub fn init(&self) -> GaussianBelief {
        self.layout.initial(self.delta_b0)
    }

    /// Embeds a 5-variable filter state; history slots get the prior and no
    /// correlations.
    pub fn embed_filter_state(&self, filter: &GaussianBelief) -> Result<GaussianBelief> {
        if filter.dim() != 5 {
            return Err(Error::DimensionMismatch {
                expected: 5,
                actual: filter.dim(),
                context: "filter state",
            });
        }
        let n = self.lag.n_slots;
        let mut state = self.init();
        // filter index -> augmented index
        let map = |i: usize| if i == 0 { 0 } else { i + n };
        let fresh = state.clone();
        let mut gamma = fresh.gamma().clone();
        let mut mean = fresh.mean().clone();
        for i in 0..5 {
            mean[map(i)] = filter.mean()[i];
            for j in 0..5 {
                gamma[(map(i), map(j))] = filter.gamma()[(i, j)];
            }
        }
        state = GaussianBelief::new(mean, gamma)?;
        Ok(state)
    }

    fn shift(&self, state: &mut GaussianBelief) {
        for slot in (2..=self.lag.n_slots).rev() {
            state.copy_coordinate(self.layout.history(slot), self.layout.history(slot - 1));
        }
        state.copy_coordinate(self.layout.history(1), Layout::FIELD);
    }

    /// One segment. `step_index` counts segments from 0; the history is
    /// shifted before segments whose index is a multiple of the stride.
    pub fn step(&self, state: &mut GaussianBelief, x_meas: f64, step_index: usize) {
        if step_index.is_multiple_of(self.lag.slot_stride) {
            self.shift(state);
        }
        self.layout.predict(state, &self.maps);
        self.layout.update(state, x_meas);
    }

    /// True when the state after segment `step_index` is emitted.
    pub fn emits_after(&self, step_index: usize) -> bool {
        (step_index + 1).is_multiple_of(self.lag.slot_stride)
    }

    /// Means and variances of `(B_now, slot 1, ..., slot n)`.
    pub fn read(&self, state: &GaussianBelief) -> (Vec<f64>, Vec<f64>) {
        let idx = (0..=self.lag.n_slots).map(|j| {
            if j == 0 {
                Layout::FIELD
            } else {
                self.layout.history(j)
            }
        });
        idx.map(|i| (state.mean()[i], state.variance(i))).unzip()
    }
}

pub fn init_smoother(delta_b0: f64, lag: LagConfig) -> Result<GaussianBelief> {
    lag.validate(DEFAULT_DIM_CAP)?;
    init_filter(delta_b0)?;
    Ok(Layout::new(lag.n_slots).initial(delta_b0))
}

pub fn step_smoother(
    state: &GaussianBelief,
    params: &PhysicsParams,
    ou: &OuParams,
    lag: LagConfig,
    x_meas: f64,
    step_index: usize,
) -> Result<GaussianBelief> {
    if state.dim() != lag.dim() {
        return Err(Error::DimensionMismatch {
            expected: lag.dim(),
            actual: state.dim(),
            context: "smoother state",
        });
    }
    let smoother = Smoother::new(params, ou, lag)?;
    let mut next = state.clone();
    smoother.step(&mut next, x_meas, step_index);
    Ok(next)
}

pub fn run_smoother(
    record: &MeasurementRecord,
    params: &PhysicsParams,
    ou: &OuParams,
    lag: LagConfig,
) -> Result<SmoothedTrace> {
    record.check()?;
    check_tau(record, params)?;
    let smoother = Smoother::new(params, ou, lag)?;
    let mut state = smoother.init();
    let mut trace = SmoothedTrace {
        delays: lag.delays(params.tau),
        ..Default::default()
    };
    for (k, &x) in record.outcomes.iter().enumerate() {
        smoother.step(&mut state, x, k);
        if smoother.emits_after(k) {
            let (m, v) = smoother.read(&state);
            trace.times.push((k + 1) as f64 * params.tau);
            trace.b_hat.push(m);
            trace.b_var.push(v);
        }
    }
    Ok(trace)
}

/// Variances at every delay once the smoother has settled: the filter is run
/// for `warmup` steps, embedded, and then run for one full lag.
pub fn steady_lag_variances(
    params: &PhysicsParams,
    ou: &OuParams,
    lag: LagConfig,
    warmup: usize,
) -> Result<Vec<f64>> {
    let filter = crate::filter::covariance_after(params, ou, warmup)?;
    let smoother = Smoother::new(params, ou, lag)?;
    let mut state = smoother.embed_filter_state(&filter)?;
    let steps = lag.n_slots * lag.slot_stride;
    for k in 0..steps {
        smoother.step(&mut state, 0.0, k);
    }
    Ok(smoother.read(&state).1)
}
