//! Curves for the browser page in `www/`. Every export returns a flat
//! `Float64Array` of rows; the row layout is given on each function.

use wasm_bindgen::prelude::*;

use larmor::experiments::transient_time;
use larmor::filter::{steady_variance, variance_curve};
use larmor::smoother::steady_lag_variances;
use larmor::{run_filter, run_truth, FieldSource, LagConfig, OuParams, PhysicsParams};

/// Upper bound on simulated steps per call, to keep the page responsive.
pub const MAX_STEPS: u64 = 2_000_000;

fn js(e: larmor::Error) -> JsError {
    JsError::new(&e.to_string())
}

fn stride(steps: usize, points: usize) -> usize {
    (steps / points.max(1)).max(1)
}

/// Filter variance for a field of unit variance and damping `gamma_b`.
/// Rows: `t, variance, steady variance`.
pub fn uncertainty(gamma_b: f64, duration: f64, points: usize) -> larmor::Result<Vec<f64>> {
    let p = PhysicsParams::default();
    let ou = OuParams::with_steady_variance(gamma_b, 1.0);
    let steps = (duration / p.tau).round().min(MAX_STEPS as f64) as usize;
    let steady = steady_variance(p.kappa_sq, p.mu, &ou);
    let curve = variance_curve(&p, &ou, steps, stride(steps, points))?;
    Ok(curve
        .into_iter()
        .flat_map(|(t, v)| [t, v, steady])
        .collect())
}

/// One simulated record and its filter estimate.
/// Rows: `t, true field, estimate, standard deviation`.
pub fn track(
    gamma_b: f64,
    sigma_b: f64,
    duration: f64,
    seed: u64,
    points: usize,
) -> larmor::Result<Vec<f64>> {
    let p = PhysicsParams::default();
    let ou = OuParams::new(gamma_b, sigma_b);
    let record = run_truth(&p, &FieldSource::Ou(ou), duration, seed, MAX_STEPS)?;
    let trace = run_filter(&record, &p, &ou)?;
    let every = stride(trace.len(), points);
    Ok((0..trace.len())
        .step_by(every)
        .flat_map(|i| {
            [
                trace.times[i],
                record.true_field[i + 1],
                trace.b_hat[i],
                trace.b_var[i].sqrt(),
            ]
        })
        .collect())
}

/// Steady-state smoother variance against delay, relative to the filter.
/// Rows: `delay, variance / filter variance`.
pub fn hindsight(
    gamma_b: f64,
    sigma_b: f64,
    slots: usize,
    slot_stride: usize,
) -> larmor::Result<Vec<f64>> {
    let p = PhysicsParams::default();
    let ou = OuParams::new(gamma_b, sigma_b);
    let lag = LagConfig::new(slots, slot_stride)?;
    let settle = transient_time(&p, &ou, 1e-3, MAX_STEPS as usize)?.ok_or_else(|| {
        larmor::Error::InvalidParameter {
            name: "gamma_b",
            reason: "filter does not settle within the step budget".into(),
        }
    })?;
    let warmup = (3.0 * settle / p.tau).ceil() as usize + lag.n_slots * lag.slot_stride;
    let vars = steady_lag_variances(&p, &ou, lag, warmup)?;
    Ok(lag
        .delays(p.tau)
        .into_iter()
        .zip(&vars)
        .flat_map(|(d, v)| [d, v / vars[0]])
        .collect())
}

#[wasm_bindgen(js_name = uncertainty)]
pub fn uncertainty_js(gamma_b: f64, duration: f64, points: usize) -> Result<Vec<f64>, JsError> {
    uncertainty(gamma_b, duration, points).map_err(js)
}

#[wasm_bindgen(js_name = track)]
pub fn track_js(
    gamma_b: f64,
    sigma_b: f64,
    duration: f64,
    seed: u32,
    points: usize,
) -> Result<Vec<f64>, JsError> {
    track(gamma_b, sigma_b, duration, seed.into(), points).map_err(js)
}

#[wasm_bindgen(js_name = hindsight)]
pub fn hindsight_js(
    gamma_b: f64,
    sigma_b: f64,
    slots: usize,
    slot_stride: usize,
) -> Result<Vec<f64>, JsError> {
    hindsight(gamma_b, sigma_b, slots, slot_stride).map_err(js)
}
