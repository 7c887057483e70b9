//! Seeded ensembles, calibration reports and figure datasets.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

use crate::config::{fmt, ScenarioConfig};
use crate::delay::{
    apply_delay_weights, lag_error_profile, smoothed_error, smoothed_errors, weighted_error_at,
    DelayFit, NormalEquations, ScoringWindow,
};
use crate::error::{Error, Result};
use crate::filter::{
    run_filter, static_variance, steady_variance, steady_variance_fixed_point, variance_curve,
    EstimateTrace,
};
use crate::io::Table;
use crate::physics::{OuParams, PhysicsParams};
use crate::smoother::{run_smoother, steady_lag_variances, LagConfig, SmoothedTrace};
use crate::truth::{run_truth, FieldSource, MeasurementRecord};

/// Minimum ensemble size for a calibration report.
pub const MIN_CALIBRATION_REALIZATIONS: usize = 100;

/// Acceptance band for the calibration ratio.
pub const CALIBRATION_BAND: (f64, f64) = (0.9, 1.1);

/// Seed of realization `index`.
pub fn realization_seed(master: u64, index: usize) -> u64 {
    master.wrapping_add(index as u64)
}

/// Runs `f(index, seed)` for every realization, on the rayon pool when the
/// `parallel` feature is on. Results are returned in index order.
pub fn ensemble<T, F>(master: u64, n: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize, u64) -> Result<T> + Sync,
{
    #[cfg(feature = "parallel")]
    let range = (0..n).into_par_iter();
    #[cfg(not(feature = "parallel"))]
    let range = 0..n;
    range.map(|i| f(i, realization_seed(master, i))).collect()
}

pub fn simulate(cfg: &ScenarioConfig, index: usize) -> Result<MeasurementRecord> {
    run_truth(
        &cfg.physics,
        &FieldSource::Ou(cfg.ou),
        cfg.duration,
        realization_seed(cfg.seed, index),
        cfg.step_cap,
    )
}

/// Time for the filter variance to settle within `rel` of its long-run value.
///
/// Returns `None` if it has not settled after `max_steps`.
pub fn transient_time(
    params: &PhysicsParams,
    ou: &OuParams,
    rel: f64,
    max_steps: usize,
) -> Result<Option<f64>> {
    let fixed = steady_variance_fixed_point(params, ou, 1e-12, 1000, 50_000_000)?;
    let target = fixed.variance;
    // past the fixed-point convergence the curve no longer moves
    let curve = variance_curve(params, ou, max_steps.min(fixed.steps.max(1)), 1)?;
    // last time the curve is outside the band, plus one step
    let last_out = curve
        .iter()
        .rposition(|&(_, v)| ((v - target) / target).abs() > rel);
    Ok(match last_out {
        None => Some(params.tau),
        Some(i) if i + 1 < curve.len() => Some(curve[i + 1].0),
        Some(_) => None,
    })
}

/// Transient to skip before steady-state statistics: three times the 1%
/// settling time, rounded to a whole step.
/// Without diffusion the variance keeps shrinking and the whole run is used.
pub fn steady_skip(params: &PhysicsParams, ou: &OuParams, duration: f64) -> Result<f64> {
    if ou.sigma_b == 0.0 {
        return Ok(0.0);
    }
    let max_steps = (duration / params.tau).round() as usize;
    let t = transient_time(params, ou, 0.01, max_steps)?.ok_or_else(|| {
        Error::param(
            "duration",
            "filter variance does not settle within the run; increase duration",
        )
    })?;
    let skip = (3.0 * t).min(0.5 * duration);
    Ok((skip / params.tau).ceil() * params.tau)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationLine {
    pub label: String,
    /// Smoother delay, 0 for the filter.
    pub delay: f64,
    /// Ensemble mean of squared error.
    pub mse: f64,
    /// Ensemble mean of reported variance.
    pub mean_var: f64,
    pub ratio: f64,
    /// 95% interval on the ratio from the spread of per-realization MSEs.
    pub ci: (f64, f64),
}

impl CalibrationLine {
    pub fn in_band(&self) -> bool {
        self.ratio >= CALIBRATION_BAND.0 && self.ratio <= CALIBRATION_BAND.1
    }

    fn from_samples(label: String, delay: f64, mse: &[f64], var: &[f64]) -> Self {
        let n = mse.len() as f64;
        let m = mse.iter().sum::<f64>() / n;
        let v = var.iter().sum::<f64>() / n;
        let sd = (mse.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0).max(1.0)).sqrt();
        let half = 1.96 * sd / n.sqrt() / v;
        let ratio = m / v;
        Self {
            label,
            delay,
            mse: m,
            mean_var: v,
            ratio,
            ci: (ratio - half, ratio + half),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationReport {
    pub realizations: usize,
    /// Start of the steady-state window.
    pub skip: f64,
    pub filter: CalibrationLine,
    /// One line per smoother delay, when requested.
    pub smoother: Vec<CalibrationLine>,
}

impl CalibrationReport {
    pub fn table(&self, header: Vec<(String, String)>) -> Table {
        let mut t = Table::new(&[
            "delay", "mse", "mean_var", "ratio", "ci_low", "ci_high", "in_band",
        ])
        .with_header(header);
        t.push_header("kind", "calibration");
        t.push_header("skip", fmt(self.skip));
        let mut push = |delay: f64, l: &CalibrationLine| {
            t.rows.push(vec![
                delay,
                l.mse,
                l.mean_var,
                l.ratio,
                l.ci.0,
                l.ci.1,
                if l.in_band() { 1.0 } else { 0.0 },
            ])
        };
        push(self.filter.delay, &self.filter);
        for l in &self.smoother {
            push(l.delay, l);
        }
        t
    }
}

fn steady_filter_stats(trace: &EstimateTrace, truth: &[f64], tau: f64, skip: f64) -> (f64, f64) {
    let mut se = 0.0;
    let mut var = 0.0;
    let mut n = 0usize;
    for (i, &t) in trace.times.iter().enumerate() {
        if t < skip - 0.5 * tau {
            continue;
        }
        // entry i is the estimate of the field on grid point i + 1
        if let Some(b) = truth.get(i + 1) {
            se += (trace.b_hat[i] - b).powi(2);
            var += trace.b_var[i];
            n += 1;
        }
    }
    (se / n as f64, var / n as f64)
}

fn steady_smoother_var(trace: &SmoothedTrace, slot: usize, skip: f64, tau: f64) -> f64 {
    let delay = trace.delays[slot];
    let vals: Vec<f64> = trace
        .times
        .iter()
        .zip(&trace.b_var)
        .filter(|(t, _)| **t - delay >= skip - 0.5 * tau)
        .map(|(_, v)| v[slot])
        .collect();
    vals.iter().sum::<f64>() / vals.len() as f64
}

/// Compares the empirical squared error of the estimators with the variance
/// they report, over `cfg.realizations` independent runs. The estimators use
/// `cfg.filter_ou`, so a mismatched model shows up as a ratio away from 1.
pub fn calibrate(cfg: &ScenarioConfig, with_smoother: bool) -> Result<CalibrationReport> {
    if cfg.realizations < MIN_CALIBRATION_REALIZATIONS {
        return Err(Error::param(
            "realizations",
            format!(
                "calibration needs at least {MIN_CALIBRATION_REALIZATIONS}, got {}",
                cfg.realizations
            ),
        ));
    }
    let tau = cfg.physics.tau;
    let skip = steady_skip(&cfg.physics, &cfg.filter_ou, cfg.duration)?;
    let lag = cfg.lag;
    if with_smoother && skip + lag.total_lag(tau) >= cfg.duration {
        return Err(Error::param("duration", "too short for the smoother lag"));
    }

    type Sample = ((f64, f64), Vec<(f64, f64)>);
    let samples: Vec<Sample> = ensemble(cfg.seed, cfg.realizations, |i, _| {
        let record = simulate(cfg, i)?;
        let trace = run_filter(&record, &cfg.physics, &cfg.filter_ou)?;
        let filt = steady_filter_stats(&trace, &record.true_field, tau, skip);
        let mut smooth = Vec::new();
        if with_smoother {
            let st = run_smoother(&record, &cfg.physics, &cfg.filter_ou, lag)?;
            for j in 0..st.delays.len() {
                let mse = smoothed_error(&st, &record.true_field, tau, j, skip)?;
                smooth.push((mse, steady_smoother_var(&st, j, skip, tau)));
            }
        }
        Ok((filt, smooth))
    })?;

    let (fm, fv): (Vec<f64>, Vec<f64>) = samples.iter().map(|s| s.0).unzip();
    let filter = CalibrationLine::from_samples("filter".into(), 0.0, &fm, &fv);
    let mut smoother = Vec::new();
    if with_smoother {
        for (j, d) in lag.delays(tau).into_iter().enumerate() {
            let (m, v): (Vec<f64>, Vec<f64>) = samples.iter().map(|s| s.1[j]).unzip();
            smoother.push(CalibrationLine::from_samples(
                format!("delay {d:.3e}"),
                d,
                &m,
                &v,
            ));
        }
    }
    Ok(CalibrationReport {
        realizations: cfg.realizations,
        skip,
        filter,
        smoother,
    })
}

/// Damping rates of the uncertainty curves, each with stationary variance
/// 1 pT^2.
pub const FIG2_GAMMAS: [f64; 5] = [1e5, 1e4, 1e3, 1e2, 1e1];
pub const FIG6_GAMMAS: [f64; 4] = [1e4, 1e3, 1e2, 1e1];

/// Roughly log-spaced step indices in `1..=steps`.
fn log_steps(steps: usize, per_decade: usize) -> Vec<usize> {
    let mut out = Vec::new();
    if steps == 0 {
        return out;
    }
    let n = ((steps as f64).log10() * per_decade as f64).ceil() as usize;
    for i in 0..=n {
        let k = 10f64.powf(i as f64 / per_decade as f64).round() as usize;
        let k = k.clamp(1, steps);
        if out.last() != Some(&k) {
            out.push(k);
        }
    }
    out
}

fn gamma_label(g: f64) -> String {
    format!("g{}", fmt(g))
}

/// Filter uncertainty against time for several field bandwidths, plus the
/// static-field case both simulated and in closed form.
pub fn figure2(cfg: &ScenarioConfig) -> Result<Table> {
    let p = &cfg.physics;
    let steps = cfg.steps();
    let mut cols = vec!["t".to_string()];
    let mut curves = Vec::new();
    let mut t = Table::default().with_header(cfg.header());
    t.push_header("kind", "figure2");
    for g in FIG2_GAMMAS {
        let ou = OuParams::with_steady_variance(g, 1.0);
        cols.push(format!("var_{}", gamma_label(g)));
        curves.push(variance_curve(p, &ou, steps, 1)?);
        t.push_header(
            &format!("steady_{}", gamma_label(g)),
            fmt(steady_variance(p.kappa_sq, p.mu, &ou)),
        );
    }
    cols.push("var_static".into());
    curves.push(variance_curve(p, &OuParams::frozen(), steps, 1)?);
    cols.push("var_static_closed_form".into());
    t.columns = cols;
    for k in log_steps(steps, 50) {
        let time = curves[0][k - 1].0;
        let mut row = vec![time];
        row.extend(curves.iter().map(|c| c[k - 1].1));
        row.push(static_variance(p.delta_b0, p.kappa_sq, p.mu, time));
        t.rows.push(row);
    }
    Ok(t)
}

/// Fixed-delay scoring, delay-weight fitting and (optionally) the smoother,
/// compared over an ensemble of records.
#[derive(Debug, Clone, PartialEq)]
pub struct DelayStudy {
    pub skip: f64,
    pub delays: Vec<f64>,
    /// Ensemble mean of `Error^2(T)` per delay.
    pub profile: Vec<f64>,
    pub best_delay: f64,
    /// One set of weights fitted to all records.
    pub fit: DelayFit,
    pub comparison: Option<SmootherComparison>,
    pub realizations: usize,
}

/// Smoother at its deepest delay against the fitted weights, scored on the
/// same field samples.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmootherComparison {
    pub samples: usize,
    pub smoother_mse: f64,
    /// Weights fitted on all realizations, scored in sample.
    pub weighted_mse: f64,
    /// Weights fitted on the even realizations scored on the odd ones and
    /// vice versa.
    pub held_out_mse: f64,
}

/// Number of delay steps scanned for the error profile and the weight fit.
pub const DELAY_SCAN_POINTS: usize = 50;

/// Delay grid spanning the smoother lag in [`DELAY_SCAN_POINTS`] steps.
pub fn delay_grid(cfg: &ScenarioConfig) -> (usize, Vec<f64>) {
    let lag = cfg.lag;
    let step = (lag.n_slots * lag.slot_stride / DELAY_SCAN_POINTS).max(1);
    let delays = (0..=DELAY_SCAN_POINTS)
        .map(|i| (i * step) as f64 * cfg.physics.tau)
        .collect();
    (step, delays)
}

pub fn delay_study(cfg: &ScenarioConfig, with_smoother: bool) -> Result<DelayStudy> {
    let p = &cfg.physics;
    let tau = p.tau;
    let skip = steady_skip(p, &cfg.filter_ou, cfg.duration)?;
    let window = ScoringWindow {
        skip,
        sample_stride: 1,
    };
    let (step, delays) = delay_grid(cfg);
    type PerRecord = (Vec<f64>, NormalEquations, Vec<(usize, f64)>);
    let per: Vec<PerRecord> = ensemble(cfg.seed, cfg.realizations, |i, _| {
        let record = simulate(cfg, i)?;
        let trace = run_filter(&record, p, &cfg.filter_ou)?;
        let truth = &record.true_field;
        let profile = lag_error_profile(&trace, truth, tau, &delays, &window)?;
        let eq = NormalEquations::accumulate(&trace, truth, tau, step, DELAY_SCAN_POINTS, &window)?;
        let smoothed = if with_smoother {
            let st = run_smoother(&record, p, &cfg.filter_ou, cfg.lag)?;
            smoothed_errors(&st, truth, tau, cfg.lag.n_slots, skip)?
        } else {
            Vec::new()
        };
        Ok((profile, eq, smoothed))
    })?;

    let n = per.len() as f64;
    let mut profile = vec![0.0; delays.len()];
    for (prof, _, _) in &per {
        for (acc, v) in profile.iter_mut().zip(prof) {
            *acc += v / n;
        }
    }
    let mut eq = per[0].1.clone();
    for (_, other, _) in &per[1..] {
        eq.merge(other)?;
    }
    let fit = eq.solve()?;

    let comparison = if with_smoother {
        // score the weights on exactly the points the smoother estimated;
        // records are regenerated from their seeds
        let half = |parity: usize| -> Result<DelayFit> {
            let mut it = per.iter().skip(parity).step_by(2);
            let mut eq = it
                .next()
                .ok_or_else(|| Error::param("realizations", "need at least 2"))?
                .1
                .clone();
            for (_, other, _) in it {
                eq.merge(other)?;
            }
            eq.solve()
        };
        let folds = [half(1)?, half(0)?];
        let sums = ensemble(cfg.seed, cfg.realizations, |i, _| {
            let record = simulate(cfg, i)?;
            let trace = run_filter(&record, p, &cfg.filter_ou)?;
            let points: Vec<usize> = per[i].2.iter().map(|e| e.0).collect();
            let truth = &record.true_field;
            let (w_sum, w_n) = weighted_error_at(&trace, truth, tau, &fit, &points)?;
            let (h_sum, _) = weighted_error_at(&trace, truth, tau, &folds[i % 2], &points)?;
            if w_n != points.len() {
                return Err(Error::param(
                    "lag",
                    "delay grid longer than the smoother lag",
                ));
            }
            let s_sum: f64 = per[i].2.iter().map(|e| e.1).sum();
            Ok([s_sum, w_sum, h_sum, w_n as f64])
        })?;
        let total = |j: usize| sums.iter().map(|s| s[j]).sum::<f64>();
        let n = total(3);
        Some(SmootherComparison {
            samples: n as usize,
            smoother_mse: total(0) / n,
            weighted_mse: total(1) / n,
            held_out_mse: total(2) / n,
        })
    } else {
        None
    };
    let best_delay = profile
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| delays[i])
        .unwrap_or(0.0);
    Ok(DelayStudy {
        skip,
        delays,
        profile,
        best_delay,
        fit,
        comparison,
        realizations: per.len(),
    })
}

/// Datasets behind the single-record figures: estimate against truth, the
/// delay error profile, fitted delay weights, and the estimates available a
/// full lag after the fact. Profile and weights use every realization; the
/// traces show the first.
pub struct RecordFigures {
    pub estimate: Table,
    pub delay_error: Table,
    pub weights: Table,
    /// Only computed on request: it needs a smoother pass.
    pub hindsight: Option<Table>,
    pub study: DelayStudy,
}

pub fn record_figures(cfg: &ScenarioConfig, with_hindsight: bool) -> Result<RecordFigures> {
    let p = &cfg.physics;
    let tau = p.tau;
    let record = simulate(cfg, 0)?;
    let trace = run_filter(&record, p, &cfg.filter_ou)?;
    let study = delay_study(cfg, false)?;

    let mut estimate = Table::new(&["t", "b_true", "b_hat", "b_var"]).with_header(cfg.header());
    estimate.push_header("kind", "estimate");
    let stride = (record.len() / 2000).max(1);
    for i in (0..trace.len().saturating_sub(1)).step_by(stride) {
        estimate.rows.push(vec![
            trace.times[i],
            record.true_field[i + 1],
            trace.b_hat[i],
            trace.b_var[i],
        ]);
    }

    let mut delay_error = Table::new(&["delay", "error_sq"]).with_header(cfg.header());
    delay_error.push_header("kind", "delay_error");
    delay_error.push_header("skip", fmt(study.skip));
    delay_error.push_header("best_delay", fmt(study.best_delay));
    delay_error.push_header("weighted_error_sq", fmt(study.fit.error));
    delay_error.rows = study
        .delays
        .iter()
        .zip(&study.profile)
        .map(|(d, e)| vec![*d, *e])
        .collect();

    let fit = &study.fit;
    let mut weights = crate::io::weights_table(&fit.delays(tau), &fit.weights, cfg.header());
    weights.push_header("error_sq", fmt(fit.error));
    weights.push_header("collinear", fit.collinear);

    let hindsight = if with_hindsight {
        Some(hindsight_table(cfg, &record, &trace, fit)?)
    } else {
        None
    };

    Ok(RecordFigures {
        estimate,
        delay_error,
        weights,
        hindsight,
        study,
    })
}

fn hindsight_table(
    cfg: &ScenarioConfig,
    record: &MeasurementRecord,
    trace: &EstimateTrace,
    fit: &DelayFit,
) -> Result<Table> {
    let p = &cfg.physics;
    let tau = p.tau;
    let lag = cfg.lag;
    let st = run_smoother(record, p, &cfg.filter_ou, lag)?;
    let deepest = lag.n_slots;
    let weighted = apply_delay_weights(&trace.b_hat, &fit.weights, fit.lag_step);
    let mut hindsight = Table::new(&[
        "t",
        "b_true",
        "b_hat_filter",
        "b_hat_weighted",
        "b_hat_smoothed",
        "b_var_smoothed",
    ])
    .with_header(cfg.header());
    hindsight.push_header("kind", "hindsight");
    hindsight.push_header("smoother_delay", fmt(st.delays[deepest]));
    for e in 0..st.len() {
        let target = st.times[e] - st.delays[deepest];
        let g = (target / tau).round() as usize;
        if g == 0 || g >= record.len() {
            continue;
        }
        // trace index g - 1 estimates grid point g
        let w = weighted.get(g - 1).copied().unwrap_or(f64::NAN);
        hindsight.rows.push(vec![
            g as f64 * tau,
            record.true_field[g],
            trace.b_hat[g - 1],
            w,
            st.b_hat[e][deepest],
            st.b_var[e][deepest],
        ]);
    }

    Ok(hindsight)
}

/// Smoother variance per delay once everything has settled, and the filter
/// warm-up used. The warm-up is ten times the time the filter variance takes
/// to settle within 1e-4, so the oldest slot does not remember the transient.
pub fn steady_hindsight(
    params: &PhysicsParams,
    ou: &OuParams,
    lag: LagConfig,
) -> Result<(Vec<f64>, usize)> {
    let settle = transient_time(params, ou, 1e-4, 20_000_000)?
        .ok_or_else(|| Error::param("gamma_b", "filter does not settle"))?;
    let warmup = (10.0 * settle / params.tau).ceil() as usize;
    Ok((steady_lag_variances(params, ou, lag, warmup)?, warmup))
}

/// Steady-state uncertainty around the current time: backward from the
/// smoother, forward from free OU extrapolation. Rows run from `-T` to `+T`
/// at the slot spacing; the `rel_` columns divide by the value at 0.
pub fn figure6(cfg: &ScenarioConfig) -> Result<Table> {
    let p = &cfg.physics;
    let lag = cfg.lag;
    let spacing = lag.slot_spacing(p.tau);
    let mut t = Table::default().with_header(cfg.header());
    t.push_header("kind", "figure6");
    let mut cols = vec!["dt".to_string()];
    let mut series = Vec::new();
    for g in FIG6_GAMMAS {
        let ou = OuParams::with_steady_variance(g, 1.0);
        let (back, warmup) = steady_hindsight(p, &ou, lag)?;
        let v0 = back[0];
        let fwd: Vec<f64> = (0..=lag.n_slots)
            .map(|i| ou.extrapolate_variance(v0, i as f64 * spacing))
            .collect();
        cols.push(format!("var_{}", gamma_label(g)));
        cols.push(format!("rel_{}", gamma_label(g)));
        t.push_header(&format!("warmup_{}", gamma_label(g)), warmup);
        series.push((back, fwd, v0));
    }
    t.columns = cols;
    let n = lag.n_slots as i64;
    for i in -n..=n {
        let mut row = vec![i as f64 * spacing];
        for (back, fwd, v0) in &series {
            let v = if i <= 0 {
                back[(-i) as usize]
            } else {
                fwd[i as usize]
            };
            row.push(v);
            row.push(v / v0);
        }
        t.rows.push(row);
    }
    Ok(t)
}

/// Output file names and tables for figure `id`.
pub fn figure(cfg: &ScenarioConfig, id: u32) -> Result<Vec<(String, Table)>> {
    match id {
        2 => Ok(vec![("figure2.dat".into(), figure2(cfg)?)]),
        3..=5 => {
            let f = record_figures(cfg, id == 5)?;
            Ok(match id {
                3 => vec![
                    ("figure3_estimate.dat".into(), f.estimate),
                    ("figure3_delay_error.dat".into(), f.delay_error),
                ],
                4 => vec![("figure4_weights.dat".into(), f.weights)],
                _ => vec![(
                    "figure5_hindsight.dat".into(),
                    f.hindsight.expect("requested"),
                )],
            })
        }
        6 => Ok(vec![("figure6.dat".into(), figure6(cfg)?)]),
        _ => Err(Error::param(
            "figure",
            format!("unknown figure {id}; expected 2-6"),
        )),
    }
}

/// Closed-form and iterated variances for `steady`.
#[derive(Debug, Clone, PartialEq)]
pub struct SteadySummary {
    pub steady_closed_form: Option<f64>,
    pub steady_iterated: Option<f64>,
    pub field_variance: Option<f64>,
    pub static_at_duration: f64,
    pub transient: Option<f64>,
}

pub fn steady_summary(cfg: &ScenarioConfig) -> Result<SteadySummary> {
    let p = &cfg.physics;
    let ou = &cfg.filter_ou;
    let has_steady = ou.sigma_b > 0.0;
    let iterated = if has_steady {
        Some(steady_variance_fixed_point(p, ou, 1e-12, 1000, 50_000_000)?.variance)
    } else {
        None
    };
    Ok(SteadySummary {
        steady_closed_form: has_steady.then(|| steady_variance(p.kappa_sq, p.mu, ou)),
        steady_iterated: iterated,
        field_variance: ou.steady_variance().ok(),
        static_at_duration: static_variance(p.delta_b0, p.kappa_sq, p.mu, cfg.duration),
        transient: if has_steady {
            transient_time(p, ou, 0.01, cfg.steps())?
        } else {
            None
        },
    })
}
