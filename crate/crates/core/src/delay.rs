//! Delay-based scoring against a known field (simulation only).
//!
//! These tools need the hidden field and therefore only apply to simulated
//! records. They quantify how much a causal estimate improves when it is
//! assigned to an earlier time, or replaced by a weighted sum of later
//! estimates.
//!
//! All series live on the `tau` grid: truth sample `g` is the field at
//! `g * tau`, and filter trace entry `i` refers to time `times[i]`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::filter::EstimateTrace;
use crate::smoother::SmoothedTrace;

/// Which truth samples enter an average.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoringWindow {
    /// Truth samples before this time are skipped (filter transient).
    pub skip: f64,
    /// Use every n-th truth sample.
    pub sample_stride: usize,
}

impl Default for ScoringWindow {
    fn default() -> Self {
        Self {
            skip: 0.0,
            sample_stride: 1,
        }
    }
}

/// A filter trace mapped onto the truth grid.
struct GridTrace<'a> {
    /// Grid index of `values[0]`.
    offset: usize,
    values: &'a [f64],
}

impl<'a> GridTrace<'a> {
    fn new(trace: &'a EstimateTrace, tau: f64) -> Result<Self> {
        if trace.is_empty() {
            return Err(Error::LengthMismatch("empty estimate trace".into()));
        }
        let first = trace.times[0] / tau;
        let last = trace.times[trace.len() - 1] / tau;
        let offset = first.round();
        if (first - offset).abs() > 1e-6
            || (last - first - (trace.len() - 1) as f64).abs() > 1e-6 * last.max(1.0)
        {
            return Err(Error::LengthMismatch(
                "estimate trace is not sampled on every tau step".into(),
            ));
        }
        Ok(Self {
            offset: offset as usize,
            values: &trace.b_hat,
        })
    }

    fn at(&self, g: usize) -> Option<f64> {
        g.checked_sub(self.offset)
            .and_then(|i| self.values.get(i).copied())
    }

    fn end(&self) -> usize {
        self.offset + self.values.len()
    }
}

fn steps_of(delay: f64, tau: f64) -> Result<usize> {
    if !(delay.is_finite() && delay >= 0.0) {
        return Err(Error::param("delay", "must be finite and >= 0"));
    }
    Ok((delay / tau).round() as usize)
}

/// Truth-grid indices `g` with `g >= skip` and estimates available at
/// `g + max_shift`.
fn window_indices(
    grid: &GridTrace,
    truth_len: usize,
    tau: f64,
    max_shift: usize,
    window: &ScoringWindow,
) -> Result<Vec<usize>> {
    let start = ((window.skip / tau).ceil() as usize).max(grid.offset);
    let stop = truth_len.min(grid.end().saturating_sub(max_shift));
    if stop <= start {
        return Err(Error::DelayOutOfRange {
            delay: max_shift as f64 * tau,
        });
    }
    Ok((start..stop).step_by(window.sample_stride.max(1)).collect())
}

/// `Error^2(T) = mean_s (b_hat(s + T) - B(s))^2` over a window of truth times
/// `s` that is the same for every delay.
pub fn lag_error_profile(
    trace: &EstimateTrace,
    truth: &[f64],
    tau: f64,
    delays: &[f64],
    window: &ScoringWindow,
) -> Result<Vec<f64>> {
    let grid = GridTrace::new(trace, tau)?;
    let shifts = delays
        .iter()
        .map(|&d| steps_of(d, tau))
        .collect::<Result<Vec<_>>>()?;
    let max_shift = shifts.iter().copied().max().unwrap_or(0);
    let idx = window_indices(&grid, truth.len(), tau, max_shift, window)?;
    Ok(shifts
        .iter()
        .map(|&d| {
            let sum: f64 = idx
                .iter()
                .map(|&g| {
                    let e = grid.at(g + d).expect("window checked") - truth[g];
                    e * e
                })
                .sum();
            sum / idx.len() as f64
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct DelayFit {
    /// `weights[i]` multiplies the estimate made `i * lag_step * tau` later.
    pub weights: Vec<f64>,
    pub lag_step: usize,
    /// Mean squared residual over the fitting window.
    pub error: f64,
    /// The normal matrix was singular and a pseudoinverse was used.
    pub collinear: bool,
    pub samples: usize,
}

impl DelayFit {
    pub fn delays(&self, tau: f64) -> Vec<f64> {
        (0..self.weights.len())
            .map(|i| (i * self.lag_step) as f64 * tau)
            .collect()
    }
}

/// Sufficient statistics of the delay-weight least-squares problem. Records
/// are accumulated one at a time and merged, so ensembles never need to be
/// held in memory.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalEquations {
    pub lag_step: usize,
    normal: DMatrix<f64>,
    rhs: DVector<f64>,
    truth_sq: f64,
    samples: usize,
}

impl NormalEquations {
    /// Statistics of one record over `n_lags + 1` delays `i * lag_step * tau`.
    pub fn accumulate(
        trace: &EstimateTrace,
        truth: &[f64],
        tau: f64,
        lag_step: usize,
        n_lags: usize,
        window: &ScoringWindow,
    ) -> Result<Self> {
        if lag_step == 0 {
            return Err(Error::param("lag_step", "must be >= 1"));
        }
        let grid = GridTrace::new(trace, tau)?;
        let idx = window_indices(&grid, truth.len(), tau, n_lags * lag_step, window)?;
        let k = n_lags + 1;
        let mut normal = DMatrix::<f64>::zeros(k, k);
        let mut rhs = DVector::<f64>::zeros(k);
        let mut truth_sq = 0.0;
        let mut row = vec![0.0; k];
        for &g in &idx {
            for (i, r) in row.iter_mut().enumerate() {
                *r = grid.at(g + i * lag_step).expect("window checked");
            }
            truth_sq += truth[g] * truth[g];
            for i in 0..k {
                rhs[i] += row[i] * truth[g];
                for j in i..k {
                    normal[(i, j)] += row[i] * row[j];
                }
            }
        }
        for i in 0..k {
            for j in 0..i {
                normal[(i, j)] = normal[(j, i)];
            }
        }
        Ok(Self {
            lag_step,
            normal,
            rhs,
            truth_sq,
            samples: idx.len(),
        })
    }

    pub fn merge(&mut self, other: &NormalEquations) -> Result<()> {
        if other.lag_step != self.lag_step || other.rhs.len() != self.rhs.len() {
            return Err(Error::param("lag grid", "cannot merge different lag grids"));
        }
        self.normal += &other.normal;
        self.rhs += &other.rhs;
        self.truth_sq += other.truth_sq;
        self.samples += other.samples;
        Ok(())
    }

    pub fn samples(&self) -> usize {
        self.samples
    }

    /// Solves for the weights. A numerically singular normal matrix falls
    /// back to the SVD pseudoinverse and is flagged as collinear.
    pub fn solve(&self) -> Result<DelayFit> {
        let k = self.rhs.len();
        if k * 10 > self.samples {
            return Err(Error::param(
                "lag grid",
                format!(
                    "{k} weights need at least {} samples, window has {}",
                    10 * k,
                    self.samples
                ),
            ));
        }
        let scale = (0..k).map(|i| self.normal[(i, i)]).fold(0.0_f64, f64::max);
        let chol = self.normal.clone().cholesky().filter(|c| {
            let l = c.l();
            let diag = (0..k).map(|i| l[(i, i)]);
            let (lo, hi) = diag.fold((f64::INFINITY, 0.0_f64), |(lo, hi), d| {
                (lo.min(d), hi.max(d))
            });
            // reject numerically singular factorizations
            lo * lo > 1e-12 * hi * hi
        });
        let (w, collinear) = match chol {
            Some(c) => (c.solve(&self.rhs), false),
            None => {
                let svd = self.normal.clone().svd(true, true);
                let w = svd
                    .solve(&self.rhs, 1e-12 * scale.max(f64::MIN_POSITIVE))
                    .map_err(|e| Error::param("lag grid", e.to_string()))?;
                (w, true)
            }
        };
        // sum (w.row - B)^2 = w'Nw - 2 w'r + sum B^2
        let sum_sq =
            (w.dot(&(&self.normal * &w)) - 2.0 * w.dot(&self.rhs) + self.truth_sq).max(0.0);
        Ok(DelayFit {
            weights: w.iter().copied().collect(),
            lag_step: self.lag_step,
            error: sum_sq / self.samples as f64,
            collinear,
            samples: self.samples,
        })
    }
}

/// Least-squares weights `a_i` minimising
/// `mean_s (sum_i a_i b_hat(s + i dt) - B(s))^2` with `dt = lag_step * tau`,
/// solved through the normal equations. No sum constraint is imposed.
pub fn fit_delay_weights(
    trace: &EstimateTrace,
    truth: &[f64],
    tau: f64,
    lag_step: usize,
    n_lags: usize,
    window: &ScoringWindow,
) -> Result<DelayFit> {
    NormalEquations::accumulate(trace, truth, tau, lag_step, n_lags, window)?.solve()
}

/// Weighted estimate series `sum_i a_i b_hat[s + i lag_step]`, defined only
/// where all terms exist. Entry `s` estimates the field at `times[s]`.
pub fn apply_delay_weights(b_hat: &[f64], weights: &[f64], lag_step: usize) -> Vec<f64> {
    let span = weights.len().saturating_sub(1) * lag_step;
    if b_hat.len() <= span {
        return Vec::new();
    }
    (0..b_hat.len() - span)
        .map(|s| {
            weights
                .iter()
                .enumerate()
                .map(|(i, a)| a * b_hat[s + i * lag_step])
                .sum()
        })
        .collect()
}

/// Squared error of the weighted estimate `sum_i a_i b_hat(g + i dt)` at the
/// given truth-grid points, skipping points where it is not defined.
/// Returns the sum and the number of points used.
pub fn weighted_error_at(
    trace: &EstimateTrace,
    truth: &[f64],
    tau: f64,
    fit: &DelayFit,
    points: &[usize],
) -> Result<(f64, usize)> {
    let grid = GridTrace::new(trace, tau)?;
    let mut sum = 0.0;
    let mut n = 0;
    'points: for &g in points {
        let Some(&b) = truth.get(g) else { continue };
        let mut est = 0.0;
        for (i, a) in fit.weights.iter().enumerate() {
            match grid.at(g + i * fit.lag_step) {
                Some(v) => est += a * v,
                None => continue 'points,
            }
        }
        sum += (est - b).powi(2);
        n += 1;
    }
    Ok((sum, n))
}

/// Truth-grid points targeted by one smoother column, from time `skip` on,
/// with the squared error of each.
pub fn smoothed_errors(
    trace: &SmoothedTrace,
    truth: &[f64],
    tau: f64,
    slot: usize,
    skip: f64,
) -> Result<Vec<(usize, f64)>> {
    let delay = *trace
        .delays
        .get(slot)
        .ok_or_else(|| Error::param("slot", format!("no slot {slot}")))?;
    Ok(trace
        .times
        .iter()
        .enumerate()
        .filter_map(|(e, &t)| {
            let target = t - delay;
            if target < skip - 0.5 * tau {
                return None;
            }
            let g = (target / tau).round() as usize;
            truth
                .get(g)
                .map(|b| (g, (trace.b_hat[e][slot] - b).powi(2)))
        })
        .collect())
}

/// Mean squared error of one smoother column against the field, over
/// emissions whose target time is at least `skip`.
pub fn smoothed_error(
    trace: &SmoothedTrace,
    truth: &[f64],
    tau: f64,
    slot: usize,
    skip: f64,
) -> Result<f64> {
    let errs = smoothed_errors(trace, truth, tau, slot, skip)?;
    if errs.is_empty() {
        return Err(Error::DelayOutOfRange {
            delay: trace.delays[slot],
        });
    }
    Ok(errs.iter().map(|e| e.1).sum::<f64>() / errs.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn trace_from(values: Vec<f64>, tau: f64) -> EstimateTrace {
        let n = values.len();
        EstimateTrace {
            times: (1..=n).map(|k| k as f64 * tau).collect(),
            b_hat: values,
            b_var: vec![1.0; n],
        }
    }

    fn noise(n: usize) -> Vec<f64> {
        use rand::{Rng, SeedableRng};
        let mut rng = crate::SimRng::seed_from_u64(11);
        (0..n).map(|_| rng.random::<f64>() - 0.5).collect()
    }

    fn wiggle(n: usize) -> Vec<f64> {
        (0..n)
            .map(|k| {
                (k as f64 * 0.013).sin()
                    + 0.3 * (k as f64 * 0.071).cos()
                    + 0.1 * (k as f64 * 0.37).sin()
            })
            .collect()
    }

    #[test]
    fn zero_delay_is_plain_mse() {
        let tau = 1e-8;
        let est = wiggle(1001);
        let truth: Vec<f64> = est.iter().map(|x| x + 0.2).collect();
        // trace entry i sits at grid i+1, so feed truth on the same grid
        let trace = trace_from(est[1..].to_vec(), tau);
        let w = ScoringWindow::default();
        let prof = lag_error_profile(&trace, &truth, tau, &[0.0], &w).unwrap();
        assert_relative_eq!(prof[0], 0.04, max_relative = 1e-12);
    }

    #[test]
    fn shifted_truth_is_recovered() {
        let tau = 1e-8;
        let base = noise(3000);
        let j = 3;
        let lag_step = 5;
        // B(g) = b_hat(g + j dt)
        let trace = trace_from(base[1..].to_vec(), tau);
        let truth: Vec<f64> = (0..2900).map(|g| base[g + j * lag_step]).collect();
        let w = ScoringWindow::default();
        let fit = fit_delay_weights(&trace, &truth, tau, lag_step, 6, &w).unwrap();
        for (i, a) in fit.weights.iter().enumerate() {
            let expected = if i == j { 1.0 } else { 0.0 };
            assert!((a - expected).abs() < 1e-6, "a[{i}] = {a}");
        }
        assert!(fit.error < 1e-12);

        let delays: Vec<f64> = fit.delays(tau);
        let prof = lag_error_profile(&trace, &truth, tau, &delays, &w).unwrap();
        assert!(prof[j] < 1e-20);
        assert!(prof[0] > 1e-4);
    }

    #[test]
    fn least_squares_beats_every_single_delay() {
        let tau = 1e-8;
        let base = wiggle(5000);
        let trace = trace_from(base[1..].to_vec(), tau);
        let truth: Vec<f64> = (0..4800)
            .map(|g| 0.6 * base[g + 20] + 0.3 * base[g + 40] + 0.05 * (g as f64 * 1.7).sin())
            .collect();
        let w = ScoringWindow {
            skip: 100.0 * tau,
            sample_stride: 3,
        };
        let fit = fit_delay_weights(&trace, &truth, tau, 10, 8, &w).unwrap();
        let prof = lag_error_profile(&trace, &truth, tau, &fit.delays(tau), &w).unwrap();
        let best = prof.iter().copied().fold(f64::INFINITY, f64::min);
        assert!(fit.error <= best * (1.0 + 1e-9));
    }

    #[test]
    fn collinear_columns_fall_back_to_pseudoinverse() {
        let tau = 1e-8;
        let trace = trace_from(vec![1.0; 2000], tau);
        let truth = vec![2.0; 2000];
        let fit = fit_delay_weights(&trace, &truth, tau, 5, 3, &ScoringWindow::default()).unwrap();
        assert!(fit.collinear);
        let total: f64 = fit.weights.iter().sum();
        assert_relative_eq!(total, 2.0, max_relative = 1e-9);
        assert!(fit.error < 1e-12);
    }

    #[test]
    fn merged_records_match_concatenation() {
        let tau = 1e-8;
        let base = noise(4000);
        let truth: Vec<f64> = (0..3900)
            .map(|g| 0.5 * base[g + 3] + 0.2 * base[g])
            .collect();
        let w = ScoringWindow::default();
        let a = trace_from(base[1..2001].to_vec(), tau);
        let mut eq = NormalEquations::accumulate(&a, &truth[..2001], tau, 3, 4, &w).unwrap();
        let single = eq.solve().unwrap();
        eq.merge(&eq.clone()).unwrap();
        let doubled = eq.solve().unwrap();
        assert_eq!(doubled.samples, 2 * single.samples);
        for (x, y) in doubled.weights.iter().zip(&single.weights) {
            assert_relative_eq!(x, y, max_relative = 1e-9);
        }
        assert_relative_eq!(
            doubled.error,
            single.error,
            max_relative = 1e-6,
            epsilon = 1e-15
        );
    }

    #[test]
    fn too_few_samples() {
        let tau = 1e-8;
        let trace = trace_from(wiggle(100), tau);
        let truth = wiggle(100);
        assert!(fit_delay_weights(&trace, &truth, tau, 1, 20, &ScoringWindow::default()).is_err());
    }

    #[test]
    fn delay_out_of_range() {
        let tau = 1e-8;
        let trace = trace_from(wiggle(100), tau);
        let truth = wiggle(100);
        assert!(matches!(
            lag_error_profile(
                &trace,
                &truth,
                tau,
                &[200.0 * tau],
                &ScoringWindow::default()
            ),
            Err(Error::DelayOutOfRange { .. })
        ));
    }

    #[test]
    fn apply_weights() {
        let x = wiggle(50);
        assert_eq!(apply_delay_weights(&x, &[1.0], 3), x);
        assert!(apply_delay_weights(&x, &[0.0, 0.0, 0.0], 4)
            .iter()
            .all(|&v| v == 0.0));
        let y = apply_delay_weights(&x, &[0.5, 0.5], 2);
        assert_eq!(y.len(), 48);
        assert_relative_eq!(y[7], 0.5 * (x[7] + x[9]));
        assert!(apply_delay_weights(&x[..3], &[1.0, 1.0], 5).is_empty());
    }

    #[test]
    fn fitted_weights_reproduce_fit_error() {
        let tau = 1e-8;
        let base = wiggle(4000);
        let trace = trace_from(base[1..].to_vec(), tau);
        let truth: Vec<f64> = (0..3900).map(|g| 0.8 * base[g + 7] - 0.1).collect();
        let w = ScoringWindow::default();
        let fit = fit_delay_weights(&trace, &truth, tau, 4, 5, &w).unwrap();
        let series = apply_delay_weights(&trace.b_hat, &fit.weights, fit.lag_step);
        // series[s] estimates the field at grid s + 1
        let n = fit.samples;
        let mse: f64 = (1..=n)
            .map(|g| (series[g - 1] - truth[g]).powi(2))
            .sum::<f64>()
            / n as f64;
        assert_relative_eq!(mse, fit.error, max_relative = 1e-9);
    }
}
