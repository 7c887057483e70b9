//! Dimension-generic Gaussian beliefs.
//!
//! A belief stores a mean vector and the matrix `gamma = 2 * Cov`. The factor
//! of two is the convention used for quadrature variables, where a coherent
//! state has `gamma = 1`. Variances reported to users are always
//! `gamma_ii / 2`.
//!
//! The three primitive updates are [`GaussianBelief::affine_transform`],
//! [`GaussianBelief::add_diffusion`] and
//! [`GaussianBelief::condition_on_measurement`]. The in-place helpers
//! (`shear`, `scale`, ...) are the same maps restricted to sparse matrices and
//! are what the per-step estimators call.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Relative symmetry tolerance accepted on input matrices.
pub const SYMMETRY_TOL: f64 = 1e-10;
/// Relative diagonal jitter used by the Cholesky-based PSD check.
pub const PSD_JITTER: f64 = 1e-10;
/// Below this value the measured variance is treated as zero and its
/// pseudoinverse as 0.
pub const PINV_THRESHOLD: f64 = 1e-14;

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianBelief {
    mean: DVector<f64>,
    gamma: DMatrix<f64>,
}

/// Splits the coordinates into a retained block `A` and a measured block `B`.
///
/// The first entry of `B` is the measured coordinate; the whole `B` block is
/// refreshed to vacuum after conditioning.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockPartition {
    retained: Vec<usize>,
    measured: Vec<usize>,
}

impl BlockPartition {
    pub fn new(retained: Vec<usize>, measured: Vec<usize>, dim: usize) -> Result<Self> {
        if retained.is_empty() {
            return Err(Error::InvalidPartition("retained block is empty".into()));
        }
        if measured.is_empty() {
            return Err(Error::InvalidPartition("measured block is empty".into()));
        }
        let mut seen = vec![false; dim];
        for &i in retained.iter().chain(measured.iter()) {
            if i >= dim {
                return Err(Error::InvalidPartition(format!(
                    "index {i} out of range for dimension {dim}"
                )));
            }
            if seen[i] {
                return Err(Error::InvalidPartition(format!("index {i} appears twice")));
            }
            seen[i] = true;
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(Error::InvalidPartition(format!(
                "index {missing} is in neither block"
            )));
        }
        Ok(Self { retained, measured })
    }

    /// Retained = `0..split`, measured = `split..dim`.
    pub fn trailing(split: usize, dim: usize) -> Result<Self> {
        Self::new((0..split).collect(), (split..dim).collect(), dim)
    }

    pub fn retained(&self) -> &[usize] {
        &self.retained
    }

    pub fn measured_block(&self) -> &[usize] {
        &self.measured
    }

    pub fn measured_coordinate(&self) -> usize {
        self.measured[0]
    }

    pub fn dim(&self) -> usize {
        self.retained.len() + self.measured.len()
    }
}

/// Result of [`GaussianBelief::validate`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Diagnostics {
    /// `max |g_ij - g_ji|` divided by `max(1, max |g_ij|)`.
    pub max_asymmetry: f64,
    /// Smallest eigenvalue of the symmetric part, `None` if it could not be
    /// computed (non-finite entries).
    pub min_eigenvalue: Option<f64>,
    pub cholesky_ok: bool,
    pub has_non_finite: bool,
}

impl Diagnostics {
    pub fn is_symmetric(&self) -> bool {
        self.max_asymmetry <= SYMMETRY_TOL
    }

    pub fn is_psd(&self) -> bool {
        self.min_eigenvalue.is_some_and(|e| e >= -PSD_JITTER)
    }

    pub fn passes(&self) -> bool {
        !self.has_non_finite && self.is_symmetric() && self.is_psd()
    }
}

fn scale_of(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(1.0_f64, |acc, x| acc.max(x.abs()))
}

fn max_asymmetry(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0_f64;
    for i in 0..n {
        for j in (i + 1)..n {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst / scale_of(m)
}

/// Cholesky-based PSD test with a small relative diagonal jitter, so rank
/// deficient matrices (perfect correlations) still pass.
pub fn is_psd_cholesky(m: &DMatrix<f64>) -> bool {
    if !m.is_square() || m.iter().any(|x| !x.is_finite()) {
        return false;
    }
    let jitter = PSD_JITTER * scale_of(m);
    let mut shifted = m.clone();
    for i in 0..m.nrows() {
        shifted[(i, i)] += jitter;
    }
    shifted.cholesky().is_some()
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = avg;
            m[(j, i)] = avg;
        }
    }
}

impl GaussianBelief {
    pub fn new(mean: DVector<f64>, gamma: DMatrix<f64>) -> Result<Self> {
        if !gamma.is_square() {
            return Err(Error::DimensionMismatch {
                expected: gamma.nrows(),
                actual: gamma.ncols(),
                context: "gamma must be square",
            });
        }
        if mean.len() != gamma.nrows() {
            return Err(Error::DimensionMismatch {
                expected: gamma.nrows(),
                actual: mean.len(),
                context: "mean length vs gamma size",
            });
        }
        let asym = max_asymmetry(&gamma);
        if asym > SYMMETRY_TOL {
            return Err(Error::NotSymmetric(asym));
        }
        let mut gamma = gamma;
        symmetrize(&mut gamma);
        Ok(Self { mean, gamma })
    }

    pub fn zero_mean(gamma: DMatrix<f64>) -> Result<Self> {
        let n = gamma.nrows();
        Self::new(DVector::zeros(n), gamma)
    }

    /// Zero mean, `gamma = diag(diagonal)`.
    pub fn diagonal(diagonal: &[f64]) -> Self {
        Self {
            mean: DVector::zeros(diagonal.len()),
            gamma: DMatrix::from_diagonal(&DVector::from_column_slice(diagonal)),
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn gamma(&self) -> &DMatrix<f64> {
        &self.gamma
    }

    /// Ordinary variance of coordinate `i`, i.e. `gamma_ii / 2`.
    pub fn variance(&self, i: usize) -> f64 {
        0.5 * self.gamma[(i, i)]
    }

    pub fn set_mean(&mut self, i: usize, value: f64) {
        self.mean[i] = value;
    }

    /// `mean <- M mean + v`, `gamma <- M gamma M^T`.
    pub fn affine_transform(&self, m: &DMatrix<f64>, v: &DVector<f64>) -> Result<Self> {
        let n = self.dim();
        if m.nrows() != n || m.ncols() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                actual: if m.nrows() != n { m.nrows() } else { m.ncols() },
                context: "transform matrix",
            });
        }
        if v.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                actual: v.len(),
                context: "offset vector",
            });
        }
        let mean = m * &self.mean + v;
        let mut gamma = m * &self.gamma * m.transpose();
        symmetrize(&mut gamma);
        Ok(Self { mean, gamma })
    }

    /// `gamma <- gamma + L` for a symmetric PSD `L` (in gamma units).
    pub fn add_diffusion(&self, l: &DMatrix<f64>) -> Result<Self> {
        let n = self.dim();
        if l.nrows() != n || l.ncols() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                actual: l.nrows(),
                context: "diffusion matrix",
            });
        }
        let asym = max_asymmetry(l);
        if asym > SYMMETRY_TOL {
            return Err(Error::NotSymmetric(asym));
        }
        if !is_psd_cholesky(l) {
            return Err(Error::NotPositiveSemidefinite("diffusion matrix"));
        }
        let mut gamma = &self.gamma + l;
        symmetrize(&mut gamma);
        Ok(Self {
            mean: self.mean.clone(),
            gamma,
        })
    }

    /// Conditions on the outcome `x_meas` of the first coordinate of the
    /// measured block, then refreshes the measured block to vacuum
    /// (unit gamma, zero mean, no cross-correlations).
    ///
    /// A measured coordinate with zero variance has pseudoinverse 0, so the
    /// update degenerates to the refresh alone.
    pub fn condition_on_measurement(&self, part: &BlockPartition, x_meas: f64) -> Result<Self> {
        if part.dim() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                actual: part.dim(),
                context: "block partition",
            });
        }
        let mut next = self.clone();
        next.condition_in_place(part, x_meas);
        Ok(next)
    }

    pub(crate) fn condition_in_place(&mut self, part: &BlockPartition, x_meas: f64) {
        let m = part.measured_coordinate();
        let b = self.gamma[(m, m)];
        let pinv = if b.abs() < PINV_THRESHOLD {
            0.0
        } else {
            1.0 / b
        };
        let innovation = x_meas - self.mean[m];
        let retained = part.retained();
        let c: Vec<f64> = retained.iter().map(|&i| self.gamma[(i, m)]).collect();

        for (a, &i) in retained.iter().enumerate() {
            self.mean[i] += c[a] * pinv * innovation;
            for (bb, &j) in retained.iter().enumerate() {
                self.gamma[(i, j)] -= c[a] * pinv * c[bb];
            }
        }

        let n = self.dim();
        for &k in part.measured_block() {
            self.mean[k] = 0.0;
            for j in 0..n {
                self.gamma[(k, j)] = 0.0;
                self.gamma[(j, k)] = 0.0;
            }
            self.gamma[(k, k)] = 1.0;
        }
        symmetrize(&mut self.gamma);
    }

    /// `y_target <- y_target + coeff * y_source`, an elementary affine map.
    pub fn shear(&mut self, target: usize, source: usize, coeff: f64) {
        debug_assert_ne!(target, source);
        let n = self.dim();
        self.mean[target] += coeff * self.mean[source];
        for j in 0..n {
            self.gamma[(target, j)] += coeff * self.gamma[(source, j)];
        }
        for i in 0..n {
            self.gamma[(i, target)] += coeff * self.gamma[(i, source)];
        }
    }

    /// `y_i <- factor * y_i`.
    pub fn scale(&mut self, i: usize, factor: f64) {
        let n = self.dim();
        self.mean[i] *= factor;
        for j in 0..n {
            self.gamma[(i, j)] *= factor;
        }
        for j in 0..n {
            self.gamma[(j, i)] *= factor;
        }
    }

    /// Adds `amount` to `gamma_ii` (so the variance grows by `amount / 2`).
    pub fn add_gamma_diagonal(&mut self, i: usize, amount: f64) {
        self.gamma[(i, i)] += amount;
    }

    /// Overwrites coordinate `dst` with an exact copy of coordinate `src`.
    pub fn copy_coordinate(&mut self, dst: usize, src: usize) {
        let n = self.dim();
        self.mean[dst] = self.mean[src];
        for j in 0..n {
            if j != dst {
                self.gamma[(dst, j)] = self.gamma[(src, j)];
                self.gamma[(j, dst)] = self.gamma[(j, src)];
            }
        }
        self.gamma[(dst, dst)] = self.gamma[(src, src)];
    }

    /// Re-orders coordinates: new coordinate `i` is old coordinate `perm[i]`.
    pub fn permute(&self, perm: &[usize]) -> Result<Self> {
        let n = self.dim();
        if perm.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                actual: perm.len(),
                context: "permutation",
            });
        }
        let mean = DVector::from_fn(n, |i, _| self.mean[perm[i]]);
        let gamma = DMatrix::from_fn(n, n, |i, j| self.gamma[(perm[i], perm[j])]);
        Ok(Self { mean, gamma })
    }

    pub fn symmetrize(&mut self) {
        symmetrize(&mut self.gamma);
    }

    pub fn validate(&self) -> Diagnostics {
        let has_non_finite = self
            .mean
            .iter()
            .chain(self.gamma.iter())
            .any(|x| !x.is_finite());
        let max_asymmetry = if has_non_finite {
            f64::NAN
        } else {
            max_asymmetry(&self.gamma)
        };
        let (min_eigenvalue, cholesky_ok) = if has_non_finite {
            (None, false)
        } else {
            let mut sym = self.gamma.clone();
            symmetrize(&mut sym);
            let scale = scale_of(&sym);
            let eig = sym.clone().symmetric_eigenvalues();
            let min = eig.iter().copied().fold(f64::INFINITY, f64::min);
            (Some(min / scale), is_psd_cholesky(&sym))
        };
        Diagnostics {
            max_asymmetry,
            min_eigenvalue,
            cholesky_ok,
            has_non_finite,
        }
    }
}
