//! Physical parameters, the discrete-time interaction maps and the
//! Ornstein-Uhlenbeck field model.
//!
//! Units: field in pT, time in s. `mu` is in s^-1 pT^-1 so that `mu * tau * B`
//! is a dimensionless quadrature shift. Coordinates of the 5-variable model
//! are ordered `(B, x_at, p_at, x_ph, p_ph)`; the 4-variable model drops `B`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

pub const HBAR: f64 = 1.054_571_817e-34;
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;
pub const EPSILON_0: f64 = 8.854_187_812_8e-12;

/// Above this value of `kappa^2 tau` the first-order step maps drift from
/// the continuous-time dynamics by more than a few percent.
pub const KAPPA_SQ_TAU_WARN: f64 = 0.05;

/// Microscopic quantities that determine the atom-light coupling.
/// Any of them may be absent; [`Constituents::kappa`] then fails.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Constituents {
    pub n_atoms: Option<f64>,
    /// Photon flux (s^-1).
    pub photon_flux: Option<f64>,
    /// Beam cross-section (m^2).
    pub area: Option<f64>,
    /// Wavelength (m).
    pub wavelength: Option<f64>,
    /// Detuning as an angular frequency (rad/s).
    pub detuning: Option<f64>,
    /// Transition dipole moment (C m).
    pub dipole: Option<f64>,
}

impl Default for Constituents {
    /// Cesium vapour values.
    fn default() -> Self {
        Self {
            n_atoms: Some(2e12),
            photon_flux: Some(5e14),
            area: Some(2e-6),
            wavelength: Some(852e-9),
            detuning: Some(2.0 * std::f64::consts::PI * 10e9),
            dipole: Some(2.61e-29),
        }
    }
}

impl Constituents {
    pub fn empty() -> Self {
        Self {
            n_atoms: None,
            photon_flux: None,
            area: None,
            wavelength: None,
            detuning: None,
            dipole: None,
        }
    }

    /// `kappa = d^2 omega / (hbar Delta A c eps0) * sqrt(N_at Phi)` with
    /// `omega = 2 pi c / lambda`, in s^-1/2.
    ///
    /// This is a cross-check only: the operational coupling is
    /// [`PhysicsParams::kappa_sq`].
    pub fn kappa(&self) -> Result<f64> {
        let n_atoms = self.n_atoms.ok_or(Error::MissingConstituent("n_atoms"))?;
        let flux = self
            .photon_flux
            .ok_or(Error::MissingConstituent("photon_flux"))?;
        let area = self.area.ok_or(Error::MissingConstituent("area"))?;
        let wavelength = self
            .wavelength
            .ok_or(Error::MissingConstituent("wavelength"))?;
        let detuning = self.detuning.ok_or(Error::MissingConstituent("detuning"))?;
        let dipole = self.dipole.ok_or(Error::MissingConstituent("dipole"))?;

        let omega = 2.0 * std::f64::consts::PI * SPEED_OF_LIGHT / wavelength;
        let prefactor =
            dipole * dipole * omega / (HBAR * detuning * area * SPEED_OF_LIGHT * EPSILON_0);
        Ok(prefactor * (n_atoms * flux).sqrt())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhysicsParams {
    /// Atom-light coupling kappa^2 (s^-1).
    pub kappa_sq: f64,
    /// Field-atom coupling (s^-1 pT^-1).
    pub mu: f64,
    /// Prior field standard deviation (pT).
    pub delta_b0: f64,
    /// Light segment duration (s).
    pub tau: f64,
    pub constituents: Constituents,
}

impl Default for PhysicsParams {
    fn default() -> Self {
        Self {
            kappa_sq: 1.83e6,
            mu: 8.79e4,
            delta_b0: 1.0,
            tau: 1e-8,
            constituents: Constituents::default(),
        }
    }
}

impl PhysicsParams {
    /// `kappa * sqrt(tau)`, the per-segment atom-light shear.
    pub fn kappa_sqrt_tau(&self) -> f64 {
        (self.kappa_sq * self.tau).sqrt()
    }

    pub fn mu_tau(&self) -> f64 {
        self.mu * self.tau
    }

    /// Checks the hard invariants and returns soft warnings.
    pub fn validate(&self) -> Result<Vec<String>> {
        let positive = |name, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::param(name, format!("must be positive, got {v}")))
            }
        };
        positive("kappa_sq", self.kappa_sq)?;
        positive("mu", self.mu)?;
        positive("delta_b0", self.delta_b0)?;
        positive("tau", self.tau)?;
        let mut warnings = Vec::new();
        let kt = self.kappa_sq * self.tau;
        if kt >= KAPPA_SQ_TAU_WARN {
            warnings.push(format!(
                "kappa_sq * tau = {kt:.3} is not small; reduce tau for accurate step maps"
            ));
        }
        Ok(warnings)
    }
}

/// Ornstein-Uhlenbeck field model `dB = -gamma_b B dt + sqrt(sigma_b) dW`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OuParams {
    /// Damping rate (s^-1).
    pub gamma_b: f64,
    /// Diffusion strength (pT^2 s^-1).
    pub sigma_b: f64,
}

impl OuParams {
    pub fn new(gamma_b: f64, sigma_b: f64) -> Self {
        Self { gamma_b, sigma_b }
    }

    /// A static field: no damping, no diffusion.
    pub fn frozen() -> Self {
        Self::new(0.0, 0.0)
    }

    /// Damping rate `gamma_b` with `sigma_b` chosen so the stationary
    /// variance equals `variance`.
    pub fn with_steady_variance(gamma_b: f64, variance: f64) -> Self {
        Self::new(gamma_b, 2.0 * gamma_b * variance)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma_b.is_finite() && self.gamma_b >= 0.0) {
            return Err(Error::param("gamma_b", "must be finite and >= 0"));
        }
        if !(self.sigma_b.is_finite() && self.sigma_b >= 0.0) {
            return Err(Error::param("sigma_b", "must be finite and >= 0"));
        }
        Ok(())
    }

    /// Stationary variance `sigma_b / (2 gamma_b)` in pT^2.
    pub fn steady_variance(&self) -> Result<f64> {
        if self.gamma_b <= 0.0 {
            return Err(Error::InfiniteVariance);
        }
        Ok(self.sigma_b / (2.0 * self.gamma_b))
    }

    /// Variance of the exact one-step transition over `dt`.
    fn transition_variance(&self, dt: f64) -> f64 {
        if self.gamma_b == 0.0 {
            self.sigma_b * dt
        } else {
            -self.sigma_b * (-2.0 * self.gamma_b * dt).exp_m1() / (2.0 * self.gamma_b)
        }
    }

    /// Variance of the prediction `dt` ahead of an estimate with variance
    /// `variance_now`.
    pub fn extrapolate_variance(&self, variance_now: f64, dt: f64) -> f64 {
        variance_now * (-2.0 * self.gamma_b * dt).exp() + self.transition_variance(dt)
    }

    pub fn extrapolate_mean(&self, mean_now: f64, dt: f64) -> f64 {
        mean_now * (-self.gamma_b * dt).exp()
    }

    /// Exact discretisation of one step of length `dt`.
    pub fn step<R: Rng + ?Sized>(&self, b: f64, dt: f64, rng: &mut R) -> f64 {
        let noise: f64 = rng.sample(StandardNormal);
        self.extrapolate_mean(b, dt) + self.transition_variance(dt).sqrt() * noise
    }

    /// First-order damping and diffusion maps for the 5-variable model, in
    /// gamma units: `D = diag(1 - gamma_b tau, 1, 1, 1, 1)`,
    /// `L = diag(2 sigma_b tau, 0, 0, 0, 0)`.
    pub fn step_maps(&self, tau: f64) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        let decay = self.first_order_decay(tau)?;
        let mut d = DMatrix::identity(5, 5);
        d[(0, 0)] = decay;
        let mut l = DMatrix::zeros(5, 5);
        l[(0, 0)] = self.gamma_diffusion(tau);
        Ok((d, l))
    }

    pub(crate) fn first_order_decay(&self, tau: f64) -> Result<f64> {
        let g = self.gamma_b * tau;
        if g >= 1.0 {
            return Err(Error::param(
                "gamma_b",
                format!("gamma_b * tau = {g} >= 1 invalidates the first-order step"),
            ));
        }
        Ok(1.0 - g)
    }

    /// Per-step increment of `gamma_BB`: twice the covariance increment.
    pub(crate) fn gamma_diffusion(&self, tau: f64) -> f64 {
        2.0 * self.sigma_b * tau
    }
}

/// Four-variable map of one light segment under a known field:
/// `m <- S m + v(B)`, `gamma <- S gamma S^T`.
#[derive(Debug, Clone, PartialEq)]
pub struct InteractionMap4 {
    pub s: DMatrix<f64>,
    mu_tau: f64,
}

impl InteractionMap4 {
    pub fn new(params: &PhysicsParams) -> Self {
        let kt = params.kappa_sqrt_tau();
        let mut s = DMatrix::identity(4, 4);
        s[(0, 3)] = kt;
        s[(2, 1)] = kt;
        Self {
            s,
            mu_tau: params.mu_tau(),
        }
    }

    /// Larmor offset `(0, -mu tau B, 0, 0)`.
    pub fn offset(&self, b: f64) -> DVector<f64> {
        DVector::from_vec(vec![0.0, -self.mu_tau * b, 0.0, 0.0])
    }
}

/// Five-variable interaction map with the field carried in the state.
pub fn interaction_map_5(params: &PhysicsParams) -> DMatrix<f64> {
    let kt = params.kappa_sqrt_tau();
    let mut s = DMatrix::identity(5, 5);
    s[(1, 4)] = kt;
    s[(2, 0)] = -params.mu_tau();
    s[(3, 2)] = kt;
    s
}
