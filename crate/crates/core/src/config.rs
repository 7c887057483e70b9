//! Scenario configuration: TOML file, command-line overrides and defaults.
//!
//! Precedence is flags > file > built-in defaults. The same flat key set is
//! used in config files and in output file headers, so a header can be fed
//! back in to reproduce a run.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::physics::{Constituents, OuParams, PhysicsParams};
use crate::smoother::{LagConfig, DEFAULT_DIM_CAP};
use crate::truth::DEFAULT_STEP_CAP;

/// Partial configuration. Every field is optional so layers can be merged.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigLayer {
    pub kappa_sq: Option<f64>,
    pub mu: Option<f64>,
    pub delta_b0: Option<f64>,
    pub tau: Option<f64>,
    pub gamma_b: Option<f64>,
    pub sigma_b: Option<f64>,
    /// Field model assumed by the estimator, when it differs from the truth.
    pub filter_gamma_b: Option<f64>,
    pub filter_sigma_b: Option<f64>,
    pub duration: Option<f64>,
    pub realizations: Option<usize>,
    pub seed: Option<u64>,
    pub lag_slots: Option<usize>,
    pub lag_stride: Option<usize>,
    pub step_cap: Option<u64>,
    pub out: Option<PathBuf>,
    pub n_atoms: Option<f64>,
    pub photon_flux: Option<f64>,
    pub area: Option<f64>,
    pub wavelength: Option<f64>,
    pub detuning: Option<f64>,
    pub dipole: Option<f64>,
}

macro_rules! merge_fields {
    ($hi:expr, $lo:expr, $($f:ident),*) => {
        ConfigLayer { $($f: $hi.$f.or($lo.$f)),* }
    };
}

impl ConfigLayer {
    pub fn from_toml_str(text: &str) -> std::result::Result<Self, toml::de::Error> {
        toml::from_str(text)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| Error::format(path, e.to_string()))
    }

    /// Fields set in `self` win over those in `lower`.
    pub fn over(self, lower: ConfigLayer) -> ConfigLayer {
        merge_fields!(
            self,
            lower,
            kappa_sq,
            mu,
            delta_b0,
            tau,
            gamma_b,
            sigma_b,
            filter_gamma_b,
            filter_sigma_b,
            duration,
            realizations,
            seed,
            lag_slots,
            lag_stride,
            step_cap,
            out,
            n_atoms,
            photon_flux,
            area,
            wavelength,
            detuning,
            dipole
        )
    }

    /// Sets one key from its textual value, as found in a file header.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<Option<T>> {
            value
                .trim()
                .parse()
                .map(Some)
                .map_err(|_| Error::InvalidParameter {
                    name: "header",
                    reason: format!("cannot parse `{key}` from `{value}`"),
                })
        }
        match key {
            "kappa_sq" => self.kappa_sq = num(key, value)?,
            "mu" => self.mu = num(key, value)?,
            "delta_b0" => self.delta_b0 = num(key, value)?,
            "tau" => self.tau = num(key, value)?,
            "gamma_b" => self.gamma_b = num(key, value)?,
            "sigma_b" => self.sigma_b = num(key, value)?,
            "filter_gamma_b" => self.filter_gamma_b = num(key, value)?,
            "filter_sigma_b" => self.filter_sigma_b = num(key, value)?,
            "duration" => self.duration = num(key, value)?,
            "realizations" => self.realizations = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "lag_slots" => self.lag_slots = num(key, value)?,
            "lag_stride" => self.lag_stride = num(key, value)?,
            "step_cap" => self.step_cap = num(key, value)?,
            "out" => self.out = Some(PathBuf::from(value.trim())),
            "n_atoms" => self.n_atoms = num(key, value)?,
            "photon_flux" => self.photon_flux = num(key, value)?,
            "area" => self.area = num(key, value)?,
            "wavelength" => self.wavelength = num(key, value)?,
            "detuning" => self.detuning = num(key, value)?,
            "dipole" => self.dipole = num(key, value)?,
            _ => {
                return Err(Error::InvalidParameter {
                    name: "header",
                    reason: format!("unknown key `{key}`"),
                })
            }
        }
        Ok(())
    }

    /// Rebuilds a layer from header pairs, ignoring keys that are not
    /// configuration (such as per-file seeds or column lists).
    pub fn from_header(pairs: &[(String, String)]) -> Result<Self> {
        let mut layer = ConfigLayer::default();
        for (k, v) in pairs {
            if HEADER_KEYS.contains(&k.as_str()) {
                layer.set(k, v)?;
            }
        }
        Ok(layer)
    }
}

const HEADER_KEYS: &[&str] = &[
    "kappa_sq",
    "mu",
    "delta_b0",
    "tau",
    "gamma_b",
    "sigma_b",
    "filter_gamma_b",
    "filter_sigma_b",
    "duration",
    "realizations",
    "seed",
    "lag_slots",
    "lag_stride",
    "step_cap",
    "n_atoms",
    "photon_flux",
    "area",
    "wavelength",
    "detuning",
    "dipole",
];

/// Fully resolved scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub physics: PhysicsParams,
    /// Field model used to generate data.
    pub ou: OuParams,
    /// Field model assumed by the estimators.
    pub filter_ou: OuParams,
    pub duration: f64,
    pub realizations: usize,
    pub lag: LagConfig,
    pub seed: u64,
    pub step_cap: u64,
    pub out: PathBuf,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        let ou = OuParams::new(1e3, 2e3);
        Self {
            physics: PhysicsParams::default(),
            ou,
            filter_ou: ou,
            duration: 1e-3,
            realizations: 1,
            lag: LagConfig::default(),
            seed: 0,
            step_cap: DEFAULT_STEP_CAP,
            out: PathBuf::from("."),
        }
    }
}

impl ScenarioConfig {
    /// Applies `layer` on top of the defaults and validates the result.
    pub fn resolve(layer: ConfigLayer) -> Result<Self> {
        let d = ScenarioConfig::default();
        let dc = Constituents::default();
        let physics = PhysicsParams {
            kappa_sq: layer.kappa_sq.unwrap_or(d.physics.kappa_sq),
            mu: layer.mu.unwrap_or(d.physics.mu),
            delta_b0: layer.delta_b0.unwrap_or(d.physics.delta_b0),
            tau: layer.tau.unwrap_or(d.physics.tau),
            constituents: Constituents {
                n_atoms: layer.n_atoms.or(dc.n_atoms),
                photon_flux: layer.photon_flux.or(dc.photon_flux),
                area: layer.area.or(dc.area),
                wavelength: layer.wavelength.or(dc.wavelength),
                detuning: layer.detuning.or(dc.detuning),
                dipole: layer.dipole.or(dc.dipole),
            },
        };
        let ou = OuParams::new(
            layer.gamma_b.unwrap_or(d.ou.gamma_b),
            layer.sigma_b.unwrap_or(d.ou.sigma_b),
        );
        let filter_ou = OuParams::new(
            layer.filter_gamma_b.unwrap_or(ou.gamma_b),
            layer.filter_sigma_b.unwrap_or(ou.sigma_b),
        );
        let lag = LagConfig {
            n_slots: layer.lag_slots.unwrap_or(d.lag.n_slots),
            slot_stride: layer.lag_stride.unwrap_or(d.lag.slot_stride),
        };
        let cfg = ScenarioConfig {
            physics,
            ou,
            filter_ou,
            duration: layer.duration.unwrap_or(d.duration),
            realizations: layer.realizations.unwrap_or(d.realizations),
            lag,
            seed: layer.seed.unwrap_or(d.seed),
            step_cap: layer.step_cap.unwrap_or(d.step_cap),
            out: layer.out.unwrap_or(d.out),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Hard checks. Soft warnings are returned for logging.
    pub fn validate(&self) -> Result<Vec<String>> {
        let warnings = self.physics.validate()?;
        self.ou.validate()?;
        self.filter_ou.validate()?;
        self.ou.step_maps(self.physics.tau)?;
        self.filter_ou.step_maps(self.physics.tau)?;
        self.lag.validate(DEFAULT_DIM_CAP)?;
        if self.realizations == 0 {
            return Err(Error::param("realizations", "must be >= 1"));
        }
        crate::truth::step_count(self.duration, self.physics.tau, self.step_cap)?;
        Ok(warnings)
    }

    pub fn steps(&self) -> usize {
        crate::truth::step_count(self.duration, self.physics.tau, self.step_cap).expect("validated")
    }

    /// The estimator is run with a field model different from the truth.
    pub fn is_mismatched(&self) -> bool {
        self.ou != self.filter_ou
    }

    /// Every parameter that affects generated data, as header pairs.
    pub fn header(&self) -> Vec<(String, String)> {
        let mut h: Vec<(String, String)> = Vec::new();
        let mut put = |k: &str, v: String| h.push((k.to_string(), v));
        let p = &self.physics;
        put("kappa_sq", fmt(p.kappa_sq));
        put("mu", fmt(p.mu));
        put("delta_b0", fmt(p.delta_b0));
        put("tau", fmt(p.tau));
        put("gamma_b", fmt(self.ou.gamma_b));
        put("sigma_b", fmt(self.ou.sigma_b));
        if self.is_mismatched() {
            put("filter_gamma_b", fmt(self.filter_ou.gamma_b));
            put("filter_sigma_b", fmt(self.filter_ou.sigma_b));
        }
        put("duration", fmt(self.duration));
        put("realizations", self.realizations.to_string());
        put("seed", self.seed.to_string());
        put("lag_slots", self.lag.n_slots.to_string());
        put("lag_stride", self.lag.slot_stride.to_string());
        put("step_cap", self.step_cap.to_string());
        let c = &p.constituents;
        for (k, v) in [
            ("n_atoms", c.n_atoms),
            ("photon_flux", c.photon_flux),
            ("area", c.area),
            ("wavelength", c.wavelength),
            ("detuning", c.detuning),
            ("dipole", c.dipole),
        ] {
            if let Some(v) = v {
                put(k, fmt(v));
            }
        }
        h
    }
}

/// Shortest text that parses back to the same `f64`.
pub fn fmt(x: f64) -> String {
    format!("{x:e}")
}
