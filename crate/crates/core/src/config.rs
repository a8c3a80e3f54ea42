//! Flat `key = value` configuration.
//!
//! Keys are namespaced (`model.omega_n_mhz`, `fit.max_iter`, ...). Lines
//! starting with `#` and blank lines are ignored. Unknown keys are rejected.
//! Frequencies are cyclic MHz, rates 1/µs, times µs.

use crate::error::{Error, Result};
use std::collections::BTreeMap;

/// Every accepted key with a one-line description.
pub const KEYS: &[(&str, &str)] = &[
    ("model.kind", "eq4 | eq5 | double | dynamics"),
    ("model.preset", "fig2b | fig2c | fig2d | fig2e | fig4e | fig4f"),
    ("model.omega_n_mhz", "Rabi frequency Ωₙ"),
    ("model.omega_n2_mhz", "second Rabi frequency (double)"),
    ("model.weight2", "relative weight of the second component (double)"),
    ("model.beta", "envelope rate β (1/µs)"),
    ("model.chirp", "chirp rate C (1/µs)"),
    ("model.t0", "envelope centre t₀ (µs)"),
    ("model.delta_mhz", "centre of the shift distribution"),
    ("model.sigma_mhz", "width σ_Δ of the shift distribution"),
    ("grid.t_start", "first sample time of simulate (µs)"),
    ("grid.t_end", "last sample time of simulate (µs)"),
    ("grid.n_points", "number of simulate samples"),
    ("simulate.amplitude", "scale applied to the simulated signal"),
    ("simulate.baseline", "offset added to the simulated signal"),
    ("synth.t_start", "window start (µs)"),
    ("synth.t_end", "window end (µs)"),
    ("synth.n_bins", "number of bins"),
    ("synth.amplitude", "counts per unit signal"),
    ("synth.baseline", "background counts per bin"),
    ("synth.seed", "Poisson seed"),
    ("fit.model", "single | double"),
    ("fit.max_iter", "iteration cap"),
    ("fit.n_starts", "number of starts"),
    ("fit.seed", "seed for start perturbations"),
    ("fit.sigma_mhz", "σ_Δ held fixed (ignored when fit.free_sigma = true)"),
    ("fit.free_sigma", "fit the broadening width too (true | false)"),
    ("fit.n_nodes", "Gauss-Hermite nodes"),
    ("peaks.smooth", "moving-average half-width (bins)"),
    ("peaks.prominence", "minimum prominence as a fraction of the smoothed range"),
    ("dynamics.n_m", "atoms in the collective state"),
    ("dynamics.n_m_prime", "initially remaining ground atoms"),
    ("dynamics.eta", "initial conversion efficiency"),
    ("dynamics.omega_mhz", "single-atom coupling Ω"),
    ("dynamics.omega_g_mhz", "ground-transition coupling Ω_g"),
    ("dynamics.gamma_loss", "ground-atom loss rate (1/µs)"),
    ("dynamics.gamma_conv", "conversion rate (1/µs)"),
    ("dynamics.gamma_e", "excited-state decay rate (1/µs)"),
    ("dynamics.delta_mhz", "two-level detuning"),
    ("dynamics.dt", "RK4 step (µs)"),
    ("dynamics.t_end", "horizon (µs)"),
    ("dynamics.sigma_mhz", "shift width for ensemble averaging, 0 for none"),
    ("dynamics.stride", "keep every n-th step for output and fitting"),
];

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Config {
    entries: BTreeMap<String, String>,
}

fn check_key(key: &str) -> Result<()> {
    if KEYS.iter().any(|(k, _)| *k == key) {
        Ok(())
    } else {
        Err(Error::Config(format!("unknown configuration key '{key}'")))
    }
}

impl Config {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Config::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(Error::Parse { line: i + 1, msg: format!("expected 'key = value', got '{line}'") });
            };
            let (k, v) = (k.trim(), v.trim());
            if check_key(k).is_err() {
                return Err(Error::Parse { line: i + 1, msg: format!("unknown configuration key '{k}'") });
            }
            cfg.entries.insert(k.to_string(), v.to_string());
        }
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Config::parse(&text)
    }

    /// Applies a `key=value` override.
    pub fn set_pair(&mut self, pair: &str) -> Result<()> {
        let (k, v) = pair
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override '{pair}' is not of the form key=value")))?;
        self.set(k.trim(), v.trim())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        check_key(key)?;
        self.entries.insert(key.to_string(), value.to_string());
        Ok(())
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    pub fn str(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    /// Finite decimal number; `None` when absent.
    pub fn f64(&self, key: &str) -> Result<Option<f64>> {
        self.str(key)
            .map(|s| {
                let v: f64 = s.parse().map_err(|_| Error::Config(format!("{key}: '{s}' is not a number")))?;
                if v.is_finite() {
                    Ok(v)
                } else {
                    Err(Error::Config(format!("{key}: '{s}' is not finite")))
                }
            })
            .transpose()
    }

    pub fn f64_or(&self, key: &str, default: f64) -> Result<f64> {
        Ok(self.f64(key)?.unwrap_or(default))
    }

    pub fn u64(&self, key: &str) -> Result<Option<u64>> {
        self.str(key)
            .map(|s| s.parse().map_err(|_| Error::Config(format!("{key}: '{s}' is not a non-negative integer"))))
            .transpose()
    }

    pub fn usize_or(&self, key: &str, default: usize) -> Result<usize> {
        Ok(self.u64(key)?.map(|v| v as usize).unwrap_or(default))
    }

    pub fn bool_or(&self, key: &str, default: bool) -> Result<bool> {
        match self.str(key) {
            None => Ok(default),
            Some("true") => Ok(true),
            Some("false") => Ok(false),
            Some(s) => Err(Error::Config(format!("{key}: '{s}' is not true or false"))),
        }
    }
}
