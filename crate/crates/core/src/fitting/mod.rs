//! Weighted nonlinear least squares for the broadened chirped-oscillation
//! model and its two-frequency superposition.
//!
//! Single model: `A·P_s(t; β, C, t₀, Ωₙ, α) + B`.
//! Double model: `A·P_s(t; Ωₙ) + A₂·P_s(t; Ωₙ₂) + B` with shared β, C, t₀, α
//! and canonical order `Ωₙ < Ωₙ₂`.

mod init;
mod lm;

pub use init::{chirp_from_peak_curvature, dominant_frequencies, initialize};
pub use lm::{fit, fit_with, multi_start_fit, multi_start_fit_with, LmSettings};

use crate::broadening::{Broadening, DEFAULT_NODES};
use crate::error::{Error, Result};
use crate::model::{chirp_factor, envelope};
use crate::units::{alpha_from_sigma, mhz_to_angular};
use nalgebra::DMatrix;
use std::collections::BTreeMap;
use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ParamId {
    Amplitude,
    Amplitude2,
    Baseline,
    Beta,
    Chirp,
    T0,
    OmegaN,
    OmegaN2,
    Alpha,
}

pub const N_PARAMS: usize = 9;

impl ParamId {
    pub const ALL: [ParamId; N_PARAMS] = [
        ParamId::Amplitude,
        ParamId::Amplitude2,
        ParamId::Baseline,
        ParamId::Beta,
        ParamId::Chirp,
        ParamId::T0,
        ParamId::OmegaN,
        ParamId::OmegaN2,
        ParamId::Alpha,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            ParamId::Amplitude => "amplitude",
            ParamId::Amplitude2 => "amplitude2",
            ParamId::Baseline => "baseline",
            ParamId::Beta => "beta",
            ParamId::Chirp => "chirp",
            ParamId::T0 => "t0",
            ParamId::OmegaN => "omega_n",
            ParamId::OmegaN2 => "omega_n2",
            ParamId::Alpha => "alpha",
        }
    }

    pub fn from_name(name: &str) -> Option<ParamId> {
        ParamId::ALL.into_iter().find(|p| p.name() == name)
    }

    /// Angular frequencies, reported in cyclic MHz as well.
    pub fn is_frequency(self) -> bool {
        matches!(self, ParamId::OmegaN | ParamId::OmegaN2)
    }

    pub fn unit(self) -> &'static str {
        match self {
            ParamId::Amplitude | ParamId::Amplitude2 | ParamId::Baseline => "counts",
            ParamId::Beta | ParamId::Chirp => "1/us",
            ParamId::T0 => "us",
            ParamId::OmegaN | ParamId::OmegaN2 => "rad/us",
            ParamId::Alpha => "us^2/rad^2",
        }
    }
}

impl fmt::Display for ParamId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

pub type ParamMap = BTreeMap<ParamId, f64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Single,
    Double,
}

impl ModelKind {
    pub fn params(self) -> &'static [ParamId] {
        use ParamId::*;
        match self {
            ModelKind::Single => &[Amplitude, Baseline, Beta, Chirp, T0, OmegaN, Alpha],
            ModelKind::Double => &[Amplitude, Amplitude2, Baseline, Beta, Chirp, T0, OmegaN, OmegaN2, Alpha],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Single => "single",
            ModelKind::Double => "double",
        }
    }
}

/// Default broadening width used when α is not fitted: σ_Δ = 2π × 2.5 MHz,
/// half the width of a 2π × 5 MHz transparency window.
pub fn default_alpha() -> f64 {
    alpha_from_sigma(mhz_to_angular(2.5))
}

/// Which model to fit, which parameters are held fixed, and box bounds.
#[derive(Debug, Clone, PartialEq)]
pub struct FitModelSpec {
    pub kind: ModelKind,
    pub fixed: ParamMap,
    pub bounds: BTreeMap<ParamId, (f64, f64)>,
    pub n_nodes: usize,
}

impl FitModelSpec {
    /// Single model; α held at [`default_alpha`].
    pub fn single() -> Self {
        Self::new(ModelKind::Single)
    }

    /// Double model; α held at [`default_alpha`].
    pub fn double() -> Self {
        Self::new(ModelKind::Double)
    }

    pub fn new(kind: ModelKind) -> Self {
        let mut bounds = BTreeMap::new();
        for &p in kind.params() {
            bounds.insert(p, default_bounds(p));
        }
        let mut fixed = ParamMap::new();
        fixed.insert(ParamId::Alpha, default_alpha());
        FitModelSpec { kind, fixed, bounds, n_nodes: DEFAULT_NODES }
    }

    pub fn with_fixed(mut self, p: ParamId, value: f64) -> Self {
        self.fixed.insert(p, value);
        self
    }

    pub fn with_free(mut self, p: ParamId) -> Self {
        self.fixed.remove(&p);
        self
    }

    pub fn with_bounds(mut self, p: ParamId, lo: f64, hi: f64) -> Self {
        self.bounds.insert(p, (lo, hi));
        self
    }

    pub fn bounds_of(&self, p: ParamId) -> (f64, f64) {
        self.bounds.get(&p).copied().unwrap_or_else(|| default_bounds(p))
    }

    pub fn free_params(&self) -> Vec<ParamId> {
        self.kind.params().iter().copied().filter(|p| !self.fixed.contains_key(p)).collect()
    }

    pub fn validate(&self) -> Result<()> {
        for (&p, &(lo, hi)) in &self.bounds {
            if !self.kind.params().contains(&p) {
                return Err(Error::Config(format!("bound given for {p}, which the {} model does not have", self.kind.name())));
            }
            if !(lo <= hi) {
                return Err(Error::Config(format!("bounds for {p} are not ordered: ({lo}, {hi})")));
            }
        }
        for (&p, &v) in &self.fixed {
            if !self.kind.params().contains(&p) {
                return Err(Error::Config(format!("{p} fixed, but the {} model does not have it", self.kind.name())));
            }
            if !v.is_finite() {
                return Err(Error::Config(format!("fixed value of {p} is not finite")));
            }
        }
        if let Some(&a) = self.fixed.get(&ParamId::Alpha) {
            if !(a > 0.0) {
                return Err(Error::Config(format!("alpha must be > 0, got {a}")));
            }
        }
        if !(1..=crate::broadening::MAX_NODES).contains(&self.n_nodes) {
            return Err(Error::Config(format!("n_nodes out of range: {}", self.n_nodes)));
        }
        Ok(())
    }
}

fn default_bounds(p: ParamId) -> (f64, f64) {
    match p {
        ParamId::Amplitude | ParamId::Amplitude2 | ParamId::Baseline => (0.0, f64::INFINITY),
        ParamId::Beta | ParamId::Chirp => (0.0, 1.0e3),
        ParamId::T0 => (-10.0, 10.0),
        ParamId::OmegaN | ParamId::OmegaN2 => (0.0, 1.0e4),
        ParamId::Alpha => (1.0e-8, 1.0e12),
    }
}

/// Dense parameter vector indexed by [`ParamId::index`].
pub type ParamArray = [f64; N_PARAMS];

pub fn to_array(map: &ParamMap) -> ParamArray {
    let mut a = [0.0; N_PARAMS];
    for (&p, &v) in map {
        a[p.index()] = v;
    }
    a
}

/// Evaluates the single or double model on a time grid.
#[derive(Debug, Clone)]
pub struct ModelEvaluator {
    kind: ModelKind,
    broadening: Broadening,
    /// Non-negative half of the Hermite rule with folded weights.
    half_nodes: Vec<(f64, f64)>,
}

impl ModelEvaluator {
    pub fn new(kind: ModelKind, n_nodes: usize) -> Result<Self> {
        let broadening = Broadening::new(n_nodes)?;
        let rule = broadening.rule();
        let n = rule.len();
        let norm = 1.0 / std::f64::consts::PI.sqrt();
        let mut half_nodes = Vec::with_capacity(n.div_ceil(2));
        for i in n / 2..n {
            let x = rule.nodes[i];
            let w = if x == 0.0 { rule.weights[i] } else { 2.0 * rule.weights[i] };
            half_nodes.push((x, w * norm));
        }
        Ok(ModelEvaluator { kind, broadening, half_nodes })
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn broadening(&self) -> &Broadening {
        &self.broadening
    }

    fn shifted_rabi(&self, omega_n: f64, alpha: f64) -> Vec<(f64, f64)> {
        let scale = 1.0 / alpha.sqrt();
        self.half_nodes.iter().map(|&(x, w)| ((x * scale).hypot(omega_n), w)).collect()
    }

    pub fn eval_into(&self, p: &ParamArray, times: &[f64], out: &mut [f64]) {
        use ParamId::*;
        let (beta, chirp, t0, alpha) = (p[Beta.index()], p[Chirp.index()], p[T0.index()], p[Alpha.index()]);
        let first = self.shifted_rabi(p[OmegaN.index()], alpha);
        let second = match self.kind {
            ModelKind::Double => Some(self.shifted_rabi(p[OmegaN2.index()], alpha)),
            ModelKind::Single => None,
        };
        let (a1, a2, base) = (p[Amplitude.index()], p[Amplitude2.index()], p[Baseline.index()]);
        for (o, &t) in out.iter_mut().zip(times) {
            let env = envelope(beta, t0, t);
            let chi_t = chirp_factor(chirp, t) * t;
            let avg = |nodes: &[(f64, f64)]| nodes.iter().map(|&(om, w)| w * (1.0 - (chi_t * om).cos())).sum::<f64>();
            let mut v = a1 * env * avg(&first);
            if let Some(s) = &second {
                v += a2 * env * avg(s);
            }
            *o = v + base;
        }
    }

    pub fn eval(&self, p: &ParamArray, times: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; times.len()];
        self.eval_into(p, times, &mut out);
        out
    }
}

/// Outcome of a least-squares fit.
#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub kind: ModelKind,
    pub n_nodes: usize,
    /// All model parameters, fixed ones included.
    pub estimates: ParamMap,
    /// Free parameters in covariance order.
    pub free: Vec<ParamId>,
    /// `(JᵀWJ)⁻¹` over the free parameters; rows of parameters pinned at a
    /// bound are zero.
    pub covariance: DMatrix<f64>,
    /// Weighted residual sum of squares.
    pub cost: f64,
    pub reduced_chi2: f64,
    pub n_points: usize,
    pub n_iter: usize,
    pub converged: bool,
    /// Cost after every accepted step, starting with the initial cost.
    pub cost_history: Vec<f64>,
    /// Largest projected gradient component at the start and at the end.
    pub initial_gradient: f64,
    pub final_gradient: f64,
}

impl FitResult {
    pub fn get(&self, p: ParamId) -> Option<f64> {
        self.estimates.get(&p).copied()
    }

    /// Standard error from the covariance diagonal; zero for fixed parameters.
    pub fn std_error(&self, p: ParamId) -> f64 {
        match self.free.iter().position(|&q| q == p) {
            Some(i) => self.covariance[(i, i)].max(0.0).sqrt(),
            None => 0.0,
        }
    }

    pub fn evaluate(&self, times: &[f64]) -> Result<Vec<f64>> {
        let ev = ModelEvaluator::new(self.kind, self.n_nodes)?;
        Ok(ev.eval(&to_array(&self.estimates), times))
    }
}
