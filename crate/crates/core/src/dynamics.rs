//! Mechanistic picture of the size reduction.
//!
//! The stored Rydberg polariton `|R⟩` is coupled to the low-lying collective
//! state `|E⟩` with the detected collective Rabi frequency. During the read
//! the remaining ground-state atoms are lost at `γ_loss` and `|E⟩` converts
//! into photons at `γ_conv`, so the coupling shrinks:
//!
//! ```text
//! N′(t)   = N′(0) e^{-γ_loss t}
//! η(t)    = 1 - (1 - η(0)) e^{-γ_conv t}
//! Ω(t)    = (N′(t)/N) √(1 - η(t)) Ω₁
//! ȧ_e     = -(γ_e + γ_conv)/2 · a_e + i Ω(t)/2 · a_r
//! ȧ_r     = i Δ a_r + i Ω(t)/2 · a_e
//! ```
//!
//! The emitted intensity is `γ_e |a_e|²`. Nothing here uses the Gaussian
//! envelope or the chirp factor of the closed-form model.

use crate::analysis::{find_peaks, mean_period, quadratic_peak_fit, QuadraticFit, TimeTrace};
use crate::broadening::{hermite_rule, BroadeningParams, ShiftSamples};
use crate::error::{Error, Result};
use crate::fitting::FitResult;
use crate::model::{collective_rabi, CollectiveSizeParams};
use num_complex::Complex64;
use rayon::prelude::*;
use std::f64::consts::TAU;

/// Radiative decay rate of the 5P₃/₂ level, 2π × 6.07 MHz. Taken from the
/// atomic-physics literature, used only as a default.
pub const RB_5P_DECAY_RATE: f64 = TAU * 6.07;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DynamicsConfig {
    /// Initial collective-state sizes and single-atom couplings.
    pub size: CollectiveSizeParams,
    /// Ground-atom loss rate (1/µs).
    pub gamma_loss: f64,
    /// Conversion rate of `|E⟩` into photons (1/µs).
    pub gamma_conv: f64,
    /// Excited-state decay rate (1/µs).
    pub gamma_e: f64,
    /// Two-level detuning (rad/µs).
    pub delta: f64,
    /// RK4 step (µs).
    pub dt: f64,
    /// Horizon (µs).
    pub t_end: f64,
}

impl Default for DynamicsConfig {
    fn default() -> Self {
        DynamicsConfig {
            size: CollectiveSizeParams {
                n_m: 1000.0,
                n_m_prime: 1000.0,
                eta: 0.0,
                omega_g: 0.0,
                omega: TAU * 50.0,
            },
            gamma_loss: 1.5,
            gamma_conv: 1.0,
            gamma_e: RB_5P_DECAY_RATE,
            delta: 0.0,
            dt: 1e-4,
            t_end: 0.3,
        }
    }
}

impl DynamicsConfig {
    /// Remaining-atom count, effective conversion and coupling at time `t`.
    pub fn size_at(&self, t: f64) -> CollectiveSizeParams {
        let s = self.size;
        CollectiveSizeParams {
            n_m_prime: s.n_m_prime * (-self.gamma_loss * t).exp(),
            eta: 1.0 - (1.0 - s.eta) * (-self.gamma_conv * t).exp(),
            ..s
        }
    }

    pub fn coupling_at(&self, t: f64) -> f64 {
        collective_rabi(&self.size_at(t)).detected
    }

    pub fn validate(&self) -> Result<()> {
        self.size.validate()?;
        for (name, v) in [("gamma_loss", self.gamma_loss), ("gamma_conv", self.gamma_conv), ("gamma_e", self.gamma_e)] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        if !self.delta.is_finite() {
            return Err(Error::Config("detuning must be finite".into()));
        }
        if !(self.dt > 0.0) || !(self.t_end > self.dt) || !self.t_end.is_finite() {
            return Err(Error::Config(format!("need 0 < dt < t_end, got dt = {}, t_end = {}", self.dt, self.t_end)));
        }
        let omega_max = self.coupling_at(0.0).abs();
        if omega_max > 0.0 {
            let limit = TAU / omega_max / 20.0;
            if self.dt > limit {
                return Err(Error::Config(format!(
                    "step {} µs exceeds the resolution guard {limit:.3e} µs (20 steps per Rabi period)",
                    self.dt
                )));
            }
        }
        Ok(())
    }

    pub fn n_steps(&self) -> usize {
        (self.t_end / self.dt).round() as usize
    }
}

/// Sampled solution of the two-level read-out.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct StateTrajectory {
    pub times: Vec<f64>,
    /// Amplitude of `|E⟩`. For ensemble averages this is `√⟨|a_e|²⟩`.
    pub amp_e: Vec<Complex64>,
    /// Amplitude of `|R⟩`. For ensemble averages this is `√⟨|a_r|²⟩`.
    pub amp_r: Vec<Complex64>,
    pub omega_coll: Vec<f64>,
    pub n_prime: Vec<f64>,
    pub intensity: Vec<f64>,
}

impl StateTrajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn population(&self, k: usize) -> f64 {
        self.amp_e[k].norm_sqr() + self.amp_r[k].norm_sqr()
    }

    /// Every `stride`-th intensity sample scaled to unit peak, with unit
    /// uncertainties, as a trace for peak analysis or fitting.
    pub fn intensity_trace(&self, stride: usize) -> Result<TimeTrace> {
        if self.is_empty() {
            return Err(Error::Analysis("empty trajectory".into()));
        }
        let stride = stride.max(1);
        let peak = self.intensity.iter().cloned().fold(0.0, f64::max);
        let scale = if peak > 0.0 { 1.0 / peak } else { 1.0 };
        let idx: Vec<usize> = (0..self.len()).step_by(stride).collect();
        let times = idx.iter().map(|&i| self.times[i]).collect();
        let counts: Vec<f64> = idx.iter().map(|&i| self.intensity[i] * scale).collect();
        let sigma = vec![1.0; counts.len()];
        TimeTrace::new(times, counts, sigma)
    }
}

/// Fixed-step classical RK4 integration of the read-out, starting from the
/// stored polariton (`a_r = 1`, `a_e = 0`).
pub fn evolve(cfg: &DynamicsConfig) -> Result<StateTrajectory> {
    cfg.validate()?;
    integrate(cfg, cfg.delta)
}

fn integrate(cfg: &DynamicsConfig, delta: f64) -> Result<StateTrajectory> {
    let n = cfg.n_steps();
    let h = cfg.dt;
    let damp = 0.5 * (cfg.gamma_e + cfg.gamma_conv);
    let i = Complex64::i();
    let rhs = |t: f64, e: Complex64, r: Complex64| {
        let half = 0.5 * cfg.coupling_at(t);
        (-damp * e + i * half * r, i * delta * r + i * half * e)
    };

    let mut traj = StateTrajectory {
        times: Vec::with_capacity(n + 1),
        amp_e: Vec::with_capacity(n + 1),
        amp_r: Vec::with_capacity(n + 1),
        omega_coll: Vec::with_capacity(n + 1),
        n_prime: Vec::with_capacity(n + 1),
        intensity: Vec::with_capacity(n + 1),
    };
    let (mut e, mut r) = (Complex64::new(0.0, 0.0), Complex64::new(1.0, 0.0));
    for k in 0..=n {
        let t = k as f64 * h;
        let size = cfg.size_at(t);
        traj.times.push(t);
        traj.amp_e.push(e);
        traj.amp_r.push(r);
        traj.omega_coll.push(collective_rabi(&size).detected);
        traj.n_prime.push(size.n_m_prime);
        traj.intensity.push(cfg.gamma_e * e.norm_sqr());
        if k == n {
            break;
        }
        let (k1e, k1r) = rhs(t, e, r);
        let (k2e, k2r) = rhs(t + 0.5 * h, e + 0.5 * h * k1e, r + 0.5 * h * k1r);
        let (k3e, k3r) = rhs(t + 0.5 * h, e + 0.5 * h * k2e, r + 0.5 * h * k2r);
        let (k4e, k4r) = rhs(t + h, e + h * k3e, r + h * k3r);
        e += h / 6.0 * (k1e + 2.0 * k2e + 2.0 * k3e + k4e);
        r += h / 6.0 * (k1r + 2.0 * k2r + 2.0 * k3r + k4r);
        if !(e.re.is_finite() && e.im.is_finite() && r.re.is_finite() && r.im.is_finite()) {
            return Err(Error::Numerical(format!("non-finite amplitude at t = {:.6e} µs", t + h)));
        }
    }
    Ok(traj)
}

/// Incoherent average over the Gaussian shift distribution: each Hermite
/// node is evolved separately and populations (not amplitudes) are averaged
/// in ascending node order.
pub fn ensemble_average(cfg: &DynamicsConfig, b: &BroadeningParams) -> Result<StateTrajectory> {
    cfg.validate()?;
    b.validate()?;
    let rule = hermite_rule(b.n_nodes)?;
    let samples = ShiftSamples::new(&rule, b.alpha, cfg.delta);
    let runs: Vec<Result<StateTrajectory>> = samples.shifts.par_iter().map(|&d| integrate(cfg, d)).collect();

    let mut out: Option<(StateTrajectory, Vec<f64>, Vec<f64>)> = None;
    for (run, &w) in runs.into_iter().zip(&samples.weights) {
        let run = run?;
        let (acc, pe, pr) = out.get_or_insert_with(|| {
            let n = run.len();
            let base = StateTrajectory { intensity: vec![0.0; n], ..run.clone() };
            (base, vec![0.0; n], vec![0.0; n])
        });
        for k in 0..run.len() {
            acc.intensity[k] += w * run.intensity[k];
            pe[k] += w * run.amp_e[k].norm_sqr();
            pr[k] += w * run.amp_r[k].norm_sqr();
        }
    }
    let (mut acc, pe, pr) = out.ok_or_else(|| Error::Config("empty quadrature rule".into()))?;
    acc.amp_e = pe.iter().map(|&p| Complex64::new(p.max(0.0).sqrt(), 0.0)).collect();
    acc.amp_r = pr.iter().map(|&p| Complex64::new(p.max(0.0).sqrt(), 0.0)).collect();
    Ok(acc)
}

/// Peak-time comparison between a mechanistic trajectory and a closed-form
/// fit of its intensity.
#[derive(Debug, Clone, PartialEq)]
pub struct CompareReport {
    pub trajectory_peaks: Vec<f64>,
    pub model_peaks: Vec<f64>,
    pub trajectory_quadratic: QuadraticFit,
    pub model_quadratic: QuadraticFit,
    pub trajectory_period: f64,
    pub model_period: f64,
    /// `(f_model - f_traj)/f_traj` of the mean peak frequencies.
    pub relative_frequency_discrepancy: f64,
    /// Fitted chirp coefficient C (1/µs).
    pub fitted_chirp: f64,
}

pub fn compare_to_model(traj: &StateTrajectory, fit: &FitResult) -> Result<CompareReport> {
    if traj.is_empty() {
        return Err(Error::Analysis("empty trajectory".into()));
    }
    if !fit.converged {
        return Err(Error::Analysis("fit did not converge; nothing to compare".into()));
    }
    let trace = traj.intensity_trace(1)?;
    let model_values = fit.evaluate(&trace.times)?;
    let model_trace = TimeTrace::new(trace.times.clone(), model_values.iter().map(|v| v.max(0.0)).collect(), vec![1.0; trace.len()])?;

    let peaks_of = |tr: &TimeTrace| -> Result<_> {
        let top = tr.counts.iter().cloned().fold(0.0, f64::max);
        find_peaks(tr, 0, 1e-6 * top)
    };
    let tp = peaks_of(&trace)?;
    let mp = peaks_of(&model_trace)?;
    let tq = quadratic_peak_fit(&tp)?;
    let mq = quadratic_peak_fit(&mp)?;
    let t_period = mean_period(&tp)?;
    let m_period = mean_period(&mp)?;
    Ok(CompareReport {
        trajectory_peaks: tp.times,
        model_peaks: mp.times,
        trajectory_quadratic: tq,
        model_quadratic: mq,
        trajectory_period: t_period,
        model_period: m_period,
        relative_frequency_discrepancy: t_period / m_period - 1.0,
        fitted_chirp: fit.get(crate::fitting::ParamId::Chirp).unwrap_or(0.0),
    })
}
