//! Inhomogeneous broadening of the retrieval signal.
//!
//! The shift Δ is Gaussian-distributed with unit-normalized density
//! `√(α/π)·e^{-αΔ²}`; the broadened signal is the average of the single-shift
//! probability over that density. Two independent evaluation routes exist:
//! Gauss–Hermite quadrature (used everywhere in production) and adaptive
//! Simpson integration on a truncated support (an oracle for tests).

use crate::error::{Error, Result};
use crate::model::{chirp_factor, envelope, retrieval_probability, ChirpedOscParams};
use std::f64::consts::PI;

pub const DEFAULT_NODES: usize = 40;
pub const MAX_NODES: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BroadeningParams {
    /// Broadening coefficient α (µs²/rad²).
    pub alpha: f64,
    pub n_nodes: usize,
}

impl BroadeningParams {
    pub fn new(alpha: f64) -> Self {
        BroadeningParams { alpha, n_nodes: DEFAULT_NODES }
    }

    /// From the standard deviation of the shift distribution (rad/µs).
    pub fn from_sigma(sigma: f64) -> Self {
        Self::new(crate::units::alpha_from_sigma(sigma))
    }

    pub fn sigma(&self) -> f64 {
        crate::units::sigma_from_alpha(self.alpha)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0) || self.alpha.is_nan() {
            return Err(Error::Config(format!("broadening coefficient must be > 0, got {}", self.alpha)));
        }
        if !(1..=MAX_NODES).contains(&self.n_nodes) {
            return Err(Error::Config(format!(
                "quadrature node count must be in 1..={MAX_NODES}, got {}",
                self.n_nodes
            )));
        }
        Ok(())
    }
}

/// Gauss–Hermite nodes and weights for the weight function `e^{-x²}`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl QuadratureRule {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// `∫ e^{-x²} f(x) dx`.
    pub fn integrate<F: Fn(f64) -> f64>(&self, f: F) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(&x, &w)| w * f(x)).sum()
    }
}

/// Gauss–Hermite rule with `n` nodes, exact for polynomials of degree `2n - 1`.
///
/// Starting points come from the Golub–Welsch eigenvalue problem; each root
/// is then polished by Newton iteration on the Gaussian-scaled orthonormal
/// recurrence, which also yields the weights without overflow. Nodes are
/// ascending and mirrored exactly about zero.
pub fn hermite_rule(n: usize) -> Result<QuadratureRule> {
    if !(1..=MAX_NODES).contains(&n) {
        return Err(Error::Config(format!("Hermite rule size must be in 1..={MAX_NODES}, got {n}")));
    }
    if n == 1 {
        return Ok(QuadratureRule { nodes: vec![0.0], weights: vec![PI.sqrt()] });
    }
    let jacobi = nalgebra::DMatrix::from_fn(n, n, |i, j| {
        if i + 1 == j || j + 1 == i {
            (0.5 * i.max(j) as f64).sqrt()
        } else {
            0.0
        }
    });
    let mut guesses: Vec<f64> = jacobi.symmetric_eigenvalues().iter().copied().collect();
    guesses.sort_by(|a, b| a.total_cmp(b));

    let nf = n as f64;
    let m = n.div_ceil(2);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    // polish the non-negative half, largest first
    for (k, &start) in guesses[n - m..].iter().enumerate() {
        let mut z = start;
        for _ in 0..50 {
            let (psi_n, psi_nm1) = hermite_functions(n, z);
            let step = psi_n / ((2.0 * nf).sqrt() * psi_nm1);
            if !step.is_finite() {
                return Err(Error::Numerical(format!("Hermite root near {start} of rule {n}: non-finite Newton step")));
            }
            z -= step;
            if step.abs() <= 1e-15 * z.abs().max(1.0) {
                break;
            }
        }
        let (_, psi_nm1) = hermite_functions(n, z);
        let w = (-z * z).exp() / (nf * psi_nm1 * psi_nm1);
        let idx = n - m + k;
        let mirror = n - 1 - idx;
        let z = if n % 2 == 1 && k == 0 { 0.0 } else { z };
        nodes[idx] = z;
        nodes[mirror] = -z;
        weights[idx] = w;
        weights[mirror] = w;
    }
    Ok(QuadratureRule { nodes, weights })
}

/// `(ψ_n(z), ψ_{n-1}(z))`, orthonormal Hermite polynomials times `e^{-z²/2}`.
fn hermite_functions(n: usize, z: f64) -> (f64, f64) {
    let mut p1 = PI.powf(-0.25) * (-0.5 * z * z).exp();
    let mut p2 = 0.0;
    for j in 0..n {
        let p3 = p2;
        p2 = p1;
        let jf = j as f64;
        p1 = z * (2.0 / (jf + 1.0)).sqrt() * p2 - (jf / (jf + 1.0)).sqrt() * p3;
    }
    (p1, p2)
}

/// Shift values and unit-normalized weights of the broadening distribution,
/// ready to be averaged over.
#[derive(Debug, Clone)]
pub struct ShiftSamples {
    pub shifts: Vec<f64>,
    pub weights: Vec<f64>,
}

impl ShiftSamples {
    /// Substitutes `Δ = centre + x/√α` on the rule.
    pub fn new(rule: &QuadratureRule, alpha: f64, centre: f64) -> Self {
        let scale = 1.0 / alpha.sqrt();
        let norm = 1.0 / PI.sqrt();
        ShiftSamples {
            shifts: rule.nodes.iter().map(|&x| centre + x * scale).collect(),
            weights: rule.weights.iter().map(|&w| w * norm).collect(),
        }
    }
}

/// Broadened signal evaluator with a cached quadrature rule.
#[derive(Debug, Clone)]
pub struct Broadening {
    rule: QuadratureRule,
}

impl Broadening {
    pub fn new(n_nodes: usize) -> Result<Self> {
        Ok(Broadening { rule: hermite_rule(n_nodes)? })
    }

    pub fn rule(&self) -> &QuadratureRule {
        &self.rule
    }

    /// Broadened signal at `t`; `p.delta` is the centre of the shift
    /// distribution (normally zero).
    pub fn signal(&self, p: &ChirpedOscParams, alpha: f64, t: f64) -> f64 {
        let env = envelope(p.beta, p.t0, t);
        if env == 0.0 {
            return 0.0;
        }
        let chi_t = chirp_factor(p.chirp, t) * t;
        let scale = 1.0 / alpha.sqrt();
        let norm = 1.0 / PI.sqrt();
        let mut acc = 0.0;
        for (&x, &w) in self.rule.nodes.iter().zip(&self.rule.weights) {
            let omega = (p.delta + x * scale).hypot(p.omega_n);
            acc += w * (1.0 - (chi_t * omega).cos());
        }
        env * acc * norm
    }

    /// Evaluates the signal on a time grid.
    pub fn trace(&self, p: &ChirpedOscParams, alpha: f64, times: &[f64]) -> Vec<f64> {
        times.iter().map(|&t| self.signal(p, alpha, t)).collect()
    }
}

/// One-off broadened signal evaluation.
pub fn inhomogeneous_signal(p: &ChirpedOscParams, b: &BroadeningParams, t: f64) -> Result<f64> {
    p.validate()?;
    b.validate()?;
    Ok(Broadening::new(b.n_nodes)?.signal(p, b.alpha, t))
}

const ORACLE_HALF_WIDTH_SIGMAS: f64 = 6.0;
const ORACLE_TOL: f64 = 1e-10;
const ORACLE_MAX_DEPTH: u32 = 30;
const ORACLE_PANELS: usize = 24;

/// Average of `f(Δ)` over the broadening density, truncated to ±6σ and
/// renormalized on that support, by adaptive Simpson integration.
pub fn reference_average<F: Fn(f64) -> f64>(f: F, alpha: f64, centre: f64) -> Result<f64> {
    if !(alpha > 0.0) {
        return Err(Error::Config(format!("broadening coefficient must be > 0, got {alpha}")));
    }
    let sigma = crate::units::sigma_from_alpha(alpha);
    let half = ORACLE_HALF_WIDTH_SIGMAS * sigma;
    let density = |d: f64| (alpha / PI).sqrt() * (-alpha * d * d).exp();
    let num = simpson(&|d: f64| density(d) * f(centre + d), -half, half, ORACLE_TOL)?;
    let mass = simpson(&density, -half, half, ORACLE_TOL * 1e-2)?;
    Ok(num / mass)
}

/// Oracle for the broadened signal, independent of the Hermite path.
pub fn reference_integrate(p: &ChirpedOscParams, b: &BroadeningParams, t: f64) -> Result<f64> {
    p.validate()?;
    b.validate()?;
    reference_average(|d| retrieval_probability(&p.with_delta(d), t), b.alpha, p.delta)
}

fn simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> Result<f64> {
    let h = (b - a) / ORACLE_PANELS as f64;
    let mut total = 0.0;
    for k in 0..ORACLE_PANELS {
        let lo = a + k as f64 * h;
        let hi = if k + 1 == ORACLE_PANELS { b } else { lo + h };
        let (flo, fhi) = (f(lo), f(hi));
        let mid = 0.5 * (lo + hi);
        let fmid = f(mid);
        let whole = (hi - lo) / 6.0 * (flo + 4.0 * fmid + fhi);
        total += simpson_step(f, lo, hi, flo, fmid, fhi, whole, tol / ORACLE_PANELS as f64, 0)?;
    }
    Ok(total)
}

#[allow(clippy::too_many_arguments)]
fn simpson_step(
    f: &dyn Fn(f64) -> f64,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> Result<f64> {
    let m = 0.5 * (a + b);
    let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
    let (flm, frm) = (f(lm), f(rm));
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let diff = left + right - whole;
    if !diff.is_finite() {
        return Err(Error::Numerical(format!("non-finite integrand on [{a}, {b}]")));
    }
    if diff.abs() <= 15.0 * tol {
        return Ok(left + right + diff / 15.0);
    }
    if depth >= ORACLE_MAX_DEPTH {
        return Err(Error::Numerical(format!(
            "adaptive Simpson did not converge on [{a:.6e}, {b:.6e}] at depth {depth}: |error| ≈ {:.3e} > {:.3e}",
            diff.abs() / 15.0,
            tol
        )));
    }
    Ok(simpson_step(f, a, m, fa, flm, fm, left, 0.5 * tol, depth + 1)?
        + simpson_step(f, m, b, fm, frm, fb, right, 0.5 * tol, depth + 1)?)
}

/// Oscillation contrast inside `window`, after removing a smooth envelope.
///
/// Local extrema are located (vertex of a parabola through each discrete
/// extremum and its neighbours). The envelope at every extremum is the mean
/// of its value and the interpolated value of the opposite-type extrema; a
/// log-quadratic (Gaussian when concave) envelope is fitted through those
/// points and the extrema are divided by it. The result is
/// `(max - min)/(max + min)` of the averaged normalized maxima and minima.
pub fn visibility(times: &[f64], values: &[f64], window: (f64, f64)) -> Result<f64> {
    if times.len() != values.len() {
        return Err(Error::Analysis("time and value lengths differ".into()));
    }
    let idx: Vec<usize> = (0..times.len()).filter(|&i| times[i] >= window.0 && times[i] <= window.1).collect();
    if idx.is_empty() {
        return Err(Error::Analysis("visibility window contains no samples".into()));
    }
    let (lo, hi) = idx.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &i| {
        (lo.min(values[i]), hi.max(values[i]))
    });
    if hi - lo <= 1e-12 * hi.abs().max(lo.abs()).max(f64::MIN_POSITIVE) {
        return Ok(0.0);
    }

    let (first, last) = (idx[0], *idx.last().unwrap());
    let mut extrema: Vec<(f64, f64, bool)> = Vec::new();
    for i in first.max(1)..last.min(times.len() - 2) + 1 {
        let (a, b, c) = (values[i - 1], values[i], values[i + 1]);
        let is_max = b > a && b >= c;
        let is_min = b < a && b <= c;
        if is_max || is_min {
            let (t, v) = parabolic_vertex(times[i - 1], times[i], times[i + 1], a, b, c);
            extrema.push((t, v, is_max));
        }
    }
    let n_max = extrema.iter().filter(|e| e.2).count();
    if extrema.len() < 2 || n_max == 0 || n_max == extrema.len() {
        return Err(Error::Analysis(format!(
            "visibility needs at least one maximum and one minimum in the window, found {} extrema",
            extrema.len()
        )));
    }

    // envelope samples
    let mut env_pts = Vec::with_capacity(extrema.len());
    for (k, &(t, v, is_max)) in extrema.iter().enumerate() {
        let prev = extrema[..k].iter().rev().find(|e| e.2 != is_max);
        let next = extrema[k + 1..].iter().find(|e| e.2 != is_max);
        let opp = match (prev, next) {
            (Some(p), Some(n)) => p.1 + (n.1 - p.1) * (t - p.0) / (n.0 - p.0),
            (Some(p), None) => p.1,
            (None, Some(n)) => n.1,
            (None, None) => continue,
        };
        let e = 0.5 * (v + opp);
        if e > 0.0 {
            env_pts.push((t, e.ln()));
        }
    }
    let log_env = fit_log_envelope(&env_pts);

    let (mut sum_max, mut sum_min, mut cnt_min) = (0.0, 0.0, 0usize);
    for &(t, v, is_max) in &extrema {
        let n = v / log_env(t).exp();
        if is_max {
            sum_max += n;
        } else {
            sum_min += n;
            cnt_min += 1;
        }
    }
    let mean_max = sum_max / n_max as f64;
    let mean_min = sum_min / cnt_min as f64;
    let denom = mean_max + mean_min;
    if !(denom > 0.0) {
        return Ok(0.0);
    }
    Ok(((mean_max - mean_min) / denom).clamp(0.0, 1.0))
}

fn parabolic_vertex(t0: f64, t1: f64, t2: f64, a: f64, b: f64, c: f64) -> (f64, f64) {
    let h = t1 - t0;
    let denom = a - 2.0 * b + c;
    if denom == 0.0 || (t2 - t1 - h).abs() > 1e-9 * h.abs() {
        return (t1, b);
    }
    let off = 0.5 * (a - c) / denom;
    (t1 + off * h, b - 0.25 * (a - c) * off)
}

/// Least-squares quadratic in t through `(t, ln env)` points; falls back to
/// a linear or constant fit when there are too few points.
fn fit_log_envelope(pts: &[(f64, f64)]) -> impl Fn(f64) -> f64 {
    let n = pts.len();
    let mean_t = if n > 0 { pts.iter().map(|p| p.0).sum::<f64>() / n as f64 } else { 0.0 };
    let deg = match n {
        0 => None,
        1 | 2 => Some(0),
        3 => Some(1),
        _ => Some(2),
    };
    let coef: Vec<f64> = match deg {
        None => vec![0.0],
        Some(d) => {
            let cols = d + 1;
            let x = nalgebra::DMatrix::from_fn(n, cols, |r, c| (pts[r].0 - mean_t).powi(c as i32));
            let y = nalgebra::DVector::from_iterator(n, pts.iter().map(|p| p.1));
            match x.clone().svd(true, true).solve(&y, 1e-14) {
                Ok(s) => s.iter().copied().collect(),
                Err(_) => vec![y.mean()],
            }
        }
    };
    move |t| coef.iter().enumerate().map(|(k, c)| c * (t - mean_t).powi(k as i32)).sum()
}
