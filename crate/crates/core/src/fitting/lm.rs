//! Damped Gauss–Newton (Levenberg–Marquardt) with box projection.

use super::{initialize, to_array, FitModelSpec, FitResult, ModelEvaluator, ModelKind, ParamArray, ParamId, ParamMap};
use crate::analysis::TimeTrace;
use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

/// Optimizer controls. The defaults are the documented algorithm constants.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LmSettings {
    pub max_iter: usize,
    pub lambda_init: f64,
    pub lambda_factor: f64,
    pub lambda_max: f64,
    /// At the damping ceiling, a cost change below this fraction counts as converged.
    pub rel_cost_tol: f64,
    pub grad_tol: f64,
    /// Also stop once the gradient has fallen by this factor from the start.
    pub rel_grad_tol: f64,
    pub fd_rel_step: f64,
    pub fd_abs_step: f64,
}

impl Default for LmSettings {
    fn default() -> Self {
        LmSettings {
            max_iter: 500,
            lambda_init: 1e-3,
            lambda_factor: 3.0,
            lambda_max: 1e16,
            rel_cost_tol: 1e-10,
            grad_tol: 1e-8,
            rel_grad_tol: 1e-6,
            fd_rel_step: 1e-6,
            fd_abs_step: 1e-9,
        }
    }
}

struct Problem<'a> {
    ev: ModelEvaluator,
    trace: &'a TimeTrace,
    sqrt_w: Vec<f64>,
    free: Vec<ParamId>,
    bounds: Vec<(f64, f64)>,
    base: ParamArray,
    settings: LmSettings,
}

impl Problem<'_> {
    fn full(&self, x: &[f64]) -> ParamArray {
        let mut p = self.base;
        for (k, &id) in self.free.iter().enumerate() {
            p[id.index()] = x[k];
        }
        p
    }

    fn project(&self, x: &mut [f64]) {
        for (v, &(lo, hi)) in x.iter_mut().zip(&self.bounds) {
            *v = v.clamp(lo, hi);
        }
    }

    fn residuals(&self, x: &[f64], out: &mut [f64]) {
        self.ev.eval_into(&self.full(x), &self.trace.times, out);
        for ((o, &w), &y) in out.iter_mut().zip(&self.sqrt_w).zip(&self.trace.counts) {
            *o = w * (y - *o);
        }
    }

    /// Jacobian of the weighted model (`-∂r/∂x`), central differences.
    fn jacobian(&self, x: &[f64]) -> DMatrix<f64> {
        let n = self.trace.len();
        let k = x.len();
        let mut jac = DMatrix::zeros(n, k);
        let mut hi = vec![0.0; n];
        let mut lo = vec![0.0; n];
        let mut xp = x.to_vec();
        for j in 0..k {
            let h = (self.settings.fd_rel_step * x[j].abs()).max(self.settings.fd_abs_step);
            xp[j] = x[j] + h;
            self.ev.eval_into(&self.full(&xp), &self.trace.times, &mut hi);
            xp[j] = x[j] - h;
            self.ev.eval_into(&self.full(&xp), &self.trace.times, &mut lo);
            xp[j] = x[j];
            for i in 0..n {
                jac[(i, j)] = self.sqrt_w[i] * (hi[i] - lo[i]) / (2.0 * h);
            }
        }
        jac
    }

    /// Which parameters sit on a bound with the descent direction pointing out.
    fn pinned(&self, x: &[f64], g: &DVector<f64>) -> Vec<bool> {
        (0..x.len())
            .map(|j| {
                let (lo, hi) = self.bounds[j];
                (x[j] <= lo && g[j] < 0.0) || (x[j] >= hi && g[j] > 0.0)
            })
            .collect()
    }
}

fn cost_of(r: &[f64]) -> f64 {
    r.iter().map(|v| v * v).sum()
}

/// Weighted least-squares fit of `spec.kind` to `trace` starting from `init`.
///
/// Weights are `1/σᵢ²` from the trace. Double-model starts and results are
/// put in canonical order `Ωₙ < Ωₙ₂`.
pub fn fit(trace: &TimeTrace, spec: &FitModelSpec, init: &ParamMap) -> Result<FitResult> {
    fit_with(trace, spec, init, LmSettings::default())
}

pub fn fit_with(trace: &TimeTrace, spec: &FitModelSpec, init: &ParamMap, settings: LmSettings) -> Result<FitResult> {
    spec.validate()?;
    trace.validate()?;
    if let Some(s) = trace.sigma.iter().find(|&&s| !(s > 0.0)) {
        return Err(Error::Config(format!("trace uncertainties must be > 0, found {s}")));
    }
    let mut start = init.clone();
    for (&p, &v) in &spec.fixed {
        start.insert(p, v);
    }
    for &p in spec.kind.params() {
        match start.get(&p) {
            Some(v) if v.is_finite() => {}
            _ => return Err(Error::Config(format!("initial value for {p} missing or not finite"))),
        }
    }
    if spec.kind == ModelKind::Double {
        canonical_order(&mut start);
    }
    let free = spec.free_params();
    let n = trace.len();
    if n <= free.len() {
        return Err(Error::Config(format!("{n} points cannot determine {} free parameters", free.len())));
    }
    let problem = Problem {
        ev: ModelEvaluator::new(spec.kind, spec.n_nodes)?,
        trace,
        sqrt_w: trace.sigma.iter().map(|s| 1.0 / s).collect(),
        bounds: free.iter().map(|&p| spec.bounds_of(p)).collect(),
        free: free.clone(),
        base: to_array(&start),
        settings,
    };
    let mut x: Vec<f64> = free.iter().map(|p| start[p]).collect();
    problem.project(&mut x);

    let mut r = vec![0.0; n];
    problem.residuals(&x, &mut r);
    let mut cost = cost_of(&r);
    if !cost.is_finite() {
        return Err(Error::Numerical("model is not finite at the starting point".into()));
    }
    let mut history = vec![cost];
    let mut lambda = settings.lambda_init;
    let mut n_iter = 0;
    let mut converged = false;
    let mut g0 = None;
    let mut gnorm = 0.0;
    let mut r_new = vec![0.0; n];

    'outer: while n_iter < settings.max_iter {
        let jac = problem.jacobian(&x);
        let jt = jac.transpose();
        let h = &jt * &jac;
        let g = &jt * DVector::from_column_slice(&r);
        let pinned = problem.pinned(&x, &g);
        gnorm = (0..x.len()).filter(|&j| !pinned[j]).map(|j| (2.0 * g[j]).abs()).fold(0.0, f64::max);
        let g_init = *g0.get_or_insert(gnorm);
        // the relative test matters on nearly exact fits, where the optimizer
        // otherwise crawls along directions the data cannot resolve (t0 once
        // beta has reached 0)
        if gnorm < settings.grad_tol || gnorm <= settings.rel_grad_tol * g_init || cost == 0.0 {
            converged = true;
            break;
        }
        loop {
            let mut a = h.clone();
            for j in 0..x.len() {
                a[(j, j)] += lambda * h[(j, j)].max(1e-12 * h.diagonal().max()).max(f64::MIN_POSITIVE);
            }
            let step = match a.cholesky() {
                Some(ch) => ch.solve(&g),
                None => {
                    lambda *= settings.lambda_factor;
                    if lambda > settings.lambda_max {
                        return Err(Error::Numerical("normal equations singular up to the damping ceiling".into()));
                    }
                    continue;
                }
            };
            let mut x_new: Vec<f64> = (0..x.len()).map(|j| x[j] + step[j]).collect();
            problem.project(&mut x_new);
            problem.residuals(&x_new, &mut r_new);
            let cost_new = cost_of(&r_new);
            if cost_new.is_finite() && cost_new < cost {
                x = x_new;
                std::mem::swap(&mut r, &mut r_new);
                cost = cost_new;
                history.push(cost);
                lambda = (lambda / settings.lambda_factor).max(1e-15);
                n_iter += 1;
                // a small cost change alone does not end the run: slow fits
                // would stop short of the gradient test at the top of the loop
                break;
            }
            lambda *= settings.lambda_factor;
            if lambda > settings.lambda_max {
                // no descent even along the scaled gradient: a minimum to
                // working precision unless the gradient is still large
                converged = gnorm <= settings.rel_grad_tol * g_init
                    || cost_new.is_finite() && (cost_new - cost).abs() <= settings.rel_cost_tol * cost;
                n_iter += 1;
                break 'outer;
            }
        }
    }

    let mut estimates = start;
    for (k, &p) in free.iter().enumerate() {
        estimates.insert(p, x[k]);
    }
    let jac = problem.jacobian(&x);
    let g = jac.transpose() * DVector::from_column_slice(&r);
    let pinned = problem.pinned(&x, &g);
    let final_gradient = (0..x.len()).filter(|&j| !pinned[j]).map(|j| (2.0 * g[j]).abs()).fold(0.0, f64::max);
    let covariance = covariance(&jac, &pinned);
    let dof = (n - free.len()) as f64;
    let mut result = FitResult {
        kind: spec.kind,
        n_nodes: spec.n_nodes,
        estimates,
        free,
        covariance,
        cost,
        reduced_chi2: cost / dof,
        n_points: n,
        n_iter,
        converged,
        cost_history: history,
        initial_gradient: g0.unwrap_or(gnorm),
        final_gradient,
    };
    if spec.kind == ModelKind::Double {
        canonicalize_result(&mut result);
    }
    Ok(result)
}

/// `(JᵀWJ)⁻¹` over the parameters not pinned at a bound, symmetrized.
fn covariance(jac: &DMatrix<f64>, pinned: &[bool]) -> DMatrix<f64> {
    let k = jac.ncols();
    let active: Vec<usize> = (0..k).filter(|&j| !pinned[j]).collect();
    let mut cov = DMatrix::zeros(k, k);
    if active.is_empty() {
        return cov;
    }
    let sub = jac.select_columns(&active);
    let h = sub.transpose() * &sub;
    let inv = match h.clone().cholesky() {
        Some(ch) => ch.inverse(),
        None => {
            let eps = 1e-12 * h.diagonal().max();
            h.pseudo_inverse(eps).unwrap_or_else(|_| DMatrix::zeros(active.len(), active.len()))
        }
    };
    for (a, &i) in active.iter().enumerate() {
        for (b, &j) in active.iter().enumerate() {
            cov[(i, j)] = 0.5 * (inv[(a, b)] + inv[(b, a)]);
        }
    }
    cov
}

fn canonical_order(map: &mut ParamMap) {
    let (o1, o2) = (map[&ParamId::OmegaN], map[&ParamId::OmegaN2]);
    if o2 < o1 {
        map.insert(ParamId::OmegaN, o2);
        map.insert(ParamId::OmegaN2, o1);
        let (a1, a2) = (map[&ParamId::Amplitude], map[&ParamId::Amplitude2]);
        map.insert(ParamId::Amplitude, a2);
        map.insert(ParamId::Amplitude2, a1);
    }
}

fn canonicalize_result(res: &mut FitResult) {
    let before = res.estimates.clone();
    canonical_order(&mut res.estimates);
    if before == res.estimates {
        return;
    }
    let swap = |p: ParamId| match p {
        ParamId::OmegaN => ParamId::OmegaN2,
        ParamId::OmegaN2 => ParamId::OmegaN,
        ParamId::Amplitude => ParamId::Amplitude2,
        ParamId::Amplitude2 => ParamId::Amplitude,
        q => q,
    };
    let relabeled: Vec<ParamId> = res.free.iter().map(|&p| swap(p)).collect();
    // keep `free` in model order and permute the covariance accordingly
    let perm: Vec<usize> = res.free.iter().map(|p| relabeled.iter().position(|q| q == p).unwrap()).collect();
    let old = res.covariance.clone();
    res.covariance = DMatrix::from_fn(old.nrows(), old.ncols(), |i, j| old[(perm[i], perm[j])]);
}

/// Fits from `n_starts` starting points and keeps the best.
///
/// Start 0 is the unperturbed initialization; every other start scales each
/// free parameter by an independent uniform factor in `[0.8, 1.2]` drawn from
/// a ChaCha8 stream seeded with `seed`. Starts run in parallel. The result is
/// the lowest-cost converged fit (ties go to the lower start index), or the
/// lowest-cost fit if none converged.
pub fn multi_start_fit(trace: &TimeTrace, spec: &FitModelSpec, n_starts: usize, seed: u64) -> Result<FitResult> {
    multi_start_fit_with(trace, spec, n_starts, seed, LmSettings::default())
}

pub fn multi_start_fit_with(
    trace: &TimeTrace,
    spec: &FitModelSpec,
    n_starts: usize,
    seed: u64,
    settings: LmSettings,
) -> Result<FitResult> {
    if n_starts == 0 {
        return Err(Error::Config("n_starts must be >= 1".into()));
    }
    let init = initialize(trace, spec)?;
    let free = spec.free_params();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut starts = vec![init.clone()];
    for _ in 1..n_starts {
        let mut s = init.clone();
        for &p in &free {
            let f = 1.0 + 0.2 * (2.0 * rng.random::<f64>() - 1.0);
            let (lo, hi) = spec.bounds_of(p);
            s.insert(p, (init[&p] * f).clamp(lo, hi));
        }
        starts.push(s);
    }
    let results: Vec<Result<FitResult>> = starts.par_iter().map(|s| fit_with(trace, spec, s, settings)).collect();
    select_best(results)
}

fn select_best(results: Vec<Result<FitResult>>) -> Result<FitResult> {
    let mut best: Option<(bool, FitResult)> = None;
    let mut errors = Vec::new();
    for (i, r) in results.into_iter().enumerate() {
        match r {
            Ok(f) => {
                let better = match &best {
                    None => true,
                    Some((conv, b)) => (f.converged && !conv) || (f.converged == *conv && f.cost < b.cost),
                };
                if better {
                    best = Some((f.converged, f));
                }
            }
            Err(e) => errors.push(format!("start {i}: {e}")),
        }
    }
    best.map(|(_, f)| f).ok_or(Error::AllStartsFailed(errors))
}
