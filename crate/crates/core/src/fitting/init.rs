//! Starting values for the least-squares fit.

use super::{default_alpha, FitModelSpec, ModelKind, ParamId, ParamMap};
use crate::analysis::{find_peaks, moving_average, quadratic_peak_fit, TimeTrace};
use crate::error::{Error, Result};
use crate::model::{chirp_factor, envelope, instantaneous_frequency};
use nalgebra::{Matrix3, Vector3};
use std::f64::consts::{LN_2, PI, TAU};

const MIN_BINS: usize = 16;
const OVERSAMPLE: f64 = 4.0;
/// Lowest frequency searched, in cycles per window.
const MIN_CYCLES: f64 = 3.0;

/// Angular frequencies of the strongest spectral peaks, strongest first.
///
/// The mean-subtracted, Hann-windowed trace is transformed by a direct DFT on a
/// 4× oversampled grid between 3 cycles per window and Nyquist. Successive
/// peaks must be more than two native bins apart.
pub fn dominant_frequencies(times: &[f64], values: &[f64], count: usize) -> Result<Vec<f64>> {
    let n = times.len();
    if n < MIN_BINS || values.len() != n {
        return Err(Error::Initialization(format!("spectral estimate needs >= {MIN_BINS} samples, got {n}")));
    }
    let span = times[n - 1] - times[0];
    let h = span / (n - 1) as f64;
    let mean = values.iter().sum::<f64>() / n as f64;
    let windowed: Vec<f64> = values
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let hann = 0.5 - 0.5 * (TAU * i as f64 / (n - 1) as f64).cos();
            (v - mean) * hann
        })
        .collect();
    let native = TAU / (n as f64 * h);
    let step = native / OVERSAMPLE;
    let lo = MIN_CYCLES * native;
    let hi = PI / h;
    let n_freq = ((hi - lo) / step).floor() as usize + 1;
    let freqs: Vec<f64> = (0..n_freq).map(|k| lo + k as f64 * step).collect();
    let power: Vec<f64> = freqs
        .iter()
        .map(|&w| {
            let (mut re, mut im) = (0.0, 0.0);
            for (x, &t) in windowed.iter().zip(times) {
                let ph = w * (t - times[0]);
                re += x * ph.cos();
                im -= x * ph.sin();
            }
            re * re + im * im
        })
        .collect();

    let mut peaks: Vec<usize> = (0..n_freq)
        .filter(|&k| {
            let left = k == 0 || power[k] > power[k - 1];
            let right = k + 1 == n_freq || power[k] >= power[k + 1];
            left && right && power[k] > 0.0
        })
        .collect();
    peaks.sort_by(|&a, &b| power[b].total_cmp(&power[a]).then(a.cmp(&b)));
    let mut chosen: Vec<f64> = Vec::new();
    for k in peaks {
        if chosen.len() == count {
            break;
        }
        if chosen.iter().all(|&c| (freqs[k] - c).abs() > 2.0 * native) {
            chosen.push(freqs[k]);
        }
    }
    if chosen.len() < count {
        return Err(Error::Initialization(format!(
            "found {} resolvable spectral peak(s), need {count}",
            chosen.len()
        )));
    }
    Ok(chosen)
}

/// Chirp rate matching the period lengthening seen in the quadratic peak fit.
///
/// The local period at peak `k` is `b + 2ck`; the ratio of the periods at the
/// first and last peak is matched to the ratio of instantaneous frequencies at
/// those times. Returns `None` when fewer than three peaks are found or the
/// periods do not lengthen.
pub fn chirp_from_peak_curvature(trace: &TimeTrace, smooth_halfwidth: usize, min_prominence: f64) -> Option<f64> {
    let peaks = find_peaks(trace, smooth_halfwidth, min_prominence).ok()?;
    let q = quadratic_peak_fit(&peaks).ok()?;
    let k = peaks.len() as f64;
    let (first, last) = (q.b + 2.0 * q.c, q.b + 2.0 * q.c * k);
    if !(first > 0.0 && last > 0.0) {
        return None;
    }
    let target = first / last;
    if target >= 1.0 {
        return Some(0.0);
    }
    let (t1, tk) = (peaks.times[0], peaks.times[peaks.len() - 1]);
    let t_ref = tk.abs().max(t1.abs());
    if t_ref <= 0.0 {
        return None;
    }
    // the frequency ratio dips below 1/√2 before recovering, so scan rather than bisect
    let mut best = (f64::INFINITY, 0.0);
    for s in 0..=200 {
        let c = 0.02 * s as f64 / t_ref;
        let ratio = instantaneous_frequency(c, 1.0, tk) / instantaneous_frequency(c, 1.0, t1);
        let miss = (ratio - target).abs();
        if miss < best.0 {
            best = (miss, c);
        }
    }
    Some(best.1)
}

/// Starting values for every parameter of `spec.kind`.
///
/// Fixed parameters take their fixed values. Amplitude and baseline come from
/// the count range, Ωₙ from the spectrum, t₀ and β from a one-period moving
/// average, and C from the peak-time curvature. The frequency and chirp are then
/// refined on a coarse grid of unbroadened model shapes with amplitudes and
/// baseline solved linearly at each grid point.
pub fn initialize(trace: &TimeTrace, spec: &FitModelSpec) -> Result<ParamMap> {
    spec.validate()?;
    trace.validate()?;
    let n = trace.len();
    if n < MIN_BINS {
        return Err(Error::Initialization(format!("trace has {n} bins, need at least {MIN_BINS}")));
    }
    let y = &trace.counts;
    let lo = y.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = y.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi - lo > 1e-12 * hi.abs().max(1.0)) {
        return Err(Error::Initialization("trace is flat".into()));
    }

    let n_freq = match spec.kind {
        ModelKind::Single => 1,
        ModelKind::Double => 2,
    };
    let mut freqs = dominant_frequencies(&trace.times, y, n_freq)?;
    freqs.sort_by(f64::total_cmp);

    let h = trace.bin_width();
    let period_bins = (TAU / freqs[0] / h).round().max(2.0) as usize;
    let trend = moving_average(y, period_bins / 2);
    let imax = (0..n).fold(0, |m, i| if trend[i] > trend[m] { i } else { m });
    let t0 = trace.times[imax];
    let beta = beta_from_half_maximum(&trace.times, &trend, imax, lo);

    let mut map = ParamMap::new();
    map.insert(ParamId::Beta, beta);
    map.insert(ParamId::T0, t0);
    map.insert(ParamId::Alpha, default_alpha());
    map.insert(ParamId::Baseline, lo);
    match spec.kind {
        ModelKind::Single => {
            map.insert(ParamId::Amplitude, hi - lo);
            map.insert(ParamId::OmegaN, freqs[0]);
            let chirp = chirp_from_peak_curvature(trace, 0, 0.25 * (hi - lo));
            map.insert(ParamId::Chirp, chirp.unwrap_or(0.0));
            for (&p, &v) in &spec.fixed {
                map.insert(p, v);
            }
            refine_single(trace, &mut map, chirp, spec);
        }
        ModelKind::Double => {
            map.insert(ParamId::Amplitude, 0.5 * (hi - lo));
            map.insert(ParamId::Amplitude2, 0.5 * (hi - lo));
            map.insert(ParamId::OmegaN, freqs[0]);
            map.insert(ParamId::OmegaN2, freqs[1]);
            map.insert(ParamId::Chirp, 0.0);
            for (&p, &v) in &spec.fixed {
                map.insert(p, v);
            }
            refine_double(trace, &mut map, spec);
        }
    }
    for (&p, &v) in &spec.fixed {
        map.insert(p, v);
    }
    for &p in spec.kind.params() {
        if !spec.fixed.contains_key(&p) {
            let (a, b) = spec.bounds_of(p);
            let v = map[&p];
            map.insert(p, v.clamp(a, b));
        }
    }
    Ok(map)
}

fn beta_from_half_maximum(times: &[f64], trend: &[f64], imax: usize, base: f64) -> f64 {
    let level = base + 0.5 * (trend[imax] - base);
    let n = times.len();
    let crossing = |i: usize, j: usize| {
        let f = (trend[i] - level) / (trend[i] - trend[j]);
        times[i] + f * (times[j] - times[i])
    };
    let left = (1..=imax).rev().find(|&i| trend[i - 1] < level).map(|i| crossing(i, i - 1));
    let right = (imax..n - 1).find(|&i| trend[i + 1] < level).map(|i| crossing(i, i + 1));
    let t0 = times[imax];
    let fwhm = match (left, right) {
        (Some(l), Some(r)) => r - l,
        (Some(l), None) => 2.0 * (t0 - l),
        (None, Some(r)) => 2.0 * (r - t0),
        // envelope wider than the window: use the window as a lower bound
        (None, None) => 2.0 * (t0 - times[0]).max(times[n - 1] - t0),
    };
    if fwhm > 0.0 {
        2.0 * LN_2.sqrt() / fwhm
    } else {
        0.0
    }
}

struct Shape {
    s: Vec<f64>,
    ss: f64,
    s1: f64,
    sy: f64,
}

fn shape(trace: &TimeTrace, w: &[f64], beta: f64, t0: f64, chirp: f64, omega: f64) -> Shape {
    let s: Vec<f64> = trace
        .times
        .iter()
        .map(|&t| envelope(beta, t0, t) * (1.0 - (chirp_factor(chirp, t) * omega * t).cos()))
        .collect();
    let (mut ss, mut s1, mut sy) = (0.0, 0.0, 0.0);
    for i in 0..s.len() {
        ss += w[i] * s[i] * s[i];
        s1 += w[i] * s[i];
        sy += w[i] * s[i] * trace.counts[i];
    }
    Shape { s, ss, s1, sy }
}

fn weights(trace: &TimeTrace) -> Vec<f64> {
    trace.sigma.iter().map(|&s| 1.0 / s.max(1e-300).powi(2)).collect()
}

fn chirp_grid(trace: &TimeTrace, u_max: f64, du: f64, extra: Option<f64>) -> Vec<f64> {
    let t_ref = trace.times.iter().fold(0.0f64, |m, t| m.max(t.abs()));
    let mut grid: Vec<f64> = if t_ref > 0.0 {
        (0..=(u_max / du).round() as usize).map(|k| k as f64 * du / t_ref).collect()
    } else {
        vec![0.0]
    };
    if let Some(c) = extra {
        grid.push(c);
    }
    grid
}

fn omega_grid(trace: &TimeTrace, centre: f64, lo: f64, hi: f64) -> Vec<f64> {
    let span = trace.times[trace.len() - 1] - trace.times[0];
    let step = 0.5 / span;
    let (a, b) = (lo * centre, hi * centre);
    let n = ((b - a) / step).ceil() as usize;
    (0..=n).map(|k| a + k as f64 * step).collect()
}

fn is_free(spec: &FitModelSpec, p: ParamId) -> bool {
    !spec.fixed.contains_key(&p)
}

fn refine_single(trace: &TimeTrace, map: &mut ParamMap, peak_chirp: Option<f64>, spec: &FitModelSpec) {
    let w = weights(trace);
    let (yy, y1, w1) = moments(trace, &w);
    let (beta, t0) = (map[&ParamId::Beta], map[&ParamId::T0]);
    let omegas = if is_free(spec, ParamId::OmegaN) {
        omega_grid(trace, map[&ParamId::OmegaN], 0.85, 1.5)
    } else {
        vec![map[&ParamId::OmegaN]]
    };
    let chirps = if is_free(spec, ParamId::Chirp) {
        chirp_grid(trace, 4.0, 0.1, peak_chirp)
    } else {
        vec![map[&ParamId::Chirp]]
    };
    let mut best: Option<(f64, f64, f64, f64, f64)> = None;
    for &c in &chirps {
        for &om in &omegas {
            let sh = shape(trace, &w, beta, t0, c, om);
            let det = sh.ss * w1 - sh.s1 * sh.s1;
            if !(det > 0.0) {
                continue;
            }
            let a = (sh.sy * w1 - sh.s1 * y1) / det;
            let b = (sh.ss * y1 - sh.s1 * sh.sy) / det;
            if !(a > 0.0) {
                continue;
            }
            let cost = yy - a * sh.sy - b * y1;
            if best.is_none_or(|bst| cost < bst.0) {
                best = Some((cost, om, c, a, b));
            }
        }
    }
    if let Some((_, om, c, a, b)) = best {
        map.insert(ParamId::OmegaN, om);
        map.insert(ParamId::Chirp, c);
        map.insert(ParamId::Amplitude, a);
        map.insert(ParamId::Baseline, b.max(0.0));
    }
}

fn refine_double(trace: &TimeTrace, map: &mut ParamMap, spec: &FitModelSpec) {
    let w = weights(trace);
    let (yy, y1, w1) = moments(trace, &w);
    let (beta, t0) = (map[&ParamId::Beta], map[&ParamId::T0]);
    let grid_for = |p: ParamId| {
        if is_free(spec, p) {
            omega_grid(trace, map[&p], 0.9, 1.3)
        } else {
            vec![map[&p]]
        }
    };
    let (om1, om2) = (grid_for(ParamId::OmegaN), grid_for(ParamId::OmegaN2));
    let chirps = if is_free(spec, ParamId::Chirp) {
        chirp_grid(trace, 3.0, 0.15, None)
    } else {
        vec![map[&ParamId::Chirp]]
    };
    let mut best: Option<(f64, [f64; 6])> = None;
    for &c in &chirps {
        let s1: Vec<Shape> = om1.iter().map(|&o| shape(trace, &w, beta, t0, c, o)).collect();
        let s2: Vec<Shape> = om2.iter().map(|&o| shape(trace, &w, beta, t0, c, o)).collect();
        for (i, a) in s1.iter().enumerate() {
            for (j, b) in s2.iter().enumerate() {
                if om2[j] <= om1[i] {
                    continue;
                }
                let cross: f64 = (0..w.len()).map(|k| w[k] * a.s[k] * b.s[k]).sum();
                let m = Matrix3::new(a.ss, cross, a.s1, cross, b.ss, b.s1, a.s1, b.s1, w1);
                let rhs = Vector3::new(a.sy, b.sy, y1);
                let Some(x) = m.lu().solve(&rhs) else { continue };
                if !(x[0] > 0.0 && x[1] > 0.0) {
                    continue;
                }
                let cost = yy - x.dot(&rhs);
                if best.is_none_or(|bst| cost < bst.0) {
                    best = Some((cost, [om1[i], om2[j], c, x[0], x[1], x[2]]));
                }
            }
        }
    }
    if let Some((_, [o1, o2, c, a1, a2, b])) = best {
        map.insert(ParamId::OmegaN, o1);
        map.insert(ParamId::OmegaN2, o2);
        map.insert(ParamId::Chirp, c);
        map.insert(ParamId::Amplitude, a1);
        map.insert(ParamId::Amplitude2, a2);
        map.insert(ParamId::Baseline, b.max(0.0));
    }
}

fn moments(trace: &TimeTrace, w: &[f64]) -> (f64, f64, f64) {
    let (mut yy, mut y1, mut w1) = (0.0, 0.0, 0.0);
    for (i, &y) in trace.counts.iter().enumerate() {
        yy += w[i] * y * y;
        y1 += w[i] * y;
        w1 += w[i];
    }
    (yy, y1, w1)
}
