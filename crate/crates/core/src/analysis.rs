//! Trace analytics: peak detection, peak-time polynomial fits, spacings.

use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector};

/// Binned photon-count (or model intensity) series on a uniform time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeTrace {
    pub times: Vec<f64>,
    pub counts: Vec<f64>,
    pub sigma: Vec<f64>,
}

/// Grid uniformity tolerance in µs.
pub const GRID_TOL: f64 = 1e-9;

impl TimeTrace {
    pub fn new(times: Vec<f64>, counts: Vec<f64>, sigma: Vec<f64>) -> Result<Self> {
        let trace = TimeTrace { times, counts, sigma };
        trace.validate()?;
        Ok(trace)
    }

    /// Trace with Poisson uncertainties `√max(count, 1)`.
    pub fn with_poisson_sigma(times: Vec<f64>, counts: Vec<f64>) -> Result<Self> {
        let sigma = counts.iter().map(|&c| poisson_sigma(c)).collect();
        Self::new(times, counts, sigma)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.times.len();
        if self.counts.len() != n || self.sigma.len() != n {
            return Err(Error::Config(format!(
                "trace columns differ in length: {} times, {} counts, {} sigma",
                n,
                self.counts.len(),
                self.sigma.len()
            )));
        }
        if let Some(i) = (0..n).find(|&i| !self.times[i].is_finite() || !(self.counts[i] >= 0.0) || !(self.sigma[i] >= 0.0)) {
            return Err(Error::Config(format!("trace bin {i} has a non-finite time, negative count or negative sigma")));
        }
        if n >= 2 {
            let h = (self.times[n - 1] - self.times[0]) / (n - 1) as f64;
            if !(h > 0.0) {
                return Err(Error::Config("trace times must be strictly increasing".into()));
            }
            for i in 1..n {
                if !(self.times[i] > self.times[i - 1]) {
                    return Err(Error::Config(format!("trace times not strictly increasing at bin {i}")));
                }
                let expected = self.times[0] + i as f64 * h;
                if (self.times[i] - expected).abs() > GRID_TOL {
                    return Err(Error::Config(format!("trace time grid not uniform at bin {i}")));
                }
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn bin_width(&self) -> f64 {
        let n = self.times.len();
        if n < 2 {
            return 0.0;
        }
        (self.times[n - 1] - self.times[0]) / (n - 1) as f64
    }
}

#[inline]
pub fn poisson_sigma(count: f64) -> f64 {
    count.max(1.0).sqrt()
}

/// Detected oscillation maxima.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PeakSet {
    pub indices: Vec<usize>,
    /// Sub-bin peak times from a parabola through the smoothed maximum.
    pub times: Vec<f64>,
    pub prominences: Vec<f64>,
}

impl PeakSet {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// Centered moving average; the window shrinks at the edges.
pub fn moving_average(values: &[f64], halfwidth: usize) -> Vec<f64> {
    if halfwidth == 0 {
        return values.to_vec();
    }
    let n = values.len();
    let mut prefix = Vec::with_capacity(n + 1);
    prefix.push(0.0);
    for &v in values {
        prefix.push(prefix.last().unwrap() + v);
    }
    (0..n)
        .map(|i| {
            let lo = i.saturating_sub(halfwidth);
            let hi = (i + halfwidth + 1).min(n);
            (prefix[hi] - prefix[lo]) / (hi - lo) as f64
        })
        .collect()
}

/// Local maxima of `values` (plateaus resolved to their middle sample).
pub fn local_maxima(values: &[f64]) -> Vec<usize> {
    let n = values.len();
    let mut out = Vec::new();
    let mut i = 1;
    while i + 1 < n {
        if values[i] > values[i - 1] {
            let mut j = i;
            while j + 1 < n && values[j + 1] == values[i] {
                j += 1;
            }
            if j + 1 < n && values[j + 1] < values[i] {
                out.push((i + j) / 2);
            }
            i = j + 1;
        } else {
            i += 1;
        }
    }
    out
}

/// Prominence of each maximum: its height minus the higher of the lowest
/// points reached before meeting a higher sample on either side.
pub fn prominences(values: &[f64], peaks: &[usize]) -> Vec<f64> {
    peaks
        .iter()
        .map(|&p| {
            let h = values[p];
            let mut left_min = h;
            for k in (0..p).rev() {
                if values[k] > h {
                    break;
                }
                left_min = left_min.min(values[k]);
            }
            let mut right_min = h;
            for &v in &values[p + 1..] {
                if v > h {
                    break;
                }
                right_min = right_min.min(v);
            }
            h - left_min.max(right_min)
        })
        .collect()
}

/// Moving-average smoothing followed by local-maximum detection with a
/// prominence threshold.
pub fn find_peaks(trace: &TimeTrace, smooth_halfwidth: usize, min_prominence: f64) -> Result<PeakSet> {
    let n = trace.len();
    if n < 2 * smooth_halfwidth + 3 {
        return Err(Error::Analysis(format!(
            "trace of {n} bins is too short for smoothing half-width {smooth_halfwidth}"
        )));
    }
    let smooth = moving_average(&trace.counts, smooth_halfwidth);
    let maxima = local_maxima(&smooth);
    let prom = prominences(&smooth, &maxima);
    let h = trace.bin_width();
    let mut set = PeakSet::default();
    for (&i, &p) in maxima.iter().zip(&prom) {
        if p < min_prominence {
            continue;
        }
        let (a, b, c) = (smooth[i - 1], smooth[i], smooth[i + 1]);
        let denom = a - 2.0 * b + c;
        let offset = if denom < 0.0 { (0.5 * (a - c) / denom).clamp(-0.5, 0.5) } else { 0.0 };
        set.indices.push(i);
        set.times.push(trace.times[i] + offset * h);
        set.prominences.push(p);
    }
    Ok(set)
}

/// Consecutive differences of peak times.
pub fn peak_spacings(peaks: &PeakSet) -> Result<Vec<f64>> {
    if peaks.len() < 2 {
        return Err(Error::Analysis(format!("need at least 2 peaks for spacings, found {}", peaks.len())));
    }
    Ok(peaks.times.windows(2).map(|w| w[1] - w[0]).collect())
}

/// Mean oscillation period from first and last peak.
pub fn mean_period(peaks: &PeakSet) -> Result<f64> {
    let s = peak_spacings(peaks)?;
    Ok((peaks.times[peaks.len() - 1] - peaks.times[0]) / s.len() as f64)
}

/// `y = y0 + b x + c x²` fitted to peak times.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticFit {
    pub y0: f64,
    pub b: f64,
    pub c: f64,
    pub residuals: Vec<f64>,
}

impl QuadraticFit {
    pub fn residual_sum_squares(&self) -> f64 {
        self.residuals.iter().map(|r| r * r).sum()
    }
}

/// Quadratic in the 1-based peak order index, fitted to the peak times.
pub fn quadratic_peak_fit(peaks: &PeakSet) -> Result<QuadraticFit> {
    if peaks.len() < 3 {
        return Err(Error::Analysis(format!("need at least 3 peaks for a quadratic fit, found {}", peaks.len())));
    }
    let x: Vec<f64> = (1..=peaks.len()).map(|k| k as f64).collect();
    quadratic_fit(&x, &peaks.times)
}

/// Ordinary least-squares quadratic through `(x, y)`.
pub fn quadratic_fit(x: &[f64], y: &[f64]) -> Result<QuadraticFit> {
    let n = x.len();
    if n < 3 || y.len() != n {
        return Err(Error::Analysis(format!("quadratic fit needs >= 3 matching points, got {n}")));
    }
    let design = DMatrix::from_fn(n, 3, |r, c| x[r].powi(c as i32));
    let rhs = DVector::from_column_slice(y);
    let svd = design.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if !(smin > 1e-12 * smax) {
        return Err(Error::Numerical("degenerate quadratic fit design (collinear abscissae)".into()));
    }
    let coef = svd.solve(&rhs, 0.0).map_err(|e| Error::Numerical(e.to_string()))?;
    let fitted = &design * &coef;
    let residuals = (0..n).map(|i| y[i] - fitted[i]).collect();
    Ok(QuadraticFit { y0: coef[0], b: coef[1], c: coef[2], residuals })
}
