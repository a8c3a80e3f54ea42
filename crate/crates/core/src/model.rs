//! Closed-form pieces of the chirped collective Rabi model.
//!
//! The retrieved-light shape is
//!
//! ```text
//! P_r(t) = e^{-β²(t-t₀)²} · (1 - cos(χ(C,t) · Ω · t)),   χ(C,t) = √((e^{-C²t²} + 1) / 2)
//! ```
//!
//! with `Ω = √(Δ² + Ωₙ²)`. The phase factor χ falls from 1 to 1/√2 as `|C t|`
//! grows, so the oscillation frequency drops over the read pulse.

use crate::error::{Error, Result};
use std::f64::consts::FRAC_1_SQRT_2;

/// Coupling-field drive settings, all angular (rad/µs).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DriveParams {
    pub omega_c: f64,
    pub delta_c: f64,
    pub delta_p: f64,
}

impl DriveParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.omega_c >= 0.0) || !self.delta_c.is_finite() || !self.delta_p.is_finite() {
            return Err(Error::Config(format!("invalid drive parameters {self:?}")));
        }
        Ok(())
    }
}

/// Parameters of the single-shift retrieval probability.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChirpedOscParams {
    /// Envelope rate β (1/µs).
    pub beta: f64,
    /// Chirp coefficient C (1/µs).
    pub chirp: f64,
    /// Envelope centre t₀ (µs).
    pub t0: f64,
    /// Effective Rabi frequency Ωₙ (rad/µs).
    pub omega_n: f64,
    /// Inhomogeneous shift Δ (rad/µs).
    pub delta: f64,
}

impl ChirpedOscParams {
    pub fn validate(&self) -> Result<()> {
        let ok = self.beta >= 0.0
            && self.chirp >= 0.0
            && self.omega_n >= 0.0
            && self.t0.is_finite()
            && self.delta.is_finite()
            && self.beta.is_finite()
            && self.chirp.is_finite()
            && self.omega_n.is_finite();
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid oscillation parameters {self:?}")))
        }
    }

    pub fn with_delta(mut self, delta: f64) -> Self {
        self.delta = delta;
        self
    }
}

/// Atom numbers, conversion efficiency and single-atom couplings of the
/// collective states.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CollectiveSizeParams {
    /// Initial atom number 𝒩_m.
    pub n_m: f64,
    /// Remaining ground-state atoms N_m′.
    pub n_m_prime: f64,
    /// Conversion efficiency η of the low-lying collective state into photons.
    pub eta: f64,
    /// Ground–Rydberg single-atom Rabi frequency Ω_g (rad/µs).
    pub omega_g: f64,
    /// Excited–Rydberg single-atom Rabi frequency Ω (rad/µs).
    pub omega: f64,
}

impl CollectiveSizeParams {
    pub fn validate(&self) -> Result<()> {
        let ok = self.n_m > 0.0
            && self.n_m.is_finite()
            && (0.0..=self.n_m).contains(&self.n_m_prime)
            && (0.0..=1.0).contains(&self.eta)
            && self.omega_g.is_finite()
            && self.omega.is_finite();
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid collective size parameters {self:?}")))
        }
    }
}

/// Both terms of the collective Rabi frequency.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CollectiveRabi {
    /// Ground-enhanced term plus the detected term.
    pub full: f64,
    /// Only the excited–Rydberg term, the one visible in the retrieved light.
    pub detected: f64,
}

/// `Ωₙ = √(Ω_c² + Δ_c²)`; the probe detuning plays no role.
pub fn effective_rabi(drive: &DriveParams) -> f64 {
    drive.omega_c.hypot(drive.delta_c)
}

/// `Ω = √(Δ² + Ωₙ²)`.
pub fn total_rabi(p: &ChirpedOscParams) -> f64 {
    p.delta.hypot(p.omega_n)
}

pub fn collective_rabi(s: &CollectiveSizeParams) -> CollectiveRabi {
    let detected = (s.n_m_prime / s.n_m) * (1.0 - s.eta).max(0.0).sqrt() * s.omega;
    let enhanced = (s.n_m_prime / s.n_m.sqrt()) * s.eta.max(0.0).sqrt() * s.omega_g;
    CollectiveRabi {
        full: enhanced + detected,
        detected,
    }
}

/// `χ(C,t) = √((e^{-C²t²} + 1)/2)`, in `[1/√2, 1]`.
#[inline]
pub fn chirp_factor(chirp: f64, t: f64) -> f64 {
    let u = chirp * chirp * t * t;
    (0.5 * ((-u).exp() + 1.0)).sqrt()
}

/// Accumulated oscillation phase `χ(C,t)·Ω·t`.
#[inline]
pub fn chirp_phase(chirp: f64, omega: f64, t: f64) -> f64 {
    chirp_factor(chirp, t) * omega * t
}

/// Closed-form `dφ/dt = Ω (1 + e^{-u}(1-u)) / (2χ)` with `u = C²t²`.
///
/// Equals Ω at `t = 0` and tends to `Ω/√2` once `C t` is large.
pub fn instantaneous_frequency(chirp: f64, omega: f64, t: f64) -> f64 {
    let u = chirp * chirp * t * t;
    let e = (-u).exp();
    let chi = (0.5 * (e + 1.0)).sqrt();
    omega * (1.0 + e * (1.0 - u)) / (2.0 * chi)
}

/// Lower limit of the instantaneous frequency relative to Ω.
pub const ASYMPTOTIC_FREQUENCY_RATIO: f64 = FRAC_1_SQRT_2;

/// Gaussian emission envelope `e^{-β²(t-t₀)²}`.
#[inline]
pub fn envelope(beta: f64, t0: f64, t: f64) -> f64 {
    let d = beta * (t - t0);
    (-d * d).exp()
}

/// Single-shift retrieval probability.
///
/// Always zero at `t = 0` and bounded by twice the envelope.
pub fn retrieval_probability(p: &ChirpedOscParams, t: f64) -> f64 {
    let phase = chirp_phase(p.chirp, total_rabi(p), t);
    envelope(p.beta, p.t0, t) * (1.0 - phase.cos())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::units::mhz_to_angular as w;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    #[test]
    fn effective_rabi_examples() {
        let d = DriveParams { omega_c: w(44.8), delta_c: w(23.4), delta_p: w(-2.7) };
        assert_relative_eq!(effective_rabi(&d), w(50.543_050_956_585_51), max_relative = 1e-14);
        let d = DriveParams { omega_c: 0.0, delta_c: w(17.6), delta_p: 0.0 };
        assert_relative_eq!(effective_rabi(&d), w(17.6), max_relative = 1e-15);
        let d = DriveParams { omega_c: w(3.0), delta_c: w(-4.0), delta_p: 1.0 };
        assert_relative_eq!(effective_rabi(&d), w(5.0), max_relative = 1e-15);
    }

    #[test]
    fn total_rabi_examples() {
        let base = ChirpedOscParams { beta: 0.0, chirp: 0.0, t0: 0.0, omega_n: w(46.1), delta: 0.0 };
        assert_eq!(total_rabi(&base), w(46.1));
        let p = ChirpedOscParams { omega_n: w(40.0), delta: w(30.0), ..base };
        assert_relative_eq!(total_rabi(&p), w(50.0), max_relative = 1e-15);
        let p = ChirpedOscParams { omega_n: w(12.0), delta: w(-5.0), ..base };
        assert_relative_eq!(total_rabi(&p), w(13.0), max_relative = 1e-15);
    }

    #[test]
    fn collective_rabi_examples() {
        let s = CollectiveSizeParams { n_m: 1e4, n_m_prime: 1e4, eta: 0.0, omega_g: 3.0, omega: w(40.0) };
        assert_eq!(collective_rabi(&s).detected, w(40.0));

        let s = CollectiveSizeParams { n_m_prime: 0.0, eta: 0.3, ..s };
        let r = collective_rabi(&s);
        assert_eq!((r.full, r.detected), (0.0, 0.0));

        let s = CollectiveSizeParams { n_m: 100.0, n_m_prime: 50.0, eta: 0.75, omega_g: 0.0, omega: w(40.0) };
        assert_relative_eq!(collective_rabi(&s).detected, w(10.0), max_relative = 1e-15);

        // enhanced term: 50/10 * sqrt(0.75) * 2
        let s = CollectiveSizeParams { omega_g: 2.0, ..s };
        let r = collective_rabi(&s);
        assert_relative_eq!(r.full - r.detected, 5.0 * 0.75f64.sqrt() * 2.0, max_relative = 1e-14);
    }

    #[test]
    fn size_params_validation() {
        let s = CollectiveSizeParams { n_m: 10.0, n_m_prime: 11.0, eta: 0.1, omega_g: 0.0, omega: 1.0 };
        assert!(s.validate().is_err());
        let s = CollectiveSizeParams { n_m_prime: 5.0, eta: 1.5, ..s };
        assert!(s.validate().is_err());
        let s = CollectiveSizeParams { eta: 1.0, ..s };
        assert!(s.validate().is_ok());
    }

    #[test]
    fn chirp_factor_examples() {
        assert_eq!(chirp_factor(7.0, 0.0), 1.0);
        assert_eq!(chirp_factor(0.0, 3.0), 1.0);
        assert_relative_eq!(chirp_factor(4.0, 0.5), 0.713_552_954_898_490_4, max_relative = 1e-14);
    }

    #[test]
    fn instantaneous_frequency_examples() {
        let omega = w(50.0);
        assert_eq!(instantaneous_frequency(3.0, omega, 0.0), omega);
        let far = instantaneous_frequency(1.0, omega, 40.0);
        assert_relative_eq!(far, omega * FRAC_1_SQRT_2, max_relative = 1e-12);
        // u = 2
        let v = instantaneous_frequency(2.0f64.sqrt(), omega, 1.0);
        assert_relative_eq!(v / omega, 0.573_813_382_184_548_9, max_relative = 1e-13);
    }

    #[test]
    fn retrieval_probability_examples() {
        let p = ChirpedOscParams { beta: 1.0, chirp: 0.5, t0: 0.1, omega_n: w(46.1), delta: 0.0 };
        assert_eq!(retrieval_probability(&p, 0.0), 0.0);

        let p0 = ChirpedOscParams { beta: 0.0, chirp: 0.0, t0: 0.0, ..p };
        assert_relative_eq!(retrieval_probability(&p0, PI / p0.omega_n), 2.0, max_relative = 1e-15);

        // reference: independent evaluation of the formula in 30-digit arithmetic
        assert_relative_eq!(retrieval_probability(&p, 0.05), 1.333_271_060_647_866_1, max_relative = 1e-12);
    }

    #[test]
    fn oscillation_slows_down_with_chirp() {
        // Peaks of 1 - cos(φ) sit at φ = (2k-1)π; solve for their times by bisection.
        let omega = w(50.0);
        let peak_times = |chirp: f64| -> Vec<f64> {
            (1..=12)
                .map(|k| {
                    let target = (2 * k - 1) as f64 * PI;
                    let (mut lo, mut hi) = (0.0, 1.0);
                    for _ in 0..200 {
                        let mid = 0.5 * (lo + hi);
                        if chirp_phase(chirp, omega, mid) < target { lo = mid } else { hi = mid }
                    }
                    0.5 * (lo + hi)
                })
                .collect()
        };
        let t = peak_times(0.0);
        for s in t.windows(2) {
            assert_relative_eq!(s[1] - s[0], 2.0 * PI / omega, max_relative = 1e-9);
        }
        let t = peak_times(8.0);
        let first = t[1] - t[0];
        let last = t[11] - t[10];
        assert!(last > first && first >= 2.0 * PI / omega * (1.0 - 1e-9));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(10_000))]
        #[test]
        fn probability_bounded(
            beta in 0.0f64..30.0, chirp in 0.0f64..40.0, t0 in -0.5f64..0.5,
            omega_n in 0.0f64..600.0, delta in -100.0f64..100.0, t in -1.0f64..1.0,
        ) {
            let p = ChirpedOscParams { beta, chirp, t0, omega_n, delta };
            let v = retrieval_probability(&p, t);
            let env = envelope(beta, t0, t);
            prop_assert!(v >= 0.0);
            prop_assert!(v <= 2.0 * env * (1.0 + 1e-15));
            prop_assert_eq!(retrieval_probability(&p, 0.0), 0.0);
        }
    }

    proptest! {
        #[test]
        fn chirp_factor_range_and_parity(chirp in 0.0f64..100.0, t in -10.0f64..10.0) {
            let c = chirp_factor(chirp, t);
            prop_assert!((FRAC_1_SQRT_2..=1.0).contains(&c));
            prop_assert_eq!(c, chirp_factor(chirp, -t));
        }

        #[test]
        fn chirp_factor_monotone(chirp in 0.0f64..50.0, a in 0.0f64..2.0, b in 0.0f64..2.0) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(chirp_factor(chirp, hi) <= chirp_factor(chirp, lo));
        }

        #[test]
        fn phase_strictly_increasing(chirp in 0.0f64..40.0, omega in 1.0f64..600.0, t in 0.0f64..1.0, dt in 1e-6f64..0.1) {
            prop_assert!(chirp_phase(chirp, omega, t + dt) > chirp_phase(chirp, omega, t));
            prop_assert!(instantaneous_frequency(chirp, omega, t) > 0.0);
        }

        #[test]
        fn rabi_even_and_monotone(a in 0.0f64..500.0, b in -500.0f64..500.0, bump in 0.0f64..10.0) {
            let d = DriveParams { omega_c: a, delta_c: b, delta_p: 0.0 };
            let flipped = DriveParams { delta_c: -b, ..d };
            prop_assert_eq!(effective_rabi(&d), effective_rabi(&flipped));
            let bigger = DriveParams { omega_c: a + bump, ..d };
            prop_assert!(effective_rabi(&bigger) >= effective_rabi(&d));
            let p = ChirpedOscParams { beta: 0.0, chirp: 0.0, t0: 0.0, omega_n: a, delta: b };
            prop_assert_eq!(total_rabi(&p), total_rabi(&p.with_delta(-b)));
            prop_assert!(total_rabi(&p.with_delta(b.abs() + bump)) >= total_rabi(&p));
            prop_assert!(total_rabi(&p) >= a);
        }
    }
}
