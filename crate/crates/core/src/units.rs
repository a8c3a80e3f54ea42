//! Unit convention.
//!
//! Time is in microseconds. Frequencies are quoted by users in cyclic MHz
//! ("2π × ν MHz"); inside the library every Rabi frequency and detuning is an
//! angular frequency in rad/µs. The conversion happens once, at the input
//! boundary (config parsing, presets), through the two functions below.

use std::f64::consts::TAU;

/// Cyclic MHz to rad/µs.
#[inline]
pub fn mhz_to_angular(nu_mhz: f64) -> f64 {
    TAU * nu_mhz
}

/// rad/µs to cyclic MHz.
#[inline]
pub fn angular_to_mhz(omega: f64) -> f64 {
    omega / TAU
}

/// Broadening coefficient α (µs²/rad²) for a Gaussian shift distribution
/// of standard deviation `sigma` (rad/µs): `e^{-αΔ²}` has variance `1/(2α)`.
#[inline]
pub fn alpha_from_sigma(sigma: f64) -> f64 {
    1.0 / (2.0 * sigma * sigma)
}

#[inline]
pub fn sigma_from_alpha(alpha: f64) -> f64 {
    (0.5 / alpha).sqrt()
}
