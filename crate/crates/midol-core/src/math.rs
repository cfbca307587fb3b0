//! Scalar math shims.
//!
//! All transcendental functions route through `libm` so the crate produces
//! bit-identical results under `std` and `no_std` builds.

#[inline]
pub fn ln(x: f64) -> f64 {
    libm::log(x)
}

#[inline]
pub fn exp(x: f64) -> f64 {
    libm::exp(x)
}

#[inline]
pub fn sqrt(x: f64) -> f64 {
    libm::sqrt(x)
}

#[inline]
pub fn cos(x: f64) -> f64 {
    libm::cos(x)
}

#[inline]
pub fn powi(x: f64, n: i32) -> f64 {
    libm::pow(x, n as f64)
}

pub const PI: f64 = core::f64::consts::PI;

/// `p * ln(p)` with the `0 * ln 0 = 0` convention.
#[inline]
pub fn plogp(p: f64) -> f64 {
    if p > 0.0 {
        p * ln(p)
    } else {
        0.0
    }
}
