//! Standard normal density and distribution function.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

/// Beyond this |z| the tails are clamped.
pub const TAIL_CLAMP: f64 = 8.0;

/// Standard normal density φ(z); 0 for |z| > 8.
pub fn pdf(z: f64) -> f64 {
    if z.abs() > TAIL_CLAMP {
        return 0.0;
    }
    (-0.5 * z * z).exp() / (2.0 * PI).sqrt()
}

/// Standard normal CDF Φ(z) = ½ erfc(−z/√2); clamped to 0/1 for |z| > 8.
pub fn cdf(z: f64) -> f64 {
    if z > TAIL_CLAMP {
        1.0
    } else if z < -TAIL_CLAMP {
        0.0
    } else {
        0.5 * libm::erfc(-z * FRAC_1_SQRT_2)
    }
}
