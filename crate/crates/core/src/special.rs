//! Scalar special functions shared by the interval, tape and market code.

use libm::erfc;

/// 1/√(2π)
pub const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Location of the global minimum of `x·σ(x)`.
pub const SILU_ARGMIN: f64 = -1.278_464_542_761_073_8;
/// Global minimum value of `x·σ(x)`; equals `SILU_ARGMIN + 1`.
pub const SILU_MIN: f64 = -0.278_464_542_761_073_8;
/// Location of the maximum of the SiLU derivative (the minimum sits at the negated point).
pub const SILU_DERIV_ARGMAX: f64 = 2.399_357_280_515_467_7;
/// Global maximum of the SiLU derivative.
pub const SILU_DERIV_MAX: f64 = 1.099_839_320_128_866_9;
/// Global minimum of the SiLU derivative.
pub const SILU_DERIV_MIN: f64 = -0.099_839_320_128_866_92;

/// Logistic sigmoid, evaluated without overflow for large |x|.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub fn sigmoid_deriv(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 - s)
}

#[inline]
pub fn silu(x: f64) -> f64 {
    x * sigmoid(x)
}

#[inline]
pub fn silu_deriv(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 + x * (1.0 - s))
}

#[inline]
pub fn silu_second_deriv(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 - s) * (2.0 + x * (1.0 - 2.0 * s))
}

#[inline]
pub fn relu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        0.0
    }
}

/// Heaviside step with the convention `step(0) = 1`, i.e. the ReLU derivative.
#[inline]
pub fn step(x: f64) -> f64 {
    if x >= 0.0 {
        1.0
    } else {
        0.0
    }
}

/// Standard normal density.
#[inline]
pub fn norm_pdf(x: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * x * x).exp()
}

/// Standard normal distribution function through the complementary error function.
#[inline]
pub fn norm_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bisect(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> f64 {
        for _ in 0..200 {
            let m = 0.5 * (a + b);
            if (f(a) < 0.0) == (f(m) < 0.0) {
                a = m;
            } else {
                b = m;
            }
        }
        0.5 * (a + b)
    }

    #[test]
    fn silu_constants_match_root_finding() {
        let argmin = bisect(silu_deriv, -2.0, -1.0);
        assert!((argmin - SILU_ARGMIN).abs() < 1e-12);
        assert!((silu(argmin) - SILU_MIN).abs() < 1e-15);
        let argmax = bisect(silu_second_deriv, 2.0, 3.0);
        assert!((argmax - SILU_DERIV_ARGMAX).abs() < 1e-12);
        assert!((silu_deriv(argmax) - SILU_DERIV_MAX).abs() < 1e-15);
        assert!((silu_deriv(-argmax) - SILU_DERIV_MIN).abs() < 1e-15);
    }

    #[test]
    fn sigmoid_is_stable_in_the_tails() {
        assert_eq!(sigmoid(1e6), 1.0);
        assert_eq!(sigmoid(-1e6), 0.0);
        assert!((sigmoid(0.0) - 0.5).abs() < 1e-16);
    }

    #[test]
    fn normal_cdf_reference_points() {
        assert_eq!(norm_cdf(0.0), 0.5);
        // Φ(1), Φ(-3) to 17 digits
        assert!((norm_cdf(1.0) - 0.841_344_746_068_542_9).abs() < 1e-15);
        assert!((norm_cdf(-3.0) - 0.001_349_898_031_630_094_6).abs() < 1e-17);
        assert!((norm_pdf(0.0) - INV_SQRT_2PI).abs() < 1e-17);
    }
}
