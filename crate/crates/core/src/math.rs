//! Scalar kernels. With `std` the platform libm is used, otherwise the pure
//! Rust `libm` crate.

#[cfg(feature = "std")]
mod imp {
    #[inline]
    pub fn exp(x: f64) -> f64 {
        x.exp()
    }
    #[inline]
    pub fn ln(x: f64) -> f64 {
        x.ln()
    }
    #[inline]
    pub fn ln_1p(x: f64) -> f64 {
        x.ln_1p()
    }
    #[inline]
    pub fn sqrt(x: f64) -> f64 {
        x.sqrt()
    }
    #[inline]
    pub fn tanh(x: f64) -> f64 {
        x.tanh()
    }
    #[inline]
    pub fn cos(x: f64) -> f64 {
        x.cos()
    }
}

#[cfg(not(feature = "std"))]
mod imp {
    #[inline]
    pub fn exp(x: f64) -> f64 {
        libm::exp(x)
    }
    #[inline]
    pub fn ln(x: f64) -> f64 {
        libm::log(x)
    }
    #[inline]
    pub fn ln_1p(x: f64) -> f64 {
        libm::log1p(x)
    }
    #[inline]
    pub fn sqrt(x: f64) -> f64 {
        libm::sqrt(x)
    }
    #[inline]
    pub fn tanh(x: f64) -> f64 {
        libm::tanh(x)
    }
    #[inline]
    pub fn cos(x: f64) -> f64 {
        libm::cos(x)
    }
}

pub use imp::*;

pub const PI: f64 = core::f64::consts::PI;
const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

/// Logistic function, evaluated without overflow for either sign.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + exp(-x))
    } else {
        let e = exp(x);
        e / (1.0 + e)
    }
}

/// `log(1 + exp(x))` without overflow.
#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + ln_1p(exp(-x))
    } else {
        ln_1p(exp(x))
    }
}

/// Digamma at a positive integer: `-γ + Σ_{j<n} 1/j`.
pub fn digamma_int(n: usize) -> f64 {
    assert!(n >= 1, "digamma_int needs n >= 1");
    // summing small terms first keeps the rounding error at the ulp level
    let mut s = 0.0;
    for j in (1..n).rev() {
        s += 1.0 / j as f64;
    }
    s - EULER_GAMMA
}

/// `ln Γ(d/2 + 1)` for integer `d ≥ 0`, by the half-integer recurrence.
pub fn ln_gamma_half_plus_one(d: usize) -> f64 {
    // Γ(1) = 1, Γ(3/2) = √π / 2
    let (mut acc, mut x) = if d.is_multiple_of(2) {
        (0.0, 1.0)
    } else {
        (0.5 * ln(PI) - core::f64::consts::LN_2, 1.5)
    };
    let target = d as f64 / 2.0 + 1.0;
    while x < target - 1e-9 {
        acc += ln(x);
        x += 1.0;
    }
    acc
}

/// Log volume of the unit Euclidean ball in `d` dimensions.
pub fn ln_unit_ball_volume(d: usize) -> f64 {
    0.5 * d as f64 * ln(PI) - ln_gamma_half_plus_one(d)
}

/// Numerically stable `ln(mean(exp(xs)))`.
pub fn log_mean_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    let s: f64 = xs.iter().map(|&x| exp(x - max)).sum();
    max + ln(s / xs.len() as f64)
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm_sq(a: &[f64]) -> f64 {
    dot(a, a)
}
