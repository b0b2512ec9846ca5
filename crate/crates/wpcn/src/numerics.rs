//! Scalar special functions and safeguarded root finders shared by the
//! allocation rules.
//!
//! Everything here is pure and deterministic: the same inputs produce the
//! same bits on every run, so allocations computed on worker threads never
//! depend on scheduling.

use std::f64::consts::E;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NumericsError {
    #[error("argument {0} lies below -1/e, outside the Lambert-W principal domain")]
    LambertDomain(f64),
    #[error("no sign change on [{lo}, {hi}]: f(lo)={f_lo}, f(hi)={f_hi}")]
    NoSignChange { lo: f64, hi: f64, f_lo: f64, f_hi: f64 },
    #[error("root finder did not converge within {0} iterations")]
    MaxIterations(usize),
}

/// Search interval and stopping rules for [`solve_monotone_root`].
#[derive(Debug, Clone, Copy)]
pub struct RootBracket {
    pub lo: f64,
    pub hi: f64,
    pub tol_abs: f64,
    pub tol_rel: f64,
    pub max_iter: usize,
}

impl RootBracket {
    /// Bracket with the default tolerances (`tol_abs = 1e-12`,
    /// `tol_rel = 1e-10`, 200 iterations).
    pub fn new(lo: f64, hi: f64) -> Self {
        RootBracket { lo, hi, tol_abs: 1e-12, tol_rel: 1e-10, max_iter: 200 }
    }
}

const NEG_INV_E: f64 = -0.367_879_441_171_442_33;

/// Principal branch of the Lambert-W function, `w` with `w * exp(w) = x`.
///
/// Halley iteration from a piecewise initial guess (branch-point series near
/// `-1/e`, asymptotic `ln x - ln ln x` for large `x`), refined to roughly
/// machine precision.
pub fn lambert_w0(x: f64) -> Result<f64, NumericsError> {
    if x.is_nan() || x < NEG_INV_E {
        return Err(NumericsError::LambertDomain(x));
    }
    if x == 0.0 {
        return Ok(0.0);
    }
    if x.is_infinite() {
        return Ok(f64::INFINITY);
    }

    // Branch-point expansion: w = -1 + p - p^2/3 + 11 p^3/72, p = sqrt(2(1 + e x)).
    let q = 2.0 * (1.0 + E * x);
    let mut w = if q <= 0.0 {
        return Ok(-1.0); // x == -1/e up to rounding
    } else if q < 1e-3 {
        let p = q.sqrt();
        return Ok(-1.0 + p - q / 3.0 + 11.0 / 72.0 * p * q);
    } else if x < -0.3 {
        let p = q.sqrt();
        -1.0 + p - q / 3.0 + 11.0 / 72.0 * p * q
    } else if x < E {
        // Crude but inside the basin of attraction.
        x / (1.0 + x)
    } else {
        let l1 = x.ln();
        let l2 = l1.ln();
        l1 - l2 + l2 / l1
    };

    for _ in 0..60 {
        let ew = w.exp();
        let f = w * ew - x;
        if f == 0.0 {
            break;
        }
        // Halley step.
        let denom = ew * (w + 1.0) - (w + 2.0) * f / (2.0 * w + 2.0);
        let dw = f / denom;
        w -= dw;
        if dw.abs() <= 1e-16 * (1.0 + w.abs()) {
            break;
        }
    }
    Ok(w)
}

/// The unique `z >= 1` with `z (ln z - 1) = b - 1`, i.e. the threshold
/// `z_s = (B_s - 1) / W((B_s - 1)/e)` separating the saturation-index regions.
///
/// The closed form degenerates to 0/0 as `b -> 1`; a short Newton run from
/// `z = e + (b - 1)` covers that neighbourhood. `b = 0` maps to exactly 1,
/// `b = +inf` to `+inf`.
pub fn z_of(b: f64) -> f64 {
    assert!(b >= 0.0, "z_of requires b >= 0, got {b}");
    if b == 0.0 {
        return 1.0;
    }
    if b.is_infinite() {
        return f64::INFINITY;
    }
    if b < 1e-2 {
        // Here z = 1 + d with d ~ sqrt(2b) and the Lambert argument sits at
        // the W branch point, where the closed form loses half its digits.
        // Newton on the cancellation-free form (1+d) ln(1+d) - d = b instead.
        let mut d = (2.0 * b).sqrt();
        for _ in 0..20 {
            let step = ((1.0 + d) * d.ln_1p() - d - b) / d.ln_1p();
            d -= step;
            if step.abs() <= 1e-16 * d {
                break;
            }
        }
        return 1.0 + d;
    }
    let a = b - 1.0;
    if a.abs() < 1e-4 {
        // g(z) = z ln z - z - a, g'(z) = ln z; near z = e the slope is 1.
        let mut z = E + a;
        for _ in 0..8 {
            let dz = (z * z.ln() - z - a) / z.ln();
            z -= dz;
            if dz.abs() <= 1e-16 * z {
                break;
            }
        }
        return z;
    }
    // a >= -1, so a/e stays in the principal domain.
    let w = lambert_w0(a / E).expect("a/e >= -1/e by construction");
    a / w
}

/// Same quantity as [`z_of`] obtained by direct root finding on
/// `z (ln z - 1) = b - 1`, with no Lambert-W involved. Used to cross-check
/// the closed form.
pub fn z_of_by_root(b: f64) -> Result<f64, NumericsError> {
    assert!(b >= 0.0, "z_of_by_root requires b >= 0, got {b}");
    let g = |z: f64| z * (z.ln() - 1.0) - (b - 1.0);
    // g is increasing on [1, inf); grow the upper end until the sign flips.
    let mut hi = E;
    while g(hi) < 0.0 {
        hi *= 2.0;
    }
    solve_monotone_root(g, &RootBracket::new(1.0, hi))
}

/// Safeguarded scalar root finder for a continuous sign-changing function.
///
/// Alternates bisection and secant steps so the bracket provably shrinks;
/// stops when the width falls below `tol_abs + tol_rel * |x|` or an exact
/// zero is hit. Fully deterministic.
pub fn solve_monotone_root<F>(mut f: F, bracket: &RootBracket) -> Result<f64, NumericsError>
where
    F: FnMut(f64) -> f64,
{
    let RootBracket { mut lo, mut hi, tol_abs, tol_rel, max_iter } = *bracket;
    assert!(lo < hi, "invalid bracket [{lo}, {hi}]");
    let mut f_lo = f(lo);
    let mut f_hi = f(hi);
    if f_lo == 0.0 {
        return Ok(lo);
    }
    if f_hi == 0.0 {
        return Ok(hi);
    }
    if f_lo.signum() == f_hi.signum() {
        return Err(NumericsError::NoSignChange { lo, hi, f_lo, f_hi });
    }
    for iter in 0..max_iter {
        let mid = 0.5 * (lo + hi);
        let x = if iter % 2 == 0 {
            mid
        } else {
            // Secant proposal, clipped back to the midpoint when it falls
            // outside the open bracket.
            let sec = lo - f_lo * (hi - lo) / (f_hi - f_lo);
            if sec.is_finite() && sec > lo && sec < hi { sec } else { mid }
        };
        let fx = f(x);
        if fx == 0.0 {
            return Ok(x);
        }
        if fx.signum() == f_lo.signum() {
            lo = x;
            f_lo = fx;
        } else {
            hi = x;
            f_hi = fx;
        }
        if hi - lo <= tol_abs + tol_rel * mid.abs() {
            return Ok(0.5 * (lo + hi));
        }
    }
    Err(NumericsError::MaxIterations(max_iter))
}
