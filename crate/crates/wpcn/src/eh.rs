//! Energy-harvesting characteristics.
//!
//! The allocation rules are derived for the piece-wise linear model
//! `P_h = min(eta * P_in, P_sat)`. Schemes can additionally be *evaluated*
//! under a different "truth" curve (a logistic saturation curve or a measured
//! table) to quantify the cost of model mismatch.

use thiserror::Error;

use crate::numerics::{solve_monotone_root, RootBracket};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EhError {
    #[error("fitted linear slope is degenerate (eta = {eta})")]
    DegenerateSlope { eta: f64 },
    #[error("curve does not reach a saturation plateau within its input range")]
    PlateauNotReached,
    #[error("invalid table curve: {0}")]
    InvalidTable(String),
    #[error("invalid EH profile: {0}")]
    InvalidProfile(String),
}

/// Per-user parameters of the piece-wise linear design model plus the
/// BS distance used by the fading generator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EhuProfile {
    /// Conversion efficiency of the linear regime, 0 < eta < 1.
    pub eta: f64,
    /// Saturation harvested power in watts.
    pub p_sat: f64,
    /// BS-to-user distance in meters.
    pub distance: f64,
}

impl EhuProfile {
    pub fn new(eta: f64, p_sat: f64, distance: f64) -> Result<Self, EhError> {
        if !(eta > 0.0 && eta < 1.0) {
            return Err(EhError::InvalidProfile(format!("eta must be in (0,1), got {eta}")));
        }
        if !(p_sat > 0.0) {
            return Err(EhError::InvalidProfile(format!("p_sat must be > 0, got {p_sat}")));
        }
        if !(distance > 0.0) {
            return Err(EhError::InvalidProfile(format!("distance must be > 0, got {distance}")));
        }
        Ok(EhuProfile { eta, p_sat, distance })
    }

    /// The design curve this profile parameterizes.
    pub fn design_curve(&self) -> EhCurve {
        EhCurve::PiecewiseLinear { eta: self.eta, p_sat: self.p_sat }
    }
}

/// An RF-to-DC conversion characteristic: incident power in, harvested
/// power out. Non-negative and non-decreasing for every kind.
#[derive(Debug, Clone, PartialEq)]
pub enum EhCurve {
    /// `min(eta * p_in, p_sat)` — the design model.
    PiecewiseLinear { eta: f64, p_sat: f64 },
    /// Normalized sigmoid `p_sat * (L(p) - L(0)) / (1 - L(0))` with
    /// `L(p) = 1 / (1 + exp(-steepness * (p - center)))`. Stands in for a
    /// measured rectifier characteristic: smooth turn-on, hard saturation.
    Logistic { steepness: f64, center: f64, p_sat: f64 },
    /// Piecewise-linear interpolation of measured `(p_in, p_h)` samples,
    /// strictly increasing in `p_in`; clamped to the last sample beyond it.
    Table { points: Vec<(f64, f64)> },
}

impl EhCurve {
    /// Harvested power for a given incident RF power.
    pub fn harvested_power(&self, p_in: f64) -> f64 {
        debug_assert!(p_in >= 0.0);
        match self {
            EhCurve::PiecewiseLinear { eta, p_sat } => (eta * p_in).min(*p_sat),
            EhCurve::Logistic { steepness, center, p_sat } => {
                let l = |p: f64| 1.0 / (1.0 + (-steepness * (p - center)).exp());
                let l0 = l(0.0);
                (p_sat * (l(p_in) - l0) / (1.0 - l0)).max(0.0)
            }
            EhCurve::Table { points } => {
                let mut prev = (0.0, 0.0);
                for &(p, h) in points {
                    if p_in <= p {
                        if p == prev.0 {
                            return h;
                        }
                        let t = (p_in - prev.0) / (p - prev.0);
                        return prev.1 + t * (h - prev.1);
                    }
                    prev = (p, h);
                }
                prev.1
            }
        }
    }

    /// The supremum of the curve (its saturation plateau).
    pub fn plateau(&self) -> f64 {
        match self {
            EhCurve::PiecewiseLinear { p_sat, .. } | EhCurve::Logistic { p_sat, .. } => *p_sat,
            EhCurve::Table { points } => points.last().map_or(0.0, |p| p.1),
        }
    }

    /// Logistic curve calibrated so that its least-squares low-power slope on
    /// `[0, knee_input]` equals `slope` and its plateau equals `p_sat`.
    ///
    /// The shape factor `steepness * center = 4` is held fixed and the center
    /// solved for; the slope is monotone decreasing in the center, so a
    /// bracketed root always exists for slopes below the all-saturated limit
    /// `1.5 * p_sat / knee_input`.
    pub fn logistic_calibrated(slope: f64, p_sat: f64, knee_input: f64) -> Result<Self, EhError> {
        assert!(slope > 0.0 && p_sat > 0.0 && knee_input > 0.0);
        let curve_at = |center: f64| EhCurve::Logistic {
            steepness: 4.0 / center,
            center,
            p_sat,
        };
        let f = |center: f64| ls_slope(&curve_at(center), knee_input) - slope;
        let bracket = RootBracket {
            lo: knee_input * 1e-3,
            hi: knee_input * 1e3,
            tol_abs: 1e-18,
            tol_rel: 1e-12,
            max_iter: 200,
        };
        let center = solve_monotone_root(f, &bracket)
            .map_err(|_| EhError::DegenerateSlope { eta: slope })?;
        Ok(curve_at(center))
    }

    /// Parse a two-column CSV (`p_in_watts,p_h_watts` per line, `#` comments
    /// allowed) into a table curve.
    pub fn table_from_csv(text: &str) -> Result<Self, EhError> {
        let mut points = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut cols = line.split(',').map(str::trim);
            let bad = || EhError::InvalidTable(format!("line {}: expected `p_in,p_h`", lineno + 1));
            let p: f64 = cols.next().ok_or_else(bad)?.parse().map_err(|_| bad())?;
            let h: f64 = cols.next().ok_or_else(bad)?.parse().map_err(|_| bad())?;
            points.push((p, h));
        }
        Self::table(points)
    }

    /// Validated table curve: strictly increasing inputs, non-negative
    /// non-decreasing outputs.
    pub fn table(points: Vec<(f64, f64)>) -> Result<Self, EhError> {
        if points.len() < 2 {
            return Err(EhError::InvalidTable("need at least two samples".into()));
        }
        for w in points.windows(2) {
            if w[1].0 <= w[0].0 {
                return Err(EhError::InvalidTable(format!(
                    "incident powers must be strictly increasing ({} then {})",
                    w[0].0, w[1].0
                )));
            }
            if w[1].1 < w[0].1 {
                return Err(EhError::InvalidTable("harvested power must be non-decreasing".into()));
            }
        }
        if points.iter().any(|p| p.0 < 0.0 || p.1 < 0.0) {
            return Err(EhError::InvalidTable("negative sample".into()));
        }
        Ok(EhCurve::Table { points })
    }
}

/// Harvested energy of one user in one epoch under the design model,
/// `T * min(N0 * eta * x * p0, P_sat) * tau0` (joules).
pub fn harvested_energy(
    profile: &EhuProfile,
    x_k: f64,
    n0: f64,
    p0: f64,
    tau0: f64,
    t: f64,
) -> f64 {
    debug_assert!(x_k >= 0.0 && n0 >= 0.0 && p0 >= 0.0 && (0.0..=1.0).contains(&tau0));
    // Same association as the design curve evaluated at the incident power,
    // so the two routes agree bit-for-bit.
    t * (profile.eta * (n0 * x_k * p0)).min(profile.p_sat) * tau0
}

/// Least-squares slope through the origin of `curve` sampled on a uniform
/// grid over `[0, knee_input]`.
fn ls_slope(curve: &EhCurve, knee_input: f64) -> f64 {
    const N: usize = 1000;
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 1..=N {
        let p = knee_input * i as f64 / N as f64;
        num += p * curve.harvested_power(p);
        den += p * p;
    }
    num / den
}

/// Fit the piece-wise linear design model to an arbitrary curve: `eta` is the
/// least-squares slope on `[0, knee_input]`, `p_sat` the saturation plateau.
///
/// The knee level is where measured efficiency starts dropping; -16 dBm
/// (2.51e-5 W) is the conventional default.
pub fn fit_piecewise(
    curve: &EhCurve,
    knee_input: f64,
    distance: f64,
) -> Result<EhuProfile, EhError> {
    assert!(knee_input > 0.0);
    let p_sat = curve.plateau();
    if let EhCurve::Table { points } = curve {
        // Plateau check: the curve must gain < 1% of its maximum over the
        // last 20% of the tabulated range.
        let p_end = points.last().unwrap().0;
        let near_end = curve.harvested_power(0.8 * p_end);
        if p_sat - near_end > 0.01 * p_sat {
            return Err(EhError::PlateauNotReached);
        }
    }
    let eta = ls_slope(curve, knee_input);
    if eta <= 1e-12 {
        return Err(EhError::DegenerateSlope { eta });
    }
    EhuProfile::new(eta, p_sat, distance)
}

/// -16 dBm in watts, the default knee input level for [`fit_piecewise`].
pub const KNEE_DBM16_WATTS: f64 = 2.511_886_431_509_58e-5;
