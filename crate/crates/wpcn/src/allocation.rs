//! Per-epoch optimal power and time allocation.
//!
//! Each epoch is an independent Lagrangian subproblem in the dual variable
//! `lambda` of the average-power constraint. The optimal BS power either
//! inverts the channel of one "boundary" user so that its harvested power
//! sits exactly on the knee of the piece-wise linear EH curve, or (with a
//! peak constraint) is clipped to `P_M`. Users below the boundary harvest in
//! saturation, users above it stay in the linear regime, and all IT shares
//! follow in closed form from a single transcendental constant `C > 1`.

use rayon::prelude::*;
use thiserror::Error;

use crate::eh::{EhCurve, EhuProfile};
use crate::numerics::{solve_monotone_root, z_of, NumericsError, RootBracket};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AllocError {
    #[error("transcendental equation has no root C > 1 (inconsistent boundary index)")]
    InconsistentIndex,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

/// Network-level constants: user count, noise power, power budget.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkConfig {
    pub k_users: usize,
    /// AWGN power N0 in watts.
    pub n0: f64,
    /// Average BS power budget in watts.
    pub p_avg: f64,
    /// Peak BS power in watts; `None` leaves the instantaneous power
    /// unconstrained.
    pub p_max: Option<f64>,
    /// Epoch duration in seconds. Rates are per unit time, so this only
    /// scales energies.
    pub epoch_duration: f64,
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<(), AllocError> {
        if self.k_users == 0 {
            return Err(AllocError::InvalidConfig("k_users must be >= 1".into()));
        }
        if !(self.n0 > 0.0) {
            return Err(AllocError::InvalidConfig(format!("n0 must be > 0, got {}", self.n0)));
        }
        if !(self.p_avg > 0.0) {
            return Err(AllocError::InvalidConfig(format!("p_avg must be > 0, got {}", self.p_avg)));
        }
        if let Some(pm) = self.p_max {
            if !(pm > 0.0) {
                return Err(AllocError::InvalidConfig(format!("p_max must be > 0, got {pm}")));
            }
        }
        if !(self.epoch_duration > 0.0) {
            return Err(AllocError::InvalidConfig("epoch_duration must be > 0".into()));
        }
        Ok(())
    }
}

/// One epoch's channel state: normalized gains, per-user channel-inversion
/// thresholds, and the ascending-threshold relabeling.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochChannel {
    /// Normalized fading power gains `x_k = x'_k / N0`, original user order.
    pub x: Vec<f64>,
    /// `P_Hk / (N0 eta_k x_k)` in watts: the BS power that puts user k
    /// exactly on its saturation knee. Original user order.
    pub thresholds: Vec<f64>,
    /// `order[j]` is the original index of the user with the j-th smallest
    /// threshold. Ties broken by original index.
    pub order: Vec<usize>,
}

impl EpochChannel {
    /// Build from raw (un-normalized) gains `x'_k` in 1/W.
    pub fn new(x_prime: &[f64], n0: f64, profiles: &[EhuProfile]) -> Self {
        assert_eq!(x_prime.len(), profiles.len());
        let x: Vec<f64> = x_prime.iter().map(|xp| xp / n0).collect();
        Self::from_normalized(x, n0, profiles)
    }

    /// Build from already-normalized gains `x_k = x'_k / N0`.
    pub fn from_normalized(x: Vec<f64>, n0: f64, profiles: &[EhuProfile]) -> Self {
        assert_eq!(x.len(), profiles.len());
        assert!(x.iter().all(|&v| v > 0.0), "gains must be positive");
        let thresholds: Vec<f64> = x
            .iter()
            .zip(profiles)
            .map(|(&xk, p)| p.p_sat / (n0 * p.eta * xk))
            .collect();
        let mut order: Vec<usize> = (0..x.len()).collect();
        order.sort_by(|&a, &b| {
            thresholds[a].partial_cmp(&thresholds[b]).unwrap().then(a.cmp(&b))
        });
        EpochChannel { x, thresholds, order }
    }

    pub fn k(&self) -> usize {
        self.x.len()
    }
}

/// Which branch of the EH curve a user's harvested power lands on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    Saturated,
    /// Exactly on the knee (the channel-inverted user of Theorem 1).
    Boundary,
    Linear,
    /// Epoch idle or user silent.
    Inactive,
}

/// The per-epoch decision: BS power, EH share, IT shares, and the
/// diagnostic constants behind them. All per-user vectors are in original
/// user order.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochAllocation {
    pub p0: f64,
    pub tau0: f64,
    pub tau: Vec<f64>,
    pub regime: Vec<Regime>,
    /// The common epoch constant `C` (every transmitting user's SNR is
    /// `C - 1` under the design model). `None` for idle epochs and for
    /// baseline 2, which has no such constant.
    pub c_const: Option<f64>,
    /// Boundary index `s*` as a 1-based position in ascending-threshold
    /// order. `None` when idle or when the peak constraint clips `p0`.
    pub s_star: Option<usize>,
    /// Saturation split of the boundary user's multiplier, in (0, 1].
    pub rho: Option<f64>,
    /// True when `p0` was clipped to `P_M` (Theorem 2 peak-power case).
    pub clipped: bool,
}

impl EpochAllocation {
    pub fn idle(k: usize) -> Self {
        EpochAllocation {
            p0: 0.0,
            tau0: 0.0,
            tau: vec![0.0; k],
            regime: vec![Regime::Inactive; k],
            c_const: None,
            s_star: None,
            rho: None,
            clipped: false,
        }
    }

    pub fn is_active(&self) -> bool {
        self.p0 > 0.0
    }
}

/// Aggregate result of running one scheme over a batch of epochs.
#[derive(Debug, Clone, PartialEq)]
pub struct SchemeResult {
    /// Average sum rate in nats/s/Hz, evaluated under the truth curve.
    pub avg_sum_rate: f64,
    /// Average sum rate evaluated under the piece-wise linear design model.
    pub sum_rate_design: f64,
    /// Per-user average rates under the truth curve.
    pub per_user_rate: Vec<f64>,
    /// Measured `(1/M) sum p0 tau0` in watts.
    pub consumed_avg_power: f64,
    pub lambda: f64,
    /// True when the average-power constraint binds (`lambda > 0` found by
    /// bisection, or baseline 2's by-construction equality); false in the
    /// saturation-limited regime where consumption stays below `P_avg` even
    /// at `lambda = 0`.
    pub constraint_active: bool,
    pub epochs_active_fraction: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Scheme {
    /// Theorem 1: unconstrained instantaneous BS power.
    Theorem1,
    /// Theorem 2: peak-constrained BS power (the proposed scheme).
    Theorem2,
    /// Linear-EH-model optimum (binary BS power), evaluated under the truth
    /// curve.
    Baseline1,
    /// Fixed `p0 = P_M`, `tau0 = P_avg / P_M`, equal IT shares.
    Baseline2,
}

impl Scheme {
    pub fn name(&self) -> &'static str {
        match self {
            Scheme::Theorem1 => "theorem1",
            Scheme::Theorem2 => "theorem2",
            Scheme::Baseline1 => "baseline1",
            Scheme::Baseline2 => "baseline2",
        }
    }
}

impl std::str::FromStr for Scheme {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "theorem1" => Ok(Scheme::Theorem1),
            "theorem2" => Ok(Scheme::Theorem2),
            "baseline1" => Ok(Scheme::Baseline1),
            "baseline2" => Ok(Scheme::Baseline2),
            other => Err(format!("unknown scheme `{other}`")),
        }
    }
}

/// Epoch data relabeled in ascending-threshold order, with the prefix /
/// suffix sums `A_s` and `B_s` precomputed for every s.
struct SortedEpoch {
    x: Vec<f64>,
    eta: Vec<f64>,
    p_sat: Vec<f64>,
    threshold: Vec<f64>,
    /// `a[s] = sum_{m=s+1..K} N0 eta_m x_m^2`, s = 0..=K.
    a: Vec<f64>,
    /// `b[s] = sum_{n=1..s} P_Hn x_n`, s = 0..=K.
    b: Vec<f64>,
}

impl SortedEpoch {
    fn build(epoch: &EpochChannel, profiles: &[EhuProfile], n0: f64) -> Self {
        let k = epoch.k();
        let mut x = Vec::with_capacity(k);
        let mut eta = Vec::with_capacity(k);
        let mut p_sat = Vec::with_capacity(k);
        let mut threshold = Vec::with_capacity(k);
        for &orig in &epoch.order {
            x.push(epoch.x[orig]);
            eta.push(profiles[orig].eta);
            p_sat.push(profiles[orig].p_sat);
            threshold.push(epoch.thresholds[orig]);
        }
        let mut a = vec![0.0; k + 1];
        for s in (0..k).rev() {
            a[s] = a[s + 1] + n0 * eta[s] * x[s] * x[s];
        }
        let mut b = vec![0.0; k + 1];
        for s in 1..=k {
            b[s] = b[s - 1] + p_sat[s - 1] * x[s - 1];
        }
        SortedEpoch { x, eta, p_sat, threshold, a, b }
    }
}

/// The coefficients `A_s` (remaining linear-regime mass) and `B_s`
/// (accumulated saturated harvest) of the relabeled epoch.
pub fn coefficients(
    epoch: &EpochChannel,
    profiles: &[EhuProfile],
    n0: f64,
    s: usize,
) -> (f64, f64) {
    assert!(s <= epoch.k(), "s = {s} out of range for K = {}", epoch.k());
    let sorted = SortedEpoch::build(epoch, profiles, n0);
    (sorted.a[s], sorted.b[s])
}

fn select_s_star_sorted(sorted: &SortedEpoch, lambda: f64) -> Option<usize> {
    let k = sorted.x.len();
    if sorted.a[0] <= lambda {
        return None; // shutdown condition: sum N0 eta_k x_k^2 <= lambda
    }
    if lambda == 0.0 {
        return Some(k);
    }
    // A_s / lambda decreases in s while z_s increases, so the first s with
    // A_s / lambda < z_s is the unique crossing.
    for s in 1..=k {
        if sorted.a[s] / lambda < z_of(sorted.b[s]) {
            return Some(s);
        }
    }
    Some(k) // A_K = 0 < z_K; unreachable in exact arithmetic
}

/// Boundary index `s*` (1-based, threshold order), or `None` for an idle
/// epoch.
pub fn select_s_star(
    epoch: &EpochChannel,
    profiles: &[EhuProfile],
    n0: f64,
    lambda: f64,
) -> Option<usize> {
    assert!(lambda >= 0.0);
    select_s_star_sorted(&SortedEpoch::build(epoch, profiles, n0), lambda)
}

/// Root of `ln C - (C-1)/C + lambda p0 = (p0 A + B)/C` for `C > 1`.
///
/// The left-minus-right side has derivative `(C - 1 + p0 A + B)/C^2 > 0`, so
/// a geometric upper-bracket search always terminates.
fn solve_c(p0: f64, a: f64, b: f64, lambda: f64) -> Result<f64, AllocError> {
    let k1 = lambda * p0;
    let k2 = p0 * a + b;
    if !(k2 > k1) {
        return Err(AllocError::InconsistentIndex);
    }
    let f = |c: f64| c.ln() - 1.0 + k1 + (1.0 - k2) / c;
    let mut hi = 2.0;
    while f(hi) <= 0.0 {
        hi *= 2.0;
        if hi > 1e300 {
            return Err(AllocError::InconsistentIndex);
        }
    }
    let c = solve_monotone_root(f, &RootBracket::new(1.0 + 1e-12, hi))?;
    Ok(c)
}

/// The epoch constant of Theorem 1 together with the boundary user's
/// multiplier split `rho`.
pub fn solve_c_theorem1(
    epoch: &EpochChannel,
    profiles: &[EhuProfile],
    n0: f64,
    lambda: f64,
    s_star: usize,
) -> Result<(f64, f64), AllocError> {
    let sorted = SortedEpoch::build(epoch, profiles, n0);
    solve_c_theorem1_sorted(&sorted, n0, lambda, s_star)
}

fn solve_c_theorem1_sorted(
    sorted: &SortedEpoch,
    n0: f64,
    lambda: f64,
    s_star: usize,
) -> Result<(f64, f64), AllocError> {
    assert!(s_star >= 1 && s_star <= sorted.x.len());
    let j = s_star - 1;
    let p0 = sorted.threshold[j];
    let c = solve_c(p0, sorted.a[s_star], sorted.b[s_star], lambda)?;
    let rho = 1.0 - (lambda * c - sorted.a[s_star]) / (n0 * sorted.eta[j] * sorted.x[j] * sorted.x[j]);
    Ok((c, rho))
}

fn finish_allocation(
    epoch: &EpochChannel,
    sorted: &SortedEpoch,
    n0: f64,
    p0: f64,
    c: f64,
    sat_count: usize,
    boundary: Option<usize>,
    rho: Option<f64>,
    clipped: bool,
) -> EpochAllocation {
    let k = sorted.x.len();
    let denom = c - 1.0;
    let tau0 = denom / (denom + p0 * sorted.a[sat_count] + sorted.b[sat_count]);
    let mut tau = vec![0.0; k];
    let mut regime = vec![Regime::Inactive; k];
    for j in 0..k {
        let orig = epoch.order[j];
        if j < sat_count {
            tau[orig] = sorted.p_sat[j] * sorted.x[j] * tau0 / denom;
            regime[orig] = if Some(j + 1) == boundary { Regime::Boundary } else { Regime::Saturated };
        } else {
            tau[orig] = p0 * n0 * sorted.eta[j] * sorted.x[j] * sorted.x[j] * tau0 / denom;
            regime[orig] = Regime::Linear;
        }
    }
    EpochAllocation {
        p0,
        tau0,
        tau,
        regime,
        c_const: Some(c),
        s_star: boundary,
        rho,
        clipped,
    }
}

/// Theorem 1: unconstrained instantaneous BS power.
pub fn allocate_theorem1(
    epoch: &EpochChannel,
    profiles: &[EhuProfile],
    n0: f64,
    lambda: f64,
) -> Result<EpochAllocation, AllocError> {
    assert!(lambda >= 0.0);
    let sorted = SortedEpoch::build(epoch, profiles, n0);
    let Some(s) = select_s_star_sorted(&sorted, lambda) else {
        return Ok(EpochAllocation::idle(epoch.k()));
    };
    let (c, rho) = solve_c_theorem1_sorted(&sorted, n0, lambda, s)?;
    let p0 = sorted.threshold[s - 1];
    Ok(finish_allocation(epoch, &sorted, n0, p0, c, s, Some(s), Some(rho), false))
}

/// Theorem 2: as Theorem 1 while the inverting power fits under `p_max`,
/// otherwise `p0 = p_max` with the users below `p_max`'s threshold saturated.
pub fn allocate_theorem2(
    epoch: &EpochChannel,
    profiles: &[EhuProfile],
    n0: f64,
    lambda: f64,
    p_max: Option<f64>,
) -> Result<EpochAllocation, AllocError> {
    assert!(lambda >= 0.0);
    let Some(p_max) = p_max.filter(|pm| pm.is_finite()) else {
        return allocate_theorem1(epoch, profiles, n0, lambda);
    };
    assert!(p_max > 0.0);
    let sorted = SortedEpoch::build(epoch, profiles, n0);
    let Some(s) = select_s_star_sorted(&sorted, lambda) else {
        return Ok(EpochAllocation::idle(epoch.k()));
    };
    let g = sorted.threshold.iter().take_while(|&&t| t < p_max).count();
    if g >= s {
        let (c, rho) = solve_c_theorem1_sorted(&sorted, n0, lambda, s)?;
        let p0 = sorted.threshold[s - 1];
        return Ok(finish_allocation(epoch, &sorted, n0, p0, c, s, Some(s), Some(rho), false));
    }
    let c = solve_c(p_max, sorted.a[g], sorted.b[g], lambda)?;
    Ok(finish_allocation(epoch, &sorted, n0, p_max, c, g, None, None, true))
}

/// Baseline 1: the linear-EH-model optimum, realized as Theorem 2 with every
/// saturation level pushed to infinity. The BS power is
/// binary in `{0, p_max}`.
pub fn baseline1(
    epoch: &EpochChannel,
    profiles: &[EhuProfile],
    n0: f64,
    lambda: f64,
    p_max: f64,
) -> Result<EpochAllocation, AllocError> {
    assert!(p_max > 0.0 && p_max.is_finite());
    let linear_profiles: Vec<EhuProfile> = profiles
        .iter()
        .map(|p| EhuProfile { eta: p.eta, p_sat: f64::INFINITY, distance: p.distance })
        .collect();
    let x_prime: Vec<f64> = epoch.x.iter().map(|xk| xk * n0).collect();
    let linear_epoch = EpochChannel::new(&x_prime, n0, &linear_profiles);
    allocate_theorem2(&linear_epoch, &linear_profiles, n0, lambda, Some(p_max))
}

/// Baseline 2: fixed allocation, `p0 = P_M`, `tau0 = P_avg / P_M`, equal IT
/// shares. Meets the average-power constraint with equality by construction.
pub fn baseline2(
    epoch: &EpochChannel,
    profiles: &[EhuProfile],
    config: &NetworkConfig,
) -> Result<EpochAllocation, AllocError> {
    let p_max = config.p_max.ok_or_else(|| {
        AllocError::InvalidConfig("baseline2 requires a peak power p_max".into())
    })?;
    if config.p_avg > p_max {
        return Err(AllocError::InvalidConfig(format!(
            "baseline2 requires p_avg <= p_max, got {} > {}",
            config.p_avg, p_max
        )));
    }
    let k = epoch.k();
    let tau0 = config.p_avg / p_max;
    let tau_each = (1.0 - tau0) / k as f64;
    let mut regime = Vec::with_capacity(k);
    for (idx, p) in profiles.iter().enumerate() {
        let incident = config.n0 * p.eta * epoch.x[idx] * p_max;
        regime.push(if tau_each == 0.0 {
            Regime::Inactive
        } else if incident < p.p_sat {
            Regime::Linear
        } else if incident > p.p_sat {
            Regime::Saturated
        } else {
            Regime::Boundary
        });
    }
    Ok(EpochAllocation {
        p0: p_max,
        tau0,
        tau: vec![tau_each; k],
        regime,
        c_const: None,
        s_star: None,
        rho: None,
        clipped: true,
    })
}

/// Dispatch a scheme for one epoch at a given dual variable.
pub fn allocate_scheme(
    scheme: Scheme,
    epoch: &EpochChannel,
    profiles: &[EhuProfile],
    config: &NetworkConfig,
    lambda: f64,
) -> Result<EpochAllocation, AllocError> {
    match scheme {
        Scheme::Theorem1 => allocate_theorem1(epoch, profiles, config.n0, lambda),
        Scheme::Theorem2 => allocate_theorem2(epoch, profiles, config.n0, lambda, config.p_max),
        Scheme::Baseline1 => {
            let pm = config.p_max.ok_or_else(|| {
                AllocError::InvalidConfig("baseline1 requires a peak power p_max".into())
            })?;
            baseline1(epoch, profiles, config.n0, lambda, pm)
        }
        Scheme::Baseline2 => baseline2(epoch, profiles, config),
    }
}

/// Per-user rates in nats/s/Hz for an allocation, with harvested energy
/// taken from `truth` (one curve per user) rather than the design model.
pub fn epoch_rates(
    alloc: &EpochAllocation,
    epoch: &EpochChannel,
    truth: &[EhCurve],
    config: &NetworkConfig,
) -> Vec<f64> {
    assert_eq!(truth.len(), epoch.k());
    let mut rates = vec![0.0; epoch.k()];
    if !alloc.is_active() {
        return rates;
    }
    for k in 0..epoch.k() {
        let tau_k = alloc.tau[k];
        if tau_k <= 0.0 {
            continue;
        }
        let incident = config.n0 * epoch.x[k] * alloc.p0;
        // Energy per unit epoch duration; T cancels in tau_k * ln(1 + E x / tau_k).
        let energy = alloc.tau0 * truth[k].harvested_power(incident);
        rates[k] = tau_k * (energy * epoch.x[k] / tau_k).ln_1p();
    }
    rates
}

/// Measured average consumption `(1/M) sum p0 tau0` at a fixed dual
/// variable. Deterministic: epochs are mapped in parallel but summed in
/// index order.
pub fn batch_consumption(
    epochs: &[EpochChannel],
    profiles: &[EhuProfile],
    config: &NetworkConfig,
    scheme: Scheme,
    lambda: f64,
) -> Result<f64, AllocError> {
    let terms: Result<Vec<f64>, AllocError> = epochs
        .par_iter()
        .map(|e| allocate_scheme(scheme, e, profiles, config, lambda).map(|a| a.p0 * a.tau0))
        .collect();
    Ok(terms?.iter().sum::<f64>() / epochs.len() as f64)
}

/// Outcome of the dual-variable search.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LambdaSearch {
    pub lambda: f64,
    /// False when consumption at `lambda = 0` already sits below `P_avg`
    /// (saturation-limited regime; the constraint is inactive).
    pub constraint_active: bool,
}

/// Bisection on `lambda` so that measured average consumption meets `P_avg`.
///
/// Consumption is non-increasing in `lambda` and vanishes for
/// `lambda >= max_i A_0(i)`, which brackets the search. The bisection runs
/// the interval down to machine width so the budget is matched as closely as
/// the (piecewise-smooth) consumption curve allows; the feasible endpoint is
/// returned if the tolerance cannot be met at a discontinuity.
pub fn find_lambda(
    epochs: &[EpochChannel],
    profiles: &[EhuProfile],
    config: &NetworkConfig,
    scheme: Scheme,
) -> Result<LambdaSearch, AllocError> {
    assert!(!epochs.is_empty());
    assert!(!matches!(scheme, Scheme::Baseline2), "baseline2 has no dual variable");
    let p_avg = config.p_avg;
    let at_zero = batch_consumption(epochs, profiles, config, scheme, 0.0)?;
    if at_zero <= p_avg {
        return Ok(LambdaSearch { lambda: 0.0, constraint_active: false });
    }
    // Consumption is zero once every epoch shuts down.
    let mut hi = epochs
        .iter()
        .map(|e| {
            let sorted = SortedEpoch::build(e, profiles, config.n0);
            sorted.a[0]
        })
        .fold(0.0f64, f64::max);
    let mut lo = 0.0f64; // consumption(lo) > p_avg, consumption(hi) <= p_avg
    let mut best = hi;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let cons = batch_consumption(epochs, profiles, config, scheme, mid)?;
        if (cons - p_avg).abs() <= 1e-9 * p_avg {
            return Ok(LambdaSearch { lambda: mid, constraint_active: true });
        }
        if cons > p_avg {
            lo = mid;
        } else {
            hi = mid;
            best = mid;
        }
        if hi - lo <= 1e-14 * hi.max(1e-300) {
            break;
        }
    }
    Ok(LambdaSearch { lambda: best, constraint_active: true })
}

#[cfg(test)]
mod tests {
    use super::*;

    const N0: f64 = 1e-10;

    /// The K=1 worked instance: N0 eta x^2 = 2, P_H x = 1, so the Theorem-1
    /// equation collapses to ln C = lambda/2 + ... with closed-form pieces.
    fn worked_instance() -> (EpochChannel, Vec<EhuProfile>) {
        // Pick eta, then x and p_sat so that N0 eta x^2 = 2 and p_sat x = 1.
        let eta = 0.5;
        let x = (2.0 / (N0 * eta)).sqrt();
        let p_sat = 1.0 / x;
        let profiles = vec![EhuProfile { eta, p_sat, distance: 10.0 }];
        let epoch = EpochChannel::from_normalized(vec![x], N0, &profiles);
        (epoch, profiles)
    }

    fn random_instance(seed: u64, k: usize) -> (EpochChannel, Vec<EhuProfile>) {
        // Tiny xorshift so unit tests do not need an RNG crate surface here.
        let mut state = seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).max(1);
        let mut next = move || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state >> 11) as f64 / (1u64 << 53) as f64
        };
        let profiles: Vec<EhuProfile> = (0..k)
            .map(|_| EhuProfile {
                eta: 0.1 + 0.6 * next(),
                p_sat: 1e-6 * 10f64.powf(1.5 * next()),
                distance: 10.0,
            })
            .collect();
        let x: Vec<f64> = (0..k).map(|_| 1e3 * 10f64.powf(2.0 * next())).collect();
        let epoch = EpochChannel::from_normalized(x, N0, &profiles);
        (epoch, profiles)
    }

    #[test]
    fn coefficients_edges_and_sums() {
        let (epoch, profiles) = random_instance(7, 4);
        let k = epoch.k();
        assert_eq!(coefficients(&epoch, &profiles, N0, k).0, 0.0);
        assert_eq!(coefficients(&epoch, &profiles, N0, 0).1, 0.0);
        // Direct sums against the relabeled epoch.
        let (a1, b1) = coefficients(&epoch, &profiles, N0, 1);
        let mut a_direct = 0.0;
        let mut b_direct = 0.0;
        for (j, &orig) in epoch.order.iter().enumerate() {
            let x = epoch.x[orig];
            if j >= 1 {
                a_direct += N0 * profiles[orig].eta * x * x;
            } else {
                b_direct += profiles[orig].p_sat * x;
            }
        }
        assert!((a1 - a_direct).abs() <= 1e-12 * a_direct.abs());
        assert!((b1 - b_direct).abs() <= 1e-12 * b_direct.abs());
    }

    #[test]
    fn coefficients_small_worked_sum() {
        // K=2 with N0 eta x^2 = {2, 3} and P_H x = {1, 4} in threshold order.
        let x1 = (2.0 / (N0 * 0.5)).sqrt();
        let x2 = (3.0 / (N0 * 0.5)).sqrt();
        let profiles = vec![
            EhuProfile { eta: 0.5, p_sat: 1.0 / x1, distance: 1.0 },
            EhuProfile { eta: 0.5, p_sat: 4.0 / x2, distance: 1.0 },
        ];
        let epoch = EpochChannel::from_normalized(vec![x1, x2], N0, &profiles);
        // thresholds: p_sat/(N0 eta x) = (P_H x)/(N0 eta x^2) = 1/2 and 4/3 -> order as given.
        let (a, b) = coefficients(&epoch, &profiles, N0, 1);
        assert!((a - 3.0).abs() < 1e-9);
        assert!((b - 1.0).abs() < 1e-9);
    }

    #[test]
    fn s_star_selection_cases() {
        let (epoch, profiles) = worked_instance();
        // A_0 = 2. lambda above it: idle.
        assert_eq!(select_s_star(&epoch, &profiles, N0, 3.0), None);
        // lambda = 1: A_0/lambda = 2 > z_0 = 1, A_1 = 0 < z_1.
        assert_eq!(select_s_star(&epoch, &profiles, N0, 1.0), Some(1));
        // lambda = 0 inverts the worst-threshold user.
        let (epoch5, profiles5) = random_instance(3, 5);
        assert_eq!(select_s_star(&epoch5, &profiles5, N0, 0.0), Some(5));
    }

    #[test]
    fn s_star_is_unique() {
        // Exhaustive scan: the (A_{s-1}/l > z_{s-1}, A_s/l < z_s) predicate
        // holds for exactly one s whenever the epoch is active.
        for seed in 0..50u64 {
            for &k in &[1usize, 2, 3, 5] {
                let (epoch, profiles) = random_instance(seed * 31 + k as u64, k);
                let a0 = coefficients(&epoch, &profiles, N0, 0).0;
                for &frac in &[0.9, 0.5, 0.1, 1e-3] {
                    let lambda = a0 * frac;
                    let mut hits = Vec::new();
                    for s in 1..=k {
                        let (a_prev, b_prev) = coefficients(&epoch, &profiles, N0, s - 1);
                        let (a_s, b_s) = coefficients(&epoch, &profiles, N0, s);
                        let z_prev = if s == 1 { 1.0 } else { z_of(b_prev) };
                        if a_prev / lambda > z_prev && a_s / lambda < z_of(b_s) {
                            hits.push(s);
                        }
                    }
                    assert_eq!(hits.len(), 1, "seed {seed} k {k} frac {frac}: {hits:?}");
                    assert_eq!(select_s_star(&epoch, &profiles, N0, lambda), Some(hits[0]));
                }
            }
        }
    }

    #[test]
    fn theorem1_worked_instance() {
        let (epoch, profiles) = worked_instance();
        let (c, rho) = solve_c_theorem1(&epoch, &profiles, N0, 1.0, 1).unwrap();
        let e_half = 0.5f64.exp();
        assert!((c - e_half).abs() < 1e-9, "C = {c}");
        assert!((rho - (1.0 - e_half / 2.0)).abs() < 1e-9, "rho = {rho}");
        assert!(rho > 0.0 && rho < 1.0);

        let alloc = allocate_theorem1(&epoch, &profiles, N0, 1.0).unwrap();
        assert!((alloc.p0 - epoch.thresholds[0]).abs() <= 1e-12 * epoch.thresholds[0]);
        let tau0_expect = 1.0 / (1.0 + 1.0 / (e_half - 1.0));
        assert!((alloc.tau0 - tau0_expect).abs() < 1e-9, "tau0 = {}", alloc.tau0);
        assert!((alloc.tau[0] - (1.0 - tau0_expect)).abs() < 1e-9);
        assert!((alloc.tau0 + alloc.tau[0] - 1.0).abs() < 1e-12);
        assert_eq!(alloc.regime[0], Regime::Boundary);
    }

    #[test]
    fn theorem1_idle_above_activity_threshold() {
        let (epoch, profiles) = worked_instance();
        let alloc = allocate_theorem1(&epoch, &profiles, N0, 2.5).unwrap();
        assert_eq!(alloc.p0, 0.0);
        assert_eq!(alloc.tau0, 0.0);
        assert!(alloc.tau.iter().all(|&t| t == 0.0));
    }

    #[test]
    fn boundary_continuity_as_lambda_approaches_a0() {
        let (epoch, profiles) = worked_instance();
        // lambda -> A_0 = 2 from below: rho -> 0+, C -> 1+.
        let (c, rho) = solve_c_theorem1(&epoch, &profiles, N0, 2.0 - 1e-6, 1).unwrap();
        assert!(c > 1.0 && c < 1.001, "C = {c}");
        assert!(rho > 0.0 && rho < 1e-3, "rho = {rho}");
    }

    #[test]
    fn theorem1_invariants_random() {
        for seed in 0..40u64 {
            for &k in &[1usize, 2, 3, 5] {
                let (epoch, profiles) = random_instance(seed * 131 + k as u64, k);
                let a0 = coefficients(&epoch, &profiles, N0, 0).0;
                let lambda = 0.3 * a0;
                let alloc = allocate_theorem1(&epoch, &profiles, N0, lambda).unwrap();
                if !alloc.is_active() {
                    continue;
                }
                let s = alloc.s_star.unwrap();
                // Share closure.
                let total = alloc.tau0 + alloc.tau.iter().sum::<f64>();
                assert!((total - 1.0).abs() <= 1e-10, "closure {total}");
                // Exact channel inversion of the boundary user.
                let orig = epoch.order[s - 1];
                let inverted = profiles[orig].eta * alloc.p0 * N0 * epoch.x[orig];
                assert!(
                    (inverted - profiles[orig].p_sat).abs() <= 4.0 * f64::EPSILON * profiles[orig].p_sat,
                    "inversion {inverted} vs {}", profiles[orig].p_sat
                );
                // Regime run: saturated prefix, one boundary, linear suffix.
                for (j, &o) in epoch.order.iter().enumerate() {
                    let expect = if j + 1 < s {
                        Regime::Saturated
                    } else if j + 1 == s {
                        Regime::Boundary
                    } else {
                        Regime::Linear
                    };
                    assert_eq!(alloc.regime[o], expect);
                    // Linear users strictly inside the linear branch.
                    if j + 1 > s {
                        assert!(
                            profiles[o].eta * alloc.p0 * N0 * epoch.x[o] < profiles[o].p_sat
                        );
                    }
                }
                // rho in (0,1].
                let rho = alloc.rho.unwrap();
                assert!(rho > 0.0 && rho <= 1.0 + 1e-12, "rho = {rho}");
            }
        }
    }

    #[test]
    fn equal_snr_under_design_model() {
        for seed in 0..20u64 {
            let (epoch, profiles) = random_instance(seed + 1000, 4);
            let a0 = coefficients(&epoch, &profiles, N0, 0).0;
            let alloc = allocate_theorem1(&epoch, &profiles, N0, 0.2 * a0).unwrap();
            if !alloc.is_active() {
                continue;
            }
            let c = alloc.c_const.unwrap();
            for k in 0..epoch.k() {
                let energy = alloc.tau0
                    * (N0 * profiles[k].eta * epoch.x[k] * alloc.p0).min(profiles[k].p_sat);
                let snr = energy * epoch.x[k] / alloc.tau[k];
                assert!(
                    (snr - (c - 1.0)).abs() <= 1e-8 * (c - 1.0),
                    "user {k}: snr {snr} vs {}", c - 1.0
                );
            }
        }
    }

    #[test]
    fn theorem2_reduces_to_theorem1_without_peak() {
        for seed in 0..20u64 {
            let (epoch, profiles) = random_instance(seed + 2000, 3);
            let a0 = coefficients(&epoch, &profiles, N0, 0).0;
            let lambda = 0.25 * a0;
            let t1 = allocate_theorem1(&epoch, &profiles, N0, lambda).unwrap();
            let t2 = allocate_theorem2(&epoch, &profiles, N0, lambda, None).unwrap();
            assert_eq!(t1, t2);
            // Large enough p_max also coincides.
            let big = epoch.thresholds.iter().cloned().fold(0.0f64, f64::max) * 2.0;
            let t2b = allocate_theorem2(&epoch, &profiles, N0, lambda, Some(big)).unwrap();
            assert_eq!(t1, t2b);
        }
    }

    #[test]
    fn theorem2_clipped_case() {
        // K=1, threshold 5, p_max 2, A_0 = 2, lambda = 0.1: g = 0 < s* = 1.
        let eta = 0.5;
        let x = (2.0 / (N0 * eta)).sqrt();
        let p_sat = 5.0 * N0 * eta * x; // threshold = 5 W
        let profiles = vec![EhuProfile { eta, p_sat, distance: 1.0 }];
        let epoch = EpochChannel::from_normalized(vec![x], N0, &profiles);
        let alloc = allocate_theorem2(&epoch, &profiles, N0, 0.1, Some(2.0)).unwrap();
        assert!(alloc.clipped);
        assert_eq!(alloc.p0, 2.0);
        let c = alloc.c_const.unwrap();
        // Residual of ln C - (C-1)/C + 0.2 = 4/C.
        let resid = c.ln() - (c - 1.0) / c + 0.2 - 4.0 / c;
        assert!(resid.abs() <= 1e-10, "resid {resid}");
        assert_eq!(alloc.regime[0], Regime::Linear);
        let total = alloc.tau0 + alloc.tau[0];
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn theorem2_peak_feasibility_and_regimes() {
        for seed in 0..40u64 {
            let (epoch, profiles) = random_instance(seed + 3000, 5);
            let a0 = coefficients(&epoch, &profiles, N0, 0).0;
            let p_max = epoch.thresholds[epoch.order[2]]; // clips roughly half the epochs
            let alloc =
                allocate_theorem2(&epoch, &profiles, N0, 0.1 * a0, Some(p_max * 1.0001)).unwrap();
            assert!(alloc.p0 <= p_max * 1.0001 + 1e-12);
            if alloc.is_active() {
                let total = alloc.tau0 + alloc.tau.iter().sum::<f64>();
                assert!((total - 1.0).abs() <= 1e-10);
            }
        }
    }

    #[test]
    fn baseline1_power_is_binary() {
        for seed in 0..30u64 {
            let (epoch, profiles) = random_instance(seed + 4000, 4);
            let a0 = coefficients(&epoch, &profiles, N0, 0).0;
            for &frac in &[0.0, 0.2, 0.8, 1.5] {
                let alloc = baseline1(&epoch, &profiles, N0, frac * a0, 12.0).unwrap();
                assert!(alloc.p0 == 0.0 || alloc.p0 == 12.0, "p0 = {}", alloc.p0);
                if alloc.is_active() {
                    // All users linear, IT shares proportional to N0 eta x^2.
                    assert!(alloc.regime.iter().all(|&r| r == Regime::Linear));
                    let c = alloc.c_const.unwrap();
                    for k in 0..epoch.k() {
                        let expect = 12.0 * N0 * profiles[k].eta * epoch.x[k] * epoch.x[k]
                            * alloc.tau0
                            / (c - 1.0);
                        assert!((alloc.tau[k] - expect).abs() <= 1e-12 * expect);
                    }
                }
            }
        }
    }

    #[test]
    fn baseline2_fixed_split() {
        let (epoch, profiles) = random_instance(9, 5);
        let config = NetworkConfig {
            k_users: 5,
            n0: N0,
            p_avg: 1.0,
            p_max: Some(10.0),
            epoch_duration: 1.0,
        };
        let alloc = baseline2(&epoch, &profiles, &config).unwrap();
        assert_eq!(alloc.p0, 10.0);
        assert!((alloc.tau0 - 0.1).abs() < 1e-15);
        assert!(alloc.tau.iter().all(|&t| (t - 0.18).abs() < 1e-15));

        // Degenerate p_max = p_avg: tau0 = 1, no IT time.
        let config2 = NetworkConfig { p_max: Some(1.0), ..config.clone() };
        let alloc2 = baseline2(&epoch, &profiles, &config2).unwrap();
        assert_eq!(alloc2.tau0, 1.0);
        assert!(alloc2.tau.iter().all(|&t| t == 0.0));

        // p_avg > p_max rejected.
        let config3 = NetworkConfig { p_max: Some(0.5), ..config };
        assert!(matches!(baseline2(&epoch, &profiles, &config3), Err(AllocError::InvalidConfig(_))));
    }

    #[test]
    fn rates_worked_instance_and_mismatch() {
        let (epoch, profiles) = worked_instance();
        let config = NetworkConfig {
            k_users: 1,
            n0: N0,
            p_avg: 1.0,
            p_max: None,
            epoch_duration: 1.0,
        };
        let alloc = allocate_theorem1(&epoch, &profiles, N0, 1.0).unwrap();
        let design: Vec<EhCurve> = profiles.iter().map(|p| p.design_curve()).collect();
        let rates = epoch_rates(&alloc, &epoch, &design, &config);
        assert!((rates[0] - 0.30327).abs() < 1e-5, "rate = {}", rates[0]);

        // A truth curve strictly below the design curve cannot raise any rate.
        let weaker: Vec<EhCurve> = profiles
            .iter()
            .map(|p| EhCurve::PiecewiseLinear { eta: 0.5 * p.eta, p_sat: 0.5 * p.p_sat })
            .collect();
        let rates_weak = epoch_rates(&alloc, &epoch, &weaker, &config);
        assert!(rates_weak[0] <= rates[0]);

        // Idle allocation produces zero rates.
        let idle = EpochAllocation::idle(1);
        assert_eq!(epoch_rates(&idle, &epoch, &design, &config), vec![0.0]);
    }

    #[test]
    fn find_lambda_single_epoch_inverse() {
        let (epoch, profiles) = worked_instance();
        let alloc = allocate_theorem1(&epoch, &profiles, N0, 1.0).unwrap();
        let target = alloc.p0 * alloc.tau0;
        let config = NetworkConfig {
            k_users: 1,
            n0: N0,
            p_avg: target,
            p_max: None,
            epoch_duration: 1.0,
        };
        let epochs = vec![epoch];
        let found = find_lambda(&epochs, &profiles, &config, Scheme::Theorem1).unwrap();
        assert!(found.constraint_active);
        assert!((found.lambda - 1.0).abs() <= 1e-6, "lambda = {}", found.lambda);
    }

    #[test]
    fn find_lambda_inactive_when_budget_ample() {
        let (epoch, profiles) = worked_instance();
        let alloc0 = allocate_theorem1(&epoch, &profiles, N0, 0.0).unwrap();
        let config = NetworkConfig {
            k_users: 1,
            n0: N0,
            p_avg: alloc0.p0 * alloc0.tau0 * 2.0,
            p_max: None,
            epoch_duration: 1.0,
        };
        let epochs = vec![epoch];
        let found = find_lambda(&epochs, &profiles, &config, Scheme::Theorem1).unwrap();
        assert_eq!(found.lambda, 0.0);
        assert!(!found.constraint_active);
    }

    #[test]
    fn consumption_monotone_in_lambda() {
        let mut epochs = Vec::new();
        let (_, profiles) = random_instance(77, 3);
        for seed in 0..60u64 {
            let (e, _) = random_instance(seed + 5000, 3);
            // Reuse gains but the shared profiles, so thresholds stay consistent.
            epochs.push(EpochChannel::from_normalized(e.x.clone(), N0, &profiles));
        }
        let config = NetworkConfig {
            k_users: 3,
            n0: N0,
            p_avg: 1.0,
            p_max: Some(20.0),
            epoch_duration: 1.0,
        };
        let a0_max = epochs
            .iter()
            .map(|e| coefficients(e, &profiles, N0, 0).0)
            .fold(0.0f64, f64::max);
        let mut prev = f64::INFINITY;
        for i in 0..30 {
            let lambda = a0_max * i as f64 / 29.0;
            let cons =
                batch_consumption(&epochs, &profiles, &config, Scheme::Theorem2, lambda).unwrap();
            assert!(cons <= prev + 1e-12, "consumption rose at lambda={lambda}");
            prev = cons;
        }
        assert_eq!(prev, 0.0);
    }
}
