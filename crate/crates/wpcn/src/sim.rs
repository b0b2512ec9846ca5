//! Monte-Carlo driver: reproducible Rayleigh block-fading batches, scheme
//! evaluation under design and truth EH curves, and sweeps over the power
//! budget or the peak power.
//!
//! Reproducibility contract: every `(epoch, user)` pair gets its own
//! counter-derived ChaCha substream, so a batch depends only on the seed,
//! never on worker count or scheduling. All reductions run in index order.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::allocation::{
    allocate_scheme, epoch_rates, find_lambda, AllocError, EpochChannel, NetworkConfig, Scheme,
    SchemeResult,
};
use crate::eh::{EhCurve, EhuProfile};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FadingDistribution {
    /// Rayleigh amplitude fading: exponential power gains.
    RayleighPower,
}

/// Specification of one fading batch.
#[derive(Debug, Clone, PartialEq)]
pub struct FadingSpec {
    /// Mean raw power gain `E[x'_k]` per user (1/W after normalization).
    pub mean_gain: Vec<f64>,
    pub distribution: FadingDistribution,
    pub seed: u64,
    pub epochs: usize,
}

impl FadingSpec {
    /// Distance-based means: `E[x'_k] = 1e-3 * D_k^-3`.
    pub fn from_profiles(profiles: &[EhuProfile], seed: u64, epochs: usize) -> Self {
        FadingSpec {
            mean_gain: profiles.iter().map(|p| 1e-3 * p.distance.powi(-3)).collect(),
            distribution: FadingDistribution::RayleighPower,
            seed,
            epochs,
        }
    }
}

fn substream(seed: u64, epoch: u64, user: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[0..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&epoch.to_le_bytes());
    key[16..24].copy_from_slice(&user.to_le_bytes());
    key[24..32].copy_from_slice(b"wpcnfade");
    ChaCha8Rng::from_seed(key)
}

/// Draw a reproducible batch of epochs. Same spec, same bits, regardless of
/// thread count.
pub fn generate_epochs(spec: &FadingSpec, n0: f64, profiles: &[EhuProfile]) -> Vec<EpochChannel> {
    assert!(spec.epochs >= 1);
    assert_eq!(spec.mean_gain.len(), profiles.len());
    assert!(spec.mean_gain.iter().all(|&m| m > 0.0));
    (0..spec.epochs)
        .into_par_iter()
        .map(|i| {
            let x_prime: Vec<f64> = spec
                .mean_gain
                .iter()
                .enumerate()
                .map(|(k, &mean)| {
                    let mut rng = substream(spec.seed, i as u64, k as u64);
                    let u: f64 = rng.random();
                    // Inverse-CDF exponential; the clamp keeps the gain
                    // strictly positive.
                    -mean * u.max(1e-300).ln()
                })
                .collect();
            EpochChannel::new(&x_prime, n0, profiles)
        })
        .collect()
}

/// Calibrate `lambda` (where the scheme has one), allocate every epoch, and
/// evaluate rates under both the design model and the given truth curves.
pub fn run_scheme(
    epochs: &[EpochChannel],
    profiles: &[EhuProfile],
    config: &NetworkConfig,
    scheme: Scheme,
    truth: &[EhCurve],
) -> Result<SchemeResult, AllocError> {
    assert!(!epochs.is_empty());
    assert_eq!(truth.len(), profiles.len());
    config.validate()?;
    let (lambda, constraint_active) = if scheme == Scheme::Baseline2 {
        (0.0, true) // meets the budget with equality by construction
    } else {
        let found = find_lambda(epochs, profiles, config, scheme)?;
        (found.lambda, found.constraint_active)
    };
    let design: Vec<EhCurve> = profiles.iter().map(|p| p.design_curve()).collect();
    let per_epoch: Result<Vec<_>, AllocError> = epochs
        .par_iter()
        .map(|epoch| {
            let alloc = allocate_scheme(scheme, epoch, profiles, config, lambda)?;
            let rates_truth = epoch_rates(&alloc, epoch, truth, config);
            let rates_design = epoch_rates(&alloc, epoch, &design, config);
            let consumption = alloc.p0 * alloc.tau0;
            Ok((rates_truth, rates_design, consumption, alloc.is_active()))
        })
        .collect();
    let per_epoch = per_epoch?;

    let m = epochs.len() as f64;
    let k = profiles.len();
    let mut per_user = vec![0.0; k];
    let mut sum_design = 0.0;
    let mut consumption = 0.0;
    let mut active = 0usize;
    for (rt, rd, cons, is_active) in &per_epoch {
        for (acc, r) in per_user.iter_mut().zip(rt) {
            *acc += r;
        }
        sum_design += rd.iter().sum::<f64>();
        consumption += cons;
        active += usize::from(*is_active);
    }
    for r in &mut per_user {
        *r /= m;
    }
    Ok(SchemeResult {
        avg_sum_rate: per_user.iter().sum(),
        sum_rate_design: sum_design / m,
        per_user_rate: per_user,
        consumed_avg_power: consumption / m,
        lambda,
        constraint_active,
        epochs_active_fraction: active as f64 / m,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepVar {
    PAvg,
    PMax,
}

impl SweepVar {
    pub fn name(&self) -> &'static str {
        match self {
            SweepVar::PAvg => "p_avg",
            SweepVar::PMax => "p_max",
        }
    }
}

/// A sweep over one network parameter, all points evaluated on the same
/// fading batch (paired seeds).
#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub variable: SweepVar,
    pub values: Vec<f64>,
    pub fixed: NetworkConfig,
    pub schemes: Vec<Scheme>,
    /// Truth curve applied to every user.
    pub truth_curve: EhCurve,
    /// For `PAvg` sweeps: couple the peak as `p_max = factor * p_avg`
    /// (the fig1a preset uses factor 15).
    pub p_max_factor: Option<f64>,
}

impl SweepSpec {
    pub fn validate(&self) -> Result<(), AllocError> {
        if self.values.is_empty() {
            return Err(AllocError::InvalidConfig("sweep values must be non-empty".into()));
        }
        if self.values.windows(2).any(|w| w[1] <= w[0]) {
            return Err(AllocError::InvalidConfig(
                "sweep values must be strictly increasing".into(),
            ));
        }
        if self.schemes.is_empty() {
            return Err(AllocError::InvalidConfig("sweep needs at least one scheme".into()));
        }
        Ok(())
    }

    fn config_at(&self, value: f64) -> NetworkConfig {
        let mut c = self.fixed.clone();
        match self.variable {
            SweepVar::PAvg => {
                c.p_avg = value;
                if let Some(f) = self.p_max_factor {
                    c.p_max = Some(f * value);
                }
            }
            SweepVar::PMax => c.p_max = Some(value),
        }
        c
    }
}

/// One output row of a sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub variable: SweepVar,
    pub value: f64,
    pub scheme: Scheme,
    pub sum_rate_truth: f64,
    pub sum_rate_design: f64,
    pub consumption: f64,
    pub lambda: f64,
    pub active_fraction: f64,
}

/// Evaluate every (value, scheme) pair of a sweep on one shared batch.
pub fn run_sweep(
    spec: &SweepSpec,
    profiles: &[EhuProfile],
    fading: &FadingSpec,
) -> Result<Vec<SweepRow>, AllocError> {
    spec.validate()?;
    let epochs = generate_epochs(fading, spec.fixed.n0, profiles);
    let truth: Vec<EhCurve> = vec![spec.truth_curve.clone(); profiles.len()];
    let mut rows = Vec::new();
    for &value in &spec.values {
        let config = spec.config_at(value);
        for &scheme in &spec.schemes {
            let result = run_scheme(&epochs, profiles, &config, scheme, &truth)?;
            rows.push(SweepRow {
                variable: spec.variable,
                value,
                scheme,
                sum_rate_truth: result.avg_sum_rate,
                sum_rate_design: result.sum_rate_design,
                consumption: result.consumed_avg_power,
                lambda: result.lambda,
                active_fraction: result.epochs_active_fraction,
            });
        }
    }
    Ok(rows)
}
