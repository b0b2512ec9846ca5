//! TOML run configuration and its mapping onto the library types.
//!
//! All powers are in watts, everywhere in the file. The parsed config is
//! echoed back into every output header as `# `-prefixed TOML so a result
//! file documents exactly what produced it (and re-parses to the same
//! config).

use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use wpcn::allocation::{NetworkConfig, Scheme};
use wpcn::eh::{EhCurve, EhuProfile, KNEE_DBM16_WATTS};
use wpcn::sim::{FadingDistribution, FadingSpec, SweepSpec, SweepVar};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schemes: Vec<String>,
    pub network: NetworkSection,
    pub profiles: Vec<ProfileSection>,
    pub fading: FadingSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth_curve: Option<TruthCurveSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSection {
    pub k_users: usize,
    pub n0: f64,
    pub p_avg: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_max: Option<f64>,
    #[serde(default = "default_epoch_duration")]
    pub epoch_duration: f64,
}

fn default_epoch_duration() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfileSection {
    pub eta: f64,
    pub p_sat: f64,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FadingSection {
    pub seed: u64,
    pub epochs: usize,
    /// Override of the per-user mean gains; defaults to `1e-3 * D^-3`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_gain: Option<Vec<f64>>,
}

/// Truth-curve selection. Omitted: evaluate under each user's own design
/// model (no mismatch).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TruthCurveSection {
    /// Each user's own piece-wise linear design curve.
    Design,
    PiecewiseLinear { eta: f64, p_sat: f64 },
    /// Calibrated so the least-squares slope on [0, knee] is `slope`;
    /// `knee` defaults to -16 dBm.
    Logistic {
        slope: f64,
        p_sat: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        knee: Option<f64>,
    },
    /// Two-column CSV of (incident W, harvested W).
    Table { path: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub variable: String,
    pub values: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_max_factor: Option<f64>,
}

impl RunConfig {
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config {}", path.display()))?;
        Self::from_toml(&text)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let config: RunConfig = toml::from_str(text).context("config parse error")?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.profiles.len() != self.network.k_users {
            bail!(
                "profiles: expected {} entries (one per user), found {}",
                self.network.k_users,
                self.profiles.len()
            );
        }
        if self.schemes.is_empty() {
            bail!("schemes: at least one of theorem1|theorem2|baseline1|baseline2 required");
        }
        for s in &self.schemes {
            s.parse::<Scheme>().map_err(anyhow::Error::msg)?;
        }
        if let Some(mg) = &self.fading.mean_gain {
            if mg.len() != self.network.k_users {
                bail!("fading.mean_gain: expected {} entries", self.network.k_users);
            }
        }
        if let Some(sweep) = &self.sweep {
            if !matches!(sweep.variable.as_str(), "p_avg" | "p_max") {
                bail!("sweep.variable must be p_avg or p_max, got `{}`", sweep.variable);
            }
        }
        self.network_config().validate().map_err(anyhow::Error::msg)?;
        Ok(())
    }

    pub fn network_config(&self) -> NetworkConfig {
        NetworkConfig {
            k_users: self.network.k_users,
            n0: self.network.n0,
            p_avg: self.network.p_avg,
            p_max: self.network.p_max,
            epoch_duration: self.network.epoch_duration,
        }
    }

    pub fn profiles(&self) -> Result<Vec<EhuProfile>> {
        self.profiles
            .iter()
            .map(|p| {
                EhuProfile::new(p.eta, p.p_sat, p.distance).map_err(anyhow::Error::from)
            })
            .collect()
    }

    pub fn schemes(&self) -> Vec<Scheme> {
        self.schemes.iter().map(|s| s.parse().expect("validated")).collect()
    }

    pub fn fading_spec(&self, profiles: &[EhuProfile], seed_override: Option<u64>) -> FadingSpec {
        let mut spec = FadingSpec::from_profiles(
            profiles,
            seed_override.unwrap_or(self.fading.seed),
            self.fading.epochs,
        );
        if let Some(mg) = &self.fading.mean_gain {
            spec.mean_gain = mg.clone();
        }
        spec.distribution = FadingDistribution::RayleighPower;
        spec
    }

    /// One truth curve per user.
    pub fn truth_curves(&self, profiles: &[EhuProfile]) -> Result<Vec<EhCurve>> {
        let section = self.truth_curve.as_ref().unwrap_or(&TruthCurveSection::Design);
        let curves = match section {
            TruthCurveSection::Design => {
                profiles.iter().map(|p| p.design_curve()).collect()
            }
            TruthCurveSection::PiecewiseLinear { eta, p_sat } => {
                vec![EhCurve::PiecewiseLinear { eta: *eta, p_sat: *p_sat }; profiles.len()]
            }
            TruthCurveSection::Logistic { slope, p_sat, knee } => {
                let curve = EhCurve::logistic_calibrated(
                    *slope,
                    *p_sat,
                    knee.unwrap_or(KNEE_DBM16_WATTS),
                )?;
                vec![curve; profiles.len()]
            }
            TruthCurveSection::Table { path } => {
                let text = std::fs::read_to_string(path)
                    .with_context(|| format!("cannot read truth-curve table {path}"))?;
                vec![EhCurve::table_from_csv(&text)?; profiles.len()]
            }
        };
        Ok(curves)
    }

    pub fn sweep_spec(&self) -> Result<SweepSpec> {
        let Some(sweep) = &self.sweep else {
            bail!("config has no [sweep] section");
        };
        let variable = match sweep.variable.as_str() {
            "p_avg" => SweepVar::PAvg,
            "p_max" => SweepVar::PMax,
            other => bail!("unknown sweep variable `{other}`"),
        };
        let profiles = self.profiles()?;
        let truth = self.truth_curves(&profiles)?;
        let spec = SweepSpec {
            variable,
            values: sweep.values.clone(),
            fixed: self.network_config(),
            schemes: self.schemes(),
            truth_curve: truth[0].clone(),
            p_max_factor: sweep.p_max_factor,
        };
        spec.validate().map_err(anyhow::Error::msg)?;
        Ok(spec)
    }
}

/// Reference numerical setup for `k` users: eta 0.2, saturation 9.2 uW,
/// circle of radius 10 m.
pub fn reference_config(k: usize, p_avg: f64, p_max: Option<f64>, seed: u64, epochs: usize) -> RunConfig {
    RunConfig {
        schemes: vec!["theorem2".into(), "baseline1".into(), "baseline2".into()],
        network: NetworkSection {
            k_users: k,
            n0: 1e-10,
            p_avg,
            p_max,
            epoch_duration: 1.0,
        },
        profiles: vec![ProfileSection { eta: 0.2, p_sat: 9.2e-6, distance: 10.0 }; k],
        fading: FadingSection { seed, epochs, mean_gain: None },
        truth_curve: Some(TruthCurveSection::Design),
        sweep: None,
    }
}
