//! `wpcn` — solve, sweep, and verify WPCN power/time allocations.
//!
//! Subcommands:
//! - `solve`: run the configured schemes on one fading batch, one CSV row per
//!   scheme.
//! - `sweep`: sweep `p_avg` or `p_max` (presets `fig1a` / `fig1b` reproduce
//!   the standard experiment layouts) and emit a CSV table plus per-scheme
//!   plot data.
//! - `verify`: certify the closed-form allocations against the brute-force
//!   grid oracle and the KKT residuals; nonzero exit on failure.
//!
//! Outputs embed the full config as `# `-prefixed TOML so every file is
//! self-describing and reproducible. `WPCN_THREADS` caps the worker pool
//! (speed only; results are independent of thread count).

mod config;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use config::{reference_config, RunConfig};
use wpcn::allocation::{allocate_theorem2, coefficients, EpochChannel};
use wpcn::eh::EhuProfile;
use wpcn::oracle::{epoch_grid_search, kkt_residuals, lagrangian_objective, GridSpec};
use wpcn::sim::{generate_epochs, run_scheme, run_sweep, SweepSpec, SweepVar};

#[derive(Parser)]
#[command(name = "wpcn", version, about = "WPCN sum-rate power/time allocation simulator")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Evaluate the configured schemes on one fading batch.
    Solve {
        #[arg(long)]
        config: PathBuf,
        /// Override the config's fading seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Output CSV path (stdout when omitted).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sweep p_avg or p_max and tabulate every scheme.
    Sweep {
        /// Config with a [sweep] section; not needed with --preset.
        #[arg(long)]
        config: Option<PathBuf>,
        /// fig1a: sum rate vs p_avg (p_max = 15 p_avg, K in {3,5}).
        /// fig1b: sum rate vs p_max (K = 5, p_avg = 3 W).
        #[arg(long, value_enum)]
        preset: Option<Preset>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Certify random epochs against the grid oracle and KKT residuals.
    Verify {
        /// Network/profile config; defaults to the 3-user reference setup.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 200)]
        samples: usize,
        /// Grid points per axis for the brute-force search.
        #[arg(long, default_value_t = 512)]
        grid: usize,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Test fixture: perturb the solver output so certification must fail.
        #[arg(long, hide = true)]
        corrupt: bool,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Fig1a,
    Fig1b,
}

/// Full-precision decimal formatting (17 significant digits) so reruns are
/// byte-identical.
fn fmt(x: f64) -> String {
    format!("{x:.16e}")
}

fn header(config: &RunConfig, info: &[(&str, String)]) -> String {
    let mut out = String::new();
    for (key, value) in info {
        let _ = writeln!(out, "## {key}={value}");
    }
    for line in config.to_toml().lines() {
        let _ = writeln!(out, "# {line}");
    }
    out
}

fn emit(out: &Option<PathBuf>, text: &str) -> Result<()> {
    match out {
        Some(path) => std::fs::write(path, text)
            .with_context(|| format!("cannot write {}", path.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn main() {
    if let Err(err) = run() {
        eprintln!("error: {err:#}");
        std::process::exit(1);
    }
}

fn run() -> Result<()> {
    if let Ok(threads) = std::env::var("WPCN_THREADS") {
        let n: usize = threads.parse().context("WPCN_THREADS must be an integer")?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("thread pool init")?;
    }
    match Cli::parse().cmd {
        Cmd::Solve { config, seed, out } => cmd_solve(&config, seed, &out),
        Cmd::Sweep { config, preset, seed, out } => cmd_sweep(config.as_deref(), preset, seed, &out),
        Cmd::Verify { config, samples, grid, seed, out, corrupt } => {
            cmd_verify(config.as_deref(), samples, grid, seed, &out, corrupt)
        }
    }
}

fn cmd_solve(config_path: &Path, seed: Option<u64>, out: &Option<PathBuf>) -> Result<()> {
    let mut cfg = RunConfig::from_path(config_path)?;
    if let Some(s) = seed {
        cfg.fading.seed = s;
    }
    if cfg.sweep.is_some() {
        bail!("config has a [sweep] section; use `wpcn sweep`");
    }
    let profiles = cfg.profiles()?;
    let truth = cfg.truth_curves(&profiles)?;
    let network = cfg.network_config();
    let fading = cfg.fading_spec(&profiles, None);
    let epochs = generate_epochs(&fading, network.n0, &profiles);

    let mut text = header(&cfg, &[("command", "solve".into())]);
    text.push_str(
        "scheme,sum_rate_truth,sum_rate_design,consumption,lambda,constraint_active,active_fraction\n",
    );
    for scheme in cfg.schemes() {
        let r = run_scheme(&epochs, &profiles, &network, scheme, &truth)?;
        let _ = writeln!(
            text,
            "{},{},{},{},{},{},{}",
            scheme.name(),
            fmt(r.avg_sum_rate),
            fmt(r.sum_rate_design),
            fmt(r.consumed_avg_power),
            fmt(r.lambda),
            u8::from(r.constraint_active),
            fmt(r.epochs_active_fraction),
        );
    }
    emit(out, &text)
}

const SWEEP_COLUMNS: &str =
    "sweep_var,value,scheme,sum_rate_truth,sum_rate_design,consumption,lambda,active_fraction\n";

fn sweep_rows_csv(rows: &[wpcn::sim::SweepRow]) -> String {
    let mut text = String::new();
    for r in rows {
        let _ = writeln!(
            text,
            "{},{},{},{},{},{},{},{}",
            r.variable.name(),
            fmt(r.value),
            r.scheme.name(),
            fmt(r.sum_rate_truth),
            fmt(r.sum_rate_design),
            fmt(r.consumption),
            fmt(r.lambda),
            fmt(r.active_fraction),
        );
    }
    text
}

/// Two-column (value, sum_rate_truth) companion files next to `out`, one per
/// scheme, for external plotting.
fn write_plot_data(out: &Path, label: &str, rows: &[wpcn::sim::SweepRow]) -> Result<()> {
    let mut by_scheme: Vec<(&str, String)> = Vec::new();
    for r in rows {
        let name = r.scheme.name();
        if !by_scheme.iter().any(|(n, _)| *n == name) {
            by_scheme.push((name, String::new()));
        }
        let entry = by_scheme.iter_mut().find(|(n, _)| *n == name).unwrap();
        let _ = writeln!(entry.1, "{} {}", fmt(r.value), fmt(r.sum_rate_truth));
    }
    let stem = out.with_extension("");
    for (scheme, data) in by_scheme {
        let path = PathBuf::from(format!("{}{label}.{scheme}.dat", stem.display()));
        std::fs::write(&path, data)
            .with_context(|| format!("cannot write {}", path.display()))?;
    }
    Ok(())
}

fn cmd_sweep(
    config_path: Option<&Path>,
    preset: Option<Preset>,
    seed: Option<u64>,
    out: &Option<PathBuf>,
) -> Result<()> {
    match preset {
        Some(p) => run_preset_sweep(p, seed, out),
        None => {
            let path = config_path.context("either --config or --preset is required")?;
            let mut cfg = RunConfig::from_path(path)?;
            if let Some(s) = seed {
                cfg.fading.seed = s;
            }
            let profiles = cfg.profiles()?;
            let spec = cfg.sweep_spec()?;
            let fading = cfg.fading_spec(&profiles, None);
            let rows = run_sweep(&spec, &profiles, &fading)?;
            let mut text = header(&cfg, &[("command", "sweep".into())]);
            text.push_str(SWEEP_COLUMNS);
            text.push_str(&sweep_rows_csv(&rows));
            if let Some(path) = out {
                write_plot_data(path, "", &rows)?;
            }
            emit(out, &text)
        }
    }
}

fn run_preset_sweep(preset: Preset, seed: Option<u64>, out: &Option<PathBuf>) -> Result<()> {
    let seed = seed.unwrap_or(1);
    let epochs = 10_000;
    match preset {
        Preset::Fig1a => {
            let values = vec![0.1, 0.2, 0.5, 1.0, 2.0, 3.0, 5.0, 7.0, 10.0];
            let mut text = String::new();
            let mut first = true;
            for k in [3usize, 5] {
                let cfg = reference_config(k, values[0], None, seed, epochs);
                let profiles = cfg.profiles()?;
                let spec = SweepSpec {
                    variable: SweepVar::PAvg,
                    values: values.clone(),
                    fixed: cfg.network_config(),
                    schemes: cfg.schemes(),
                    truth_curve: cfg.truth_curves(&profiles)?[0].clone(),
                    p_max_factor: Some(15.0),
                };
                let fading = cfg.fading_spec(&profiles, None);
                let rows = run_sweep(&spec, &profiles, &fading)?;
                if first {
                    text.push_str(&header(&cfg, &[("command", "sweep".into()), ("preset", "fig1a".into())]));
                    text.push_str(SWEEP_COLUMNS);
                    first = false;
                }
                let _ = writeln!(text, "## k_users={k}");
                text.push_str(&sweep_rows_csv(&rows));
                if let Some(path) = out {
                    write_plot_data(path, &format!(".k{k}"), &rows)?;
                }
            }
            emit(out, &text)
        }
        Preset::Fig1b => {
            let values = vec![5.0, 7.5, 10.0, 15.0, 20.0, 25.0, 30.0, 35.0];
            let cfg = reference_config(5, 3.0, Some(values[0]), seed, epochs);
            let profiles = cfg.profiles()?;
            let spec = SweepSpec {
                variable: SweepVar::PMax,
                values,
                fixed: cfg.network_config(),
                schemes: cfg.schemes(),
                truth_curve: cfg.truth_curves(&profiles)?[0].clone(),
                p_max_factor: None,
            };
            let fading = cfg.fading_spec(&profiles, None);
            let rows = run_sweep(&spec, &profiles, &fading)?;
            let mut text =
                header(&cfg, &[("command", "sweep".into()), ("preset", "fig1b".into())]);
            text.push_str(SWEEP_COLUMNS);
            text.push_str(&sweep_rows_csv(&rows));
            if let Some(path) = out {
                write_plot_data(path, "", &rows)?;
            }
            emit(out, &text)
        }
    }
}

/// Per-sample certification tolerances (relative).
const GAP_TOL: f64 = 1e-3;
const KKT_TOL: f64 = 1e-6;

fn cmd_verify(
    config_path: Option<&Path>,
    samples: usize,
    grid: usize,
    seed: Option<u64>,
    out: &Option<PathBuf>,
    corrupt: bool,
) -> Result<()> {
    if samples == 0 {
        bail!("--samples must be >= 1");
    }
    let mut cfg = match config_path {
        Some(p) => RunConfig::from_path(p)?,
        None => reference_config(3, 3.0, Some(45.0), 1, samples),
    };
    if let Some(s) = seed {
        cfg.fading.seed = s;
    }
    cfg.fading.epochs = samples;
    let profiles = cfg.profiles()?;
    let network = cfg.network_config();
    let fading = cfg.fading_spec(&profiles, None);
    let epochs = generate_epochs(&fading, network.n0, &profiles);

    let mut text = header(
        &cfg,
        &[
            ("command", "verify".into()),
            ("samples", samples.to_string()),
            ("grid", grid.to_string()),
        ],
    );
    text.push_str(
        "sample,lambda,best_objective,theorem_objective,rel_gap,equal_snr,stationarity,multiplier_recovery,dual_feasibility,rho\n",
    );
    let mut worst_gap = 0.0f64;
    let mut worst_kkt = 0.0f64;
    for (i, epoch) in epochs.iter().enumerate() {
        let (lambda, report, residuals) =
            certify_epoch(i, epoch, &profiles, &network, grid, &cfg, corrupt)?;
        let rel_gap = report.gap.max(0.0)
            / report.theorem_objective.abs().max(1e-9);
        worst_gap = worst_gap.max(rel_gap);
        let mut cells = [String::new(), String::new(), String::new(), String::new(), String::new()];
        if let Some(res) = &residuals {
            for (idx, key) in
                ["equal_snr", "stationarity", "multiplier_recovery", "dual_feasibility"]
                    .iter()
                    .enumerate()
            {
                if let Some(v) = res.get(*key) {
                    worst_kkt = worst_kkt.max(*v);
                    cells[idx] = fmt(*v);
                }
            }
            if let Some(rho) = res.get("rho") {
                cells[4] = fmt(*rho);
            }
        }
        let _ = writeln!(
            text,
            "{i},{},{},{},{},{},{},{},{},{}",
            fmt(lambda),
            fmt(report.best_objective),
            fmt(report.theorem_objective),
            fmt(rel_gap),
            cells[0],
            cells[1],
            cells[2],
            cells[3],
            cells[4],
        );
    }
    let _ = writeln!(text, "## worst_rel_gap={}", fmt(worst_gap));
    let _ = writeln!(text, "## worst_kkt_residual={}", fmt(worst_kkt));
    emit(out, &text)?;
    eprintln!("worst relative gap: {worst_gap:.3e} (tolerance {GAP_TOL:.0e})");
    eprintln!("worst KKT residual: {worst_kkt:.3e} (tolerance {KKT_TOL:.0e})");
    if worst_gap > GAP_TOL || worst_kkt > KKT_TOL {
        bail!("certification failed");
    }
    eprintln!("verify: PASS ({samples} samples, {grid}x{grid} grid)");
    Ok(())
}

type Residuals = std::collections::BTreeMap<String, f64>;

fn certify_epoch(
    index: usize,
    epoch: &EpochChannel,
    profiles: &[EhuProfile],
    network: &wpcn::allocation::NetworkConfig,
    grid: usize,
    cfg: &RunConfig,
    corrupt: bool,
) -> Result<(f64, wpcn::oracle::OracleReport, Option<Residuals>)> {
    // Per-sample dual variable: a reproducible fraction of the activity
    // threshold A_0, spanning active and idle epochs.
    let mut key = [0u8; 32];
    key[0..8].copy_from_slice(&cfg.fading.seed.to_le_bytes());
    key[8..16].copy_from_slice(&(index as u64).to_le_bytes());
    key[16..24].copy_from_slice(b"wpcnlamb");
    let mut rng = ChaCha8Rng::from_seed(key);
    let frac: f64 = 0.05 + 1.05 * rng.random::<f64>();
    let a0 = coefficients(epoch, profiles, network.n0, 0).0;
    let lambda = frac * a0;

    let mut report = epoch_grid_search(
        epoch,
        profiles,
        network.n0,
        lambda,
        network.p_max,
        GridSpec::square(grid),
    )?;
    let mut alloc = allocate_theorem2(epoch, profiles, network.n0, lambda, network.p_max)?;
    if corrupt && alloc.is_active() {
        // Negative control: a detuned EH phase must produce a visible gap.
        alloc.tau0 *= 0.8;
        report.theorem_objective =
            lagrangian_objective(&alloc, epoch, profiles, network.n0, lambda);
        report.gap = report.best_objective - report.theorem_objective;
    }
    let residuals = if alloc.is_active() {
        if alloc.clipped {
            // Peak-clipped epochs still equalize SNR; the Theorem-1
            // multiplier recovery does not apply.
            let c = alloc.c_const.expect("active allocation has C");
            let mut equal_snr = 0.0f64;
            for k in 0..epoch.k() {
                let energy = alloc.tau0
                    * (network.n0 * profiles[k].eta * epoch.x[k] * alloc.p0)
                        .min(profiles[k].p_sat);
                let snr = energy * epoch.x[k] / alloc.tau[k];
                equal_snr = equal_snr.max((snr - (c - 1.0)).abs() / (c - 1.0));
            }
            let mut map = Residuals::new();
            map.insert("equal_snr".into(), equal_snr);
            Some(map)
        } else {
            Some(kkt_residuals(&alloc, epoch, profiles, network.n0, lambda))
        }
    } else {
        None
    };
    Ok((lambda, report, residuals))
}
