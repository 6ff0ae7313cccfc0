//! Command-line front end for the `lorafind` localization toolkit.
//!
//! Four subcommands cover the full workflow:
//!
//! * `simulate` — run one mission and write its artifacts (event journal,
//!   trajectory, summary) to a directory.
//! * `campaign` — run a Monte Carlo batch over consecutive seeds and write
//!   per-trial rows plus aggregate statistics.
//! * `fit` — fit a path-loss model (and, when the data allow, a noise model)
//!   to a characterization CSV.
//! * `estimate` — offline multilateration from a datapoint CSV.
//!
//! All outputs are deterministic for a given configuration and seed: running
//! the same command twice produces byte-identical files.

use std::fs;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use lorafind::geo;
use lorafind::multilat::{estimate_position, read_datapoints_file, EstimateOptions};
use lorafind::run::{campaign, simulate, RunConfig};
use lorafind::signal::{fit_noise, fit_path_loss, read_characterization_file, FitForm};
use lorafind::{AntennaModel, PathLossModel};

/// Locate a LoRa transmitter with mobile and fixed gateways: simulate
/// missions, batch campaigns, fit radio models, and run offline estimates.
#[derive(Parser)]
#[command(name = "lorafind", version, propagate_version = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a single mission and write its artifacts to a directory.
    ///
    /// Writes `events.ndjson` (every message exchanged between drones and
    /// the coordinator), `trajectory.csv` (sampled drone tracks in the local
    /// frame), `trajectory.geojson` (only when the configuration sets a
    /// geodetic origin), and `summary.json` (the mission result).
    Simulate {
        #[command(flatten)]
        source: ConfigSource,
        /// Seed for the world's random number generator.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Directory for output artifacts (created if missing).
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Run a Monte Carlo campaign over consecutive seeds.
    ///
    /// Trial k uses seed `seed + k`. Writes `trials.csv` with one row per
    /// trial (`trial,seed,error_m,flight_time_s,n_datapoints`; failed trials
    /// keep their row with empty metric fields) and `stats.json` with
    /// aggregate statistics plus the configuration echo.
    Campaign {
        #[command(flatten)]
        source: ConfigSource,
        /// Seed of the first trial; trial k runs with seed + k.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Number of trials to run.
        #[arg(long, default_value_t = 100)]
        trials: usize,
        /// Directory for output artifacts (created if missing).
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Fit a path-loss model to characterization measurements.
    ///
    /// The CSV must have the header `distance_m,theta_deg,rssi_dbm,snr_db`.
    /// Prints the fitted model with its RMS distance residual as JSON; when
    /// the data contain repeated distance/angle groups, a noise model
    /// (ESP standard deviation) is fitted and reported too.
    Fit {
        /// Characterization CSV (`distance_m,theta_deg,rssi_dbm,snr_db`).
        csv: PathBuf,
        /// Functional form of the fitted distance-vs-ESP curve.
        #[arg(long, value_enum, default_value_t = FormArg::Exponential)]
        form: FormArg,
        /// Also write the JSON report to this file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Estimate a transmitter position from a datapoint CSV.
    ///
    /// The CSV must have the header
    /// `msg_id,source_id,east_m,north_m,up_m,esp_dbm,low_confidence`.
    /// Prints the position (local frame, plus geodetic when the
    /// configuration sets an origin), the RMS ESP residual, and whether the
    /// solver converged. Without `--preset`/`--config` the reference ESP
    /// characterization model and default estimator settings are used.
    Estimate {
        /// Datapoint CSV
        /// (`msg_id,source_id,east_m,north_m,up_m,esp_dbm,low_confidence`).
        csv: PathBuf,
        #[command(flatten)]
        source: ConfigSource,
    },
}

/// Where the run configuration comes from: a built-in preset or a JSON file.
#[derive(Args)]
struct ConfigSource {
    /// Built-in scenario preset (see error message for the list).
    #[arg(long, conflicts_with = "config")]
    preset: Option<String>,
    /// Path to a JSON run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
}

impl ConfigSource {
    /// Loads the configuration, or `None` when neither flag was given.
    fn load(&self) -> Result<Option<RunConfig>> {
        if let Some(name) = &self.preset {
            let cfg = RunConfig::preset(name).with_context(|| {
                format!(
                    "unknown preset {name:?}; available presets: {}",
                    RunConfig::preset_names().join(", ")
                )
            })?;
            return Ok(Some(cfg));
        }
        if let Some(path) = &self.config {
            let cfg = RunConfig::from_path(path)
                .with_context(|| format!("failed to load config {}", path.display()))?;
            return Ok(Some(cfg));
        }
        Ok(None)
    }

    /// Loads the configuration, requiring one of the two flags.
    fn require(&self) -> Result<RunConfig> {
        match self.load()? {
            Some(cfg) => Ok(cfg),
            None => bail!(
                "pass --preset <name> or --config <path>; available presets: {}",
                RunConfig::preset_names().join(", ")
            ),
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum FormArg {
    Exponential,
    Linear,
}

impl From<FormArg> for FitForm {
    fn from(f: FormArg) -> Self {
        match f {
            FormArg::Exponential => FitForm::Exponential,
            FormArg::Linear => FitForm::Linear,
        }
    }
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Simulate {
            source,
            seed,
            out_dir,
        } => {
            let cfg = source.require()?;
            let result = simulate(&cfg, seed, &out_dir)?;
            println!("{}", serde_json::to_string_pretty(&result)?);
            eprintln!("artifacts written to {}", out_dir.display());
        }
        Command::Campaign {
            source,
            seed,
            trials,
            out_dir,
        } => {
            let cfg = source.require()?;
            let stats = campaign(&cfg, seed, trials, &out_dir)?;
            println!("{}", serde_json::to_string_pretty(&stats)?);
            eprintln!("artifacts written to {}", out_dir.display());
        }
        Command::Fit { csv, form, out } => {
            let samples = read_characterization_file(csv.as_path())
                .with_context(|| format!("failed to read {}", csv.display()))?;
            let fit = fit_path_loss(&samples, form.into(), &AntennaModel::default())?;
            let mut report = serde_json::json!({
                "path_loss": fit.model,
                "rms_residual_m": fit.rms_residual_m,
                "n_samples": fit.n_samples,
            });
            // Noise needs repeated (distance, angle) groups; plenty of
            // characterization sets lack them, so its absence is not an error.
            if let Ok(noise) = fit_noise(&samples) {
                report["noise"] = serde_json::to_value(noise)?;
            }
            let text = serde_json::to_string_pretty(&report)?;
            if let Some(path) = &out {
                fs::write(path, text.as_bytes())
                    .with_context(|| format!("failed to write {}", path.display()))?;
            }
            println!("{text}");
        }
        Command::Estimate { csv, source } => {
            let points = read_datapoints_file(csv.as_path())
                .with_context(|| format!("failed to read {}", csv.display()))?;
            let (model, antenna, options, origin) = match source.load()? {
                Some(cfg) => {
                    let model = cfg.server_path_loss.unwrap_or(cfg.world.path_loss);
                    (model, cfg.world.antenna, cfg.estimator, cfg.world.origin)
                }
                None => (
                    PathLossModel::esp_characterization(),
                    AntennaModel::default(),
                    EstimateOptions::default(),
                    None,
                ),
            };
            let est = estimate_position(&points, &model, &antenna, &options)?;
            let mut report = serde_json::json!({
                "position": est.position,
                "rms_residual_db": est.rms_residual_db,
                "n_points": est.n_points,
                "iterations": est.iterations,
                "converged": est.converged,
            });
            if let Some(origin) = &origin {
                let g = geo::from_local(&est.position, origin)?;
                report["geodetic"] = serde_json::to_value(g)?;
            }
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
    }
    Ok(())
}
