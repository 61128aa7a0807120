//! Command-line front end: run scenarios, report results, validate configs
//! and calibrate the split-step size.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};

use ccmcf::config::{self, Scenario, TagSelect};
use ccmcf::ensemble::run_ensemble;
use ccmcf::error::Error;
use ccmcf::report::{load_manifest, persist_run, render_report};
use ccmcf::ssfm::{StepController, StepMode};

#[derive(Parser)]
#[command(
    name = "ccmcf",
    version,
    about = "Coupled-core multi-core fiber SNR simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario (TOML file, `preset:NAME`, or a manifest.json to re-run).
    Run {
        scenario: String,
        /// Override the scenario's master seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Worker threads (default: available cores).
        #[arg(long)]
        workers: Option<usize>,
        /// Output directory.
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Summarize a completed run from its manifest.
    Report { manifest: PathBuf },
    /// Validate a scenario file or preset without running it.
    Validate { scenario: String },
    /// Halve the split-step until ten seeds of the detected SNR over the
    /// first span saturate within 0.05 dB.
    CalibrateStep {
        scenario: String,
        #[arg(long, default_value_t = 10)]
        seeds: usize,
        /// Starting step in km (default: the scenario's initial step).
        #[arg(long)]
        start_km: Option<f64>,
    },
    /// List built-in presets.
    Presets,
}

fn load(spec: &str) -> Result<Scenario, Error> {
    if spec.ends_with(".json") {
        let manifest = load_manifest(spec.as_ref())?;
        Ok(manifest.scenario)
    } else {
        config::load_scenario(spec)
    }
}

fn default_workers() -> usize {
    std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1)
}

fn cmd_run(
    spec: &str,
    seed: Option<u64>,
    workers: Option<usize>,
    out: &Path,
) -> Result<(), Error> {
    let mut scenario = load(spec)?;
    if let Some(s) = seed {
        scenario.master_seed = s;
    }
    scenario.validate()?;
    let workers = workers.unwrap_or_else(default_workers);
    eprintln!(
        "running '{}': {} realizations on {} workers (seed {})",
        scenario.name, scenario.num_realizations, workers, scenario.master_seed
    );
    let t0 = Instant::now();
    let summary = run_ensemble(&scenario, workers)?;
    let wall = t0.elapsed().as_secs_f64();
    let manifest = persist_run(&summary, out, workers, wall)?;
    eprintln!(
        "done in {wall:.1} s ({} failed); outputs in {}",
        manifest.num_realizations_failed,
        out.display()
    );
    print!("{}", render_report(&out.join("manifest.json"))?);
    Ok(())
}

fn cmd_calibrate(spec: &str, seeds: usize, start_km: Option<f64>) -> Result<(), Error> {
    let base = load(spec)?;
    base.validate()?;
    let link = base
        .link
        .as_ref()
        .ok_or_else(|| Error::Config("calibrate-step needs a link-snr scenario".into()))?;

    // One span, fixed stepping, ten seeds; halve until saturation.
    let mut scenario = base.clone();
    scenario.num_realizations = seeds;
    scenario.record_all_cores = false;
    scenario.sweep = config::Sweep::None;
    if matches!(scenario.tags, TagSelect::All) {
        scenario.tags = TagSelect::Both;
    }
    scenario.link.as_mut().unwrap().num_spans = 1;

    let mut h_km = start_km
        .unwrap_or(link.sim.controller.initial_step_km)
        .min(link.fiber.span_length_km);
    let mut prev: Option<Vec<f64>> = None;
    println!("step_km\tmax_delta_db\tsnr_db_per_seed");
    for _ in 0..14 {
        let slink = scenario.link.as_mut().unwrap();
        slink.sim.controller = StepController {
            initial_step_km: h_km,
            local_error_target: link.sim.controller.local_error_target,
            min_step_km: link.sim.controller.min_step_km.min(h_km),
            mode: StepMode::Fixed,
        };
        let summary = run_ensemble(&scenario, default_workers())?;
        let mut snrs: Vec<(u64, f64)> = summary
            .records
            .iter()
            .map(|r| (r.realization_id, r.snr_db()))
            .collect();
        snrs.sort_by_key(|(r, _)| *r);
        let snrs: Vec<f64> = snrs.into_iter().map(|(_, s)| s).collect();
        let delta = prev
            .as_ref()
            .map(|p| {
                p.iter()
                    .zip(&snrs)
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0f64, f64::max)
            })
            .unwrap_or(f64::INFINITY);
        let list = snrs
            .iter()
            .map(|s| format!("{s:.3}"))
            .collect::<Vec<_>>()
            .join(",");
        if delta.is_finite() {
            println!("{h_km:.6}\t{delta:.4}\t{list}");
        } else {
            println!("{h_km:.6}\t-\t{list}");
        }
        if delta < 0.05 {
            println!("saturated: initial_step_km = {h_km:.6}");
            return Ok(());
        }
        prev = Some(snrs);
        h_km /= 2.0;
    }
    Err(Error::NonConvergence {
        step_km: h_km,
        min_km: 0.0,
        err: f64::NAN,
    })
}

fn dispatch(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Run {
            scenario,
            seed,
            workers,
            out,
        } => cmd_run(&scenario, seed, workers, &out),
        Command::Report { manifest } => {
            print!("{}", render_report(&manifest)?);
            Ok(())
        }
        Command::Validate { scenario } => {
            let s = load(&scenario)?;
            s.validate()?;
            println!("ok: '{}' is valid", s.name);
            Ok(())
        }
        Command::CalibrateStep {
            scenario,
            seeds,
            start_km,
        } => cmd_calibrate(&scenario, seeds, start_km),
        Command::Presets => {
            for name in config::preset_names() {
                println!("{name}");
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Validation(_)
                | Error::Config(_)
                | Error::Parse(_)
                | Error::InvalidDimension(_) => ExitCode::from(2),
                _ => ExitCode::from(3),
            }
        }
    }
}
