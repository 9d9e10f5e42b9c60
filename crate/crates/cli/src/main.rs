//! `pulsesep`: simulate measurements, run separation experiments, sweep S/N
//! and process recorded range-profile tensors.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;
use pulsesep::experiment::{
    embed_in_range_profile, process_recording, run_experiment, sweep_snr, write_atomic, ExperimentConfig, Method, RunReport, Seeds,
};
use pulsesep::ingest::write_series_csv;
use pulsesep::scenario::simulate;
use pulsesep::{Error, Result};

/// Environment variable holding the default output directory.
const OUT_ENV: &str = "PULSESEP_OUT";

#[derive(Parser)]
#[command(name = "pulsesep", version, about = "Separate radar echoes of multiple body parts and estimate pulse transit time")]
struct Cli {
    /// More log output (repeatable).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment TOML; the built-in reference scenario is used without it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seed count N (seeds 1..=N) or a comma-separated list.
    #[arg(long)]
    seeds: Option<String>,
    /// Output directory.
    #[arg(long, env = OUT_ENV)]
    out: Option<PathBuf>,
    /// Methods to run: mvdr, jade, proposed.
    #[arg(long = "method", num_args = 1..)]
    methods: Vec<String>,
    /// Range gate R1:R2 in meters.
    #[arg(long)]
    gate: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one measurement and write the array signal and ground truth.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Noise seed.
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Also write the signal as a range-profile tensor for `process`.
        #[arg(long)]
        tensor: Option<PathBuf>,
    },
    /// Run the configured methods over the seeds and write a report.
    Run {
        #[command(flatten)]
        common: Common,
    },
    /// Repeat the experiment over S/N values with outlier exclusion.
    SweepSnr {
        #[command(flatten)]
        common: Common,
        /// S/N values in dB.
        #[arg(long, value_delimiter = ',', default_values_t = vec![25.0, 30.0, 35.0, 40.0, 45.0, 50.0])]
        snr: Vec<f64>,
        /// Runs with a displacement error above this (micrometers) are excluded.
        #[arg(long)]
        exclude_threshold: Option<f64>,
    },
    /// Process a recorded range-profile tensor.
    Process {
        #[command(flatten)]
        common: Common,
        /// Tensor file (binary, or CSV with a .csv extension).
        #[arg(long)]
        input: Option<PathBuf>,
        /// Distance between the body parts in meters, for PWV.
        #[arg(long)]
        distance: Option<f64>,
    },
}

fn load_config(common: &Common) -> Result<ExperimentConfig> {
    let mut config = match &common.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = &common.seeds {
        config.seeds = Seeds::parse(s)?;
    }
    if let Some(out) = &common.out {
        config.output_dir = Some(out.clone());
    }
    if !common.methods.is_empty() {
        config.methods = common.methods.iter().map(|m| Method::parse(m)).collect::<Result<_>>()?;
    }
    if let Some(g) = &common.gate {
        config.gate = Some(g.clone());
    }
    Ok(config)
}

fn print_summary(report: &RunReport) {
    for s in &report.summary {
        let errors: Vec<String> = s
            .error
            .iter()
            .map(|e| e.map(|m| format!("{:.2} ± {:.2} um", m.mean * 1e6, m.sd * 1e6)).unwrap_or_else(|| "-".into()))
            .collect();
        let ptt = s.ptt.map(|m| format!("{:.1} ms", m.mean * 1e3)).unwrap_or_else(|| "-".into());
        let pwv = s.pwv.map(|m| format!(", PWV {:.2} m/s", m.mean)).unwrap_or_default();
        println!(
            "{:>9}: {} runs, {} failed; errors [{}]; PTT {ptt}{pwv}",
            s.method.name(),
            s.runs,
            s.failures,
            errors.join(", ")
        );
    }
}

fn simulate_command(common: &Common, seed: u64, tensor: Option<&Path>) -> Result<()> {
    let config = load_config(common)?;
    config.scenario.validate()?;
    let out = config.output_dir.clone().ok_or_else(|| Error::Configuration(format!("--out or {OUT_ENV} is required")))?;
    let sim = simulate(&config.scenario, seed)?;
    let mut received = Vec::new();
    write_series_csv(&sim.received, &mut received)?;
    write_atomic(&out.join("received.csv"), &received)?;

    let mut truth = String::from("time");
    for j in 0..sim.displacements.len() {
        truth.push_str(&format!(",d{}_m", j + 1));
    }
    truth.push('\n');
    for t in 0..sim.received.len() {
        truth.push_str(&sim.received.time(t).to_string());
        for d in &sim.displacements {
            truth.push_str(&format!(",{}", d[t]));
        }
        truth.push('\n');
    }
    write_atomic(&out.join("displacements.csv"), truth.as_bytes())?;
    let angles: Vec<f64> = (0..config.scenario.targets.len()).map(|j| config.scenario.target_angle(j).to_degrees()).collect();
    let meta = serde_json::json!({
        "seed": seed,
        "wavenumber": sim.wavenumber,
        "target_angles_deg": angles,
        "scenario": config.scenario,
    });
    write_atomic(&out.join("simulation.json"), meta.to_string().as_bytes())?;

    if let Some(path) = tensor {
        let range = config.scenario.standoff;
        let step = 0.05;
        let bins = 16;
        let bin = 8;
        let data = embed_in_range_profile(&sim.received, bins, bin, range - bin as f64 * step, step)?;
        data.save(path)?;
        println!("tensor written to {}; gate {:.3}:{:.3} selects the echo bin", path.display(), range - step / 2.0, range + step / 2.0);
    }
    println!("simulated {} samples x {} channels into {}", sim.received.len(), sim.received.channels(), out.display());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate { common, seed, tensor } => simulate_command(&common, seed, tensor.as_deref()),
        Command::Run { common } => {
            let config = load_config(&common)?;
            let report = run_experiment(&config)?;
            print_summary(&report);
            Ok(())
        }
        Command::SweepSnr { common, snr, exclude_threshold } => {
            let mut config = load_config(&common)?;
            if common.methods.is_empty() {
                config.methods = vec![Method::Jade, Method::Proposed];
            }
            if let Some(um) = exclude_threshold {
                config.exclude_threshold = um * 1e-6;
            }
            let table = sweep_snr(&config, &snr)?;
            print!("{}", table.to_csv());
            Ok(())
        }
        Command::Process { common, input, distance } => {
            let mut config = load_config(&common)?;
            if let Some(i) = input {
                config.input = Some(i);
            }
            if config.input.is_none() {
                return Err(Error::Configuration("--input or an `input` entry in the config is required".into()));
            }
            if let Some(d) = distance {
                config.distance = Some(d);
            }
            let report = process_recording(&config)?;
            print_summary(&report);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    info!("pulsesep {}", env!("CARGO_PKG_VERSION"));
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error [{}]: {e}", e.category());
            ExitCode::from(e.exit_code())
        }
    }
}
