use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use mfg_core::config::{parse_scalar, ExperimentConfig, Mode};
use mfg_core::experiment::{self, error_record};
use mfg_core::{MfgError, Result};

#[derive(Parser)]
#[command(
    name = "mfg",
    version,
    about = "Mean-field-game control of scalar transport on periodic domains"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML or JSON config; the 1D baseline when absent.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (overrides output.dir).
    #[arg(long)]
    out: Option<PathBuf>,
    /// `section.key=value`, repeatable.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Particle seed (overrides sde.seed).
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Residual of the steady profile and its uncontrolled evolution.
    SteadyCheck(Common),
    /// Tracer control in a prescribed flow.
    Mfg1(Common),
    /// Flow control by the interpolated fixed-point iteration.
    Mfg2(Common),
    /// Tracer control with a particle forward pass, compared with the PDE.
    Mfg1Sde(Common),
    /// Flow control with particle players, compared with the PDE.
    Mfg2Sde(Common),
    /// Draw particles from the tracer initial density.
    Sample(Common),
    /// Repeat a run over values of one config field.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Field to vary, e.g. solver.start_time.
        #[arg(long)]
        axis: String,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', num_args = 0..)]
        values: Vec<String>,
    },
}

fn load(common: &Common, mode: Option<Mode>) -> Result<ExperimentConfig> {
    let mut overrides = Vec::new();
    for o in &common.overrides {
        let (k, v) = o
            .split_once('=')
            .ok_or_else(|| MfgError::config(format!("override `{o}` must look like section.key=value")))?;
        overrides.push((k.trim().to_string(), parse_scalar(v)));
    }
    if let Some(m) = mode {
        overrides.push(("solver.mode".into(), Value::String(m.name().into())));
    }
    if let Some(s) = common.seed {
        overrides.push(("sde.seed".into(), json!(s)));
    }
    if let Some(d) = &common.out {
        overrides.push(("output.dir".into(), Value::String(d.to_string_lossy().into_owned())));
    }
    match &common.config {
        Some(p) => ExperimentConfig::load(p, &overrides),
        None => ExperimentConfig::from_tree(json!({}), &overrides),
    }
}

fn execute(cmd: &Command) -> Result<Value> {
    let (common, mode) = match cmd {
        Command::SteadyCheck(c) => (c, Mode::SteadyCheck),
        Command::Mfg1(c) => (c, Mode::Mfg1),
        Command::Mfg2(c) => (c, Mode::Mfg2),
        Command::Mfg1Sde(c) => (c, Mode::Mfg1Sde),
        Command::Mfg2Sde(c) => (c, Mode::Mfg2Sde),
        Command::Sample(c) => (c, Mode::Sample),
        Command::Sweep { common, axis, values } => {
            // the sweep keeps the config's own mode
            let cfg = load(common, None)?;
            let rows = experiment::sweep(&cfg, axis, values)?;
            return Ok(json!({
                "dir": cfg.output.dir,
                "mode": "sweep",
                "runs": rows.len(),
            }));
        }
    };
    let cfg = load(common, Some(mode))?;
    let o = experiment::run(&cfg)?;
    Ok(json!({
        "dir": o.dir,
        "mode": mode.name(),
        "wall_time_s": o.wall_time,
    }))
}

fn out_dir(cmd: &Command) -> Option<&PathBuf> {
    match cmd {
        Command::SteadyCheck(c)
        | Command::Mfg1(c)
        | Command::Mfg2(c)
        | Command::Mfg1Sde(c)
        | Command::Mfg2Sde(c)
        | Command::Sample(c) => c.out.as_ref(),
        Command::Sweep { common, .. } => common.out.as_ref(),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(&cli.command) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            let rec = error_record(&e);
            eprintln!("{rec}");
            // config errors happen before the run directory exists
            if let Some(dir) = out_dir(&cli.command) {
                if std::fs::create_dir_all(dir).is_ok() {
                    let _ = std::fs::write(dir.join("error.json"), rec.to_string());
                }
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
