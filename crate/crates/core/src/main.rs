use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};

use posdelay::config::{parse_config, preset, PRESETS};
use posdelay::report::{certify_config, execute, run_command, write_json};
use posdelay::Error;

#[derive(Parser)]
#[command(
    name = "posdelay",
    version,
    about = "Gated tracking control of positive cascades with state-dependent input delay"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Simulate a preset or scenario file and write trajectory, summary and certificate.
    Run {
        source: String,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Override a config value, e.g. `--set sim.dt=0.005`.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
    /// Evaluate the gain conditions and print the certificate as JSON.
    Certify {
        source: String,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
        /// Skip the simulation used to estimate the bound on u''.
        #[arg(long)]
        no_sim: bool,
        /// Write the certificate here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// List built-in presets, or print one as TOML.
    Presets { name: Option<String> },
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(e) if e.is_config() => 2,
        Some(Error::Io(_)) | None => 1,
        Some(_) => 3,
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.cmd {
        Cmd::Run { source, out, set } => {
            let cfg = parse_config(&source, &set)?;
            let (result, files) = run_command(&cfg, &out)?;
            if let Some(res) = result.summary.delay_resolution.filter(|r| !r.resolved) {
                eprintln!(
                    "warning: dt = {} exceeds tau_min/5 = {:.3e}; the shortest delay is under-resolved",
                    cfg.sim.dt, res.dt_limit
                );
            }
            let m = &result.summary.metrics;
            println!(
                "{}: ise={:.6e} ultimate_band={:.6e} switches={} clamps={}",
                cfg.name,
                m.ise,
                m.ultimate_band,
                result.summary.counters.switches,
                result.summary.counters.clamp_steps
            );
            for p in [&files.trajectory, &files.summary, &files.certificate] {
                println!("wrote {}", p.display());
            }
        }
        Cmd::Certify {
            source,
            set,
            no_sim,
            out,
        } => {
            let cfg = parse_config(&source, &set)?;
            let report = if no_sim {
                certify_config(&cfg, None)?
            } else {
                execute(&cfg)?.certificate
            };
            match out {
                Some(path) => write_json(&report, &path)?,
                None => println!("{}", serde_json::to_string_pretty(&report)?),
            }
            for c in report.certificate.conditions.violated() {
                eprintln!(
                    "violated: {} (required {:.6e}, actual {:.6e})",
                    c.condition, c.required, c.actual
                );
            }
        }
        Cmd::Presets { name: None } => {
            for p in PRESETS {
                println!("{p}");
            }
        }
        Cmd::Presets { name: Some(name) } => {
            print!(
                "{}",
                preset(&name)?.to_toml().context("serializing preset")?
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
