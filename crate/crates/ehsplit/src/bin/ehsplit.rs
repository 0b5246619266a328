//! Thin command-line front end: config validation, offline solves, MDP
//! training, single-policy runs, and parameter sweeps. All outputs are CSV;
//! every file-producing verb also writes a `<out>.manifest` with the seed,
//! crate version, and wall time.

use std::fs::File;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};

use ehsplit::experiment::{run_experiment, trace_to_csv, write_csv, ExperimentSpec};
use ehsplit::mdp::MdpParams;
use ehsplit::model::SystemConfig;
use ehsplit::offline::{round_solution, solve_offline, OfflineInstance};
use ehsplit::{train_mdp, validate_config};

#[derive(Parser)]
#[command(name = "ehsplit", version, about = "Energy-harvesting functional-split scheduling")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse and validate a system configuration.
    Validate { cfg: PathBuf },
    /// Sample a trace, solve the offline program, round it, and report both.
    SolveOffline {
        cfg: PathBuf,
        /// Write the rounded per-block allocation as CSV.
        #[arg(long)]
        trace: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Calibrate the MDP policy to a fronthaul budget and save the policy table.
    TrainMdp {
        cfg: PathBuf,
        /// Fronthaul budget D, data-units per slot (defaults to the config's).
        #[arg(short = 'D', long)]
        budget: Option<f64>,
        #[arg(long, default_value = "policy.csv")]
        out: PathBuf,
        /// Battery quantization levels.
        #[arg(long)]
        levels: Option<usize>,
    },
    /// Run one episode of a named policy and export the slot trace.
    Run {
        cfg: PathBuf,
        /// `heuristic`, `mdp`, or `idle`.
        #[arg(long)]
        policy: String,
        #[arg(long, default_value_t = 10_000)]
        horizon: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "trace.csv")]
        out: PathBuf,
    },
    /// Run a sweep described by a TOML spec and write the result table.
    Sweep {
        spec: PathBuf,
        #[arg(long, default_value = "results.csv")]
        out: PathBuf,
    },
}

fn write_manifest(out: &PathBuf, seed: u64, started: Instant) -> std::io::Result<()> {
    let path = out.with_extension(format!(
        "{}manifest",
        out.extension()
            .map(|e| format!("{}.", e.to_string_lossy()))
            .unwrap_or_default()
    ));
    let mut f = File::create(path)?;
    writeln!(f, "seed,version,wall_ms")?;
    writeln!(
        f,
        "{seed},{},{}",
        env!("CARGO_PKG_VERSION"),
        started.elapsed().as_millis()
    )
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run() -> Result<(), Box<dyn std::error::Error>> {
    let cli = Cli::parse();
    let started = Instant::now();
    match cli.command {
        Command::Validate { cfg } => {
            let cfg = SystemConfig::load(&cfg)?;
            let cfg = validate_config(cfg)?;
            println!(
                "ok: {} modes, {} channel states, L={} N={} M={}, B_max={} D={}",
                cfg.catalog.len(),
                cfg.channel.gains.len(),
                cfg.slots_per_block,
                cfg.blocks_per_epoch,
                cfg.epochs,
                cfg.battery_capacity,
                cfg.fronthaul_budget,
            );
        }
        Command::SolveOffline { cfg, trace, seed } => {
            let cfg = validate_config(SystemConfig::load(&cfg)?)?;
            let inst = OfflineInstance::sample(&cfg, seed, 0);
            let sol = solve_offline(&inst)?;
            let int = round_solution(&sol, &inst);
            let slots = (cfg.epochs * cfg.slots_per_epoch()) as f64;
            println!(
                "upper: {:.6} nats/slot (converged={}, max residual {:.2e})",
                sol.throughput / slots,
                sol.converged,
                sol.residuals.max()
            );
            println!(
                "rounded: {:.6} nats/slot (clip waste {:.3}, slack {:.3})",
                int.throughput / slots,
                int.clip_waste,
                int.rounding_slack
            );
            if let Some(path) = trace {
                let mut f = File::create(&path)?;
                writeln!(f, "epoch,block,mode,slots,power,fronthaul,energy")?;
                for (m, row) in int.alloc.iter().enumerate() {
                    for (n, a) in row.iter().enumerate() {
                        for (x, mode) in cfg.catalog.modes().iter().enumerate() {
                            if a.durations[x] > 0.0 {
                                writeln!(
                                    f,
                                    "{m},{n},{},{},{:.9},{:.3},{:.6}",
                                    mode.id,
                                    a.durations[x],
                                    a.powers[x],
                                    a.durations[x] * mode.fronthaul_rate,
                                    a.durations[x] * (a.powers[x] + mode.processing_power),
                                )?;
                            }
                        }
                    }
                }
                write_manifest(&path, seed, started)?;
                println!("allocation written to {}", path.display());
            }
        }
        Command::TrainMdp {
            cfg,
            budget,
            out,
            levels,
        } => {
            let cfg = validate_config(SystemConfig::load(&cfg)?)?;
            let budget = budget.unwrap_or(cfg.fronthaul_budget);
            let mut params = MdpParams::default();
            if let Some(l) = levels {
                params.battery_levels = l;
            }
            let trained = train_mdp(&cfg, budget, &params)?;
            println!(
                "eta={:.6e} lambda={:.6} predicted throughput {:.6} nats/slot, fronthaul {:.1}/{:.1} units/slot ({} sweeps)",
                trained.eta,
                trained.lambda,
                trained.predicted_throughput,
                trained.predicted_fronthaul,
                budget,
                trained.rvi_sweeps,
            );
            trained.save_policy(&out)?;
            write_manifest(&out, 0, started)?;
            println!("policy written to {}", out.display());
        }
        Command::Run {
            cfg,
            policy,
            horizon,
            seed,
            out,
        } => {
            let cfg = validate_config(SystemConfig::load(&cfg)?)?;
            let trace = ehsplit::experiment::run_policy_trace(&cfg, &policy, horizon, seed)?;
            println!(
                "{policy}: {:.6} nats/slot, fronthaul {:.1} units/slot, final battery {:.1}",
                trace.summary.mean_throughput,
                trace.summary.mean_fronthaul,
                trace.summary.final_battery,
            );
            let mut f = File::create(&out)?;
            trace_to_csv(&trace, &mut f)?;
            write_manifest(&out, seed, started)?;
            println!("trace written to {}", out.display());
        }
        Command::Sweep { spec, out } => {
            let spec = ExperimentSpec::load(&spec)?;
            let rows = run_experiment(&spec)?;
            let mut f = File::create(&out)?;
            write_csv(&rows, &mut f)?;
            write_manifest(&out, spec.seed, started)?;
            println!("{} rows written to {}", rows.len(), out.display());
        }
    }
    Ok(())
}
