//! Sweep harness: vary one system parameter over a grid, evaluate a set of
//! policies at every grid point with common random numbers, and emit a flat
//! CSV table (one row per grid point and policy).

use std::fmt;
use std::io::Write;
use std::path::PathBuf;

use serde::Deserialize;
use thiserror::Error;

use crate::heuristic::HeuristicPolicy;
use crate::mdp::{train_mdp, MdpError, MdpParams};
use crate::model::{ConfigError, EnergyArrivalLaw, SystemConfig};
use crate::offline::{round_solution, solve_offline, OfflineError, OfflineInstance};
use crate::sim::{evaluate, run_episode, EpisodeTrace, IdlePolicy, Policy};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("config error: {0}")]
    Config(#[from] ConfigError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("spec error: {0}")]
    Spec(String),
    #[error("unknown policy `{0}`")]
    UnknownPolicy(String),
    #[error("offline solve failed: {0}")]
    Offline(#[from] OfflineError),
    #[error("mdp training failed: {0}")]
    Mdp(#[from] MdpError),
}

/// The swept system parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepVariable {
    /// Average fronthaul budget D, units per slot.
    FronthaulBudget,
    /// Poisson energy arrival rate E_avg, units per slot.
    EnergyRate,
    /// Battery capacity B_max, energy units.
    BatteryCapacity,
}

impl fmt::Display for SweepVariable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            SweepVariable::FronthaulBudget => "fronthaul_budget",
            SweepVariable::EnergyRate => "energy_rate",
            SweepVariable::BatteryCapacity => "battery_capacity",
        };
        f.write_str(s)
    }
}

/// A declarative sweep: base config, grid, policy set, evaluation size.
#[derive(Debug, Clone, Deserialize)]
pub struct ExperimentSpec {
    pub config: PathBuf,
    pub variable: SweepVariable,
    pub grid: Vec<f64>,
    /// Policy names: `offline-upper`, `offline-rounded`, `mdp`, `heuristic`,
    /// `fixed-<k>` (1-based catalog index), `idle`.
    pub policies: Vec<String>,
    pub episodes: usize,
    pub horizon: usize,
    pub seed: u64,
    /// Optional overrides for MDP training.
    #[serde(default)]
    pub battery_levels: Option<usize>,
}

impl ExperimentSpec {
    pub fn load(path: &std::path::Path) -> Result<ExperimentSpec, ExperimentError> {
        let text = std::fs::read_to_string(path)?;
        let spec: ExperimentSpec =
            toml::from_str(&text).map_err(|e| ExperimentError::Spec(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        if self.grid.is_empty() {
            return Err(ExperimentError::Spec("sweep grid is empty".into()));
        }
        if self.policies.is_empty() {
            return Err(ExperimentError::Spec("policy set is empty".into()));
        }
        if self.episodes == 0 || self.horizon == 0 {
            return Err(ExperimentError::Spec(
                "episodes and horizon must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// One output row; `error` is non-empty when the point failed.
#[derive(Debug, Clone)]
pub struct ResultRow {
    pub variable: SweepVariable,
    pub value: f64,
    pub policy: String,
    /// Nats per slot.
    pub mean_throughput: f64,
    pub stderr_throughput: f64,
    /// Data-units per slot.
    pub mean_fronthaul: f64,
    /// Energy units per slot lost to overflow / clipping.
    pub energy_waste: f64,
    pub error: String,
}

pub const CSV_HEADER: &str =
    "variable,value,policy,mean_throughput,stderr_throughput,mean_fronthaul,energy_waste,error";

pub fn write_csv(rows: &[ResultRow], out: &mut dyn Write) -> std::io::Result<()> {
    writeln!(out, "{CSV_HEADER}")?;
    for r in rows {
        writeln!(
            out,
            "{},{:.6},{},{:.9},{:.9},{:.6},{:.6},{}",
            r.variable,
            r.value,
            r.policy,
            r.mean_throughput,
            r.stderr_throughput,
            r.mean_fronthaul,
            r.energy_waste,
            r.error
        )?;
    }
    Ok(())
}

/// Apply one grid value to a copy of the base config.
pub fn apply_sweep(
    base: &SystemConfig,
    variable: SweepVariable,
    value: f64,
) -> Result<SystemConfig, ExperimentError> {
    let mut cfg = base.clone();
    match variable {
        SweepVariable::FronthaulBudget => cfg.fronthaul_budget = value,
        SweepVariable::EnergyRate => {
            cfg.energy = EnergyArrivalLaw::poisson(
                value,
                cfg.slots_per_epoch() as f64,
                cfg.battery_capacity,
            );
        }
        SweepVariable::BatteryCapacity => {
            cfg.battery_capacity = value;
            if let EnergyArrivalLaw::Poisson { average_rate, .. } = cfg.energy {
                cfg.energy = EnergyArrivalLaw::poisson(
                    average_rate,
                    cfg.slots_per_epoch() as f64,
                    value,
                );
            }
        }
    }
    crate::model::validate_config(cfg).map_err(ExperimentError::Config)
}

fn fixed_mode_index(name: &str) -> Option<usize> {
    name.strip_prefix("fixed-")
        .and_then(|k| k.parse::<usize>().ok())
        .filter(|&k| k >= 1)
        .map(|k| k - 1)
}

/// Build an online policy by name. Offline and fixed-mode names are handled
/// separately because they are trace-based rather than causal.
pub fn build_online_policy(
    name: &str,
    cfg: &SystemConfig,
    mdp_params: &MdpParams,
) -> Result<Box<dyn Policy>, ExperimentError> {
    match name {
        "heuristic" => Ok(Box::new(HeuristicPolicy::from_config(cfg))),
        "idle" => Ok(Box::new(IdlePolicy)),
        "mdp" => {
            let trained = train_mdp(cfg, cfg.fronthaul_budget, mdp_params)?;
            Ok(Box::new(trained.policy()))
        }
        other => Err(ExperimentError::UnknownPolicy(other.into())),
    }
}

/// Widen an `IntegerSolution` computed on a single-mode catalog back to the
/// full catalog width, placing the mode at index `k`.
fn pad_single_mode(
    int: crate::offline::IntegerSolution,
    k: usize,
    width: usize,
) -> crate::offline::IntegerSolution {
    let mut out = int;
    for row in &mut out.alloc {
        for a in row.iter_mut() {
            let mut durations = vec![0.0; width];
            let mut powers = vec![0.0; width];
            durations[k] = a.durations[0];
            powers[k] = a.powers[0];
            a.durations = durations;
            a.powers = powers;
        }
    }
    out
}

/// Mean per-slot offline throughput over `episodes` sampled instances.
/// `rounded` selects the integer solution instead of the continuous upper
/// bound; `fixed` restricts the catalog to a single mode.
fn offline_point(
    cfg: &SystemConfig,
    rounded: bool,
    fixed: Option<usize>,
    episodes: usize,
    seed: u64,
) -> Result<(f64, f64, f64, f64), ExperimentError> {
    let mut cfg = cfg.clone();
    if let Some(k) = fixed {
        if k >= cfg.catalog.len() {
            return Err(ExperimentError::UnknownPolicy(format!("fixed-{}", k + 1)));
        }
        cfg.catalog = cfg.catalog.single(k);
    }
    let slots = (cfg.epochs * cfg.slots_per_epoch()) as f64;
    let mut thr = Vec::with_capacity(episodes);
    let mut fh = Vec::with_capacity(episodes);
    let mut waste = 0.0;
    for ep in 0..episodes {
        let inst = OfflineInstance::sample(&cfg, seed, ep as u64);
        let sol = solve_offline(&inst)?;
        if rounded {
            let mut int = round_solution(&sol, &inst);
            let mut upper_waste = sol.dumped_energy;
            if fixed.is_none() {
                // each single-mode restriction is also a feasible integer
                // solution of the flexible instance; integerization loss can
                // make one of them beat the rounded mix, so keep the best
                for k in 0..cfg.catalog.len() {
                    let mut sub = cfg.clone();
                    sub.catalog = cfg.catalog.single(k);
                    let sub_inst =
                        OfflineInstance::new(sub, inst.energy.clone(), inst.gains.clone())?;
                    let sub_sol = solve_offline(&sub_inst)?;
                    let cand = round_solution(&sub_sol, &sub_inst);
                    if cand.throughput > int.throughput {
                        int = pad_single_mode(cand, k, cfg.catalog.len());
                        upper_waste = sub_sol.dumped_energy;
                    }
                }
            }
            thr.push(int.throughput / slots);
            let used: f64 = int
                .alloc
                .iter()
                .flatten()
                .map(|a| a.fronthaul(&cfg.catalog))
                .sum();
            fh.push(used / slots);
            waste += (upper_waste + int.clip_waste + int.rounding_slack) / slots;
        } else {
            thr.push(sol.throughput / slots);
            fh.push(sol.total_fronthaul(&inst) / slots);
            waste += sol.dumped_energy / slots;
        }
    }
    let (mt, st) = crate::sim::mean_stderr(&thr);
    let (mf, _) = crate::sim::mean_stderr(&fh);
    Ok((mt, st, mf, waste / episodes as f64))
}

/// Run the full sweep. Per-point failures are recorded in the row's error
/// column and the sweep continues. Deterministic given the spec.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<Vec<ResultRow>, ExperimentError> {
    spec.validate()?;
    let base = SystemConfig::load(&spec.config)?;
    let mut mdp_params = MdpParams::default();
    if let Some(levels) = spec.battery_levels {
        mdp_params.battery_levels = levels;
    }
    let mut rows = Vec::new();
    for &value in &spec.grid {
        let cfg = match apply_sweep(&base, spec.variable, value) {
            Ok(c) => c,
            Err(e) => {
                for policy in &spec.policies {
                    rows.push(failed_row(spec.variable, value, policy, &e));
                }
                continue;
            }
        };
        for policy in &spec.policies {
            rows.push(point_row(&cfg, spec, value, policy, &mdp_params));
        }
    }
    Ok(rows)
}

fn failed_row(
    variable: SweepVariable,
    value: f64,
    policy: &str,
    err: &ExperimentError,
) -> ResultRow {
    ResultRow {
        variable,
        value,
        policy: policy.to_string(),
        mean_throughput: f64::NAN,
        stderr_throughput: f64::NAN,
        mean_fronthaul: f64::NAN,
        energy_waste: f64::NAN,
        error: err.to_string().replace(',', ";"),
    }
}

fn point_row(
    cfg: &SystemConfig,
    spec: &ExperimentSpec,
    value: f64,
    policy: &str,
    mdp_params: &MdpParams,
) -> ResultRow {
    let outcome: Result<(f64, f64, f64, f64), ExperimentError> = match policy {
        "offline-upper" => offline_point(cfg, false, None, spec.episodes, spec.seed),
        "offline-rounded" => offline_point(cfg, true, None, spec.episodes, spec.seed),
        name if fixed_mode_index(name).is_some() => offline_point(
            cfg,
            true,
            fixed_mode_index(name),
            spec.episodes,
            spec.seed,
        ),
        name => build_online_policy(name, cfg, mdp_params).map(|p| {
            let mut pols = [p];
            let stats = evaluate(cfg, &mut pols, spec.episodes, spec.horizon, spec.seed);
            let s = &stats[0];
            (
                s.mean_throughput,
                s.stderr_throughput,
                s.mean_fronthaul,
                s.mean_overflow / spec.horizon as f64,
            )
        }),
    };
    match outcome {
        Ok((mt, st, mf, waste)) => ResultRow {
            variable: spec.variable,
            value,
            policy: policy.to_string(),
            mean_throughput: mt,
            stderr_throughput: st,
            mean_fronthaul: mf,
            energy_waste: waste,
            error: String::new(),
        },
        Err(e) => failed_row(spec.variable, value, policy, &e),
    }
}

/// Single-episode trace export: one CSV row per slot.
pub fn trace_to_csv(trace: &EpisodeTrace, out: &mut dyn Write) -> std::io::Result<()> {
    writeln!(
        out,
        "slot,epoch,block_in_epoch,slot_in_block,channel,arrival,transmit,power,mode,rate,fronthaul,battery_after"
    )?;
    for r in &trace.records {
        writeln!(
            out,
            "{},{},{},{},{},{:.6},{},{:.9},{},{:.9},{:.6},{:.6}",
            r.slot,
            r.epoch,
            r.block_in_epoch,
            r.slot_in_block,
            r.channel,
            r.arrival,
            r.transmit as u8,
            r.power,
            r.mode_id,
            r.rate,
            r.fronthaul,
            r.battery_after
        )?;
    }
    Ok(())
}

/// Run one episode of a named online policy and export the trace.
pub fn run_policy_trace(
    cfg: &SystemConfig,
    policy_name: &str,
    horizon: usize,
    seed: u64,
) -> Result<EpisodeTrace, ExperimentError> {
    let mut policy = build_online_policy(policy_name, cfg, &MdpParams::default())?;
    Ok(run_episode(cfg, policy.as_mut(), horizon, seed, 0))
}
