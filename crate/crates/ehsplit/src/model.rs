//! Domain types, unit conventions, and configuration shared by every solver
//! and the simulator.
//!
//! Unit conventions: all internal computations use a normalized slot length
//! of 1, so power-units and energy-units coincide per slot. Fronthaul rates
//! are stored as data-units per slot; the configuration layer converts from
//! Mbit/s using `slot_seconds`. Rates are in nats (natural logarithm);
//! divide by ln 2 for bits.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Tolerance for row-stochasticity checks.
const STOCHASTIC_TOL: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {msg}")]
    Invalid { path: String, msg: String },
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("failed to parse config: {0}")]
    Parse(#[from] toml::de::Error),
}

impl ConfigError {
    fn invalid(path: impl Into<String>, msg: impl Into<String>) -> Self {
        ConfigError::Invalid {
            path: path.into(),
            msg: msg.into(),
        }
    }
}

/// One functional split option: fronthaul rate requirement and RRU-side
/// processing power.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitMode {
    pub id: usize,
    /// Data-units per slot required on the fronthaul while this mode transmits.
    pub fronthaul_rate: f64,
    /// Baseband processing power drawn whenever this mode transmits.
    pub processing_power: f64,
}

/// Ordered list of split modes, sorted by decreasing fronthaul rate.
///
/// Modes must form a strict trade-off: higher fronthaul rate pairs with
/// lower processing power. A dominated mode would never be selected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeCatalog {
    modes: Vec<SplitMode>,
}

impl ModeCatalog {
    pub fn new(mut modes: Vec<SplitMode>) -> Result<Self, ConfigError> {
        if modes.is_empty() {
            return Err(ConfigError::invalid("catalog.modes", "catalog is empty"));
        }
        modes.sort_by(|a, b| b.fronthaul_rate.partial_cmp(&a.fronthaul_rate).unwrap());
        for (i, m) in modes.iter().enumerate() {
            let path = format!("catalog.modes[{i}]");
            if !(m.fronthaul_rate > 0.0) {
                return Err(ConfigError::invalid(
                    format!("{path}.fronthaul_rate"),
                    "must be > 0",
                ));
            }
            if !(m.processing_power > 0.0) {
                return Err(ConfigError::invalid(
                    format!("{path}.processing_power"),
                    "must be > 0",
                ));
            }
        }
        for w in modes.windows(2) {
            let (a, b) = (&w[0], &w[1]);
            if !(a.fronthaul_rate > b.fronthaul_rate && a.processing_power < b.processing_power) {
                return Err(ConfigError::invalid(
                    "catalog.modes",
                    format!(
                        "modes {} and {} violate the trade-off ordering \
                         (R must strictly decrease while \u{3b5} strictly increases)",
                        a.id, b.id
                    ),
                ));
            }
        }
        Ok(ModeCatalog { modes })
    }

    pub fn modes(&self) -> &[SplitMode] {
        &self.modes
    }

    pub fn len(&self) -> usize {
        self.modes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.modes.is_empty()
    }

    /// Catalog restricted to the single mode at position `idx`.
    pub fn single(&self, idx: usize) -> ModeCatalog {
        ModeCatalog {
            modes: vec![self.modes[idx]],
        }
    }

    pub fn max_fronthaul_rate(&self) -> f64 {
        self.modes[0].fronthaul_rate
    }

    pub fn min_fronthaul_rate(&self) -> f64 {
        self.modes.last().unwrap().fronthaul_rate
    }

    pub fn min_processing_power(&self) -> f64 {
        self.modes[0].processing_power
    }
}

/// Finite-state Markov chain for the per-block channel gain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelChain {
    /// Gain of each state, per power-unit, strictly increasing.
    pub gains: Vec<f64>,
    /// Row-stochastic transition matrix between blocks.
    pub transitions: Vec<Vec<f64>>,
    /// Distribution of the first block's state.
    pub initial: Vec<f64>,
}

impl ChannelChain {
    pub fn num_states(&self) -> usize {
        self.gains.len()
    }

    fn validate(&self) -> Result<(), ConfigError> {
        let g = self.gains.len();
        if g == 0 {
            return Err(ConfigError::invalid("channel.gains", "empty"));
        }
        for (i, &v) in self.gains.iter().enumerate() {
            if !(v > 0.0) {
                return Err(ConfigError::invalid(
                    format!("channel.gains[{i}]"),
                    "must be > 0",
                ));
            }
        }
        for w in self.gains.windows(2) {
            if !(w[1] > w[0]) {
                return Err(ConfigError::invalid(
                    "channel.gains",
                    "must be strictly increasing",
                ));
            }
        }
        check_stochastic_matrix(&self.transitions, g, "channel.transitions")?;
        check_distribution(&self.initial, g, "channel.initial")?;
        Ok(())
    }

    /// Stationary distribution by power iteration.
    pub fn stationary(&self) -> Vec<f64> {
        let g = self.num_states();
        let mut pi = vec![1.0 / g as f64; g];
        for _ in 0..10_000 {
            let mut next = vec![0.0; g];
            for (i, row) in self.transitions.iter().enumerate() {
                for (j, &p) in row.iter().enumerate() {
                    next[j] += pi[i] * p;
                }
            }
            let diff: f64 = next
                .iter()
                .zip(&pi)
                .map(|(a, b)| (a - b).abs())
                .sum();
            pi = next;
            if diff < 1e-14 {
                break;
            }
        }
        pi
    }
}

/// Statistical law of the per-epoch energy arrivals.
///
/// The Poisson variant carries its derived truncated support: arrival
/// `A * N * L` with `A ~ Poisson(rate)`, clipped at the battery capacity,
/// with all tail mass lumped into the clipped level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum EnergyArrivalLaw {
    Poisson {
        average_rate: f64,
        /// Arrival amounts, energy-units, clipped at `B_max`.
        support: Vec<f64>,
        /// Truncated pmf over `support`.
        pmf: Vec<f64>,
    },
    Markov {
        levels: Vec<f64>,
        transitions: Vec<Vec<f64>>,
        initial: Vec<f64>,
    },
}

impl EnergyArrivalLaw {
    /// Build the truncated-Poisson law: `Pr{E = A*N*L} = rate^A e^-rate / A!`,
    /// support cut at the first level whose clipped value is `b_max`.
    pub fn poisson(average_rate: f64, slots_per_epoch: f64, b_max: f64) -> Self {
        let mut support = Vec::new();
        let mut pmf = Vec::new();
        let mut p = (-average_rate).exp(); // Pr{A = 0}
        let mut cum = 0.0;
        let mut a = 0u32;
        loop {
            let amount = (a as f64) * slots_per_epoch;
            if amount >= b_max {
                support.push(b_max);
                pmf.push(1.0 - cum);
                break;
            }
            support.push(amount);
            pmf.push(p);
            cum += p;
            a += 1;
            p *= average_rate / a as f64;
            if cum >= 1.0 - 1e-15 {
                // negligible tail; fold it into the last level
                let last = pmf.len() - 1;
                pmf[last] += 1.0 - cum;
                break;
            }
        }
        EnergyArrivalLaw::Poisson {
            average_rate,
            support,
            pmf,
        }
    }

    /// All possible arrival amounts.
    pub fn support(&self) -> &[f64] {
        match self {
            EnergyArrivalLaw::Poisson { support, .. } => support,
            EnergyArrivalLaw::Markov { levels, .. } => levels,
        }
    }

    /// Distribution of the next arrival given the previous arrival level index.
    pub fn next_distribution(&self, prev_level: usize) -> &[f64] {
        match self {
            EnergyArrivalLaw::Poisson { pmf, .. } => pmf,
            EnergyArrivalLaw::Markov { transitions, .. } => &transitions[prev_level],
        }
    }

    /// Distribution of the first arrival.
    pub fn initial_distribution(&self) -> &[f64] {
        match self {
            EnergyArrivalLaw::Poisson { pmf, .. } => pmf,
            EnergyArrivalLaw::Markov { initial, .. } => initial,
        }
    }

    pub fn mean(&self) -> f64 {
        let sup = self.support();
        self.initial_distribution()
            .iter()
            .zip(sup)
            .map(|(p, e)| p * e)
            .sum()
    }

    fn validate(&self, b_max: f64) -> Result<(), ConfigError> {
        match self {
            EnergyArrivalLaw::Poisson {
                average_rate,
                support,
                pmf,
            } => {
                if !(*average_rate > 0.0) {
                    return Err(ConfigError::invalid("energy.average_rate", "must be > 0"));
                }
                if support.is_empty() || support.len() != pmf.len() {
                    return Err(ConfigError::invalid(
                        "energy.support",
                        "support/pmf size mismatch",
                    ));
                }
                check_distribution(pmf, pmf.len(), "energy.pmf")?;
                if support.iter().any(|&e| e > b_max + 1e-12) {
                    return Err(ConfigError::invalid(
                        "energy.support",
                        "arrival level exceeds battery capacity",
                    ));
                }
            }
            EnergyArrivalLaw::Markov {
                levels,
                transitions,
                initial,
            } => {
                let n = levels.len();
                if n == 0 {
                    return Err(ConfigError::invalid("energy.levels", "empty"));
                }
                for (i, &e) in levels.iter().enumerate() {
                    if e < 0.0 {
                        return Err(ConfigError::invalid(
                            format!("energy.levels[{i}]"),
                            "must be >= 0",
                        ));
                    }
                    if e > b_max + 1e-12 {
                        return Err(ConfigError::invalid(
                            format!("energy.levels[{i}]"),
                            "exceeds battery capacity",
                        ));
                    }
                }
                check_stochastic_matrix(transitions, n, "energy.transitions")?;
                check_distribution(initial, n, "energy.initial")?;
            }
        }
        Ok(())
    }
}

/// All scenario constants. Immutable after validation; safe to share
/// read-only across concurrent solvers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemConfig {
    /// Slots per channel-fading block (L).
    pub slots_per_block: usize,
    /// Blocks per energy-arrival epoch (N).
    pub blocks_per_epoch: usize,
    /// Offline horizon in epochs (M).
    pub epochs: usize,
    /// Battery capacity, energy-units.
    pub battery_capacity: f64,
    /// Maximum transmit power, power-units.
    pub max_power: f64,
    /// Average fronthaul budget, data-units per slot.
    pub fronthaul_budget: f64,
    pub catalog: ModeCatalog,
    pub channel: ChannelChain,
    pub energy: EnergyArrivalLaw,
    /// Wall-clock seconds per slot; presentation only.
    pub slot_seconds: f64,
}

impl SystemConfig {
    pub fn slots_per_epoch(&self) -> usize {
        self.slots_per_block * self.blocks_per_epoch
    }

    /// Convert a rate in Mbit/s to data-units per slot.
    pub fn mbps_to_units(&self, mbps: f64) -> f64 {
        mbps * self.slot_seconds
    }

    /// Convert data-units per slot to Mbit/s.
    pub fn units_to_mbps(&self, units: f64) -> f64 {
        units / self.slot_seconds
    }

    pub fn load(path: impl AsRef<Path>) -> Result<SystemConfig, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let raw: ConfigFile = toml::from_str(&text)?;
        raw.build()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ConfigError> {
        let path = path.as_ref();
        let raw = ConfigFile::from_config(self);
        let text = toml::to_string_pretty(&raw).expect("config serializes");
        std::fs::write(path, text).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })
    }
}

/// Per-block decision: transmit duration and power per mode.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockAllocation {
    /// Slots per mode, continuous or integer depending on the producing solver.
    pub durations: Vec<f64>,
    /// Transmit power per mode; zero when the mode's duration is zero.
    pub powers: Vec<f64>,
}

impl BlockAllocation {
    pub fn zero(num_modes: usize) -> Self {
        BlockAllocation {
            durations: vec![0.0; num_modes],
            powers: vec![0.0; num_modes],
        }
    }

    pub fn total_duration(&self) -> f64 {
        self.durations.iter().sum()
    }

    /// Energy consumed in this block: sum of theta * (p + epsilon).
    pub fn energy(&self, catalog: &ModeCatalog) -> f64 {
        self.durations
            .iter()
            .zip(&self.powers)
            .zip(catalog.modes())
            .map(|((&t, &p), m)| t * (p + m.processing_power))
            .sum()
    }

    /// Data-units pushed over the fronthaul in this block.
    pub fn fronthaul(&self, catalog: &ModeCatalog) -> f64 {
        self.durations
            .iter()
            .zip(catalog.modes())
            .map(|(&t, m)| t * m.fronthaul_rate)
            .sum()
    }

    /// Throughput in nats at channel gain `gain`.
    pub fn throughput(&self, gain: f64) -> f64 {
        self.durations
            .iter()
            .zip(&self.powers)
            .map(|(&t, &p)| if t > 0.0 { t * (1.0 + gain * p).ln() } else { 0.0 })
            .sum()
    }

    pub fn validate(&self, cfg: &SystemConfig) -> Result<(), String> {
        let x = cfg.catalog.len();
        if self.durations.len() != x || self.powers.len() != x {
            return Err("allocation size does not match catalog".into());
        }
        let total: f64 = self.total_duration();
        if total > cfg.slots_per_block as f64 + 1e-9 {
            return Err(format!("total duration {total} exceeds block length"));
        }
        for (i, (&t, &p)) in self.durations.iter().zip(&self.powers).enumerate() {
            if t < -1e-12 {
                return Err(format!("durations[{i}] negative"));
            }
            if !(0.0..=cfg.max_power + 1e-9).contains(&p) {
                return Err(format!("powers[{i}] = {p} outside [0, P_max]"));
            }
            if t <= 0.0 && p != 0.0 {
                return Err(format!("powers[{i}] nonzero with zero duration"));
            }
        }
        Ok(())
    }
}

impl fmt::Display for BlockAllocation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "theta={:?} p={:?}", self.durations, self.powers)
    }
}

/// Check every invariant of the config; returns it unchanged if sound.
pub fn validate_config(cfg: SystemConfig) -> Result<SystemConfig, ConfigError> {
    if cfg.slots_per_block == 0 {
        return Err(ConfigError::invalid("slots_per_block", "must be >= 1"));
    }
    if cfg.blocks_per_epoch == 0 {
        return Err(ConfigError::invalid("blocks_per_epoch", "must be >= 1"));
    }
    if cfg.epochs == 0 {
        return Err(ConfigError::invalid("epochs", "must be >= 1"));
    }
    if !(cfg.battery_capacity > 0.0) {
        return Err(ConfigError::invalid("battery_capacity", "must be > 0"));
    }
    if !(cfg.max_power > 0.0) {
        return Err(ConfigError::invalid("max_power", "must be > 0"));
    }
    if cfg.fronthaul_budget < 0.0 {
        return Err(ConfigError::invalid("fronthaul_budget", "must be >= 0"));
    }
    if !(cfg.slot_seconds > 0.0) {
        return Err(ConfigError::invalid("slot_seconds", "must be > 0"));
    }
    // Re-run the catalog checks (the catalog may have been deserialized).
    ModeCatalog::new(cfg.catalog.modes().to_vec())?;
    cfg.channel.validate()?;
    cfg.energy.validate(cfg.battery_capacity)?;
    Ok(cfg)
}

/// The three LTE split points used throughout: CPRI-style RF split,
/// eCPRI precoding split, and the RLC/PDCP split.
///
/// Fronthaul is given in Mbit/s and scaled to data-units per slot.
pub fn nominal_mode_table(slot_seconds: f64) -> ModeCatalog {
    ModeCatalog::new(vec![
        SplitMode {
            id: 1,
            fronthaul_rate: 983.0 * slot_seconds,
            processing_power: 2.0,
        },
        SplitMode {
            id: 2,
            fronthaul_rate: 466.0 * slot_seconds,
            processing_power: 4.0,
        },
        SplitMode {
            id: 3,
            fronthaul_rate: 151.0 * slot_seconds,
            processing_power: 5.0,
        },
    ])
    .expect("nominal catalog is valid")
}

fn check_stochastic_matrix(
    m: &[Vec<f64>],
    n: usize,
    path: &str,
) -> Result<(), ConfigError> {
    if m.len() != n {
        return Err(ConfigError::invalid(path, format!("expected {n} rows")));
    }
    for (i, row) in m.iter().enumerate() {
        check_distribution(row, n, &format!("{path}[{i}]"))?;
    }
    Ok(())
}

fn check_distribution(row: &[f64], n: usize, path: &str) -> Result<(), ConfigError> {
    if row.len() != n {
        return Err(ConfigError::invalid(path, format!("expected {n} entries")));
    }
    let mut sum = 0.0;
    for (j, &p) in row.iter().enumerate() {
        if p < 0.0 {
            return Err(ConfigError::invalid(
                format!("{path}[{j}]"),
                "negative probability",
            ));
        }
        sum += p;
    }
    if (sum - 1.0).abs() > STOCHASTIC_TOL.max(1e-9 * n as f64) {
        return Err(ConfigError::invalid(path, format!("row sums to {sum}, not 1")));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Config file schema (human units: fronthaul in Mbit/s)
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
struct ConfigFile {
    slots_per_block: usize,
    blocks_per_epoch: usize,
    epochs: usize,
    battery_capacity: f64,
    max_power: f64,
    /// Average fronthaul budget in Mbit/s.
    fronthaul_budget_mbps: f64,
    slot_seconds: f64,
    #[serde(rename = "mode")]
    modes: Vec<ModeEntry>,
    channel: ChannelEntry,
    energy: EnergyEntry,
}

#[derive(Debug, Serialize, Deserialize)]
struct ModeEntry {
    id: usize,
    fronthaul_mbps: f64,
    processing_power: f64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum ChannelEntry {
    /// Equiprobable quantization of a Rayleigh-fading gain plus the
    /// best-of-U-users order statistic, i.i.d. across blocks.
    Rayleigh {
        mean_gain: f64,
        states: usize,
        users: usize,
    },
    Explicit {
        gains: Vec<f64>,
        transitions: Vec<Vec<f64>>,
        initial: Vec<f64>,
    },
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "snake_case")]
enum EnergyEntry {
    Poisson { average_rate: f64 },
    Markov {
        levels: Vec<f64>,
        transitions: Vec<Vec<f64>>,
        initial: Vec<f64>,
    },
}

impl ConfigFile {
    fn build(self) -> Result<SystemConfig, ConfigError> {
        let slot_seconds = self.slot_seconds;
        let catalog = ModeCatalog::new(
            self.modes
                .iter()
                .map(|m| SplitMode {
                    id: m.id,
                    fronthaul_rate: m.fronthaul_mbps * slot_seconds,
                    processing_power: m.processing_power,
                })
                .collect(),
        )?;
        let channel = match self.channel {
            ChannelEntry::Rayleigh {
                mean_gain,
                states,
                users,
            } => {
                if states == 0 || users == 0 {
                    return Err(ConfigError::invalid(
                        "channel",
                        "states and users must be >= 1",
                    ));
                }
                let gains = crate::sim::quantile_gains(mean_gain, states);
                let pmf = crate::sim::order_statistic_pmf(users, states);
                ChannelChain {
                    gains,
                    transitions: vec![pmf.clone(); states],
                    initial: pmf,
                }
            }
            ChannelEntry::Explicit {
                gains,
                transitions,
                initial,
            } => ChannelChain {
                gains,
                transitions,
                initial,
            },
        };
        let slots_per_epoch = (self.slots_per_block * self.blocks_per_epoch) as f64;
        let energy = match self.energy {
            EnergyEntry::Poisson { average_rate } => {
                EnergyArrivalLaw::poisson(average_rate, slots_per_epoch, self.battery_capacity)
            }
            EnergyEntry::Markov {
                levels,
                transitions,
                initial,
            } => EnergyArrivalLaw::Markov {
                levels: levels
                    .into_iter()
                    .map(|e| e.min(self.battery_capacity))
                    .collect(),
                transitions,
                initial,
            },
        };
        validate_config(SystemConfig {
            slots_per_block: self.slots_per_block,
            blocks_per_epoch: self.blocks_per_epoch,
            epochs: self.epochs,
            battery_capacity: self.battery_capacity,
            max_power: self.max_power,
            fronthaul_budget: self.fronthaul_budget_mbps * slot_seconds,
            catalog,
            channel,
            energy,
            slot_seconds,
        })
    }

    fn from_config(cfg: &SystemConfig) -> ConfigFile {
        ConfigFile {
            slots_per_block: cfg.slots_per_block,
            blocks_per_epoch: cfg.blocks_per_epoch,
            epochs: cfg.epochs,
            battery_capacity: cfg.battery_capacity,
            max_power: cfg.max_power,
            fronthaul_budget_mbps: cfg.fronthaul_budget / cfg.slot_seconds,
            slot_seconds: cfg.slot_seconds,
            modes: cfg
                .catalog
                .modes()
                .iter()
                .map(|m| ModeEntry {
                    id: m.id,
                    fronthaul_mbps: m.fronthaul_rate / cfg.slot_seconds,
                    processing_power: m.processing_power,
                })
                .collect(),
            channel: ChannelEntry::Explicit {
                gains: cfg.channel.gains.clone(),
                transitions: cfg.channel.transitions.clone(),
                initial: cfg.channel.initial.clone(),
            },
            energy: match &cfg.energy {
                EnergyArrivalLaw::Poisson { average_rate, .. } => EnergyEntry::Poisson {
                    average_rate: *average_rate,
                },
                EnergyArrivalLaw::Markov {
                    levels,
                    transitions,
                    initial,
                } => EnergyEntry::Markov {
                    levels: levels.clone(),
                    transitions: transitions.clone(),
                    initial: initial.clone(),
                },
            },
        }
    }
}

/// Parse a config from TOML text (same schema as the config file).
pub fn parse_config(text: &str) -> Result<SystemConfig, ConfigError> {
    let raw: ConfigFile = toml::from_str(text)?;
    raw.build()
}

/// Serialize a config back to TOML text.
pub fn config_to_toml(cfg: &SystemConfig) -> String {
    toml::to_string_pretty(&ConfigFile::from_config(cfg)).expect("config serializes")
}

/// The scenario used throughout the experiments: L=4 slots of 10 s, N=2
/// blocks per epoch, 1000-unit battery, the nominal three-mode catalog,
/// Rayleigh(2)/4-state order-statistic channel for two users, and Poisson(5)
/// energy arrivals.
pub fn paper_config() -> SystemConfig {
    let slot_seconds = 10.0;
    let states = 4;
    let gains = crate::sim::quantile_gains(2.0, states);
    let pmf = crate::sim::order_statistic_pmf(2, states);
    let battery = 1000.0;
    let cfg = SystemConfig {
        slots_per_block: 4,
        blocks_per_epoch: 2,
        epochs: 8,
        battery_capacity: battery,
        max_power: 20.0,
        fronthaul_budget: 360.0 * slot_seconds,
        catalog: nominal_mode_table(slot_seconds),
        channel: ChannelChain {
            gains,
            transitions: vec![pmf.clone(); states],
            initial: pmf,
        },
        energy: EnergyArrivalLaw::poisson(5.0, 8.0, battery),
        slot_seconds,
    };
    validate_config(cfg).expect("paper config is valid")
}
