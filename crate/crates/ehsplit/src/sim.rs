//! Stochastic environment: order-statistic channel sampling, Poisson or
//! Markov energy arrivals, battery dynamics, the slot-level episode runner,
//! and a common-random-number policy evaluator.

use rand::Rng as _;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::model::{EnergyArrivalLaw, SystemConfig};

/// Conditional means of `num_states` equiprobable intervals of an
/// exponential gain distribution with mean `mean_gain` (the gain of a
/// Rayleigh-amplitude channel is exponentially distributed).
pub fn quantile_gains(mean_gain: f64, num_states: usize) -> Vec<f64> {
    assert!(mean_gain > 0.0 && num_states >= 1);
    let g = num_states as f64;
    let mu = mean_gain;
    let boundary = |k: usize| -> f64 {
        if k == num_states {
            f64::INFINITY
        } else {
            -mu * (1.0 - k as f64 / g).ln()
        }
    };
    (0..num_states)
        .map(|k| {
            let a = boundary(k);
            let b = boundary(k + 1);
            if b.is_infinite() {
                // E[X | X > a] = a + mu for the exponential
                a + mu
            } else {
                let mass_a = (a + mu) * (-a / mu).exp();
                let mass_b = (b + mu) * (-b / mu).exp();
                g * (mass_a - mass_b)
            }
        })
        .collect()
}

/// Probability that the best of `users` i.i.d. uniform-quantile draws lands
/// in interval `g` (1-based): `(g/G)^U - ((g-1)/G)^U`.
pub fn order_statistic_pmf(users: usize, num_states: usize) -> Vec<f64> {
    assert!(users >= 1 && num_states >= 1);
    let g = num_states as f64;
    let u = users as i32;
    (1..=num_states)
        .map(|k| (k as f64 / g).powi(u) - ((k - 1) as f64 / g).powi(u))
        .collect()
}

/// Sample the per-block best-user channel state index (0-based).
pub fn sample_best_channel(users: usize, num_states: usize, rng: &mut ChaCha8Rng) -> usize {
    let pmf = order_statistic_pmf(users, num_states);
    sample_index(&pmf, rng)
}

/// Inverse-CDF draw from a pmf.
pub fn sample_index(pmf: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let u: f64 = rng.gen();
    let mut cum = 0.0;
    for (i, &p) in pmf.iter().enumerate() {
        cum += p;
        if u < cum {
            return i;
        }
    }
    pmf.len() - 1
}

/// Draw one epoch's arrival. Returns the law's level index and the amount in
/// energy-units.
pub fn sample_epoch_energy(
    law: &EnergyArrivalLaw,
    prev_level: Option<usize>,
    rng: &mut ChaCha8Rng,
) -> (usize, f64) {
    let dist = match prev_level {
        Some(lvl) => law.next_distribution(lvl),
        None => law.initial_distribution(),
    };
    let idx = sample_index(dist, rng);
    (idx, law.support()[idx])
}

/// Geometric mean of per-carrier gains: the single-carrier equivalent gain.
pub fn effective_gain(per_carrier: &[f64]) -> f64 {
    assert!(!per_carrier.is_empty());
    let log_sum: f64 = per_carrier.iter().map(|&g| g.ln()).sum();
    (log_sum / per_carrier.len() as f64).exp()
}

/// Exact average spectral efficiency `(1/C) sum log(1 + g_c p)`, for
/// reporting the approximation error of [`effective_gain`].
pub fn exact_spectral_efficiency(per_carrier: &[f64], power: f64) -> f64 {
    per_carrier
        .iter()
        .map(|&g| (1.0 + g * power).ln())
        .sum::<f64>()
        / per_carrier.len() as f64
}

// ---------------------------------------------------------------------------
// Seed splitting
// ---------------------------------------------------------------------------

/// Independent random streams within one episode.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Channel,
    Energy,
}

/// Deterministic per-(seed, episode, stream) generator so that channel and
/// energy realizations are identical across policies (common random
/// numbers).
pub fn stream_rng(seed: u64, episode: u64, stream: Stream) -> ChaCha8Rng {
    let tag = match stream {
        Stream::Channel => 1u64,
        Stream::Energy => 2u64,
    };
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&episode.to_le_bytes());
    key[16..24].copy_from_slice(&tag.to_le_bytes());
    ChaCha8Rng::from_seed(key)
}

// ---------------------------------------------------------------------------
// Policy interface
// ---------------------------------------------------------------------------

/// What a policy sees at the start of each slot. The battery is the level
/// *before* this slot's arrival is deposited; the arrival is shown
/// separately and may be spent in the same slot.
#[derive(Debug, Clone, Copy)]
pub struct SlotObservation {
    pub battery: f64,
    pub arrival: f64,
    /// Channel state index into the config's chain.
    pub channel: usize,
    /// 0-based epoch counter.
    pub epoch: usize,
    /// 1-based block within the epoch.
    pub block_in_epoch: usize,
    /// 1-based slot within the block.
    pub slot_in_block: usize,
}

/// Per-slot decision: transmit flag, power, and catalog mode index.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlotAction {
    pub transmit: bool,
    pub power: f64,
    pub mode: usize,
}

impl SlotAction {
    pub fn idle() -> Self {
        SlotAction {
            transmit: false,
            power: 0.0,
            mode: 0,
        }
    }
}

/// Uniform per-slot decision interface shared by every policy.
pub trait Policy {
    fn name(&self) -> &str;
    /// Called before each episode.
    fn reset(&mut self);
    fn act(&mut self, obs: &SlotObservation, cfg: &SystemConfig) -> SlotAction;
}

// ---------------------------------------------------------------------------
// Episode runner
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct SlotRecord {
    pub slot: usize,
    pub epoch: usize,
    pub block_in_epoch: usize,
    pub slot_in_block: usize,
    pub channel: usize,
    pub arrival: f64,
    pub transmit: bool,
    pub power: f64,
    pub mode_id: usize,
    /// Nats transmitted this slot.
    pub rate: f64,
    /// Data-units over the fronthaul this slot.
    pub fronthaul: f64,
    pub battery_after: f64,
}

#[derive(Debug, Clone, Default)]
pub struct EpisodeSummary {
    pub slots: usize,
    pub mean_throughput: f64,
    pub mean_fronthaul: f64,
    pub total_arrivals: f64,
    pub total_consumed: f64,
    pub total_overflow: f64,
    pub final_battery: f64,
    /// Actions that had to be clamped to stay affordable or under P_max.
    pub clamp_warnings: usize,
}

#[derive(Debug, Clone)]
pub struct EpisodeTrace {
    pub records: Vec<SlotRecord>,
    pub summary: EpisodeSummary,
}

impl EpisodeTrace {
    /// Energy-balance residual: arrivals - consumption - overflow - final
    /// battery. Zero up to floating-point rounding.
    pub fn conservation_residual(&self) -> f64 {
        let s = &self.summary;
        s.total_arrivals - s.total_consumed - s.total_overflow - s.final_battery
    }
}

/// Step the environment slot by slot under `policy` for `horizon` slots.
///
/// Arrivals are sampled at epoch starts; the policy acts on the pre-deposit
/// battery plus the visible arrival; unaffordable or over-cap actions are
/// clamped (and counted) rather than crashing the evaluation.
pub fn run_episode(
    cfg: &SystemConfig,
    policy: &mut dyn Policy,
    horizon: usize,
    seed: u64,
    episode: u64,
) -> EpisodeTrace {
    let mut chan_rng = stream_rng(seed, episode, Stream::Channel);
    let mut energy_rng = stream_rng(seed, episode, Stream::Energy);
    policy.reset();

    let l = cfg.slots_per_block;
    let n_blocks = cfg.blocks_per_epoch;
    let slots_per_epoch = l * n_blocks;

    let mut battery = 0.0f64;
    let mut channel = 0usize;
    let mut energy_level: Option<usize> = None;
    let mut records = Vec::with_capacity(horizon);
    let mut sum = EpisodeSummary::default();

    for k in 0..horizon {
        let epoch = k / slots_per_epoch;
        let within = k % slots_per_epoch;
        let block_in_epoch = within / l + 1;
        let slot_in_block = within % l + 1;

        let mut arrival = 0.0;
        if block_in_epoch == 1 && slot_in_block == 1 {
            let (lvl, amount) = sample_epoch_energy(&cfg.energy, energy_level, &mut energy_rng);
            energy_level = Some(lvl);
            arrival = amount;
        }
        if slot_in_block == 1 {
            channel = if k == 0 {
                sample_index(&cfg.channel.initial, &mut chan_rng)
            } else {
                sample_index(&cfg.channel.transitions[channel], &mut chan_rng)
            };
        }

        let obs = SlotObservation {
            battery,
            arrival,
            channel,
            epoch,
            block_in_epoch,
            slot_in_block,
        };
        let mut action = policy.act(&obs, cfg);

        // Defensive caps: P_max and affordability against battery + arrival.
        if action.transmit {
            let mut clamped = false;
            if action.mode >= cfg.catalog.len() {
                action = SlotAction::idle();
                clamped = true;
            } else {
                if action.power > cfg.max_power {
                    action.power = cfg.max_power;
                    clamped = true;
                }
                let eps = cfg.catalog.modes()[action.mode].processing_power;
                let avail = battery + arrival;
                if action.power + eps > avail + 1e-9 {
                    let p = avail - eps;
                    if p > 0.0 {
                        action.power = p;
                    } else {
                        action = SlotAction::idle();
                    }
                    clamped = true;
                }
                if action.transmit && action.power <= 0.0 {
                    action = SlotAction::idle();
                }
            }
            if clamped {
                sum.clamp_warnings += 1;
            }
        }

        let (cost, rate, fronthaul, mode_id) = if action.transmit {
            let m = cfg.catalog.modes()[action.mode];
            (
                action.power + m.processing_power,
                (1.0 + cfg.channel.gains[channel] * action.power).ln(),
                m.fronthaul_rate,
                m.id,
            )
        } else {
            (0.0, 0.0, 0.0, 0)
        };

        let unclipped = battery + arrival - cost;
        let overflow = (unclipped - cfg.battery_capacity).max(0.0);
        battery = unclipped - overflow;

        sum.total_arrivals += arrival;
        sum.total_consumed += cost;
        sum.total_overflow += overflow;
        sum.mean_throughput += rate;
        sum.mean_fronthaul += fronthaul;

        records.push(SlotRecord {
            slot: k,
            epoch,
            block_in_epoch,
            slot_in_block,
            channel,
            arrival,
            transmit: action.transmit,
            power: action.power,
            mode_id,
            rate,
            fronthaul,
            battery_after: battery,
        });
    }

    sum.slots = horizon;
    sum.final_battery = battery;
    if horizon > 0 {
        sum.mean_throughput /= horizon as f64;
        sum.mean_fronthaul /= horizon as f64;
    }
    EpisodeTrace {
        records,
        summary: sum,
    }
}

// ---------------------------------------------------------------------------
// Policy comparison
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct PolicyStats {
    pub name: String,
    pub episodes: usize,
    pub mean_throughput: f64,
    pub stderr_throughput: f64,
    pub mean_fronthaul: f64,
    pub stderr_fronthaul: f64,
    pub mean_overflow: f64,
    pub clamp_warnings: usize,
}

/// Evaluate each policy on the same channel/energy realizations
/// (common random numbers); per-policy mean and standard error per slot.
pub fn evaluate(
    cfg: &SystemConfig,
    policies: &mut [Box<dyn Policy>],
    episodes: usize,
    horizon: usize,
    seed: u64,
) -> Vec<PolicyStats> {
    assert!(!policies.is_empty());
    policies
        .iter_mut()
        .map(|policy| {
            let mut thr = Vec::with_capacity(episodes);
            let mut fh = Vec::with_capacity(episodes);
            let mut overflow = 0.0;
            let mut warnings = 0;
            for ep in 0..episodes {
                let trace = run_episode(cfg, policy.as_mut(), horizon, seed, ep as u64);
                thr.push(trace.summary.mean_throughput);
                fh.push(trace.summary.mean_fronthaul);
                overflow += trace.summary.total_overflow;
                warnings += trace.summary.clamp_warnings;
            }
            let (mt, st) = mean_stderr(&thr);
            let (mf, sf) = mean_stderr(&fh);
            PolicyStats {
                name: policy.name().to_string(),
                episodes,
                mean_throughput: mt,
                stderr_throughput: st,
                mean_fronthaul: mf,
                stderr_fronthaul: sf,
                mean_overflow: overflow / episodes as f64,
                clamp_warnings: warnings,
            }
        })
        .collect()
}

pub fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// A policy that never transmits; useful as a baseline and in tests.
pub struct IdlePolicy;

impl Policy for IdlePolicy {
    fn name(&self) -> &str {
        "idle"
    }
    fn reset(&mut self) {}
    fn act(&mut self, _obs: &SlotObservation, _cfg: &SystemConfig) -> SlotAction {
        SlotAction::idle()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::paper_config;

    #[test]
    fn order_statistic_pmf_two_users_four_states() {
        let pmf = order_statistic_pmf(2, 4);
        let expect = [1.0 / 16.0, 3.0 / 16.0, 5.0 / 16.0, 7.0 / 16.0];
        for (p, e) in pmf.iter().zip(expect) {
            assert!((p - e).abs() < 1e-15);
        }
    }

    #[test]
    fn order_statistic_single_user_uniform() {
        let pmf = order_statistic_pmf(1, 5);
        for p in pmf {
            assert!((p - 0.2).abs() < 1e-15);
        }
    }

    #[test]
    fn quantile_gains_single_state_is_mean() {
        let g = quantile_gains(2.0, 1);
        assert!((g[0] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn quantile_gains_average_to_mean_and_increase() {
        let gains = quantile_gains(2.0, 4);
        let avg: f64 = gains.iter().sum::<f64>() / 4.0;
        assert!((avg - 2.0).abs() < 1e-6, "avg {avg}");
        for w in gains.windows(2) {
            assert!(w[1] > w[0]);
        }
    }

    #[test]
    fn best_channel_frequencies_match_pmf() {
        let mut rng = stream_rng(7, 0, Stream::Channel);
        let n = 200_000;
        let mut counts = [0usize; 4];
        for _ in 0..n {
            counts[sample_best_channel(2, 4, &mut rng)] += 1;
        }
        let pmf = order_statistic_pmf(2, 4);
        for (c, p) in counts.iter().zip(pmf) {
            let freq = *c as f64 / n as f64;
            let sigma = (p * (1.0 - p) / n as f64).sqrt();
            assert!((freq - p).abs() < 4.0 * sigma, "freq {freq} vs pmf {p}");
        }
    }

    #[test]
    fn poisson_arrival_mean_matches() {
        let cfg = paper_config();
        let mut rng = stream_rng(3, 0, Stream::Energy);
        let epochs = 100_000;
        let mut total = 0.0;
        let mut lvl = None;
        for _ in 0..epochs {
            let (i, e) = sample_epoch_energy(&cfg.energy, lvl, &mut rng);
            lvl = Some(i);
            total += e;
        }
        let mean = total / epochs as f64;
        let expect = cfg.energy.mean();
        assert!((mean - expect).abs() < 0.01 * expect, "mean {mean} vs {expect}");
    }

    #[test]
    fn effective_gain_identity_and_equal_gains() {
        assert!((effective_gain(&[3.7]) - 3.7).abs() < 1e-12);
        let g = effective_gain(&[2.0, 2.0, 2.0]);
        assert!((g - 2.0).abs() < 1e-12);
        let exact = exact_spectral_efficiency(&[2.0, 2.0, 2.0], 5.0);
        assert!(((1.0 + 2.0 * 5.0f64).ln() - exact).abs() < 1e-12);
    }

    #[test]
    fn zero_arrivals_zero_throughput() {
        let mut cfg = paper_config();
        cfg.energy = crate::model::EnergyArrivalLaw::Markov {
            levels: vec![0.0],
            transitions: vec![vec![1.0]],
            initial: vec![1.0],
        };
        let mut idle = IdlePolicy;
        let trace = run_episode(&cfg, &mut idle, 64, 1, 0);
        assert_eq!(trace.summary.mean_throughput, 0.0);
        assert_eq!(trace.summary.total_arrivals, 0.0);
    }

    #[test]
    fn episodes_are_deterministic() {
        let cfg = paper_config();
        let mut idle = IdlePolicy;
        let a = run_episode(&cfg, &mut idle, 128, 42, 0);
        let b = run_episode(&cfg, &mut idle, 128, 42, 0);
        for (ra, rb) in a.records.iter().zip(&b.records) {
            assert_eq!(ra.channel, rb.channel);
            assert_eq!(ra.arrival, rb.arrival);
            assert_eq!(ra.battery_after, rb.battery_after);
        }
    }

    #[test]
    fn conservation_holds_for_idle_policy() {
        let cfg = paper_config();
        let mut idle = IdlePolicy;
        let trace = run_episode(&cfg, &mut idle, 1000, 9, 0);
        assert!(trace.conservation_residual().abs() < 1e-9);
        for r in &trace.records {
            assert!(r.battery_after >= 0.0 && r.battery_after <= cfg.battery_capacity + 1e-12);
        }
    }
}
