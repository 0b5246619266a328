//! Block-granularity online policy: transmit only in good channel blocks,
//! plan each block with the closed-form single-epoch solver over a forecast
//! horizon, and meter fronthaul with a rolling budget.

use crate::closedform::best_pair_policy;
use crate::model::{BlockAllocation, ChannelChain, SystemConfig};
use crate::sim::{Policy, SlotAction, SlotObservation};

/// Tuning knobs of the heuristic.
#[derive(Debug, Clone)]
pub struct HeuristicParams {
    /// Channel-state indices treated as good; only good blocks transmit.
    pub good_set: Vec<usize>,
    /// Lookahead window of the rolling fronthaul budget, in blocks.
    pub n_heu: usize,
    /// Average fronthaul budget, units per slot.
    pub budget: f64,
}

impl HeuristicParams {
    /// Defaults: the top half of channel states is good, the lookahead spans
    /// two epochs, and the budget comes from the configuration.
    pub fn defaults(cfg: &SystemConfig) -> HeuristicParams {
        let g = cfg.channel.gains.len();
        HeuristicParams {
            good_set: (g / 2..g).collect(),
            n_heu: 2 * cfg.blocks_per_epoch,
            budget: cfg.fronthaul_budget,
        }
    }
}

/// Rolling bookkeeping carried across blocks.
#[derive(Debug, Clone, Default)]
pub struct HeuristicState {
    /// Battery in energy units (after the block's deposit).
    pub battery: f64,
    /// Fronthaul data-units consumed so far.
    pub cumulative_fronthaul: f64,
    /// 1-based index of the current block since the episode start.
    pub block: u64,
    /// 1-based position of the current block within its epoch.
    pub block_in_epoch: usize,
}

/// Expected number of good blocks among the next `horizon` blocks, starting
/// one transition after `current`. Computed through the joint distribution
/// over (good-block count, current state) advanced one block at a time.
pub fn good_block_forecast(
    chain: &ChannelChain,
    current: usize,
    horizon: usize,
    good_set: &[usize],
) -> f64 {
    if horizon == 0 || good_set.is_empty() {
        return 0.0;
    }
    let g = chain.gains.len();
    let is_good = |w: usize| good_set.contains(&w);
    // dist[n_v][w] = Pr{n_v good blocks so far, state w}
    let mut dist = vec![vec![0.0; g]; horizon + 1];
    dist[0][current] = 1.0;
    for _ in 0..horizon {
        let mut next = vec![vec![0.0; g]; horizon + 1];
        for (nv, row) in dist.iter().enumerate() {
            for (w, &p) in row.iter().enumerate() {
                if p <= 0.0 {
                    continue;
                }
                for (w2, &t) in chain.transitions[w].iter().enumerate() {
                    if t > 0.0 {
                        let nv2 = nv + usize::from(is_good(w2));
                        next[nv2.min(horizon)][w2] += p * t;
                    }
                }
            }
        }
        dist = next;
    }
    dist.iter()
        .enumerate()
        .map(|(nv, row)| nv as f64 * row.iter().sum::<f64>())
        .sum()
}

/// Probability-weighted mean gain over good states across the current block
/// and the next `horizon` blocks, conditioned on the current state.
pub fn good_gain_forecast(
    chain: &ChannelChain,
    current: usize,
    horizon: usize,
    good_set: &[usize],
) -> f64 {
    let g = chain.gains.len();
    let mut occ = vec![0.0; g];
    occ[current] = 1.0;
    let mut mass = 0.0;
    let mut weighted = 0.0;
    for step in 0..=horizon {
        for &w in good_set {
            weighted += occ[w] * chain.gains[w];
            mass += occ[w];
        }
        if step == horizon {
            break;
        }
        let mut next = vec![0.0; g];
        for (w, &p) in occ.iter().enumerate() {
            if p > 0.0 {
                for (w2, &t) in chain.transitions[w].iter().enumerate() {
                    next[w2] += p * t;
                }
            }
        }
        occ = next;
    }
    if mass <= 0.0 {
        chain.gains[current]
    } else {
        weighted / mass
    }
}

/// One block decision: deposit the arrival, skip bad blocks, otherwise plan
/// with the closed-form solver over the expected good-block horizon under
/// the rolling fronthaul budget, and execute this block's share. Updates the
/// battery and fronthaul bookkeeping in `hs`.
pub fn heuristic_block_decision(
    hs: &mut HeuristicState,
    observed: usize,
    arrival: f64,
    params: &HeuristicParams,
    cfg: &SystemConfig,
) -> BlockAllocation {
    let x = cfg.catalog.len();
    let l = cfg.slots_per_block;
    hs.block += 1;
    hs.block_in_epoch = ((hs.block - 1) as usize % cfg.blocks_per_epoch) + 1;
    hs.battery = (hs.battery + arrival).min(cfg.battery_capacity);

    let zero = BlockAllocation::zero(x);
    if !params.good_set.contains(&observed) {
        return zero;
    }
    if hs.battery < cfg.catalog.min_processing_power() {
        return zero;
    }
    // rolling budget: what the window may still spend, per good slot
    let n = hs.block as f64;
    let n_heu = 1.0
        + good_block_forecast(
            &cfg.channel,
            observed,
            params.n_heu.saturating_sub(1),
            &params.good_set,
        );
    let allowance = (n + params.n_heu as f64) * l as f64 * params.budget
        - hs.cumulative_fronthaul;
    let d_n = allowance / (n_heu * l as f64);
    if d_n <= 0.0 {
        return zero;
    }
    // plan over the expected good blocks of the current epoch
    let remaining = cfg.blocks_per_epoch - hs.block_in_epoch;
    let n_good = 1.0 + good_block_forecast(&cfg.channel, observed, remaining, &params.good_set);
    let gamma = good_gain_forecast(&cfg.channel, observed, remaining, &params.good_set);
    let plan = best_pair_policy(
        hs.battery,
        n_good * l as f64,
        gamma,
        d_n,
        &cfg.catalog,
        cfg.max_power,
    );
    let total: f64 = plan.durations.iter().sum();
    if total <= 1e-9 {
        return zero;
    }
    // this block's share: up to L slots, split proportionally across modes
    let share = total.min(l as f64);
    let mut alloc = BlockAllocation::zero(x);
    let mut counts: Vec<usize> = plan
        .durations
        .iter()
        .map(|&d| (share * d / total).floor() as usize)
        .collect();
    let mut have: usize = counts.iter().sum();
    let want = share.round() as usize;
    let mut by_frac: Vec<usize> = (0..x).collect();
    by_frac.sort_by(|&a, &b| {
        let fa = (share * plan.durations[a] / total).fract();
        let fb = (share * plan.durations[b] / total).fract();
        fb.partial_cmp(&fa).unwrap()
    });
    for &xx in by_frac.iter().cycle().take(4 * x) {
        if have >= want {
            break;
        }
        if plan.durations[xx] > 0.0 {
            counts[xx] += 1;
            have += 1;
        }
    }
    for xx in 0..x {
        if counts[xx] > 0 {
            alloc.durations[xx] = counts[xx] as f64;
            alloc.powers[xx] = plan.powers[xx].min(cfg.max_power);
        }
    }
    // affordability: drop slots until the block's spend fits the battery
    let eps: Vec<f64> = cfg
        .catalog
        .modes()
        .iter()
        .map(|m| m.processing_power)
        .collect();
    loop {
        let spend: f64 = (0..x)
            .map(|xx| alloc.durations[xx] * (alloc.powers[xx] + eps[xx]))
            .sum();
        if spend <= hs.battery + 1e-9 {
            break;
        }
        // drop from the costliest mode first
        let worst = (0..x)
            .filter(|&xx| alloc.durations[xx] >= 1.0)
            .max_by(|&a, &b| {
                (alloc.powers[a] + eps[a])
                    .partial_cmp(&(alloc.powers[b] + eps[b]))
                    .unwrap()
            });
        match worst {
            Some(xx) => {
                alloc.durations[xx] -= 1.0;
                if alloc.durations[xx] < 0.5 {
                    alloc.durations[xx] = 0.0;
                    alloc.powers[xx] = 0.0;
                }
            }
            None => break,
        }
    }
    // hard budget safety: never let the running total pass n*L*D by more
    // than one block at the heaviest rate
    let cap = n * l as f64 * params.budget + cfg.catalog.max_fronthaul_rate() * l as f64;
    loop {
        if hs.cumulative_fronthaul + alloc.fronthaul(&cfg.catalog) <= cap + 1e-9 {
            break;
        }
        let rates: Vec<f64> = cfg.catalog.modes().iter().map(|m| m.fronthaul_rate).collect();
        let worst = (0..x)
            .filter(|&xx| alloc.durations[xx] >= 1.0)
            .max_by(|&a, &b| rates[a].partial_cmp(&rates[b]).unwrap());
        match worst {
            Some(xx) => {
                alloc.durations[xx] -= 1.0;
                if alloc.durations[xx] < 0.5 {
                    alloc.durations[xx] = 0.0;
                    alloc.powers[xx] = 0.0;
                }
            }
            None => break,
        }
    }
    hs.battery -= (0..x)
        .map(|xx| alloc.durations[xx] * (alloc.powers[xx] + eps[xx]))
        .sum::<f64>();
    hs.cumulative_fronthaul += alloc.fronthaul(&cfg.catalog);
    alloc
}

/// Simulator adapter: replans at every block start and plays out the block's
/// slots. The battery is resynchronized from the observation each block, so
/// internal bookkeeping cannot drift from the environment.
pub struct HeuristicPolicy {
    pub params: HeuristicParams,
    state: HeuristicState,
    schedule: Vec<SlotAction>,
}

impl HeuristicPolicy {
    pub fn new(params: HeuristicParams) -> HeuristicPolicy {
        HeuristicPolicy {
            params,
            state: HeuristicState::default(),
            schedule: Vec::new(),
        }
    }

    pub fn from_config(cfg: &SystemConfig) -> HeuristicPolicy {
        HeuristicPolicy::new(HeuristicParams::defaults(cfg))
    }
}

impl Policy for HeuristicPolicy {
    fn name(&self) -> &str {
        "heuristic"
    }

    fn reset(&mut self) {
        self.state = HeuristicState::default();
        self.schedule.clear();
    }

    fn act(&mut self, obs: &SlotObservation, cfg: &SystemConfig) -> SlotAction {
        if obs.slot_in_block == 1 {
            self.state.battery = obs.battery;
            let alloc =
                heuristic_block_decision(&mut self.state, obs.channel, obs.arrival, &self.params, cfg);
            self.schedule.clear();
            for x in 0..alloc.durations.len() {
                for _ in 0..(alloc.durations[x].round() as usize) {
                    self.schedule.push(SlotAction {
                        transmit: true,
                        power: alloc.powers[x],
                        mode: x,
                    });
                }
            }
            self.schedule.truncate(cfg.slots_per_block);
        }
        self.schedule
            .get(obs.slot_in_block - 1)
            .copied()
            .unwrap_or_else(SlotAction::idle)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{paper_config, validate_config};
    use crate::sim::{run_episode, sample_index, stream_rng, Stream};

    fn cfg() -> SystemConfig {
        validate_config(paper_config()).unwrap()
    }

    #[test]
    fn empty_good_set_forecasts_zero() {
        let cfg = cfg();
        assert_eq!(good_block_forecast(&cfg.channel, 0, 5, &[]), 0.0);
        assert_eq!(good_block_forecast(&cfg.channel, 2, 0, &[2, 3]), 0.0);
    }

    #[test]
    fn iid_chain_forecast_is_linear_in_horizon() {
        let cfg = cfg(); // the order-statistic chain is iid across blocks
        let pi = &cfg.channel.transitions[0];
        let good = [2usize, 3];
        let per_block: f64 = good.iter().map(|&g| pi[g]).sum();
        for h in 1..=10 {
            let f = good_block_forecast(&cfg.channel, 0, h, &good);
            assert!(
                (f - h as f64 * per_block).abs() < 1e-12,
                "h={h}: {f} vs {}",
                h as f64 * per_block
            );
        }
    }

    #[test]
    fn forecast_matches_monte_carlo() {
        let cfg = cfg();
        let good = [2usize, 3];
        let horizon = 8;
        let start = 1usize;
        let expect = good_block_forecast(&cfg.channel, start, horizon, &good);
        let mut rng = stream_rng(99, 0, Stream::Channel);
        let paths = 1_000_000u32;
        let mut total = 0u64;
        for _ in 0..paths {
            let mut w = start;
            for _ in 0..horizon {
                w = sample_index(&cfg.channel.transitions[w], &mut rng);
                if good.contains(&w) {
                    total += 1;
                }
            }
        }
        let mc = total as f64 / paths as f64;
        assert!(
            (mc - expect).abs() < 0.005 * expect.max(1.0),
            "recursion {expect} vs monte carlo {mc}"
        );
    }

    #[test]
    fn bigger_good_set_never_forecasts_fewer() {
        let cfg = cfg();
        for h in 1..=6 {
            for start in 0..cfg.channel.gains.len() {
                let small = good_block_forecast(&cfg.channel, start, h, &[3]);
                let big = good_block_forecast(&cfg.channel, start, h, &[2, 3]);
                assert!(big >= small - 1e-12);
            }
        }
    }

    #[test]
    fn bad_block_transmits_nothing() {
        let cfg = cfg();
        let params = HeuristicParams::defaults(&cfg);
        let mut hs = HeuristicState {
            battery: 500.0,
            ..Default::default()
        };
        let alloc = heuristic_block_decision(&mut hs, 0, 40.0, &params, &cfg);
        assert!(alloc.total_duration() == 0.0);
        assert!((hs.battery - 540.0).abs() < 1e-12, "battery accumulates");
    }

    #[test]
    fn starving_battery_transmits_nothing() {
        let cfg = cfg();
        let params = HeuristicParams::defaults(&cfg);
        let mut hs = HeuristicState {
            battery: 0.5,
            ..Default::default()
        };
        let alloc = heuristic_block_decision(&mut hs, 3, 0.0, &params, &cfg);
        assert!(alloc.total_duration() == 0.0);
    }

    #[test]
    fn good_block_spends_within_battery_and_block() {
        let cfg = cfg();
        let params = HeuristicParams::defaults(&cfg);
        let mut hs = HeuristicState {
            battery: 100.0,
            ..Default::default()
        };
        let before = hs.battery + 40.0;
        let alloc = heuristic_block_decision(&mut hs, 3, 40.0, &params, &cfg);
        assert!(alloc.total_duration() > 0.0, "good block should transmit");
        assert!(alloc.total_duration() <= cfg.slots_per_block as f64 + 1e-12);
        let spent = alloc.energy(&cfg.catalog);
        assert!((before - hs.battery - spent).abs() < 1e-9);
        assert!(hs.battery >= -1e-9);
        for &p in &alloc.powers {
            assert!(p <= cfg.max_power + 1e-12);
        }
    }

    #[test]
    fn episode_fronthaul_respects_budget() {
        let cfg = cfg();
        let blocks = 4000;
        let horizon = blocks * cfg.slots_per_block;
        let mut pol = HeuristicPolicy::from_config(&cfg);
        let trace = run_episode(&cfg, &mut pol, horizon, 31, 0);
        let avg = trace.summary.mean_fronthaul;
        assert!(
            avg <= cfg.fronthaul_budget * 1.02,
            "avg fronthaul {avg} vs budget {}",
            cfg.fronthaul_budget
        );
        assert!(trace.summary.mean_throughput > 0.0);
        // budget safety with one block of slack at every prefix
        let mut cum = 0.0;
        let l = cfg.slots_per_block as f64;
        let slack = cfg.catalog.max_fronthaul_rate() * l;
        for (i, rec) in trace.records.iter().enumerate() {
            cum += rec.fronthaul;
            let n_blocks = (i / cfg.slots_per_block + 1) as f64;
            assert!(
                cum <= n_blocks * l * cfg.fronthaul_budget + slack,
                "slot {i}: cumulative {cum}"
            );
        }
    }

    #[test]
    fn deterministic_under_same_seed() {
        let cfg = cfg();
        let mut a = HeuristicPolicy::from_config(&cfg);
        let mut b = HeuristicPolicy::from_config(&cfg);
        let t1 = run_episode(&cfg, &mut a, 400, 7, 3);
        let t2 = run_episode(&cfg, &mut b, 400, 7, 3);
        assert_eq!(t1.summary.mean_throughput, t2.summary.mean_throughput);
        assert_eq!(t1.summary.final_battery, t2.summary.final_battery);
    }
}
