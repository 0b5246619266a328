//! Online policy by relative value iteration on a quantized average-reward
//! MDP.
//!
//! The state is (slot position within the epoch, quantized battery, channel
//! state, arrival level); energy arrives only in the first slot of an epoch.
//! The per-slot reward is the spectral efficiency minus a fronthaul price
//! `eta * R_x`; [`calibrate_eta`] bisects the price until the stationary
//! fronthaul load meets the average budget.

use std::io::Write as _;
use std::path::Path;

use thiserror::Error;

use crate::closedform::{glue_pour_power, v3_power};
use crate::model::{SystemConfig, ModeCatalog};
use crate::sim::{Policy, SlotAction, SlotObservation};

#[derive(Debug, Error)]
pub enum MdpError {
    #[error("value iteration did not converge: span {span:.3e} after {iters} sweeps")]
    NoConvergence { span: f64, iters: usize },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad policy file: {0}")]
    BadPolicyFile(String),
}

/// Average-reward MDP with enumerable states and per-state action sets.
pub trait Mdp {
    fn num_states(&self) -> usize;
    fn num_actions(&self, state: usize) -> usize;
    fn reward(&self, state: usize, action: usize) -> f64;
    /// Invoke `f(next_state, probability)` for every successor; probabilities
    /// must sum to 1.
    fn for_each_successor(&self, state: usize, action: usize, f: &mut dyn FnMut(usize, f64));
}

/// Result of relative value iteration.
#[derive(Debug, Clone)]
pub struct RviResult {
    /// Optimal average reward per slot.
    pub lambda: f64,
    /// Relative value function (bias), normalized so `h[0] == 0`.
    pub h: Vec<f64>,
    /// Greedy action per state.
    pub policy: Vec<usize>,
    pub iterations: usize,
    pub span: f64,
    pub converged: bool,
}

/// Relaxed relative value iteration: each sweep computes the one-step
/// lookahead `w = Th` from the previous iterate, mixes `h <- h + tau (w - h)`
/// (the relaxation keeps the iteration convergent on periodic chains), and
/// stops when the span of `d = w - h` falls below `omega * (1 + |lambda|)`.
/// The optimal gain is bracketed by `[min d, max d]`, so the returned
/// `lambda` (the midpoint) is certified to within half the final span.
///
/// `eval_sweeps` fixed-policy evaluation sweeps are interleaved after each
/// improvement sweep (modified policy iteration); they only sharpen `h`
/// between improvements, the stopping bracket is always computed from a full
/// one-step lookahead.
pub fn relative_value_iteration(
    m: &dyn Mdp,
    tau: f64,
    omega: f64,
    max_iters: usize,
    eval_sweeps: usize,
    warm_start: Option<Vec<f64>>,
) -> RviResult {
    let ns = m.num_states();
    let mut h = match warm_start {
        Some(v) if v.len() == ns => v,
        _ => vec![0.0; ns],
    };
    let mut w = vec![0.0; ns];
    let mut policy = vec![0usize; ns];
    let mut lambda = 0.0;
    let mut span = f64::INFINITY;
    let mut iters = 0;
    let mut converged = false;
    while iters < max_iters {
        iters += 1;
        for s in 0..ns {
            let mut best = f64::NEG_INFINITY;
            let mut best_a = 0;
            for a in 0..m.num_actions(s) {
                let mut q = m.reward(s, a);
                m.for_each_successor(s, a, &mut |s2, p| q += p * h[s2]);
                if q > best {
                    best = q;
                    best_a = a;
                }
            }
            w[s] = best;
            policy[s] = best_a;
        }
        let mut dmin = f64::INFINITY;
        let mut dmax = f64::NEG_INFINITY;
        for s in 0..ns {
            let d = w[s] - h[s];
            dmin = dmin.min(d);
            dmax = dmax.max(d);
        }
        lambda = 0.5 * (dmin + dmax);
        span = dmax - dmin;
        if span < omega * (1.0 + lambda.abs()) {
            converged = true;
            break;
        }
        for s in 0..ns {
            h[s] += tau * (w[s] - h[s]);
        }
        let h0 = h[0];
        for v in h.iter_mut() {
            *v -= h0;
        }
        for _ in 0..eval_sweeps {
            // in-place relative policy evaluation: subtracting the current
            // gain estimate removes the per-sweep drift, so the in-place
            // update stays unbiased around cyclic state layers
            for s in 0..ns {
                let mut q = m.reward(s, policy[s]) - lambda;
                m.for_each_successor(s, policy[s], &mut |s2, p| q += p * h[s2]);
                h[s] += tau * (q - h[s]);
            }
            let h0 = h[0];
            for v in h.iter_mut() {
                *v -= h0;
            }
        }
    }
    let h0 = h[0];
    for v in h.iter_mut() {
        *v -= h0;
    }
    RviResult {
        lambda,
        h,
        policy,
        iterations: iters,
        span,
        converged,
    }
}

/// Stationary distribution of the chain induced by a fixed policy, by damped
/// power iteration (`rho <- rho/2 + P'rho/2`; damping removes periodicity
/// without changing the fixed point). Warm-startable.
pub fn stationary_distribution(
    m: &dyn Mdp,
    policy: &[usize],
    warm_start: Option<Vec<f64>>,
    tol: f64,
    max_iters: usize,
) -> Vec<f64> {
    let ns = m.num_states();
    let mut rho = match warm_start {
        Some(v) if v.len() == ns => v,
        _ => vec![1.0 / ns as f64; ns],
    };
    let mut next = vec![0.0; ns];
    for _ in 0..max_iters {
        for v in next.iter_mut() {
            *v = 0.0;
        }
        for s in 0..ns {
            let mass = rho[s];
            if mass <= 0.0 {
                continue;
            }
            m.for_each_successor(s, policy[s], &mut |s2, p| next[s2] += 0.5 * mass * p);
            next[s] += 0.5 * mass;
        }
        let diff: f64 = rho.iter().zip(&next).map(|(a, b)| (a - b).abs()).sum();
        std::mem::swap(&mut rho, &mut next);
        if diff < tol {
            break;
        }
    }
    let total: f64 = rho.iter().sum();
    for v in rho.iter_mut() {
        *v /= total;
    }
    rho
}

// ---------------------------------------------------------------------------
// The split-selection MDP
// ---------------------------------------------------------------------------

/// Tuning knobs for building and solving the quantized MDP.
#[derive(Debug, Clone)]
pub struct MdpParams {
    /// Number of battery quantization levels above zero.
    pub battery_levels: usize,
    /// Relaxation factor of the value iteration.
    pub tau: f64,
    /// Span tolerance scale.
    pub omega: f64,
    pub max_iters: usize,
    /// Fixed-policy evaluation sweeps between improvement sweeps.
    pub eval_sweeps: usize,
}

impl Default for MdpParams {
    fn default() -> Self {
        MdpParams {
            battery_levels: 200,
            tau: 0.99,
            omega: 1e-5,
            max_iters: 20_000,
            eval_sweeps: 60,
        }
    }
}

/// One action: stay idle or transmit with a mode and a power level.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MdpAction {
    pub transmit: bool,
    pub mode: usize,
    pub power: f64,
}

/// The quantized slot-level decision process for one cell.
#[derive(Debug, Clone)]
pub struct SplitMdp {
    cfg: SystemConfig,
    /// Battery quantization step in energy units.
    pub battery_step: f64,
    pub battery_levels: usize,
    pub actions: Vec<MdpAction>,
    /// Per-action consumption per slot (power + processing), 0 for idle.
    cost: Vec<f64>,
    /// Fronthaul price.
    pub eta: f64,
    /// Arrival support values (energy per epoch) and level transition rows.
    support: Vec<f64>,
    y_rows: Vec<Vec<f64>>,
    /// For memoryless laws the level is dropped outside the arrival slot.
    collapse_y: bool,
    slots_per_epoch: usize,
    n_channel: usize,
    size_k0: usize,
    size_k: usize,
    /// log(1 + gain * power) per (action, channel), 0 for idle.
    log_tab: Vec<f64>,
    /// Fronthaul rate per action, 0 for idle.
    rate: Vec<f64>,
    /// Minimum battery level at which an action is affordable.
    minb: Vec<usize>,
    /// Joint (channel, arrival-level) rows at epoch boundaries, one row per
    /// (channel, outgoing arrival level); entries are (layer offset, prob)
    /// with layer offset = (g' * NY + y') to be combined with the battery.
    ep_rows: Vec<Vec<(usize, f64)>>,
}

impl SplitMdp {
    pub fn new(cfg: &SystemConfig, params: &MdpParams) -> SplitMdp {
        let battery_levels = params.battery_levels;
        let battery_step = cfg.battery_capacity / battery_levels as f64;
        let actions = build_actions(cfg);
        let cost: Vec<f64> = actions
            .iter()
            .map(|a| {
                if a.transmit {
                    a.power + cfg.catalog.modes()[a.mode].processing_power
                } else {
                    0.0
                }
            })
            .collect();
        let support = cfg.energy.support().to_vec();
        let (y_rows, collapse_y) = match &cfg.energy {
            crate::model::EnergyArrivalLaw::Poisson { pmf, .. } => (vec![pmf.clone(); 1], true),
            crate::model::EnergyArrivalLaw::Markov { transitions, .. } => {
                (transitions.clone(), false)
            }
        };
        let n_channel = cfg.channel.gains.len();
        let ny = support.len();
        let nyk = if collapse_y { 1 } else { ny };
        let nb = battery_levels + 1;
        let modes = cfg.catalog.modes();
        let mut log_tab = vec![0.0; actions.len() * n_channel];
        let mut rate = vec![0.0; actions.len()];
        let mut minb = vec![0usize; actions.len()];
        for (a, act) in actions.iter().enumerate() {
            if act.transmit {
                for g in 0..n_channel {
                    log_tab[a * n_channel + g] =
                        (1.0 + cfg.channel.gains[g] * act.power).ln();
                }
                rate[a] = modes[act.mode].fronthaul_rate;
                let c: f64 = cost[a];
                minb[a] = ((c - 1e-12) / battery_step).ceil().max(0.0) as usize;
            }
        }
        let mut ep_rows = Vec::with_capacity(n_channel * y_rows.len());
        for g in 0..n_channel {
            for row in &y_rows {
                let mut joint = Vec::new();
                for g2 in 0..n_channel {
                    let pg = cfg.channel.transitions[g][g2];
                    if pg <= 0.0 {
                        continue;
                    }
                    for (y2, &py) in row.iter().enumerate() {
                        if py > 0.0 {
                            joint.push((g2 * ny + y2, pg * py));
                        }
                    }
                }
                ep_rows.push(joint);
            }
        }
        SplitMdp {
            cfg: cfg.clone(),
            battery_step,
            battery_levels,
            actions,
            cost,
            eta: 0.0,
            support,
            y_rows,
            collapse_y,
            slots_per_epoch: cfg.slots_per_block * cfg.blocks_per_epoch,
            n_channel,
            size_k0: nb * n_channel * ny,
            size_k: nb * n_channel * nyk,
            log_tab,
            rate,
            minb,
            ep_rows,
        }
    }

    pub fn config(&self) -> &SystemConfig {
        &self.cfg
    }

    fn ny_at(&self, k: usize) -> usize {
        if k == 0 {
            self.support.len()
        } else if self.collapse_y {
            1
        } else {
            self.support.len()
        }
    }

    /// Flat index of (slot-in-epoch, battery level, channel, arrival level).
    pub fn encode(&self, k: usize, b: usize, g: usize, y: usize) -> usize {
        let base = if k == 0 {
            0
        } else {
            self.size_k0 + (k - 1) * self.size_k
        };
        base + (b * self.n_channel + g) * self.ny_at(k) + y
    }

    pub fn decode(&self, s: usize) -> (usize, usize, usize, usize) {
        let (k, rem) = if s < self.size_k0 {
            (0, s)
        } else {
            let r = s - self.size_k0;
            (1 + r / self.size_k, r % self.size_k)
        };
        let ny = self.ny_at(k);
        let y = rem % ny;
        let bg = rem / ny;
        let g = bg % self.n_channel;
        let b = bg / self.n_channel;
        (k, b, g, y)
    }

    fn battery_units(&self, level: usize) -> f64 {
        level as f64 * self.battery_step
    }

    fn floor_level(&self, units: f64) -> usize {
        ((units / self.battery_step + 1e-9).floor() as usize).min(self.battery_levels)
    }

    /// Average fronthaul load (units per slot) under a fixed policy and
    /// stationary distribution.
    pub fn fronthaul_load(&self, policy: &[usize], rho: &[f64]) -> f64 {
        let modes = self.cfg.catalog.modes();
        rho.iter()
            .enumerate()
            .map(|(s, &p)| {
                let a = &self.actions[policy[s]];
                if a.transmit {
                    p * modes[a.mode].fronthaul_rate
                } else {
                    0.0
                }
            })
            .sum()
    }

    /// Average spectral efficiency (nats per slot) under a fixed policy.
    pub fn throughput(&self, policy: &[usize], rho: &[f64]) -> f64 {
        rho.iter()
            .enumerate()
            .map(|(s, &p)| {
                let (_, _, g, _) = self.decode(s);
                let a = &self.actions[policy[s]];
                if a.transmit {
                    p * (1.0 + self.cfg.channel.gains[g] * a.power).ln()
                } else {
                    0.0
                }
            })
            .sum()
    }
}

impl Mdp for SplitMdp {
    fn num_states(&self) -> usize {
        self.size_k0 + (self.slots_per_epoch - 1) * self.size_k
    }

    fn num_actions(&self, _s: usize) -> usize {
        self.actions.len()
    }

    fn reward(&self, s: usize, a: usize) -> f64 {
        if !self.actions[a].transmit {
            return 0.0;
        }
        let (_, b, g, _) = self.decode(s);
        if b < self.minb[a] {
            return -1e30; // unaffordable; paired with a self-loop
        }
        self.log_tab[a * self.n_channel + g] - self.eta * self.rate[a]
    }

    fn for_each_successor(&self, s: usize, a: usize, f: &mut dyn FnMut(usize, f64)) {
        let (k, b, g, y) = self.decode(s);
        if self.actions[a].transmit && b < self.minb[a] {
            f(s, 1.0);
            return;
        }
        let arrival = if k == 0 { self.support[y] } else { 0.0 };
        let b_next_units = (self.battery_units(b) + arrival - self.cost[a])
            .min(self.cfg.battery_capacity)
            .max(0.0);
        let b2 = self.floor_level(b_next_units);
        let k2 = (k + 1) % self.slots_per_epoch;
        if k2 == 0 {
            // epoch boundary: prejoined (channel, arrival-level) row
            let ny = self.support.len();
            let row_y = if self.collapse_y { 0 } else { y };
            let base = b2 * self.n_channel * ny;
            for &(off, p) in &self.ep_rows[g * self.y_rows.len() + row_y.min(self.y_rows.len() - 1)] {
                f(base + off, p);
            }
        } else {
            let y2 = if self.collapse_y { 0 } else { y };
            if k2 % self.cfg.slots_per_block == 0 {
                // block boundary: channel transitions
                for g2 in 0..self.n_channel {
                    let pg = self.cfg.channel.transitions[g][g2];
                    if pg > 0.0 {
                        f(self.encode(k2, b2, g2, y2), pg);
                    }
                }
            } else {
                f(self.encode(k2, b2, g, y2), 1.0);
            }
        }
    }
}

/// Candidate transmit powers: the glue-pouring level of every (channel,
/// mode) pair, the two-mode thresholds, and a geometric fill up to the
/// power cap.
fn build_actions(cfg: &SystemConfig) -> Vec<MdpAction> {
    let modes = cfg.catalog.modes();
    let mut levels: Vec<f64> = Vec::new();
    for &g in &cfg.channel.gains {
        for m in modes {
            levels.push(glue_pour_power(g, m.processing_power));
        }
        for i in 0..modes.len() {
            for j in (i + 1)..modes.len() {
                levels.push(v3_power(g, modes[i], modes[j]));
            }
        }
    }
    let mut p = cfg.max_power;
    for _ in 0..6 {
        levels.push(p);
        p *= 0.5;
    }
    levels.retain(|&p| p > 1e-9 && p <= cfg.max_power);
    levels.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut dedup: Vec<f64> = Vec::new();
    for p in levels {
        if dedup.last().map_or(true, |&q| p > q * 1.02) {
            dedup.push(p);
        }
    }
    let mut actions = vec![MdpAction {
        transmit: false,
        mode: 0,
        power: 0.0,
    }];
    for x in 0..modes.len() {
        for &p in &dedup {
            actions.push(MdpAction {
                transmit: true,
                mode: x,
                power: p,
            });
        }
    }
    actions
}

// ---------------------------------------------------------------------------
// Training and price calibration
// ---------------------------------------------------------------------------

/// A solved MDP ready for simulation or export.
#[derive(Debug, Clone)]
pub struct TrainedMdp {
    pub model: SplitMdp,
    pub policy: Vec<usize>,
    pub lambda: f64,
    pub eta: f64,
    /// Stationary fronthaul load predicted by the model (units per slot).
    pub predicted_fronthaul: f64,
    /// Stationary throughput predicted by the model (nats per slot).
    pub predicted_throughput: f64,
    pub rvi_sweeps: usize,
}

/// Bisect the fronthaul price until the stationary fronthaul load meets the
/// budget. Returns the feasible (high-price) endpoint. Value functions and
/// stationary distributions are warm-started across evaluations.
pub fn calibrate_eta(
    mut model: SplitMdp,
    budget: f64,
    params: &MdpParams,
) -> Result<TrainedMdp, MdpError> {
    let mut h: Option<Vec<f64>> = None;
    let mut rho: Option<Vec<f64>> = None;
    let mut sweeps = 0usize;

    let eval = |model: &mut SplitMdp,
                    eta: f64,
                    omega: f64,
                    h: &mut Option<Vec<f64>>,
                    rho: &mut Option<Vec<f64>>,
                    sweeps: &mut usize|
     -> Result<(RviResult, f64), MdpError> {
        model.eta = eta;
        let res = relative_value_iteration(model, params.tau, omega, params.max_iters, params.eval_sweeps, h.take());
        *sweeps += res.iterations;
        if !res.converged {
            return Err(MdpError::NoConvergence {
                span: res.span,
                iters: res.iterations,
            });
        }
        let d = stationary_distribution(model, &res.policy, rho.take(), 1e-10, 8000);
        let load = model.fronthaul_load(&res.policy, &d);
        *h = Some(res.h.clone());
        *rho = Some(d);
        Ok((res, load))
    };

    let probe_omega = params.omega * 10.0;
    let (_, mut load) = eval(&mut model, 0.0, probe_omega, &mut h, &mut rho, &mut sweeps)?;
    let mut eta = 0.0;
    if load > budget {
        let mut lo = 0.0f64;
        let mut hi = 1e-5f64;
        loop {
            let (_, l) = eval(&mut model, hi, probe_omega, &mut h, &mut rho, &mut sweeps)?;
            if l <= budget {
                load = l;
                eta = hi;
                break;
            }
            lo = hi;
            hi *= 4.0;
            if hi > 1e3 {
                return Err(MdpError::NoConvergence {
                    span: l - budget,
                    iters: sweeps,
                });
            }
        }
        for _ in 0..40 {
            if load >= 0.99 * budget || (hi - lo) <= 1e-2 * hi {
                break;
            }
            let mid = 0.5 * (lo + hi);
            let (_, l) = eval(&mut model, mid, probe_omega, &mut h, &mut rho, &mut sweeps)?;
            if l <= budget {
                hi = mid;
                load = l;
                eta = mid;
            } else {
                lo = mid;
            }
        }
        // make sure the model carries the feasible price
        model.eta = eta;
    }
    // polish the chosen price at the full tolerance (warm-started, cheap)
    let (best, _) = eval(&mut model, eta, params.omega, &mut h, &mut rho, &mut sweeps)?;
    let d = stationary_distribution(&model, &best.policy, rho.take(), 1e-12, 8000);
    let predicted_fronthaul = model.fronthaul_load(&best.policy, &d);
    let predicted_throughput = model.throughput(&best.policy, &d);
    Ok(TrainedMdp {
        policy: best.policy,
        lambda: best.lambda,
        eta,
        predicted_fronthaul,
        predicted_throughput,
        rvi_sweeps: sweeps,
        model,
    })
}

/// Build the quantized MDP for a configuration and calibrate it to the given
/// fronthaul budget (units per slot).
pub fn train_mdp(
    cfg: &SystemConfig,
    budget: f64,
    params: &MdpParams,
) -> Result<TrainedMdp, MdpError> {
    let model = SplitMdp::new(cfg, params);
    calibrate_eta(model, budget, params)
}

impl TrainedMdp {
    /// Write the policy as CSV: one row per state with the chosen action.
    pub fn save_policy(&self, path: &Path) -> Result<(), MdpError> {
        let mut f = std::fs::File::create(path)?;
        writeln!(
            f,
            "battery_levels,{},eta,{:.12e},lambda,{:.12e}",
            self.model.battery_levels, self.eta, self.lambda
        )?;
        writeln!(f, "state,slot,battery,channel,arrival,transmit,mode,power")?;
        for s in 0..self.model.num_states() {
            let (k, b, g, y) = self.model.decode(s);
            let a = &self.model.actions[self.policy[s]];
            writeln!(
                f,
                "{s},{k},{b},{g},{y},{},{},{:.9}",
                a.transmit as u8,
                if a.transmit {
                    self.model.cfg.catalog.modes()[a.mode].id.to_string()
                } else {
                    "-".into()
                },
                a.power
            )?;
        }
        Ok(())
    }

    /// Wrap as a simulator policy.
    pub fn policy(&self) -> MdpPolicy {
        MdpPolicy {
            model: self.model.clone(),
            table: self.policy.clone(),
            y_cur: 0,
        }
    }
}

/// Simulator adapter: quantizes the observed battery and looks the action up
/// in the trained table.
pub struct MdpPolicy {
    model: SplitMdp,
    table: Vec<usize>,
    y_cur: usize,
}

impl MdpPolicy {
    fn nearest_level(values: &[f64], v: f64) -> usize {
        let mut best = 0;
        let mut dist = f64::INFINITY;
        for (i, &c) in values.iter().enumerate() {
            let d = (c - v).abs();
            if d < dist {
                dist = d;
                best = i;
            }
        }
        best
    }
}

impl Policy for MdpPolicy {
    fn name(&self) -> &str {
        "mdp"
    }

    fn reset(&mut self) {
        self.y_cur = 0;
    }

    fn act(&mut self, obs: &SlotObservation, cfg: &SystemConfig) -> SlotAction {
        let l = cfg.slots_per_block;
        let k = (obs.block_in_epoch - 1) * l + (obs.slot_in_block - 1);
        if k == 0 {
            self.y_cur = Self::nearest_level(&self.model.support, obs.arrival);
        }
        let b = self.model.floor_level(obs.battery);
        let g = obs.channel.min(self.model.n_channel - 1);
        let y = if k == 0 {
            self.y_cur
        } else if self.model.collapse_y {
            0
        } else {
            self.y_cur
        };
        let s = self.model.encode(k, b, g, y);
        let a = &self.model.actions[self.table[s]];
        if !a.transmit {
            return SlotAction::idle();
        }
        SlotAction {
            transmit: true,
            power: a.power,
            mode: a.mode,
        }
    }
}

/// Expose the catalog used when decoding saved policies.
pub fn mode_index_by_id(catalog: &ModeCatalog, id: usize) -> Option<usize> {
    catalog.modes().iter().position(|m| m.id == id)
}
