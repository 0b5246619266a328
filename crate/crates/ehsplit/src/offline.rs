//! Non-causal throughput maximization over a finite horizon of epochs:
//! continuous relaxation solved by a logarithmic-barrier interior scheme,
//! structural verification of the optimal-solution properties, and the
//! relax-and-round integerization.
//!
//! The program maximizes `sum theta * log(1 + gain * alpha / theta)` over
//! per-(epoch, block, mode) durations `theta` and radiated energies
//! `alpha = theta * p`, subject to the average fronthaul budget, energy
//! causality, battery non-overflow, and block-length constraints. The
//! objective is the concave perspective of `log(1 + gain * p)`; its value
//! tends to 0 as `theta -> 0+`. The max-power cap is deliberately not
//! enforced here; powers are clipped during rounding.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::model::{BlockAllocation, SystemConfig};

/// Durations below this are treated as exactly zero. The barrier keeps every
/// duration strictly positive, so modes priced out at the optimum are left
/// with a residue of order 1e-6 slots; snapping them (and dumping the
/// associated energy) costs at most ~1e-4 nats.
pub const THETA_ZERO: f64 = 1e-5;
/// A mode counts as selected when its duration exceeds this.
pub const THETA_SELECTED: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum OfflineError {
    #[error("invalid instance: {0}")]
    InvalidInstance(String),
    #[error("solver did not converge: max residual {residual:.3e}, gap {gap:.3e}")]
    NoConvergence { residual: f64, gap: f64 },
}

/// Non-causal problem data: the full energy and channel realization.
#[derive(Debug, Clone)]
pub struct OfflineInstance {
    pub cfg: SystemConfig,
    /// Energy arriving at the start of each epoch, length M.
    pub energy: Vec<f64>,
    /// Per-block channel gains, `gains[m][n]`, M x N.
    pub gains: Vec<Vec<f64>>,
}

impl OfflineInstance {
    pub fn new(
        cfg: SystemConfig,
        energy: Vec<f64>,
        gains: Vec<Vec<f64>>,
    ) -> Result<Self, OfflineError> {
        let m = energy.len();
        if m == 0 {
            return Err(OfflineError::InvalidInstance("no epochs".into()));
        }
        if gains.len() != m {
            return Err(OfflineError::InvalidInstance(
                "gains row count != energy length".into(),
            ));
        }
        for (i, &e) in energy.iter().enumerate() {
            if e < 0.0 {
                return Err(OfflineError::InvalidInstance(format!(
                    "energy[{i}] negative"
                )));
            }
            if e > cfg.battery_capacity + 1e-9 {
                return Err(OfflineError::InvalidInstance(format!(
                    "energy[{i}] exceeds battery capacity"
                )));
            }
        }
        for (i, row) in gains.iter().enumerate() {
            if row.len() != cfg.blocks_per_epoch {
                return Err(OfflineError::InvalidInstance(format!(
                    "gains[{i}] has wrong block count"
                )));
            }
            if row.iter().any(|&g| !(g > 0.0)) {
                return Err(OfflineError::InvalidInstance(format!(
                    "gains[{i}] must be positive"
                )));
            }
        }
        Ok(OfflineInstance { cfg, energy, gains })
    }

    /// Draw an instance from the config's channel and energy laws, using the
    /// same random streams as the simulator's episode runner so that offline
    /// solutions can be replayed against the generating trace.
    pub fn sample(cfg: &SystemConfig, seed: u64, episode: u64) -> OfflineInstance {
        let mut chan_rng = crate::sim::stream_rng(seed, episode, crate::sim::Stream::Channel);
        let mut energy_rng = crate::sim::stream_rng(seed, episode, crate::sim::Stream::Energy);
        let m = cfg.epochs;
        let n = cfg.blocks_per_epoch;
        let mut energy = Vec::with_capacity(m);
        let mut gains = Vec::with_capacity(m);
        let mut lvl = None;
        let mut state = 0usize;
        for mm in 0..m {
            let (l, e) = crate::sim::sample_epoch_energy(&cfg.energy, lvl, &mut energy_rng);
            lvl = Some(l);
            energy.push(e);
            let mut row = Vec::with_capacity(n);
            for nn in 0..n {
                state = if mm == 0 && nn == 0 {
                    sample_from(&cfg.channel.initial, &mut chan_rng)
                } else {
                    sample_from(&cfg.channel.transitions[state], &mut chan_rng)
                };
                row.push(cfg.channel.gains[state]);
            }
            gains.push(row);
        }
        OfflineInstance {
            cfg: cfg.clone(),
            energy,
            gains,
        }
    }
}

fn sample_from(pmf: &[f64], rng: &mut rand_chacha::ChaCha8Rng) -> usize {
    use rand::Rng;
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

/// Worst-case violation per constraint family, all normalized to be <= 0
/// when feasible.
#[derive(Debug, Clone, Default)]
pub struct FeasibilityResiduals {
    pub fronthaul: f64,
    pub causality: f64,
    pub battery: f64,
    pub block_length: f64,
    pub nonnegativity: f64,
}

impl FeasibilityResiduals {
    pub fn max(&self) -> f64 {
        self.fronthaul
            .max(self.causality)
            .max(self.battery)
            .max(self.block_length)
            .max(self.nonnegativity)
    }
}

/// Continuous solution with the barrier multipliers.
#[derive(Debug, Clone)]
pub struct OfflineSolution {
    /// M x N grid of per-block allocations (continuous durations).
    pub alloc: Vec<Vec<BlockAllocation>>,
    /// Nats over the whole horizon.
    pub throughput: f64,
    /// Multiplier on the average fronthaul constraint.
    pub phi: f64,
    /// Multipliers on the energy-causality constraints, length M.
    pub mu: Vec<f64>,
    /// Multipliers on the battery constraints, length M-1.
    pub nu: Vec<f64>,
    pub residuals: FeasibilityResiduals,
    /// Worst product multiplier x slack over all constraints.
    pub complementary_slackness: f64,
    pub duality_gap: f64,
    pub converged: bool,
    /// Energy burned with (numerically) zero duration; nonzero only when the
    /// battery constraint forces consumption beyond what the budget allows
    /// to be transmitted.
    pub dumped_energy: f64,
}

impl OfflineSolution {
    pub fn total_consumed(&self, inst: &OfflineInstance) -> f64 {
        self.alloc
            .iter()
            .flatten()
            .map(|a| a.energy(&inst.cfg.catalog))
            .sum::<f64>()
            + self.dumped_energy
    }

    pub fn total_fronthaul(&self, inst: &OfflineInstance) -> f64 {
        self.alloc
            .iter()
            .flatten()
            .map(|a| a.fronthaul(&inst.cfg.catalog))
            .sum()
    }
}

/// Solve the continuous relaxation.
pub fn solve_offline(inst: &OfflineInstance) -> Result<OfflineSolution, OfflineError> {
    let cfg = &inst.cfg;
    let m_total = inst.energy.len();
    let n = cfg.blocks_per_epoch;
    let x = cfg.catalog.len();
    let l = cfg.slots_per_block as f64;
    let d = cfg.fronthaul_budget;

    let cum_e: Vec<f64> = inst
        .energy
        .iter()
        .scan(0.0, |acc, &e| {
            *acc += e;
            Some(*acc)
        })
        .collect();

    // Epochs before the first arrival can never transmit.
    let first_active = match cum_e.iter().position(|&c| c > 0.0) {
        Some(i) => i,
        None => return Ok(zero_solution(inst)),
    };
    if d <= 0.0 {
        return Ok(zero_budget_solution(inst, &cum_e, first_active));
    }

    let ma = m_total - first_active; // active epochs
    let vars_per = ma * n * x;
    let dim = 2 * vars_per;
    // theta at flat index i, alpha at vars_per + i
    let idx = |mi: usize, nn: usize, xx: usize| (mi * n + nn) * x + xx;

    let rates: Vec<f64> = cfg.catalog.modes().iter().map(|m| m.fronthaul_rate).collect();
    let eps: Vec<f64> = cfg
        .catalog
        .modes()
        .iter()
        .map(|m| m.processing_power)
        .collect();
    let gains_flat: Vec<f64> = (0..ma)
        .flat_map(|mi| (0..n).map(move |nn| inst.gains[first_active + mi][nn]))
        .collect::<Vec<_>>();

    // Linear constraints a^T z <= b.
    let mut cons: Vec<(Vec<(usize, f64)>, f64)> = Vec::new();
    let mnl = (m_total * n) as f64 * l;

    // Fronthaul: sum theta R / (MNL) <= D
    {
        let mut a = Vec::with_capacity(vars_per);
        for mi in 0..ma {
            for nn in 0..n {
                for xx in 0..x {
                    a.push((idx(mi, nn, xx), rates[xx] / mnl));
                }
            }
        }
        cons.push((a, d));
    }
    // Causality per active epoch: cumulative consumption <= cumulative energy.
    for mh in first_active..m_total {
        let mut a = Vec::new();
        for mi in 0..=(mh - first_active) {
            for nn in 0..n {
                for xx in 0..x {
                    a.push((idx(mi, nn, xx), eps[xx]));
                    a.push((vars_per + idx(mi, nn, xx), 1.0));
                }
            }
        }
        cons.push((a, cum_e[mh]));
    }
    // Battery: cumE_{mh+1} - consumption_{1..mh} <= B_max (tiny relaxation so
    // arrivals exactly at capacity keep a strict interior).
    let b_relax = 1e-9 * (1.0 + cfg.battery_capacity);
    for mh in first_active..m_total.saturating_sub(1) {
        let mut a = Vec::new();
        for mi in 0..=(mh - first_active) {
            for nn in 0..n {
                for xx in 0..x {
                    a.push((idx(mi, nn, xx), -eps[xx]));
                    a.push((vars_per + idx(mi, nn, xx), -1.0));
                }
            }
        }
        cons.push((a, cfg.battery_capacity + b_relax - cum_e[mh + 1]));
    }
    let battery_start = 1 + ma; // index of first battery constraint
    let battery_count = m_total.saturating_sub(1) - first_active;
    // Block length per (active epoch, block).
    for mi in 0..ma {
        for nn in 0..n {
            let a = (0..x).map(|xx| (idx(mi, nn, xx), 1.0)).collect();
            cons.push((a, l));
        }
    }
    // Nonnegativity.
    for i in 0..dim {
        cons.push((vec![(i, -1.0)], 0.0));
    }

    // Strictly feasible start: cumulative consumption targets inside the
    // causality/battery band, realized with small uniform durations and the
    // remainder in alpha.
    let mut z = DVector::zeros(dim);
    {
        let mut targets = vec![0.0; m_total]; // cumulative consumption by epoch
        let mut prev = 0.0;
        for mh in first_active..m_total {
            let lo = if mh + 1 < m_total {
                (cum_e[mh + 1] - cfg.battery_capacity).max(0.0)
            } else {
                0.0
            }
            .max(prev);
            let hi = cum_e[mh];
            let c = if hi <= lo {
                hi
            } else {
                lo + 0.5 * (hi - lo)
            };
            targets[mh] = c.max(prev);
            prev = targets[mh];
        }
        // Small uniform theta, strictly inside fronthaul and block limits.
        let rate_sum: f64 = (0..ma)
            .map(|_| (0..n).map(|_| rates.iter().sum::<f64>()).sum::<f64>())
            .sum();
        let theta0 = (0.1 * l / x as f64).min(0.2 * d * mnl / rate_sum).max(1e-12);
        for mh in first_active..m_total {
            let mi = mh - first_active;
            let c_epoch = targets[mh] - if mh == 0 { 0.0 } else { targets[mh - 1] };
            let eps_sum: f64 = eps.iter().sum::<f64>() * n as f64;
            // keep processing below half the epoch's consumption target
            let te = if c_epoch > 0.0 {
                theta0.min(0.5 * c_epoch / eps_sum)
            } else {
                theta0.min(1e-9)
            };
            let used_proc = te * eps_sum;
            let alpha_each = ((c_epoch - used_proc).max(0.0) / (n * x) as f64).max(1e-12);
            for nn in 0..n {
                for xx in 0..x {
                    z[idx(mi, nn, xx)] = te.max(1e-12);
                    z[vars_per + idx(mi, nn, xx)] = alpha_each;
                }
            }
        }
    }

    let slack = |z: &DVector<f64>, c: &(Vec<(usize, f64)>, f64)| -> f64 {
        c.1 - c.0.iter().map(|&(i, a)| a * z[i]).sum::<f64>()
    };
    // sanity: start must be strictly feasible
    for c in &cons {
        if slack(&z, c) <= 0.0 {
            return Err(OfflineError::NoConvergence {
                residual: -slack(&z, c),
                gap: f64::INFINITY,
            });
        }
    }

    let objective = |z: &DVector<f64>| -> f64 {
        let mut f = 0.0;
        for i in 0..vars_per {
            let th = z[i];
            let al = z[vars_per + i];
            let g = gains_flat[i / x];
            if th > 0.0 {
                f += th * (1.0 + g * al / th).ln();
            }
        }
        f
    };

    let ncon = cons.len() as f64;
    let mut t = 1.0f64.max(ncon / (1.0 + objective(&z).abs()));
    let gap_tol = |f: f64| 1e-9 * (1.0 + f.abs());
    let mut converged = false;
    let mut total_newton = 0usize;

    for _outer in 0..40 {
        // Newton minimization of -t f(z) - sum log slack
        for _inner in 0..120 {
            total_newton += 1;
            if total_newton > 4000 {
                break;
            }
            let mut grad: DVector<f64> = DVector::zeros(dim);
            let mut hess: DMatrix<f64> = DMatrix::zeros(dim, dim);
            // objective part
            for i in 0..vars_per {
                let th: f64 = z[i];
                let al: f64 = z[vars_per + i];
                let g = gains_flat[i / x];
                let den = th + g * al;
                let u = g * al / th;
                grad[i] += -t * ((1.0 + u).ln() - u / (1.0 + u));
                grad[vars_per + i] += -t * (g / (1.0 + u));
                let c = t * g * g / (th * den * den); // -t * (negative curvature)
                hess[(i, i)] += c * al * al;
                hess[(vars_per + i, vars_per + i)] += c * th * th;
                hess[(i, vars_per + i)] -= c * al * th;
                hess[(vars_per + i, i)] -= c * al * th;
            }
            // barrier part
            for c in &cons {
                let s = slack(&z, c);
                let inv = 1.0 / s;
                for &(i, ai) in &c.0 {
                    grad[i] += ai * inv;
                }
                let inv2 = inv * inv;
                for &(i, ai) in &c.0 {
                    for &(j, aj) in &c.0 {
                        hess[(i, j)] += ai * aj * inv2;
                    }
                }
            }
            let chol = match hess.clone().cholesky() {
                Some(c) => c,
                None => {
                    // regularize
                    for i in 0..dim {
                        hess[(i, i)] += 1e-10 * (1.0 + hess[(i, i)].abs());
                    }
                    match hess.cholesky() {
                        Some(c) => c,
                        None => break,
                    }
                }
            };
            let dir = chol.solve(&(-&grad));
            let decrement = -grad.dot(&dir);
            if decrement * 0.5 < 1e-11 {
                break;
            }
            // max feasible step
            let mut step = 1.0f64;
            for c in &cons {
                let ad: f64 = c.0.iter().map(|&(i, a)| a * dir[i]).sum();
                if ad > 0.0 {
                    step = step.min(0.99 * slack(&z, c) / ad);
                }
            }
            // backtracking on the barrier objective
            let phi = |z: &DVector<f64>| -> f64 {
                let mut v = -t * objective(z);
                for c in &cons {
                    let s = slack(z, c);
                    if s <= 0.0 {
                        return f64::INFINITY;
                    }
                    v -= s.ln();
                }
                v
            };
            let phi0 = phi(&z);
            let slope = grad.dot(&dir);
            let mut accepted = false;
            for _ in 0..60 {
                let cand = &z + &dir * step;
                if phi(&cand) <= phi0 + 0.01 * step * slope {
                    z = cand;
                    accepted = true;
                    break;
                }
                step *= 0.5;
            }
            if !accepted {
                break;
            }
        }
        let f = objective(&z);
        if ncon / t < gap_tol(f) {
            converged = true;
            break;
        }
        t *= 10.0;
        if total_newton > 4000 {
            break;
        }
    }

    // Extract allocations and multipliers.
    let f_val = objective(&z);
    let mut alloc = vec![vec![BlockAllocation::zero(x); n]; m_total];
    let mut dumped = 0.0;
    for mi in 0..ma {
        for nn in 0..n {
            let a = &mut alloc[first_active + mi][nn];
            for xx in 0..x {
                let th = z[idx(mi, nn, xx)];
                let al = z[vars_per + idx(mi, nn, xx)];
                if th > THETA_ZERO {
                    a.durations[xx] = th;
                    a.powers[xx] = al / th;
                } else {
                    dumped += al + th * eps[xx];
                }
            }
        }
    }

    let mut mu = vec![0.0; m_total];
    let mut nu = vec![0.0; m_total.saturating_sub(1)];
    let phi_mult = 1.0 / (t * slack(&z, &cons[0]));
    for (k, mh) in (first_active..m_total).enumerate() {
        mu[mh] = 1.0 / (t * slack(&z, &cons[1 + k]));
    }
    for k in 0..battery_count {
        nu[first_active + k] = 1.0 / (t * slack(&z, &cons[battery_start + k]));
    }

    // Residuals from the extracted (cleaned) allocation.
    let residuals = compute_residuals(inst, &alloc, dumped);
    let comp_slack = cons
        .iter()
        .map(|c| {
            let s = slack(&z, c);
            (1.0 / (t * s)) * s
        })
        .fold(0.0f64, f64::max);

    Ok(OfflineSolution {
        alloc,
        throughput: f_val,
        phi: phi_mult,
        mu,
        nu,
        residuals,
        complementary_slackness: comp_slack,
        duality_gap: ncon / t,
        converged,
        dumped_energy: dumped,
    })
}

fn zero_solution(inst: &OfflineInstance) -> OfflineSolution {
    let m = inst.energy.len();
    let n = inst.cfg.blocks_per_epoch;
    let x = inst.cfg.catalog.len();
    OfflineSolution {
        alloc: vec![vec![BlockAllocation::zero(x); n]; m],
        throughput: 0.0,
        phi: 0.0,
        mu: vec![0.0; m],
        nu: vec![0.0; m.saturating_sub(1)],
        residuals: FeasibilityResiduals::default(),
        complementary_slackness: 0.0,
        duality_gap: 0.0,
        converged: true,
        dumped_energy: 0.0,
    }
}

/// With a zero budget nothing can be transmitted; surplus energy that would
/// overflow the battery is burned as zero-duration dump so the battery
/// constraint stays an accounting identity.
fn zero_budget_solution(
    inst: &OfflineInstance,
    cum_e: &[f64],
    _first_active: usize,
) -> OfflineSolution {
    let mut sol = zero_solution(inst);
    let b = inst.cfg.battery_capacity;
    let m = inst.energy.len();
    let mut spent = 0.0;
    for mh in 0..m.saturating_sub(1) {
        let need = (cum_e[mh + 1] - b - spent).max(0.0);
        spent += need;
    }
    sol.dumped_energy = spent;
    sol
}

fn compute_residuals(
    inst: &OfflineInstance,
    alloc: &[Vec<BlockAllocation>],
    dumped: f64,
) -> FeasibilityResiduals {
    let cfg = &inst.cfg;
    let m = inst.energy.len();
    let n = cfg.blocks_per_epoch;
    let l = cfg.slots_per_block as f64;
    let mnl = (m * n) as f64 * l;
    let mut r = FeasibilityResiduals::default();
    let scale_e = 1.0 + inst.energy.iter().sum::<f64>();

    let fh: f64 = alloc
        .iter()
        .flatten()
        .map(|a| a.fronthaul(&cfg.catalog))
        .sum();
    r.fronthaul = (fh / mnl - cfg.fronthaul_budget) / (1.0 + cfg.fronthaul_budget);

    let mut cum_cons = 0.0;
    let mut cum_e = 0.0;
    for mh in 0..m {
        cum_e += inst.energy[mh];
        cum_cons += alloc[mh]
            .iter()
            .map(|a| a.energy(&cfg.catalog))
            .sum::<f64>();
        if mh == 0 {
            cum_cons += dumped; // dump accounted in the first active epoch
        }
        r.causality = r.causality.max((cum_cons - cum_e) / scale_e);
        if mh + 1 < m {
            r.battery = r
                .battery
                .max((cum_e + inst.energy[mh + 1] - cum_cons - cfg.battery_capacity) / scale_e);
        }
    }
    for row in alloc {
        for a in row {
            r.block_length = r.block_length.max((a.total_duration() - l) / l);
            for (&t, &p) in a.durations.iter().zip(&a.powers) {
                r.nonnegativity = r.nonnegativity.max(-t).max(-p);
            }
        }
    }
    r
}

// ---------------------------------------------------------------------------
// Structure verification
// ---------------------------------------------------------------------------

/// Outcome of checking the optimal-structure properties on a solution.
#[derive(Debug, Clone, Default)]
pub struct StructureReport {
    /// Blocks where two selected modes have different powers (> 1e-4).
    pub unequal_power: Vec<String>,
    /// Epochs selecting more than two modes.
    pub too_many_modes: Vec<String>,
    /// Epochs where `p + 1/gain` differs across selected blocks (> 1e-4).
    pub unequal_water_level: Vec<String>,
    /// True when the catalog is collinear and the mode-count check is waived.
    pub collinear_catalog: bool,
}

impl StructureReport {
    pub fn passes(&self) -> bool {
        self.unequal_power.is_empty()
            && self.too_many_modes.is_empty()
            && self.unequal_water_level.is_empty()
    }
}

/// Degenerate catalogs where three modes are collinear in (R, eps) admit
/// optima with more than two modes; detected within 1e-9 relative.
pub fn catalog_is_collinear(cfg: &SystemConfig) -> bool {
    let modes = cfg.catalog.modes();
    let x = modes.len();
    for i in 0..x {
        for j in (i + 1)..x {
            for k in (j + 1)..x {
                let s1 = (modes[j].processing_power - modes[i].processing_power)
                    / (modes[i].fronthaul_rate - modes[j].fronthaul_rate);
                let s2 = (modes[k].processing_power - modes[i].processing_power)
                    / (modes[i].fronthaul_rate - modes[k].fronthaul_rate);
                if (s1 - s2).abs() <= 1e-9 * s1.abs().max(s2.abs()).max(1e-300) {
                    return true;
                }
            }
        }
    }
    false
}

/// Check the structural optimality properties on a solved instance:
/// equal powers across selected modes within a block, at most two selected
/// modes per epoch, and a constant `p + 1/gain` across an epoch's selected
/// blocks.
pub fn verify_structure(sol: &OfflineSolution, inst: &OfflineInstance) -> StructureReport {
    let mut rep = StructureReport {
        collinear_catalog: catalog_is_collinear(&inst.cfg),
        ..Default::default()
    };
    let tol = 1e-4;
    for (m, row) in sol.alloc.iter().enumerate() {
        let mut epoch_modes = std::collections::BTreeSet::new();
        let mut levels: Vec<f64> = Vec::new();
        for (n, a) in row.iter().enumerate() {
            let sel: Vec<usize> = (0..a.durations.len())
                .filter(|&x| a.durations[x] > THETA_SELECTED)
                .collect();
            for &x in &sel {
                epoch_modes.insert(x);
            }
            if sel.len() >= 2 {
                let p0 = a.powers[sel[0]];
                for &x in &sel[1..] {
                    if (a.powers[x] - p0).abs() > tol {
                        rep.unequal_power.push(format!(
                            "epoch {m} block {n}: p[{}]={} vs p[{}]={}",
                            sel[0], p0, x, a.powers[x]
                        ));
                    }
                }
            }
            if let Some(&x) = sel.first() {
                levels.push(a.powers[x] + 1.0 / inst.gains[m][n]);
            }
        }
        if epoch_modes.len() > 2 && !rep.collinear_catalog {
            rep.too_many_modes
                .push(format!("epoch {m}: modes {:?}", epoch_modes));
        }
        if levels.len() >= 2 {
            let base = levels[0];
            for &lv in &levels[1..] {
                if (lv - base).abs() > tol {
                    rep.unequal_water_level
                        .push(format!("epoch {m}: levels {:?}", levels));
                }
            }
        }
    }
    rep
}

// ---------------------------------------------------------------------------
// Relax and round
// ---------------------------------------------------------------------------

/// Integer-duration solution with powers clipped at the max-power cap.
#[derive(Debug, Clone)]
pub struct IntegerSolution {
    pub alloc: Vec<Vec<BlockAllocation>>,
    pub throughput: f64,
    /// Energy lost to the max-power clip.
    pub clip_waste: f64,
    /// Energy left unallocated when rounding had to fall back to rounding
    /// down (budget could not cover the rounded-up processing energy).
    pub rounding_slack: f64,
}

impl IntegerSolution {
    pub fn total_consumed(&self, inst: &OfflineInstance) -> f64 {
        self.alloc
            .iter()
            .flatten()
            .map(|a| a.energy(&inst.cfg.catalog))
            .sum()
    }
}

/// Round a continuous solution to integer slot counts: largest-remainder
/// rounding per mode within each epoch (ties to the better channel), then a
/// pooled per-epoch water-filling of the transmit energy and a single-slot
/// local search (relocate/add/remove) that keeps every constraint intact.
pub fn round_solution(sol: &OfflineSolution, inst: &OfflineInstance) -> IntegerSolution {
    let cfg = &inst.cfg;
    let m_total = inst.energy.len();
    let n = cfg.blocks_per_epoch;
    let x = cfg.catalog.len();
    let l_slots = cfg.slots_per_block;
    let eps: Vec<f64> = cfg
        .catalog
        .modes()
        .iter()
        .map(|m| m.processing_power)
        .collect();
    let rates: Vec<f64> = cfg
        .catalog
        .modes()
        .iter()
        .map(|m| m.fronthaul_rate)
        .collect();

    // integer counts per (epoch, block, mode)
    let mut counts = vec![vec![vec![0usize; x]; n]; m_total];
    for m in 0..m_total {
        let mut cap: Vec<usize> = vec![l_slots; n];
        let mode_total =
            |xx: usize| -> f64 { (0..n).map(|nn| sol.alloc[m][nn].durations[xx]).sum() };
        // dominant mode gets slots first
        let mut order: Vec<usize> = (0..x).collect();
        order.sort_by(|&a, &b| mode_total(b).partial_cmp(&mode_total(a)).unwrap());
        for &xx in &order {
            let total = mode_total(xx);
            if total <= THETA_SELECTED {
                continue;
            }
            let c = round_mode_counts(sol, inst, m, xx, total, &mut cap);
            for nn in 0..n {
                counts[m][nn][xx] = c[nn];
            }
        }
    }

    // every epoch re-spends exactly what the continuous solution consumed
    let pool: Vec<f64> = (0..m_total)
        .map(|m| sol.alloc[m].iter().map(|a| a.energy(&cfg.catalog)).sum())
        .collect();

    // drop slots while idle processing alone overruns the epoch's pool
    for m in 0..m_total {
        loop {
            let proc: f64 = counts[m]
                .iter()
                .flatten()
                .zip((0..n).flat_map(|_| eps.iter()))
                .map(|(&c, &e)| c as f64 * e)
                .sum();
            if proc <= pool[m] + 1e-12 {
                break;
            }
            let victim = (0..n)
                .flat_map(|nn| (0..x).map(move |xx| (nn, xx)))
                .filter(|&(nn, xx)| counts[m][nn][xx] >= 1)
                .min_by(|&(n1, x1), &(n2, x2)| {
                    inst.gains[m][n1]
                        .partial_cmp(&inst.gains[m][n2])
                        .unwrap()
                        .then(eps[x2].partial_cmp(&eps[x1]).unwrap())
                });
            match victim {
                Some((nn, xx)) => counts[m][nn][xx] -= 1,
                None => break,
            }
        }
    }

    // global fronthaul repair: rounding up may overshoot the average budget
    let budget_total = cfg.fronthaul_budget * (m_total * n * l_slots) as f64;
    let mut used: f64 = counts
        .iter()
        .flatten()
        .flatten()
        .zip((0..m_total * n).flat_map(|_| rates.iter()))
        .map(|(&c, &r)| c as f64 * r)
        .sum();
    while used > budget_total + 1e-9 {
        let victim = (0..m_total)
            .flat_map(|m| (0..n).flat_map(move |nn| (0..x).map(move |xx| (m, nn, xx))))
            .filter(|&(m, nn, xx)| counts[m][nn][xx] >= 1)
            .max_by(|&(m1, n1, x1), &(m2, n2, x2)| {
                rates[x1]
                    .partial_cmp(&rates[x2])
                    .unwrap()
                    .then(inst.gains[m2][n2].partial_cmp(&inst.gains[m1][n1]).unwrap())
            });
        match victim {
            Some((m, nn, xx)) => {
                counts[m][nn][xx] -= 1;
                used -= rates[xx];
            }
            None => break,
        }
    }

    // local search: single-slot relocations, additions, and removals within
    // an epoch, scored by the pooled water-filling
    let mut fills: Vec<EpochFill> = (0..m_total)
        .map(|m| epoch_water_fill(&counts[m], &inst.gains[m], pool[m], &eps, cfg.max_power))
        .collect();
    for _ in 0..500 {
        let mut improved = false;
        for m in 0..m_total {
            let mut best: Option<(Vec<Vec<usize>>, EpochFill, f64)> = None;
            let mut consider = |cand: &Vec<Vec<usize>>, delta_fh: f64| {
                if used + delta_fh > budget_total + 1e-9 {
                    return;
                }
                let proc: f64 = cand
                    .iter()
                    .flatten()
                    .zip((0..n).flat_map(|_| eps.iter()))
                    .map(|(&c, &e)| c as f64 * e)
                    .sum();
                if proc > pool[m] + 1e-12 {
                    return;
                }
                let fill = epoch_water_fill(cand, &inst.gains[m], pool[m], &eps, cfg.max_power);
                let incumbent = best
                    .as_ref()
                    .map(|(_, f, _)| f.throughput)
                    .unwrap_or(fills[m].throughput + 1e-10);
                if fill.throughput > incumbent {
                    best = Some((cand.clone(), fill, delta_fh));
                }
            };
            let block_slots =
                |c: &Vec<Vec<usize>>, nn: usize| -> usize { c[nn].iter().sum() };
            for n1 in 0..n {
                for x1 in 0..x {
                    if counts[m][n1][x1] >= 1 {
                        // removal
                        let mut cand = counts[m].clone();
                        cand[n1][x1] -= 1;
                        consider(&cand, -rates[x1]);
                        // relocation
                        for n2 in 0..n {
                            for x2 in 0..x {
                                if (n1, x1) == (n2, x2) {
                                    continue;
                                }
                                if n1 != n2 && block_slots(&counts[m], n2) >= l_slots {
                                    continue;
                                }
                                let mut cand = counts[m].clone();
                                cand[n1][x1] -= 1;
                                cand[n2][x2] += 1;
                                consider(&cand, rates[x2] - rates[x1]);
                            }
                        }
                    }
                }
            }
            for n2 in 0..n {
                if block_slots(&counts[m], n2) >= l_slots {
                    continue;
                }
                for x2 in 0..x {
                    // addition
                    let mut cand = counts[m].clone();
                    cand[n2][x2] += 1;
                    consider(&cand, rates[x2]);
                }
            }
            if let Some((cand, fill, delta_fh)) = best {
                counts[m] = cand;
                fills[m] = fill;
                used += delta_fh;
                improved = true;
            }
        }
        if !improved {
            break;
        }
    }

    // assemble the allocation: every active mode in a block shares the
    // block's water-filled power
    let mut alloc = vec![vec![BlockAllocation::zero(x); n]; m_total];
    let mut throughput = 0.0;
    let mut clip_waste = 0.0;
    let mut rounding_slack = 0.0;
    for m in 0..m_total {
        let fill = &fills[m];
        throughput += fill.throughput;
        clip_waste += fill.clip_waste;
        rounding_slack += (pool[m] - fill.consumed - fill.clip_waste).max(0.0);
        for nn in 0..n {
            for xx in 0..x {
                if counts[m][nn][xx] > 0 {
                    alloc[m][nn].durations[xx] = counts[m][nn][xx] as f64;
                    alloc[m][nn].powers[xx] = fill.powers[nn];
                }
            }
        }
    }

    IntegerSolution {
        alloc,
        throughput,
        clip_waste,
        rounding_slack,
    }
}

/// Result of spending one epoch's energy pool over fixed integer counts.
struct EpochFill {
    /// Per-block transmit power (shared by the block's active modes).
    powers: Vec<f64>,
    throughput: f64,
    consumed: f64,
    clip_waste: f64,
}

/// Optimal powers for fixed integer slot counts: common `p + 1/gain` water
/// level across the epoch's blocks, clamped to `[0, p_max]`, spending
/// `energy` minus the processing overhead.
fn epoch_water_fill(
    counts: &[Vec<usize>],
    gains: &[f64],
    energy: f64,
    eps: &[f64],
    p_max: f64,
) -> EpochFill {
    let n = gains.len();
    let slots: Vec<f64> = counts.iter().map(|row| row.iter().sum::<usize>() as f64).collect();
    let proc: f64 = counts
        .iter()
        .flatten()
        .zip((0..n).flat_map(|_| eps.iter()))
        .map(|(&c, &e)| c as f64 * e)
        .sum();
    let total_slots: f64 = slots.iter().sum();
    if total_slots == 0.0 {
        return EpochFill {
            powers: vec![0.0; n],
            throughput: 0.0,
            consumed: 0.0,
            clip_waste: 0.0,
        };
    }
    let avail = (energy - proc).max(0.0);
    let spend = |w: f64| -> f64 {
        slots
            .iter()
            .zip(gains)
            .map(|(&s, &g)| s * (w - 1.0 / g).max(0.0).min(p_max))
            .sum()
    };
    let max_spend: f64 = total_slots * p_max;
    let powers: Vec<f64>;
    let mut clip_waste = 0.0;
    if avail >= max_spend {
        powers = gains.iter().map(|_| p_max).collect();
        clip_waste = avail - max_spend;
    } else {
        let mut lo = gains.iter().map(|&g| 1.0 / g).fold(f64::INFINITY, f64::min);
        let mut hi = gains
            .iter()
            .map(|&g| 1.0 / g)
            .fold(0.0f64, f64::max)
            + p_max
            + 1.0;
        debug_assert!(spend(hi) >= avail);
        for _ in 0..100 {
            let mid = 0.5 * (lo + hi);
            if spend(mid) < avail {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let w = 0.5 * (lo + hi);
        powers = gains
            .iter()
            .map(|&g| (w - 1.0 / g).max(0.0).min(p_max))
            .collect();
    }
    let throughput: f64 = slots
        .iter()
        .zip(gains)
        .zip(&powers)
        .map(|((&s, &g), &p)| if s > 0.0 { s * (1.0 + g * p).ln() } else { 0.0 })
        .sum();
    let consumed = proc
        + slots
            .iter()
            .zip(&powers)
            .map(|(&s, &p)| s * p)
            .sum::<f64>();
    EpochFill {
        powers,
        throughput,
        consumed,
        clip_waste,
    }
}

/// Largest-remainder rounding of one mode's per-block durations within an
/// epoch; ties and extra slots go to better-channel blocks, respecting the
/// remaining per-block capacity.
fn round_mode_counts(
    sol: &OfflineSolution,
    inst: &OfflineInstance,
    m: usize,
    xx: usize,
    total: f64,
    cap: &mut [usize],
) -> Vec<usize> {
    let n = cap.len();
    let target = total.round() as usize;
    let mut counts: Vec<usize> = (0..n)
        .map(|nn| (sol.alloc[m][nn].durations[xx].floor() as usize).min(cap[nn]))
        .collect();
    for nn in 0..n {
        cap[nn] -= counts[nn];
    }
    let mut have: usize = counts.iter().sum();
    // order blocks by fractional remainder, ties toward larger gain
    let mut by_frac: Vec<usize> = (0..n).collect();
    by_frac.sort_by(|&a, &b| {
        let fa = sol.alloc[m][a].durations[xx].fract();
        let fb = sol.alloc[m][b].durations[xx].fract();
        fb.partial_cmp(&fa)
            .unwrap()
            .then(inst.gains[m][b].partial_cmp(&inst.gains[m][a]).unwrap())
    });
    'outer: while have < target {
        for &nn in &by_frac {
            if cap[nn] > 0 {
                counts[nn] += 1;
                cap[nn] -= 1;
                have += 1;
                continue 'outer;
            }
        }
        break; // no capacity anywhere
    }
    counts
}
