//! End-to-end acceptance suite. Each numbered criterion prints one PASS/FAIL
//! line; the test fails if any criterion fails. Run with `--nocapture` to
//! see the lines on success.

use std::sync::OnceLock;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use ehsplit::closedform::{v3_power, PolicyCase, SingleEpochPolicy};
use ehsplit::experiment::{run_experiment, ExperimentSpec, SweepVariable};
use ehsplit::mdp::{relative_value_iteration, Mdp, MdpParams, TrainedMdp};
use ehsplit::model::{
    config_to_toml, paper_config, validate_config, SplitMode, SystemConfig,
};
use ehsplit::sim::{
    effective_gain, exact_spectral_efficiency, quantile_gains, run_episode, Policy,
};
use ehsplit::{
    glue_pour_power, round_solution, single_epoch_policy, solve_offline, train_mdp,
    verify_structure, HeuristicPolicy, OfflineInstance, SingleEpochProblem,
};

const BUDGETS: [f64; 3] = [1200.0, 3600.0, 12000.0];

fn base_cfg() -> SystemConfig {
    validate_config(paper_config()).unwrap()
}

fn budget_cfg(budget: f64) -> SystemConfig {
    let mut cfg = base_cfg();
    cfg.fronthaul_budget = budget;
    cfg
}

/// MDP policies are expensive to calibrate; train each budget once and share
/// across criteria 5, 6, and 7.
fn trained_mdps() -> &'static Vec<(f64, TrainedMdp)> {
    static CACHE: OnceLock<Vec<(f64, TrainedMdp)>> = OnceLock::new();
    CACHE.get_or_init(|| {
        BUDGETS
            .iter()
            .map(|&d| {
                let cfg = budget_cfg(d);
                let t = train_mdp(&cfg, d, &MdpParams::default())
                    .unwrap_or_else(|e| panic!("training failed at D={d}: {e}"));
                (d, t)
            })
            .collect()
    })
}

struct Outcome {
    label: &'static str,
    pass: bool,
    detail: String,
}

fn check(label: &'static str, result: Result<String, String>) -> Outcome {
    match result {
        Ok(detail) => Outcome {
            label,
            pass: true,
            detail,
        },
        Err(detail) => Outcome {
            label,
            pass: false,
            detail,
        },
    }
}

// ---------------------------------------------------------------------------
// criteria 1 & 2: offline optimizer structure on random instances
// ---------------------------------------------------------------------------

fn random_instances(count: usize, seed: u64) -> Vec<OfflineInstance> {
    let mut rng = StdRng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let mut cfg = paper_config();
            cfg.epochs = rng.gen_range(1..=4);
            cfg.blocks_per_epoch = rng.gen_range(1..=4);
            cfg.fronthaul_budget = rng.gen_range(400.0..12_000.0);
            let cfg = validate_config(cfg).unwrap();
            let energy: Vec<f64> = (0..cfg.epochs)
                .map(|_| rng.gen_range(0.0..0.5 * cfg.battery_capacity))
                .collect();
            let gains: Vec<Vec<f64>> = (0..cfg.epochs)
                .map(|_| {
                    (0..cfg.blocks_per_epoch)
                        .map(|_| rng.gen_range(0.2..6.0))
                        .collect()
                })
                .collect();
            OfflineInstance::new(cfg, energy, gains).unwrap()
        })
        .collect()
}

fn criteria_1_2() -> (Outcome, Outcome) {
    let started = Instant::now();
    let instances = random_instances(100, 2001);
    let mut power_violations = Vec::new();
    let mut mode_violations = Vec::new();
    for (i, inst) in instances.iter().enumerate() {
        let sol = match solve_offline(inst) {
            Ok(s) => s,
            Err(e) => {
                power_violations.push(format!("instance {i}: solve failed: {e}"));
                continue;
            }
        };
        let rep = verify_structure(&sol, inst);
        if !rep.unequal_power.is_empty() || !rep.unequal_water_level.is_empty() {
            power_violations.push(format!(
                "instance {i}: {:?} {:?}",
                rep.unequal_power, rep.unequal_water_level
            ));
        }
        if !rep.too_many_modes.is_empty() {
            mode_violations.push(format!("instance {i}: {:?}", rep.too_many_modes));
        }
    }
    let elapsed = started.elapsed();
    let c1 = if power_violations.is_empty() && elapsed.as_secs() < 60 {
        Ok(format!(
            "100 instances, equal powers and constant water level, {elapsed:.2?}"
        ))
    } else {
        Err(format!(
            "{} violations, {elapsed:.2?}: {:?}",
            power_violations.len(),
            power_violations.first()
        ))
    };
    let c2 = if mode_violations.is_empty() {
        Ok("at most two modes per epoch on all 100 instances".into())
    } else {
        Err(format!(
            "{} violations: {:?}",
            mode_violations.len(),
            mode_violations.first()
        ))
    };
    (
        check("criterion 1 (per-block structure)", c1),
        check("criterion 2 (two-mode property)", c2),
    )
}

// ---------------------------------------------------------------------------
// criterion 3: closed form vs a brute-force duration grid
// ---------------------------------------------------------------------------

fn random_problem(rng: &mut StdRng) -> (SingleEpochProblem, f64) {
    let r1 = rng.gen_range(2_000.0..10_000.0);
    let r2 = rng.gen_range(200.0..0.8 * r1);
    let e1 = rng.gen_range(0.5..3.0);
    let e2 = rng.gen_range(e1 + 0.5..6.5);
    let horizon = rng.gen_range(4..=16) as f64;
    let p_max = 20.0;
    let prob = SingleEpochProblem {
        energy: rng.gen_range(1.0..horizon * (p_max + e2)),
        horizon,
        gain: rng.gen_range(0.3..5.0),
        budget: rng.gen_range(0.1 * r2..1.2 * r1),
        mode1: SplitMode {
            id: 1,
            fronthaul_rate: r1,
            processing_power: e1,
        },
        mode2: SplitMode {
            id: 2,
            fronthaul_rate: r2,
            processing_power: e2,
        },
    };
    (prob, p_max)
}

/// Brute force over a duration grid; powers equalized over the active slots
/// (optimal for a common gain), energy beyond the power cap dumped. A coarse
/// full scan is followed by two local refinements around the incumbent so
/// that duration discretization error does not dominate the comparison.
fn grid_oracle(prob: &SingleEpochProblem, p_max: f64, step: f64) -> f64 {
    let t = prob.horizon;
    let (r1, e1) = (prob.mode1.fronthaul_rate, prob.mode1.processing_power);
    let (r2, e2) = (prob.mode2.fronthaul_rate, prob.mode2.processing_power);
    let cap = prob.budget * t;
    let eval = |th1: f64, th2: f64| -> f64 {
        let dur = th1 + th2;
        if th1 < 0.0 || th2 < 0.0 || dur <= 0.0 || dur > t {
            return 0.0;
        }
        if th1 * r1 + th2 * r2 > cap {
            return 0.0;
        }
        let avail = prob.energy - th1 * e1 - th2 * e2;
        if avail <= 0.0 {
            return 0.0;
        }
        let p = (avail / dur).min(p_max);
        dur * (1.0 + prob.gain * p).ln()
    };
    let steps = (t / step).round() as usize;
    let mut best = 0.0f64;
    let mut arg = (0.0f64, 0.0f64);
    for i in 0..=steps {
        let th1 = i as f64 * step;
        if th1 * r1 > cap {
            break;
        }
        let left = t - th1;
        let j_max = (((cap - th1 * r1) / r2).min(left) / step).floor() as usize;
        for j in 0..=j_max {
            let th2 = j as f64 * step;
            let val = eval(th1, th2);
            if val > best {
                best = val;
                arg = (th1, th2);
            }
        }
    }
    // refine around the incumbent at 10x and 100x resolution
    let mut fine = step;
    for _ in 0..2 {
        fine /= 10.0;
        let (c1, c2) = arg;
        for i in -20..=20i64 {
            for j in -20..=20i64 {
                let th1 = c1 + i as f64 * fine;
                let th2 = (c2 + j as f64 * fine).min(t - th1);
                let val = eval(th1, th2);
                if val > best {
                    best = val;
                    arg = (th1, th2);
                }
            }
        }
    }
    best
}

fn throughput_at(prob: &SingleEpochProblem, energy: f64, p_max: f64) -> SingleEpochPolicy {
    let mut q = prob.clone();
    q.energy = energy;
    single_epoch_policy(&q, p_max)
}

fn criterion_3() -> Outcome {
    let started = Instant::now();
    let mut rng = StdRng::seed_from_u64(303);
    let mut worst: f64 = 0.0;
    for i in 0..200 {
        let (prob, p_max) = random_problem(&mut rng);
        let pol = single_epoch_policy(&prob, p_max);
        let oracle = grid_oracle(&prob, p_max, prob.horizon * 1e-3);
        let scale = oracle.max(1e-9);
        let rel = (pol.throughput - oracle).abs() / scale;
        worst = worst.max(rel);
        if rel > 1e-3 {
            return check(
                "criterion 3 (closed form vs grid)",
                Err(format!(
                    "problem {i}: policy {:.9} vs grid {:.9} ({rel:.2e} relative)",
                    pol.throughput, oracle
                )),
            );
        }
    }
    // continuity across regime boundaries: scan the energy axis and compare
    // throughput on the two sides of every case change
    let mut boundaries = 0;
    for _ in 0..20 {
        let (prob, p_max) = random_problem(&mut rng);
        let e_hi = prob.horizon * (p_max + prob.mode2.processing_power);
        let grid: Vec<f64> = (1..=400).map(|k| e_hi * k as f64 / 400.0).collect();
        let mut prev: Option<(f64, PolicyCase)> = None;
        for &e in &grid {
            let case = throughput_at(&prob, e, p_max).case;
            if let Some((e_prev, case_prev)) = prev {
                if case != case_prev {
                    boundaries += 1;
                    let mid = 0.5 * (e_prev + e);
                    let delta = 1e-7 * e_hi;
                    let lo = throughput_at(&prob, mid - delta, p_max).throughput;
                    let hi = throughput_at(&prob, mid + delta, p_max).throughput;
                    let rel = (hi - lo).abs() / (1.0 + lo.abs());
                    if rel > 1e-4 {
                        return check(
                            "criterion 3 (closed form vs grid)",
                            Err(format!(
                                "jump {rel:.2e} at case boundary {case_prev:?}->{case:?}"
                            )),
                        );
                    }
                }
            }
            prev = Some((e, case));
        }
    }
    let elapsed = started.elapsed();
    let result = if elapsed.as_secs() < 120 {
        Ok(format!(
            "200 problems within 0.1% of the grid (worst {worst:.2e}), {boundaries} continuous boundaries, {elapsed:.2?}"
        ))
    } else {
        Err(format!("too slow: {elapsed:.2?}"))
    };
    check("criterion 3 (closed form vs grid)", result)
}

// ---------------------------------------------------------------------------
// criterion 4: glue-pouring fixed points
// ---------------------------------------------------------------------------

fn criterion_4() -> Outcome {
    let cfg = base_cfg();
    for &gain in &cfg.channel.gains {
        let mut prev = 0.0;
        for k in 1..=20 {
            let eps = 0.4 * k as f64;
            let v = glue_pour_power(gain, eps);
            let gv = gain * v;
            let residual = ((1.0 + gv) * (1.0 + gv).ln() - gv - gain * eps).abs();
            if residual > 1e-9 {
                return check(
                    "criterion 4 (glue-pouring fixed points)",
                    Err(format!("residual {residual:.2e} at gain {gain}, eps {eps}")),
                );
            }
            if v <= prev {
                return check(
                    "criterion 4 (glue-pouring fixed points)",
                    Err(format!("v* not increasing at gain {gain}, eps {eps}")),
                );
            }
            prev = v;
        }
    }
    let modes = cfg.catalog.modes();
    for &gain in &quantile_gains(2.0, 4) {
        let v1 = glue_pour_power(gain, modes[0].processing_power);
        let v3 = v3_power(gain, modes[0].clone(), modes[2].clone());
        if v3 <= v1 {
            return check(
                "criterion 4 (glue-pouring fixed points)",
                Err(format!("v3 {v3:.4} <= v1 {v1:.4} at gain {gain:.4}")),
            );
        }
    }
    check(
        "criterion 4 (glue-pouring fixed points)",
        Ok("residuals < 1e-9, v* strictly increasing, v3 > v1 at every quantile".into()),
    )
}

// ---------------------------------------------------------------------------
// criterion 5: value iteration vs exhaustive policy enumeration
// ---------------------------------------------------------------------------

struct TableMdp {
    r: Vec<Vec<f64>>,
    p: Vec<Vec<Vec<f64>>>,
}

impl Mdp for TableMdp {
    fn num_states(&self) -> usize {
        self.r.len()
    }
    fn num_actions(&self, s: usize) -> usize {
        self.r[s].len()
    }
    fn reward(&self, s: usize, a: usize) -> f64 {
        self.r[s][a]
    }
    fn for_each_successor(&self, s: usize, a: usize, f: &mut dyn FnMut(usize, f64)) {
        for (s2, &pr) in self.p[s][a].iter().enumerate() {
            if pr > 0.0 {
                f(s2, pr);
            }
        }
    }
}

fn policy_gain(m: &TableMdp, policy: &[usize]) -> f64 {
    let n = m.num_states();
    let mut a = DMatrix::zeros(n + 1, n);
    for s in 0..n {
        for s2 in 0..n {
            a[(s2, s)] = m.p[s][policy[s]][s2] - if s == s2 { 1.0 } else { 0.0 };
        }
    }
    for s in 0..n {
        a[(n, s)] = 1.0;
    }
    let mut b = DVector::zeros(n + 1);
    b[n] = 1.0;
    let rho = (a.transpose() * &a)
        .lu()
        .solve(&(a.transpose() * b))
        .unwrap();
    (0..n).map(|s| rho[s] * m.r[s][policy[s]]).sum()
}

fn criterion_5() -> Outcome {
    let mut rng = StdRng::seed_from_u64(505);
    for trial in 0..20 {
        let ns: usize = rng.gen_range(2..=5);
        let na: usize = rng.gen_range(2..=3);
        let r: Vec<Vec<f64>> = (0..ns)
            .map(|_| (0..na).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let p: Vec<Vec<Vec<f64>>> = (0..ns)
            .map(|_| {
                (0..na)
                    .map(|_| {
                        let row: Vec<f64> = (0..ns).map(|_| rng.gen_range(0.05..1.0)).collect();
                        let sum: f64 = row.iter().sum();
                        row.into_iter().map(|v| v / sum).collect()
                    })
                    .collect()
            })
            .collect();
        let m = TableMdp { r, p };
        let res = relative_value_iteration(&m, 0.99, 1e-9, 200_000, 20, None);
        // enumerate all stationary deterministic policies
        let mut best = f64::NEG_INFINITY;
        let total = na.pow(ns as u32);
        for code in 0..total {
            let mut c = code;
            let policy: Vec<usize> = (0..ns)
                .map(|_| {
                    let a = c % na;
                    c /= na;
                    a
                })
                .collect();
            best = best.max(policy_gain(&m, &policy));
        }
        if (res.lambda - best).abs() > 1e-6 {
            return check(
                "criterion 5 (value iteration)",
                Err(format!(
                    "trial {trial}: lambda {:.9} vs enumerated {best:.9}",
                    res.lambda
                )),
            );
        }
    }
    // full-size model: calibration converged for every budget (training
    // errors out on non-convergence)
    let sweeps: usize = trained_mdps().iter().map(|(_, t)| t.rvi_sweeps).sum();
    check(
        "criterion 5 (value iteration)",
        Ok(format!(
            "20 random MDPs match enumeration within 1e-6; full model converged ({sweeps} sweeps total)"
        )),
    )
}

// ---------------------------------------------------------------------------
// criteria 6, 7, 9: simulated budget compliance, policy ordering, conservation
// ---------------------------------------------------------------------------

struct PolicyPoint {
    mean: f64,
    stderr: f64,
    fronthaul: f64,
}

/// 10 episodes x 10^4 slots with common random numbers; also enforces the
/// conservation identity and battery bounds on every episode (criterion 9).
fn simulate(
    cfg: &SystemConfig,
    policy: &mut dyn Policy,
    conservation_failures: &mut Vec<String>,
) -> PolicyPoint {
    let episodes = 10;
    let horizon = 10_000;
    let mut thr = Vec::new();
    let mut fh = Vec::new();
    for ep in 0..episodes {
        let trace = run_episode(cfg, policy, horizon, 4242, ep);
        let residual = trace.conservation_residual().abs();
        let scale = 1.0 + trace.summary.total_arrivals.abs();
        if residual > 1e-6 * scale {
            conservation_failures.push(format!(
                "{}: episode {ep} residual {residual:.3e}",
                policy.name()
            ));
        }
        for r in &trace.records {
            if r.battery_after < -1e-9 || r.battery_after > cfg.battery_capacity + 1e-9 {
                conservation_failures.push(format!(
                    "{}: episode {ep} battery {:.3} out of bounds",
                    policy.name(),
                    r.battery_after
                ));
                break;
            }
        }
        thr.push(trace.summary.mean_throughput);
        fh.push(trace.summary.mean_fronthaul);
    }
    let (mean, stderr) = ehsplit::sim::mean_stderr(&thr);
    let (fronthaul, _) = ehsplit::sim::mean_stderr(&fh);
    PolicyPoint {
        mean,
        stderr,
        fronthaul,
    }
}

fn offline_means(cfg: &SystemConfig, episodes: usize) -> (f64, f64, Vec<f64>) {
    let slots = (cfg.epochs * cfg.slots_per_epoch()) as f64;
    let mut upper = 0.0;
    let mut rounded = 0.0;
    let mut fixed = vec![0.0; cfg.catalog.len()];
    for ep in 0..episodes {
        let inst = OfflineInstance::sample(cfg, 4242, ep as u64);
        let sol = solve_offline(&inst).unwrap();
        upper += sol.throughput / slots / episodes as f64;
        let mut best_int = round_solution(&sol, &inst).throughput;
        for k in 0..cfg.catalog.len() {
            let mut sub = cfg.clone();
            sub.catalog = cfg.catalog.single(k);
            let sub_inst =
                OfflineInstance::new(sub, inst.energy.clone(), inst.gains.clone()).unwrap();
            let sub_sol = solve_offline(&sub_inst).unwrap();
            let int = round_solution(&sub_sol, &sub_inst).throughput;
            fixed[k] += int / slots / episodes as f64;
            best_int = best_int.max(int);
        }
        rounded += best_int / slots / episodes as f64;
    }
    (upper, rounded, fixed)
}

fn criteria_6_7_9() -> (Outcome, Outcome, Outcome) {
    let started = Instant::now();
    let mut compliance = Vec::new();
    let mut ordering = Vec::new();
    let mut conservation = Vec::new();

    for (d, trained) in trained_mdps() {
        let cfg = budget_cfg(*d);
        let mut mdp_pol = trained.policy();
        let mut heu_pol = HeuristicPolicy::from_config(&cfg);
        let mdp = simulate(&cfg, &mut mdp_pol, &mut conservation);
        let heu = simulate(&cfg, &mut heu_pol, &mut conservation);
        for (name, point) in [("mdp", &mdp), ("heuristic", &heu)] {
            if point.fronthaul > 1.02 * d {
                compliance.push(format!(
                    "{name} at D={d}: fronthaul {:.1} > 1.02 budget",
                    point.fronthaul
                ));
            }
        }

        // The offline bound is per sample path: compare it against the online
        // policies on the same finite episodes (identical random streams), not
        // against the steady-state runs above.
        let matched_eps = 16usize;
        let horizon = cfg.epochs * cfg.slots_per_epoch();
        let (upper, rounded, fixed) = offline_means(&cfg, matched_eps);
        let mut matched = Vec::new();
        {
            let mut pol = trained.policy();
            for ep in 0..matched_eps {
                let trace = run_episode(&cfg, &mut pol, horizon, 4242, ep as u64);
                matched.push(trace.summary.mean_throughput);
            }
        }
        let (mdp_matched, mdp_matched_se) = ehsplit::sim::mean_stderr(&matched);
        if rounded > upper + 1e-9 {
            ordering.push(format!("D={d}: rounded {rounded:.4} above upper {upper:.4}"));
        }
        if rounded < 0.97 * upper {
            ordering.push(format!(
                "D={d}: rounded {rounded:.4} more than 3% below upper {upper:.4}"
            ));
        }
        if rounded < mdp_matched - 3.0 * mdp_matched_se {
            ordering.push(format!(
                "D={d}: mdp {mdp_matched:.4} above rounded {rounded:.4} beyond noise on matched episodes"
            ));
        }
        if mdp.mean < heu.mean - 3.0 * heu.stderr {
            ordering.push(format!(
                "D={d}: heuristic {:.4} above mdp {:.4} beyond noise",
                heu.mean, mdp.mean
            ));
        }
        if heu.mean < 0.9 * mdp.mean {
            ordering.push(format!(
                "D={d}: heuristic {:.4} more than 10% below mdp {:.4}",
                heu.mean, mdp.mean
            ));
        }
        for (k, &f) in fixed.iter().enumerate() {
            if rounded < f - 1e-9 {
                ordering.push(format!(
                    "D={d}: fixed-{} {f:.4} above flexible {rounded:.4}",
                    k + 1
                ));
            }
        }
    }
    let elapsed = started.elapsed();
    if elapsed.as_secs() >= 600 {
        ordering.push(format!("suite too slow: {elapsed:.2?}"));
    }

    let c6 = if compliance.is_empty() {
        Ok(format!(
            "fronthaul within 1.02 D at D in {BUDGETS:?} over 1e5 slots each"
        ))
    } else {
        Err(compliance.join("; "))
    };
    let c7 = if ordering.is_empty() {
        Ok(format!(
            "upper >= rounded >= mdp >= heuristic holds at every budget, {elapsed:.2?}"
        ))
    } else {
        Err(ordering.join("; "))
    };
    let c9 = if conservation.is_empty() {
        Ok("energy balance exact and battery in bounds on every episode".into())
    } else {
        Err(conservation.join("; "))
    };
    (
        check("criterion 6 (fronthaul compliance)", c6),
        check("criterion 7 (policy ordering)", c7),
        check("criterion 9 (simulator conservation)", c9),
    )
}

// ---------------------------------------------------------------------------
// criterion 8: figure shapes
// ---------------------------------------------------------------------------

fn sweep(
    dir: &std::path::Path,
    variable: SweepVariable,
    grid: Vec<f64>,
    policies: &[&str],
) -> Vec<ehsplit::experiment::ResultRow> {
    let cfg_path = dir.join("acceptance_base.cfg");
    std::fs::write(&cfg_path, config_to_toml(&base_cfg())).unwrap();
    let spec = ExperimentSpec {
        config: cfg_path,
        variable,
        grid,
        policies: policies.iter().map(|s| s.to_string()).collect(),
        episodes: 6,
        horizon: 1,
        seed: 808,
        battery_levels: None,
    };
    run_experiment(&spec).unwrap()
}

fn r_squared(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    if sxx == 0.0 || syy == 0.0 {
        return 1.0;
    }
    (sxy * sxy) / (sxx * syy)
}

fn criterion_8() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let label = "criterion 8 (figure shapes)";

    // budget sweep: concave increasing, fixed-3 matches at the low end,
    // fixed-1 at the high end
    let d_grid = vec![600.0, 1200.0, 2400.0, 3600.0, 6000.0, 12_000.0];
    let rows = sweep(
        dir.path(),
        SweepVariable::FronthaulBudget,
        d_grid.clone(),
        &["offline-upper", "offline-rounded", "fixed-1", "fixed-3"],
    );
    let series = |policy: &str| -> Vec<f64> {
        d_grid
            .iter()
            .map(|&d| {
                rows.iter()
                    .find(|r| r.value == d && r.policy == policy)
                    .unwrap()
                    .mean_throughput
            })
            .collect()
    };
    let upper = series("offline-upper");
    let flex = series("offline-rounded");
    let fixed1 = series("fixed-1");
    let fixed3 = series("fixed-3");
    let mut prev_slope = f64::INFINITY;
    for i in 1..d_grid.len() {
        if upper[i] < upper[i - 1] - 1e-9 {
            return check(label, Err(format!("throughput decreased at D={}", d_grid[i])));
        }
        let slope = (upper[i] - upper[i - 1]) / (d_grid[i] - d_grid[i - 1]);
        if slope > prev_slope * (1.0 + 1e-6) {
            return check(label, Err(format!("not concave at D={}", d_grid[i])));
        }
        prev_slope = slope;
    }
    if fixed3[0] < 0.97 * flex[0] {
        return check(
            label,
            Err(format!(
                "lowest-rate mode {:.4} not within 3% of flexible {:.4} at small D",
                fixed3[0], flex[0]
            )),
        );
    }
    let last = d_grid.len() - 1;
    if fixed1[last] < 0.97 * flex[last] {
        return check(
            label,
            Err(format!(
                "highest-rate mode {:.4} not within 3% of flexible {:.4} at large D",
                fixed1[last], flex[last]
            )),
        );
    }

    // energy sweep: near-linear growth on the lower third (keep the low end
    // well inside the energy-starved regime, where bursts scale with arrivals)
    let e_grid: Vec<f64> = (1..=12).map(|k| 0.5 * k as f64).collect();
    let rows = sweep(
        dir.path(),
        SweepVariable::EnergyRate,
        e_grid.clone(),
        &["offline-upper"],
    );
    let thr: Vec<f64> = e_grid
        .iter()
        .map(|&v| {
            rows.iter()
                .find(|r| r.value == v && r.policy == "offline-upper")
                .unwrap()
                .mean_throughput
        })
        .collect();
    let third = e_grid.len() / 3;
    let r2 = r_squared(&e_grid[..third.max(3)], &thr[..third.max(3)]);
    if r2 < 0.99 {
        return check(label, Err(format!("lower-third R^2 {r2:.4} < 0.99")));
    }

    // battery sweep: curves coincide at a small arrival rate
    let mut small_e = base_cfg();
    small_e.energy = ehsplit::model::EnergyArrivalLaw::poisson(
        1.0,
        small_e.slots_per_epoch() as f64,
        small_e.battery_capacity,
    );
    let cfg_path = dir.path().join("small_e.cfg");
    std::fs::write(&cfg_path, config_to_toml(&small_e)).unwrap();
    let spec = ExperimentSpec {
        config: cfg_path,
        variable: SweepVariable::BatteryCapacity,
        grid: vec![250.0, 500.0, 1000.0, 2000.0],
        policies: vec!["offline-upper".into()],
        episodes: 6,
        horizon: 1,
        seed: 808,
        battery_levels: None,
    };
    let rows = run_experiment(&spec).unwrap();
    let vals: Vec<f64> = rows.iter().map(|r| r.mean_throughput).collect();
    let lo = vals.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if hi > lo * 1.01 {
        return check(
            label,
            Err(format!("battery curves spread {:.2}% > 1%", 100.0 * (hi / lo - 1.0))),
        );
    }

    check(
        label,
        Ok(format!(
            "budget sweep concave, extremes match ({:.1}%, {:.1}%), energy R^2 {r2:.4}, battery spread {:.2}%",
            100.0 * fixed3[0] / flex[0],
            100.0 * fixed1[last] / flex[last],
            100.0 * (hi / lo - 1.0)
        )),
    )
}

// ---------------------------------------------------------------------------
// criterion 10: effective-gain approximation
// ---------------------------------------------------------------------------

fn criterion_10() -> Outcome {
    let mut rng = StdRng::seed_from_u64(1010);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let c = rng.gen_range(2..=8);
        let power = rng.gen_range(10.0..20.0);
        let gains: Vec<f64> = (0..c)
            .map(|_| rng.gen_range(10.0 / power..50.0 / power) * rng.gen_range(1.0..3.0))
            .collect();
        debug_assert!(gains.iter().all(|&g| g * power >= 10.0));
        let approx = (1.0 + effective_gain(&gains) * power).ln();
        let exact = exact_spectral_efficiency(&gains, power);
        let rel = (approx - exact).abs() / exact;
        worst = worst.max(rel);
        if rel > 0.02 {
            return check(
                "criterion 10 (multi-carrier approximation)",
                Err(format!("relative error {rel:.4} > 2%")),
            );
        }
    }
    check(
        "criterion 10 (multi-carrier approximation)",
        Ok(format!("1000 gain vectors within 2% (worst {worst:.4})")),
    )
}

// ---------------------------------------------------------------------------

#[test]
fn acceptance_criteria() {
    let mut outcomes = Vec::new();
    let (c1, c2) = criteria_1_2();
    outcomes.push(c1);
    outcomes.push(c2);
    outcomes.push(criterion_3());
    outcomes.push(criterion_4());
    outcomes.push(criterion_5());
    let (c6, c7, c9) = criteria_6_7_9();
    outcomes.push(c6);
    outcomes.push(c7);
    outcomes.push(criterion_8());
    outcomes.push(c9);
    outcomes.push(criterion_10());

    let mut failed = false;
    for o in &outcomes {
        println!(
            "{}: {} — {}",
            o.label,
            if o.pass { "PASS" } else { "FAIL" },
            o.detail
        );
        failed |= !o.pass;
    }
    assert!(!failed, "one or more acceptance criteria failed");
}
