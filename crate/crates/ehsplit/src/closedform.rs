//! Exact single-epoch, constant-channel policy for one or two split modes,
//! extended to larger catalogs by pairwise enumeration.
//!
//! With a fixed processing power, the throughput-optimal burst power is the
//! unique root of the glue-pouring equation
//! `(1 + g v) ln(1 + g v) - g v = g e`. Mixing two modes to meet the
//! fronthaul budget with equality shares a common burst power that solves
//! the same equation at an effective processing power.

use crate::model::{ModeCatalog, SplitMode};

/// Dispatch tag naming which regime of the case analysis produced a policy.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PolicyCase {
    /// No energy, no budget, or nothing worth transmitting.
    Zero,
    /// Single mode bursting at its glue-pouring power for part of the horizon.
    GluePour,
    /// Single mode over the whole horizon, power set by energy exhaustion.
    FullHorizon,
    /// Single mode pinned to the fronthaul limit, power rising with energy.
    FronthaulPinnedHigh,
    /// Two modes mixed at the shared burst power, fronthaul met with equality.
    TwoModeMix,
    /// Durations pinned by the horizon and fronthaul equality, power rising.
    HorizonPinned,
    /// Low-rate mode alone pinned to the fronthaul limit.
    FronthaulPinnedLow,
}

/// Single-epoch instance: spend energy `energy` over `horizon` slots at
/// constant gain, under a per-slot average fronthaul budget.
#[derive(Debug, Clone, Copy)]
pub struct SingleEpochProblem {
    pub energy: f64,
    pub horizon: f64,
    pub gain: f64,
    pub budget: f64,
    /// Higher-fronthaul, lower-processing mode.
    pub mode1: SplitMode,
    /// Lower-fronthaul, higher-processing mode.
    pub mode2: SplitMode,
}

impl SingleEpochProblem {
    pub fn validate(&self) -> Result<(), String> {
        if self.energy < 0.0 {
            return Err("energy must be >= 0".into());
        }
        if !(self.horizon > 0.0) {
            return Err("horizon must be > 0".into());
        }
        if !(self.gain > 0.0) {
            return Err("gain must be > 0".into());
        }
        if self.budget < 0.0 {
            return Err("budget must be >= 0".into());
        }
        if !(self.mode1.fronthaul_rate > self.mode2.fronthaul_rate
            && self.mode1.processing_power < self.mode2.processing_power)
        {
            return Err("mode pair must satisfy R1 > R2, e1 < e2".into());
        }
        Ok(())
    }
}

/// Result of the case analysis; durations/powers are indexed like the
/// producing call (pair order for [`single_epoch_policy`], catalog order for
/// [`best_pair_policy`]).
#[derive(Debug, Clone)]
pub struct SingleEpochPolicy {
    pub durations: Vec<f64>,
    pub powers: Vec<f64>,
    /// Nats, computed at the (possibly capped) powers.
    pub throughput: f64,
    pub case: PolicyCase,
    /// True when the max-power cap reduced a power below its optimum.
    pub power_capped: bool,
}

impl SingleEpochPolicy {
    fn zero(n: usize) -> Self {
        SingleEpochPolicy {
            durations: vec![0.0; n],
            powers: vec![0.0; n],
            throughput: 0.0,
            case: PolicyCase::Zero,
            power_capped: false,
        }
    }
}

/// Optimal burst power for processing power `epsilon` at gain `gain`:
/// the unique `v >= 0` with `(1+gv)ln(1+gv) - gv = g*epsilon`.
///
/// Bisection with a doubling upper bracket; the left side is strictly
/// increasing in `v`, so the root is unique.
pub fn glue_pour_power(gain: f64, epsilon: f64) -> f64 {
    assert!(gain > 0.0, "gain must be positive");
    assert!(epsilon >= 0.0, "processing power must be nonnegative");
    if epsilon == 0.0 {
        return 0.0;
    }
    let f = |v: f64| {
        let gv = gain * v;
        (1.0 + gv) * (1.0 + gv).ln() - gv - gain * epsilon
    };
    let mut hi = 1.0;
    while f(hi) < 0.0 {
        hi *= 2.0;
        if hi > 1e18 {
            break;
        }
    }
    let mut lo = 0.0;
    while hi - lo > 1e-10 {
        let mid = 0.5 * (lo + hi);
        if f(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Shared burst power when the two modes are mixed with the fronthaul met
/// with equality; glue pouring at the effective processing power
/// `e2 + R2 (e2 - e1) / (R1 - R2)`.
pub fn v3_power(gain: f64, mode1: SplitMode, mode2: SplitMode) -> f64 {
    let (r1, e1) = (mode1.fronthaul_rate, mode1.processing_power);
    let (r2, e2) = (mode2.fronthaul_rate, mode2.processing_power);
    let eff = e2 + r2 * (e2 - e1) / (r1 - r2);
    glue_pour_power(gain, eff)
}

fn rate(gain: f64, p: f64) -> f64 {
    (1.0 + gain * p).ln()
}

/// Optimal single-mode policy: glue pouring while energy is short, then the
/// duration pins at `min(DT/R, T)` and the power absorbs the rest.
fn single_mode_policy(
    energy: f64,
    horizon: f64,
    gain: f64,
    budget: f64,
    mode: SplitMode,
    max_power: f64,
) -> (f64, f64, PolicyCase, bool) {
    let theta_max = (budget * horizon / mode.fronthaul_rate).min(horizon);
    if energy <= 0.0 || theta_max <= 0.0 {
        return (0.0, 0.0, PolicyCase::Zero, false);
    }
    let v = glue_pour_power(gain, mode.processing_power);
    let (theta, p, case) = if energy < theta_max * (v + mode.processing_power) {
        (energy / (v + mode.processing_power), v, PolicyCase::GluePour)
    } else if theta_max >= horizon {
        (horizon, energy / horizon - mode.processing_power, PolicyCase::FullHorizon)
    } else {
        (
            theta_max,
            energy / theta_max - mode.processing_power,
            PolicyCase::FronthaulPinnedHigh,
        )
    };
    let capped = p > max_power;
    (theta, p.min(max_power), case, capped)
}

/// The function `f(E, T, gamma, D)` for a fixed mode pair: full case
/// dispatch over the budget regimes. Powers are capped at `max_power`
/// afterwards, flagged when the cap binds.
pub fn single_epoch_policy(prob: &SingleEpochProblem, max_power: f64) -> SingleEpochPolicy {
    debug_assert!(prob.validate().is_ok(), "invalid problem: {prob:?}");
    let SingleEpochProblem {
        energy: e_tot,
        horizon: t,
        gain,
        budget: d,
        mode1,
        mode2,
    } = *prob;
    let (r1, e1) = (mode1.fronthaul_rate, mode1.processing_power);
    let (r2, e2) = (mode2.fronthaul_rate, mode2.processing_power);

    if e_tot <= 0.0 || d <= 0.0 {
        return SingleEpochPolicy::zero(2);
    }

    // D >= R1: the budget never binds, the cheap mode alone is optimal.
    if d >= r1 {
        let (theta, p, case, capped) = single_mode_policy(e_tot, t, gain, d, mode1, max_power);
        return finish(vec![theta, 0.0], vec![p, 0.0], gain, case, capped);
    }

    let v1 = glue_pour_power(gain, e1);
    let v3 = v3_power(gain, mode1, mode2);
    let dt = d * t;

    // Shared first two regimes of both remaining branches.
    if e_tot <= dt * (v1 + e1) / r1 {
        let theta = e_tot / (v1 + e1);
        let capped = v1 > max_power;
        return finish(
            vec![theta, 0.0],
            vec![v1.min(max_power), 0.0],
            gain,
            PolicyCase::GluePour,
            capped,
        );
    }
    if e_tot <= dt * (v3 + e1) / r1 {
        let theta = dt / r1;
        let p = e_tot * r1 / dt - e1;
        let capped = p > max_power;
        return finish(
            vec![theta, 0.0],
            vec![p.min(max_power), 0.0],
            gain,
            PolicyCase::FronthaulPinnedHigh,
            capped,
        );
    }

    if d > r2 {
        // R2 < D < R1
        let mix_limit = t * v3 + (dt * (e1 - e2) + (r1 * e2 - r2 * e1) * t) / (r1 - r2);
        if e_tot <= mix_limit {
            return two_mode_mix(e_tot, dt, gain, v3, mode1, mode2, max_power);
        }
        // Horizon binds: durations from theta1 + theta2 = T and fronthaul equality.
        let theta1 = (d - r2) * t / (r1 - r2);
        let theta2 = (r1 - d) * t / (r1 - r2);
        let p = e_tot / t - (d * (e1 - e2) + r1 * e2 - r2 * e1) / (r1 - r2);
        let capped = p > max_power;
        finish(
            vec![theta1, theta2],
            vec![p.min(max_power); 2],
            gain,
            PolicyCase::HorizonPinned,
            capped,
        )
    } else {
        // D <= R2
        if e_tot <= dt * (v3 + e2) / r2 {
            return two_mode_mix(e_tot, dt, gain, v3, mode1, mode2, max_power);
        }
        // Beyond the mix range the low-rate mode alone holds the budget.
        let theta2 = dt / r2;
        let p = e_tot * r2 / dt - e2;
        let capped = p > max_power;
        finish(
            vec![0.0, theta2],
            vec![0.0, p.min(max_power)],
            gain,
            PolicyCase::FronthaulPinnedLow,
            capped,
        )
    }
}

fn two_mode_mix(
    e_tot: f64,
    dt: f64,
    gain: f64,
    v3: f64,
    mode1: SplitMode,
    mode2: SplitMode,
    max_power: f64,
) -> SingleEpochPolicy {
    let (r1, e1) = (mode1.fronthaul_rate, mode1.processing_power);
    let (r2, e2) = (mode2.fronthaul_rate, mode2.processing_power);
    let den = r1 * (v3 + e2) - r2 * (v3 + e1);
    let theta1 = (((v3 + e2) * dt - r2 * e_tot) / den).max(0.0);
    let theta2 = ((r1 * e_tot - (v3 + e1) * dt) / den).max(0.0);
    let capped = v3 > max_power;
    let p = v3.min(max_power);
    finish(
        vec![theta1, theta2],
        vec![if theta1 > 0.0 { p } else { 0.0 }, if theta2 > 0.0 { p } else { 0.0 }],
        gain,
        PolicyCase::TwoModeMix,
        capped,
    )
}

fn finish(
    durations: Vec<f64>,
    powers: Vec<f64>,
    gain: f64,
    case: PolicyCase,
    power_capped: bool,
) -> SingleEpochPolicy {
    let throughput = durations
        .iter()
        .zip(&powers)
        .map(|(&th, &p)| if th > 0.0 { th * rate(gain, p) } else { 0.0 })
        .sum();
    let mut powers = powers;
    for (p, &th) in powers.iter_mut().zip(&durations) {
        if th <= 0.0 {
            *p = 0.0;
        }
    }
    SingleEpochPolicy {
        durations,
        powers,
        throughput,
        case,
        power_capped,
    }
}

/// Enumerate all mode pairs plus singletons and return the best policy,
/// indexed in catalog order.
pub fn best_pair_policy(
    energy: f64,
    horizon: f64,
    gain: f64,
    budget: f64,
    catalog: &ModeCatalog,
    max_power: f64,
) -> SingleEpochPolicy {
    let x = catalog.len();
    let modes = catalog.modes();
    let mut best = SingleEpochPolicy::zero(x);
    if energy <= 0.0 || budget <= 0.0 || horizon <= 0.0 {
        return best;
    }
    for i in 0..x {
        let (theta, p, case, capped) =
            single_mode_policy(energy, horizon, gain, budget, modes[i], max_power);
        let thr = if theta > 0.0 { theta * rate(gain, p) } else { 0.0 };
        if thr > best.throughput {
            let mut durations = vec![0.0; x];
            let mut powers = vec![0.0; x];
            durations[i] = theta;
            powers[i] = p;
            best = SingleEpochPolicy {
                durations,
                powers,
                throughput: thr,
                case,
                power_capped: capped,
            };
        }
    }
    for i in 0..x {
        for j in (i + 1)..x {
            let prob = SingleEpochProblem {
                energy,
                horizon,
                gain,
                budget,
                mode1: modes[i],
                mode2: modes[j],
            };
            let pol = single_epoch_policy(&prob, max_power);
            if pol.throughput > best.throughput {
                let mut durations = vec![0.0; x];
                let mut powers = vec![0.0; x];
                durations[i] = pol.durations[0];
                powers[i] = pol.powers[0];
                durations[j] = pol.durations[1];
                powers[j] = pol.powers[1];
                best = SingleEpochPolicy {
                    durations,
                    powers,
                    throughput: pol.throughput,
                    case: pol.case,
                    power_capped: pol.power_capped,
                };
            }
        }
    }
    best
}
