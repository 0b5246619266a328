//! Walk the closed-form single-epoch policy through its budget regimes:
//! starting from a loose fronthaul budget (best mode alone, glue-pouring
//! bursts) and tightening it until only the lowest-rate mode fits.

use ehsplit::model::{paper_config, validate_config};
use ehsplit::{best_pair_policy, glue_pour_power};

fn main() {
    let cfg = validate_config(paper_config()).unwrap();
    let gain = cfg.channel.gains[3];
    let horizon = 16.0;
    let energy = 180.0;

    println!("glue-pouring burst powers at gain {gain:.3}:");
    for m in cfg.catalog.modes() {
        println!(
            "  mode {}: v* = {:.4} (epsilon {})",
            m.id,
            glue_pour_power(gain, m.processing_power),
            m.processing_power
        );
    }

    println!("\nE = {energy}, T = {horizon} slots, budget sweep:");
    println!("{:>10} {:>22} {:>22} {:>12}", "D", "slots/mode", "powers", "nats");
    for budget in [12000.0, 6000.0, 3000.0, 1200.0, 400.0] {
        let pol = best_pair_policy(energy, horizon, gain, budget, &cfg.catalog, cfg.max_power);
        let slots: Vec<String> = pol.durations.iter().map(|d| format!("{d:.2}")).collect();
        let powers: Vec<String> = pol.powers.iter().map(|p| format!("{p:.2}")).collect();
        println!(
            "{budget:>10.0} {:>22} {:>22} {:>12.4}",
            slots.join("/"),
            powers.join("/"),
            pol.throughput
        );
    }
}
