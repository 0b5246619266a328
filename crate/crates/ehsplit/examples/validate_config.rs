//! Load and validate a system configuration, then print the derived tables:
//! split-mode catalog, channel quantiles, and the energy arrival law.
//!
//! Usage: cargo run --example validate_config [-- path/to/config.cfg]

use ehsplit::model::{paper_config, validate_config, SystemConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = match std::env::args().nth(1) {
        Some(path) => SystemConfig::load(path)?,
        None => paper_config(),
    };
    let cfg = validate_config(cfg)?;

    println!(
        "time hierarchy: {} slots/block x {} blocks/epoch x {} epochs ({} s/slot)",
        cfg.slots_per_block, cfg.blocks_per_epoch, cfg.epochs, cfg.slot_seconds
    );
    println!(
        "battery {} units, max power {}, fronthaul budget {} units/slot ({:.0} Mbps)",
        cfg.battery_capacity,
        cfg.max_power,
        cfg.fronthaul_budget,
        cfg.units_to_mbps(cfg.fronthaul_budget)
    );
    println!("\nsplit modes (fronthaul rate down, processing power up):");
    for m in cfg.catalog.modes() {
        println!(
            "  mode {}: {:7.0} units/slot ({:4.0} Mbps), epsilon = {} power-units",
            m.id,
            m.fronthaul_rate,
            cfg.units_to_mbps(m.fronthaul_rate),
            m.processing_power
        );
    }
    println!("\nchannel quantiles (stationary: {:?}):", cfg.channel.stationary());
    for (i, g) in cfg.channel.gains.iter().enumerate() {
        println!("  state {i}: gain {g:.4}");
    }
    println!(
        "\nenergy: mean arrival {:.1} units/epoch over {} support levels",
        cfg.energy.mean(),
        cfg.energy.support().len()
    );
    Ok(())
}
