//! Sweep the fronthaul budget and print the throughput of the offline bound,
//! its rounded version, and each fixed-mode baseline — the flexible split's
//! advantage is largest at intermediate budgets.

use std::io::Write;

use ehsplit::experiment::{run_experiment, write_csv, ExperimentSpec, SweepVariable};
use ehsplit::model::{config_to_toml, paper_config, validate_config};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::env::temp_dir();
    let cfg_path = dir.join("budget_sweep_base.cfg");
    let cfg = validate_config(paper_config()).unwrap();
    std::fs::write(&cfg_path, config_to_toml(&cfg))?;

    let spec = ExperimentSpec {
        config: cfg_path,
        variable: SweepVariable::FronthaulBudget,
        grid: vec![600.0, 1200.0, 2400.0, 3600.0, 6000.0, 12000.0],
        policies: ["offline-upper", "offline-rounded", "fixed-1", "fixed-2", "fixed-3"]
            .iter()
            .map(|s| s.to_string())
            .collect(),
        episodes: 6,
        horizon: 1,
        seed: 17,
        battery_levels: None,
    };
    let rows = run_experiment(&spec)?;

    println!(
        "{:>8} {:>14} {:>16} {:>8} {:>8} {:>8}",
        "D", "offline-upper", "offline-rounded", "fixed-1", "fixed-2", "fixed-3"
    );
    for &d in &spec.grid {
        let at = |p: &str| {
            rows.iter()
                .find(|r| r.value == d && r.policy == p)
                .map(|r| r.mean_throughput)
                .unwrap_or(f64::NAN)
        };
        println!(
            "{d:>8.0} {:>14.4} {:>16.4} {:>8.4} {:>8.4} {:>8.4}",
            at("offline-upper"),
            at("offline-rounded"),
            at("fixed-1"),
            at("fixed-2"),
            at("fixed-3")
        );
    }

    let out = std::env::temp_dir().join("budget_sweep.csv");
    let mut f = std::fs::File::create(&out)?;
    write_csv(&rows, &mut f)?;
    f.flush()?;
    println!("\nfull table written to {}", out.display());
    Ok(())
}
