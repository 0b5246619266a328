//! Sample a random trace, solve the non-causal offline program, verify the
//! optimizer's structural properties, and integerize by relax-and-round.

use ehsplit::model::{paper_config, validate_config};
use ehsplit::{round_solution, solve_offline, verify_structure, OfflineInstance};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = validate_config(paper_config()).unwrap();
    let inst = OfflineInstance::sample(&cfg, 7, 0);
    println!("sampled {} epochs; arrivals: {:?}", cfg.epochs, inst.energy);

    let sol = solve_offline(&inst)?;
    let slots = (cfg.epochs * cfg.slots_per_epoch()) as f64;
    println!(
        "\ncontinuous optimum: {:.6} nats/slot  (duality gap {:.2e}, converged {})",
        sol.throughput / slots,
        sol.duality_gap,
        sol.converged
    );
    println!("max constraint residual: {:.2e}", sol.residuals.max());

    let report = verify_structure(&sol, &inst);
    println!(
        "structure: equal powers {}, <=2 modes/epoch {}, constant water level {}",
        report.unequal_power.is_empty(),
        report.too_many_modes.is_empty(),
        report.unequal_water_level.is_empty()
    );

    let int = round_solution(&sol, &inst);
    println!(
        "\nrounded: {:.6} nats/slot ({:.2}% of the upper bound)",
        int.throughput / slots,
        100.0 * int.throughput / sol.throughput
    );
    for (m, row) in int.alloc.iter().enumerate() {
        for (n, a) in row.iter().enumerate() {
            if a.total_duration() > 0.0 {
                println!(
                    "  epoch {m} block {n}: slots {:?} powers {:?}",
                    a.durations, a.powers
                );
            }
        }
    }
    Ok(())
}
