//! Train the average-reward MDP policy on a downsized system (small battery
//! so the example runs in seconds), then check the calibrated policy against
//! its own stationary predictions in simulation.

use ehsplit::mdp::MdpParams;
use ehsplit::model::{paper_config, validate_config, EnergyArrivalLaw};
use ehsplit::sim::{evaluate, Policy};
use ehsplit::train_mdp;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut cfg = validate_config(paper_config()).unwrap();
    cfg.battery_capacity = 200.0;
    cfg.energy = EnergyArrivalLaw::poisson(5.0, cfg.slots_per_epoch() as f64, cfg.battery_capacity);

    let params = MdpParams {
        battery_levels: 50,
        ..MdpParams::default()
    };
    let t0 = std::time::Instant::now();
    let trained = train_mdp(&cfg, cfg.fronthaul_budget, &params)?;
    println!(
        "trained in {:.1?}: price eta = {:.3e}, gain lambda = {:.4}",
        t0.elapsed(),
        trained.eta,
        trained.lambda
    );
    println!(
        "model predicts {:.4} nats/slot at {:.0}/{:.0} fronthaul units/slot",
        trained.predicted_throughput, trained.predicted_fronthaul, cfg.fronthaul_budget
    );

    let mut policies: Vec<Box<dyn Policy>> = vec![Box::new(trained.policy())];
    let stats = &evaluate(&cfg, &mut policies, 8, 5_000, 123)[0];
    println!(
        "simulated {:.4} ± {:.4} nats/slot at {:.0} fronthaul units/slot",
        stats.mean_throughput, stats.stderr_throughput, stats.mean_fronthaul
    );
    assert!(stats.mean_fronthaul <= 1.02 * cfg.fronthaul_budget);
    Ok(())
}
