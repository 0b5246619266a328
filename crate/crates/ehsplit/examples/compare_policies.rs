//! Compare the online policies and the offline bounds on one configuration
//! with common random numbers. Trains the MDP on a downsized battery so the
//! whole comparison stays under a minute.

use ehsplit::mdp::MdpParams;
use ehsplit::model::{paper_config, validate_config, EnergyArrivalLaw};
use ehsplit::sim::{evaluate, IdlePolicy, Policy};
use ehsplit::{round_solution, solve_offline, train_mdp, HeuristicPolicy, OfflineInstance};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut cfg = validate_config(paper_config()).unwrap();
    cfg.battery_capacity = 200.0;
    cfg.energy = EnergyArrivalLaw::poisson(5.0, cfg.slots_per_epoch() as f64, cfg.battery_capacity);
    let (episodes, horizon, seed) = (8, 5_000, 99);

    // offline bounds over instances drawn with the same seeds
    let slots = (cfg.epochs * cfg.slots_per_epoch()) as f64;
    let mut upper = 0.0;
    let mut rounded = 0.0;
    for ep in 0..episodes {
        let inst = OfflineInstance::sample(&cfg, seed, ep as u64);
        let sol = solve_offline(&inst)?;
        upper += sol.throughput / slots;
        rounded += round_solution(&sol, &inst).throughput / slots;
    }
    println!("offline-upper    {:.4} nats/slot", upper / episodes as f64);
    println!("offline-rounded  {:.4} nats/slot", rounded / episodes as f64);

    let params = MdpParams {
        battery_levels: 50,
        ..MdpParams::default()
    };
    let trained = train_mdp(&cfg, cfg.fronthaul_budget, &params)?;
    let mut policies: Vec<Box<dyn Policy>> = vec![
        Box::new(trained.policy()),
        Box::new(HeuristicPolicy::from_config(&cfg)),
        Box::new(IdlePolicy),
    ];
    for s in evaluate(&cfg, &mut policies, episodes, horizon, seed) {
        println!(
            "{:16} {:.4} ± {:.4} nats/slot, fronthaul {:7.1} units/slot",
            s.name, s.mean_throughput, s.stderr_throughput, s.mean_fronthaul
        );
    }
    Ok(())
}
