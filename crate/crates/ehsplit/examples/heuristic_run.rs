//! Run the forecast-based block heuristic for one long episode and show its
//! budget compliance and the good-block forecast it plans with.

use ehsplit::model::{paper_config, validate_config};
use ehsplit::{good_block_forecast, run_episode, HeuristicParams, HeuristicPolicy};

fn main() {
    let cfg = validate_config(paper_config()).unwrap();
    let params = HeuristicParams::defaults(&cfg);
    println!(
        "good states {:?}, lookahead {} blocks, budget {} units/slot",
        params.good_set, params.n_heu, params.budget
    );
    for start in 0..cfg.channel.gains.len() {
        println!(
            "  from state {start}: expect {:.3} good of the next {} blocks",
            good_block_forecast(&cfg.channel, start, params.n_heu, &params.good_set),
            params.n_heu
        );
    }

    let mut policy = HeuristicPolicy::new(params);
    let trace = run_episode(&cfg, &mut policy, 40_000, 2024, 0);
    let s = &trace.summary;
    println!(
        "\n{} slots: {:.4} nats/slot, fronthaul {:.1}/{:.1} units/slot",
        s.slots, s.mean_throughput, s.mean_fronthaul, cfg.fronthaul_budget
    );
    println!(
        "energy: {:.0} arrived, {:.0} consumed, {:.0} overflowed, {:.1} left",
        s.total_arrivals, s.total_consumed, s.total_overflow, s.final_battery
    );
    assert!(s.mean_fronthaul <= 1.02 * cfg.fronthaul_budget, "budget violated");
}
