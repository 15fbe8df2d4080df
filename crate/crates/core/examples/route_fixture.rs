//! Route the four-sample reference trace through two hand-written cascades
//! and print where every sample exits.

use orxe::trace::fixture_t3;
use orxe::{evaluate, route_all, Config};

fn main() -> orxe::Result<()> {
    let trace = fixture_t3();
    let configs = [
        ("post-gates only", Config::new(0.5, vec![0.0, 0.25], vec![0.8, 0.8])),
        ("with skipping", Config::new(0.5, vec![0.25, 0.35], vec![0.8, 0.8])),
        ("largest expert only", Config::new(0.5, vec![0.0, 0.0], vec![1.0, 1.0])),
    ];
    for (name, config) in configs {
        println!("{name}: t1 {:?} t2 {:?}", config.t1, config.t2);
        for (sample, o) in trace.samples().zip(route_all(&trace, &config)?) {
            println!(
                "  {:<3} computed {:?} exits at {} with confidence {:.2}, cost {}",
                sample.sample_id, o.computed, o.exit_node, o.final_conf, o.cost
            );
        }
        let r = evaluate(&trace, &config)?;
        println!("  mean cost {} ({:.4} of the largest expert), accuracy {}\n", r.mean_cost_raw, r.mean_cost_norm, r.perf);
    }
    Ok(())
}
