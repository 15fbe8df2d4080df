//! Turn a coarse searched collection into a dense, doubly monotone ladder
//! and save it as JSON.

use orxe::search::grid_points;
use orxe::{interpolate, monotonic_filter, pareto_filter, save_collection, search_collection, synth_trace, SearchParams};

fn main() -> orxe::Result<()> {
    let trace = synth_trace(4, 3000, 2, 0.5)?;
    let raw = search_collection(&trace, &SearchParams::default().with_lambdas(grid_points(0.0, 1.0, 0.05)?))?;
    let front = pareto_filter(&raw);
    let dense = interpolate(&front, 0.005, &trace)?;
    let ladder = monotonic_filter(&dense);
    println!(
        "{} searched -> {} on the front -> {} after interpolation -> {} monotone rungs",
        raw.len(),
        front.len(),
        dense.len(),
        ladder.len()
    );
    for e in ladder.entries.iter().step_by((ladder.len() / 10).max(1)) {
        println!(
            "  lambda {:.3}  cost {:>6.2}  mean exit confidence {:.4}  accuracy {:.4}",
            e.lambda(),
            e.report.mean_cost_raw,
            e.report.mean_exit_conf,
            e.report.perf
        );
    }
    let path = std::env::temp_dir().join("orxe-ladder.json");
    save_collection(&ladder, &path)?;
    println!("saved {}", path.display());
    Ok(())
}
