//! Search one cascade per cost/accuracy preference and compare the resulting
//! operating points with the individual experts.

use orxe::search::grid_points;
use orxe::{search_collection, synth_trace, SearchParams};

fn main() -> orxe::Result<()> {
    let trace = synth_trace(4, 5000, 1, 0.5)?;
    let params = SearchParams::default().with_lambdas(grid_points(0.0, 1.0, 0.1)?);
    let collection = search_collection(&trace, &params)?;

    println!("experts:");
    for e in trace.experts() {
        println!("  {:<8} cost {:>5.1}  accuracy {:.4}", e.name, e.cost, e.mean_perf);
    }
    println!("cascades:");
    for entry in &collection.entries {
        let r = &entry.report;
        println!(
            "  lambda {:.1}  cost {:>6.2}  accuracy {:.4}  exits {:?}  t2 {:?}",
            entry.lambda(),
            r.mean_cost_raw,
            r.perf,
            r.n_exit,
            entry.config.t2.iter().map(|t| (t * 100.0).round() / 100.0).collect::<Vec<_>>()
        );
    }

    let best = trace.experts().last().unwrap();
    if let Some(e) = collection
        .entries
        .iter()
        .filter(|e| e.report.perf >= best.mean_perf)
        .min_by(|a, b| a.report.mean_cost_raw.total_cmp(&b.report.mean_cost_raw))
    {
        println!(
            "matches the largest expert's accuracy at {:.0}% of its cost (lambda {})",
            100.0 * e.report.mean_cost_raw / best.cost,
            e.lambda()
        );
    }
    Ok(())
}
