//! Generate a synthetic trace, look at per-expert statistics and round-trip
//! it through the JSONL file format.
//!
//! ```text
//! cargo run --example synthesize_trace
//! ```

use orxe::trace::expert_stats;
use orxe::{load_trace, synth_trace, write_trace};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let trace = synth_trace(4, 2000, 11, 0.5)?;
    println!("{} experts, {} samples, id {}", trace.n_experts(), trace.n_samples(), trace.trace_id());
    for s in expert_stats(&trace) {
        println!("{:>8}  cost {:>4}  accuracy {:.3}  confidence histogram {:?}", s.name, s.cost, s.mean_perf, s.conf_histogram);
    }

    let dir = std::env::temp_dir().join("orxe-synthesize-trace");
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("trace.jsonl");
    write_trace(&trace, &path)?;
    let back = load_trace(&path)?;
    assert_eq!(back.trace_id(), trace.trace_id());
    println!("wrote and re-read {}", path.display());
    Ok(())
}
