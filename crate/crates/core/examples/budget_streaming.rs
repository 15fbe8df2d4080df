//! Serve a stream under a cost budget. The controller moves along the
//! collection's rungs once per window so that the windowed mean cost tracks
//! the target.

use orxe::runtime::StreamRouter;
use orxe::{postprocess, search_collection, synth_trace, SearchParams};

fn main() -> orxe::Result<()> {
    let calibration = synth_trace(4, 5000, 3, 0.5)?;
    let ladder = postprocess(&search_collection(&calibration, &SearchParams::default())?, &calibration, 0.001)?;
    let stream = synth_trace(4, 10_000, 103, 0.5)?;

    let (target, window) = (8.0, 1000);
    let mut router = StreamRouter::for_budget(ladder, target, window, 0.2)?;
    println!("budget {target}, starting at rung {} (lambda {})", router.current().index, router.current().config.lambda);

    let (mut total, mut correct) = (0.0, 0.0);
    for (k, sample) in stream.samples().enumerate() {
        let out = router.route(sample)?;
        total += out.outcome.cost;
        correct += out.outcome.metric;
        if (k + 1) % window == 0 {
            println!(
                "window {:>2}: mean cost {:>6.2}  accuracy {:.3}  next rung {:>3} (lambda {:.3})",
                (k + 1) / window,
                total / window as f64,
                correct / window as f64,
                router.current().index,
                router.current().config.lambda
            );
            total = 0.0;
            correct = 0.0;
        }
    }
    Ok(())
}
