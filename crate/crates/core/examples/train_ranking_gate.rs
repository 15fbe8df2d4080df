//! Train a small gate that scores samples so that higher scores go with
//! better downstream metrics, then measure how well it ranks unseen rows.

use orxe::gate::ranking_accuracy;
use orxe::{confidence, train, FeatureRow, TrainCfg};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rows(n: usize, seed: u64) -> Vec<FeatureRow> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let x: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
            // the metric depends non-linearly on two of the three features
            let metric = x[0] - 0.5 * x[1] * x[1] + 0.1 * rng.random::<f64>();
            FeatureRow { id: format!("row{i}"), x, metric }
        })
        .collect()
}

fn main() -> orxe::Result<()> {
    let train_rows = rows(2000, 1);
    let held_out = rows(500, 2);
    let cfg = TrainCfg { hidden: vec![16, 8], epochs: 60, ..TrainCfg::default() };
    let report = train(&train_rows, &cfg)?;
    println!(
        "pairwise loss {:.4} -> {:.4} (best epoch {:?})",
        report.initial_loss, report.final_loss, report.best_epoch
    );
    let scores = held_out.iter().map(|r| confidence(&report.model, &r.x)).collect::<orxe::Result<Vec<_>>>()?;
    let metric: Vec<f64> = held_out.iter().map(|r| r.metric).collect();
    println!("held-out pairwise ranking accuracy {:.3}", ranking_accuracy(&scores, &metric));
    Ok(())
}
