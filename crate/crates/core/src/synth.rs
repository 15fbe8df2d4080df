//! Deterministic synthetic traces for tests, examples and benchmarks.
//!
//! Each sample gets a latent difficulty `d = u^(1/skew)` with `u ~ U(0,1)`, so
//! a small skew concentrates samples near `d = 0` (mostly easy data). Expert
//! `i` is correct with probability `p_i(d) = a_i + c_i (m - d)` where `a_i` is
//! the configured target accuracy, `m = E[d]` and `c_i` is the steepest slope
//! keeping `p_i` inside `[0, 1]`. Hence `E[p_i(d)] = a_i` exactly, `p_i` falls
//! with difficulty, and `p_i(d)` is non-decreasing in `i` for every `d`.
//!
//! Confidence is a noisy sigmoid that is higher for correct predictions and
//! for easy samples; later experts separate correct from wrong more sharply.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::trace::{ExpertDecl, SampleRecord, TraceSet};

const LOWEST_ACCURACY: f64 = 0.55;
const HIGHEST_ACCURACY: f64 = 0.90;

/// Target mean accuracy of each synthetic expert.
pub fn target_accuracies(n_experts: usize) -> Vec<f64> {
    let span = (n_experts.max(2) - 1) as f64;
    (0..n_experts)
        .map(|i| LOWEST_ACCURACY + (HIGHEST_ACCURACY - LOWEST_ACCURACY) * i as f64 / span)
        .collect()
}

/// Cost of synthetic expert `i`: `4^i`.
pub fn synthetic_cost(index: usize) -> f64 {
    4f64.powi(index as i32)
}

/// Mean difficulty `E[u^(1/skew)]`.
pub fn mean_difficulty(skew: f64) -> f64 {
    skew / (1.0 + skew)
}

/// Probability that an expert with target accuracy `accuracy` is correct on a
/// sample of difficulty `d`.
pub fn correct_probability(accuracy: f64, skew: f64, d: f64) -> f64 {
    let m = mean_difficulty(skew);
    let slope = ((1.0 - accuracy) / m).min(accuracy / (1.0 - m));
    (accuracy + slope * (m - d)).clamp(0.0, 1.0)
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

pub fn synth_trace(
    n_experts: usize,
    n_samples: usize,
    seed: u64,
    difficulty_skew: f64,
) -> Result<TraceSet> {
    if n_experts < 2 {
        return Err(Error::TooFewExperts(n_experts));
    }
    if n_samples == 0 {
        return Err(Error::EmptySamples);
    }
    if n_samples + 1 < n_experts {
        return Err(Error::InvalidArgument(format!(
            "{n_samples} samples cannot give {n_experts} strictly increasing accuracies"
        )));
    }
    if !(difficulty_skew > 0.0 && difficulty_skew <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "difficulty skew {difficulty_skew} is outside (0, 1]"
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let accuracies = target_accuracies(n_experts);

    let difficulty: Vec<f64> = (0..n_samples)
        .map(|_| rng.random::<f64>().powf(1.0 / difficulty_skew))
        .collect();
    let mut correct: Vec<Vec<bool>> = difficulty
        .iter()
        .map(|&d| {
            accuracies
                .iter()
                .map(|&a| rng.random::<f64>() < correct_probability(a, difficulty_skew, d))
                .collect()
        })
        .collect();

    enforce_strict_accuracy_order(&mut correct, &difficulty, n_experts);

    let span = (n_experts - 1) as f64;
    let samples = correct
        .iter()
        .zip(&difficulty)
        .enumerate()
        .map(|(s, (row, &d))| {
            let conf = row
                .iter()
                .enumerate()
                .map(|(i, &ok)| {
                    let separation = 1.0 + i as f64 / span;
                    let sign = if ok { 1.0 } else { -1.0 };
                    let noise: f64 = StandardNormal.sample(&mut rng);
                    sigmoid(1.0 + separation * sign + 1.5 * (0.5 - d) + noise)
                })
                .collect();
            let metric = row.iter().map(|&ok| if ok { 1.0 } else { 0.0 }).collect();
            SampleRecord::new(format!("syn-{s:06}"), conf, metric)
        })
        .collect();

    let experts = (0..n_experts)
        .map(|i| ExpertDecl::new(format!("expert{i}"), synthetic_cost(i)))
        .collect();
    TraceSet::new(experts, samples)
}

/// Adjusts per-expert correct counts so they are strictly increasing,
/// flipping the easiest wrong samples to correct or the hardest correct ones
/// to wrong. Rarely touches anything beyond tiny sample counts.
fn enforce_strict_accuracy_order(correct: &mut [Vec<bool>], difficulty: &[f64], n_experts: usize) {
    let n = correct.len();
    let mut by_difficulty: Vec<usize> = (0..n).collect();
    by_difficulty.sort_by(|&a, &b| difficulty[a].total_cmp(&difficulty[b]).then(a.cmp(&b)));

    let mut prev: Option<usize> = None;
    for expert in 0..n_experts {
        let count = correct.iter().filter(|row| row[expert]).count();
        let low = prev.map_or(0, |p| p + 1);
        let high = n - (n_experts - 1 - expert);
        let wanted = count.clamp(low, high);
        if wanted > count {
            let flips: Vec<usize> = by_difficulty
                .iter()
                .copied()
                .filter(|&s| !correct[s][expert])
                .take(wanted - count)
                .collect();
            for s in flips {
                correct[s][expert] = true;
            }
        } else if wanted < count {
            let flips: Vec<usize> = by_difficulty
                .iter()
                .rev()
                .copied()
                .filter(|&s| correct[s][expert])
                .take(count - wanted)
                .collect();
            for s in flips {
                correct[s][expert] = false;
            }
        }
        prev = Some(wanted);
    }
}
