use epiground_core::fixtures;
use epiground_core::pipeline::{quartile_means, run_seed, ExperimentConfig};
use std::time::Instant;

fn main() {
    let seed: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    let start = fixtures::apartment();
    let cfg = ExperimentConfig::for_seed(seed);
    let t0 = Instant::now();
    let art = run_seed(&start, &cfg).unwrap();
    let o = &art.outcome;
    println!("seed {seed}  ({:.1}s)", t0.elapsed().as_secs_f64());
    println!("  tasks: pretrain {} episodic {}", o.pretrain_tasks, o.episodic_tasks);
    println!("  plain overall {:.3}  bins {:?}", o.strong_plain.overall, o.strong_plain.by_len);
    println!("  w2s   overall {:.3}  bins {:?}", o.strong_w2s.overall, o.strong_w2s.by_len);
    let (q1, q4) = quartile_means(&o.layer_profile);
    println!("  layers {:?}  q1 {:.3} q4 {:.3}", o.layer_profile.iter().map(|v| (v*100.0).round()/100.0).collect::<Vec<_>>(), q1, q4);
    println!("  greedy_qa {:.3}  probe_best {:.3}", o.greedy_qa_accuracy, o.probe_best_accuracy);
}
