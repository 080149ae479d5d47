//! Runs a synthetic experiment config and prints one summary line per run.
//!
//!     cargo run --release -p dejavu-core --example toy_sweep -- exp.json

use std::time::Instant;

use dejavu_core::toy::{run_experiment, ExperimentConfig};
use dejavu_core::{run_sample_audit, SortKey};

fn main() {
    let path = std::env::args().nth(1).expect("usage: toy_sweep <exp.json>");
    let cfg: ExperimentConfig =
        serde_json::from_str(&std::fs::read_to_string(&path).expect("readable config")).expect("valid config");
    let t = Instant::now();
    for run in run_experiment(&cfg).expect("experiment runs") {
        let r = &run.report;
        let mean_recall = |m: &[dejavu_core::SampleMetrics]| m.iter().map(|x| x.recall).sum::<f64>() / m.len() as f64;
        println!(
            "{:>10} size {:>5}  {}  loss {:.3}  val {:.3}  recall A {:.3} B {:.3}",
            run.label,
            run.train_size,
            r.summary_line(),
            run.target.loss_trace.last().copied().unwrap_or(f64::NAN),
            run.validation_loss.unwrap_or(f64::NAN),
            mean_recall(&run.paired.target),
            mean_recall(&run.paired.reference),
        );
        if let Some(s) = &cfg.sample_level {
            for key in [SortKey::MinDist, SortKey::CorrectPreds] {
                let audit = run_sample_audit(&run.dataset, cfg.audit.k, s.top_m, key, &s.l_grid).expect("sample audit");
                for p in &audit.curve.points {
                    println!(
                        "    {:<13} L {:>5}  dP {:+.4}  dR {:+.4}  dF {:+.4}",
                        key.as_str(),
                        p.l,
                        p.precision_gap,
                        p.recall_gap,
                        p.f_score_gap
                    );
                }
            }
        }
    }
    eprintln!("elapsed {:.1}s", t.elapsed().as_secs_f64());
}
