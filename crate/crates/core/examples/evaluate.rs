//! One-pass evaluation of the ground-truth replay and of a model, with
//! report and curve plots written to an output directory.
//!
//! cargo run --release --example evaluate -- [checkpoint] [out_dir]
use std::path::{Path, PathBuf};

use siampf::evalbench::{run_benchmark_on, BenchmarkOptions, ModelTracker, OracleTracker, SequenceTracker};
use siampf::synthetic::{generate_dataset, SyntheticConfig};
use siampf::{Checkpoint, TrackerConfig};

fn main() -> siampf::Result<()> {
    let mut args = std::env::args().skip(1);
    let ckpt = args.next();
    let out = PathBuf::from(args.next().unwrap_or_else(|| "eval_out".into()));
    let sequences: Vec<_> = generate_dataset(&SyntheticConfig::default(), "test", 6, 200)?
        .into_iter()
        .map(|s| (s.name.clone(), Ok(s)))
        .collect();
    let mut trackers: Vec<Box<dyn SequenceTracker>> = vec![Box::new(OracleTracker)];
    if let Some(p) = ckpt {
        let model = Checkpoint::load(Path::new(&p))?.model;
        trackers.push(Box::new(ModelTracker::new(model, TrackerConfig::default())?));
    }
    for t in &trackers {
        let opts = BenchmarkOptions {
            output_dir: Some(out.join(t.name())),
            write_plots: true,
            switches: None,
        };
        let r = run_benchmark_on(t.as_ref(), &sequences, &opts)?;
        println!("{:<8} AUC {:.3}  P@20 {:.3}  mean IoU {:.3}", r.tracker, r.mean_auc, r.mean_precision_at_20, r.mean_iou);
    }
    println!("reports under {}", out.display());
    Ok(())
}
