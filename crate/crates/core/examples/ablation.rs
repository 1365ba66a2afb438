//! Evaluates the five cumulative component configurations and prints the
//! comparison table.
//!
//! cargo run --release --example ablation -- <checkpoint>
use std::path::Path;

use siampf::evalbench::{ablation_markdown, run_ablation};
use siampf::synthetic::{generate_dataset, SyntheticConfig};
use siampf::{Checkpoint, TrackerConfig};

fn main() -> siampf::Result<()> {
    let Some(path) = std::env::args().nth(1) else {
        eprintln!("usage: ablation <checkpoint>  (see the train_toy example)");
        std::process::exit(2);
    };
    let ckpt = Checkpoint::load(Path::new(&path))?;
    let frozen = ckpt.train_config.as_ref().map_or(9, |c| c.frozen_backbone_convs);
    let sequences: Vec<_> = generate_dataset(&SyntheticConfig::default(), "test", 6, 200)?
        .into_iter()
        .map(|s| (s.name.clone(), Ok(s)))
        .collect();
    let report = run_ablation(&ckpt.model, &TrackerConfig::default(), frozen, 0, &sequences, None)?;
    print!("{}", ablation_markdown(&report));
    Ok(())
}
