//! Writes synthetic sequences in the one-directory-per-sequence layout
//! (`img/0001.png`, `groundtruth_rect.txt`).
//!
//! cargo run --example make_dataset -- <dir> [count] [seed]
use std::path::PathBuf;

use siampf::synthetic::{generate_dataset, write_sequence, SyntheticConfig};

fn main() -> siampf::Result<()> {
    let mut args = std::env::args().skip(1);
    let root = PathBuf::from(args.next().unwrap_or_else(|| "data".into()));
    let count = args.next().and_then(|s| s.parse().ok()).unwrap_or(6);
    let seed = args.next().and_then(|s| s.parse().ok()).unwrap_or(200);
    for seq in generate_dataset(&SyntheticConfig::default(), "seq", count, seed)? {
        write_sequence(&seq, &root)?;
        println!("{}/{}: {} frames", root.display(), seq.name, seq.len());
    }
    Ok(())
}
