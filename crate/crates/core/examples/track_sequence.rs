//! Tracks one synthetic sequence frame by frame and prints the box, overlap
//! and gate verdict.
//!
//! cargo run --release --example track_sequence -- [checkpoint]
use siampf::evalbench::iou;
use siampf::netmodel::Init;
use siampf::synthetic::{generate_sequence, SyntheticConfig};
use siampf::{Checkpoint, ModelConfig, SiameseModel, Tracker, TrackerConfig};

fn main() -> siampf::Result<()> {
    let model = match std::env::args().nth(1) {
        Some(p) => Checkpoint::load(std::path::Path::new(&p))?.model,
        None => {
            println!("no checkpoint given, using an untrained model");
            SiameseModel::new(&ModelConfig::desk_scale(), &Init::Random, 1)?
        }
    };
    let seq = generate_sequence(&SyntheticConfig::default(), "demo", 7)?;
    let mut tracker = Tracker::init(&model, seq.frame(0)?.as_ref(), seq.ground_truth[0], TrackerConfig::default())?;
    for i in 1..seq.len() {
        let (b, d) = tracker.track_frame(seq.frame(i)?.as_ref())?;
        println!(
            "{i:>3}  center ({:6.1},{:6.1})  size {:5.1}x{:5.1}  IoU {:.2}  APCEP {:8.2}  gate {:?}",
            b.center_x, b.center_y, b.width, b.height, iou(&b, &seq.ground_truth[i]), d.apcep, d.gate
        );
    }
    Ok(())
}
