//! Trains the desk-scale model on synthetic sequences and saves a
//! checkpoint.
//!
//! cargo run --release --example train_toy -- [checkpoint] [epochs]
use siampf::netmodel::Init;
use siampf::synthetic::{generate_dataset, SyntheticConfig};
use siampf::training::train;
use siampf::{ModelConfig, SiameseModel, TrainConfig};

fn main() -> siampf::Result<()> {
    let mut args = std::env::args().skip(1);
    let path = args.next().unwrap_or_else(|| "desk.safetensors".into());
    let mut cfg = TrainConfig::desk_scale();
    if let Some(epochs) = args.next().and_then(|s| s.parse().ok()) {
        cfg.epochs = epochs;
        cfg.lr_schedule.retain(|(e, _)| *e < epochs);
    }
    let model_cfg = ModelConfig::desk_scale();
    let data = generate_dataset(&SyntheticConfig::default(), "train", 24, 100)?;
    let model = SiameseModel::new(&model_cfg, &Init::Random, cfg.seed)?;
    let (ckpt, report) = train(&cfg, &data, model, &model_cfg, &mut |e| {
        println!("epoch {:>2}  lr {:.0e}  loss {:.4}", e.epoch, e.lr, e.mean_loss)
    })?;
    ckpt.save(std::path::Path::new(&path))?;
    println!("{} steps, checkpoint in {path}", report.step_losses.len());
    Ok(())
}
