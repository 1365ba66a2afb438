//! Resolves a configuration from defaults, a file, environment variables
//! and flags, and shows which layer won for a few keys.
use siampf::cli::{env_name, parse_config};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::env::temp_dir().join("siampf_config_demo");
    std::fs::create_dir_all(&dir)?;
    let file = dir.join("run.json");
    std::fs::write(&file, r#"{"train": {"epochs": 45}, "confidence.ratio": 0.5}"#)?;
    let env = vec![(env_name("confidence.ratio"), "0.4".to_string()), (env_name("seed"), "9".to_string())];
    let flags = vec![("seed".to_string(), "11".to_string())];
    let cfg = parse_config(Some(&file), &env, &flags)?;
    println!("train.epochs      = {} (file)", cfg.train.epochs);
    println!("confidence.ratio  = {} (env {})", cfg.tracker.gate.ratio, env_name("confidence.ratio"));
    println!("seed              = {} (flag)", cfg.seed());
    println!("lambda            = {} (default)", cfg.tracker.lambda);
    match parse_config(None, &[], &[("train.epoch".into(), "3".into())]) {
        Err(e) => println!("unknown key rejected: {e}"),
        Ok(_) => unreachable!(),
    }
    Ok(())
}
