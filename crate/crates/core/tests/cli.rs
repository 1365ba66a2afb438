use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use siampf::synthetic::{generate_dataset, write_sequence, SyntheticConfig};

const TINY: &[&str] = &[
    "--set", "model.width_divisor=16",
    "--set", "model.response_scale=0.01",
    "--set", "train.epochs=2",
    "--set", "train.steps_per_epoch=2",
    "--set", "train.batch_size=2",
    "--set", "train.lr_schedule=[[0,0.01],[1,0.001]]",
];

fn siampf(args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_siampf"));
    cmd.args(args).env_clear();
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

fn run(args: &[String]) -> Output {
    let args: Vec<&str> = args.iter().map(String::as_str).collect();
    siampf(&args, &[])
}

fn text(out: &Output) -> String {
    format!("{}{}", String::from_utf8_lossy(&out.stdout), String::from_utf8_lossy(&out.stderr))
}

fn write_dataset(root: &Path, count: usize, seed: u64) {
    let cfg = SyntheticConfig {
        frames: 8,
        ..SyntheticConfig::default()
    };
    for seq in generate_dataset(&cfg, "seq", count, seed).unwrap() {
        write_sequence(&seq, root).unwrap();
    }
}

fn report_without_run_info(path: &Path) -> Value {
    let mut v: Value = serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap();
    v.as_object_mut().unwrap().remove("run_info");
    v
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn help_lists_every_key_with_its_default() {
    let out = siampf(&["--help"], &[]);
    assert!(out.status.success());
    let help = text(&out);
    for k in siampf::cli::schema() {
        assert!(help.contains(&k.key), "help is missing {}", k.key);
    }
    assert!(help.contains("confidence.ratio") && help.contains("0.3"));
    for sub in ["train", "track", "eval", "ablate"] {
        assert!(help.contains(sub), "help is missing subcommand {sub}");
    }
}

#[test]
fn unknown_key_is_a_usage_error() {
    let out = siampf(&["eval", "--oracle", "--set", "train.epoch=3"], &[]);
    assert_eq!(out.status.code(), Some(2));
    assert!(text(&out).contains("train.epoch"), "{}", text(&out));
}

#[test]
fn mistyped_env_value_is_a_usage_error() {
    let out = siampf(&["eval", "--oracle"], &[("SIAMPF_TRAIN_EPOCHS", "many")]);
    assert_eq!(out.status.code(), Some(2));
    assert!(text(&out).contains("train.epochs"), "{}", text(&out));
}

#[test]
fn missing_checkpoint_is_a_runtime_error_naming_the_path() {
    let dir = tempfile::tempdir().unwrap();
    write_dataset(dir.path(), 1, 3);
    let seq = dir.path().join("seq000");
    let out = siampf(&["track", "--checkpoint", "/no/such/ckpt.safetensors", "--sequence", p(&seq)], &[]);
    assert_eq!(out.status.code(), Some(1));
    assert!(text(&out).contains("/no/such/ckpt.safetensors"), "{}", text(&out));
}

#[test]
fn oracle_eval_writes_a_perfect_report() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let out_dir = dir.path().join("out");
    write_dataset(&data, 2, 5);
    let out = siampf(&["eval", "--oracle", "--data", p(&data), "--out", p(&out_dir)], &[]);
    assert_eq!(out.status.code(), Some(0), "{}", text(&out));
    let report = report_without_run_info(&out_dir.join("report.json"));
    assert_eq!(report["tracker"], "oracle");
    assert_eq!(report["sequences"].as_array().unwrap().len(), 2);
    assert_eq!(report["mean_precision_at_20"], 1.0);
    assert!(out_dir.join("success.png").exists() && out_dir.join("precision.png").exists());
}

#[test]
fn train_track_eval_ablate() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let out_dir = dir.path().join("out");
    write_dataset(&data, 2, 7);
    let base = ["--data", p(&data), "--out", p(&out_dir)];
    let with = |cmd: &[&str]| -> Vec<String> {
        cmd.iter().chain(&base).chain(TINY).map(|s| s.to_string()).collect()
    };

    let out = run(&with(&["train"]));
    assert_eq!(out.status.code(), Some(0), "{}", text(&out));
    let ckpt = out_dir.join("checkpoint.safetensors");
    assert!(ckpt.exists());
    let train_report: Value = serde_json::from_str(&fs::read_to_string(out_dir.join("train_report.json")).unwrap()).unwrap();
    assert_eq!(train_report["step_losses"].as_array().unwrap().len(), 4);

    let seq = data.join("seq000");
    let out = run(&with(&["track", "--checkpoint", p(&ckpt), "--sequence", p(&seq)]));
    assert_eq!(out.status.code(), Some(0), "{}", text(&out));
    let boxes = siampf::evalbench::read_boxes_csv(&out_dir.join("seq000_boxes.csv")).unwrap();
    assert_eq!(boxes.len(), 8);
    let diags = fs::read_to_string(out_dir.join("seq000_diagnostics.jsonl")).unwrap();
    assert_eq!(diags.lines().count(), 7);
    for line in diags.lines() {
        let d: Value = serde_json::from_str(line).unwrap();
        assert!(d["apcep"].is_number());
    }

    let out = run(&with(&["eval", "--checkpoint", p(&ckpt)]));
    assert_eq!(out.status.code(), Some(0), "{}", text(&out));
    let report = report_without_run_info(&out_dir.join("report.json"));
    assert_eq!(report["sequences"].as_array().unwrap().len(), 2);

    let out = run(&with(&["ablate", "--checkpoint", p(&ckpt)]));
    assert_eq!(out.status.code(), Some(0), "{}", text(&out));
    let table = String::from_utf8_lossy(&out.stdout).to_string();
    assert_eq!(table.lines().filter(|l| l.starts_with('|')).count(), 7, "{table}");
}

#[test]
fn same_seed_reproduces_training_and_evaluation() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    write_dataset(&data, 2, 11);
    let run = |name: &str, env: &[(&str, &str)]| {
        let out_dir = dir.path().join(name);
        let mut args = vec!["train", "--data", p(&data), "--out", p(&out_dir)];
        args.extend_from_slice(TINY);
        let out = siampf(&args, env);
        assert_eq!(out.status.code(), Some(0), "{}", text(&out));
        let ckpt = out_dir.join("checkpoint.safetensors");
        let mut args = vec!["eval", "--checkpoint", p(&ckpt), "--data", p(&data), "--out", p(&out_dir)];
        args.extend_from_slice(TINY);
        let out = siampf(&args, env);
        assert_eq!(out.status.code(), Some(0), "{}", text(&out));
        (fs::read(&ckpt).unwrap(), report_without_run_info(&out_dir.join("report.json")))
    };
    let a = run("a", &[("SIAMPF_SEED", "5")]);
    let b = run("b", &[("SIAMPF_SEED", "5")]);
    assert!(a.0 == b.0, "checkpoints differ");
    assert_eq!(a.1, b.1);
    let c = run("c", &[("SIAMPF_SEED", "6")]);
    assert!(a.0 != c.0, "seed had no effect");
}

#[test]
fn flag_beats_environment() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    write_dataset(&data, 1, 2);
    let env_out = dir.path().join("from_env");
    let flag_out = dir.path().join("from_flag");
    let env = [("SIAMPF_DATA_OUTPUT_DIR", p(&env_out))];
    let out = siampf(&["eval", "--oracle", "--data", p(&data)], &env);
    assert_eq!(out.status.code(), Some(0), "{}", text(&out));
    assert!(env_out.join("report.json").exists());
    let out = siampf(&["eval", "--oracle", "--data", p(&data), "--out", p(&flag_out)], &env);
    assert_eq!(out.status.code(), Some(0), "{}", text(&out));
    assert!(flag_out.join("report.json").exists());
}

#[test]
fn desk_scale_config_matches_the_presets() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs/desk_scale.json");
    let cfg = siampf::cli::parse_config(Some(&path), &[], &[]).unwrap();
    assert_eq!(cfg.model, siampf::ModelConfig::desk_scale());
    assert_eq!(cfg.train, siampf::TrainConfig::desk_scale());
}
