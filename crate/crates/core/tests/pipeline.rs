use std::path::Path;

use iae_lab::trainer::{checkpoint_dir, metrics_header, run_training_in, TrainConfig, Trainer};

fn small_config() -> TrainConfig {
    TrainConfig::from_json(
        r#"{
          "experiment": "iae",
          "step": {"case": 4, "latent_dim": 2, "decoder_noise_dim": 2, "prior": {"gaussian": {"dim": 2}},
                   "encoder_hidden": [16], "decoder_hidden": [16], "disc_hidden": [16]},
          "dataset": {"kind": "ring_mog", "k": 4, "radius": 2.0, "sigma": 0.2, "n_train": 400, "n_heldout": 100},
          "steps": 30, "batch_size": 32, "master_seed": 11, "eval_every": 10
        }"#,
    )
    .unwrap()
}

fn cli(args: &[&str]) -> (i32, String, String) {
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let code = iae_lab::cli::run(std::iter::once("iae-lab").chain(args.iter().copied()), &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

fn write_config(dir: &Path, cfg: &TrainConfig) -> String {
    let p = dir.join("config.json");
    std::fs::write(&p, serde_json::to_string(cfg).unwrap()).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn resume_from_checkpoint_is_bitwise() {
    let cfg = small_config();
    let mut straight = Trainer::new(cfg.clone()).unwrap();
    for _ in 0..20 {
        straight.train_step().unwrap();
    }
    let mut first = Trainer::new(cfg.clone()).unwrap();
    for _ in 0..8 {
        first.train_step().unwrap();
    }
    let dir = tempfile::tempdir().unwrap();
    first.save_checkpoint(dir.path()).unwrap();
    let mut resumed = Trainer::from_checkpoint(cfg, dir.path()).unwrap();
    assert_eq!(resumed.step, 8);
    assert_eq!(resumed.nets, first.nets);
    for _ in 8..20 {
        resumed.train_step().unwrap();
    }
    assert_eq!(resumed.nets, straight.nets);
}

#[test]
fn run_writes_metrics_checkpoints_and_summary() {
    let cfg = small_config();
    let dir = tempfile::tempdir().unwrap();
    let a = run_training_in(&cfg, dir.path()).unwrap();
    let metrics = std::fs::read_to_string(&a.metrics_csv).unwrap();
    assert_eq!(metrics.lines().next().unwrap(), metrics_header().trim_end());
    assert_eq!(metrics.lines().count(), 31);
    for step in [0, 10, 20, 30] {
        assert!(checkpoint_dir(dir.path(), step).join("state.json").is_file());
    }
    assert!(a.summary_json.is_file());
    assert!(dir.path().join("config.json").is_file());
    assert!(a.summary.energy_distance.is_some());
}

#[test]
fn zero_steps_gives_header_only_metrics_and_one_checkpoint() {
    let mut cfg = small_config();
    cfg.steps = 0;
    let dir = tempfile::tempdir().unwrap();
    let a = run_training_in(&cfg, dir.path()).unwrap();
    let metrics = std::fs::read_to_string(&a.metrics_csv).unwrap();
    assert_eq!(metrics, metrics_header());
    assert_eq!(a.checkpoints, vec![checkpoint_dir(dir.path(), 0)]);
}

#[test]
fn repeated_runs_have_identical_metrics() {
    let cfg = small_config();
    let dir = tempfile::tempdir().unwrap();
    let strip = |p: &Path| -> Vec<String> {
        std::fs::read_to_string(p.join("metrics.csv")).unwrap().lines().map(|l| l.rsplit_once(',').unwrap().0.to_string()).collect()
    };
    run_training_in(&cfg, &dir.path().join("a")).unwrap();
    run_training_in(&cfg, &dir.path().join("b")).unwrap();
    assert_eq!(strip(&dir.path().join("a")), strip(&dir.path().join("b")));
}

#[test]
fn eval_subcommand_prints_summary_json() {
    let cfg = small_config();
    let dir = tempfile::tempdir().unwrap();
    run_training_in(&cfg, dir.path()).unwrap();
    let config = write_config(dir.path(), &cfg);
    let ckpt = checkpoint_dir(dir.path(), 30);
    let (code, out, err) = cli(&["eval", "--checkpoint", ckpt.to_str().unwrap(), "--config", &config]);
    assert_eq!(code, 0, "{err}");
    let v: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert_eq!(v["step"], 30);
}

#[test]
fn cli_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(cli(&["--help"]).0, 0);
    let (code, _, err) = cli(&["train", "--config", "definitely/missing.json"]);
    assert_eq!(code, 2);
    assert!(err.contains("definitely/missing.json"), "{err}");
    assert_eq!(cli(&["no-such-command"]).0, 2);
    assert_eq!(cli(&["oracle-check", "--seed", "1"]).0, 2);

    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"experiment": "iae", "bogus": 1}"#).unwrap();
    assert_eq!(cli(&["train", "--config", bad.to_str().unwrap()]).0, 2);

    let mut cfg = small_config();
    cfg.optimizer.lr = 1e300;
    cfg.steps = 50;
    let config = write_config(dir.path(), &cfg);
    let out = dir.path().join("run");
    let (code, _, err) = cli(&["train", "--config", &config, "--output-dir", out.to_str().unwrap()]);
    assert_eq!(code, 1, "{err}");
    assert!(out.join("aborted_step.json").is_file());

    let oc = dir.path().join("oc");
    assert_eq!(cli(&["oracle-check", "--trials", "3", "--seed", "2", "--output-dir", oc.to_str().unwrap()]).0, 0);
    assert_eq!(cli(&["gradcheck", "--seed", "3"]).0, 0);
}
