use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use coxvae_core::training::load_checkpoint;
use coxvae_core::{CoxVaeNet, TrainConfig};

fn coxvae(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_coxvae"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(out: Output) -> Output {
    assert!(
        out.status.success(),
        "exit {:?}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Small but complete run configuration.
fn write_config(dir: &Path, name: &str, extra_train: &str) -> PathBuf {
    write_config_lr(dir, name, "1e-3", extra_train)
}

fn write_config_lr(dir: &Path, name: &str, lr_vae: &str, extra_train: &str) -> PathBuf {
    let path = dir.join(name);
    let text = format!(
        r#"{{
  "data": {{"n_samples": 200, "image_side": 8}},
  "train": {{"total_steps": 30, "hidden_width": 16, "latent_dim": 4, "eval_every": 10, "lr_vae": {lr_vae}, "lr_cox": 1e-3{extra_train}}},
  "val_fraction": 0.25
}}"#
    );
    fs::write(&path, text).unwrap();
    path
}

fn gen_data(root: &Path, cfg: &Path) -> PathBuf {
    let data = root.join("data");
    ok(coxvae(&["--config", p(cfg), "--out", p(&data), "gen-data"]));
    data
}

#[test]
fn gen_data_writes_files_and_is_reproducible_from_its_lock() {
    let root = tempfile::tempdir().unwrap();
    let cfg = write_config(root.path(), "run.json", "");
    let data = gen_data(root.path(), &cfg);
    for f in ["images.svi", "survival.csv", "config.lock.json"] {
        assert!(data.join(f).is_file(), "{f} missing");
    }
    let rows = fs::read_to_string(data.join("survival.csv")).unwrap().lines().count();
    assert_eq!(rows, 201);

    let again = root.path().join("again");
    let lock = data.join("config.lock.json");
    ok(coxvae(&["--config", p(&lock), "--out", p(&again), "gen-data"]));
    for f in ["images.svi", "survival.csv", "config.lock.json"] {
        assert_eq!(fs::read(data.join(f)).unwrap(), fs::read(again.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn invalid_censor_target_exits_2_naming_the_field() {
    let root = tempfile::tempdir().unwrap();
    let cfg = root.path().join("bad.json");
    fs::write(&cfg, r#"{"data": {"censor_rate_target": 1.5}}"#).unwrap();
    let out = coxvae(&["--config", p(&cfg), "--out", p(&root.path().join("o")), "gen-data"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("censor_rate_target"));

    fs::write(&cfg, r#"{"train": {"learning_rate": 0.1}}"#).unwrap();
    let out = coxvae(&["--config", p(&cfg), "--out", p(&root.path().join("o")), "gen-data"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("learning_rate"));
}

#[test]
fn missing_inputs_exit_3() {
    let root = tempfile::tempdir().unwrap();
    let out = coxvae(&["--out", p(root.path()), "train", "--data", p(&root.path().join("nothing"))]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn train_eval_embed_traverse_pipeline() {
    let root = tempfile::tempdir().unwrap();
    let cfg = write_config(root.path(), "run.json", "");
    let data = gen_data(root.path(), &cfg);

    let run_a = root.path().join("a");
    let run_b = root.path().join("b");
    for run in [&run_a, &run_b] {
        ok(coxvae(&["--config", p(&cfg), "--out", p(run), "train", "--data", p(&data)]));
    }
    for f in ["model.svck", "history.csv", "metrics.json", "config.lock.json"] {
        assert_eq!(fs::read(run_a.join(f)).unwrap(), fs::read(run_b.join(f)).unwrap(), "{f} differs");
    }
    let history = fs::read_to_string(run_a.join("history.csv")).unwrap();
    assert_eq!(history.lines().count(), 31);
    assert_eq!(history.lines().next().unwrap(), "step,total,recon,kl,cox,n_events,val_cindex");

    let ckpt = run_a.join("model.svck");
    let eval_dir = root.path().join("eval");
    let first = ok(coxvae(&["--config", p(&cfg), "--out", p(&eval_dir), "eval", "--checkpoint", p(&ckpt), "--data", p(&data)]));
    let second = ok(coxvae(&["--config", p(&cfg), "--out", p(&eval_dir), "eval", "--checkpoint", p(&ckpt), "--data", p(&data)]));
    assert_eq!(first.stdout, second.stdout);
    let metrics: serde_json::Map<String, serde_json::Value> =
        serde_json::from_str(&fs::read_to_string(eval_dir.join("metrics.json")).unwrap()).unwrap();
    let mut keys: Vec<&str> = metrics.keys().map(String::as_str).collect();
    keys.sort_unstable();
    assert_eq!(keys, ["cindex", "ibs", "n", "n_events"]);
    let c = metrics["cindex"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&c));
    let stdout = String::from_utf8(first.stdout).unwrap();
    assert!(stdout.starts_with("cindex "), "{stdout}");
    // Same split and metrics as written at the end of training.
    assert_eq!(
        fs::read_to_string(eval_dir.join("metrics.json")).unwrap(),
        fs::read_to_string(run_a.join("metrics.json")).unwrap()
    );

    let emb_dir = root.path().join("emb");
    ok(coxvae(&["--out", p(&emb_dir), "embed", "--checkpoint", p(&ckpt), "--data", p(&data)]));
    let emb = fs::read_to_string(emb_dir.join("embedding.csv")).unwrap();
    assert_eq!(emb.lines().next().unwrap(), "id,pc1,pc2,time_days,event");
    assert_eq!(emb.lines().count(), 201);

    let trav = root.path().join("trav");
    ok(coxvae(&["--out", p(&trav), "traverse", "--checkpoint", p(&ckpt)]));
    let pgms = fs::read_dir(&trav)
        .unwrap()
        .filter(|e| {
            let name = e.as_ref().unwrap().file_name().into_string().unwrap();
            name.starts_with("traverse_dim") && name.ends_with(".pgm")
        })
        .count();
    assert_eq!(pgms, 4);
    let index = fs::read_to_string(trav.join("traversal_index.csv")).unwrap();
    assert_eq!(index.lines().count(), 5);
    assert_eq!(index.lines().next().unwrap(), "dim,weight,hazard_ratio,percent_change");
}

#[test]
fn tau_one_keeps_psi_at_initialization() {
    let root = tempfile::tempdir().unwrap();
    let cfg = write_config(root.path(), "run.json", r#", "tau": 1.0"#);
    let data = gen_data(root.path(), &cfg);
    let run = root.path().join("run");
    ok(coxvae(&["--config", p(&cfg), "--out", p(&run), "train", "--data", p(&data)]));
    let ckpt = load_checkpoint(run.join("model.svck")).unwrap();
    let init = CoxVaeNet::new(ckpt.net.arch.clone(), ckpt.config.seed).unwrap();
    assert_eq!(ckpt.net.cox_weights(), init.cox_weights());
}

#[test]
fn non_finite_training_exits_4_and_keeps_checkpoint() {
    let root = tempfile::tempdir().unwrap();
    let cfg = write_config(root.path(), "run.json", "");
    let data = gen_data(root.path(), &cfg);
    let bad = write_config_lr(root.path(), "bad.json", "1e300", "");
    let run = root.path().join("run");
    let out = coxvae(&["--config", p(&bad), "--out", p(&run), "train", "--data", p(&data)]);
    assert_eq!(out.status.code(), Some(4), "{}", String::from_utf8_lossy(&out.stderr));
    let ckpt = load_checkpoint(run.join("model.svck")).unwrap();
    let rows = fs::read_to_string(run.join("history.csv")).unwrap().lines().count() as u64;
    assert_eq!(rows - 1, ckpt.step);
}

#[test]
fn tau_sweep_reports_one_row_per_tau_with_shared_seed() {
    let root = tempfile::tempdir().unwrap();
    let cfg = write_config(root.path(), "run.json", "");
    let data = gen_data(root.path(), &cfg);
    let out = root.path().join("sweep");
    ok(coxvae(&[
        "--config", p(&cfg), "--out", p(&out), "--seed", "5", "tau-sweep", "--data", p(&data), "--taus", "0.01,0.5,0.99",
    ]));
    let report = fs::read_to_string(out.join("tau_report.csv")).unwrap();
    let lines: Vec<&str> = report.lines().collect();
    assert_eq!(lines[0], "tau,abs_spearman_pc1_time,val_cindex");
    assert_eq!(lines.len(), 4);
    for (line, tau) in lines[1..].iter().zip(["0.01", "0.5", "0.99"]) {
        assert!(line.starts_with(&format!("{tau},")), "{line}");
        let lock: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(out.join(format!("tau_{tau}/config.lock.json"))).unwrap()).unwrap();
        assert_eq!(lock["train"]["seed"], 5);
        let parsed: TrainConfig = serde_json::from_value(lock["train"].clone()).unwrap();
        assert_eq!(parsed.tau.to_string(), tau);
        assert!(out.join(format!("tau_{tau}/embedding.csv")).is_file());
    }
}
