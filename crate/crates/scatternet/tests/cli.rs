use std::path::Path;
use std::process::Command;

use scatternet::cli::{params_report, run};
use scatternet::{checkpoint, Error};
use scatternet_core::model::Variant;

fn cli(args: &[&str]) -> Result<String, Error> {
    let mut out = Vec::new();
    run(std::iter::once("scatternet").chain(args.iter().copied()), &mut out)?;
    Ok(String::from_utf8(out).unwrap())
}

fn bin(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_scatternet")).args(args).output().unwrap()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn usage_errors_exit_1_with_help() {
    let out = bin(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("Usage"), "{err}");
    let out = bin(&["params", "--bogus"]);
    assert_eq!(out.status.code(), Some(1));
    let out = bin(&["--help"]);
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stdout).contains("gradcheck"));
    assert!(matches!(cli(&["train"]), Err(Error::Usage(_))));
}

#[test]
fn data_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("none");
    let out = bin(&["train", "--data", path(&missing), "--out", path(&dir.path().join("c"))]);
    assert_eq!(out.status.code(), Some(2));
    let out = bin(&["eval", "--ckpt", path(&missing), "--data", path(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn params_prints_count_then_table() {
    let text = cli(&["params", "--variant", "scatter"]).unwrap();
    let (count, table) = params_report(Variant::Scatter, "full", 24).unwrap();
    assert_eq!(text.lines().next().unwrap(), count.to_string());
    assert_eq!(table.iter().map(|(_, n)| n).sum::<usize>(), count);
    for (name, n) in &table {
        assert!(text.lines().any(|l| l.starts_with(name.as_str()) && l.contains(&n.to_string())), "{name}");
    }
    let base = cli(&["params", "--variant", "baseline"]).unwrap();
    assert!(base.lines().next().unwrap().parse::<usize>().unwrap() > count);
}

#[test]
fn doctor_reports_the_filter_bank() {
    let text = cli(&["doctor"]).unwrap();
    assert!(text.contains("negative-frequency ratio"));
    assert!(text.contains("Lipschitz bound"));
}

#[test]
fn smoke_chain() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let ckpt = dir.path().join("run.ckpt");
    let (pred, truth) = (dir.path().join("pred.csv"), dir.path().join("truth.csv"));
    cli(&["synth", "--records", "8", "--classes", "2", "--out", path(&data)]).unwrap();

    let out = bin(&["train", "--data", path(&data), "--variant", "scatter", "--preset", "tiny", "--epochs", "1", "--set", "batch_size=4", "--out", path(&ckpt)]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let ck = checkpoint::load(&ckpt).unwrap();
    assert_eq!(ck.epoch, 1);
    assert_eq!(ck.config.model.window, 1024);

    let report = cli(&["eval", "--ckpt", path(&ckpt), "--data", path(&data), "--split", "val", "--pred-out", path(&pred), "--truth-out", path(&truth)]).unwrap();
    let internal: f64 = report.lines().find_map(|l| l.strip_prefix("score ")).unwrap().parse().unwrap();
    let weights = data.join("classes.csv");
    let standalone: f64 = cli(&["score", "--truth", path(&truth), "--pred", path(&pred), "--weights", path(&weights)]).unwrap().trim().parse().unwrap();
    assert!((internal - standalone).abs() <= 1e-9, "{internal} vs {standalone}");

    // pred = truth under identity weights
    assert_eq!(cli(&["score", "--truth", path(&truth), "--pred", path(&truth), "--weights", path(&weights)]).unwrap().trim(), "1.0");

    // a weight file with other classes is rejected
    let other = dir.path().join("other.csv");
    std::fs::write(&other, ",a,b,c\na,1,0,0\nb,0,1,0\nc,0,0,1\n").unwrap();
    let err = cli(&["eval", "--ckpt", path(&ckpt), "--data", path(&data), "--weights", path(&other)]).unwrap_err();
    assert_eq!(err.exit_code(), 2);
}

#[test]
fn environment_seed_overrides_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    cli(&["synth", "--records", "6", "--classes", "2", "--out", path(&data)]).unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "# tiny run\npreset = tiny\nseed = 1\nmax_epochs = 1\nbatch_size = 8\n").unwrap();
    let ckpt = dir.path().join("c.ckpt");
    let out = Command::new(env!("CARGO_BIN_EXE_scatternet"))
        .args(["train", "--data", path(&data), "--config", path(&cfg), "--out", path(&ckpt)])
        .env("SCATTERNET_SEED", "42")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(checkpoint::load(&ckpt).unwrap().config.seed, 42);
}
