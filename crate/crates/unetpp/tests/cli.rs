//! Command contracts, exercised through the real binary where exit codes matter.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use unetpp::commands::{feature_maps, load_data, normalize, write_eval};
use unetpp::config::RunConfig;
use unetpp::report::parse_csv;
use unetpp_core::data::Split;
use unetpp_core::tensor::ReduceOp;
use unetpp_core::train::evaluate_with;

const SMALL: &str = "\
depth = 2
widths = 3,4,5,6,7
input_height = 16
input_width = 16
synthetic = true
synth_count = 24
synth_radius_min = 2
synth_radius_max = 5
max_epochs = 2
batch_size = 4
learning_rate = 0.01
";

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_unetpp"))
}

fn run(args: &[&str]) -> (i32, String, String) {
    let o = bin().args(args).output().unwrap();
    (
        o.status.code().unwrap_or(-1),
        String::from_utf8_lossy(&o.stdout).into_owned(),
        String::from_utf8_lossy(&o.stderr).into_owned(),
    )
}

fn small_config(dir: &Path) -> PathBuf {
    let p = dir.join("small.cfg");
    fs::write(&p, SMALL).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn summary_counts_and_ordering() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sum");
    let (code, stdout, _) = run(&["summary", "--set", "variant=unet_pp", "--set", "depth=4", "--out", s(&out)]);
    assert_eq!(code, 0);
    assert!(stdout.contains("15 nodes, 4 heads(with DS)"), "{stdout}");
    let line = stdout.lines().find(|l| l.starts_with("params:")).unwrap();
    let nums: Vec<usize> = line.split_whitespace().filter_map(|w| w.parse().ok()).collect();
    assert_eq!(nums.len(), 3);
    assert!(nums[0] < nums[1] && nums[1] < nums[2], "{line}");
    let (h, rows) = parse_csv(&fs::read_to_string(out.join("summary.csv")).unwrap());
    assert_eq!(h, ["node", "op", "inputs", "out_shape", "params"]);
    assert_eq!(rows.len(), 15 + 4);
    let dot = fs::read_to_string(out.join("graph.dot")).unwrap();
    assert_eq!(dot.matches(" -> ").count(), 34);
    assert!(out.join("config.txt").exists());
}

#[test]
fn config_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.cfg");
    fs::write(&bad, "variant = unet_pp\ndepht = 3\n").unwrap();
    let (code, _, err) = run(&["summary", "--config", s(&bad), "--out", s(&dir.path().join("o"))]);
    assert_eq!(code, 2);
    assert!(err.contains("depht"), "{err}");
    assert_eq!(run(&["summary", "--set", "variant=vnet"]).0, 2);
    assert_eq!(run(&["frobnicate"]).0, 2);
    // no dataset configured
    assert_eq!(run(&["train", "--out", s(&dir.path().join("t"))]).0, 2);
}

#[test]
fn trials_write_per_trial_and_mean_histories() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let out = dir.path().join("train");
    let (code, _, err) = run(&["train", "--config", s(&cfg), "--trials", "3", "--seed", "7", "--out", s(&out)]);
    assert_eq!(code, 0, "{err}");
    let hist: Vec<_> = (0..3)
        .map(|t| parse_csv(&fs::read_to_string(out.join(format!("history_t{t}.csv"))).unwrap()))
        .collect();
    let (mh, mean) = parse_csv(&fs::read_to_string(out.join("history_mean.csv")).unwrap());
    assert_eq!(mean.len(), 2);
    // every mean column is the arithmetic mean of the matching trial column
    for (c, name) in hist[0].0.iter().enumerate().skip(1) {
        let mc = mh.iter().position(|h| *h == format!("{name}_mean")).unwrap();
        for (e, row) in mean.iter().enumerate() {
            let vals: Vec<f64> = hist.iter().map(|h| h.1[e][c].parse().unwrap()).collect();
            let expect = vals.iter().sum::<f64>() / 3.0;
            let got: f64 = row[mc].parse().unwrap();
            assert!((got - expect).abs() <= 1e-12 * expect.abs().max(1.0), "{name}: {got} vs {expect}");
        }
    }
    assert!(out.join("learning_curve.svg").exists());
    assert!(out.join("checkpoint_t2.nnck").exists());
}

#[test]
fn rerun_from_echoed_config_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    assert_eq!(run(&["train", "--config", s(&cfg), "--out", s(&a)]).0, 0);
    assert_eq!(run(&["train", "--config", s(&a.join("config.txt")), "--out", s(&b)]).0, 0);
    for f in ["history_t0.csv", "history_mean.csv", "config.txt", "checkpoint_t0.nnck"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn eval_stratify_and_ttest() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let t = dir.path().join("t");
    assert_eq!(run(&["train", "--config", s(&cfg), "--out", s(&t)]).0, 0);
    let ck = t.join("checkpoint_t0.nnck");
    let e = dir.path().join("e");
    let (code, _, err) = run(&["eval", "--config", s(&cfg), "--checkpoint", s(&ck), "--stratify", "size_bucket", "--out", s(&e)]);
    assert_eq!(code, 0, "{err}");
    let (_, buckets) = parse_csv(&fs::read_to_string(e.join("metrics_by_bucket.csv")).unwrap());
    assert_eq!(buckets.len(), 7);
    // identical baseline: every t-test row has p = 1
    let e2 = dir.path().join("e2");
    let (code, _, err) = run(&["eval", "--config", s(&e.join("config.txt")), "--baseline", s(&e.join("metrics.csv")), "--out", s(&e2)]);
    assert_eq!(code, 0, "{err}");
    let (h, rows) = parse_csv(&fs::read_to_string(e2.join("ttest.csv")).unwrap());
    let p = h.iter().position(|c| c == "p").unwrap();
    assert!(!rows.is_empty());
    assert!(rows.iter().all(|r| r[p] == "1"), "{rows:?}");
    // a checkpoint from another architecture is refused
    let (code, _, err) = run(&["eval", "--config", s(&cfg), "--set", "depth=1", "--checkpoint", s(&ck), "--out", s(&e2)]);
    assert_eq!(code, 1);
    assert!(err.contains("does not match"), "{err}");
}

#[test]
fn perfect_stub_scores_one() {
    let mut cfg = RunConfig::parse(SMALL, Path::new("small")).unwrap();
    cfg.set("stratify", "size_bucket").unwrap();
    let data = load_data(&cfg).unwrap();
    let rows = evaluate_with(&data, Split::Test, 0.5, |x| {
        // look the labels up by the exact input
        let s = data.samples.iter().find(|s| s.input().unwrap() == *x).unwrap();
        s.labels()
    })
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_eval(&cfg, dir.path(), &data, &rows, "stub", "ensemble").unwrap();
    let (_, rows) = parse_csv(&fs::read_to_string(dir.path().join("metrics.csv")).unwrap());
    let mean = rows.iter().find(|r| r[0] == "mean").unwrap();
    assert!(mean[3..].iter().all(|v| v == "1"), "{mean:?}");
}

#[test]
fn prune_study_matches_eval() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let t = dir.path().join("t");
    assert_eq!(run(&["train", "--config", s(&cfg), "--out", s(&t)]).0, 0);
    let ck = t.join("checkpoint_t0.nnck");
    let p = dir.path().join("p");
    let (code, _, err) = run(&["prune-study", "--config", s(&cfg), "--checkpoint", s(&ck), "--out", s(&p)]);
    assert_eq!(code, 0, "{err}");
    let (_, rows) = parse_csv(&fs::read_to_string(p.join("tradeoff.csv")).unwrap());
    assert_eq!(rows.len(), 2);
    assert!(rows[0][1].parse::<usize>().unwrap() < rows[1][1].parse::<usize>().unwrap());
    assert_eq!(&rows[1][4..], ["0", "0", "0"]);
    for (k, row) in rows.iter().enumerate() {
        let e = dir.path().join(format!("e{k}"));
        let mode = format!("pruned:{}", k + 1);
        assert_eq!(run(&["eval", "--config", s(&cfg), "--checkpoint", s(&ck), "--mode", &mode, "--out", s(&e)]).0, 0);
        let (_, m) = parse_csv(&fs::read_to_string(e.join("metrics.csv")).unwrap());
        let mean = m.iter().find(|r| r[0] == "mean").unwrap();
        assert_eq!(mean[3], row[2], "IoU at L{}", k + 1);
        assert_eq!(mean[4], row[3], "Dice at L{}", k + 1);
    }
    // a model without deep supervision cannot be pruned
    let t2 = dir.path().join("t2");
    assert_eq!(run(&["train", "--config", s(&cfg), "--set", "deep_supervision=false", "--out", s(&t2)]).0, 0);
    let (code, _, _) = run(&[
        "prune-study",
        "--config",
        s(&t2.join("config.txt")),
        "--checkpoint",
        s(&t2.join("checkpoint_t0.nnck")),
        "--out",
        s(&p),
    ]);
    assert_eq!(code, 1);
}

#[test]
fn gradcheck_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let (code, stdout, _) = run(&["gradcheck", "--config", s(&cfg), "--out", s(&dir.path().join("g"))]);
    assert_eq!(code, 0, "{stdout}");
    let (code, stdout, _) = run(&["gradcheck", "--config", s(&cfg), "--op", "conv2d", "--out", s(&dir.path().join("g1"))]);
    assert_eq!(code, 0);
    assert_eq!(stdout.lines().filter(|l| l.starts_with("conv2d")).count(), 3);
    assert_eq!(stdout.lines().count(), 4);
    let (code, _, _) = run(&["gradcheck", "--config", s(&cfg), "--op", "conv2d", "--tolerance", "1e-12", "--out", s(&dir.path().join("g2"))]);
    assert_eq!(code, 1);
    assert_eq!(run(&["gradcheck", "--config", s(&cfg), "--set", "gradcheck_size=32"]).0, 2);
}

#[test]
fn ablate_rows() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let out = dir.path().join("ab");
    let (code, _, err) = run(&["ablate", "--config", s(&cfg), "--trials", "2", "--set", "max_epochs=1", "--out", s(&out)]);
    assert_eq!(code, 0, "{err}");
    let (h, rows) = parse_csv(&fs::read_to_string(out.join("ablation.csv")).unwrap());
    assert_eq!(rows.len(), 9 * 2 + 9);
    let trial = h.iter().position(|c| c == "trial").unwrap();
    assert_eq!(rows.iter().filter(|r| r[trial] == "all").count(), 9);
    for r in rows.iter().filter(|r| r[1] == "unet_e") {
        assert_eq!(r[3], "true");
    }
    let params = |label: &str| -> usize { rows.iter().find(|r| r[0] == label).unwrap()[6].parse().unwrap() };
    assert!(params("unet_L1") < params("unet_L2") && params("unet_L2") < params("unet_L3") && params("unet_L3") < params("unet_L4"));
    assert!(params("unet_plus") < params("unet_pp"));
}

#[test]
fn featmap_files_and_channel_means() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = small_config(dir.path());
    let t = dir.path().join("t");
    assert_eq!(run(&["train", "--config", s(&cfg_path), "--set", "depth=4", "--out", s(&t)]).0, 0);
    let f = dir.path().join("f");
    let ck = t.join("checkpoint_t0.nnck");
    let (code, _, err) = run(&["featmap", "--config", s(&t.join("config.txt")), "--checkpoint", s(&ck), "--out", s(&f)]);
    assert_eq!(code, 0, "{err}");
    for j in 0..=4 {
        assert!(f.join(format!("featmap_X0_{j}.pgm")).exists(), "X0_{j}");
    }
    // recompute one map from the checkpoint
    let ckpt = unetpp::codec::load_checkpoint(&ck).unwrap();
    let net = ckpt.network().unwrap();
    let mut cfg = RunConfig::load(&t.join("config.txt")).unwrap();
    cfg.set("split", "test").unwrap();
    let data = load_data(&cfg).unwrap();
    let x = data.split(Split::Test).next().unwrap().input().unwrap();
    let maps = feature_maps(&net, &x).unwrap();
    let mut feeds = unetpp_core::Feeds::new();
    feeds.insert("input".into(), x.clone());
    let eval = net.graph().forward(&feeds).unwrap();
    let v = eval.value("X^{0,2}").unwrap();
    let (_, c, h, w) = v.dims4().unwrap();
    for p in 0..h * w {
        let m: f64 = (0..c).map(|k| v.data()[k * h * w + p]).sum::<f64>() / c as f64;
        assert!((maps[2].1.data()[p] - m).abs() < 1e-12);
    }
    assert_eq!(maps[2].1, v.reduce(ReduceOp::Mean, Some(&[1]), false).unwrap());
    let pgm = unetpp::pgm::read_pgm(&f.join("featmap_X0_2.pgm")).unwrap();
    assert_eq!(pgm.to_unit().len(), h * w);
}

#[test]
fn flat_maps_become_mid_gray() {
    let out = normalize(&[0.3; 5]);
    let pgm = unetpp::pgm::Pgm::from_unit(5, 1, &out);
    assert!(pgm.samples.iter().all(|&v| v == 32768));
    assert_eq!(normalize(&[1.0, 3.0, 2.0]), vec![0.0, 1.0, 0.5]);
}
