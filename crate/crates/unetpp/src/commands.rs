//! The experiment commands. Each takes a resolved [`RunConfig`] and an output
//! directory, writes its artifacts there (always including `config.txt`),
//! and returns the text meant for stdout.

use std::path::Path;
use std::time::Instant;

use unetpp_core::arch::{ArchSpec, Network, NodeAddress, Variant, INPUT};
use unetpp_core::autograd::Feeds;
use unetpp_core::check::{check_network, check_op, OpCheck};
use unetpp_core::data::{gen_synthetic, Dataset, SIZE_BUCKETS};
use unetpp_core::metrics::{two_sample_ttest, SegMetrics};
use unetpp_core::tensor::ReduceOp;
use unetpp_core::train::{
    embedded_vs_isolated, evaluate, mean_std, Checkpoint, ImageMetrics, Mode, Model, Tiling, Trainer, TrainHistory,
};
use unetpp_core::{Rng, Tensor};

use crate::codec::{load_checkpoint, save_checkpoint};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::fsutil::{read_text, write_atomic};
use crate::pgm::{load_dataset, read_pgm, write_pgm, Pgm};
use crate::report::{self, num, Csv};

/// What a command reports back to the caller.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Outcome {
    pub stdout: String,
    /// False when a check the command performs did not pass.
    pub passed: bool,
}

impl Outcome {
    fn ok(stdout: String) -> Outcome {
        Outcome { stdout, passed: true }
    }
}

fn write(dir: &Path, name: &str, bytes: impl AsRef<[u8]>) -> Result<()> {
    write_atomic(&dir.join(name), bytes.as_ref())
}

/// The dataset named by `data_dir`, or the synthetic one when enabled.
pub fn load_data(cfg: &RunConfig) -> Result<Dataset> {
    match cfg.path("data_dir") {
        Some(dir) => load_dataset(&dir),
        None if cfg.bool("synthetic")? => Ok(gen_synthetic(&cfg.synth()?)?),
        None => Err(Error::Config("no dataset: set `data_dir` or pass --synthetic".into())),
    }
}

fn tiling(cfg: &RunConfig) -> Result<Tiling> {
    Ok(match cfg.window()? {
        None => Tiling::Whole,
        Some((p, s)) => Tiling::Window {
            patch: (p, p),
            stride: (s, s),
        },
    })
}

/// Loads `checkpoint` and checks that it was built from the configured architecture.
fn checkpoint(cfg: &RunConfig) -> Result<Checkpoint> {
    let ckpt = load_checkpoint(&cfg.require_path("checkpoint")?)?;
    let spec = cfg.arch()?;
    if ckpt.spec != spec {
        return Err(Error::Compat(format!(
            "checkpoint has `{}`, configuration has `{}`",
            ckpt.spec.to_kv().trim().replace('\n', " "),
            spec.to_kv().trim().replace('\n', " ")
        )));
    }
    Ok(ckpt)
}

pub fn summary(cfg: &RunConfig, out: &Path) -> Result<Outcome> {
    let spec = cfg.arch()?;
    let net = Network::build(&spec, &Rng::new(cfg.u64("seed")?))?;
    let s = net.summary();
    cfg.echo(out)?;
    write(out, "summary.csv", s.to_csv())?;
    write(out, "graph.dot", s.to_dot())?;
    let mut text = s.to_text();
    text.push_str(&format!("heads: {}\n", net.head_names().join(" ")));
    // the three nested variants at the same depth and widths
    let count = |v: Variant| -> Result<usize> {
        let spec = ArchSpec {
            variant: v,
            deep_supervision: spec.deep_supervision || v == Variant::UnetE,
            ..spec.clone()
        };
        Ok(Network::build(&spec, &Rng::new(0))?.param_count())
    };
    text.push_str(&format!(
        "params: unet {} < unet_plus {} < unet_pp {}\n",
        count(Variant::Unet)?,
        count(Variant::UnetPlus)?,
        count(Variant::UnetPP)?
    ));
    write(out, "summary.txt", &text)?;
    Ok(Outcome::ok(text))
}

fn curve_svg(title: &str, trials: &[TrainHistory]) -> String {
    let mut series = Vec::new();
    for (t, h) in trials.iter().enumerate() {
        let pts = |f: fn(&unetpp_core::train::EpochRecord) -> f64| h.epochs.iter().map(|e| (e.epoch as f64, f(e))).collect();
        series.push((format!("train {t}"), pts(|e| e.train_loss)));
        series.push((format!("val {t}"), pts(|e| e.val_loss)));
    }
    report::line_chart(title, "epoch", "loss", &series)
}

pub fn train(cfg: &RunConfig, out: &Path) -> Result<Outcome> {
    let spec = cfg.arch()?;
    let trials = cfg.trials()?;
    let tcfgs = (0..trials).map(|t| cfg.train(t)).collect::<Result<Vec<_>>>()?;
    let data = load_data(cfg)?;
    cfg.echo(out)?;
    let mut histories = Vec::new();
    let mut text = String::new();
    for (t, tcfg) in tcfgs.iter().enumerate() {
        let mut trainer = Trainer::new(&spec, tcfg)?;
        let result = (|| -> Result<()> {
            while !trainer.is_finished() {
                trainer.run_epoch(&data)?;
            }
            Ok(())
        })();
        let history = trainer.history();
        // keep whatever finished, even when training diverged
        write(out, &format!("history_t{t}.csv"), report::history_csv(&history).into_bytes())?;
        save_checkpoint(&out.join(format!("checkpoint_t{t}.nnck")), &trainer.checkpoint())?;
        result?;
        let last = history.epochs.last().expect("at least one epoch");
        text.push_str(&format!(
            "trial {t} (seed {}): {} epochs, stop {}, best epoch {}, val loss {:.6}, val IoU {:.4}\n",
            tcfg.seed,
            history.epochs.len(),
            history.stop_reason.map_or("-", |r| r.as_str()),
            history.best_epoch,
            history.epochs[history.best_epoch - 1].val_loss,
            last.val_iou
        ));
        histories.push(history);
    }
    write(out, "history_mean.csv", report::history_mean_csv(&histories).into_bytes())?;
    write(out, "learning_curve.svg", curve_svg(&format!("{} d={}", spec.variant, spec.depth), &histories))?;
    Ok(Outcome::ok(text))
}

const BUCKET_HEADER: [&str; 8] = ["bucket", "count", "IoU", "Dice", "sensitivity", "specificity", "F1", "F2"];

fn bucket_csv(rows: &[ImageMetrics]) -> Csv {
    let mut csv = Csv::new(&BUCKET_HEADER);
    for b in 0..SIZE_BUCKETS {
        let members: Vec<&SegMetrics> = rows.iter().filter(|r| r.size_bucket == b).map(|r| &r.metrics).collect();
        let mut cells = vec![b.to_string(), members.len().to_string()];
        if members.is_empty() {
            cells.extend(std::iter::repeat_n(String::new(), 6));
        } else {
            cells.extend(report::summarize(members.into_iter()).0.iter().map(|&v| num(v)));
        }
        csv.push(&cells);
    }
    csv
}

fn ttest_csv(current: &[ImageMetrics], baseline: &[(String, [f64; 6])], data: &Dataset, stratify: bool) -> Result<Csv> {
    let mut csv = Csv::new(&["group", "metric", "n", "n_baseline", "t", "df", "p", "significant"]);
    let bucket_of = |id: &str| data.get(id).map(|s| s.size_bucket);
    let mut groups: Vec<(String, Option<u8>)> = vec![("all".into(), None)];
    if stratify {
        groups.extend((0..SIZE_BUCKETS).map(|b| (format!("bucket{b}"), Some(b))));
    }
    for (name, bucket) in groups {
        let cur: Vec<[f64; 6]> = current
            .iter()
            .filter(|r| bucket.is_none_or(|b| r.size_bucket == b))
            .map(|r| r.metrics.values())
            .collect();
        let base: Vec<[f64; 6]> = baseline
            .iter()
            .filter(|(id, _)| bucket.is_none_or(|b| bucket_of(id) == Some(b)))
            .map(|r| r.1)
            .collect();
        if cur.len() < 2 || base.len() < 2 {
            continue;
        }
        for (k, metric) in SegMetrics::NAMES.iter().enumerate() {
            let a: Vec<f64> = cur.iter().map(|v| v[k]).collect();
            let b: Vec<f64> = base.iter().map(|v| v[k]).collect();
            let t = two_sample_ttest(&a, &b)?;
            csv.push(&[
                name.clone(),
                metric.to_string(),
                a.len().to_string(),
                b.len().to_string(),
                num(t.t),
                num(t.df),
                num(t.p),
                t.significant.to_string(),
            ]);
        }
    }
    Ok(csv)
}

/// Writes metrics for already computed rows; shared by `eval` and tests
/// that evaluate stub predictors.
pub fn write_eval(cfg: &RunConfig, out: &Path, data: &Dataset, rows: &[ImageMetrics], variant: &str, mode: &str) -> Result<String> {
    write(out, "metrics.csv", report::metrics_csv(rows, variant, mode).into_bytes())?;
    let stratify = cfg.stratify()?;
    if stratify {
        write(out, "metrics_by_bucket.csv", bucket_csv(rows).into_bytes())?;
    }
    if let Some(path) = cfg.path("baseline") {
        let base = report::read_metrics(&read_text(&path)?)
            .ok_or_else(|| Error::Format { path: path.clone(), at: "line 1".into(), msg: "not a metrics CSV".into() })?;
        write(out, "ttest.csv", ttest_csv(rows, &base, data, stratify)?.into_bytes())?;
    }
    let (means, sds) = report::summarize(rows.iter().map(|r| &r.metrics));
    let mut text = format!("{} images, {variant}, {mode}\n", rows.len());
    for (k, name) in SegMetrics::NAMES.iter().enumerate() {
        text.push_str(&format!("{name:>12}: {:.4} ± {:.4}\n", means[k], sds[k]));
    }
    Ok(text)
}

pub fn eval(cfg: &RunConfig, out: &Path) -> Result<Outcome> {
    let ckpt = checkpoint(cfg)?;
    let mode = cfg.mode()?;
    let (split, tiling, threshold) = (cfg.split()?, tiling(cfg)?, cfg.threshold()?);
    cfg.stratify()?;
    let data = load_data(cfg)?;
    cfg.echo(out)?;
    let model = Model::from_checkpoint(&ckpt)?;
    let rows = evaluate(&model, &data, split, mode, tiling, threshold)?;
    let text = write_eval(cfg, out, &data, &rows, ckpt.spec.variant.as_str(), &mode.to_string())?;
    Ok(Outcome::ok(text))
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        (xs[n / 2 - 1] + xs[n / 2]) / 2.0
    }
}

fn pct(x: f64, reference: f64) -> f64 {
    (x - reference) / reference * 100.0
}

/// One row of the pruning trade-off.
#[derive(Debug, Clone, PartialEq)]
pub struct Level {
    pub keep_depth: usize,
    pub params: usize,
    pub iou: f64,
    pub dice: f64,
    pub median_ms: f64,
}

pub fn prune_study(cfg: &RunConfig, out: &Path) -> Result<Outcome> {
    let ckpt = checkpoint(cfg)?;
    if !ckpt.spec.deep_supervision {
        return Err(unetpp_core::Error::Contract("prune-study needs a deeply supervised checkpoint".into()).into());
    }
    let (split, tiling, threshold) = (cfg.split()?, tiling(cfg)?, cfg.threshold()?);
    let runs = cfg.usize("timing_runs")?.max(1);
    let data = load_data(cfg)?;
    cfg.echo(out)?;
    let model = Model::from_checkpoint(&ckpt)?;
    let inputs: Vec<Tensor> = data.split(split).map(|s| s.input()).collect::<unetpp_core::Result<_>>()?;
    let mut levels = Vec::new();
    for &k in model.network().heads() {
        let mode = Mode::Pruned(k);
        let rows = evaluate(&model, &data, split, mode, tiling, threshold)?;
        let mut times = Vec::with_capacity(runs);
        for _ in 0..runs {
            let t0 = Instant::now();
            for x in &inputs {
                match tiling {
                    Tiling::Whole => model.predict(x, mode)?,
                    Tiling::Window { patch, stride } => model.predict_sliding(x, patch, stride, mode)?,
                };
            }
            times.push(t0.elapsed().as_secs_f64() * 1e3);
        }
        let (means, _) = report::summarize(rows.iter().map(|r| &r.metrics));
        levels.push(Level {
            keep_depth: k,
            params: model.pruned_network(k)?.param_count(),
            iou: means[0],
            dice: means[1],
            median_ms: median(times),
        });
    }
    let full = levels.last().expect("deep supervision gives at least one head").clone();
    let mut csv = Csv::new(&["level", "params", "IoU", "Dice", "params_delta_pct", "IoU_delta_pct", "Dice_delta_pct"]);
    let mut timing = Csv::new(&["level", "images", "runs", "median_ms", "time_delta_pct"]);
    let mut text = format!("{:<6}{:>12}{:>10}{:>10}{:>12}{:>10}\n", "level", "params", "IoU", "Dice", "median ms", "time %");
    for l in &levels {
        let name = format!("L{}", l.keep_depth);
        csv.push(&[
            name.clone(),
            l.params.to_string(),
            num(l.iou),
            num(l.dice),
            num(pct(l.params as f64, full.params as f64)),
            num(pct(l.iou, full.iou)),
            num(pct(l.dice, full.dice)),
        ]);
        timing.push(&[
            name.clone(),
            inputs.len().to_string(),
            runs.to_string(),
            format!("{:.3}", l.median_ms),
            format!("{:.2}", pct(l.median_ms, full.median_ms)),
        ]);
        text.push_str(&format!(
            "{name:<6}{:>12}{:>10.4}{:>10.4}{:>12.3}{:>+10.1}\n",
            l.params,
            l.iou,
            l.dice,
            l.median_ms,
            pct(l.median_ms, full.median_ms)
        ));
    }
    write(out, "tradeoff.csv", csv.into_bytes())?;
    // wall-clock numbers vary run to run, so they live in their own file
    write(out, "tradeoff_timing.csv", timing.into_bytes())?;
    let series = vec![
        ("IoU".to_string(), levels.iter().map(|l| (l.keep_depth as f64, l.iou)).collect()),
        ("time / full".to_string(), levels.iter().map(|l| (l.keep_depth as f64, l.median_ms / full.median_ms)).collect()),
        ("params / full".to_string(), levels.iter().map(|l| (l.keep_depth as f64, l.params as f64 / full.params as f64)).collect()),
    ];
    write(out, "tradeoff.svg", report::line_chart("pruning trade-off", "kept depth", "value", &series))?;
    Ok(Outcome::ok(text))
}

pub fn gradcheck(cfg: &RunConfig, out: &Path) -> Result<Outcome> {
    let tol = cfg.f64("gradcheck_tolerance")?;
    let seeds = cfg.u64("gradcheck_seeds")?.max(1);
    let size = cfg.usize("gradcheck_size")?;
    if size == 0 || size > 16 {
        return Err(Error::Config(format!("`gradcheck_size` must be in 1..=16, got {size}")));
    }
    let which = cfg.get("gradcheck_op");
    let ops: Vec<OpCheck> = match which {
        "all" => OpCheck::ALL.to_vec(),
        "network" => Vec::new(),
        op => vec![op.parse().map_err(|_| Error::Config(format!("`gradcheck_op`: unknown op `{op}`")))?],
    };
    let base = cfg.arch()?.with_input(1, size, size);
    let variants: Vec<Variant> = if matches!(which, "all" | "network") { Variant::ALL.to_vec() } else { Vec::new() };
    let specs = variants
        .iter()
        .map(|&v| {
            let s = ArchSpec {
                variant: v,
                deep_supervision: true,
                ..base.clone()
            };
            s.validate().map_err(|e| Error::Config(format!("gradcheck network: {e}")))?;
            Ok(s)
        })
        .collect::<Result<Vec<_>>>()?;
    cfg.echo(out)?;

    let mut csv = Csv::new(&["check", "seed", "coords", "max_rel_error", "tolerance", "passed"]);
    let mut text = String::new();
    let mut all = true;
    let mut record = |name: String, seed: u64, r: unetpp_core::autograd::GradCheckReport| {
        all &= r.passed;
        csv.push(&[name.clone(), seed.to_string(), r.checked.to_string(), num(r.max_error), num(tol), r.passed.to_string()]);
        text.push_str(&format!(
            "{:<28} seed {seed}: max rel error {:.3e} over {} coords  {}\n",
            name,
            r.max_error,
            r.checked,
            if r.passed { "pass" } else { "FAIL" }
        ));
    };
    for op in ops {
        for seed in 0..seeds {
            record(op.to_string(), seed, check_op(op, seed, tol)?);
        }
    }
    for spec in &specs {
        for seed in 0..seeds {
            let name = format!("{}_d{}_{}x{}", spec.variant, spec.depth, size, size);
            record(name, seed, check_network(spec, seed, tol)?);
        }
    }
    write(out, "gradcheck.csv", csv.into_bytes())?;
    text.push_str(if all { "all checks passed\n" } else { "some checks FAILED\n" });
    Ok(Outcome { stdout: text, passed: all })
}

/// The nine Table-I style rows: `(label, spec)`.
pub fn ablation_specs(cfg: &RunConfig) -> Result<Vec<(String, ArchSpec)>> {
    let base = cfg.arch()?;
    let widths: Vec<usize> = cfg.list("widths")?;
    let mut rows = Vec::new();
    for d in 1..=4 {
        if widths.len() < d + 1 {
            return Err(Error::Config(format!("`widths` needs 5 entries for the U-Net L1..L4 rows, got {}", widths.len())));
        }
        rows.push((format!("unet_L{d}"), ArchSpec::new(Variant::Unet, d).with_widths(&widths[..=d]).with_deep_supervision(false)));
    }
    rows.push(("unet_e".into(), ArchSpec::new(Variant::UnetE, base.depth).with_deep_supervision(true)));
    for v in [Variant::UnetPlus, Variant::UnetPP] {
        for ds in [false, true] {
            let label = if ds { format!("{v}_ds") } else { v.to_string() };
            rows.push((label, ArchSpec::new(v, base.depth).with_deep_supervision(ds)));
        }
    }
    rows.into_iter()
        .map(|(label, s)| {
            let s = ArchSpec {
                widths: widths[..=s.depth].to_vec(),
                classes: base.classes,
                input: base.input,
                ..s
            };
            s.validate().map_err(|e| Error::Config(format!("ablation row {label}: {e}")))?;
            Ok((label, s))
        })
        .collect()
}

pub fn ablate(cfg: &RunConfig, out: &Path) -> Result<Outcome> {
    let specs = ablation_specs(cfg)?;
    let trials = cfg.trials()?;
    let tcfgs = (0..trials).map(|t| cfg.train(t)).collect::<Result<Vec<_>>>()?;
    let (split, tiling, threshold) = (cfg.split()?, tiling(cfg)?, cfg.threshold()?);
    let data = load_data(cfg)?;
    cfg.echo(out)?;
    let mut csv = Csv::new(&["row", "variant", "depth", "ds", "trial", "seed", "params", "IoU", "Dice", "IoU_sd", "Dice_sd"]);
    let mut text = format!("{:<14}{:>10}{:>18}{:>18}\n", "row", "params", "IoU", "Dice");
    for (label, spec) in &specs {
        let (mut ious, mut dices) = (Vec::new(), Vec::new());
        let mut params = 0;
        for (t, tcfg) in tcfgs.iter().enumerate() {
            let mut trainer = Trainer::new(spec, tcfg)?;
            trainer.run(&data)?;
            let model = Model::from_checkpoint(&trainer.checkpoint())?;
            params = model.network().param_count();
            let rows = evaluate(&model, &data, split, Mode::Ensemble, tiling, threshold)?;
            let (means, _) = report::summarize(rows.iter().map(|r| &r.metrics));
            ious.push(means[0]);
            dices.push(means[1]);
            csv.push(&[
                label.clone(),
                spec.variant.to_string(),
                spec.depth.to_string(),
                spec.deep_supervision.to_string(),
                t.to_string(),
                tcfg.seed.to_string(),
                params.to_string(),
                num(means[0]),
                num(means[1]),
                String::new(),
                String::new(),
            ]);
        }
        let (im, is) = mean_std(&ious);
        let (dm, dsd) = mean_std(&dices);
        csv.push(&[
            label.clone(),
            spec.variant.to_string(),
            spec.depth.to_string(),
            spec.deep_supervision.to_string(),
            "all".into(),
            String::new(),
            params.to_string(),
            num(im),
            num(dm),
            num(is),
            num(dsd),
        ]);
        text.push_str(&format!(
            "{label:<14}{params:>10}{:>18}{:>18}\n",
            format!("{:.2}±{:.2}", im * 100.0, is * 100.0),
            format!("{:.2}±{:.2}", dm * 100.0, dsd * 100.0)
        ));
    }
    write(out, "ablation.csv", csv.into_bytes())?;
    Ok(Outcome::ok(text))
}

/// Min-max normalization to [0, 1]; a flat map becomes mid-gray.
pub fn normalize(values: &[f64]) -> Vec<f64> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return vec![32768.0 / 65535.0; values.len()];
    }
    values.iter().map(|v| (v - lo) / (hi - lo)).collect()
}

/// Channel means of every `X^{0,j}` for one `[1, C, H, W]` input, by `j`.
pub fn feature_maps(net: &Network, input: &Tensor) -> Result<Vec<(usize, Tensor)>> {
    let tops: Vec<NodeAddress> = net.nodes().iter().copied().filter(|a| a.i == 0).collect();
    let names: Vec<String> = tops.iter().map(|a| a.name()).collect();
    let refs: Vec<&str> = names.iter().map(String::as_str).collect();
    let mut feeds = Feeds::new();
    feeds.insert(INPUT.into(), input.clone());
    let eval = net.graph().forward_to(&feeds, &refs)?;
    tops.iter()
        .zip(&refs)
        .map(|(a, n)| Ok((a.j, eval.value(n)?.reduce(ReduceOp::Mean, Some(&[1]), false)?)))
        .collect()
}

pub fn featmap(cfg: &RunConfig, out: &Path) -> Result<Outcome> {
    let ckpt = checkpoint(cfg)?;
    let net = ckpt.network()?;
    let input = match cfg.path("image") {
        Some(p) => {
            let img = read_pgm(&p)?;
            Tensor::from_vec(&[1, 1, img.height, img.width], img.to_unit())?
        }
        None => {
            let split = cfg.split()?;
            let data = load_data(cfg)?;
            let s = data
                .split(split)
                .next()
                .ok_or_else(|| unetpp_core::Error::Data(format!("the {split} split is empty")))?;
            s.input()?
        }
    };
    cfg.echo(out)?;
    let (_, _, h, w) = input.dims4()?;
    let mut text = String::new();
    for (j, map) in feature_maps(&net, &input)? {
        let name = format!("featmap_X0_{j}.pgm");
        write_pgm(&out.join(&name), &Pgm::from_unit(w, h, &normalize(map.data())))?;
        text.push_str(&format!("wrote {name}\n"));
    }
    Ok(Outcome::ok(text))
}

pub fn embedded(cfg: &RunConfig, out: &Path) -> Result<Outcome> {
    let spec = cfg.arch()?;
    let keep: Vec<usize> = cfg.list("keep_depths")?;
    let trials = cfg.trials()?;
    let tcfgs = (0..trials).map(|t| cfg.train(t)).collect::<Result<Vec<_>>>()?;
    let data = load_data(cfg)?;
    cfg.echo(out)?;
    let mut csv = Csv::new(&[
        "keep_depth",
        "trial",
        "seed",
        "embedded_IoU",
        "isolated_IoU",
        "delta_IoU",
        "embedded_Dice",
        "isolated_Dice",
        "delta_Dice",
        "structurally_equal",
    ]);
    let mut text = String::new();
    for &k in &keep {
        let mut deltas = Vec::new();
        for (t, tcfg) in tcfgs.iter().enumerate() {
            let r = embedded_vs_isolated(&spec, &data, tcfg, k)?;
            deltas.push(r.delta_iou);
            csv.push(&[
                k.to_string(),
                t.to_string(),
                tcfg.seed.to_string(),
                num(r.embedded_iou),
                num(r.isolated_iou),
                num(r.delta_iou),
                num(r.embedded_dice),
                num(r.isolated_dice),
                num(r.delta_dice),
                r.structurally_equal.to_string(),
            ]);
        }
        let (m, s) = mean_std(&deltas);
        text.push_str(&format!("L{k}: embedded - isolated IoU = {:+.4} ± {:.4} over {trials} trials\n", m, s));
    }
    write(out, "embedded.csv", csv.into_bytes())?;
    Ok(Outcome::ok(text))
}
