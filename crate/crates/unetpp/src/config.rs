//! `key = value` run configuration shared by every command.
//!
//! Every key has a default. Files may contain blank lines and `#` comments;
//! unknown keys are rejected so typos cannot silently fall back to defaults.
//! The resolved configuration is echoed as a file that can be fed back with
//! `--config` to reproduce a run.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use unetpp_core::data::{Split, SynthConfig};
use unetpp_core::loss::LossConfig;
use unetpp_core::train::{AdamConfig, Mode, TrainConfig};
use unetpp_core::{ArchSpec, Variant};

use crate::error::{Error, Result};
use crate::fsutil;

/// `(key, default, description)` in echo order.
pub const KEYS: &[(&str, &str, &str)] = &[
    ("variant", "unet_pp", "unet | unet_e | unet_plus | unet_pp"),
    ("depth", "4", "down-sampling stages, 1..=4"),
    ("widths", "32,64,128,256,512", "filters per level; extra entries are ignored"),
    ("classes", "1", "output channels"),
    ("deep_supervision", "true", "heads on every X^{0,j}"),
    ("input_height", "64", "network input height; synthetic images use it too"),
    ("input_width", "64", "network input width"),
    ("learning_rate", "0.0003", "Adam step size"),
    ("batch_size", "4", ""),
    ("max_epochs", "30", ""),
    ("patience", "5", "epochs without val-loss improvement before stopping"),
    ("seed", "7", "training seed; trial t uses seed + t"),
    ("trials", "1", "independent training runs"),
    ("full_bce", "true", "add the (1-y) log(1-p) term to the loss"),
    ("eps_log", "1e-7", "lower clamp of p inside log"),
    ("eps_dice", "1e-12", "dice denominator smoothing"),
    ("head_weights", "", "comma-separated loss weight per head; empty = all 1"),
    ("threshold", "0.5", "binarization threshold for metrics"),
    ("data_dir", "", "dataset directory with manifest.tsv; empty = synthetic"),
    ("synthetic", "false", "generate the synthetic dataset when data_dir is empty"),
    ("synth_count", "200", ""),
    ("synth_blobs_min", "1", ""),
    ("synth_blobs_max", "3", ""),
    ("synth_radius_min", "3", "pixels"),
    ("synth_radius_max", "16", "pixels"),
    ("synth_deformation", "0.15", "relative boundary wobble"),
    ("synth_noise", "0.08", "Gaussian noise std"),
    ("synth_multi_scale", "true", "log-uniform radii"),
    ("synth_seed", "7", ""),
    ("checkpoint", "", "checkpoint file for eval, prune-study and featmap"),
    ("mode", "ensemble", "ensemble | pruned:K"),
    ("split", "test", "split evaluated by eval, prune-study and ablate"),
    ("stratify", "none", "none | size_bucket"),
    ("baseline", "", "metrics.csv to t-test against"),
    ("patch", "0", "sliding-window patch side; 0 = whole image"),
    ("stride", "0", "sliding-window stride; 0 = half the patch"),
    ("timing_runs", "3", "timed passes per level in prune-study (median reported)"),
    ("gradcheck_op", "all", "all | network | conv2d | conv_transpose2 | max_pool2 | relu | sigmoid | concat | conv_block | hybrid_loss"),
    ("gradcheck_tolerance", "1e-4", "maximum relative error"),
    ("gradcheck_size", "16", "square input side for network checks, at most 16"),
    ("gradcheck_seeds", "3", ""),
    ("image", "", "PGM image for featmap; empty = first sample of the split"),
    ("keep_depths", "1,2,3", "levels compared by the embedded command"),
];

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    values: Vec<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            values: KEYS.iter().map(|k| k.1.to_string()).collect(),
        }
    }
}

fn index(key: &str) -> Option<usize> {
    KEYS.iter().position(|k| k.0 == key)
}

fn bad(key: &str, value: &str, want: &str) -> Error {
    Error::Config(format!("`{key}`: expected {want}, got `{value}`"))
}

impl RunConfig {
    /// Defaults overridden by `text`. Errors name the line.
    pub fn parse(text: &str, origin: &Path) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("{}: line {}: expected `key = value`", origin.display(), n + 1))
            })?;
            cfg.set(k.trim(), v.trim())
                .map_err(|e| Error::Config(format!("{}: line {}: {}", origin.display(), n + 1, strip(e))))?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = fsutil::read_text(path).map_err(|e| Error::Config(e.to_string()))?;
        RunConfig::parse(&text, path)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let k = index(key).ok_or_else(|| Error::Config(format!("unknown key `{key}`")))?;
        self.values[k] = value.to_string();
        Ok(())
    }

    /// Applies a `key=value` override from the command line.
    pub fn set_pair(&mut self, pair: &str) -> Result<()> {
        let (k, v) = pair
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("`--set {pair}`: expected KEY=VALUE")))?;
        self.set(k.trim(), v.trim())
    }

    pub fn get(&self, key: &str) -> &str {
        let k = index(key).unwrap_or_else(|| panic!("no config key `{key}`"));
        &self.values[k]
    }

    fn parsed<T: FromStr>(&self, key: &str, want: &str) -> Result<T> {
        let v = self.get(key);
        v.parse().map_err(|_| bad(key, v, want))
    }

    pub fn usize(&self, key: &str) -> Result<usize> {
        self.parsed(key, "a non-negative integer")
    }

    pub fn u64(&self, key: &str) -> Result<u64> {
        self.parsed(key, "a non-negative integer")
    }

    pub fn f64(&self, key: &str) -> Result<f64> {
        let v: f64 = self.parsed(key, "a number")?;
        if !v.is_finite() {
            return Err(bad(key, self.get(key), "a finite number"));
        }
        Ok(v)
    }

    pub fn bool(&self, key: &str) -> Result<bool> {
        match self.get(key) {
            "true" => Ok(true),
            "false" => Ok(false),
            v => Err(bad(key, v, "true or false")),
        }
    }

    pub fn list<T: FromStr>(&self, key: &str) -> Result<Vec<T>> {
        let v = self.get(key);
        if v.is_empty() {
            return Ok(Vec::new());
        }
        v.split(',').map(|x| x.trim().parse().map_err(|_| bad(key, v, "a comma-separated list"))).collect()
    }

    /// Empty string means "not set".
    pub fn path(&self, key: &str) -> Option<PathBuf> {
        let v = self.get(key);
        (!v.is_empty()).then(|| PathBuf::from(v))
    }

    pub fn require_path(&self, key: &str) -> Result<PathBuf> {
        self.path(key).ok_or_else(|| Error::Config(format!("`{key}` must be set")))
    }

    pub fn arch(&self) -> Result<ArchSpec> {
        let variant: Variant = self.get("variant").parse().map_err(|_| bad("variant", self.get("variant"), "unet, unet_e, unet_plus or unet_pp"))?;
        let depth = self.usize("depth")?;
        let widths: Vec<usize> = self.list("widths")?;
        if widths.len() < depth + 1 {
            return Err(Error::Config(format!("`widths`: depth {depth} needs {} entries, got {}", depth + 1, widths.len())));
        }
        let spec = ArchSpec::new(variant, depth)
            .with_widths(&widths[..=depth])
            .with_classes(self.usize("classes")?)
            .with_deep_supervision(self.bool("deep_supervision")?)
            .with_input(1, self.usize("input_height")?, self.usize("input_width")?);
        spec.validate().map_err(|e| Error::Config(e.to_string()))?;
        Ok(spec)
    }

    pub fn loss(&self) -> Result<LossConfig> {
        let cfg = LossConfig {
            eps_log: self.f64("eps_log")?,
            eps_dice: self.f64("eps_dice")?,
            full_bce: self.bool("full_bce")?,
            head_weights: self.list("head_weights")?,
        };
        cfg.validate().map_err(|e| Error::Config(e.to_string()))?;
        Ok(cfg)
    }

    /// Training settings for trial `trial`.
    pub fn train(&self, trial: usize) -> Result<TrainConfig> {
        let cfg = TrainConfig {
            adam: AdamConfig {
                learning_rate: self.f64("learning_rate")?,
                ..AdamConfig::default()
            },
            batch_size: self.usize("batch_size")?,
            max_epochs: self.usize("max_epochs")?,
            patience: self.usize("patience")?,
            seed: self.u64("seed")?.wrapping_add(trial as u64),
            loss: self.loss()?,
            threshold: self.threshold()?,
        };
        cfg.validate().map_err(|e| Error::Config(e.to_string()))?;
        Ok(cfg)
    }

    pub fn trials(&self) -> Result<usize> {
        match self.usize("trials")? {
            0 => Err(bad("trials", "0", "at least 1")),
            k => Ok(k),
        }
    }

    pub fn threshold(&self) -> Result<f64> {
        let t = self.f64("threshold")?;
        if !(0.0..=1.0).contains(&t) {
            return Err(bad("threshold", self.get("threshold"), "a value in [0, 1]"));
        }
        Ok(t)
    }

    pub fn synth(&self) -> Result<SynthConfig> {
        let cfg = SynthConfig {
            count: self.usize("synth_count")?,
            height: self.usize("input_height")?,
            width: self.usize("input_width")?,
            blobs_min: self.usize("synth_blobs_min")?,
            blobs_max: self.usize("synth_blobs_max")?,
            radius_min: self.f64("synth_radius_min")?,
            radius_max: self.f64("synth_radius_max")?,
            deformation: self.f64("synth_deformation")?,
            noise_std: self.f64("synth_noise")?,
            multi_scale: self.bool("synth_multi_scale")?,
            seed: self.u64("synth_seed")?,
            ..SynthConfig::default()
        };
        cfg.validate().map_err(|e| Error::Config(e.to_string()))?;
        Ok(cfg)
    }

    pub fn mode(&self) -> Result<Mode> {
        self.get("mode").parse().map_err(|_| bad("mode", self.get("mode"), "ensemble or pruned:K"))
    }

    pub fn split(&self) -> Result<Split> {
        self.get("split").parse().map_err(|_| bad("split", self.get("split"), "train, val or test"))
    }

    pub fn stratify(&self) -> Result<bool> {
        match self.get("stratify") {
            "none" => Ok(false),
            "size_bucket" => Ok(true),
            v => Err(bad("stratify", v, "none or size_bucket")),
        }
    }

    /// `None` for whole-image inference, else `(patch, stride)` squares.
    pub fn window(&self) -> Result<Option<(usize, usize)>> {
        let patch = self.usize("patch")?;
        let stride = self.usize("stride")?;
        if patch == 0 {
            return Ok(None);
        }
        let stride = if stride == 0 { (patch / 2).max(1) } else { stride };
        if stride > patch {
            return Err(Error::Config(format!("`stride` {stride} exceeds `patch` {patch}")));
        }
        Ok(Some((patch, stride)))
    }

    /// Canonical text: every key, in table order, with its description.
    pub fn to_text(&self) -> String {
        let mut out = String::from("# resolved configuration\n");
        for ((key, _, doc), value) in KEYS.iter().zip(&self.values) {
            if !doc.is_empty() {
                out.push_str(&format!("# {doc}\n"));
            }
            out.push_str(&format!("{key} = {value}\n"));
        }
        out
    }

    pub fn echo(&self, dir: &Path) -> Result<()> {
        fsutil::write_atomic(&dir.join("config.txt"), self.to_text().as_bytes())
    }
}

fn strip(e: Error) -> String {
    match e {
        Error::Config(m) => m,
        e => e.to_string(),
    }
}
