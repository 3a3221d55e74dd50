//! Synthetic blob segmentation data and patch extraction.
//!
//! Images are dark backgrounds with bright deformed ellipses plus Gaussian
//! noise; the mask is the exact blob support. Every sample is drawn from its
//! own random stream, so generation is order independent.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::{PI, TAU};
use core::fmt;
use core::str::FromStr;

use crate::rng::Rng;
use crate::tensor::Tensor;
use crate::{Error, Result};

pub const SIZE_BUCKETS: u8 = 7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Split::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| Error::Data(format!("unknown split `{s}`")))
    }
}

/// Where a patch was cut from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PatchOrigin {
    pub parent: String,
    pub y: usize,
    pub x: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    /// `[1, H, W]`, values in [0, 1].
    pub image: Tensor,
    /// `[C, H, W]`, values in {0, 1}.
    pub mask: Tensor,
    pub split: Split,
    /// 0..7 by mask-area rank.
    pub size_bucket: u8,
    pub origin: Option<PatchOrigin>,
}

impl Sample {
    pub fn height(&self) -> usize {
        self.image.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.image.shape()[2]
    }

    /// `[1, 1, H, W]` network input.
    pub fn input(&self) -> Result<Tensor> {
        let mut s = vec![1];
        s.extend_from_slice(self.image.shape());
        self.image.clone().reshape(&s)
    }

    /// `[1, C, H, W]` labels.
    pub fn labels(&self) -> Result<Tensor> {
        let mut s = vec![1];
        s.extend_from_slice(self.mask.shape());
        self.mask.clone().reshape(&s)
    }

    pub fn mask_area(&self) -> usize {
        self.mask.data().iter().filter(|&&v| v == 1.0).count()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn new(samples: Vec<Sample>) -> Result<Self> {
        let ds = Dataset { samples };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        let mut ids: Vec<&str> = self.samples.iter().map(|s| s.id.as_str()).collect();
        ids.sort_unstable();
        if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::Data(format!("duplicate sample id `{}`", w[0])));
        }
        for s in &self.samples {
            if s.image.rank() != 3 || s.image.shape()[0] != 1 {
                return Err(Error::Data(format!("`{}`: image must be [1, H, W], got {:?}", s.id, s.image.shape())));
            }
            if s.mask.rank() != 3 || s.mask.shape()[1..] != s.image.shape()[1..] {
                return Err(Error::Data(format!(
                    "`{}`: mask {:?} does not match image {:?}",
                    s.id,
                    s.mask.shape(),
                    s.image.shape()
                )));
            }
            if s.mask.data().iter().any(|&v| v != 0.0 && v != 1.0) {
                return Err(Error::Data(format!("`{}`: mask is not binary", s.id)));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &Sample> {
        self.samples.iter().filter(move |s| s.split == split)
    }

    pub fn split_len(&self, split: Split) -> usize {
        self.split(split).count()
    }

    pub fn get(&self, id: &str) -> Option<&Sample> {
        self.samples.iter().find(|s| s.id == id)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub count: usize,
    pub height: usize,
    pub width: usize,
    pub blobs_min: usize,
    pub blobs_max: usize,
    pub radius_min: f64,
    pub radius_max: f64,
    /// Relative boundary wobble, in [0, 0.5).
    pub deformation: f64,
    pub noise_std: f64,
    /// Log-uniform radii (many small, some large) instead of uniform.
    pub multi_scale: bool,
    pub background: f64,
    pub foreground: f64,
    /// Fractions for train and val; test takes the rest.
    pub split_ratios: (f64, f64),
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            count: 200,
            height: 64,
            width: 64,
            blobs_min: 1,
            blobs_max: 3,
            radius_min: 3.0,
            radius_max: 16.0,
            deformation: 0.15,
            noise_std: 0.08,
            multi_scale: true,
            background: 0.2,
            foreground: 0.75,
            split_ratios: (0.6, 0.2),
            seed: 7,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let gen = |m: String| Err(Error::Generation(m));
        if self.count < 3 {
            return gen(format!("count must be >= 3 (one sample per split), got {}", self.count));
        }
        if self.height == 0 || self.width == 0 {
            return gen("image extents must be >= 1".into());
        }
        let half = self.height.min(self.width) as f64 / 2.0;
        if !(self.radius_min >= 1.0 && self.radius_min <= self.radius_max && self.radius_max < half) {
            return gen(format!(
                "radii must satisfy 1 <= min <= max < {half}, got {}..{}",
                self.radius_min, self.radius_max
            ));
        }
        if self.blobs_min == 0 || self.blobs_min > self.blobs_max {
            return gen(format!("blob count range {}..={} is empty", self.blobs_min, self.blobs_max));
        }
        let shrink = 1.0 - self.deformation;
        let min_area = PI * self.radius_min * self.radius_min * shrink * shrink;
        if self.blobs_max as f64 * min_area > (self.height * self.width) as f64 {
            return gen(format!(
                "{} blobs of radius >= {} cannot fit in {}x{}",
                self.blobs_max, self.radius_min, self.height, self.width
            ));
        }
        if !(0.0..0.5).contains(&self.deformation) {
            return gen(format!("deformation must be in [0, 0.5), got {}", self.deformation));
        }
        if self.noise_std < 0.0 || !(self.background < self.foreground) {
            return gen("need noise_std >= 0 and background < foreground".into());
        }
        let (tr, va) = self.split_ratios;
        if !(tr > 0.0 && va > 0.0 && tr + va < 1.0) {
            return gen(format!("split ratios {tr}/{va} leave no test share"));
        }
        Ok(())
    }
}

struct Blob {
    cy: f64,
    cx: f64,
    ry: f64,
    rx: f64,
    angle: f64,
    /// `(frequency, phase, amplitude)` boundary harmonics.
    wobble: [(f64, f64, f64); 2],
}

impl Blob {
    fn draw(cfg: &SynthConfig, rng: &mut Rng) -> Blob {
        let r = if cfg.multi_scale {
            libm::exp(rng.uniform_range(libm::log(cfg.radius_min), libm::log(cfg.radius_max)))
        } else {
            rng.uniform_range(cfg.radius_min, cfg.radius_max)
        };
        let aspect = libm::exp(rng.uniform_range(-0.3, 0.3));
        let margin = (r * 0.5).min(cfg.height.min(cfg.width) as f64 / 2.0 - 0.5);
        let cy = rng.uniform_range(margin, cfg.height as f64 - margin);
        let cx = rng.uniform_range(margin, cfg.width as f64 - margin);
        let angle = rng.uniform_range(0.0, PI);
        let mut wobble = [(0.0, 0.0, 0.0); 2];
        for w in &mut wobble {
            *w = (
                rng.int_range(2, 5) as f64,
                rng.uniform_range(0.0, TAU),
                cfg.deformation * rng.uniform_range(0.25, 0.5),
            );
        }
        Blob {
            cy,
            cx,
            ry: r * aspect,
            rx: r / aspect,
            angle,
            wobble,
        }
    }

    fn contains(&self, y: f64, x: f64) -> bool {
        let (dy, dx) = (y - self.cy, x - self.cx);
        let (s, c) = (libm::sin(self.angle), libm::cos(self.angle));
        let u = (c * dx + s * dy) / self.rx;
        let v = (-s * dx + c * dy) / self.ry;
        let rho = libm::sqrt(u * u + v * v);
        let phi = libm::atan2(v, u);
        let limit = 1.0 + self.wobble.iter().map(|&(f, p, a)| a * libm::sin(f * phi + p)).sum::<f64>();
        rho <= limit
    }
}

const SPLIT_SALT: u64 = 0x5eed_0f05_9117;

fn mix(seed: u64, i: u64) -> u64 {
    Rng::with_stream(seed, i).next_u64()
}

/// Assigns train/val/test by hash order of the sample index, each split nonempty.
fn assign_splits(count: usize, ratios: (f64, f64), seed: u64) -> Vec<Split> {
    let mut order: Vec<usize> = (0..count).collect();
    order.sort_by_key(|&i| (mix(seed ^ SPLIT_SALT, i as u64), i));
    let n_train = (libm::round(count as f64 * ratios.0) as usize).clamp(1, count - 2);
    let n_val = (libm::round(count as f64 * ratios.1) as usize).clamp(1, count - n_train - 1);
    let mut splits = vec![Split::Test; count];
    for (rank, &i) in order.iter().enumerate() {
        splits[i] = if rank < n_train {
            Split::Train
        } else if rank < n_train + n_val {
            Split::Val
        } else {
            Split::Test
        };
    }
    splits
}

/// Seven equal-count buckets by mask-area rank (ties broken by sample order).
pub fn assign_size_buckets(samples: &mut [Sample]) {
    let n = samples.len();
    let mut order: Vec<(usize, usize)> = samples.iter().enumerate().map(|(i, s)| (s.mask_area(), i)).collect();
    order.sort_unstable();
    for (rank, &(_, i)) in order.iter().enumerate() {
        samples[i].size_bucket = ((rank * SIZE_BUCKETS as usize) / n) as u8;
    }
}

/// Generates one blob image and mask from its own stream.
fn gen_sample(cfg: &SynthConfig, index: usize) -> Result<(Tensor, Tensor)> {
    let base = Rng::new(cfg.seed).split(index as u64);
    let (h, w) = (cfg.height, cfg.width);
    // redraw until the support is nonempty (tiny deformed blobs can miss every pixel centre)
    for attempt in 0..64u64 {
        let mut rng = base.split(attempt);
        let count = rng.int_range(cfg.blobs_min, cfg.blobs_max);
        let blobs: Vec<Blob> = (0..count).map(|_| Blob::draw(cfg, &mut rng)).collect();
        let mut mask = vec![0.0; h * w];
        for (k, m) in mask.iter_mut().enumerate() {
            let (y, x) = ((k / w) as f64 + 0.5, (k % w) as f64 + 0.5);
            if blobs.iter().any(|b| b.contains(y, x)) {
                *m = 1.0;
            }
        }
        if mask.iter().all(|&m| m == 0.0) {
            continue;
        }
        let mut noise = base.split(u64::MAX);
        let image = mask
            .iter()
            .map(|&m| {
                let clean = if m == 1.0 { cfg.foreground } else { cfg.background };
                let n = if cfg.noise_std > 0.0 { cfg.noise_std * noise.normal() } else { 0.0 };
                (clean + n).clamp(0.0, 1.0)
            })
            .collect();
        return Ok((Tensor::from_vec(&[1, h, w], image)?, Tensor::from_vec(&[1, h, w], mask)?));
    }
    Err(Error::Generation(format!("sample {index}: could not place a visible blob")))
}

pub fn gen_synthetic(cfg: &SynthConfig) -> Result<Dataset> {
    cfg.validate()?;
    let splits = assign_splits(cfg.count, cfg.split_ratios, cfg.seed);
    let mut samples = Vec::with_capacity(cfg.count);
    for (i, split) in splits.into_iter().enumerate() {
        let (image, mask) = gen_sample(cfg, i)?;
        samples.push(Sample {
            id: format!("img{i:04}"),
            image,
            mask,
            split,
            size_bucket: 0,
            origin: None,
        });
    }
    assign_size_buckets(&mut samples);
    Dataset::new(samples)
}

/// Window origins along one axis: every `stride`, plus a last window
/// clamped to the border so the whole extent is covered.
pub fn tile_origins(extent: usize, patch: usize, stride: usize) -> Result<Vec<usize>> {
    if patch == 0 || stride == 0 {
        return Err(Error::shape("patch and stride must be >= 1"));
    }
    if patch > extent {
        return Err(Error::shape(format!("patch {patch} larger than image extent {extent}")));
    }
    let mut v: Vec<usize> = (0..).map(|k| k * stride).take_while(|&o| o + patch <= extent).collect();
    let last = extent - patch;
    if v.last() != Some(&last) {
        v.push(last);
    }
    Ok(v)
}

fn crop(t: &Tensor, y: usize, x: usize, ph: usize, pw: usize) -> Result<Tensor> {
    let (c, h, w) = (t.shape()[0], t.shape()[1], t.shape()[2]);
    let mut out = Vec::with_capacity(c * ph * pw);
    for ch in 0..c {
        for r in y..y + ph {
            let row = (ch * h + r) * w;
            out.extend_from_slice(&t.data()[row + x..row + x + pw]);
        }
    }
    Tensor::from_vec(&[c, ph, pw], out)
}

/// Cuts every sample into a clamped grid of patches. Patches inherit the
/// parent's split and size bucket and record where they came from.
pub fn extract_patches(ds: &Dataset, patch: (usize, usize), stride: (usize, usize)) -> Result<Dataset> {
    let mut out = Vec::new();
    for s in &ds.samples {
        let ys = tile_origins(s.height(), patch.0, stride.0)?;
        let xs = tile_origins(s.width(), patch.1, stride.1)?;
        for &y in &ys {
            for &x in &xs {
                out.push(Sample {
                    id: format!("{}@{}_{}", s.id, y, x),
                    image: crop(&s.image, y, x, patch.0, patch.1)?,
                    mask: crop(&s.mask, y, x, patch.0, patch.1)?,
                    split: s.split,
                    size_bucket: s.size_bucket,
                    origin: Some(PatchOrigin {
                        parent: s.id.clone(),
                        y,
                        x,
                    }),
                });
            }
        }
    }
    Dataset::new(out)
}
