//! Adam, the deep-supervision training loop with early stopping, and
//! inference in ensemble or pruned mode (whole image or sliding window).

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::arch::{ArchSpec, Network, NodeAddress, INPUT, LABELS, LOSS};
use crate::autograd::{Feeds, Graph, NodeId};
use crate::data::{tile_origins, Dataset, Sample, Split};
use crate::loss::LossConfig;
use crate::metrics::{segmentation_metrics, SegMetrics};
use crate::rng::Rng;
use crate::tensor::Tensor;
use crate::{Error, Result};

const SHUFFLE_STREAM: u64 = 0x5348_5546;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 3e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One bias-corrected Adam update of `param` at step `t` (1-based).
pub fn adam_step(
    param: &mut Tensor,
    grad: &Tensor,
    m: &mut Tensor,
    v: &mut Tensor,
    t: u64,
    cfg: &AdamConfig,
) -> Result<()> {
    if grad.shape() != param.shape() || m.shape() != param.shape() || v.shape() != param.shape() {
        return Err(Error::shape(format!(
            "adam: param {:?}, grad {:?}, moments {:?}/{:?}",
            param.shape(),
            grad.shape(),
            m.shape(),
            v.shape()
        )));
    }
    if t == 0 {
        return Err(Error::Contract("adam step counter starts at 1".into()));
    }
    let c1 = 1.0 - libm::pow(cfg.beta1, t as f64);
    let c2 = 1.0 - libm::pow(cfg.beta2, t as f64);
    let (b1, b2) = (cfg.beta1, cfg.beta2);
    for (((p, &g), mk), vk) in param
        .data_mut()
        .iter_mut()
        .zip(grad.data())
        .zip(m.data_mut().iter_mut())
        .zip(v.data_mut().iter_mut())
    {
        *mk = b1 * *mk + (1.0 - b1) * g;
        *vk = b2 * *vk + (1.0 - b2) * g * g;
        let m_hat = *mk / c1;
        let v_hat = *vk / c2;
        *p -= cfg.learning_rate * m_hat / (libm::sqrt(v_hat) + cfg.eps);
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub adam: AdamConfig,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without validation-loss improvement before stopping.
    pub patience: usize,
    pub seed: u64,
    pub loss: LossConfig,
    /// Binarization threshold for the validation IoU.
    pub threshold: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            adam: AdamConfig::default(),
            batch_size: 4,
            max_epochs: 30,
            patience: 5,
            seed: 7,
            loss: LossConfig {
                full_bce: true,
                ..LossConfig::default()
            },
            threshold: 0.5,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.adam.learning_rate > 0.0) {
            return Err(Error::Config(format!("learning_rate must be > 0, got {}", self.adam.learning_rate)));
        }
        if self.patience == 0 || self.batch_size == 0 || self.max_epochs == 0 {
            return Err(Error::Config("patience, batch_size and max_epochs must be >= 1".into()));
        }
        self.loss.validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    /// One entry per supervised head, ascending `j`.
    pub head_val_losses: Vec<f64>,
    pub val_iou: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    MaxEpochs,
    EarlyStop,
}

impl StopReason {
    pub fn as_str(self) -> &'static str {
        match self {
            StopReason::MaxEpochs => "max_epochs",
            StopReason::EarlyStop => "early_stop",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainHistory {
    pub heads: Vec<String>,
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub stop_reason: Option<StopReason>,
}

/// Everything needed to continue training exactly where it stopped.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub seed: u64,
    /// Completed epochs.
    pub epoch: usize,
    /// Adam steps taken.
    pub step: u64,
    pub current: Vec<(String, Tensor)>,
    pub adam_m: Vec<Tensor>,
    pub adam_v: Vec<Tensor>,
    pub best_val_loss: f64,
    pub best_epoch: usize,
    pub bad_epochs: usize,
    pub history: Vec<EpochRecord>,
    pub stopped: Option<StopReason>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub spec: ArchSpec,
    /// Parameters of the best validation epoch.
    pub params: Vec<(String, Tensor)>,
    pub state: Option<TrainState>,
}

impl Checkpoint {
    pub fn from_network(net: &Network) -> Checkpoint {
        Checkpoint {
            spec: net.spec().clone(),
            params: net.graph().params().map(|(n, t)| (n.into(), t.clone())).collect(),
            state: None,
        }
    }

    /// Rebuilds the network and loads the stored parameters.
    pub fn network(&self) -> Result<Network> {
        let mut net = Network::build(&self.spec, &Rng::new(0))?;
        let names: Vec<String> = net.graph().params().map(|(n, _)| n.into()).collect();
        if names.len() != self.params.len() {
            return Err(Error::Contract(format!(
                "checkpoint holds {} tensors, architecture has {} parameters",
                self.params.len(),
                names.len()
            )));
        }
        for (name, t) in &self.params {
            net.graph_mut()
                .set_param(name, t.clone())
                .map_err(|e| Error::Contract(format!("checkpoint does not match architecture: {e}")))?;
        }
        Ok(net)
    }
}

fn batch_feeds(samples: &[&Sample]) -> Result<Feeds> {
    let inputs: Vec<Tensor> = samples.iter().map(|s| s.input()).collect::<Result<_>>()?;
    let labels: Vec<Tensor> = samples.iter().map(|s| s.labels()).collect::<Result<_>>()?;
    let mut f = Feeds::new();
    f.insert(INPUT.into(), Tensor::stack_batch(&inputs.iter().collect::<Vec<_>>())?);
    f.insert(LABELS.into(), Tensor::stack_batch(&labels.iter().collect::<Vec<_>>())?);
    Ok(f)
}

/// Arithmetic mean of equally shaped maps, summed in order.
pub fn mean_maps(maps: &[&Tensor]) -> Result<Tensor> {
    let first = maps.first().ok_or_else(|| Error::Contract("nothing to average".into()))?;
    let mut acc = (*first).clone();
    for m in &maps[1..] {
        acc.add_assign(m)?;
    }
    Ok(if maps.len() == 1 {
        acc
    } else {
        acc.scale(1.0 / maps.len() as f64)
    })
}

pub struct Trainer {
    spec: ArchSpec,
    cfg: TrainConfig,
    heads: Vec<String>,
    graph: Graph,
    param_ids: Vec<NodeId>,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    step: u64,
    epoch: usize,
    best_params: Vec<Tensor>,
    best_val_loss: f64,
    best_epoch: usize,
    bad_epochs: usize,
    history: Vec<EpochRecord>,
    stopped: Option<StopReason>,
}

impl Trainer {
    pub fn new(spec: &ArchSpec, cfg: &TrainConfig) -> Result<Trainer> {
        cfg.validate()?;
        let net = Network::build(spec, &Rng::new(cfg.seed))?;
        let graph = net.training_graph(&cfg.loss)?;
        let param_ids: Vec<NodeId> = graph.param_ids().collect();
        let zeros: Vec<Tensor> = net.graph().params().map(|(_, t)| t.zeros_like()).collect();
        let best_params = net.graph().params().map(|(_, t)| t.clone()).collect();
        Ok(Trainer {
            spec: spec.clone(),
            cfg: cfg.clone(),
            heads: net.head_names(),
            graph,
            param_ids,
            m: zeros.clone(),
            v: zeros,
            step: 0,
            epoch: 0,
            best_params,
            best_val_loss: f64::INFINITY,
            best_epoch: 0,
            bad_epochs: 0,
            history: Vec::new(),
            stopped: None,
        })
    }

    /// Continues from a checkpoint written by [`Trainer::checkpoint`].
    pub fn resume(ckpt: &Checkpoint, cfg: &TrainConfig) -> Result<Trainer> {
        let state = ckpt
            .state
            .as_ref()
            .ok_or_else(|| Error::Contract("checkpoint carries no training state".into()))?;
        if state.seed != cfg.seed {
            return Err(Error::Config(format!(
                "checkpoint was trained with seed {}, config says {}",
                state.seed, cfg.seed
            )));
        }
        let mut t = Trainer::new(&ckpt.spec, cfg)?;
        if state.current.len() != t.param_ids.len() || state.adam_m.len() != t.param_ids.len() {
            return Err(Error::Contract("training state does not match architecture".into()));
        }
        for (name, value) in &state.current {
            t.graph.set_param(name, value.clone())?;
        }
        let best: Vec<Tensor> = ckpt.params.iter().map(|(_, p)| p.clone()).collect();
        t.m = state.adam_m.clone();
        t.v = state.adam_v.clone();
        t.step = state.step;
        t.epoch = state.epoch;
        t.best_params = best;
        t.best_val_loss = state.best_val_loss;
        t.best_epoch = state.best_epoch;
        t.bad_epochs = state.bad_epochs;
        t.history = state.history.clone();
        t.stopped = state.stopped;
        Ok(t)
    }

    pub fn is_finished(&self) -> bool {
        self.stopped.is_some()
    }

    pub fn epochs_done(&self) -> usize {
        self.epoch
    }

    fn check_data(&self, data: &Dataset) -> Result<()> {
        for split in [Split::Train, Split::Val] {
            if data.split_len(split) == 0 {
                return Err(Error::Data(format!("the {split} split is empty")));
            }
        }
        let (c, h, w) = self.spec.input;
        for s in data.split(Split::Train).chain(data.split(Split::Val)) {
            if s.image.shape() != [c, h, w] || s.mask.shape() != [self.spec.classes, h, w] {
                return Err(Error::Data(format!(
                    "sample `{}` has image {:?} / mask {:?}, architecture expects [{c}, {h}, {w}] / [{}, {h}, {w}]",
                    s.id,
                    s.image.shape(),
                    s.mask.shape(),
                    self.spec.classes
                )));
            }
        }
        Ok(())
    }

    /// Trains one epoch and updates early-stopping state.
    pub fn run_epoch(&mut self, data: &Dataset) -> Result<&EpochRecord> {
        if self.stopped.is_some() {
            return Err(Error::Contract("training already finished".into()));
        }
        self.check_data(data)?;
        let epoch = self.epoch + 1;
        let train: Vec<&Sample> = data.split(Split::Train).collect();
        let mut order: Vec<usize> = (0..train.len()).collect();
        Rng::new(self.cfg.seed).split(SHUFFLE_STREAM).split(epoch as u64).shuffle(&mut order);

        let mut loss_sum = 0.0;
        for chunk in order.chunks(self.cfg.batch_size) {
            let batch: Vec<&Sample> = chunk.iter().map(|&i| train[i]).collect();
            let feeds = batch_feeds(&batch)?;
            let eval = self.graph.forward(&feeds)?;
            let loss = eval.scalar(LOSS)?;
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch });
            }
            let grads = self.graph.backward(&eval, LOSS)?;
            drop(eval);
            self.step += 1;
            for (k, (id, g)) in grads.iter().enumerate() {
                debug_assert_eq!(*id, self.param_ids[k]);
                let p = self.graph.param_mut(*id)?;
                adam_step(p, g, &mut self.m[k], &mut self.v[k], self.step, &self.cfg.adam)?;
            }
            loss_sum += loss * batch.len() as f64;
        }
        let train_loss = loss_sum / train.len() as f64;

        let (val_loss, head_val_losses, val_iou) = self.validate(data)?;
        if !val_loss.is_finite() {
            return Err(Error::Diverged { epoch });
        }
        if val_loss < self.best_val_loss {
            self.best_val_loss = val_loss;
            self.best_epoch = epoch;
            self.bad_epochs = 0;
            self.best_params = self.param_ids.iter().map(|&id| self.graph_param(id).clone()).collect();
        } else {
            self.bad_epochs += 1;
        }
        self.epoch = epoch;
        if self.bad_epochs >= self.cfg.patience {
            self.stopped = Some(StopReason::EarlyStop);
        } else if epoch >= self.cfg.max_epochs {
            self.stopped = Some(StopReason::MaxEpochs);
        }
        self.history.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
            head_val_losses,
            val_iou,
        });
        Ok(self.history.last().expect("just pushed"))
    }

    fn graph_param(&self, id: NodeId) -> &Tensor {
        match &self.graph.node(id).op {
            crate::autograd::Op::Param(t) => t,
            _ => unreachable!("param ids only name parameters"),
        }
    }

    fn validate(&self, data: &Dataset) -> Result<(f64, Vec<f64>, f64)> {
        let val: Vec<&Sample> = data.split(Split::Val).collect();
        let head_losses: Vec<String> = self.heads.iter().map(|h| format!("loss@{}", &h["head@".len()..])).collect();
        let mut total = 0.0;
        let mut per_head = vec![0.0; self.heads.len()];
        let mut iou = 0.0;
        for batch in val.chunks(self.cfg.batch_size) {
            let feeds = batch_feeds(batch)?;
            let eval = self.graph.forward(&feeds)?;
            let b = batch.len() as f64;
            total += eval.scalar(LOSS)? * b;
            for (acc, name) in per_head.iter_mut().zip(&head_losses) {
                *acc += eval.scalar(name)? * b;
            }
            let maps: Vec<&Tensor> = self.heads.iter().map(|h| eval.value(h)).collect::<Result<_>>()?;
            let probs = mean_maps(&maps)?;
            let labels = &feeds[LABELS];
            for i in 0..batch.len() {
                iou += segmentation_metrics(&probs.batch_item(i)?, &labels.batch_item(i)?, self.cfg.threshold)?.iou;
            }
        }
        let n = val.len() as f64;
        Ok((total / n, per_head.into_iter().map(|l| l / n).collect(), iou / n))
    }

    /// Trains until early stopping or `max_epochs`.
    pub fn run(&mut self, data: &Dataset) -> Result<()> {
        while self.stopped.is_none() {
            self.run_epoch(data)?;
        }
        Ok(())
    }

    pub fn history(&self) -> TrainHistory {
        TrainHistory {
            heads: self.heads.clone(),
            epochs: self.history.clone(),
            best_epoch: self.best_epoch,
            stop_reason: self.stopped,
        }
    }

    /// Best-epoch parameters plus the full resumable state.
    pub fn checkpoint(&self) -> Checkpoint {
        let names: Vec<String> = self.param_ids.iter().map(|&id| self.graph.node(id).name.clone()).collect();
        Checkpoint {
            spec: self.spec.clone(),
            params: names.iter().cloned().zip(self.best_params.iter().cloned()).collect(),
            state: Some(TrainState {
                seed: self.cfg.seed,
                epoch: self.epoch,
                step: self.step,
                current: names
                    .into_iter()
                    .zip(self.param_ids.iter().map(|&id| self.graph_param(id).clone()))
                    .collect(),
                adam_m: self.m.clone(),
                adam_v: self.v.clone(),
                best_val_loss: self.best_val_loss,
                best_epoch: self.best_epoch,
                bad_epochs: self.bad_epochs,
                history: self.history.clone(),
                stopped: self.stopped,
            }),
        }
    }
}

/// Trains `spec` on the train split with early stopping on the val split.
pub fn train(spec: &ArchSpec, data: &Dataset, cfg: &TrainConfig) -> Result<(Checkpoint, TrainHistory)> {
    let mut t = Trainer::new(spec, cfg)?;
    t.run(data)?;
    Ok((t.checkpoint(), t.history()))
}

/// Inference mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Mean of all head probability maps.
    Ensemble,
    /// Only the sub-network feeding the head at `X^{0,k}`.
    Pruned(usize),
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Mode::Ensemble => f.write_str("ensemble"),
            Mode::Pruned(k) => write!(f, "pruned:{k}"),
        }
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "ensemble" {
            return Ok(Mode::Ensemble);
        }
        s.strip_prefix("pruned:")
            .and_then(|k| k.parse().ok())
            .map(Mode::Pruned)
            .ok_or_else(|| Error::Config(format!("mode must be `ensemble` or `pruned:K`, got `{s}`")))
    }
}

/// A trained network ready for inference, with every pruned level prepared.
#[derive(Debug, Clone)]
pub struct Model {
    network: Network,
    pruned: Vec<(usize, Network)>,
}

impl Model {
    pub fn new(network: Network) -> Result<Model> {
        let pruned = network
            .heads()
            .iter()
            .map(|&k| network.prune(k).map(|p| (k, p)))
            .collect::<Result<_>>()?;
        Ok(Model { network, pruned })
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Model> {
        Model::new(ckpt.network()?)
    }

    pub fn network(&self) -> &Network {
        &self.network
    }

    pub fn pruned_network(&self, k: usize) -> Result<&Network> {
        self.pruned.iter().find(|(j, _)| *j == k).map(|(_, n)| n).ok_or_else(|| {
            if k == 0 || k > self.network.spec().depth {
                Error::Range {
                    what: "keep_depth",
                    value: k,
                    lo: 1,
                    hi: self.network.spec().depth,
                }
            } else {
                Error::Contract(format!("no head at X^{{0,{k}}}; pruned mode needs deep supervision"))
            }
        })
    }

    /// Probability maps `[N, C, H, W]` for an `[N, channels, H, W]` batch.
    pub fn predict(&self, image: &Tensor, mode: Mode) -> Result<Tensor> {
        let (_, _, h, w) = image.dims4()?;
        let m = 1usize << self.network.spec().depth;
        if h % m != 0 || w % m != 0 {
            return Err(Error::shape(format!(
                "image {h}x{w} is not divisible by {m}; use sliding-window prediction"
            )));
        }
        let mut feeds = Feeds::new();
        feeds.insert(INPUT.into(), image.clone());
        match mode {
            Mode::Ensemble => {
                let heads = self.network.head_names();
                let names: Vec<&str> = heads.iter().map(String::as_str).collect();
                let eval = self.network.graph().forward_to(&feeds, &names)?;
                let maps: Vec<&Tensor> = names.iter().map(|n| eval.value(n)).collect::<Result<_>>()?;
                mean_maps(&maps)
            }
            Mode::Pruned(k) => {
                let net = self.pruned_network(k)?;
                let head = NodeAddress::new(0, k).head_name();
                let eval = net.graph().forward(&feeds)?;
                Ok(eval.value(&head)?.clone())
            }
        }
    }

    /// Output of one named head of the full graph.
    pub fn head_output(&self, image: &Tensor, j: usize) -> Result<Tensor> {
        let mut feeds = Feeds::new();
        feeds.insert(INPUT.into(), image.clone());
        let head = NodeAddress::new(0, j).head_name();
        let eval = self.network.graph().forward_to(&feeds, &[&head])?;
        Ok(eval.value(&head)?.clone())
    }

    pub fn predict_sliding(&self, image: &Tensor, patch: (usize, usize), stride: (usize, usize), mode: Mode) -> Result<Tensor> {
        sliding_window_predict(&ModeModel { model: self, mode }, image, patch, stride)
    }
}

/// Anything that maps an image patch `[1, C, h, w]` to probabilities `[1, K, h, w]`.
pub trait PatchModel {
    fn predict_patch(&self, patch: &Tensor) -> Result<Tensor>;
}

/// A [`Model`] fixed to one inference mode.
pub struct ModeModel<'a> {
    pub model: &'a Model,
    pub mode: Mode,
}

impl PatchModel for ModeModel<'_> {
    fn predict_patch(&self, patch: &Tensor) -> Result<Tensor> {
        self.model.predict(patch, self.mode)
    }
}

impl<F: Fn(&Tensor) -> Result<Tensor>> PatchModel for F {
    fn predict_patch(&self, patch: &Tensor) -> Result<Tensor> {
        self(patch)
    }
}

/// Predicts overlapping patches and averages the probabilities of every
/// pixel over the patches covering it. Border patches are shifted inward.
pub fn sliding_window_predict<M: PatchModel + ?Sized>(
    model: &M,
    image: &Tensor,
    patch: (usize, usize),
    stride: (usize, usize),
) -> Result<Tensor> {
    let (n, c, h, w) = image.dims4()?;
    if n != 1 {
        return Err(Error::shape("sliding-window prediction takes one image at a time"));
    }
    if stride.0 > patch.0 || stride.1 > patch.1 {
        return Err(Error::shape(format!("stride {stride:?} exceeds patch {patch:?}")));
    }
    let ys = tile_origins(h, patch.0, stride.0)?;
    let xs = tile_origins(w, patch.1, stride.1)?;
    let (ph, pw) = patch;
    let mut sum: Vec<f64> = Vec::new();
    let mut count = vec![0u32; h * w];
    let mut classes = 0;
    for &y in &ys {
        for &x in &xs {
            let mut crop = Vec::with_capacity(c * ph * pw);
            for ch in 0..c {
                for r in y..y + ph {
                    let row = (ch * h + r) * w;
                    crop.extend_from_slice(&image.data()[row + x..row + x + pw]);
                }
            }
            let out = model.predict_patch(&Tensor::from_vec(&[1, c, ph, pw], crop)?)?;
            let (on, oc, oh, ow) = out.dims4()?;
            if (on, oh, ow) != (1, ph, pw) || (classes != 0 && oc != classes) {
                return Err(Error::shape(format!("patch model returned {:?}", out.shape())));
            }
            if classes == 0 {
                classes = oc;
                sum = vec![0.0; classes * h * w];
            }
            for k in 0..classes {
                for r in 0..ph {
                    let src = &out.data()[(k * ph + r) * pw..(k * ph + r + 1) * pw];
                    let dst = &mut sum[(k * h + y + r) * w + x..(k * h + y + r) * w + x + pw];
                    for (d, s) in dst.iter_mut().zip(src) {
                        *d += s;
                    }
                }
            }
            for r in 0..ph {
                for cnt in &mut count[(y + r) * w + x..(y + r) * w + x + pw] {
                    *cnt += 1;
                }
            }
        }
    }
    for k in 0..classes {
        for (s, &cnt) in sum[k * h * w..(k + 1) * h * w].iter_mut().zip(&count) {
            *s /= cnt as f64;
        }
    }
    Tensor::from_vec(&[1, classes, h, w], sum)
}

/// Metrics for one evaluated image.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageMetrics {
    pub id: String,
    pub size_bucket: u8,
    pub metrics: SegMetrics,
}

/// How to cover an image at inference time.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Tiling {
    Whole,
    Window { patch: (usize, usize), stride: (usize, usize) },
}

/// Per-image metrics over one split, in sample order.
pub fn evaluate(
    model: &Model,
    data: &Dataset,
    split: Split,
    mode: Mode,
    tiling: Tiling,
    threshold: f64,
) -> Result<Vec<ImageMetrics>> {
    evaluate_with(data, split, threshold, |input| match tiling {
        Tiling::Whole => model.predict(input, mode),
        Tiling::Window { patch, stride } => model.predict_sliding(input, patch, stride, mode),
    })
}

/// Like [`evaluate`] with an arbitrary predictor from `[1, C, H, W]` input
/// to `[1, K, H, W]` probabilities.
pub fn evaluate_with<F>(data: &Dataset, split: Split, threshold: f64, predict: F) -> Result<Vec<ImageMetrics>>
where
    F: Fn(&Tensor) -> Result<Tensor>,
{
    data.split(split)
        .map(|s| {
            let probs = predict(&s.input()?)?;
            Ok(ImageMetrics {
                id: s.id.clone(),
                size_bucket: s.size_bucket,
                metrics: segmentation_metrics(&probs, &s.labels()?, threshold)?,
            })
        })
        .collect()
}

/// Mean and sample standard deviation (0 for fewer than two values).
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, libm::sqrt(var))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddedReport {
    pub keep_depth: usize,
    /// Mean test IoU / Dice of the full network pruned to `keep_depth`.
    pub embedded_iou: f64,
    pub embedded_dice: f64,
    /// Mean test IoU / Dice of the shallow network trained on its own.
    pub isolated_iou: f64,
    pub isolated_dice: f64,
    /// `embedded - isolated`
    pub delta_iou: f64,
    pub delta_dice: f64,
    /// Both runs trained networks with identical node sets.
    pub structurally_equal: bool,
}

/// Trains the full UNet++ and prunes it to `keep_depth` (embedded), then
/// trains UNet++ of depth `keep_depth` alone (isolated) with the same seed,
/// and compares both on the test split through the head at `X^{0,keep_depth}`.
pub fn embedded_vs_isolated(spec: &ArchSpec, data: &Dataset, cfg: &TrainConfig, keep_depth: usize) -> Result<EmbeddedReport> {
    if spec.variant != crate::arch::Variant::UnetPP || !spec.deep_supervision {
        return Err(Error::Contract("embedded training needs a deeply supervised unet_pp".into()));
    }
    if keep_depth < 1 || keep_depth > spec.depth {
        return Err(Error::Range {
            what: "keep_depth",
            value: keep_depth,
            lo: 1,
            hi: spec.depth,
        });
    }
    let mut shallow = spec.clone();
    shallow.depth = keep_depth;
    shallow.widths.truncate(keep_depth + 1);

    let score = |s: &ArchSpec| -> Result<(Vec<crate::arch::NodeAddress>, f64, f64)> {
        let (ckpt, _) = train(s, data, cfg)?;
        let model = Model::from_checkpoint(&ckpt)?;
        let rows = evaluate(&model, data, Split::Test, Mode::Pruned(keep_depth), Tiling::Whole, cfg.threshold)?;
        let iou: Vec<f64> = rows.iter().map(|r| r.metrics.iou).collect();
        let dice: Vec<f64> = rows.iter().map(|r| r.metrics.dice).collect();
        Ok((model.network().nodes().to_vec(), mean_std(&iou).0, mean_std(&dice).0))
    };
    let (full_nodes, e_iou, e_dice) = score(spec)?;
    let (own_nodes, i_iou, i_dice) = score(&shallow)?;
    Ok(EmbeddedReport {
        keep_depth,
        embedded_iou: e_iou,
        embedded_dice: e_dice,
        isolated_iou: i_iou,
        isolated_dice: i_dice,
        delta_iou: e_iou - i_iou,
        delta_dice: e_dice - i_dice,
        structurally_equal: full_nodes == own_nodes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;

    #[test]
    fn adam_zero_gradient_is_noop() {
        let mut p = Tensor::from_vec(&[3], alloc::vec![1.0, -2.0, 0.5]).unwrap();
        let before = p.clone();
        let g = p.zeros_like();
        let (mut m, mut v) = (p.zeros_like(), p.zeros_like());
        adam_step(&mut p, &g, &mut m, &mut v, 1, &AdamConfig::default()).unwrap();
        assert_eq!(p, before);
    }

    #[test]
    fn adam_first_step_scalar() {
        let mut p = Tensor::scalar(0.0);
        let (mut m, mut v) = (p.zeros_like(), p.zeros_like());
        let cfg = AdamConfig::default();
        adam_step(&mut p, &Tensor::scalar(1.0), &mut m, &mut v, 1, &cfg).unwrap();
        // bias corrections cancel at t = 1: m̂ = v̂ = 1
        let expect = -3e-4 / (1.0 + 1e-8);
        assert!((p.data()[0] - expect).abs() < 1e-15);
    }

    #[test]
    fn adam_rejects_mismatch() {
        let mut p = Tensor::scalar(0.0);
        let (mut m, mut v) = (p.zeros_like(), p.zeros_like());
        let g = Tensor::zeros(&[2]).unwrap();
        assert!(adam_step(&mut p, &g, &mut m, &mut v, 1, &AdamConfig::default()).is_err());
    }

    #[test]
    fn mode_parsing() {
        assert_eq!("ensemble".parse::<Mode>().unwrap(), Mode::Ensemble);
        assert_eq!("pruned:3".parse::<Mode>().unwrap(), Mode::Pruned(3));
        assert!("pruned:".parse::<Mode>().is_err());
        assert_eq!(Mode::Pruned(2).to_string(), "pruned:2");
    }

    #[test]
    fn mean_and_std() {
        let (m, s) = mean_std(&[2.0, 4.0, 4.0, 4.0, 5.0, 5.0, 7.0, 9.0]);
        assert_eq!(m, 5.0);
        assert!((s - libm::sqrt(32.0 / 7.0)).abs() < 1e-15);
        assert_eq!(mean_std(&[3.0]), (3.0, 0.0));
    }

    fn stub(v: f64) -> impl Fn(&Tensor) -> Result<Tensor> {
        move |p: &Tensor| {
            let (_, _, h, w) = p.dims4()?;
            Tensor::full(&[1, 1, h, w], v)
        }
    }

    #[test]
    fn sliding_window_tiles_exactly() {
        let mut rng = Rng::new(0);
        let img = Tensor::randn(&[1, 1, 8, 12], 0.0, 1.0, &mut rng).unwrap();
        let identity = |p: &Tensor| Ok(p.clone());
        let out = sliding_window_predict(&identity, &img, (4, 4), (4, 4)).unwrap();
        assert_eq!(out, img);
        let out = sliding_window_predict(&identity, &img, (4, 6), (2, 3)).unwrap();
        for (a, b) in out.data().iter().zip(img.data()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn sliding_window_constant() {
        let img = Tensor::zeros(&[1, 1, 10, 10]).unwrap();
        let out = sliding_window_predict(&stub(0.3), &img, (4, 4), (2, 3)).unwrap();
        assert!(out.data().iter().all(|&v| (v - 0.3).abs() < 1e-15));
    }

    #[test]
    fn sliding_window_overlap_band_is_mean() {
        // 4 wide image, 2 wide patches at stride 1: origins 0, 1, 2
        // left patch votes 0.2, others vote by origin
        let img = Tensor::from_vec(&[1, 1, 2, 4], alloc::vec![0.0; 8]).unwrap();
        let model = |p: &Tensor| -> Result<Tensor> { Tensor::full(p.shape(), 0.0) };
        assert!(sliding_window_predict(&model, &img, (2, 2), (2, 1)).is_ok());

        // two half-overlapping patches on a 6-wide image: origins 0 and 2 with patch 4
        let img = Tensor::from_vec(&[1, 1, 4, 6], (0..24).map(|v| v as f64).collect()).unwrap();
        let by_origin = |p: &Tensor| -> Result<Tensor> {
            // patch starting at column 0 has value 0 at [0,0]; at column 2 it has 2
            let v = if p.data()[0] == 0.0 { 0.2 } else { 0.8 };
            Tensor::full(p.shape(), v)
        };
        let out = sliding_window_predict(&by_origin, &img, (4, 4), (4, 2)).unwrap();
        for r in 0..4 {
            let row = &out.data()[r * 6..(r + 1) * 6];
            assert_eq!(row[0], 0.2);
            assert_eq!(row[1], 0.2);
            assert!((row[2] - 0.5).abs() < 1e-15 && (row[3] - 0.5).abs() < 1e-15);
            assert_eq!(row[4], 0.8);
        }
    }

    #[test]
    fn sliding_window_errors() {
        let img = Tensor::zeros(&[1, 1, 4, 4]).unwrap();
        assert!(sliding_window_predict(&stub(0.0), &img, (8, 8), (4, 4)).is_err());
        assert!(sliding_window_predict(&stub(0.0), &img, (2, 2), (3, 3)).is_err());
    }
}
