//! Ready-made gradient checks: each layer op in isolation and whole networks.

use alloc::format;
use alloc::string::ToString;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::arch::{ArchSpec, Network, INPUT, LABELS, LOSS};
use crate::autograd::{finite_diff_check, Feeds, GradCheckReport, Graph, NodeId, Op};
use crate::loss::LossConfig;
use crate::rng::Rng;
use crate::tensor::Tensor;
use crate::{Error, Result};

/// A layer op checked on its own.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OpCheck {
    Conv2d,
    ConvTranspose2,
    MaxPool2,
    Relu,
    Sigmoid,
    Concat,
    ConvBlock,
    HybridLoss,
}

impl OpCheck {
    pub const ALL: [OpCheck; 8] = [
        OpCheck::Conv2d,
        OpCheck::ConvTranspose2,
        OpCheck::MaxPool2,
        OpCheck::Relu,
        OpCheck::Sigmoid,
        OpCheck::Concat,
        OpCheck::ConvBlock,
        OpCheck::HybridLoss,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            OpCheck::Conv2d => "conv2d",
            OpCheck::ConvTranspose2 => "conv_transpose2",
            OpCheck::MaxPool2 => "max_pool2",
            OpCheck::Relu => "relu",
            OpCheck::Sigmoid => "sigmoid",
            OpCheck::Concat => "concat",
            OpCheck::ConvBlock => "conv_block",
            OpCheck::HybridLoss => "hybrid_loss",
        }
    }
}

impl fmt::Display for OpCheck {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for OpCheck {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        OpCheck::ALL
            .into_iter()
            .find(|o| o.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown op `{s}`")))
    }
}

fn randn(shape: &[usize], std: f64, rng: &mut Rng) -> Result<Tensor> {
    Tensor::randn(shape, 0.0, std, rng)
}

fn binary(shape: &[usize], rng: &mut Rng) -> Result<Tensor> {
    let n: usize = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| if rng.uniform() < 0.4 { 1.0 } else { 0.0 }).collect())
}

fn fixed(shape: &[usize]) -> Vec<Option<usize>> {
    shape.iter().map(|&e| Some(e)).collect()
}

/// Closes `out` with `loss = Σ r ⊙ out` for a random projection `r`.
fn project(g: &mut Graph, out: NodeId, shape: &[usize], feeds: &mut Feeds, rng: &mut Rng) -> Result<()> {
    let r = g.input("proj", &fixed(shape))?;
    let m = g.op("weighted", Op::Mul, &[out, r])?;
    g.op(LOSS, Op::Sum, &[m])?;
    feeds.insert("proj".to_string(), randn(shape, 1.0, rng)?);
    Ok(())
}

/// Builds a small graph exercising `op`, with trainable inputs.
pub fn op_graph(op: OpCheck, rng: &mut Rng) -> Result<(Graph, Feeds)> {
    let mut g = Graph::new();
    let mut f = Feeds::new();
    match op {
        OpCheck::Conv2d | OpCheck::ConvTranspose2 => {
            let (x_shape, k_shape, out_shape, tag) = if op == OpCheck::Conv2d {
                ([2, 3, 6, 5], [4, 3, 3, 3], [2, 4, 6, 5], Op::Conv2d)
            } else {
                ([2, 3, 3, 4], [3, 2, 2, 2], [2, 2, 6, 8], Op::ConvTranspose2)
            };
            let x = g.add_param("x", randn(&x_shape, 1.0, rng)?)?;
            let k = g.add_param("kernel", randn(&k_shape, 0.5, rng)?)?;
            let b = g.add_param("bias", randn(&[k_shape[if op == OpCheck::Conv2d { 0 } else { 1 }]], 0.5, rng)?)?;
            let y = g.op("y", tag, &[x, k, b])?;
            project(&mut g, y, &out_shape, &mut f, rng)?;
        }
        OpCheck::MaxPool2 | OpCheck::Relu | OpCheck::Sigmoid => {
            let x = g.add_param("x", randn(&[2, 3, 4, 6], 1.0, rng)?)?;
            let (tag, out) = match op {
                OpCheck::MaxPool2 => (Op::MaxPool2, [2, 3, 2, 3]),
                OpCheck::Relu => (Op::Relu, [2, 3, 4, 6]),
                _ => (Op::Sigmoid, [2, 3, 4, 6]),
            };
            let y = g.op("y", tag, &[x])?;
            project(&mut g, y, &out, &mut f, rng)?;
        }
        OpCheck::Concat => {
            let a = g.add_param("a", randn(&[2, 2, 3, 3], 1.0, rng)?)?;
            let b = g.add_param("b", randn(&[2, 1, 3, 3], 1.0, rng)?)?;
            let c = g.add_param("c", randn(&[2, 3, 3, 3], 1.0, rng)?)?;
            let y = g.op("y", Op::Concat, &[a, b, c])?;
            project(&mut g, y, &[2, 6, 3, 3], &mut f, rng)?;
        }
        OpCheck::ConvBlock => {
            let x = g.input("x", &[None, Some(2), None, None])?;
            let mut h = x;
            for l in 0..2 {
                let cin = if l == 0 { 2 } else { 3 };
                let k = g.add_param(format!("conv{l}/kernel"), randn(&[3, cin, 3, 3], 0.5, rng)?)?;
                let b = g.add_param(format!("conv{l}/bias"), Tensor::randn(&[3], 0.1, 0.1, rng)?)?;
                let c = g.op(format!("conv{l}"), Op::Conv2d, &[h, k, b])?;
                h = g.op(format!("relu{l}"), Op::Relu, &[c])?;
            }
            project(&mut g, h, &[1, 3, 5, 5], &mut f, rng)?;
            f.insert("x".to_string(), randn(&[1, 2, 5, 5], 1.0, rng)?);
        }
        OpCheck::HybridLoss => {
            let y = g.input("y", &[None, Some(1), None, None])?;
            let z = g.add_param("logits", randn(&[2, 1, 3, 3], 1.0, rng)?)?;
            let p = g.op("p", Op::Sigmoid, &[z])?;
            let cfg = LossConfig {
                full_bce: true,
                ..LossConfig::default()
            };
            g.op(LOSS, Op::HybridLoss(cfg), &[y, p])?;
            f.insert("y".to_string(), binary(&[2, 1, 3, 3], rng)?);
        }
    }
    Ok((g, f))
}

/// Gradient check of one op on a graph drawn from `seed`.
pub fn check_op(op: OpCheck, seed: u64, tolerance: f64) -> Result<GradCheckReport> {
    let mut rng = Rng::new(seed).split(op as u64);
    let (g, f) = op_graph(op, &mut rng)?;
    finite_diff_check(&g, &f, LOSS, &mut rng, tolerance)
}

/// Gradient check of the full training graph of `spec` with random input
/// and labels. The loss includes the negative-pixel term so every
/// parameter receives a gradient.
pub fn check_network(spec: &ArchSpec, seed: u64, tolerance: f64) -> Result<GradCheckReport> {
    let net = Network::build(spec, &Rng::new(seed))?;
    let graph = net.training_graph(&LossConfig {
        full_bce: true,
        ..LossConfig::default()
    })?;
    let (c, h, w) = spec.input;
    let mut rng = Rng::new(seed).split(0xfeed);
    let mut f = Feeds::new();
    f.insert(INPUT.to_string(), randn(&[1, c, h, w], 1.0, &mut rng)?);
    f.insert(LABELS.to_string(), binary(&[1, spec.classes, h, w], &mut rng)?);
    finite_diff_check(&graph, &f, LOSS, &mut rng, tolerance)
}
