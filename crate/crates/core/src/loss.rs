//! Hybrid log-likelihood + soft-dice loss and its deep-supervision sum.
//!
//! Per head, with `N` = pixels in the batch (`batch · H · W`):
//!
//! ```text
//! L(Y, P) = -(1/N) Σ_c Σ_n ( y·log p + 2·y·p / (y² + p²) )
//! ```
//!
//! The log argument is clamped below at `eps_log` and `eps_dice` is added to
//! the dice denominator. `full_bce` adds the `(1 - y)·log(1 - p)` term that
//! the formula above leaves out; without it background pixels contribute
//! nothing to the loss or its gradient.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::tensor::Tensor;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct LossConfig {
    pub eps_log: f64,
    pub eps_dice: f64,
    /// Include the background term `(1 - y)·log(1 - p)`.
    pub full_bce: bool,
    /// Per-head weights η; empty means all ones.
    pub head_weights: Vec<f64>,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            eps_log: 1e-7,
            eps_dice: 1e-12,
            full_bce: false,
            head_weights: Vec::new(),
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eps_log > 0.0 && self.eps_log < 0.5) {
            return Err(Error::Config(format!("eps_log must be in (0, 0.5), got {}", self.eps_log)));
        }
        if !(self.eps_dice > 0.0) {
            return Err(Error::Config(format!("eps_dice must be > 0, got {}", self.eps_dice)));
        }
        if self.head_weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::Config("head weights must be finite".into()));
        }
        Ok(())
    }

    /// η resolved for `heads` supervised outputs.
    pub fn weights_for(&self, heads: usize) -> Result<Vec<f64>> {
        if self.head_weights.is_empty() {
            return Ok(vec![1.0; heads]);
        }
        if self.head_weights.len() != heads {
            return Err(Error::Config(format!(
                "{} head weights given for {} supervised heads",
                self.head_weights.len(),
                heads
            )));
        }
        Ok(self.head_weights.clone())
    }
}

fn check(labels: &Tensor, probs: &Tensor) -> Result<usize> {
    if labels.shape() != probs.shape() {
        return Err(Error::shape(format!(
            "loss: labels {:?} vs predictions {:?}",
            labels.shape(),
            probs.shape()
        )));
    }
    if let Some(&bad) = labels.data().iter().find(|&&y| y != 0.0 && y != 1.0) {
        return Err(Error::Label(bad));
    }
    // N = pixels per batch: every axis except the class axis of NCHW
    Ok(match *labels.shape() {
        [n, _, h, w] => n * h * w,
        _ => labels.len(),
    })
}

#[inline]
fn pixel_term(y: f64, p: f64, cfg: &LossConfig) -> f64 {
    let mut t = y * libm::log(p.max(cfg.eps_log)) + 2.0 * y * p / (y * y + p * p + cfg.eps_dice);
    if cfg.full_bce {
        t += (1.0 - y) * libm::log((1.0 - p).max(cfg.eps_log));
    }
    t
}

#[inline]
fn pixel_grad(y: f64, p: f64, cfg: &LossConfig) -> f64 {
    let mut g = 0.0;
    if p > cfg.eps_log {
        g += y / p;
    }
    let den = y * y + p * p + cfg.eps_dice;
    g += 2.0 * y * (y * y - p * p + cfg.eps_dice) / (den * den);
    if cfg.full_bce && 1.0 - p > cfg.eps_log {
        g -= (1.0 - y) / (1.0 - p);
    }
    g
}

/// Hybrid loss of one prediction map against binary labels.
pub fn hybrid_loss(labels: &Tensor, probs: &Tensor, cfg: &LossConfig) -> Result<f64> {
    let n = check(labels, probs)?;
    let s: f64 = labels
        .data()
        .iter()
        .zip(probs.data())
        .map(|(&y, &p)| pixel_term(y, p, cfg))
        .sum();
    Ok(-s / n as f64)
}

/// `∂L/∂P` of [`hybrid_loss`].
pub fn hybrid_loss_grad(labels: &Tensor, probs: &Tensor, cfg: &LossConfig) -> Result<Tensor> {
    let n = check(labels, probs)? as f64;
    let data = labels
        .data()
        .iter()
        .zip(probs.data())
        .map(|(&y, &p)| -pixel_grad(y, p, cfg) / n)
        .collect();
    Tensor::from_vec(probs.shape(), data)
}

/// `Σ_i η_i · L(Y, P_i)` over the supervised heads.
pub fn total_loss(labels: &Tensor, heads: &[&Tensor], cfg: &LossConfig) -> Result<f64> {
    if heads.is_empty() {
        return Err(Error::Contract("total loss needs at least one head".into()));
    }
    let weights = cfg.weights_for(heads.len())?;
    let mut total = 0.0;
    for (p, w) in heads.iter().zip(&weights) {
        total += w * hybrid_loss(labels, p, cfg)?;
    }
    Ok(total)
}
