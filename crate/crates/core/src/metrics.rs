//! Pixel-wise segmentation statistics and Welch's two-sample t-test.

use alloc::format;

use crate::tensor::Tensor;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    pub fn_: u64,
}

impl ConfusionCounts {
    /// Counts after binarizing `pred` at `threshold` (`p >= threshold` is foreground).
    pub fn from_maps(pred: &Tensor, label: &Tensor, threshold: f64) -> Result<Self> {
        if pred.shape() != label.shape() {
            return Err(Error::shape(format!(
                "metrics: prediction {:?} vs label {:?}",
                pred.shape(),
                label.shape()
            )));
        }
        let mut c = ConfusionCounts::default();
        for (&p, &y) in pred.data().iter().zip(label.data()) {
            if y != 0.0 && y != 1.0 {
                return Err(Error::Label(y));
            }
            match (p >= threshold, y == 1.0) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, false) => c.tn += 1,
                (false, true) => c.fn_ += 1,
            }
        }
        Ok(c)
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn metrics(&self) -> SegMetrics {
        let (tp, fp, tn, fn_) = (self.tp as f64, self.fp as f64, self.tn as f64, self.fn_ as f64);
        // 0/0 means both masks are empty on that side: score it as perfect.
        let ratio = |num: f64, den: f64| if den == 0.0 { 1.0 } else { num / den };
        let dice = ratio(2.0 * tp, 2.0 * tp + fp + fn_);
        SegMetrics {
            iou: ratio(tp, tp + fp + fn_),
            dice,
            sensitivity: ratio(tp, tp + fn_),
            specificity: ratio(tn, tn + fp),
            f1: dice,
            f2: ratio(5.0 * tp, 5.0 * tp + 4.0 * fn_ + fp),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SegMetrics {
    pub iou: f64,
    pub dice: f64,
    pub sensitivity: f64,
    pub specificity: f64,
    pub f1: f64,
    pub f2: f64,
}

impl SegMetrics {
    pub const NAMES: [&'static str; 6] = ["IoU", "Dice", "sensitivity", "specificity", "F1", "F2"];

    pub fn values(&self) -> [f64; 6] {
        [self.iou, self.dice, self.sensitivity, self.specificity, self.f1, self.f2]
    }
}

pub fn segmentation_metrics(pred: &Tensor, label: &Tensor, threshold: f64) -> Result<SegMetrics> {
    Ok(ConfusionCounts::from_maps(pred, label, threshold)?.metrics())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TTest {
    pub t: f64,
    pub df: f64,
    /// Two-sided.
    pub p: f64,
    pub significant: bool,
}

fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

/// Welch's unequal-variance t-test, two-sided, significance at 0.05.
///
/// When both samples have zero variance the statistic is undefined and the
/// result is reported as `t = 0, p = 1`.
pub fn two_sample_ttest(a: &[f64], b: &[f64]) -> Result<TTest> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::Sample(format!(
            "t-test needs at least 2 values per sample, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let (ma, va) = mean_var(a);
    let (mb, vb) = mean_var(b);
    let (sa, sb) = (va / a.len() as f64, vb / b.len() as f64);
    let se2 = sa + sb;
    if se2 == 0.0 {
        return Ok(TTest {
            t: 0.0,
            df: (a.len() + b.len() - 2) as f64,
            p: 1.0,
            significant: false,
        });
    }
    let t = (ma - mb) / libm::sqrt(se2);
    let df = se2 * se2 / (sa * sa / (a.len() - 1) as f64 + sb * sb / (b.len() - 1) as f64);
    let p = student_t_two_sided(t, df);
    Ok(TTest {
        t,
        df,
        p,
        significant: p < 0.05,
    })
}

/// `P(|T| >= |t|)` for Student's t with `df` degrees of freedom.
pub fn student_t_two_sided(t: f64, df: f64) -> f64 {
    let x = df / (df + t * t);
    regularized_incomplete_beta(0.5 * df, 0.5, x).clamp(0.0, 1.0)
}

/// `I_x(a, b)` by Lentz's continued fraction.
pub fn regularized_incomplete_beta(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = libm::lgamma(a + b) - libm::lgamma(a) - libm::lgamma(b) + a * libm::log(x) + b * libm::log1p(-x);
    let front = libm::exp(ln_front);
    // the fraction converges fastest for x < (a+1)/(a+b+2)
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_fraction(a, b, x) / a
    } else {
        1.0 - front * beta_fraction(b, a, 1.0 - x) / b
    }
}

fn beta_fraction(a: f64, b: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    const EPS: f64 = 1e-16;
    let (qab, qap, qam) = (a + b, a + 1.0, a - 1.0);
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=1000 {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            break;
        }
    }
    h
}
