//! Dense row-major `f64` tensors.
//!
//! 4-D activations use NCHW layout. Operations never broadcast except for a
//! single-element tensor (shape `[1]`) combined with anything.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::rng::Rng;
use crate::{Error, Result};

#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

/// Initial contents for [`Tensor::create`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Fill {
    Constant(f64),
    /// Drawn from the generator in row-major element order.
    Normal { mean: f64, std: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Max,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReduceOp {
    Sum,
    Mean,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PadMode {
    Zero,
    Crop,
}

fn validate_shape(shape: &[usize]) -> Result<usize> {
    if shape.is_empty() || shape.iter().any(|&e| e == 0) {
        return Err(Error::InvalidShape(shape.to_vec()));
    }
    Ok(shape.iter().product())
}

impl Tensor {
    pub fn create(shape: &[usize], fill: Fill, rng: Option<&mut Rng>) -> Result<Tensor> {
        let n = validate_shape(shape)?;
        let data = match fill {
            Fill::Constant(c) => vec![c; n],
            Fill::Normal { mean, std } => {
                let rng = rng.ok_or_else(|| Error::Contract("normal fill needs a generator".into()))?;
                (0..n).map(|_| mean + std * rng.normal()).collect()
            }
        };
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn zeros(shape: &[usize]) -> Result<Tensor> {
        Self::create(shape, Fill::Constant(0.0), None)
    }

    pub fn full(shape: &[usize], value: f64) -> Result<Tensor> {
        Self::create(shape, Fill::Constant(value), None)
    }

    pub fn randn(shape: &[usize], mean: f64, std: f64, rng: &mut Rng) -> Result<Tensor> {
        Self::create(shape, Fill::Normal { mean, std }, Some(rng))
    }

    pub fn scalar(value: f64) -> Tensor {
        Tensor {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Tensor> {
        let n = validate_shape(shape)?;
        if n != data.len() {
            return Err(Error::shape(alloc::format!(
                "shape {:?} holds {} elements, got {}",
                shape,
                n,
                data.len()
            )));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    /// Zero tensor with this tensor's shape.
    pub fn zeros_like(&self) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: vec![0.0; self.data.len()],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> Option<f64> {
        (self.data.len() == 1).then(|| self.data[0])
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Tensor> {
        Tensor::from_vec(shape, self.data)
    }

    /// Interprets the tensor as NCHW.
    pub fn dims4(&self) -> Result<(usize, usize, usize, usize)> {
        match *self.shape.as_slice() {
            [n, c, h, w] => Ok((n, c, h, w)),
            _ => Err(Error::shape(alloc::format!(
                "expected a rank-4 NCHW tensor, got shape {:?}",
                self.shape
            ))),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn elementwise(&self, op: BinaryOp, other: &Tensor) -> Result<Tensor> {
        let f = match op {
            BinaryOp::Add => |a: f64, b: f64| a + b,
            BinaryOp::Sub => |a: f64, b: f64| a - b,
            BinaryOp::Mul => |a: f64, b: f64| a * b,
            BinaryOp::Max => |a: f64, b: f64| if b > a { b } else { a },
        };
        if self.shape == other.shape {
            let data = self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect();
            return Ok(Tensor {
                shape: self.shape.clone(),
                data,
            });
        }
        if let Some(s) = other.item() {
            return Ok(self.map(|a| f(a, s)));
        }
        if let Some(s) = self.item() {
            return Ok(other.map(|b| f(s, b)));
        }
        Err(Error::shape(alloc::format!(
            "elementwise {:?}: shapes {:?} and {:?} differ",
            op,
            self.shape,
            other.shape
        )))
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.elementwise(BinaryOp::Add, other)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.elementwise(BinaryOp::Sub, other)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.elementwise(BinaryOp::Mul, other)
    }

    pub fn maximum(&self, other: &Tensor) -> Result<Tensor> {
        self.elementwise(BinaryOp::Max, other)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scale(&self, factor: f64) -> Tensor {
        self.map(|v| v * factor)
    }

    /// In-place `self += other` for equal shapes.
    pub fn add_assign(&mut self, other: &Tensor) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::shape(alloc::format!(
                "accumulate: shapes {:?} and {:?} differ",
                self.shape,
                other.shape
            )));
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn sum_all(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn mean_all(&self) -> f64 {
        self.sum_all() / self.data.len() as f64
    }

    /// Sums or averages over `axes` (`None` means all axes). Reduced axes are
    /// dropped unless `keep_dims`; reducing everything yields shape `[1]`.
    pub fn reduce(&self, op: ReduceOp, axes: Option<&[usize]>, keep_dims: bool) -> Result<Tensor> {
        let rank = self.rank();
        let mut reduced = vec![false; rank];
        match axes {
            None => reduced.iter_mut().for_each(|r| *r = true),
            Some(list) => {
                for &a in list {
                    if a >= rank {
                        return Err(Error::Axis { axis: a, rank });
                    }
                    reduced[a] = true;
                }
            }
        }
        let kept_shape: Vec<usize> = self
            .shape
            .iter()
            .zip(&reduced)
            .map(|(&e, &r)| if r { 1 } else { e })
            .collect();
        let out_len: usize = kept_shape.iter().product();
        let mut out = vec![0.0; out_len];
        let count = self.len() / out_len;

        // Serial accumulation in row-major input order.
        let mut idx = vec![0usize; rank];
        for &v in &self.data {
            let mut flat = 0;
            for ax in 0..rank {
                let i = if reduced[ax] { 0 } else { idx[ax] };
                flat = flat * kept_shape[ax] + i;
            }
            out[flat] += v;
            for ax in (0..rank).rev() {
                idx[ax] += 1;
                if idx[ax] < self.shape[ax] {
                    break;
                }
                idx[ax] = 0;
            }
        }
        if op == ReduceOp::Mean {
            let inv = count as f64;
            out.iter_mut().for_each(|v| *v /= inv);
        }
        let shape = if keep_dims {
            kept_shape
        } else {
            let s: Vec<usize> = self
                .shape
                .iter()
                .zip(&reduced)
                .filter(|(_, &r)| !r)
                .map(|(&e, _)| e)
                .collect();
            if s.is_empty() {
                vec![1]
            } else {
                s
            }
        };
        Ok(Tensor { shape, data: out })
    }

    /// Zero-pads or crops each axis by `(before, after)`.
    pub fn pad_crop(&self, spec: &[(usize, usize)], mode: PadMode) -> Result<Tensor> {
        let rank = self.rank();
        if spec.len() != rank {
            return Err(Error::shape(alloc::format!(
                "pad/crop spec has {} axes, tensor rank is {}",
                spec.len(),
                rank
            )));
        }
        let new_shape: Vec<usize> = match mode {
            PadMode::Zero => self.shape.iter().zip(spec).map(|(&e, &(b, a))| e + b + a).collect(),
            PadMode::Crop => {
                let mut s = Vec::with_capacity(rank);
                for (&e, &(b, a)) in self.shape.iter().zip(spec) {
                    if b + a >= e {
                        return Err(Error::shape(alloc::format!(
                            "cannot crop ({b}, {a}) from extent {e}"
                        )));
                    }
                    s.push(e - b - a);
                }
                s
            }
        };
        let mut out = Tensor::zeros(&new_shape)?;
        // Map every output index back into the source; out-of-range stays zero.
        let (src_shape, dst_shape) = (&self.shape, &new_shape);
        let offset = |ax: usize, i: usize| -> Option<usize> {
            let (b, _) = spec[ax];
            match mode {
                PadMode::Zero => i.checked_sub(b).filter(|&s| s < src_shape[ax]),
                PadMode::Crop => Some(i + b),
            }
        };
        let mut idx = vec![0usize; rank];
        for o in out.data.iter_mut() {
            let mut flat = 0;
            let mut inside = true;
            for ax in 0..rank {
                match offset(ax, idx[ax]) {
                    Some(s) => flat = flat * src_shape[ax] + s,
                    None => {
                        inside = false;
                        break;
                    }
                }
            }
            if inside {
                *o = self.data[flat];
            }
            for ax in (0..rank).rev() {
                idx[ax] += 1;
                if idx[ax] < dst_shape[ax] {
                    break;
                }
                idx[ax] = 0;
            }
        }
        Ok(out)
    }

    /// Concatenates NCHW tensors along the channel axis, preserving order.
    pub fn concat_channels(parts: &[&Tensor]) -> Result<Tensor> {
        let first = parts
            .first()
            .ok_or_else(|| Error::shape("concat_channels needs at least one part"))?;
        let (n, _, h, w) = first.dims4()?;
        let mut channels = 0;
        for p in parts {
            let (pn, pc, ph, pw) = p.dims4()?;
            if (pn, ph, pw) != (n, h, w) {
                return Err(Error::shape(alloc::format!(
                    "concat_channels: part shape {:?} does not match batch/spatial {:?}",
                    p.shape,
                    first.shape
                )));
            }
            channels += pc;
        }
        let plane = h * w;
        let mut data = Vec::with_capacity(n * channels * plane);
        for b in 0..n {
            for p in parts {
                let pc = p.shape[1];
                data.extend_from_slice(&p.data[b * pc * plane..(b + 1) * pc * plane]);
            }
        }
        Ok(Tensor {
            shape: vec![n, channels, h, w],
            data,
        })
    }

    /// Inverse of [`Tensor::concat_channels`]: splits by channel counts.
    pub fn split_channels(&self, counts: &[usize]) -> Result<Vec<Tensor>> {
        let (n, c, h, w) = self.dims4()?;
        if counts.iter().sum::<usize>() != c {
            return Err(Error::shape(alloc::format!(
                "split_channels: counts {counts:?} do not sum to {c}"
            )));
        }
        let plane = h * w;
        let mut parts: Vec<Vec<f64>> = counts.iter().map(|&k| Vec::with_capacity(n * k * plane)).collect();
        for b in 0..n {
            let mut off = b * c * plane;
            for (part, &k) in parts.iter_mut().zip(counts) {
                part.extend_from_slice(&self.data[off..off + k * plane]);
                off += k * plane;
            }
        }
        parts
            .into_iter()
            .zip(counts)
            .map(|(d, &k)| Tensor::from_vec(&[n, k, h, w], d))
            .collect()
    }

    /// Batch item `i` of an NCHW tensor, keeping a batch axis of 1.
    pub fn batch_item(&self, i: usize) -> Result<Tensor> {
        let (n, c, h, w) = self.dims4()?;
        if i >= n {
            return Err(Error::shape(alloc::format!("batch index {i} out of {n}")));
        }
        let len = c * h * w;
        Tensor::from_vec(&[1, c, h, w], self.data[i * len..(i + 1) * len].to_vec())
    }

    /// Stacks equally shaped tensors along a new (or existing size-1) batch axis.
    pub fn stack_batch(items: &[&Tensor]) -> Result<Tensor> {
        let first = items.first().ok_or_else(|| Error::shape("stack_batch of nothing"))?;
        let inner: &[usize] = match first.shape.first() {
            Some(1) if first.rank() == 4 => &first.shape[1..],
            _ => &first.shape,
        };
        let mut data = Vec::with_capacity(items.len() * first.len());
        for t in items {
            if t.len() != first.len() {
                return Err(Error::shape("stack_batch: items differ in size"));
            }
            data.extend_from_slice(&t.data);
        }
        let mut shape = vec![items.len()];
        shape.extend_from_slice(inner);
        Tensor::from_vec(&shape, data)
    }
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        const SHOWN: usize = 8;
        write!(f, "Tensor{:?}[", self.shape)?;
        for (i, v) in self.data.iter().take(SHOWN).enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            write!(f, "{v}")?;
        }
        if self.data.len() > SHOWN {
            write!(f, ", … ({} total)", self.data.len())?;
        }
        f.write_str("]")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use crate::rng::Rng;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::from_vec(shape, data.to_vec()).unwrap()
    }

    #[test]
    fn create_constant() {
        let z = Tensor::create(&[2, 3], Fill::Constant(0.0), None).unwrap();
        assert_eq!(z.data(), &[0.0; 6]);
        assert_eq!(Tensor::full(&[1], 7.5).unwrap().data(), &[7.5]);
    }

    #[test]
    fn create_rejects_zero_extent() {
        assert!(matches!(Tensor::zeros(&[2, 0]), Err(Error::InvalidShape(_))));
        assert!(matches!(Tensor::zeros(&[]), Err(Error::InvalidShape(_))));
    }

    #[test]
    fn normal_fill_is_reproducible() {
        let a = Tensor::randn(&[4], 0.0, 1.0, &mut Rng::new(42)).unwrap();
        let b = Tensor::randn(&[4], 0.0, 1.0, &mut Rng::new(42)).unwrap();
        let bits = |x: &Tensor| x.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
    }

    #[test]
    fn elementwise_examples() {
        assert_eq!(t(&[2], &[1., 2.]).add(&t(&[2], &[3., 4.])).unwrap().data(), &[4., 6.]);
        let x = t(&[3], &[0.5, -2.0, 9.0]);
        assert_eq!(x.mul(&Tensor::scalar(1.0)).unwrap(), x);
        // per-element oracle
        let (a, b) = ([-1.0, 5.0], [2.0, 2.0]);
        let expect: Vec<f64> = a.iter().zip(&b).map(|(p, q)| if p >= q { *p } else { *q }).collect();
        assert_eq!(t(&[2], &a).maximum(&t(&[2], &b)).unwrap().data(), expect.as_slice());
    }

    #[test]
    fn elementwise_shape_mismatch() {
        let e = t(&[2], &[1., 2.]).add(&t(&[3], &[1., 2., 3.]));
        assert!(matches!(e, Err(Error::Shape(_))));
    }

    #[test]
    fn reduce_examples() {
        let m = t(&[2, 2], &[1., 2., 3., 4.]);
        assert_eq!(m.reduce(ReduceOp::Sum, None, false).unwrap().data(), &[10.0]);
        assert_eq!(t(&[2], &[2., 4.]).reduce(ReduceOp::Mean, None, false).unwrap().data(), &[3.0]);
        let ones = Tensor::full(&[3, 5], 1.0).unwrap();
        let r = ones.reduce(ReduceOp::Sum, Some(&[1]), false).unwrap();
        assert_eq!(r.shape(), &[3]);
        assert_eq!(r.data(), &[5.0, 5.0, 5.0]);
        let k = ones.reduce(ReduceOp::Sum, Some(&[0]), true).unwrap();
        assert_eq!(k.shape(), &[1, 5]);
        assert!(matches!(ones.reduce(ReduceOp::Sum, Some(&[2]), false), Err(Error::Axis { axis: 2, rank: 2 })));
    }

    #[test]
    fn pad_crop_examples() {
        let p = t(&[1], &[1.0]).pad_crop(&[(1, 1)], PadMode::Zero).unwrap();
        assert_eq!(p.data(), &[0.0, 1.0, 0.0]);
        let c = p.pad_crop(&[(1, 1)], PadMode::Crop).unwrap();
        assert_eq!(c.data(), &[1.0]);
        assert!(matches!(c.pad_crop(&[(1, 0)], PadMode::Crop), Err(Error::Shape(_))));

        let ones = Tensor::full(&[2, 2], 1.0).unwrap();
        let big = ones.pad_crop(&[(1, 1), (1, 1)], PadMode::Zero).unwrap();
        assert_eq!(big.shape(), &[4, 4]);
        for r in 0..4 {
            for c in 0..4 {
                let interior = (1..3).contains(&r) && (1..3).contains(&c);
                assert_eq!(big.data()[r * 4 + c], if interior { 1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn concat_examples() {
        let a = Tensor::full(&[1, 2, 4, 4], 1.0).unwrap();
        let mut rng = Rng::new(0);
        let b = Tensor::randn(&[1, 3, 4, 4], 0.0, 1.0, &mut rng).unwrap();
        let c = Tensor::concat_channels(&[&a, &b]).unwrap();
        assert_eq!(c.shape(), &[1, 5, 4, 4]);
        // channel offset 2 of the result is channel 0 of `b`
        assert_eq!(&c.data()[2 * 16..3 * 16], &b.data()[..16]);
        assert_eq!(Tensor::concat_channels(&[&a]).unwrap(), a);
        let bad = Tensor::zeros(&[1, 1, 2, 4]).unwrap();
        assert!(Tensor::concat_channels(&[&a, &bad]).is_err());
    }

    fn arb_tensor(max_len: usize) -> impl Strategy<Value = Tensor> {
        (1..max_len).prop_flat_map(|n| {
            proptest::collection::vec(-100.0f64..100.0, n).prop_map(move |d| Tensor::from_vec(&[d.len()], d).unwrap())
        })
    }

    fn arb_nchw() -> impl Strategy<Value = (Tensor, Tensor, Tensor)> {
        (1usize..3, 1usize..4, 1usize..4, 1usize..4, 1usize..4, 1usize..4).prop_flat_map(|(n, c1, c2, c3, h, w)| {
            let mk = move |c: usize| {
                proptest::collection::vec(-1.0f64..1.0, n * c * h * w)
                    .prop_map(move |d| Tensor::from_vec(&[n, c, h, w], d).unwrap())
            };
            (mk(c1), mk(c2), mk(c3))
        })
    }

    proptest! {
        #[test]
        fn sum_is_additive(a in arb_tensor(64), seed in any::<u64>()) {
            let b = Tensor::randn(a.shape(), 0.0, 10.0, &mut Rng::new(seed)).unwrap();
            let lhs = a.sum_all() + b.sum_all();
            let rhs = a.add(&b).unwrap().sum_all();
            let scale = a.data().iter().chain(b.data()).map(|v| v.abs()).sum::<f64>().max(1.0);
            prop_assert!((lhs - rhs).abs() <= 1e-12 * scale);
        }

        #[test]
        fn concat_is_associative((a, b, c) in arb_nchw()) {
            let inner = Tensor::concat_channels(&[&b, &c]).unwrap();
            let nested = Tensor::concat_channels(&[&a, &inner]).unwrap();
            let flat = Tensor::concat_channels(&[&a, &b, &c]).unwrap();
            prop_assert_eq!(nested, flat.clone());
            let parts = flat.split_channels(&[a.shape()[1], b.shape()[1], c.shape()[1]]).unwrap();
            prop_assert_eq!(&parts[0], &a);
            prop_assert_eq!(&parts[2], &c);
        }

        #[test]
        fn pad_then_crop_is_identity(
            (a, _, _) in arb_nchw(),
            pads in proptest::collection::vec((0usize..3, 0usize..3), 4),
        ) {
            let padded = a.pad_crop(&pads, PadMode::Zero).unwrap();
            prop_assert_eq!(padded.pad_crop(&pads, PadMode::Crop).unwrap(), a);
        }

        #[test]
        fn ops_are_deterministic(a in arb_tensor(32)) {
            let r1 = a.reduce(ReduceOp::Mean, None, false).unwrap();
            let r2 = a.reduce(ReduceOp::Mean, None, false).unwrap();
            prop_assert_eq!(r1.data()[0].to_bits(), r2.data()[0].to_bits());
        }
    }
}
