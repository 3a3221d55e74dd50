//! Binary tensor (`NNT1`) and checkpoint (`NNCK`) formats. All integers and
//! floats are little-endian.
//!
//! Checkpoint layout:
//!
//! ```text
//! "NNCK" u32 version
//! u32 len, architecture key=value text
//! u32 count, count × (u32 len, UTF-8 name, NNT1 tensor)     best parameters
//! u8 has_state
//!   u64 seed, u64 epoch, u64 step, f64 best_val_loss,
//!   u64 best_epoch, u64 bad_epochs, u8 stop (0 none, 1 max_epochs, 2 early_stop)
//!   named tensors: current parameters, then unnamed Adam m and v in the same order
//!   u32 epochs, each: u64 epoch, f64 train, f64 val, u32 heads, heads × f64, f64 iou
//! ```

use std::path::Path;

use unetpp_core::train::{Checkpoint, EpochRecord, StopReason, TrainState};
use unetpp_core::{ArchSpec, Tensor};

use crate::error::{Error, Result};
use crate::fsutil;

pub const TENSOR_MAGIC: &[u8; 4] = b"NNT1";
pub const CHECKPOINT_MAGIC: &[u8; 4] = b"NNCK";
pub const CHECKPOINT_VERSION: u32 = 1;

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_f64(out: &mut Vec<u8>, v: f64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    put_u32(out, s.len() as u32);
    out.extend_from_slice(s.as_bytes());
}

pub fn encode_tensor(out: &mut Vec<u8>, t: &Tensor) {
    out.extend_from_slice(TENSOR_MAGIC);
    put_u32(out, t.rank() as u32);
    for &e in t.shape() {
        put_u64(out, e as u64);
    }
    for &v in t.data() {
        put_f64(out, v);
    }
}

/// Cursor over a byte buffer that reports failures with their byte offset.
pub struct Reader<'a> {
    path: &'a Path,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(path: &'a Path, bytes: &'a [u8]) -> Self {
        Reader { path, bytes, pos: 0 }
    }

    pub fn fail(&self, msg: impl Into<String>) -> Error {
        Error::at_byte(self.path, self.pos, msg)
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(self.fail(format!("truncated while reading {what}")));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn usize(&mut self, what: &str) -> Result<usize> {
        let at = self.pos;
        let v = self.u64(what)?;
        usize::try_from(v).map_err(|_| Error::at_byte(self.path, at, format!("{what} {v} does not fit in memory")))
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn string(&mut self, what: &str) -> Result<String> {
        let n = self.u32(what)? as usize;
        let at = self.pos;
        let raw = self.take(n, what)?;
        String::from_utf8(raw.to_vec()).map_err(|_| Error::at_byte(self.path, at, format!("{what} is not UTF-8")))
    }

    fn magic(&mut self, magic: &[u8; 4]) -> Result<()> {
        let at = self.pos;
        let got = self.take(4, "magic")?;
        if got != magic {
            return Err(Error::at_byte(
                self.path,
                at,
                format!("expected magic {:?}, found {:?}", String::from_utf8_lossy(magic), String::from_utf8_lossy(got)),
            ));
        }
        Ok(())
    }

    pub fn tensor(&mut self) -> Result<Tensor> {
        self.magic(TENSOR_MAGIC)?;
        let rank = self.u32("rank")? as usize;
        let mut shape = Vec::with_capacity(rank.min(16));
        for _ in 0..rank {
            shape.push(self.usize("extent")?);
        }
        let at = self.pos;
        let n = shape
            .iter()
            .try_fold(1usize, |acc, &e| acc.checked_mul(e))
            .filter(|&n| n.checked_mul(8).is_some_and(|b| b <= self.bytes.len() - self.pos))
            .ok_or_else(|| self.fail(format!("payload for shape {shape:?} exceeds the file")))?;
        let data = (0..n).map(|_| self.f64("payload")).collect::<Result<Vec<_>>>()?;
        Tensor::from_vec(&shape, data).map_err(|e| Error::at_byte(self.path, at, e.to_string()))
    }

    pub fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(self.fail(format!("{} trailing bytes", self.bytes.len() - self.pos)));
        }
        Ok(())
    }
}

pub fn save_tensor(path: &Path, t: &Tensor) -> Result<()> {
    let mut out = Vec::new();
    encode_tensor(&mut out, t);
    fsutil::write_atomic(path, &out)
}

pub fn load_tensor(path: &Path) -> Result<Tensor> {
    let bytes = fsutil::read(path)?;
    let mut r = Reader::new(path, &bytes);
    let t = r.tensor()?;
    r.finish()?;
    Ok(t)
}

fn put_named(out: &mut Vec<u8>, items: &[(String, Tensor)]) {
    put_u32(out, items.len() as u32);
    for (name, t) in items {
        put_str(out, name);
        encode_tensor(out, t);
    }
}

fn put_tensors(out: &mut Vec<u8>, items: &[Tensor]) {
    put_u32(out, items.len() as u32);
    for t in items {
        encode_tensor(out, t);
    }
}

pub fn encode_checkpoint(ckpt: &Checkpoint) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    put_u32(&mut out, CHECKPOINT_VERSION);
    put_str(&mut out, &ckpt.spec.to_kv());
    put_named(&mut out, &ckpt.params);
    match &ckpt.state {
        None => out.push(0),
        Some(s) => {
            out.push(1);
            put_u64(&mut out, s.seed);
            put_u64(&mut out, s.epoch as u64);
            put_u64(&mut out, s.step);
            put_f64(&mut out, s.best_val_loss);
            put_u64(&mut out, s.best_epoch as u64);
            put_u64(&mut out, s.bad_epochs as u64);
            out.push(match s.stopped {
                None => 0,
                Some(StopReason::MaxEpochs) => 1,
                Some(StopReason::EarlyStop) => 2,
            });
            put_named(&mut out, &s.current);
            put_tensors(&mut out, &s.adam_m);
            put_tensors(&mut out, &s.adam_v);
            put_u32(&mut out, s.history.len() as u32);
            for e in &s.history {
                put_u64(&mut out, e.epoch as u64);
                put_f64(&mut out, e.train_loss);
                put_f64(&mut out, e.val_loss);
                put_u32(&mut out, e.head_val_losses.len() as u32);
                for &h in &e.head_val_losses {
                    put_f64(&mut out, h);
                }
                put_f64(&mut out, e.val_iou);
            }
        }
    }
    out
}

fn named(r: &mut Reader<'_>) -> Result<Vec<(String, Tensor)>> {
    let n = r.u32("tensor count")?;
    (0..n).map(|_| Ok((r.string("tensor name")?, r.tensor()?))).collect()
}

fn tensors(r: &mut Reader<'_>) -> Result<Vec<Tensor>> {
    let n = r.u32("tensor count")?;
    (0..n).map(|_| r.tensor()).collect()
}

pub fn decode_checkpoint(path: &Path, bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader::new(path, bytes);
    r.magic(CHECKPOINT_MAGIC)?;
    let version = r.u32("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(r.fail(format!("unsupported checkpoint version {version}")));
    }
    let at = r.pos;
    let kv = r.string("architecture block")?;
    let spec = ArchSpec::from_kv(&kv).map_err(|e| Error::at_byte(path, at, e.to_string()))?;
    let params = named(&mut r)?;
    let state = match r.u8("state flag")? {
        0 => None,
        1 => {
            let seed = r.u64("seed")?;
            let epoch = r.usize("epoch")?;
            let step = r.u64("step")?;
            let best_val_loss = r.f64("best val loss")?;
            let best_epoch = r.usize("best epoch")?;
            let bad_epochs = r.usize("bad epochs")?;
            let stopped = match r.u8("stop reason")? {
                0 => None,
                1 => Some(StopReason::MaxEpochs),
                2 => Some(StopReason::EarlyStop),
                v => return Err(r.fail(format!("invalid stop reason {v}"))),
            };
            let current = named(&mut r)?;
            let adam_m = tensors(&mut r)?;
            let adam_v = tensors(&mut r)?;
            let n = r.u32("history length")?;
            let mut history = Vec::new();
            for _ in 0..n {
                let epoch = r.usize("epoch")?;
                let train_loss = r.f64("train loss")?;
                let val_loss = r.f64("val loss")?;
                let heads = r.u32("head count")?;
                let head_val_losses = (0..heads).map(|_| r.f64("head loss")).collect::<Result<_>>()?;
                let val_iou = r.f64("val iou")?;
                history.push(EpochRecord {
                    epoch,
                    train_loss,
                    val_loss,
                    head_val_losses,
                    val_iou,
                });
            }
            Some(TrainState {
                seed,
                epoch,
                step,
                current,
                adam_m,
                adam_v,
                best_val_loss,
                best_epoch,
                bad_epochs,
                history,
                stopped,
            })
        }
        v => return Err(r.fail(format!("invalid state flag {v}"))),
    };
    r.finish()?;
    Ok(Checkpoint { spec, params, state })
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    fsutil::write_atomic(path, &encode_checkpoint(ckpt))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    decode_checkpoint(path, &fsutil::read(path)?)
}
