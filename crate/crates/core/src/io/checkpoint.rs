//! `PMCK` checkpoint files.
//!
//! Little-endian throughout: magic, u32 version, network configuration,
//! normalisation statistics, rank-prefixed f64 parameter tensors, AdamW
//! hyperparameters, step and moment buffers, epoch counter and the per-epoch
//! loss history.

use std::path::Path;

use super::write_atomic;
use crate::autodiff::{AdamWConfig, OptimizerState, Padding, Tensor};
use crate::error::{Error, Result};
use crate::network::{NetworkCheckpoint, NormStats, UNet, UNetConfig};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"PMCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Default)]
struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: usize) {
        self.0.extend_from_slice(&(v as u32).to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64s(&mut self, v: &[f64]) {
        self.u64(v.len() as u64);
        v.iter().for_each(|&x| self.f64(x));
    }
    fn tensor(&mut self, t: &Tensor) {
        self.u32(t.shape().len());
        t.shape().iter().for_each(|&d| self.u32(d));
        t.data().iter().for_each(|&x| self.f64(x));
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| {
                Error::Decode(format!(
                    "truncated checkpoint: need {n} bytes at offset {}, file has {}",
                    self.pos,
                    self.bytes.len()
                ))
            })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn count(&mut self, n: u64, elem: usize) -> Result<usize> {
        let remaining = (self.bytes.len() - self.pos) as u64;
        if n.checked_mul(elem as u64).is_none_or(|b| b > remaining) {
            return Err(Error::Decode(format!(
                "checkpoint claims {n} elements at offset {}, only {remaining} bytes remain",
                self.pos
            )));
        }
        Ok(n as usize)
    }
    fn f64s(&mut self) -> Result<Vec<f64>> {
        let n = self.u64()?;
        let n = self.count(n, 8)?;
        (0..n).map(|_| self.f64()).collect()
    }
    fn tensor(&mut self) -> Result<Tensor> {
        let rank = self.u32()?;
        if rank > 8 {
            return Err(Error::Decode(format!("implausible tensor rank {rank}")));
        }
        let shape = (0..rank).map(|_| self.u32()).collect::<Result<Vec<_>>>()?;
        let len = shape.iter().try_fold(1u64, |a, &d| a.checked_mul(d as u64));
        let n = self.count(len.unwrap_or(u64::MAX), 8)?;
        let data = (0..n).map(|_| self.f64()).collect::<Result<Vec<_>>>()?;
        Tensor::new(shape, data).map_err(|e| Error::Decode(e.to_string()))
    }
}

pub fn encode_checkpoint(ckpt: &NetworkCheckpoint) -> Vec<u8> {
    let mut w = Writer::default();
    w.0.extend_from_slice(CHECKPOINT_MAGIC);
    w.u32(CHECKPOINT_VERSION as usize);

    let c = &ckpt.net.config;
    w.u32(c.in_channels);
    w.u32(c.out_channels);
    w.u32(c.base_width);
    w.u32(c.depth);
    w.u32(c.kernel_size);
    w.f64(c.leaky_slope);
    w.u8(match c.padding {
        Padding::Reflect => 0,
        Padding::Zero => 1,
    });

    w.f64s(&ckpt.stats.mean);
    w.f64s(&ckpt.stats.std);

    w.u32(ckpt.net.params.len());
    ckpt.net.params.iter().for_each(|t| w.tensor(t));

    let o = &ckpt.optimizer;
    for v in [
        o.config.lr,
        o.config.beta1,
        o.config.beta2,
        o.config.eps,
        o.config.weight_decay,
    ] {
        w.f64(v);
    }
    w.u64(o.step);
    w.u32(o.first_moment.len());
    for (m, v) in o.first_moment.iter().zip(&o.second_moment) {
        w.f64s(m);
        w.f64s(v);
    }

    w.u64(ckpt.epoch);
    w.f64s(&ckpt.loss_history);
    w.0
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<NetworkCheckpoint> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != CHECKPOINT_MAGIC {
        return Err(Error::Decode("bad checkpoint magic".into()));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION as usize {
        return Err(Error::Unsupported(format!("checkpoint version {version}")));
    }
    let config = UNetConfig {
        in_channels: r.u32()?,
        out_channels: r.u32()?,
        base_width: r.u32()?,
        depth: r.u32()?,
        kernel_size: r.u32()?,
        leaky_slope: r.f64()?,
        padding: match r.u8()? {
            0 => Padding::Reflect,
            1 => Padding::Zero,
            p => return Err(Error::Decode(format!("unknown padding code {p}"))),
        },
    };
    let stats = NormStats {
        mean: r.f64s()?,
        std: r.f64s()?,
    };
    let n = r.u32()?;
    let n = r.count(n as u64, 4)?;
    let params = (0..n).map(|_| r.tensor()).collect::<Result<Vec<_>>>()?;
    let config_opt = AdamWConfig {
        lr: r.f64()?,
        beta1: r.f64()?,
        beta2: r.f64()?,
        eps: r.f64()?,
        weight_decay: r.f64()?,
    };
    let step = r.u64()?;
    let m = r.u32()?;
    let m = r.count(m as u64, 16)?;
    let mut first_moment = Vec::with_capacity(m);
    let mut second_moment = Vec::with_capacity(m);
    for _ in 0..m {
        first_moment.push(r.f64s()?);
        second_moment.push(r.f64s()?);
    }
    let epoch = r.u64()?;
    let loss_history = r.f64s()?;
    if r.pos != bytes.len() {
        return Err(Error::Decode(format!(
            "{} trailing bytes after checkpoint",
            bytes.len() - r.pos
        )));
    }
    let ckpt = NetworkCheckpoint {
        net: UNet { config, params },
        optimizer: OptimizerState {
            config: config_opt,
            step,
            first_moment,
            second_moment,
        },
        stats,
        epoch,
        loss_history,
    };
    ckpt.validate()
        .map_err(|e| Error::Decode(format!("inconsistent checkpoint: {e}")))?;
    Ok(ckpt)
}

pub fn save_checkpoint(path: impl AsRef<Path>, ckpt: &NetworkCheckpoint) -> Result<()> {
    write_atomic(path, &encode_checkpoint(ckpt))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<NetworkCheckpoint> {
    decode_checkpoint(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ckpt() -> NetworkCheckpoint {
        let mut net = UNet::new(UNetConfig::for_polarizations(2).with_width(2), 9).unwrap();
        let last = net.params.len() - 2;
        net.params[last].data_mut().fill(-0.125);
        let stats = NormStats {
            mean: vec![0.1, -0.2, 0.3, 1e-300],
            std: vec![1.0, 2.0, 0.5, 3.0],
        };
        let mut c = NetworkCheckpoint::new(net, stats, AdamWConfig::default()).unwrap();
        c.optimizer.step = 7;
        c.optimizer.first_moment[0][0] = f64::MIN_POSITIVE;
        c.epoch = 3;
        c.loss_history = vec![3.0, 2.5, std::f64::consts::PI];
        c
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let c = ckpt();
        let bytes = encode_checkpoint(&c);
        assert_eq!(&bytes[..4], b"PMCK");
        assert_eq!(decode_checkpoint(&bytes).unwrap(), c);
        assert_eq!(encode_checkpoint(&decode_checkpoint(&bytes).unwrap()), bytes);
    }

    #[test]
    fn corrupt_inputs_rejected() {
        let bytes = encode_checkpoint(&ckpt());
        for cut in [0, 3, 10, bytes.len() / 2, bytes.len() - 1] {
            assert!(
                matches!(decode_checkpoint(&bytes[..cut]), Err(Error::Decode(_))),
                "cut {cut}"
            );
        }
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(decode_checkpoint(&extra).is_err());
        let mut v2 = bytes;
        v2[4] = 2;
        assert!(matches!(decode_checkpoint(&v2), Err(Error::Unsupported(_))));
    }
}
