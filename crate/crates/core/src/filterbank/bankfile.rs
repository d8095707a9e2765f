//! Kernel-bank file: little-endian, `SJFB` + u32 version + u32 layer count,
//! then per layer a length-prefixed UTF-8 name, u32 kernel count, height,
//! width, channels, a u8 nonlinearity code and `f32` data in
//! (kernel, channel, row, col) order.

use std::path::Path;

use ndarray::Array2;

use super::{FilterBank, FilterLayer, Nonlinearity};
use crate::codec::{self, Reader, Writer};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"SJFB";
pub const BANK_VERSION: u32 = 1;

pub fn parse_kernel_bank(data: &[u8]) -> Result<FilterBank> {
    let mut r = Reader::new(data, "bank");
    let version = r.header(MAGIC)?;
    if version != BANK_VERSION {
        return Err(Error::VersionMismatch {
            what: "bank",
            expected: BANK_VERSION,
            found: version,
        });
    }
    let nlayers = r.u32()?;
    let mut layers = Vec::with_capacity(nlayers as usize);
    for _ in 0..nlayers {
        let name = r.str()?;
        let count = r.u32()? as usize;
        let h = r.u32()? as usize;
        let w = r.u32()? as usize;
        let ch = r.u32()? as usize;
        let nl = r.u8()?;
        let nonlinearity = Nonlinearity::from_code(nl)
            .ok_or_else(|| Error::InvalidParameter(format!("layer `{name}` has unknown nonlinearity code {nl}")))?;
        if count == 0 || h == 0 || w == 0 || ch == 0 {
            return Err(Error::DimensionMismatch(format!(
                "layer `{name}` declares {count} kernels of {h}x{w}x{ch}"
            )));
        }
        let plane = h * w;
        let needed = count
            .checked_mul(ch)
            .and_then(|n| n.checked_mul(plane))
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| Error::DimensionMismatch(format!("layer `{name}` is too large")))?;
        if needed > r.remaining() {
            return Err(Error::Truncated("bank"));
        }
        let mut kernels = Vec::with_capacity(count);
        for _ in 0..count {
            let mut acc = vec![0.0f64; plane];
            for _ in 0..ch {
                for a in acc.iter_mut() {
                    let v = r.f32()?;
                    if !v.is_finite() {
                        return Err(Error::NonFinite(format!("layer `{name}`")));
                    }
                    *a += v as f64;
                }
            }
            acc.iter_mut().for_each(|a| *a /= ch as f64);
            kernels.push(Array2::from_shape_vec((h, w), acc).expect("kernel shape"));
        }
        layers.push(FilterLayer::new(name, kernels, nonlinearity)?.with_source_channels(ch as u32));
    }
    r.finish()?;
    FilterBank::new(layers)
}

pub fn load_kernel_bank(path: &Path) -> Result<FilterBank> {
    parse_kernel_bank(&codec::read_file(path)?)
}

/// Serializes the (already channel-collapsed) bank with one channel per kernel.
pub fn serialize_kernel_bank(bank: &FilterBank) -> Vec<u8> {
    let mut w = Writer::new();
    w.bytes(MAGIC);
    w.u32(BANK_VERSION);
    w.u32(bank.layers().len() as u32);
    for l in bank.layers() {
        let (h, wd) = l.kernel_dim();
        w.str(l.name());
        w.u32(l.len() as u32);
        w.u32(h as u32);
        w.u32(wd as u32);
        w.u32(1);
        w.u8(l.nonlinearity().code());
        for k in l.kernels() {
            for v in k.iter() {
                w.f32(*v as f32);
            }
        }
    }
    w.into_inner()
}

pub fn save_kernel_bank(bank: &FilterBank, path: &Path) -> Result<()> {
    codec::write_atomic(path, &serialize_kernel_bank(bank))
}
