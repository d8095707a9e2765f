//! Descriptor cache file.
//!
//! Layout (little-endian): `SJFD`, u32 version, 32-byte bank fingerprint,
//! u32 bins, u32 layer count, u32 kernel count per layer; per filter f64
//! lower, f64 upper, u8 degenerate flag and `B - 1` f64 edges; u64 record
//! count; per record u8 domain, u32 index, u32 label and `D * B` f64
//! histogram entries. The record count and exact length are checked on load,
//! so a truncated file is always rejected.

use std::path::Path;

use super::{Calibration, Descriptor, DescriptorTable, FilterCalibration, Layout};
use crate::codec::{self, Reader, Writer};
use crate::corpus::{Domain, SampleId};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"SJFD";
pub const CACHE_VERSION: u32 = 1;

pub fn serialize_table(table: &DescriptorTable) -> Vec<u8> {
    let cal = table.calibration();
    let mut w = Writer::new();
    w.bytes(MAGIC);
    w.u32(CACHE_VERSION);
    w.bytes(&cal.fingerprint);
    w.u32(cal.layout.bins as u32);
    w.u32(cal.layout.layer_sizes.len() as u32);
    for &n in &cal.layout.layer_sizes {
        w.u32(n as u32);
    }
    for f in &cal.filters {
        w.f64(f.lower);
        w.f64(f.upper);
        w.u8(f.degenerate as u8);
        for &e in &f.edges {
            w.f64(e);
        }
    }
    w.u64(table.len() as u64);
    for d in table.descriptors() {
        w.u8(match d.id.domain {
            Domain::Source => 0,
            Domain::Target => 1,
        });
        w.u32(d.id.index);
        w.u32(d.label as u32);
        for &v in d.values() {
            w.f64(v);
        }
    }
    w.into_inner()
}

pub fn parse_table(data: &[u8]) -> Result<DescriptorTable> {
    let mut r = Reader::new(data, "descriptor cache");
    let version = r.header(MAGIC)?;
    if version != CACHE_VERSION {
        return Err(Error::VersionMismatch {
            what: "descriptor cache",
            expected: CACHE_VERSION,
            found: version,
        });
    }
    let mut fingerprint = [0u8; 32];
    fingerprint.copy_from_slice(r.take(32)?);
    let bins = r.u32()? as usize;
    if bins < 2 {
        return Err(Error::DimensionMismatch(format!("cache declares {bins} bins")));
    }
    let nlayers = r.u32()? as usize;
    let layer_sizes = (0..nlayers).map(|_| r.u32().map(|n| n as usize)).collect::<Result<Vec<_>>>()?;
    let layout = Layout { bins, layer_sizes };
    let d = layout.filters();
    if d == 0 {
        return Err(Error::DimensionMismatch("cache declares no filters".into()));
    }
    let mut filters = Vec::with_capacity(d);
    for _ in 0..d {
        let lower = r.f64()?;
        let upper = r.f64()?;
        let degenerate = r.u8()? != 0;
        let edges = (0..bins - 1).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        filters.push(FilterCalibration {
            lower,
            upper,
            edges,
            degenerate,
        });
    }
    let count = r.u64()? as usize;
    let record_bytes = 9 + 8 * layout.len();
    if count.checked_mul(record_bytes) != Some(r.remaining()) {
        return Err(Error::Truncated("descriptor cache"));
    }
    let mut descriptors = Vec::with_capacity(count);
    for _ in 0..count {
        let domain = match r.u8()? {
            0 => Domain::Source,
            1 => Domain::Target,
            other => return Err(Error::InvalidParameter(format!("bad domain code {other} in descriptor cache"))),
        };
        let index = r.u32()?;
        let label = r.u32()? as usize;
        let values = (0..layout.len()).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("descriptor cache".into()));
        }
        descriptors.push(Descriptor::new(SampleId { domain, index }, label, values));
    }
    r.finish()?;
    DescriptorTable::new(
        Calibration {
            layout,
            filters,
            fingerprint,
        },
        descriptors,
    )
}

pub fn save_table(table: &DescriptorTable, path: &Path) -> Result<()> {
    codec::write_atomic(path, &serialize_table(table))
}

pub fn load_table(path: &Path) -> Result<DescriptorTable> {
    parse_table(&codec::read_file(path)?)
}
