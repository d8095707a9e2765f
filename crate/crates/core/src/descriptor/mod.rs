//! Target-calibrated equi-population histogram descriptors.
//!
//! Calibration scans every pixel of every target image, per filter, and
//! places `B - 1` interior edges at the `k / B` ranks of the pooled response
//! values. A descriptor is the concatenation of one `B`-bin probability
//! histogram per filter, floored at [`EPSILON_FLOOR`] and renormalized.

mod cache;
mod quantile;

pub use cache::{load_table, parse_table, save_table, serialize_table, CACHE_VERSION};
pub use quantile::QuantileSummary;

use std::collections::HashMap;

use ndarray::Array2;
use rayon::prelude::*;

use crate::corpus::{Domain, LabeledImage, SampleId};
use crate::error::{Error, Result};
use crate::filterbank::{respond, FilterBank};

pub const DEFAULT_BINS: usize = 16;
pub const EPSILON_FLOOR: f64 = 1e-6;
/// Per-filter sample budget before the quantile summary starts compacting.
pub const DEFAULT_SUMMARY_CAPACITY: usize = 1 << 18;

#[derive(Debug, Clone, PartialEq)]
pub struct FilterCalibration {
    pub lower: f64,
    pub upper: f64,
    /// `B - 1` non-decreasing interior edges.
    pub edges: Vec<f64>,
    pub degenerate: bool,
}

impl FilterCalibration {
    pub fn from_summary(summary: &QuantileSummary, bins: usize) -> Self {
        let (lower, upper) = (summary.min(), summary.max());
        let degenerate = upper.partial_cmp(&lower) != Some(std::cmp::Ordering::Greater);
        let edges = if degenerate {
            vec![lower; bins - 1]
        } else {
            summary.edges(bins)
        };
        Self {
            lower,
            upper,
            edges,
            degenerate,
        }
    }

    /// Bin of `v`: the number of edges `<= v`. Values outside
    /// `[lower, upper]` land in the boundary bins.
    pub fn bin(&self, v: f64) -> usize {
        self.edges.partition_point(|e| *e <= v)
    }

    pub fn bins(&self) -> usize {
        self.edges.len() + 1
    }
}

/// Shape shared by every descriptor of a table.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub bins: usize,
    /// Kernel count `N_h` of each filter-bank layer, in bank order.
    pub layer_sizes: Vec<usize>,
}

impl Layout {
    pub fn filters(&self) -> usize {
        self.layer_sizes.iter().sum()
    }

    /// Length of a flattened descriptor, `D * B`.
    pub fn len(&self) -> usize {
        self.filters() * self.bins
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Weight `1 / N_h` of every filter, in bank order.
    pub fn filter_weights(&self) -> Vec<f64> {
        self.layer_sizes
            .iter()
            .flat_map(|&n| std::iter::repeat_n(1.0 / n as f64, n))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Calibration {
    pub layout: Layout,
    pub filters: Vec<FilterCalibration>,
    pub fingerprint: [u8; 32],
}

impl Calibration {
    pub fn bins(&self) -> usize {
        self.layout.bins
    }

    pub fn check_bank(&self, bank: &FilterBank) -> Result<()> {
        if bank.fingerprint() != self.fingerprint || bank.layer_sizes() != self.layout.layer_sizes {
            return Err(Error::FingerprintMismatch);
        }
        Ok(())
    }

    pub fn degenerate_filters(&self) -> Vec<usize> {
        self.filters
            .iter()
            .enumerate()
            .filter_map(|(i, f)| f.degenerate.then_some(i))
            .collect()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct CalibrateOptions {
    pub bins: usize,
    pub summary_capacity: usize,
}

impl Default for CalibrateOptions {
    fn default() -> Self {
        Self {
            bins: DEFAULT_BINS,
            summary_capacity: DEFAULT_SUMMARY_CAPACITY,
        }
    }
}

fn image_summaries(image: &LabeledImage, bank: &FilterBank, capacity: usize) -> Result<Vec<QuantileSummary>> {
    let maps = respond(image, bank)?;
    Ok(maps
        .into_iter()
        .map(|m| QuantileSummary::from_values(m.into_raw_vec_and_offset().0, capacity))
        .collect())
}

// Fixed-shape binary reduction over image ranges, so results do not depend
// on how rayon schedules the two halves.
fn reduce_range(images: &[LabeledImage], bank: &FilterBank, capacity: usize) -> Result<Vec<QuantileSummary>> {
    match images.len() {
        0 => unreachable!("empty range"),
        1 => image_summaries(&images[0], bank, capacity),
        n => {
            let (l, r) = images.split_at(n / 2);
            let (a, b) = rayon::join(|| reduce_range(l, bank, capacity), || reduce_range(r, bank, capacity));
            Ok(a?.into_iter().zip(b?).map(|(x, y)| x.merge(y)).collect())
        }
    }
}

/// Pools the responses of every target image and fixes per-filter bounds and
/// equi-population edges.
pub fn calibrate(target_images: &[LabeledImage], bank: &FilterBank, opts: &CalibrateOptions) -> Result<Calibration> {
    if target_images.is_empty() {
        return Err(Error::EmptyTargetSet);
    }
    if opts.bins < 2 {
        return Err(Error::InvalidParameter(format!("bin count must be >= 2, got {}", opts.bins)));
    }
    let summaries = reduce_range(target_images, bank, opts.summary_capacity)?;
    let filters: Vec<FilterCalibration> = summaries
        .iter()
        .map(|s| FilterCalibration::from_summary(s, opts.bins))
        .collect();
    for (i, f) in filters.iter().enumerate() {
        if f.degenerate {
            log::warn!("filter {i} is degenerate (constant response {}); using a one-hot histogram", f.lower);
        }
    }
    if summaries.iter().any(|s| !s.is_exact()) {
        log::info!(
            "calibration pool exceeded {} values per filter; edges are approximate",
            opts.summary_capacity
        );
    }
    Ok(Calibration {
        layout: Layout {
            bins: opts.bins,
            layer_sizes: bank.layer_sizes(),
        },
        filters,
        fingerprint: bank.fingerprint(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Descriptor {
    pub id: SampleId,
    pub label: usize,
    values: Vec<f64>,
    logs: Vec<f64>,
}

impl Descriptor {
    /// `values` is the flattened `D x B` histogram block.
    pub fn new(id: SampleId, label: usize, values: Vec<f64>) -> Self {
        let logs = values.iter().map(|v| v.ln()).collect();
        Self { id, label, values, logs }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Natural log of every entry, precomputed for distance evaluation.
    pub fn logs(&self) -> &[f64] {
        &self.logs
    }

    pub fn histogram(&self, filter: usize, bins: usize) -> &[f64] {
        &self.values[filter * bins..(filter + 1) * bins]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Normalized histogram of `map` against one filter's calibration.
pub fn histogram(map: &Array2<f64>, cal: &FilterCalibration) -> Vec<f64> {
    let bins = cal.bins();
    let mut counts = vec![0u64; bins];
    if cal.degenerate {
        counts[0] = 1;
    } else {
        for &v in map.iter() {
            counts[cal.bin(v)] += 1;
        }
    }
    let total: u64 = counts.iter().sum();
    let norm = 1.0 + bins as f64 * EPSILON_FLOOR;
    counts
        .iter()
        .map(|&c| (c as f64 / total as f64 + EPSILON_FLOOR) / norm)
        .collect()
}

pub fn describe(image: &LabeledImage, bank: &FilterBank, cal: &Calibration) -> Result<Descriptor> {
    cal.check_bank(bank)?;
    let maps = respond(image, bank)?;
    let mut values = Vec::with_capacity(cal.layout.len());
    for (map, fc) in maps.iter().zip(&cal.filters) {
        values.extend(histogram(map, fc));
    }
    Ok(Descriptor::new(image.id, image.label, values))
}

/// Descriptors of many images against one calibration, ordered by id.
#[derive(Debug, Clone, PartialEq)]
pub struct DescriptorTable {
    calibration: Calibration,
    descriptors: Vec<Descriptor>,
    index: HashMap<SampleId, usize>,
}

impl DescriptorTable {
    pub fn new(calibration: Calibration, mut descriptors: Vec<Descriptor>) -> Result<Self> {
        descriptors.sort_by_key(|d| d.id);
        let len = calibration.layout.len();
        let mut index = HashMap::with_capacity(descriptors.len());
        for (i, d) in descriptors.iter().enumerate() {
            if d.len() != len {
                return Err(Error::LayoutMismatch(format!(
                    "descriptor {} has {} entries, calibration expects {len}",
                    d.id,
                    d.len()
                )));
            }
            if index.insert(d.id, i).is_some() {
                return Err(Error::DuplicateSample(d.id));
            }
        }
        Ok(Self {
            calibration,
            descriptors,
            index,
        })
    }

    pub fn calibration(&self) -> &Calibration {
        &self.calibration
    }

    pub fn layout(&self) -> &Layout {
        &self.calibration.layout
    }

    pub fn descriptors(&self) -> &[Descriptor] {
        &self.descriptors
    }

    pub fn get(&self, id: SampleId) -> Option<&Descriptor> {
        self.index.get(&id).map(|&i| &self.descriptors[i])
    }

    pub fn len(&self) -> usize {
        self.descriptors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.descriptors.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = SampleId> + '_ {
        self.descriptors.iter().map(|d| d.id)
    }

    /// Sub-table holding only the samples of `domain`.
    pub fn domain(&self, domain: Domain) -> DescriptorTable {
        self.subset(|d| d.id.domain == domain)
    }

    pub fn subset(&self, keep: impl Fn(&Descriptor) -> bool) -> DescriptorTable {
        let descriptors: Vec<Descriptor> = self.descriptors.iter().filter(|d| keep(d)).cloned().collect();
        DescriptorTable::new(self.calibration.clone(), descriptors).expect("subset of a valid table")
    }

    /// Number of classes, taken as one past the largest label present.
    pub fn num_classes(&self) -> usize {
        self.descriptors.iter().map(|d| d.label + 1).max().unwrap_or(0)
    }
}

pub fn build_table(images: &[LabeledImage], bank: &FilterBank, cal: &Calibration) -> Result<DescriptorTable> {
    cal.check_bank(bank)?;
    let descriptors = images
        .par_iter()
        .map(|img| {
            describe(img, bank, cal).map_err(|e| Error::Describe {
                id: img.id,
                source: Box::new(e),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    DescriptorTable::new(cal.clone(), descriptors)
}
