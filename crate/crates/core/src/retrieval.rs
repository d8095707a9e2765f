//! Exact nearest-neighbor retrieval of source images under the layer-weighted
//! symmetric KL distance
//!
//! `d(a, b) = sum_h (1 / N_h) sum_{i in h} [KL(a_i || b_i) + KL(b_i || a_i)]`,
//!
//! evaluated per bin as `(p - q)(ln p - ln q)`, which is exactly symmetric and
//! never negative. Ranking is by `(distance, source id)`, so results do not
//! depend on thread count or partitioning.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};
use std::path::Path;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::codec;
use crate::corpus::SampleId;
use crate::descriptor::{Descriptor, DescriptorTable, Layout};
use crate::error::{Error, Result};

const CHUNK: usize = 256;

fn check_len(d: &Descriptor, layout: &Layout) -> Result<()> {
    if d.len() != layout.len() {
        return Err(Error::LayoutMismatch(format!(
            "descriptor {} has {} entries, layout expects {}",
            d.id,
            d.len(),
            layout.len()
        )));
    }
    Ok(())
}

pub fn distance(a: &Descriptor, b: &Descriptor, layout: &Layout) -> Result<f64> {
    check_len(a, layout)?;
    check_len(b, layout)?;
    Ok(weighted_distance(a, b, &layout.filter_weights(), layout.bins))
}

/// Distance with precomputed per-filter weights; lengths must already match.
pub fn weighted_distance(a: &Descriptor, b: &Descriptor, weights: &[f64], bins: usize) -> f64 {
    let (pa, la) = (a.values(), a.logs());
    let (pb, lb) = (b.values(), b.logs());
    let mut total = 0.0;
    for (f, w) in weights.iter().enumerate() {
        let r = f * bins..(f + 1) * bins;
        let mut s = 0.0;
        for (((p, q), lp), lq) in pa[r.clone()].iter().zip(&pb[r.clone()]).zip(&la[r.clone()]).zip(&lb[r]) {
            s += (p - q) * (lp - lq);
        }
        total += w * s;
    }
    total
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub id: SampleId,
    pub distance: f64,
}

impl Neighbor {
    fn rank_cmp(&self, other: &Self) -> Ordering {
        self.distance
            .total_cmp(&other.distance)
            .then_with(|| self.id.cmp(&other.id))
    }
}

// max-heap entry: the worst kept candidate sits on top
struct Worst(Neighbor);

impl PartialEq for Worst {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Worst {}
impl PartialOrd for Worst {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Worst {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.rank_cmp(&other.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NeighborSet {
    pub target: SampleId,
    /// Requested neighbor count; `neighbors.len() = min(k, corpus size)`.
    pub k: usize,
    pub neighbors: Vec<Neighbor>,
}

impl NeighborSet {
    pub fn ids(&self) -> impl Iterator<Item = SampleId> + '_ {
        self.neighbors.iter().map(|n| n.id)
    }
}

fn partial_top_k(chunk: &[Descriptor], target: &Descriptor, weights: &[f64], bins: usize, k: usize) -> Vec<Neighbor> {
    let mut heap = BinaryHeap::with_capacity(k + 1);
    for d in chunk {
        let n = Neighbor {
            id: d.id,
            distance: weighted_distance(target, d, weights, bins),
        };
        if heap.len() < k {
            heap.push(Worst(n));
        } else if n.rank_cmp(&heap.peek().expect("non-empty heap").0) == Ordering::Less {
            heap.pop();
            heap.push(Worst(n));
        }
    }
    heap.into_iter().map(|w| w.0).collect()
}

/// The `k` source descriptors closest to `target`, ascending by distance with
/// ties broken by ascending source id.
pub fn top_k(target: &Descriptor, source: &DescriptorTable, k: usize) -> Result<NeighborSet> {
    if k == 0 {
        return Err(Error::InvalidParameter("neighbor count must be >= 1".into()));
    }
    if source.is_empty() {
        return Err(Error::EmptySource);
    }
    let layout = source.layout();
    check_len(target, layout)?;
    let weights = layout.filter_weights();
    let keep = k.min(source.len());
    let mut all: Vec<Neighbor> = source
        .descriptors()
        .par_chunks(CHUNK)
        .flat_map_iter(|c| partial_top_k(c, target, &weights, layout.bins, keep))
        .collect();
    all.sort_unstable_by(Neighbor::rank_cmp);
    all.truncate(keep);
    Ok(NeighborSet {
        target: target.id,
        k,
        neighbors: all,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct CoverageStats {
    pub union_size: usize,
    /// Total neighbor-list entries over all targets.
    pub retrieved: usize,
    /// Fraction of retrieved entries that duplicate another target's pick.
    pub overlap_ratio: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub struct UnderCoverage {
    pub union_size: usize,
    pub min_union: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionResult {
    pub sets: Vec<NeighborSet>,
    pub union: BTreeSet<SampleId>,
    pub stats: CoverageStats,
    pub warning: Option<UnderCoverage>,
}

impl SelectionResult {
    pub fn from_sets(mut sets: Vec<NeighborSet>, min_union: usize) -> Self {
        sets.sort_by_key(|s| s.target);
        let union: BTreeSet<SampleId> = sets.iter().flat_map(|s| s.ids()).collect();
        let retrieved: usize = sets.iter().map(|s| s.neighbors.len()).sum();
        let stats = CoverageStats {
            union_size: union.len(),
            retrieved,
            overlap_ratio: if retrieved == 0 {
                0.0
            } else {
                1.0 - union.len() as f64 / retrieved as f64
            },
        };
        let warning = (union.len() < min_union).then_some(UnderCoverage {
            union_size: union.len(),
            min_union,
        });
        Self {
            sets,
            union,
            stats,
            warning,
        }
    }

    pub fn set(&self, target: SampleId) -> Option<&NeighborSet> {
        self.sets
            .binary_search_by_key(&target, |s| s.target)
            .ok()
            .map(|i| &self.sets[i])
    }
}

fn check_tables(targets: &DescriptorTable, source: &DescriptorTable) -> Result<()> {
    if targets.calibration() != source.calibration() {
        return Err(Error::LayoutMismatch(
            "target and source descriptors use different calibrations".into(),
        ));
    }
    Ok(())
}

/// Retrieves `counts[t]` neighbors for every target `t` and forms the union.
/// A union smaller than `min_union` is reported through `warning`.
pub fn select(
    targets: &DescriptorTable,
    source: &DescriptorTable,
    counts: &BTreeMap<SampleId, usize>,
    min_union: usize,
) -> Result<SelectionResult> {
    check_tables(targets, source)?;
    let sets = targets
        .descriptors()
        .par_iter()
        .map(|t| {
            let k = *counts.get(&t.id).ok_or(Error::MissingCount(t.id))?;
            top_k(t, source, k)
        })
        .collect::<Result<Vec<_>>>()?;
    let result = SelectionResult::from_sets(sets, min_union);
    if let Some(w) = result.warning {
        log::warn!(
            "selection union {} is below the minimum {}; consider raising k0",
            w.union_size,
            w.min_union
        );
    }
    Ok(result)
}

/// Baseline: each target gets `counts[t]` distinct source samples drawn
/// uniformly at random (seeded), listed by ascending distance.
pub fn random_selection(
    targets: &DescriptorTable,
    source: &DescriptorTable,
    counts: &BTreeMap<SampleId, usize>,
    min_union: usize,
    seed: u64,
) -> Result<SelectionResult> {
    check_tables(targets, source)?;
    if source.is_empty() {
        return Err(Error::EmptySource);
    }
    let layout = source.layout();
    let weights = layout.filter_weights();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sets = Vec::with_capacity(targets.len());
    for t in targets.descriptors() {
        let k = *counts.get(&t.id).ok_or(Error::MissingCount(t.id))?;
        let keep = k.min(source.len());
        let mut neighbors: Vec<Neighbor> = sample(&mut rng, source.len(), keep)
            .into_iter()
            .map(|i| {
                let d = &source.descriptors()[i];
                Neighbor {
                    id: d.id,
                    distance: weighted_distance(t, d, &weights, layout.bins),
                }
            })
            .collect();
        neighbors.sort_by(Neighbor::rank_cmp);
        sets.push(NeighborSet {
            target: t.id,
            k,
            neighbors,
        });
    }
    Ok(SelectionResult::from_sets(sets, min_union))
}

/// Neighbor-list text: one `target \t rank \t source \t distance` line per
/// entry, 1-based ranks, distances with 9 significant digits.
pub fn format_neighbors(sel: &SelectionResult) -> String {
    let mut out = String::from("# target\trank\tsource\tdistance\n");
    for s in &sel.sets {
        for (rank, n) in s.neighbors.iter().enumerate() {
            out.push_str(&format!("{}\t{}\t{}\t{:.8e}\n", s.target, rank + 1, n.id, n.distance));
        }
    }
    out
}

pub fn write_neighbors(sel: &SelectionResult, path: &Path) -> Result<()> {
    codec::write_atomic(path, format_neighbors(sel).as_bytes())
}

pub fn parse_neighbors(text: &str, origin: &Path, min_union: usize) -> Result<SelectionResult> {
    let mut sets: Vec<NeighborSet> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |msg: String| Error::Parse {
            path: origin.to_path_buf(),
            line: lineno + 1,
            msg,
        };
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 4 {
            return Err(err(format!("expected 4 fields, found {}", f.len())));
        }
        let target: SampleId = f[0].parse().map_err(err)?;
        let rank: usize = f[1].parse().map_err(|_| err(format!("bad rank `{}`", f[1])))?;
        let id: SampleId = f[2].parse().map_err(err)?;
        let distance: f64 = f[3].parse().map_err(|_| err(format!("bad distance `{}`", f[3])))?;
        match sets.last_mut() {
            Some(s) if s.target == target => {
                if rank != s.neighbors.len() + 1 {
                    return Err(err(format!("rank {rank} out of sequence for {target}")));
                }
                s.neighbors.push(Neighbor { id, distance });
                s.k += 1;
            }
            _ => {
                if rank != 1 {
                    return Err(err(format!("list for {target} must start at rank 1")));
                }
                if sets.iter().any(|s| s.target == target) {
                    return Err(err(format!("target {target} appears in two separate blocks")));
                }
                sets.push(NeighborSet {
                    target,
                    k: 1,
                    neighbors: vec![Neighbor { id, distance }],
                });
            }
        }
    }
    Ok(SelectionResult::from_sets(sets, min_union))
}

pub fn read_neighbors(path: &Path, min_union: usize) -> Result<SelectionResult> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_neighbors(&text, path, min_union)
}
