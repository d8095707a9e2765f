//! Seeded mini-batch schedules pairing target samples with retrieved source
//! neighbors.
//!
//! Each epoch is a permutation of the target ids cut into groups of `b`
//! (the remainder is dropped); every target entry is paired with a neighbor
//! drawn uniformly from its neighbor set. Pairings are redrawn every epoch.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::codec;
use crate::corpus::{Domain, SampleId};
use crate::error::{Error, Result};
use crate::retrieval::SelectionResult;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BatchEntry {
    pub target: SampleId,
    pub source: SampleId,
}

/// `b` pairs, i.e. `b` target and `b` source samples.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MiniBatch {
    pub entries: Vec<BatchEntry>,
}

impl MiniBatch {
    pub fn targets(&self) -> impl Iterator<Item = SampleId> + '_ {
        self.entries.iter().map(|e| e.target)
    }

    pub fn sources(&self) -> impl Iterator<Item = SampleId> + '_ {
        self.entries.iter().map(|e| e.source)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BatchSchedule {
    pub batches: Vec<MiniBatch>,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl BatchSchedule {
    pub fn len(&self) -> usize {
        self.batches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.batches.is_empty()
    }

    pub fn entries(&self) -> impl Iterator<Item = &BatchEntry> {
        self.batches.iter().flat_map(|b| b.entries.iter())
    }
}

pub fn build_schedule(selection: &SelectionResult, batch_size: usize, epochs: usize, seed: u64) -> Result<BatchSchedule> {
    if batch_size == 0 {
        return Err(Error::InvalidParameter("batch size must be >= 1".into()));
    }
    if let Some(s) = selection.sets.iter().find(|s| s.neighbors.is_empty()) {
        return Err(Error::EmptyNeighborSet(s.target));
    }
    if selection.sets.len() < batch_size {
        return Err(Error::InvalidParameter(format!(
            "batch size {batch_size} exceeds the {} scheduled targets",
            selection.sets.len()
        )));
    }
    // sets are sorted by target id, so the permutation base is canonical
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..selection.sets.len()).collect();
    let mut batches = Vec::with_capacity(epochs * (order.len() / batch_size));
    for _ in 0..epochs {
        order.sort_unstable();
        order.shuffle(&mut rng);
        for group in order.chunks_exact(batch_size) {
            let entries = group
                .iter()
                .map(|&i| {
                    let set = &selection.sets[i];
                    let pick = rng.random_range(0..set.neighbors.len());
                    BatchEntry {
                        target: set.target,
                        source: set.neighbors[pick].id,
                    }
                })
                .collect();
            batches.push(MiniBatch { entries });
        }
    }
    Ok(BatchSchedule {
        batches,
        batch_size,
        epochs,
        seed,
    })
}

/// Schedule text: a `#` header with the parameters, then per batch the `b`
/// target lines `idx \t target \t t:i \t s:j` followed by the `b` source
/// lines `idx \t source \t s:j \t -`.
pub fn format_schedule(s: &BatchSchedule) -> String {
    let mut out = format!(
        "# batch_size={} epochs={} seed={}\n# batch\tdomain\tsample\tpaired\n",
        s.batch_size, s.epochs, s.seed
    );
    for (i, b) in s.batches.iter().enumerate() {
        for e in &b.entries {
            out.push_str(&format!("{i}\ttarget\t{}\t{}\n", e.target, e.source));
        }
        for e in &b.entries {
            out.push_str(&format!("{i}\tsource\t{}\t-\n", e.source));
        }
    }
    out
}

pub fn write_schedule(s: &BatchSchedule, path: &Path) -> Result<()> {
    codec::write_atomic(path, format_schedule(s).as_bytes())
}

fn header_value(line: &str, key: &str) -> Option<u64> {
    line.split_whitespace()
        .find_map(|kv| kv.strip_prefix(key)?.strip_prefix('=')?.parse().ok())
}

pub fn parse_schedule(text: &str, origin: &Path) -> Result<BatchSchedule> {
    let (mut batch_size, mut epochs, mut seed) = (None, None, None);
    let mut batches: Vec<(Vec<BatchEntry>, Vec<SampleId>)> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let err = |msg: String| Error::Parse {
            path: origin.to_path_buf(),
            line: lineno + 1,
            msg,
        };
        if let Some(h) = line.strip_prefix('#') {
            batch_size = batch_size.or(header_value(h, "batch_size"));
            epochs = epochs.or(header_value(h, "epochs"));
            seed = seed.or(header_value(h, "seed"));
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 4 {
            return Err(err(format!("expected 4 fields, found {}", f.len())));
        }
        let idx: usize = f[0].parse().map_err(|_| err(format!("bad batch index `{}`", f[0])))?;
        if idx == batches.len() {
            batches.push((Vec::new(), Vec::new()));
        } else if idx + 1 != batches.len() {
            return Err(err(format!("batch index {idx} out of sequence")));
        }
        let (pairs, sources) = batches.last_mut().expect("current batch");
        let domain: Domain = f[1].parse().map_err(err)?;
        let id: SampleId = f[2].parse().map_err(err)?;
        if id.domain != domain {
            return Err(err(format!("sample {id} listed under {domain}")));
        }
        match domain {
            Domain::Target => {
                if !sources.is_empty() {
                    return Err(err("target line after source lines".into()));
                }
                let source: SampleId = f[3].parse().map_err(err)?;
                pairs.push(BatchEntry { target: id, source });
            }
            Domain::Source => {
                if f[3] != "-" {
                    return Err(err("source line must have `-` as paired id".into()));
                }
                let k = sources.len();
                if pairs.get(k).map(|p| p.source) != Some(id) {
                    return Err(err(format!("source {id} does not match its target pairing")));
                }
                sources.push(id);
            }
        }
    }
    let mut out = Vec::with_capacity(batches.len());
    for (i, (pairs, sources)) in batches.into_iter().enumerate() {
        if pairs.len() != sources.len() {
            return Err(Error::Parse {
                path: origin.to_path_buf(),
                line: 0,
                msg: format!("batch {i} is not half target, half source"),
            });
        }
        out.push(MiniBatch { entries: pairs });
    }
    let inferred = out.first().map_or(0, |b| b.entries.len());
    Ok(BatchSchedule {
        batch_size: batch_size.map_or(inferred, |v| v as usize),
        epochs: epochs.unwrap_or(0) as usize,
        seed: seed.unwrap_or(0),
        batches: out,
    })
}

pub fn read_schedule(path: &Path) -> Result<BatchSchedule> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_schedule(&text, path)
}
