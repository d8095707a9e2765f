//! Stage wiring shared by the CLI and the end-to-end tests: the synthetic
//! texture demo and its ablations.
//!
//! Demo scenario: source families at orientations `j pi / 2T` for
//! `j < 2T`, target families at `pi / 4T + k pi / T` for `k < T`, so target
//! family `k` sits between source families `2k` and `2k + 1`. Source
//! families also spread widely in frequency while target families do not,
//! which makes most of the source corpus a poor match for the target task.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{load_domain, Domain, LoadOptions, Manifest, SampleId};
use crate::descriptor::{build_table, calibrate, save_table, CalibrateOptions, DescriptorTable};
use crate::error::{Error, Result};
use crate::filterbank::{build_gabor_bank, save_kernel_bank, load_kernel_bank, FilterBank, FilterLayer, GaborConfig, Nonlinearity};
use crate::hardloop::{run_loop, write_predictions, HardSampleConfig, LoopConfig, LoopReport, SelectionMode};
use crate::retrieval::{distance, random_selection, select, write_neighbors, SelectionResult};
use crate::batcher::write_schedule;
use crate::surrogate::{accuracy, predict, save_model, Head, Hyperparameters, SurrogateTrainer};
use crate::synthetic::{gen_synthetic, SyntheticSpec, TextureFamily};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DemoConfig {
    pub seed: u64,
    pub target_families: usize,
    pub source_per_family: usize,
    pub target_per_family: usize,
    pub test_per_family: usize,
    pub image_size: usize,
    pub noise: f64,
    pub frequency: f64,
    pub orientation_jitter: f64,
    pub source_frequency_jitter: f64,
    pub target_frequency_jitter: f64,
    pub gabor: GaborConfig,
    pub bins: usize,
    pub k0: usize,
    pub max_iterations: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub trainer: Hyperparameters,
}

impl Default for DemoConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            target_families: 4,
            source_per_family: 200,
            target_per_family: 20,
            test_per_family: 50,
            image_size: 40,
            noise: 0.9,
            frequency: 0.2,
            orientation_jitter: 0.1,
            source_frequency_jitter: 1.5,
            target_frequency_jitter: 0.3,
            gabor: GaborConfig {
                scales: 4,
                orientations: 6,
                kernel_size: 13,
                min_frequency: 0.1,
                max_frequency: 0.4,
            },
            bins: 16,
            k0: 10,
            max_iterations: 5,
            batch_size: 10,
            epochs: 10,
            trainer: Hyperparameters::default(),
        }
    }
}

impl DemoConfig {
    pub fn source_families(&self) -> usize {
        2 * self.target_families
    }

    pub fn source_specs(&self) -> SyntheticSpec {
        let n = self.source_families();
        SyntheticSpec {
            families: (0..n)
                .map(|j| TextureFamily {
                    orientation: j as f64 * PI / n as f64,
                    frequency: self.frequency,
                    orientation_jitter: self.orientation_jitter,
                    frequency_jitter: self.source_frequency_jitter,
                })
                .collect(),
            per_family: self.source_per_family,
            height: self.image_size,
            width: self.image_size,
            noise: self.noise,
            seed: self.seed,
            domain: Domain::Source,
            prefix: "source".into(),
        }
    }

    fn target_families(&self) -> Vec<TextureFamily> {
        let t = self.target_families;
        (0..t)
            .map(|k| TextureFamily {
                orientation: PI / (4 * t) as f64 + k as f64 * PI / t as f64,
                frequency: self.frequency,
                orientation_jitter: self.orientation_jitter,
                frequency_jitter: self.target_frequency_jitter,
            })
            .collect()
    }

    pub fn target_spec(&self) -> SyntheticSpec {
        SyntheticSpec {
            families: self.target_families(),
            per_family: self.target_per_family,
            prefix: "target".into(),
            domain: Domain::Target,
            ..self.source_specs()
        }
    }

    /// Held-out target images; a different seed stream than the training set.
    pub fn test_spec(&self) -> SyntheticSpec {
        SyntheticSpec {
            per_family: self.test_per_family,
            prefix: "test".into(),
            seed: self.seed ^ 0x7e57_7e57_7e57_7e57,
            ..self.target_spec()
        }
    }

    /// Source labels whose parameters neighbor target label `k`.
    pub fn relevant_source_labels(&self, k: usize) -> [usize; 2] {
        [2 * k, 2 * k + 1]
    }

    pub fn validate(&self) -> Result<()> {
        let mut p = Vec::new();
        if let Err(e) = self.gabor.validate() {
            p.push(format!("gabor: {e}"));
        }
        if self.target_families == 0 || self.source_per_family == 0 || self.target_per_family == 0 || self.test_per_family == 0 {
            p.push("family and per-family counts must be >= 1".into());
        }
        if self.image_size < self.gabor.kernel_size {
            p.push(format!(
                "image size {} is smaller than the kernel size {}",
                self.image_size, self.gabor.kernel_size
            ));
        }
        if self.bins < 2 {
            p.push("bins must be >= 2".into());
        }
        if self.k0 == 0 || self.max_iterations == 0 || self.batch_size == 0 || self.epochs == 0 {
            p.push("k0, max_iterations, batch_size and epochs must be >= 1".into());
        }
        if self.batch_size > self.target_families * self.target_per_family {
            p.push("batch_size exceeds the number of target training images".into());
        }
        if p.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(p))
        }
    }
}

/// Descriptor tables for one demo corpus.
#[derive(Debug, Clone)]
pub struct DemoTables {
    pub source: DescriptorTable,
    pub target: DescriptorTable,
    pub test: DescriptorTable,
}

/// Writes the demo corpus under `dir`: `train.tsv` (source + target
/// training images) and `test.tsv` (held-out target images).
pub fn generate_demo_corpus(cfg: &DemoConfig, dir: &Path) -> Result<(Manifest, Manifest)> {
    let mut train = gen_synthetic(&cfg.source_specs(), dir)?;
    train.extend(gen_synthetic(&cfg.target_spec(), dir)?);
    let train = Manifest::new(dir, train)?;
    train.write(&dir.join("train.tsv"))?;
    let test = Manifest::new(dir, gen_synthetic(&cfg.test_spec(), dir)?)?;
    test.write(&dir.join("test.tsv"))?;
    Ok((train, test))
}

/// Calibrates on the target training images and describes everything.
pub fn describe_demo_corpus(cfg: &DemoConfig, bank: &FilterBank, train: &Manifest, test: &Manifest) -> Result<DemoTables> {
    let opts = LoadOptions {
        min_size: bank.max_kernel_dim(),
        resize: None,
    };
    let targets = load_domain(train, Domain::Target, &opts)?;
    let cal = calibrate(
        &targets,
        bank,
        &CalibrateOptions {
            bins: cfg.bins,
            ..Default::default()
        },
    )?;
    let target = build_table(&targets, bank, &cal)?;
    drop(targets);
    let source = build_table(&load_domain(train, Domain::Source, &opts)?, bank, &cal)?;
    let test = build_table(&load_domain(test, Domain::Target, &opts)?, bank, &cal)?;
    Ok(DemoTables { source, target, test })
}

/// Mean descriptor distance over pairs within the same label and across
/// labels, using the first `per_label` samples of every label.
pub fn family_distance_means(table: &DescriptorTable, per_label: usize) -> Result<(f64, f64)> {
    let mut picked: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, d) in table.descriptors().iter().enumerate() {
        let v = picked.entry(d.label).or_default();
        if v.len() < per_label {
            v.push(i);
        }
    }
    let all: Vec<usize> = picked.values().flatten().copied().collect();
    let descs = table.descriptors();
    let (mut within, mut nw, mut cross, mut nc) = (0.0, 0usize, 0.0, 0usize);
    for (a, &i) in all.iter().enumerate() {
        for &j in &all[a + 1..] {
            let d = distance(&descs[i], &descs[j], table.layout())?;
            if descs[i].label == descs[j].label {
                within += d;
                nw += 1;
            } else {
                cross += d;
                nc += 1;
            }
        }
    }
    Ok((within / nw.max(1) as f64, cross / nc.max(1) as f64))
}

/// Fraction of retrieved source samples whose label is relevant to the
/// target's label.
pub fn precision(
    sel: &SelectionResult,
    targets: &DescriptorTable,
    source: &DescriptorTable,
    relevant: impl Fn(usize) -> Vec<usize>,
) -> f64 {
    let (mut hit, mut total) = (0usize, 0usize);
    for set in &sel.sets {
        let Some(t) = targets.get(set.target) else { continue };
        let rel = relevant(t.label);
        for n in &set.neighbors {
            if let Some(s) = source.get(n.id) {
                hit += rel.contains(&s.label) as usize;
                total += 1;
            }
        }
    }
    hit as f64 / total.max(1) as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// Nearest-neighbor selection with hard-sample growth.
    Selective,
    /// Same counts, uniformly drawn source samples.
    RandomSource,
    /// Every source sample for every target.
    AllSource,
    /// Source loss switched off.
    NoSource,
    /// Selection fixed at `k0`.
    NoIteration,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::Selective,
        Variant::RandomSource,
        Variant::AllSource,
        Variant::NoSource,
        Variant::NoIteration,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Selective => "selective",
            Variant::RandomSource => "random-source",
            Variant::AllSource => "all-source",
            Variant::NoSource => "no-source",
            Variant::NoIteration => "no-iteration",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub variant: String,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
    /// `train_accuracy - test_accuracy`.
    pub gap: f64,
    pub final_union: usize,
    pub failure: Option<String>,
}

pub struct VariantRun {
    pub summary: RunSummary,
    pub report: LoopReport,
}

fn loop_config(cfg: &DemoConfig, variant: Variant, source_len: usize) -> LoopConfig {
    let mut hard = HardSampleConfig::from_k0(cfg.k0);
    hard.max_iterations = cfg.max_iterations;
    let mut lc = LoopConfig {
        hard,
        min_union: 0,
        batch_size: cfg.batch_size,
        epochs: cfg.epochs,
        seed: cfg.seed,
        selection: SelectionMode::Nearest,
        grow: true,
    };
    match variant {
        Variant::Selective | Variant::NoSource => {}
        Variant::RandomSource => lc.selection = SelectionMode::Random,
        Variant::AllSource => {
            lc.hard.k0 = source_len;
            lc.grow = false;
        }
        Variant::NoIteration => lc.grow = false,
    }
    lc
}

/// Runs one loop variant. With `out`, per-iteration neighbor lists,
/// schedules and predictions are written to `out/iter_<m>/`.
pub fn run_variant(cfg: &DemoConfig, tables: &DemoTables, variant: Variant, out: Option<&Path>) -> Result<VariantRun> {
    let mut hp = cfg.trainer;
    hp.seed = cfg.seed;
    if variant == Variant::NoSource {
        hp.source_weight = 0.0;
    }
    let mut trainer = SurrogateTrainer { hp };
    let lc = loop_config(cfg, variant, tables.source.len());
    let mut last_union = 0;
    let outcome = run_loop(&tables.target, &tables.source, &mut trainer, &lc, |a| {
        last_union = a.selection.stats.union_size;
        if let Some(dir) = out {
            let d = dir.join(format!("iter_{}", a.iteration));
            std::fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
            write_neighbors(a.selection, &d.join("neighbors.tsv"))?;
            write_schedule(a.schedule, &d.join("schedule.tsv"))?;
            write_predictions(a.predictions, &d.join("predictions.tsv"))?;
        }
        Ok(())
    })?;
    let (train_accuracy, test_accuracy) = match &outcome.model {
        Some(m) => (
            accuracy(&predict(m, Head::Target, &tables.target)?),
            accuracy(&predict(m, Head::Target, &tables.test)?),
        ),
        None => (0.0, 0.0),
    };
    if let (Some(dir), Some(m)) = (out, &outcome.model) {
        save_model(m, &dir.join("model.sjfm"))?;
    }
    Ok(VariantRun {
        summary: RunSummary {
            variant: variant.as_str().into(),
            train_accuracy,
            test_accuracy,
            gap: train_accuracy - test_accuracy,
            final_union: last_union,
            failure: outcome.report.failure.clone(),
        },
        report: outcome.report,
    })
}

/// Initial (`k0`) selective and random selections.
pub fn initial_selections(cfg: &DemoConfig, tables: &DemoTables) -> Result<(SelectionResult, SelectionResult)> {
    let counts: BTreeMap<SampleId, usize> = tables.target.ids().map(|id| (id, cfg.k0)).collect();
    Ok((
        select(&tables.target, &tables.source, &counts, 0)?,
        random_selection(&tables.target, &tables.source, &counts, 0, cfg.seed)?,
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RetrievalCheck {
    pub within_family_distance: f64,
    pub cross_family_distance: f64,
    pub selective_precision: f64,
    pub random_precision: f64,
    /// Expected precision of a uniform draw.
    pub chance_precision: f64,
}

pub fn retrieval_check(cfg: &DemoConfig, tables: &DemoTables) -> Result<RetrievalCheck> {
    let (within, cross) = family_distance_means(&tables.source, 25)?;
    let (sel, rnd) = initial_selections(cfg, tables)?;
    let rel = |k: usize| cfg.relevant_source_labels(k).to_vec();
    Ok(RetrievalCheck {
        within_family_distance: within,
        cross_family_distance: cross,
        selective_precision: precision(&sel, &tables.target, &tables.source, rel),
        random_precision: precision(&rnd, &tables.target, &tables.source, rel),
        chance_precision: 2.0 / cfg.source_families() as f64,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DemoReport {
    pub seed: u64,
    pub retrieval: RetrievalCheck,
    pub runs: Vec<RunSummary>,
}

/// A seeded bank of random zero-mean, unit-norm kernels (second layer
/// rectified), written to and read back from a bank file; stands in for a
/// learned first-layer bank.
pub fn random_kernel_bank(seed: u64, size: usize, path: &Path) -> Result<FilterBank> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut layer = |n: usize| -> Vec<ndarray::Array2<f64>> {
        (0..n)
            .map(|_| {
                let mut k = ndarray::Array2::from_shape_fn((size, size), |_| rng.random_range(-1.0..1.0));
                let mean = k.mean().unwrap_or(0.0);
                k.mapv_inplace(|v| v - mean);
                let norm = k.iter().map(|v| v * v).sum::<f64>().sqrt();
                k.mapv_inplace(|v| v / norm);
                k
            })
            .collect()
    };
    let bank = FilterBank::new(vec![
        FilterLayer::new("random-1", layer(24), Nonlinearity::None)?,
        FilterLayer::new("random-2", layer(24), Nonlinearity::RectifyAtZero)?,
    ])?;
    save_kernel_bank(&bank, path)?;
    load_kernel_bank(path)
}

/// Full demo: corpus -> bank -> calibrate -> describe -> 5-iteration loop,
/// with every artifact written under `out`. `ablate` adds the comparison
/// runs (and one run on a loaded kernel bank) to `summary.json`.
pub fn run_demo(cfg: &DemoConfig, out: &Path, ablate: bool) -> Result<DemoReport> {
    cfg.validate()?;
    let corpus_dir = out.join("corpus");
    std::fs::create_dir_all(&corpus_dir).map_err(|e| Error::io(&corpus_dir, e))?;
    log::info!("generating synthetic corpus in {}", corpus_dir.display());
    let (train, test) = generate_demo_corpus(cfg, &corpus_dir)?;
    let bank = build_gabor_bank(&cfg.gabor)?;
    save_kernel_bank(&bank, &out.join("bank.sjfb"))?;
    log::info!("describing {} images with {} filters", train.records.len() + test.records.len(), bank.len());
    let tables = describe_demo_corpus(cfg, &bank, &train, &test)?;
    let mut all = tables.source.descriptors().to_vec();
    all.extend_from_slice(tables.target.descriptors());
    save_table(
        &DescriptorTable::new(tables.source.calibration().clone(), all)?,
        &out.join("descriptors.sjfd"),
    )?;
    save_table(&tables.test, &out.join("test.sjfd"))?;

    let retrieval = retrieval_check(cfg, &tables)?;
    log::info!(
        "family distance within {:.4} / across {:.4}; precision selective {:.3} random {:.3}",
        retrieval.within_family_distance,
        retrieval.cross_family_distance,
        retrieval.selective_precision,
        retrieval.random_precision
    );

    let main = run_variant(cfg, &tables, Variant::Selective, Some(&out.join("iterations")))?;
    crate::codec::write_atomic(&out.join("report.jsonl"), main.report.to_json_lines().as_bytes())?;
    let mut runs = vec![main.summary];
    if ablate {
        for v in &Variant::ALL[1..] {
            log::info!("ablation: {}", v.as_str());
            runs.push(run_variant(cfg, &tables, *v, None)?.summary);
        }
        log::info!("ablation: loaded kernel bank");
        let loaded = random_kernel_bank(cfg.seed, 5, &out.join("loaded_bank.sjfb"))?;
        let lt = describe_demo_corpus(cfg, &loaded, &train, &test)?;
        let mut r = run_variant(cfg, &lt, Variant::Selective, None)?.summary;
        r.variant = "loaded-bank".into();
        runs.push(r);
    }
    for r in &runs {
        log::info!(
            "{:>14}: train {:.3} test {:.3} gap {:+.3} union {}",
            r.variant,
            r.train_accuracy,
            r.test_accuracy,
            r.gap,
            r.final_union
        );
    }
    let report = DemoReport {
        seed: cfg.seed,
        retrieval,
        runs,
    };
    let json = serde_json::to_string_pretty(&report).expect("serializable") + "\n";
    crate::codec::write_atomic(&out.join("summary.json"), json.as_bytes())?;
    Ok(report)
}

/// Paths written by `run_demo`, relative to its output directory.
pub fn demo_artifacts(cfg: &DemoConfig) -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> = ["report.jsonl", "summary.json", "descriptors.sjfd", "test.sjfd", "bank.sjfb", "corpus/train.tsv", "corpus/test.tsv"]
        .iter()
        .map(PathBuf::from)
        .collect();
    for m in 0..cfg.max_iterations {
        for f in ["neighbors.tsv", "schedule.tsv", "predictions.tsv"] {
            v.push(PathBuf::from(format!("iterations/iter_{m}/{f}")));
        }
    }
    v.push(PathBuf::from("iterations/model.sjfm"));
    v
}
