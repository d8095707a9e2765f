//! Acceptance suite. Each criterion prints one PASS/FAIL line; the process
//! exits non-zero if any criterion fails or exceeds its time budget.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use sievebank::batcher::BatchSchedule;
use sievebank::corpus::{LabeledImage, SampleId};
use sievebank::descriptor::{
    calibrate, describe, CalibrateOptions, Calibration, Descriptor, DescriptorTable, FilterCalibration, Layout,
};
use sievebank::filterbank::{build_gabor_bank, respond, FilterBank, FilterLayer, GaborConfig, Nonlinearity};
use sievebank::hardloop::{run_loop, HardSampleConfig, LoopConfig, PredictionRecord, SelectionMode};
use sievebank::pipeline::{describe_demo_corpus, generate_demo_corpus, retrieval_check, run_variant, DemoConfig, Variant};
use sievebank::retrieval::{distance, top_k};
use sievebank::surrogate::{Example, Hyperparameters, Sgd, SurrogateModel, TrainMetrics, Trainer};

type Outcome = Result<String, String>;
type Criterion = (usize, &'static str, u64, fn() -> Outcome);

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn run_criterion(n: usize, name: &str, budget: Duration, f: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let result = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        let msg = p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panic".into());
        Err(format!("panicked: {msg}"))
    });
    let took = start.elapsed();
    let (ok, detail) = match result {
        Ok(d) if took <= budget => (true, d),
        Ok(d) => (false, format!("{d}; over time budget {budget:?}")),
        Err(e) => (false, e),
    };
    println!(
        "criterion {n} [{}] {name} ({:.2}s / {:?}): {detail}",
        if ok { "PASS" } else { "FAIL" },
        took.as_secs_f64(),
        budget
    );
    ok
}

// ---------------------------------------------------------------- 1

fn gabor_structure() -> Outcome {
    let bank = build_gabor_bank(&GaborConfig::default()).map_err(|e| e.to_string())?;
    ensure!(bank.len() == 48, "bank has {} filters", bank.len());
    ensure!(bank.layer_sizes() == vec![24, 24], "layer sizes {:?}", bank.layer_sizes());
    let (mut worst_mean, mut worst_norm) = (0.0f64, 0.0f64);
    for (k, _) in bank.filters() {
        worst_mean = worst_mean.max((k.sum() / k.len() as f64).abs());
        worst_norm = worst_norm.max((k.iter().map(|v| v * v).sum::<f64>().sqrt() - 1.0).abs());
    }
    ensure!(worst_mean < 1e-9, "kernel mean {worst_mean:e}");
    ensure!(worst_norm < 1e-9, "kernel norm off by {worst_norm:e}");
    Ok(format!("48 filters [24, 24], max |mean| {worst_mean:.1e}, max |norm-1| {worst_norm:.1e}"))
}

// ---------------------------------------------------------------- 2

fn convolution_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    for case in 0..50 {
        let (kh, kw) = (rng.random_range(1..10), rng.random_range(1..10));
        let (h, w) = (kh + rng.random_range(0..30), kw + rng.random_range(0..30));
        let img = Array2::from_shape_fn((h, w), |_| rng.random_range(-1.0..1.0));
        let k = Array2::from_shape_fn((kh, kw), |_| rng.random_range(-1.0..1.0));
        let bank = FilterBank::new(vec![FilterLayer::new("k", vec![k.clone()], Nonlinearity::None).unwrap()]).unwrap();
        let image = LabeledImage {
            id: SampleId::target(case),
            pixels: img.clone(),
            label: 0,
        };
        let got = respond(&image, &bank).map_err(|e| e.to_string())?.remove(0);
        ensure!(got.dim() == (h - kh + 1, w - kw + 1), "case {case}: shape {:?}", got.dim());
        for r in 0..h - kh + 1 {
            for c in 0..w - kw + 1 {
                let mut s = 0.0;
                for i in 0..kh {
                    for j in 0..kw {
                        s += img[[r + i, c + j]] * k[[i, j]];
                    }
                }
                worst = worst.max((got[[r, c]] - s).abs());
            }
        }
    }
    ensure!(worst < 1e-12, "max abs error {worst:e}");
    Ok(format!("50 random pairs, max abs error {worst:.1e}"))
}

// ---------------------------------------------------------------- 3

fn identity_bank() -> FilterBank {
    FilterBank::new(vec![FilterLayer::new("id", vec![Array2::from_elem((1, 1), 1.0)], Nonlinearity::None).unwrap()]).unwrap()
}

fn pool_image(values: Vec<f64>) -> LabeledImage {
    LabeledImage {
        id: SampleId::target(0),
        pixels: Array2::from_shape_vec((100, values.len() / 100), values).unwrap(),
        label: 0,
    }
}

fn bin_counts(fc: &FilterCalibration, values: &[f64]) -> Vec<usize> {
    let mut counts = vec![0usize; fc.bins()];
    for &v in values {
        counts[fc.bin(v)] += 1;
    }
    counts
}

fn equi_population() -> Outcome {
    const N: usize = 100_000;
    const B: usize = 16;
    let bank = identity_bank();
    let opts = CalibrateOptions {
        bins: B,
        ..Default::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(3);

    // distinct values, shuffled
    let mut values: Vec<f64> = (0..N).map(|i| i as f64 * 1e-3 + rng.random_range(0.0..1e-4)).collect();
    values.shuffle(&mut rng);
    let img = pool_image(values.clone());
    let cal = calibrate(std::slice::from_ref(&img), &bank, &opts).map_err(|e| e.to_string())?;
    let counts = bin_counts(&cal.filters[0], &values);
    ensure!(counts.iter().all(|&c| c * B == N), "distinct pool counts {counts:?}");
    let d = describe(&img, &bank, &cal).map_err(|e| e.to_string())?;
    let worst = d.values().iter().map(|v| (v - 1.0 / B as f64).abs()).fold(0.0, f64::max);
    ensure!(worst < 1e-12, "descriptor mass deviates from 1/16 by {worst:e}");

    // injected ties: 4 values repeated 3,000 times each
    let mut tied: Vec<f64> = (0..N - 12_000).map(|_| rng.random_range(0.0..100.0)).collect();
    for t in [12.5, 40.0, 40.000001, 77.7] {
        tied.extend(std::iter::repeat_n(t, 3_000));
    }
    tied.shuffle(&mut rng);
    let img = pool_image(tied.clone());
    let cal = calibrate(std::slice::from_ref(&img), &bank, &opts).map_err(|e| e.to_string())?;
    let counts = bin_counts(&cal.filters[0], &tied);
    let bound = 3_000.0 / N as f64 + 1.0 / N as f64;
    let worst_tie = counts
        .iter()
        .map(|&c| (c as f64 / N as f64 - 1.0 / B as f64).abs())
        .fold(0.0, f64::max);
    ensure!(worst_tie <= bound, "tied pool deviation {worst_tie} > bound {bound}; counts {counts:?}");
    Ok(format!(
        "distinct: every bin 6250/100000; tied: max deviation {worst_tie:.4} <= {bound:.4}"
    ))
}

// ---------------------------------------------------------------- 4

fn random_layout_table(rng: &mut ChaCha8Rng, layer_sizes: Vec<usize>, bins: usize, n: usize, domain_source: bool) -> DescriptorTable {
    let d: usize = layer_sizes.iter().sum();
    let cal = Calibration {
        layout: Layout { bins, layer_sizes },
        filters: vec![
            FilterCalibration {
                lower: 0.0,
                upper: 1.0,
                edges: (1..bins).map(|i| i as f64 / bins as f64).collect(),
                degenerate: false,
            };
            d
        ],
        fingerprint: [0; 32],
    };
    let descs = (0..n as u32)
        .map(|i| {
            let mut v = Vec::with_capacity(d * bins);
            for _ in 0..d {
                let raw: Vec<f64> = (0..bins).map(|_| rng.random_range(1e-6..1.0f64).powi(3)).collect();
                let s: f64 = raw.iter().sum();
                v.extend(raw.iter().map(|x| x / s));
            }
            let id = if domain_source { SampleId::source(i) } else { SampleId::target(i) };
            Descriptor::new(id, 0, v)
        })
        .collect();
    DescriptorTable::new(cal, descs).unwrap()
}

/// Independent evaluation: sum over layers of (1/N_h) * sum over the layer's
/// filters of KL(p||q) + KL(q||p).
fn scripted_distance(a: &[f64], b: &[f64], layer_sizes: &[usize], bins: usize) -> f64 {
    let mut total = 0.0;
    let mut f = 0;
    for &n in layer_sizes {
        let mut layer = 0.0;
        for _ in 0..n {
            let p = &a[f * bins..(f + 1) * bins];
            let q = &b[f * bins..(f + 1) * bins];
            let kl_pq: f64 = p.iter().zip(q).map(|(x, y)| x * (x / y).ln()).sum();
            let kl_qp: f64 = q.iter().zip(p).map(|(x, y)| x * (x / y).ln()).sum();
            layer += kl_pq + kl_qp;
            f += 1;
        }
        total += layer / n as f64;
    }
    total
}

fn distance_properties() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let sizes = vec![3, 5];
    let table = random_layout_table(&mut rng, sizes.clone(), 6, 400, true);
    let layout = table.layout().clone();
    let descs = table.descriptors();
    let mut worst = 0.0f64;
    for i in 0..200 {
        let (a, b) = (&descs[2 * i], &descs[2 * i + 1]);
        let ab = distance(a, b, &layout).map_err(|e| e.to_string())?;
        let ba = distance(b, a, &layout).map_err(|e| e.to_string())?;
        ensure!(ab == ba, "pair {i}: asymmetric {ab} vs {ba}");
        ensure!(ab >= 0.0, "pair {i}: negative distance {ab}");
        ensure!(distance(a, a, &layout).unwrap() == 0.0, "pair {i}: d(a,a) != 0");
        let oracle = scripted_distance(a.values(), b.values(), &sizes, 6);
        worst = worst.max((ab - oracle).abs());
    }
    ensure!(worst < 1e-9, "max deviation from scripted formula {worst:e}");
    Ok(format!("200 pairs: symmetric, d(a,a)=0, >= 0, max oracle deviation {worst:.1e}"))
}

// ---------------------------------------------------------------- 5

fn retrieval_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let source = random_layout_table(&mut rng, vec![4, 4], 8, 1000, true);
    let targets = random_layout_table(&mut rng, vec![4, 4], 8, 20, false);
    let layout = source.layout().clone();
    let mut checked = 0;
    for threads in [1, 4] {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        for t in targets.descriptors() {
            let mut brute: Vec<(f64, SampleId)> = source
                .descriptors()
                .iter()
                .map(|s| (distance(t, s, &layout).unwrap(), s.id))
                .collect();
            brute.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            for k in [1, 10, 100] {
                let got = pool.install(|| top_k(t, &source, k)).map_err(|e| e.to_string())?;
                let ids: Vec<SampleId> = got.ids().collect();
                let want: Vec<SampleId> = brute[..k].iter().map(|x| x.1).collect();
                ensure!(ids == want, "threads {threads}, target {}, k {k}: order differs", t.id);
                checked += 1;
            }
        }
    }
    Ok(format!("{checked} (target, K, threads) cases equal the full sort"))
}

// ---------------------------------------------------------------- 6

const WRONG: [f64; 2] = [0.3, 0.7]; // label 0 predicted as 1
const UNCERTAIN: [f64; 2] = [0.8, 0.2]; // correct, H = 0.5004
const CONFIDENT: [f64; 2] = [0.99, 0.01]; // correct, H = 0.0560

/// `TRACE[m][i]`: prediction for target `i` after iteration `m`.
const TRACE: [[[f64; 2]; 3]; 5] = [
    [WRONG, CONFIDENT, UNCERTAIN],
    [UNCERTAIN, CONFIDENT, UNCERTAIN],
    [CONFIDENT, CONFIDENT, WRONG],
    [WRONG, CONFIDENT, CONFIDENT],
    [UNCERTAIN, CONFIDENT, CONFIDENT],
];

/// Hand-evaluated counts `K^m` for m = 0..=5 with K0 = 100, sigma0 = 400,
/// sigma1 = 200.
const K_TABLE: [[usize; 3]; 6] = [
    [100, 100, 100],
    [500, 100, 300],
    [700, 100, 500],
    [700, 100, 900],
    [1100, 100, 900],
    [1300, 100, 900],
];

struct ScriptedTrainer {
    invocations: usize,
}

impl Trainer for ScriptedTrainer {
    type Model = usize;

    fn train(&mut self, _: &BatchSchedule, _: &DescriptorTable, _: &DescriptorTable, warm: Option<&usize>) -> sievebank::Result<(usize, TrainMetrics)> {
        self.invocations += 1;
        Ok((warm.map_or(0, |m| m + 1), TrainMetrics::default()))
    }

    fn predict(&self, model: &usize, targets: &DescriptorTable) -> sievebank::Result<Vec<PredictionRecord>> {
        Ok(targets
            .ids()
            .map(|id| PredictionRecord {
                target: id,
                probabilities: TRACE[*model][id.index as usize].to_vec(),
                true_label: 0,
                iteration: *model,
            })
            .collect())
    }
}

fn hard_sample_trace() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let source = random_layout_table(&mut rng, vec![1], 2, 1500, true);
    let targets = random_layout_table(&mut rng, vec![1], 2, 3, false);
    let cfg = LoopConfig {
        hard: HardSampleConfig::from_k0(100),
        min_union: 0,
        batch_size: 1,
        epochs: 1,
        seed: 0,
        selection: SelectionMode::Nearest,
        grow: true,
    };
    ensure!(
        (cfg.hard.sigma0, cfg.hard.sigma1, cfg.hard.delta, cfg.hard.max_iterations) == (400, 200, 0.1, 5),
        "defaults {:?}",
        cfg.hard
    );
    let mut trainer = ScriptedTrainer { invocations: 0 };
    let mut used: Vec<[usize; 3]> = Vec::new();
    let out = run_loop(&targets, &source, &mut trainer, &cfg, |a| {
        let mut row = [0; 3];
        for s in &a.selection.sets {
            row[s.target.index as usize] = s.neighbors.len();
        }
        used.push(row);
        Ok(())
    })
    .map_err(|e| e.to_string())?;
    ensure!(trainer.invocations == 5, "{} trainer invocations", trainer.invocations);
    ensure!(out.report.trainer_invocations == 5, "report counts {}", out.report.trainer_invocations);
    for (m, row) in used.iter().enumerate() {
        ensure!(*row == K_TABLE[m], "iteration {m}: retrieved {row:?}, expected {:?}", K_TABLE[m]);
    }
    let fin: Vec<usize> = out.state.counts.values().copied().collect();
    ensure!(fin == K_TABLE[5], "final counts {fin:?}");
    let deltas: Vec<usize> = (0..5).map(|m| K_TABLE[m + 1][0] - K_TABLE[m][0]).collect();
    ensure!(deltas == [400, 200, 0, 400, 200], "target 0 increments {deltas:?}");
    Ok("K table matches for 3 targets x 5 iterations; +400/+200/+0; 5 trainer calls".into())
}

// ---------------------------------------------------------------- 7

fn rand_vec(rng: &mut ChaCha8Rng, n: usize, a: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-a..a)).collect()
}

fn gradient_check() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst = 0.0f64;
    for config in 0..10 {
        let input = rng.random_range(3..9);
        let f = rng.random_range(2..6);
        let ct = rng.random_range(2..5);
        let cs = rng.random_range(2..6);
        let n_target = rng.random_range(1..5);
        let lambda = rng.random_range(0.5..1.5);
        let mut m = SurrogateModel::zeros(input, f, ct, cs);
        for b in m.params.blocks_mut() {
            *b = rand_vec(&mut rng, b.len(), 0.5);
        }
        let xs: Vec<Vec<f64>> = (0..5).map(|_| rand_vec(&mut rng, input, 1.5)).collect();
        let labels: Vec<usize> = (0..5).map(|i| rng.random_range(0..if i < n_target { ct } else { cs })).collect();
        let te: Vec<Example> = (0..n_target).map(|i| Example { x: &xs[i], label: labels[i] }).collect();
        let se: Vec<Example> = (n_target..5).map(|i| Example { x: &xs[i], label: labels[i] }).collect();
        let (_, g) = m.loss_and_grad(&te, &se, lambda);
        let h = 1e-5;
        let mut probe = m.clone();
        for (b, gb) in g.blocks().iter().enumerate() {
            for i in 0..gb.len() {
                let orig = probe.params.blocks()[b][i];
                probe.params.blocks_mut()[b][i] = orig + h;
                let up = probe.loss(&te, &se, lambda);
                probe.params.blocks_mut()[b][i] = orig - h;
                let down = probe.loss(&te, &se, lambda);
                probe.params.blocks_mut()[b][i] = orig;
                let numeric = (up - down) / (2.0 * h);
                let rel = (gb[i] - numeric).abs() / gb[i].abs().max(numeric.abs()).max(1e-6);
                worst = worst.max(rel);
            }
        }
        ensure!(worst < 1e-4, "config {config}: max relative error {worst:e}");
    }

    // domain isolation: target-only steps at zero weight decay
    let mut m = SurrogateModel::zeros(6, 4, 3, 5);
    for b in m.params.blocks_mut() {
        *b = rand_vec(&mut rng, b.len(), 0.5);
    }
    let before = m.clone();
    let xs: Vec<Vec<f64>> = (0..4).map(|_| rand_vec(&mut rng, 6, 1.0)).collect();
    let te: Vec<Example> = xs.iter().enumerate().map(|(i, x)| Example { x, label: i % 3 }).collect();
    let hp = Hyperparameters {
        learning_rate: 0.1,
        weight_decay: 0.0,
        ..Hyperparameters::default()
    };
    let mut opt = Sgd::new(&hp);
    for _ in 0..10 {
        let (_, g) = m.loss_and_grad(&te, &[], 1.0);
        opt.step(&mut m.params, &g);
    }
    ensure!(
        m.params.source_w == before.params.source_w && m.params.source_b == before.params.source_b,
        "source head changed on a target-only batch"
    );
    ensure!(m.params.trunk != before.params.trunk, "trunk did not move");
    Ok(format!("10 configurations, max relative error {worst:.1e}; source head bit-identical"))
}

// ---------------------------------------------------------------- 8

// Thresholds fixed from a calibration run over seeds 1..=5 (selective
// precision 0.735-0.825, random 0.239-0.273; mean test accuracy selective
// 0.945, random-source 0.921; mean gap no-source 0.068, selective 0.055).
const MIN_SELECTIVE_PRECISION: f64 = 0.5;
const SEEDS: [u64; 5] = [1, 2, 3, 4, 5];

fn end_to_end() -> Outcome {
    let mut sums: BTreeMap<&str, (f64, f64)> = BTreeMap::new();
    let mut lines = Vec::new();
    for seed in SEEDS {
        let cfg = DemoConfig {
            seed,
            ..DemoConfig::default()
        };
        ensure!(
            cfg.source_families() == 8 && cfg.source_per_family == 200 && cfg.target_families == 4 && cfg.target_per_family == 20,
            "demo corpus shape changed"
        );
        let dir = tempfile::tempdir().unwrap();
        let (train, test) = generate_demo_corpus(&cfg, dir.path()).map_err(|e| e.to_string())?;
        let bank = build_gabor_bank(&cfg.gabor).unwrap();
        let tables = describe_demo_corpus(&cfg, &bank, &train, &test).map_err(|e| e.to_string())?;
        let rc = retrieval_check(&cfg, &tables).map_err(|e| e.to_string())?;
        ensure!(
            rc.within_family_distance < rc.cross_family_distance,
            "seed {seed}: within {} >= cross {}",
            rc.within_family_distance,
            rc.cross_family_distance
        );
        ensure!(
            rc.selective_precision > rc.random_precision && rc.selective_precision >= MIN_SELECTIVE_PRECISION,
            "seed {seed}: precision selective {} random {}",
            rc.selective_precision,
            rc.random_precision
        );
        for v in [Variant::Selective, Variant::RandomSource, Variant::NoSource] {
            let r = run_variant(&cfg, &tables, v, None).map_err(|e| e.to_string())?.summary;
            ensure!(r.failure.is_none(), "seed {seed} {}: {:?}", r.variant, r.failure);
            let e = sums.entry(v.as_str()).or_default();
            e.0 += r.test_accuracy;
            e.1 += r.gap;
        }
        lines.push(format!("seed {seed}: P@K0 {:.3} vs {:.3}", rc.selective_precision, rc.random_precision));
    }
    let n = SEEDS.len() as f64;
    let mean = |k: &str| (sums[k].0 / n, sums[k].1 / n);
    let (sel_acc, sel_gap) = mean("selective");
    let (rnd_acc, _) = mean("random-source");
    let (_, ns_gap) = mean("no-source");
    ensure!(sel_acc >= rnd_acc, "mean test accuracy selective {sel_acc:.4} < random {rnd_acc:.4}");
    ensure!(ns_gap > sel_gap, "mean gap no-source {ns_gap:.4} <= selective {sel_gap:.4}");
    Ok(format!(
        "{}; acc selective {sel_acc:.3} >= random {rnd_acc:.3}; gap no-source {ns_gap:.3} > selective {sel_gap:.3}",
        lines.join(", ")
    ))
}

// ---------------------------------------------------------------- 9

fn demo_run(out: &Path, threads: &str) -> Result<(), String> {
    let status = Command::new(env!("CARGO_BIN_EXE_sievebank"))
        .args(["--threads", threads, "demo", "--seed", "7", "--out"])
        .arg(out)
        .output()
        .map_err(|e| e.to_string())?;
    ensure!(status.status.success(), "demo failed: {}", String::from_utf8_lossy(&status.stderr));
    Ok(())
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    demo_run(&a, "1")?;
    demo_run(&b, "4")?;
    let cfg = DemoConfig::default();
    let mut compared = 0;
    for rel in sievebank::pipeline::demo_artifacts(&cfg) {
        let x = std::fs::read(a.join(&rel)).map_err(|e| format!("{}: {e}", rel.display()))?;
        let y = std::fs::read(b.join(&rel)).map_err(|e| format!("{}: {e}", rel.display()))?;
        ensure!(x == y, "{} differs between runs", rel.display());
        compared += 1;
    }
    Ok(format!(
        "{compared} artifacts (schedules, neighbor lists, predictions, report) byte-identical across two runs"
    ))
}

fn main() {
    // honour `cargo test -- <filter>`-style invocations without a harness
    let filter: Option<String> = std::env::args().skip(1).find(|a| !a.starts_with('-'));
    let criteria: Vec<Criterion> = vec![
        (1, "Gabor bank structure", 1, gabor_structure),
        (2, "convolution oracle", 10, convolution_oracle),
        (3, "equi-population binning", 5, equi_population),
        (4, "distance properties", 5, distance_properties),
        (5, "retrieval oracle", 30, retrieval_oracle),
        (6, "hard-sample trace", 1, hard_sample_trace),
        (7, "surrogate gradient check", 30, gradient_check),
        (8, "end-to-end directional check", 600, end_to_end),
        (9, "demo determinism", 600, determinism),
    ];
    let mut failed = 0;
    let mut ran = 0;
    for (n, name, secs, f) in criteria {
        if let Some(flt) = &filter {
            if !name.contains(flt.as_str()) && flt != &n.to_string() {
                continue;
            }
        }
        ran += 1;
        if !run_criterion(n, name, Duration::from_secs(secs), f) {
            failed += 1;
        }
    }
    println!("acceptance: {} passed, {failed} failed", ran - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
