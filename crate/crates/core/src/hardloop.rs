//! Entropy-driven hard-sample controller.
//!
//! After every fine-tuning iteration each target training sample is put in
//! one of three cases: misclassified (`K += sigma0`), correct but uncertain,
//! i.e. entropy `>= delta` (`K += sigma1`), or confident (`K` unchanged).
//! The next iteration retrieves `K_i` neighbors for sample `i`.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::batcher::{build_schedule, BatchSchedule};
use crate::codec;
use crate::corpus::SampleId;
use crate::descriptor::DescriptorTable;
use crate::error::{Error, Result};
use crate::retrieval::{random_selection, select, SelectionResult};
use crate::surrogate::{Trainer, TrainMetrics};

/// Tolerance on `sum(p) == 1`.
pub const PROBABILITY_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionRecord {
    pub target: SampleId,
    pub probabilities: Vec<f64>,
    pub true_label: usize,
    pub iteration: usize,
}

impl PredictionRecord {
    /// Argmax; ties go to the lowest class index.
    pub fn predicted(&self) -> usize {
        let mut best = 0;
        for (c, &p) in self.probabilities.iter().enumerate() {
            if p > self.probabilities[best] {
                best = c;
            }
        }
        best
    }

    pub fn validate(&self) -> Result<()> {
        let p = &self.probabilities;
        let bad = |msg: String| Error::InvalidProbabilities { id: self.target, msg };
        if p.len() < 2 {
            return Err(bad(format!("{} classes, need at least 2", p.len())));
        }
        if let Some(v) = p.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(bad(format!("entry {v} is not a non-negative number")));
        }
        let sum: f64 = p.iter().sum();
        if (sum - 1.0).abs() > PROBABILITY_TOLERANCE {
            return Err(Error::NotNormalized { id: self.target, sum });
        }
        if self.true_label >= p.len() {
            return Err(bad(format!("true label {} outside {} classes", self.true_label, p.len())));
        }
        Ok(())
    }
}

/// Shannon entropy in nats, with `0 ln 0 = 0`.
pub fn entropy(record: &PredictionRecord) -> Result<f64> {
    record.validate()?;
    let h: f64 = record
        .probabilities
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| -p * p.ln())
        .sum();
    Ok(h.max(0.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Case {
    Misclassified,
    Uncertain,
    Confident,
}

pub fn classify(correct: bool, entropy: f64, delta: f64) -> Case {
    if !correct {
        Case::Misclassified
    } else if entropy >= delta {
        Case::Uncertain
    } else {
        Case::Confident
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HardSampleConfig {
    pub k0: usize,
    pub sigma0: usize,
    pub sigma1: usize,
    pub delta: f64,
    pub max_iterations: usize,
}

impl HardSampleConfig {
    /// `sigma0 = 4 k0`, `sigma1 = 2 k0`, `delta = 0.1`, five iterations.
    pub fn from_k0(k0: usize) -> Self {
        Self {
            k0,
            sigma0: 4 * k0,
            sigma1: 2 * k0,
            delta: 0.1,
            max_iterations: 5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k0 == 0 {
            return Err(Error::InvalidParameter("k0 must be >= 1".into()));
        }
        if !(self.delta.is_finite() && self.delta > 0.0) {
            return Err(Error::InvalidParameter(format!("delta must be positive, got {}", self.delta)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaseCounts {
    pub misclassified: usize,
    pub uncertain: usize,
    pub confident: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HardSampleState {
    pub config: HardSampleConfig,
    pub counts: BTreeMap<SampleId, usize>,
    pub iteration: usize,
}

impl HardSampleState {
    pub fn new(config: HardSampleConfig, targets: impl IntoIterator<Item = SampleId>) -> Self {
        Self {
            config,
            counts: targets.into_iter().map(|id| (id, config.k0)).collect(),
            iteration: 0,
        }
    }

    /// Applies one round of the three-case rule; needs exactly one record per
    /// tracked target.
    pub fn update_counts(&self, predictions: &[PredictionRecord]) -> Result<(HardSampleState, CaseCounts)> {
        if self.iteration >= self.config.max_iterations {
            return Err(Error::IterationLimit(self.config.max_iterations));
        }
        let mut seen: BTreeMap<SampleId, &PredictionRecord> = BTreeMap::new();
        for r in predictions {
            if !self.counts.contains_key(&r.target) {
                return Err(Error::UnknownSample(r.target));
            }
            if seen.insert(r.target, r).is_some() {
                return Err(Error::DuplicateSample(r.target));
            }
        }
        let mut next = self.clone();
        let mut tally = CaseCounts::default();
        for (id, k) in next.counts.iter_mut() {
            let r = seen.get(id).ok_or(Error::MissingCount(*id))?;
            let h = entropy(r)?;
            match classify(r.predicted() == r.true_label, h, self.config.delta) {
                Case::Misclassified => {
                    *k += self.config.sigma0;
                    tally.misclassified += 1;
                }
                Case::Uncertain => {
                    *k += self.config.sigma1;
                    tally.uncertain += 1;
                }
                Case::Confident => tally.confident += 1,
            }
        }
        next.iteration += 1;
        Ok((next, tally))
    }

    /// Counts clamped to the size of the source corpus.
    pub fn effective_counts(&self, source_len: usize) -> BTreeMap<SampleId, usize> {
        self.counts.iter().map(|(&id, &k)| (id, k.min(source_len))).collect()
    }

    /// Number of targets per distinct K.
    pub fn histogram(&self) -> BTreeMap<usize, usize> {
        let mut h = BTreeMap::new();
        for &k in self.counts.values() {
            *h.entry(k).or_default() += 1;
        }
        h
    }
}

/// Prediction file: one line per record, `target-id \t true-label \t p_1 ... p_C`
/// (probabilities tab-separated).
pub fn format_predictions(records: &[PredictionRecord]) -> String {
    let mut out = String::from("# target\ttrue_label\tprobabilities\n");
    for r in records {
        out.push_str(&format!("{}\t{}", r.target, r.true_label));
        for p in &r.probabilities {
            out.push_str(&format!("\t{p:e}"));
        }
        out.push('\n');
    }
    out
}

pub fn write_predictions(records: &[PredictionRecord], path: &Path) -> Result<()> {
    codec::write_atomic(path, format_predictions(records).as_bytes())
}

pub fn parse_predictions(text: &str, origin: &Path, iteration: usize) -> Result<Vec<PredictionRecord>> {
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.starts_with('#') || line.trim().is_empty() {
            continue;
        }
        let err = |msg: String| Error::Parse {
            path: origin.to_path_buf(),
            line: lineno + 1,
            msg,
        };
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() < 4 {
            return Err(err(format!("expected id, label and at least 2 probabilities, found {} fields", f.len())));
        }
        let target: SampleId = f[0].parse().map_err(err)?;
        let true_label = f[1].parse().map_err(|_| err(format!("bad label `{}`", f[1])))?;
        let probabilities = f[2..]
            .iter()
            .map(|s| s.trim().parse::<f64>().map_err(|_| err(format!("bad probability `{s}`"))))
            .collect::<Result<Vec<_>>>()?;
        let r = PredictionRecord {
            target,
            probabilities,
            true_label,
            iteration,
        };
        r.validate()?;
        out.push(r);
    }
    Ok(out)
}

pub fn read_predictions(path: &Path, iteration: usize) -> Result<Vec<PredictionRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_predictions(&text, path, iteration)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SelectionMode {
    /// K_i nearest neighbors by descriptor distance.
    Nearest,
    /// K_i uniformly drawn source samples per target.
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoopConfig {
    pub hard: HardSampleConfig,
    pub min_union: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub selection: SelectionMode,
    /// When false, counts stay at `k0` (no hard-sample growth).
    pub grow: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IterationRecord {
    pub iteration: usize,
    /// Distinct K value -> number of targets.
    pub k_histogram: BTreeMap<usize, usize>,
    pub k_mean: f64,
    pub union_size: usize,
    pub overlap_ratio: f64,
    pub under_coverage: bool,
    pub batches: usize,
    pub train: TrainMetrics,
    pub train_accuracy: f64,
    pub mean_entropy: f64,
    pub cases: CaseCounts,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LoopReport {
    pub iterations: Vec<IterationRecord>,
    #[serde(serialize_with = "serialize_counts")]
    pub final_counts: BTreeMap<SampleId, usize>,
    pub trainer_invocations: usize,
    pub failure: Option<String>,
}

fn serialize_counts<S: serde::Serializer>(m: &BTreeMap<SampleId, usize>, s: S) -> std::result::Result<S::Ok, S::Error> {
    use serde::ser::SerializeMap;
    let mut map = s.serialize_map(Some(m.len()))?;
    for (k, v) in m {
        map.serialize_entry(&k.to_string(), v)?;
    }
    map.end()
}

impl LoopReport {
    /// One JSON object per iteration, then a summary line.
    pub fn to_json_lines(&self) -> String {
        let mut out = String::new();
        for it in &self.iterations {
            out.push_str(&serde_json::to_string(it).expect("serializable"));
            out.push('\n');
        }
        let summary = serde_json::json!({
            "summary": {
                "iterations": self.iterations.len(),
                "trainer_invocations": self.trainer_invocations,
                "failure": self.failure,
                "final_counts": serde_json::to_value(SerializedCounts(&self.final_counts)).expect("serializable"),
            }
        });
        out.push_str(&summary.to_string());
        out.push('\n');
        out
    }
}

struct SerializedCounts<'a>(&'a BTreeMap<SampleId, usize>);

impl Serialize for SerializedCounts<'_> {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        serialize_counts(self.0, s)
    }
}

/// What one iteration produced, handed to the caller's observer.
pub struct IterationArtifacts<'a> {
    pub iteration: usize,
    pub selection: &'a SelectionResult,
    pub schedule: &'a BatchSchedule,
    pub predictions: &'a [PredictionRecord],
}

pub struct LoopOutcome<M> {
    pub report: LoopReport,
    pub model: Option<M>,
    pub state: HardSampleState,
}

/// Runs `max_iterations` rounds of select -> schedule -> train (warm) ->
/// predict -> update. A trainer error stops the loop and is recorded in the
/// report; selection and schedule errors are returned.
pub fn run_loop<T: Trainer>(
    targets: &DescriptorTable,
    source: &DescriptorTable,
    trainer: &mut T,
    config: &LoopConfig,
    mut observe: impl FnMut(&IterationArtifacts) -> Result<()>,
) -> Result<LoopOutcome<T::Model>> {
    config.hard.validate()?;
    if source.is_empty() {
        return Err(Error::EmptySource);
    }
    if targets.is_empty() {
        return Err(Error::EmptyTargetSet);
    }
    let mut state = HardSampleState::new(config.hard, targets.ids());
    let mut model: Option<T::Model> = None;
    let mut report = LoopReport {
        iterations: Vec::new(),
        final_counts: BTreeMap::new(),
        trainer_invocations: 0,
        failure: None,
    };
    for m in 0..config.hard.max_iterations {
        let counts = state.effective_counts(source.len());
        let selection = match config.selection {
            SelectionMode::Nearest => select(targets, source, &counts, config.min_union)?,
            SelectionMode::Random => random_selection(
                targets,
                source,
                &counts,
                config.min_union,
                config.seed ^ (m as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15),
            )?,
        };
        let schedule = build_schedule(&selection, config.batch_size, config.epochs, config.seed.wrapping_add(m as u64))?;
        report.trainer_invocations += 1;
        let trained = trainer
            .train(&schedule, targets, source, model.as_ref())
            .and_then(|(next, metrics)| trainer.predict(&next, targets).map(|p| (next, metrics, p)));
        let (next, metrics, mut predictions) = match trained {
            Ok(v) => v,
            Err(e) => {
                log::error!("iteration {m}: trainer failed: {e}");
                report.failure = Some(format!("iteration {m}: {e}"));
                break;
            }
        };
        predictions.iter_mut().for_each(|p| p.iteration = m);
        model = Some(next);
        let (updated, cases) = if config.grow {
            state.update_counts(&predictions)?
        } else {
            let (mut s, c) = state.update_counts(&predictions)?;
            s.counts = state.counts.clone();
            (s, c)
        };
        let mut entropy_sum = 0.0;
        for p in &predictions {
            entropy_sum += entropy(p)?;
        }
        let n = predictions.len().max(1) as f64;
        let correct = predictions.iter().filter(|p| p.predicted() == p.true_label).count();
        let record = IterationRecord {
            iteration: m,
            k_histogram: state.histogram(),
            k_mean: state.counts.values().sum::<usize>() as f64 / state.counts.len() as f64,
            union_size: selection.stats.union_size,
            overlap_ratio: selection.stats.overlap_ratio,
            under_coverage: selection.warning.is_some(),
            batches: schedule.len(),
            train: metrics,
            train_accuracy: correct as f64 / n,
            mean_entropy: entropy_sum / n,
            cases,
        };
        log::info!(
            "iteration {m}: union {} (overlap {:.3}), mean K {:.1}, train acc {:.3}, hard {}+{}",
            record.union_size,
            record.overlap_ratio,
            record.k_mean,
            record.train_accuracy,
            cases.misclassified,
            cases.uncertain
        );
        observe(&IterationArtifacts {
            iteration: m,
            selection: &selection,
            schedule: &schedule,
            predictions: &predictions,
        })?;
        report.iterations.push(record);
        state = updated;
    }
    report.final_counts = state.counts.clone();
    Ok(LoopOutcome { report, model, state })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::descriptor::{Calibration, Descriptor, FilterCalibration, Layout};

    fn rec(t: u32, p: &[f64], label: usize) -> PredictionRecord {
        PredictionRecord {
            target: SampleId::target(t),
            probabilities: p.to_vec(),
            true_label: label,
            iteration: 0,
        }
    }

    #[test]
    fn entropy_examples() {
        assert_eq!(entropy(&rec(0, &[0.0, 1.0, 0.0], 1)).unwrap(), 0.0);
        assert!((entropy(&rec(0, &[0.25; 4], 0)).unwrap() - 4f64.ln()).abs() < 1e-12);
        // -0.9 ln 0.9 - 0.1 ln 0.1
        assert!((entropy(&rec(0, &[0.9, 0.1], 0)).unwrap() - 0.3250829733914482).abs() < 1e-12);
    }

    #[test]
    fn entropy_rejects_invalid() {
        assert!(matches!(entropy(&rec(0, &[0.5, 0.6], 0)), Err(Error::NotNormalized { .. })));
        assert!(entropy(&rec(0, &[1.0], 0)).is_err());
        assert!(entropy(&rec(0, &[1.2, -0.2], 0)).is_err());
        assert!(entropy(&rec(0, &[0.5, 0.5 + 5e-7], 0)).is_ok());
    }

    #[test]
    fn three_cases_with_k0_100() {
        let cfg = HardSampleConfig::from_k0(100);
        let s = HardSampleState::new(cfg, (0..3).map(SampleId::target));
        let (next, cases) = s
            .update_counts(&[
                rec(0, &[0.3, 0.7], 0),   // wrong
                rec(1, &[0.99, 0.01], 0), // H ~ 0.056
                rec(2, &[0.8, 0.2], 0),   // H ~ 0.500
            ])
            .unwrap();
        let k: Vec<usize> = next.counts.values().copied().collect();
        assert_eq!(k, vec![500, 100, 300]);
        assert_eq!(next.iteration, 1);
        assert_eq!(cases, CaseCounts { misclassified: 1, uncertain: 1, confident: 1 });
        assert_eq!(classify(true, 0.1, 0.1), Case::Uncertain);
        assert_eq!(classify(true, 0.0999, 0.1), Case::Confident);
    }

    #[test]
    fn update_errors() {
        let s = HardSampleState::new(HardSampleConfig::from_k0(10), (0..2).map(SampleId::target));
        let ok = rec(0, &[1.0, 0.0], 0);
        assert!(matches!(s.update_counts(std::slice::from_ref(&ok)), Err(Error::MissingCount(_))));
        assert!(matches!(s.update_counts(&[ok.clone(), ok.clone()]), Err(Error::DuplicateSample(_))));
        assert!(matches!(s.update_counts(&[ok.clone(), rec(5, &[1.0, 0.0], 0)]), Err(Error::UnknownSample(_))));
        let mut done = s.clone();
        done.iteration = 5;
        assert!(matches!(done.update_counts(&[]), Err(Error::IterationLimit(5))));
    }

    #[test]
    fn effective_counts_clamp() {
        let mut s = HardSampleState::new(HardSampleConfig::from_k0(10), [SampleId::target(0)]);
        s.counts.insert(SampleId::target(0), 90);
        assert_eq!(s.effective_counts(40)[&SampleId::target(0)], 40);
        assert_eq!(s.counts[&SampleId::target(0)], 90);
    }

    #[test]
    fn prediction_file_round_trip() {
        let rs = vec![rec(3, &[0.125, 0.375, 0.5], 2), rec(1, &[1.0, 0.0], 0)];
        let text = format_predictions(&rs);
        assert_eq!(parse_predictions(&text, Path::new("p.tsv"), 0).unwrap(), rs);
        assert!(parse_predictions("t:0\t0\t0.5\t0.6\n", Path::new("p.tsv"), 0).is_err());
        assert!(parse_predictions("t:0\t0\t1.0\n", Path::new("p.tsv"), 0).is_err());
    }

    // ---- loop with scripted trainers ----

    pub(crate) fn toy_tables(n_t: u32, n_s: u32) -> (DescriptorTable, DescriptorTable) {
        let cal = Calibration {
            layout: Layout { bins: 2, layer_sizes: vec![1] },
            filters: vec![FilterCalibration { lower: 0.0, upper: 1.0, edges: vec![0.5], degenerate: false }],
            fingerprint: [0; 32],
        };
        let mk = |id: SampleId, i: u32, n: u32| {
            let p = 0.05 + 0.9 * (i as f64 + 0.5) / n as f64;
            Descriptor::new(id, (i % 2) as usize, vec![p, 1.0 - p])
        };
        let t = (0..n_t).map(|i| mk(SampleId::target(i), i, n_t)).collect();
        let s = (0..n_s).map(|i| mk(SampleId::source(i), i, n_s)).collect();
        (
            DescriptorTable::new(cal.clone(), t).unwrap(),
            DescriptorTable::new(cal, s).unwrap(),
        )
    }

    type Script = fn(usize, u32) -> (Vec<f64>, usize);

    struct Scripted {
        script: Script,
        fail_at: Option<usize>,
        warm_seen: Vec<Option<usize>>,
    }

    impl Trainer for Scripted {
        type Model = usize;

        fn train(
            &mut self,
            _: &BatchSchedule,
            _: &DescriptorTable,
            _: &DescriptorTable,
            warm: Option<&usize>,
        ) -> Result<(usize, TrainMetrics)> {
            let m = warm.map_or(0, |w| w + 1);
            self.warm_seen.push(warm.copied());
            if Some(m) == self.fail_at {
                return Err(Error::Trainer("scripted failure".into()));
            }
            Ok((m, TrainMetrics::default()))
        }

        fn predict(&self, model: &usize, targets: &DescriptorTable) -> Result<Vec<PredictionRecord>> {
            Ok(targets
                .ids()
                .map(|id| {
                    let (p, label) = (self.script)(*model, id.index);
                    PredictionRecord { target: id, probabilities: p, true_label: label, iteration: 0 }
                })
                .collect())
        }
    }

    fn cfg(k0: usize) -> LoopConfig {
        LoopConfig {
            hard: HardSampleConfig::from_k0(k0),
            min_union: 0,
            batch_size: 1,
            epochs: 1,
            seed: 3,
            selection: SelectionMode::Nearest,
            grow: true,
        }
    }

    fn run(script: Script, k0: usize, n_s: u32) -> (LoopOutcome<usize>, Vec<Vec<usize>>, Vec<Option<usize>>) {
        let (t, s) = toy_tables(3, n_s);
        let mut tr = Scripted { script, fail_at: None, warm_seen: vec![] };
        let mut ks = Vec::new();
        let out = run_loop(&t, &s, &mut tr, &cfg(k0), |a| {
            ks.push(a.selection.sets.iter().map(|s| s.neighbors.len()).collect());
            Ok(())
        })
        .unwrap();
        (out, ks, tr.warm_seen)
    }

    #[test]
    fn always_confident_is_fixed_point() {
        let (out, ks, warm) = run(|_, _| (vec![1.0, 0.0], 0), 2, 50);
        assert_eq!(out.report.trainer_invocations, 5);
        assert_eq!(warm, vec![None, Some(0), Some(1), Some(2), Some(3)]);
        assert!(ks.iter().all(|k| k == &vec![2, 2, 2]));
        let unions: Vec<usize> = out.report.iterations.iter().map(|r| r.union_size).collect();
        assert!(unions.windows(2).all(|w| w[0] == w[1]));
        assert!(out.state.counts.values().all(|&k| k == 2));
    }

    #[test]
    fn always_wrong_is_arithmetic() {
        let (out, ks, _) = run(|_, _| (vec![0.0, 1.0], 0), 1, 100);
        for (m, k) in ks.iter().enumerate() {
            assert_eq!(k, &vec![1 + 4 * m; 3]);
        }
        assert!(out.state.counts.values().all(|&k| k == 1 + 4 * 5));
    }

    #[test]
    fn clamped_to_source_size() {
        let (_, ks, _) = run(|_, _| (vec![0.0, 1.0], 0), 1, 10);
        assert_eq!(ks.last().unwrap(), &vec![10; 3]);
    }

    #[test]
    fn trainer_failure_gives_partial_report() {
        let (t, s) = toy_tables(3, 20);
        let mut tr = Scripted { script: |_, _| (vec![1.0, 0.0], 0), fail_at: Some(2), warm_seen: vec![] };
        let out = run_loop(&t, &s, &mut tr, &cfg(1), |_| Ok(())).unwrap();
        assert_eq!(out.report.iterations.len(), 2);
        assert_eq!(out.report.trainer_invocations, 3);
        assert!(out.report.failure.as_deref().unwrap().contains("scripted failure"));
        assert_eq!(out.model, Some(1));
    }

    #[test]
    fn no_growth_keeps_k0() {
        let (t, s) = toy_tables(3, 30);
        let mut tr = Scripted { script: |_, _| (vec![0.0, 1.0], 0), fail_at: None, warm_seen: vec![] };
        let c = LoopConfig { grow: false, ..cfg(2) };
        let out = run_loop(&t, &s, &mut tr, &c, |_| Ok(())).unwrap();
        assert!(out.state.counts.values().all(|&k| k == 2));
        assert_eq!(out.report.iterations[4].cases.misclassified, 3);
    }

    #[test]
    fn report_json_lines() {
        let (out, _, _) = run(|_, _| (vec![0.5, 0.5], 0), 1, 20);
        let text = out.report.to_json_lines();
        assert_eq!(text.lines().count(), 6);
        for l in text.lines() {
            serde_json::from_str::<serde_json::Value>(l).unwrap();
        }
        assert!(text.lines().last().unwrap().contains("\"t:2\":11"));
    }
}
