//! Pipeline configuration: one TOML file with a section per stage, plus
//! command-line overrides applied on top.
//!
//! ```toml
//! seed = 7
//!
//! [paths]
//! target_descriptors = "desc.sjfd"
//! source_descriptors = "desc.sjfd"
//! out_dir = "loop-out"
//!
//! [retrieval]
//! dataset = "stanford-dogs"   # or k0 = 100
//!
//! [hardloop]
//! delta = 0.1
//! max_iterations = 5
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::descriptor::{DEFAULT_BINS, DEFAULT_SUMMARY_CAPACITY};
use crate::error::{Error, Result};
use crate::filterbank::GaborConfig;
use crate::hardloop::{HardSampleConfig, LoopConfig, SelectionMode};
use crate::surrogate::Hyperparameters;

/// Environment fallback for `--threads`.
pub const THREADS_ENV: &str = "SIEVEBANK_THREADS";

/// Initial neighbor counts used for the reference fine-grained datasets.
pub fn dataset_k0(name: &str) -> Option<usize> {
    match name {
        "stanford-dogs" => Some(100),
        "oxford-flowers" => Some(300),
        "caltech-256" => Some(100),
        "mit-indoor-67" => Some(100),
        _ => None,
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub manifest: Option<PathBuf>,
    /// `gabor` or a bank file.
    pub bank: Option<String>,
    pub calibration: Option<PathBuf>,
    pub target_descriptors: Option<PathBuf>,
    pub source_descriptors: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DescriptorConfig {
    pub bins: usize,
    pub summary_capacity: usize,
}

impl Default for DescriptorConfig {
    fn default() -> Self {
        Self {
            bins: DEFAULT_BINS,
            summary_capacity: DEFAULT_SUMMARY_CAPACITY,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetrievalConfig {
    pub k0: Option<usize>,
    /// Named preset for `k0`; an explicit `k0` wins.
    pub dataset: Option<String>,
    pub min_union: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HardLoopConfig {
    pub delta: f64,
    /// Defaults to `4 k0`.
    pub sigma0: Option<usize>,
    /// Defaults to `2 k0`.
    pub sigma1: Option<usize>,
    pub max_iterations: usize,
    pub grow: bool,
    pub selection: SelectionMode,
}

impl Default for HardLoopConfig {
    fn default() -> Self {
        Self {
            delta: 0.1,
            sigma0: None,
            sigma1: None,
            max_iterations: 5,
            grow: true,
            selection: SelectionMode::Nearest,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleConfig {
    pub batch_size: usize,
    pub epochs: usize,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self { batch_size: 10, epochs: 3 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub threads: Option<usize>,
    pub paths: PathsConfig,
    pub gabor: GaborConfig,
    pub descriptor: DescriptorConfig,
    pub retrieval: RetrievalConfig,
    pub hardloop: HardLoopConfig,
    pub schedule: ScheduleConfig,
    pub trainer: Hyperparameters,
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub k0: Option<usize>,
    pub min_union: Option<usize>,
    pub max_iterations: Option<usize>,
    pub out_dir: Option<PathBuf>,
}

impl PipelineConfig {
    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Parse {
            path: origin.to_path_buf(),
            line: e.span().map_or(0, |s| text[..s.start].matches('\n').count() + 1),
            msg: e.message().to_string(),
        })
    }

    /// Loads the file; relative paths inside it are taken relative to its
    /// directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::parse(&text, path)?;
        let base = path.parent().unwrap_or(Path::new(""));
        let p = &mut cfg.paths;
        for slot in [
            &mut p.manifest,
            &mut p.calibration,
            &mut p.target_descriptors,
            &mut p.source_descriptors,
            &mut p.out_dir,
        ] {
            if let Some(v) = slot.as_mut() {
                if v.is_relative() {
                    *v = base.join(&*v);
                }
            }
        }
        if let Some(b) = p.bank.as_mut() {
            if b != "gabor" && Path::new(b.as_str()).is_relative() {
                *b = base.join(b.as_str()).to_string_lossy().into_owned();
            }
        }
        Ok(cfg)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(v) = o.seed {
            self.seed = v;
        }
        if let Some(v) = o.threads {
            self.threads = Some(v);
        }
        if let Some(v) = o.k0 {
            self.retrieval.k0 = Some(v);
        }
        if let Some(v) = o.min_union {
            self.retrieval.min_union = v;
        }
        if let Some(v) = o.max_iterations {
            self.hardloop.max_iterations = v;
        }
        if let Some(v) = &o.out_dir {
            self.paths.out_dir = Some(v.clone());
        }
    }

    pub fn k0(&self) -> Option<usize> {
        self.retrieval
            .k0
            .or_else(|| self.retrieval.dataset.as_deref().and_then(dataset_k0))
    }

    /// Checks everything and reports every problem at once.
    pub fn validate(&self) -> Result<()> {
        let mut p = Vec::new();
        if let Err(e) = self.gabor.validate() {
            p.push(format!("gabor: {e}"));
        }
        if self.descriptor.bins < 2 {
            p.push(format!("descriptor.bins must be >= 2, got {}", self.descriptor.bins));
        }
        if self.descriptor.summary_capacity < 2 {
            p.push("descriptor.summary_capacity must be >= 2".into());
        }
        match (self.retrieval.k0, self.retrieval.dataset.as_deref()) {
            (Some(0), _) => p.push("retrieval.k0 must be >= 1".into()),
            (None, None) => p.push("retrieval.k0 is not set (give k0 or a dataset preset)".into()),
            (None, Some(d)) if dataset_k0(d).is_none() => p.push(format!(
                "retrieval.dataset `{d}` is unknown (stanford-dogs, oxford-flowers, caltech-256, mit-indoor-67)"
            )),
            _ => {}
        }
        let h = &self.hardloop;
        if !(h.delta.is_finite() && h.delta > 0.0) {
            p.push(format!("hardloop.delta must be positive, got {}", h.delta));
        }
        if h.sigma0 == Some(0) || h.sigma1 == Some(0) {
            p.push("hardloop.sigma0 and hardloop.sigma1 must be positive".into());
        }
        if h.max_iterations == 0 {
            p.push("hardloop.max_iterations must be >= 1".into());
        }
        if self.schedule.batch_size == 0 {
            p.push("schedule.batch_size must be >= 1".into());
        }
        if self.schedule.epochs == 0 {
            p.push("schedule.epochs must be >= 1".into());
        }
        let t = &self.trainer;
        if !(t.learning_rate.is_finite() && t.learning_rate >= 0.0) {
            p.push("trainer.learning_rate must be finite and >= 0".into());
        }
        if !(t.momentum.is_finite() && (0.0..1.0).contains(&t.momentum)) {
            p.push("trainer.momentum must be in [0, 1)".into());
        }
        if !(t.weight_decay.is_finite() && t.weight_decay >= 0.0) {
            p.push("trainer.weight_decay must be finite and >= 0".into());
        }
        if !(t.source_weight.is_finite() && t.source_weight >= 0.0) {
            p.push("trainer.source_weight must be finite and >= 0".into());
        }
        if t.features == 0 {
            p.push("trainer.features must be >= 1".into());
        }
        if self.threads == Some(0) {
            p.push("threads must be >= 1".into());
        }
        if p.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(p))
        }
    }

    /// Loop constants with the sigma defaults resolved. Call after `validate`.
    pub fn hard_sample_config(&self) -> HardSampleConfig {
        let k0 = self.k0().unwrap_or(1);
        HardSampleConfig {
            k0,
            sigma0: self.hardloop.sigma0.unwrap_or(4 * k0),
            sigma1: self.hardloop.sigma1.unwrap_or(2 * k0),
            delta: self.hardloop.delta,
            max_iterations: self.hardloop.max_iterations,
        }
    }

    pub fn loop_config(&self) -> LoopConfig {
        LoopConfig {
            hard: self.hard_sample_config(),
            min_union: self.retrieval.min_union,
            batch_size: self.schedule.batch_size,
            epochs: self.schedule.epochs,
            seed: self.seed,
            selection: self.hardloop.selection,
            grow: self.hardloop.grow,
        }
    }
}

/// Thread count: explicit value, else `SIEVEBANK_THREADS`, else all cores.
pub fn resolve_threads(explicit: Option<usize>) -> Result<Option<usize>> {
    if explicit.is_some() {
        return Ok(explicit);
    }
    match std::env::var(THREADS_ENV) {
        Ok(v) if !v.trim().is_empty() => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(Error::Config(vec![format!("{THREADS_ENV}=`{v}` is not a positive integer")])),
        },
        _ => Ok(None),
    }
}
