//! Command-line front end.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::batcher::{build_schedule, write_schedule};
use crate::codec;
use crate::config::{resolve_threads, Overrides, PipelineConfig};
use crate::corpus::{load_domain, Domain, LoadOptions, Manifest, SampleId};
use crate::descriptor::{build_table, calibrate, load_table, save_table, CalibrateOptions, DescriptorTable};
use crate::error::{Error, Result};
use crate::filterbank::{build_gabor_bank, load_kernel_bank, FilterBank, GaborConfig};
use crate::hardloop::{run_loop, write_predictions};
use crate::pipeline::{run_demo, DemoConfig};
use crate::retrieval::{read_neighbors, select, write_neighbors};
use crate::surrogate::{save_model, SurrogateTrainer};
use crate::synthetic::{gen_corpus, SyntheticSpec};

#[derive(Debug, Parser)]
#[command(name = "sievebank", version, about = "Filter-bank descriptors and nearest-neighbor source selection")]
pub struct Cli {
    /// Worker threads [default: $SIEVEBANK_THREADS, else all cores]
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    /// More log output (-v info, -vv debug)
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fix per-filter bin edges from the target images of a manifest
    Calibrate {
        #[arg(long)]
        manifest: PathBuf,
        /// `gabor` or a bank file
        #[arg(long, default_value = "gabor")]
        bank: String,
        #[arg(long, default_value_t = crate::descriptor::DEFAULT_BINS)]
        bins: usize,
        /// TOML file whose [gabor] section configures the built-in bank
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Describe every image of a manifest with a calibration
    Describe {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        cal: PathBuf,
        /// Must be the bank the calibration was made with
        #[arg(long, default_value = "gabor")]
        bank: String,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Nearest source neighbors for every target descriptor
    Retrieve {
        #[arg(long)]
        target_desc: PathBuf,
        #[arg(long)]
        source_desc: PathBuf,
        #[arg(long)]
        k0: usize,
        #[arg(long, default_value_t = 0)]
        min_union: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Mini-batch schedule from a neighbor list
    Schedule {
        #[arg(long)]
        selection: PathBuf,
        #[arg(long)]
        batch: usize,
        #[arg(long, default_value_t = 1)]
        epochs: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Hard-sample loop with the surrogate trainer
    Iterate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        k0: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        max_iterations: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// End-to-end run on a generated texture corpus
    Demo {
        #[arg(long)]
        seed: Option<u64>,
        /// Also run the all-source, random-source, no-source,
        /// no-iteration and loaded-bank comparisons
        #[arg(long)]
        ablate: bool,
        /// TOML file overriding demo settings
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "demo-out")]
        out: PathBuf,
    },
    /// Write an oriented-sinusoid texture corpus and its manifest
    GenSynthetic {
        #[arg(long)]
        families: usize,
        #[arg(long)]
        per_family: usize,
        #[arg(long, default_value = "source")]
        domain: Domain,
        #[arg(long, default_value_t = 40)]
        size: usize,
        #[arg(long, default_value_t = 0.2)]
        noise: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Manifest file name inside the output directory
        #[arg(long, default_value = "manifest.tsv")]
        manifest: String,
        #[arg(long)]
        out: PathBuf,
    },
}

fn gabor_from(config: Option<&Path>) -> Result<GaborConfig> {
    match config {
        Some(p) => {
            let cfg = PipelineConfig::load(p)?;
            Ok(cfg.gabor)
        }
        None => Ok(GaborConfig::default()),
    }
}

fn load_bank(spec: &str, config: Option<&Path>) -> Result<FilterBank> {
    if spec == "gabor" {
        build_gabor_bank(&gabor_from(config)?)
    } else {
        load_kernel_bank(Path::new(spec))
    }
}

fn ensure_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => std::fs::create_dir_all(p).map_err(|e| Error::io(p, e)),
        _ => Ok(()),
    }
}

fn image_options(bank: &FilterBank) -> LoadOptions {
    LoadOptions {
        min_size: bank.max_kernel_dim(),
        resize: None,
    }
}

fn domain_table(path: &Path, domain: Domain) -> Result<DescriptorTable> {
    let t = load_table(path)?;
    let sub = t.domain(domain);
    if sub.is_empty() {
        return Err(match domain {
            Domain::Target => Error::EmptyTargetSet,
            Domain::Source => Error::EmptySource,
        });
    }
    Ok(sub)
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Calibrate {
            manifest,
            bank,
            bins,
            config,
            out,
        } => {
            let bank = load_bank(&bank, config.as_deref())?;
            let m = Manifest::load(&manifest)?;
            let targets = load_domain(&m, Domain::Target, &image_options(&bank))?;
            let cal = calibrate(&targets, &bank, &CalibrateOptions { bins, ..Default::default() })?;
            log::info!(
                "calibrated {} filters x {bins} bins on {} target images",
                cal.filters.len(),
                targets.len()
            );
            ensure_parent(&out)?;
            save_table(&DescriptorTable::new(cal, Vec::new())?, &out)
        }
        Command::Describe {
            manifest,
            cal,
            bank,
            config,
            out,
        } => {
            let cal = load_table(&cal)?.calibration().clone();
            let bank = load_bank(&bank, config.as_deref())?;
            cal.check_bank(&bank)?;
            let m = Manifest::load(&manifest)?;
            let mut images = load_domain(&m, Domain::Source, &image_options(&bank))?;
            images.extend(load_domain(&m, Domain::Target, &image_options(&bank))?);
            let table = build_table(&images, &bank, &cal)?;
            log::info!("described {} images", table.len());
            ensure_parent(&out)?;
            save_table(&table, &out)
        }
        Command::Retrieve {
            target_desc,
            source_desc,
            k0,
            min_union,
            out,
        } => {
            if k0 == 0 {
                return Err(Error::InvalidParameter("--k0 must be >= 1".into()));
            }
            let targets = domain_table(&target_desc, Domain::Target)?;
            let source = domain_table(&source_desc, Domain::Source)?;
            let counts: BTreeMap<SampleId, usize> = targets.ids().map(|id| (id, k0)).collect();
            let sel = select(&targets, &source, &counts, min_union)?;
            log::info!(
                "union {} of {} source samples (overlap {:.3})",
                sel.stats.union_size,
                source.len(),
                sel.stats.overlap_ratio
            );
            ensure_parent(&out)?;
            write_neighbors(&sel, &out)
        }
        Command::Schedule {
            selection,
            batch,
            epochs,
            seed,
            out,
        } => {
            let sel = read_neighbors(&selection, 0)?;
            let s = build_schedule(&sel, batch, epochs, seed)?;
            log::info!("{} mini-batches of {batch} pairs", s.len());
            ensure_parent(&out)?;
            write_schedule(&s, &out)
        }
        Command::Iterate {
            config,
            k0,
            seed,
            max_iterations,
            out,
        } => {
            let mut cfg = PipelineConfig::load(&config)?;
            cfg.apply(&Overrides {
                seed,
                k0,
                max_iterations,
                out_dir: out,
                ..Default::default()
            });
            let mut problems = match cfg.validate() {
                Ok(()) => Vec::new(),
                Err(Error::Config(p)) => p,
                Err(e) => return Err(e),
            };
            if cfg.paths.target_descriptors.is_none() {
                problems.push("paths.target_descriptors is not set".into());
            }
            if cfg.paths.source_descriptors.is_none() {
                problems.push("paths.source_descriptors is not set".into());
            }
            if !problems.is_empty() {
                return Err(Error::Config(problems));
            }
            let out = cfg.paths.out_dir.clone().unwrap_or_else(|| PathBuf::from("loop-out"));
            let targets = domain_table(cfg.paths.target_descriptors.as_ref().expect("checked"), Domain::Target)?;
            let source = domain_table(cfg.paths.source_descriptors.as_ref().expect("checked"), Domain::Source)?;
            let mut hp = cfg.trainer;
            hp.seed = cfg.seed;
            let mut trainer = SurrogateTrainer { hp };
            let outcome = run_loop(&targets, &source, &mut trainer, &cfg.loop_config(), |a| {
                let d = out.join(format!("iter_{}", a.iteration));
                std::fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
                write_neighbors(a.selection, &d.join("neighbors.tsv"))?;
                write_schedule(a.schedule, &d.join("schedule.tsv"))?;
                write_predictions(a.predictions, &d.join("predictions.tsv"))
            })?;
            std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
            codec::write_atomic(&out.join("report.jsonl"), outcome.report.to_json_lines().as_bytes())?;
            if let Some(m) = &outcome.model {
                save_model(m, &out.join("model.sjfm"))?;
            }
            match outcome.report.failure {
                Some(f) => Err(Error::Trainer(f)),
                None => Ok(()),
            }
        }
        Command::Demo {
            seed,
            ablate,
            config,
            out,
        } => {
            let mut cfg = match config {
                Some(p) => {
                    let text = std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
                    toml::from_str::<DemoConfig>(&text).map_err(|e| Error::Parse {
                        path: p.clone(),
                        line: e.span().map_or(0, |s| text[..s.start].matches('\n').count() + 1),
                        msg: e.message().to_string(),
                    })?
                }
                None => DemoConfig::default(),
            };
            if let Some(s) = seed {
                cfg.seed = s;
            }
            std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
            let report = run_demo(&cfg, &out, ablate)?;
            for r in &report.runs {
                println!(
                    "{}\ttrain={:.4}\ttest={:.4}\tgap={:.4}\tunion={}",
                    r.variant, r.train_accuracy, r.test_accuracy, r.gap, r.final_union
                );
            }
            Ok(())
        }
        Command::GenSynthetic {
            families,
            per_family,
            domain,
            size,
            noise,
            seed,
            manifest,
            out,
        } => {
            let spec = SyntheticSpec {
                height: size,
                width: size,
                noise,
                ..SyntheticSpec::evenly_oriented(families, per_family, domain, seed)
            };
            let m = gen_corpus(&[spec], &out, &manifest)?;
            log::info!(
                "wrote {} images, {} classes, manifest {}",
                m.records.len(),
                m.num_classes(domain),
                out.join(&manifest).display()
            );
            Ok(())
        }
    }
}

/// Parses arguments, sets up logging and threads, runs, and maps errors to
/// exit codes.
pub fn main_with_args(args: impl IntoIterator<Item = std::ffi::OsString>) -> i32 {
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .target(env_logger::Target::Stderr)
        .try_init();
    let result = resolve_threads(cli.threads).and_then(|threads| {
        if let Some(n) = threads {
            if n == 0 {
                return Err(Error::Config(vec!["--threads must be >= 1".into()]));
            }
            rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global()
                .map_err(|e| Error::InvalidParameter(format!("thread pool: {e}")))?;
        }
        run(cli)
    });
    match result {
        Ok(()) => 0,
        Err(e) => {
            let cat = e.category();
            match &e {
                Error::Config(problems) => {
                    eprintln!("error[{}]: invalid configuration:", cat.as_str());
                    for p in problems {
                        eprintln!("  - {p}");
                    }
                }
                _ => eprintln!("error[{}]: {e}", cat.as_str()),
            }
            cat.exit_code()
        }
    }
}
