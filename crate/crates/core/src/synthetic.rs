//! Procedural oriented-sinusoid textures for demos and tests.
//!
//! Family `j` renders `0.5 + 0.4 sin(2 pi f (x cos t + y sin t) + phase)` plus
//! Gaussian pixel noise. Per image, the phase is uniform; orientation and
//! log-frequency are jittered by the family's jitter scaled by `noise`, so
//! at `noise = 0` images of one family differ only in phase.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Domain, Manifest, ManifestRecord};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TextureFamily {
    /// Radians, measured from the x axis.
    pub orientation: f64,
    /// Cycles per pixel.
    pub frequency: f64,
    /// Orientation std (radians) at `noise = 1`.
    pub orientation_jitter: f64,
    /// Std of `ln f` at `noise = 1`.
    pub frequency_jitter: f64,
}

impl TextureFamily {
    pub fn new(orientation: f64, frequency: f64) -> Self {
        Self {
            orientation,
            frequency,
            orientation_jitter: 0.3,
            frequency_jitter: 0.3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TextureParams {
    pub orientation: f64,
    pub frequency: f64,
    pub phase: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub families: Vec<TextureFamily>,
    pub per_family: usize,
    pub height: usize,
    pub width: usize,
    /// Pixel noise std; also scales parameter jitter.
    pub noise: f64,
    pub seed: u64,
    pub domain: Domain,
    /// Filename prefix, so several corpora can share a directory.
    pub prefix: String,
}

impl SyntheticSpec {
    /// `families` orientations evenly spread over `[0, pi)` at one frequency.
    pub fn evenly_oriented(families: usize, per_family: usize, domain: Domain, seed: u64) -> Self {
        Self {
            families: (0..families)
                .map(|j| TextureFamily::new(j as f64 * PI / families as f64, 0.2))
                .collect(),
            per_family,
            height: 40,
            width: 40,
            noise: 0.2,
            seed,
            domain,
            prefix: domain.as_str().to_string(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.families.is_empty() {
            problems.push("at least one family is required".to_string());
        }
        if self.per_family == 0 {
            problems.push("per-family count must be >= 1".to_string());
        }
        if self.height < 2 || self.width < 2 {
            problems.push(format!("image size {}x{} is too small", self.height, self.width));
        }
        if !(self.noise.is_finite() && self.noise >= 0.0) {
            problems.push(format!("noise must be a non-negative number, got {}", self.noise));
        }
        for (j, f) in self.families.iter().enumerate() {
            if !(f.frequency.is_finite() && f.frequency > 0.0 && f.frequency <= 0.5) {
                problems.push(format!("family {j}: frequency {} outside (0, 0.5]", f.frequency));
            }
            if !(f.orientation.is_finite() && f.orientation_jitter >= 0.0 && f.frequency_jitter >= 0.0) {
                problems.push(format!("family {j}: invalid orientation or jitter"));
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems))
        }
    }
}

fn image_rng(seed: u64, domain: Domain, family: usize, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = match domain {
        Domain::Source => 0u64,
        Domain::Target => 1,
    };
    rng.set_stream((d << 62) | ((family as u64) << 32) | index as u64);
    rng
}

pub fn sample_params(family: &TextureFamily, noise: f64, rng: &mut impl Rng) -> TextureParams {
    let phase = rng.random_range(0.0..2.0 * PI);
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");
    let dt: f64 = std_normal.sample(rng);
    let df: f64 = std_normal.sample(rng);
    TextureParams {
        orientation: family.orientation + noise * family.orientation_jitter * dt,
        frequency: (family.frequency * (noise * family.frequency_jitter * df).exp()).min(0.5),
        phase,
    }
}

/// Noise-free texture in `[0.1, 0.9]`.
pub fn render(p: &TextureParams, height: usize, width: usize) -> Array2<f64> {
    let (s, c) = p.orientation.sin_cos();
    let w = 2.0 * PI * p.frequency;
    Array2::from_shape_fn((height, width), |(y, x)| {
        0.5 + 0.4 * (w * (x as f64 * c + y as f64 * s) + p.phase).sin()
    })
}

/// Renders one image with pixel noise, quantized to 8 bits.
pub fn generate_image(family: &TextureFamily, spec: &SyntheticSpec, family_index: usize, index: usize) -> Vec<u8> {
    let mut rng = image_rng(spec.seed, spec.domain, family_index, index);
    let params = sample_params(family, spec.noise, &mut rng);
    let clean = render(&params, spec.height, spec.width);
    let pixel = Normal::new(0.0, 1.0).expect("unit normal");
    clean
        .iter()
        .map(|&v| {
            let n: f64 = if spec.noise > 0.0 { spec.noise * pixel.sample(&mut rng) } else { 0.0 };
            ((v + n).clamp(0.0, 1.0) * 255.0).round() as u8
        })
        .collect()
}

fn encode_png(pixels: &[u8], width: usize, height: usize) -> Vec<u8> {
    use image::ImageEncoder;
    let mut out = Vec::new();
    image::codecs::png::PngEncoder::new(&mut out)
        .write_image(pixels, width as u32, height as u32, image::ExtendedColorType::L8)
        .expect("in-memory PNG encoding");
    out
}

/// Writes `images/<prefix>_<family>_<index>.png` under `out_dir` and returns
/// the records (paths relative to `out_dir`), family `j` labeled `j`.
pub fn gen_synthetic(spec: &SyntheticSpec, out_dir: &Path) -> Result<Vec<ManifestRecord>> {
    spec.validate()?;
    let img_dir = out_dir.join("images");
    std::fs::create_dir_all(&img_dir).map_err(|e| Error::io(&img_dir, e))?;
    let jobs: Vec<(usize, usize)> = (0..spec.families.len())
        .flat_map(|j| (0..spec.per_family).map(move |i| (j, i)))
        .collect();
    jobs.par_iter()
        .map(|&(j, i)| {
            let rel = PathBuf::from("images").join(format!("{}_{j:02}_{i:04}.png", spec.prefix));
            let bytes = encode_png(&generate_image(&spec.families[j], spec, j, i), spec.width, spec.height);
            crate::codec::write_atomic(&out_dir.join(&rel), &bytes)?;
            Ok(ManifestRecord {
                path: rel,
                label: j,
                domain: spec.domain,
            })
        })
        .collect()
}

/// Generates every spec into `out_dir` and writes one manifest listing them.
pub fn gen_corpus(specs: &[SyntheticSpec], out_dir: &Path, manifest_name: &str) -> Result<Manifest> {
    let mut records = Vec::new();
    for s in specs {
        records.extend(gen_synthetic(s, out_dir)?);
    }
    let manifest = Manifest::new(out_dir, records)?;
    manifest.write(&out_dir.join(manifest_name))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{load_domain, LoadOptions};

    #[test]
    fn noise_free_images_differ_only_in_phase() {
        let fam = TextureFamily::new(0.7, 0.15);
        let mut rng = image_rng(5, Domain::Source, 0, 0);
        let a = sample_params(&fam, 0.0, &mut rng);
        let mut rng = image_rng(5, Domain::Source, 0, 1);
        let b = sample_params(&fam, 0.0, &mut rng);
        assert_eq!((a.orientation, a.frequency), (b.orientation, b.frequency));
        assert_ne!(a.phase, b.phase);

        let spec = SyntheticSpec {
            noise: 0.0,
            ..SyntheticSpec::evenly_oriented(1, 2, Domain::Source, 5)
        };
        let img = generate_image(&fam, &spec, 0, 1);
        let clean = render(&b, spec.height, spec.width);
        for (q, v) in img.iter().zip(clean.iter()) {
            assert_eq!(*q, (v * 255.0).round() as u8);
        }
    }

    #[test]
    fn corpus_counts_and_determinism() {
        let dir = tempfile::tempdir().unwrap();
        let spec = SyntheticSpec {
            height: 12,
            width: 12,
            ..SyntheticSpec::evenly_oriented(4, 5, Domain::Target, 9)
        };
        let m = gen_corpus(std::slice::from_ref(&spec), dir.path(), "m.tsv").unwrap();
        assert_eq!(m.len(Domain::Target), 20);
        assert_eq!(m.num_classes(Domain::Target), 4);
        let first = std::fs::read(dir.path().join("images/target_03_0004.png")).unwrap();
        let dir2 = tempfile::tempdir().unwrap();
        gen_corpus(&[spec], dir2.path(), "m.tsv").unwrap();
        assert_eq!(first, std::fs::read(dir2.path().join("images/target_03_0004.png")).unwrap());
        assert_eq!(
            std::fs::read(dir.path().join("m.tsv")).unwrap(),
            std::fs::read(dir2.path().join("m.tsv")).unwrap()
        );
        let loaded = Manifest::load(&dir.path().join("m.tsv")).unwrap();
        let imgs = load_domain(&loaded, Domain::Target, &LoadOptions::default()).unwrap();
        assert_eq!(imgs[7].label, 1);
        assert_eq!(imgs[7].pixels.dim(), (12, 12));
    }

    #[test]
    fn invalid_spec_lists_all_problems() {
        let spec = SyntheticSpec {
            per_family: 0,
            noise: -1.0,
            ..SyntheticSpec::evenly_oriented(2, 1, Domain::Source, 0)
        };
        match spec.validate() {
            Err(Error::Config(p)) => assert_eq!(p.len(), 2),
            other => panic!("{other:?}"),
        }
    }
}
