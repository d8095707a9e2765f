//! Dataset ingestion: line-oriented manifests and grayscale image decoding.
//!
//! A manifest line is `<relative-path>\t<label>\t<source|target>`; `#` starts
//! a comment line. Sample indices are assigned per domain in file order.

use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use ndarray::Array2;
use rayon::prelude::*;

use crate::codec;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Domain {
    Source,
    Target,
}

impl Domain {
    pub fn as_str(self) -> &'static str {
        match self {
            Domain::Source => "source",
            Domain::Target => "target",
        }
    }

    fn slot(self) -> usize {
        match self {
            Domain::Source => 0,
            Domain::Target => 1,
        }
    }
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Domain {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "source" => Ok(Domain::Source),
            "target" => Ok(Domain::Target),
            other => Err(format!("unknown domain `{other}`")),
        }
    }
}

/// Identifies one image of one domain. Printed as `s:<index>` / `t:<index>`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SampleId {
    pub domain: Domain,
    pub index: u32,
}

impl SampleId {
    pub fn source(index: u32) -> Self {
        Self {
            domain: Domain::Source,
            index,
        }
    }

    pub fn target(index: u32) -> Self {
        Self {
            domain: Domain::Target,
            index,
        }
    }
}

impl fmt::Display for SampleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = match self.domain {
            Domain::Source => 's',
            Domain::Target => 't',
        };
        write!(f, "{tag}:{}", self.index)
    }
}

impl FromStr for SampleId {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        let (tag, idx) = s
            .split_once(':')
            .ok_or_else(|| format!("malformed sample id `{s}`"))?;
        let domain = match tag {
            "s" => Domain::Source,
            "t" => Domain::Target,
            _ => return Err(format!("malformed sample id `{s}`")),
        };
        let index = idx
            .parse()
            .map_err(|_| format!("malformed sample id `{s}`"))?;
        Ok(SampleId { domain, index })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestRecord {
    /// Path as written in the manifest, relative to the manifest directory.
    pub path: PathBuf,
    pub label: usize,
    pub domain: Domain,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Manifest {
    pub base_dir: PathBuf,
    pub records: Vec<ManifestRecord>,
    classes: [usize; 2],
    // records[by_domain[d][i]] is sample i of domain d
    by_domain: [Vec<usize>; 2],
}

impl Manifest {
    pub fn new(base_dir: impl Into<PathBuf>, records: Vec<ManifestRecord>) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::EmptyManifest);
        }
        let mut by_domain: [Vec<usize>; 2] = [Vec::new(), Vec::new()];
        let mut labels: [BTreeSet<usize>; 2] = [BTreeSet::new(), BTreeSet::new()];
        for (i, r) in records.iter().enumerate() {
            by_domain[r.domain.slot()].push(i);
            labels[r.domain.slot()].insert(r.label);
        }
        let mut classes = [0; 2];
        for domain in [Domain::Source, Domain::Target] {
            let set = &labels[domain.slot()];
            let Some(&max) = set.iter().next_back() else {
                continue;
            };
            let missing: Vec<usize> = (0..max).filter(|l| !set.contains(l)).collect();
            if !missing.is_empty() {
                return Err(Error::LabelsNotDense {
                    domain: domain.to_string(),
                    missing,
                });
            }
            classes[domain.slot()] = max + 1;
        }
        Ok(Self {
            base_dir: base_dir.into(),
            records,
            classes,
            by_domain,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::parse(&text, base, path)
    }

    /// Parses manifest text; `origin` is only used in error messages.
    pub fn parse(text: &str, base_dir: impl Into<PathBuf>, origin: &Path) -> Result<Self> {
        let mut records = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |msg: String| Error::Parse {
                path: origin.to_path_buf(),
                line: lineno + 1,
                msg,
            };
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 3 {
                return Err(err(format!("expected 3 tab-separated fields, found {}", fields.len())));
            }
            let label = fields[1]
                .trim()
                .parse::<usize>()
                .map_err(|_| err(format!("bad label `{}`", fields[1])))?;
            let domain = fields[2].trim().parse::<Domain>().map_err(err)?;
            records.push(ManifestRecord {
                path: PathBuf::from(fields[0]),
                label,
                domain,
            });
        }
        Self::new(base_dir, records)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from("# path\tlabel\tdomain\n");
        for r in &self.records {
            out.push_str(&format!("{}\t{}\t{}\n", r.path.display(), r.label, r.domain));
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        codec::write_atomic(path, self.to_text().as_bytes())
    }

    pub fn num_classes(&self, domain: Domain) -> usize {
        self.classes[domain.slot()]
    }

    pub fn len(&self, domain: Domain) -> usize {
        self.by_domain[domain.slot()].len()
    }

    pub fn ids(&self, domain: Domain) -> impl Iterator<Item = SampleId> + '_ {
        (0..self.len(domain) as u32).map(move |index| SampleId { domain, index })
    }

    pub fn record(&self, id: SampleId) -> Result<&ManifestRecord> {
        self.by_domain[id.domain.slot()]
            .get(id.index as usize)
            .map(|&i| &self.records[i])
            .ok_or(Error::UnknownSample(id))
    }

    pub fn resolve(&self, record: &ManifestRecord) -> PathBuf {
        self.base_dir.join(&record.path)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledImage {
    pub id: SampleId,
    /// Row-major intensities in `[0, 1]`.
    pub pixels: Array2<f64>,
    pub label: usize,
}

impl LabeledImage {
    pub fn height(&self) -> usize {
        self.pixels.nrows()
    }

    pub fn width(&self) -> usize {
        self.pixels.ncols()
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct LoadOptions {
    /// Smallest accepted image, normally the largest kernel of the bank.
    pub min_size: (usize, usize),
    /// Optional fixed `(width, height)` resize applied after decoding.
    pub resize: Option<(u32, u32)>,
}

/// BT.601 luma weights; they sum to one so gray stays gray.
pub fn luminance(r: f64, g: f64, b: f64) -> f64 {
    (0.299 * r + 0.587 * g + 0.114 * b).clamp(0.0, 1.0)
}

pub fn to_intensity(img: &image::DynamicImage) -> Array2<f64> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    if img.color().has_color() {
        let rgb = img.to_rgb32f();
        let data = rgb
            .pixels()
            .map(|p| luminance(p[0] as f64, p[1] as f64, p[2] as f64))
            .collect();
        Array2::from_shape_vec((h, w), data).expect("raster shape")
    } else {
        let gray = img.to_luma32f();
        let data = gray.pixels().map(|p| (p[0] as f64).clamp(0.0, 1.0)).collect();
        Array2::from_shape_vec((h, w), data).expect("raster shape")
    }
}

pub fn load_image(manifest: &Manifest, id: SampleId, opts: &LoadOptions) -> Result<LabeledImage> {
    let record = manifest.record(id)?;
    let path = manifest.resolve(record);
    let mut img = image::open(&path).map_err(|e| Error::Decode {
        path: path.clone(),
        msg: e.to_string(),
    })?;
    if let Some((w, h)) = opts.resize {
        img = img.resize_exact(w, h, image::imageops::FilterType::Triangle);
    }
    let pixels = to_intensity(&img);
    check_size(&pixels, opts.min_size)?;
    Ok(LabeledImage {
        id,
        pixels,
        label: record.label,
    })
}

pub fn check_size(pixels: &Array2<f64>, (kh, kw): (usize, usize)) -> Result<()> {
    if pixels.nrows() < kh || pixels.ncols() < kw {
        return Err(Error::ImageTooSmall {
            image_h: pixels.nrows(),
            image_w: pixels.ncols(),
            kernel_h: kh,
            kernel_w: kw,
        });
    }
    Ok(())
}

/// Decodes every image of `domain`, in sample-index order.
pub fn load_domain(manifest: &Manifest, domain: Domain, opts: &LoadOptions) -> Result<Vec<LabeledImage>> {
    let ids: Vec<SampleId> = manifest.ids(domain).collect();
    ids.par_iter().map(|&id| load_image(manifest, id, opts)).collect()
}
