//! Filter banks and their response maps.
//!
//! A bank is an ordered list of layers; each layer holds kernels of one
//! spatial size plus an optional rectification. Responses are valid-mode 2-D
//! cross-correlations, so a `h x w` image and a `kh x kw` kernel give a
//! `(h - kh + 1) x (w - kw + 1)` map.

mod bankfile;
mod gabor;

pub use bankfile::{load_kernel_bank, parse_kernel_bank, save_kernel_bank, serialize_kernel_bank, BANK_VERSION};
pub use gabor::{build_gabor_bank, GaborConfig, GaborParams};

use ndarray::Array2;
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::corpus::{check_size, LabeledImage};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Nonlinearity {
    None,
    RectifyAtZero,
}

impl Nonlinearity {
    pub(crate) fn code(self) -> u8 {
        match self {
            Nonlinearity::None => 0,
            Nonlinearity::RectifyAtZero => 1,
        }
    }

    pub(crate) fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Nonlinearity::None),
            1 => Some(Nonlinearity::RectifyAtZero),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterLayer {
    name: String,
    kernels: Vec<Array2<f64>>,
    nonlinearity: Nonlinearity,
    /// Channel count of the kernels as originally stored, before averaging.
    source_channels: u32,
}

impl FilterLayer {
    pub fn new(name: impl Into<String>, kernels: Vec<Array2<f64>>, nonlinearity: Nonlinearity) -> Result<Self> {
        let name = name.into();
        let Some(first) = kernels.first() else {
            return Err(Error::DimensionMismatch(format!("layer `{name}` has no kernels")));
        };
        let dim = first.dim();
        if dim.0 == 0 || dim.1 == 0 {
            return Err(Error::DimensionMismatch(format!("layer `{name}` has empty kernels")));
        }
        for (i, k) in kernels.iter().enumerate() {
            if k.dim() != dim {
                return Err(Error::DimensionMismatch(format!(
                    "layer `{name}` kernel {i} is {:?}, expected {dim:?}",
                    k.dim()
                )));
            }
            if k.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("layer `{name}` kernel {i}")));
            }
        }
        Ok(Self {
            name,
            kernels,
            nonlinearity,
            source_channels: 1,
        })
    }

    pub(crate) fn with_source_channels(mut self, channels: u32) -> Self {
        self.source_channels = channels;
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn kernels(&self) -> &[Array2<f64>] {
        &self.kernels
    }

    /// `N_h`, the number of kernels in this layer.
    pub fn len(&self) -> usize {
        self.kernels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kernels.is_empty()
    }

    pub fn nonlinearity(&self) -> Nonlinearity {
        self.nonlinearity
    }

    pub fn source_channels(&self) -> u32 {
        self.source_channels
    }

    pub fn kernel_dim(&self) -> (usize, usize) {
        self.kernels[0].dim()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterBank {
    layers: Vec<FilterLayer>,
}

impl FilterBank {
    pub fn new(layers: Vec<FilterLayer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::DimensionMismatch("filter bank has no layers".into()));
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[FilterLayer] {
        &self.layers
    }

    /// Total filter count `D`.
    pub fn len(&self) -> usize {
        self.layers.iter().map(FilterLayer::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        self.layers.iter().map(FilterLayer::len).collect()
    }

    /// Largest kernel height and width over all layers.
    pub fn max_kernel_dim(&self) -> (usize, usize) {
        self.layers.iter().fold((0, 0), |(h, w), l| {
            let (kh, kw) = l.kernel_dim();
            (h.max(kh), w.max(kw))
        })
    }

    /// Kernels in bank order, each with the nonlinearity of its layer.
    pub fn filters(&self) -> impl Iterator<Item = (&Array2<f64>, Nonlinearity)> {
        self.layers
            .iter()
            .flat_map(|l| l.kernels.iter().map(move |k| (k, l.nonlinearity)))
    }

    /// SHA-256 over layer structure and the exact kernel bits.
    pub fn fingerprint(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update((self.layers.len() as u64).to_le_bytes());
        for l in &self.layers {
            h.update((l.name.len() as u64).to_le_bytes());
            h.update(l.name.as_bytes());
            h.update([l.nonlinearity.code()]);
            let (kh, kw) = l.kernel_dim();
            for v in [l.kernels.len(), kh, kw] {
                h.update((v as u64).to_le_bytes());
            }
            for k in &l.kernels {
                for v in k.iter() {
                    h.update(v.to_bits().to_le_bytes());
                }
            }
        }
        let digest = h.finalize();
        let mut out = [0u8; 32];
        out.copy_from_slice(&digest);
        out
    }
}

/// Valid-mode cross-correlation: `out[r][c] = sum_ij img[r+i][c+j] * k[i][j]`.
///
/// Terms are accumulated in row-major kernel order for every output pixel, so
/// the result is bit-identical to the naive quadruple loop.
pub fn correlate_valid(img: &Array2<f64>, kernel: &Array2<f64>) -> Result<Array2<f64>> {
    check_size(img, kernel.dim())?;
    let (ih, iw) = img.dim();
    let (kh, kw) = kernel.dim();
    let (oh, ow) = (ih - kh + 1, iw - kw + 1);
    let img = img.as_standard_layout();
    let kernel = kernel.as_standard_layout();
    let src = img.as_slice().expect("standard layout");
    let k = kernel.as_slice().expect("standard layout");

    let mut out = vec![0.0; oh * ow];
    for (r, orow) in out.chunks_exact_mut(ow).enumerate() {
        for i in 0..kh {
            let irow = &src[(r + i) * iw..(r + i + 1) * iw];
            for j in 0..kw {
                let w = k[i * kw + j];
                for (o, &x) in orow.iter_mut().zip(&irow[j..j + ow]) {
                    *o += x * w;
                }
            }
        }
    }
    Ok(Array2::from_shape_vec((oh, ow), out).expect("output shape"))
}

fn apply(map: &mut Array2<f64>, nl: Nonlinearity) {
    if nl == Nonlinearity::RectifyAtZero {
        map.mapv_inplace(|v| v.max(0.0));
    }
}

/// Response maps of `pixels` to every filter of `bank`, in bank order.
pub fn respond_pixels(pixels: &Array2<f64>, bank: &FilterBank) -> Result<Vec<Array2<f64>>> {
    check_size(pixels, bank.max_kernel_dim())?;
    let filters: Vec<_> = bank.filters().collect();
    filters
        .par_iter()
        .map(|(k, nl)| {
            let mut m = correlate_valid(pixels, k)?;
            apply(&mut m, *nl);
            Ok(m)
        })
        .collect()
}

pub fn respond(image: &LabeledImage, bank: &FilterBank) -> Result<Vec<Array2<f64>>> {
    respond_pixels(&image.pixels, bank)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn naive(img: &Array2<f64>, k: &Array2<f64>) -> Array2<f64> {
        let (ih, iw) = img.dim();
        let (kh, kw) = k.dim();
        let mut out = Array2::zeros((ih - kh + 1, iw - kw + 1));
        for r in 0..ih - kh + 1 {
            for c in 0..iw - kw + 1 {
                let mut s = 0.0;
                for i in 0..kh {
                    for j in 0..kw {
                        s += img[[r + i, c + j]] * k[[i, j]];
                    }
                }
                out[[r, c]] = s;
            }
        }
        out
    }

    fn random(rng: &mut ChaCha8Rng, h: usize, w: usize, lo: f64, hi: f64) -> Array2<f64> {
        Array2::from_shape_fn((h, w), |_| rng.random_range(lo..hi))
    }

    #[test]
    fn small_random_matches_double_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let img = random(&mut rng, 8, 8, 0.0, 1.0);
        let k = random(&mut rng, 3, 3, -1.0, 1.0);
        let out = correlate_valid(&img, &k).unwrap();
        assert_eq!(out.dim(), (6, 6));
        let oracle = naive(&img, &k);
        for (a, b) in out.iter().zip(oracle.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn identity_kernel_returns_valid_region() {
        let id = array![[0.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 0.0]];
        let layer = FilterLayer::new("id", vec![id], Nonlinearity::RectifyAtZero).unwrap();
        let bank = FilterBank::new(vec![layer]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let img = random(&mut rng, 7, 9, 0.0, 1.0);
        let maps = respond_pixels(&img, &bank).unwrap();
        assert_eq!(maps.len(), 1);
        assert_eq!(maps[0], img.slice(ndarray::s![1..6, 1..8]).to_owned());
    }

    #[test]
    fn rectification_clamps_negatives() {
        let neg = array![[-1.0]];
        let bank = FilterBank::new(vec![
            FilterLayer::new("lin", vec![neg.clone()], Nonlinearity::None).unwrap(),
            FilterLayer::new("relu", vec![neg], Nonlinearity::RectifyAtZero).unwrap(),
        ])
        .unwrap();
        let img = Array2::from_elem((2, 2), 0.5);
        let maps = respond_pixels(&img, &bank).unwrap();
        assert!(maps[0].iter().all(|&v| v == -0.5));
        assert!(maps[1].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn too_small_image() {
        let k = Array2::zeros((5, 5));
        let img = Array2::zeros((4, 9));
        assert!(matches!(correlate_valid(&img, &k), Err(Error::ImageTooSmall { .. })));
    }

    #[test]
    fn layer_validation() {
        let err = FilterLayer::new("x", vec![Array2::zeros((3, 3)), Array2::zeros((3, 2))], Nonlinearity::None)
            .unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch(_)));
        let err = FilterLayer::new("x", vec![array![[f64::NAN]]], Nonlinearity::None).unwrap_err();
        assert!(matches!(err, Error::NonFinite(_)));
        assert!(FilterLayer::new("x", vec![], Nonlinearity::None).is_err());
        assert!(FilterBank::new(vec![]).is_err());
    }

    #[test]
    fn fingerprint_tracks_content() {
        let a = FilterBank::new(vec![FilterLayer::new("a", vec![array![[1.0]]], Nonlinearity::None).unwrap()]).unwrap();
        let b = FilterBank::new(vec![FilterLayer::new("a", vec![array![[2.0]]], Nonlinearity::None).unwrap()]).unwrap();
        let c = FilterBank::new(vec![FilterLayer::new("a", vec![array![[1.0]]], Nonlinearity::RectifyAtZero).unwrap()])
            .unwrap();
        assert_eq!(a.fingerprint(), a.clone().fingerprint());
        assert_ne!(a.fingerprint(), b.fingerprint());
        assert_ne!(a.fingerprint(), c.fingerprint());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]

            #[test]
            fn linear_layers_are_linear(seed in any::<u64>(), a in -2.0f64..2.0, b in -2.0f64..2.0,
                                        h in 5usize..14, w in 5usize..14, kh in 1usize..5, kw in 1usize..5) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let i1 = random(&mut rng, h, w, 0.0, 1.0);
                let i2 = random(&mut rng, h, w, 0.0, 1.0);
                let k = random(&mut rng, kh, kw, -1.0, 1.0);
                let mix = &i1 * a + &i2 * b;
                let lhs = correlate_valid(&mix, &k).unwrap();
                let rhs = correlate_valid(&i1, &k).unwrap() * a + correlate_valid(&i2, &k).unwrap() * b;
                for (x, y) in lhs.iter().zip(rhs.iter()) {
                    prop_assert!((x - y).abs() < 1e-9);
                }
            }

            #[test]
            fn matches_oracle(seed in any::<u64>(), h in 1usize..16, w in 1usize..16, kh in 1usize..6, kw in 1usize..6) {
                prop_assume!(kh <= h && kw <= w);
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let img = random(&mut rng, h, w, 0.0, 1.0);
                let k = random(&mut rng, kh, kw, -1.0, 1.0);
                let out = correlate_valid(&img, &k).unwrap();
                let oracle = naive(&img, &k);
                prop_assert_eq!(out.dim(), oracle.dim());
                for (x, y) in out.iter().zip(oracle.iter()) {
                    prop_assert!((x - y).abs() < 1e-12);
                }
            }
        }
    }
}
