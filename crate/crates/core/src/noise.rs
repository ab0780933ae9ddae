//! Real-world noise sampling and displacement.
//!
//! A frame is tiled into `grid x grid` regions; a region qualifies as
//! noise-prone when its variance and mean are both strictly positive and
//! strictly below the configured maxima. One qualifying region is cropped
//! and resized to the full frame to form a noise field, which is then
//! alpha-blended into training images.
//!
//! All statistics and blending run in the unit working scale (`v / 255`).

use rand::Rng;

use crate::error::{Error, Result};
use crate::imaging::{check_same_dims, to_byte, to_unit, GrayImage, Rect};

/// Sampling-gate configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSamplerConfig {
    /// Regions per side; the frame is tiled into `grid * grid` regions.
    pub grid: u32,
    /// Maximum region variance (exclusive), working-scale intensity squared.
    pub var_max: f64,
    /// Maximum region mean (exclusive), working-scale intensity.
    pub mean_max: f64,
    /// Number of noise sampling images drawn from the corpus.
    pub n_sources: usize,
}

impl NoiseSamplerConfig {
    pub const DEFAULT_GRID: u32 = 8;

    pub fn new(grid: u32, var_max: f64, mean_max: f64, n_sources: usize) -> Result<Self> {
        let cfg = NoiseSamplerConfig { grid, var_max, mean_max, n_sources };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.grid < 1 {
            return Err(Error::InvalidConfig("grid must be at least 1".into()));
        }
        if !(self.var_max > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "var_max must be positive, got {}",
                self.var_max
            )));
        }
        if !(self.mean_max > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "mean_max must be positive, got {}",
                self.mean_max
            )));
        }
        if self.n_sources < 1 {
            return Err(Error::InvalidConfig("n_sources must be at least 1".into()));
        }
        Ok(())
    }
}

/// Population statistics of one sampling region.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegionStats {
    pub rect: Rect,
    pub mean: f64,
    pub variance: f64,
}

/// Full-frame noise field plus the provenance of the region it came from.
#[derive(Debug, Clone)]
pub struct NoiseField {
    pub image: GrayImage,
    pub source_id: String,
    pub source_rect: Rect,
}

/// Tile the frame into `grid x grid` rects. Remainder pixels of dimensions
/// not divisible by the grid go to the last row/column of rects, so the
/// tiling covers every pixel exactly once.
pub fn partition_regions(img: &GrayImage, cfg: &NoiseSamplerConfig) -> Result<Vec<Rect>> {
    let (w, h) = img.dimensions();
    let grid = cfg.grid;
    if w < grid || h < grid {
        return Err(Error::GridTooFine { width: w, height: h, grid });
    }
    let cell_w = w / grid;
    let cell_h = h / grid;
    let mut rects = Vec::with_capacity((grid * grid) as usize);
    for gy in 0..grid {
        let y = gy * cell_h;
        let rh = if gy == grid - 1 { h - y } else { cell_h };
        for gx in 0..grid {
            let x = gx * cell_w;
            let rw = if gx == grid - 1 { w - x } else { cell_w };
            rects.push(Rect::new(x, y, rw, rh));
        }
    }
    Ok(rects)
}

/// Population mean and variance over a region, in the unit working scale.
///
/// Sums are accumulated over the raw 8-bit values, so `n*sum_sq - sum^2`
/// is exact in integer arithmetic and only the final division rounds.
pub fn region_stats(img: &GrayImage, r: Rect) -> Result<RegionStats> {
    let patch = img.crop(r)?;
    let mut sum: u64 = 0;
    let mut sum_sq: u64 = 0;
    for &v in patch.data() {
        sum += v as u64;
        sum_sq += (v as u64) * (v as u64);
    }
    let n = patch.data().len() as u64;
    let mean = sum as f64 / (255.0 * n as f64);
    let numer = (n as u128) * (sum_sq as u128) - (sum as u128) * (sum as u128);
    let variance = numer as f64 / ((n as f64) * (n as f64) * 255.0 * 255.0);
    Ok(RegionStats { rect: r, mean, variance })
}

/// The noise-prone gate: strictly positive and strictly below both maxima.
pub fn qualifies(stats: &RegionStats, cfg: &NoiseSamplerConfig) -> bool {
    stats.variance > 0.0
        && stats.variance < cfg.var_max
        && stats.mean > 0.0
        && stats.mean < cfg.mean_max
}

/// Scan the frame for noise-prone regions and build a full-frame noise
/// field from one of them, chosen uniformly via `rng`.
///
/// "No qualifying region" is a value, not an error: frames that are all
/// texture (or smaller than the grid) yield `None`.
pub fn select_noise_prone(
    img: &GrayImage,
    source_id: &str,
    cfg: &NoiseSamplerConfig,
    rng: &mut impl Rng,
) -> Option<NoiseField> {
    let rects = partition_regions(img, cfg).ok()?;
    let qualifying: Vec<Rect> = rects
        .into_iter()
        .filter(|&r| {
            region_stats(img, r).map(|s| qualifies(&s, cfg)).unwrap_or(false)
        })
        .collect();
    if qualifying.is_empty() {
        return None;
    }
    let rect = qualifying[rng.gen_range(0..qualifying.len())];
    let patch = img.crop(rect).expect("qualifying rect is in bounds");
    let (w, h) = img.dimensions();
    let image = patch.resize_bilinear(w, h).expect("frame dims are nonzero");
    Some(NoiseField { image, source_id: source_id.to_string(), source_rect: rect })
}

/// Blend a noise field into an image: per-pixel convex combination
/// `alpha * noise + (1 - alpha) * input` in working scale, clamped to
/// [0, 1] and re-quantized.
///
/// `alpha = 0` reproduces the input bit-exactly and `alpha = 1` the noise
/// field; multiplication by exact 0 and 1 never rounds.
pub fn displace(input: &GrayImage, noise: &NoiseField, alpha: f64) -> Result<GrayImage> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::AlphaOutOfRange(alpha));
    }
    check_same_dims(input.dimensions(), noise.image.dimensions())?;
    let data = input
        .data()
        .iter()
        .zip(noise.image.data())
        .map(|(&i, &n)| to_byte(alpha * to_unit(n) + (1.0 - alpha) * to_unit(i)))
        .collect();
    GrayImage::new(input.width(), input.height(), data)
}

/// Data-driven gate thresholds for a corpus: the 25th percentile of all
/// region variances and the 50th percentile of all region means. Used when
/// no explicit maxima are configured; sensor ranges vary too much for a
/// fixed constant to be meaningful.
pub fn derive_thresholds(images: &[GrayImage], grid: u32) -> Result<(f64, f64)> {
    if images.is_empty() {
        return Err(Error::EmptyInput("no images to derive noise thresholds from".into()));
    }
    let probe = NoiseSamplerConfig { grid, var_max: 1.0, mean_max: 1.0, n_sources: 1 };
    let mut variances = Vec::new();
    let mut means = Vec::new();
    for img in images {
        for rect in partition_regions(img, &probe)? {
            let stats = region_stats(img, rect)?;
            variances.push(stats.variance);
            means.push(stats.mean);
        }
    }
    Ok((percentile(&mut variances, 25.0), percentile(&mut means, 50.0)))
}

/// Linear-interpolation percentile over `values` (sorted in place).
fn percentile(values: &mut [f64], p: f64) -> f64 {
    assert!(!values.is_empty());
    values.sort_by(|a, b| a.partial_cmp(b).expect("stats are finite"));
    let rank = (p / 100.0) * (values.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    let frac = rank - lo as f64;
    values[lo] + frac * (values[hi] - values[lo])
}
