//! Raster types, lossless image/mask I/O, and the geometric primitives
//! (crop, paste, resize, right-angle rotation) every pipeline stage consumes.
//!
//! Pixels live on disk as 8-bit intensities (masks encoded 0/255). All
//! sub-integer arithmetic elsewhere in the crate happens in the unit
//! working scale `v / 255`, and results are re-quantized with
//! round-half-away-from-zero when they land back in a raster.

use std::fmt;
use std::path::Path;

use crate::error::{Error, Result};

/// Map an 8-bit intensity into the unit working scale.
#[inline]
pub fn to_unit(v: u8) -> f64 {
    f64::from(v) / 255.0
}

/// Quantize a working-scale value back to 8 bits, rounding half away from zero.
#[inline]
pub fn to_byte(w: f64) -> u8 {
    (w.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Axis-aligned pixel region; `(x, y)` is the top-left corner.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Rect {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
}

impl Rect {
    pub fn new(x: u32, y: u32, w: u32, h: u32) -> Self {
        Rect { x, y, w, h }
    }

    /// True when the two rects share at least one pixel.
    pub fn intersects(&self, other: &Rect) -> bool {
        let (ax1, ay1) = (self.x as u64 + self.w as u64, self.y as u64 + self.h as u64);
        let (bx1, by1) = (other.x as u64 + other.w as u64, other.y as u64 + other.h as u64);
        (self.x as u64) < bx1 && (other.x as u64) < ax1 && (self.y as u64) < by1 && (other.y as u64) < ay1
    }

    pub fn contains(&self, x: u32, y: u32) -> bool {
        x >= self.x && y >= self.y && (x as u64) < self.x as u64 + self.w as u64 && (y as u64) < self.y as u64 + self.h as u64
    }

    pub fn area(&self) -> u64 {
        self.w as u64 * self.h as u64
    }

    fn check_within(&self, width: u32, height: u32) -> Result<()> {
        let fits = self.w > 0
            && self.h > 0
            && self.x as u64 + self.w as u64 <= width as u64
            && self.y as u64 + self.h as u64 <= height as u64;
        if fits {
            Ok(())
        } else {
            Err(Error::RectOutOfBounds { rect: *self, width, height })
        }
    }
}

impl fmt::Display for Rect {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})+{}x{}", self.x, self.y, self.w, self.h)
    }
}

// Shared raster plumbing over raw row-major buffers.

fn crop_raw(data: &[u8], width: u32, r: Rect) -> Vec<u8> {
    let mut out = Vec::with_capacity(r.w as usize * r.h as usize);
    for y in r.y..r.y + r.h {
        let row = y as usize * width as usize + r.x as usize;
        out.extend_from_slice(&data[row..row + r.w as usize]);
    }
    out
}

fn paste_raw(data: &mut [u8], width: u32, patch: &[u8], at: Rect) {
    for dy in 0..at.h {
        let src = dy as usize * at.w as usize;
        let dst = (at.y + dy) as usize * width as usize + at.x as usize;
        data[dst..dst + at.w as usize].copy_from_slice(&patch[src..src + at.w as usize]);
    }
}

/// Quarter-turn rotation of a square `side x side` buffer, counter-clockwise
/// about the patch center. An exact pixel permutation, no interpolation.
fn rotate_square_raw(data: &[u8], side: u32, quarter_turns: u8) -> Vec<u8> {
    let s = side as usize;
    let k = quarter_turns % 4;
    if k == 0 {
        return data.to_vec();
    }
    let mut out = vec![0u8; s * s];
    for y in 0..s {
        for x in 0..s {
            let (sx, sy) = match k {
                1 => (s - 1 - y, x),
                2 => (s - 1 - x, s - 1 - y),
                _ => (y, s - 1 - x),
            };
            out[y * s + x] = data[sy * s + sx];
        }
    }
    out
}

fn open_luma8(path: &Path) -> Result<(u32, u32, Vec<u8>)> {
    let reader = image::ImageReader::open(path).map_err(|source| Error::Read {
        path: path.to_path_buf(),
        source,
    })?;
    let decoded = reader.decode().map_err(|source| Error::Decode {
        path: path.to_path_buf(),
        source,
    })?;
    // Color inputs reduce to luminance; the corpora this crate targets are
    // single-channel to begin with.
    let luma = decoded.to_luma8();
    let (w, h) = luma.dimensions();
    Ok((w, h, luma.into_raw()))
}

fn save_luma8(path: &Path, width: u32, height: u32, data: &[u8]) -> Result<()> {
    image::save_buffer_with_format(
        path,
        data,
        width,
        height,
        image::ExtendedColorType::L8,
        image::ImageFormat::Png,
    )
    .map_err(|source| Error::Encode {
        path: path.to_path_buf(),
        source,
    })
}

/// Row-major single-channel 8-bit raster.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    width: u32,
    height: u32,
    data: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: u32, height: u32, data: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::ZeroDimension { width, height });
        }
        if data.len() != width as usize * height as usize {
            return Err(Error::BufferSize { width, height, len: data.len() });
        }
        Ok(GrayImage { width, height, data })
    }

    pub fn constant(width: u32, height: u32, value: u8) -> Result<Self> {
        GrayImage::new(width, height, vec![value; width as usize * height as usize])
    }

    /// Build from a per-pixel function of `(x, y)`.
    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> u8) -> Result<Self> {
        let mut data = Vec::with_capacity(width as usize * height as usize);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        GrayImage::new(width, height, data)
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn dimensions(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn pixel(&self, x: u32, y: u32) -> u8 {
        assert!(x < self.width && y < self.height, "pixel ({x},{y}) out of bounds");
        self.data[y as usize * self.width as usize + x as usize]
    }

    /// Decode a raster file. Color inputs are converted to luminance.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let (w, h, data) = open_luma8(path.as_ref())?;
        GrayImage::new(w, h, data)
    }

    /// Write as a lossless single-channel 8-bit PNG.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        save_luma8(path.as_ref(), self.width, self.height, &self.data)
    }

    /// Copy out the `r.w x r.h` sub-image; the source is untouched.
    pub fn crop(&self, r: Rect) -> Result<GrayImage> {
        r.check_within(self.width, self.height)?;
        GrayImage::new(r.w, r.h, crop_raw(&self.data, self.width, r))
    }

    /// Return a copy with the region `at` replaced by `patch`.
    pub fn paste(&self, patch: &GrayImage, at: Rect) -> Result<GrayImage> {
        at.check_within(self.width, self.height)?;
        if (patch.width, patch.height) != (at.w, at.h) {
            return Err(Error::PatchSizeMismatch { width: patch.width, height: patch.height, rect: at });
        }
        let mut data = self.data.clone();
        paste_raw(&mut data, self.width, &patch.data, at);
        GrayImage::new(self.width, self.height, data)
    }

    /// Bilinear resample with half-pixel-center coordinate mapping.
    ///
    /// Interpolation runs in the unit working scale and is written in lerp
    /// form, so constant inputs reproduce the constant exactly and outputs
    /// never leave the input value range.
    pub fn resize_bilinear(&self, out_w: u32, out_h: u32) -> Result<GrayImage> {
        if out_w == 0 || out_h == 0 {
            return Err(Error::ZeroDimension { width: out_w, height: out_h });
        }
        let sx = self.width as f64 / out_w as f64;
        let sy = self.height as f64 / out_h as f64;
        let mut data = Vec::with_capacity(out_w as usize * out_h as usize);
        for y in 0..out_h {
            let src_y = ((y as f64 + 0.5) * sy - 0.5).max(0.0);
            let y0 = (src_y as u32).min(self.height - 1);
            let y1 = (y0 + 1).min(self.height - 1);
            let fy = src_y - y0 as f64;
            for x in 0..out_w {
                let src_x = ((x as f64 + 0.5) * sx - 0.5).max(0.0);
                let x0 = (src_x as u32).min(self.width - 1);
                let x1 = (x0 + 1).min(self.width - 1);
                let fx = src_x - x0 as f64;
                let v00 = to_unit(self.pixel(x0, y0));
                let v10 = to_unit(self.pixel(x1, y0));
                let v01 = to_unit(self.pixel(x0, y1));
                let v11 = to_unit(self.pixel(x1, y1));
                let top = v00 + fx * (v10 - v00);
                let bottom = v01 + fx * (v11 - v01);
                data.push(to_byte(top + fy * (bottom - top)));
            }
        }
        GrayImage::new(out_w, out_h, data)
    }

    /// Counter-clockwise quarter-turn rotation of a square patch.
    /// `quarter_turns` is taken modulo 4; zero turns is the identity.
    pub fn rotate90(&self, quarter_turns: u8) -> Result<GrayImage> {
        if self.width != self.height {
            return Err(Error::NonSquarePatch { width: self.width, height: self.height });
        }
        GrayImage::new(self.width, self.height, rotate_square_raw(&self.data, self.width, quarter_turns))
    }
}

/// Binary per-pixel annotation paired with a [`GrayImage`]; values are
/// strictly 0 or 1 in memory and 0/255 on disk.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    width: u32,
    height: u32,
    data: Vec<u8>,
}

impl Mask {
    pub fn new(width: u32, height: u32, data: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::ZeroDimension { width, height });
        }
        if data.len() != width as usize * height as usize {
            return Err(Error::BufferSize { width, height, len: data.len() });
        }
        if data.iter().any(|&v| v > 1) {
            return Err(Error::NonBinaryMask);
        }
        Ok(Mask { width, height, data })
    }

    pub fn empty(width: u32, height: u32) -> Result<Self> {
        Mask::new(width, height, vec![0; width as usize * height as usize])
    }

    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> bool) -> Result<Self> {
        let mut data = Vec::with_capacity(width as usize * height as usize);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y) as u8);
            }
        }
        Mask::new(width, height, data)
    }

    /// Threshold a soft prediction into a binary mask; pixels whose
    /// working-scale value is strictly greater than `threshold` become
    /// foreground. `0.5` is the conventional cut for detector outputs.
    pub fn from_image_threshold(img: &GrayImage, threshold: f64) -> Result<Self> {
        let data = img.data().iter().map(|&v| (to_unit(v) > threshold) as u8).collect();
        Mask::new(img.width(), img.height(), data)
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn dimensions(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn pixel(&self, x: u32, y: u32) -> u8 {
        assert!(x < self.width && y < self.height, "pixel ({x},{y}) out of bounds");
        self.data[y as usize * self.width as usize + x as usize]
    }

    pub fn foreground_count(&self) -> u64 {
        self.data.iter().map(|&v| v as u64).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.data.iter().all(|&v| v == 0)
    }

    /// Decode a mask file. The file must contain background zeros plus at
    /// most one foreground value; foreground maps to 1.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let (w, h, raw) = open_luma8(path)?;
        let mut seen = [false; 256];
        for &v in &raw {
            seen[v as usize] = true;
        }
        let values: Vec<u8> = (0u16..256).filter(|&v| seen[v as usize]).map(|v| v as u8).collect();
        let nonzero: Vec<u8> = values.iter().copied().filter(|&v| v != 0).collect();
        if nonzero.len() > 1 {
            return Err(Error::AmbiguousMask { path: path.to_path_buf(), values });
        }
        let data = raw.into_iter().map(|v| (v != 0) as u8).collect();
        Mask::new(w, h, data)
    }

    /// Write as a lossless PNG with foreground encoded as 255.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let bytes: Vec<u8> = self.data.iter().map(|&v| if v == 0 { 0 } else { 255 }).collect();
        save_luma8(path.as_ref(), self.width, self.height, &bytes)
    }

    pub fn crop(&self, r: Rect) -> Result<Mask> {
        r.check_within(self.width, self.height)?;
        Mask::new(r.w, r.h, crop_raw(&self.data, self.width, r))
    }

    pub fn paste(&self, patch: &Mask, at: Rect) -> Result<Mask> {
        at.check_within(self.width, self.height)?;
        if (patch.width, patch.height) != (at.w, at.h) {
            return Err(Error::PatchSizeMismatch { width: patch.width, height: patch.height, rect: at });
        }
        let mut data = self.data.clone();
        paste_raw(&mut data, self.width, &patch.data, at);
        Mask::new(self.width, self.height, data)
    }

    pub fn rotate90(&self, quarter_turns: u8) -> Result<Mask> {
        if self.width != self.height {
            return Err(Error::NonSquarePatch { width: self.width, height: self.height });
        }
        Mask::new(self.width, self.height, rotate_square_raw(&self.data, self.width, quarter_turns))
    }
}

/// Raster files directly under `dir`, keyed by stem, sorted.
pub fn list_raster_files(
    dir: &Path,
) -> Result<std::collections::BTreeMap<String, std::path::PathBuf>> {
    let entries = std::fs::read_dir(dir).map_err(|source| Error::Read {
        path: dir.to_path_buf(),
        source,
    })?;
    let mut files = std::collections::BTreeMap::new();
    for entry in entries {
        let entry = entry.map_err(|source| Error::Read { path: dir.to_path_buf(), source })?;
        let path = entry.path();
        let is_raster = path
            .extension()
            .and_then(|e| e.to_str())
            .map(|e| matches!(e.to_ascii_lowercase().as_str(), "png" | "bmp" | "tif" | "tiff"))
            .unwrap_or(false);
        if path.is_file() && is_raster {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                files.insert(stem.to_string(), path);
            }
        }
    }
    Ok(files)
}

/// Require identical raster dimensions, the shared precondition of every
/// pairwise pixel operation.
pub(crate) fn check_same_dims(a: (u32, u32), b: (u32, u32)) -> Result<()> {
    if a == b {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            left_width: a.0,
            left_height: a.1,
            right_width: b.0,
            right_height: b.1,
        })
    }
}
