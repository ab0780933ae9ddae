//! Crate-wide error type.

use std::path::PathBuf;

use crate::imaging::Rect;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("failed to read {path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("failed to write {path}: {source}")]
    Write {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("failed to decode {path}: {source}")]
    Decode {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
    #[error("failed to encode {path}: {source}")]
    Encode {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
    #[error("ambiguous mask {path}: values {values:?} exceed background plus one foreground value")]
    AmbiguousMask { path: PathBuf, values: Vec<u8> },
    #[error("buffer of {len} values does not match a {width}x{height} raster")]
    BufferSize { width: u32, height: u32, len: usize },
    #[error("mask values must be 0 or 1")]
    NonBinaryMask,
    #[error("raster dimensions must be nonzero, got {width}x{height}")]
    ZeroDimension { width: u32, height: u32 },
    #[error("rect {rect} out of bounds for a {width}x{height} raster")]
    RectOutOfBounds { rect: Rect, width: u32, height: u32 },
    #[error("patch is {width}x{height} but the paste target is {rect}")]
    PatchSizeMismatch { width: u32, height: u32, rect: Rect },
    #[error("expected a square patch, got {width}x{height}")]
    NonSquarePatch { width: u32, height: u32 },
    #[error("dimension mismatch: {left_width}x{left_height} vs {right_width}x{right_height}")]
    DimensionMismatch {
        left_width: u32,
        left_height: u32,
        right_width: u32,
        right_height: u32,
    },
    #[error("blend weight must lie in [0, 1], got {0}")]
    AlphaOutOfRange(f64),
    #[error("patch side must be odd and at least 1, got {0}")]
    EvenPatchSide(u32),
    #[error("patch side {side} exceeds the {width}x{height} image extent")]
    PatchTooLarge { side: u32, width: u32, height: u32 },
    #[error("image {width}x{height} is smaller than the {grid}x{grid} sampling grid")]
    GridTooFine { width: u32, height: u32, grid: u32 },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("feature map values must be finite")]
    NonFiniteValue,
    #[error("empty input: {0}")]
    EmptyInput(String),
    #[error("unpaired files under {dir}: {detail}")]
    UnpairedFiles { dir: PathBuf, detail: String },
    #[error("missing manifest at {0}")]
    MissingManifest(PathBuf),
    #[error("malformed manifest {path}: {detail}")]
    ManifestParse { path: PathBuf, detail: String },
}
