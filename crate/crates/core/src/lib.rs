//! Dataset synthesis and evaluation toolkit for single-frame infrared
//! small-target detection.
//!
//! The pipeline stages, each usable on its own:
//!
//! - [`imaging`]: 8-bit rasters, binary masks, lossless PNG I/O, and the
//!   geometric primitives (crop, paste, bilinear resize, quarter-turn
//!   rotation).
//! - [`noise`]: noise-prone region selection over a `grid x grid` tiling
//!   (strict variance/mean gate), full-frame noise fields, and
//!   alpha-blended displacement.
//! - [`negaug`]: connected-component target extraction and the rotation
//!   negatives (four quarter-turns of the anchor patch per target).
//! - [`dataset`]: the end-to-end builder producing originals, displaced
//!   variants, negatives, and a reproducible manifest, plus validation.
//! - [`metrics`]: pixel IoU, detection probability with centroid matching,
//!   false-alarm rate, and micro-averaged corpus reports.
//! - [`aff`]: attention-gating and Soft-IoU kernels with analytic
//!   gradients and a runnable finite-difference check suite.
//!
//! With the default `parallel` feature the per-image stages fan out over
//! rayon; `--no-default-features` builds the same code sequentially.

pub mod aff;
pub mod dataset;
pub mod error;
pub mod imaging;
pub mod metrics;
pub mod negaug;
pub mod noise;
pub(crate) mod par;
pub mod rng;

pub use error::{Error, Result};
pub use imaging::{GrayImage, Mask, Rect};
pub use par::with_jobs;
