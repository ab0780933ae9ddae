//! Negative augmentation: locate small targets from their masks and emit
//! label-consistent rotation variants.
//!
//! Each target contributes four variants, one per quarter-turn of the
//! `s x s` anchor patch centered on its centroid. The mask patch rotates
//! together with the image patch so pixel-level annotation stays
//! consistent; target area is invariant because rotation is a permutation.

use std::fmt;

use crate::error::{Error, Result};
use crate::imaging::{check_same_dims, GrayImage, Mask, Rect};

/// One 8-connected foreground component.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetInstance {
    /// Index within the image, in raster-scan discovery order.
    pub id: usize,
    /// Sub-pixel centroid `(x, y)` of the component's pixels.
    pub centroid: (f64, f64),
    pub pixel_count: usize,
    pub bbox: Rect,
}

/// The `side x side` region rotated during augmentation, clamped inside
/// the image rather than shrunk when the target sits near a border.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AnchorPatch {
    pub rect: Rect,
    pub side: u32,
}

/// Rotation applied to an anchor patch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Rotation {
    Deg0,
    Deg90,
    Deg180,
    Deg270,
}

impl Rotation {
    pub const ALL: [Rotation; 4] = [Rotation::Deg0, Rotation::Deg90, Rotation::Deg180, Rotation::Deg270];

    pub fn quarter_turns(self) -> u8 {
        match self {
            Rotation::Deg0 => 0,
            Rotation::Deg90 => 1,
            Rotation::Deg180 => 2,
            Rotation::Deg270 => 3,
        }
    }

    pub fn degrees(self) -> u16 {
        u16::from(self.quarter_turns()) * 90
    }

    pub fn from_degrees(deg: u16) -> Option<Rotation> {
        match deg {
            0 => Some(Rotation::Deg0),
            90 => Some(Rotation::Deg90),
            180 => Some(Rotation::Deg180),
            270 => Some(Rotation::Deg270),
            _ => None,
        }
    }
}

impl fmt::Display for Rotation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.degrees())
    }
}

/// Provenance of one generated sample.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentationRecord {
    /// Stem of the image this sample derives from.
    pub source_id: String,
    /// Blend weight applied on the way to this sample; 0 when none.
    pub alpha: f64,
    /// Rotated target index, or `None` for noise-only and original entries.
    pub target_id: Option<usize>,
    pub beta: Rotation,
    /// Stem of the generated sample.
    pub output_id: String,
}

/// One generated negative: the variant pair plus which target and angle
/// produced it.
#[derive(Debug, Clone)]
pub struct NegativeVariant {
    pub image: GrayImage,
    pub mask: Mask,
    pub target_id: usize,
    pub beta: Rotation,
}

/// Extract the 8-connected foreground components of a binary mask, in
/// raster-scan discovery order. An empty mask yields an empty list.
pub fn extract_targets(mask: &Mask) -> Vec<TargetInstance> {
    let (w, h) = (mask.width() as usize, mask.height() as usize);
    let data = mask.data();

    // Two-pass labeling with union-find over provisional labels.
    let mut labels = vec![0u32; w * h]; // 0 = background, else provisional label
    let mut parent: Vec<u32> = vec![0]; // parent[label]; label 0 unused

    fn find(parent: &mut [u32], mut l: u32) -> u32 {
        while parent[l as usize] != l {
            let up = parent[parent[l as usize] as usize];
            parent[l as usize] = up;
            l = up;
        }
        l
    }

    for y in 0..h {
        for x in 0..w {
            if data[y * w + x] == 0 {
                continue;
            }
            // Previously-scanned neighbors under 8-connectivity.
            let mut neighbor_roots = [0u32; 4];
            let mut count = 0;
            let mut consider = |nx: isize, ny: isize, labels: &[u32], parent: &mut [u32]| {
                if nx >= 0 && ny >= 0 && (nx as usize) < w && (ny as usize) < h {
                    let l = labels[ny as usize * w + nx as usize];
                    if l != 0 {
                        neighbor_roots[count] = find(parent, l);
                        count += 1;
                    }
                }
            };
            let (xi, yi) = (x as isize, y as isize);
            consider(xi - 1, yi, &labels, &mut parent);
            consider(xi - 1, yi - 1, &labels, &mut parent);
            consider(xi, yi - 1, &labels, &mut parent);
            consider(xi + 1, yi - 1, &labels, &mut parent);

            if count == 0 {
                let fresh = parent.len() as u32;
                parent.push(fresh);
                labels[y * w + x] = fresh;
            } else {
                let root = *neighbor_roots[..count].iter().min().unwrap();
                labels[y * w + x] = root;
                for &r in &neighbor_roots[..count] {
                    parent[r as usize] = root;
                }
            }
        }
    }

    // Second pass: resolve roots, order components by first appearance,
    // and accumulate per-component statistics.
    struct Accum {
        sum_x: u64,
        sum_y: u64,
        count: usize,
        min_x: u32,
        min_y: u32,
        max_x: u32,
        max_y: u32,
    }
    let mut order: Vec<u32> = Vec::new();
    let mut slot_of = vec![usize::MAX; parent.len()];
    let mut accums: Vec<Accum> = Vec::new();
    for y in 0..h {
        for x in 0..w {
            let l = labels[y * w + x];
            if l == 0 {
                continue;
            }
            let root = find(&mut parent, l);
            let slot = if slot_of[root as usize] == usize::MAX {
                let slot = accums.len();
                slot_of[root as usize] = slot;
                order.push(root);
                accums.push(Accum {
                    sum_x: 0,
                    sum_y: 0,
                    count: 0,
                    min_x: u32::MAX,
                    min_y: u32::MAX,
                    max_x: 0,
                    max_y: 0,
                });
                slot
            } else {
                slot_of[root as usize]
            };
            let a = &mut accums[slot];
            a.sum_x += x as u64;
            a.sum_y += y as u64;
            a.count += 1;
            a.min_x = a.min_x.min(x as u32);
            a.min_y = a.min_y.min(y as u32);
            a.max_x = a.max_x.max(x as u32);
            a.max_y = a.max_y.max(y as u32);
        }
    }

    accums
        .iter()
        .enumerate()
        .map(|(id, a)| TargetInstance {
            id,
            centroid: (a.sum_x as f64 / a.count as f64, a.sum_y as f64 / a.count as f64),
            pixel_count: a.count,
            bbox: Rect::new(a.min_x, a.min_y, a.max_x - a.min_x + 1, a.max_y - a.min_y + 1),
        })
        .collect()
}

/// The `side x side` rect centered on the rounded centroid, translated
/// (not shrunk) to stay inside `(width, height)`.
pub fn anchor_patch(target: &TargetInstance, side: u32, dims: (u32, u32)) -> Result<AnchorPatch> {
    let (width, height) = dims;
    if side % 2 == 0 || side == 0 {
        return Err(Error::EvenPatchSide(side));
    }
    if side > width || side > height {
        return Err(Error::PatchTooLarge { side, width, height });
    }
    let half = (side - 1) / 2;
    let center_x = target.centroid.0.round() as i64;
    let center_y = target.centroid.1.round() as i64;
    let x = (center_x - i64::from(half)).clamp(0, i64::from(width - side)) as u32;
    let y = (center_y - i64::from(half)).clamp(0, i64::from(height - side)) as u32;
    Ok(AnchorPatch { rect: Rect::new(x, y, side, side), side })
}

/// Rotate the anchor rect in place on both rasters: crop, quarter-turn,
/// paste back. Everything outside the rect is untouched.
pub fn rotate_target_patch(
    img: &GrayImage,
    mask: &Mask,
    rect: Rect,
    quarter_turns: u8,
) -> Result<(GrayImage, Mask)> {
    let rotated_img = img.crop(rect)?.rotate90(quarter_turns)?;
    let rotated_mask = mask.crop(rect)?.rotate90(quarter_turns)?;
    Ok((img.paste(&rotated_img, rect)?, mask.paste(&rotated_mask, rect)?))
}

/// Generate the rotation negatives of an image/mask pair: one variant per
/// (target, angle), 4z in total for z non-overlapping targets.
///
/// Targets whose anchor patches overlap another target's anchor are
/// skipped and logged; rotating either patch would corrupt the other.
pub fn make_negatives(
    img: &GrayImage,
    mask: &Mask,
    targets: &[TargetInstance],
    side: u32,
) -> Result<Vec<NegativeVariant>> {
    check_same_dims(img.dimensions(), mask.dimensions())?;
    let mut anchors = Vec::with_capacity(targets.len());
    for target in targets {
        anchors.push(anchor_patch(target, side, img.dimensions())?);
    }

    let mut skipped = vec![false; targets.len()];
    for i in 0..anchors.len() {
        for j in i + 1..anchors.len() {
            if anchors[i].rect.intersects(&anchors[j].rect) {
                skipped[i] = true;
                skipped[j] = true;
                log::warn!(
                    "skipping targets {} and {}: anchor patches {} and {} overlap",
                    targets[i].id,
                    targets[j].id,
                    anchors[i].rect,
                    anchors[j].rect
                );
            }
        }
    }

    let mut variants = Vec::with_capacity(4 * targets.len());
    for (idx, (target, anchor)) in targets.iter().zip(&anchors).enumerate() {
        if skipped[idx] {
            continue;
        }
        for beta in Rotation::ALL {
            let (image, mask) = rotate_target_patch(img, mask, anchor.rect, beta.quarter_turns())?;
            variants.push(NegativeVariant { image, mask, target_id: target.id, beta });
        }
    }
    Ok(variants)
}
