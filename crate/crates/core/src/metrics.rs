//! Evaluation suite: pixel IoU, target-level probability of detection with
//! explicit centroid matching, and pixel-level false-alarm rate, plus
//! corpus aggregation by pooled counts (micro-averaging).

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::imaging::{check_same_dims, Mask};
use crate::negaug::extract_targets;
use crate::par;

/// Matching rule for pairing predicted components with ground-truth
/// targets: centroids farther apart than `max_centroid_dist` never match.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchCriterion {
    pub max_centroid_dist: f64,
}

impl Default for MatchCriterion {
    fn default() -> Self {
        MatchCriterion { max_centroid_dist: 3.0 }
    }
}

/// One matched (ground truth, prediction) component pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TargetMatch {
    pub gt_id: usize,
    pub pred_id: usize,
    pub distance: f64,
}

/// Associative per-image count tuple; corpus metrics pool these.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct MetricCounts {
    pub intersection: u64,
    pub union: u64,
    pub t_correct: u64,
    pub t_all: u64,
    pub false_pixels: u64,
    pub total_pixels: u64,
}

impl MetricCounts {
    pub fn merge(&mut self, other: &MetricCounts) {
        self.intersection += other.intersection;
        self.union += other.union;
        self.t_correct += other.t_correct;
        self.t_all += other.t_all;
        self.false_pixels += other.false_pixels;
        self.total_pixels += other.total_pixels;
    }
}

/// Metric report with both ratios and the raw counts they came from.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub iou: f64,
    pub pd: f64,
    pub fa: f64,
    pub t_correct: u64,
    pub t_all: u64,
    pub false_pixels: u64,
    pub total_pixels: u64,
    /// Matches per image stem (stem is empty for single-pair evaluation).
    pub matches: Vec<(String, TargetMatch)>,
}

impl MetricsReport {
    pub fn from_counts(counts: MetricCounts, matches: Vec<(String, TargetMatch)>) -> Self {
        MetricsReport {
            iou: ratio_or(counts.intersection, counts.union, 1.0),
            pd: ratio_or(counts.t_correct, counts.t_all, 1.0),
            fa: ratio_or(counts.false_pixels, counts.total_pixels, 0.0),
            t_correct: counts.t_correct,
            t_all: counts.t_all,
            false_pixels: counts.false_pixels,
            total_pixels: counts.total_pixels,
            matches,
        }
    }

    /// Line-oriented report; ratios are repeated in the conventional
    /// presentation scales (IoU and Pd x100, Fa x1e6).
    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "iou\t{}", self.iou);
        let _ = writeln!(out, "iou_x100\t{}", self.iou * 100.0);
        let _ = writeln!(out, "pd\t{}", self.pd);
        let _ = writeln!(out, "pd_x100\t{}", self.pd * 100.0);
        let _ = writeln!(out, "fa\t{}", self.fa);
        let _ = writeln!(out, "fa_x1e6\t{}", self.fa * 1e6);
        let _ = writeln!(out, "t_correct\t{}", self.t_correct);
        let _ = writeln!(out, "t_all\t{}", self.t_all);
        let _ = writeln!(out, "false_pixels\t{}", self.false_pixels);
        let _ = writeln!(out, "total_pixels\t{}", self.total_pixels);
        for (image, m) in &self.matches {
            let stem = if image.is_empty() { "-" } else { image };
            let _ = writeln!(out, "match\t{stem}\t{}\t{}\t{}", m.gt_id, m.pred_id, m.distance);
        }
        out
    }
}

fn ratio_or(num: u64, den: u64, empty: f64) -> f64 {
    if den == 0 {
        empty
    } else {
        num as f64 / den as f64
    }
}

/// Pixel intersection-over-union. Both-empty masks score 1 by convention,
/// so corpus aggregation never propagates NaN.
pub fn iou(pred: &Mask, gt: &Mask) -> Result<f64> {
    let (i, u) = intersection_union(pred, gt)?;
    Ok(ratio_or(i, u, 1.0))
}

fn intersection_union(pred: &Mask, gt: &Mask) -> Result<(u64, u64)> {
    check_same_dims(pred.dimensions(), gt.dimensions())?;
    let mut inter = 0u64;
    let mut union = 0u64;
    for (&p, &g) in pred.data().iter().zip(gt.data()) {
        inter += u64::from(p & g);
        union += u64::from(p | g);
    }
    Ok((inter, union))
}

/// Greedy matching in ascending centroid-distance order. Each side is
/// assigned at most once; pairs beyond the distance cutoff never match.
/// Ties break on (ground-truth id, prediction id) so the result is
/// independent of traversal order.
pub fn match_targets(pred: &Mask, gt: &Mask, crit: &MatchCriterion) -> Result<Vec<TargetMatch>> {
    check_same_dims(pred.dimensions(), gt.dimensions())?;
    let pred_targets = extract_targets(pred);
    let gt_targets = extract_targets(gt);

    let mut candidates: Vec<(f64, usize, usize)> = Vec::new();
    for g in &gt_targets {
        for p in &pred_targets {
            let dx = g.centroid.0 - p.centroid.0;
            let dy = g.centroid.1 - p.centroid.1;
            let dist = (dx * dx + dy * dy).sqrt();
            if dist <= crit.max_centroid_dist {
                candidates.push((dist, g.id, p.id));
            }
        }
    }
    candidates.sort_by(|a, b| {
        a.0.partial_cmp(&b.0).expect("distances are finite").then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2))
    });

    let mut gt_taken = vec![false; gt_targets.len()];
    let mut pred_taken = vec![false; pred_targets.len()];
    let mut matches = Vec::new();
    for (distance, gt_id, pred_id) in candidates {
        if !gt_taken[gt_id] && !pred_taken[pred_id] {
            gt_taken[gt_id] = true;
            pred_taken[pred_id] = true;
            matches.push(TargetMatch { gt_id, pred_id, distance });
        }
    }
    Ok(matches)
}

/// Probability of detection: matched ground-truth targets over all
/// ground-truth targets; 1 when there are none to detect.
pub fn pd(matches: &[TargetMatch], gt_target_count: usize) -> f64 {
    if gt_target_count == 0 {
        1.0
    } else {
        matches.len() as f64 / gt_target_count as f64
    }
}

/// False-alarm rate, pixel definition: a predicted pixel is false iff it
/// does not overlap ground-truth foreground; divided by all pixels.
pub fn fa(pred: &Mask, gt: &Mask) -> Result<f64> {
    check_same_dims(pred.dimensions(), gt.dimensions())?;
    Ok(ratio_or(false_pixel_count(pred, gt), pred.data().len() as u64, 0.0))
}

fn false_pixel_count(pred: &Mask, gt: &Mask) -> u64 {
    pred.data()
        .iter()
        .zip(gt.data())
        .map(|(&p, &g)| u64::from(p == 1 && g == 0))
        .sum()
}

/// Component-aware false-alarm variant: all pixels of unmatched predicted
/// components count as false, plus matched-component pixels outside the
/// ground truth. The default pixel definition is [`fa`].
pub fn fa_component_aware(pred: &Mask, matches: &[TargetMatch], gt: &Mask) -> Result<f64> {
    check_same_dims(pred.dimensions(), gt.dimensions())?;
    let component_count = extract_targets(pred).len();
    let mut matched = vec![false; component_count];
    for m in matches {
        if m.pred_id < matched.len() {
            matched[m.pred_id] = true;
        }
    }
    let labels = component_labels(pred);
    let (w, h) = pred.dimensions();
    let mut false_px = 0u64;
    for y in 0..h {
        for x in 0..w {
            if let Some(id) = labels[(y * w + x) as usize] {
                if !matched[id] || gt.pixel(x, y) == 0 {
                    false_px += 1;
                }
            }
        }
    }
    Ok(ratio_or(false_px, u64::from(w) * u64::from(h), 0.0))
}

/// Per-pixel component ids in raster-scan discovery order; the ordering
/// matches the id assignment of `extract_targets`.
fn component_labels(mask: &Mask) -> Vec<Option<usize>> {
    let (w, h) = mask.dimensions();
    let mut labels = vec![None; (w * h) as usize];
    let mut next_id = 0usize;
    for y in 0..h {
        for x in 0..w {
            if mask.pixel(x, y) == 0 || labels[(y * w + x) as usize].is_some() {
                continue;
            }
            let mut stack = vec![(x, y)];
            labels[(y * w + x) as usize] = Some(next_id);
            while let Some((cx, cy)) = stack.pop() {
                for dy in -1i64..=1 {
                    for dx in -1i64..=1 {
                        let (nx, ny) = (cx as i64 + dx, cy as i64 + dy);
                        if nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
                            continue;
                        }
                        let (nx, ny) = (nx as u32, ny as u32);
                        let idx = (ny * w + nx) as usize;
                        if mask.pixel(nx, ny) == 1 && labels[idx].is_none() {
                            labels[idx] = Some(next_id);
                            stack.push((nx, ny));
                        }
                    }
                }
            }
            next_id += 1;
        }
    }
    labels
}

/// Evaluate one prediction/ground-truth pair into pooled counts.
pub fn evaluate_pair(
    pred: &Mask,
    gt: &Mask,
    crit: &MatchCriterion,
) -> Result<(MetricCounts, Vec<TargetMatch>)> {
    let (intersection, union) = intersection_union(pred, gt)?;
    let matches = match_targets(pred, gt, crit)?;
    let gt_count = extract_targets(gt).len() as u64;
    let counts = MetricCounts {
        intersection,
        union,
        t_correct: matches.len() as u64,
        t_all: gt_count,
        false_pixels: false_pixel_count(pred, gt),
        total_pixels: pred.data().len() as u64,
    };
    Ok((counts, matches))
}

/// Evaluate a corpus of paired mask files (matching stems across the two
/// directories) into one micro-averaged report: counts are pooled over
/// images, then turned into ratios.
pub fn evaluate_report(pred_dir: &Path, gt_dir: &Path, crit: &MatchCriterion) -> Result<MetricsReport> {
    let pred_files = mask_files(pred_dir)?;
    let gt_files = mask_files(gt_dir)?;
    if pred_files.is_empty() {
        return Err(Error::EmptyInput(format!("no mask files under {}", pred_dir.display())));
    }

    let pred_stems: Vec<&String> = pred_files.keys().collect();
    let gt_stems: Vec<&String> = gt_files.keys().collect();
    if pred_stems != gt_stems {
        let only_pred: Vec<&str> =
            pred_files.keys().filter(|s| !gt_files.contains_key(*s)).map(|s| s.as_str()).collect();
        let only_gt: Vec<&str> =
            gt_files.keys().filter(|s| !pred_files.contains_key(*s)).map(|s| s.as_str()).collect();
        return Err(Error::UnpairedFiles {
            dir: pred_dir.to_path_buf(),
            detail: format!("prediction-only stems {only_pred:?}, ground-truth-only stems {only_gt:?}"),
        });
    }

    let pairs: Vec<(String, std::path::PathBuf, std::path::PathBuf)> = pred_files
        .iter()
        .map(|(stem, pred_path)| (stem.clone(), pred_path.clone(), gt_files[stem].clone()))
        .collect();

    let crit = *crit;
    let results = par::map_ordered(pairs, move |(stem, pred_path, gt_path)| {
        let pred = Mask::load(&pred_path)?;
        let gt = Mask::load(&gt_path)?;
        let (counts, matches) = evaluate_pair(&pred, &gt, &crit)?;
        Ok::<_, Error>((stem, counts, matches))
    });

    let mut pooled = MetricCounts::default();
    let mut all_matches = Vec::new();
    for result in results {
        let (stem, counts, matches) = result?;
        pooled.merge(&counts);
        all_matches.extend(matches.into_iter().map(|m| (stem.clone(), m)));
    }
    Ok(MetricsReport::from_counts(pooled, all_matches))
}

/// Mask files in a directory, keyed by stem (sorted).
fn mask_files(dir: &Path) -> Result<BTreeMap<String, std::path::PathBuf>> {
    crate::imaging::list_raster_files(dir)
}
