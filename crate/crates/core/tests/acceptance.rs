//! Acceptance suite: one test per release criterion, each printing a
//! PASS line (visible with `--nocapture`). Every expected value is either
//! asserted directly from its definition or checked against an
//! independent oracle implemented in this file: two-pass statistics and a
//! brute-force region scan for the noise gate, per-pixel double loops for
//! the metrics, flood-fill components plus maximum-cardinality matching
//! for detection counts, scalar-loop forwards and central finite
//! differences for the kernels.
//!
//! Run with `cargo test --test acceptance -- --nocapture`.

use std::path::Path;
use std::time::Instant;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use irstkit::aff::{channel_attention, soft_iou_loss, spatial_attention, AffParams, FeatureMap};
use irstkit::dataset::{build_dataset, BuildConfig};
use irstkit::imaging::{to_unit, GrayImage, Mask, Rect};
use irstkit::metrics::{evaluate_pair, evaluate_report, fa, iou, match_targets, MatchCriterion};
use irstkit::negaug::{anchor_patch, extract_targets, make_negatives, rotate_target_patch, Rotation};
use irstkit::noise::{displace, select_noise_prone, NoiseField, NoiseSamplerConfig};
use irstkit::rng::derive_rng;

// ---------------------------------------------------------------------
// Criterion 1: the noise gate agrees with a brute-force region scan.
// ---------------------------------------------------------------------

/// Independent tiling of a 256x256 frame into 64 regions of 32x32.
fn oracle_regions() -> Vec<Rect> {
    let mut rects = Vec::new();
    for gy in 0..8 {
        for gx in 0..8 {
            rects.push(Rect::new(gx * 32, gy * 32, 32, 32));
        }
    }
    rects
}

/// Two-pass mean/variance oracle in the unit working scale.
fn oracle_stats(img: &GrayImage, r: Rect) -> (f64, f64) {
    let mut values = Vec::with_capacity((r.w * r.h) as usize);
    for y in r.y..r.y + r.h {
        for x in r.x..r.x + r.w {
            values.push(to_unit(img.pixel(x, y)));
        }
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / values.len() as f64;
    (mean, var)
}

/// 256x256 frame whose only gate-passing region is the planted cell.
/// Everything else is designed to fail exactly one side of the gate:
/// constant cells (zero variance), checkerboard cells (high variance),
/// and quiet-but-bright cells (high mean).
fn planted_frame(planted_cell: (u32, u32), rng: &mut ChaCha8Rng) -> (GrayImage, Rect) {
    let planted = Rect::new(planted_cell.0 * 32, planted_cell.1 * 32, 32, 32);
    let mut styles = [[0u8; 8]; 8];
    for row in &mut styles {
        for cell in row.iter_mut() {
            *cell = rng.gen_range(0..3);
        }
    }
    let img = GrayImage::from_fn(256, 256, |x, y| {
        if planted.contains(x, y) {
            if (x + y) % 2 == 0 {
                20
            } else {
                22
            }
        } else {
            match styles[(y / 32) as usize][(x / 32) as usize] {
                0 => 128,                                      // constant: variance 0
                1 => {
                    if (x + y) % 2 == 0 {
                        0
                    } else {
                        255                                    // texture: variance 0.25
                    }
                }
                _ => {
                    if (x + y) % 2 == 0 {
                        230
                    } else {
                        232                                    // quiet but bright: mean ~0.9
                    }
                }
            }
        }
    })
    .unwrap();
    (img, planted)
}

#[test]
fn acceptance_1_noise_gate_matches_brute_force_scan() {
    let cfg = NoiseSamplerConfig::new(8, 0.01, 0.2, 20).unwrap();
    let mut corpus = Vec::new();
    for i in 0..20u64 {
        let mut rng = derive_rng(100 + i, "gate-corpus", 0);
        let cell = (rng.gen_range(0..8u32), rng.gen_range(0..8u32));
        corpus.push(planted_frame(cell, &mut rng));
    }

    let started = Instant::now();
    let mut agreements = 0;
    for (i, (img, planted)) in corpus.iter().enumerate() {
        // Brute-force scan of all 64 regions with the two-pass oracle.
        let oracle_set: Vec<Rect> = oracle_regions()
            .into_iter()
            .filter(|&r| {
                let (mean, var) = oracle_stats(img, r);
                var > 0.0 && var < cfg.var_max && mean > 0.0 && mean < cfg.mean_max
            })
            .collect();
        assert_eq!(oracle_set, vec![*planted], "image {i}: oracle gate set");

        let mut rng = derive_rng(7, &format!("gate-{i}"), 0);
        let field = select_noise_prone(img, &format!("img{i}"), &cfg, &mut rng)
            .expect("a planted region always qualifies");
        assert_eq!(field.source_rect, *planted, "image {i}: selected region");
        assert_eq!(field.image.dimensions(), (256, 256), "image {i}: field is full frame");
        // Gate re-checked post hoc on the selected region.
        let (mean, var) = oracle_stats(img, field.source_rect);
        assert!(var > 0.0 && var < cfg.var_max && mean > 0.0 && mean < cfg.mean_max);
        agreements += 1;
    }
    let elapsed = started.elapsed();
    assert_eq!(agreements, 20);
    assert!(elapsed.as_secs_f64() < 1.0, "scan took {elapsed:?}");
    println!(
        "ACCEPTANCE 1 noise gate: PASS (20/20 planted regions, brute-force agreement, {elapsed:?})"
    );
}

// ---------------------------------------------------------------------
// Criterion 2: blend algebra.
// ---------------------------------------------------------------------

fn random_image(w: u32, h: u32, rng: &mut ChaCha8Rng) -> GrayImage {
    GrayImage::from_fn(w, h, |_, _| rng.gen()).unwrap()
}

fn field_of(img: GrayImage) -> NoiseField {
    let (w, h) = img.dimensions();
    NoiseField { image: img, source_id: "n".into(), source_rect: Rect::new(0, 0, w, h) }
}

#[test]
fn acceptance_2_blend_algebra() {
    let mut rng = derive_rng(2, "blend", 0);

    // Endpoint identities, bit-exact.
    for _ in 0..50 {
        let input = random_image(16, 16, &mut rng);
        let noise = field_of(random_image(16, 16, &mut rng));
        assert_eq!(displace(&input, &noise, 0.0).unwrap(), input);
        assert_eq!(displace(&input, &noise, 1.0).unwrap(), noise.image);
    }

    // Constant-image arithmetic: 0.1*(100/255) + 0.9*(50/255) = 55/255,
    // within one quantization step on save.
    let input = GrayImage::constant(8, 8, 50).unwrap();
    let noise = field_of(GrayImage::constant(8, 8, 100).unwrap());
    let blended = displace(&input, &noise, 0.1).unwrap();
    assert!(blended.data().iter().all(|&v| (v as i32 - 55).abs() <= 1), "got {:?}", blended.data()[0]);

    // Convex bound over 1,000 random (image, noise, alpha) triples.
    let mut violations = 0u32;
    for _ in 0..1000 {
        let w = rng.gen_range(1..=24);
        let h = rng.gen_range(1..=24);
        let input = random_image(w, h, &mut rng);
        let noise = field_of(random_image(w, h, &mut rng));
        let alpha: f64 = rng.gen_range(0.0..=1.0);
        let out = displace(&input, &noise, alpha).unwrap();
        for ((&i, &n), &o) in input.data().iter().zip(noise.image.data()).zip(out.data()) {
            if o < i.min(n) || o > i.max(n) {
                violations += 1;
            }
        }
    }
    assert_eq!(violations, 0);
    println!("ACCEPTANCE 2 blend algebra: PASS (endpoints exact, constant case, 1000 convex triples)");
}

// ---------------------------------------------------------------------
// Criterion 3: negative-augmentation cardinality and conservation.
// ---------------------------------------------------------------------

/// Plant `z` one-to-three-pixel targets on a coarse grid so anchors never
/// overlap (cell pitch 9 against a 3x3 anchor).
fn plant_targets(z: usize, rng: &mut ChaCha8Rng) -> Mask {
    let mut cells: Vec<(u32, u32)> = (0..7u32).flat_map(|i| (0..7u32).map(move |j| (i, j))).collect();
    for i in (1..cells.len()).rev() {
        cells.swap(i, rng.gen_range(0..=i));
    }
    let mut points = Vec::new();
    for &(ci, cj) in cells.iter().take(z) {
        let (cx, cy) = (4 + 9 * ci, 4 + 9 * cj);
        points.push((cx, cy));
        for _ in 0..rng.gen_range(0..3) {
            let dx = rng.gen_range(-1i64..=1);
            let dy = rng.gen_range(-1i64..=1);
            points.push(((cx as i64 + dx) as u32, (cy as i64 + dy) as u32));
        }
    }
    Mask::from_fn(64, 64, |x, y| points.contains(&(x, y))).unwrap()
}

#[test]
fn acceptance_3_negative_cardinality_and_conservation() {
    let mut violations = 0u32;
    for trial in 0..500u64 {
        let mut rng = derive_rng(trial, "negaug-trials", 0);
        let z = rng.gen_range(0..=5usize);
        let img = random_image(64, 64, &mut rng);
        let mask = plant_targets(z, &mut rng);
        let targets = extract_targets(&mask);
        assert_eq!(targets.len(), z, "trial {trial}: planted target count");
        let variants = make_negatives(&img, &mask, &targets, 3).unwrap();
        if variants.len() != 4 * z {
            violations += 1;
            continue;
        }
        for v in &variants {
            if v.mask.foreground_count() != mask.foreground_count() {
                violations += 1;
            }
            // Pixel-diff oracle: outside the anchor rect nothing changes.
            let anchor = anchor_patch(&targets[v.target_id], 3, img.dimensions()).unwrap();
            for y in 0..64 {
                for x in 0..64 {
                    if anchor.rect.contains(x, y) {
                        continue;
                    }
                    if v.image.pixel(x, y) != img.pixel(x, y) || v.mask.pixel(x, y) != mask.pixel(x, y) {
                        violations += 1;
                    }
                }
            }
        }
    }
    assert_eq!(violations, 0, "{violations} violations over 500 trials");
    println!("ACCEPTANCE 3 negative augmentation: PASS (500 trials, 4z cardinality, 0 violations)");
}

// ---------------------------------------------------------------------
// Criterion 4: rotation group laws through the paste/rotate plumbing.
// ---------------------------------------------------------------------

#[test]
fn acceptance_4_rotation_group_laws() {
    let mut rng = derive_rng(4, "rotation", 0);
    for _ in 0..50 {
        let img = random_image(32, 32, &mut rng);
        let mask = plant_targets(2, &mut rng)
            .crop(Rect::new(0, 0, 32, 32))
            .unwrap();
        let targets = extract_targets(&mask);
        if targets.is_empty() {
            continue;
        }

        // The zero-angle variant is bit-identical to the source pair.
        let variants = make_negatives(&img, &mask, &targets, 3).unwrap();
        for v in variants.iter().filter(|v| v.beta == Rotation::Deg0) {
            assert_eq!(v.image, img);
            assert_eq!(v.mask, mask);
        }

        // Four compositions of the quarter-turn transform on the same
        // anchor recover the source exactly.
        for target in &targets {
            let anchor = anchor_patch(target, 3, img.dimensions()).unwrap();
            let (mut cur_img, mut cur_mask) = (img.clone(), mask.clone());
            for _ in 0..4 {
                let (next_img, next_mask) =
                    rotate_target_patch(&cur_img, &cur_mask, anchor.rect, 1).unwrap();
                cur_img = next_img;
                cur_mask = next_mask;
            }
            assert_eq!(cur_img, img);
            assert_eq!(cur_mask, mask);
        }
    }
    println!("ACCEPTANCE 4 rotation group laws: PASS (identity member, four-turn recovery)");
}

// ---------------------------------------------------------------------
// Criterion 5: metric oracles.
// ---------------------------------------------------------------------

/// Independent flood-fill components (pixel lists in raster order).
fn oracle_components(mask: &Mask) -> Vec<Vec<(u32, u32)>> {
    let (w, h) = mask.dimensions();
    let mut seen = vec![false; (w * h) as usize];
    let mut components = Vec::new();
    for y in 0..h {
        for x in 0..w {
            if mask.pixel(x, y) == 0 || seen[(y * w + x) as usize] {
                continue;
            }
            let mut stack = vec![(x, y)];
            seen[(y * w + x) as usize] = true;
            let mut pixels = Vec::new();
            while let Some((cx, cy)) = stack.pop() {
                pixels.push((cx, cy));
                for dy in -1i64..=1 {
                    for dx in -1i64..=1 {
                        let (nx, ny) = (cx as i64 + dx, cy as i64 + dy);
                        if nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
                            continue;
                        }
                        let (nx, ny) = (nx as u32, ny as u32);
                        if mask.pixel(nx, ny) == 1 && !seen[(ny * w + nx) as usize] {
                            seen[(ny * w + nx) as usize] = true;
                            stack.push((nx, ny));
                        }
                    }
                }
            }
            components.push(pixels);
        }
    }
    components
}

fn centroid(pixels: &[(u32, u32)]) -> (f64, f64) {
    let n = pixels.len() as f64;
    (
        pixels.iter().map(|&(x, _)| x as f64).sum::<f64>() / n,
        pixels.iter().map(|&(_, y)| y as f64).sum::<f64>() / n,
    )
}

/// Maximum-cardinality matching over the threshold graph via augmenting
/// paths: the exhaustive-assignment oracle for detection counts.
fn optimal_match_count(gt: &[(f64, f64)], pred: &[(f64, f64)], max_dist: f64) -> usize {
    let edges: Vec<Vec<usize>> = gt
        .iter()
        .map(|g| {
            pred.iter()
                .enumerate()
                .filter(|(_, p)| {
                    let (dx, dy) = (g.0 - p.0, g.1 - p.1);
                    (dx * dx + dy * dy).sqrt() <= max_dist
                })
                .map(|(j, _)| j)
                .collect()
        })
        .collect();
    let mut matched_pred: Vec<Option<usize>> = vec![None; pred.len()];

    fn augment(
        i: usize,
        edges: &[Vec<usize>],
        matched_pred: &mut [Option<usize>],
        visited: &mut [bool],
    ) -> bool {
        for &j in &edges[i] {
            if visited[j] {
                continue;
            }
            visited[j] = true;
            if matched_pred[j].is_none()
                || augment(matched_pred[j].unwrap(), edges, matched_pred, visited)
            {
                matched_pred[j] = Some(i);
                return true;
            }
        }
        false
    }

    let mut count = 0;
    for i in 0..gt.len() {
        let mut visited = vec![false; pred.len()];
        if augment(i, &edges, &mut matched_pred, &mut visited) {
            count += 1;
        }
    }
    count
}

/// Stamp a small blob (point, plus-shape, or filled square) around a
/// center, clamped to the frame.
fn stamp_blob(points: &mut Vec<(u32, u32)>, center: (u32, u32), kind: u8) {
    let (cx, cy) = (center.0 as i64, center.1 as i64);
    let offsets: &[(i64, i64)] = match kind % 3 {
        0 => &[(0, 0)],
        1 => &[(0, 0), (1, 0), (-1, 0), (0, 1), (0, -1)],
        _ => &[(0, 0), (1, 0), (0, 1), (1, 1)],
    };
    for &(dx, dy) in offsets {
        let (x, y) = (cx + dx, cy + dy);
        if (0..32).contains(&x) && (0..32).contains(&y) {
            points.push((x as u32, y as u32));
        }
    }
}

/// Random small-target mask pairs: up to six blob targets on a jittered
/// coarse grid, predictions perturbed by drops, shifts, size changes, and
/// spurious blips. Some trials plant two close targets so the greedy
/// matcher occasionally diverges from the optimal assignment.
fn metric_pair(trial: u64) -> (Mask, Mask) {
    let mut rng = derive_rng(trial, "metric-pairs", 0);
    let z = rng.gen_range(0..=6usize);
    let mut cells: Vec<(u32, u32)> =
        (0..4u32).flat_map(|i| (0..4u32).map(move |j| (i, j))).collect();
    for i in (1..cells.len()).rev() {
        cells.swap(i, rng.gen_range(0..=i));
    }
    let mut gt_centers: Vec<(u32, u32)> = cells
        .iter()
        .take(z)
        .map(|&(ci, cj)| {
            let jitter = |rng: &mut ChaCha8Rng| rng.gen_range(-1i64..=1);
            (
                (4 + 8 * ci as i64 + jitter(&mut rng)).clamp(1, 30) as u32,
                (4 + 8 * cj as i64 + jitter(&mut rng)).clamp(1, 30) as u32,
            )
        })
        .collect();
    if rng.gen_bool(0.3) && !gt_centers.is_empty() {
        // A companion target a few pixels away invites assignment splits.
        let (x, y) = gt_centers[0];
        gt_centers.push(((x + rng.gen_range(4..6)).min(30), y));
    }

    let mut gt_points = Vec::new();
    let mut gt_kinds = Vec::new();
    for &center in &gt_centers {
        let kind = rng.gen_range(0..3u8);
        gt_kinds.push(kind);
        stamp_blob(&mut gt_points, center, kind);
    }

    let mut pred_points = Vec::new();
    for (&(x, y), &kind) in gt_centers.iter().zip(&gt_kinds) {
        if rng.gen_bool(0.8) {
            let dx = rng.gen_range(-3i64..=3);
            let dy = rng.gen_range(-3i64..=3);
            let center = ((x as i64 + dx).clamp(0, 31) as u32, (y as i64 + dy).clamp(0, 31) as u32);
            // Size often differs from the ground truth blob.
            let pred_kind = if rng.gen_bool(0.5) { kind } else { rng.gen_range(0..3u8) };
            stamp_blob(&mut pred_points, center, pred_kind);
        }
    }
    for _ in 0..rng.gen_range(0..3usize) {
        stamp_blob(
            &mut pred_points,
            (rng.gen_range(0..32), rng.gen_range(0..32)),
            rng.gen_range(0..3u8),
        );
    }
    let gt = Mask::from_fn(32, 32, |x, y| gt_points.contains(&(x, y))).unwrap();
    let pred = Mask::from_fn(32, 32, |x, y| pred_points.contains(&(x, y))).unwrap();
    (pred, gt)
}

#[test]
fn acceptance_5_metric_oracle_equivalence() {
    let crit = MatchCriterion { max_centroid_dist: 3.0 };

    // Constructed divergence: greedy takes the closest pair (A-P at 1px)
    // and strands B, while the optimal assignment pairs A-Q and B-P. This
    // keeps the divergence-verification path below provably exercised.
    let gt = Mask::from_fn(32, 32, |x, y| y == 4 && (x == 4 || x == 8)).unwrap();
    let pred = Mask::from_fn(32, 32, |x, y| y == 4 && (x == 5 || x == 1)).unwrap();
    let greedy = match_targets(&pred, &gt, &crit).unwrap();
    let optimal = optimal_match_count(&[(4.0, 4.0), (8.0, 4.0)], &[(1.0, 4.0), (5.0, 4.0)], 3.0);
    assert_eq!(greedy.len(), 1);
    assert_eq!(optimal, 2);

    let mut divergences: Vec<(u64, usize, usize)> = Vec::new();
    for trial in 0..1000u64 {
        let (pred, gt) = metric_pair(trial);

        // IoU and Fa: exact agreement with per-pixel double loops.
        let (mut inter, mut union, mut false_px) = (0u64, 0u64, 0u64);
        for y in 0..32 {
            for x in 0..32 {
                let (p, g) = (pred.pixel(x, y), gt.pixel(x, y));
                inter += u64::from(p == 1 && g == 1);
                union += u64::from(p == 1 || g == 1);
                false_px += u64::from(p == 1 && g == 0);
            }
        }
        let want_iou = if union == 0 { 1.0 } else { inter as f64 / union as f64 };
        assert_eq!(iou(&pred, &gt).unwrap(), want_iou, "trial {trial}: iou");
        assert_eq!(fa(&pred, &gt).unwrap(), false_px as f64 / 1024.0, "trial {trial}: fa");

        // Pd: greedy vs the maximum-cardinality oracle.
        let gt_components = oracle_components(&gt);
        let pred_components = oracle_components(&pred);
        let gt_centroids: Vec<(f64, f64)> = gt_components.iter().map(|c| centroid(c)).collect();
        let pred_centroids: Vec<(f64, f64)> = pred_components.iter().map(|c| centroid(c)).collect();
        let optimal = optimal_match_count(&gt_centroids, &pred_centroids, 3.0);
        let matches = match_targets(&pred, &gt, &crit).unwrap();
        let gt_count = extract_targets(&gt).len();
        assert_eq!(gt_count, gt_components.len(), "trial {trial}: component count");
        assert!(matches.len() <= optimal, "trial {trial}: greedy exceeded the optimum");
        if matches.len() != optimal {
            divergences.push((trial, matches.len(), optimal));
        }
    }
    // Greedy may fall short of the optimal assignment, but rarely, and
    // every case must be a genuine divergence.
    assert!(
        divergences.len() < 10,
        "greedy/optimal divergences {} >= 1% ({divergences:?})",
        divergences.len()
    );
    for &(trial, greedy, optimal) in &divergences {
        assert!(optimal > greedy, "trial {trial}: logged divergence is not genuine");
        println!("  divergence: trial {trial}, greedy {greedy} vs optimal {optimal}");
    }
    println!(
        "ACCEPTANCE 5 metric oracles: PASS (1000 pairs, IoU/Fa exact, {} greedy/optimal divergences)",
        divergences.len()
    );
}

// ---------------------------------------------------------------------
// Criterion 6: gradient and forward-oracle checks.
// ---------------------------------------------------------------------

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-10)
}

/// Scalar-loop channel attention, written straight from the definition.
fn naive_channel_attention(f: &FeatureMap, p: &AffParams) -> Vec<f64> {
    let (c, h, w) = f.shape();
    let mlp = |input: &[f64]| -> Vec<f64> {
        let mut hidden_out = vec![0.0; p.hidden()];
        for j in 0..p.hidden() {
            let mut acc = p.mlp_b1()[j];
            for i in 0..c {
                acc += p.mlp_w1()[j * c + i] * input[i];
            }
            hidden_out[j] = acc.max(0.0);
        }
        let mut out = vec![0.0; c];
        for i in 0..c {
            let mut acc = p.mlp_b2()[i];
            for j in 0..p.hidden() {
                acc += p.mlp_w2()[i * p.hidden() + j] * hidden_out[j];
            }
            out[i] = acc;
        }
        out
    };
    let mut max_pool = vec![f64::NEG_INFINITY; c];
    let mut avg_pool = vec![0.0; c];
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                let v = f.get(ch, y, x);
                if v > max_pool[ch] {
                    max_pool[ch] = v;
                }
                avg_pool[ch] += v;
            }
        }
        avg_pool[ch] /= (h * w) as f64;
    }
    let a = mlp(&max_pool);
    let b = mlp(&avg_pool);
    let mut out = Vec::with_capacity(c * h * w);
    for ch in 0..c {
        let gate = 1.0 / (1.0 + (-(a[ch] + b[ch])).exp());
        for y in 0..h {
            for x in 0..w {
                out.push(gate * f.get(ch, y, x));
            }
        }
    }
    out
}

/// Scalar-loop spatial attention with explicit zero padding.
fn naive_spatial_attention(f: &FeatureMap, p: &AffParams) -> Vec<f64> {
    let (c, h, w) = f.shape();
    let plane = |y: usize, x: usize| -> (f64, f64) {
        let mut mx = f64::NEG_INFINITY;
        let mut sum = 0.0;
        for ch in 0..c {
            let v = f.get(ch, y, x);
            if v > mx {
                mx = v;
            }
            sum += v;
        }
        (mx, sum / c as f64)
    };
    let mut gate = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut acc = p.conv_bias();
            for ky in 0..7usize {
                for kx in 0..7usize {
                    let sy = y as isize + ky as isize - 3;
                    let sx = x as isize + kx as isize - 3;
                    if sy < 0 || sx < 0 || sy >= h as isize || sx >= w as isize {
                        continue;
                    }
                    let (mx, av) = plane(sy as usize, sx as usize);
                    acc += p.conv7()[ky * 7 + kx] * mx;
                    acc += p.conv7()[(7 + ky) * 7 + kx] * av;
                }
            }
            gate[y * w + x] = 1.0 / (1.0 + (-acc).exp());
        }
    }
    let mut out = Vec::with_capacity(c * h * w);
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                out.push(gate[y * w + x] * f.get(ch, y, x));
            }
        }
    }
    out
}

#[test]
fn acceptance_6_gradient_and_forward_checks() {
    let started = Instant::now();

    // Soft-IoU analytic gradient vs central differences, 50 instances.
    let step = 1e-5;
    for instance in 0..50u64 {
        let mut rng = derive_rng(instance, "softiou-fd", 0);
        let mask = Mask::from_fn(8, 8, |_, _| rng.gen_bool(0.25)).unwrap();
        let logits = FeatureMap::from_fn(1, 8, 8, |_, _, _| rng.gen_range(-2.0..2.0)).unwrap();
        let (_, analytic) = soft_iou_loss(&logits, &mask).unwrap();
        for i in 0..64 {
            let mut plus = logits.data().to_vec();
            plus[i] += step;
            let mut minus = logits.data().to_vec();
            minus[i] -= step;
            let (lp, _) = soft_iou_loss(&FeatureMap::new(1, 8, 8, plus).unwrap(), &mask).unwrap();
            let (lm, _) = soft_iou_loss(&FeatureMap::new(1, 8, 8, minus).unwrap(), &mask).unwrap();
            let numeric = (lp - lm) / (2.0 * step);
            let err = rel_err(analytic.data()[i], numeric);
            assert!(
                err < 1e-4,
                "instance {instance}, element {i}: rel err {err} (analytic {}, numeric {numeric})",
                analytic.data()[i]
            );
        }
    }

    // Attention forwards vs the scalar-loop oracles, absolute 1e-10.
    for instance in 0..10u64 {
        let mut rng = derive_rng(instance, "attention-oracle", 0);
        let channels = rng.gen_range(1..=6);
        let f = FeatureMap::random(channels, 8, 8, &mut rng).unwrap();
        let p = AffParams::random(channels, 4, &mut rng).unwrap();
        let got = channel_attention(&f, &p).unwrap();
        let want = naive_channel_attention(&f, &p);
        for (g, w) in got.data().iter().zip(&want) {
            assert!((g - w).abs() < 1e-10, "channel forward: {g} vs {w}");
        }
        let got = spatial_attention(&f, &p).unwrap();
        let want = naive_spatial_attention(&f, &p);
        for (g, w) in got.data().iter().zip(&want) {
            assert!((g - w).abs() < 1e-10, "spatial forward: {g} vs {w}");
        }
    }

    let elapsed = started.elapsed();
    assert!(elapsed.as_secs_f64() < 10.0, "checks took {elapsed:?}");
    println!("ACCEPTANCE 6 gradient checks: PASS (50 FD instances, 10 forward oracles, {elapsed:?})");
}

// ---------------------------------------------------------------------
// Criterion 7: build determinism.
// ---------------------------------------------------------------------

fn fixture_corpus(dir: &Path, frames: u32) {
    std::fs::create_dir_all(dir.join("images")).unwrap();
    std::fs::create_dir_all(dir.join("masks")).unwrap();
    for i in 0..frames {
        let mut rng = derive_rng(i as u64, "fixture", 0);
        let quiet_cell = (rng.gen_range(0..8u32), rng.gen_range(0..8u32));
        let quiet = Rect::new(quiet_cell.0 * 8, quiet_cell.1 * 8, 8, 8);
        let img = GrayImage::from_fn(64, 64, |x, y| {
            if quiet.contains(x, y) {
                (18 + (x + y) % 3) as u8
            } else {
                150u8.saturating_add((((x / 4) ^ (y / 4)) % 2 * 70) as u8)
            }
        })
        .unwrap();
        let mask = plant_targets(1 + (i as usize % 3), &mut rng);
        img.save(dir.join("images").join(format!("frame_{i:03}.png"))).unwrap();
        mask.save(dir.join("masks").join(format!("frame_{i:03}.png"))).unwrap();
    }
}

fn read_tree(root: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                files.push((rel, std::fs::read(&path).unwrap()));
            }
        }
    }
    files.sort();
    files
}

#[test]
fn acceptance_7_build_determinism() {
    let tmp = tempfile::tempdir().unwrap();
    let in_dir = tmp.path().join("in");
    fixture_corpus(&in_dir, 10);
    let cfg = BuildConfig {
        var_max: Some(0.01),
        mean_max: Some(0.2),
        ..BuildConfig::default()
    };
    let out_a = tmp.path().join("out_a");
    let out_b = tmp.path().join("out_b");
    let manifest_a = build_dataset(&in_dir, &out_a, &cfg, 1234).unwrap();
    let manifest_b = build_dataset(&in_dir, &out_b, &cfg, 1234).unwrap();
    assert_eq!(manifest_a.render(), manifest_b.render());
    let tree_a = read_tree(&out_a);
    let tree_b = read_tree(&out_b);
    assert_eq!(tree_a.len(), tree_b.len());
    for ((name_a, bytes_a), (name_b, bytes_b)) in tree_a.iter().zip(&tree_b) {
        assert_eq!(name_a, name_b);
        assert_eq!(bytes_a, bytes_b, "{name_a} differs between builds");
    }
    assert!(manifest_a.counts.originals == 10 && manifest_a.counts.total > 10);
    println!(
        "ACCEPTANCE 7 build determinism: PASS (10-image fixture, {} files byte-identical)",
        tree_a.len()
    );
}

// ---------------------------------------------------------------------
// Criterion 8: paper-scale numbers are reported, not gated; the metric
// suite on ground truth against itself must be perfect.
// ---------------------------------------------------------------------

#[test]
fn acceptance_8_reference_scale_status() {
    // Hard gate: ground-truth masks evaluated against themselves.
    let tmp = tempfile::tempdir().unwrap();
    let in_dir = tmp.path().join("in");
    fixture_corpus(&in_dir, 10);
    let masks_dir = in_dir.join("masks");
    let report = evaluate_report(&masks_dir, &masks_dir, &MatchCriterion::default()).unwrap();
    assert_eq!(report.iou, 1.0);
    assert_eq!(report.pd, 1.0);
    assert_eq!(report.fa, 0.0);

    // Informational: full-corpus expansion counts when the reference
    // training split is supplied. The published figures (663 originals,
    // 4899 generated, 5562 total) depend on that corpus's per-image
    // target counts and desk-scale hardware cannot reproduce the trained
    // detector results (IoU 92.78e-2, Pd 98.84e-2, Fa 2.735e-6), so the
    // comparison is reported but never asserted.
    match std::env::var("NUDT_SIRST_DIR") {
        Ok(dir) if Path::new(&dir).join("images").is_dir() => {
            let out = tmp.path().join("nudt_out");
            let manifest = build_dataset(Path::new(&dir), &out, &BuildConfig::default(), 0)
                .expect("reference corpus builds");
            let generated = manifest.counts.total - manifest.counts.originals;
            println!(
                "  reference corpus: originals={} generated={} total={} (published: 663/4899/5562)",
                manifest.counts.originals, generated, manifest.counts.total
            );
            if manifest.counts.total != 5562 {
                println!("  note: achieved counts differ from the published figure; informational only");
            }
        }
        _ => println!("  reference corpus not supplied (set NUDT_SIRST_DIR to report expansion counts)"),
    }

    // Per-pair route agrees with the corpus route on the same data.
    let mask = Mask::from_fn(32, 32, |x, y| (x, y) == (5, 5) || (x, y) == (20, 21)).unwrap();
    let (counts, _) = evaluate_pair(&mask, &mask, &MatchCriterion::default()).unwrap();
    assert_eq!(counts.t_correct, counts.t_all);
    assert_eq!(counts.false_pixels, 0);
    println!("ACCEPTANCE 8 reference-scale status: PASS (self-evaluation perfect, expansion informational)");
}
