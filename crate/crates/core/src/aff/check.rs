//! Runnable invariant and gradient suite for the attention and loss
//! kernels. Each check is independent of the kernels' internal code paths:
//! forwards are recomputed with naive scalar loops and gradients with
//! central finite differences.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::aff::{
    channel_attention, channel_attention_backward, feature_pyramid, l_neg, soft_iou_loss,
    spatial_attention, spatial_attention_backward, AffParams, FeatureMap, CONV_SIDE,
};
use crate::imaging::Mask;
use crate::rng::derive_rng;

/// Result of one named check.
#[derive(Debug, Clone)]
pub struct CheckOutcome {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl CheckOutcome {
    fn new(name: String, passed: bool, detail: String) -> Self {
        CheckOutcome { name, passed, detail }
    }
}

const FORWARD_TOL: f64 = 1e-10;
const GRAD_TOL: f64 = 1e-4;
const FD_STEP: f64 = 1e-5;

/// Run every check for each `(channels, height, width)` size, plus the
/// size-independent aggregate checks.
pub fn run_all(seed: u64, sizes: &[(usize, usize, usize)]) -> Vec<CheckOutcome> {
    let mut outcomes = Vec::new();
    for (index, &(c, h, w)) in sizes.iter().enumerate() {
        let label = format!("{c}x{h}x{w}");
        let mut rng = derive_rng(seed, "aff-check", index as u64);
        let f = FeatureMap::random(c, h, w, &mut rng).expect("check sizes are nonzero");
        let params = AffParams::random(c, AffParams::DEFAULT_REDUCTION.min(c.max(1)), &mut rng)
            .expect("check channels are nonzero");

        outcomes.push(channel_forward_check(&label, &f, &params));
        outcomes.push(spatial_forward_check(&label, &f, &params));
        outcomes.push(gate_bound_check(&label, &f, &params));
        outcomes.push(channel_grad_check(&label, &f, &params, &mut rng));
        outcomes.push(spatial_grad_check(&label, &f, &params, &mut rng));
        outcomes.push(soft_iou_checks(&label, h, w, &mut rng));
        if h >= 8 && w >= 8 {
            outcomes.push(pyramid_check(&label, &f));
        }
    }
    outcomes.push(l_neg_check());
    outcomes
}

pub fn all_passed(outcomes: &[CheckOutcome]) -> bool {
    outcomes.iter().all(|o| o.passed)
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn max_rel_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| (x - y).abs() / x.abs().max(y.abs()).max(1e-10))
        .fold(0.0, f64::max)
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Naive per-element evaluation of the channel attention definition,
/// working from the raw parameter buffers with plain index loops.
fn channel_forward_oracle(f: &FeatureMap, p: &AffParams) -> Vec<f64> {
    let (c, h, w) = f.shape();
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
    let from_max = mlp_oracle(p, &max_pool);
    let from_avg = mlp_oracle(p, &avg_pool);
    let mut out = Vec::with_capacity(c * h * w);
    for ch in 0..c {
        let gate = sigmoid(from_max[ch] + from_avg[ch]);
        for y in 0..h {
            for x in 0..w {
                out.push(gate * f.get(ch, y, x));
            }
        }
    }
    out
}

fn mlp_oracle(p: &AffParams, input: &[f64]) -> Vec<f64> {
    let (channels, hidden) = (p.channels(), p.hidden());
    let mut pre = vec![0.0; hidden];
    for j in 0..hidden {
        let mut acc = p.mlp_b1[j];
        for i in 0..channels {
            acc += p.mlp_w1[j * channels + i] * input[i];
        }
        pre[j] = acc;
    }
    let mut out = vec![0.0; channels];
    for i in 0..channels {
        let mut acc = p.mlp_b2[i];
        for j in 0..hidden {
            acc += p.mlp_w2[i * hidden + j] * if pre[j] > 0.0 { pre[j] } else { 0.0 };
        }
        out[i] = acc;
    }
    out
}

/// Naive per-element evaluation of the spatial attention definition.
fn spatial_forward_oracle(f: &FeatureMap, p: &AffParams) -> Vec<f64> {
    let (c, h, w) = f.shape();
    let mut out = Vec::with_capacity(c * h * w);
    let mut gate = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut acc = p.conv_bias;
            for ky in 0..CONV_SIDE {
                for kx in 0..CONV_SIDE {
                    let sy = y as isize + ky as isize - 3;
                    let sx = x as isize + kx as isize - 3;
                    if sy < 0 || sx < 0 || sy >= h as isize || sx >= w as isize {
                        continue;
                    }
                    let (sy, sx) = (sy as usize, sx as usize);
                    let mut mx = f64::NEG_INFINITY;
                    let mut sum = 0.0;
                    for ch in 0..c {
                        let v = f.get(ch, sy, sx);
                        if v > mx {
                            mx = v;
                        }
                        sum += v;
                    }
                    acc += p.conv7[ky * CONV_SIDE + kx] * mx;
                    acc += p.conv7[(CONV_SIDE + ky) * CONV_SIDE + kx] * (sum / c as f64);
                }
            }
            gate[y * w + x] = sigmoid(acc);
        }
    }
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                out.push(gate[y * w + x] * f.get(ch, y, x));
            }
        }
    }
    out
}

fn channel_forward_check(label: &str, f: &FeatureMap, p: &AffParams) -> CheckOutcome {
    let got = channel_attention(f, p).expect("shapes agree");
    let want = channel_forward_oracle(f, p);
    let diff = max_abs_diff(got.data(), &want);
    CheckOutcome::new(
        format!("channel_attention_forward_oracle[{label}]"),
        diff < FORWARD_TOL,
        format!("max abs diff {diff:.3e} (tol {FORWARD_TOL:.0e})"),
    )
}

fn spatial_forward_check(label: &str, f: &FeatureMap, p: &AffParams) -> CheckOutcome {
    let got = spatial_attention(f, p).expect("shapes agree");
    let want = spatial_forward_oracle(f, p);
    let diff = max_abs_diff(got.data(), &want);
    CheckOutcome::new(
        format!("spatial_attention_forward_oracle[{label}]"),
        diff < FORWARD_TOL,
        format!("max abs diff {diff:.3e} (tol {FORWARD_TOL:.0e})"),
    )
}

fn gate_bound_check(label: &str, f: &FeatureMap, p: &AffParams) -> CheckOutcome {
    let mut ok = true;
    for out in [channel_attention(f, p), spatial_attention(f, p)] {
        let out = out.expect("shapes agree");
        ok &= out.data().iter().zip(f.data()).all(|(o, v)| o.abs() <= v.abs() + 1e-15);
    }
    CheckOutcome::new(
        format!("attention_gates_shrink[{label}]"),
        ok,
        "gated magnitudes bounded by input magnitudes".into(),
    )
}

fn fd_grad(
    f: &FeatureMap,
    cotangent: &FeatureMap,
    eval: impl Fn(&FeatureMap) -> FeatureMap,
) -> Vec<f64> {
    let objective = |m: &FeatureMap| -> f64 {
        eval(m).data().iter().zip(cotangent.data()).map(|(o, u)| o * u).sum()
    };
    let (c, h, w) = f.shape();
    let mut grads = Vec::with_capacity(c * h * w);
    for i in 0..c * h * w {
        let mut plus = f.data().to_vec();
        plus[i] += FD_STEP;
        let mut minus = f.data().to_vec();
        minus[i] -= FD_STEP;
        let lp = objective(&FeatureMap::new(c, h, w, plus).expect("finite perturbation"));
        let lm = objective(&FeatureMap::new(c, h, w, minus).expect("finite perturbation"));
        grads.push((lp - lm) / (2.0 * FD_STEP));
    }
    grads
}

fn channel_grad_check(label: &str, f: &FeatureMap, p: &AffParams, rng: &mut ChaCha8Rng) -> CheckOutcome {
    let (c, h, w) = f.shape();
    let cotangent = FeatureMap::random(c, h, w, rng).expect("shape is valid");
    let analytic = channel_attention_backward(f, p, &cotangent).expect("shapes agree");
    let numeric = fd_grad(f, &cotangent, |m| channel_attention(m, p).expect("shapes agree"));
    let rel = max_rel_diff(analytic.data(), &numeric);
    CheckOutcome::new(
        format!("channel_attention_grad_fd[{label}]"),
        rel < GRAD_TOL,
        format!("max rel err {rel:.3e} (tol {GRAD_TOL:.0e}, step {FD_STEP:.0e})"),
    )
}

fn spatial_grad_check(label: &str, f: &FeatureMap, p: &AffParams, rng: &mut ChaCha8Rng) -> CheckOutcome {
    let (c, h, w) = f.shape();
    let cotangent = FeatureMap::random(c, h, w, rng).expect("shape is valid");
    let analytic = spatial_attention_backward(f, p, &cotangent).expect("shapes agree");
    let numeric = fd_grad(f, &cotangent, |m| spatial_attention(m, p).expect("shapes agree"));
    let rel = max_rel_diff(analytic.data(), &numeric);
    CheckOutcome::new(
        format!("spatial_attention_grad_fd[{label}]"),
        rel < GRAD_TOL,
        format!("max rel err {rel:.3e} (tol {GRAD_TOL:.0e}, step {FD_STEP:.0e})"),
    )
}

fn soft_iou_checks(label: &str, h: usize, w: usize, rng: &mut ChaCha8Rng) -> CheckOutcome {
    let mask = Mask::from_fn(w as u32, h as u32, |_, _| rng.gen_bool(0.25)).expect("dims nonzero");
    let logits = FeatureMap::from_fn(1, h, w, |_, _, _| rng.gen_range(-2.0..2.0)).expect("dims nonzero");
    let (loss, analytic) = soft_iou_loss(&logits, &mask).expect("shapes agree");
    let mut numeric = Vec::with_capacity(h * w);
    for i in 0..h * w {
        let mut plus = logits.data().to_vec();
        plus[i] += FD_STEP;
        let mut minus = logits.data().to_vec();
        minus[i] -= FD_STEP;
        let (lp, _) = soft_iou_loss(&FeatureMap::new(1, h, w, plus).expect("finite"), &mask)
            .expect("shapes agree");
        let (lm, _) = soft_iou_loss(&FeatureMap::new(1, h, w, minus).expect("finite"), &mask)
            .expect("shapes agree");
        numeric.push((lp - lm) / (2.0 * FD_STEP));
    }
    let rel = max_rel_diff(analytic.data(), &numeric);
    let in_range = (0.0..=1.0).contains(&loss);
    CheckOutcome::new(
        format!("soft_iou_grad_fd[{label}]"),
        rel < GRAD_TOL && in_range,
        format!("max rel err {rel:.3e}, loss {loss:.6} in [0,1]: {in_range}"),
    )
}

fn pyramid_check(label: &str, f: &FeatureMap) -> CheckOutcome {
    let pyramid = feature_pyramid(f).expect("dims checked by caller");
    let (_, h, w) = f.shape();
    let mut dims_ok = true;
    let (mut eh, mut ew) = (h, w);
    for level in &pyramid.levels {
        dims_ok &= level.height() == eh && level.width() == ew;
        eh = eh.div_ceil(2);
        ew = ew.div_ceil(2);
    }
    // Exact mean preservation needs evenly divisible blocks at each level.
    let mean_testable = h % 8 == 0 && w % 8 == 0;
    let mut mean_ok = true;
    if mean_testable {
        let base = pyramid.levels[0].global_mean();
        for level in &pyramid.levels[1..] {
            mean_ok &= (level.global_mean() - base).abs() < 1e-12;
        }
    }
    CheckOutcome::new(
        format!("feature_pyramid[{label}]"),
        dims_ok && mean_ok,
        format!("dims halve: {dims_ok}, global mean preserved: {mean_ok}"),
    )
}

fn l_neg_check() -> CheckOutcome {
    let summary = l_neg(&[0.4, 0.2, 0.5, 0.1]).expect("nonempty");
    let ok = (summary.sum - 1.2).abs() < 1e-12 && summary.min == 0.1;
    CheckOutcome::new(
        "l_neg_aggregate".into(),
        ok,
        format!("sum {} (want 1.2), min {} (want 0.1)", summary.sum, summary.min),
    )
}
