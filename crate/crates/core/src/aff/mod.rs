//! Dense-tensor kernels: channel and spatial attention gating, the
//! four-level average-pool feature pyramid, the Soft-IoU loss with its
//! analytic gradient, and the per-negative loss aggregate.
//!
//! Everything here is plain `f64` with explicit loops; batch-level
//! parallelism belongs to the caller. Backward passes are verified against
//! central finite differences (see [`check`] and the test suite).

pub mod check;

use rand::Rng;

use crate::error::{Error, Result};
use crate::imaging::Mask;

/// Smoothing added to the Soft-IoU numerator and denominator; removes the
/// empty-mask singularity without measurably shifting nonempty losses.
pub const SOFT_IOU_EPS: f64 = 1e-6;

/// Dense `channels x height x width` map, row-major within each channel.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl FeatureMap {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(Error::ShapeMismatch(format!(
                "feature map dimensions must be nonzero, got {channels}x{height}x{width}"
            )));
        }
        if data.len() != channels * height * width {
            return Err(Error::ShapeMismatch(format!(
                "buffer of {} values does not fill {channels}x{height}x{width}",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteValue);
        }
        Ok(FeatureMap { channels, height, width, data })
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Result<Self> {
        FeatureMap::new(channels, height, width, vec![0.0; channels * height * width])
    }

    pub fn from_fn(
        channels: usize,
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(channels * height * width);
        for c in 0..channels {
            for y in 0..height {
                for x in 0..width {
                    data.push(f(c, y, x));
                }
            }
        }
        FeatureMap::new(channels, height, width, data)
    }

    pub fn random(channels: usize, height: usize, width: usize, rng: &mut impl Rng) -> Result<Self> {
        FeatureMap::from_fn(channels, height, width, |_, _, _| rng.gen_range(-1.0..1.0))
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }

    #[inline]
    fn set(&mut self, c: usize, y: usize, x: usize, v: f64) {
        self.data[(c * self.height + y) * self.width + x] = v;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Mean over every element.
    pub fn global_mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }
}

/// Parameters of the attention pair: one shared single-hidden-layer
/// perceptron for channel gating and a 7x7 two-channel convolution for
/// spatial gating.
#[derive(Debug, Clone, PartialEq)]
pub struct AffParams {
    channels: usize,
    hidden: usize,
    /// `hidden x channels`.
    mlp_w1: Vec<f64>,
    mlp_b1: Vec<f64>,
    /// `channels x hidden`.
    mlp_w2: Vec<f64>,
    mlp_b2: Vec<f64>,
    /// `2 x 7 x 7`, input channels ordered (max, avg).
    conv7: Vec<f64>,
    conv_bias: f64,
}

pub const CONV_SIDE: usize = 7;
const CONV_PAD: isize = 3;

impl AffParams {
    /// Conventional perceptron bottleneck ratio.
    pub const DEFAULT_REDUCTION: usize = 16;

    fn with_values(channels: usize, reduction: usize, mut value: impl FnMut() -> f64) -> Result<Self> {
        if channels == 0 {
            return Err(Error::ShapeMismatch("attention needs at least one channel".into()));
        }
        if reduction == 0 {
            return Err(Error::InvalidConfig("reduction ratio must be at least 1".into()));
        }
        let hidden = (channels / reduction).max(1);
        Ok(AffParams {
            channels,
            hidden,
            mlp_w1: (0..hidden * channels).map(|_| value()).collect(),
            mlp_b1: (0..hidden).map(|_| value()).collect(),
            mlp_w2: (0..channels * hidden).map(|_| value()).collect(),
            mlp_b2: (0..channels).map(|_| value()).collect(),
            conv7: (0..2 * CONV_SIDE * CONV_SIDE).map(|_| value()).collect(),
            conv_bias: value(),
        })
    }

    pub fn zeros(channels: usize, reduction: usize) -> Result<Self> {
        Self::with_values(channels, reduction, || 0.0)
    }

    pub fn random(channels: usize, reduction: usize, rng: &mut impl Rng) -> Result<Self> {
        Self::with_values(channels, reduction, || rng.gen_range(-0.5..0.5))
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    /// First perceptron layer, `hidden x channels` row-major.
    pub fn mlp_w1(&self) -> &[f64] {
        &self.mlp_w1
    }

    pub fn mlp_b1(&self) -> &[f64] {
        &self.mlp_b1
    }

    /// Second perceptron layer, `channels x hidden` row-major.
    pub fn mlp_w2(&self) -> &[f64] {
        &self.mlp_w2
    }

    pub fn mlp_b2(&self) -> &[f64] {
        &self.mlp_b2
    }

    /// Convolution taps, `2 x 7 x 7` with input channels ordered (max, avg).
    pub fn conv7(&self) -> &[f64] {
        &self.conv7
    }

    pub fn conv_bias(&self) -> f64 {
        self.conv_bias
    }

    /// Shared perceptron: `w2 * relu(w1 * v + b1) + b2`.
    fn mlp(&self, input: &[f64]) -> Vec<f64> {
        let pre: Vec<f64> = (0..self.hidden)
            .map(|j| {
                self.mlp_b1[j]
                    + (0..self.channels).map(|i| self.mlp_w1[j * self.channels + i] * input[i]).sum::<f64>()
            })
            .collect();
        (0..self.channels)
            .map(|i| {
                self.mlp_b2[i]
                    + (0..self.hidden)
                        .map(|j| self.mlp_w2[i * self.hidden + j] * pre[j].max(0.0))
                        .sum::<f64>()
            })
            .collect()
    }

    /// Gradient of the perceptron output w.r.t. its input, contracted with
    /// `grad_out`: returns `J^T grad_out`.
    fn mlp_input_grad(&self, input: &[f64], grad_out: &[f64]) -> Vec<f64> {
        let pre: Vec<f64> = (0..self.hidden)
            .map(|j| {
                self.mlp_b1[j]
                    + (0..self.channels).map(|i| self.mlp_w1[j * self.channels + i] * input[i]).sum::<f64>()
            })
            .collect();
        let grad_hidden: Vec<f64> = (0..self.hidden)
            .map(|j| {
                if pre[j] > 0.0 {
                    (0..self.channels).map(|i| self.mlp_w2[i * self.hidden + j] * grad_out[i]).sum()
                } else {
                    0.0
                }
            })
            .collect();
        (0..self.channels)
            .map(|i| (0..self.hidden).map(|j| self.mlp_w1[j * self.channels + i] * grad_hidden[j]).sum())
            .collect()
    }

    fn kernel(&self, input_channel: usize, ky: usize, kx: usize) -> f64 {
        self.conv7[(input_channel * CONV_SIDE + ky) * CONV_SIDE + kx]
    }
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

fn check_channels(f: &FeatureMap, p: &AffParams) -> Result<()> {
    if f.channels != p.channels {
        return Err(Error::ShapeMismatch(format!(
            "feature map has {} channels, params expect {}",
            f.channels, p.channels
        )));
    }
    Ok(())
}

/// Per-channel pooled statistics: (max, mean) over the spatial extent.
fn channel_pools(f: &FeatureMap) -> (Vec<f64>, Vec<f64>) {
    let spatial = f.height * f.width;
    let mut maxes = Vec::with_capacity(f.channels);
    let mut means = Vec::with_capacity(f.channels);
    for c in 0..f.channels {
        let slice = &f.data[c * spatial..(c + 1) * spatial];
        maxes.push(slice.iter().copied().fold(f64::NEG_INFINITY, f64::max));
        means.push(slice.iter().sum::<f64>() / spatial as f64);
    }
    (maxes, means)
}

fn channel_gate(f: &FeatureMap, p: &AffParams) -> Vec<f64> {
    let (maxes, means) = channel_pools(f);
    let from_max = p.mlp(&maxes);
    let from_avg = p.mlp(&means);
    (0..f.channels).map(|c| sigmoid(from_max[c] + from_avg[c])).collect()
}

/// Channel attention: sigmoid-gated per-channel scaling from pooled
/// global statistics pushed through the shared perceptron.
pub fn channel_attention(f: &FeatureMap, p: &AffParams) -> Result<FeatureMap> {
    check_channels(f, p)?;
    let gate = channel_gate(f, p);
    let spatial = f.height * f.width;
    let data = f
        .data
        .iter()
        .enumerate()
        .map(|(i, &v)| gate[i / spatial] * v)
        .collect();
    FeatureMap::new(f.channels, f.height, f.width, data)
}

/// Gradient of `sum(grad_out . channel_attention(f))` w.r.t. `f`.
///
/// The gate depends on the input through both pooled statistics, so the
/// product rule contributes a direct term plus max- and mean-pool paths.
pub fn channel_attention_backward(
    f: &FeatureMap,
    p: &AffParams,
    grad_out: &FeatureMap,
) -> Result<FeatureMap> {
    check_channels(f, p)?;
    if grad_out.shape() != f.shape() {
        return Err(Error::ShapeMismatch("cotangent shape differs from input".into()));
    }
    let (maxes, means) = channel_pools(f);
    let from_max = p.mlp(&maxes);
    let from_avg = p.mlp(&means);
    let gate: Vec<f64> = (0..f.channels).map(|c| sigmoid(from_max[c] + from_avg[c])).collect();

    let spatial = f.height * f.width;
    // dL/dgate[c] and the direct term.
    let mut grad = FeatureMap::zeros(f.channels, f.height, f.width)?;
    let mut grad_gate = vec![0.0; f.channels];
    for c in 0..f.channels {
        for y in 0..f.height {
            for x in 0..f.width {
                let go = grad_out.get(c, y, x);
                grad.set(c, y, x, gate[c] * go);
                grad_gate[c] += go * f.get(c, y, x);
            }
        }
    }
    // Through the sigmoid and the two shared-perceptron branches.
    let grad_z: Vec<f64> =
        (0..f.channels).map(|c| grad_gate[c] * gate[c] * (1.0 - gate[c])).collect();
    let grad_max_pool = p.mlp_input_grad(&maxes, &grad_z);
    let grad_avg_pool = p.mlp_input_grad(&means, &grad_z);

    for c in 0..f.channels {
        // Mean pool spreads evenly; max pool routes to the first argmax.
        let per_pixel = grad_avg_pool[c] / spatial as f64;
        let mut arg = (0, 0);
        let mut best = f64::NEG_INFINITY;
        for y in 0..f.height {
            for x in 0..f.width {
                let v = f.get(c, y, x);
                if v > best {
                    best = v;
                    arg = (y, x);
                }
                grad.set(c, y, x, grad.get(c, y, x) + per_pixel);
            }
        }
        grad.set(c, arg.0, arg.1, grad.get(c, arg.0, arg.1) + grad_max_pool[c]);
    }
    Ok(grad)
}

/// Cross-channel pooled planes: (max, mean) per pixel, the two input
/// channels of the 7x7 convolution, in that order.
fn spatial_pools(f: &FeatureMap) -> (Vec<f64>, Vec<f64>) {
    let spatial = f.height * f.width;
    let mut maxes = vec![f64::NEG_INFINITY; spatial];
    let mut means = vec![0.0; spatial];
    for c in 0..f.channels {
        for i in 0..spatial {
            let v = f.data[c * spatial + i];
            if v > maxes[i] {
                maxes[i] = v;
            }
            means[i] += v;
        }
    }
    for m in &mut means {
        *m /= f.channels as f64;
    }
    (maxes, means)
}

fn conv_logits(p: &AffParams, maxes: &[f64], means: &[f64], height: usize, width: usize) -> Vec<f64> {
    let mut logits = vec![0.0; height * width];
    for y in 0..height {
        for x in 0..width {
            let mut acc = p.conv_bias;
            for ky in 0..CONV_SIDE {
                for kx in 0..CONV_SIDE {
                    let sy = y as isize + ky as isize - CONV_PAD;
                    let sx = x as isize + kx as isize - CONV_PAD;
                    if sy < 0 || sx < 0 || sy >= height as isize || sx >= width as isize {
                        continue; // zero padding
                    }
                    let idx = sy as usize * width + sx as usize;
                    acc += p.kernel(0, ky, kx) * maxes[idx] + p.kernel(1, ky, kx) * means[idx];
                }
            }
            logits[y * width + x] = acc;
        }
    }
    logits
}

/// Spatial attention: per-pixel sigmoid gate from a 7x7 convolution (zero
/// padding 3, stride 1) over the stacked cross-channel max and mean
/// planes, broadcast-multiplied across channels.
pub fn spatial_attention(f: &FeatureMap, p: &AffParams) -> Result<FeatureMap> {
    check_channels(f, p)?;
    let (maxes, means) = spatial_pools(f);
    let logits = conv_logits(p, &maxes, &means, f.height, f.width);
    let spatial = f.height * f.width;
    let data = f
        .data
        .iter()
        .enumerate()
        .map(|(i, &v)| sigmoid(logits[i % spatial]) * v)
        .collect();
    FeatureMap::new(f.channels, f.height, f.width, data)
}

/// Gradient of `sum(grad_out . spatial_attention(f))` w.r.t. `f`.
pub fn spatial_attention_backward(
    f: &FeatureMap,
    p: &AffParams,
    grad_out: &FeatureMap,
) -> Result<FeatureMap> {
    check_channels(f, p)?;
    if grad_out.shape() != f.shape() {
        return Err(Error::ShapeMismatch("cotangent shape differs from input".into()));
    }
    let (maxes, means) = spatial_pools(f);
    let logits = conv_logits(p, &maxes, &means, f.height, f.width);
    let gate: Vec<f64> = logits.iter().map(|&z| sigmoid(z)).collect();

    let (height, width) = (f.height, f.width);
    let mut grad = FeatureMap::zeros(f.channels, height, width)?;
    let mut grad_gate = vec![0.0; height * width];
    for c in 0..f.channels {
        for y in 0..height {
            for x in 0..width {
                let go = grad_out.get(c, y, x);
                grad.set(c, y, x, gate[y * width + x] * go);
                grad_gate[y * width + x] += go * f.get(c, y, x);
            }
        }
    }
    let grad_z: Vec<f64> = grad_gate
        .iter()
        .zip(&gate)
        .map(|(&gg, &g)| gg * g * (1.0 - g))
        .collect();

    // Convolution transpose back onto the pooled planes.
    let mut grad_max_plane = vec![0.0; height * width];
    let mut grad_avg_plane = vec![0.0; height * width];
    for y in 0..height {
        for x in 0..width {
            let gz = grad_z[y * width + x];
            if gz == 0.0 {
                continue;
            }
            for ky in 0..CONV_SIDE {
                for kx in 0..CONV_SIDE {
                    let sy = y as isize + ky as isize - CONV_PAD;
                    let sx = x as isize + kx as isize - CONV_PAD;
                    if sy < 0 || sx < 0 || sy >= height as isize || sx >= width as isize {
                        continue;
                    }
                    let idx = sy as usize * width + sx as usize;
                    grad_max_plane[idx] += p.kernel(0, ky, kx) * gz;
                    grad_avg_plane[idx] += p.kernel(1, ky, kx) * gz;
                }
            }
        }
    }

    // Pool backward: mean spreads across channels, max routes to the
    // first argmax channel.
    for y in 0..height {
        for x in 0..width {
            let idx = y * width + x;
            let per_channel = grad_avg_plane[idx] / f.channels as f64;
            let mut arg = 0;
            let mut best = f64::NEG_INFINITY;
            for c in 0..f.channels {
                let v = f.get(c, y, x);
                if v > best {
                    best = v;
                    arg = c;
                }
                grad.set(c, y, x, grad.get(c, y, x) + per_channel);
            }
            grad.set(arg, y, x, grad.get(arg, y, x) + grad_max_plane[idx]);
        }
    }
    Ok(grad)
}

/// Four feature scales at factors {1, 1/2, 1/4, 1/8}.
#[derive(Debug, Clone, PartialEq)]
pub struct PyramidSet {
    pub levels: [FeatureMap; 4],
}

/// 2x average-pool downsampling; odd trailing rows/columns pool over the
/// pixels that exist, so output dims are the ceiling halves.
fn avg_pool2(f: &FeatureMap) -> FeatureMap {
    let oh = f.height.div_ceil(2);
    let ow = f.width.div_ceil(2);
    let mut data = Vec::with_capacity(f.channels * oh * ow);
    for c in 0..f.channels {
        for by in 0..oh {
            for bx in 0..ow {
                let y1 = (2 * by + 2).min(f.height);
                let x1 = (2 * bx + 2).min(f.width);
                let mut sum = 0.0;
                let mut count = 0usize;
                for y in 2 * by..y1 {
                    for x in 2 * bx..x1 {
                        sum += f.get(c, y, x);
                        count += 1;
                    }
                }
                data.push(sum / count as f64);
            }
        }
    }
    FeatureMap::new(f.channels, oh, ow, data).expect("pooled dims are nonzero")
}

/// Repeated 2x average-pool downsampling of the attention output into the
/// four-scale global feature set.
pub fn feature_pyramid(f: &FeatureMap) -> Result<PyramidSet> {
    if f.height < 8 || f.width < 8 {
        return Err(Error::ShapeMismatch(format!(
            "pyramid needs spatial dims of at least 8, got {}x{}",
            f.height, f.width
        )));
    }
    let half = avg_pool2(f);
    let quarter = avg_pool2(&half);
    let eighth = avg_pool2(&quarter);
    Ok(PyramidSet { levels: [f.clone(), half, quarter, eighth] })
}

/// Soft-IoU loss over sigmoid predictions, with the analytic gradient
/// w.r.t. the logits.
///
/// With `p = sigmoid(logits)`: intersection `I = sum(p*y)`, union
/// `U = sum(p) + sum(y) - I`, loss `1 - (I+eps)/(U+eps)`. The loss lies in
/// [0, 1] for every input.
pub fn soft_iou_loss(logits: &FeatureMap, y: &Mask) -> Result<(f64, FeatureMap)> {
    if logits.channels != 1 {
        return Err(Error::ShapeMismatch(format!(
            "soft-iou expects a single-channel logit map, got {} channels",
            logits.channels
        )));
    }
    if (logits.width as u32, logits.height as u32) != (y.width(), y.height()) {
        return Err(Error::ShapeMismatch(format!(
            "logit map is {}x{}, mask is {}x{}",
            logits.width,
            logits.height,
            y.width(),
            y.height()
        )));
    }

    let probs: Vec<f64> = logits.data.iter().map(|&z| sigmoid(z)).collect();
    let mask = y.data();
    let mut intersection = 0.0;
    let mut prob_sum = 0.0;
    let mut mask_sum = 0.0;
    for (&p, &m) in probs.iter().zip(mask) {
        intersection += p * f64::from(m);
        prob_sum += p;
        mask_sum += f64::from(m);
    }
    let union = prob_sum + mask_sum - intersection;
    let num = intersection + SOFT_IOU_EPS;
    let den = union + SOFT_IOU_EPS;
    let loss = 1.0 - num / den;

    // d loss / d p_k = -(y_k * den - num * (1 - y_k)) / den^2, chained with
    // the sigmoid derivative p (1 - p).
    let den_sq = den * den;
    let grad_data: Vec<f64> = probs
        .iter()
        .zip(mask)
        .map(|(&p, &m)| {
            let yk = f64::from(m);
            let dloss_dp = -(yk * den - num * (1.0 - yk)) / den_sq;
            dloss_dp * p * (1.0 - p)
        })
        .collect();
    let grad = FeatureMap::new(1, logits.height, logits.width, grad_data)?;
    Ok((loss, grad))
}

/// Aggregate of the per-negative losses: the optimized value is the sum;
/// the running minimum is kept alongside as a diagnostic.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NegLossSummary {
    pub sum: f64,
    pub min: f64,
}

pub fn l_neg(losses: &[f64]) -> Result<NegLossSummary> {
    if losses.is_empty() {
        return Err(Error::EmptyInput("no per-negative losses to aggregate".into()));
    }
    Ok(NegLossSummary {
        sum: losses.iter().sum(),
        min: losses.iter().copied().fold(f64::INFINITY, f64::min),
    })
}
