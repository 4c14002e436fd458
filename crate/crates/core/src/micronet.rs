//! A small differentiable convolution toolkit.
//!
//! Every forward op has a matching backward op that returns exact gradients.
//! Feature stacks are channel-major: value `(c, y, x)` lives at
//! `(c * height + y) * width + x`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureStack {
    pub channels: usize,
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl FeatureStack {
    pub fn new(channels: usize, width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if channels == 0 || width == 0 || height == 0 {
            return Err(Error::ShapeMismatch(format!(
                "feature stack dims must be positive, got {channels}x{width}x{height}"
            )));
        }
        if data.len() != channels * width * height {
            return Err(Error::ShapeMismatch(format!(
                "{channels}x{width}x{height} stack needs {} values, got {}",
                channels * width * height,
                data.len()
            )));
        }
        Ok(Self {
            channels,
            width,
            height,
            data,
        })
    }

    pub fn zeros(channels: usize, width: usize, height: usize) -> Self {
        Self {
            channels,
            width,
            height,
            data: vec![0.0; channels * width * height],
        }
    }

    pub fn plane_len(&self) -> usize {
        self.width * self.height
    }

    pub fn plane(&self, c: usize) -> &[f64] {
        let n = self.plane_len();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn plane_mut(&mut self, c: usize) -> &mut [f64] {
        let n = self.plane_len();
        &mut self.data[c * n..(c + 1) * n]
    }

    pub fn same_dims(&self, other: &FeatureStack) -> bool {
        self.channels == other.channels && self.width == other.width && self.height == other.height
    }

    fn ensure_dims(&self, other: &FeatureStack, what: &str) -> Result<()> {
        if self.same_dims(other) {
            Ok(())
        } else {
            Err(Error::ShapeMismatch(format!(
                "{what}: {}x{}x{} vs {}x{}x{}",
                self.channels, self.width, self.height, other.channels, other.width, other.height
            )))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvLayer {
    pub out_channels: usize,
    pub in_channels: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub padding: usize,
    /// `[out][in][ky][kx]`, row-major.
    pub weight: Vec<f64>,
    pub bias: Option<Vec<f64>>,
}

/// How to fill a fresh layer's weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Init {
    /// Uniform in `[-b, b]` with `b = sqrt(6 / fan_in)`.
    KaimingUniform,
    /// Absolute value of the Kaiming draw, so non-negative inputs give
    /// non-negative outputs.
    KaimingNonNegative,
}

impl ConvLayer {
    pub fn zeros(
        out_channels: usize,
        in_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        bias: bool,
    ) -> Self {
        Self {
            out_channels,
            in_channels,
            kernel_h: kernel,
            kernel_w: kernel,
            stride,
            padding,
            weight: vec![0.0; out_channels * in_channels * kernel * kernel],
            bias: bias.then(|| vec![0.0; out_channels]),
        }
    }

    /// Seeded fresh layer; biases start at zero.
    #[allow(clippy::too_many_arguments)]
    pub fn init<R: Rng>(
        out_channels: usize,
        in_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        bias: bool,
        init: Init,
        rng: &mut R,
    ) -> Self {
        let mut layer = Self::zeros(out_channels, in_channels, kernel, stride, padding, bias);
        let fan_in = (in_channels * kernel * kernel) as f64;
        let bound = (6.0 / fan_in).sqrt();
        for w in &mut layer.weight {
            let v = rng.gen_range(-bound..bound);
            *w = match init {
                Init::KaimingUniform => v,
                Init::KaimingNonNegative => v.abs(),
            };
        }
        layer
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.as_ref().map_or(0, Vec::len)
    }

    pub fn output_size(&self, width: usize, height: usize) -> Result<(usize, usize)> {
        let axis = |n: usize, k: usize| -> Result<usize> {
            let padded = n + 2 * self.padding;
            if padded < k || self.stride == 0 {
                return Err(Error::ShapeMismatch(format!(
                    "kernel {k} does not fit padded extent {padded}"
                )));
            }
            Ok((padded - k) / self.stride + 1)
        };
        Ok((axis(width, self.kernel_w)?, axis(height, self.kernel_h)?))
    }

    fn w_index(&self, o: usize, i: usize, ky: usize, kx: usize) -> usize {
        ((o * self.in_channels + i) * self.kernel_h + ky) * self.kernel_w + kx
    }
}

/// Output positions `o` along one axis with `0 <= o*stride + k - pad < n`.
fn valid_range(out: usize, n: usize, k: usize, stride: usize, pad: usize) -> (usize, usize) {
    // o*stride >= pad - k
    let lo = if pad > k {
        (pad - k).div_ceil(stride)
    } else {
        0
    };
    // o*stride + k - pad <= n - 1
    let hi = if n + pad > k {
        ((n + pad - k - 1) / stride + 1).min(out)
    } else {
        0
    };
    (lo.min(hi), hi)
}

/// Cross-correlation with the layer's stride and zero padding.
pub fn conv2d_forward(x: &FeatureStack, layer: &ConvLayer) -> Result<FeatureStack> {
    if x.channels != layer.in_channels {
        return Err(Error::ShapeMismatch(format!(
            "conv expects {} input channels, got {}",
            layer.in_channels, x.channels
        )));
    }
    let (ow, oh) = layer.output_size(x.width, x.height)?;
    let mut out = FeatureStack::zeros(layer.out_channels, ow, oh);
    let (s, p) = (layer.stride, layer.padding);
    for o in 0..layer.out_channels {
        let b = layer.bias.as_ref().map_or(0.0, |b| b[o]);
        let plane = out.plane_mut(o);
        plane.fill(b);
        for i in 0..layer.in_channels {
            let src = x.plane(i);
            for ky in 0..layer.kernel_h {
                let (y0, y1) = valid_range(oh, x.height, ky, s, p);
                for kx in 0..layer.kernel_w {
                    let w = layer.weight[layer.w_index(o, i, ky, kx)];
                    let (x0, x1) = valid_range(ow, x.width, kx, s, p);
                    for oy in y0..y1 {
                        let iy = oy * s + ky - p;
                        let row = &src[iy * x.width..(iy + 1) * x.width];
                        let dst = &mut plane[oy * ow..(oy + 1) * ow];
                        if s == 1 {
                            let ix0 = x0 + kx - p;
                            for (d, v) in dst[x0..x1].iter_mut().zip(&row[ix0..ix0 + (x1 - x0)]) {
                                *d += w * v;
                            }
                        } else {
                            for ox in x0..x1 {
                                dst[ox] += w * row[ox * s + kx - p];
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvGrads {
    pub input: Option<FeatureStack>,
    pub weight: Vec<f64>,
    pub bias: Option<Vec<f64>>,
}

/// Gradients of [`conv2d_forward`] for the given upstream gradient.
pub fn conv2d_backward(
    x: &FeatureStack,
    layer: &ConvLayer,
    upstream: &FeatureStack,
) -> Result<ConvGrads> {
    conv2d_backward_impl(x, layer, upstream, true)
}

pub(crate) fn conv2d_backward_impl(
    x: &FeatureStack,
    layer: &ConvLayer,
    upstream: &FeatureStack,
    need_input: bool,
) -> Result<ConvGrads> {
    if x.channels != layer.in_channels {
        return Err(Error::ShapeMismatch("conv backward: input channels".into()));
    }
    let (ow, oh) = layer.output_size(x.width, x.height)?;
    if upstream.channels != layer.out_channels || upstream.width != ow || upstream.height != oh {
        return Err(Error::ShapeMismatch(
            "conv backward: upstream gradient does not match forward output".into(),
        ));
    }
    let (s, p) = (layer.stride, layer.padding);
    let mut gw = vec![0.0; layer.weight.len()];
    let mut gx = need_input.then(|| FeatureStack::zeros(x.channels, x.width, x.height));
    let gb = layer.bias.as_ref().map(|_| {
        (0..layer.out_channels)
            .map(|o| upstream.plane(o).iter().sum())
            .collect::<Vec<f64>>()
    });
    for o in 0..layer.out_channels {
        let up = upstream.plane(o);
        for i in 0..layer.in_channels {
            let src = x.plane(i);
            for ky in 0..layer.kernel_h {
                let (y0, y1) = valid_range(oh, x.height, ky, s, p);
                for kx in 0..layer.kernel_w {
                    let wi = layer.w_index(o, i, ky, kx);
                    let w = layer.weight[wi];
                    let (x0, x1) = valid_range(ow, x.width, kx, s, p);
                    let mut acc = 0.0;
                    for oy in y0..y1 {
                        let iy = oy * s + ky - p;
                        let urow = &up[oy * ow..(oy + 1) * ow];
                        let base = iy * x.width;
                        if s == 1 {
                            let ix0 = base + x0 + kx - p;
                            let n = x1 - x0;
                            acc += urow[x0..x1]
                                .iter()
                                .zip(&src[ix0..ix0 + n])
                                .map(|(u, v)| u * v)
                                .sum::<f64>();
                            if let Some(g) = gx.as_mut() {
                                let gp = g.plane_mut(i);
                                for (d, u) in gp[ix0..ix0 + n].iter_mut().zip(&urow[x0..x1]) {
                                    *d += w * u;
                                }
                            }
                        } else {
                            for ox in x0..x1 {
                                let ix = base + ox * s + kx - p;
                                acc += urow[ox] * src[ix];
                                if let Some(g) = gx.as_mut() {
                                    g.plane_mut(i)[ix] += w * urow[ox];
                                }
                            }
                        }
                    }
                    gw[wi] += acc;
                }
            }
        }
    }
    Ok(ConvGrads {
        input: gx,
        weight: gw,
        bias: gb,
    })
}

pub fn relu(x: &FeatureStack) -> FeatureStack {
    FeatureStack {
        data: x.data.iter().map(|v| v.max(0.0)).collect(),
        ..x.clone_dims()
    }
}

/// Masks `upstream` by `input > 0`.
pub fn relu_backward(input: &FeatureStack, upstream: &FeatureStack) -> Result<FeatureStack> {
    input.ensure_dims(upstream, "relu backward")?;
    Ok(FeatureStack {
        data: input
            .data
            .iter()
            .zip(&upstream.data)
            .map(|(v, g)| if *v > 0.0 { *g } else { 0.0 })
            .collect(),
        ..input.clone_dims()
    })
}

impl FeatureStack {
    fn clone_dims(&self) -> FeatureStack {
        FeatureStack {
            channels: self.channels,
            width: self.width,
            height: self.height,
            data: Vec::new(),
        }
    }
}

/// Non-overlapping 2x2 mean.
pub fn avg_pool2(x: &FeatureStack) -> Result<FeatureStack> {
    if x.width % 2 != 0 || x.height % 2 != 0 {
        return Err(Error::OddDimension {
            width: x.width,
            height: x.height,
        });
    }
    let (ow, oh) = (x.width / 2, x.height / 2);
    let mut out = FeatureStack::zeros(x.channels, ow, oh);
    for c in 0..x.channels {
        let src = x.plane(c);
        let dst = out.plane_mut(c);
        for oy in 0..oh {
            let r0 = &src[2 * oy * x.width..(2 * oy + 1) * x.width];
            let r1 = &src[(2 * oy + 1) * x.width..(2 * oy + 2) * x.width];
            for ox in 0..ow {
                dst[oy * ow + ox] =
                    (r0[2 * ox] + r0[2 * ox + 1] + r1[2 * ox] + r1[2 * ox + 1]) * 0.25;
            }
        }
    }
    Ok(out)
}

/// Spreads each pooled gradient evenly over its 2x2 window.
pub fn avg_pool2_backward(
    upstream: &FeatureStack,
    width: usize,
    height: usize,
) -> Result<FeatureStack> {
    if width % 2 != 0 || height % 2 != 0 {
        return Err(Error::OddDimension { width, height });
    }
    if upstream.width * 2 != width || upstream.height * 2 != height {
        return Err(Error::ShapeMismatch("pool backward: size".into()));
    }
    let mut out = FeatureStack::zeros(upstream.channels, width, height);
    for c in 0..upstream.channels {
        let up = upstream.plane(c);
        let dst = out.plane_mut(c);
        for y in 0..height {
            for x in 0..width {
                dst[y * width + x] = up[(y / 2) * upstream.width + x / 2] * 0.25;
            }
        }
    }
    Ok(out)
}

/// Per output coordinate: two source indices and the weight of the second.
fn bilinear_axis(src: usize, dst: usize) -> Vec<(usize, usize, f64)> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|d| {
            let pos = ((d as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (pos.floor() as usize).min(src - 1);
            let i1 = (i0 + 1).min(src - 1);
            let frac = if i1 == i0 { 0.0 } else { pos - i0 as f64 };
            (i0, i1, frac)
        })
        .collect()
}

/// Bilinear interpolation with half-pixel centres (edge-clamped).
pub fn bilinear_resize(x: &FeatureStack, width: usize, height: usize) -> Result<FeatureStack> {
    if width == 0 || height == 0 {
        return Err(Error::ShapeMismatch(
            "resize target must be positive".into(),
        ));
    }
    if width == x.width && height == x.height {
        return Ok(x.clone());
    }
    let ax = bilinear_axis(x.width, width);
    let ay = bilinear_axis(x.height, height);
    let mut out = FeatureStack::zeros(x.channels, width, height);
    for c in 0..x.channels {
        let src = x.plane(c);
        let dst = out.plane_mut(c);
        for (oy, &(y0, y1, fy)) in ay.iter().enumerate() {
            let r0 = &src[y0 * x.width..(y0 + 1) * x.width];
            let r1 = &src[y1 * x.width..(y1 + 1) * x.width];
            for (ox, &(x0, x1, fx)) in ax.iter().enumerate() {
                let top = r0[x0] * (1.0 - fx) + r0[x1] * fx;
                let bottom = r1[x0] * (1.0 - fx) + r1[x1] * fx;
                dst[oy * width + ox] = top * (1.0 - fy) + bottom * fy;
            }
        }
    }
    Ok(out)
}

/// Transpose of [`bilinear_resize`]: scatters `upstream` back onto a
/// `width x height` grid.
pub fn bilinear_resize_backward(
    upstream: &FeatureStack,
    width: usize,
    height: usize,
) -> Result<FeatureStack> {
    if width == 0 || height == 0 {
        return Err(Error::ShapeMismatch(
            "resize source must be positive".into(),
        ));
    }
    if width == upstream.width && height == upstream.height {
        return Ok(upstream.clone());
    }
    let ax = bilinear_axis(width, upstream.width);
    let ay = bilinear_axis(height, upstream.height);
    let mut out = FeatureStack::zeros(upstream.channels, width, height);
    for c in 0..upstream.channels {
        let up = upstream.plane(c);
        let dst = out.plane_mut(c);
        for (oy, &(y0, y1, fy)) in ay.iter().enumerate() {
            for (ox, &(x0, x1, fx)) in ax.iter().enumerate() {
                let g = up[oy * upstream.width + ox];
                dst[y0 * width + x0] += g * (1.0 - fy) * (1.0 - fx);
                dst[y0 * width + x1] += g * (1.0 - fy) * fx;
                dst[y1 * width + x0] += g * fy * (1.0 - fx);
                dst[y1 * width + x1] += g * fy * fx;
            }
        }
    }
    Ok(out)
}

/// Stacks inputs along the channel axis.
pub fn concat_channels(stacks: &[FeatureStack]) -> Result<FeatureStack> {
    let first = stacks
        .first()
        .ok_or_else(|| Error::ShapeMismatch("nothing to concatenate".into()))?;
    let mut data = Vec::new();
    let mut channels = 0;
    for s in stacks {
        if s.width != first.width || s.height != first.height {
            return Err(Error::ShapeMismatch(format!(
                "concat needs equal spatial dims: {}x{} vs {}x{}",
                first.width, first.height, s.width, s.height
            )));
        }
        channels += s.channels;
        data.extend_from_slice(&s.data);
    }
    FeatureStack::new(channels, first.width, first.height, data)
}

/// Inverse of [`concat_channels`]; also splits gradients.
pub fn split_channels(stack: &FeatureStack, channels: &[usize]) -> Result<Vec<FeatureStack>> {
    if channels.iter().sum::<usize>() != stack.channels {
        return Err(Error::ShapeMismatch("split channel counts".into()));
    }
    let plane = stack.plane_len();
    let mut offset = 0;
    channels
        .iter()
        .map(|&c| {
            let part = stack.data[offset * plane..(offset + c) * plane].to_vec();
            offset += c;
            FeatureStack::new(c, stack.width, stack.height, part)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SgdConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// `(epoch, multiplier)`: from `epoch` (0-based) on, the rate is scaled.
    pub schedule: Vec<(usize, f64)>,
}

impl Default for SgdConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            momentum: 0.9,
            weight_decay: 1e-4,
            schedule: Vec::new(),
        }
    }
}

impl SgdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::InvalidConfig("learning_rate must be >= 0".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidConfig("momentum must lie in [0, 1)".into()));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::InvalidConfig("weight_decay must be >= 0".into()));
        }
        Ok(())
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.schedule
            .iter()
            .filter(|(e, _)| *e <= epoch)
            .fold(self.learning_rate, |lr, (_, m)| lr * m)
    }
}

/// Momentum buffers, one per parameter tensor.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SgdState {
    pub velocity: Vec<Vec<f64>>,
}

/// A named, mutable view of one parameter tensor.
pub struct ParamMut<'a> {
    pub name: String,
    pub values: &'a mut [f64],
}

/// Classical momentum with weight decay folded into the gradient:
/// `v = m*v + (g + wd*w)`, `w = w - lr*v`.
pub fn sgd_step(
    params: &mut [ParamMut<'_>],
    grads: &[Vec<f64>],
    state: &mut SgdState,
    cfg: &SgdConfig,
    lr: f64,
) -> Result<()> {
    if params.len() != grads.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} parameter tensors but {} gradients",
            params.len(),
            grads.len()
        )));
    }
    for (p, g) in params.iter().zip(grads) {
        if p.values.len() != g.len() {
            return Err(Error::ShapeMismatch(format!(
                "gradient size for `{}`",
                p.name
            )));
        }
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteGradient(p.name.clone()));
        }
    }
    if state.velocity.is_empty() {
        state.velocity = grads.iter().map(|g| vec![0.0; g.len()]).collect();
    }
    if state.velocity.len() != grads.len() {
        return Err(Error::ShapeMismatch("optimizer state size".into()));
    }
    for ((p, g), v) in params.iter_mut().zip(grads).zip(&mut state.velocity) {
        for ((w, gi), vi) in p.values.iter_mut().zip(g).zip(v.iter_mut()) {
            *vi = cfg.momentum * *vi + (gi + cfg.weight_decay * *w);
            *w -= lr * *vi;
        }
    }
    Ok(())
}
