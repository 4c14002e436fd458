//! Encoder backbones, the single-map encoder head and the multi-level decoder.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{NamedTensor, TensorSource};
use crate::error::{Error, Result};
use crate::grid::DensityMap;
use crate::micronet::{
    avg_pool2, avg_pool2_backward, bilinear_resize, bilinear_resize_backward, concat_channels,
    conv2d_backward_impl, conv2d_forward, relu, relu_backward, split_channels, ConvLayer,
    FeatureStack, Init, ParamMut,
};

/// Shape of a [`TinyBackbone`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackboneConfig {
    pub in_channels: usize,
    /// Output channels of each stage.
    pub stage_channels: Vec<usize>,
    /// 3x3 conv + ReLU pairs per stage, before the 2x2 average pool.
    pub convs_per_stage: usize,
    /// Stage indices whose outputs are exported as multi-level features.
    pub taps: Vec<usize>,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        Self {
            in_channels: 3,
            stage_channels: vec![16, 32, 64],
            convs_per_stage: 2,
            taps: vec![0, 1, 2],
        }
    }
}

impl BackboneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.convs_per_stage == 0 || self.stage_channels.is_empty() {
            return Err(Error::InvalidConfig(
                "backbone needs input channels, stages and convs per stage".into(),
            ));
        }
        if self.stage_channels.contains(&0) {
            return Err(Error::InvalidConfig("stage with zero channels".into()));
        }
        if self.taps.is_empty() || self.taps.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidConfig(
                "taps must be non-empty and strictly increasing".into(),
            ));
        }
        if self.taps.iter().any(|&t| t >= self.stage_channels.len()) {
            return Err(Error::InvalidConfig("tap index beyond last stage".into()));
        }
        Ok(())
    }

    /// Channel count of each exported tap, in depth order.
    pub fn tap_channels(&self) -> Vec<usize> {
        self.taps.iter().map(|&t| self.stage_channels[t]).collect()
    }

    pub fn last_channels(&self) -> usize {
        *self.stage_channels.last().expect("validated")
    }

    /// Inputs must halve cleanly at every stage.
    pub fn size_divisor(&self) -> usize {
        1 << self.stage_channels.len()
    }
}

/// Stack of conv/ReLU stages, each closed by a 2x2 average pool.
#[derive(Debug, Clone, PartialEq)]
pub struct TinyBackbone {
    pub config: BackboneConfig,
    pub stages: Vec<Vec<ConvLayer>>,
}

/// Activations kept from a forward pass for backpropagation.
pub struct BackboneTrace {
    conv_inputs: Vec<Vec<FeatureStack>>,
    pre_activations: Vec<Vec<FeatureStack>>,
    pub stage_outputs: Vec<FeatureStack>,
}

impl TinyBackbone {
    pub fn new(config: BackboneConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut stages = Vec::new();
        let mut in_c = config.in_channels;
        for &out_c in &config.stage_channels {
            let mut convs = Vec::new();
            for _ in 0..config.convs_per_stage {
                convs.push(ConvLayer::init(
                    out_c,
                    in_c,
                    3,
                    1,
                    1,
                    true,
                    Init::KaimingUniform,
                    &mut rng,
                ));
                in_c = out_c;
            }
            stages.push(convs);
        }
        Ok(Self { config, stages })
    }

    pub fn param_count(&self) -> usize {
        self.stages
            .iter()
            .flatten()
            .map(ConvLayer::param_count)
            .sum()
    }

    pub fn check_input(&self, x: &FeatureStack) -> Result<()> {
        let d = self.config.size_divisor();
        if x.channels != self.config.in_channels {
            return Err(Error::ArchitectureMismatch(format!(
                "backbone expects {} input channels, image has {}",
                self.config.in_channels, x.channels
            )));
        }
        if x.width % d != 0 || x.height % d != 0 {
            return Err(Error::ArchitectureMismatch(format!(
                "input {}x{} is not divisible by {d}",
                x.width, x.height
            )));
        }
        Ok(())
    }

    pub fn forward(&self, x: &FeatureStack) -> Result<BackboneTrace> {
        self.check_input(x)?;
        let mut conv_inputs = Vec::with_capacity(self.stages.len());
        let mut pre_activations = Vec::with_capacity(self.stages.len());
        let mut stage_outputs = Vec::with_capacity(self.stages.len());
        let mut cur = x.clone();
        for convs in &self.stages {
            let mut ins = Vec::with_capacity(convs.len());
            let mut pres = Vec::with_capacity(convs.len());
            for conv in convs {
                let pre = conv2d_forward(&cur, conv)?;
                let act = relu(&pre);
                ins.push(std::mem::replace(&mut cur, act));
                pres.push(pre);
            }
            let pooled = avg_pool2(&cur)?;
            ins.push(std::mem::replace(&mut cur, pooled.clone()));
            conv_inputs.push(ins);
            pre_activations.push(pres);
            stage_outputs.push(pooled);
        }
        Ok(BackboneTrace {
            conv_inputs,
            pre_activations,
            stage_outputs,
        })
    }

    /// Forward pass keeping only the stage outputs.
    pub fn stage_outputs(&self, x: &FeatureStack) -> Result<Vec<FeatureStack>> {
        self.check_input(x)?;
        let mut cur = x.clone();
        let mut outs = Vec::with_capacity(self.stages.len());
        for convs in &self.stages {
            for conv in convs {
                cur = relu(&conv2d_forward(&cur, conv)?);
            }
            cur = avg_pool2(&cur)?;
            outs.push(cur.clone());
        }
        Ok(outs)
    }

    /// Gradients for every backbone parameter (in [`Self::params_mut`] order)
    /// given gradients arriving at each stage output.
    pub fn backward(
        &self,
        trace: &BackboneTrace,
        mut stage_grads: Vec<Option<FeatureStack>>,
    ) -> Result<Vec<Vec<f64>>> {
        if stage_grads.len() != self.stages.len() {
            return Err(Error::ShapeMismatch("one gradient slot per stage".into()));
        }
        let mut grads: Vec<Vec<f64>> = Vec::new();
        let mut carry: Option<FeatureStack> = None;
        for s in (0..self.stages.len()).rev() {
            let mut g = match (stage_grads[s].take(), carry.take()) {
                (Some(a), Some(b)) => add(a, &b),
                (Some(a), None) => a,
                (None, Some(b)) => b,
                (None, None) => {
                    let zeros = self.stages[s]
                        .iter()
                        .flat_map(|c| [vec![0.0; c.weight.len()], vec![0.0; c.out_channels]])
                        .collect();
                    push_stage_front(&mut grads, zeros);
                    continue;
                }
            };
            let convs = &self.stages[s];
            let ins = &trace.conv_inputs[s];
            let pool_in = &ins[convs.len()];
            g = avg_pool2_backward(&g, pool_in.width, pool_in.height)?;
            let mut stage_g: Vec<Vec<f64>> = vec![Vec::new(); 2 * convs.len()];
            for k in (0..convs.len()).rev() {
                g = relu_backward(&trace.pre_activations[s][k], &g)?;
                let need_input = !(s == 0 && k == 0);
                let cg = conv2d_backward_impl(&ins[k], &convs[k], &g, need_input)?;
                stage_g[2 * k] = cg.weight;
                stage_g[2 * k + 1] = cg.bias.unwrap_or_default();
                if let Some(gx) = cg.input {
                    g = gx;
                }
            }
            if s > 0 {
                carry = Some(g);
            }
            push_stage_front(&mut grads, stage_g);
        }
        Ok(grads)
    }

    pub fn params_mut(&mut self) -> Vec<ParamMut<'_>> {
        let mut out = Vec::new();
        for (s, convs) in self.stages.iter_mut().enumerate() {
            for (k, conv) in convs.iter_mut().enumerate() {
                out.push(ParamMut {
                    name: format!("backbone.stage{s}.conv{k}.weight"),
                    values: &mut conv.weight,
                });
                out.push(ParamMut {
                    name: format!("backbone.stage{s}.conv{k}.bias"),
                    values: conv.bias.as_mut().expect("backbone convs carry bias"),
                });
            }
        }
        out
    }

    pub fn tensors(&self) -> Vec<NamedTensor> {
        let mut out = Vec::new();
        for (s, convs) in self.stages.iter().enumerate() {
            for (k, conv) in convs.iter().enumerate() {
                let prefix = format!("backbone.stage{s}.conv{k}");
                out.extend(conv_tensors(&prefix, conv));
            }
        }
        out
    }

    pub fn from_tensors(config: BackboneConfig, src: &mut TensorSource<'_>) -> Result<Self> {
        let mut net = Self::new(config, 0)?;
        for (s, convs) in net.stages.iter_mut().enumerate() {
            for (k, conv) in convs.iter_mut().enumerate() {
                load_conv(&format!("backbone.stage{s}.conv{k}"), conv, src)?;
            }
        }
        Ok(net)
    }
}

fn push_stage_front(grads: &mut Vec<Vec<f64>>, stage: Vec<Vec<f64>>) {
    let tail = std::mem::take(grads);
    *grads = stage;
    grads.extend(tail);
}

fn add(mut a: FeatureStack, b: &FeatureStack) -> FeatureStack {
    for (x, y) in a.data.iter_mut().zip(&b.data) {
        *x += y;
    }
    a
}

fn conv_tensors(prefix: &str, conv: &ConvLayer) -> Vec<NamedTensor> {
    let mut out = vec![NamedTensor::from_f64(
        format!("{prefix}.weight"),
        vec![
            conv.out_channels,
            conv.in_channels,
            conv.kernel_h,
            conv.kernel_w,
        ],
        &conv.weight,
    )];
    if let Some(b) = &conv.bias {
        out.push(NamedTensor::from_f64(
            format!("{prefix}.bias"),
            vec![conv.out_channels],
            b,
        ));
    }
    out
}

fn load_conv(prefix: &str, conv: &mut ConvLayer, src: &mut TensorSource<'_>) -> Result<()> {
    conv.weight = src.take(
        &format!("{prefix}.weight"),
        &[
            conv.out_channels,
            conv.in_channels,
            conv.kernel_h,
            conv.kernel_w,
        ],
    )?;
    if let Some(b) = conv.bias.as_mut() {
        *b = src.take(&format!("{prefix}.bias"), &[conv.out_channels])?;
    }
    Ok(())
}

/// Wraps a feature plane as a density map (values must be non-negative).
pub(crate) fn plane_to_map(x: &FeatureStack) -> Result<DensityMap> {
    DensityMap::new(x.width, x.height, x.data.clone())
}

/// Backbone plus a bias-free 1x1 compression to one map, scored at input
/// resolution. Only the last stage feeds the head.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderModel {
    pub backbone: TinyBackbone,
    pub head: ConvLayer,
}

pub struct EncoderTrace {
    backbone: BackboneTrace,
    head_pre: FeatureStack,
    head_out: FeatureStack,
}

impl EncoderModel {
    pub fn new(config: BackboneConfig, head_bias: bool, seed: u64) -> Result<Self> {
        let backbone = TinyBackbone::new(config, seed)?;
        // Separate stream so the head does not perturb backbone draws.
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(1);
        let head = ConvLayer::init(
            1,
            backbone.config.last_channels(),
            1,
            1,
            0,
            head_bias,
            Init::KaimingNonNegative,
            &mut rng,
        );
        Ok(Self { backbone, head })
    }

    pub fn head_param_count(&self) -> usize {
        self.head.param_count()
    }

    pub fn forward(&self, image: &FeatureStack) -> Result<(DensityMap, EncoderTrace)> {
        let trace = self.backbone.forward(image)?;
        let last = trace.stage_outputs.last().expect("at least one stage");
        let head_pre = conv2d_forward(last, &self.head)?;
        let head_out = relu(&head_pre);
        let up = bilinear_resize(&head_out, image.width, image.height)?;
        let map = plane_to_map(&up)?;
        Ok((
            map,
            EncoderTrace {
                backbone: trace,
                head_pre,
                head_out,
            },
        ))
    }

    pub fn predict(&self, image: &FeatureStack) -> Result<DensityMap> {
        let outs = self.backbone.stage_outputs(image)?;
        let head = relu(&conv2d_forward(outs.last().expect("stages"), &self.head)?);
        plane_to_map(&bilinear_resize(&head, image.width, image.height)?)
    }

    /// Gradients in [`Self::params_mut`] order. With `update_backbone`
    /// false only the head gradients are returned.
    pub fn backward(
        &self,
        trace: &EncoderTrace,
        grad_map: &DensityMapGrad,
        update_backbone: bool,
    ) -> Result<Vec<Vec<f64>>> {
        let h = &trace.head_out;
        let up = FeatureStack::new(1, grad_map.width, grad_map.height, grad_map.values.clone())?;
        let g = bilinear_resize_backward(&up, h.width, h.height)?;
        let g = relu_backward(&trace.head_pre, &g)?;
        let last = trace.backbone.stage_outputs.last().expect("stages");
        let cg = conv2d_backward_impl(last, &self.head, &g, update_backbone)?;
        let mut grads = Vec::new();
        if update_backbone {
            let mut slots: Vec<Option<FeatureStack>> = vec![None; self.backbone.stages.len()];
            *slots.last_mut().expect("stages") = cg.input;
            grads = self.backbone.backward(&trace.backbone, slots)?;
        }
        grads.push(cg.weight);
        if let Some(b) = cg.bias {
            grads.push(b);
        }
        Ok(grads)
    }

    pub fn params_mut(&mut self, update_backbone: bool) -> Vec<ParamMut<'_>> {
        let mut out = if update_backbone {
            self.backbone.params_mut()
        } else {
            Vec::new()
        };
        out.push(ParamMut {
            name: "head.weight".into(),
            values: &mut self.head.weight,
        });
        if let Some(b) = self.head.bias.as_mut() {
            out.push(ParamMut {
                name: "head.bias".into(),
                values: b,
            });
        }
        out
    }

    pub fn tensors(&self) -> Vec<NamedTensor> {
        let mut out = self.backbone.tensors();
        out.extend(conv_tensors("head", &self.head));
        out
    }

    pub fn from_tensors(
        config: BackboneConfig,
        head_bias: bool,
        src: &mut TensorSource<'_>,
    ) -> Result<Self> {
        let backbone = TinyBackbone::from_tensors(config, src)?;
        let mut head = ConvLayer::zeros(1, backbone.config.last_channels(), 1, 1, 0, head_bias);
        load_conv("head", &mut head, src)?;
        Ok(Self { backbone, head })
    }
}

/// Per-tap 1x1 compression, alignment to the largest tap, 1x1 fusion.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiLevelDecoder {
    pub tap_channels: Vec<usize>,
    pub compress: Vec<ConvLayer>,
    pub fuse: ConvLayer,
}

pub struct DecoderTrace {
    compress_pre: Vec<FeatureStack>,
    tap_sizes: Vec<(usize, usize)>,
    /// K aligned maps, concatenated.
    pub fused_input: FeatureStack,
    fuse_pre: FeatureStack,
}

/// Bias-free parameter count: one weight per input channel of every tap plus
/// one fusion weight per tap.
pub fn decoder_param_count(tap_channels: &[usize], bias: bool) -> usize {
    let k = tap_channels.len();
    let base = tap_channels.iter().sum::<usize>() + k;
    if bias {
        base + k + 1
    } else {
        base
    }
}

/// Spatial size every tap is aligned to: the largest tap by area.
pub fn alignment_size(taps: &[FeatureStack]) -> (usize, usize) {
    let mut best = (0, 0);
    for t in taps {
        if t.width * t.height > best.0 * best.1 {
            best = (t.width, t.height);
        }
    }
    best
}

impl MultiLevelDecoder {
    pub fn new(tap_channels: Vec<usize>, bias: bool, seed: u64) -> Result<Self> {
        if tap_channels.is_empty() || tap_channels.contains(&0) {
            return Err(Error::InvalidConfig("decoder needs non-empty taps".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let compress = tap_channels
            .iter()
            .map(|&c| ConvLayer::init(1, c, 1, 1, 0, bias, Init::KaimingNonNegative, &mut rng))
            .collect();
        let fuse = ConvLayer::init(
            1,
            tap_channels.len(),
            1,
            1,
            0,
            bias,
            Init::KaimingNonNegative,
            &mut rng,
        );
        Ok(Self {
            tap_channels,
            compress,
            fuse,
        })
    }

    pub fn has_bias(&self) -> bool {
        self.fuse.bias.is_some()
    }

    pub fn param_count(&self) -> usize {
        self.compress
            .iter()
            .map(ConvLayer::param_count)
            .sum::<usize>()
            + self.fuse.param_count()
    }

    pub fn forward(
        &self,
        taps: &[FeatureStack],
        out_width: usize,
        out_height: usize,
    ) -> Result<(DensityMap, DecoderTrace)> {
        if taps.len() != self.compress.len() {
            return Err(Error::ArchitectureMismatch(format!(
                "decoder expects {} taps, got {}",
                self.compress.len(),
                taps.len()
            )));
        }
        for (t, &c) in taps.iter().zip(&self.tap_channels) {
            if t.channels != c {
                return Err(Error::ArchitectureMismatch(format!(
                    "tap has {} channels, decoder expects {c}",
                    t.channels
                )));
            }
        }
        let (aw, ah) = alignment_size(taps);
        let mut compress_pre = Vec::with_capacity(taps.len());
        let mut aligned = Vec::with_capacity(taps.len());
        for (t, conv) in taps.iter().zip(&self.compress) {
            let pre = conv2d_forward(t, conv)?;
            aligned.push(bilinear_resize(&relu(&pre), aw, ah)?);
            compress_pre.push(pre);
        }
        let fused_input = concat_channels(&aligned)?;
        let fuse_pre = conv2d_forward(&fused_input, &self.fuse)?;
        let out = bilinear_resize(&relu(&fuse_pre), out_width, out_height)?;
        let map = plane_to_map(&out)?;
        Ok((
            map,
            DecoderTrace {
                compress_pre,
                tap_sizes: taps.iter().map(|t| (t.width, t.height)).collect(),
                fused_input,
                fuse_pre,
            },
        ))
    }

    /// Gradients in [`Self::params_mut`] order.
    pub fn backward(
        &self,
        taps: &[FeatureStack],
        trace: &DecoderTrace,
        grad_map: &DensityMapGrad,
    ) -> Result<Vec<Vec<f64>>> {
        let up = FeatureStack::new(1, grad_map.width, grad_map.height, grad_map.values.clone())?;
        let fp = &trace.fuse_pre;
        let g = bilinear_resize_backward(&up, fp.width, fp.height)?;
        let g = relu_backward(fp, &g)?;
        let fg = conv2d_backward_impl(&trace.fused_input, &self.fuse, &g, true)?;
        let parts = split_channels(
            fg.input.as_ref().expect("requested"),
            &vec![1; self.compress.len()],
        )?;
        let mut grads = Vec::new();
        for (k, part) in parts.iter().enumerate() {
            let (tw, th) = trace.tap_sizes[k];
            let g = bilinear_resize_backward(part, tw, th)?;
            let g = relu_backward(&trace.compress_pre[k], &g)?;
            let cg = conv2d_backward_impl(&taps[k], &self.compress[k], &g, false)?;
            grads.push(cg.weight);
            if let Some(b) = cg.bias {
                grads.push(b);
            }
        }
        grads.push(fg.weight);
        if let Some(b) = fg.bias {
            grads.push(b);
        }
        Ok(grads)
    }

    pub fn params_mut(&mut self) -> Vec<ParamMut<'_>> {
        let mut out = Vec::new();
        for (k, conv) in self.compress.iter_mut().enumerate() {
            out.push(ParamMut {
                name: format!("decoder.compress{k}.weight"),
                values: &mut conv.weight,
            });
            if let Some(b) = conv.bias.as_mut() {
                out.push(ParamMut {
                    name: format!("decoder.compress{k}.bias"),
                    values: b,
                });
            }
        }
        out.push(ParamMut {
            name: "decoder.fuse.weight".into(),
            values: &mut self.fuse.weight,
        });
        if let Some(b) = self.fuse.bias.as_mut() {
            out.push(ParamMut {
                name: "decoder.fuse.bias".into(),
                values: b,
            });
        }
        out
    }

    pub fn tensors(&self) -> Vec<NamedTensor> {
        let mut out = Vec::new();
        for (k, conv) in self.compress.iter().enumerate() {
            out.extend(conv_tensors(&format!("decoder.compress{k}"), conv));
        }
        out.extend(conv_tensors("decoder.fuse", &self.fuse));
        out
    }

    pub fn from_tensors(
        tap_channels: Vec<usize>,
        bias: bool,
        src: &mut TensorSource<'_>,
    ) -> Result<Self> {
        let mut dec = Self::new(tap_channels, bias, 0)?;
        for (k, conv) in dec.compress.iter_mut().enumerate() {
            load_conv(&format!("decoder.compress{k}"), conv, src)?;
        }
        load_conv("decoder.fuse", &mut dec.fuse, src)?;
        Ok(dec)
    }
}

/// Gradient of a loss with respect to a predicted map.
#[derive(Debug, Clone)]
pub struct DensityMapGrad {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
}

/// Tap outputs of `backbone` on `image`, ordered by depth, unresized.
pub fn extract_multilevel(
    backbone: &TinyBackbone,
    image: &FeatureStack,
) -> Result<Vec<FeatureStack>> {
    let outs = backbone.stage_outputs(image)?;
    Ok(backbone
        .config
        .taps
        .iter()
        .map(|&t| outs[t].clone())
        .collect())
}
