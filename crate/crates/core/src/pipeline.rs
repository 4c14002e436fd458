//! Piecewise training: encoders one at a time, then a decoder over the
//! frozen encoders' multi-level features.

use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{Architecture, Descriptor, ModelCheckpoint, TrainMetadata};
use crate::dataio::{resize_map, Sample};
use crate::error::{Error, Result};
use crate::grid::{DensityMap, FixationMap};
use crate::losses::{combined_loss_with, LossConfig};
use crate::micronet::{sgd_step, FeatureStack, ParamMut, SgdConfig, SgdState};
use crate::model::{
    extract_multilevel, BackboneConfig, DensityMapGrad, EncoderModel, MultiLevelDecoder,
    TinyBackbone,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub input_width: usize,
    pub input_height: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub sgd: SgdConfig,
    pub seed: u64,
    pub epsilon: f64,
    /// Encoder stage only: also update backbone weights.
    pub update_backbone: bool,
}

impl TrainConfig {
    pub fn encoder_default() -> Self {
        Self {
            input_width: 640,
            input_height: 480,
            batch_size: 8,
            epochs: 5,
            sgd: SgdConfig {
                schedule: vec![(5, 0.1)],
                ..SgdConfig::default()
            },
            seed: 0,
            epsilon: 1e-7,
            update_backbone: true,
        }
    }

    pub fn decoder_default() -> Self {
        Self {
            batch_size: 32,
            sgd: SgdConfig {
                schedule: vec![(2, 0.1)],
                ..SgdConfig::default()
            },
            ..Self::encoder_default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be >= 1".into()));
        }
        if self.epochs == 0 {
            return Err(Error::InvalidConfig("epochs must be >= 1".into()));
        }
        if self.input_width == 0 || self.input_height == 0 {
            return Err(Error::InvalidConfig("input size must be positive".into()));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::InvalidConfig("epsilon must be positive".into()));
        }
        self.sgd.validate()
    }

    fn metadata(&self, loss_curve: Vec<f64>) -> TrainMetadata {
        TrainMetadata {
            epochs: loss_curve.len(),
            loss_curve,
            seed: self.seed,
            batch_size: self.batch_size,
            sgd: self.sgd.clone(),
        }
    }
}

/// A training run that stopped early. `last_good` holds the weights after the
/// last successful update, with the loss curve of the completed epochs; it is
/// `None` when training never started.
#[derive(Debug)]
pub struct TrainFailure {
    pub error: Error,
    pub last_good: Option<ModelCheckpoint>,
}

impl fmt::Display for TrainFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "training failed: {}", self.error)
    }
}

impl std::error::Error for TrainFailure {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.error)
    }
}

impl From<Error> for TrainFailure {
    fn from(error: Error) -> Self {
        Self {
            error,
            last_good: None,
        }
    }
}

impl From<TrainFailure> for Error {
    fn from(f: TrainFailure) -> Self {
        f.error
    }
}

pub type TrainResult = std::result::Result<ModelCheckpoint, TrainFailure>;

/// Loss targets at input resolution.
struct Target {
    density: DensityMap,
    fixations: FixationMap,
}

fn prepare_targets(data: &[Sample], cfg: &TrainConfig) -> Result<Vec<Target>> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    data.iter()
        .map(|s| {
            if (s.image.width, s.image.height) != (cfg.input_width, cfg.input_height) {
                return Err(Error::ShapeMismatch(format!(
                    "{}: image is {}x{}, training input is {}x{}",
                    s.id, s.image.width, s.image.height, cfg.input_width, cfg.input_height
                )));
            }
            if (s.fixations.width(), s.fixations.height()) != (cfg.input_width, cfg.input_height) {
                return Err(Error::ShapeMismatch(format!(
                    "{}: fixation map does not match the input size",
                    s.id
                )));
            }
            let density =
                if (s.density.width(), s.density.height()) == (cfg.input_width, cfg.input_height) {
                    s.density.clone()
                } else {
                    resize_map(&s.density, cfg.input_width, cfg.input_height)?
                };
            Ok(Target {
                density,
                fixations: s.fixations.clone(),
            })
        })
        .collect()
}

fn loss_and_map_grad(pred: &DensityMap, t: &Target, eps: f64) -> Result<(f64, DensityMapGrad)> {
    let out = combined_loss_with(pred, &t.density, &t.fixations, &LossConfig::training(eps))?;
    Ok((
        out.value,
        DensityMapGrad {
            width: pred.width(),
            height: pred.height(),
            values: out.grad,
        },
    ))
}

trait Trainable: Sync {
    fn sample_count(&self) -> usize;
    fn loss_grad(&self, index: usize) -> Result<(f64, Vec<Vec<f64>>)>;
    fn params(&mut self) -> Vec<ParamMut<'_>>;
    fn checkpoint(&self, loss_curve: &[f64]) -> ModelCheckpoint;
}

/// Shuffled mini-batch SGD. Per-sample work may run in parallel; results are
/// collected in batch order and reduced sequentially.
fn run_training<T: Trainable>(
    model: &mut T,
    cfg: &TrainConfig,
) -> std::result::Result<Vec<f64>, TrainFailure> {
    let n = model.sample_count();
    let mut curve = Vec::with_capacity(cfg.epochs);
    let mut state = SgdState::default();
    let mut order: Vec<usize> = (0..n).collect();
    for epoch in 0..cfg.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(epoch as u64 + 1);
        order.shuffle(&mut rng);
        let lr = cfg.sgd.lr_at(epoch);
        let mut epoch_sum = 0.0;
        for (batch, idx) in order.chunks(cfg.batch_size).enumerate() {
            let step = (|| -> Result<f64> {
                let shared: &T = model;
                let results: Vec<Result<(f64, Vec<Vec<f64>>)>> =
                    idx.par_iter().map(|&i| shared.loss_grad(i)).collect();
                let mut loss_sum = 0.0;
                let mut total: Option<Vec<Vec<f64>>> = None;
                for r in results {
                    let (loss, grads) = r?;
                    if !loss.is_finite() {
                        return Err(Error::NonFiniteLoss { epoch, batch });
                    }
                    loss_sum += loss;
                    match total.as_mut() {
                        None => total = Some(grads),
                        Some(acc) => {
                            for (a, g) in acc.iter_mut().zip(&grads) {
                                for (x, y) in a.iter_mut().zip(g) {
                                    *x += y;
                                }
                            }
                        }
                    }
                }
                let mut total = total.expect("non-empty batch");
                let scale = 1.0 / idx.len() as f64;
                for g in &mut total {
                    for v in g.iter_mut() {
                        *v *= scale;
                    }
                }
                sgd_step(&mut model.params(), &total, &mut state, &cfg.sgd, lr)?;
                Ok(loss_sum)
            })();
            match step {
                Ok(s) => epoch_sum += s,
                Err(error) => {
                    return Err(TrainFailure {
                        error,
                        last_good: Some(model.checkpoint(&curve)),
                    })
                }
            }
        }
        curve.push(epoch_sum / n as f64);
    }
    Ok(curve)
}

struct EncoderJob<'a> {
    model: EncoderModel,
    images: Vec<&'a FeatureStack>,
    targets: Vec<Target>,
    cfg: &'a TrainConfig,
}

impl Trainable for EncoderJob<'_> {
    fn sample_count(&self) -> usize {
        self.images.len()
    }

    fn loss_grad(&self, i: usize) -> Result<(f64, Vec<Vec<f64>>)> {
        let (pred, trace) = self.model.forward(self.images[i])?;
        let (loss, g) = loss_and_map_grad(&pred, &self.targets[i], self.cfg.epsilon)?;
        let grads = self.model.backward(&trace, &g, self.cfg.update_backbone)?;
        Ok((loss, grads))
    }

    fn params(&mut self) -> Vec<ParamMut<'_>> {
        self.model.params_mut(self.cfg.update_backbone)
    }

    fn checkpoint(&self, loss_curve: &[f64]) -> ModelCheckpoint {
        encoder_checkpoint(&self.model, self.cfg, loss_curve.to_vec())
    }
}

pub fn encoder_checkpoint(
    model: &EncoderModel,
    cfg: &TrainConfig,
    loss_curve: Vec<f64>,
) -> ModelCheckpoint {
    ModelCheckpoint {
        descriptor: Descriptor {
            architecture: Architecture::Encoder {
                backbone: model.backbone.config.clone(),
                head_bias: model.head.bias.is_some(),
            },
            input_width: cfg.input_width,
            input_height: cfg.input_height,
            training: cfg.metadata(loss_curve),
        },
        tensors: model.tensors(),
    }
}

/// Trains backbone and head on the final-stage output only.
pub fn train_encoder(model: EncoderModel, data: &[Sample], cfg: &TrainConfig) -> TrainResult {
    cfg.validate()?;
    let targets = prepare_targets(data, cfg)?;
    for s in data {
        model.backbone.check_input(&s.image)?;
    }
    let mut job = EncoderJob {
        model,
        images: data.iter().map(|s| &s.image).collect(),
        targets,
        cfg,
    };
    let curve = run_training(&mut job, cfg)?;
    Ok(job.checkpoint(&curve))
}

pub fn load_encoder(ck: &ModelCheckpoint) -> Result<EncoderModel> {
    match &ck.descriptor.architecture {
        Architecture::Encoder {
            backbone,
            head_bias,
        } => {
            backbone.validate()?;
            let mut src = ck.source();
            let model = EncoderModel::from_tensors(backbone.clone(), *head_bias, &mut src)?;
            src.finish()?;
            Ok(model)
        }
        Architecture::Decoder { .. } => Err(Error::ArchitectureMismatch(
            "expected an encoder checkpoint, found a decoder".into(),
        )),
    }
}

/// Backbone of an encoder checkpoint; the head is dropped.
pub fn load_backbone(ck: &ModelCheckpoint) -> Result<TinyBackbone> {
    Ok(load_encoder(ck)?.backbone)
}

/// Tap features of every backbone, concatenated in backbone order.
pub fn system_taps(backbones: &[TinyBackbone], image: &FeatureStack) -> Result<Vec<FeatureStack>> {
    let mut taps = Vec::new();
    for b in backbones {
        taps.extend(extract_multilevel(b, image)?);
    }
    Ok(taps)
}

pub fn system_tap_channels(backbones: &[TinyBackbone]) -> Vec<usize> {
    backbones
        .iter()
        .flat_map(|b| b.config.tap_channels())
        .collect()
}

struct DecoderJob<'a> {
    decoder: MultiLevelDecoder,
    taps: Vec<Vec<FeatureStack>>,
    targets: Vec<Target>,
    cfg: &'a TrainConfig,
    backbones: &'a [TinyBackbone],
    encoder_digests: &'a [String],
}

impl Trainable for DecoderJob<'_> {
    fn sample_count(&self) -> usize {
        self.taps.len()
    }

    fn loss_grad(&self, i: usize) -> Result<(f64, Vec<Vec<f64>>)> {
        let taps = &self.taps[i];
        let (pred, trace) =
            self.decoder
                .forward(taps, self.cfg.input_width, self.cfg.input_height)?;
        let (loss, g) = loss_and_map_grad(&pred, &self.targets[i], self.cfg.epsilon)?;
        Ok((loss, self.decoder.backward(taps, &trace, &g)?))
    }

    fn params(&mut self) -> Vec<ParamMut<'_>> {
        self.decoder.params_mut()
    }

    fn checkpoint(&self, loss_curve: &[f64]) -> ModelCheckpoint {
        decoder_checkpoint(
            &self.decoder,
            self.backbones,
            self.encoder_digests,
            self.cfg,
            loss_curve.to_vec(),
        )
    }
}

pub fn decoder_checkpoint(
    decoder: &MultiLevelDecoder,
    backbones: &[TinyBackbone],
    encoder_digests: &[String],
    cfg: &TrainConfig,
    loss_curve: Vec<f64>,
) -> ModelCheckpoint {
    ModelCheckpoint {
        descriptor: Descriptor {
            architecture: Architecture::Decoder {
                tap_channels: decoder.tap_channels.clone(),
                bias: decoder.has_bias(),
                backbones: backbones.iter().map(|b| b.config.clone()).collect(),
                encoder_digests: encoder_digests.to_vec(),
            },
            input_width: cfg.input_width,
            input_height: cfg.input_height,
            training: cfg.metadata(loss_curve),
        },
        tensors: decoder.tensors(),
    }
}

/// Trains `decoder` on the frozen encoders' taps. Tap features are computed
/// once per sample, so the encoders are only read.
pub fn train_decoder(
    encoders: &[ModelCheckpoint],
    decoder: MultiLevelDecoder,
    data: &[Sample],
    cfg: &TrainConfig,
) -> TrainResult {
    cfg.validate()?;
    if encoders.is_empty() {
        return Err(
            Error::InvalidConfig("decoder training needs at least one encoder".into()).into(),
        );
    }
    let backbones = encoders
        .iter()
        .map(load_backbone)
        .collect::<Result<Vec<_>>>()?;
    let digests: Vec<String> = encoders
        .iter()
        .map(ModelCheckpoint::weights_digest)
        .collect();
    let channels = system_tap_channels(&backbones);
    if channels != decoder.tap_channels {
        return Err(Error::ArchitectureMismatch(format!(
            "encoders provide tap channels {channels:?}, decoder expects {:?}",
            decoder.tap_channels
        ))
        .into());
    }
    let targets = prepare_targets(data, cfg)?;
    let taps = data
        .par_iter()
        .map(|s| system_taps(&backbones, &s.image))
        .collect::<Result<Vec<_>>>()?;
    let mut job = DecoderJob {
        decoder,
        taps,
        targets,
        cfg,
        backbones: &backbones,
        encoder_digests: &digests,
    };
    let curve = run_training(&mut job, cfg)?;
    Ok(job.checkpoint(&curve))
}

/// Frozen backbones plus a trained decoder.
#[derive(Debug, Clone, PartialEq)]
pub struct System {
    pub backbones: Vec<TinyBackbone>,
    pub encoder_digests: Vec<String>,
    pub decoder: MultiLevelDecoder,
}

impl System {
    pub fn from_checkpoints(
        encoders: &[ModelCheckpoint],
        decoder: &ModelCheckpoint,
    ) -> Result<Self> {
        let Architecture::Decoder {
            tap_channels,
            bias,
            backbones: configs,
            encoder_digests,
        } = &decoder.descriptor.architecture
        else {
            return Err(Error::ArchitectureMismatch(
                "expected a decoder checkpoint, found an encoder".into(),
            ));
        };
        if encoders.len() != configs.len() {
            return Err(Error::ArchitectureMismatch(format!(
                "decoder was trained on {} encoders, {} given",
                configs.len(),
                encoders.len()
            )));
        }
        let backbones = encoders
            .iter()
            .map(load_backbone)
            .collect::<Result<Vec<_>>>()?;
        for (i, (b, c)) in backbones.iter().zip(configs).enumerate() {
            if &b.config != c {
                return Err(Error::ArchitectureMismatch(format!(
                    "encoder {i} architecture differs from the decoder's record"
                )));
            }
        }
        let digests: Vec<String> = encoders
            .iter()
            .map(ModelCheckpoint::weights_digest)
            .collect();
        if &digests != encoder_digests {
            return Err(Error::ArchitectureMismatch(
                "encoder weights differ from those the decoder was trained on".into(),
            ));
        }
        let mut src = decoder.source();
        let dec = MultiLevelDecoder::from_tensors(tap_channels.clone(), *bias, &mut src)?;
        src.finish()?;
        Ok(Self {
            backbones,
            encoder_digests: digests,
            decoder: dec,
        })
    }

    /// Non-negative map at the image's resolution.
    pub fn predict(&self, image: &FeatureStack) -> Result<DensityMap> {
        let taps = system_taps(&self.backbones, image)?;
        Ok(self.decoder.forward(&taps, image.width, image.height)?.0)
    }

    pub fn tap_count(&self) -> usize {
        self.decoder.tap_channels.len()
    }
}

/// Mean training-objective value of `predict` over `data`.
pub fn mean_loss<F>(data: &[Sample], epsilon: f64, predict: F) -> Result<f64>
where
    F: Fn(&FeatureStack) -> Result<DensityMap> + Sync,
{
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let losses = data
        .par_iter()
        .map(|s| {
            let pred = predict(&s.image)?;
            let density = if pred.same_shape(&s.density) {
                s.density.clone()
            } else {
                resize_map(&s.density, pred.width(), pred.height())?
            };
            Ok(combined_loss_with(
                &pred,
                &density,
                &s.fixations,
                &LossConfig::training(epsilon),
            )?
            .value)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(losses.iter().sum::<f64>() / losses.len() as f64)
}

pub struct FinetuneOutput {
    pub encoders: Vec<ModelCheckpoint>,
    pub decoder: ModelCheckpoint,
}

/// Continues training every encoder from its weights, then trains a freshly
/// initialized decoder on the updated encoders. `encoder_cfg.epochs == 0`
/// keeps the encoders as given.
pub fn finetune(
    encoders: &[ModelCheckpoint],
    decoder_bias: bool,
    data: &[Sample],
    encoder_cfg: &TrainConfig,
    decoder_cfg: &TrainConfig,
) -> std::result::Result<FinetuneOutput, TrainFailure> {
    let tuned = if encoder_cfg.epochs == 0 {
        encoders.to_vec()
    } else {
        encoders
            .iter()
            .map(|ck| train_encoder(load_encoder(ck)?, data, encoder_cfg))
            .collect::<std::result::Result<Vec<_>, _>>()?
    };
    let backbones = tuned
        .iter()
        .map(load_backbone)
        .collect::<Result<Vec<_>>>()?;
    let decoder = MultiLevelDecoder::new(
        system_tap_channels(&backbones),
        decoder_bias,
        decoder_cfg.seed,
    )?;
    let decoder = train_decoder(&tuned, decoder, data, decoder_cfg)?;
    Ok(FinetuneOutput {
        encoders: tuned,
        decoder,
    })
}

/// Fresh encoder for a backbone configuration.
pub fn new_encoder(config: BackboneConfig, head_bias: bool, seed: u64) -> Result<EncoderModel> {
    EncoderModel::new(config, head_bias, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::{generate_synthetic, SyntheticParams};

    fn small_cfg(epochs: usize) -> TrainConfig {
        TrainConfig {
            input_width: 32,
            input_height: 24,
            batch_size: 4,
            epochs,
            sgd: SgdConfig {
                learning_rate: 0.01,
                ..SgdConfig::default()
            },
            ..TrainConfig::encoder_default()
        }
    }

    fn data(n: usize, seed: u64) -> Vec<Sample> {
        generate_synthetic(&SyntheticParams::new(n, 32, 24, 2, seed))
            .unwrap()
            .samples
    }

    #[test]
    fn defaults_follow_reported_settings() {
        let e = TrainConfig::encoder_default();
        assert_eq!(
            (e.input_width, e.input_height, e.batch_size, e.epochs),
            (640, 480, 8, 5)
        );
        assert!((e.sgd.lr_at(5) - 0.01).abs() < 1e-15);
        assert_eq!(TrainConfig::decoder_default().batch_size, 32);
    }

    #[test]
    fn config_validation() {
        let mut c = small_cfg(1);
        c.batch_size = 0;
        assert!(c.validate().is_err());
        let mut c = small_cfg(0);
        assert!(c.validate().is_err());
        c.epochs = 1;
        assert!(c.validate().is_ok());
    }

    #[test]
    fn empty_dataset_is_rejected() {
        let model = EncoderModel::new(BackboneConfig::default(), false, 0).unwrap();
        let err = train_encoder(model, &[], &small_cfg(1)).unwrap_err();
        assert!(matches!(err.error, Error::EmptyDataset));
        assert!(err.last_good.is_none());
    }

    #[test]
    fn zero_learning_rate_keeps_weights() {
        let model = EncoderModel::new(BackboneConfig::default(), false, 3).unwrap();
        let before = model.tensors();
        let mut cfg = small_cfg(2);
        cfg.sgd.learning_rate = 0.0;
        let ck = train_encoder(model, &data(1, 1), &cfg).unwrap();
        assert_eq!(ck.tensors, before);
        assert_eq!(ck.descriptor.training.loss_curve.len(), 2);
    }

    #[test]
    fn wrong_input_size_is_a_shape_error() {
        let model = EncoderModel::new(BackboneConfig::default(), false, 0).unwrap();
        let mut cfg = small_cfg(1);
        cfg.input_width = 64;
        let err = train_encoder(model, &data(2, 0), &cfg).unwrap_err();
        assert!(matches!(err.error, Error::ShapeMismatch(_)));
    }

    #[test]
    fn system_rejects_swapped_encoders() {
        let cfg = small_cfg(1);
        let d = data(4, 2);
        let a = train_encoder(
            EncoderModel::new(BackboneConfig::default(), false, 1).unwrap(),
            &d,
            &cfg,
        )
        .unwrap();
        let b = train_encoder(
            EncoderModel::new(BackboneConfig::default(), false, 2).unwrap(),
            &d,
            &cfg,
        )
        .unwrap();
        let dec = MultiLevelDecoder::new(vec![16, 32, 64, 16, 32, 64], false, 0).unwrap();
        let dck = train_decoder(&[a.clone(), b.clone()], dec, &d, &cfg).unwrap();
        assert!(System::from_checkpoints(&[a.clone(), b.clone()], &dck).is_ok());
        assert!(matches!(
            System::from_checkpoints(&[b, a.clone()], &dck),
            Err(Error::ArchitectureMismatch(_))
        ));
        assert!(matches!(
            System::from_checkpoints(&[a.clone()], &a),
            Err(Error::ArchitectureMismatch(_))
        ));
    }
}
