use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::Args;
use serde_json::json;

use salnet_core::checkpoint::ModelCheckpoint;
use salnet_core::dataio::{DatasetManifest, Sample};
use salnet_core::micronet::SgdConfig;
use salnet_core::model::{BackboneConfig, MultiLevelDecoder};
use salnet_core::pipeline::{
    load_backbone, load_encoder, new_encoder, system_tap_channels, train_decoder, train_encoder,
    TrainConfig, TrainResult,
};
use salnet_core::Error;

use crate::failure::{CliError, CliResult};
use crate::settings::Settings;
use crate::{record, Common, Context};

#[derive(Args, Debug)]
pub struct EncoderArgs {
    #[command(flatten)]
    pub common: Common,

    /// Dataset manifest (JSON).
    #[arg(long)]
    pub manifest: PathBuf,

    /// Start from this encoder checkpoint instead of a fresh one.
    #[arg(long)]
    pub init: Option<PathBuf>,

    /// Loss epsilon.
    #[arg(long)]
    pub epsilon: Option<String>,
}

#[derive(Args, Debug)]
pub struct DecoderArgs {
    #[command(flatten)]
    pub common: Common,

    /// Dataset manifest (JSON).
    #[arg(long)]
    pub manifest: PathBuf,

    /// Encoder checkpoint; repeat once per encoder, in tap order.
    #[arg(long = "encoder")]
    pub encoders: Vec<PathBuf>,

    /// Loss epsilon.
    #[arg(long)]
    pub epsilon: Option<String>,
}

const ENCODER_DEFAULTS: &[(&str, &str)] = &[
    ("seed", "0"),
    ("epsilon", "1e-7"),
    ("input_width", "640"),
    ("input_height", "480"),
    ("batch_size", "8"),
    ("epochs", "5"),
    ("learning_rate", "0.1"),
    ("momentum", "0.9"),
    ("weight_decay", "0.0001"),
    ("schedule", "5:0.1"),
    ("update_backbone", "true"),
    ("stage_channels", "16,32,64"),
    ("convs_per_stage", "2"),
    ("taps", "0,1,2"),
    ("head_bias", "false"),
];

const DECODER_DEFAULTS: &[(&str, &str)] = &[
    ("seed", "0"),
    ("epsilon", "1e-7"),
    ("input_width", "640"),
    ("input_height", "480"),
    ("batch_size", "32"),
    ("epochs", "5"),
    ("learning_rate", "0.1"),
    ("momentum", "0.9"),
    ("weight_decay", "0.0001"),
    ("schedule", "2:0.1"),
    ("bias", "false"),
];

/// `epoch:multiplier` pairs, comma separated; empty or `none` for a flat rate.
fn parse_schedule(raw: &str) -> CliResult<Vec<(usize, f64)>> {
    let raw = raw.trim();
    if raw.is_empty() || raw == "none" {
        return Ok(Vec::new());
    }
    raw.split(',')
        .map(|item| {
            let bad = || {
                CliError::input(format!(
                    "invalid schedule item `{item}`, expected epoch:multiplier"
                ))
            };
            let (e, m) = item.split_once(':').ok_or_else(bad)?;
            Ok((
                e.trim().parse().map_err(|_| bad())?,
                m.trim().parse().map_err(|_| bad())?,
            ))
        })
        .collect()
}

fn train_config(s: &Settings, update_backbone: bool) -> CliResult<TrainConfig> {
    let cfg = TrainConfig {
        input_width: s.parse("input_width")?,
        input_height: s.parse("input_height")?,
        batch_size: s.parse("batch_size")?,
        epochs: s.parse("epochs")?,
        sgd: SgdConfig {
            learning_rate: s.parse("learning_rate")?,
            momentum: s.parse("momentum")?,
            weight_decay: s.parse("weight_decay")?,
            schedule: parse_schedule(s.raw("schedule"))?,
        },
        seed: s.parse("seed")?,
        epsilon: s.parse("epsilon")?,
        update_backbone,
    };
    cfg.validate()?;
    Ok(cfg)
}

fn load_dataset(path: &Path, cfg: &TrainConfig) -> CliResult<Vec<Sample>> {
    let manifest = DatasetManifest::load(path)?;
    if manifest.entries.is_empty() {
        return Err(Error::EmptyDataset.into());
    }
    if (manifest.width, manifest.height) != (cfg.input_width, cfg.input_height) {
        return Err(CliError::input(format!(
            "{}: images are {}x{} but the input size is {}x{}; set input_width and input_height",
            path.display(),
            manifest.width,
            manifest.height,
            cfg.input_width,
            cfg.input_height
        )));
    }
    Ok(manifest.load_samples()?)
}

fn loss_csv(curve: &[f64]) -> String {
    let mut out = String::new();
    for (i, loss) in curve.iter().enumerate() {
        writeln!(out, "{},{loss}", i + 1).unwrap();
    }
    out
}

fn write_file(path: &Path, bytes: &[u8]) -> CliResult<()> {
    fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

/// Writes the checkpoint and loss curve of a finished run, or the last good
/// weights when training stopped on a numerical failure.
fn finish(
    stage: &str,
    result: TrainResult,
    common: &Common,
    s: &Settings,
    inputs: serde_json::Value,
    ctx: &Context,
) -> CliResult<()> {
    let (ck, name, err) = match result {
        Ok(ck) => (ck, format!("{stage}.emlk"), None),
        Err(f) => match f.last_good {
            Some(ck) if f.error.is_numerical() => (
                ck,
                format!("{stage}.last_good.emlk"),
                Some(CliError::from(f.error)),
            ),
            _ => return Err(f.error.into()),
        },
    };
    let out = common.create_out()?;
    ck.save(&out.join(&name))?;
    let curve = &ck.descriptor.training.loss_curve;
    write_file(&out.join("loss_curve.csv"), loss_csv(curve).as_bytes())?;
    let outputs = [name.clone(), "loss_curve.csv".to_string()];
    record::write(
        out,
        &format!("train-{stage}"),
        common,
        s,
        inputs,
        &outputs,
        err.as_ref(),
    )?;
    if ctx.verbose {
        for (i, loss) in curve.iter().enumerate() {
            eprintln!("epoch {}: {loss:.6}", i + 1);
        }
    }
    match err {
        Some(e) => Err(CliError {
            code: e.code,
            message: format!(
                "{}; last good weights saved to {}",
                e.message,
                out.join(&name).display()
            ),
        }),
        None => {
            println!(
                "wrote {} ({} epochs, final loss {:.6}, digest {})",
                out.join(&name).display(),
                curve.len(),
                curve.last().copied().unwrap_or(f64::NAN),
                ck.digest()
            );
            Ok(())
        }
    }
}

pub fn run_encoder(args: &EncoderArgs, ctx: &Context) -> CliResult<()> {
    let s = args
        .common
        .settings(ENCODER_DEFAULTS, &[("epsilon", args.epsilon.clone())])?;
    let cfg = train_config(&s, s.parse("update_backbone")?)?;
    let model = match &args.init {
        Some(path) => load_encoder(&ModelCheckpoint::load(path)?)?,
        None => {
            let backbone = BackboneConfig {
                stage_channels: s.list("stage_channels")?,
                convs_per_stage: s.parse("convs_per_stage")?,
                taps: s.list("taps")?,
                ..BackboneConfig::default()
            };
            new_encoder(backbone, s.parse("head_bias")?, cfg.seed)?
        }
    };
    let data = load_dataset(&args.manifest, &cfg)?;
    let result = train_encoder(model, &data, &cfg);
    let inputs = json!({
        "manifest": args.manifest.display().to_string(),
        "init": args.init.as_ref().map(|p| p.display().to_string()),
    });
    finish("encoder", result, &args.common, &s, inputs, ctx)
}

pub fn run_decoder(args: &DecoderArgs, ctx: &Context) -> CliResult<()> {
    if args.encoders.is_empty() {
        return Err(CliError::input(
            "no encoder checkpoints given; run the train-encoder stage first and pass each with --encoder",
        ));
    }
    for path in &args.encoders {
        if !path.is_file() {
            return Err(CliError::input(format!(
                "encoder stage checkpoint not found: {}; run train-encoder first",
                path.display()
            )));
        }
    }
    let s = args
        .common
        .settings(DECODER_DEFAULTS, &[("epsilon", args.epsilon.clone())])?;
    let cfg = train_config(&s, false)?;
    let encoders = args
        .encoders
        .iter()
        .map(|p| ModelCheckpoint::load(p))
        .collect::<Result<Vec<_>, _>>()?;
    let backbones = encoders
        .iter()
        .map(load_backbone)
        .collect::<Result<Vec<_>, _>>()?;
    let decoder =
        MultiLevelDecoder::new(system_tap_channels(&backbones), s.parse("bias")?, cfg.seed)?;
    let data = load_dataset(&args.manifest, &cfg)?;
    let result = train_decoder(&encoders, decoder, &data, &cfg);
    let inputs = json!({
        "manifest": args.manifest.display().to_string(),
        "encoders": args.encoders.iter().map(|p| p.display().to_string()).collect::<Vec<_>>(),
        "encoder_digests": encoders.iter().map(ModelCheckpoint::weights_digest).collect::<Vec<_>>(),
    });
    finish("decoder", result, &args.common, &s, inputs, ctx)
}
