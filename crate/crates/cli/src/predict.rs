use std::fs;
use std::path::{Path, PathBuf};

use clap::Args;
use rayon::prelude::*;
use serde_json::json;

use salnet_core::checkpoint::ModelCheckpoint;
use salnet_core::dataio::{
    crop_padding, load_rgb_image, map_to_stack, pad_to_ratio, resize_map, save_map_image,
    stack_to_map, BitDepth, PadGeometry,
};
use salnet_core::micronet::{bilinear_resize, FeatureStack};
use salnet_core::pipeline::System;
use salnet_core::DensityMap;

use crate::failure::{CliError, CliResult};
use crate::settings::parse_dims;
use crate::{record, Common, Context};

#[derive(Args, Debug)]
pub struct PredictArgs {
    #[command(flatten)]
    pub common: Common,

    /// Encoder checkpoint; repeat in the order used for decoder training.
    #[arg(long = "encoder", required = true)]
    pub encoders: Vec<PathBuf>,

    /// Decoder checkpoint.
    #[arg(long)]
    pub decoder: PathBuf,

    /// Directory of input images (png or jpeg).
    #[arg(long)]
    pub images: PathBuf,

    /// Zero-pad each image to this aspect ratio (W:H) before resizing.
    #[arg(long)]
    pub pad_ratio: Option<String>,

    /// Undo padding and resize each map back to its source resolution.
    #[arg(long)]
    pub restore_size: bool,
}

const DEFAULTS: &[(&str, &str)] = &[
    ("seed", "0"),
    ("pad_ratio", "none"),
    ("restore_size", "false"),
    ("bit_depth", "16"),
];

const IMAGE_EXTENSIONS: [&str; 3] = ["png", "jpg", "jpeg"];

/// Image files in `dir` as `(id, path)`, sorted by id.
pub fn list_images(dir: &Path) -> CliResult<Vec<(String, PathBuf)>> {
    let entries = fs::read_dir(dir).map_err(|e| CliError::io(dir, e))?;
    let mut out = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| CliError::io(dir, e))?.path();
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase);
        if path.is_file() && ext.is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.as_str())) {
            let id = path.file_stem().unwrap().to_string_lossy().into_owned();
            out.push((id, path));
        }
    }
    out.sort();
    Ok(out)
}

struct Plan {
    pad_ratio: Option<(usize, usize)>,
    restore_size: bool,
    width: usize,
    height: usize,
}

fn predict_one(system: &System, plan: &Plan, path: &Path) -> salnet_core::Result<DensityMap> {
    let source = load_rgb_image(path)?;
    let (padded, geom) = match plan.pad_ratio {
        Some((rw, rh)) => pad_to_ratio(&source, rw, rh),
        None => {
            let geom = PadGeometry {
                left: 0,
                right: 0,
                top: 0,
                bottom: 0,
                width: source.width,
                height: source.height,
            };
            (source, geom)
        }
    };
    let input = resize_stack(&padded, plan.width, plan.height)?;
    let map = system.predict(&input)?;
    if !plan.restore_size {
        return Ok(map);
    }
    let full = resize_map(&map, geom.padded_width(), geom.padded_height())?;
    stack_to_map(&crop_padding(&map_to_stack(&full), &geom)?)
}

fn resize_stack(
    x: &FeatureStack,
    width: usize,
    height: usize,
) -> salnet_core::Result<FeatureStack> {
    if (x.width, x.height) == (width, height) {
        Ok(x.clone())
    } else {
        bilinear_resize(x, width, height)
    }
}

pub fn run(args: &PredictArgs, ctx: &Context) -> CliResult<()> {
    let s = args.common.settings(
        DEFAULTS,
        &[
            ("pad_ratio", args.pad_ratio.clone()),
            (
                "restore_size",
                args.restore_size.then(|| "true".to_string()),
            ),
        ],
    )?;
    let pad_ratio = match s.raw("pad_ratio") {
        "none" => None,
        raw => Some(parse_dims(raw).map_err(CliError::input)?),
    };
    let depth = match s.parse::<u8>("bit_depth")? {
        8 => BitDepth::Eight,
        16 => BitDepth::Sixteen,
        other => {
            return Err(CliError::input(format!(
                "bit_depth must be 8 or 16, got {other}"
            )))
        }
    };
    let encoders = args
        .encoders
        .iter()
        .map(|p| ModelCheckpoint::load(p))
        .collect::<Result<Vec<_>, _>>()?;
    let decoder = ModelCheckpoint::load(&args.decoder)?;
    let system = System::from_checkpoints(&encoders, &decoder)?;
    let plan = Plan {
        pad_ratio,
        restore_size: s.parse("restore_size")?,
        width: decoder.descriptor.input_width,
        height: decoder.descriptor.input_height,
    };
    let images = list_images(&args.images)?;
    if images.is_empty() {
        return Err(CliError::input(format!(
            "no images in {}",
            args.images.display()
        )));
    }
    let maps = images
        .par_iter()
        .map(|(_, path)| predict_one(&system, &plan, path))
        .collect::<Result<Vec<_>, _>>()?;
    let out = args.common.create_out()?;
    let mut outputs = Vec::with_capacity(images.len());
    for ((id, _), map) in images.iter().zip(&maps) {
        let name = format!("{id}_sal.png");
        save_map_image(map, &out.join(&name), depth)?;
        if ctx.verbose {
            eprintln!("{name}: {}x{}", map.width(), map.height());
        }
        outputs.push(name);
    }
    let inputs = json!({
        "images": args.images.display().to_string(),
        "encoders": args.encoders.iter().map(|p| p.display().to_string()).collect::<Vec<_>>(),
        "decoder": args.decoder.display().to_string(),
    });
    record::write(out, "predict", &args.common, &s, inputs, &outputs, None)?;
    println!("wrote {} maps to {}", outputs.len(), out.display());
    Ok(())
}
