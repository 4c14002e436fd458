use clap::Args;
use serde_json::json;

use salnet_core::dataio::{generate_synthetic, write_synthetic, SyntheticParams};

use crate::failure::{CliError, CliResult};
use crate::settings::parse_dims;
use crate::{record, Common, Context};

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[command(flatten)]
    pub common: Common,

    /// Number of images.
    #[arg(long)]
    pub count: Option<String>,

    /// Image size as WxH.
    #[arg(long)]
    pub size: Option<String>,

    /// Salient blobs per image.
    #[arg(long)]
    pub blobs: Option<String>,

    /// Gaussian sigma (pixels) for the ground-truth densities.
    #[arg(long)]
    pub sigma: Option<String>,
}

const DEFAULTS: &[(&str, &str)] = &[
    ("seed", "0"),
    ("count", "10"),
    ("width", "640"),
    ("height", "480"),
    ("blobs", "3"),
    ("fixations_per_blob", "auto"),
    ("blob_sigma", "auto"),
    ("fixation_spread", "auto"),
    ("clutter_patches", "auto"),
    ("clutter_contrast", "auto"),
    ("sigma", "auto"),
    ("split", "train"),
];

pub fn run(args: &SynthArgs, ctx: &Context) -> CliResult<()> {
    let (width, height) = match &args.size {
        Some(s) => {
            let (w, h) = parse_dims(s).map_err(CliError::input)?;
            (Some(w.to_string()), Some(h.to_string()))
        }
        None => (None, None),
    };
    let s = args.common.settings(
        DEFAULTS,
        &[
            ("count", args.count.clone()),
            ("width", width),
            ("height", height),
            ("blobs", args.blobs.clone()),
            ("sigma", args.sigma.clone()),
        ],
    )?;
    let mut p = SyntheticParams::new(
        s.parse("count")?,
        s.parse("width")?,
        s.parse("height")?,
        s.parse("blobs")?,
        s.parse("seed")?,
    );
    if let Some(v) = s.parse_auto("fixations_per_blob")? {
        p.fixations_per_blob = v;
    }
    if let Some(v) = s.parse_auto("blob_sigma")? {
        p.blob_sigma = v;
    }
    if let Some(v) = s.parse_auto("fixation_spread")? {
        p.fixation_spread = v;
    }
    if let Some(v) = s.parse_auto("clutter_patches")? {
        p.clutter_patches = v;
    }
    if let Some(v) = s.parse_auto("clutter_contrast")? {
        p.clutter_contrast = v;
    }
    if let Some(v) = s.parse_auto("sigma")? {
        p.sigma = v;
    }
    let data = generate_synthetic(&p)?;
    let out = args.common.create_out()?;
    let manifest = write_synthetic(out, &data, s.raw("split"))?;
    let outputs = ["manifest.json", "images/", "fixations/", "density/"].map(String::from);
    record::write(out, "synth", &args.common, &s, json!({}), &outputs, None)?;
    if ctx.verbose {
        for e in &manifest.entries {
            eprintln!("{}", e.id);
        }
    }
    println!(
        "wrote {} {}x{} images to {}",
        manifest.entries.len(),
        p.width,
        p.height,
        out.display()
    );
    Ok(())
}
