use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use clap::Args;
use rayon::prelude::*;
use serde_json::json;

use salnet_core::dataio::{load_map_image, read_fixations};
use salnet_core::metrics::{
    aggregate_mean, center_prior, evaluate_all, render_table, EvalInputs, MetricConfig,
    MetricReport, TABLE_COLUMNS,
};
use salnet_core::{DensityMap, Error, FixationMap};

use crate::failure::{CliError, CliResult};
use crate::{record, Common, Context};

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: Common,

    /// Predicted maps, named `<id>_sal.png` or `<id>.png`.
    #[arg(long)]
    pub pred: PathBuf,

    /// Ground-truth density maps, named `<id>.png`.
    #[arg(long)]
    pub gt: PathBuf,

    /// Fixation lists, named `<id>.txt`.
    #[arg(long)]
    pub fixations: PathBuf,

    /// Metric epsilon.
    #[arg(long)]
    pub epsilon: Option<String>,
}

const DEFAULTS: &[(&str, &str)] = &[
    ("seed", "0"),
    ("epsilon", "1e-7"),
    ("auc_thresholds", "10"),
    ("borji_splits", "100"),
    ("emd_downsample", "32"),
    ("label", "model"),
];

/// Files in `dir` with extension `ext`, keyed by stem with `strip` removed.
fn files_by_id(dir: &Path, ext: &str, strip: &str) -> CliResult<BTreeMap<String, PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|e| CliError::io(dir, e))?;
    let mut out = BTreeMap::new();
    for entry in entries {
        let path = entry.map_err(|e| CliError::io(dir, e))?.path();
        if !path.is_file() || path.extension().and_then(|e| e.to_str()) != Some(ext) {
            continue;
        }
        let stem = path.file_stem().unwrap().to_string_lossy().into_owned();
        let id = stem.strip_suffix(strip).unwrap_or(&stem).to_string();
        if let Some(previous) = out.insert(id.clone(), path.clone()) {
            return Err(CliError::input(format!(
                "two files map to id `{id}`: {} and {}",
                previous.display(),
                path.display()
            )));
        }
    }
    Ok(out)
}

struct Item {
    id: String,
    pred: DensityMap,
    gt: DensityMap,
    fixations: FixationMap,
}

fn load_item(id: &str, pred: &Path, gt: &Path, fix: &Path) -> salnet_core::Result<Item> {
    let pred = load_map_image(pred)?;
    let gt = load_map_image(gt)?;
    if (pred.width(), pred.height()) != (gt.width(), gt.height()) {
        return Err(Error::ShapeMismatch(format!(
            "{id}: prediction is {}x{}, ground truth is {}x{}",
            pred.width(),
            pred.height(),
            gt.width(),
            gt.height()
        )));
    }
    let fixations = FixationMap::from_points(gt.width(), gt.height(), &read_fixations(fix)?)?;
    Ok(Item {
        id: id.to_string(),
        pred,
        gt,
        fixations,
    })
}

pub fn run(args: &EvalArgs, ctx: &Context) -> CliResult<()> {
    let s = args
        .common
        .settings(DEFAULTS, &[("epsilon", args.epsilon.clone())])?;
    let cfg = MetricConfig {
        epsilon: s.parse("epsilon")?,
        auc_thresholds: s.parse("auc_thresholds")?,
        borji_splits: s.parse("borji_splits")?,
        emd_downsample: s.parse("emd_downsample")?,
        rng_seed: s.parse("seed")?,
    };
    cfg.validate()?;

    let gt = files_by_id(&args.gt, "png", "")?;
    let preds = files_by_id(&args.pred, "png", "_sal")?;
    let fixations = files_by_id(&args.fixations, "txt", "")?;
    if gt.is_empty() {
        return Err(CliError::input(format!(
            "no ground-truth maps in {}",
            args.gt.display()
        )));
    }
    let mut missing = Vec::new();
    for id in gt.keys() {
        if !preds.contains_key(id) {
            missing.push(format!("{id}: no prediction in {}", args.pred.display()));
        }
        if !fixations.contains_key(id) {
            missing.push(format!(
                "{id}: no fixations in {}",
                args.fixations.display()
            ));
        }
    }
    for id in preds.keys().filter(|id| !gt.contains_key(*id)) {
        missing.push(format!("{id}: no ground truth in {}", args.gt.display()));
    }
    if !missing.is_empty() {
        for m in &missing {
            eprintln!("missing pair: {m}");
        }
        return Err(CliError::input(format!("{} unmatched ids", missing.len())));
    }

    let ids: Vec<&String> = gt.keys().collect();
    let items = ids
        .par_iter()
        .map(|id| load_item(id, &preds[*id], &gt[*id], &fixations[*id]))
        .collect::<Result<Vec<_>, _>>()?;
    let reports = (0..items.len())
        .into_par_iter()
        .map(|i| {
            let item = &items[i];
            let (w, h) = (item.gt.width(), item.gt.height());
            let others: Vec<FixationMap> = items
                .iter()
                .enumerate()
                .filter(|(j, o)| *j != i && o.gt.width() == w && o.gt.height() == h)
                .map(|(_, o)| o.fixations.clone())
                .collect();
            let baseline = center_prior(w, h)?;
            let inputs = EvalInputs {
                prediction: &item.pred,
                density: &item.gt,
                fixations: &item.fixations,
                other_fixations: &others,
                baseline: &baseline,
            };
            evaluate_all(&inputs, &item.id, &item.id, &cfg)
        })
        .collect::<Result<Vec<_>, _>>()?;

    let out = args.common.create_out()?;
    let per_image = out.join("per_image");
    fs::create_dir_all(&per_image).map_err(|e| CliError::io(&per_image, e))?;
    let mut outputs = Vec::new();
    for r in &reports {
        write(
            &per_image.join(format!("{}.json", r.prediction_id)),
            &(r.to_json() + "\n"),
        )?;
        write(
            &per_image.join(format!("{}.tsv", r.prediction_id)),
            &r.to_tsv(),
        )?;
        if ctx.verbose {
            eprintln!("{}: {}", r.prediction_id, r.format_row(&TABLE_COLUMNS));
        }
    }
    outputs.push("per_image/".to_string());
    let label = s.raw("label");
    let mean = aggregate_mean(&reports, label, "mean", cfg);
    let table = render_table(&[(label, &mean)], &TABLE_COLUMNS);
    write(&out.join("aggregate.json"), &(mean.to_json() + "\n"))?;
    write(&out.join("aggregate.tsv"), &mean.to_tsv())?;
    write(&out.join("table.md"), &table)?;
    outputs.extend(["aggregate.json", "aggregate.tsv", "table.md"].map(String::from));
    let inputs = json!({
        "pred": args.pred.display().to_string(),
        "gt": args.gt.display().to_string(),
        "fixations": args.fixations.display().to_string(),
        "images": reports.len(),
    });
    record::write(out, "eval", &args.common, &s, inputs, &outputs, None)?;
    print!("{table}");
    Ok(())
}

fn write(path: &Path, text: &str) -> CliResult<()> {
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

/// Parses a report written by `eval` (JSON) or `name<TAB>value` lines.
pub fn read_report(path: &Path, label: &str) -> CliResult<MetricReport> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    if text.trim_start().starts_with('{') {
        return Ok(MetricReport::from_json(&text)?);
    }
    let mut report = MetricReport::new(label, label, MetricConfig::default());
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = || {
            CliError::input(format!(
                "{}:{}: expected `name<TAB>value`",
                path.display(),
                n + 1
            ))
        };
        let (name, value) = line.split_once('\t').ok_or_else(bad)?;
        let value = value.trim();
        let outcome = if value == "NA" {
            Err(Error::DegenerateInput("not reported".into()))
        } else {
            Ok(value.parse::<f64>().map_err(|_| bad())?)
        };
        report.push(name.trim(), outcome);
    }
    Ok(report)
}
