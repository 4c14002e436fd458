use std::fs;
use std::path::PathBuf;

use clap::Args;
use serde_json::json;

use salnet_core::metrics::{render_table, MetricReport, ALL_METRICS, TABLE_COLUMNS};

use crate::eval::read_report;
use crate::failure::{CliError, CliResult};
use crate::{record, Common, Context};

#[derive(Args, Debug)]
pub struct ReportArgs {
    #[command(flatten)]
    pub common: Common,

    /// One table row as LABEL=PATH, where PATH is an eval report (JSON) or
    /// `name<TAB>value` lines; repeatable, rows keep their order.
    #[arg(long = "row", value_name = "LABEL=PATH", required = true)]
    pub rows: Vec<String>,
}

const DEFAULTS: &[(&str, &str)] = &[("seed", "0"), ("columns", "table")];

pub fn run(args: &ReportArgs, _ctx: &Context) -> CliResult<()> {
    let s = args.common.settings(DEFAULTS, &[])?;
    let columns: &[&str] = match s.raw("columns") {
        "table" => &TABLE_COLUMNS,
        "all" => &ALL_METRICS,
        other => {
            return Err(CliError::input(format!(
                "columns must be `table` or `all`, got `{other}`"
            )))
        }
    };
    let mut rows: Vec<(String, PathBuf, MetricReport)> = Vec::new();
    for row in &args.rows {
        let (label, path) = row
            .split_once('=')
            .ok_or_else(|| CliError::input(format!("expected LABEL=PATH, got `{row}`")))?;
        let path = PathBuf::from(path);
        let report = read_report(&path, label)?;
        rows.push((label.to_string(), path, report));
    }
    let table_rows: Vec<(&str, &MetricReport)> =
        rows.iter().map(|(l, _, r)| (l.as_str(), r)).collect();
    let table = render_table(&table_rows, columns);
    let machine = json!({
        "columns": columns,
        "rows": rows.iter().map(|(label, _, r)| json!({
            "label": label,
            "values": columns.iter().map(|c| r.get(c)).collect::<Vec<_>>(),
        })).collect::<Vec<_>>(),
    });
    let out = args.common.create_out()?;
    let md = out.join("table.md");
    fs::write(&md, &table).map_err(|e| CliError::io(&md, e))?;
    let js = out.join("table.json");
    let text = serde_json::to_string_pretty(&machine).expect("table serializes") + "\n";
    fs::write(&js, text).map_err(|e| CliError::io(&js, e))?;
    let inputs = json!({
        "rows": rows.iter().map(|(l, p, _)| format!("{l}={}", p.display())).collect::<Vec<_>>(),
    });
    let outputs = ["table.md", "table.json"].map(String::from);
    record::write(out, "report", &args.common, &s, inputs, &outputs, None)?;
    print!("{table}");
    Ok(())
}
