use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ecg_core::learn::MetricsReport;
use serde::Serialize;

use crate::error::{CliError, CliResult};
use crate::run::{write_json, RunSummary, METRICS_FILE, SUMMARY_FILE};
use crate::sweep::read_json;

#[derive(Serialize)]
struct Radial {
    auc: Option<f64>,
    sensitivity: f64,
    specificity: f64,
    ppv: f64,
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_else(|| "n/a".into())
}

pub fn cmd_report(runs: &[std::path::PathBuf], out: &Path) -> CliResult<()> {
    let mut rows = Vec::new();
    for dir in runs {
        let complete = dir.join(METRICS_FILE).is_file() && dir.join(SUMMARY_FILE).is_file();
        if !complete {
            log::warn!("skipping {}: not a completed run directory", dir.display());
            continue;
        }
        let summary: RunSummary = read_json(&dir.join(SUMMARY_FILE))?;
        let metrics: MetricsReport = read_json(&dir.join(METRICS_FILE))?;
        let run = dir.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| summary.name.clone());
        rows.push((run, summary, metrics));
    }
    if rows.is_empty() {
        return Err(CliError::runtime("no completed runs to report"));
    }
    let radial = out.join("radial");
    fs::create_dir_all(&radial).map_err(|e| CliError::io(&radial, e))?;

    let header = ["run", "model", "pretrain", "accuracy", "f1", "map", "gmean"];
    let mut md = format!("| {} |\n|{}\n", header.join(" | "), "---|".repeat(header.len()));
    let csv_path = out.join("table.csv");
    let mut w = csv::Writer::from_path(&csv_path).map_err(|e| CliError::runtime(format!("{}: {e}", csv_path.display())))?;
    let err = |e: csv::Error| CliError::runtime(format!("{}: {e}", csv_path.display()));
    w.write_record(header).map_err(err)?;
    for (run, s, m) in &rows {
        let cells = [
            run.clone(),
            s.architecture.clone(),
            s.pretrain.clone(),
            m.accuracy.to_string(),
            m.f1.to_string(),
            cell(m.map),
            m.gmean.to_string(),
        ];
        let _ = writeln!(md, "| {} |", cells.join(" | "));
        w.write_record(&cells).map_err(err)?;
        let point = Radial {
            auc: m.auc,
            sensitivity: m.sensitivity,
            specificity: m.specificity,
            ppv: m.ppv,
        };
        write_json(&radial.join(format!("{run}.json")), &point)?;
    }
    w.flush().map_err(|e| CliError::io(&csv_path, e))?;
    let md_path = out.join("table.md");
    fs::write(&md_path, &md).map_err(|e| CliError::io(&md_path, e))?;
    print!("{md}");
    Ok(())
}
