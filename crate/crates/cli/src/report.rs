//! Report files. Text tables carry the resolved configuration as a `#`
//! header; every table has a JSON twin with the same content.

use std::fmt::Write as _;
use std::path::Path;

use affectlab::classify::{format_accuracy_table, AccuracyRow};
use affectlab::rsa::{rdm_render_ppm, rdm_render_text, RsaResult};
use affectlab::{Error, Result};
use serde::Serialize;

use crate::config::RunConfig;
use crate::pipeline::{PipelineOutcome, RsaTable};

pub const TABLE1_TITLE: &str = "affectlab table1: emotion classification accuracy";
pub const TABLE2_TITLE: &str = "affectlab table2: group-level kendall tau between feature and neural RDMs";
/// Pixel size of one RDM cell in the heat maps.
pub const PPM_CELL: usize = 8;

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| io_err(path, e))
}

pub(crate) fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Serialize)]
struct JsonReport<'a, T: Serialize> {
    title: &'a str,
    seed: u64,
    config: &'a RunConfig,
    #[serde(flatten)]
    body: T,
}

pub fn to_json<T: Serialize>(title: &str, cfg: &RunConfig, body: T) -> String {
    let mut s = serde_json::to_string_pretty(&JsonReport {
        title,
        seed: cfg.seed,
        config: cfg,
        body,
    })
    .expect("report serializes");
    s.push('\n');
    s
}

pub fn table1_text(cfg: &RunConfig, rows: &[AccuracyRow]) -> String {
    format!("{}{}", cfg.header(TABLE1_TITLE), format_accuracy_table(rows))
}

pub fn table1_json(cfg: &RunConfig, rows: &[AccuracyRow]) -> String {
    #[derive(Serialize)]
    struct Body<'a> {
        rows: &'a [AccuracyRow],
    }
    to_json(TABLE1_TITLE, cfg, Body { rows })
}

pub fn table2_text(cfg: &RunConfig, table: &RsaTable) -> String {
    let mut out = cfg.header(TABLE2_TITLE);
    if table.tom_computed {
        out.push_str("# ToM: per-subject mean of the region RDMs\n");
    }
    let width = table.rows.iter().map(|r| r.region.len()).max().unwrap_or(6).max(6);
    let col = table.spaces.iter().map(String::len).max().unwrap_or(6).max(6);
    let _ = write!(out, "{:<width$}", "region");
    for s in &table.spaces {
        let _ = write!(out, "  {s:>col$}");
    }
    out.push('\n');
    for row in &table.rows {
        let _ = write!(out, "{:<width$}", row.region);
        for t in &row.taus {
            let _ = write!(out, "  {t:>col$.3}");
        }
        out.push('\n');
    }
    out
}

pub fn table2_json(cfg: &RunConfig, table: &RsaTable) -> String {
    to_json(TABLE2_TITLE, cfg, table)
}

/// Per-region results of one `rsa` invocation.
pub fn rsa_text(cfg: &RunConfig, space: &str, results: &[RsaResult]) -> String {
    let mut out = cfg.header(TABLE2_TITLE);
    let _ = writeln!(out, "# feature space: {space}");
    let width = results.iter().map(|r| r.region.len()).max().unwrap_or(6).max(6);
    let _ = writeln!(out, "{:<width$}  {:>8}  {:>10}", "region", "mean_tau", "n_subjects");
    for r in results {
        let _ = writeln!(
            out,
            "{:<width$}  {:>8.3}  {:>10}",
            r.region,
            r.mean_tau,
            r.per_subject.len()
        );
    }
    out
}

/// Writes `table1.{txt,json}`, `table2.{txt,json}`, `rdm/<space>.{txt,ppm}`,
/// `model.json` and `training.json` under `dir`.
pub fn write_pipeline_reports(dir: &Path, cfg: &RunConfig, outcome: &PipelineOutcome) -> Result<()> {
    write_file(&dir.join("table1.txt"), table1_text(cfg, &outcome.table1).as_bytes())?;
    write_file(&dir.join("table1.json"), table1_json(cfg, &outcome.table1).as_bytes())?;
    write_file(&dir.join("table2.txt"), table2_text(cfg, &outcome.table2).as_bytes())?;
    write_file(&dir.join("table2.json"), table2_json(cfg, &outcome.table2).as_bytes())?;
    for (name, rdm) in &outcome.rdms {
        let text = format!(
            "{}{}",
            cfg.header(&format!("affectlab rdm: {name}")),
            rdm_render_text(rdm)
        );
        write_file(&dir.join("rdm").join(format!("{name}.txt")), text.as_bytes())?;
        write_file(
            &dir.join("rdm").join(format!("{name}.ppm")),
            &rdm_render_ppm(rdm, PPM_CELL),
        )?;
    }
    write_file(&dir.join("model.json"), outcome.checkpoint.to_json().as_bytes())?;
    #[derive(Serialize)]
    struct Training<'a> {
        pretrain: &'a affectlab::TrainReport,
        multitask: &'a affectlab::TrainReport,
    }
    let training = to_json(
        "affectlab training",
        cfg,
        Training {
            pretrain: &outcome.pretrain,
            multitask: &outcome.multitask,
        },
    );
    write_file(&dir.join("training.json"), training.as_bytes())
}
