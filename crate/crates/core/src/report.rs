//! Report and metrics CSV files.
//!
//! Every file starts with `# ` comment lines carrying the run configuration,
//! followed by a header row and one row per item.

use std::io::{BufRead, Write};
use std::net::Ipv4Addr;

use crate::error::{Error, Result};
use crate::eval::Metrics;
use crate::window::WindowOutcome;

pub const REPORT_COLUMNS: &str = "ip,estimated_cardinality,saturated";
pub const METRICS_HEADER: &str = "window_id,FPR,FNR,FTR,detected,truth";

pub fn write_comment_header(mut w: impl Write, lines: &[String]) -> Result<()> {
    for l in lines {
        writeln!(w, "# {l}")?;
    }
    Ok(())
}

/// Writes detection reports; `id_column` is `window_id` or `slide_id`.
pub fn write_reports(
    mut w: impl Write,
    header: &[String],
    id_column: &str,
    outcomes: &[WindowOutcome],
) -> Result<()> {
    write_comment_header(&mut w, header)?;
    writeln!(w, "{id_column},{REPORT_COLUMNS}")?;
    for o in outcomes {
        for r in &o.reports {
            writeln!(
                w,
                "{},{},{:.3},{}",
                r.window_id,
                Ipv4Addr::from(r.ip),
                r.estimate,
                r.saturated
            )?;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub id: u64,
    pub ip: u32,
    pub estimate: f64,
    pub saturated: bool,
}

pub fn read_reports(r: impl BufRead) -> Result<Vec<ReportRow>> {
    let mut out = Vec::new();
    let mut saw_header = false;
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if !saw_header {
            if !line.ends_with(REPORT_COLUMNS) {
                return Err(Error::Data(format!(
                    "line {}: unexpected report header {line:?}",
                    i + 1
                )));
            }
            saw_header = true;
            continue;
        }
        let bad = || Error::Data(format!("line {}: malformed report row {line:?}", i + 1));
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 4 {
            return Err(bad());
        }
        out.push(ReportRow {
            id: f[0].parse().map_err(|_| bad())?,
            ip: f[1].parse::<Ipv4Addr>().map_err(|_| bad())?.into(),
            estimate: f[2].parse().map_err(|_| bad())?,
            saturated: f[3].parse().map_err(|_| bad())?,
        });
    }
    if !saw_header {
        return Err(Error::Data("report file has no header row".into()));
    }
    Ok(out)
}

pub fn write_metrics(mut w: impl Write, header: &[String], rows: &[(u64, Metrics)]) -> Result<()> {
    write_comment_header(&mut w, header)?;
    writeln!(w, "{METRICS_HEADER}")?;
    for (id, m) in rows {
        writeln!(
            w,
            "{id},{:.6},{:.6},{:.6},{},{}",
            m.fpr, m.fnr, m.ftr, m.detected, m.truth
        )?;
    }
    Ok(())
}
