//! Table emission: model-by-dataset AUC and RMSE grids and per-content RMSE.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::io::Write;

use crate::dataset::ContentType;
use crate::metrics::EvalReport;
use crate::models::Architecture;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Metric {
    Auc,
    Rmse,
}

impl Metric {
    fn title(self) -> &'static str {
        match self {
            Metric::Auc => "AUC",
            Metric::Rmse => "RMSE",
        }
    }
}

/// One table row: a dataset (content type) and country.
pub type RowKey = (ContentType, String);

fn rows(reports: &[EvalReport]) -> Vec<RowKey> {
    let set: BTreeSet<RowKey> = reports.iter().map(|r| (r.content_type, r.country.clone())).collect();
    set.into_iter().collect()
}

fn cell(reports: &[EvalReport], row: &RowKey, arch: Architecture, metric: Metric) -> String {
    let r = reports
        .iter()
        .find(|r| r.content_type == row.0 && r.country == row.1 && r.model.eq_ignore_ascii_case(arch.as_str()));
    match (r, metric) {
        (None, _) => String::new(),
        (Some(r), Metric::Auc) => r.auc.map(|a| format!("{a:.4}")).unwrap_or_else(|| "NA".into()),
        (Some(r), Metric::Rmse) => format!("{:.4}", r.rmse),
    }
}

/// Grid with one row per (dataset, country) and one column per architecture.
pub fn table(reports: &[EvalReport], metric: Metric) -> Vec<Vec<String>> {
    let mut out = vec![["Dataset", "Country"].iter().map(|s| s.to_string()).collect::<Vec<_>>()];
    out[0].extend(Architecture::ALL.iter().map(|a| a.display_name().to_string()));
    for row in rows(reports) {
        let mut line = vec![row.0.display_name().to_string(), row.1.clone()];
        line.extend(Architecture::ALL.iter().map(|&a| cell(reports, &row, a, metric)));
        out.push(line);
    }
    out
}

pub fn write_table_csv<W: Write>(writer: W, reports: &[EvalReport], metric: Metric) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for line in table(reports, metric) {
        w.write_record(&line)?;
    }
    w.flush()
}

/// Long-format per-content RMSE: `dataset,country,content_id,model,rmse,count`.
pub fn write_per_content_csv<W: Write>(writer: W, reports: &[EvalReport]) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["dataset", "country", "content_id", "model", "rmse", "count"])?;
    let mut sorted: Vec<&EvalReport> = reports.iter().collect();
    sorted.sort_by_key(|r| {
        let arch = r.model.parse::<Architecture>().ok();
        (r.content_type, r.country.clone(), arch)
    });
    for r in sorted {
        let model = r.model.parse::<Architecture>().map(|a| a.display_name().to_string()).unwrap_or_else(|_| r.model.clone());
        for c in &r.per_content {
            w.write_record([
                r.content_type.as_str(),
                &r.country,
                &c.content_id,
                &model,
                &format!("{:.6}", c.rmse),
                &c.count.to_string(),
            ])?;
        }
    }
    w.flush()
}

/// Aligned plain-text rendering of both grids.
pub fn render_text(reports: &[EvalReport]) -> String {
    let mut out = String::new();
    for metric in [Metric::Auc, Metric::Rmse] {
        let t = table(reports, metric);
        let widths: Vec<usize> = (0..t[0].len()).map(|c| t.iter().map(|r| r[c].len()).max().unwrap_or(0)).collect();
        let _ = writeln!(out, "{}", metric.title());
        for (i, line) in t.iter().enumerate() {
            let cells: Vec<String> = line
                .iter()
                .zip(&widths)
                .enumerate()
                .map(|(c, (s, &w))| if c < 2 { format!("{s:<w$}") } else { format!("{s:>w$}") })
                .collect();
            let _ = writeln!(out, "{}", cells.join("  ").trim_end());
            if i == 0 {
                let _ = writeln!(out, "{}", "-".repeat(widths.iter().sum::<usize>() + 2 * (widths.len() - 1)));
            }
        }
        out.push('\n');
    }
    out
}
