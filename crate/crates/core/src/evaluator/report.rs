use std::fmt::Write as _;
use std::path::Path;

use super::{EvalError, EvalReport, ReportRow, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Markdown,
}

fn section_headers(sections: usize) -> Vec<String> {
    (0..sections).map(|k| format!("Sec. {k}")).chain(std::iter::once("Total".to_string())).collect()
}

/// CSV with a `# title` line, a header row and full-precision values.
pub fn render_csv(report: &EvalReport) -> String {
    let mut out = format!("# {}\nname,{}\n", report.title, section_headers(report.sections).join(","));
    for row in &report.rows {
        let cells: Vec<String> = row.sections.iter().chain(std::iter::once(&row.total)).map(|v| format!("{v:?}")).collect();
        writeln!(out, "{},{}", row.name, cells.join(",")).unwrap();
    }
    out
}

/// Markdown table with the unit caption and values to three decimals.
pub fn render_markdown(report: &EvalReport) -> String {
    let headers = section_headers(report.sections);
    let mut out = format!("### {}\n\nUnit: mm\n\n| Model | {} |\n", report.title, headers.join(" | "));
    writeln!(out, "|---|{}", "---:|".repeat(headers.len())).unwrap();
    for row in &report.rows {
        let cells: Vec<String> = row.sections.iter().chain(std::iter::once(&row.total)).map(|v| format!("{v:.3}")).collect();
        writeln!(out, "| {} | {} |", row.name, cells.join(" | ")).unwrap();
    }
    out
}

pub fn parse_report_csv(text: &str) -> Result<EvalReport> {
    let bad = |m: String| EvalError::Report(m);
    let mut lines = text.lines();
    let title = lines
        .next()
        .and_then(|l| l.strip_prefix("# "))
        .ok_or_else(|| bad("missing `# title` line".into()))?
        .to_string();
    let header = lines.next().ok_or_else(|| bad("missing header".into()))?;
    let cols: Vec<&str> = header.split(',').collect();
    if cols.len() < 2 || cols[0] != "name" || cols[cols.len() - 1] != "Total" {
        return Err(bad(format!("unexpected header `{header}`")));
    }
    let sections = cols.len() - 2;
    let mut rows = Vec::new();
    for line in lines.filter(|l| !l.is_empty()) {
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != cols.len() {
            return Err(bad(format!("row `{line}` has {} cells, expected {}", cells.len(), cols.len())));
        }
        let values = cells[1..]
            .iter()
            .map(|c| c.parse::<f64>().map_err(|e| bad(format!("bad value `{c}`: {e}"))))
            .collect::<Result<Vec<f64>>>()?;
        rows.push(ReportRow { name: cells[0].to_string(), sections: values[..sections].to_vec(), total: values[sections] });
    }
    Ok(EvalReport { title, sections, rows })
}

pub fn read_report_csv(path: &Path) -> Result<EvalReport> {
    parse_report_csv(&std::fs::read_to_string(path)?)
}

pub fn emit_report(report: &EvalReport, format: ReportFormat, path: &Path) -> Result<()> {
    let text = match format {
        ReportFormat::Csv => render_csv(report),
        ReportFormat::Markdown => render_markdown(report),
    };
    std::fs::write(path, text)?;
    Ok(())
}
