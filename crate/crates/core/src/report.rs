//! Rendering of benchmark results as CSV, JSON and markdown tables.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::Value;

use crate::error::{Error, Result};
use crate::sim::bench::{AteBenchmark, BenchmarkResult, CateBenchmark};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Json,
    Markdown,
}

impl ReportFormat {
    pub const ALL: [ReportFormat; 3] = [ReportFormat::Csv, ReportFormat::Json, ReportFormat::Markdown];

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(Self::Csv),
            "json" => Ok(Self::Json),
            "markdown" | "md" | "markdown-table" => Ok(Self::Markdown),
            _ => Err(Error::Argument(format!("unknown report format `{s}`"))),
        }
    }

    pub fn extension(&self) -> &'static str {
        match self {
            Self::Csv => "csv",
            Self::Json => "json",
            Self::Markdown => "md",
        }
    }
}

fn slug(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        if c.is_ascii_alphanumeric() || c == '.' {
            out.push(c);
        } else if !out.ends_with('-') {
            out.push('-');
        }
    }
    out.trim_matches('-').to_string()
}

/// File stem `{scenario}_{method}_{n}_{reps}_{seed}`.
pub fn report_stem(result: &BenchmarkResult) -> String {
    match result {
        BenchmarkResult::Ate(b) => {
            let method = if b.rows.len() == 1 { slug(&b.rows[0].label) } else { format!("ate{}rows", b.rows.len()) };
            format!("{}_{}_{}_{}_{}", b.scenario.label(), method, b.n, b.reps, b.seed)
        }
        BenchmarkResult::Cate(b) => {
            let method = if b.arms.len() == 1 { slug(&b.arms[0].label) } else { format!("cate{}arms", b.arms.len()) };
            let ns: Vec<String> = b.ns.iter().map(|n| n.to_string()).collect();
            format!("{}_{}_{}_{}_{}", b.scenario.label(), method, ns.join("-"), b.reps, b.seed)
        }
    }
}

fn is_empty(result: &BenchmarkResult) -> bool {
    match result {
        BenchmarkResult::Ate(b) => b.replications.is_empty(),
        BenchmarkResult::Cate(b) => b.replications.is_empty(),
    }
}

fn csv_rows<T: Serialize>(rows: &[T]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// Per-replication rows as CSV.
pub fn replications_csv(result: &BenchmarkResult) -> Result<String> {
    match result {
        BenchmarkResult::Ate(b) => csv_rows(&b.replications),
        BenchmarkResult::Cate(b) => csv_rows(&b.replications),
    }
}

/// Summary, per-replication rows and the echoed configuration as JSON.
pub fn result_json(result: &BenchmarkResult, config: Option<&Value>) -> Result<String> {
    let mut v = serde_json::to_value(result)?;
    if let (Some(obj), Some(cfg)) = (v.as_object_mut(), config) {
        obj.insert("config".into(), cfg.clone());
    }
    Ok(serde_json::to_string_pretty(&v)?)
}

fn opt(v: Option<f64>, digits: usize) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.digits$}"))
}

fn ate_markdown(b: &AteBenchmark) -> String {
    let mut s = format!("n = {}, {} replications, seed {}, truth {:.4}\n\n", b.n, b.reps, b.seed, b.truth);
    s.push_str("| Method | Bias | SD | SE | bootSE | CP | bootCP |\n|---|---:|---:|---:|---:|---:|---:|\n");
    for r in &b.summary {
        s.push_str(&format!(
            "| {} | {:.4} | {:.4} | {:.4} | {} | {:.3} | {} |\n",
            r.row,
            r.bias,
            r.sd,
            r.mean_se,
            opt(r.mean_se_boot, 4),
            r.cp,
            opt(r.cp_boot, 3)
        ));
    }
    s
}

fn cate_markdown(b: &CateBenchmark) -> String {
    let mut s = format!("scenario {}, {} replications, seed {}\n\n", b.scenario.label(), b.reps, b.seed);
    s.push_str("| Learner | n | Median MSE | Q25 | Q75 | Mean MSE |\n|---|---:|---:|---:|---:|---:|\n");
    for c in &b.summary {
        s.push_str(&format!("| {} | {} | {:.5} | {:.5} | {:.5} | {:.5} |\n", c.arm, c.n, c.median_mse, c.q25_mse, c.q75_mse, c.mean_mse));
    }
    s
}

pub fn markdown_table(result: &BenchmarkResult) -> String {
    match result {
        BenchmarkResult::Ate(b) => ate_markdown(b),
        BenchmarkResult::Cate(b) => cate_markdown(b),
    }
}

/// Write one file per requested format into `dir` and return their paths.
pub fn emit_report(result: &BenchmarkResult, formats: &[ReportFormat], dir: &Path, config: Option<&Value>) -> Result<Vec<PathBuf>> {
    if is_empty(result) {
        return Err(Error::Argument("cannot report an empty benchmark".into()));
    }
    fs::create_dir_all(dir)?;
    let stem = report_stem(result);
    let mut paths = Vec::with_capacity(formats.len());
    for f in formats {
        let body = match f {
            ReportFormat::Csv => replications_csv(result)?,
            ReportFormat::Json => result_json(result, config)?,
            ReportFormat::Markdown => markdown_table(result),
        };
        let path = dir.join(format!("{stem}.{}", f.extension()));
        fs::write(&path, body)?;
        paths.push(path);
    }
    Ok(paths)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slugs_are_file_safe() {
        assert_eq!(slug("cf pCox/gbm-pCox-pCox"), "cf-pCox-gbm-pCox-pCox");
        assert_eq!(slug("ltrcDR@0.05"), "ltrcDR-0.05");
    }

    #[test]
    fn formats_parse() {
        assert_eq!(ReportFormat::parse("markdown-table").unwrap(), ReportFormat::Markdown);
        assert!(ReportFormat::parse("xml").is_err());
    }
}
