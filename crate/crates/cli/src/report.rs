//! NMSE report (CSV) and slice maps (binary PGM).
//!
//! The CSV starts with one `#` line holding a JSON object with the run
//! configuration and conventions, followed by
//!
//! ```text
//! method,variable,mean,variance,R
//! slmm,A1,0.0123,0.0004,20
//! lmm,B,NA,NA,20
//! ```
//!
//! `NA` marks variables a method does not estimate; `NaN` marks failed runs.
//! Variances use the population convention (divide by `R`).

use slmm_core::eval::{mean_variance, ExperimentReport, Scores, Variable};
use slmm_core::{ImageGeometry, Mat};

pub const CSV_COLUMNS: [&str; 5] = ["method", "variable", "mean", "variance", "R"];

#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub method: String,
    pub variable: Variable,
    pub stats: Option<(f64, f64)>,
    pub realizations: usize,
}

pub fn rows_from_report(report: &ExperimentReport) -> Vec<Row> {
    report
        .rows
        .iter()
        .map(|r| Row {
            method: r.method.name().to_string(),
            variable: r.variable,
            stats: r.stats,
            realizations: r.realizations,
        })
        .collect()
}

/// One row per variable from the scores of several runs of one method.
pub fn rows_from_scores(method: &str, runs: &[Scores]) -> Vec<Row> {
    Variable::ALL
        .iter()
        .map(|&variable| {
            let samples: Vec<Option<f64>> = runs.iter().map(|s| s.get(variable)).collect();
            let stats = if samples.iter().all(Option::is_none) {
                None
            } else {
                let vals: Vec<f64> = samples.iter().map(|s| s.unwrap_or(f64::NAN)).collect();
                Some(mean_variance(&vals))
            };
            Row {
                method: method.to_string(),
                variable,
                stats,
                realizations: runs.len(),
            }
        })
        .collect()
}

fn number(v: f64) -> String {
    if v.is_nan() {
        "NaN".into()
    } else {
        format!("{v:e}")
    }
}

pub fn to_csv(header: &serde_json::Value, rows: &[Row]) -> String {
    let mut out = format!("# {}\n{}\n", header, CSV_COLUMNS.join(","));
    for r in rows {
        let (mean, var) = match r.stats {
            Some((m, v)) => (number(m), number(v)),
            None => ("NA".into(), "NA".into()),
        };
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.method,
            r.variable.name(),
            mean,
            var,
            r.realizations
        ));
    }
    out
}

/// `(method, variable, (mean, variance), R)`; `None` for `NA`.
pub type ParsedRow = (String, String, Option<(f64, f64)>, usize);

/// Parsed data rows of a report.
pub fn parse_csv(text: &str) -> Option<Vec<ParsedRow>> {
    let mut lines = text.lines().filter(|l| !l.starts_with('#'));
    if lines.next()? != CSV_COLUMNS.join(",") {
        return None;
    }
    lines
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            if f.len() != 5 {
                return None;
            }
            let stats = if f[2] == "NA" {
                None
            } else {
                Some((f[2].parse().ok()?, f[3].parse().ok()?))
            };
            Some((f[0].to_string(), f[1].to_string(), stats, f[4].parse().ok()?))
        })
        .collect()
}

/// Binary PGM of row `row` of `a` on slice `z`, values clamped to `[0, 1]`
/// and mapped to `0..=255`. Image rows run along `y`, columns along `x`.
pub fn slice_pgm(a: &Mat, row: usize, geometry: &ImageGeometry, z: usize) -> Vec<u8> {
    let [nx, ny, _] = geometry.dims();
    let mut out = format!("P5\n{nx} {ny}\n255\n").into_bytes();
    let values = a.row(row);
    for y in 0..ny {
        for x in 0..nx {
            let v = values[geometry.index(x, y, z)];
            let v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
            out.push((v * 255.0).round() as u8);
        }
    }
    out
}
