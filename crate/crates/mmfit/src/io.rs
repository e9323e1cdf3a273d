//! File formats: counts CSV (`label,count`), design CSV (rows of 0/1),
//! design JSON (array of arrays), fit documents, and the simulation table.

use crate::curved::CurvedFit;
use crate::loglinear::LogLinearFit;
use crate::numerics::Matrix;
use crate::simulation::{SimResult, Statistic};
use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("could not read {path}: {source}")]
    Read {
        path: String,
        source: std::io::Error,
    },
    #[error("could not write {path}: {source}")]
    Write {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },
    #[error("{path}: invalid JSON: {message}")]
    Json { path: String, message: String },
}

impl crate::ClassifiedError for IoError {
    fn class(&self) -> crate::ErrorClass {
        match self {
            Self::Read { .. } | Self::Write { .. } => crate::ErrorClass::Io,
            Self::Parse { .. } | Self::Json { .. } => crate::ErrorClass::Parse,
        }
    }
}

/// Labelled count data.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Dataset {
    pub labels: Vec<String>,
    pub y: Vec<u64>,
}

/// Parses `label,count` lines; a leading `label,count` header is skipped.
pub fn parse_counts_csv(text: &str, path: &str) -> Result<Dataset, IoError> {
    let mut labels = Vec::new();
    let mut y = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if idx == 0 && line.eq_ignore_ascii_case("label,count") {
            continue;
        }
        let (label, count) = line.split_once(',').ok_or_else(|| IoError::Parse {
            path: path.into(),
            line: idx + 1,
            message: "expected `label,count`".into(),
        })?;
        let label = label.trim();
        if label.is_empty() {
            return Err(IoError::Parse {
                path: path.into(),
                line: idx + 1,
                message: "empty label".into(),
            });
        }
        let value: u64 = count.trim().parse().map_err(|_| IoError::Parse {
            path: path.into(),
            line: idx + 1,
            message: format!("`{}` is not a nonnegative integer count", count.trim()),
        })?;
        labels.push(label.to_string());
        y.push(value);
    }
    if y.is_empty() {
        return Err(IoError::Parse {
            path: path.into(),
            line: 1,
            message: "no data rows".into(),
        });
    }
    Ok(Dataset { labels, y })
}

/// Parses a design matrix from rows of comma-separated 0/1 entries; a
/// non-numeric first row is treated as a header and skipped.
pub fn parse_design_csv(text: &str, path: &str) -> Result<Matrix, IoError> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut width: Option<usize> = None;
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let tokens: Vec<&str> = line.split(',').map(str::trim).collect();
        let is_header =
            rows.is_empty() && tokens.iter().any(|t| t.parse::<f64>().is_err());
        if is_header {
            continue;
        }
        let mut row = Vec::with_capacity(tokens.len());
        for t in &tokens {
            match *t {
                "0" => row.push(0.0),
                "1" => row.push(1.0),
                other => {
                    return Err(IoError::Parse {
                        path: path.into(),
                        line: idx + 1,
                        message: format!("`{other}` is not a 0/1 design entry"),
                    })
                }
            }
        }
        if let Some(w) = width {
            if row.len() != w {
                return Err(IoError::Parse {
                    path: path.into(),
                    line: idx + 1,
                    message: format!("row has {} entries, previous rows have {w}", row.len()),
                });
            }
        } else {
            width = Some(row.len());
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(IoError::Parse {
            path: path.into(),
            line: 1,
            message: "no design rows".into(),
        });
    }
    Matrix::from_rows(&rows).map_err(|e| IoError::Parse {
        path: path.into(),
        line: 1,
        message: e.to_string(),
    })
}

/// Parses a design matrix from a JSON array of arrays of 0/1 numbers.
pub fn parse_design_json(text: &str, path: &str) -> Result<Matrix, IoError> {
    let rows: Vec<Vec<f64>> = serde_json::from_str(text).map_err(|e| IoError::Json {
        path: path.into(),
        message: e.to_string(),
    })?;
    Matrix::from_rows(&rows).map_err(|e| IoError::Json {
        path: path.into(),
        message: e.to_string(),
    })
}

pub fn read_to_string(path: &Path) -> Result<String, IoError> {
    std::fs::read_to_string(path).map_err(|source| IoError::Read {
        path: path.display().to_string(),
        source,
    })
}

/// Loads a design file, dispatching on the `.json` extension.
pub fn load_design(path: &Path) -> Result<Matrix, IoError> {
    let text = read_to_string(path)?;
    let name = path.display().to_string();
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json")) {
        parse_design_json(&text, &name)
    } else {
        parse_design_csv(&text, &name)
    }
}

pub fn load_counts(path: &Path) -> Result<Dataset, IoError> {
    let text = read_to_string(path)?;
    parse_counts_csv(&text, &path.display().to_string())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LogLinearSummary {
    pub theta: Vec<f64>,
    pub pi: Vec<f64>,
    pub tau: Vec<f64>,
    pub iterations: usize,
    pub final_residual: f64,
}

impl From<&LogLinearFit> for LogLinearSummary {
    fn from(fit: &LogLinearFit) -> Self {
        Self {
            theta: fit.theta.clone(),
            pi: fit.pi.clone(),
            tau: fit.tau.clone(),
            iterations: fit.iterations,
            final_residual: fit.final_residual,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CurvedSummary {
    pub theta: Vec<f64>,
    pub pi: Vec<f64>,
    pub gamma: f64,
    pub alpha: f64,
    pub loglik: f64,
    pub inner_fits: usize,
    pub outer_steps: usize,
}

impl From<&CurvedFit> for CurvedSummary {
    fn from(fit: &CurvedFit) -> Self {
        Self {
            theta: fit.theta.clone(),
            pi: fit.pi.clone(),
            gamma: fit.gamma,
            alpha: fit.alpha,
            loglik: fit.loglik,
            inner_fits: fit.inner_fits,
            outer_steps: fit.outer_steps,
        }
    }
}

/// Self-contained fit output: inputs echoed back plus both fitted models, so
/// a reader can re-verify the likelihood-equation residual offline.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitDocument {
    pub labels: Vec<String>,
    pub counts: Vec<u64>,
    pub design: Vec<Vec<f64>>,
    pub n: u64,
    pub algorithm: String,
    pub loglinear: LogLinearSummary,
    pub curved: CurvedSummary,
}

/// Plain-text table of rejection rates in percent: rows are sample sizes,
/// column groups are levels, columns within a group are the statistics.
pub fn format_sim_table(result: &SimResult) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "rejection rates (%) over {} replications, master seed {}\n",
        result.replications, result.master_seed
    ));
    out.push_str(&format!("{:>8}", "n"));
    for &level in &result.levels {
        out.push_str(&format!("{:>24}", format!("{:.0}%", level * 100.0)));
    }
    out.push('\n');
    out.push_str(&format!("{:>8}", ""));
    for _ in &result.levels {
        for stat in Statistic::ALL {
            out.push_str(&format!("{:>8}", stat.label()));
        }
    }
    out.push('\n');
    for row in &result.rows {
        out.push_str(&format!("{:>8}", row.n));
        for &level in &result.levels {
            for stat in Statistic::ALL {
                let cell = row
                    .cells
                    .iter()
                    .find(|c| c.level == level && c.statistic == stat)
                    .expect("cell present");
                out.push_str(&format!("{:>8.2}", cell.rate * 100.0));
            }
        }
        out.push('\n');
    }
    for row in &result.rows {
        if row.failures > 0 {
            out.push_str(&format!(
                "n = {}: {} of {} replications excluded (non-convergence)\n",
                row.n,
                row.failures,
                row.failures + row.successes
            ));
        }
    }
    out
}

/// Tidy CSV of the same rates, one row per (n, level, statistic).
pub fn format_sim_csv(result: &SimResult) -> String {
    let mut out = String::from("n,level,statistic,rate,mc_se,rejections,successes,failures\n");
    for row in &result.rows {
        for cell in &row.cells {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                row.n,
                cell.level,
                cell.statistic.label(),
                cell.rate,
                cell.mc_se,
                cell.rejections,
                row.successes,
                row.failures
            ));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_csv_round_trips() {
        let text = "label,count\nt,374\nm,3684\n";
        let data = parse_counts_csv(text, "mem").unwrap();
        assert_eq!(data.labels, vec!["t", "m"]);
        assert_eq!(data.y, vec![374, 3684]);
    }

    #[test]
    fn counts_csv_reports_offending_line() {
        let text = "t,374\nm,not-a-number\n";
        let err = parse_counts_csv(text, "mem").unwrap_err();
        assert!(err.to_string().contains("mem:2"), "{err}");
        let err2 = parse_counts_csv("t,1\nbroken-line\n", "mem").unwrap_err();
        assert!(err2.to_string().contains("mem:2"), "{err2}");
    }

    #[test]
    fn design_csv_is_strict_about_binary_entries() {
        let ok = parse_design_csv("x1,x2\n1,0\n0,1\n1,1\n", "mem").unwrap();
        assert_eq!((ok.rows(), ok.cols()), (3, 2));
        let err = parse_design_csv("1,0\n0,2\n", "mem").unwrap_err();
        assert!(err.to_string().contains("mem:2"));
        assert!(err.to_string().contains("0/1"));
        let ragged = parse_design_csv("1,0\n1\n", "mem").unwrap_err();
        assert!(ragged.to_string().contains("entries"));
    }

    #[test]
    fn design_json_parses_arrays() {
        let m = parse_design_json("[[1,0],[0,1],[1,1]]", "mem").unwrap();
        assert_eq!((m.rows(), m.cols()), (3, 2));
        assert!(parse_design_json("{\"rows\": 3}", "mem").is_err());
    }

    #[test]
    fn fit_document_round_trips_through_json() {
        let doc = FitDocument {
            labels: vec!["a".into(), "b".into()],
            counts: vec![3, 5],
            design: vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            n: 8,
            algorithm: "newton".into(),
            loglinear: LogLinearSummary {
                theta: vec![0.1, -0.2],
                pi: vec![0.4, 0.6],
                tau: vec![0.4, 0.6],
                iterations: 3,
                final_residual: 1e-12,
            },
            curved: CurvedSummary {
                theta: vec![-0.9, -0.5],
                pi: vec![0.4, 0.6],
                gamma: 0.999,
                alpha: 1.0 / 0.999 - 1.0,
                loglik: -5.3,
                inner_fits: 4,
                outer_steps: 2,
            },
        };
        let json = serde_json::to_string_pretty(&doc).unwrap();
        let back: FitDocument = serde_json::from_str(&json).unwrap();
        assert_eq!(back.counts, doc.counts);
        assert_eq!(back.curved.gamma, doc.curved.gamma);
    }
}
