//! Artifact emission: trajectory CSVs with a fixed schema, and the JSON
//! experiment summary.
//!
//! Floats are written in Rust's shortest round-trip form, so rerunning the
//! same config produces byte-identical CSV files and reading a file back
//! recovers the exact f64 values.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::config::ExperimentConfig;
use crate::harness::runner::{RunStatus, TrajectoryRow};

/// The one and only trajectory CSV header, in column order.
pub const CSV_HEADER: &str =
    "step,eta,loss,d_fro,t_sgd,t_l2,t_adapt,norm_total,sigma_w,seed,status";

/// One trajectory CSV line. This is a projection of `TrajectoryRow`: the
/// flattened imbalance entries and per-factor norms are dropped in favor of
/// the two scalar aggregates `d_fro` and `norm_total`.
#[derive(Clone, Debug, PartialEq)]
pub struct CsvRow {
    pub step: u64,
    pub eta: f64,
    pub loss: f64,
    pub d_fro: f64,
    pub t_sgd: f64,
    pub t_l2: f64,
    pub t_adapt: f64,
    pub norm_total: f64,
    pub sigma_w: f64,
    pub seed: u64,
    pub status: RunStatus,
}

impl CsvRow {
    pub fn from_row(row: &TrajectoryRow) -> CsvRow {
        CsvRow {
            step: row.step,
            eta: row.eta,
            loss: row.loss,
            d_fro: row.d_fro,
            t_sgd: row.t_sgd,
            t_l2: row.t_l2,
            t_adapt: row.t_adapt,
            norm_total: row.norm_total(),
            sigma_w: row.sigma_w,
            seed: row.seed,
            status: row.status,
        }
    }

    /// One CSV line, floats in shortest-round-trip form (no header).
    pub fn to_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{}",
            self.step,
            self.eta,
            self.loss,
            self.d_fro,
            self.t_sgd,
            self.t_l2,
            self.t_adapt,
            self.norm_total,
            self.sigma_w,
            self.seed,
            self.status.as_str()
        )
    }

    /// Parse one data line; `line_no` is 1-based and only used in errors.
    pub fn parse(line: &str, line_no: usize) -> Result<CsvRow> {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 11 {
            return Err(Error::CsvParse {
                line: line_no,
                detail: format!("expected 11 fields, got {}", fields.len()),
            });
        }
        let float = |idx: usize| -> Result<f64> {
            fields[idx].parse::<f64>().map_err(|_| Error::CsvParse {
                line: line_no,
                detail: format!("field {} is not a float: {:?}", idx, fields[idx]),
            })
        };
        let int = |idx: usize| -> Result<u64> {
            fields[idx].parse::<u64>().map_err(|_| Error::CsvParse {
                line: line_no,
                detail: format!("field {} is not an integer: {:?}", idx, fields[idx]),
            })
        };
        let status = RunStatus::parse(fields[10]).map_err(|_| Error::CsvParse {
            line: line_no,
            detail: format!("unknown status {:?}", fields[10]),
        })?;
        Ok(CsvRow {
            step: int(0)?,
            eta: float(1)?,
            loss: float(2)?,
            d_fro: float(3)?,
            t_sgd: float(4)?,
            t_l2: float(5)?,
            t_adapt: float(6)?,
            norm_total: float(7)?,
            sigma_w: float(8)?,
            seed: int(9)?,
            status,
        })
    }
}

/// Render rows to CSV text (header always present, `\n` line endings).
pub fn csv_text(rows: &[CsvRow]) -> String {
    let mut text = String::with_capacity(64 * (rows.len() + 1));
    text.push_str(CSV_HEADER);
    text.push('\n');
    for row in rows {
        let _ = writeln!(text, "{}", row.to_line());
    }
    text
}

/// Write rows to `path`, creating parent directories as needed. No rows
/// still writes the header, so downstream tooling sees the schema.
pub fn emit_csv(path: &Path, rows: &[CsvRow]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    std::fs::write(path, csv_text(rows)).map_err(|e| Error::io(path, e))
}

/// Read a trajectory CSV back; the header must match `CSV_HEADER` exactly.
pub fn read_csv(path: &Path) -> Result<Vec<CsvRow>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header == CSV_HEADER => {}
        Some((_, header)) => {
            return Err(Error::CsvParse {
                line: 1,
                detail: format!("unexpected header {header:?}"),
            })
        }
        None => {
            return Err(Error::CsvParse {
                line: 1,
                detail: "empty file".to_string(),
            })
        }
    }
    let mut rows = Vec::new();
    for (idx, line) in lines {
        if line.is_empty() {
            continue;
        }
        rows.push(CsvRow::parse(line, idx + 1)?);
    }
    Ok(rows)
}

/// Final scalar metrics of one run, echoed in the summary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummaryRow {
    pub label: String,
    pub sigma_w: f64,
    pub seed: u64,
    pub final_loss: f64,
    /// Signed imbalance for 1x1 records, total Frobenius norm otherwise.
    pub final_d: f64,
    pub final_norm: f64,
    pub status: RunStatus,
}

/// The JSON summary of one experiment: the exact config that produced it,
/// the code version, per-run final metrics, and experiment-specific
/// details. `mem_spread` is populated by the sigma sweep.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub config: ExperimentConfig,
    pub git_describe: String,
    pub per_run: Vec<RunSummaryRow>,
    pub mem_spread: Option<f64>,
    pub wall_time_s: f64,
    pub details: serde_json::Value,
}

/// Write the summary as pretty JSON.
pub fn emit_summary(path: &Path, summary: &ExperimentSummary) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    let mut text = serde_json::to_string_pretty(summary)?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Read a summary back.
pub fn read_summary(path: &Path) -> Result<ExperimentSummary> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// `git describe --always --dirty` of the working tree, or "unknown" when
/// git (or the repository) is unavailable. Recorded in every summary so an
/// artifact can be traced to the code that produced it.
pub fn git_describe() -> String {
    std::process::Command::new("git")
        .args(["describe", "--always", "--dirty"])
        .output()
        .ok()
        .filter(|out| out.status.success())
        .and_then(|out| String::from_utf8(out.stdout).ok())
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .unwrap_or_else(|| "unknown".to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_rows() -> Vec<CsvRow> {
        vec![
            CsvRow {
                step: 0,
                eta: 0.01,
                loss: 25.0,
                d_fro: 35.0,
                t_sgd: 0.0,
                t_l2: 0.0,
                t_adapt: 0.0,
                norm_total: 37f64.sqrt(),
                sigma_w: 1.0,
                seed: 0,
                status: RunStatus::Ok,
            },
            CsvRow {
                step: 17,
                eta: 1e-3,
                loss: 1.25e-9,
                d_fro: 0.1 + 0.2, // deliberately not representable nicely
                t_sgd: 1.7e-4,
                t_l2: 0.0,
                t_adapt: 0.017,
                norm_total: 5.9161,
                sigma_w: 0.5,
                seed: 42,
                status: RunStatus::Diverged,
            },
        ]
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("nested/run.csv");
        let rows = sample_rows();
        emit_csv(&path, &rows).unwrap();
        let back = read_csv(&path).unwrap();
        assert_eq!(rows, back);
        // Bitwise, not approximately: shortest round-trip formatting.
        assert_eq!(rows[1].d_fro.to_bits(), back[1].d_fro.to_bits());
    }

    #[test]
    fn csv_text_is_deterministic_and_headed() {
        let rows = sample_rows();
        let a = csv_text(&rows);
        let b = csv_text(&rows);
        assert_eq!(a, b);
        assert!(a.starts_with(CSV_HEADER));
        assert_eq!(a.lines().count(), 3);
        assert!(a.lines().nth(1).unwrap().starts_with("0,0.01,25,"));
    }

    #[test]
    fn empty_rows_write_header_only() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.csv");
        emit_csv(&path, &[]).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text, format!("{CSV_HEADER}\n"));
        assert!(read_csv(&path).unwrap().is_empty());
    }

    #[test]
    fn io_errors_carry_the_path() {
        let err = read_csv(Path::new("/definitely/not/here.csv")).unwrap_err();
        assert!(
            err.to_string().contains("/definitely/not/here.csv"),
            "{err}"
        );
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(
            &path,
            format!(
                "{CSV_HEADER}\n0,0.01,25,35,0,0,0,6.08,1,0,ok\n1,nope,25,35,0,0,0,6.08,1,0,ok\n"
            ),
        )
        .unwrap();
        match read_csv(&path).unwrap_err() {
            Error::CsvParse { line, detail } => {
                assert_eq!(line, 3);
                assert!(detail.contains("nope"), "{detail}");
            }
            other => panic!("wrong error: {other}"),
        }
    }

    #[test]
    fn wrong_header_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("hdr.csv");
        std::fs::write(&path, "step,eta\n").unwrap();
        assert!(matches!(
            read_csv(&path).unwrap_err(),
            Error::CsvParse { line: 1, .. }
        ));
    }

    #[test]
    fn summary_round_trips_through_json() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("summary.json");
        let summary = ExperimentSummary {
            config: ExperimentConfig::default(),
            git_describe: git_describe(),
            per_run: vec![RunSummaryRow {
                label: "a_eta_0.01".to_string(),
                sigma_w: 1.0,
                seed: 0,
                final_loss: 1e-17,
                final_d: -34.6,
                final_norm: 6.1,
                status: RunStatus::Ok,
            }],
            mem_spread: Some(2.33),
            wall_time_s: 0.5,
            details: serde_json::json!({ "note": "test" }),
        };
        emit_summary(&path, &summary).unwrap();
        let back = read_summary(&path).unwrap();
        assert_eq!(summary.config, back.config);
        assert_eq!(summary.per_run, back.per_run);
        assert_eq!(summary.mem_spread, back.mem_spread);
        assert_eq!(summary.details, back.details);
    }

    #[test]
    fn git_describe_never_panics() {
        let version = git_describe();
        assert!(!version.is_empty());
    }
}
