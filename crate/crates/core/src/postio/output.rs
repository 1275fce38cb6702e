//! CSV time series and key/value reports. Every file starts with a
//! comment line naming the configuration hash.

use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use crate::coupling::sis::StepRecord;
use crate::error::{Error, Result};

const HASH_PREFIX: &str = "# config_hash=";

/// Row-oriented numeric CSV writer with a fixed header.
#[derive(Debug)]
pub struct CsvLog {
    writer: csv::Writer<File>,
    columns: usize,
    path: PathBuf,
}

impl CsvLog {
    pub fn create(path: &Path, header: &[&str], config_hash: &str) -> Result<Self> {
        let mut file = File::create(path).map_err(|e| Error::io(path, e))?;
        writeln!(file, "{HASH_PREFIX}{config_hash}").map_err(|e| Error::io(path, e))?;
        let mut writer = csv::Writer::from_writer(file);
        writer.write_record(header)?;
        writer.flush().map_err(|e| Error::io(path, e))?;
        Ok(Self {
            writer,
            columns: header.len(),
            path: path.to_path_buf(),
        })
    }

    /// Per-step log of the coupled loop.
    pub fn steps(path: &Path, config_hash: &str) -> Result<Self> {
        Self::create(path, &StepRecord::HEADER, config_hash)
    }

    pub fn push(&mut self, row: &[f64]) -> Result<()> {
        if row.len() != self.columns {
            return Err(Error::DimensionMismatch {
                expected: self.columns,
                got: row.len(),
            });
        }
        self.writer.write_record(row.iter().map(|v| format!("{v:?}")))?;
        Ok(())
    }

    pub fn flush(&mut self) -> Result<()> {
        self.writer.flush().map_err(|e| Error::io(&self.path, e))
    }
}

impl Drop for CsvLog {
    fn drop(&mut self) {
        let _ = self.writer.flush();
    }
}

/// Header, numeric rows and the configuration hash of a CSV file.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvTable {
    pub config_hash: Option<String>,
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl CsvTable {
    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let j = self.header.iter().position(|h| h == name)?;
        Some(self.rows.iter().map(|r| r[j]).collect())
    }

    /// Interprets a per-step log as step records.
    pub fn step_records(&self) -> Result<Vec<StepRecord>> {
        let cols = StepRecord::HEADER
            .iter()
            .map(|h| {
                self.column(h)
                    .ok_or_else(|| Error::MissingData(format!("column `{h}` not in step log")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok((0..self.rows.len())
            .map(|i| StepRecord {
                t: cols[0][i] * 1e-3,
                p_lv: cols[1][i],
                p_rv: cols[2][i],
                v_lv: cols[3][i],
                v_rv: cols[4][i],
                newton_iterations: cols[5][i] as usize,
                volume_residual: cols[6][i],
                max_momentum_error: cols[7][i],
                ta_max: cols[8][i] * 1e3,
                p_la: cols[9][i],
                p_ar_sys: cols[10][i],
                p_ra: cols[11][i],
                p_ar_pul: cols[12][i],
            })
            .collect())
    }
}

fn first_line(path: &Path) -> Result<String> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut line = String::new();
    BufReader::new(file).read_line(&mut line).map_err(|e| Error::io(path, e))?;
    Ok(line)
}

pub fn read_csv(path: &Path) -> Result<CsvTable> {
    let config_hash = first_line(path)?
        .trim()
        .strip_prefix(HASH_PREFIX)
        .map(str::to_string);
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(path)?;
    let header = reader.headers()?.iter().map(str::to_string).collect();
    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec?;
        let row = rec
            .iter()
            .map(|s| {
                s.trim().parse::<f64>().map_err(|_| Error::Format {
                    path: path.to_path_buf(),
                    message: format!("non-numeric cell `{s}`"),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    Ok(CsvTable {
        config_hash,
        header,
        rows,
    })
}

/// Writes `key = value` lines.
pub fn write_report(path: &Path, config_hash: &str, entries: &[(String, f64)]) -> Result<()> {
    let mut text = format!("config_hash = {config_hash}\n");
    for (k, v) in entries {
        text.push_str(&format!("{k} = {v}\n"));
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_report(path: &Path) -> Result<Vec<(String, String)>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let (k, v) = l.split_once('=').ok_or_else(|| Error::Format {
                path: path.to_path_buf(),
                message: format!("expected `key = value`, found `{l}`"),
            })?;
            Ok((k.trim().to_string(), v.trim().to_string()))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(t: f64) -> StepRecord {
        StepRecord {
            t,
            p_lv: 8.5,
            p_rv: 3.25,
            v_lv: 137.0,
            v_rv: 136.5,
            newton_iterations: 3,
            volume_residual: 1e-9,
            max_momentum_error: 0.0,
            ta_max: 12.5e3,
            p_la: 8.0,
            p_ar_sys: 80.0,
            p_ra: 4.0,
            p_ar_pul: 15.0,
        }
    }

    #[test]
    fn empty_run_is_header_only() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("steps.csv");
        drop(CsvLog::steps(&path, "deadbeef").unwrap());
        let t = read_csv(&path).unwrap();
        assert_eq!(t.config_hash.as_deref(), Some("deadbeef"));
        assert_eq!(t.header, StepRecord::HEADER);
        assert!(t.rows.is_empty());
    }

    #[test]
    fn one_step_is_one_row() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("steps.csv");
        let mut log = CsvLog::steps(&path, "h").unwrap();
        log.push(&rec(0.0005).row()).unwrap();
        assert!(log.push(&[1.0]).is_err());
        drop(log);
        let t = read_csv(&path).unwrap();
        assert_eq!(t.rows.len(), 1);
        assert_eq!(t.rows[0].len(), StepRecord::HEADER.len());
        let back = t.step_records().unwrap();
        assert_eq!(back[0].v_lv, 137.0);
        assert_eq!(back[0].newton_iterations, 3);
    }

    #[test]
    fn report_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("report.txt");
        write_report(&path, "h", &[("ef_lv_percent".into(), 61.5)]).unwrap();
        let r = read_report(&path).unwrap();
        assert_eq!(r[0], ("config_hash".into(), "h".into()));
        assert_eq!(r[1], ("ef_lv_percent".into(), "61.5".into()));
    }
}
