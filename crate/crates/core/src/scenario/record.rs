use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Mode, ScenarioError, Setup};
use crate::bus::Millis;
use crate::grid::TimedViolation;
use crate::timeline::DeadlineReport;

/// Record layout version.
pub const RECORD_SCHEMA: u32 = 1;

pub const RECORD_FILE: &str = "record.csv";
pub const HEADER_FILE: &str = "header.json";
pub const VIOLATIONS_FILE: &str = "violations.csv";
pub const DEADLINES_FILE: &str = "deadlines.csv";
pub const TRACE_FILE: &str = "trace.jsonl";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationInfo {
    pub name: String,
    pub node: String,
    pub phase: u8,
    /// Wired through the hardware loop.
    pub coupled: bool,
    pub ev: Option<EvInfo>,
    pub delivered_wh: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvInfo {
    pub id: String,
    pub variant: String,
    pub power_scale: f64,
    pub p_rated_w: f64,
    pub capacity_wh: f64,
    pub taper_start_soc: f64,
    pub target_soc: f64,
    pub current_limit_a: f64,
    pub arrival_of_day_s: f64,
    pub arrival_soc: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub grid_steps: u64,
    pub non_converged_steps: u64,
    /// Worst relative slack-vs-(loads + losses) mismatch.
    pub max_balance_error: f64,
    pub violation_count: usize,
    pub current_limited_steps: u64,
    pub trip_time_s: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordHeader {
    pub record_schema: u32,
    pub artifact_version: String,
    pub scenario: String,
    pub spec_hash: String,
    pub seed: u64,
    pub mode: Mode,
    pub setup: Setup,
    /// Scenario time 0 as seconds of the day.
    pub start_of_day_s: f64,
    pub step_s: f64,
    pub horizon_s: f64,
    pub nominal_v: f64,
    pub stations: Vec<StationInfo>,
    pub diagnostics: Diagnostics,
    pub conformant: bool,
    pub failure: Option<String>,
}

impl RecordHeader {
    pub fn coupled_station(&self) -> Option<&StationInfo> {
        self.stations.iter().find(|s| s.coupled)
    }
}

/// Result of one scenario run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub header: RecordHeader,
    /// Column names after `time_s`; bus topics.
    pub columns: Vec<String>,
    pub times_ms: Vec<Millis>,
    pub rows: Vec<Vec<Option<f64>>>,
    pub violations: Vec<TimedViolation>,
    pub deadlines: Vec<DeadlineReport>,
}

fn fmt_cell(v: Option<f64>) -> String {
    v.map(|x| format!("{x}")).unwrap_or_default()
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ScenarioError + '_ {
    move |source| ScenarioError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn bad_record(path: &Path, msg: impl Into<String>) -> ScenarioError {
    ScenarioError::Record {
        path: path.to_path_buf(),
        message: msg.into(),
    }
}

impl RunRecord {
    pub fn column(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    /// Values of one column, with times in seconds.
    pub fn series(&self, name: &str) -> Option<Vec<(f64, Option<f64>)>> {
        let c = self.column(name)?;
        Some(
            self.times_ms
                .iter()
                .zip(&self.rows)
                .map(|(&t, row)| (t as f64 / 1e3, row[c]))
                .collect(),
        )
    }

    pub fn csv_header(&self) -> String {
        std::iter::once("time_s")
            .chain(self.columns.iter().map(String::as_str))
            .collect::<Vec<_>>()
            .join(",")
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "{}", self.csv_header())?;
        for (t, row) in self.times_ms.iter().zip(&self.rows) {
            write!(out, "{}", *t as f64 / 1e3)?;
            for v in row {
                write!(out, ",{}", fmt_cell(*v))?;
            }
            out.write_all(b"\n")?;
        }
        out.flush()
    }

    /// Writes the record files into `dir`, creating it if needed.
    pub fn write(&self, dir: &Path) -> Result<(), ScenarioError> {
        fs::create_dir_all(dir).map_err(io_err(dir))?;

        let path = dir.join(RECORD_FILE);
        let f = fs::File::create(&path).map_err(io_err(&path))?;
        self.write_csv(BufWriter::new(f)).map_err(io_err(&path))?;

        let path = dir.join(HEADER_FILE);
        let mut json = serde_json::to_string_pretty(&self.header).expect("header serializes");
        json.push('\n');
        fs::write(&path, json).map_err(io_err(&path))?;

        let path = dir.join(VIOLATIONS_FILE);
        let mut s = String::from("time_s,node,phase,magnitude_v,kind\n");
        for v in &self.violations {
            let kind = match v.violation.kind {
                crate::grid::ViolationKind::Under => "under",
                crate::grid::ViolationKind::Over => "over",
            };
            s.push_str(&format!(
                "{},{},{},{},{}\n",
                v.time_ms as f64 / 1e3,
                v.violation.node,
                v.violation.phase.number(),
                v.violation.magnitude_v,
                kind
            ));
        }
        fs::write(&path, s).map_err(io_err(&path))?;

        let path = dir.join(DEADLINES_FILE);
        let mut s = format!("{}\n", DeadlineReport::CSV_HEADER);
        for d in &self.deadlines {
            s.push_str(&d.csv_row());
            s.push('\n');
        }
        fs::write(&path, s).map_err(io_err(&path))?;
        Ok(())
    }

    /// Reads the header and time series back from a record directory.
    /// Violations and deadline reports are not reloaded.
    pub fn load(dir: &Path) -> Result<RunRecord, ScenarioError> {
        let path = dir.join(HEADER_FILE);
        let text = fs::read_to_string(&path).map_err(io_err(&path))?;
        let header: RecordHeader =
            serde_json::from_str(&text).map_err(|e| bad_record(&path, e.to_string()))?;
        if header.record_schema != RECORD_SCHEMA {
            return Err(bad_record(
                &path,
                format!("record schema {} not supported", header.record_schema),
            ));
        }

        let path = dir.join(RECORD_FILE);
        let text = fs::read_to_string(&path).map_err(io_err(&path))?;
        let mut lines = text.lines();
        let head = lines.next().ok_or_else(|| bad_record(&path, "missing header row"))?;
        let mut names = head.split(',');
        if names.next() != Some("time_s") {
            return Err(bad_record(&path, "first column must be time_s"));
        }
        let columns: Vec<String> = names.map(str::to_string).collect();
        let mut times_ms = Vec::new();
        let mut rows = Vec::new();
        for (i, line) in lines.enumerate() {
            let mut cells = line.split(',');
            let t: f64 = cells
                .next()
                .and_then(|c| c.parse().ok())
                .ok_or_else(|| bad_record(&path, format!("row {}: bad time", i + 2)))?;
            let row = cells
                .map(|c| {
                    if c.is_empty() {
                        Ok(None)
                    } else {
                        c.parse().map(Some)
                    }
                })
                .collect::<Result<Vec<_>, _>>()
                .map_err(|_| bad_record(&path, format!("row {}: bad number", i + 2)))?;
            if row.len() != columns.len() {
                return Err(bad_record(&path, format!("row {}: expected {} cells", i + 2, columns.len() + 1)));
            }
            times_ms.push((t * 1e3).round() as Millis);
            rows.push(row);
        }
        Ok(RunRecord {
            header,
            columns,
            times_ms,
            rows,
            violations: Vec::new(),
            deadlines: Vec::new(),
        })
    }
}
