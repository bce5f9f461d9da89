use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::record::RunRecord;
use super::ScenarioError;
use crate::fleet::ev_soc_topic;
use crate::grid::{station_power_topic, voltage_mag_topic, Phase};

/// Share of rated power both traces must exceed for the offset estimate.
pub const OFFSET_MIN_POWER_FRACTION: f64 = 0.10;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SignalDiff {
    pub signal: String,
    pub max_abs: f64,
    pub mean_abs: f64,
    /// Rows where both records carry a value.
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OffsetEstimate {
    pub station: String,
    /// `(1 - mean(lower / higher)) * 100`.
    pub percent: f64,
    pub rows: usize,
    pub from_s: f64,
    pub to_s: f64,
    /// Which record drew more on average, `"a"`, `"b"` or `"equal"`.
    pub higher: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompareReport {
    pub run_a: String,
    pub run_b: String,
    pub signals: Vec<SignalDiff>,
    pub offset: Option<OffsetEstimate>,
}

impl CompareReport {
    pub fn signal(&self, name: &str) -> Option<&SignalDiff> {
        self.signals.iter().find(|s| s.signal == name)
    }
}

fn check_schema(a: &RunRecord, b: &RunRecord) -> Result<(), ScenarioError> {
    if a.columns != b.columns {
        let mut divergent: Vec<String> = a
            .columns
            .iter()
            .filter(|c| !b.columns.contains(c))
            .chain(b.columns.iter().filter(|c| !a.columns.contains(c)))
            .cloned()
            .collect();
        if divergent.is_empty() {
            divergent.push("(column order)".into());
        }
        return Err(ScenarioError::SchemaMismatch {
            detail: format!("divergent columns: {}", divergent.join(", ")),
        });
    }
    if a.times_ms != b.times_ms {
        return Err(ScenarioError::SchemaMismatch {
            detail: format!(
                "time grids differ ({} rows to {} s vs {} rows to {} s)",
                a.times_ms.len(),
                a.times_ms.last().map_or(0.0, |t| *t as f64 / 1e3),
                b.times_ms.len(),
                b.times_ms.last().map_or(0.0, |t| *t as f64 / 1e3),
            ),
        });
    }
    Ok(())
}

/// Per-signal differences of two records on the same time grid, and the
/// power offset of the coupled station.
pub fn compare_pair(a: &RunRecord, b: &RunRecord, run_a: &str, run_b: &str) -> Result<CompareReport, ScenarioError> {
    check_schema(a, b)?;
    let signals = a
        .columns
        .iter()
        .enumerate()
        .map(|(c, name)| {
            let (mut max_abs, mut sum, mut n) = (0.0f64, 0.0, 0usize);
            for (ra, rb) in a.rows.iter().zip(&b.rows) {
                if let (Some(x), Some(y)) = (ra[c], rb[c]) {
                    let d = (x - y).abs();
                    max_abs = max_abs.max(d);
                    sum += d;
                    n += 1;
                }
            }
            SignalDiff {
                signal: name.clone(),
                max_abs,
                mean_abs: if n > 0 { sum / n as f64 } else { 0.0 },
                samples: n,
            }
        })
        .collect();
    Ok(CompareReport {
        run_a: run_a.to_string(),
        run_b: run_b.to_string(),
        signals,
        offset: power_offset(a, b),
    })
}

/// Mean power ratio of the coupled station over rows where both records
/// draw at least [`OFFSET_MIN_POWER_FRACTION`] of rated power, neither EV
/// tapers and neither charger is held back by its pilot current.
pub fn power_offset(a: &RunRecord, b: &RunRecord) -> Option<OffsetEstimate> {
    let sa = a.header.coupled_station()?;
    let sb = b.header.stations.iter().find(|s| s.name == sa.name)?;
    let (eva, evb) = (sa.ev.as_ref()?, sb.ev.as_ref()?);
    let phase = Phase::new(sa.phase)?;

    let col = |r: &RunRecord, t: String| r.column(&t);
    let power = station_power_topic(&sa.name).as_str().to_string();
    let soc = ev_soc_topic(&eva.id).as_str().to_string();
    let volt = voltage_mag_topic(&sa.node, phase).as_str().to_string();
    let (pa, pb) = (col(a, power.clone())?, col(b, power)?);
    let (qa, qb) = (col(a, soc.clone())?, col(b, soc)?);
    let (va, vb) = (col(a, volt.clone())?, col(b, volt)?);

    let mut ratios = Vec::new();
    let mut sums = (0.0, 0.0);
    let mut span: Option<(f64, f64)> = None;
    for (i, (ra, rb)) in a.rows.iter().zip(&b.rows).enumerate() {
        let (Some(x), Some(y)) = (ra[pa], rb[pb]) else { continue };
        let (Some(soc_a), Some(soc_b)) = (ra[qa], rb[qb]) else { continue };
        if x < OFFSET_MIN_POWER_FRACTION * eva.p_rated_w || y < OFFSET_MIN_POWER_FRACTION * evb.p_rated_w {
            continue;
        }
        if soc_a >= eva.taper_start_soc || soc_b >= evb.taper_start_soc {
            continue;
        }
        // The charger read the previous row's voltage; both must leave headroom.
        let prev = |r: &RunRecord, c: usize| i.checked_sub(1).and_then(|k| r.rows[k][c]);
        let headroom = |p: f64, v: Option<f64>, limit: f64| v.is_none_or(|v| p < 0.999 * v * limit);
        if !headroom(x, prev(a, va), eva.current_limit_a) || !headroom(y, prev(b, vb), evb.current_limit_a) {
            continue;
        }
        ratios.push(x.min(y) / x.max(y));
        sums.0 += x;
        sums.1 += y;
        let t = a.times_ms[i] as f64 / 1e3;
        span = Some(span.map_or((t, t), |(lo, _)| (lo, t)));
    }
    let (from_s, to_s) = span?;
    let mean = ratios.iter().sum::<f64>() / ratios.len() as f64;
    let higher = if sums.0 > sums.1 {
        "a"
    } else if sums.1 > sums.0 {
        "b"
    } else {
        "equal"
    };
    Some(OffsetEstimate {
        station: sa.name.clone(),
        percent: (1.0 - mean) * 100.0,
        rows: ratios.len(),
        from_s,
        to_s,
        higher: higher.to_string(),
    })
}

/// Compares every record after the first against the first.
pub fn compare(records: &[(String, RunRecord)]) -> Result<Vec<CompareReport>, ScenarioError> {
    if records.len() < 2 {
        return Err(ScenarioError::Usage("compare needs at least two records".into()));
    }
    let (name0, first) = &records[0];
    records[1..]
        .iter()
        .map(|(name, r)| compare_pair(first, r, name0, name))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlotFile {
    pub signal: String,
    pub file: String,
    pub rows: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlotManifest {
    pub scenario: String,
    pub spec_hash: String,
    pub files: Vec<PlotFile>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

/// Writes one `time_s,value` file per signal plus a manifest into `out`.
pub fn emit_plotdata(record: &RunRecord, signals: &[String], out: &Path) -> Result<PlotManifest, ScenarioError> {
    for s in signals {
        if record.column(s).is_none() {
            return Err(ScenarioError::UnknownSignal(s.clone()));
        }
    }
    let io = |path: PathBuf| move |source| ScenarioError::Io { path, source };
    fs::create_dir_all(out).map_err(io(out.to_path_buf()))?;

    let mut files = Vec::new();
    for s in signals {
        let series = record.series(s).expect("checked above");
        let file = format!("{}.csv", s.replace('/', "__"));
        let mut text = String::from("time_s,value\n");
        let mut rows = 0;
        for (t, v) in series {
            if let Some(v) = v {
                text.push_str(&format!("{t},{v}\n"));
                rows += 1;
            }
        }
        let path = out.join(&file);
        fs::write(&path, text).map_err(io(path.clone()))?;
        files.push(PlotFile {
            signal: s.clone(),
            file,
            rows,
        });
    }
    let manifest = PlotManifest {
        scenario: record.header.scenario.clone(),
        spec_hash: record.header.spec_hash.clone(),
        files,
    };
    let path = out.join(MANIFEST_FILE);
    let mut json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    json.push('\n');
    fs::write(&path, json).map_err(io(path.clone()))?;
    Ok(manifest)
}
