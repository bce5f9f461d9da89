//! Scenario files, orchestration of the three setups, run records,
//! comparison and plot data.

mod compare;
mod record;
mod run;
mod spec;

use std::fmt;
use std::path::PathBuf;

use thiserror::Error;

use crate::bus::BusError;
use crate::fleet::FleetError;
use crate::grid::{GridError, Location};
use crate::phil::PhilError;
use crate::timeline::TimelineError;

pub use compare::{
    compare, compare_pair, emit_plotdata, power_offset, CompareReport, OffsetEstimate, PlotFile, PlotManifest,
    SignalDiff, MANIFEST_FILE, OFFSET_MIN_POWER_FRACTION,
};
pub use record::{
    Diagnostics, EvInfo, RecordHeader, RunRecord, StationInfo, DEADLINES_FILE, HEADER_FILE, RECORD_FILE,
    RECORD_SCHEMA, TRACE_FILE, VIOLATIONS_FILE,
};
pub use run::{build_sessions, record_columns, run, RunOptions, ARTIFACT_VERSION};
pub use spec::{
    parse_scenario, parse_scenario_str, parse_time_of_day, AmplifierConfig, FleetSpec, Mode, ScenarioSpec,
    ScheduleSpec, Setup, StationEv, SCENARIO_SCHEMA,
};

struct At<'a>(&'a PathBuf, &'a Option<Location>);

impl fmt::Display for At<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0.display())?;
        if let Some(l) = self.1 {
            write!(f, ":{l}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{}: {message}", At(file, location))]
    Config {
        file: PathBuf,
        location: Option<Location>,
        message: String,
    },
    #[error("{}: {source}", file.display())]
    Grid { file: PathBuf, source: GridError },
    #[error("cannot wire scenario: {0}")]
    Wiring(String),
    #[error("{}: {message}", path.display())]
    Record { path: PathBuf, message: String },
    #[error("records are not comparable: {detail}")]
    SchemaMismatch { detail: String },
    #[error("unknown signal {0:?}")]
    UnknownSignal(String),
    #[error("{0}")]
    Usage(String),
}

macro_rules! wiring_from {
    ($($t:ty),*) => {
        $(impl From<$t> for ScenarioError {
            fn from(e: $t) -> Self {
                ScenarioError::Wiring(e.to_string())
            }
        })*
    };
}

wiring_from!(BusError, FleetError, PhilError, TimelineError, GridError);
