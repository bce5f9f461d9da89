//! Radial low-voltage grid: model, per-phase power flow, voltage-band
//! monitoring and the bus participants wrapping them.

mod calibrate;
mod model;
mod monitor;
mod participant;
mod sweep;

use thiserror::Error;

use crate::bus::{BusConfig, TopicPath, ValueKind};

pub use calibrate::{calibrate, check_calibration, Calibration, CalibrationCheck, CalibrationTarget};
pub use model::{
    load_grid, GridModel, GridSpec, Line, LineSpec, Load, LoadSpec, Location, Phase, StationAttachment,
    StationSpec, GRID_SCHEMA,
};
pub use monitor::{monitor_magnitudes, monitor_voltages, Violation, ViolationKind, DEFAULT_BAND};
pub use participant::{BaseLoads, GridOperator, GridParticipant, GridStats, TimedViolation};
pub use sweep::{
    power_balance, solve_power_flow, Injections, NodeVoltages, PowerBalance, MAX_SWEEP_ITERATIONS,
    SWEEP_TOLERANCE_V,
};

fn opt_loc(loc: &Option<Location>) -> String {
    loc.map(|l| format!(" at {l}")).unwrap_or_default()
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GridError {
    #[error("grid spec{}: {message}", opt_loc(location))]
    Parse { location: Option<Location>, message: String },
    #[error("unsupported grid schema {0}, expected {GRID_SCHEMA}")]
    Schema(u32),
    #[error("line {line:?} closes a cycle{}", opt_loc(location))]
    Cycle { line: String, location: Option<Location> },
    #[error("node {0:?} is not connected to the slack bus")]
    Disconnected(String),
    #[error("unknown node {node:?}{}", opt_loc(location))]
    UnknownNode { node: String, location: Option<Location> },
    #[error("line {line:?} has invalid impedance R = {r_ohm}, X = {x_ohm}")]
    Impedance { line: String, r_ohm: f64, x_ohm: f64 },
    #[error("{0}")]
    Invalid(String),
}

fn topic(segments: &[&str]) -> TopicPath {
    TopicPath::from_segments(segments).expect("grid names are validated tokens")
}

pub fn voltage_mag_topic(node: &str, phase: Phase) -> TopicPath {
    topic(&["grid", node, &phase.to_string(), "voltage_mag"])
}

pub fn voltage_ang_topic(node: &str, phase: Phase) -> TopicPath {
    topic(&["grid", node, &phase.to_string(), "voltage_ang"])
}

pub fn station_power_topic(station: &str) -> TopicPath {
    topic(&["cs", station, "power_w"])
}

pub fn load_power_topic(load: &str) -> TopicPath {
    topic(&["load", load, "power_w"])
}

/// Declares every topic the grid participants read or write.
pub fn declare_topics(model: &GridModel, config: &mut BusConfig) {
    for node in model.nodes().iter().skip(1) {
        for ph in Phase::ALL {
            config.push(voltage_mag_topic(node, ph), ValueKind::Real);
            config.push(voltage_ang_topic(node, ph), ValueKind::Real);
        }
    }
    for s in model.stations() {
        config.push(station_power_topic(&s.name), ValueKind::Real);
    }
    for l in model.loads() {
        config.push(load_power_topic(&l.name), ValueKind::Real);
    }
}
