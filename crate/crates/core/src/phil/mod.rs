//! Power-hardware-in-the-loop chain in software: real-time task, ideal
//! transformer interface, amplifier model and the device under test.

mod amplifier;
mod interface;
mod task;

use thiserror::Error;

use crate::bus::{BusConfig, BusError, TopicPath, ValueKind};

pub use amplifier::{amplifier_step, AmplifierSpec, PhilLoopState};
pub use interface::{itm_feedback, DeviceUnderTest, ItmForward};
pub use task::{PhilStats, RtTask, RtTaskConfig};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PhilError {
    #[error("invalid amplifier setup: {0}")]
    Spec(String),
    #[error("unknown charging station {0:?}")]
    UnknownStation(String),
    #[error(transparent)]
    Bus(#[from] BusError),
}

fn topic(name: &str) -> TopicPath {
    TopicPath::from_segments(["phil", name]).expect("static topic")
}

pub fn v_out_topic() -> TopicPath {
    topic("v_out")
}

pub fn i_meas_topic() -> TopicPath {
    topic("i_meas")
}

pub fn trip_topic() -> TopicPath {
    topic("trip")
}

pub fn declare_topics(config: &mut BusConfig) {
    config.push(v_out_topic(), ValueKind::Real);
    config.push(i_meas_topic(), ValueKind::Real);
    config.push(trip_topic(), ValueKind::Bool);
}
