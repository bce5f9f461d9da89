//! Multi-rate scheduling of bus participants.
//!
//! All step sizes live on an integer millisecond grid. The macro tick is the
//! gcd of every step and offset; at each macro tick the due participants run
//! in ascending step size, ties broken by name. [`run_accelerated`] advances
//! ticks back to back on one thread. [`run_wall_clock`] releases real-time
//! participants on their own threads against the wall clock and accounts for
//! overruns instead of skipping steps.

mod schedule;
mod wall_clock;

use std::collections::BTreeMap;

use thiserror::Error;

use crate::bus::{Bus, BusError, Millis};

pub use schedule::{build_schedule, ScheduleEntry, StepSchedule};
pub use wall_clock::{run_wall_clock, DeadlineReport, WallClockOptions};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TimelineError {
    #[error("schedule has no entries")]
    EmptySchedule,
    #[error("invalid participant name {0:?}")]
    InvalidName(String),
    #[error("participant {0:?} has a zero step size")]
    ZeroStep(String),
    #[error("participant {0:?} scheduled twice")]
    DuplicateEntry(String),
    #[error("hyperperiod overflows u64 milliseconds")]
    HyperperiodOverflow,
    #[error("t = {t} ms is not aligned to the {macro_tick} ms macro tick")]
    Misaligned { t: Millis, macro_tick: Millis },
    #[error("scheduled participant {0:?} has no step callback")]
    MissingParticipant(String),
    #[error("participant {0:?} is not in the schedule")]
    UnscheduledParticipant(String),
}

/// Failure raised by a participant step.
#[derive(Debug, Error, Clone, PartialEq)]
#[error("{0}")]
pub struct StepError(pub String);

impl StepError {
    pub fn new(msg: impl Into<String>) -> Self {
        StepError(msg.into())
    }
}

impl From<BusError> for StepError {
    fn from(e: BusError) -> Self {
        StepError(e.to_string())
    }
}

/// A simulation task driven by the timeline. One step is poll → compute → publish.
pub trait Participant: Send {
    fn name(&self) -> &str;
    fn step(&mut self, now: Millis, bus: &Bus) -> Result<(), StepError>;
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunFailure {
    pub participant: String,
    pub time: Millis,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RunSummary {
    /// Macro ticks executed.
    pub ticks: u64,
    /// Steps executed per participant.
    pub steps: BTreeMap<String, u64>,
    pub last_tick: Option<Millis>,
    pub failure: Option<RunFailure>,
}

impl RunSummary {
    pub fn is_complete(&self) -> bool {
        self.failure.is_none()
    }
}

/// Called after every macro tick, once all due participants have stepped.
pub type TickObserver<'a> = dyn FnMut(Millis, &Bus) -> Result<(), StepError> + 'a;

/// Maps each schedule entry to the index of its participant.
fn bind(
    schedule: &StepSchedule,
    participants: &[Box<dyn Participant>],
) -> Result<Vec<usize>, TimelineError> {
    for p in participants {
        if schedule.entry(p.name()).is_none() {
            return Err(TimelineError::UnscheduledParticipant(p.name().to_string()));
        }
    }
    schedule
        .entries()
        .iter()
        .map(|e| {
            participants
                .iter()
                .position(|p| p.name() == e.name)
                .ok_or_else(|| TimelineError::MissingParticipant(e.name.clone()))
        })
        .collect()
}

/// Runs the schedule to its horizon as fast as possible on the calling thread.
/// Bit-deterministic for deterministic participants.
pub fn run_accelerated(
    schedule: &StepSchedule,
    bus: &Bus,
    participants: &mut [Box<dyn Participant>],
    observer: &mut TickObserver<'_>,
) -> Result<RunSummary, TimelineError> {
    let binding = bind(schedule, participants)?;
    let entries = schedule.entries();
    let mut summary = RunSummary::default();
    let mut counts = vec![0u64; entries.len()];

    'ticks: for t in schedule.ticks() {
        for (i, entry) in entries.iter().enumerate() {
            if !entry.is_due(t) {
                continue;
            }
            let p = &mut participants[binding[i]];
            if let Err(e) = p.step(t, bus) {
                summary.failure = Some(RunFailure {
                    participant: entry.name.clone(),
                    time: t,
                    message: e.0,
                });
                break 'ticks;
            }
            counts[i] += 1;
        }
        if let Err(e) = observer(t, bus) {
            summary.failure = Some(RunFailure {
                participant: "observer".to_string(),
                time: t,
                message: e.0,
            });
            break;
        }
        summary.ticks += 1;
        summary.last_tick = Some(t);
    }

    summary.steps = entries
        .iter()
        .zip(counts)
        .map(|(e, c)| (e.name.clone(), c))
        .collect();
    Ok(summary)
}
