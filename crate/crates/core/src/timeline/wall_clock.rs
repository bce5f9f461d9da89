use std::collections::BTreeMap;
use std::sync::atomic::{AtomicBool, Ordering};
use std::thread;
use std::time::{Duration, Instant};

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

use super::{bind, Participant, RunFailure, RunSummary, StepSchedule, TickObserver, TimelineError};
use crate::bus::{Bus, Millis};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeadlineReport {
    pub participant: String,
    pub ticks_total: u64,
    pub overruns: u64,
    pub worst_lateness_ms: f64,
    /// Mean over overrun ticks only.
    pub mean_lateness_ms: f64,
}

impl DeadlineReport {
    pub const CSV_HEADER: &'static str = "participant,ticks,overruns,worst_ms,mean_ms";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{:.3},{:.3}",
            self.participant,
            self.ticks_total,
            self.overruns,
            self.worst_lateness_ms,
            self.mean_lateness_ms
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WallClockOptions {
    /// Abort once a real-time release starts this many of its own steps late.
    /// `None` never aborts.
    pub abort_slip_steps: Option<f64>,
}

impl Default for WallClockOptions {
    fn default() -> Self {
        WallClockOptions {
            abort_slip_steps: Some(10.0),
        }
    }
}

fn sleep_until(deadline: Instant) {
    loop {
        let now = Instant::now();
        if now >= deadline {
            return;
        }
        let remaining = deadline - now;
        if remaining > Duration::from_micros(1500) {
            thread::sleep(remaining - Duration::from_millis(1));
        } else {
            thread::yield_now();
        }
    }
}

struct Shared<'a> {
    bus: &'a Bus,
    start: Instant,
    abort: AtomicBool,
    failure: Mutex<Option<RunFailure>>,
}

impl Shared<'_> {
    fn fail(&self, participant: &str, time: Millis, message: String) {
        let mut slot = self.failure.lock();
        if slot.is_none() {
            *slot = Some(RunFailure {
                participant: participant.to_string(),
                time,
                message,
            });
        }
        self.abort.store(true, Ordering::SeqCst);
    }
}

fn run_realtime(
    shared: &Shared<'_>,
    p: &mut dyn Participant,
    step_ms: Millis,
    offset_ms: Millis,
    ticks_total: u64,
    abort_slip: Option<Duration>,
) -> (u64, DeadlineReport) {
    let step = Duration::from_millis(step_ms);
    let mut report = DeadlineReport {
        participant: p.name().to_string(),
        ticks_total,
        overruns: 0,
        worst_lateness_ms: 0.0,
        mean_lateness_ms: 0.0,
    };
    let mut executed = 0;
    let mut lateness_sum = 0.0;

    for k in 0..ticks_total {
        if shared.abort.load(Ordering::SeqCst) {
            break;
        }
        let sim_t = offset_ms + k * step_ms;
        let release = shared.start + Duration::from_millis(sim_t);
        sleep_until(release);
        let began = Instant::now();
        if let Some(limit) = abort_slip {
            let slip = began - release;
            if slip > limit {
                shared.fail(
                    p.name(),
                    sim_t,
                    format!("release slipped {:.1} ms, beyond abort threshold", slip.as_secs_f64() * 1e3),
                );
                break;
            }
        }
        if let Err(e) = p.step(sim_t, shared.bus) {
            shared.fail(p.name(), sim_t, e.0);
            break;
        }
        executed += 1;
        let done = Instant::now();
        let next_release = release + step;
        if done > next_release {
            let late = (done - next_release).as_secs_f64() * 1e3;
            report.overruns += 1;
            lateness_sum += late;
            report.worst_lateness_ms = report.worst_lateness_ms.max(late);
        }
    }
    if report.overruns > 0 {
        report.mean_lateness_ms = lateness_sum / report.overruns as f64;
    }
    (executed, report)
}

/// Runs the schedule paced against the wall clock.
///
/// Each `rt` entry runs on its own thread and is released every step of wall
/// time; a step finishing after its next release counts as an overrun and the
/// following release simply starts late. Other participants and the observer
/// share the calling thread, paced best-effort on the macro tick.
pub fn run_wall_clock(
    schedule: &StepSchedule,
    bus: &Bus,
    participants: &mut [Box<dyn Participant>],
    observer: &mut TickObserver<'_>,
    options: &WallClockOptions,
) -> Result<(RunSummary, Vec<DeadlineReport>), TimelineError> {
    let binding = bind(schedule, participants)?;
    let entries = schedule.entries();
    let horizon = schedule.horizon();

    // Split the participant slice into per-entry mutable references.
    let mut slots: Vec<Option<&mut Box<dyn Participant>>> = participants.iter_mut().map(Some).collect();
    let mut rt_jobs = Vec::new();
    let mut soft = Vec::new();
    for (i, entry) in entries.iter().enumerate() {
        let p = slots[binding[i]].take().expect("participant bound once");
        if entry.rt {
            rt_jobs.push((entry, p));
        } else {
            soft.push((entry, p));
        }
    }

    let shared = Shared {
        bus,
        start: Instant::now(),
        abort: AtomicBool::new(false),
        failure: Mutex::new(None),
    };
    let mut summary = RunSummary::default();
    let mut steps: BTreeMap<String, u64> = BTreeMap::new();

    let reports = thread::scope(|scope| {
        let shared = &shared;
        let handles: Vec<_> = rt_jobs
            .into_iter()
            .map(|(entry, p)| {
                let ticks = if horizon == 0 { 0 } else { entry.ticks_within(horizon) };
                let abort_slip = options
                    .abort_slip_steps
                    .map(|k| Duration::from_secs_f64(k * entry.step_ms as f64 / 1e3));
                let (step_ms, offset_ms) = (entry.step_ms, entry.offset_ms);
                scope.spawn(move || run_realtime(shared, p.as_mut(), step_ms, offset_ms, ticks, abort_slip))
            })
            .collect();

        let mut soft_counts = vec![0u64; soft.len()];
        'ticks: for t in schedule.ticks() {
            if shared.abort.load(Ordering::SeqCst) {
                break;
            }
            sleep_until(shared.start + Duration::from_millis(t));
            for (k, (entry, p)) in soft.iter_mut().enumerate() {
                if !entry.is_due(t) {
                    continue;
                }
                if let Err(e) = p.step(t, bus) {
                    shared.fail(&entry.name, t, e.0);
                    break 'ticks;
                }
                soft_counts[k] += 1;
            }
            if let Err(e) = observer(t, bus) {
                shared.fail("observer", t, e.0);
                break;
            }
            summary.ticks += 1;
            summary.last_tick = Some(t);
        }
        for ((entry, _), c) in soft.iter().zip(soft_counts) {
            steps.insert(entry.name.clone(), c);
        }

        handles
            .into_iter()
            .map(|h| {
                let (executed, report) = h.join().expect("real-time participant thread panicked");
                steps.insert(report.participant.clone(), executed);
                report
            })
            .collect::<Vec<_>>()
    });

    summary.steps = steps;
    summary.failure = shared.failure.into_inner();
    Ok((summary, reports))
}
