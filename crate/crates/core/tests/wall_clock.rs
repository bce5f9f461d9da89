//! Wall-clock pacing. These tests measure elapsed time, so they hold a lock
//! to keep from competing with each other for the CPU.

use std::sync::Mutex;
use std::thread;
use std::time::{Duration, Instant};

use gridlink::bus::{create_bus, Bus, BusConfig, Millis};
use gridlink::timeline::{
    build_schedule, run_wall_clock, Participant, ScheduleEntry, StepError, WallClockOptions,
};

static TIMING: Mutex<()> = Mutex::new(());

struct Busy {
    name: String,
    delay: Duration,
}

impl Participant for Busy {
    fn name(&self) -> &str {
        &self.name
    }
    fn step(&mut self, _now: Millis, _bus: &Bus) -> Result<(), StepError> {
        thread::sleep(self.delay);
        Ok(())
    }
}

fn busy(name: &str, delay_ms: u64) -> Box<dyn Participant> {
    Box::new(Busy {
        name: name.into(),
        delay: Duration::from_millis(delay_ms),
    })
}

#[test]
fn light_load_meets_deadlines() {
    let _guard = TIMING.lock().unwrap_or_else(|e| e.into_inner());
    let bus = create_bus(BusConfig::new()).unwrap();
    let mut ps = vec![busy("rt", 1)];
    let s = build_schedule(vec![ScheduleEntry::new("rt", 10).realtime()], 990).unwrap();
    let start = Instant::now();
    let (summary, reports) =
        run_wall_clock(&s, &bus, &mut ps, &mut |_, _| Ok(()), &WallClockOptions::default()).unwrap();
    let elapsed = start.elapsed().as_secs_f64();
    assert!(summary.is_complete());
    assert_eq!(reports[0].ticks_total, 100);
    assert!(reports[0].overruns <= 1, "{reports:?}");
    assert!((elapsed - 0.99).abs() < 0.05 * 0.99 + 0.01, "elapsed {elapsed}");
}

#[test]
fn every_step_over_budget_overruns() {
    let _guard = TIMING.lock().unwrap_or_else(|e| e.into_inner());
    let bus = create_bus(BusConfig::new()).unwrap();
    let mut ps = vec![busy("rt", 15)];
    let s = build_schedule(vec![ScheduleEntry::new("rt", 10).realtime()], 990).unwrap();
    let opts = WallClockOptions { abort_slip_steps: None };
    let (summary, reports) = run_wall_clock(&s, &bus, &mut ps, &mut |_, _| Ok(()), &opts).unwrap();
    assert!(summary.is_complete());
    let r = &reports[0];
    assert!(r.overruns >= 99, "{r:?}");
    assert!(r.overruns <= r.ticks_total);
    assert!(r.worst_lateness_ms >= r.mean_lateness_ms && r.mean_lateness_ms > 0.0);
}

#[test]
fn slip_abort_threshold() {
    let _guard = TIMING.lock().unwrap_or_else(|e| e.into_inner());
    let bus = create_bus(BusConfig::new()).unwrap();
    let mut ps = vec![busy("rt", 15)];
    let s = build_schedule(vec![ScheduleEntry::new("rt", 10).realtime()], 2000).unwrap();
    let (summary, reports) =
        run_wall_clock(&s, &bus, &mut ps, &mut |_, _| Ok(()), &WallClockOptions::default()).unwrap();
    // Slip grows 5 ms per release, so the default 100 ms threshold trips early.
    let f = summary.failure.expect("run aborted");
    assert_eq!(f.participant, "rt");
    assert!(summary.steps["rt"] < 40);
    assert!(reports[0].overruns >= summary.steps["rt"] - 1);
}

#[test]
fn soft_participants_keep_pace_with_rt_task() {
    let _guard = TIMING.lock().unwrap_or_else(|e| e.into_inner());
    let bus = create_bus(BusConfig::new()).unwrap();
    let mut ps = vec![busy("rt", 1), busy("slow", 2)];
    let s = build_schedule(
        vec![ScheduleEntry::new("rt", 10).realtime(), ScheduleEntry::new("slow", 100)],
        500,
    )
    .unwrap();
    let mut seen = Vec::new();
    let (summary, _) = run_wall_clock(
        &s,
        &bus,
        &mut ps,
        &mut |t, _| {
            seen.push(t);
            Ok(())
        },
        &WallClockOptions::default(),
    )
    .unwrap();
    assert!(summary.is_complete());
    assert_eq!(summary.steps["rt"], 51);
    assert_eq!(summary.steps["slow"], 6);
    assert_eq!(seen.len(), 51);
}
