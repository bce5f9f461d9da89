use std::fs;
use std::io::BufWriter;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use log::{info, warn};
use parking_lot::Mutex;

use super::record::{Diagnostics, EvInfo, RecordHeader, RunRecord, StationInfo, RECORD_SCHEMA};
use super::{Mode, ScenarioError, ScenarioSpec};
use crate::bus::{create_bus, Bus, BusConfig, Millis, TopicPath, Value};
use crate::fleet::{
    self, arrival_socs, ev_id_for, ev_soc_topic, schedule_arrivals, EvSession, EvseOperator, EvseParticipant,
    EvseState, EvseWiring, PassThrough, HARDWARE_LIMIT_A,
};
use crate::grid::{
    self, station_power_topic, voltage_mag_topic, BaseLoads, GridOperator, GridParticipant, GridStats, Phase,
    TimedViolation,
};
use crate::phil::{self, trip_topic, v_out_topic, PhilStats, RtTask, RtTaskConfig};
use crate::timeline::{
    build_schedule, run_accelerated, run_wall_clock, Participant, ScheduleEntry, StepError, WallClockOptions,
};

pub const ARTIFACT_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Overrides the scenario's execution mode.
    pub mode: Option<Mode>,
    /// Writes every accepted publish here as JSON lines.
    pub trace: Option<PathBuf>,
    pub wall_clock: WallClockOptions,
}

/// The EV that visits each station with an entry in the fleet, in fleet order.
pub fn build_sessions(spec: &ScenarioSpec) -> Result<Vec<(String, EvSession)>, ScenarioError> {
    let n = spec.fleet.stations.len();
    let arrivals = schedule_arrivals(spec.seed, n, spec.fleet.window_ms)?;
    let (lo, hi) = spec.fleet.arrival_soc;
    let socs = arrival_socs(spec.seed, n, lo, hi);
    Ok(spec
        .fleet
        .stations
        .iter()
        .zip(arrivals.into_iter().zip(socs))
        .map(|(st, (arrival, soc))| {
            let ev = EvSession::new(ev_id_for(&st.station), st.params.clone(), soc, arrival, st.variant)
                .with_power_scale(st.power_scale);
            (st.station.clone(), ev)
        })
        .collect())
}

/// The coupled station's loop task keeps this name too, so within-tick order
/// matches the pure-software setup.
fn participant_name(station: &str) -> String {
    format!("evse_{}", station.to_ascii_lowercase())
}

enum StationProbe {
    Evse(Arc<Mutex<EvseState>>),
    Loop(Arc<Mutex<PhilStats>>),
}

/// Column topics of a run, in record order.
pub fn record_columns(spec: &ScenarioSpec) -> Vec<TopicPath> {
    let g = &spec.grid;
    let mut cols = Vec::new();
    for node in g.nodes().iter().skip(1) {
        for ph in Phase::ALL {
            cols.push(voltage_mag_topic(node, ph));
        }
    }
    for s in g.stations() {
        cols.push(station_power_topic(&s.name));
    }
    for st in &spec.fleet.stations {
        cols.push(ev_soc_topic(&ev_id_for(&st.station)));
    }
    cols.push(v_out_topic());
    cols.push(trip_topic());
    cols
}

/// Runs a scenario and returns its record. A participant failure ends the
/// run early and yields a partial record flagged non-conformant.
pub fn run(spec: &ScenarioSpec, opts: &RunOptions) -> Result<RunRecord, ScenarioError> {
    let g = &spec.grid;
    let sched = &spec.schedule;
    let hil = spec.setup.is_hil();
    let coupled = spec.fleet.coupled_station.as_str();
    let sessions = build_sessions(spec)?;

    let mut cfg = BusConfig::new();
    grid::declare_topics(g, &mut cfg);
    let ev_ids: Vec<String> = sessions.iter().map(|(_, e)| e.id.clone()).collect();
    fleet::declare_topics(
        g.stations().iter().map(|s| s.name.as_str()),
        ev_ids.iter().map(String::as_str),
        &mut cfg,
    );
    phil::declare_topics(&mut cfg);
    let bus = create_bus(cfg)?;
    if let Some(path) = &opts.trace {
        let f = fs::File::create(path).map_err(|source| ScenarioError::Io {
            path: path.clone(),
            source,
        })?;
        bus.set_trace(Box::new(BufWriter::new(f)));
    }

    let mut participants: Vec<Box<dyn Participant>> = Vec::new();
    let mut entries = Vec::new();
    let mut probes: Vec<(String, StationProbe)> = Vec::new();

    participants.push(Box::new(BaseLoads::register(g, &bus, "base_loads", sched.loads_ms)?));
    entries.push(ScheduleEntry::new("base_loads", sched.loads_ms));

    for s in g.stations() {
        let session = sessions.iter().find(|(st, _)| *st == s.name).map(|(_, e)| e.clone());
        let name = participant_name(&s.name);
        if hil && s.name == coupled {
            let amp = spec.amplifier.as_ref().expect("validated HIL setup has an amplifier");
            let task = RtTask::register(
                g,
                &bus,
                RtTaskConfig {
                    participant: name.clone(),
                    station: s.name.clone(),
                    step_ms: sched.rt_ms,
                    setpoint_ms: sched.evse_ms,
                    staleness_ms: spec.staleness_ms,
                    start_of_day_ms: spec.start_of_day_ms,
                    amplifier: amp.spec.clone(),
                    compute_delay: Duration::from_secs_f64(amp.compute_delay_ms / 1e3),
                    trip_resets_ms: amp.trip_resets_s.iter().map(|t| (t * 1e3).round() as Millis).collect(),
                },
                session,
            )?;
            probes.push((s.name.clone(), StationProbe::Loop(task.stats())));
            participants.push(Box::new(task));
            entries.push(ScheduleEntry::new(name, sched.rt_ms).realtime());
        } else {
            let evse = EvseParticipant::register(
                g,
                &bus,
                EvseWiring {
                    participant: name.clone(),
                    station: s.name.clone(),
                    step_ms: sched.evse_ms,
                    staleness_ms: spec.staleness_ms,
                    start_of_day_ms: spec.start_of_day_ms,
                    nominal_v: g.nominal_v(),
                },
                session,
            )?;
            probes.push((s.name.clone(), StationProbe::Evse(evse.state())));
            participants.push(Box::new(evse));
            entries.push(ScheduleEntry::new(name, sched.evse_ms));
        }
    }

    let grid_p = GridParticipant::register(g.clone(), &bus, "grid", sched.grid_ms, spec.staleness_ms)?;
    let grid_stats = grid_p.stats();
    participants.push(Box::new(grid_p));
    entries.push(ScheduleEntry::new("grid", sched.grid_ms));

    let monitor = GridOperator::register(g, &bus, "grid_operator", sched.monitor_ms, spec.staleness_ms, spec.band)?;
    let violations = monitor.violations();
    participants.push(Box::new(monitor));
    entries.push(ScheduleEntry::new("grid_operator", sched.monitor_ms));

    let station_names: Vec<String> = g.stations().iter().map(|s| s.name.clone()).collect();
    participants.push(Box::new(EvseOperator::register(
        &bus,
        "evse_operator",
        &station_names,
        sched.operator_ms,
        spec.staleness_ms,
        Box::new(PassThrough),
    )?));
    entries.push(ScheduleEntry::new("evse_operator", sched.operator_ms));

    let schedule = build_schedule(entries, spec.horizon_ms())?;
    for w in schedule.warnings() {
        warn!("{w}");
    }

    let columns = record_columns(spec);
    let record_ms = sched.grid_ms;
    let mut times_ms = Vec::new();
    let mut rows = Vec::new();
    let mut observer = |t: Millis, bus: &Bus| -> Result<(), StepError> {
        if t.is_multiple_of(record_ms) {
            times_ms.push(t);
            rows.push(columns.iter().map(|c| cell(bus, c)).collect::<Vec<_>>());
        }
        Ok(())
    };

    let mode = opts.mode.unwrap_or(spec.mode);
    info!("running {} ({:?}, {:?}) to {} ms", spec.name, spec.setup, mode, spec.horizon_ms());
    let (summary, deadlines) = match mode {
        Mode::Accelerated => (run_accelerated(&schedule, &bus, &mut participants, &mut observer)?, Vec::new()),
        Mode::WallClock => run_wall_clock(&schedule, &bus, &mut participants, &mut observer, &opts.wall_clock)?,
    };
    drop(participants);
    if opts.trace.is_some() {
        bus.finish_trace().map_err(|source| ScenarioError::Io {
            path: opts.trace.clone().unwrap_or_default(),
            source,
        })?;
    }

    let violations: Vec<TimedViolation> = std::mem::take(&mut *violations.lock());
    let header = header(spec, mode, &sessions, &probes, &grid_stats.lock(), violations.len(), &summary);
    Ok(RunRecord {
        header,
        columns: columns.iter().map(|c| c.as_str().to_string()).collect(),
        times_ms,
        rows,
        violations,
        deadlines,
    })
}

fn cell(bus: &Bus, topic: &TopicPath) -> Option<f64> {
    match bus.snapshot(topic)?.value? {
        Value::Real(x) => Some(x),
        Value::Bool(b) => Some(if b { 1.0 } else { 0.0 }),
        Value::Text(_) => None,
    }
}

fn header(
    spec: &ScenarioSpec,
    mode: Mode,
    sessions: &[(String, EvSession)],
    probes: &[(String, StationProbe)],
    grid_stats: &GridStats,
    violation_count: usize,
    summary: &crate::timeline::RunSummary,
) -> RecordHeader {
    let g = &spec.grid;
    let mut diagnostics = Diagnostics {
        grid_steps: grid_stats.steps,
        non_converged_steps: grid_stats.non_converged,
        max_balance_error: grid_stats.max_balance_error,
        violation_count,
        ..Diagnostics::default()
    };
    let stations = g
        .stations()
        .iter()
        .map(|s| {
            let ev = sessions.iter().find(|(st, _)| *st == s.name).map(|(_, e)| EvInfo {
                id: e.id.clone(),
                variant: format!("{:?}", e.variant).to_uppercase(),
                power_scale: e.power_scale,
                p_rated_w: e.params.p_rated_w,
                capacity_wh: e.params.capacity_wh,
                taper_start_soc: e.params.taper_start_soc,
                target_soc: e.params.target_soc,
                current_limit_a: HARDWARE_LIMIT_A,
                arrival_of_day_s: e.arrival_ms as f64 / 1e3,
                arrival_soc: e.soc,
            });
            let delivered_wh = match probes.iter().find(|(n, _)| *n == s.name).map(|(_, p)| p) {
                Some(StationProbe::Evse(st)) => {
                    let st = st.lock();
                    diagnostics.current_limited_steps += st.current_limited_steps;
                    st.delivered_wh
                }
                Some(StationProbe::Loop(stats)) => {
                    let stats = stats.lock();
                    diagnostics.current_limited_steps += stats.current_limited_setpoints;
                    diagnostics.trip_time_s = stats.trip_time_ms.map(|t| t as f64 / 1e3);
                    stats.delivered_wh
                }
                None => 0.0,
            };
            StationInfo {
                name: s.name.clone(),
                node: g.nodes()[s.node].clone(),
                phase: s.phase.number(),
                coupled: s.name == spec.fleet.coupled_station,
                ev,
                delivered_wh,
            }
        })
        .collect();

    RecordHeader {
        record_schema: RECORD_SCHEMA,
        artifact_version: ARTIFACT_VERSION.to_string(),
        scenario: spec.name.clone(),
        spec_hash: spec.hash(),
        seed: spec.seed,
        mode,
        setup: spec.setup,
        start_of_day_s: spec.start_of_day_ms as f64 / 1e3,
        step_s: spec.schedule.grid_ms as f64 / 1e3,
        horizon_s: spec.horizon_ms() as f64 / 1e3,
        nominal_v: g.nominal_v(),
        stations,
        diagnostics,
        conformant: summary.failure.is_none(),
        failure: summary
            .failure
            .as_ref()
            .map(|f| format!("{} at {} ms: {}", f.participant, f.time, f.message)),
    }
}
