use std::sync::Arc;
use std::thread;
use std::time::Duration;

use parking_lot::Mutex;
use serde::Serialize;

use super::{
    amplifier_step, i_meas_topic, itm_feedback, trip_topic, v_out_topic, AmplifierSpec, DeviceUnderTest,
    ItmForward, PhilError, PhilLoopState,
};
use crate::bus::{Bus, Millis, ParticipantHandle, ParticipantRegistration, TopicPath};
use crate::fleet::{ev_soc_topic, limit_topic, EvSession, HARDWARE_LIMIT_A};
use crate::grid::{station_power_topic, voltage_mag_topic, GridModel};
use crate::timeline::{Participant, StepError};

#[derive(Debug, Clone)]
pub struct RtTaskConfig {
    pub participant: String,
    /// Station the device under test is connected to.
    pub station: String,
    pub step_ms: Millis,
    /// Period of the charger's setpoint revisions.
    pub setpoint_ms: Millis,
    pub staleness_ms: Millis,
    pub start_of_day_ms: Millis,
    pub amplifier: AmplifierSpec,
    /// Busy time added to every step, for overrun experiments.
    pub compute_delay: Duration,
    /// Simulation times at which a latched trip is cleared.
    pub trip_resets_ms: Vec<Millis>,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct PhilStats {
    pub ticks: u64,
    pub trip_time_ms: Option<Millis>,
    pub resets: u64,
    pub max_abs_v_out: f64,
    pub max_abs_i_meas: f64,
    pub delivered_wh: f64,
    pub current_limited_setpoints: u64,
}

/// Fixed-step real-time task closing the loop between the grid and the
/// device under test.
pub struct RtTask {
    handle: ParticipantHandle,
    cfg: RtTaskConfig,
    v_grid: TopicPath,
    limit: TopicPath,
    power: TopicPath,
    v_out: TopicPath,
    i_meas: TopicPath,
    trip: TopicPath,
    soc: Option<TopicPath>,
    forward: ItmForward,
    state: PhilLoopState,
    dut: DeviceUnderTest,
    limit_a: f64,
    stats: Arc<Mutex<PhilStats>>,
}

impl RtTask {
    pub fn register(
        model: &GridModel,
        bus: &Bus,
        cfg: RtTaskConfig,
        session: Option<EvSession>,
    ) -> Result<Self, PhilError> {
        let att = model
            .station(&cfg.station)
            .ok_or_else(|| PhilError::UnknownStation(cfg.station.clone()))?;
        if cfg.setpoint_ms == 0 || !cfg.setpoint_ms.is_multiple_of(cfg.step_ms.max(1)) {
            return Err(PhilError::Spec(format!(
                "setpoint period {} ms is not a multiple of the {} ms step",
                cfg.setpoint_ms, cfg.step_ms
            )));
        }
        let state = PhilLoopState::new(&cfg.amplifier, cfg.step_ms)?;
        let v_grid = voltage_mag_topic(&model.nodes()[att.node], att.phase);
        let limit = limit_topic(&cfg.station);
        let power = station_power_topic(&cfg.station);
        let soc = session.as_ref().map(|s| ev_soc_topic(&s.id));

        let mut reg = ParticipantRegistration::new(cfg.participant.clone(), cfg.step_ms)
            .subscribe(v_grid.clone())
            .subscribe(limit.clone())
            .publish(power.clone())
            .publish(v_out_topic())
            .publish(i_meas_topic())
            .publish(trip_topic());
        if let Some(t) = &soc {
            reg = reg.publish(t.clone());
        }
        let handle = bus.register(reg)?;
        Ok(RtTask {
            handle,
            forward: ItmForward::new(model.nominal_v()),
            dut: DeviceUnderTest::new(session, cfg.setpoint_ms, cfg.start_of_day_ms),
            cfg,
            v_grid,
            limit,
            power,
            v_out: v_out_topic(),
            i_meas: i_meas_topic(),
            trip: trip_topic(),
            soc,
            state,
            limit_a: HARDWARE_LIMIT_A,
            stats: Arc::new(Mutex::new(PhilStats::default())),
        })
    }

    pub fn stats(&self) -> Arc<Mutex<PhilStats>> {
        Arc::clone(&self.stats)
    }

    pub fn loop_state(&self) -> &PhilLoopState {
        &self.state
    }

    pub fn device(&self) -> &DeviceUnderTest {
        &self.dut
    }
}

impl Participant for RtTask {
    fn name(&self) -> &str {
        self.handle.name()
    }

    fn step(&mut self, now: Millis, bus: &Bus) -> Result<(), StepError> {
        let dt_s = self.cfg.step_ms as f64 / 1e3;
        let mut stats = self.stats.lock();
        if self.state.trip && self.cfg.trip_resets_ms.contains(&now) {
            self.state.reset();
            stats.resets += 1;
        }

        let v_sample = bus.poll_topic(&self.handle, &self.v_grid, now, self.cfg.staleness_ms)?;
        let v_ref = self.forward.reference(&v_sample);
        let limit = bus.poll_topic(&self.handle, &self.limit, now, self.cfg.staleness_ms)?;
        if let Some(a) = limit.real() {
            self.limit_a = a;
        }

        let soc_before = self.dut.session.as_ref().map(|s| s.soc);
        let v_out = amplifier_step(&self.cfg.amplifier, &mut self.state, v_ref, dt_s);
        let p = self.dut.step(now, v_out, self.limit_a, dt_s);
        let (i, p_inj) = itm_feedback(v_out, p);
        self.state.i_meas = i;

        if !self.cfg.compute_delay.is_zero() {
            thread::sleep(self.cfg.compute_delay);
        }

        let trip = self.state.trip;
        if trip && stats.trip_time_ms.is_none() {
            stats.trip_time_ms = Some(now);
        }
        stats.ticks += 1;
        stats.max_abs_v_out = stats.max_abs_v_out.max(v_out.abs());
        stats.max_abs_i_meas = stats.max_abs_i_meas.max(i.abs());
        stats.delivered_wh = self.dut.delivered_wh;
        let setpoint_tick = self.dut.is_setpoint_tick(now);
        if setpoint_tick && self.dut.current_limited {
            stats.current_limited_setpoints += 1;
        }
        drop(stats);

        let h = &self.handle;
        bus.publish(h, h.sample(&self.v_out, now, v_out))?;
        bus.publish(h, h.sample(&self.i_meas, now, i))?;
        bus.publish(h, h.sample(&self.trip, now, trip))?;
        bus.publish(h, h.sample(&self.power, now, p_inj))?;
        if let (Some(topic), Some(soc), true) = (&self.soc, soc_before, setpoint_tick) {
            bus.publish(h, h.sample(topic, now, soc))?;
        }
        Ok(())
    }
}
