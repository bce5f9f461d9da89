use std::sync::Arc;

use parking_lot::Mutex;
use serde::Serialize;

use super::{ev_soc_topic, limit_topic, EvSession, FleetError};
use crate::bus::{Bus, Millis, ParticipantHandle, ParticipantRegistration, Quality, TopicPath};
use crate::grid::{station_power_topic, voltage_mag_topic, GridModel, Phase};
use crate::timeline::{Participant, StepError};

/// Pilot current of an uncontrolled charger.
pub const HARDWARE_LIMIT_A: f64 = 40.0;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvseState {
    pub name: String,
    pub node: String,
    pub phase: Phase,
    pub current_limit_a: f64,
    pub session: Option<EvSession>,
    /// Rectangle-rule integral of the published power.
    pub delivered_wh: f64,
    /// Steps where the pilot current bounded the power.
    pub current_limited_steps: u64,
}

/// Where an EVSE plugs into the grid and how it reads the bus.
#[derive(Debug, Clone)]
pub struct EvseWiring {
    pub participant: String,
    pub station: String,
    pub step_ms: Millis,
    pub staleness_ms: Millis,
    /// Milliseconds of the day at simulation time 0.
    pub start_of_day_ms: Millis,
    pub nominal_v: f64,
}

/// Charging station with at most one simulated EV attached.
pub struct EvseParticipant {
    handle: ParticipantHandle,
    voltage: TopicPath,
    limit: TopicPath,
    power: TopicPath,
    soc: Option<TopicPath>,
    wiring: EvseWiring,
    held_v: Option<f64>,
    state: Arc<Mutex<EvseState>>,
}

impl EvseParticipant {
    pub fn register(
        model: &GridModel,
        bus: &Bus,
        wiring: EvseWiring,
        session: Option<EvSession>,
    ) -> Result<Self, FleetError> {
        let att = model
            .station(&wiring.station)
            .ok_or_else(|| FleetError::UnknownStation(wiring.station.clone()))?;
        let node = model.nodes()[att.node].clone();
        let voltage = voltage_mag_topic(&node, att.phase);
        let limit = limit_topic(&wiring.station);
        let power = station_power_topic(&wiring.station);
        let soc = session.as_ref().map(|s| ev_soc_topic(&s.id));

        let mut reg = ParticipantRegistration::new(wiring.participant.clone(), wiring.step_ms)
            .subscribe(voltage.clone())
            .subscribe(limit.clone())
            .publish(power.clone());
        if let Some(t) = &soc {
            reg = reg.publish(t.clone());
        }
        let handle = bus.register(reg)?;
        let state = EvseState {
            name: wiring.station.clone(),
            node,
            phase: att.phase,
            current_limit_a: HARDWARE_LIMIT_A,
            session,
            delivered_wh: 0.0,
            current_limited_steps: 0,
        };
        Ok(EvseParticipant {
            handle,
            voltage,
            limit,
            power,
            soc,
            wiring,
            held_v: None,
            state: Arc::new(Mutex::new(state)),
        })
    }

    pub fn state(&self) -> Arc<Mutex<EvseState>> {
        Arc::clone(&self.state)
    }
}

impl Participant for EvseParticipant {
    fn name(&self) -> &str {
        self.handle.name()
    }

    fn step(&mut self, now: Millis, bus: &Bus) -> Result<(), StepError> {
        let w = &self.wiring;
        let v = bus.poll_topic(&self.handle, &self.voltage, now, w.staleness_ms)?;
        let mut v_quality = v.quality;
        match v.real() {
            Some(x) if v.quality != Quality::Invalid => self.held_v = Some(x),
            _ => v_quality = Quality::Stale,
        }
        let v_node = self.held_v.unwrap_or(w.nominal_v);

        let limit = bus.poll_topic(&self.handle, &self.limit, now, w.staleness_ms)?;
        let mut st = self.state.lock();
        if let Some(a) = limit.real() {
            st.current_limit_a = a;
        }
        let limit_a = st.current_limit_a;
        let dt_s = w.step_ms as f64 / 1e3;

        let tod = w.start_of_day_ms + now;
        if let Some(s) = st.session.as_mut() {
            s.plug_in_if_due(tod);
        }
        let (p, quality, soc) = match st.session.as_mut() {
            Some(s) if s.is_charging() => {
                // State of charge is reported as of the start of the step.
                let soc = s.soc;
                let out = s.charge_step(dt_s, v_node, limit_a);
                let q = if out.p_drawn_w > 0.0 { out.quality.max(v_quality) } else { out.quality };
                (out.p_drawn_w, q, Some((soc, out.current_limited)))
            }
            Some(s) => (0.0, Quality::Good, Some((s.soc, false))),
            None => (0.0, Quality::Good, None),
        };
        st.delivered_wh += p * dt_s / 3600.0;
        if let Some((_, true)) = soc {
            st.current_limited_steps += 1;
        }
        drop(st);

        bus.publish(&self.handle, self.handle.sample(&self.power, now, p).with_quality(quality))?;
        if let (Some(topic), Some((soc, _))) = (&self.soc, soc) {
            bus.publish(&self.handle, self.handle.sample(topic, now, soc))?;
        }
        Ok(())
    }
}
