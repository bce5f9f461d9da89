use std::collections::BTreeMap;
use std::sync::Arc;

use parking_lot::Mutex;

use super::limit_topic;
use crate::bus::{Bus, BusError, Millis, ParticipantHandle, ParticipantRegistration, Quality, TopicPath};
use crate::grid::station_power_topic;
use crate::timeline::{Participant, StepError};

/// Control hook of the EVSE operator. Returns a new pilot current for a
/// station, or `None` to leave it unchanged.
pub trait ChargePolicy: Send {
    fn limit(&mut self, station: &str, now: Millis, power_w: f64) -> Option<f64>;
}

/// Uncontrolled charging: never changes a limit.
#[derive(Debug, Clone, Copy, Default)]
pub struct PassThrough;

impl ChargePolicy for PassThrough {
    fn limit(&mut self, _station: &str, _now: Millis, _power_w: f64) -> Option<f64> {
        None
    }
}

struct Station {
    name: String,
    power: TopicPath,
    limit: TopicPath,
    last_limit: Option<f64>,
}

/// Watches every station, keeps an energy ledger and applies the policy.
pub struct EvseOperator {
    handle: ParticipantHandle,
    staleness_ms: Millis,
    stations: Vec<Station>,
    policy: Box<dyn ChargePolicy>,
    ledger: Arc<Mutex<BTreeMap<String, f64>>>,
}

impl EvseOperator {
    pub fn register(
        bus: &Bus,
        name: &str,
        stations: &[String],
        step_ms: Millis,
        staleness_ms: Millis,
        policy: Box<dyn ChargePolicy>,
    ) -> Result<Self, BusError> {
        let stations: Vec<_> = stations
            .iter()
            .map(|s| Station {
                name: s.clone(),
                power: station_power_topic(s),
                limit: limit_topic(s),
                last_limit: None,
            })
            .collect();
        let reg = stations.iter().fold(ParticipantRegistration::new(name, step_ms), |r, s| {
            r.subscribe(s.power.clone()).publish(s.limit.clone())
        });
        let ledger = stations.iter().map(|s| (s.name.clone(), 0.0)).collect();
        Ok(EvseOperator {
            handle: bus.register(reg)?,
            staleness_ms,
            stations,
            policy,
            ledger: Arc::new(Mutex::new(ledger)),
        })
    }

    /// Delivered energy per station in Wh.
    pub fn ledger(&self) -> Arc<Mutex<BTreeMap<String, f64>>> {
        Arc::clone(&self.ledger)
    }
}

impl Participant for EvseOperator {
    fn name(&self) -> &str {
        self.handle.name()
    }

    fn step(&mut self, now: Millis, bus: &Bus) -> Result<(), StepError> {
        let snapshot = bus.poll(&self.handle, now, self.staleness_ms);
        let dt_h = self.handle.step_ms() as f64 / 3.6e6;
        for s in &mut self.stations {
            let Some(sample) = snapshot.get(&s.power) else { continue };
            let p = match sample.real() {
                Some(p) if sample.quality != Quality::Invalid => p,
                _ => continue,
            };
            *self.ledger.lock().entry(s.name.clone()).or_default() += p * dt_h;
            if let Some(a) = self.policy.limit(&s.name, now, p) {
                if s.last_limit != Some(a) {
                    bus.publish(&self.handle, self.handle.sample(&s.limit, now, a))?;
                    s.last_limit = Some(a);
                }
            }
        }
        Ok(())
    }
}
