//! EV sessions, charging stations and the station operator.

mod evse;
mod operator;
mod session;

use thiserror::Error;

use crate::bus::{BusConfig, BusError, Millis, TopicPath, ValueKind};

pub use evse::{EvseParticipant, EvseState, EvseWiring, HARDWARE_LIMIT_A};
pub use operator::{ChargePolicy, EvseOperator, PassThrough};
pub use session::{
    arrival_socs, schedule_arrivals, ChargeOutcome, EvParams, EvSession, SessionState, Variant,
    EVENING_WINDOW_MS,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FleetError {
    #[error("arrival window [{start}, {end}) ms is empty")]
    Window { start: Millis, end: Millis },
    #[error("invalid EV parameter: {0}")]
    Param(String),
    #[error("unknown charging station {0:?}")]
    UnknownStation(String),
    #[error(transparent)]
    Bus(#[from] BusError),
}

pub fn ev_soc_topic(ev: &str) -> TopicPath {
    TopicPath::from_segments(["ev", ev, "soc"]).expect("EV ids are validated tokens")
}

pub fn limit_topic(station: &str) -> TopicPath {
    TopicPath::from_segments(["cs", station, "limit_a"]).expect("station names are validated tokens")
}

/// Declares the pilot-current topic of every station and the state-of-charge
/// topic of every EV. Station power topics belong to the grid.
pub fn declare_topics<'a>(
    stations: impl IntoIterator<Item = &'a str>,
    evs: impl IntoIterator<Item = &'a str>,
    config: &mut BusConfig,
) {
    for s in stations {
        config.push(limit_topic(s), ValueKind::Real);
    }
    for ev in evs {
        config.push(ev_soc_topic(ev), ValueKind::Real);
    }
}

/// EV id used for the vehicle at `station`.
pub fn ev_id_for(station: &str) -> String {
    format!("ev_{}", station.to_ascii_lowercase())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bus::{create_bus, ParticipantRegistration, Quality};
    use crate::grid::{self, station_power_topic, voltage_mag_topic, GridModel, Phase};
    use crate::timeline::Participant;

    const START: Millis = 63_000_000;

    struct Rig {
        bus: crate::bus::Bus,
        evse: EvseParticipant,
        grid: crate::bus::ParticipantHandle,
    }

    fn rig(session: Option<EvSession>) -> Rig {
        let model = GridModel::two_feeder();
        let mut cfg = BusConfig::new();
        grid::declare_topics(&model, &mut cfg);
        declare_topics(["CS1"], [ev_id_for("CS1").as_str()], &mut cfg);
        let bus = create_bus(cfg).unwrap();
        let grid = bus
            .register(
                ParticipantRegistration::new("grid", 1000)
                    .publish(voltage_mag_topic("node1", Phase::new(1).unwrap())),
            )
            .unwrap();
        let wiring = EvseWiring {
            participant: "evse_cs1".into(),
            station: "CS1".into(),
            step_ms: 1000,
            staleness_ms: 5000,
            start_of_day_ms: START,
            nominal_v: 230.0,
        };
        let evse = EvseParticipant::register(&model, &bus, wiring, session).unwrap();
        Rig { bus, evse, grid }
    }

    fn ev(arrival_ms: Millis, soc: f64) -> EvSession {
        EvSession::new(ev_id_for("CS1"), EvParams::default(), soc, arrival_ms, Variant::Reference)
    }

    fn power(r: &Rig) -> (f64, Quality) {
        let s = r.bus.snapshot(&station_power_topic("CS1")).unwrap();
        (s.real().unwrap(), s.quality)
    }

    #[test]
    fn idle_station_publishes_zero() {
        let mut r = rig(None);
        r.evse.step(0, &r.bus).unwrap();
        assert_eq!(power(&r), (0.0, Quality::Good));
    }

    #[test]
    fn first_power_at_first_step_after_arrival() {
        let mut r = rig(Some(ev(START + 2500, 0.5)));
        let mut first = None;
        for t in (0..10_000).step_by(1000) {
            r.evse.step(t, &r.bus).unwrap();
            if first.is_none() && power(&r).0 > 0.0 {
                first = Some(t);
            }
        }
        assert_eq!(first, Some(3000));
    }

    #[test]
    fn stale_voltage_is_held() {
        let mut r = rig(Some(ev(START, 0.5)));
        let topic = voltage_mag_topic("node1", Phase::new(1).unwrap());
        r.bus.publish(&r.grid, r.grid.sample(&topic, 0, 220.0)).unwrap();
        r.evse.step(0, &r.bus).unwrap();
        assert_eq!(power(&r), (7200.0, Quality::Good));
        r.evse.step(10_000, &r.bus).unwrap();
        assert_eq!(power(&r), (7200.0, Quality::Stale));
    }

    #[test]
    fn current_limit_is_applied() {
        let mut r = rig(Some(ev(START, 0.5)));
        let topic = voltage_mag_topic("node1", Phase::new(1).unwrap());
        r.bus.publish(&r.grid, r.grid.sample(&topic, 0, 220.0)).unwrap();
        let op = r
            .bus
            .register(ParticipantRegistration::new("op", 1000).publish(limit_topic("CS1")))
            .unwrap();
        r.bus.publish(&op, op.sample(&limit_topic("CS1"), 0, 16.0)).unwrap();
        r.evse.step(0, &r.bus).unwrap();
        assert_eq!(power(&r).0, 220.0 * 16.0);
        assert_eq!(r.evse.state().lock().current_limited_steps, 1);
    }

    #[test]
    fn session_ends_and_stays_off() {
        let mut r = rig(Some(ev(START, 0.85)));
        let mut seen_on = false;
        let mut off_after_on = 0;
        for k in 0..10_000u64 {
            r.evse.step(k * 1000, &r.bus).unwrap();
            let p = power(&r).0;
            if p > 0.0 {
                assert_eq!(off_after_on, 0, "power came back");
                seen_on = true;
            } else if seen_on {
                off_after_on += 1;
            }
        }
        assert!(seen_on && off_after_on > 0);
        assert_eq!(r.evse.state().lock().session.as_ref().unwrap().state, SessionState::Complete);
    }

    #[test]
    fn delivered_energy_matches_soc_gain() {
        let mut r = rig(Some(ev(START, 0.4)));
        let mut integral = 0.0;
        for k in 0..3600u64 {
            r.evse.step(k * 1000, &r.bus).unwrap();
            integral += power(&r).0 / 3600.0;
        }
        let st = r.evse.state();
        let st = st.lock();
        assert!((st.delivered_wh - integral).abs() <= 1e-9 * integral);
        assert!((st.delivered_wh - 7200.0).abs() < 1e-6);
        let s = st.session.as_ref().unwrap();
        assert!(((s.soc - 0.4) * 40_000.0 - st.delivered_wh).abs() < 1e-6);
    }

    struct Operated {
        bus: crate::bus::Bus,
        op: EvseOperator,
        cs: crate::bus::ParticipantHandle,
    }

    fn operated(policy: Box<dyn ChargePolicy>) -> Operated {
        let names = ["CS1".to_string(), "CS2".to_string()];
        let mut cfg = BusConfig::new();
        for n in &names {
            cfg.push(station_power_topic(n), ValueKind::Real);
        }
        declare_topics(names.iter().map(String::as_str), [], &mut cfg);
        let bus = create_bus(cfg).unwrap();
        let cs = bus
            .register(
                ParticipantRegistration::new("cs", 1000)
                    .publish(station_power_topic("CS1"))
                    .publish(station_power_topic("CS2")),
            )
            .unwrap();
        let op = EvseOperator::register(&bus, "evse_operator", &names, 60_000, 120_000, policy).unwrap();
        Operated { bus, op, cs }
    }

    #[test]
    fn operator_ledger_integrates_power() {
        let mut o = operated(Box::new(PassThrough));
        for k in 0..60u64 {
            let t = k * 60_000;
            o.bus.publish(&o.cs, o.cs.sample(&station_power_topic("CS1"), t, 7200.0)).unwrap();
            o.bus.publish(&o.cs, o.cs.sample(&station_power_topic("CS2"), t, 0.0)).unwrap();
            o.op.step(t, &o.bus).unwrap();
        }
        let ledger = o.op.ledger();
        let ledger = ledger.lock();
        assert!((ledger["CS1"] - 7200.0).abs() < 1e-9);
        assert_eq!(ledger["CS2"], 0.0);
        assert!(o.bus.snapshot(&limit_topic("CS1")).is_none());
    }

    #[test]
    fn operator_skips_unpublished_stations() {
        let mut o = operated(Box::new(PassThrough));
        o.op.step(0, &o.bus).unwrap();
        assert!(o.op.ledger().lock().values().all(|&e| e == 0.0));
    }

    struct Cap(f64);

    impl ChargePolicy for Cap {
        fn limit(&mut self, _station: &str, _now: Millis, _power_w: f64) -> Option<f64> {
            Some(self.0)
        }
    }

    #[test]
    fn policy_limits_are_published_on_change() {
        let mut o = operated(Box::new(Cap(16.0)));
        for k in 0..3u64 {
            let t = k * 60_000;
            o.bus.publish(&o.cs, o.cs.sample(&station_power_topic("CS1"), t, 7200.0)).unwrap();
            o.op.step(t, &o.bus).unwrap();
        }
        let s = o.bus.snapshot(&limit_topic("CS1")).unwrap();
        assert_eq!((s.time, s.real()), (0, Some(16.0)));
    }
}
