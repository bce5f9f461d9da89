use std::sync::Arc;

use parking_lot::Mutex;
use serde::Serialize;

use super::{
    load_power_topic, monitor_magnitudes, power_balance, solve_power_flow, station_power_topic,
    voltage_ang_topic, voltage_mag_topic, GridModel, Injections, NodeVoltages, Phase, Violation,
};
use crate::bus::{Bus, BusError, Millis, ParticipantHandle, ParticipantRegistration, Quality, TopicPath};
use crate::timeline::{Participant, StepError};

#[derive(Debug, Clone, Default)]
pub struct GridStats {
    pub steps: u64,
    pub non_converged: u64,
    /// Worst relative slack-vs-(loads + losses) mismatch over converged steps.
    pub max_balance_error: f64,
    pub last: Option<NodeVoltages>,
}

struct LoadInput {
    topic: TopicPath,
    node: usize,
    phase: Phase,
    base_p: f64,
    base_q: f64,
}

impl LoadInput {
    /// Reactive power follows active power at the base power factor.
    fn q_for(&self, p: f64) -> f64 {
        if self.base_p != 0.0 {
            p * self.base_q / self.base_p
        } else {
            self.base_q
        }
    }
}

struct VoltageOutput {
    node: usize,
    phase: Phase,
    mag: TopicPath,
    ang: TopicPath,
}

/// Grid solver participant: polls load and station powers, solves, publishes
/// per-node per-phase voltage magnitude and angle.
pub struct GridParticipant {
    model: GridModel,
    handle: ParticipantHandle,
    staleness_ms: Millis,
    stations: Vec<(TopicPath, usize, Phase)>,
    loads: Vec<LoadInput>,
    outputs: Vec<VoltageOutput>,
    stats: Arc<Mutex<GridStats>>,
}

impl GridParticipant {
    pub fn register(
        model: GridModel,
        bus: &Bus,
        name: &str,
        step_ms: Millis,
        staleness_ms: Millis,
    ) -> Result<Self, BusError> {
        let stations: Vec<_> = model
            .stations()
            .iter()
            .map(|s| (station_power_topic(&s.name), s.node, s.phase))
            .collect();
        let loads: Vec<_> = model
            .loads()
            .iter()
            .map(|l| LoadInput {
                topic: load_power_topic(&l.name),
                node: l.node,
                phase: l.phase,
                base_p: l.p_w,
                base_q: l.q_var,
            })
            .collect();
        let outputs: Vec<_> = (1..model.nodes().len())
            .flat_map(|node| {
                let name = model.nodes()[node].clone();
                Phase::ALL.into_iter().map(move |phase| VoltageOutput {
                    node,
                    phase,
                    mag: voltage_mag_topic(&name, phase),
                    ang: voltage_ang_topic(&name, phase),
                })
            })
            .collect();

        let mut reg = ParticipantRegistration::new(name, step_ms);
        for (t, _, _) in &stations {
            reg = reg.subscribe(t.clone());
        }
        for l in &loads {
            reg = reg.subscribe(l.topic.clone());
        }
        for o in &outputs {
            reg = reg.publish(o.mag.clone()).publish(o.ang.clone());
        }
        let handle = bus.register(reg)?;

        Ok(GridParticipant {
            model,
            handle,
            staleness_ms,
            stations,
            loads,
            outputs,
            stats: Arc::new(Mutex::new(GridStats::default())),
        })
    }

    pub fn stats(&self) -> Arc<Mutex<GridStats>> {
        Arc::clone(&self.stats)
    }

    pub fn model(&self) -> &GridModel {
        &self.model
    }

    /// One grid step at time `t`; returns the solved profile.
    pub fn step_grid(&mut self, t: Millis, bus: &Bus) -> Result<NodeVoltages, StepError> {
        let snapshot = bus.poll(&self.handle, t, self.staleness_ms);
        let mut inj = Injections::zero(&self.model);
        let mut quality = Quality::Good;

        for (topic, node, phase) in &self.stations {
            let s = snapshot.get(topic).expect("subscribed");
            quality = quality.max(s.quality);
            inj.add(*node, *phase, s.real().unwrap_or(0.0), 0.0);
        }
        for l in &self.loads {
            let s = snapshot.get(&l.topic).expect("subscribed");
            quality = quality.max(s.quality);
            let p = s.real().unwrap_or(0.0);
            inj.add(l.node, l.phase, p, l.q_for(p));
        }

        let v = solve_power_flow(&self.model, &inj).map_err(|e| StepError::new(e.to_string()))?;
        if !v.converged {
            quality = Quality::Invalid;
        }

        for o in &self.outputs {
            let (mut mag, mut ang) = (v.magnitude(o.node, o.phase), v.angle(o.node, o.phase));
            let mut q = quality;
            if !(mag.is_finite() && ang.is_finite()) {
                mag = 0.0;
                ang = 0.0;
                q = Quality::Invalid;
            }
            bus.publish(&self.handle, self.handle.sample(&o.mag, t, mag).with_quality(q))?;
            bus.publish(&self.handle, self.handle.sample(&o.ang, t, ang).with_quality(q))?;
        }

        let mut stats = self.stats.lock();
        stats.steps += 1;
        if v.converged {
            let worst = power_balance(&self.model, &inj, &v)
                .iter()
                .map(|b| b.relative_error())
                .fold(0.0, f64::max);
            stats.max_balance_error = stats.max_balance_error.max(worst);
        } else {
            stats.non_converged += 1;
        }
        stats.last = Some(v.clone());
        Ok(v)
    }
}

impl Participant for GridParticipant {
    fn name(&self) -> &str {
        self.handle.name()
    }

    fn step(&mut self, now: Millis, bus: &Bus) -> Result<(), StepError> {
        self.step_grid(now, bus).map(|_| ())
    }
}

/// Publishes the flat base-load profile of every load in the model.
pub struct BaseLoads {
    handle: ParticipantHandle,
    loads: Vec<(TopicPath, f64)>,
}

impl BaseLoads {
    pub fn register(model: &GridModel, bus: &Bus, name: &str, step_ms: Millis) -> Result<Self, BusError> {
        let loads: Vec<_> = model
            .loads()
            .iter()
            .map(|l| (load_power_topic(&l.name), l.p_w))
            .collect();
        let reg = loads
            .iter()
            .fold(ParticipantRegistration::new(name, step_ms), |r, (t, _)| r.publish(t.clone()));
        Ok(BaseLoads {
            handle: bus.register(reg)?,
            loads,
        })
    }
}

impl Participant for BaseLoads {
    fn name(&self) -> &str {
        self.handle.name()
    }

    fn step(&mut self, now: Millis, bus: &Bus) -> Result<(), StepError> {
        for (topic, p) in &self.loads {
            bus.publish(&self.handle, self.handle.sample(topic, now, *p))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TimedViolation {
    pub time_ms: Millis,
    #[serde(flatten)]
    pub violation: Violation,
}

/// Grid-operator monitor: checks published magnitudes against the voltage band.
pub struct GridOperator {
    handle: ParticipantHandle,
    nominal_v: f64,
    band: f64,
    staleness_ms: Millis,
    cells: Vec<(TopicPath, String, Phase)>,
    violations: Arc<Mutex<Vec<TimedViolation>>>,
}

impl GridOperator {
    pub fn register(
        model: &GridModel,
        bus: &Bus,
        name: &str,
        step_ms: Millis,
        staleness_ms: Millis,
        band: f64,
    ) -> Result<Self, BusError> {
        let cells: Vec<_> = model
            .nodes()
            .iter()
            .skip(1)
            .flat_map(|n| Phase::ALL.into_iter().map(move |ph| (voltage_mag_topic(n, ph), n.clone(), ph)))
            .collect();
        let reg = cells
            .iter()
            .fold(ParticipantRegistration::new(name, step_ms), |r, (t, _, _)| r.subscribe(t.clone()));
        Ok(GridOperator {
            handle: bus.register(reg)?,
            nominal_v: model.nominal_v(),
            band,
            staleness_ms,
            cells,
            violations: Arc::new(Mutex::new(Vec::new())),
        })
    }

    pub fn violations(&self) -> Arc<Mutex<Vec<TimedViolation>>> {
        Arc::clone(&self.violations)
    }
}

impl Participant for GridOperator {
    fn name(&self) -> &str {
        self.handle.name()
    }

    fn step(&mut self, now: Millis, bus: &Bus) -> Result<(), StepError> {
        let snapshot = bus.poll(&self.handle, now, self.staleness_ms);
        let readings: Vec<_> = self
            .cells
            .iter()
            .filter_map(|(topic, node, phase)| {
                let s = snapshot.get(topic)?;
                if s.quality == Quality::Invalid {
                    return None;
                }
                Some((node.as_str(), *phase, s.real()?))
            })
            .collect();
        let found = monitor_magnitudes(self.nominal_v, readings, self.band)
            .map_err(|e| StepError::new(e.to_string()))?;
        self.violations
            .lock()
            .extend(found.into_iter().map(|violation| TimedViolation { time_ms: now, violation }));
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bus::{create_bus, BusConfig};
    use crate::grid::declare_topics;

    struct Rig {
        bus: Bus,
        grid: GridParticipant,
        loads: BaseLoads,
        cs: ParticipantHandle,
    }

    fn rig() -> Rig {
        rig_with(GridModel::two_feeder())
    }

    fn rig_with(model: GridModel) -> Rig {
        let mut cfg = BusConfig::new();
        declare_topics(&model, &mut cfg);
        let bus = create_bus(cfg).unwrap();
        let loads = BaseLoads::register(&model, &bus, "base_loads", 1000).unwrap();
        let cs = bus
            .register(
                model
                    .stations()
                    .iter()
                    .fold(ParticipantRegistration::new("chargers", 1000), |r, s| {
                        r.publish(station_power_topic(&s.name))
                    }),
            )
            .unwrap();
        let grid = GridParticipant::register(model, &bus, "grid", 1000, 5000).unwrap();
        Rig { bus, grid, loads, cs }
    }

    fn set_cs(r: &Rig, t: Millis, powers: [f64; 3]) {
        for (name, p) in ["CS1", "CS2", "CS3"].iter().zip(powers) {
            r.bus
                .publish(&r.cs, r.cs.sample(&station_power_topic(name), t, p))
                .unwrap();
        }
    }

    #[test]
    fn idle_stations_give_base_load_solution() {
        let mut r = rig();
        r.loads.step(0, &r.bus).unwrap();
        set_cs(&r, 0, [0.0; 3]);
        let v = r.grid.step_grid(0, &r.bus).unwrap();
        let model = r.grid.model().clone();
        let expected = solve_power_flow(&model, &Injections::base_loads(&model)).unwrap();
        assert_eq!(v, expected);
        let mag = r.bus.snapshot(&voltage_mag_topic("node1", Phase::new(1).unwrap())).unwrap();
        assert_eq!(mag.quality, Quality::Good);
        assert_eq!(mag.real(), Some(expected.magnitude(1, Phase::new(1).unwrap())));
    }

    #[test]
    fn charging_depresses_only_its_phase() {
        let mut r = rig();
        r.loads.step(0, &r.bus).unwrap();
        set_cs(&r, 0, [7200.0, 7200.0, 0.0]);
        r.grid.step_grid(0, &r.bus).unwrap();
        let m = |ph: u8| {
            r.bus
                .snapshot(&voltage_mag_topic("node1", Phase::new(ph).unwrap()))
                .unwrap()
                .real()
                .unwrap()
        };
        assert!(m(1) < m(2) && m(1) < m(3));
    }

    #[test]
    fn stale_inputs_propagate_quality() {
        let mut r = rig();
        r.loads.step(0, &r.bus).unwrap();
        set_cs(&r, 0, [0.0; 3]);
        r.loads.step(10_000, &r.bus).unwrap();
        r.grid.step_grid(10_000, &r.bus).unwrap();
        let s = r.bus.snapshot(&voltage_mag_topic("node2", Phase::new(3).unwrap())).unwrap();
        assert_eq!(s.quality, Quality::Stale);
    }

    #[test]
    fn grid_publishes_every_step() {
        let mut r = rig();
        let topic = voltage_mag_topic("node1", Phase::new(1).unwrap());
        let mut count = 0;
        for t in (0..=12_600_000u64).step_by(1000) {
            if t % 600_000 == 0 {
                r.loads.step(t, &r.bus).unwrap();
                set_cs(&r, t, [0.0; 3]);
            }
            r.grid.step_grid(t, &r.bus).unwrap();
            if r.bus.snapshot(&topic).unwrap().time == t {
                count += 1;
            }
        }
        assert_eq!(count, 12_601);
        assert_eq!(r.grid.stats().lock().steps, 12_601);
    }

    #[test]
    fn operator_flags_undervoltage() {
        let model = GridModel::two_feeder().with_line_scale(4.0);
        let mut r = rig_with(model.clone());
        let mut op = GridOperator::register(&model, &r.bus, "grid_operator", 1000, 5000, 0.1).unwrap();
        r.loads.step(0, &r.bus).unwrap();
        set_cs(&r, 0, [7200.0, 0.0, 0.0]);
        r.grid.step(0, &r.bus).unwrap();
        op.step(0, &r.bus).unwrap();
        let v = op.violations();
        let v = v.lock();
        assert!(!v.is_empty());
        assert!(v.iter().all(|x| x.violation.node == "node1" && x.violation.phase.number() == 1));
    }

    #[test]
    fn operator_ignores_invalid_readings() {
        let model = GridModel::two_feeder().with_line_scale(4.0);
        let mut r = rig_with(model.clone());
        let mut op = GridOperator::register(&model, &r.bus, "grid_operator", 1000, 5000, 0.1).unwrap();
        // Loads never published: the solve runs on INVALID inputs.
        set_cs(&r, 0, [7200.0, 0.0, 0.0]);
        r.grid.step(0, &r.bus).unwrap();
        op.step(0, &r.bus).unwrap();
        assert!(op.violations().lock().is_empty());
    }
}
