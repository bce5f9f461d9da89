//! Fixtures shared by the benchmarks.

use std::fmt::Write;

use gridlink::bus::{create_bus, Bus, BusConfig, ParticipantHandle, ParticipantRegistration, TopicPath, ValueKind};
use gridlink::grid::{load_grid, GridModel, Injections};

/// The bundled grid with every station drawing `p_w`.
pub fn two_feeder_loaded(p_w: f64) -> (GridModel, Injections) {
    let g = GridModel::two_feeder();
    let mut inj = Injections::base_loads(&g);
    for s in g.stations() {
        inj.add(s.node, s.phase, p_w, 0.0);
    }
    (g, inj)
}

/// A single feeder of `nodes` non-slack nodes, 3 kW + 0.5 kvar on each phase of each node.
pub fn chain(nodes: usize) -> (GridModel, Injections) {
    let mut s = String::from("schema = 1\nnominal_v = 230.0\nslack = \"n0\"\n");
    for i in 1..=nodes {
        let _ = write!(
            s,
            "[[line]]\nname = \"l{i}\"\nfrom = \"n{}\"\nto = \"n{i}\"\nr_ohm = 0.02\nx_ohm = 0.01\n",
            i - 1
        );
        for ph in 1..=3 {
            let _ = write!(
                s,
                "[[load]]\nname = \"d{i}_{ph}\"\nnode = \"n{i}\"\nphase = {ph}\np_w = 3000.0\nq_var = 500.0\n"
            );
        }
    }
    let g = load_grid(&s).expect("chain grid is valid");
    let inj = Injections::base_loads(&g);
    (g, inj)
}

pub struct BusFixture {
    pub bus: Bus,
    pub writer: ParticipantHandle,
    pub reader: ParticipantHandle,
    pub topics: Vec<TopicPath>,
}

/// A bus with `n` real topics, one writer publishing all of them and one reader polling them.
pub fn bus_fixture(n: usize) -> BusFixture {
    let topics: Vec<TopicPath> = (0..n)
        .map(|i| TopicPath::from_segments(["bench", &format!("t{i}"), "value"]).expect("valid topic"))
        .collect();
    let mut cfg = BusConfig::new();
    for t in &topics {
        cfg.push(t.clone(), ValueKind::Real);
    }
    let bus = create_bus(cfg).expect("bus builds");
    let mut w = ParticipantRegistration::new("writer", 10);
    let mut r = ParticipantRegistration::new("reader", 10);
    for t in &topics {
        w = w.publish(t.clone());
        r = r.subscribe(t.clone());
    }
    let writer = bus.register(w).expect("writer registers");
    let reader = bus.register(r).expect("reader registers");
    BusFixture {
        bus,
        writer,
        reader,
        topics,
    }
}
