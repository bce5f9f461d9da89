//! Per-phase backward-forward sweep for radial networks with constant-power loads.

use num_complex::Complex64;
use serde::Serialize;

use super::{GridError, GridModel, Phase};

pub const SWEEP_TOLERANCE_V: f64 = 1e-6;
pub const MAX_SWEEP_ITERATIONS: u32 = 100;

/// Complex power demand per node and phase (W + j var, positive = consumption).
#[derive(Debug, Clone, PartialEq)]
pub struct Injections {
    s: Vec<[Complex64; 3]>,
}

impl Injections {
    pub fn zero(model: &GridModel) -> Self {
        Injections {
            s: vec![[Complex64::new(0.0, 0.0); 3]; model.nodes().len()],
        }
    }

    /// Base loads of the model, no charging.
    pub fn base_loads(model: &GridModel) -> Self {
        let mut inj = Self::zero(model);
        for l in model.loads() {
            inj.add(l.node, l.phase, l.p_w, l.q_var);
        }
        inj
    }

    pub fn add(&mut self, node: usize, phase: Phase, p_w: f64, q_var: f64) {
        self.s[node][phase.index()] += Complex64::new(p_w, q_var);
    }

    pub fn get(&self, node: usize, phase: Phase) -> Complex64 {
        self.s[node][phase.index()]
    }

    pub fn node_count(&self) -> usize {
        self.s.len()
    }

    fn is_finite(&self) -> bool {
        self.s.iter().flatten().all(|c| c.re.is_finite() && c.im.is_finite())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NodeVoltages {
    v: Vec<[Complex64; 3]>,
    /// Largest iteration count over the three phases.
    pub iterations: u32,
    pub converged: bool,
}

impl NodeVoltages {
    pub fn phasor(&self, node: usize, phase: Phase) -> Complex64 {
        self.v[node][phase.index()]
    }

    pub fn magnitude(&self, node: usize, phase: Phase) -> f64 {
        self.phasor(node, phase).norm()
    }

    pub fn angle(&self, node: usize, phase: Phase) -> f64 {
        self.phasor(node, phase).arg()
    }

    pub fn node_count(&self) -> usize {
        self.v.len()
    }
}

struct PhaseSolution {
    v: Vec<Complex64>,
    iterations: u32,
    converged: bool,
}

fn sweep_phase(model: &GridModel, s: &[Complex64]) -> PhaseSolution {
    let n = model.nodes().len();
    let v0 = Complex64::new(model.nominal_v(), 0.0);
    let mut v = vec![v0; n];
    if s.iter().skip(1).all(|x| *x == Complex64::new(0.0, 0.0)) {
        return PhaseSolution {
            v,
            iterations: 0,
            converged: true,
        };
    }

    let order = model.order();
    let lines = model.lines();
    let mut branch = vec![Complex64::new(0.0, 0.0); n];
    let mut iterations = 0;
    let mut converged = false;

    while iterations < MAX_SWEEP_ITERATIONS {
        iterations += 1;

        // Backward: load currents at the present voltages, aggregated leaf to root.
        for &node in order.iter().skip(1) {
            branch[node] = (s[node] / v[node]).conj();
        }
        for &node in order.iter().skip(1).rev() {
            if let Some(parent) = model.parent(node) {
                if parent != 0 {
                    let j = branch[node];
                    branch[parent] += j;
                }
            }
        }

        // Forward: voltage drops root to leaf.
        let mut delta: f64 = 0.0;
        for &node in order.iter().skip(1) {
            let li = model.feeder_line(node).expect("non-slack node has a feeder");
            let z = Complex64::new(lines[li].r_ohm, lines[li].x_ohm);
            let parent = model.parent(node).expect("non-slack node has a parent");
            let updated = v[parent] - z * branch[node];
            delta = delta.max((updated - v[node]).norm());
            v[node] = updated;
        }

        if !delta.is_finite() {
            break;
        }
        if delta < SWEEP_TOLERANCE_V {
            converged = true;
            break;
        }
    }

    PhaseSolution {
        v,
        iterations,
        converged,
    }
}

/// Solves the three phases independently. A non-converged solve is returned
/// with `converged == false` and the last iterate.
pub fn solve_power_flow(model: &GridModel, inj: &Injections) -> Result<NodeVoltages, GridError> {
    if inj.node_count() != model.nodes().len() {
        return Err(GridError::Invalid(format!(
            "injections cover {} nodes, model has {}",
            inj.node_count(),
            model.nodes().len()
        )));
    }
    if !inj.is_finite() {
        return Err(GridError::Invalid("non-finite injection".into()));
    }

    let n = model.nodes().len();
    let mut v = vec![[Complex64::new(0.0, 0.0); 3]; n];
    let mut iterations = 0;
    let mut converged = true;
    for phase in Phase::ALL {
        let s: Vec<Complex64> = (0..n).map(|i| inj.get(i, phase)).collect();
        let sol = sweep_phase(model, &s);
        for (node, value) in sol.v.into_iter().enumerate() {
            v[node][phase.index()] = value;
        }
        iterations = iterations.max(sol.iterations);
        converged &= sol.converged;
    }
    Ok(NodeVoltages {
        v,
        iterations,
        converged,
    })
}

/// Power bookkeeping of one phase, recomputed from a solved voltage profile.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerBalance {
    /// Complex power delivered by the slack source.
    pub slack: Complex64,
    /// Sum of all load demands, including any load on the slack bus.
    pub loads: Complex64,
    /// Sum over lines of |I|² Z.
    pub losses: Complex64,
}

impl PowerBalance {
    /// |slack − loads − losses| / |slack|, or the absolute mismatch when the
    /// slack delivers nothing.
    pub fn relative_error(&self) -> f64 {
        let mismatch = (self.slack - self.loads - self.losses).norm();
        let scale = self.slack.norm();
        if scale > 0.0 {
            mismatch / scale
        } else {
            mismatch
        }
    }
}

pub fn power_balance(model: &GridModel, inj: &Injections, v: &NodeVoltages) -> [PowerBalance; 3] {
    let n = model.nodes().len();
    Phase::ALL.map(|phase| {
        let mut branch = vec![Complex64::new(0.0, 0.0); n];
        for &node in model.order().iter().skip(1) {
            branch[node] = (inj.get(node, phase) / v.phasor(node, phase)).conj();
        }
        for &node in model.order().iter().skip(1).rev() {
            if let Some(parent) = model.parent(node) {
                if parent != 0 {
                    let j = branch[node];
                    branch[parent] += j;
                }
            }
        }
        let mut root_current = Complex64::new(0.0, 0.0);
        let mut losses = Complex64::new(0.0, 0.0);
        for &node in model.order().iter().skip(1) {
            let li = model.feeder_line(node).expect("feeder");
            let line = &model.lines()[li];
            losses += Complex64::new(line.r_ohm, line.x_ohm) * branch[node].norm_sqr();
            if model.parent(node) == Some(0) {
                root_current += branch[node];
            }
        }
        let slack_load = inj.get(0, phase);
        let loads = (0..n).map(|i| inj.get(i, phase)).sum();
        PowerBalance {
            slack: v.phasor(0, phase) * root_current.conj() + slack_load,
            loads,
            losses,
        }
    })
}
