//! Independent reference computations for the integration tests.

#![allow(dead_code)]

use std::fmt::Write;
use std::path::PathBuf;

use gridlink::bus::Millis;
use gridlink::scenario::{parse_scenario, ScenarioSpec};
use nalgebra::{Complex, DMatrix, DVector};

pub fn scenario_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("scenarios").join(name)
}

pub fn bundled(name: &str) -> ScenarioSpec {
    parse_scenario(&scenario_path(name)).expect("bundled scenario parses")
}

/// Radial feeder description, independent of the library's model types.
/// Node 0 is the slack.
#[derive(Debug, Clone)]
pub struct Feeder {
    pub v0: f64,
    pub node_count: usize,
    /// (from, to, r, x)
    pub lines: Vec<(usize, usize, f64, f64)>,
    /// (node, phase 1..=3, p, q)
    pub loads: Vec<(usize, u8, f64, f64)>,
}

impl Feeder {
    pub fn node_name(i: usize) -> String {
        if i == 0 {
            "slack".into()
        } else {
            format!("n{i}")
        }
    }

    pub fn to_toml(&self) -> String {
        let mut s = format!("schema = 1\nnominal_v = {:?}\nslack = \"slack\"\n", self.v0);
        for (k, (f, t, r, x)) in self.lines.iter().enumerate() {
            let _ = write!(
                s,
                "[[line]]\nname = \"l{k}\"\nfrom = \"{}\"\nto = \"{}\"\nr_ohm = {r:?}\nx_ohm = {x:?}\n",
                Self::node_name(*f),
                Self::node_name(*t)
            );
        }
        for (k, (n, ph, p, q)) in self.loads.iter().enumerate() {
            let _ = write!(
                s,
                "[[load]]\nname = \"d{k}\"\nnode = \"{}\"\nphase = {ph}\np_w = {p:?}\nq_var = {q:?}\n",
                Self::node_name(*n)
            );
        }
        s
    }
}

/// Fixed-point iteration on the full nodal admittance equations,
/// `V_L = Y_LL^-1 (I_L(V_L) - Y_L0 V0)`, one phase at a time.
/// Returns per-node magnitudes `[phase][node]`, or `None` when it does not settle.
pub fn nodal_magnitudes(f: &Feeder) -> Option<[Vec<f64>; 3]> {
    let n = f.node_count;
    let mut y = DMatrix::<Complex<f64>>::zeros(n, n);
    for &(a, b, r, x) in &f.lines {
        let yl = Complex::new(1.0, 0.0) / Complex::new(r, x);
        y[(a, a)] += yl;
        y[(b, b)] += yl;
        y[(a, b)] -= yl;
        y[(b, a)] -= yl;
    }
    let m = n - 1;
    let yll = y.view((1, 1), (m, m)).into_owned();
    let yl0 = y.view((1, 0), (m, 1)).into_owned();
    let zll = yll.try_inverse()?;
    let v0 = Complex::new(f.v0, 0.0);

    let mut out: [Vec<f64>; 3] = Default::default();
    for ph in 1..=3u8 {
        let mut s = DVector::<Complex<f64>>::zeros(m);
        for &(node, p, pw, qv) in &f.loads {
            if p == ph && node > 0 {
                s[node - 1] += Complex::new(pw, qv);
            }
        }
        let mut v = DVector::from_element(m, v0);
        let mut settled = false;
        for _ in 0..10_000 {
            let i_inj = DVector::from_iterator(m, (0..m).map(|k| -(s[k] / v[k]).conj()));
            let next = &zll * (i_inj - &yl0 * v0);
            let delta = (&next - &v).iter().map(|c| c.norm()).fold(0.0, f64::max);
            v = next;
            if !delta.is_finite() {
                return None;
            }
            if delta < 1e-11 {
                settled = true;
                break;
            }
        }
        if !settled {
            return None;
        }
        let mut mags = vec![f.v0];
        mags.extend(v.iter().map(|c| c.norm()));
        out[(ph - 1) as usize] = mags;
    }
    Some(out)
}

/// |V1| of a slack feeding one constant-power load over `r + jx`: the
/// larger root of `u² - (V0² - 2(rP + xQ)) u + (r² + x²)(P² + Q²) = 0`, `u = |V1|²`.
pub fn two_bus_magnitude(v0: f64, r: f64, x: f64, p: f64, q: f64) -> f64 {
    let b = v0 * v0 - 2.0 * (r * p + x * q);
    let c = (r * r + x * x) * (p * p + q * q);
    ((b + (b * b - 4.0 * c).sqrt()) / 2.0).sqrt()
}

/// Release instants of one participant up to `horizon`, by enumerating multiples.
pub fn releases(step: Millis, offset: Millis, horizon: Millis) -> Vec<Millis> {
    let mut out = Vec::new();
    let mut t = offset;
    while t <= horizon {
        out.push(t);
        t += step;
    }
    out
}
