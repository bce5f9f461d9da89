use std::fmt;

use serde::{Deserialize, Serialize};
use toml::Spanned;

use super::GridError;
use crate::bus::is_token;

/// Grid spec schema version understood by this build.
pub const GRID_SCHEMA: u32 = 1;

const TWO_FEEDER_GRID: &str = include_str!("../../scenarios/two_feeder.grid");

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct Phase(u8);

impl Phase {
    pub const ALL: [Phase; 3] = [Phase(1), Phase(2), Phase(3)];

    pub fn new(n: u8) -> Option<Phase> {
        (1..=3).contains(&n).then_some(Phase(n))
    }

    pub fn number(self) -> u8 {
        self.0
    }

    pub fn index(self) -> usize {
        (self.0 - 1) as usize
    }
}

impl TryFrom<u8> for Phase {
    type Error = String;

    fn try_from(n: u8) -> Result<Self, Self::Error> {
        Phase::new(n).ok_or_else(|| format!("phase must be 1, 2 or 3, got {n}"))
    }
}

impl From<Phase> for u8 {
    fn from(p: Phase) -> u8 {
        p.0
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "phase{}", self.0)
    }
}

/// Position in a source file, 1-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Location {
    pub line: usize,
    pub column: usize,
}

impl Location {
    pub fn from_offset(src: &str, offset: usize) -> Self {
        let offset = offset.min(src.len());
        let before = &src[..offset];
        let line = before.matches('\n').count() + 1;
        let column = before.rfind('\n').map_or(offset, |nl| offset - nl - 1) + 1;
        Location { line, column }
    }
}

impl fmt::Display for Location {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.line, self.column)
    }
}

/// On-disk grid description (TOML).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub schema: u32,
    pub nominal_v: f64,
    pub slack: String,
    #[serde(default, rename = "line")]
    pub lines: Vec<LineSpec>,
    #[serde(default, rename = "load")]
    pub loads: Vec<LoadSpec>,
    #[serde(default, rename = "station")]
    pub stations: Vec<StationSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LineSpec {
    pub name: String,
    pub from: Spanned<String>,
    pub to: Spanned<String>,
    pub r_ohm: f64,
    pub x_ohm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoadSpec {
    pub name: String,
    pub node: Spanned<String>,
    pub phase: Phase,
    pub p_w: f64,
    #[serde(default)]
    pub q_var: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StationSpec {
    pub name: String,
    pub node: Spanned<String>,
    pub phase: Phase,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Line {
    pub name: String,
    pub from: usize,
    pub to: usize,
    pub r_ohm: f64,
    pub x_ohm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Load {
    pub name: String,
    pub node: usize,
    pub phase: Phase,
    pub p_w: f64,
    pub q_var: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StationAttachment {
    pub name: String,
    pub node: usize,
    pub phase: Phase,
}

/// Validated radial network. Node 0 is the slack bus.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridModel {
    nominal_v: f64,
    nodes: Vec<String>,
    lines: Vec<Line>,
    loads: Vec<Load>,
    stations: Vec<StationAttachment>,
    #[serde(skip)]
    feeder: Vec<Option<usize>>,
    #[serde(skip)]
    order: Vec<usize>,
}

fn locate(src: Option<&str>, s: &Spanned<String>) -> Option<Location> {
    src.map(|src| Location::from_offset(src, s.span().start))
}

/// Parses and validates a grid spec.
pub fn load_grid(src: &str) -> Result<GridModel, GridError> {
    let spec: GridSpec = toml::from_str(src).map_err(|e| GridError::Parse {
        location: e.span().map(|s| Location::from_offset(src, s.start)),
        message: e.message().to_string(),
    })?;
    GridModel::build(&spec, Some(src))
}

impl GridModel {
    /// The bundled two-feeder proof-of-concept grid.
    pub fn two_feeder() -> GridModel {
        load_grid(TWO_FEEDER_GRID).expect("bundled grid spec is valid")
    }

    pub fn two_feeder_source() -> &'static str {
        TWO_FEEDER_GRID
    }

    pub fn from_spec(spec: &GridSpec) -> Result<GridModel, GridError> {
        Self::build(spec, None)
    }

    fn build(spec: &GridSpec, src: Option<&str>) -> Result<GridModel, GridError> {
        if spec.schema != GRID_SCHEMA {
            return Err(GridError::Schema(spec.schema));
        }
        if !(spec.nominal_v.is_finite() && spec.nominal_v > 0.0) {
            return Err(GridError::Invalid(format!(
                "nominal_v must be positive, got {}",
                spec.nominal_v
            )));
        }
        if !is_token(&spec.slack) {
            return Err(GridError::Invalid(format!("bad slack name {:?}", spec.slack)));
        }

        let mut nodes = vec![spec.slack.clone()];
        let node_index = |name: &Spanned<String>, nodes: &mut Vec<String>| -> Result<usize, GridError> {
            if !is_token(name.get_ref()) {
                return Err(GridError::Invalid(format!("bad node name {:?}", name.get_ref())));
            }
            Ok(match nodes.iter().position(|n| n == name.get_ref()) {
                Some(i) => i,
                None => {
                    nodes.push(name.get_ref().clone());
                    nodes.len() - 1
                }
            })
        };

        let mut lines = Vec::with_capacity(spec.lines.len());
        for l in &spec.lines {
            let from = node_index(&l.from, &mut nodes)?;
            let to = node_index(&l.to, &mut nodes)?;
            let ok = l.r_ohm.is_finite()
                && l.x_ohm.is_finite()
                && l.r_ohm >= 0.0
                && l.x_ohm >= 0.0
                && (l.r_ohm > 0.0 || l.x_ohm > 0.0);
            if !ok {
                return Err(GridError::Impedance {
                    line: l.name.clone(),
                    r_ohm: l.r_ohm,
                    x_ohm: l.x_ohm,
                });
            }
            if from == to {
                return Err(GridError::Cycle {
                    line: l.name.clone(),
                    location: locate(src, &l.to),
                });
            }
            lines.push(Line {
                name: l.name.clone(),
                from,
                to,
                r_ohm: l.r_ohm,
                x_ohm: l.x_ohm,
            });
        }

        // Union-find: a line joining two already-connected nodes closes a cycle.
        let mut root: Vec<usize> = (0..nodes.len()).collect();
        fn find(root: &mut [usize], mut i: usize) -> usize {
            while root[i] != i {
                root[i] = root[root[i]];
                i = root[i];
            }
            i
        }
        for (line, l) in lines.iter().zip(&spec.lines) {
            let (a, b) = (find(&mut root, line.from), find(&mut root, line.to));
            if a == b {
                return Err(GridError::Cycle {
                    line: line.name.clone(),
                    location: locate(src, &l.from),
                });
            }
            root[a] = b;
        }
        let slack_root = find(&mut root, 0);
        for i in 1..nodes.len() {
            if find(&mut root, i) != slack_root {
                return Err(GridError::Disconnected(nodes[i].clone()));
            }
        }

        // Orient the tree away from the slack bus.
        let mut feeder = vec![None; nodes.len()];
        let mut order = vec![0usize];
        let mut visited = vec![false; nodes.len()];
        visited[0] = true;
        let mut head = 0;
        while head < order.len() {
            let n = order[head];
            head += 1;
            for (li, l) in lines.iter().enumerate() {
                let other = if l.from == n {
                    l.to
                } else if l.to == n {
                    l.from
                } else {
                    continue;
                };
                if !visited[other] {
                    visited[other] = true;
                    feeder[other] = Some(li);
                    order.push(other);
                }
            }
        }

        let lookup = |name: &Spanned<String>| -> Result<usize, GridError> {
            nodes
                .iter()
                .position(|n| n == name.get_ref())
                .ok_or_else(|| GridError::UnknownNode {
                    node: name.get_ref().clone(),
                    location: locate(src, name),
                })
        };

        let mut loads = Vec::with_capacity(spec.loads.len());
        for l in &spec.loads {
            if !is_token(&l.name) {
                return Err(GridError::Invalid(format!("bad load name {:?}", l.name)));
            }
            if loads.iter().any(|x: &Load| x.name == l.name) {
                return Err(GridError::Invalid(format!("duplicate load {:?}", l.name)));
            }
            if !(l.p_w.is_finite() && l.q_var.is_finite()) {
                return Err(GridError::Invalid(format!("load {:?} has non-finite power", l.name)));
            }
            loads.push(Load {
                name: l.name.clone(),
                node: lookup(&l.node)?,
                phase: l.phase,
                p_w: l.p_w,
                q_var: l.q_var,
            });
        }

        let mut stations = Vec::with_capacity(spec.stations.len());
        for s in &spec.stations {
            if !is_token(&s.name) {
                return Err(GridError::Invalid(format!("bad station name {:?}", s.name)));
            }
            if stations.iter().any(|x: &StationAttachment| x.name == s.name) {
                return Err(GridError::Invalid(format!("duplicate station {:?}", s.name)));
            }
            stations.push(StationAttachment {
                name: s.name.clone(),
                node: lookup(&s.node)?,
                phase: s.phase,
            });
        }

        Ok(GridModel {
            nominal_v: spec.nominal_v,
            nodes,
            lines,
            loads,
            stations,
            feeder,
            order,
        })
    }

    pub fn to_spec(&self) -> GridSpec {
        let name = |i: usize| Spanned::new(0..0, self.nodes[i].clone());
        GridSpec {
            schema: GRID_SCHEMA,
            nominal_v: self.nominal_v,
            slack: self.nodes[0].clone(),
            lines: self
                .lines
                .iter()
                .map(|l| LineSpec {
                    name: l.name.clone(),
                    from: name(l.from),
                    to: name(l.to),
                    r_ohm: l.r_ohm,
                    x_ohm: l.x_ohm,
                })
                .collect(),
            loads: self
                .loads
                .iter()
                .map(|l| LoadSpec {
                    name: l.name.clone(),
                    node: name(l.node),
                    phase: l.phase,
                    p_w: l.p_w,
                    q_var: l.q_var,
                })
                .collect(),
            stations: self
                .stations
                .iter()
                .map(|s| StationSpec {
                    name: s.name.clone(),
                    node: name(s.node),
                    phase: s.phase,
                })
                .collect(),
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(&self.to_spec()).expect("grid spec serializes")
    }

    /// Copy with every line impedance multiplied by `factor`.
    pub fn with_line_scale(&self, factor: f64) -> GridModel {
        let mut g = self.clone();
        for l in &mut g.lines {
            l.r_ohm *= factor;
            l.x_ohm *= factor;
        }
        g
    }

    pub fn with_line_impedance(&self, line: usize, r_ohm: f64, x_ohm: f64) -> GridModel {
        let mut g = self.clone();
        g.lines[line].r_ohm = r_ohm;
        g.lines[line].x_ohm = x_ohm;
        g
    }

    pub fn nominal_v(&self) -> f64 {
        self.nominal_v
    }

    pub fn slack(&self) -> &str {
        &self.nodes[0]
    }

    pub fn nodes(&self) -> &[String] {
        &self.nodes
    }

    pub fn node_index(&self, name: &str) -> Option<usize> {
        self.nodes.iter().position(|n| n == name)
    }

    pub fn lines(&self) -> &[Line] {
        &self.lines
    }

    pub fn loads(&self) -> &[Load] {
        &self.loads
    }

    pub fn stations(&self) -> &[StationAttachment] {
        &self.stations
    }

    pub fn station(&self, name: &str) -> Option<&StationAttachment> {
        self.stations.iter().find(|s| s.name == name)
    }

    /// Line feeding `node` from the slack side; `None` for the slack bus.
    pub fn feeder_line(&self, node: usize) -> Option<usize> {
        self.feeder[node]
    }

    /// Upstream neighbour of `node`.
    pub fn parent(&self, node: usize) -> Option<usize> {
        self.feeder[node].map(|li| {
            let l = &self.lines[li];
            if l.to == node {
                l.from
            } else {
                l.to
            }
        })
    }

    /// Nodes in breadth-first order from the slack bus.
    pub fn order(&self) -> &[usize] {
        &self.order
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const TWO_BUS: &str = r#"
schema = 1
nominal_v = 230.0
slack = "slack"

[[line]]
name = "l1"
from = "slack"
to = "n1"
r_ohm = 0.4
x_ohm = 0.25
"#;

    #[test]
    fn bundled_grid_layout() {
        let g = GridModel::two_feeder();
        assert_eq!(g.nodes().len(), 3);
        assert_eq!(g.loads().len(), 4);
        let cs: Vec<_> = g
            .stations()
            .iter()
            .map(|s| (s.name.as_str(), g.nodes()[s.node].as_str(), s.phase.number()))
            .collect();
        assert_eq!(cs, [("CS1", "node1", 1), ("CS2", "node1", 1), ("CS3", "node2", 1)]);
    }

    #[test]
    fn two_bus_is_valid() {
        let g = load_grid(TWO_BUS).unwrap();
        assert_eq!(g.nodes(), ["slack", "n1"]);
        assert_eq!(g.parent(1), Some(0));
        assert_eq!(g.parent(0), None);
    }

    #[test]
    fn cycle_is_rejected_with_location() {
        let src = format!(
            "{TWO_BUS}\n[[line]]\nname = \"l2\"\nfrom = \"n1\"\nto = \"n2\"\nr_ohm = 0.1\nx_ohm = 0.1\n\n[[line]]\nname = \"l3\"\nfrom = \"n2\"\nto = \"slack\"\nr_ohm = 0.1\nx_ohm = 0.1\n"
        );
        match load_grid(&src) {
            Err(GridError::Cycle { line, location: Some(loc) }) => {
                assert_eq!(line, "l3");
                assert_eq!(loc.line, 22);
            }
            other => panic!("expected cycle, got {other:?}"),
        }
    }

    #[test]
    fn disconnected_node_is_rejected() {
        let src = format!(
            "{TWO_BUS}\n[[line]]\nname = \"l2\"\nfrom = \"a\"\nto = \"b\"\nr_ohm = 0.1\nx_ohm = 0.1\n"
        );
        assert!(matches!(load_grid(&src), Err(GridError::Disconnected(_))));
    }

    #[test]
    fn unknown_station_node_names_offender() {
        let src = format!("{TWO_BUS}\n[[station]]\nname = \"CS9\"\nnode = \"nowhere\"\nphase = 1\n");
        let err = load_grid(&src).unwrap_err();
        assert!(err.to_string().contains("nowhere"), "{err}");
        assert!(matches!(err, GridError::UnknownNode { location: Some(_), .. }));
    }

    #[test]
    fn impedance_and_phase_checks() {
        let zero = TWO_BUS.replace("0.4", "0.0").replace("0.25", "0.0");
        assert!(matches!(load_grid(&zero), Err(GridError::Impedance { .. })));
        let neg = TWO_BUS.replace("0.4", "-0.1");
        assert!(matches!(load_grid(&neg), Err(GridError::Impedance { .. })));
        let src = format!("{TWO_BUS}\n[[load]]\nname = \"h\"\nnode = \"n1\"\nphase = 4\np_w = 1.0\n");
        assert!(matches!(load_grid(&src), Err(GridError::Parse { .. })));
    }

    #[test]
    fn toml_round_trip() {
        let g = GridModel::two_feeder();
        assert_eq!(load_grid(&g.to_toml()).unwrap(), g);
    }
}
