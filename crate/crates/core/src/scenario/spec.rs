use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use toml::Spanned;

use super::ScenarioError;
use crate::bus::{is_token, Millis};
use crate::fleet::{EvParams, Variant};
use crate::grid::{load_grid, GridModel, Location, DEFAULT_BAND};
use crate::phil::AmplifierSpec;

/// Scenario file schema version understood by this build.
pub const SCENARIO_SCHEMA: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Setup {
    /// Every station simulated, the coupled one included.
    PureSoftware,
    /// Coupled station behind the loop, driven by the lab EV emulator.
    HilEmulatedEv,
    /// Coupled station behind the loop, driven by the reference EV.
    HilRealEvStandin,
}

impl Setup {
    pub fn is_hil(self) -> bool {
        self != Setup::PureSoftware
    }

    /// Device variant at the coupled station.
    pub fn coupled_variant(self) -> Variant {
        match self {
            Setup::PureSoftware => Variant::Simulated,
            Setup::HilEmulatedEv => Variant::Emulated,
            Setup::HilRealEvStandin => Variant::Reference,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    Accelerated,
    WallClock,
}

/// Step sizes of the participants, in ms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleSpec {
    pub loads_ms: Millis,
    pub evse_ms: Millis,
    pub grid_ms: Millis,
    pub monitor_ms: Millis,
    pub operator_ms: Millis,
    pub rt_ms: Millis,
}

impl Default for ScheduleSpec {
    fn default() -> Self {
        ScheduleSpec {
            loads_ms: 1000,
            evse_ms: 1000,
            grid_ms: 1000,
            monitor_ms: 1000,
            operator_ms: 60_000,
            rt_ms: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StationEv {
    pub station: String,
    pub variant: Variant,
    pub power_scale: f64,
    pub params: EvParams,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FleetSpec {
    /// Arrival window in ms of the day.
    pub window_ms: (Millis, Millis),
    pub arrival_soc: (f64, f64),
    /// Station wired through the loop in the hardware setups.
    pub coupled_station: String,
    pub stations: Vec<StationEv>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AmplifierConfig {
    pub spec: AmplifierSpec,
    pub compute_delay_ms: f64,
    /// Scenario times at which a latched trip is cleared.
    pub trip_resets_s: Vec<f64>,
}

/// Validated scenario.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScenarioSpec {
    #[serde(skip)]
    pub name: String,
    pub setup: Setup,
    pub mode: Mode,
    #[serde(skip)]
    pub grid_path: PathBuf,
    pub grid: GridModel,
    pub seed: u64,
    pub start_of_day_ms: Millis,
    pub end_of_day_ms: Millis,
    pub staleness_ms: Millis,
    pub band: f64,
    #[serde(skip)]
    pub trace: bool,
    pub schedule: ScheduleSpec,
    pub fleet: FleetSpec,
    pub amplifier: Option<AmplifierConfig>,
    #[serde(skip)]
    pub output: Option<PathBuf>,
}

impl ScenarioSpec {
    pub fn horizon_ms(&self) -> Millis {
        self.end_of_day_ms - self.start_of_day_ms
    }

    /// Content hash over every field that affects the results.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("scenario serializes");
        format!("{:x}", Sha256::digest(&json))
    }

    pub fn station_ev(&self, station: &str) -> Option<&StationEv> {
        self.fleet.stations.iter().find(|s| s.station == station)
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    schema: Spanned<u32>,
    name: String,
    setup: Spanned<Setup>,
    #[serde(default)]
    mode: Mode,
    grid: Spanned<String>,
    seed: u64,
    start: Spanned<String>,
    end: Spanned<String>,
    #[serde(default = "default_staleness")]
    staleness_ms: Millis,
    #[serde(default = "default_band")]
    band: Spanned<f64>,
    #[serde(default)]
    trace: bool,
    output: Option<String>,
    #[serde(default = "default_schedule")]
    schedule: Spanned<ScheduleSpec>,
    fleet: RawFleet,
    amplifier: Option<Spanned<RawAmplifier>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawAmplifier {
    gain: f64,
    tau_s: f64,
    delay_s: f64,
    v_limit_v: f64,
    i_limit_a: f64,
    p_limit_w: f64,
    #[serde(default)]
    compute_delay_ms: f64,
    #[serde(default)]
    trip_resets_s: Vec<f64>,
}

fn default_staleness() -> Millis {
    5000
}

fn default_schedule() -> Spanned<ScheduleSpec> {
    Spanned::new(0..0, ScheduleSpec::default())
}

fn default_band() -> Spanned<f64> {
    Spanned::new(0..0, DEFAULT_BAND)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawFleet {
    window: Option<Spanned<[String; 2]>>,
    #[serde(default = "default_arrival_soc")]
    arrival_soc: Spanned<[f64; 2]>,
    coupled_station: Option<Spanned<String>>,
    #[serde(default, rename = "station")]
    stations: Vec<RawStation>,
}

fn default_arrival_soc() -> Spanned<[f64; 2]> {
    Spanned::new(0..0, [0.3, 0.6])
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawStation {
    name: Spanned<String>,
    variant: Option<Spanned<Variant>>,
    power_scale: Option<f64>,
    p_rated_w: Option<f64>,
    capacity_wh: Option<f64>,
    taper_start_soc: Option<f64>,
    target_soc: Option<f64>,
    min_current_a: Option<f64>,
}

impl RawStation {
    fn params(&self) -> EvParams {
        let d = EvParams::default();
        EvParams {
            p_rated_w: self.p_rated_w.unwrap_or(d.p_rated_w),
            capacity_wh: self.capacity_wh.unwrap_or(d.capacity_wh),
            taper_start_soc: self.taper_start_soc.unwrap_or(d.taper_start_soc),
            target_soc: self.target_soc.unwrap_or(d.target_soc),
            min_current_a: self.min_current_a.unwrap_or(d.min_current_a),
        }
    }
}

struct Ctx<'a> {
    src: &'a str,
    file: &'a Path,
}

impl Ctx<'_> {
    fn err<T>(&self, span: std::ops::Range<usize>, message: impl Into<String>) -> Result<T, ScenarioError> {
        let location = (span.end > 0).then(|| Location::from_offset(self.src, span.start));
        Err(ScenarioError::Config {
            file: self.file.to_path_buf(),
            location,
            message: message.into(),
        })
    }
}

/// Parses `HH:MM` or `HH:MM:SS` into ms of the day.
pub fn parse_time_of_day(s: &str) -> Option<Millis> {
    let parts: Vec<&str> = s.split(':').collect();
    if !(2..=3).contains(&parts.len()) {
        return None;
    }
    let mut nums = [0u64; 3];
    for (i, p) in parts.iter().enumerate() {
        if p.len() != 2 || !p.bytes().all(|b| b.is_ascii_digit()) {
            return None;
        }
        nums[i] = p.parse().ok()?;
    }
    let [h, m, sec] = nums;
    if h > 24 || m > 59 || sec > 59 || (h == 24 && (m > 0 || sec > 0)) {
        return None;
    }
    Some(((h * 60 + m) * 60 + sec) * 1000)
}

/// Reads and validates a scenario file. The grid path is resolved relative
/// to the scenario file.
pub fn parse_scenario(path: &Path) -> Result<ScenarioSpec, ScenarioError> {
    let src = fs::read_to_string(path).map_err(|source| ScenarioError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_scenario_str(&src, path)
}

/// Parses scenario text as if it had been read from `path`.
pub fn parse_scenario_str(src: &str, path: &Path) -> Result<ScenarioSpec, ScenarioError> {
    let cx = Ctx { src, file: path };
    let raw: RawScenario = toml::from_str(src).map_err(|e| ScenarioError::Config {
        file: path.to_path_buf(),
        location: e.span().map(|s| Location::from_offset(src, s.start)),
        message: e.message().to_string(),
    })?;

    if *raw.schema.get_ref() != SCENARIO_SCHEMA {
        return cx.err(
            raw.schema.span(),
            format!("unsupported scenario schema {}, expected {SCENARIO_SCHEMA}", raw.schema.get_ref()),
        );
    }

    let base = path.parent().unwrap_or(Path::new("."));
    let grid_path = base.join(raw.grid.get_ref());
    let grid_src = match fs::read_to_string(&grid_path) {
        Ok(s) => s,
        Err(e) => return cx.err(raw.grid.span(), format!("cannot read grid {}: {e}", grid_path.display())),
    };
    let grid = load_grid(&grid_src).map_err(|source| ScenarioError::Grid {
        file: grid_path.clone(),
        source,
    })?;

    let time = |s: &Spanned<String>| match parse_time_of_day(s.get_ref()) {
        Some(t) => Ok(t),
        None => cx.err(s.span(), format!("bad time of day {:?}, expected HH:MM[:SS]", s.get_ref())),
    };
    let start = time(&raw.start)?;
    let end = time(&raw.end)?;
    if end < start {
        return cx.err(raw.end.span(), "scenario ends before it starts");
    }

    let band = *raw.band.get_ref();
    if !(band > 0.0 && band < 0.5) {
        return cx.err(raw.band.span(), format!("voltage band must lie in (0, 0.5), got {band}"));
    }

    let schedule = raw.schedule.get_ref().clone();
    let steps = [
        schedule.loads_ms,
        schedule.evse_ms,
        schedule.grid_ms,
        schedule.monitor_ms,
        schedule.operator_ms,
        schedule.rt_ms,
    ];
    if steps.contains(&0) {
        return cx.err(raw.schedule.span(), "step sizes must be positive");
    }
    if raw.setup.get_ref().is_hil() && !schedule.evse_ms.is_multiple_of(schedule.rt_ms) {
        return cx.err(raw.schedule.span(), "evse_ms must be a multiple of rt_ms");
    }

    // Fleet.
    let window_ms = match &raw.fleet.window {
        Some(w) => {
            let [a, b] = w.get_ref();
            let parse = |s: &str| parse_time_of_day(s);
            match (parse(a), parse(b)) {
                (Some(a), Some(b)) if a < b => (a, b),
                _ => return cx.err(w.span(), format!("bad arrival window [{a:?}, {b:?}]")),
            }
        }
        None => (start, end),
    };
    let [lo, hi] = *raw.fleet.arrival_soc.get_ref();
    if !(0.0 <= lo && lo <= hi && hi <= 1.0) {
        return cx.err(raw.fleet.arrival_soc.span(), format!("bad arrival_soc range [{lo}, {hi}]"));
    }

    let coupled_station = match &raw.fleet.coupled_station {
        Some(s) => {
            if grid.station(s.get_ref()).is_none() {
                return cx.err(s.span(), format!("unknown charging station {:?}", s.get_ref()));
            }
            s.get_ref().clone()
        }
        None => match grid.stations().first() {
            Some(s) => s.name.clone(),
            None => return cx.err(raw.grid.span(), "grid has no charging stations"),
        },
    };

    let setup = *raw.setup.get_ref();
    let mut stations: Vec<StationEv> = Vec::new();
    for st in &raw.fleet.stations {
        let name = st.name.get_ref();
        if grid.station(name).is_none() {
            return cx.err(st.name.span(), format!("unknown charging station {name:?}"));
        }
        if stations.iter().any(|s| &s.station == name) {
            return cx.err(st.name.span(), format!("station {name:?} listed twice"));
        }
        let expected = if *name == coupled_station {
            setup.coupled_variant()
        } else {
            Variant::Simulated
        };
        if let Some(v) = &st.variant {
            if *v.get_ref() != expected {
                return cx.err(
                    v.span(),
                    format!("station {name:?} runs a {expected:?} device in this setup, not {:?}", v.get_ref()),
                );
            }
        }
        let params = st.params();
        if let Err(e) = params.validate() {
            return cx.err(st.name.span(), format!("station {name:?}: {e}"));
        }
        let power_scale = st.power_scale.unwrap_or(expected.default_power_scale());
        if !(power_scale.is_finite() && power_scale > 0.0) {
            return cx.err(st.name.span(), format!("station {name:?}: power_scale must be positive"));
        }
        stations.push(StationEv {
            station: name.clone(),
            variant: expected,
            power_scale,
            params,
        });
    }
    if !stations.is_empty() && (window_ms.0 < start || window_ms.1 > end) {
        let span = raw.fleet.window.as_ref().map_or(raw.end.span(), |w| w.span());
        return cx.err(span, "arrival window is not covered by the scenario horizon");
    }

    // Amplifier.
    let amplifier = match (&raw.amplifier, setup.is_hil()) {
        (None, true) => return cx.err(raw.setup.span(), format!("setup {setup:?} needs an [amplifier] block")),
        (Some(a), false) => return cx.err(a.span(), "PURE_SOFTWARE takes no [amplifier] block"),
        (None, false) => None,
        (Some(a), true) => {
            let r = a.get_ref();
            let cfg = AmplifierConfig {
                spec: AmplifierSpec {
                    gain: r.gain,
                    tau_s: r.tau_s,
                    delay_s: r.delay_s,
                    v_limit_v: r.v_limit_v,
                    i_limit_a: r.i_limit_a,
                    p_limit_w: r.p_limit_w,
                },
                compute_delay_ms: r.compute_delay_ms,
                trip_resets_s: r.trip_resets_s.clone(),
            };
            if let Err(e) = cfg.spec.delay_steps(schedule.rt_ms) {
                return cx.err(a.span(), e.to_string());
            }
            if !(cfg.compute_delay_ms.is_finite() && cfg.compute_delay_ms >= 0.0) {
                return cx.err(a.span(), "compute_delay_ms must be >= 0");
            }
            if cfg.trip_resets_s.iter().any(|t| !(t.is_finite() && *t >= 0.0)) {
                return cx.err(a.span(), "trip_resets_s must be non-negative times");
            }
            Some(cfg)
        }
    };

    if !is_token(&raw.name) {
        return cx.err(0..1, format!("scenario name {:?} must be a plain token", raw.name));
    }

    Ok(ScenarioSpec {
        name: raw.name,
        setup,
        mode: raw.mode,
        grid_path,
        grid,
        seed: raw.seed,
        start_of_day_ms: start,
        end_of_day_ms: end,
        staleness_ms: raw.staleness_ms,
        band,
        trace: raw.trace,
        schedule,
        fleet: FleetSpec {
            window_ms,
            arrival_soc: (lo, hi),
            coupled_station,
            stations,
        },
        amplifier,
        output: raw.output.map(|o| base.join(o)),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bundled(name: &str) -> PathBuf {
        Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios").join(name)
    }

    fn parse_edit(name: &str, edit: impl FnOnce(String) -> String) -> Result<ScenarioSpec, ScenarioError> {
        let path = bundled(name);
        let src = edit(fs::read_to_string(&path).unwrap());
        parse_scenario_str(&src, &path)
    }

    fn message(r: Result<ScenarioSpec, ScenarioError>) -> (String, Option<Location>) {
        match r {
            Err(ScenarioError::Config { message, location, .. }) => (message, location),
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn bundled_pure_scenario() {
        let s = parse_scenario(&bundled("evening_pure.scn")).unwrap();
        assert_eq!(s.setup, Setup::PureSoftware);
        assert_eq!(s.fleet.stations.len(), 3);
        assert_eq!((s.start_of_day_ms, s.end_of_day_ms), (63_000_000, 75_600_000));
        assert_eq!(s.horizon_ms(), 12_600_000);
        assert!(s.amplifier.is_none());
        assert!(s.fleet.stations.iter().all(|e| e.variant == Variant::Simulated && e.power_scale == 0.9));
    }

    #[test]
    fn bundled_hil_scenarios() {
        let e = parse_scenario(&bundled("evening_hil_emulated.scn")).unwrap();
        assert_eq!(e.setup, Setup::HilEmulatedEv);
        assert_eq!(e.station_ev("CS1").unwrap().variant, Variant::Emulated);
        let r = parse_scenario(&bundled("evening_hil_real.scn")).unwrap();
        assert_eq!(r.setup, Setup::HilRealEvStandin);
        assert_eq!(r.station_ev("CS1").unwrap().power_scale, 1.0);
        assert_eq!(r.station_ev("CS2").unwrap().variant, Variant::Simulated);
        assert_eq!(r.amplifier.as_ref().unwrap().spec, AmplifierSpec::ideal());
    }

    #[test]
    fn hil_without_amplifier_is_rejected() {
        let (msg, loc) = message(parse_edit("evening_hil_real.scn", |s| {
            let i = s.find("[amplifier]").unwrap();
            s[..i].to_string()
        }));
        assert!(msg.contains("amplifier"), "{msg}");
        assert!(loc.is_some());
    }

    #[test]
    fn dangling_station_is_named() {
        let (msg, loc) = message(parse_edit("evening_pure.scn", |s| s.replace("\"CS3\"", "\"CS9\"")));
        assert!(msg.contains("CS9"), "{msg}");
        assert!(loc.unwrap().line > 1);
    }

    #[test]
    fn window_outside_horizon_is_rejected() {
        let (msg, _) = message(parse_edit("evening_pure.scn", |s| s.replace("end = \"21:00\"", "end = \"20:00\"")));
        assert!(msg.contains("window"), "{msg}");
    }

    #[test]
    fn amplifier_on_pure_setup_is_rejected() {
        let r = parse_edit("evening_pure.scn", |s| format!("{s}\n[amplifier]\ngain = 1.0\ntau_s = 0.0\ndelay_s = 0.0\nv_limit_v = 400.0\ni_limit_a = 63.0\np_limit_w = 20000.0\n"));
        assert!(message(r).0.contains("PURE_SOFTWARE"));
    }

    #[test]
    fn wrong_variant_is_rejected() {
        let r = parse_edit("evening_hil_real.scn", |s| {
            s.replacen("name = \"CS1\"", "name = \"CS1\"\nvariant = \"SIMULATED\"", 1)
        });
        let (msg, loc) = message(r);
        assert!(msg.contains("Reference"), "{msg}");
        assert!(loc.is_some());
    }

    #[test]
    fn syntax_errors_carry_location() {
        let (_, loc) = message(parse_edit("evening_pure.scn", |s| s.replace("seed =", "seed == ")));
        assert!(loc.is_some());
    }

    #[test]
    fn time_of_day() {
        assert_eq!(parse_time_of_day("17:30"), Some(63_000_000));
        assert_eq!(parse_time_of_day("21:00:30"), Some(75_630_000));
        assert_eq!(parse_time_of_day("24:00"), Some(86_400_000));
        for bad in ["7:30", "17:60", "25:00", "17-30", "", "17:30:00:00"] {
            assert_eq!(parse_time_of_day(bad), None, "{bad}");
        }
    }

    #[test]
    fn hash_tracks_semantic_fields() {
        let base = parse_scenario(&bundled("evening_pure.scn")).unwrap();
        let h = base.hash();
        let mut same = base.clone();
        same.output = Some("elsewhere".into());
        same.trace = true;
        same.name = "renamed".into();
        assert_eq!(same.hash(), h);

        let mutations: Vec<Box<dyn Fn(&mut ScenarioSpec)>> = vec![
            Box::new(|s| s.seed += 1),
            Box::new(|s| s.mode = Mode::WallClock),
            Box::new(|s| s.setup = Setup::HilEmulatedEv),
            Box::new(|s| s.start_of_day_ms += 1000),
            Box::new(|s| s.end_of_day_ms += 1000),
            Box::new(|s| s.staleness_ms += 1),
            Box::new(|s| s.band = 0.08),
            Box::new(|s| s.grid = s.grid.with_line_scale(1.01)),
            Box::new(|s| s.schedule.grid_ms = 500),
            Box::new(|s| s.schedule.rt_ms = 20),
            Box::new(|s| s.fleet.window_ms.0 += 1),
            Box::new(|s| s.fleet.arrival_soc.1 = 0.7),
            Box::new(|s| s.fleet.coupled_station = "CS2".into()),
            Box::new(|s| s.fleet.stations[0].power_scale = 1.0),
            Box::new(|s| s.fleet.stations[1].params.capacity_wh = 50_000.0),
            Box::new(|s| s.fleet.stations[2].params.taper_start_soc = 0.7),
            Box::new(|s| s.fleet.stations.truncate(2)),
            Box::new(|s| {
                s.amplifier = Some(AmplifierConfig {
                    spec: AmplifierSpec::ideal(),
                    compute_delay_ms: 0.0,
                    trip_resets_s: vec![],
                })
            }),
        ];
        for (i, m) in mutations.iter().enumerate() {
            let mut s = base.clone();
            m(&mut s);
            assert_ne!(s.hash(), h, "mutation {i} left the hash unchanged");
        }
    }
}
