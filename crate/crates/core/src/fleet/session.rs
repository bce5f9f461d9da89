use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::FleetError;
use crate::bus::{Millis, Quality};

/// Which device a session stands for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Variant {
    /// The physical EV of the lab setup.
    Reference,
    /// Lab emulator standing in for an EV.
    Emulated,
    /// Purely simulated EV model.
    Simulated,
}

impl Variant {
    /// Offset carried by the non-reference variants.
    pub const MODEL_POWER_SCALE: f64 = 0.9;

    pub fn default_power_scale(self) -> f64 {
        match self {
            Variant::Reference => 1.0,
            Variant::Emulated | Variant::Simulated => Self::MODEL_POWER_SCALE,
        }
    }
}

/// Battery and charger parameters shared by sessions of one station.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvParams {
    #[serde(default = "EvParams::default_p_rated")]
    pub p_rated_w: f64,
    #[serde(default = "EvParams::default_capacity")]
    pub capacity_wh: f64,
    #[serde(default = "EvParams::default_taper_start")]
    pub taper_start_soc: f64,
    #[serde(default = "EvParams::default_target")]
    pub target_soc: f64,
    /// Charging stops once the tapered demand falls below this current.
    #[serde(default = "EvParams::default_min_current")]
    pub min_current_a: f64,
}

impl EvParams {
    fn default_p_rated() -> f64 {
        7200.0
    }
    fn default_capacity() -> f64 {
        40_000.0
    }
    fn default_taper_start() -> f64 {
        0.8
    }
    fn default_target() -> f64 {
        0.9
    }
    fn default_min_current() -> f64 {
        6.0
    }

    pub fn validate(&self) -> Result<(), FleetError> {
        let bad = |what: &str, v: f64| Err(FleetError::Param(format!("{what} = {v}")));
        if !(self.p_rated_w.is_finite() && self.p_rated_w > 0.0) {
            return bad("p_rated_w", self.p_rated_w);
        }
        if !(self.capacity_wh.is_finite() && self.capacity_wh > 0.0) {
            return bad("capacity_wh", self.capacity_wh);
        }
        if !(self.target_soc > 0.0 && self.target_soc <= 1.0) {
            return bad("target_soc", self.target_soc);
        }
        if !(self.taper_start_soc >= 0.0 && self.taper_start_soc < self.target_soc) {
            return bad("taper_start_soc", self.taper_start_soc);
        }
        if !(self.min_current_a.is_finite() && self.min_current_a >= 0.0) {
            return bad("min_current_a", self.min_current_a);
        }
        Ok(())
    }
}

impl Default for EvParams {
    fn default() -> Self {
        EvParams {
            p_rated_w: Self::default_p_rated(),
            capacity_wh: Self::default_capacity(),
            taper_start_soc: Self::default_taper_start(),
            target_soc: Self::default_target(),
            min_current_a: Self::default_min_current(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SessionState {
    Waiting,
    Charging,
    Complete,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChargeOutcome {
    pub p_drawn_w: f64,
    pub quality: Quality,
    /// The pilot current, not the battery, set the power.
    pub current_limited: bool,
}

/// One EV visit at a station.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvSession {
    pub id: String,
    pub params: EvParams,
    pub soc: f64,
    /// Milliseconds of the day.
    pub arrival_ms: Millis,
    pub variant: Variant,
    pub power_scale: f64,
    pub state: SessionState,
}

impl EvSession {
    pub fn new(id: impl Into<String>, params: EvParams, soc: f64, arrival_ms: Millis, variant: Variant) -> Self {
        EvSession {
            id: id.into(),
            params,
            soc,
            arrival_ms,
            variant,
            power_scale: variant.default_power_scale(),
            state: SessionState::Waiting,
        }
    }

    pub fn with_power_scale(mut self, scale: f64) -> Self {
        self.power_scale = scale;
        self
    }

    pub fn is_charging(&self) -> bool {
        self.state == SessionState::Charging
    }

    /// Plugs the EV in once `time_of_day_ms` reaches its arrival.
    pub fn plug_in_if_due(&mut self, time_of_day_ms: Millis) -> bool {
        if self.state == SessionState::Waiting && time_of_day_ms >= self.arrival_ms {
            self.state = if self.soc >= self.params.target_soc {
                SessionState::Complete
            } else {
                SessionState::Charging
            };
        }
        self.is_charging()
    }

    /// 1 below the taper start, linear to 0 at the target.
    pub fn taper(&self) -> f64 {
        let p = &self.params;
        if self.soc < p.taper_start_soc {
            1.0
        } else {
            ((p.target_soc - self.soc) / (p.target_soc - p.taper_start_soc)).clamp(0.0, 1.0)
        }
    }

    pub fn is_tapering(&self) -> bool {
        self.soc >= self.params.taper_start_soc
    }

    /// Battery-side demand before the pilot limit.
    pub fn p_target(&self) -> f64 {
        self.params.p_rated_w * self.power_scale * self.taper()
    }

    /// Power drawn at node voltage `v_node` under pilot current `limit_a`.
    /// Leaves the state of charge alone; ends a tapered session whose
    /// demand has fallen below the minimum charging current.
    pub fn demand(&mut self, v_node: f64, limit_a: f64) -> ChargeOutcome {
        let idle = ChargeOutcome {
            p_drawn_w: 0.0,
            quality: Quality::Good,
            current_limited: false,
        };
        if !self.is_charging() {
            return idle;
        }
        if !(v_node.is_finite() && v_node > 0.0) {
            return ChargeOutcome {
                quality: Quality::Invalid,
                ..idle
            };
        }
        let target = self.p_target();
        if self.soc >= self.params.target_soc || target < v_node * self.params.min_current_a {
            self.state = SessionState::Complete;
            return idle;
        }
        let cap = v_node * limit_a.max(0.0);
        ChargeOutcome {
            p_drawn_w: target.min(cap),
            quality: Quality::Good,
            current_limited: cap < target,
        }
    }

    /// Integrates `p_w` over `dt_s` into the state of charge.
    pub fn absorb(&mut self, p_w: f64, dt_s: f64) {
        let d = p_w * dt_s / (3600.0 * self.params.capacity_wh);
        self.soc = (self.soc + d).min(self.params.target_soc);
    }

    /// One charging step: demand at the start of the step, held for `dt_s`.
    pub fn charge_step(&mut self, dt_s: f64, v_node: f64, limit_a: f64) -> ChargeOutcome {
        let out = self.demand(v_node, limit_a);
        self.absorb(out.p_drawn_w, dt_s);
        out
    }
}

/// Arrival times of the evening window, in milliseconds of the day.
pub const EVENING_WINDOW_MS: (Millis, Millis) = (63_000_000, 75_600_000);

/// `n` arrival times drawn uniformly from `[start, end)`, sorted ascending.
pub fn schedule_arrivals(seed: u64, n: usize, window: (Millis, Millis)) -> Result<Vec<Millis>, FleetError> {
    let (start, end) = window;
    if start >= end {
        return Err(FleetError::Window { start, end });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out: Vec<Millis> = (0..n).map(|_| rng.gen_range(start..end)).collect();
    out.sort_unstable();
    Ok(out)
}

/// Arrival state of charge for `n` vehicles, uniform in `[lo, hi]`.
pub fn arrival_socs(seed: u64, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    (0..n).map(|_| rng.gen_range(lo..=hi)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn session(soc: f64, variant: Variant) -> EvSession {
        let mut s = EvSession::new("ev", EvParams::default(), soc, 0, variant);
        s.plug_in_if_due(0);
        s
    }

    #[test]
    fn rated_step_energy() {
        let mut s = session(0.5, Variant::Reference);
        let out = s.charge_step(1.0, 230.0, 40.0);
        assert_eq!(out.p_drawn_w, 7200.0);
        assert!((s.soc - 0.5 - 7200.0 / (3600.0 * 40_000.0)).abs() < 1e-15);
        assert!((s.soc - 0.5 - 5.0e-5).abs() < 1e-12);
    }

    #[test]
    fn model_variants_carry_offset() {
        let mut s = session(0.5, Variant::Simulated);
        assert_eq!(s.charge_step(1.0, 230.0, 40.0).p_drawn_w, 6480.0);
        let mut s = session(0.5, Variant::Emulated);
        assert_eq!(s.charge_step(1.0, 230.0, 40.0).p_drawn_w, 6480.0);
    }

    #[test]
    fn full_battery_draws_nothing() {
        let mut s = session(0.9, Variant::Reference);
        assert_eq!(s.state, SessionState::Complete);
        let out = s.charge_step(1.0, 230.0, 40.0);
        assert_eq!(out.p_drawn_w, 0.0);
        assert_eq!(s.soc, 0.9);
    }

    #[test]
    fn pilot_current_caps_power() {
        let mut s = session(0.5, Variant::Reference);
        let out = s.charge_step(1.0, 230.0, 16.0);
        assert_eq!(out.p_drawn_w, 230.0 * 16.0);
        assert!(out.current_limited);
    }

    #[test]
    fn dead_node_is_invalid() {
        let mut s = session(0.5, Variant::Reference);
        let out = s.charge_step(1.0, 0.0, 40.0);
        assert_eq!(out.p_drawn_w, 0.0);
        assert_eq!(out.quality, Quality::Invalid);
        assert_eq!(s.soc, 0.5);
        assert!(s.is_charging());
    }

    #[test]
    fn taper_ends_session() {
        let mut s = session(0.79, Variant::Reference);
        let mut steps = 0;
        while s.is_charging() {
            s.charge_step(1.0, 230.0, 40.0);
            steps += 1;
            assert!(steps < 20_000);
        }
        // Ends where the tapered demand drops below 6 A at 230 V.
        let cutoff = 0.9 - 0.1 * 230.0 * 6.0 / 7200.0;
        assert!(s.soc >= cutoff - 1e-4 && s.soc < 0.9, "soc {}", s.soc);
        assert_eq!(s.charge_step(1.0, 230.0, 40.0).p_drawn_w, 0.0);
    }

    #[test]
    fn waiting_until_arrival() {
        let mut s = EvSession::new("ev", EvParams::default(), 0.4, 63_500_000, Variant::Simulated);
        assert!(!s.plug_in_if_due(63_499_999));
        assert_eq!(s.charge_step(1.0, 230.0, 40.0).p_drawn_w, 0.0);
        assert!(s.plug_in_if_due(63_500_000));
    }

    #[test]
    fn arrivals_in_window() {
        assert!(schedule_arrivals(1, 0, EVENING_WINDOW_MS).unwrap().is_empty());
        for seed in 0..50 {
            let a = schedule_arrivals(seed, 3, EVENING_WINDOW_MS).unwrap();
            assert!(a.windows(2).all(|w| w[0] <= w[1]));
            assert!(a.iter().all(|&t| (63_000_000..75_600_000).contains(&t)));
            assert_eq!(a, schedule_arrivals(seed, 3, EVENING_WINDOW_MS).unwrap());
        }
        assert!(schedule_arrivals(1, 3, (5, 5)).is_err());
    }

    #[test]
    fn arrival_socs_in_range() {
        let s = arrival_socs(9, 100, 0.3, 0.6);
        assert!(s.iter().all(|x| (0.3..=0.6).contains(x)));
        assert_eq!(s, arrival_socs(9, 100, 0.3, 0.6));
    }

    proptest! {
        #[test]
        fn soc_bounded_and_monotone(
            soc0 in 0.0f64..0.95,
            v in prop::collection::vec(0.0f64..260.0, 1..400),
            limit in 0.0f64..40.0,
            dt in 0.01f64..60.0,
        ) {
            let mut s = session(soc0.min(0.9), Variant::Reference);
            let mut delivered = 0.0;
            let start = s.soc;
            for &vn in &v {
                let before = s.soc;
                let out = s.charge_step(dt, vn, limit);
                prop_assert!(s.soc >= before);
                prop_assert!(s.soc <= s.params.target_soc);
                prop_assert!(out.p_drawn_w >= 0.0 && out.p_drawn_w <= 7200.0);
                prop_assert!(out.p_drawn_w <= vn * limit + 1e-9);
                delivered += out.p_drawn_w * dt / 3600.0;
            }
            // Without the target clamp, energy in equals charge gained
            // (up to rounding of the state-of-charge sum).
            if s.soc < s.params.target_soc {
                let gained = (s.soc - start) * s.params.capacity_wh;
                prop_assert!((gained - delivered).abs() <= 1e-6, "{gained} vs {delivered}");
            }
        }
    }
}
