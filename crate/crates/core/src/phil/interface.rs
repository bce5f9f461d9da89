use crate::bus::{Millis, Quality, Sample};
use crate::fleet::EvSession;

/// Voltage path of the ideal transformer method: sample-and-hold of the
/// coupling-node voltage, falling back to nominal before the first sample.
#[derive(Debug, Clone)]
pub struct ItmForward {
    nominal_v: f64,
    held: Option<f64>,
}

impl ItmForward {
    pub fn new(nominal_v: f64) -> Self {
        ItmForward { nominal_v, held: None }
    }

    pub fn reference(&mut self, sample: &Sample) -> f64 {
        if sample.quality != Quality::Invalid {
            if let Some(v) = sample.real() {
                self.held = Some(v);
            }
        }
        self.held.unwrap_or(self.nominal_v)
    }

    pub fn has_sample(&self) -> bool {
        self.held.is_some()
    }
}

/// Current path: device current at the amplifier output, and the power
/// injection the grid sees for it.
pub fn itm_feedback(v_out: f64, p_drawn_w: f64) -> (f64, f64) {
    if v_out > 0.0 && v_out.is_finite() {
        (p_drawn_w / v_out, p_drawn_w)
    } else {
        (0.0, 0.0)
    }
}

/// Charger and EV behind the amplifier.
///
/// The charger revises its power setpoint once per `setpoint_ms` from the
/// voltage it sees; between revisions it draws the setpoint, capped by the
/// pilot current at the present voltage.
#[derive(Debug, Clone)]
pub struct DeviceUnderTest {
    pub session: Option<EvSession>,
    setpoint_ms: Millis,
    start_of_day_ms: Millis,
    setpoint_w: f64,
    pub current_limited: bool,
    pub delivered_wh: f64,
}

impl DeviceUnderTest {
    pub fn new(session: Option<EvSession>, setpoint_ms: Millis, start_of_day_ms: Millis) -> Self {
        DeviceUnderTest {
            session,
            setpoint_ms,
            start_of_day_ms,
            setpoint_w: 0.0,
            current_limited: false,
            delivered_wh: 0.0,
        }
    }

    pub fn is_setpoint_tick(&self, now: Millis) -> bool {
        now.is_multiple_of(self.setpoint_ms)
    }

    /// Draws power at `v_out` for `dt_s` and returns it.
    pub fn step(&mut self, now: Millis, v_out: f64, limit_a: f64, dt_s: f64) -> f64 {
        let Some(s) = self.session.as_mut() else { return 0.0 };
        if now.is_multiple_of(self.setpoint_ms) {
            s.plug_in_if_due(self.start_of_day_ms + now);
            let out = s.demand(v_out, limit_a);
            self.setpoint_w = out.p_drawn_w;
            self.current_limited = out.current_limited;
        }
        if !s.is_charging() || !(v_out > 0.0) {
            return 0.0;
        }
        let p = self.setpoint_w.min(v_out * limit_a.max(0.0));
        s.absorb(p, dt_s);
        self.delivered_wh += p * dt_s / 3600.0;
        p
    }
}
