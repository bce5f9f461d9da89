use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use super::PhilError;
use crate::bus::Millis;

/// Power amplifier between the simulated node and the device.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AmplifierSpec {
    pub gain: f64,
    /// First-order lag time constant; 0 is unlimited bandwidth.
    pub tau_s: f64,
    /// Transport delay, a whole number of real-time steps.
    pub delay_s: f64,
    pub v_limit_v: f64,
    pub i_limit_a: f64,
    pub p_limit_w: f64,
}

impl AmplifierSpec {
    /// Unity gain, no lag, no delay, limits far beyond any LV device.
    pub fn ideal() -> Self {
        AmplifierSpec {
            gain: 1.0,
            tau_s: 0.0,
            delay_s: 0.0,
            v_limit_v: 1e9,
            i_limit_a: 1e9,
            p_limit_w: 1e12,
        }
    }

    /// Delay in rt steps, checking the spec against the step size.
    pub fn delay_steps(&self, step_ms: Millis) -> Result<usize, PhilError> {
        let ok = |x: f64| x.is_finite() && x > 0.0;
        if !ok(self.gain) {
            return Err(PhilError::Spec(format!("gain must be positive, got {}", self.gain)));
        }
        if !(self.tau_s.is_finite() && self.tau_s >= 0.0) {
            return Err(PhilError::Spec(format!("tau_s must be >= 0, got {}", self.tau_s)));
        }
        if !(ok(self.v_limit_v) && ok(self.i_limit_a) && ok(self.p_limit_w)) {
            return Err(PhilError::Spec("amplifier limits must be positive".into()));
        }
        if step_ms == 0 {
            return Err(PhilError::Spec("real-time step must be positive".into()));
        }
        if !(self.delay_s.is_finite() && self.delay_s >= 0.0) {
            return Err(PhilError::Spec(format!("delay_s must be >= 0, got {}", self.delay_s)));
        }
        let steps = self.delay_s * 1e3 / step_ms as f64;
        let k = steps.round();
        if (steps - k).abs() > 1e-9 {
            return Err(PhilError::Spec(format!(
                "delay {} s is not a whole number of {} ms steps",
                self.delay_s, step_ms
            )));
        }
        Ok(k as usize)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PhilLoopState {
    pub v_ref: f64,
    pub v_out: f64,
    /// Pending amplifier inputs, oldest first.
    pub delay_line: VecDeque<f64>,
    pub i_meas: f64,
    pub trip: bool,
}

impl PhilLoopState {
    /// At rest, with the delay line filled with zeros.
    pub fn new(spec: &AmplifierSpec, step_ms: Millis) -> Result<Self, PhilError> {
        let k = spec.delay_steps(step_ms)?;
        Ok(PhilLoopState {
            v_ref: 0.0,
            v_out: 0.0,
            delay_line: std::iter::repeat_n(0.0, k).collect(),
            i_meas: 0.0,
            trip: false,
        })
    }

    /// Clears a latched trip. The amplifier restarts from rest.
    pub fn reset(&mut self) {
        self.trip = false;
        self.v_out = 0.0;
        self.i_meas = 0.0;
        self.delay_line.iter_mut().for_each(|v| *v = 0.0);
    }
}

/// Advances the amplifier by `dt_s` toward `v_ref` and applies protection
/// against the last measured current. Returns the new output voltage.
pub fn amplifier_step(spec: &AmplifierSpec, state: &mut PhilLoopState, v_ref: f64, dt_s: f64) -> f64 {
    if !v_ref.is_finite() {
        state.trip = true;
    }
    if state.trip {
        state.v_out = 0.0;
        return 0.0;
    }
    state.v_ref = v_ref;

    let input = spec.gain * v_ref;
    let delayed = match state.delay_line.pop_front() {
        Some(oldest) => {
            state.delay_line.push_back(input);
            oldest
        }
        None => input,
    };

    let v = if spec.tau_s == 0.0 {
        delayed
    } else {
        // Exact zero-order-hold step of dv/dt = (u - v) / tau.
        let a = 1.0 - (-dt_s / spec.tau_s).exp();
        state.v_out + a * (delayed - state.v_out)
    };
    let v = v.clamp(-spec.v_limit_v, spec.v_limit_v);

    let i = state.i_meas;
    if i.abs() > spec.i_limit_a || (v * i).abs() > spec.p_limit_w {
        state.trip = true;
        state.v_out = 0.0;
        return 0.0;
    }
    state.v_out = v;
    v
}
