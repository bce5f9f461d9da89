//! Line-impedance calibration of a test grid.
//!
//! The lines are stretched uniformly until (a) one charger at rated power
//! lowers its own node/phase by at least `single_drop_fraction` of nominal and
//! (b) every charger drawing `coincident_fraction` of rated power drives some
//! node/phase below the lower band edge. The smallest such stretch is then
//! lengthened by `margin` and rounded up to 0.1 mΩ.

use serde::Serialize;

use super::{solve_power_flow, GridError, GridModel, Injections, Phase};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CalibrationTarget {
    pub p_rated_w: f64,
    pub single_drop_fraction: f64,
    pub coincident_fraction: f64,
    pub band: f64,
    pub margin: f64,
}

impl Default for CalibrationTarget {
    fn default() -> Self {
        CalibrationTarget {
            p_rated_w: 7200.0,
            single_drop_fraction: 0.02,
            coincident_fraction: 0.90,
            band: 0.10,
            margin: 0.10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CalibrationCheck {
    /// Drop at the first station's node/phase when only it charges at rated power.
    pub single_drop_v: f64,
    /// Lowest magnitude anywhere with all stations at the coincident power.
    pub coincident_min_v: f64,
    pub single_ok: bool,
    pub coincident_ok: bool,
}

impl CalibrationCheck {
    pub fn passes(&self) -> bool {
        self.single_ok && self.coincident_ok
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Calibration {
    /// Smallest uniform stretch meeting both conditions.
    pub scale_min: f64,
    pub model: GridModel,
    pub check: CalibrationCheck,
}

fn min_magnitude(model: &GridModel, inj: &Injections) -> Result<Option<f64>, GridError> {
    let v = solve_power_flow(model, inj)?;
    if !v.converged {
        return Ok(None);
    }
    let mut lo = f64::INFINITY;
    for node in 0..model.nodes().len() {
        for ph in Phase::ALL {
            lo = lo.min(v.magnitude(node, ph));
        }
    }
    Ok(Some(lo))
}

pub fn check_calibration(model: &GridModel, target: &CalibrationTarget) -> Result<CalibrationCheck, GridError> {
    let first = model
        .stations()
        .first()
        .ok_or_else(|| GridError::Invalid("grid has no charging stations".into()))?;
    let nominal = model.nominal_v();

    let base = Injections::base_loads(model);
    let v_base = solve_power_flow(model, &base)?;
    let mut single = base.clone();
    single.add(first.node, first.phase, target.p_rated_w, 0.0);
    let v_single = solve_power_flow(model, &single)?;
    let single_drop_v = if v_base.converged && v_single.converged {
        v_base.magnitude(first.node, first.phase) - v_single.magnitude(first.node, first.phase)
    } else {
        f64::NAN
    };

    let mut all = base;
    for s in model.stations() {
        all.add(s.node, s.phase, target.p_rated_w * target.coincident_fraction, 0.0);
    }
    let coincident_min_v = min_magnitude(model, &all)?.unwrap_or(f64::NAN);

    Ok(CalibrationCheck {
        single_drop_v,
        coincident_min_v,
        single_ok: single_drop_v >= target.single_drop_fraction * nominal,
        coincident_ok: coincident_min_v < nominal * (1.0 - target.band),
    })
}

pub fn calibrate(model: &GridModel, target: &CalibrationTarget) -> Result<Calibration, GridError> {
    let passes = |k: f64| -> Result<bool, GridError> {
        Ok(check_calibration(&model.with_line_scale(k), target)?.passes())
    };

    let mut hi = 1.0;
    let mut tries = 0;
    while !passes(hi)? {
        hi *= 1.5;
        tries += 1;
        if tries > 40 {
            return Err(GridError::Invalid("no line stretch meets the calibration target".into()));
        }
    }
    let mut lo = 0.0;
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if passes(mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }

    let factor = hi * (1.0 + target.margin);
    let mut calibrated = model.clone();
    for (i, l) in model.lines().iter().enumerate() {
        let up = |z: f64| (z * factor * 1e4).ceil() / 1e4;
        calibrated = calibrated.with_line_impedance(i, up(l.r_ohm), up(l.x_ohm));
    }
    let check = check_calibration(&calibrated, target)?;
    if !check.passes() {
        return Err(GridError::Invalid("calibrated grid fails its own check".into()));
    }
    Ok(Calibration {
        scale_min: hi,
        model: calibrated,
        check,
    })
}
