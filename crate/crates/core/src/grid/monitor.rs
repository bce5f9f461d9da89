use serde::Serialize;

use super::{GridError, GridModel, NodeVoltages, Phase};

/// ±10 % supply-voltage band.
pub const DEFAULT_BAND: f64 = 0.10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ViolationKind {
    Under,
    Over,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    pub node: String,
    pub phase: Phase,
    pub magnitude_v: f64,
    pub kind: ViolationKind,
}

fn check_band(band: f64) -> Result<(), GridError> {
    if band > 0.0 && band < 0.5 {
        Ok(())
    } else {
        Err(GridError::Invalid(format!("voltage band must lie in (0, 0.5), got {band}")))
    }
}

/// Flags magnitudes outside `[nominal·(1−band), nominal·(1+band)]`.
pub fn monitor_magnitudes<'a, I>(nominal_v: f64, magnitudes: I, band: f64) -> Result<Vec<Violation>, GridError>
where
    I: IntoIterator<Item = (&'a str, Phase, f64)>,
{
    check_band(band)?;
    let lower = nominal_v * (1.0 - band);
    let upper = nominal_v * (1.0 + band);
    Ok(magnitudes
        .into_iter()
        .filter_map(|(node, phase, m)| {
            let kind = if m < lower {
                ViolationKind::Under
            } else if m > upper {
                ViolationKind::Over
            } else {
                return None;
            };
            Some(Violation {
                node: node.to_string(),
                phase,
                magnitude_v: m,
                kind,
            })
        })
        .collect())
}

pub fn monitor_voltages(model: &GridModel, v: &NodeVoltages, band: f64) -> Result<Vec<Violation>, GridError> {
    let cells = model.nodes().iter().enumerate().flat_map(|(i, name)| {
        Phase::ALL
            .into_iter()
            .map(move |ph| (name.as_str(), ph, v.magnitude(i, ph)))
    });
    monitor_magnitudes(model.nominal_v(), cells, band)
}
