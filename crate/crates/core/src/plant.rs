//! Physical preprocessing for grate incineration plants.
//!
//! Temperatures are in degrees Celsius, air flows in `Nm^3/h` unless a
//! function says otherwise, and concentrations in percent by volume.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::Channel;
use crate::ltimodel::Scaling;

/// Canonical signal names shared by the model zoo, the composite and the
/// pipelines.
pub mod vars {
    pub const Q_STEAM: &str = "Q_steam";
    pub const Q_STEAM_SP: &str = "Q_steam_SP";
    pub const V_PAIR: &str = "V_Pair";
    pub const V_SAIR: &str = "V_Sair";
    pub const T_PAIR: &str = "T_Pair";
    pub const T_FURN: &str = "T_furn";
    pub const M_FURN: &str = "m_furn";
    pub const GAMMA: &str = "Gamma";
    pub const O2: &str = "O2";
    pub const CO2: &str = "CO2";
    pub const H2O: &str = "H2O";
    pub const V_WASTE: &str = "V_waste";
}

/// Reference of the `Gamma` product, `K kg/s` nominally.
pub const GAMMA_REFERENCE: f64 = 2.02e4;

/// Molar masses in g/mol.
pub const MM_N2: f64 = 28.0134;
pub const MM_O2: f64 = 31.998;
pub const MM_CO2: f64 = 44.009;
pub const MM_H2O: f64 = 18.015;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlantError {
    #[error("no complete ram stroke found in the position signal")]
    NoStrokeDetected,
    #[error("steam enthalpy must exceed feedwater enthalpy ({h_steam} <= {h_feedwater})")]
    NonPositiveEnthalpyDrop { h_steam: f64, h_feedwater: f64 },
    #[error("composition closure leaves no nitrogen (phi_N2_wfg = {0})")]
    NonPhysicalComposition(f64),
    #[error("negative {species} fraction {value}")]
    NegativeFraction { species: &'static str, value: f64 },
    #[error("variable `{0}` is not in the convention table")]
    UnknownVariable(String),
    #[error("channels `{0}` and `{1}` are not aligned")]
    Misaligned(String, String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConventionEntry {
    pub offset: f64,
    pub reference: f64,
    pub unit: String,
}

/// Offsets and reference values mapping physical signals to the offset
/// dimensionless model coordinates `x_model = x / reference - offset`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariableConvention {
    pub entries: BTreeMap<String, ConventionEntry>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OffsetDirection {
    ToModel,
    FromModel,
}

impl VariableConvention {
    /// The published table. The steam-load setpoint shares the steam-load row.
    pub fn published() -> Self {
        let rows: [(&str, f64, f64, &str); 11] = [
            (vars::Q_STEAM, 0.817581, 32.2, "MW"),
            (vars::Q_STEAM_SP, 0.817581, 32.2, "MW"),
            (vars::V_PAIR, 0.781564, 3.95e4, "Nm3/h"),
            (vars::V_SAIR, 0.857033, 1.76e4, "Nm3/h"),
            (vars::T_PAIR, 1.029000, 120.0, "degC"),
            (vars::T_FURN, 0.944238, 880.0, "degC"),
            (vars::M_FURN, 0.802818, 23.0, "kg/s"),
            (vars::GAMMA, 0.758052, GAMMA_REFERENCE, "K kg/s"),
            (vars::O2, 0.078830, 100.0, "%"),
            (vars::CO2, 0.112913, 100.0, "%"),
            (vars::H2O, 0.144002, 100.0, "%"),
        ];
        let entries = rows
            .iter()
            .map(|(n, offset, reference, unit)| {
                (
                    n.to_string(),
                    ConventionEntry {
                        offset: *offset,
                        reference: *reference,
                        unit: unit.to_string(),
                    },
                )
            })
            .collect();
        Self { entries }
    }

    pub fn entry(&self, name: &str) -> Result<&ConventionEntry, PlantError> {
        self.entries
            .get(name)
            .ok_or_else(|| PlantError::UnknownVariable(name.to_string()))
    }

    pub fn scaling(&self, name: &str) -> Option<Scaling> {
        self.entries.get(name).map(|e| Scaling::OffsetReference {
            offset: e.offset,
            reference: e.reference,
        })
    }

    pub fn scalings(&self) -> BTreeMap<String, Scaling> {
        self.entries
            .keys()
            .map(|k| (k.clone(), self.scaling(k).unwrap()))
            .collect()
    }

    pub fn to_dimensionless(&self, name: &str, physical: f64) -> Result<f64, PlantError> {
        Ok(physical / self.entry(name)?.reference)
    }

    pub fn from_dimensionless(&self, name: &str, value: f64) -> Result<f64, PlantError> {
        Ok(value * self.entry(name)?.reference)
    }
}

/// Shifts a dimensionless channel into (or out of) model coordinates using
/// the offset of the variable named by the channel.
pub fn apply_offsets(
    x: &Channel,
    convention: &VariableConvention,
    direction: OffsetDirection,
) -> Result<Channel, PlantError> {
    let offset = convention.entry(&x.name)?.offset;
    let shift = match direction {
        OffsetDirection::ToModel => -offset,
        OffsetDirection::FromModel => offset,
    };
    Ok(x.map_values(|v| v + shift))
}

/// Flue-gas concentrations: water on a wet basis, oxygen and carbon dioxide
/// on a dry basis, all as volume fractions.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlueGasComposition {
    pub h2o_wet: f64,
    pub o2_dry: f64,
    pub co2_dry: f64,
    pub n2_air: f64,
}

impl FlueGasComposition {
    pub fn new(h2o_wet: f64, o2_dry: f64, co2_dry: f64) -> Self {
        Self {
            h2o_wet,
            o2_dry,
            co2_dry,
            n2_air: 0.79,
        }
    }
}

/// Wet-basis volume fractions; they sum to one by construction.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WetFractions {
    pub n2: f64,
    pub o2: f64,
    pub co2: f64,
    pub h2o: f64,
}

impl WetFractions {
    /// Mean molar mass of the wet gas in g/mol.
    pub fn molar_mass(&self) -> f64 {
        self.n2 * MM_N2 + self.o2 * MM_O2 + self.co2 * MM_CO2 + self.h2o * MM_H2O
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FlueGasFlow {
    /// Wet flue gas at standard conditions, `Nm^3/s`.
    pub volume_flow: f64,
    /// `kg/s`.
    pub mass_flow: f64,
    pub wet: WetFractions,
}

/// Constants and unit conversions for the mass balance on plant signals.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlueGasConstants {
    pub n2_air: f64,
    /// Converts the air-flow signal unit to `Nm^3/s`.
    pub air_flow_scale: f64,
    /// Converts the concentration signal unit to a volume fraction.
    pub concentration_scale: f64,
}

impl Default for FlueGasConstants {
    fn default() -> Self {
        Self {
            n2_air: 0.79,
            air_flow_scale: 1.0 / 3600.0,
            concentration_scale: 0.01,
        }
    }
}

impl FlueGasConstants {
    pub fn composition(&self, h2o: f64, o2: f64, co2: f64) -> FlueGasComposition {
        FlueGasComposition {
            h2o_wet: h2o * self.concentration_scale,
            o2_dry: o2 * self.concentration_scale,
            co2_dry: co2 * self.concentration_scale,
            n2_air: self.n2_air,
        }
    }
}

/// Molar volume of an ideal gas at standard conditions, `m^3/mol`.
pub const MOLAR_VOLUME: f64 = 22.414e-3;

pub fn wet_fractions(comp: &FlueGasComposition) -> Result<WetFractions, PlantError> {
    let h2o = comp.h2o_wet;
    let o2 = comp.o2_dry * (1.0 - h2o);
    let co2 = comp.co2_dry * (1.0 - h2o);
    for (species, value) in [("H2O", h2o), ("O2", o2), ("CO2", co2)] {
        if !(value >= 0.0) {
            return Err(PlantError::NegativeFraction { species, value });
        }
    }
    let n2 = 1.0 - h2o - o2 - co2;
    if !(n2 > 0.0) {
        return Err(PlantError::NonPhysicalComposition(n2));
    }
    Ok(WetFractions { n2, o2, co2, h2o })
}

/// Nitrogen balance between combustion air and wet flue gas. Air flows in
/// `Nm^3/s`.
pub fn flue_gas_mass_flow(
    comp: &FlueGasComposition,
    v_pair: f64,
    v_sair: f64,
) -> Result<FlueGasFlow, PlantError> {
    if v_pair < 0.0 || v_sair < 0.0 {
        return Err(PlantError::InvalidArgument(format!(
            "negative air flow ({v_pair}, {v_sair})"
        )));
    }
    let wet = wet_fractions(comp)?;
    let volume_flow = comp.n2_air / wet.n2 * (v_pair + v_sair);
    // Nm^3/s / (m^3/mol) * g/mol = g/s
    let mass_flow = volume_flow / MOLAR_VOLUME * wet.molar_mass() * 1e-3;
    Ok(FlueGasFlow {
        volume_flow,
        mass_flow,
        wet,
    })
}

/// Thermal steam power in MW from mass flow (kg/s) and enthalpies (kJ/kg).
pub fn steam_power(m_ls: f64, h_steam: f64, h_feedwater: f64) -> Result<f64, PlantError> {
    if !(h_steam > h_feedwater) {
        return Err(PlantError::NonPositiveEnthalpyDrop {
            h_steam,
            h_feedwater,
        });
    }
    Ok(m_ls * (h_steam - h_feedwater) * 1e-3)
}

/// Dimensionless `Gamma = T_furn * m_furn / GAMMA_REFERENCE` from a furnace
/// temperature in degC and a flue-gas mass flow in kg/s.
pub fn gamma_product(t_furn: &Channel, m_furn: &Channel) -> Result<Channel, PlantError> {
    if t_furn.values.len() != m_furn.values.len() || t_furn.sample_period != m_furn.sample_period
    {
        return Err(PlantError::Misaligned(
            t_furn.name.clone(),
            m_furn.name.clone(),
        ));
    }
    Ok(Channel {
        name: vars::GAMMA.to_string(),
        unit: "-".to_string(),
        values: t_furn
            .values
            .iter()
            .zip(&m_furn.values)
            .map(|(t, m)| t * m / GAMMA_REFERENCE)
            .collect(),
        sample_period: t_furn.sample_period,
    })
}

/// Indices where the ram sits farthest from the grate just before a stroke.
///
/// A minimum is accepted once the position has risen at least
/// `min_stroke` above it, which suppresses sensor noise.
pub fn stroke_starts(position: &[f64], min_stroke: f64) -> Vec<usize> {
    let mut starts = Vec::new();
    if position.is_empty() {
        return starts;
    }
    let mut cand = 0usize;
    let mut peak = f64::NEG_INFINITY;
    let mut rising = false;
    for (k, &x) in position.iter().enumerate() {
        if rising {
            peak = peak.max(x);
            if x < peak - min_stroke {
                rising = false;
                cand = k;
            }
        } else if x <= position[cand] {
            cand = k;
        } else if x > position[cand] + min_stroke {
            starts.push(cand);
            rising = true;
            peak = x;
        }
    }
    starts
}

/// Volumetric fuel flow from the ram-feeder position (m) and ram area (m^2).
///
/// Within each stroke period the flow is the swept volume divided by the
/// period. Samples before the first or after the last complete period hold
/// the nearest period's value.
pub fn ram_to_fuel_flow(position: &Channel, ram_area: f64) -> Result<Channel, PlantError> {
    let x = &position.values;
    if x.iter().any(|v| !v.is_finite()) {
        return Err(PlantError::InvalidArgument("non-finite ram position".into()));
    }
    let lo = x.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return Err(PlantError::NoStrokeDetected);
    }
    let starts = stroke_starts(x, 0.05 * (hi - lo));
    if starts.len() < 2 {
        return Err(PlantError::NoStrokeDetected);
    }
    let h = position.sample_period;
    let mut out = vec![0.0; x.len()];
    let mut rate = 0.0;
    for w in starts.windows(2) {
        let (a, b) = (w[0], w[1]);
        let stroke = x[a..=b].iter().copied().fold(f64::NEG_INFINITY, f64::max) - x[a];
        rate = ram_area * stroke / ((b - a) as f64 * h);
        out[a..b].fill(rate);
        if a == starts[0] {
            out[..a].fill(rate);
        }
    }
    let last = *starts.last().unwrap();
    out[last..].fill(rate);
    Ok(Channel {
        name: vars::V_WASTE.to_string(),
        unit: "m3/s".to_string(),
        values: out,
        sample_period: h,
    })
}

/// Average of the per-feeder fuel flows of parallel ram feeders.
pub fn average_fuel_flows(flows: &[Channel]) -> Result<Channel, PlantError> {
    let first = flows
        .first()
        .ok_or_else(|| PlantError::InvalidArgument("no fuel-flow channels".into()))?;
    for f in flows {
        if f.values.len() != first.values.len() {
            return Err(PlantError::Misaligned(first.name.clone(), f.name.clone()));
        }
    }
    let n = flows.len() as f64;
    let values = (0..first.values.len())
        .map(|t| flows.iter().map(|f| f.values[t]).sum::<f64>() / n)
        .collect();
    Ok(Channel {
        values,
        ..first.clone()
    })
}
