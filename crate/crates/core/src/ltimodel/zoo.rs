//! The five published grate-incineration models, transcribed with their
//! printed gains and time constants. All dead times are zero.
//!
//! Models act on offset dimensionless variables, see
//! [`VariableConvention::published`].

use std::collections::BTreeMap;

use super::composite::{AlgebraicLink, Composite, CompositeNode};
use super::{MisoModel, ModelFile, ProcessModel};
use crate::plant::{vars, FlueGasConstants, VariableConvention};

pub const BASIC: &str = "basic";
pub const PRIMARY_AIR: &str = "primary_air";
pub const SECONDARY_AIR: &str = "secondary_air";
pub const FURNACE_TEMPERATURE: &str = "furnace_temperature";
pub const STEAM_GENERATOR: &str = "steam_generator";

pub const IDS: [&str; 5] = [
    BASIC,
    PRIMARY_AIR,
    SECONDARY_AIR,
    FURNACE_TEMPERATURE,
    STEAM_GENERATOR,
];

fn lag(gain: f64, tcs: &[f64]) -> ProcessModel {
    ProcessModel::new(gain, tcs.to_vec())
}

/// Steam load from setpoint and the four disturbance-informative measurements.
pub fn basic() -> MisoModel {
    MisoModel::new(vars::Q_STEAM)
        .with_path(vars::Q_STEAM_SP, lag(0.98703, &[1525.2]))
        .with_path(vars::T_PAIR, lag(0.082006, &[38.561]))
        .with_path(vars::H2O, lag(0.10116, &[566.98, 566.98]))
        .with_path(vars::CO2, lag(-0.7977, &[7635.1, 7635.1]))
        .with_path(vars::O2, lag(-1.4063, &[320.17]))
}

pub fn primary_air() -> MisoModel {
    MisoModel::new(vars::V_PAIR)
        .with_path(vars::Q_STEAM_SP, lag(0.68754, &[799.67]))
        .with_path(vars::T_PAIR, lag(0.33679, &[4025.5]))
        .with_path(vars::H2O, lag(0.89669, &[836.38]))
        .with_path(vars::CO2, lag(-0.75509, &[4686.5, 4686.5]))
        .with_path(vars::O2, lag(-0.79057, &[5182.0]))
}

pub fn secondary_air() -> MisoModel {
    MisoModel::new(vars::V_SAIR)
        .with_path(vars::Q_STEAM_SP, lag(0.83353, &[830.16]))
        .with_path(vars::H2O, lag(-0.17113, &[96.153]))
        .with_path(vars::CO2, lag(-1.4383, &[8367.7, 8367.7]))
        .with_path(vars::O2, ProcessModel::static_gain(-1.271))
}

pub fn furnace_temperature() -> MisoModel {
    MisoModel::new(vars::T_FURN)
        .with_path(vars::V_PAIR, lag(-0.057537, &[6113.0, 4262.9]))
        .with_path(vars::V_SAIR, lag(0.34828, &[213.55, 3.638]))
        .with_path(vars::Q_STEAM_SP, lag(0.016756, &[2114.7, 2004.7]))
        .with_path(vars::H2O, ProcessModel::static_gain(0.0041691))
}

pub fn steam_generator() -> MisoModel {
    MisoModel::new(vars::Q_STEAM)
        .with_path(vars::GAMMA, lag(0.81495, &[189.63, 181.22]))
        .with_path(vars::M_FURN, lag(0.14197, &[9479.9]))
        .with_path(vars::T_FURN, lag(0.67983, &[30.29]))
}

pub fn model(id: &str) -> Option<MisoModel> {
    match id {
        BASIC => Some(basic()),
        PRIMARY_AIR => Some(primary_air()),
        SECONDARY_AIR => Some(secondary_air()),
        FURNACE_TEMPERATURE => Some(furnace_temperature()),
        STEAM_GENERATOR => Some(steam_generator()),
        _ => None,
    }
}

/// Model file with the published offsets and references attached.
pub fn model_file(id: &str) -> Option<ModelFile> {
    let model = model(id)?;
    let conv = VariableConvention::published();
    let mut scaling = BTreeMap::new();
    for name in model.inputs().chain(std::iter::once(model.output.as_str())) {
        if let Some(s) = conv.scaling(name) {
            scaling.insert(name.to_string(), s);
        }
    }
    Some(ModelFile { model, scaling })
}

pub fn all() -> Vec<(&'static str, ModelFile)> {
    IDS.iter()
        .map(|id| (*id, model_file(id).expect("zoo id")))
        .collect()
}

/// The chained comprehensive model: air supply, flue-gas balance, heat
/// release, `Gamma` product and steam generator. `fuel_flow_gain` adds the
/// proportional fuel-flow output when given; its value is not published.
pub fn comprehensive(fuel_flow_gain: Option<f64>) -> Composite {
    let mut nodes = vec![
        CompositeNode::Dynamic(primary_air()),
        CompositeNode::Dynamic(secondary_air()),
    ];
    if let Some(k_p) = fuel_flow_gain {
        nodes.push(CompositeNode::Algebraic(AlgebraicLink::FuelFlow {
            gain: k_p,
            setpoint: vars::Q_STEAM_SP.into(),
            output: vars::V_WASTE.into(),
        }));
    }
    nodes.push(CompositeNode::Algebraic(AlgebraicLink::MassFlow(
        FlueGasConstants::default(),
    )));
    nodes.push(CompositeNode::Dynamic(furnace_temperature()));
    nodes.push(CompositeNode::Algebraic(AlgebraicLink::Gamma));
    nodes.push(CompositeNode::Dynamic(steam_generator()));
    Composite {
        nodes,
        scaling: VariableConvention::published().scalings(),
    }
}
