//! Series connection of identified subprocess models and algebraic links.
//!
//! All signals flowing between nodes are in physical units; every dynamic
//! node converts its inputs to model coordinates and its output back using
//! the composite's scaling table.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{InitialState, MisoModel, ModelError, Scaling};
use crate::plant::{self, vars, FlueGasConstants};

/// Algebraic relation inserted between dynamic stages.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "link", rename_all = "snake_case")]
pub enum AlgebraicLink {
    /// `output = gain * setpoint` in model coordinates. A variable without a
    /// scaling entry is used as is.
    FuelFlow {
        gain: f64,
        setpoint: String,
        output: String,
    },
    /// Flue-gas mass flow from air flows and flue-gas composition.
    MassFlow(FlueGasConstants),
    /// `Gamma = T_furn * m_furn`.
    Gamma,
}

impl AlgebraicLink {
    fn requires(&self) -> Vec<String> {
        match self {
            AlgebraicLink::FuelFlow { setpoint, .. } => vec![setpoint.clone()],
            AlgebraicLink::MassFlow(_) => [vars::V_PAIR, vars::V_SAIR, vars::H2O, vars::O2, vars::CO2]
                .iter()
                .map(|s| s.to_string())
                .collect(),
            AlgebraicLink::Gamma => vec![vars::T_FURN.into(), vars::M_FURN.into()],
        }
    }

    fn produces(&self) -> String {
        match self {
            AlgebraicLink::FuelFlow { output, .. } => output.clone(),
            AlgebraicLink::MassFlow(_) => vars::M_FURN.into(),
            AlgebraicLink::Gamma => vars::GAMMA.into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CompositeNode {
    Dynamic(MisoModel),
    Algebraic(AlgebraicLink),
}

impl CompositeNode {
    pub fn requires(&self) -> Vec<String> {
        match self {
            CompositeNode::Dynamic(m) => m.inputs().map(str::to_string).collect(),
            CompositeNode::Algebraic(l) => l.requires(),
        }
    }

    pub fn produces(&self) -> String {
        match self {
            CompositeNode::Dynamic(m) => m.output.clone(),
            CompositeNode::Algebraic(l) => l.produces(),
        }
    }
}

/// A chain of subprocess models evaluated in dependency order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Composite {
    pub nodes: Vec<CompositeNode>,
    pub scaling: BTreeMap<String, Scaling>,
}

/// Builds a composite and checks that it can be ordered given the external
/// signals.
pub fn chain_subprocesses(
    stage_models: Vec<MisoModel>,
    links: Vec<AlgebraicLink>,
    scaling: BTreeMap<String, Scaling>,
    external: &[&str],
) -> Result<Composite, ModelError> {
    let nodes = stage_models
        .into_iter()
        .map(CompositeNode::Dynamic)
        .chain(links.into_iter().map(CompositeNode::Algebraic))
        .collect();
    let composite = Composite { nodes, scaling };
    composite.evaluation_order(external)?;
    Ok(composite)
}

impl Composite {
    /// Topological order of the nodes. A signal produced by a node always
    /// takes precedence over an external signal of the same name.
    pub fn evaluation_order(&self, external: &[&str]) -> Result<Vec<usize>, ModelError> {
        let producers: BTreeMap<String, usize> = self
            .nodes
            .iter()
            .enumerate()
            .map(|(i, n)| (n.produces(), i))
            .collect();
        let external: BTreeSet<&str> = external.iter().copied().collect();
        let mut done = vec![false; self.nodes.len()];
        let mut order = Vec::with_capacity(self.nodes.len());
        while order.len() < self.nodes.len() {
            let mut progressed = false;
            for (i, node) in self.nodes.iter().enumerate() {
                if done[i] {
                    continue;
                }
                let ready = node.requires().iter().all(|r| match producers.get(r) {
                    Some(&p) => p != i && done[p],
                    None => external.contains(r.as_str()),
                });
                if ready {
                    done[i] = true;
                    order.push(i);
                    progressed = true;
                }
            }
            if !progressed {
                let i = (0..self.nodes.len()).find(|&i| !done[i]).unwrap();
                for r in self.nodes[i].requires() {
                    match producers.get(&r) {
                        Some(&p) if !done[p] => return Err(ModelError::CyclicDependency(r)),
                        None if !external.contains(r.as_str()) => {
                            return Err(ModelError::MissingLinkSignal(r))
                        }
                        _ => {}
                    }
                }
                unreachable!("blocked node without a blocking requirement");
            }
        }
        Ok(order)
    }

    fn scaling_for(&self, name: &str) -> Result<Scaling, ModelError> {
        self.scaling
            .get(name)
            .copied()
            .ok_or_else(|| ModelError::UnknownVariable(name.to_string()))
    }

    /// Evaluates every node; returns external and produced signals, all in
    /// physical units.
    pub fn evaluate(
        &self,
        external: &BTreeMap<String, Vec<f64>>,
        sample_period: f64,
        initial: &InitialState,
    ) -> Result<BTreeMap<String, Vec<f64>>, ModelError> {
        let names: Vec<&str> = external.keys().map(String::as_str).collect();
        let order = self.evaluation_order(&names)?;
        let len = external.values().next().map(Vec::len).unwrap_or(0);
        let mut signals = external.clone();
        for i in order {
            let node = &self.nodes[i];
            let produced = match node {
                CompositeNode::Dynamic(model) => {
                    let mut scaled = BTreeMap::new();
                    for input in model.inputs() {
                        let s = self.scaling_for(input)?;
                        scaled.insert(input.to_string(), s.to_model_all(&signals[input]));
                    }
                    let y = model.simulate_source(&scaled, len, sample_period, initial)?;
                    self.scaling_for(&model.output)?.from_model_all(&y)
                }
                CompositeNode::Algebraic(link) => self.apply_link(link, &signals)?,
            };
            signals.insert(node.produces(), produced);
        }
        Ok(signals)
    }

    fn apply_link(
        &self,
        link: &AlgebraicLink,
        signals: &BTreeMap<String, Vec<f64>>,
    ) -> Result<Vec<f64>, ModelError> {
        match link {
            AlgebraicLink::FuelFlow {
                gain,
                setpoint,
                output,
            } => {
                let sp = self.scaling.get(setpoint.as_str());
                let out = self.scaling.get(output.as_str());
                Ok(signals[setpoint]
                    .iter()
                    .map(|&x| {
                        let xm = sp.map_or(x, |s| s.to_model(x));
                        let ym = gain * xm;
                        out.map_or(ym, |s| s.from_model(ym))
                    })
                    .collect())
            }
            AlgebraicLink::MassFlow(consts) => {
                let g = |n: &str| &signals[n];
                let (vp, vs) = (g(vars::V_PAIR), g(vars::V_SAIR));
                let (h2o, o2, co2) = (g(vars::H2O), g(vars::O2), g(vars::CO2));
                (0..vp.len())
                    .map(|t| {
                        let comp = consts.composition(h2o[t], o2[t], co2[t]);
                        plant::flue_gas_mass_flow(
                            &comp,
                            vp[t] * consts.air_flow_scale,
                            vs[t] * consts.air_flow_scale,
                        )
                        .map(|f| f.mass_flow)
                        .map_err(|e| ModelError::Link(format!("sample {t}: {e}")))
                    })
                    .collect()
            }
            AlgebraicLink::Gamma => Ok(signals[vars::T_FURN]
                .iter()
                .zip(&signals[vars::M_FURN])
                .map(|(t, m)| t * m)
                .collect()),
        }
    }
}
