//! Synthetic plant records generated from the model zoo.
//!
//! The generator drives a model with a stepped steam-load setpoint and
//! Ornstein-Uhlenbeck disturbances on the additional inputs, adds white
//! measurement noise to every simulated output and writes the record in the
//! ingestion format together with a ground-truth sidecar.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sysid_core::dataset::{Channel, Record};
use sysid_core::estimator::r_squared;
use sysid_core::ltimodel::{zoo, Composite, CompositeNode, InitialState, ModelFile, Scaling};
use sysid_core::plant::vars;

use crate::error::{PipelineError, Result};
use crate::seeds;

/// Piecewise-constant setpoint with `steps` changes between random levels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SetpointProgram {
    #[serde(default = "default_setpoint_signal")]
    pub signal: String,
    pub steps: usize,
    /// Dimensionless level bounds (physical value over its reference).
    pub low: f64,
    pub high: f64,
    /// Smallest dimensionless change between consecutive levels.
    #[serde(default = "default_min_change")]
    pub min_change: f64,
}

fn default_setpoint_signal() -> String {
    vars::Q_STEAM_SP.to_string()
}

fn default_min_change() -> f64 {
    0.05
}

/// Ornstein-Uhlenbeck process in model coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Disturbance {
    pub std: f64,
    /// Seconds.
    pub correlation_time: f64,
}

/// Output noise: either an explicit standard deviation on the standardized
/// output or the R^2 the noise-free output should score against the noisy
/// one.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    #[serde(default)]
    pub sigma: Option<f64>,
    #[serde(default)]
    pub target_r2: Option<f64>,
}

/// Ram-feeder position signals derived from a fuel flow proportional to
/// the setpoint.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RamSpec {
    pub feeders: usize,
    /// m^2.
    pub area: f64,
    /// m.
    pub stroke: f64,
    /// Fuel flow in m^3/s at a dimensionless setpoint of 1.
    pub flow_at_reference: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    /// `basic`, `comprehensive` or the path of a model file.
    pub model: String,
    /// Seconds.
    pub duration: f64,
    #[serde(default = "default_sample_period")]
    pub sample_period: f64,
    pub setpoint: SetpointProgram,
    #[serde(default = "default_disturbances")]
    pub disturbances: BTreeMap<String, Disturbance>,
    pub noise: NoiseSpec,
    #[serde(default)]
    pub ram: Option<RamSpec>,
    pub seed: u64,
}

fn default_sample_period() -> f64 {
    5.0
}

/// Disturbance levels used when a spec does not list its own.
pub fn default_disturbances() -> BTreeMap<String, Disturbance> {
    [
        (vars::T_PAIR, 0.08, 1800.0),
        (vars::H2O, 0.05, 1200.0),
        (vars::CO2, 0.03, 1800.0),
        (vars::O2, 0.03, 900.0),
    ]
    .into_iter()
    .map(|(n, std, tau)| {
        (
            n.to_string(),
            Disturbance {
                std,
                correlation_time: tau,
            },
        )
    })
    .collect()
}

impl SynthSpec {
    /// The basic-model campaign: `days` of data, 26 setpoint steps, noise
    /// calibrated so the generator scores R^2 = 0.92.
    pub fn basic_campaign(days: f64, seed: u64) -> Self {
        Self {
            model: zoo::BASIC.to_string(),
            duration: days * 86_400.0,
            sample_period: 5.0,
            setpoint: SetpointProgram {
                signal: default_setpoint_signal(),
                steps: 26,
                low: 0.65,
                high: 1.0,
                min_change: default_min_change(),
            },
            disturbances: default_disturbances(),
            noise: NoiseSpec {
                sigma: None,
                target_r2: Some(0.92),
            },
            ram: None,
            seed,
        }
    }

    /// The subprocess campaign. Concentration disturbances are narrower
    /// than in the basic campaign so the flue-gas balance stays physical
    /// (every species stays more than six standard deviations above zero).
    pub fn comprehensive_campaign(days: f64, seed: u64) -> Self {
        let mut disturbances = default_disturbances();
        for (name, std) in [(vars::H2O, 0.02), (vars::CO2, 0.012), (vars::O2, 0.012)] {
            if let Some(d) = disturbances.get_mut(name) {
                d.std = std;
            }
        }
        Self {
            model: "comprehensive".to_string(),
            disturbances,
            ram: Some(RamSpec {
                feeders: 2,
                area: 2.0,
                stroke: 0.5,
                flow_at_reference: 0.005,
            }),
            ..Self::basic_campaign(days, seed)
        }
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(PipelineError::Validation(m));
        if !(self.sample_period > 0.0) || !(self.duration >= self.sample_period) {
            return bad(format!(
                "duration {} and sample period {} are inconsistent",
                self.duration, self.sample_period
            ));
        }
        let sp = &self.setpoint;
        if !(sp.low <= sp.high) || !(sp.min_change >= 0.0) {
            return bad("setpoint levels must satisfy low <= high".into());
        }
        if sp.steps > 0 && sp.min_change > sp.high - sp.low {
            return bad("setpoint min_change exceeds the level range".into());
        }
        if let Some(r) = self.noise.target_r2 {
            if !(r > 0.0 && r <= 1.0) {
                return bad(format!("target_r2 {r} outside (0, 1]"));
            }
        }
        if let Some(s) = self.noise.sigma {
            if !(s >= 0.0) {
                return bad(format!("noise sigma {s} is negative"));
            }
        }
        for (name, d) in &self.disturbances {
            if !(d.std >= 0.0 && d.correlation_time > 0.0) {
                return bad(format!("disturbance `{name}` is invalid"));
            }
        }
        if let Some(r) = &self.ram {
            if r.feeders == 0 || !(r.area > 0.0 && r.stroke > 0.0 && r.flow_at_reference > 0.0) {
                return bad("ram feeder settings must be positive".into());
            }
        }
        Ok(())
    }
}

/// Ground truth written next to the generated record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Truth {
    pub spec: SynthSpec,
    pub generator: Composite,
    /// Physical noise standard deviation per measured output.
    pub noise_std: BTreeMap<String, f64>,
    /// R^2 of the noise-free output against the noisy one, whole record.
    pub generator_r2: BTreeMap<String, f64>,
    /// Times (s) at which the setpoint changes.
    pub setpoint_changes: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct SynthData {
    pub record: Record,
    /// Noise-free outputs, physical units.
    pub clean: BTreeMap<String, Vec<f64>>,
    pub truth: Truth,
}

fn generator_for(model: &str) -> Result<Composite> {
    if model == "comprehensive" {
        return Ok(zoo::comprehensive(None));
    }
    let file = match zoo::model_file(model) {
        Some(f) => f,
        None => ModelFile::load(Path::new(model))?,
    };
    Ok(Composite {
        nodes: vec![CompositeNode::Dynamic(file.model)],
        scaling: file.scaling,
    })
}

fn to_physical(scaling: Option<&Scaling>, model_value: f64) -> f64 {
    scaling.map_or(model_value, |s| s.from_model(model_value))
}

fn setpoint_levels(spec: &SynthSpec, n: usize, rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<f64>) {
    let sp = &spec.setpoint;
    let h = spec.sample_period;
    let interval = spec.duration / (sp.steps + 1) as f64;
    let mut level = rng.random_range(sp.low..=sp.high);
    let mut changes = Vec::with_capacity(sp.steps);
    let mut levels = Vec::with_capacity(sp.steps + 1);
    levels.push(level);
    for i in 0..sp.steps {
        let jitter = rng.random_range(-0.2..0.2) * interval;
        let t = ((i + 1) as f64 * interval + jitter).max(h);
        changes.push((t / h).round() * h);
        let mut next = rng.random_range(sp.low..=sp.high);
        for _ in 0..1000 {
            if (next - level).abs() >= sp.min_change {
                break;
            }
            next = rng.random_range(sp.low..=sp.high);
        }
        level = next;
        levels.push(level);
    }
    let mut values = Vec::with_capacity(n);
    let mut idx = 0;
    for k in 0..n {
        let t = k as f64 * h;
        while idx < changes.len() && t >= changes[idx] {
            idx += 1;
        }
        values.push(levels[idx]);
    }
    (values, changes)
}

fn ou_process(d: &Disturbance, n: usize, h: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let a = (-h / d.correlation_time).exp();
    let innovation = d.std * (1.0 - a * a).sqrt();
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut x = d.std * normal.sample(rng);
    (0..n)
        .map(|_| {
            let v = x;
            x = a * x + innovation * normal.sample(rng);
            v
        })
        .collect()
}

/// Triangular ram strokes whose swept volume per period matches `flow`.
fn ram_position(flow: &[f64], ram: &RamSpec, h: f64, phase0: f64) -> Vec<f64> {
    let volume = ram.area * ram.stroke;
    let mut phase = phase0;
    flow.iter()
        .map(|f| {
            let p = phase.fract();
            phase += h * f / volume;
            let tri = if p < 0.5 { 2.0 * p } else { 2.0 * (1.0 - p) };
            ram.stroke * tri
        })
        .collect()
}

fn unit_of(name: &str) -> &'static str {
    match name {
        vars::Q_STEAM | vars::Q_STEAM_SP => "MW",
        vars::V_PAIR | vars::V_SAIR => "Nm3/h",
        vars::T_PAIR | vars::T_FURN => "degC",
        vars::O2 | vars::CO2 | vars::H2O => "%",
        vars::M_FURN => "kg/s",
        _ => "",
    }
}

/// Measured outputs of the generator: every dynamic node's output.
fn measured_outputs(generator: &Composite) -> Vec<String> {
    generator
        .nodes
        .iter()
        .filter_map(|n| match n {
            CompositeNode::Dynamic(m) => Some(m.output.clone()),
            CompositeNode::Algebraic(_) => None,
        })
        .collect()
}

pub fn generate_synthetic(spec: &SynthSpec) -> Result<SynthData> {
    spec.validate()?;
    let generator = generator_for(&spec.model)?;
    let h = spec.sample_period;
    let n = (spec.duration / h).round() as usize;
    let mut sp_rng = ChaCha8Rng::seed_from_u64(seeds::substream(spec.seed, seeds::SYNTH_SETPOINT));
    let mut d_rng = ChaCha8Rng::seed_from_u64(seeds::substream(spec.seed, seeds::SYNTH_DISTURBANCE));
    let mut noise_rng = ChaCha8Rng::seed_from_u64(seeds::substream(spec.seed, seeds::SYNTH_NOISE));

    let outputs = measured_outputs(&generator);
    let produced: Vec<String> = generator.nodes.iter().map(CompositeNode::produces).collect();
    let mut external_names: Vec<String> = Vec::new();
    for node in &generator.nodes {
        for r in node.requires() {
            if !produced.contains(&r) && !external_names.contains(&r) {
                external_names.push(r);
            }
        }
    }
    external_names.sort();

    // External inputs, physical units.
    let (levels, changes) = setpoint_levels(spec, n, &mut sp_rng);
    let mut external = BTreeMap::new();
    for name in &external_names {
        let scaling = generator.scaling.get(name);
        let values: Vec<f64> = if *name == spec.setpoint.signal {
            levels
                .iter()
                .map(|d| match scaling {
                    Some(Scaling::OffsetReference { reference, .. }) => d * reference,
                    _ => *d,
                })
                .collect()
        } else {
            let model_values = match spec.disturbances.get(name) {
                Some(d) => ou_process(d, n, h, &mut d_rng),
                None => vec![0.0; n],
            };
            model_values.iter().map(|v| to_physical(scaling, *v)).collect()
        };
        external.insert(name.clone(), values);
    }

    let signals = generator.evaluate(&external, h, &InitialState::SteadyState)?;
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut channels = Vec::new();
    for name in &external_names {
        channels.push(Channel::new(name.clone(), unit_of(name), external[name].clone(), h));
    }
    let mut clean = BTreeMap::new();
    let mut noise_std = BTreeMap::new();
    let mut generator_r2 = BTreeMap::new();
    for name in &outputs {
        let y = signals[name].clone();
        let range = y.iter().copied().fold(f64::NEG_INFINITY, f64::max)
            - y.iter().copied().fold(f64::INFINITY, f64::min);
        let mean = y.iter().sum::<f64>() / n as f64;
        let var = y.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
        let sigma = match (spec.noise.target_r2, spec.noise.sigma) {
            (Some(r2), _) => (var * (1.0 - r2) / r2).sqrt(),
            (None, Some(s)) => s * range,
            (None, None) => 0.0,
        };
        let noisy: Vec<f64> = y.iter().map(|v| v + sigma * normal.sample(&mut noise_rng)).collect();
        if let Ok(r2) = r_squared(&noisy, &y) {
            generator_r2.insert(name.clone(), r2);
        }
        noise_std.insert(name.clone(), sigma);
        channels.push(Channel::new(name.clone(), unit_of(name), noisy, h));
        clean.insert(name.clone(), y);
    }

    if let Some(ram) = &spec.ram {
        let flow: Vec<f64> = levels.iter().map(|d| ram.flow_at_reference * d).collect();
        for f in 0..ram.feeders {
            let phase0 = (f as f64 * 0.37).fract();
            channels.push(Channel::new(
                format!("ram_{}", f + 1),
                "m",
                ram_position(&flow, ram, h, phase0),
                h,
            ));
        }
    }

    let record = Record::new(channels, 0.0)?;
    Ok(SynthData {
        record,
        clean,
        truth: Truth {
            spec: spec.clone(),
            generator,
            noise_std,
            generator_r2,
            setpoint_changes: changes,
        },
    })
}

/// Writes `data.csv` and `truth.json` into `dir`; returns the CSV path.
pub fn write_synthetic(data: &SynthData, dir: &Path) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let csv_path = dir.join("data.csv");
    data.record.write_csv(fs::File::create(&csv_path)?)?;
    let mut truth = serde_json::to_string_pretty(&data.truth)?;
    truth.push('\n');
    fs::write(dir.join("truth.json"), truth)?;
    Ok(csv_path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ou_process_has_the_requested_spread() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let d = Disturbance {
            std: 0.05,
            correlation_time: 50.0,
        };
        let x = ou_process(&d, 200_000, 5.0, &mut rng);
        let var = x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64;
        assert!((var.sqrt() / 0.05 - 1.0).abs() < 0.05);
    }

    #[test]
    fn ram_strokes_sweep_the_fuel_volume() {
        let ram = RamSpec {
            feeders: 1,
            area: 2.0,
            stroke: 0.5,
            flow_at_reference: 0.005,
        };
        let x = ram_position(&vec![0.005; 2000], &ram, 5.0, 0.0);
        let pos = Channel::new("ram", "m", x, 5.0);
        let f = sysid_core::plant::ram_to_fuel_flow(&pos, 2.0).unwrap();
        let mid = &f.values[200..1800];
        assert!(mid.iter().all(|v| (v - 0.005).abs() < 1e-12), "{:?}", &mid[..5]);
    }
}
