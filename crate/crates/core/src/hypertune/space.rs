use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::estimator::{PathTemplate, StageSpec};

/// An input the tuner may use.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateInput {
    pub name: String,
    /// Always identified in stage 1.
    #[serde(default)]
    pub mandatory: bool,
}

/// The hyperparameter domain: input stages, pole counts and per-stage
/// regularization weights.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HyperSpace {
    pub inputs: Vec<CandidateInput>,
    pub max_stages: u8,
    /// Inclusive range of pole counts per path.
    pub poles: (u8, u8),
    /// Inclusive bounds on every stage's lambda; equal bounds fix it.
    pub lambda_bounds: (f64, f64),
}

impl HyperSpace {
    pub fn new(mandatory: &[&str], optional: &[&str]) -> Self {
        let inputs = mandatory
            .iter()
            .map(|n| CandidateInput {
                name: n.to_string(),
                mandatory: true,
            })
            .chain(optional.iter().map(|n| CandidateInput {
                name: n.to_string(),
                mandatory: false,
            }))
            .collect();
        Self {
            inputs,
            max_stages: 3,
            poles: (1, 3),
            lambda_bounds: (1e-6, 1e2),
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.inputs.is_empty() {
            return Err("no candidate inputs".into());
        }
        if !(1..=3).contains(&self.max_stages) {
            return Err(format!("max_stages {} outside 1..=3", self.max_stages));
        }
        let (lo, hi) = self.poles;
        if !(1 <= lo && lo <= hi && hi <= 3) {
            return Err(format!("pole range {lo}..={hi} outside 1..=3"));
        }
        let (a, b) = self.lambda_bounds;
        if !(a > 0.0 && a <= b && b.is_finite()) {
            return Err(format!("lambda bounds [{a}, {b}] invalid"));
        }
        Ok(())
    }

    fn log_lambda(&self) -> (f64, f64) {
        (self.lambda_bounds.0.log10(), self.lambda_bounds.1.log10())
    }

    /// Whether lambda is a searched dimension.
    pub fn lambda_free(&self) -> bool {
        self.lambda_bounds.1 > self.lambda_bounds.0
    }

    /// Uniform draw over every input's options, canonicalized.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> HyperParams {
        let (plo, phi) = self.poles;
        let (llo, lhi) = self.log_lambda();
        let inputs = self
            .inputs
            .iter()
            .map(|c| {
                let stage = if c.mandatory {
                    Some(1)
                } else {
                    let s = rng.random_range(0..=self.max_stages);
                    (s > 0).then_some(s)
                };
                InputChoice {
                    name: c.name.clone(),
                    stage,
                    poles: rng.random_range(plo..=phi),
                }
            })
            .collect();
        let lambdas = (0..self.max_stages)
            .map(|_| 10f64.powf(if lhi > llo { rng.random_range(llo..=lhi) } else { llo }))
            .collect();
        HyperParams { inputs, lambdas }.canonical(self)
    }

    /// Every canonical configuration, when there is no continuous dimension.
    pub fn enumerate(&self) -> Option<Vec<HyperParams>> {
        if self.lambda_free() {
            return None;
        }
        let (plo, phi) = self.poles;
        let options: Vec<Vec<(Option<u8>, u8)>> = self
            .inputs
            .iter()
            .map(|c| {
                let stages: Vec<Option<u8>> = if c.mandatory {
                    vec![Some(1)]
                } else {
                    std::iter::once(None)
                        .chain((1..=self.max_stages).map(Some))
                        .collect()
                };
                stages
                    .into_iter()
                    .flat_map(|s| (plo..=phi).map(move |p| (s, p)))
                    .collect()
            })
            .collect();
        let total: usize = options.iter().map(Vec::len).product();
        if total > 100_000 {
            return None;
        }
        let mut out: Vec<HyperParams> = Vec::new();
        let mut idx = vec![0usize; options.len()];
        for _ in 0..total {
            let inputs = self
                .inputs
                .iter()
                .zip(&idx)
                .zip(&options)
                .map(|((c, &i), o)| InputChoice {
                    name: c.name.clone(),
                    stage: o[i].0,
                    poles: o[i].1,
                })
                .collect();
            let eta = HyperParams {
                inputs,
                lambdas: vec![self.lambda_bounds.0; self.max_stages as usize],
            };
            if eta.is_canonical(self) && !out.iter().any(|o| o == &eta) {
                out.push(eta);
            }
            for (i, o) in idx.iter_mut().zip(&options) {
                *i += 1;
                if *i < o.len() {
                    break;
                }
                *i = 0;
            }
        }
        Some(out)
    }

    /// Neighbours differing in one input's stage or pole count, or in one
    /// lambda by `lambda_step` in the unit-scaled log domain.
    pub fn neighbours(&self, eta: &HyperParams, lambda_step: f64) -> Vec<HyperParams> {
        let mut out = Vec::new();
        let (plo, phi) = self.poles;
        for (i, c) in self.inputs.iter().enumerate() {
            let current = &eta.inputs[i];
            if !c.mandatory {
                for s in std::iter::once(None).chain((1..=self.max_stages).map(Some)) {
                    if s != current.stage {
                        let mut n = eta.clone();
                        n.inputs[i].stage = s;
                        out.push(n);
                    }
                }
            }
            if current.stage.is_some() {
                for p in plo..=phi {
                    if p != current.poles {
                        let mut n = eta.clone();
                        n.inputs[i].poles = p;
                        out.push(n);
                    }
                }
            }
        }
        if self.lambda_free() {
            let (llo, lhi) = self.log_lambda();
            for s in 0..eta.used_stages() as usize {
                for dir in [-1.0, 1.0] {
                    let mut n = eta.clone();
                    let l = (n.lambdas[s].log10() + dir * lambda_step * (lhi - llo)).clamp(llo, lhi);
                    n.lambdas[s] = 10f64.powf(l);
                    out.push(n);
                }
            }
        }
        let mut canon: Vec<HyperParams> = Vec::with_capacity(out.len());
        for n in out {
            let n = n.canonical(self);
            if &n != eta && !canon.contains(&n) {
                canon.push(n);
            }
        }
        canon
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InputChoice {
    pub name: String,
    /// `None` when the input is excluded.
    pub stage: Option<u8>,
    pub poles: u8,
}

/// One point of the hyperparameter space.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    /// In the order of [`HyperSpace::inputs`].
    pub inputs: Vec<InputChoice>,
    /// Lambda of stage `s` at index `s - 1`.
    pub lambdas: Vec<f64>,
}

impl HyperParams {
    /// Every candidate in stage 1 with the given pole count and lambda.
    pub fn all_in_stage_one(space: &HyperSpace, poles: u8, lambda: f64) -> Self {
        Self {
            inputs: space
                .inputs
                .iter()
                .map(|c| InputChoice {
                    name: c.name.clone(),
                    stage: Some(1),
                    poles,
                })
                .collect(),
            lambdas: vec![lambda; space.max_stages as usize],
        }
        .canonical(space)
    }

    /// Mandatory inputs only, in stage 1; every candidate excluded.
    pub fn mandatory_only(space: &HyperSpace, poles: u8, lambda: f64) -> Self {
        let mut eta = Self::all_in_stage_one(space, poles, lambda);
        for (choice, candidate) in eta.inputs.iter_mut().zip(&space.inputs) {
            if !candidate.mandatory {
                choice.stage = None;
            }
        }
        eta.canonical(space)
    }

    pub fn used_stages(&self) -> u8 {
        self.inputs.iter().filter_map(|c| c.stage).max().unwrap_or(0)
    }

    pub fn included(&self) -> impl Iterator<Item = &InputChoice> {
        self.inputs.iter().filter(|c| c.stage.is_some())
    }

    pub fn excludes(&self, name: &str) -> bool {
        self.inputs
            .iter()
            .any(|c| c.name == name && c.stage.is_none())
    }

    /// Representative of the equivalence class of `self`: mandatory inputs in
    /// stage 1, used stages renumbered contiguously from 1, excluded inputs
    /// and unused stages at fixed values, everything inside the bounds.
    pub fn canonical(&self, space: &HyperSpace) -> Self {
        let (plo, phi) = space.poles;
        let (llo, lhi) = space.lambda_bounds;
        let mut inputs: Vec<InputChoice> = space
            .inputs
            .iter()
            .zip(&self.inputs)
            .map(|(c, x)| {
                let stage = if c.mandatory {
                    Some(1)
                } else {
                    x.stage.map(|s| s.clamp(1, space.max_stages))
                };
                InputChoice {
                    name: c.name.clone(),
                    stage,
                    poles: if stage.is_some() { x.poles.clamp(plo, phi) } else { plo },
                }
            })
            .collect();
        if inputs.iter().all(|c| c.stage.is_none()) {
            inputs[0].stage = Some(1);
        }
        let mut used: Vec<u8> = inputs.iter().filter_map(|c| c.stage).collect();
        used.sort_unstable();
        used.dedup();
        let mut lambdas = vec![llo; space.max_stages as usize];
        for (new, &old) in used.iter().enumerate() {
            let l = self.lambdas.get(old as usize - 1).copied().unwrap_or(llo);
            lambdas[new] = l.clamp(llo, lhi);
        }
        for c in &mut inputs {
            if let Some(s) = c.stage {
                c.stage = Some(used.iter().position(|&u| u == s).unwrap() as u8 + 1);
            }
        }
        Self { inputs, lambdas }
    }

    pub fn is_canonical(&self, space: &HyperSpace) -> bool {
        &self.canonical(space) == self
    }

    /// Stage specifications for the estimator.
    pub fn stages(&self) -> Vec<StageSpec> {
        (1..=self.used_stages())
            .map(|s| StageSpec {
                paths: self
                    .inputs
                    .iter()
                    .filter(|c| c.stage == Some(s))
                    .map(|c| PathTemplate::new(c.name.clone(), c.poles as usize).in_stage(s))
                    .collect(),
                lambda: self.lambdas[s as usize - 1],
            })
            .collect()
    }

    /// Numeric features for the surrogate, each in `[0, 1]`. Optional inputs
    /// get an exclusion flag and an ordinal stage; included inputs an ordinal
    /// pole count; used stages a log-scaled lambda. Constant features are
    /// left out.
    pub fn encode(&self, space: &HyperSpace) -> Vec<f64> {
        let (plo, phi) = space.poles;
        let (llo, lhi) = space.log_lambda();
        let mut v = Vec::new();
        for (c, x) in space.inputs.iter().zip(&self.inputs) {
            if !c.mandatory {
                v.push(if x.stage.is_none() { 1.0 } else { 0.0 });
                if space.max_stages > 1 {
                    v.push(x.stage.map_or(0.0, |s| {
                        (s - 1) as f64 / (space.max_stages - 1) as f64
                    }));
                }
            }
            if phi > plo {
                v.push((x.poles - plo) as f64 / (phi - plo) as f64);
            }
        }
        if lhi > llo {
            for l in &self.lambdas {
                v.push((l.log10() - llo) / (lhi - llo));
            }
        }
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn space() -> HyperSpace {
        HyperSpace::new(&["sp"], &["a", "b", "c"])
    }

    #[test]
    fn canonical_compacts_stages_and_pins_mandatory_inputs() {
        let s = space();
        let eta = HyperParams {
            inputs: vec![
                InputChoice { name: "sp".into(), stage: Some(3), poles: 2 },
                InputChoice { name: "a".into(), stage: Some(3), poles: 3 },
                InputChoice { name: "b".into(), stage: None, poles: 3 },
                InputChoice { name: "c".into(), stage: Some(3), poles: 1 },
            ],
            lambdas: vec![1e-3, 1e-2, 1e-1],
        };
        let c = eta.canonical(&s);
        assert_eq!(c.inputs[0].stage, Some(1));
        assert_eq!(c.inputs[1].stage, Some(2));
        assert_eq!(c.inputs[2], InputChoice { name: "b".into(), stage: None, poles: 1 });
        assert_eq!(c.lambdas, vec![1e-3, 1e-1, 1e-6]);
        assert!(c.is_canonical(&s));
        assert_eq!(c.stages().len(), 2);
    }

    #[test]
    fn samples_are_canonical_and_encoded_in_unit_box() {
        let s = space();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..200 {
            let eta = s.sample(&mut rng);
            assert!(eta.is_canonical(&s));
            assert_eq!(eta.inputs[0].stage, Some(1));
            let x = eta.encode(&s);
            assert_eq!(x.len(), 1 + 3 * 3 + 3);
            assert!(x.iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn enumeration_of_a_discrete_space() {
        let s = HyperSpace {
            inputs: vec![
                CandidateInput { name: "a".into(), mandatory: false },
                CandidateInput { name: "b".into(), mandatory: false },
            ],
            max_stages: 2,
            poles: (1, 2),
            lambda_bounds: (1e-6, 1e-6),
        };
        let all = s.enumerate().unwrap();
        // both in stage 1: 4; one only: 2 * 2; split over two stages: 2 * 4
        assert_eq!(all.len(), 4 + 4 + 8);
        assert!(all.iter().all(|e| e.is_canonical(&s)));
        for e in &all {
            for n in s.neighbours(e, 0.1) {
                assert!(all.contains(&n));
            }
        }
    }
}
