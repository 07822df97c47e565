//! Teacher-generated clean samples reused across an unlearning step.

use std::collections::BTreeMap;

use rand::Rng as _;

use crate::diffusion::{ddim_ladder, ddim_sample_from, initial_noise, NoiseSchedule};
use crate::error::{Error, Result};
use crate::nn::DenoiserNet;
use crate::rng::{self, Rng};
use crate::world::{ConceptSlot, ConceptUniverse, Condition};

/// One cached clean sample and the seed of its starting noise.
#[derive(Clone, Debug, PartialEq)]
pub struct ReplaySample {
    pub seed: u64,
    pub z0: Vec<f64>,
}

/// Per-condition teacher DDIM samples. Each entry is reproducible from the
/// teacher parameters, the condition and its seed.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ReplayCache {
    entries: BTreeMap<Condition, Vec<ReplaySample>>,
    ddim_steps: usize,
}

/// Stable integer code of a condition used in seed derivation.
pub(crate) fn condition_code(universe: &ConceptUniverse, cond: &Condition) -> u64 {
    let concept = match cond.concept {
        ConceptSlot::Concept(c) => c,
        ConceptSlot::Null => universe.n_concepts(),
    };
    (concept * universe.n_contexts() + cond.context) as u64
}

impl ReplayCache {
    /// Generates `per_condition` samples for every distinct condition in
    /// `conditions`. Sample `j` of condition `c` starts from the noise of
    /// seed `derive_seed([REPLAY, seed, code(c), j])`.
    pub fn build(
        teacher: &DenoiserNet,
        universe: &ConceptUniverse,
        sched: &NoiseSchedule,
        conditions: &[Condition],
        per_condition: usize,
        ddim_steps: usize,
        seed: u64,
    ) -> Result<Self> {
        let ladder = ddim_ladder(sched.timesteps(), ddim_steps)?;
        let dim = teacher.architecture().data_dim;
        let mut entries = BTreeMap::new();
        for cond in conditions {
            if entries.contains_key(cond) {
                continue;
            }
            let embedding = universe.embed(cond);
            let code = condition_code(universe, cond);
            let samples = (0..per_condition as u64)
                .map(|j| {
                    let s = rng::derive_seed(&[rng::domain::REPLAY, seed, code, j]);
                    let z0 = ddim_sample_from(teacher, &embedding, sched, &ladder, initial_noise(dim, s))?;
                    Ok(ReplaySample { seed: s, z0 })
                })
                .collect::<Result<Vec<_>>>()?;
            entries.insert(*cond, samples);
        }
        Ok(Self { entries, ddim_steps })
    }

    pub fn ddim_steps(&self) -> usize {
        self.ddim_steps
    }

    pub fn len(&self) -> usize {
        self.entries.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn samples(&self, cond: &Condition) -> Option<&[ReplaySample]> {
        self.entries.get(cond).map(Vec::as_slice)
    }

    pub fn conditions(&self) -> impl Iterator<Item = &Condition> {
        self.entries.keys()
    }

    /// Uniformly chosen cached sample for `cond`.
    pub fn pick(&self, cond: &Condition, r: &mut Rng) -> Result<&[f64]> {
        let samples = self
            .entries
            .get(cond)
            .filter(|s| !s.is_empty())
            .ok_or_else(|| Error::Usage(format!("replay cache has no samples for condition {cond:?}")))?;
        Ok(&samples[r.random_range(0..samples.len())].z0)
    }
}
