use crate::diffusion::{ddim_ladder, ddim_sample_from, initial_noise, NoiseSchedule};
use crate::engine::replay::condition_code;
use crate::error::Result;
use crate::nn::DenoiserNet;
use crate::rng;
use crate::world::{ConceptUniverse, Condition};

/// Anything that produces conditional samples deterministically per seed.
pub trait Sampler {
    fn sample(&self, cond: &Condition, n: usize, seed: u64) -> Result<Vec<Vec<f64>>>;
}

/// Deterministic DDIM sampling from a network. Sample `j` of `cond` starts
/// from the noise of `derive_seed([EVAL, seed, code(cond), j])`.
pub struct ModelSampler<'a> {
    pub net: &'a DenoiserNet,
    pub universe: &'a ConceptUniverse,
    pub sched: &'a NoiseSchedule,
    pub ddim_steps: usize,
}

impl Sampler for ModelSampler<'_> {
    fn sample(&self, cond: &Condition, n: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
        let ladder = ddim_ladder(self.sched.timesteps(), self.ddim_steps)?;
        let embedding = self.universe.embed(cond);
        let code = condition_code(self.universe, cond);
        let dim = self.net.architecture().data_dim;
        (0..n as u64)
            .map(|j| {
                let s = rng::derive_seed(&[rng::domain::EVAL, seed, code, j]);
                ddim_sample_from(self.net, &embedding, self.sched, &ladder, initial_noise(dim, s))
            })
            .collect()
    }
}

/// Exact draws from the universe, optionally re-targeted: each requested
/// condition is passed through `redirect` first.
pub struct GroundTruthSampler<'a, F = fn(&Condition) -> Condition> {
    pub universe: &'a ConceptUniverse,
    pub redirect: F,
}

impl<'a> GroundTruthSampler<'a> {
    pub fn new(universe: &'a ConceptUniverse) -> Self {
        Self { universe, redirect: |c| *c }
    }
}

impl<F: Fn(&Condition) -> Condition> Sampler for GroundTruthSampler<'_, F> {
    fn sample(&self, cond: &Condition, n: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
        let s = rng::derive_seed(&[rng::domain::EVAL, seed, condition_code(self.universe, cond)]);
        self.universe.sample_ground_truth(&(self.redirect)(cond), n, s)
    }
}
