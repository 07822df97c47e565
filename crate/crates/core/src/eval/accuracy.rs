use serde::{Deserialize, Serialize};

use super::sampler::Sampler;
use crate::error::{Error, Result};
use crate::world::{ConceptUniverse, Condition};

/// Oracle verdict counts for the samples of one (concept, context) cell.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellStats {
    pub n: usize,
    /// Samples classified as the requested concept.
    pub concept_hits: usize,
    /// Samples whose inferred context is the requested one.
    pub context_hits: usize,
}

impl CellStats {
    pub fn from_samples(universe: &ConceptUniverse, cond: &Condition, samples: &[Vec<f64>]) -> Self {
        let mut s = CellStats { n: samples.len(), ..Default::default() };
        for x in samples {
            let v = universe.oracle_classify(x);
            if cond.concept_index() == Some(v.concept) {
                s.concept_hits += 1;
            }
            if v.context == cond.context {
                s.context_hits += 1;
            }
        }
        s
    }

    pub fn concept_rate(&self) -> f64 {
        self.concept_hits as f64 / self.n as f64
    }

    pub fn context_rate(&self) -> f64 {
        self.context_hits as f64 / self.n as f64
    }
}

fn check_n(n: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::Usage("sample count must be at least 1".into()));
    }
    Ok(())
}

fn check_concept(universe: &ConceptUniverse, c: usize) -> Result<()> {
    if c >= universe.n_concepts() {
        return Err(Error::Lookup { kind: "concept", id: c.to_string() });
    }
    Ok(())
}

pub fn cell_stats<S: Sampler + ?Sized>(
    sampler: &S,
    universe: &ConceptUniverse,
    cond: &Condition,
    n: usize,
    seed: u64,
) -> Result<CellStats> {
    check_n(n)?;
    Ok(CellStats::from_samples(universe, cond, &sampler.sample(cond, n, seed)?))
}

/// Stats for `concept` in every context, in context order.
pub fn concept_stats<S: Sampler + ?Sized>(
    sampler: &S,
    universe: &ConceptUniverse,
    concept: usize,
    n: usize,
    seed: u64,
) -> Result<Vec<CellStats>> {
    check_concept(universe, concept)?;
    (0..universe.n_contexts()).map(|k| cell_stats(sampler, universe, &Condition::new(concept, k), n, seed)).collect()
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, k) = v.fold((0.0, 0usize), |(s, k), x| (s + x, k + 1));
    s / k as f64
}

/// Fraction of samples conditioned on `concept` that the oracle does not
/// recognise as `concept`, averaged over contexts.
pub fn unlearning_accuracy<S: Sampler + ?Sized>(
    sampler: &S,
    concept: usize,
    universe: &ConceptUniverse,
    n: usize,
    seed: u64,
) -> Result<f64> {
    let stats = concept_stats(sampler, universe, concept, n, seed)?;
    Ok(ua_from(&stats))
}

/// Fraction of samples classified as their conditioning concept, averaged
/// over `concepts` and contexts. Evaluating a concept in `forgotten` is a
/// protocol violation.
pub fn retention_accuracy<S: Sampler + ?Sized>(
    sampler: &S,
    concepts: &[usize],
    forgotten: &[usize],
    universe: &ConceptUniverse,
    n: usize,
    seed: u64,
) -> Result<f64> {
    check_retention_set(universe, concepts, forgotten)?;
    let mut all = Vec::new();
    for &c in concepts {
        all.extend(concept_stats(sampler, universe, c, n, seed)?);
    }
    Ok(mean(all.iter().map(CellStats::concept_rate)))
}

pub(crate) fn check_retention_set(universe: &ConceptUniverse, concepts: &[usize], forgotten: &[usize]) -> Result<()> {
    if concepts.is_empty() {
        return Err(Error::Usage("retention accuracy needs a non-empty concept set".into()));
    }
    if let Some(c) = concepts.iter().find(|c| forgotten.contains(c)) {
        return Err(Error::Usage(format!("concept `{}` is in the forget set", universe.concept_id(*c))));
    }
    Ok(())
}

/// Fraction of samples conditioned on `concept` whose inferred context is
/// the requested one, whatever concept they show.
pub fn context_alignment<S: Sampler + ?Sized>(
    sampler: &S,
    concept: usize,
    universe: &ConceptUniverse,
    n: usize,
    seed: u64,
) -> Result<f64> {
    let stats = concept_stats(sampler, universe, concept, n, seed)?;
    Ok(cas_from(&stats))
}

pub(crate) fn ua_from(stats: &[CellStats]) -> f64 {
    1.0 - mean(stats.iter().map(CellStats::concept_rate))
}

pub(crate) fn cas_from(stats: &[CellStats]) -> f64 {
    mean(stats.iter().map(CellStats::context_rate))
}

pub(crate) fn ra_from<'a>(stats: impl Iterator<Item = &'a CellStats>) -> f64 {
    mean(stats.map(CellStats::concept_rate))
}
