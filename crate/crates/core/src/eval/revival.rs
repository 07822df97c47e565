use serde::{Deserialize, Serialize};

use super::accuracy::{concept_stats, ua_from};
use super::sampler::Sampler;
use crate::error::{Error, Result};
use crate::world::ConceptUniverse;

/// Default UA drop that counts as a revival.
pub const REVIVAL_THRESHOLD: f64 = 0.15;

/// A previously erased concept reappearing at a later step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RevivalEvent {
    pub eval_step: usize,
    pub forgotten_step: usize,
    pub concept: String,
    pub ua: f64,
    pub ua_at_forgetting: f64,
}

/// `ua[i - 1][j - 1]` is the UA after step `i` of the concept erased at step
/// `j <= i`; row `i - 1` has length `i`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RevivalMatrix {
    pub ua: Vec<Vec<f64>>,
    pub threshold: f64,
    pub events: Vec<RevivalEvent>,
}

impl RevivalMatrix {
    /// Builds the matrix from its rows and flags every entry below the
    /// diagonal value of its column by more than `threshold`.
    pub fn from_rows(ua: Vec<Vec<f64>>, schedule_ids: &[String], threshold: f64) -> Result<Self> {
        for (i, row) in ua.iter().enumerate() {
            if row.len() != i + 1 {
                return Err(Error::Structural(format!("revival row {} has length {}", i + 1, row.len())));
            }
        }
        let mut events = Vec::new();
        for i in 0..ua.len() {
            for j in 0..i {
                let base = ua[j][j];
                if ua[i][j] < base - threshold {
                    events.push(RevivalEvent {
                        eval_step: i + 1,
                        forgotten_step: j + 1,
                        concept: schedule_ids.get(j).cloned().unwrap_or_default(),
                        ua: ua[i][j],
                        ua_at_forgetting: base,
                    });
                }
            }
        }
        Ok(Self { ua, threshold, events })
    }
}

/// UA of every erased concept at every later step. `samplers[i - 1]` is the
/// model after step `i` of the universe's forget schedule.
pub fn revival_scan<S: Sampler>(
    samplers: &[S],
    universe: &ConceptUniverse,
    n: usize,
    seed: u64,
    threshold: f64,
) -> Result<RevivalMatrix> {
    let schedule = universe.forget_schedule();
    if samplers.len() > schedule.len() {
        return Err(Error::Usage(format!("{} models for a schedule of length {}", samplers.len(), schedule.len())));
    }
    let mut rows = Vec::with_capacity(samplers.len());
    for (i, sampler) in samplers.iter().enumerate() {
        let row = schedule[..=i]
            .iter()
            .map(|&c| Ok(ua_from(&concept_stats(sampler, universe, c, n, seed)?)))
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    let ids: Vec<String> = schedule.iter().map(|&c| universe.concept_id(c).to_string()).collect();
    RevivalMatrix::from_rows(rows, &ids, threshold)
}
