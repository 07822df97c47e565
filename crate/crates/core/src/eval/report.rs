use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::accuracy::{cas_from, ra_from, ua_from, CellStats};
use super::drift::{drift_metrics, DriftMetrics};
use super::frechet::frechet_distance;
use super::revival::{RevivalMatrix, REVIVAL_THRESHOLD};
use super::sampler::{ModelSampler, Sampler};
use crate::diffusion::NoiseSchedule;
use crate::engine::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::world::{ConceptUniverse, Condition};

/// Exact column order of the per-run CSV.
pub const CSV_HEADER: [&str; 10] = ["step", "concept", "UA", "CAS", "RRA", "GRA", "FRECHET", "D_STEP", "D_CUM", "SLACK"];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Samples per (concept, context) cell.
    pub n_per_cell: usize,
    pub ddim_steps: usize,
    /// Evaluation seed; sample seeds live in their own domain, disjoint from
    /// every training stream.
    #[serde(default)]
    pub seed: u64,
    pub revival_threshold: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { n_per_cell: 200, ddim_steps: 20, seed: 0, revival_threshold: REVIVAL_THRESHOLD }
    }
}

impl EvalConfig {
    pub fn validate(&self, timesteps: usize) -> Result<()> {
        if self.n_per_cell < 3 {
            return Err(Error::Config("evaluation needs at least 3 samples per cell".into()));
        }
        if self.ddim_steps == 0 || self.ddim_steps > timesteps {
            return Err(Error::Config(format!("evaluation DDIM steps must be in [1, {timesteps}]")));
        }
        if !(self.revival_threshold.is_finite() && self.revival_threshold >= 0.0) {
            return Err(Error::Config("revival threshold must be non-negative".into()));
        }
        Ok(())
    }
}

/// Samples of every (concept, context) cell.
pub type CellSamples = BTreeMap<Condition, Vec<Vec<f64>>>;

pub fn sample_all_cells<S: Sampler + ?Sized>(sampler: &S, universe: &ConceptUniverse, n: usize, seed: u64) -> Result<CellSamples> {
    let mut out = BTreeMap::new();
    for c in 0..universe.n_concepts() {
        for k in 0..universe.n_contexts() {
            let cond = Condition::new(c, k);
            out.insert(cond, sampler.sample(&cond, n, seed)?);
        }
    }
    Ok(out)
}

/// One row of the metrics report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub step: usize,
    /// Concept erased at this step; absent for the base model.
    pub concept: Option<String>,
    pub ua: Option<f64>,
    pub cas: Option<f64>,
    /// Retention on the cumulative related set; absent while it is empty.
    pub rra: Option<f64>,
    pub gra: f64,
    /// Mean per-cell squared Frechet distance to base-model samples over
    /// the retained cells.
    pub frechet: f64,
    pub d_step: f64,
    pub d_cum: f64,
    pub slack: f64,
    /// UA of every concept erased so far, in schedule order.
    pub forgotten_ua: Vec<f64>,
    /// Model samples drawn for this row.
    pub samples: usize,
}

/// Metrics of the model behind `sampler` after `step`, compared against base
/// samples drawn with the same seeds. Drift fields are left at 0.
pub fn evaluate_step<S: Sampler + ?Sized>(
    sampler: &S,
    base_samples: &CellSamples,
    step: usize,
    universe: &ConceptUniverse,
    cfg: &EvalConfig,
) -> Result<StepMetrics> {
    let model = sample_all_cells(sampler, universe, cfg.n_per_cell, cfg.seed)?;
    let stats: BTreeMap<Condition, CellStats> =
        model.iter().map(|(c, s)| (*c, CellStats::from_samples(universe, c, s))).collect();
    let concept_cells = |c: usize| -> Vec<CellStats> {
        (0..universe.n_contexts()).map(|k| stats[&Condition::new(c, k)]).collect()
    };
    let forgotten = universe.forgotten_through(step);
    let target = step.checked_sub(1).map(|i| forgotten[i]);
    let forgotten_ua: Vec<f64> = forgotten.iter().map(|&c| ua_from(&concept_cells(c))).collect();
    let set_rate = |set: &[usize]| -> Option<f64> {
        if set.is_empty() {
            return None;
        }
        let cells: Vec<CellStats> = set.iter().flat_map(|&c| concept_cells(c)).collect();
        Some(ra_from(cells.iter()))
    };
    let gra = set_rate(&universe.general_set())
        .ok_or_else(|| Error::Config("the universe has an empty general set".into()))?;
    let mut frechet = 0.0;
    let retained = universe.retained_at(step);
    for &c in &retained {
        for k in 0..universe.n_contexts() {
            let cond = Condition::new(c, k);
            let base = base_samples
                .get(&cond)
                .ok_or_else(|| Error::Usage(format!("no base samples for {}", universe.describe(&cond))))?;
            frechet += frechet_distance(&model[&cond], base)?;
        }
    }
    frechet /= (retained.len() * universe.n_contexts()) as f64;
    Ok(StepMetrics {
        step,
        concept: target.map(|c| universe.concept_id(c).to_string()),
        ua: target.map(|c| ua_from(&concept_cells(c))),
        cas: target.map(|c| cas_from(&concept_cells(c))),
        rra: set_rate(&universe.cumulative_related(step)),
        gra,
        frechet,
        d_step: 0.0,
        d_cum: 0.0,
        slack: 0.0,
        forgotten_ua,
        samples: model.values().map(Vec::len).sum(),
    })
}

/// Metrics of a single checkpoint against the base model.
pub fn evaluate_checkpoint(
    checkpoint: &Checkpoint,
    base: &Checkpoint,
    universe: &ConceptUniverse,
    sched: &NoiseSchedule,
    cfg: &EvalConfig,
) -> Result<StepMetrics> {
    let base_net = base.net()?;
    let base_sampler = ModelSampler { net: &base_net, universe, sched, ddim_steps: cfg.ddim_steps };
    let base_samples = sample_all_cells(&base_sampler, universe, cfg.n_per_cell, cfg.seed)?;
    let net = checkpoint.net()?;
    let sampler = ModelSampler { net: &net, universe, sched, ddim_steps: cfg.ddim_steps };
    evaluate_step(&sampler, &base_samples, checkpoint.step, universe, cfg)
}

/// Full evaluation of one run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub eval: EvalConfig,
    pub rows: Vec<StepMetrics>,
    pub drift: DriftMetrics,
    pub revival: RevivalMatrix,
    /// Config hash of every checkpoint, by step.
    pub config_hashes: Vec<String>,
    /// Parameter hash of every checkpoint, by step.
    pub params_hashes: Vec<String>,
}

/// Checks that `checkpoints` is a run: steps `0..=K` in order, each erasing
/// the next concept of the universe's schedule.
pub fn check_run(checkpoints: &[Checkpoint], universe: &ConceptUniverse) -> Result<()> {
    if checkpoints.is_empty() {
        return Err(Error::Usage("a run needs at least the base checkpoint".into()));
    }
    for (i, c) in checkpoints.iter().enumerate() {
        if c.step != i {
            return Err(Error::Usage(format!("checkpoint {i} has step {}", c.step)));
        }
        let expected: Vec<&str> = universe.forgotten_through(i).iter().map(|&k| universe.concept_id(k)).collect();
        if c.forget_set != expected {
            return Err(Error::Usage(format!("checkpoint {i} has forget set {:?}, expected {expected:?}", c.forget_set)));
        }
    }
    Ok(())
}

pub fn evaluate_run(checkpoints: &[Checkpoint], universe: &ConceptUniverse, cfg: &EvalConfig) -> Result<MetricsReport> {
    check_run(checkpoints, universe)?;
    let sched = checkpoints[0].schedule.build()?;
    cfg.validate(sched.timesteps())?;
    let nets = checkpoints.iter().map(Checkpoint::net).collect::<Result<Vec<_>>>()?;
    let sampler = |i: usize| ModelSampler { net: &nets[i], universe, sched: &sched, ddim_steps: cfg.ddim_steps };
    let base_samples = sample_all_cells(&sampler(0), universe, cfg.n_per_cell, cfg.seed)?;
    let drift = if checkpoints.len() > 1 { drift_metrics(checkpoints)? } else { DriftMetrics { d_step: vec![0.0], d_cum: vec![0.0], slack: vec![0.0] } };
    let mut rows = Vec::with_capacity(checkpoints.len());
    for i in 0..checkpoints.len() {
        let mut row = evaluate_step(&sampler(i), &base_samples, i, universe, cfg)?;
        row.d_step = drift.d_step[i];
        row.d_cum = drift.d_cum[i];
        row.slack = drift.slack[i];
        rows.push(row);
    }
    let ids: Vec<String> = universe.forget_schedule().iter().map(|&c| universe.concept_id(c).to_string()).collect();
    let revival =
        RevivalMatrix::from_rows(rows[1..].iter().map(|r| r.forgotten_ua.clone()).collect(), &ids, cfg.revival_threshold)?;
    Ok(MetricsReport {
        eval: *cfg,
        rows,
        drift,
        revival,
        config_hashes: checkpoints.iter().map(|c| c.config.hash()).collect(),
        params_hashes: checkpoints.iter().map(Checkpoint::params_hash).collect(),
    })
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl StepMetrics {
    /// Values in [`CSV_HEADER`] order; absent metrics are empty fields.
    pub fn csv_fields(&self) -> Vec<String> {
        vec![
            self.step.to_string(),
            self.concept.clone().unwrap_or_default(),
            opt(self.ua),
            opt(self.cas),
            opt(self.rra),
            self.gra.to_string(),
            self.frechet.to_string(),
            self.d_step.to_string(),
            self.d_cum.to_string(),
            self.slack.to_string(),
        ]
    }
}

impl MetricsReport {
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(CSV_HEADER).expect("in-memory write");
        for r in &self.rows {
            w.write_record(r.csv_fields()).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv is utf-8")
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises") + "\n"
    }

    pub fn final_row(&self) -> &StepMetrics {
        self.rows.last().expect("a report has at least one row")
    }
}
