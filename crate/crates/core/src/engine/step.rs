//! One sequential unlearning step and the fold over the forget schedule.

use std::time::Instant;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::checkpoint::{Checkpoint, Provenance, StepConfig};
use super::config::UnlearnStepConfig;
use super::losses::{total_step_loss, LossBreakdown, LossContext, StepBatches, TermRngs};
use super::replay::ReplayCache;
use crate::error::{Error, Result};
use crate::nn::{AdamConfig, AdamState};
use crate::rng;
use crate::world::ConceptUniverse;

/// Loss terms above this magnitude abort the step.
pub const DIVERGENCE_LIMIT: f64 = 1e6;

/// Training record of one step. Wall time is kept here and never in the
/// checkpoint, so checkpoint bytes depend only on the inputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: usize,
    pub concept: String,
    pub losses: Vec<LossBreakdown>,
    pub wall_seconds: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepOutcome {
    pub checkpoint: Checkpoint,
    pub log: StepLog,
}

fn guard(iteration: usize, b: &LossBreakdown) -> Result<()> {
    let terms = [("unlearn", b.unlearn), ("retain", b.retain), ("reg", b.reg), ("total", b.total)];
    if let Some((name, v)) = terms.iter().find(|(_, v)| !v.is_finite() || v.abs() > DIVERGENCE_LIMIT) {
        return Err(Error::Divergence {
            iteration,
            detail: format!(
                "{name} term is {v} (unlearn {}, retain {}, reg {}, total {})",
                b.unlearn, b.retain, b.reg, b.total
            ),
        });
    }
    Ok(())
}

/// Erases the next concept of the schedule: the student starts from `prev`,
/// the teacher is a frozen copy of `prev`, and `cfg.iterations` Adam steps
/// are taken on the weighted objective. `prev` is not modified.
pub fn run_unlearn_step(prev: &Checkpoint, universe: &ConceptUniverse, cfg: &UnlearnStepConfig) -> Result<StepOutcome> {
    let started = Instant::now();
    let step = prev.step + 1;
    let schedule = universe.forget_schedule();
    if step > schedule.len() {
        return Err(Error::Usage(format!("checkpoint is at step {}, the schedule has {} steps", prev.step, schedule.len())));
    }
    let expected: Vec<&str> = universe.forgotten_through(prev.step).iter().map(|&c| universe.concept_id(c)).collect();
    if prev.forget_set != expected {
        return Err(Error::Usage(format!(
            "checkpoint forget set {:?} does not match the schedule prefix {expected:?}",
            prev.forget_set
        )));
    }
    let sched = prev.schedule.build()?;
    cfg.validate(sched.timesteps())?;

    let teacher = prev.net()?;
    let sets = universe.build_prompt_sets(step, cfg.mapping, cfg.prompts)?;
    let sources: Vec<_> = sets.forget.iter().chain(&sets.retain).copied().collect();
    let replay_seed = rng::derive_seed(&[cfg.seed, step as u64]);
    let replay =
        ReplayCache::build(&teacher, universe, &sched, &sources, cfg.replay_per_condition, cfg.ddim_steps, replay_seed)?;
    let ctx = LossContext { universe, sched: &sched, replay: &replay, timesteps: cfg.timesteps };
    let pairs: Vec<_> = sets.forget.iter().copied().zip(sets.map.iter().copied()).collect();

    let mut student = teacher.clone();
    let mut params = prev.params.clone();
    let mut adam = AdamState::new(params.len(), AdamConfig::with_lr(cfg.lr));
    let mut losses = Vec::with_capacity(cfg.iterations);
    for it in 0..cfg.iterations {
        let path = |domain: u64| rng::stream(&[domain, cfg.seed, step as u64, it as u64]);
        let mut pick = path(rng::domain::BATCH);
        let batches = StepBatches {
            pairs: (0..cfg.unlearn_batch).map(|_| pairs[pick.random_range(0..pairs.len())]).collect(),
            retain: (0..cfg.retain_batch).map(|_| sets.retain[pick.random_range(0..sets.retain.len())]).collect(),
        };
        let (mut ru, mut rr) = (path(rng::domain::UNLEARN), path(rng::domain::RETAIN));
        let rngs = TermRngs { unlearn: &mut ru, retain: &mut rr };
        let (_, grad, breakdown) =
            total_step_loss(&student, &teacher, &batches, cfg.weights, &ctx, rngs).map_err(|e| match e {
                Error::NonFinite { context, index } => {
                    Error::Divergence { iteration: it, detail: format!("non-finite value in {context} at index {index}") }
                }
                other => other,
            })?;
        guard(it, &breakdown)?;
        losses.push(breakdown);
        adam.update(&mut params, &grad).map_err(|e| Error::Divergence { iteration: it, detail: e.to_string() })?;
        student = student.with_params(params.clone())?;
    }

    let target = schedule[step - 1];
    let mut forget_set = prev.forget_set.clone();
    forget_set.push(universe.concept_id(target).to_string());
    let checkpoint = Checkpoint {
        step,
        architecture: prev.architecture.clone(),
        params,
        schedule: prev.schedule,
        config: StepConfig::Unlearn(cfg.clone()),
        forget_set,
        provenance: Provenance { seed: cfg.seed, iterations: cfg.iterations },
    };
    let log = StepLog {
        step,
        concept: universe.concept_id(target).to_string(),
        losses,
        wall_seconds: started.elapsed().as_secs_f64(),
    };
    Ok(StepOutcome { checkpoint, log })
}

/// Checkpoints `start..=K` and logs of the completed steps. `failure` holds
/// the error that halted the run early, if any.
#[derive(Debug)]
pub struct SequenceRun {
    pub checkpoints: Vec<Checkpoint>,
    pub logs: Vec<StepLog>,
    pub failure: Option<Error>,
}

/// Folds [`run_unlearn_step`] over the remaining schedule. `configs[i - 1]`
/// drives step `i`, so a run resumed from checkpoint `j` uses the same
/// configs as the uninterrupted one. `persist` sees each step as it
/// completes; its failure also halts the run.
pub fn run_sequence_with(
    start: &Checkpoint,
    universe: &ConceptUniverse,
    configs: &[UnlearnStepConfig],
    mut persist: impl FnMut(&StepOutcome) -> Result<()>,
) -> Result<SequenceRun> {
    let k = universe.forget_schedule().len();
    if configs.len() != k {
        return Err(Error::Config(format!("{} step configs for a schedule of length {k}", configs.len())));
    }
    if start.step > k {
        return Err(Error::Usage(format!("checkpoint step {} is beyond the schedule length {k}", start.step)));
    }
    let mut run = SequenceRun { checkpoints: vec![start.clone()], logs: Vec::new(), failure: None };
    for cfg in &configs[start.step..] {
        let prev = run.checkpoints.last().expect("run starts with a checkpoint");
        match run_unlearn_step(prev, universe, cfg).and_then(|o| persist(&o).map(|_| o)) {
            Ok(o) => {
                run.checkpoints.push(o.checkpoint);
                run.logs.push(o.log);
            }
            Err(e) => {
                run.failure = Some(e);
                break;
            }
        }
    }
    Ok(run)
}

pub fn run_sequence(start: &Checkpoint, universe: &ConceptUniverse, configs: &[UnlearnStepConfig]) -> Result<SequenceRun> {
    run_sequence_with(start, universe, configs, |_| Ok(()))
}
