//! The three training terms of an unlearning step and their weighted sum.

use serde::{Deserialize, Serialize};

use super::config::LossWeights;
use super::replay::ReplayCache;
use crate::diffusion::{forward_diffuse, sample_training_timestep, standard_normal_vec, NoiseSchedule, TimestepRange};
use crate::error::{ensure_len, Error, Result};
use crate::nn::{loss_and_grad, DenoiserNet, ParamVector, TrainExample};
use crate::rng::Rng;
use crate::world::{ConceptUniverse, Condition};

/// A noised sample on which the student, under `student_cond`, is matched to
/// the teacher under `teacher_cond`.
#[derive(Clone, Debug, PartialEq)]
pub struct DistillItem {
    pub z_t: Vec<f64>,
    pub t: usize,
    pub student_cond: Vec<f64>,
    pub teacher_cond: Vec<f64>,
}

/// Mean over items of `||teacher(z_t, t, c_T) - student(z_t, t, c_S)||^2` and
/// its gradient with respect to the student parameters only.
pub fn distill_loss(student: &DenoiserNet, teacher: &DenoiserNet, items: &[DistillItem]) -> Result<(f64, ParamVector)> {
    if items.is_empty() {
        return Err(Error::Usage("distillation needs a non-empty batch".into()));
    }
    let mut ws = teacher.workspace();
    let batch = items
        .iter()
        .map(|it| {
            let target = teacher.forward_with(&mut ws, &it.z_t, it.t, &it.teacher_cond)?.to_vec();
            Ok(TrainExample { z_t: it.z_t.clone(), t: it.t, cond: it.student_cond.clone(), target })
        })
        .collect::<Result<Vec<_>>>()?;
    loss_and_grad(student, &batch)
}

/// Read-only inputs shared by the replay-based terms.
#[derive(Clone, Copy, Debug)]
pub struct LossContext<'a> {
    pub universe: &'a ConceptUniverse,
    pub sched: &'a NoiseSchedule,
    pub replay: &'a ReplayCache,
    pub timesteps: TimestepRange,
}

impl LossContext<'_> {
    /// Takes a cached teacher sample of `source`, draws `t` and `eps` and
    /// returns the noised point.
    fn noised(&self, source: &Condition, r: &mut Rng) -> Result<(Vec<f64>, usize)> {
        let z0 = self.replay.pick(source, r)?.to_vec();
        let t = sample_training_timestep(self.timesteps, r)?;
        let eps = standard_normal_vec(r, z0.len());
        Ok((forward_diffuse(&z0, t, &eps, self.sched)?, t))
    }

    /// Trajectory re-steering items: `z0` from the teacher under the forget
    /// condition, student asked for `c_f`, teacher answers for `c_m`.
    pub fn unlearn_items(&self, pairs: &[(Condition, Condition)], r: &mut Rng) -> Result<Vec<DistillItem>> {
        pairs
            .iter()
            .map(|(forget, map)| {
                let (z_t, t) = self.noised(forget, r)?;
                Ok(DistillItem {
                    z_t,
                    t,
                    student_cond: self.universe.embed(forget),
                    teacher_cond: self.universe.embed(map),
                })
            })
            .collect()
    }

    /// Generative replay items: both models see the same retain condition.
    pub fn retain_items(&self, conds: &[Condition], r: &mut Rng) -> Result<Vec<DistillItem>> {
        conds
            .iter()
            .map(|c| {
                let (z_t, s) = self.noised(c, r)?;
                let e = self.universe.embed(c);
                Ok(DistillItem { z_t, t: s, student_cond: e.clone(), teacher_cond: e })
            })
            .collect()
    }
}

/// Trajectory re-steering loss over `(c_f, c_m)` pairs.
pub fn unlearn_batch_loss(
    student: &DenoiserNet,
    teacher: &DenoiserNet,
    pairs: &[(Condition, Condition)],
    ctx: &LossContext<'_>,
    r: &mut Rng,
) -> Result<(f64, ParamVector)> {
    if pairs.is_empty() {
        return Err(Error::Usage("unlearn batch is empty".into()));
    }
    distill_loss(student, teacher, &ctx.unlearn_items(pairs, r)?)
}

/// Knowledge-preservation loss over retain conditions.
pub fn retain_batch_loss(
    student: &DenoiserNet,
    teacher: &DenoiserNet,
    conds: &[Condition],
    ctx: &LossContext<'_>,
    r: &mut Rng,
) -> Result<(f64, ParamVector)> {
    if conds.is_empty() {
        return Err(Error::Usage("retain batch is empty".into()));
    }
    distill_loss(student, teacher, &ctx.retain_items(conds, r)?)
}

/// `||student - teacher||^2` with gradient `2 (student - teacher)`.
pub fn reg_loss(student: &ParamVector, teacher: &ParamVector) -> Result<(f64, ParamVector)> {
    ensure_len("reg_loss parameters", teacher.len(), student.len())?;
    let diff: Vec<f64> = student.as_slice().iter().zip(teacher.as_slice()).map(|(s, t)| s - t).collect();
    let loss = diff.iter().map(|d| d * d).sum();
    ParamVector::new(diff.into_iter().map(|d| 2.0 * d).collect()).map(|g| (loss, g))
}

/// Unweighted terms of one iteration and their weighted total.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub unlearn: f64,
    pub retain: f64,
    pub reg: f64,
    pub total: f64,
}

/// One iteration's sub-batches.
#[derive(Clone, Debug, PartialEq)]
pub struct StepBatches {
    pub pairs: Vec<(Condition, Condition)>,
    pub retain: Vec<Condition>,
}

/// Random streams of the two replay terms, kept separate so that zeroing one
/// weight does not change the draws of the other.
pub struct TermRngs<'r> {
    pub unlearn: &'r mut Rng,
    pub retain: &'r mut Rng,
}

/// Weighted objective `lu Lu + lr Lr + lreg Lreg`. Terms with zero weight
/// are not evaluated and are reported as 0.
pub fn total_step_loss(
    student: &DenoiserNet,
    teacher: &DenoiserNet,
    batches: &StepBatches,
    weights: LossWeights,
    ctx: &LossContext<'_>,
    rngs: TermRngs<'_>,
) -> Result<(f64, ParamVector, LossBreakdown)> {
    let n = student.params().len();
    let mut grad = vec![0.0; n];
    let mut b = LossBreakdown::default();
    let mut add = |w: f64, g: &ParamVector| {
        for (acc, v) in grad.iter_mut().zip(g.as_slice()) {
            *acc += w * v;
        }
    };
    if weights.unlearn != 0.0 {
        let (l, g) = unlearn_batch_loss(student, teacher, &batches.pairs, ctx, rngs.unlearn)?;
        b.unlearn = l;
        add(weights.unlearn, &g);
    }
    if weights.retain != 0.0 {
        let (l, g) = retain_batch_loss(student, teacher, &batches.retain, ctx, rngs.retain)?;
        b.retain = l;
        add(weights.retain, &g);
    }
    if weights.reg != 0.0 {
        let (l, g) = reg_loss(student.params(), teacher.params())?;
        b.reg = l;
        add(weights.reg, &g);
    }
    b.total = weights.unlearn * b.unlearn + weights.retain * b.retain + weights.reg * b.reg;
    let grad = ParamVector::new(grad)?;
    Ok((b.total, grad, b))
}
