//! Training the base model on ground-truth samples of every cell.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::checkpoint::{Checkpoint, Provenance, StepConfig};
use super::config::PretrainConfig;
use crate::diffusion::{forward_diffuse, standard_normal_vec, NoiseSchedule, ScheduleParams};
use crate::error::{Error, Result};
use crate::eval::accuracy::cell_stats;
use crate::eval::ModelSampler;
use crate::nn::{loss_and_grad, AdamConfig, AdamState, Architecture, DenoiserNet, TrainExample};
use crate::rng::{self, Rng};
use crate::world::{ConceptUniverse, Condition};

/// Oracle accuracies of base-model samples for one cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellGate {
    pub concept: String,
    pub context: String,
    pub concept_accuracy: f64,
    pub context_accuracy: f64,
}

/// Outcome of the base-model quality gates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaseReport {
    pub cells: Vec<CellGate>,
    pub min_concept_accuracy: f64,
    pub min_context_accuracy: f64,
    /// Denoising loss on the fixed probe batch before training.
    pub probe_loss_initial: f64,
    pub probe_loss_final: f64,
    /// Loss of the exact posterior-mean noise predictor on the probe batch.
    pub probe_bayes_floor: f64,
    /// `(initial - floor) / (final - floor)`.
    pub excess_loss_reduction: f64,
    pub concept_gate: bool,
    pub context_gate: bool,
    pub loss_gate: bool,
}

impl BaseReport {
    pub fn passed(&self) -> bool {
        self.concept_gate && self.context_gate && self.loss_gate
    }

    pub fn summary(&self) -> String {
        format!(
            "min concept accuracy {:.3} ({}), min context accuracy {:.3} ({}), excess loss reduction {:.1}x ({})",
            self.min_concept_accuracy,
            verdict(self.concept_gate),
            self.min_context_accuracy,
            verdict(self.context_gate),
            self.excess_loss_reduction,
            verdict(self.loss_gate)
        )
    }
}

fn verdict(ok: bool) -> &'static str {
    if ok {
        "pass"
    } else {
        "FAIL"
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PretrainOutcome {
    pub checkpoint: Checkpoint,
    pub report: BaseReport,
    /// Batch loss of every iteration.
    pub loss_curve: Vec<f64>,
}

impl PretrainOutcome {
    pub fn require_gates(&self) -> Result<()> {
        if self.report.passed() {
            Ok(())
        } else {
            Err(Error::PretrainGate(self.report.summary()))
        }
    }
}

/// Training distribution: a uniformly random cell, or the null condition
/// with probability `null_prob`.
fn draw_example(universe: &ConceptUniverse, sched: &NoiseSchedule, null_prob: f64, r: &mut Rng) -> Result<(Condition, TrainExample)> {
    let cond = if r.random::<f64>() < null_prob {
        Condition::null(0)
    } else {
        Condition::new(r.random_range(0..universe.n_concepts()), r.random_range(0..universe.n_contexts()))
    };
    let x0 = universe.draw(&cond, r)?;
    let t = r.random_range(1..=sched.timesteps());
    let eps = standard_normal_vec(r, x0.len());
    let z_t = forward_diffuse(&x0, t, &eps, sched)?;
    Ok((cond, TrainExample { z_t, t, cond: universe.embed(&cond), target: eps }))
}

/// Fixed held-out batch for the loss gate, with the Bayes-optimal loss.
pub struct LossProbe {
    pub batch: Vec<TrainExample>,
    pub bayes_floor: f64,
}

impl LossProbe {
    pub fn new(universe: &ConceptUniverse, sched: &NoiseSchedule, cfg: &PretrainConfig) -> Result<Self> {
        let mut r = rng::stream(&[rng::domain::PRETRAIN_EVAL, cfg.seed]);
        let mut batch = Vec::with_capacity(cfg.gate.loss_probe_size);
        let mut floor = 0.0;
        for _ in 0..cfg.gate.loss_probe_size {
            let (cond, ex) = draw_example(universe, sched, cfg.null_prob, &mut r)?;
            let best = universe.posterior_mean_noise(&cond, &ex.z_t, sched.alpha_bar(ex.t))?;
            floor += best.iter().zip(&ex.target).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
            batch.push(ex);
        }
        Ok(Self { bayes_floor: floor / batch.len().max(1) as f64, batch })
    }

    pub fn loss(&self, net: &DenoiserNet) -> Result<f64> {
        let mut ws = net.workspace();
        let mut total = 0.0;
        for ex in &self.batch {
            let out = net.forward_with(&mut ws, &ex.z_t, ex.t, &ex.cond)?;
            total += out.iter().zip(&ex.target).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        }
        Ok(total / self.batch.len() as f64)
    }
}

/// Trains `theta_0` and evaluates the base-quality gates. The outcome is
/// returned whether or not the gates pass.
pub fn pretrain_base(universe: &ConceptUniverse, schedule: ScheduleParams, cfg: &PretrainConfig) -> Result<PretrainOutcome> {
    let sched = schedule.build()?;
    cfg.validate(sched.timesteps())?;
    if cfg.gate.loss_probe_size == 0 {
        return Err(Error::Config("loss probe needs at least one example".into()));
    }
    let arch = Architecture::new(crate::nn::DATA_DIM, crate::nn::TIME_EMBED_DIM, universe.cond_dim(), cfg.hidden.clone())?;
    if universe.dim() != arch.data_dim {
        return Err(Error::Config(format!("universe dimension {} differs from the network's {}", universe.dim(), arch.data_dim)));
    }
    let mut net = DenoiserNet::init(arch.clone(), cfg.seed);
    let probe = LossProbe::new(universe, &sched, cfg)?;
    let probe_loss_initial = probe.loss(&net)?;

    let mut adam = AdamState::new(net.params().len(), AdamConfig::with_lr(cfg.lr));
    let mut params = net.params().clone();
    let mut loss_curve = Vec::with_capacity(cfg.iterations);
    for it in 0..cfg.iterations {
        let mut r = rng::stream(&[rng::domain::PRETRAIN, cfg.seed, it as u64]);
        let batch = (0..cfg.batch_size)
            .map(|_| draw_example(universe, &sched, cfg.null_prob, &mut r).map(|(_, ex)| ex))
            .collect::<Result<Vec<_>>>()?;
        let (loss, grad) = loss_and_grad(&net, &batch)?;
        loss_curve.push(loss);
        adam.config.lr = cfg.lr_at(it);
        adam.update(&mut params, &grad)?;
        net = net.with_params(params.clone())?;
    }

    let probe_loss_final = probe.loss(&net)?;
    let report = gate_report(&net, universe, &sched, cfg, probe_loss_initial, probe_loss_final, probe.bayes_floor)?;
    let checkpoint = Checkpoint {
        step: 0,
        architecture: arch,
        params,
        schedule,
        config: StepConfig::Pretrain(cfg.clone()),
        forget_set: Vec::new(),
        provenance: Provenance { seed: cfg.seed, iterations: cfg.iterations },
    };
    Ok(PretrainOutcome { checkpoint, report, loss_curve })
}

fn gate_report(
    net: &DenoiserNet,
    universe: &ConceptUniverse,
    sched: &NoiseSchedule,
    cfg: &PretrainConfig,
    probe_loss_initial: f64,
    probe_loss_final: f64,
    probe_bayes_floor: f64,
) -> Result<BaseReport> {
    let sampler = ModelSampler { net, universe, sched, ddim_steps: cfg.gate.ddim_steps };
    let seed = rng::derive_seed(&[rng::domain::PRETRAIN_EVAL, cfg.seed]);
    let mut cells = Vec::new();
    for c in 0..universe.n_concepts() {
        for k in 0..universe.n_contexts() {
            let s = cell_stats(&sampler, universe, &Condition::new(c, k), cfg.gate.n_per_cell, seed)?;
            cells.push(CellGate {
                concept: universe.concept_id(c).to_string(),
                context: universe.context_id(k).to_string(),
                concept_accuracy: s.concept_rate(),
                context_accuracy: s.context_rate(),
            });
        }
    }
    let min_concept_accuracy = cells.iter().map(|c| c.concept_accuracy).fold(1.0, f64::min);
    let min_context_accuracy = cells.iter().map(|c| c.context_accuracy).fold(1.0, f64::min);
    let excess_final = probe_loss_final - probe_bayes_floor;
    let excess_loss_reduction =
        if excess_final > 0.0 { (probe_loss_initial - probe_bayes_floor) / excess_final } else { f64::INFINITY };
    Ok(BaseReport {
        min_concept_accuracy,
        min_context_accuracy,
        concept_gate: min_concept_accuracy >= cfg.gate.min_concept_accuracy,
        context_gate: min_context_accuracy >= cfg.gate.min_context_accuracy,
        loss_gate: excess_loss_reduction >= cfg.gate.min_excess_loss_reduction,
        cells,
        probe_loss_initial,
        probe_loss_final,
        probe_bayes_floor,
        excess_loss_reduction,
    })
}
