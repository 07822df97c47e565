//! Shared fixtures and measurement routines. The dedicated suites assert on
//! these; the acceptance target reports them.
#![allow(dead_code)]

use cullab::diffusion::{
    ddim_sample, ddim_step, forward_diffuse, make_schedule, predict_z0, NoiseSchedule, ScheduleParams, TimestepRange,
};
use cullab::engine::{reg_loss, retain_batch_loss, unlearn_batch_loss, LossContext, ReplayCache};
use cullab::eval::frechet::{frechet_distance, GaussianFit};
use cullab::nn::{loss_and_grad, Architecture, DenoiserNet, ParamVector, TrainExample};
use cullab::rng::{stream, Rng};
use cullab::world::{default_universe, ConceptUniverse, Condition, LayoutParams};
use rand::Rng as _;
use rand_distr::StandardNormal;

pub const FD_STEP: f64 = 1e-5;
/// Gradient magnitudes below this are compared absolutely rather than
/// relatively; central differences at `FD_STEP` carry round-off of this order
/// times the loss scale.
pub const FD_FLOOR: f64 = 1e-6;

pub fn universe() -> ConceptUniverse {
    default_universe(LayoutParams::default(), 0).unwrap()
}

pub fn small_arch(u: &ConceptUniverse) -> Architecture {
    Architecture::new(2, 8, u.cond_dim(), vec![12, 10]).unwrap()
}

/// A network whose biases and weights are all away from zero, so that every
/// gradient coordinate is exercised.
pub fn random_net(arch: &Architecture, seed: u64) -> DenoiserNet {
    let mut r = stream(&[0xf00d, seed]);
    let p: Vec<f64> = (0..arch.param_count()).map(|_| 0.3 * r.sample::<f64, _>(StandardNormal)).collect();
    DenoiserNet::new(arch.clone(), ParamVector::new(p).unwrap()).unwrap()
}

pub fn normal_vec(r: &mut Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| r.sample(StandardNormal)).collect()
}

pub fn random_condition(u: &ConceptUniverse, r: &mut Rng) -> Condition {
    Condition::new(r.random_range(0..u.n_concepts()), r.random_range(0..u.n_contexts()))
}

/// Largest coordinate-wise `|a - n| / max(|a|, |n|, FD_FLOOR)` between the
/// analytic gradient and central differences of `f`.
pub fn fd_max_rel_error(params: &ParamVector, analytic: &ParamVector, f: impl Fn(&ParamVector) -> f64) -> f64 {
    let base = params.as_slice().to_vec();
    let mut worst = 0.0f64;
    for i in 0..base.len() {
        let mut plus = base.clone();
        plus[i] += FD_STEP;
        let mut minus = base.clone();
        minus[i] -= FD_STEP;
        let num = (f(&ParamVector::new(plus).unwrap()) - f(&ParamVector::new(minus).unwrap())) / (2.0 * FD_STEP);
        let a = analytic.as_slice()[i];
        let rel = (a - num).abs() / a.abs().max(num.abs()).max(FD_FLOOR);
        if rel > 1e-4 { eprintln!("coord {i}: analytic {a:e} numeric {num:e} f0 {:e}", f(params)); }
        worst = worst.max(rel);
    }
    worst
}

pub struct GradientReport {
    pub instances: usize,
    pub loss_and_grad: f64,
    pub unlearn: f64,
    pub retain: f64,
    pub reg: f64,
}

/// Central-difference check of the four differentiable objectives on
/// `instances` random instances each.
pub fn gradient_suite(instances: usize) -> GradientReport {
    let u = universe();
    let arch = small_arch(&u);
    // A short, mild schedule keeps DDIM samples of a random teacher (and so
    // the loss scale) of order one.
    let sched = make_schedule(50, 1e-4, 0.02).unwrap();
    let mut out = GradientReport { instances, loss_and_grad: 0.0, unlearn: 0.0, retain: 0.0, reg: 0.0 };
    for k in 0..instances as u64 {
        let student = random_net(&arch, 2 * k);
        let teacher = random_net(&arch, 2 * k + 1);
        let mut r = stream(&[0xfd, k]);

        let batch: Vec<TrainExample> = (0..4)
            .map(|_| TrainExample {
                z_t: normal_vec(&mut r, 2),
                t: r.random_range(1..=50),
                cond: u.embed(&random_condition(&u, &mut r)),
                target: normal_vec(&mut r, 2),
            })
            .collect();
        let (_, g) = loss_and_grad(&student, &batch).unwrap();
        let eval = |p: &ParamVector| loss_and_grad(&student.with_params(p.clone()).unwrap(), &batch).unwrap().0;
        out.loss_and_grad = out.loss_and_grad.max(fd_max_rel_error(student.params(), &g, eval));

        let conds: Vec<Condition> = (0..3).map(|_| random_condition(&u, &mut r)).collect();
        let pairs: Vec<(Condition, Condition)> =
            conds.iter().map(|c| (*c, random_condition(&u, &mut r))).collect();
        let replay = ReplayCache::build(&teacher, &u, &sched, &conds, 2, 5, k).unwrap();
        let ctx = LossContext { universe: &u, sched: &sched, replay: &replay, timesteps: TimestepRange::new(1, 50) };
        let draw = stream(&[0xfe, k]);

        let (_, g) = unlearn_batch_loss(&student, &teacher, &pairs, &ctx, &mut draw.clone()).unwrap();
        let eval = |p: &ParamVector| {
            let s = student.with_params(p.clone()).unwrap();
            unlearn_batch_loss(&s, &teacher, &pairs, &ctx, &mut draw.clone()).unwrap().0
        };
        out.unlearn = out.unlearn.max(fd_max_rel_error(student.params(), &g, eval));

        let (_, g) = retain_batch_loss(&student, &teacher, &conds, &ctx, &mut draw.clone()).unwrap();
        let eval = |p: &ParamVector| {
            let s = student.with_params(p.clone()).unwrap();
            retain_batch_loss(&s, &teacher, &conds, &ctx, &mut draw.clone()).unwrap().0
        };
        out.retain = out.retain.max(fd_max_rel_error(student.params(), &g, eval));

        let (_, g) = reg_loss(student.params(), teacher.params()).unwrap();
        let eval = |p: &ParamVector| reg_loss(p, teacher.params()).unwrap().0;
        out.reg = out.reg.max(fd_max_rel_error(student.params(), &g, eval));
    }
    out
}

pub struct MarginalReport {
    /// Largest `|mean - sqrt(abar) z0|` in units of `sigma / sqrt(n)`.
    pub mean_z: f64,
    /// Largest relative deviation of the sample variance from `1 - abar`.
    pub var_rel: f64,
}

/// Monte-Carlo check of the forward marginal at several timesteps.
pub fn forward_marginal(n: usize) -> MarginalReport {
    let sched = ScheduleParams::default().build().unwrap();
    let z0 = [1.7, -0.4];
    let mut r = stream(&[0x4d43]);
    let mut out = MarginalReport { mean_z: 0.0, var_rel: 0.0 };
    for t in [1, 20, 100, 200] {
        let ab = sched.alpha_bar(t);
        let sigma = (1.0 - ab).sqrt();
        let draws: Vec<Vec<f64>> =
            (0..n).map(|_| forward_diffuse(&z0, t, &normal_vec(&mut r, 2), &sched).unwrap()).collect();
        for d in 0..2 {
            let mean = draws.iter().map(|z| z[d]).sum::<f64>() / n as f64;
            let var = draws.iter().map(|z| (z[d] - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            out.mean_z = out.mean_z.max((mean - ab.sqrt() * z0[d]).abs() / (sigma / (n as f64).sqrt()));
            out.var_rel = out.var_rel.max((var / (1.0 - ab) - 1.0).abs());
        }
    }
    out
}

/// Largest error of `predict_z0` and of a DDIM step when fed the true noise.
pub fn perfect_oracle_error(sched: &NoiseSchedule, cases: usize) -> f64 {
    let mut r = stream(&[0x0e3]);
    let mut worst = 0.0f64;
    for _ in 0..cases {
        let z0: Vec<f64> = normal_vec(&mut r, 2).iter().map(|v| 3.0 * v).collect();
        let eps = normal_vec(&mut r, 2);
        let t = r.random_range(1..=sched.timesteps());
        let t_prev = r.random_range(0..t);
        let z_t = forward_diffuse(&z0, t, &eps, sched).unwrap();
        let back = predict_z0(&z_t, &eps, t, sched).unwrap();
        let stepped = ddim_step(&z_t, &eps, t, t_prev, sched).unwrap();
        let expect = if t_prev == 0 { z0.clone() } else { forward_diffuse(&z0, t_prev, &eps, sched).unwrap() };
        for d in 0..2 {
            worst = worst.max((back[d] - z0[d]).abs()).max((stepped[d] - expect[d]).abs());
        }
    }
    worst
}

pub fn alpha_bar_strictly_decreasing(sched: &NoiseSchedule) -> bool {
    let ab = sched.alpha_bar_table();
    ab[0] == 1.0 && ab.windows(2).all(|w| w[1] < w[0]) && ab[ab.len() - 1] > 0.0
}

pub fn ddim_bitwise_deterministic(net: &DenoiserNet, u: &ConceptUniverse, sched: &NoiseSchedule) -> bool {
    (0..8).all(|s| {
        let c = u.embed(&Condition::new(s as usize % u.n_concepts(), s as usize % u.n_contexts()));
        let a = ddim_sample(net, &c, sched, 20, s).unwrap();
        let b = ddim_sample(net, &c, sched, 20, s).unwrap();
        a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits())
    })
}

/// Symmetric square root by eigendecomposition, the independent route.
pub fn sqrtm_eig(m: [[f64; 2]; 2]) -> [[f64; 2]; 2] {
    let (a, b, d) = (m[0][0], 0.5 * (m[0][1] + m[1][0]), m[1][1]);
    let mean = 0.5 * (a + d);
    let rad = (0.25 * (a - d) * (a - d) + b * b).sqrt();
    let (l1, l2) = (mean + rad, mean - rad);
    let theta = 0.5 * (2.0 * b).atan2(a - d);
    let (c, s) = (theta.cos(), theta.sin());
    let (r1, r2) = (l1.max(0.0).sqrt(), l2.max(0.0).sqrt());
    [[c * c * r1 + s * s * r2, c * s * (r1 - r2)], [c * s * (r1 - r2), s * s * r1 + c * c * r2]]
}

fn mat_mul(a: [[f64; 2]; 2], b: [[f64; 2]; 2]) -> [[f64; 2]; 2] {
    let mut o = [[0.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            o[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j];
        }
    }
    o
}

/// `|mu_a - mu_b|^2 + tr(Sa + Sb - 2 (Sa^1/2 Sb Sa^1/2)^1/2)` with every
/// square root taken by eigendecomposition.
pub fn frechet_eig(a: &GaussianFit, b: &GaussianFit) -> f64 {
    let to = |c: &Vec<Vec<f64>>| [[c[0][0], c[0][1]], [c[1][0], c[1][1]]];
    let (sa, sb) = (to(&a.cov), to(&b.cov));
    let ra = sqrtm_eig(sa);
    let inner = sqrtm_eig(mat_mul(mat_mul(ra, sb), ra));
    let mean: f64 = a.mean.iter().zip(&b.mean).map(|(x, y)| (x - y) * (x - y)).sum();
    mean + sa[0][0] + sa[1][1] + sb[0][0] + sb[1][1] - 2.0 * (inner[0][0] + inner[1][1])
}

pub struct FrechetReport {
    pub max_oracle_gap: f64,
    pub identical: f64,
    pub one_d: f64,
}

pub fn frechet_suite(pairs: usize) -> FrechetReport {
    let mut r = stream(&[0xf1d]);
    let mut gap = 0.0f64;
    let mut identical = 0.0f64;
    for _ in 0..pairs {
        let cloud = |r: &mut Rng| -> Vec<Vec<f64>> {
            let shift = normal_vec(r, 2);
            let mix = [[r.random_range(0.2..2.0), r.random_range(-1.0..1.0)], [0.0, r.random_range(0.2..2.0)]];
            (0..40)
                .map(|_| {
                    let e = normal_vec(r, 2);
                    vec![shift[0] + mix[0][0] * e[0] + mix[0][1] * e[1], shift[1] + mix[1][1] * e[1]]
                })
                .collect()
        };
        let (xa, xb) = (cloud(&mut r), cloud(&mut r));
        let d = frechet_distance(&xa, &xb).unwrap();
        let oracle = frechet_eig(&GaussianFit::fit(&xa).unwrap(), &GaussianFit::fit(&xb).unwrap());
        gap = gap.max((d - oracle).abs());
        identical = identical.max(frechet_distance(&xa, &xa).unwrap());
    }
    let mut r = stream(&[0x1d]);
    let n = 10_000;
    let a: Vec<Vec<f64>> = (0..n).map(|_| vec![r.sample(StandardNormal)]).collect();
    let b: Vec<Vec<f64>> = (0..n).map(|_| vec![3.0 + r.sample::<f64, _>(StandardNormal)]).collect();
    FrechetReport { max_oracle_gap: gap, identical, one_d: frechet_distance(&a, &b).unwrap() }
}

pub struct SelfDistillReport {
    /// Largest |loss| and |gradient| seen for each term with student = teacher.
    pub retain: f64,
    pub unlearn_same_map: f64,
    pub reg: f64,
    /// Largest deviation of the weighted total (loss and gradient) from the
    /// hand-weighted sum of separately computed terms.
    pub linearity: f64,
}

fn max_abs(l: f64, g: &ParamVector) -> f64 {
    g.as_slice().iter().fold(l.abs(), |m, v| m.max(v.abs()))
}

pub fn self_distillation_suite(instances: u64) -> SelfDistillReport {
    use cullab::engine::{total_step_loss, LossWeights, StepBatches, TermRngs};
    let u = universe();
    let arch = small_arch(&u);
    let sched = make_schedule(50, 1e-4, 0.02).unwrap();
    let mut out = SelfDistillReport { retain: 0.0, unlearn_same_map: 0.0, reg: 0.0, linearity: 0.0 };
    for k in 0..instances {
        let net = random_net(&arch, 100 + k);
        let other = random_net(&arch, 200 + k);
        let mut r = stream(&[0x5d, k]);
        let conds: Vec<Condition> = (0..4).map(|_| random_condition(&u, &mut r)).collect();
        let replay = ReplayCache::build(&net, &u, &sched, &conds, 2, 5, k).unwrap();
        let ctx = LossContext { universe: &u, sched: &sched, replay: &replay, timesteps: TimestepRange::new(1, 50) };
        let same: Vec<(Condition, Condition)> = conds.iter().map(|c| (*c, *c)).collect();

        let (l, g) = retain_batch_loss(&net, &net, &conds, &ctx, &mut r).unwrap();
        out.retain = out.retain.max(max_abs(l, &g));
        let (l, g) = unlearn_batch_loss(&net, &net, &same, &ctx, &mut r).unwrap();
        out.unlearn_same_map = out.unlearn_same_map.max(max_abs(l, &g));
        let (l, g) = reg_loss(net.params(), net.params()).unwrap();
        out.reg = out.reg.max(max_abs(l, &g));

        // Linearity, on a student that differs from the teacher.
        let pairs: Vec<(Condition, Condition)> = conds.iter().map(|c| (*c, random_condition(&u, &mut r))).collect();
        let batches = StepBatches { pairs: pairs.clone(), retain: conds.clone() };
        let w = LossWeights { unlearn: r.random_range(0.1..3.0), retain: r.random_range(0.1..30.0), reg: r.random_range(1e-4..1.0) };
        let (ru, rr) = (stream(&[0x11, k]), stream(&[0x12, k]));
        let (total, grad, parts) = total_step_loss(
            &other,
            &net,
            &batches,
            w,
            &ctx,
            TermRngs { unlearn: &mut ru.clone(), retain: &mut rr.clone() },
        )
        .unwrap();
        let (lu, gu) = unlearn_batch_loss(&other, &net, &pairs, &ctx, &mut ru.clone()).unwrap();
        let (lr, gr) = retain_batch_loss(&other, &net, &conds, &ctx, &mut rr.clone()).unwrap();
        let (lg, gg) = reg_loss(other.params(), net.params()).unwrap();
        let expect = w.unlearn * lu + w.retain * lr + w.reg * lg;
        let mut dev = (total - expect).abs() / expect.abs().max(1.0);
        dev = dev.max((parts.unlearn - lu).abs()).max((parts.retain - lr).abs()).max((parts.reg - lg).abs());
        for i in 0..grad.len() {
            let e = w.unlearn * gu.as_slice()[i] + w.retain * gr.as_slice()[i] + w.reg * gg.as_slice()[i];
            dev = dev.max((grad.as_slice()[i] - e).abs() / e.abs().max(1.0));
        }
        out.linearity = out.linearity.max(dev);
    }
    out
}

type Redirect = Box<dyn Fn(&Condition) -> Condition>;

/// Exact samplers standing in for the models after each step: erased
/// concepts are answered with their surrogate, except that the step-1
/// concept comes back at step `revive_at` (if any) and stays back.
pub fn erasing_samplers(u: &ConceptUniverse, revive_at: Option<usize>) -> Vec<cullab::eval::GroundTruthSampler<'_, Redirect>> {
    let schedule = u.forget_schedule().to_vec();
    (1..=schedule.len())
        .map(|step| {
            let mut gone: Vec<usize> = schedule[..step].to_vec();
            if revive_at.is_some_and(|r| step >= r) {
                gone.retain(|&c| c != schedule[0]);
            }
            let map: Vec<(usize, usize)> = gone.iter().map(|&c| (c, u.fixed_surrogate(c).unwrap())).collect();
            let redirect: Redirect = Box::new(move |c: &Condition| match c.concept_index() {
                Some(i) => match map.iter().find(|(f, _)| *f == i) {
                    Some((_, to)) => Condition::new(*to, c.context),
                    None => *c,
                },
                None => *c,
            });
            cullab::eval::GroundTruthSampler { universe: u, redirect }
        })
        .collect()
}

/// Pretraining small enough for unit-scale tests; the quality gates are
/// disabled because such a model cannot meet them.
pub fn tiny_pretrain() -> cullab::engine::PretrainConfig {
    use cullab::engine::{GateConfig, PretrainConfig};
    PretrainConfig {
        hidden: vec![16],
        iterations: 200,
        batch_size: 32,
        gate: GateConfig {
            n_per_cell: 4,
            ddim_steps: 5,
            min_concept_accuracy: 0.0,
            min_context_accuracy: 0.0,
            min_excess_loss_reduction: 0.0,
            loss_probe_size: 64,
        },
        ..PretrainConfig::default()
    }
}

pub fn tiny_unlearn() -> cullab::engine::UnlearnStepConfig {
    cullab::engine::UnlearnStepConfig { iterations: 15, ddim_steps: 5, replay_per_condition: 2, ..Default::default() }
}

pub fn tiny_base(u: &ConceptUniverse) -> cullab::engine::Checkpoint {
    cullab::engine::pretrain_base(u, ScheduleParams::default(), &tiny_pretrain()).unwrap().checkpoint
}
