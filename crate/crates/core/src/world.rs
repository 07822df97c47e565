//! The synthetic ground truth that stands in for prompts and images.
//!
//! A concept is a Gaussian mixture in data space, a context is a translation
//! applied to whichever concept is drawn, and a [`Condition`] pairs the two.
//! Because every distribution is known in closed form, the Bayes classifier
//! [`ConceptUniverse::oracle_classify`] is the exact judge for all metrics.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::diffusion::standard_normal_vec;
use crate::error::{Error, Result};
use crate::rng;

const LOG_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Component {
    pub weight: f64,
    pub mean: Vec<f64>,
    pub cov: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Concept {
    pub id: String,
    pub components: Vec<Component>,
    #[serde(default)]
    pub related: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Context {
    pub id: String,
    pub offset: Vec<f64>,
}

/// Which concept slot of the condition embedding is active.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ConceptSlot {
    Concept(usize),
    /// The empty anchor. Its embedding carries no context either.
    Null,
}

/// A (concept, context) request. Indices refer to the owning universe.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Condition {
    pub concept: ConceptSlot,
    pub context: usize,
}

impl Condition {
    pub fn new(concept: usize, context: usize) -> Self {
        Self { concept: ConceptSlot::Concept(concept), context }
    }

    pub fn null(context: usize) -> Self {
        Self { concept: ConceptSlot::Null, context }
    }

    pub fn concept_index(&self) -> Option<usize> {
        match self.concept {
            ConceptSlot::Concept(c) => Some(c),
            ConceptSlot::Null => None,
        }
    }
}

/// How a forget condition is re-targeted.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MappingStrategy {
    /// The universe's pre-defined surrogate concept, same context.
    FixedContext,
    /// Nearest concept not yet forgotten, same context.
    AdaptiveContext,
    /// The null concept.
    Null,
}

/// Result of the Bayes classifier.
#[derive(Clone, Debug, PartialEq)]
pub struct OracleVerdict {
    pub concept: usize,
    pub context: usize,
    /// Posterior over concepts, marginalised over contexts.
    pub posterior: Vec<f64>,
}

/// Step-`i` training conditions. `forget[k]` and `map[k]` are paired.
#[derive(Clone, Debug, PartialEq)]
pub struct PromptSets {
    pub forget: Vec<Condition>,
    pub map: Vec<Condition>,
    pub retain: Vec<Condition>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PromptCounts {
    /// Copies of each forget condition (one per context).
    pub forget_per_context: usize,
    /// Copies of each unrelated retained (concept, context) cell; related
    /// cells get twice as many.
    pub retain_per_cell: usize,
}

impl Default for PromptCounts {
    fn default() -> Self {
        Self { forget_per_context: 10, retain_per_cell: 2 }
    }
}

/// Precomputed density terms for one mixture component.
#[derive(Clone, Debug)]
struct Gaussian {
    log_weight: f64,
    mean: Vec<f64>,
    cov: Vec<Vec<f64>>,
    chol: Vec<Vec<f64>>,
    log_norm: f64,
}

impl Gaussian {
    fn new(c: &Component) -> Option<Self> {
        let chol = cholesky(&c.cov)?;
        let d = c.mean.len();
        let log_det: f64 = (0..d).map(|i| 2.0 * chol[i][i].ln()).sum();
        Some(Self {
            log_weight: c.weight.ln(),
            mean: c.mean.clone(),
            cov: c.cov.clone(),
            chol,
            log_norm: -0.5 * (d as f64 * LOG_2PI + log_det),
        })
    }

    /// `log w + log N(x; mean + offset, cov)`.
    fn weighted_log_density(&self, x: &[f64], offset: &[f64]) -> f64 {
        let d = x.len();
        let mut y = vec![0.0; d];
        for i in 0..d {
            let mut s = x[i] - self.mean[i] - offset[i];
            for j in 0..i {
                s -= self.chol[i][j] * y[j];
            }
            y[i] = s / self.chol[i][i];
        }
        self.log_weight + self.log_norm - 0.5 * y.iter().map(|v| v * v).sum::<f64>()
    }
}

/// Solves `l l^T x = b` for a lower Cholesky factor `l`.
fn cholesky_solve(l: &[Vec<f64>], b: &[f64]) -> Vec<f64> {
    let n = b.len();
    let mut y = vec![0.0; n];
    for i in 0..n {
        y[i] = (b[i] - (0..i).map(|j| l[i][j] * y[j]).sum::<f64>()) / l[i][i];
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        x[i] = (y[i] - (i + 1..n).map(|j| l[j][i] * x[j]).sum::<f64>()) / l[i][i];
    }
    x
}

/// Lower Cholesky factor, or `None` if the matrix is not symmetric positive
/// definite.
fn cholesky(a: &[Vec<f64>]) -> Option<Vec<Vec<f64>>> {
    let n = a.len();
    if a.iter().any(|row| row.len() != n) {
        return None;
    }
    for i in 0..n {
        for j in 0..i {
            if (a[i][j] - a[j][i]).abs() > 1e-12 * (1.0 + a[i][j].abs()) {
                return None;
            }
        }
    }
    let mut l = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..=i {
            let s: f64 = a[i][j] - (0..j).map(|k| l[i][k] * l[j][k]).sum::<f64>();
            if i == j {
                if s <= 0.0 || !s.is_finite() {
                    return None;
                }
                l[i][i] = s.sqrt();
            } else {
                l[i][j] = s / l[j][j];
            }
        }
    }
    Some(l)
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// On-disk form of a universe. Validated into a [`ConceptUniverse`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UniverseSpec {
    pub seed: u64,
    pub forget_schedule: Vec<String>,
    pub fixed_map: BTreeMap<String, String>,
    pub contexts: Vec<Context>,
    pub concepts: Vec<Concept>,
}

/// Immutable ground-truth world.
#[derive(Clone, Debug)]
pub struct ConceptUniverse {
    spec: UniverseSpec,
    dim: usize,
    schedule: Vec<usize>,
    fixed_map: BTreeMap<usize, usize>,
    related: Vec<Vec<usize>>,
    gaussians: Vec<Vec<Gaussian>>,
}

impl PartialEq for ConceptUniverse {
    fn eq(&self, other: &Self) -> bool {
        self.spec == other.spec
    }
}

impl TryFrom<UniverseSpec> for ConceptUniverse {
    type Error = Error;

    fn try_from(spec: UniverseSpec) -> Result<Self> {
        ConceptUniverse::new(spec)
    }
}

impl ConceptUniverse {
    pub fn new(spec: UniverseSpec) -> Result<Self> {
        let bad = |m: String| Err(Error::Config(m));
        if spec.concepts.is_empty() || spec.contexts.is_empty() {
            return bad("universe needs at least one concept and one context".into());
        }
        let dim = spec.concepts[0].components.first().map_or(0, |c| c.mean.len());
        if dim == 0 {
            return bad(format!("concept `{}` has no components", spec.concepts[0].id));
        }
        let mut index = BTreeMap::new();
        for (i, c) in spec.concepts.iter().enumerate() {
            if index.insert(c.id.as_str(), i).is_some() {
                return bad(format!("duplicate concept id `{}`", c.id));
            }
        }
        let mut ctx_ids = BTreeSet::new();
        for ctx in &spec.contexts {
            if !ctx_ids.insert(ctx.id.as_str()) || index.contains_key(ctx.id.as_str()) {
                return bad(format!("duplicate id `{}`", ctx.id));
            }
            if ctx.offset.len() != dim {
                return bad(format!("context `{}` offset has dimension {}, expected {dim}", ctx.id, ctx.offset.len()));
            }
        }
        let lookup = |id: &str| index.get(id).copied().ok_or_else(|| Error::Lookup { kind: "concept", id: id.into() });

        let mut gaussians = Vec::with_capacity(spec.concepts.len());
        let mut related = Vec::with_capacity(spec.concepts.len());
        for c in &spec.concepts {
            if c.components.is_empty() {
                return bad(format!("concept `{}` has no components", c.id));
            }
            let total: f64 = c.components.iter().map(|k| k.weight).sum();
            if c.components.iter().any(|k| !(k.weight > 0.0)) || (total - 1.0).abs() > 1e-9 {
                return bad(format!("concept `{}` weights must be positive and sum to 1", c.id));
            }
            let mut gs = Vec::with_capacity(c.components.len());
            for k in &c.components {
                if k.mean.len() != dim {
                    return bad(format!("concept `{}` has a component of dimension {}", c.id, k.mean.len()));
                }
                match Gaussian::new(k) {
                    Some(g) => gs.push(g),
                    None => return bad(format!("concept `{}` has a covariance that is not SPD", c.id)),
                }
            }
            gaussians.push(gs);
            let mut rel = Vec::with_capacity(c.related.len());
            for r in &c.related {
                if r == &c.id {
                    return bad(format!("concept `{}` lists itself as related", c.id));
                }
                rel.push(lookup(r)?);
            }
            related.push(rel);
        }

        let mut schedule = Vec::with_capacity(spec.forget_schedule.len());
        for id in &spec.forget_schedule {
            let c = lookup(id)?;
            if schedule.contains(&c) {
                return bad(format!("concept `{id}` appears twice in the forget schedule"));
            }
            schedule.push(c);
        }
        if schedule.len() >= spec.concepts.len() {
            return bad("forget schedule must leave at least one retained concept".into());
        }
        let mut fixed_map = BTreeMap::new();
        for (from, to) in &spec.fixed_map {
            let (f, t) = (lookup(from)?, lookup(to)?);
            if f == t || schedule.contains(&t) {
                return bad(format!("fixed map `{from}` -> `{to}` must target a concept outside the forget schedule"));
            }
            fixed_map.insert(f, t);
        }
        Ok(Self { spec, dim, schedule, fixed_map, related, gaussians })
    }

    pub fn spec(&self) -> &UniverseSpec {
        &self.spec
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn seed(&self) -> u64 {
        self.spec.seed
    }

    pub fn n_concepts(&self) -> usize {
        self.spec.concepts.len()
    }

    pub fn n_contexts(&self) -> usize {
        self.spec.contexts.len()
    }

    pub fn concept(&self, c: usize) -> &Concept {
        &self.spec.concepts[c]
    }

    pub fn concept_id(&self, c: usize) -> &str {
        &self.spec.concepts[c].id
    }

    pub fn context_id(&self, k: usize) -> &str {
        &self.spec.contexts[k].id
    }

    pub fn concept_index(&self, id: &str) -> Result<usize> {
        self.spec
            .concepts
            .iter()
            .position(|c| c.id == id)
            .ok_or_else(|| Error::Lookup { kind: "concept", id: id.into() })
    }

    pub fn context_index(&self, id: &str) -> Result<usize> {
        self.spec
            .contexts
            .iter()
            .position(|c| c.id == id)
            .ok_or_else(|| Error::Lookup { kind: "context", id: id.into() })
    }

    /// Condition by ids.
    pub fn condition(&self, concept: &str, context: &str) -> Result<Condition> {
        Ok(Condition::new(self.concept_index(concept)?, self.context_index(context)?))
    }

    pub fn describe(&self, cond: &Condition) -> String {
        let concept = match cond.concept {
            ConceptSlot::Concept(c) => self.concept_id(c),
            ConceptSlot::Null => "<null>",
        };
        format!("{concept}@{}", self.context_id(cond.context))
    }

    /// Forget targets in order (length K).
    pub fn forget_schedule(&self) -> &[usize] {
        &self.schedule
    }

    /// Concepts erased by the end of step `i` (`i = 0` is the base model).
    pub fn forgotten_through(&self, step: usize) -> &[usize] {
        &self.schedule[..step.min(self.schedule.len())]
    }

    pub fn related(&self, c: usize) -> &[usize] {
        &self.related[c]
    }

    pub fn fixed_surrogate(&self, c: usize) -> Option<usize> {
        self.fixed_map.get(&c).copied()
    }

    /// Concepts not erased by the end of step `i`.
    pub fn retained_at(&self, step: usize) -> Vec<usize> {
        let gone = self.forgotten_through(step);
        (0..self.n_concepts()).filter(|c| !gone.contains(c)).collect()
    }

    /// Union of the related lists of every target erased so far, minus the
    /// erased concepts themselves.
    pub fn cumulative_related(&self, step: usize) -> Vec<usize> {
        let gone = self.forgotten_through(step);
        let set: BTreeSet<usize> = gone.iter().flat_map(|&c| self.related[c].iter().copied()).collect();
        set.into_iter().filter(|c| !gone.contains(c)).collect()
    }

    /// Concepts that are neither scheduled for erasure nor related to any
    /// scheduled target. Fixed for the whole run.
    pub fn general_set(&self) -> Vec<usize> {
        let mut excluded: BTreeSet<usize> = self.schedule.iter().copied().collect();
        for &c in &self.schedule {
            excluded.extend(self.related[c].iter().copied());
        }
        (0..self.n_concepts()).filter(|c| !excluded.contains(c)).collect()
    }

    /// Width of the condition embedding: concepts, the null slot, contexts.
    pub fn cond_dim(&self) -> usize {
        self.n_concepts() + 1 + self.n_contexts()
    }

    /// `one_hot(concept) ++ one_hot(context)`; the null concept sets only its
    /// own slot.
    pub fn embed(&self, cond: &Condition) -> Vec<f64> {
        let mut e = vec![0.0; self.cond_dim()];
        match cond.concept {
            ConceptSlot::Concept(c) => {
                e[c] = 1.0;
                e[self.n_concepts() + 1 + cond.context] = 1.0;
            }
            ConceptSlot::Null => e[self.n_concepts()] = 1.0,
        }
        e
    }

    fn check_condition(&self, cond: &Condition) -> Result<()> {
        if cond.context >= self.n_contexts() {
            return Err(Error::Lookup { kind: "context", id: cond.context.to_string() });
        }
        if let ConceptSlot::Concept(c) = cond.concept {
            if c >= self.n_concepts() {
                return Err(Error::Lookup { kind: "concept", id: c.to_string() });
            }
        }
        Ok(())
    }

    /// One draw from the context-translated mixture. The null concept draws
    /// a uniformly random (concept, context) cell.
    pub fn draw(&self, cond: &Condition, r: &mut rng::Rng) -> Result<Vec<f64>> {
        self.check_condition(cond)?;
        let (concept, context) = match cond.concept {
            ConceptSlot::Concept(c) => (c, cond.context),
            ConceptSlot::Null => (r.random_range(0..self.n_concepts()), r.random_range(0..self.n_contexts())),
        };
        let comps = &self.spec.concepts[concept].components;
        let u: f64 = r.random();
        let mut acc = 0.0;
        let mut pick = comps.len() - 1;
        for (i, k) in comps.iter().enumerate() {
            acc += k.weight;
            if u < acc {
                pick = i;
                break;
            }
        }
        let g = &self.gaussians[concept][pick];
        let xi = standard_normal_vec(r, self.dim);
        let offset = &self.spec.contexts[context].offset;
        Ok((0..self.dim)
            .map(|i| g.mean[i] + offset[i] + (0..=i).map(|j| g.chol[i][j] * xi[j]).sum::<f64>())
            .collect())
    }

    /// `n` i.i.d. ground-truth points for `cond`, deterministic per seed.
    pub fn sample_ground_truth(&self, cond: &Condition, n: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
        let mut r = rng::stream(&[rng::domain::GROUND_TRUTH, seed]);
        (0..n).map(|_| self.draw(cond, &mut r)).collect()
    }

    /// Log-likelihood of `x` under every (concept, context) cell,
    /// `[concept][context]`.
    pub fn cell_log_likelihoods(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let mut buf = Vec::with_capacity(4);
        self.gaussians
            .iter()
            .map(|gs| {
                self.spec
                    .contexts
                    .iter()
                    .map(|ctx| {
                        buf.clear();
                        buf.extend(gs.iter().map(|g| g.weighted_log_density(x, &ctx.offset)));
                        log_sum_exp(&buf)
                    })
                    .collect()
            })
            .collect()
    }

    /// Minimum-mean-squared-error noise estimate `E[eps | z_t]` when
    /// `z_t = sqrt(abar) x + sqrt(1 - abar) eps` with `x` drawn from the
    /// ground truth of `cond` (all cells for the null concept). No network
    /// can beat this predictor on the denoising loss.
    pub fn posterior_mean_noise(&self, cond: &Condition, z_t: &[f64], abar: f64) -> Result<Vec<f64>> {
        self.check_condition(cond)?;
        crate::error::ensure_len("posterior_mean_noise input", self.dim, z_t.len())?;
        if !(abar > 0.0 && abar < 1.0) {
            return Err(Error::Usage(format!("alpha_bar must lie in (0, 1), got {abar}")));
        }
        let cells: Vec<(usize, usize)> = match cond.concept {
            ConceptSlot::Concept(c) => vec![(c, cond.context)],
            ConceptSlot::Null => {
                (0..self.n_concepts()).flat_map(|c| (0..self.n_contexts()).map(move |k| (c, k))).collect()
            }
        };
        let (sa, s1) = (abar.sqrt(), (1.0 - abar).sqrt());
        let d = self.dim;
        let mut log_w = Vec::new();
        let mut means = Vec::new();
        for &(c, k) in &cells {
            let offset = &self.spec.contexts[k].offset;
            for g in &self.gaussians[c] {
                let s: Vec<Vec<f64>> = (0..d)
                    .map(|i| (0..d).map(|j| abar * g.cov[i][j] + if i == j { 1.0 - abar } else { 0.0 }).collect())
                    .collect();
                let l = cholesky(&s).expect("diffused covariance is SPD");
                let r: Vec<f64> = (0..d).map(|i| z_t[i] - sa * (g.mean[i] + offset[i])).collect();
                let sol = cholesky_solve(&l, &r);
                let log_det: f64 = (0..d).map(|i| 2.0 * l[i][i].ln()).sum();
                let quad: f64 = r.iter().zip(&sol).map(|(a, b)| a * b).sum();
                log_w.push(g.log_weight - 0.5 * (log_det + quad));
                means.push(sol.iter().map(|v| s1 * v).collect::<Vec<f64>>());
            }
        }
        let z = log_sum_exp(&log_w);
        let mut out = vec![0.0; d];
        for (lw, m) in log_w.iter().zip(&means) {
            let p = (lw - z).exp();
            for (o, v) in out.iter_mut().zip(m) {
                *o += p * v;
            }
        }
        Ok(out)
    }

    /// Exact Bayes classification under a uniform prior over cells.
    pub fn oracle_classify(&self, x: &[f64]) -> OracleVerdict {
        let ll = self.cell_log_likelihoods(x);
        let flat: Vec<f64> = ll.iter().flatten().copied().collect();
        let z = log_sum_exp(&flat);
        let posterior: Vec<f64> = ll.iter().map(|row| row.iter().map(|l| (l - z).exp()).sum()).collect();
        let mut by_context = vec![0.0; self.n_contexts()];
        for row in &ll {
            for (k, l) in row.iter().enumerate() {
                by_context[k] += (l - z).exp();
            }
        }
        OracleVerdict { concept: argmax(&posterior), context: argmax(&by_context), posterior }
    }

    /// Symmetrised distance between two concepts' mixtures: the average of
    /// the weighted nearest-component-mean distances in both directions.
    pub fn concept_distance(&self, a: usize, b: usize) -> f64 {
        let one_way = |x: &Concept, y: &Concept| -> f64 {
            x.components
                .iter()
                .map(|cx| {
                    cx.weight * y.components.iter().map(|cy| euclid(&cx.mean, &cy.mean)).fold(f64::INFINITY, f64::min)
                })
                .sum()
        };
        let (ca, cb) = (&self.spec.concepts[a], &self.spec.concepts[b]);
        0.5 * (one_way(ca, cb) + one_way(cb, ca))
    }

    /// Re-targets a forget condition at `step` (1-based).
    pub fn map_condition(&self, strategy: MappingStrategy, cond: &Condition, step: usize) -> Result<Condition> {
        self.check_condition(cond)?;
        let gone = self.forgotten_through(step);
        let concept = match cond.concept {
            ConceptSlot::Concept(c) if gone.contains(&c) => c,
            _ => {
                return Err(Error::Usage(format!(
                    "{} is not in the forget set of step {step}",
                    self.describe(cond)
                )))
            }
        };
        match strategy {
            MappingStrategy::FixedContext => {
                let to = self.fixed_surrogate(concept).ok_or_else(|| {
                    Error::Config(format!("fixed map has no surrogate for `{}`", self.concept_id(concept)))
                })?;
                Ok(Condition::new(to, cond.context))
            }
            MappingStrategy::AdaptiveContext => {
                let to = (0..self.n_concepts())
                    .filter(|c| !gone.contains(c))
                    .map(|c| (self.concept_distance(concept, c), c))
                    .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
                    .map(|(_, c)| c)
                    .ok_or_else(|| Error::Config("no retained concept left to map onto".into()))?;
                Ok(Condition::new(to, cond.context))
            }
            MappingStrategy::Null => Ok(Condition::null(cond.context)),
        }
    }

    /// Forget, mapped and retain conditions for unlearning step `step`.
    pub fn build_prompt_sets(&self, step: usize, strategy: MappingStrategy, counts: PromptCounts) -> Result<PromptSets> {
        if step == 0 || step > self.schedule.len() {
            return Err(Error::Usage(format!("step {step} outside [1, {}]", self.schedule.len())));
        }
        let target = self.schedule[step - 1];
        let mut forget = Vec::new();
        for k in 0..self.n_contexts() {
            for _ in 0..counts.forget_per_context {
                forget.push(Condition::new(target, k));
            }
        }
        let map = forget.iter().map(|c| self.map_condition(strategy, c, step)).collect::<Result<Vec<_>>>()?;
        let related = &self.related[target];
        let mut retain = Vec::new();
        for c in self.retained_at(step) {
            let copies = if related.contains(&c) { 2 } else { 1 } * counts.retain_per_cell;
            for k in 0..self.n_contexts() {
                for _ in 0..copies {
                    retain.push(Condition::new(c, k));
                }
            }
        }
        Ok(PromptSets { forget, map, retain })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(&self.spec).expect("universe spec serialises")
    }

    pub fn from_toml(text: &str) -> std::result::Result<Self, String> {
        let spec: UniverseSpec = toml::from_str(text).map_err(|e| e.to_string())?;
        ConceptUniverse::new(spec).map_err(|e| e.to_string())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        ConceptUniverse::from_toml(&text).map_err(|m| Error::parse(path, m))
    }
}

fn argmax(v: &[f64]) -> usize {
    v.iter().enumerate().fold(0, |best, (i, x)| if *x > v[best] { i } else { best })
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Parameters of the default twelve-concept layout.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LayoutParams {
    pub ring_concepts: usize,
    pub ring_radius: f64,
    pub interior_radius: f64,
    /// Per-axis standard deviation of every component.
    pub component_std: f64,
    /// Spacing of the two components of bimodal concepts.
    pub component_split: f64,
    pub context_offset: f64,
    pub forget_steps: usize,
}

impl Default for LayoutParams {
    fn default() -> Self {
        Self {
            ring_concepts: 10,
            ring_radius: 8.0,
            interior_radius: 3.0,
            component_std: 0.3,
            component_split: 0.6,
            context_offset: 1.5,
            forget_steps: 5,
        }
    }
}

/// Order in which the default layout schedules erasures: alternating sides
/// of the ring so that related sets overlap only partially.
const DEFAULT_FORGET_ORDER: [usize; 11] = [0, 5, 1, 6, 2, 7, 3, 8, 4, 9, 10];

/// Ten concepts on a ring plus two interior ones; odd-numbered concepts are
/// bimodal. Relatedness is the two nearest concepts; the fixed surrogate is
/// the nearest concept outside the forget schedule.
pub fn default_universe(layout: LayoutParams, seed: u64) -> Result<ConceptUniverse> {
    let n_ring = layout.ring_concepts;
    let n = n_ring + 2;
    if layout.forget_steps == 0 || layout.forget_steps > DEFAULT_FORGET_ORDER.len().min(n - 1) || n_ring != 10 {
        return Err(Error::Config(format!(
            "default layout supports 10 ring concepts and 1..={} forget steps",
            DEFAULT_FORGET_ORDER.len()
        )));
    }
    let var = layout.component_std * layout.component_std;
    let cov = vec![vec![var, 0.0], vec![0.0, var]];
    let centre = |k: usize| -> [f64; 2] {
        if k < n_ring {
            let a = std::f64::consts::TAU * k as f64 / n_ring as f64;
            [layout.ring_radius * a.cos(), layout.ring_radius * a.sin()]
        } else {
            let a = std::f64::consts::FRAC_PI_2 + std::f64::consts::PI * (k - n_ring) as f64;
            [layout.interior_radius * a.cos(), layout.interior_radius * a.sin()]
        }
    };
    let mut concepts: Vec<Concept> = (0..n)
        .map(|k| {
            let p = centre(k);
            let components = if k % 2 == 1 {
                let norm = (p[0] * p[0] + p[1] * p[1]).sqrt();
                let tangent = [-p[1] / norm, p[0] / norm];
                let h = 0.5 * layout.component_split;
                [-h, h]
                    .iter()
                    .map(|s| Component {
                        weight: 0.5,
                        mean: vec![p[0] + s * tangent[0], p[1] + s * tangent[1]],
                        cov: cov.clone(),
                    })
                    .collect()
            } else {
                vec![Component { weight: 1.0, mean: p.to_vec(), cov: cov.clone() }]
            };
            Concept { id: format!("c{k:02}"), components, related: Vec::new() }
        })
        .collect();
    let o = layout.context_offset;
    let contexts = [[0.0, 0.0], [o, 0.0], [0.0, o], [-o, 0.0]]
        .iter()
        .enumerate()
        .map(|(i, off)| Context { id: format!("ctx{i}"), offset: off.to_vec() })
        .collect();

    let schedule = &DEFAULT_FORGET_ORDER[..layout.forget_steps];
    let provisional = ConceptUniverse::new(UniverseSpec {
        seed,
        forget_schedule: Vec::new(),
        fixed_map: BTreeMap::new(),
        contexts,
        concepts: concepts.clone(),
    })?;
    let nearest = |c: usize, allowed: &dyn Fn(usize) -> bool, count: usize| -> Vec<usize> {
        let mut others: Vec<(f64, usize)> =
            (0..n).filter(|&o| o != c && allowed(o)).map(|o| (provisional.concept_distance(c, o), o)).collect();
        others.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        others.into_iter().take(count).map(|(_, o)| o).collect()
    };
    for c in 0..n {
        concepts[c].related = nearest(c, &|_| true, 2).into_iter().map(|o| format!("c{o:02}")).collect();
    }
    let fixed_map = schedule
        .iter()
        .map(|&c| {
            let to = nearest(c, &|o| !schedule.contains(&o), 1)[0];
            (format!("c{c:02}"), format!("c{to:02}"))
        })
        .collect();
    let spec = UniverseSpec {
        seed,
        forget_schedule: schedule.iter().map(|c| format!("c{c:02}")).collect(),
        fixed_map,
        contexts: provisional.spec.contexts.clone(),
        concepts,
    };
    ConceptUniverse::new(spec)
}
