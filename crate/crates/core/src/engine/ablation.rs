//! Named variants of an unlearning configuration for controlled comparisons.

use serde::{Deserialize, Serialize};

use super::config::{LossWeights, UnlearnStepConfig};
use crate::diffusion::TimestepRange;
use crate::world::MappingStrategy;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Variant {
    pub name: String,
    pub config: UnlearnStepConfig,
}

fn variant(name: &str, base: &UnlearnStepConfig, edit: impl FnOnce(&mut UnlearnStepConfig)) -> Variant {
    let mut config = base.clone();
    edit(&mut config);
    Variant { name: name.into(), config }
}

/// The loss-component ablation (unlearn only, + retain, + reg, full) plus
/// the null-anchor and adaptive-mapping baselines. Every variant keeps the
/// base seeds and budgets; `full` is the base config with fixed mapping.
pub fn make_ablation_configs(base: &UnlearnStepConfig) -> Vec<Variant> {
    let LossWeights { unlearn, retain, reg } = base.weights;
    let fixed = |c: &mut UnlearnStepConfig| c.mapping = MappingStrategy::FixedContext;
    vec![
        variant("unlearn-only", base, |c| {
            fixed(c);
            c.weights = LossWeights { unlearn, retain: 0.0, reg: 0.0 };
        }),
        variant("unlearn-retain", base, |c| {
            fixed(c);
            c.weights = LossWeights { unlearn, retain, reg: 0.0 };
        }),
        variant("unlearn-reg", base, |c| {
            fixed(c);
            c.weights = LossWeights { unlearn, retain: 0.0, reg };
        }),
        variant("full", base, fixed),
        variant("null-mapping", base, |c| c.mapping = MappingStrategy::Null),
        variant("adaptive-mapping", base, |c| c.mapping = MappingStrategy::AdaptiveContext),
    ]
}

/// Upper ends of the timestep-range sweep as fractions of `T`.
pub const TIMESTEP_FRACTIONS: [f64; 4] = [0.3, 0.6, 0.8, 1.0];

/// Full-method variants training on `[1, f T]` for each sweep fraction.
pub fn make_timestep_configs(base: &UnlearnStepConfig, timesteps: usize) -> Vec<Variant> {
    TIMESTEP_FRACTIONS
        .iter()
        .map(|&f| {
            let hi = TimestepRange::upper_fraction(timesteps, f).hi;
            variant(&format!("timesteps-{hi}"), base, |c| {
                c.mapping = MappingStrategy::FixedContext;
                c.timesteps = TimestepRange::new(1, hi);
            })
        })
        .collect()
}

/// Regularisation strengths probed to pick the anchor weight.
pub const REG_SWEEP: [f64; 3] = [1e-4, 1e-2, 1.0];

pub fn make_reg_sweep(base: &UnlearnStepConfig) -> Vec<Variant> {
    REG_SWEEP
        .iter()
        .map(|&reg| variant(&format!("full-reg-{reg:e}"), base, |c| c.weights.reg = reg))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn six_variants_sharing_seeds() {
        let base = UnlearnStepConfig { seed: 77, ..Default::default() };
        let v = make_ablation_configs(&base);
        assert_eq!(v.len(), 6);
        assert!(v.iter().all(|x| x.config.seed == 77 && x.config.iterations == base.iterations));
        let only = &v[0].config.weights;
        assert_eq!((only.retain, only.reg), (0.0, 0.0));
        let names: Vec<_> = v.iter().map(|x| x.name.as_str()).collect();
        assert_eq!(names, ["unlearn-only", "unlearn-retain", "unlearn-reg", "full", "null-mapping", "adaptive-mapping"]);
    }

    #[test]
    fn timestep_sweep_names() {
        let v = make_timestep_configs(&UnlearnStepConfig::default(), 200);
        let names: Vec<_> = v.iter().map(|x| x.name.as_str()).collect();
        assert_eq!(names, ["timesteps-60", "timesteps-120", "timesteps-160", "timesteps-200"]);
    }
}
