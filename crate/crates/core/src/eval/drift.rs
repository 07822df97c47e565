use serde::{Deserialize, Serialize};

use crate::engine::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::nn::{param_distance, ParamVector};

/// Parameter-space distances along one run; index `i` is checkpoint `i`
/// and every entry at index 0 is 0.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DriftMetrics {
    /// `|theta_i - theta_{i-1}|`.
    pub d_step: Vec<f64>,
    /// `|theta_i - theta_0|`.
    pub d_cum: Vec<f64>,
    /// `sum_{j <= i} d_step[j] - d_cum[i]`, non-negative by the triangle
    /// inequality.
    pub slack: Vec<f64>,
}

pub fn drift_from_params(params: &[&ParamVector]) -> Result<DriftMetrics> {
    if params.len() < 2 {
        return Err(Error::Usage("drift needs at least two checkpoints".into()));
    }
    let mut m = DriftMetrics { d_step: vec![0.0], d_cum: vec![0.0], slack: vec![0.0] };
    let mut path = 0.0;
    for i in 1..params.len() {
        let step = param_distance(params[i], params[i - 1])?;
        let cum = param_distance(params[i], params[0])?;
        path += step;
        m.d_step.push(step);
        m.d_cum.push(cum);
        m.slack.push(path - cum);
    }
    Ok(m)
}

/// Drift of a run's checkpoints, which must share one architecture.
pub fn drift_metrics(checkpoints: &[Checkpoint]) -> Result<DriftMetrics> {
    if let Some(first) = checkpoints.first() {
        if checkpoints.iter().any(|c| c.architecture != first.architecture) {
            return Err(Error::Structural("checkpoints have different architectures".into()));
        }
    }
    drift_from_params(&checkpoints.iter().map(|c| &c.params).collect::<Vec<_>>())
}
