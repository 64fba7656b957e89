use super::{SupportTrace, Task, TaskOutput};
use crate::error::{Error, Result};
use crate::models::Surrogate;
use crate::points::{euclidean_distance, Points};

/// How two trajectories are compared.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TrajectoryMetric {
    /// `(1/J) Σ_j ‖a_j - b_j‖₂`.
    MeanStepNorm,
    /// `(Σ_j ‖a_j - b_j‖²)^{1/2}`.
    Euclidean,
}

impl TrajectoryMetric {
    pub fn distance(&self, a: &Points, b: &Points) -> Result<f64> {
        if a.len() != b.len() || a.dim() != b.dim() {
            return Err(Error::DimensionMismatch { expected: a.len(), got: b.len() });
        }
        Ok(match self {
            TrajectoryMetric::MeanStepNorm => super::mean_point_distance(a, b)?,
            TrajectoryMetric::Euclidean => {
                a.rows().zip(b.rows()).map(|(p, q)| euclidean_distance(p, q).powi(2)).sum::<f64>().sqrt()
            }
        })
    }
}

/// Multistep prediction from `x0`.
#[derive(Clone, Debug, PartialEq)]
pub struct RolloutConfig {
    pub x0: Vec<f64>,
    pub steps: usize,
    /// `None`: the surrogate is a flow map, `x ← f(x)`.
    /// `Some(τ)`: the surrogate is a vector field, `x ← x + τ f(x)`.
    pub euler_step: Option<f64>,
    pub metric: TrajectoryMetric,
}

impl RolloutConfig {
    pub fn flow_map(x0: Vec<f64>, steps: usize) -> Self {
        Self { x0, steps, euler_step: None, metric: TrajectoryMetric::MeanStepNorm }
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::invalid("rollout needs at least one step"));
        }
        if self.x0.is_empty() || self.x0.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("rollout start must be a finite nonempty vector"));
        }
        if let Some(t) = self.euler_step {
            if !(t > 0.0) {
                return Err(Error::invalid("Euler step must be positive"));
            }
        }
        Ok(())
    }
}

/// Support `[x0, …, x_{N-1}]` and output `[x_1, …, x_N]`.
pub fn rollout_run(f: &dyn Surrogate, cfg: &RolloutConfig) -> Result<(SupportTrace, TaskOutput)> {
    cfg.validate()?;
    let d = cfg.x0.len();
    if f.input_dim() != d || f.output_dim() != d {
        return Err(Error::DimensionMismatch { expected: d, got: f.input_dim() });
    }
    let mut support = Points::with_capacity(d, cfg.steps);
    let mut states = Points::with_capacity(d, cfg.steps);
    let mut x = cfg.x0.clone();
    let mut out = vec![0.0; d];
    for step in 0..cfg.steps {
        support.push(&x)?;
        f.eval_into(&x, &mut out);
        match cfg.euler_step {
            None => x.copy_from_slice(&out),
            Some(tau) => x.iter_mut().zip(&out).for_each(|(v, g)| *v += tau * g),
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::DivergedRollout { step: step + 1 });
        }
        states.push(&x)?;
    }
    Ok((SupportTrace::new(support)?, TaskOutput::Trajectory { states, metric: cfg.metric }))
}

#[derive(Clone, Debug, PartialEq)]
pub struct RolloutTask(pub RolloutConfig);

impl Task for RolloutTask {
    fn name(&self) -> &'static str {
        "rollout"
    }
    fn input_dim(&self) -> usize {
        self.0.x0.len()
    }
    fn run(&self, f: &dyn Surrogate) -> Result<(SupportTrace, TaskOutput)> {
        rollout_run(f, &self.0)
    }
}
