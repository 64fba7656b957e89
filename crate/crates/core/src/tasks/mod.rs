//! Downstream algorithms that consume a surrogate through point evaluations.
//!
//! Each task reports the ordered points where it evaluated the surrogate
//! (its support) together with its output.

mod rollout;
mod string;
mod tracking;

use std::io::Write;

pub use rollout::{rollout_run, RolloutConfig, RolloutTask, TrajectoryMetric};
pub use string::{reparameterize_equal_arc, string_method_run, MepConfig, StringMethodTask};
pub use tracking::{
    tracking_cost, tracking_optimize, tracking_output_error, tracking_simulate, TrackingConfig, TrackingResult,
    TrackingTask,
};

use crate::error::{Error, Result};
use crate::models::Surrogate;
use crate::points::{euclidean_distance, squared_distance, Points};

/// Ordered evaluation points of one task run.
#[derive(Clone, Debug, PartialEq)]
pub struct SupportTrace {
    pub points: Points,
}

impl SupportTrace {
    pub fn new(points: Points) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::invalid("support trace is empty"));
        }
        if !points.is_finite() {
            return Err(Error::invalid("support trace has non-finite points"));
        }
        Ok(Self { points })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.points.dim()
    }

    /// CSV with header `j,x0,x1,...`.
    pub fn write_csv(&self, mut w: impl Write) -> Result<()> {
        let header: Vec<String> = (0..self.dim()).map(|k| format!("x{k}")).collect();
        writeln!(w, "j,{}", header.join(","))?;
        for (j, p) in self.points.rows().enumerate() {
            let vals: Vec<String> = p.iter().map(|v| v.to_string()).collect();
            writeln!(w, "{j},{}", vals.join(","))?;
        }
        Ok(())
    }
}

/// Result of one task run.
#[derive(Clone, Debug, PartialEq)]
pub enum TaskOutput {
    /// Predicted states after each step.
    Trajectory { states: Points, metric: TrajectoryMetric },
    /// Piecewise-constant control and its cost under the surrogate.
    Control { controls: Vec<f64>, predicted_cost: f64 },
    /// Converged string nodes.
    Path { nodes: Points },
}

impl TaskOutput {
    /// Distance between two outputs of the same kind that does not need the
    /// ground truth. Controls are compared in Euclidean norm here; the
    /// cost-gap error lives in [`Task::output_error`].
    pub fn distance(&self, other: &TaskOutput) -> Result<f64> {
        match (self, other) {
            (TaskOutput::Trajectory { states: a, metric }, TaskOutput::Trajectory { states: b, .. }) => {
                metric.distance(a, b)
            }
            (TaskOutput::Path { nodes: a }, TaskOutput::Path { nodes: b }) => mean_point_distance(a, b),
            (TaskOutput::Control { controls: a, .. }, TaskOutput::Control { controls: b, .. }) => {
                if a.len() != b.len() {
                    return Err(Error::DimensionMismatch { expected: a.len(), got: b.len() });
                }
                Ok(squared_distance(a, b).sqrt())
            }
            _ => Err(Error::invalid("cannot compare outputs of different task kinds")),
        }
    }
}

pub(crate) fn mean_point_distance(a: &Points, b: &Points) -> Result<f64> {
    if a.len() != b.len() || a.dim() != b.dim() {
        return Err(Error::DimensionMismatch { expected: a.len(), got: b.len() });
    }
    if a.is_empty() {
        return Ok(0.0);
    }
    Ok(a.rows().zip(b.rows()).map(|(p, q)| euclidean_distance(p, q)).sum::<f64>() / a.len() as f64)
}

/// A downstream algorithm treated as a black box over its surrogate.
pub trait Task: Sync {
    fn name(&self) -> &'static str;

    /// Dimension of the points the surrogate is evaluated at.
    fn input_dim(&self) -> usize;

    fn run(&self, f: &dyn Surrogate) -> Result<(SupportTrace, TaskOutput)>;

    /// `J_A`: error of `output` relative to the ground-truth output.
    fn output_error(&self, output: &TaskOutput, truth_output: &TaskOutput, truth: &dyn Surrogate) -> Result<f64> {
        let _ = truth;
        output.distance(truth_output)
    }
}

/// Ground-truth diagnostics for one model.
#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    /// Output error against the ground-truth run.
    pub output_error: f64,
    /// Largest `‖f_θ - f*‖²` over the model's own support.
    pub support_error: f64,
    pub support: SupportTrace,
    pub output: TaskOutput,
}

/// A task paired with its ground truth, with the reference run cached.
pub struct GroundTruth<'a> {
    task: &'a dyn Task,
    truth: &'a dyn Surrogate,
    reference: (SupportTrace, TaskOutput),
}

impl<'a> GroundTruth<'a> {
    pub fn new(task: &'a dyn Task, truth: &'a dyn Surrogate) -> Result<Self> {
        let reference = task.run(truth)?;
        Ok(Self { task, truth, reference })
    }

    pub fn reference_support(&self) -> &SupportTrace {
        &self.reference.0
    }

    pub fn reference_output(&self) -> &TaskOutput {
        &self.reference.1
    }

    pub fn truth(&self) -> &dyn Surrogate {
        self.truth
    }

    pub fn evaluate(&self, model: &dyn Surrogate) -> Result<Evaluation> {
        let (support, output) = self.task.run(model)?;
        self.evaluate_run(model, support, output)
    }

    /// Diagnostics for a run that has already been performed.
    pub fn evaluate_run(&self, model: &dyn Surrogate, support: SupportTrace, output: TaskOutput) -> Result<Evaluation> {
        let output_error = self.task.output_error(&output, &self.reference.1, self.truth)?;
        let support_error = max_squared_error(model, self.truth, &support.points);
        Ok(Evaluation { output_error, support_error, support, output })
    }
}

/// `max_x ‖f(x) - g(x)‖²` over `points`.
pub fn max_squared_error(f: &dyn Surrogate, g: &dyn Surrogate, points: &Points) -> f64 {
    let mut a = vec![0.0; f.output_dim()];
    let mut b = vec![0.0; g.output_dim()];
    let mut worst: f64 = 0.0;
    for p in points.rows() {
        f.eval_into(p, &mut a);
        g.eval_into(p, &mut b);
        worst = worst.max(squared_distance(&a, &b));
    }
    worst
}

/// Margins `bound_j - ‖s_j(f) - s_j(f*)‖` for the Euler error bound
/// `C_L⁻¹((1 + τC_L)^{j-1} - 1) · max_{S(f)} ‖f - f*‖`, `j = 1..J`.
pub fn lipschitz_bound_check(
    f: &dyn Surrogate,
    f_star: &dyn Surrogate,
    support_f: &SupportTrace,
    support_star: &SupportTrace,
    lipschitz: f64,
    tau: f64,
) -> Result<Vec<f64>> {
    if support_f.len() != support_star.len() || support_f.dim() != support_star.dim() {
        return Err(Error::DimensionMismatch { expected: support_star.len(), got: support_f.len() });
    }
    if !(lipschitz > 0.0) || !(tau > 0.0) {
        return Err(Error::invalid("Lipschitz constant and step must be positive"));
    }
    let max_err = max_squared_error(f, f_star, &support_f.points).sqrt();
    Ok(support_f
        .points
        .rows()
        .zip(support_star.points.rows())
        .enumerate()
        .map(|(j, (a, b))| {
            let bound = ((1.0 + tau * lipschitz).powi(j as i32) - 1.0) / lipschitz * max_err;
            bound - euclidean_distance(a, b)
        })
        .collect())
}
