//! Tracking control of a pendulum on a cart with a learned angular acceleration.

use rayon::prelude::*;

use super::{SupportTrace, Task, TaskOutput};
use crate::datagen::PendulumAcceleration;
use crate::error::{Error, Result};
use crate::models::Surrogate;
use crate::points::Points;
use crate::rng::SeedStream;

#[derive(Clone, Debug, PartialEq)]
pub struct TrackingConfig {
    pub horizon: f64,
    /// Number of piecewise-constant control intervals.
    pub intervals: usize,
    /// Euler substeps per interval.
    pub substeps: usize,
    pub control_lower: f64,
    pub control_upper: f64,
    /// Reference `x_r(t) = reference_start + t · reference_velocity`.
    pub reference_start: [f64; 4],
    pub reference_velocity: [f64; 4],
    /// Simulation start; the reference start unless overridden.
    pub initial_state: [f64; 4],
    pub max_iterations: usize,
    pub restarts: usize,
    pub restart_seed: u64,
    /// Central-difference step for control gradients.
    pub fd_step: f64,
    /// Relative cost change that ends a start.
    pub tolerance: f64,
}

impl Default for TrackingConfig {
    fn default() -> Self {
        let pi = std::f64::consts::PI;
        let start = [pi + 1.0, -1.0, 0.0, 0.0];
        Self {
            horizon: 1.0,
            intervals: 20,
            substeps: 10,
            control_lower: -10.0,
            control_upper: 10.0,
            reference_start: start,
            reference_velocity: [-1.0, 1.0, 0.0, 0.0],
            initial_state: start,
            max_iterations: 300,
            restarts: 3,
            restart_seed: 0,
            fd_step: 1e-4,
            tolerance: 1e-12,
        }
    }
}

impl TrackingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.horizon > 0.0) || self.intervals == 0 || self.substeps == 0 {
            return Err(Error::invalid("tracking horizon, intervals and substeps must be positive"));
        }
        if !(self.control_lower < self.control_upper) {
            return Err(Error::invalid("control bounds need lower < upper"));
        }
        if self.restarts == 0 || !(self.fd_step > 0.0) {
            return Err(Error::invalid("tracking needs at least one start and a positive difference step"));
        }
        Ok(())
    }

    /// Control interval length `τ`.
    pub fn interval(&self) -> f64 {
        self.horizon / self.intervals as f64
    }

    /// Euler step `τ̂ = τ / N_τ`.
    pub fn substep(&self) -> f64 {
        self.interval() / self.substeps as f64
    }

    pub fn reference(&self, t: f64) -> [f64; 4] {
        std::array::from_fn(|k| self.reference_start[k] + t * self.reference_velocity[k])
    }

    fn project(&self, u: f64) -> f64 {
        u.clamp(self.control_lower, self.control_upper)
    }
}

fn check_controls(u: &[f64], cfg: &TrackingConfig) -> Result<()> {
    if u.len() != cfg.intervals {
        return Err(Error::DimensionMismatch { expected: cfg.intervals, got: u.len() });
    }
    Ok(())
}

fn check_model(f: &dyn Surrogate) -> Result<()> {
    if f.input_dim() != 3 || f.output_dim() != 1 {
        return Err(Error::DimensionMismatch { expected: 3, got: f.input_dim() });
    }
    Ok(())
}

/// Euler integration; calls `visit(state, u)` before every substep and
/// returns the cost at the interval ends and the final state.
fn integrate_full(
    f: &dyn Surrogate,
    u: &[f64],
    cfg: &TrackingConfig,
    mut visit: impl FnMut(&[f64; 4], f64),
) -> Result<(f64, [f64; 4])> {
    let (tau, h) = (cfg.interval(), cfg.substep());
    let mut x = cfg.initial_state;
    let mut acc = [0.0];
    let mut cost = 0.0;
    for (i, &ui) in u.iter().enumerate() {
        for k in 0..cfg.substeps {
            visit(&x, ui);
            f.eval_into(&[x[0], x[1], ui], &mut acc);
            x = [x[0] + h * x[1], x[1] + h * acc[0], x[2] + h * x[3], x[3] + h * ui];
            if x.iter().any(|v| !v.is_finite()) {
                return Err(Error::DivergedRollout { step: i * cfg.substeps + k + 1 });
            }
        }
        let r = cfg.reference((i + 1) as f64 * tau);
        cost += tau * x.iter().zip(&r).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
    }
    Ok((cost, x))
}

fn integrate(f: &dyn Surrogate, u: &[f64], cfg: &TrackingConfig, visit: impl FnMut(&[f64; 4], f64)) -> Result<f64> {
    Ok(integrate_full(f, u, cfg, visit)?.0)
}

/// States at every Euler substep, `N_T·N_τ + 1` rows of `(x1, x2, x3, x4)`.
pub fn tracking_simulate(f: &dyn Surrogate, u: &[f64], cfg: &TrackingConfig) -> Result<Points> {
    cfg.validate()?;
    check_model(f)?;
    check_controls(u, cfg)?;
    let mut states = Points::with_capacity(4, cfg.intervals * cfg.substeps + 1);
    let (_, last) = integrate_full(f, u, cfg, |x, _| {
        states.push(x).expect("dim 4");
    })?;
    states.push(&last)?;
    Ok(states)
}

/// `C_τ(u; f) = Σ_j τ ‖x̂(jτ) - x_r(jτ)‖²`.
pub fn tracking_cost(f: &dyn Surrogate, u: &[f64], cfg: &TrackingConfig) -> Result<f64> {
    check_model(f)?;
    check_controls(u, cfg)?;
    integrate(f, u, cfg, |_, _| {})
}

/// Optimized control for one surrogate.
#[derive(Clone, Debug, PartialEq)]
pub struct TrackingResult {
    pub controls: Vec<f64>,
    pub cost: f64,
    /// Triples `(x1, x2, u)` where the surrogate is evaluated along the optimum.
    pub support: SupportTrace,
    /// Accepted costs of the winning start, first entry is its initial cost.
    pub cost_history: Vec<f64>,
}

fn fd_gradient(f: &dyn Surrogate, u: &[f64], cfg: &TrackingConfig) -> Result<Vec<f64>> {
    let h = cfg.fd_step;
    (0..u.len())
        .into_par_iter()
        .map(|k| {
            let mut up = u.to_vec();
            up[k] += h;
            let mut dn = u.to_vec();
            dn[k] -= h;
            Ok((integrate(f, &up, cfg, |_, _| {})? - integrate(f, &dn, cfg, |_, _| {})?) / (2.0 * h))
        })
        .collect()
}

/// Projected gradient descent from one start, accepting only improving steps.
fn descend(f: &dyn Surrogate, start: Vec<f64>, cfg: &TrackingConfig) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut u: Vec<f64> = start.into_iter().map(|v| cfg.project(v)).collect();
    let mut cost = integrate(f, &u, cfg, |_, _| {})?;
    if !cost.is_finite() {
        return Err(Error::invalid("tracking cost is not finite"));
    }
    let mut history = vec![cost];
    let mut grad = fd_gradient(f, &u, cfg)?;
    let mut step = 1.0;
    for _ in 0..cfg.max_iterations {
        let mut accepted = None;
        let mut alpha = step;
        for _ in 0..40 {
            let trial: Vec<f64> = u.iter().zip(&grad).map(|(v, g)| cfg.project(v - alpha * g)).collect();
            if trial == u {
                break;
            }
            match integrate(f, &trial, cfg, |_, _| {}) {
                Ok(c) if c < cost => {
                    accepted = Some((trial, c));
                    break;
                }
                _ => alpha *= 0.5,
            }
        }
        let Some((next, next_cost)) = accepted else { break };
        let next_grad = fd_gradient(f, &next, cfg)?;
        // Barzilai-Borwein step for the next iteration
        let (mut ss, mut sy) = (0.0, 0.0);
        for k in 0..u.len() {
            let s = next[k] - u[k];
            ss += s * s;
            sy += s * (next_grad[k] - grad[k]);
        }
        step = if sy > 0.0 { (ss / sy).clamp(1e-8, 1e4) } else { (alpha * 2.0).min(1e4) };
        let improvement = cost - next_cost;
        u = next;
        grad = next_grad;
        cost = next_cost;
        history.push(cost);
        if improvement <= cfg.tolerance * (1.0 + cost) {
            break;
        }
    }
    Ok((u, history))
}

/// Multi-start projected gradient on `C_τ(·; f)` over the control box.
///
/// Start 0 is `u ≡ 0`; start `s ≥ 1` draws `N(0, 2²)` entries from substream
/// `s` of `restart_seed`. The lowest final cost wins, earliest on ties.
pub fn tracking_optimize(f: &dyn Surrogate, cfg: &TrackingConfig) -> Result<TrackingResult> {
    cfg.validate()?;
    check_model(f)?;
    let mut best: Option<(Vec<f64>, Vec<f64>)> = None;
    for s in 0..cfg.restarts {
        let start = if s == 0 {
            vec![0.0; cfg.intervals]
        } else {
            let mut rng = SeedStream::substream(cfg.restart_seed, s as u64);
            (0..cfg.intervals).map(|_| 2.0 * rng.normal()).collect()
        };
        let (u, hist) = descend(f, start, cfg)?;
        let better = match &best {
            None => true,
            Some((_, h)) => hist.last() < h.last(),
        };
        if better {
            best = Some((u, hist));
        }
    }
    let (controls, cost_history) = best.expect("at least one start");
    let mut support = Points::with_capacity(3, cfg.intervals * cfg.substeps);
    let cost = integrate(f, &controls, cfg, |x, u| {
        support.push(&[x[0], x[1], u]).expect("dim 3");
    })?;
    Ok(TrackingResult { controls, cost, support: SupportTrace::new(support)?, cost_history })
}

/// `C_τ(u_θ; f*) - C_τ(u*; f*)` with the true pendulum dynamics.
pub fn tracking_output_error(u_surrogate: &[f64], u_true: &[f64], cfg: &TrackingConfig) -> Result<f64> {
    let truth = PendulumAcceleration;
    Ok(tracking_cost(&truth, u_surrogate, cfg)? - tracking_cost(&truth, u_true, cfg)?)
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrackingTask(pub TrackingConfig);

impl Task for TrackingTask {
    fn name(&self) -> &'static str {
        "tracking"
    }
    fn input_dim(&self) -> usize {
        3
    }
    fn run(&self, f: &dyn Surrogate) -> Result<(SupportTrace, TaskOutput)> {
        let r = tracking_optimize(f, &self.0)?;
        Ok((r.support, TaskOutput::Control { controls: r.controls, predicted_cost: r.cost }))
    }
    fn output_error(&self, output: &TaskOutput, truth_output: &TaskOutput, truth: &dyn Surrogate) -> Result<f64> {
        match (output, truth_output) {
            (TaskOutput::Control { controls: a, .. }, TaskOutput::Control { controls: b, .. }) => {
                Ok(tracking_cost(truth, a, &self.0)? - tracking_cost(truth, b, &self.0)?)
            }
            _ => Err(Error::invalid("tracking error needs control outputs")),
        }
    }
}
