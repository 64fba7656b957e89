//! Simplified string method for minimum energy paths.

use super::{SupportTrace, Task, TaskOutput};
use crate::error::{Error, Result};
use crate::models::Surrogate;
use crate::points::{euclidean_distance, Points};

#[derive(Clone, Debug, PartialEq)]
pub struct MepConfig {
    pub start: Vec<f64>,
    pub end: Vec<f64>,
    /// Number of nodes, endpoints included.
    pub nodes: usize,
    pub step: f64,
    pub max_iterations: usize,
    /// Largest node displacement per iteration that counts as converged.
    pub tolerance: f64,
    /// Put the endpoints back at `start`/`end` after every reparameterization.
    pub pin_endpoints: bool,
}

impl Default for MepConfig {
    fn default() -> Self {
        Self {
            start: vec![1.0, 0.0, 0.0],
            end: vec![-1.0, 0.0, 0.0],
            nodes: 41,
            step: 1e-2,
            max_iterations: 100_000,
            tolerance: 1e-8,
            pin_endpoints: true,
        }
    }
}

impl MepConfig {
    pub fn validate(&self) -> Result<()> {
        if self.start.len() != self.end.len() || self.start.is_empty() {
            return Err(Error::invalid("string endpoints must have equal nonzero dimension"));
        }
        if self.nodes < 3 {
            return Err(Error::invalid("string needs at least 3 nodes"));
        }
        if !(self.tolerance > 0.0) || !(self.step > 0.0) {
            return Err(Error::invalid("string step and tolerance must be positive"));
        }
        Ok(())
    }

    /// Straight line from `start` to `end`.
    pub fn initial_string(&self) -> Points {
        let k = (self.nodes - 1) as f64;
        let mut pts = Points::with_capacity(self.start.len(), self.nodes);
        for i in 0..self.nodes {
            let t = i as f64 / k;
            let row: Vec<f64> = self.start.iter().zip(&self.end).map(|(a, b)| a + t * (b - a)).collect();
            pts.push(&row).expect("dimension");
        }
        pts
    }
}

/// Redistributes nodes to equal arc length along the piecewise-linear path.
/// First and last node are kept.
pub fn reparameterize_equal_arc(nodes: &Points) -> Points {
    let n = nodes.len();
    let d = nodes.dim();
    let mut cum = Vec::with_capacity(n);
    cum.push(0.0);
    for k in 1..n {
        cum.push(cum[k - 1] + euclidean_distance(nodes.row(k - 1), nodes.row(k)));
    }
    let total = cum[n - 1];
    if !(total > 0.0) {
        return nodes.clone();
    }
    let mut out = Points::with_capacity(d, n);
    out.push(nodes.row(0)).expect("dimension");
    let mut seg = 1;
    let mut row = vec![0.0; d];
    for k in 1..n - 1 {
        let target = total * k as f64 / (n - 1) as f64;
        while seg < n - 1 && cum[seg] < target {
            seg += 1;
        }
        let len = cum[seg] - cum[seg - 1];
        let t = if len > 0.0 { (target - cum[seg - 1]) / len } else { 0.0 };
        let (a, b) = (nodes.row(seg - 1), nodes.row(seg));
        for l in 0..d {
            row[l] = a[l] + t * (b[l] - a[l]);
        }
        out.push(&row).expect("dimension");
    }
    out.push(nodes.row(n - 1)).expect("dimension");
    out
}

/// Evolves the string under `f` (a negative-gradient field) until the
/// largest node displacement drops below the tolerance. The converged nodes
/// are both the support and the output.
pub fn string_method_run(f: &dyn Surrogate, cfg: &MepConfig) -> Result<(SupportTrace, TaskOutput)> {
    cfg.validate()?;
    let d = cfg.start.len();
    if f.input_dim() != d || f.output_dim() != d {
        return Err(Error::DimensionMismatch { expected: d, got: f.input_dim() });
    }
    let mut nodes = cfg.initial_string();
    let mut grad = vec![0.0; d];
    let mut displacement = f64::INFINITY;
    for iteration in 0..cfg.max_iterations {
        let mut moved = nodes.clone();
        for k in 0..moved.len() {
            f.eval_into(nodes.row(k), &mut grad);
            for (v, g) in moved.row_mut(k).iter_mut().zip(&grad) {
                *v += cfg.step * g;
            }
        }
        if !moved.is_finite() {
            return Err(Error::DivergedRollout { step: iteration + 1 });
        }
        let mut next = reparameterize_equal_arc(&moved);
        if cfg.pin_endpoints {
            let last = next.len() - 1;
            next.row_mut(0).copy_from_slice(&cfg.start);
            next.row_mut(last).copy_from_slice(&cfg.end);
            next = reparameterize_equal_arc(&next);
        }
        displacement = next.rows().zip(nodes.rows()).map(|(a, b)| euclidean_distance(a, b)).fold(0.0, f64::max);
        nodes = next;
        if displacement < cfg.tolerance {
            let support = SupportTrace::new(nodes.clone())?;
            return Ok((support, TaskOutput::Path { nodes }));
        }
    }
    Err(Error::ConvergenceFailure { iterations: cfg.max_iterations, last_displacement: displacement })
}

#[derive(Clone, Debug, PartialEq)]
pub struct StringMethodTask(pub MepConfig);

impl Task for StringMethodTask {
    fn name(&self) -> &'static str {
        "string_method"
    }
    fn input_dim(&self) -> usize {
        self.0.start.len()
    }
    fn run(&self, f: &dyn Surrogate) -> Result<(SupportTrace, TaskOutput)> {
        string_method_run(f, &self.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::FnSurrogate;
    use crate::rng::SeedStream;

    #[test]
    fn zero_field_keeps_initial_string() {
        let f = FnSurrogate::new(3, 3, |_x: &[f64], o: &mut [f64]| o.fill(0.0));
        let cfg = MepConfig { max_iterations: 1, ..MepConfig::default() };
        let (s, out) = string_method_run(&f, &cfg).unwrap();
        let init = cfg.initial_string();
        for (a, b) in s.points.rows().zip(init.rows()) {
            assert!(euclidean_distance(a, b) < 1e-15);
        }
        assert!(matches!(out, TaskOutput::Path { .. }));
    }

    #[test]
    fn reparameterization_equalizes_arcs() {
        let mut rng = SeedStream::new(2);
        let mut pts = Points::with_capacity(3, 15);
        for _ in 0..15 {
            pts.push(&[rng.uniform(), rng.uniform(), rng.uniform()]).unwrap();
        }
        let out = reparameterize_equal_arc(&pts);
        assert_eq!(out.row(0), pts.row(0));
        assert_eq!(out.row(14), pts.row(14));
        // points on a straight segment keep equal spacing after a second pass
        let line = reparameterize_equal_arc(&MepConfig::default().initial_string());
        let gaps: Vec<f64> = (1..line.len()).map(|k| euclidean_distance(line.row(k - 1), line.row(k))).collect();
        let g0 = gaps[0];
        assert!(gaps.iter().all(|g| ((g - g0) / g0).abs() < 1e-12));
    }

    #[test]
    fn nonconvergence_is_reported() {
        let f = FnSurrogate::new(3, 3, |_x: &[f64], o: &mut [f64]| o.copy_from_slice(&[0.0, 1.0, 0.0]));
        let cfg = MepConfig { max_iterations: 5, ..MepConfig::default() };
        assert!(matches!(string_method_run(&f, &cfg), Err(Error::ConvergenceFailure { iterations: 5, .. })));
    }
}
