//! Isotropic Gaussian kernels and kernel density estimation.
//!
//! The kernel is `κ(x, x') = a · exp(-‖x - x'‖² / (2ε²))` with amplitude
//! `a = 1` unless set explicitly. Every consumer forms ratios or normalized
//! sums of kernel values, so the amplitude never changes a result; it exists
//! to let that invariance be checked.
//!
//! Densities are summed either directly over all sources or through a
//! uniform hashing grid whose cell edge equals the truncation radius
//! `r = c·ε`. The grid path drops every contribution with distance above
//! `r`; for `c = 6` the dropped mass per source is at most `e^-18`.

use std::collections::HashMap;

use rayon::prelude::*;

use crate::datagen::Dataset;
use crate::error::{Error, Result};
use crate::models::Surrogate;
use crate::points::{squared_distance, Points};

/// Floor added to densities before dividing by them.
pub const DENSITY_FLOOR: f64 = 1e-300;

/// Isotropic Gaussian kernel parameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KernelSpec {
    /// ε², in squared input units.
    pub variance: f64,
    /// Truncation radius as a multiple of ε.
    pub truncation_radius_factor: f64,
    /// Multiplicative constant in front of the exponential.
    pub amplitude: f64,
}

impl KernelSpec {
    pub const DEFAULT_TRUNCATION: f64 = 6.0;

    pub fn new(variance: f64) -> Result<Self> {
        Self::with_truncation(variance, Self::DEFAULT_TRUNCATION)
    }

    pub fn with_truncation(variance: f64, truncation_radius_factor: f64) -> Result<Self> {
        let spec = Self { variance, truncation_radius_factor, amplitude: 1.0 };
        spec.validate()?;
        Ok(spec)
    }

    pub fn with_amplitude(mut self, amplitude: f64) -> Result<Self> {
        self.amplitude = amplitude;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.variance > 0.0 && self.variance.is_finite()) {
            return Err(Error::invalid(format!("kernel variance must be positive, got {}", self.variance)));
        }
        if !(self.truncation_radius_factor >= 3.0) {
            return Err(Error::invalid(format!(
                "truncation factor must be at least 3, got {}",
                self.truncation_radius_factor
            )));
        }
        if !(self.amplitude > 0.0 && self.amplitude.is_finite()) {
            return Err(Error::invalid("kernel amplitude must be positive"));
        }
        Ok(())
    }

    /// ε·c, the distance beyond which the grid path drops contributions.
    pub fn radius(&self) -> f64 {
        self.truncation_radius_factor * self.variance.sqrt()
    }

    /// Kernel value for a squared distance.
    #[inline]
    pub fn weight_sq(&self, d2: f64) -> f64 {
        self.amplitude * (-0.5 * d2 / self.variance).exp()
    }
}

/// Kernel weight between two points.
pub fn kernel_weight(x: &[f64], x_prime: &[f64], spec: &KernelSpec) -> Result<f64> {
    if x.len() != x_prime.len() {
        return Err(Error::DimensionMismatch { expected: x.len(), got: x_prime.len() });
    }
    Ok(spec.weight_sq(squared_distance(x, x_prime)))
}

/// How kernel sums are evaluated.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Summation {
    /// Hashing grid with truncation.
    #[default]
    Grid,
    /// Every source, no truncation.
    Direct,
}

/// Density values at a set of query points.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityEstimate {
    pub values: Vec<f64>,
    pub spec: KernelSpec,
    pub source_count: usize,
}

/// Uniform hashing grid over a point set with cell edge equal to a radius.
///
/// Neighbor queries visit the `3^d` cells around the query in a fixed order
/// and, within a cell, points in index order, so sums are reproducible.
#[derive(Debug)]
pub struct SpatialGrid<'a> {
    points: &'a Points,
    radius: f64,
    cells: HashMap<Vec<i64>, Vec<usize>>,
    offsets: Vec<Vec<i64>>,
    scan: bool,
}

impl<'a> SpatialGrid<'a> {
    /// Above this dimension the `3^d` stencil costs more than a linear scan.
    const MAX_GRID_DIM: usize = 6;

    pub fn new(points: &'a Points, radius: f64) -> Self {
        let dim = points.dim();
        let scan = dim > Self::MAX_GRID_DIM || !(radius > 0.0 && radius.is_finite());
        let mut cells: HashMap<Vec<i64>, Vec<usize>> = HashMap::new();
        let mut offsets = Vec::new();
        if !scan {
            for (i, p) in points.rows().enumerate() {
                cells.entry(cell_key(p, radius)).or_default().push(i);
            }
            let count = 3usize.pow(dim as u32);
            for mut code in 0..count {
                let mut off = vec![0i64; dim];
                for o in off.iter_mut() {
                    *o = (code % 3) as i64 - 1;
                    code /= 3;
                }
                offsets.push(off);
            }
        }
        Self { points, radius, cells, offsets, scan }
    }

    pub fn points(&self) -> &Points {
        self.points
    }

    /// Calls `visit(index, squared_distance)` for every point within the radius.
    pub fn for_each_within(&self, query: &[f64], mut visit: impl FnMut(usize, f64)) {
        let r2 = self.radius * self.radius;
        if self.scan {
            for (i, p) in self.points.rows().enumerate() {
                let d2 = squared_distance(p, query);
                if d2 <= r2 {
                    visit(i, d2);
                }
            }
            return;
        }
        let base = cell_key(query, self.radius);
        let mut key = base.clone();
        for off in &self.offsets {
            for ((k, b), o) in key.iter_mut().zip(&base).zip(off) {
                *k = b + o;
            }
            if let Some(members) = self.cells.get(key.as_slice()) {
                for &i in members {
                    let d2 = squared_distance(self.points.row(i), query);
                    if d2 <= r2 {
                        visit(i, d2);
                    }
                }
            }
        }
    }
}

fn cell_key(p: &[f64], cell: f64) -> Vec<i64> {
    p.iter().map(|v| (v / cell).floor() as i64).collect()
}

fn check_same_dim(a: &Points, b: &Points) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch { expected: a.dim(), got: b.dim() });
    }
    Ok(())
}

/// KDE of `sources` evaluated at every query: `(1/S) Σ_s κ(x_s, q)`.
pub fn estimate_density(sources: &Points, queries: &Points, spec: &KernelSpec) -> Result<DensityEstimate> {
    estimate_density_with(sources, queries, spec, Summation::Grid)
}

pub fn estimate_density_with(
    sources: &Points,
    queries: &Points,
    spec: &KernelSpec,
    summation: Summation,
) -> Result<DensityEstimate> {
    spec.validate()?;
    if sources.is_empty() {
        return Err(Error::invalid("density estimate needs at least one source"));
    }
    check_same_dim(sources, queries)?;
    let s = sources.len() as f64;
    let values: Vec<f64> = match summation {
        Summation::Direct => (0..queries.len())
            .into_par_iter()
            .map(|q| {
                let x = queries.row(q);
                sources.rows().map(|p| spec.weight_sq(squared_distance(p, x))).sum::<f64>() / s
            })
            .collect(),
        Summation::Grid => {
            let grid = SpatialGrid::new(sources, spec.radius());
            (0..queries.len())
                .into_par_iter()
                .map(|q| {
                    let mut acc = 0.0;
                    grid.for_each_within(queries.row(q), |_, d2| acc += spec.weight_sq(d2));
                    acc / s
                })
                .collect()
        }
    };
    Ok(DensityEstimate { values, spec: *spec, source_count: sources.len() })
}

/// Picks the variance for the support-error estimate by leave-one-out.
///
/// For the `neighborhood_k` training points closest to the support, each
/// candidate predicts the point's own squared error from the other points
/// (normalized `κ/ρ_N` weights) and is scored by the mean squared gap to the
/// true error. The lowest score wins; ties go to the larger variance. A
/// candidate that leaves any selected point with no neighbor inside the
/// truncation radius scores `+∞`.
pub fn calibrate_error_variance(
    dataset: &Dataset,
    model: &dyn Surrogate,
    support: &Points,
    candidates: &[f64],
    neighborhood_k: usize,
) -> Result<KernelSpec> {
    if candidates.is_empty() {
        return Err(Error::invalid("no candidate variances"));
    }
    let n = dataset.len();
    if n < 2 {
        return Err(Error::invalid("leave-one-out calibration needs at least two training points"));
    }
    if neighborhood_k == 0 || neighborhood_k > n {
        return Err(Error::invalid(format!("neighborhood_k must be in 1..={n}")));
    }
    if support.is_empty() {
        return Err(Error::invalid("empty support"));
    }
    check_same_dim(dataset.inputs(), support)?;
    let density = dataset.require_densities()?;
    let losses = dataset.squared_errors(model)?;

    let selected = nearest_to_support(dataset.inputs(), support, neighborhood_k);
    let inputs = dataset.inputs();

    let mut best: Option<(f64, f64)> = None;
    for &variance in candidates {
        let spec = KernelSpec::new(variance)?;
        let grid = SpatialGrid::new(inputs, spec.radius());
        let gaps: Vec<Option<f64>> = selected
            .par_iter()
            .map(|&i| {
                let (mut num, mut den) = (0.0, 0.0);
                grid.for_each_within(inputs.row(i), |j, d2| {
                    if j != i {
                        let w = spec.weight_sq(d2) / (density[j] + DENSITY_FLOOR);
                        num += w * losses[j];
                        den += w;
                    }
                });
                (den > 0.0).then(|| (num / den - losses[i]).powi(2))
            })
            .collect();
        let score = if gaps.iter().any(Option::is_none) {
            f64::INFINITY
        } else {
            gaps.iter().flatten().sum::<f64>() / gaps.len() as f64
        };
        best = match best {
            None => Some((variance, score)),
            Some((bv, bs)) if score < bs || (score == bs && variance > bv) => Some((variance, score)),
            keep => keep,
        };
    }
    let (variance, _) = best.expect("candidates nonempty");
    KernelSpec::new(variance)
}

/// Indices of the `k` points with smallest distance to any support point.
fn nearest_to_support(inputs: &Points, support: &Points, k: usize) -> Vec<usize> {
    let mut dist: Vec<(f64, usize)> = (0..inputs.len())
        .into_par_iter()
        .map(|i| {
            let x = inputs.row(i);
            let d = support.rows().map(|s| squared_distance(s, x)).fold(f64::INFINITY, f64::min);
            (d, i)
        })
        .collect();
    dist.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    dist.into_iter().take(k).map(|(_, i)| i).collect()
}
