//! Support-focused reweighting of the training set.
//!
//! Given the support of the downstream task (the points the algorithm
//! visits), this module estimates the model error at each support point,
//! turns those errors into per-support emphasis, and spreads the emphasis back
//! onto training samples as coefficients `m_i` with mean one.

use rayon::prelude::*;

use crate::datagen::Dataset;
use crate::error::{Error, Result};
use crate::kernels::{KernelSpec, SpatialGrid, Summation, DENSITY_FLOOR};
use crate::models::Surrogate;
use crate::points::{squared_distance, Points};

/// Hyperparameters of the reweighting.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WeightingConfig {
    /// Softmax sharpness; 0 weights every support point equally.
    pub sharpness: f64,
    /// Offset added to every emphasis weight.
    pub omega0: f64,
    /// Kernel for the training density.
    pub kernel_rho: KernelSpec,
    /// Kernel for the support self-density.
    pub kernel_nu: KernelSpec,
    /// Kernel for local error estimates at support points.
    pub kernel_l: KernelSpec,
    /// Kernel spreading support emphasis onto training samples.
    pub kernel_m: KernelSpec,
    pub summation: Summation,
}

impl WeightingConfig {
    pub const DEFAULT_SHARPNESS: f64 = 10.0;
    pub const DEFAULT_OMEGA0: f64 = 0.5;

    pub fn new(kernel_rho: KernelSpec, kernel_nu: KernelSpec, kernel_l: KernelSpec, kernel_m: KernelSpec) -> Self {
        Self {
            sharpness: Self::DEFAULT_SHARPNESS,
            omega0: Self::DEFAULT_OMEGA0,
            kernel_rho,
            kernel_nu,
            kernel_l,
            kernel_m,
            summation: Summation::Grid,
        }
    }

    /// Same kernel variance for every role.
    pub fn uniform_variance(variance: f64) -> Result<Self> {
        let k = KernelSpec::new(variance)?;
        Ok(Self::new(k, k, k, k))
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sharpness >= 0.0 && self.sharpness.is_finite()) {
            return Err(Error::invalid(format!("sharpness must be a nonnegative number, got {}", self.sharpness)));
        }
        if !(self.omega0 >= 0.0 && self.omega0.is_finite()) {
            return Err(Error::invalid(format!("omega0 must be a nonnegative number, got {}", self.omega0)));
        }
        for k in [&self.kernel_rho, &self.kernel_nu, &self.kernel_l, &self.kernel_m] {
            k.validate()?;
        }
        if self.kernel_m.variance < self.kernel_l.variance {
            return Err(Error::invalid(format!(
                "kernel_m variance {} is smaller than kernel_l variance {}",
                self.kernel_m.variance, self.kernel_l.variance
            )));
        }
        Ok(())
    }
}

/// All reweighting quantities for one model snapshot.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightState {
    pub support_errors: Vec<f64>,
    pub stratification: Vec<f64>,
    pub emphasis: Vec<f64>,
    pub sample_coefficients: Vec<f64>,
    /// `(1/N) Σ m_i ‖f(x_i) - y_i‖²`.
    pub risk_rn: f64,
    /// Largest estimated support error.
    pub metric_rsn: f64,
}

fn neighbors(
    sources: &Points,
    grid: Option<&SpatialGrid<'_>>,
    query: &[f64],
    mut visit: impl FnMut(usize, f64),
) {
    match grid {
        Some(g) => g.for_each_within(query, visit),
        None => {
            for (i, p) in sources.rows().enumerate() {
                visit(i, squared_distance(p, query));
            }
        }
    }
}

fn check_dims(dataset: &Dataset, support: &Points) -> Result<()> {
    if support.is_empty() {
        return Err(Error::invalid("support is empty"));
    }
    if support.dim() != dataset.input_dim() {
        return Err(Error::DimensionMismatch { expected: dataset.input_dim(), got: support.dim() });
    }
    Ok(())
}

/// `K(x_i, q)`: `κ(x_i, q)/ρ_N(x_i)` normalized to mean one over the dataset.
pub fn normalized_sample_weights(dataset: &Dataset, query: &[f64], spec: &KernelSpec) -> Result<Vec<f64>> {
    spec.validate()?;
    if query.len() != dataset.input_dim() {
        return Err(Error::DimensionMismatch { expected: dataset.input_dim(), got: query.len() });
    }
    let density = dataset.require_densities()?;
    let raw: Vec<f64> = dataset
        .inputs()
        .rows()
        .zip(density)
        .map(|(x, r)| spec.weight_sq(squared_distance(x, query)) / (r + DENSITY_FLOOR))
        .collect();
    let total: f64 = raw.iter().sum();
    if !(total > DENSITY_FLOOR) {
        return Err(Error::DegenerateNeighborhood { query_index: 0 });
    }
    let n = raw.len() as f64;
    Ok(raw.into_iter().map(|w| w * n / total).collect())
}

/// Kernel-weighted average of training losses around every support point.
pub fn estimate_support_errors(
    dataset: &Dataset,
    model: &dyn Surrogate,
    support: &Points,
    spec: &KernelSpec,
) -> Result<Vec<f64>> {
    let losses = dataset.squared_errors(model)?;
    support_errors_from_losses(dataset, &losses, support, spec, Summation::Grid)
}

/// [`estimate_support_errors`] for precomputed per-sample losses.
pub fn support_errors_from_losses(
    dataset: &Dataset,
    losses: &[f64],
    support: &Points,
    spec: &KernelSpec,
    summation: Summation,
) -> Result<Vec<f64>> {
    spec.validate()?;
    check_dims(dataset, support)?;
    if losses.len() != dataset.len() {
        return Err(Error::DimensionMismatch { expected: dataset.len(), got: losses.len() });
    }
    let density = dataset.require_densities()?;
    let inputs = dataset.inputs();
    let grid = (summation == Summation::Grid).then(|| SpatialGrid::new(inputs, spec.radius()));
    (0..support.len())
        .into_par_iter()
        .map(|j| {
            let (mut num, mut den) = (0.0, 0.0);
            neighbors(inputs, grid.as_ref(), support.row(j), |i, d2| {
                let w = spec.weight_sq(d2) / (density[i] + DENSITY_FLOOR);
                num += w * losses[i];
                den += w;
            });
            if !(den > DENSITY_FLOOR) {
                return Err(Error::DegenerateNeighborhood { query_index: j });
            }
            Ok(num / den)
        })
        .collect()
}

/// Inverse self-density of the support, normalized to mean one.
pub fn stratification_factors(support: &Points, spec: &KernelSpec) -> Result<Vec<f64>> {
    spec.validate()?;
    if support.is_empty() {
        return Err(Error::invalid("support is empty"));
    }
    let nu = crate::kernels::estimate_density(support, support, spec)?.values;
    let inv: Vec<f64> = nu.iter().map(|v| 1.0 / v).collect();
    let mean = inv.iter().sum::<f64>() / inv.len() as f64;
    Ok(inv.into_iter().map(|a| a / mean).collect())
}

/// `J·softmax(M·l/l̄) + ω0`, with a zero softmax argument when `l̄ = 0`.
pub fn emphasis_weights(support_errors: &[f64], sharpness: f64, omega0: f64) -> Vec<f64> {
    let j = support_errors.len();
    if j == 0 {
        return Vec::new();
    }
    let mean = support_errors.iter().sum::<f64>() / j as f64;
    let args: Vec<f64> = if mean > 0.0 && sharpness > 0.0 {
        support_errors.iter().map(|l| sharpness * l / mean).collect()
    } else {
        vec![0.0; j]
    };
    let top = args.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = args.iter().map(|a| (a - top).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| j as f64 * e / total + omega0).collect()
}

/// Full weight state for `model` on `dataset` given the task support.
pub fn reweighting_coefficients(
    dataset: &Dataset,
    model: &dyn Surrogate,
    support: &Points,
    cfg: &WeightingConfig,
) -> Result<WeightState> {
    let losses = dataset.squared_errors(model)?;
    reweighting_from_losses(dataset, &losses, support, cfg)
}

/// [`reweighting_coefficients`] for precomputed per-sample losses.
pub fn reweighting_from_losses(
    dataset: &Dataset,
    losses: &[f64],
    support: &Points,
    cfg: &WeightingConfig,
) -> Result<WeightState> {
    cfg.validate()?;
    check_dims(dataset, support)?;
    if let Some(k) = dataset.density_kernel() {
        if k.variance != cfg.kernel_rho.variance {
            return Err(Error::invalid(format!(
                "dataset densities use variance {} but the config asks for {}",
                k.variance, cfg.kernel_rho.variance
            )));
        }
    }
    let density = dataset.require_densities()?;
    let support_errors = support_errors_from_losses(dataset, losses, support, &cfg.kernel_l, cfg.summation)?;
    let stratification = stratification_factors(support, &cfg.kernel_nu)?;
    let emphasis = emphasis_weights(&support_errors, cfg.sharpness, cfg.omega0);

    let j = support.len() as f64;
    let coeff: Vec<f64> = emphasis.iter().zip(&stratification).map(|(w, a)| w * a / j).collect();
    let spec = cfg.kernel_m;
    let grid = (cfg.summation == Summation::Grid).then(|| SpatialGrid::new(support, spec.radius()));
    let inputs = dataset.inputs();
    let raw: Vec<f64> = (0..dataset.len())
        .into_par_iter()
        .map(|i| {
            let mut acc = 0.0;
            neighbors(support, grid.as_ref(), inputs.row(i), |s, d2| acc += coeff[s] * spec.weight_sq(d2));
            acc / (density[i] + DENSITY_FLOOR)
        })
        .collect();
    let mass: f64 = raw.iter().sum();
    if !(mass > DENSITY_FLOOR) || !mass.is_finite() {
        return Err(Error::TotallyLostSupport { mass });
    }
    let n = dataset.len() as f64;
    let sample_coefficients: Vec<f64> = raw.into_iter().map(|m| m * n / mass).collect();
    let risk_rn = sample_coefficients.iter().zip(losses).map(|(m, l)| m * l).sum::<f64>() / n;
    let metric_rsn = support_errors.iter().copied().fold(0.0, f64::max);
    Ok(WeightState { support_errors, stratification, emphasis, sample_coefficients, risk_rn, metric_rsn })
}

/// Non-task-specific weighting schemes used as ablation baselines.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BaselineScheme {
    /// `m ∝ 1/ρ_N`: MSE under a uniform measure on the data hull.
    InverseDensity,
    /// `m ∝ ‖f(x_i) - y_i‖²`.
    LossProportional,
}

impl BaselineScheme {
    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "m1" | "inverse_density" => Ok(Self::InverseDensity),
            "m2" | "loss_proportional" => Ok(Self::LossProportional),
            other => Err(Error::config(format!("unknown baseline scheme `{other}`"))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::InverseDensity => "m1",
            Self::LossProportional => "m2",
        }
    }
}

/// Baseline weights normalized to mean one. An all-zero loss under
/// [`BaselineScheme::LossProportional`] gives uniform weights.
pub fn baseline_weights(dataset: &Dataset, model: &dyn Surrogate, scheme: BaselineScheme) -> Result<Vec<f64>> {
    let raw: Vec<f64> = match scheme {
        BaselineScheme::InverseDensity => {
            dataset.require_densities()?.iter().map(|r| 1.0 / (r + DENSITY_FLOOR)).collect()
        }
        BaselineScheme::LossProportional => dataset.squared_errors(model)?,
    };
    let total: f64 = raw.iter().sum();
    let n = raw.len() as f64;
    if !(total > 0.0) || !total.is_finite() {
        return Ok(vec![1.0; raw.len()]);
    }
    Ok(raw.into_iter().map(|w| w * n / total).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::FnSurrogate;

    fn close(a: &[f64], b: &[f64], tol: f64) {
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(b) {
            assert!((x - y).abs() <= tol * (1.0 + y.abs()), "{a:?} vs {b:?}");
        }
    }

    fn line(xs: &[f64], variance: f64) -> Dataset {
        Dataset::new(Points::from_scalars(xs), Points::from_scalars(&vec![0.0; xs.len()]))
            .unwrap()
            .with_densities(KernelSpec::new(variance).unwrap())
            .unwrap()
    }

    fn k1() -> KernelSpec {
        KernelSpec::new(1.0).unwrap()
    }

    #[test]
    fn single_sample_weight_is_one() {
        let ds = line(&[2.0], 1.0);
        assert_eq!(normalized_sample_weights(&ds, &[-0.5], &k1()).unwrap(), vec![1.0]);
    }

    #[test]
    fn symmetric_pair_gets_equal_weights() {
        let ds = line(&[-1.0, 1.0], 1.0);
        close(&normalized_sample_weights(&ds, &[0.0], &k1()).unwrap(), &[1.0, 1.0], 1e-14);
    }

    #[test]
    fn three_point_weights_match_direct_oracle() {
        let ds = line(&[0.0, 1.0, 3.0], 1.0);
        let k = normalized_sample_weights(&ds, &[0.5], &k1()).unwrap();
        close(&k, &[1.50080149541866, 1.3937674279567565, 0.1054310766245834], 1e-12);
    }

    #[test]
    fn far_query_is_degenerate() {
        let ds = line(&[0.0, 1.0], 1.0);
        assert!(matches!(
            normalized_sample_weights(&ds, &[1e6], &k1()),
            Err(Error::DegenerateNeighborhood { .. })
        ));
        let support = Points::from_scalars(&[0.5, 1e6]);
        let err = support_errors_from_losses(&ds, &[1.0, 1.0], &support, &k1(), Summation::Grid).unwrap_err();
        assert!(matches!(err, Error::DegenerateNeighborhood { query_index: 1 }));
    }

    #[test]
    fn support_errors_for_quadratic_loss() {
        let ds = line(&[0.0, 1.0, 3.0], 1.0);
        let l = support_errors_from_losses(&ds, &[0.0, 1.0, 9.0], &Points::from_scalars(&[0.5]), &k1(), Summation::Grid)
            .unwrap();
        close(&l, &[0.7808823725260025], 1e-12);
    }

    #[test]
    fn zero_and_constant_losses() {
        let ds = line(&[0.0, 0.4, 1.0, 3.0], 1.0);
        let support = Points::from_scalars(&[0.1, 0.9, 2.5]);
        let perfect = FnSurrogate::new(1, 1, |_x: &[f64], out: &mut [f64]| out[0] = 0.0);
        assert!(estimate_support_errors(&ds, &perfect, &support, &k1()).unwrap().iter().all(|&l| l == 0.0));
        let l = support_errors_from_losses(&ds, &[0.3; 4], &support, &k1(), Summation::Grid).unwrap();
        close(&l, &[0.3; 3], 1e-14);
    }

    #[test]
    fn stratification_values() {
        assert_eq!(stratification_factors(&Points::from_scalars(&[4.0]), &k1()).unwrap(), vec![1.0]);
        let a = stratification_factors(&Points::from_scalars(&[0.0, 0.1, 5.0]), &k1()).unwrap();
        close(&a, &[0.7509395421005279, 0.7509386436483986, 1.4981218142510742], 1e-12);
        let even: Vec<f64> = (0..9).map(|i| i as f64 * 0.5).collect();
        let a = stratification_factors(&Points::from_scalars(&even), &k1()).unwrap();
        assert!((a[3] - a[5]).abs() < 1e-14);
        assert!(a[0] > a[4] && a[8] > a[4]);
    }

    #[test]
    fn emphasis_cases() {
        close(&emphasis_weights(&[2.0, 2.0, 2.0], 10.0, 0.5), &[1.5; 3], 1e-15);
        close(&emphasis_weights(&[0.0, 0.0], 10.0, 0.5), &[1.5; 2], 1e-15);
        close(&emphasis_weights(&[1.0, 7.0, 0.1], 0.0, 0.25), &[1.25; 3], 1e-15);
        close(&emphasis_weights(&[1.0, 3.0], 10.0, 0.5), &[0.5000907957374049, 2.499909204262595], 1e-14);
    }

    #[test]
    fn sharp_limit_concentrates_on_argmax() {
        let l = [0.3, 0.9, 0.5, 0.1];
        let w = emphasis_weights(&l, 1e4, 0.0);
        assert!(w[1] >= 0.999 * 4.0);
    }

    #[test]
    fn end_to_end_three_points() {
        let ds = line(&[0.0, 1.0, 3.0], 1.0);
        let cfg = WeightingConfig::uniform_variance(1.0).unwrap();
        let st = reweighting_from_losses(&ds, &[0.0, 0.1, 0.4], &Points::from_scalars(&[0.5]), &cfg).unwrap();
        close(&st.sample_coefficients, &[1.50080149541866, 1.393767427956757, 0.1054310766245834], 1e-12);
        close(&st.support_errors, &[0.06051639114850301], 1e-12);
        assert!((st.risk_rn - 0.06051639114850302).abs() < 1e-14);
        assert_eq!(st.metric_rsn, st.support_errors[0]);
        let direct = WeightingConfig { summation: Summation::Direct, ..cfg };
        let st2 = reweighting_from_losses(&ds, &[0.0, 0.1, 0.4], &Points::from_scalars(&[0.5]), &direct).unwrap();
        close(&st2.sample_coefficients, &st.sample_coefficients, 1e-14);
    }

    #[test]
    fn full_support_on_lattice_is_uniform() {
        // periodic-like symmetry is not available on a finite line, so use
        // two symmetric points, support = training set, M = 0
        let ds = line(&[-1.0, 1.0], 1.0);
        let cfg = WeightingConfig { sharpness: 0.0, ..WeightingConfig::uniform_variance(1.0).unwrap() };
        let st = reweighting_from_losses(&ds, &[0.2, 0.9], ds.inputs(), &cfg).unwrap();
        close(&st.sample_coefficients, &[1.0, 1.0], 1e-14);
    }

    #[test]
    fn far_training_points_get_zero() {
        let ds = line(&[0.0, 0.5, 100.0], 1.0);
        let cfg = WeightingConfig::uniform_variance(1.0).unwrap();
        let st = reweighting_from_losses(&ds, &[1.0, 1.0, 1.0], &Points::from_scalars(&[0.2]), &cfg).unwrap();
        assert_eq!(st.sample_coefficients[2], 0.0);
    }

    #[test]
    fn support_outside_data_is_degenerate() {
        let ds = line(&[0.0, 0.5], 1.0);
        let mut cfg = WeightingConfig::uniform_variance(1.0).unwrap();
        cfg.kernel_l = KernelSpec::new(1e-2).unwrap();
        let far = reweighting_from_losses(&ds, &[1.0, 1.0], &Points::from_scalars(&[0.2, 20.0]), &cfg);
        assert!(matches!(far, Err(Error::DegenerateNeighborhood { query_index: 1 })));
    }

    #[test]
    fn kernel_m_must_not_be_narrower_than_kernel_l() {
        let mut cfg = WeightingConfig::uniform_variance(1.0).unwrap();
        cfg.kernel_m = KernelSpec::new(0.5).unwrap();
        assert!(cfg.validate().is_err());
        cfg.kernel_m = KernelSpec::new(1.0).unwrap();
        cfg.sharpness = -1.0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn baselines() {
        let ds = line(&[0.0, 1.0, 3.0], 1.0);
        let zero = FnSurrogate::new(1, 1, |_x: &[f64], out: &mut [f64]| out[0] = 0.0);
        close(
            &baseline_weights(&ds, &zero, BaselineScheme::InverseDensity).unwrap(),
            &[0.8982875116658525, 0.8342234989251088, 1.2674889894090384],
            1e-12,
        );
        assert_eq!(baseline_weights(&ds, &zero, BaselineScheme::LossProportional).unwrap(), vec![1.0; 3]);
        let spike = FnSurrogate::new(1, 1, |x: &[f64], out: &mut [f64]| out[0] = if x[0] == 1.0 { 2.0 } else { 0.0 });
        assert_eq!(baseline_weights(&ds, &spike, BaselineScheme::LossProportional).unwrap(), vec![0.0, 3.0, 0.0]);
    }
}
