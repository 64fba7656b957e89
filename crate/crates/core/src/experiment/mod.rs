//! Experiment harness: per-seed setups, training arms, evaluation rows and
//! ablation sweeps over the reference problems.

mod config;

pub use config::{preset, ExperimentConfig, ExperimentKind};

use std::io::Write;
use std::time::Instant;

use rayon::prelude::*;

use crate::datagen::{build_dataset, Dataset, Labeler, SamplingSpec};
use crate::error::{Error, Result};
use crate::kernels::calibrate_error_variance;
use crate::models::{fit_polynomial, Model, ModelKind, Surrogate};
use crate::optim::{run_reweighted_training, OptimizerState};
use crate::rng::SeedStream;
use crate::tasks::{GroundTruth, RolloutConfig, RolloutTask, StringMethodTask, Task, TrackingTask, TrajectoryMetric};
use crate::trainer::{train_mse, train_task_specific, with_matching_densities, MseConfig, TrainRecord};
use crate::weighting::{baseline_weights, reweighting_coefficients, BaselineScheme};

/// Substream used to draw per-seed rollout starts.
const START_STREAM: u64 = 0x5747;

/// Training arm.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    Mse,
    TaskSpecific,
    InverseDensity,
    LossProportional,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Mse => "mse",
            Method::TaskSpecific => "ts",
            Method::InverseDensity => "m1",
            Method::LossProportional => "m2",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "mse" => Method::Mse,
            "ts" => Method::TaskSpecific,
            "m1" => Method::InverseDensity,
            "m2" => Method::LossProportional,
            other => return Err(Error::config(format!("unknown method `{other}`"))),
        })
    }
}

/// Everything that depends on the seed but not on training.
pub struct Setup {
    pub sampling: SamplingSpec,
    pub labeler: Labeler,
    pub task: Box<dyn Task>,
    pub truth: Box<dyn Surrogate>,
}

impl Setup {
    pub fn ground_truth(&self) -> Result<GroundTruth<'_>> {
        GroundTruth::new(self.task.as_ref(), self.truth.as_ref())
    }
}

fn lorenz_start(seed: u64) -> Vec<f64> {
    let mut r = SeedStream::substream(seed, START_STREAM);
    vec![r.uniform_in(-12.5, 12.5), r.uniform_in(-12.5, 12.5), r.uniform_in(12.5, 37.5)]
}

/// Mixes `base` with noise around the truth's support when `alpha > 0`.
fn with_near_component(cfg: &ExperimentConfig, base: SamplingSpec, task: &dyn Task, truth: &dyn Surrogate) -> Result<SamplingSpec> {
    if cfg.data.alpha == 0.0 {
        return Ok(base);
    }
    let (support, _) = task.run(truth)?;
    let near = SamplingSpec::KernelPerturbedSupport { nodes: support.points, variance: cfg.data.near_variance };
    Ok(SamplingSpec::mixture(cfg.data.alpha, base, near))
}

pub fn setup(cfg: &ExperimentConfig, seed: u64) -> Result<Setup> {
    let t = &cfg.task;
    let (labeler, task, base): (Labeler, Box<dyn Task>, SamplingSpec) = match cfg.kind() {
        ExperimentKind::Lorenz => {
            let x0 = if t.x0.is_empty() { lorenz_start(seed) } else { t.x0.clone() };
            let rollout = RolloutConfig {
                x0,
                steps: t.steps,
                euler_step: (t.euler_step > 0.0).then_some(t.euler_step),
                metric: TrajectoryMetric::MeanStepNorm,
            };
            (
                Labeler::LorenzFlowMap { tau: cfg.data.flow_tau, substeps: cfg.data.flow_substeps },
                Box::new(RolloutTask(rollout)),
                SamplingSpec::uniform(vec![-25.0, -25.0, 0.0], vec![25.0, 25.0, 50.0]),
            )
        }
        ExperimentKind::Tracking => {
            let two_pi = 2.0 * std::f64::consts::PI;
            let uniform = SamplingSpec::Uniform {
                lower: vec![0.0, -5.0, -11.0],
                upper: vec![two_pi, 5.0, 11.0],
                clip: Some((vec![f64::NEG_INFINITY, f64::NEG_INFINITY, -10.0], vec![f64::INFINITY, f64::INFINITY, 10.0])),
            };
            (Labeler::PendulumAccel, Box::new(TrackingTask(cfg.tracking_config())), uniform)
        }
        ExperimentKind::Mep => (
            Labeler::NegEnergyGrad,
            Box::new(StringMethodTask(cfg.mep_config())),
            SamplingSpec::langevin(cfg.data.temperature),
        ),
        ExperimentKind::Example2 => {
            let x0 = if t.x0.is_empty() { vec![1.0] } else { t.x0.clone() };
            let rollout = RolloutConfig {
                x0,
                steps: t.steps,
                euler_step: Some(t.euler_step),
                metric: TrajectoryMetric::Euclidean,
            };
            (
                Labeler::NegAbs { slope: cfg.data.slope },
                Box::new(RolloutTask(rollout)),
                SamplingSpec::uniform(vec![-1.0], vec![1.0]),
            )
        }
    };
    let truth = labeler.truth();
    let sampling = with_near_component(cfg, base, task.as_ref(), truth.as_ref())?;
    Ok(Setup { sampling, labeler, task, truth })
}

/// Training data for one seed, with densities under the configured kernel.
pub fn generate_dataset(cfg: &ExperimentConfig, seed: u64) -> Result<Dataset> {
    let s = setup(cfg, seed)?;
    let ds = build_dataset(&s.sampling, cfg.data.n, s.labeler, seed)?;
    ds.with_densities(cfg.weighting_config()?.kernel_rho)
}

/// Dataset file name inside an output directory.
pub fn dataset_file_name(kind: ExperimentKind, seed: u64) -> String {
    format!("{}_seed{seed}.tssd", kind.as_str())
}

/// Stem for per-run artifacts.
pub fn run_stem(kind: ExperimentKind, method: Method, seed: u64) -> String {
    format!("{}_{}_seed{seed}", kind.as_str(), method.as_str())
}

/// Weighted-MSE training from `init`: Adam until the loss plateaus, or an
/// exact weighted fit for polynomials.
pub fn train_weighted(init: &Model, dataset: &Dataset, weights: &[f64], cfg: &MseConfig, seed: u64) -> Result<Model> {
    if init.spec().kind == ModelKind::Polynomial {
        return fit_polynomial(*init.spec(), dataset.inputs(), dataset.labels(), weights);
    }
    let mut model = init.clone();
    let mut opt = OptimizerState::adam(cfg.learning_rate, 1, cfg.batch_size);
    let mut history = Vec::new();
    for epoch in 0..cfg.max_epochs {
        let s = SeedStream::substream(seed, 1 + epoch as u64).next_u64();
        let (next, next_opt, loss) = run_reweighted_training(&model, dataset, weights, &opt, s)?;
        model = next;
        opt = next_opt;
        history.push(loss);
        if history.len() > cfg.patience {
            let old = history[history.len() - 1 - cfg.patience];
            if old - loss <= cfg.tolerance * old.abs() {
                break;
            }
        }
    }
    Ok(model)
}

/// Result of one training arm.
pub struct TrainedArm {
    pub method: Method,
    pub model: Model,
    /// MSE starting point of the reweighted arms.
    pub mse_model: Model,
    /// Iterative log (task-specific arm only).
    pub records: Vec<TrainRecord>,
    pub seconds: f64,
}

/// Runs `method` on `dataset`. Every arm starts from the same MSE model.
pub fn train_arm(cfg: &ExperimentConfig, dataset: &Dataset, method: Method, seed: u64) -> Result<TrainedArm> {
    let clock = Instant::now();
    let spec = cfg.model_spec()?;
    let mse = train_mse(spec, dataset, &cfg.mse_config(), seed)?;
    let (model, records) = match method {
        Method::Mse => (mse.clone(), Vec::new()),
        Method::TaskSpecific => {
            let s = setup(cfg, seed)?;
            let gt = s.ground_truth()?;
            let mut ts = cfg.task_specific_config()?;
            if cfg.weighting.calibrate_l {
                let data = with_matching_densities(dataset, &ts.weighting.kernel_rho)?;
                let (support, _) = s.task.run(&mse)?;
                let picked = calibrate_error_variance(
                    &data,
                    &mse,
                    &support.points,
                    &cfg.weighting.calibrate_candidates,
                    cfg.weighting.calibrate_neighbors.min(dataset.len()),
                )?;
                ts.weighting.kernel_l.variance = picked.variance;
                ts.weighting.kernel_m.variance = ts.weighting.kernel_m.variance.max(picked.variance);
            }
            let out = train_task_specific(&mse, dataset, s.task.as_ref(), &ts, seed, Some(&gt))?;
            (out.best.model, out.records)
        }
        Method::InverseDensity | Method::LossProportional => {
            let scheme =
                if method == Method::InverseDensity { BaselineScheme::InverseDensity } else { BaselineScheme::LossProportional };
            let data = with_matching_densities(dataset, &cfg.weighting_config()?.kernel_rho)?;
            let w = baseline_weights(&data, &mse, scheme)?;
            (train_weighted(&mse, &data, &w, &cfg.mse_config(), seed)?, Vec::new())
        }
    };
    Ok(TrainedArm { method, model, mse_model: mse, records, seconds: clock.elapsed().as_secs_f64() })
}

/// One evaluation of a model against the ground truth.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalRow {
    pub experiment: ExperimentKind,
    pub method: String,
    pub seed: u64,
    pub output_error: f64,
    pub support_error: f64,
    /// Data-estimated support error; infinite when the support left the data.
    pub estimated_support_error: f64,
    pub support_len: usize,
}

pub const EVAL_HEADER: &str = "experiment,method,seed,J_A,R_S,R_SN,J";

impl EvalRow {
    pub fn csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.experiment.as_str(),
            self.method,
            self.seed,
            self.output_error,
            self.support_error,
            self.estimated_support_error,
            self.support_len
        )
    }
}

pub fn evaluate(cfg: &ExperimentConfig, dataset: &Dataset, model: &dyn Surrogate, label: &str, seed: u64) -> Result<EvalRow> {
    let s = setup(cfg, seed)?;
    let gt = s.ground_truth()?;
    let ev = gt.evaluate(model)?;
    let weighting = cfg.weighting_config()?;
    let data = with_matching_densities(dataset, &weighting.kernel_rho)?;
    let rsn = match reweighting_coefficients(&data, model, &ev.support.points, &weighting) {
        Ok(state) => state.metric_rsn,
        Err(Error::TotallyLostSupport { .. } | Error::DegenerateNeighborhood { .. }) => f64::INFINITY,
        Err(e) => return Err(e),
    };
    Ok(EvalRow {
        experiment: cfg.kind(),
        method: label.to_string(),
        seed,
        output_error: ev.output_error,
        support_error: ev.support_error,
        estimated_support_error: rsn,
        support_len: ev.support.len(),
    })
}

pub fn write_eval_rows(rows: &[EvalRow], mut w: impl Write) -> Result<()> {
    writeln!(w, "{EVAL_HEADER}")?;
    for r in rows {
        writeln!(w, "{}", r.csv())?;
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Sweep {
    Alpha,
    Width,
    Reweighting,
}

impl Sweep {
    pub fn as_str(self) -> &'static str {
        match self {
            Sweep::Alpha => "alpha",
            Sweep::Width => "width",
            Sweep::Reweighting => "reweighting",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "alpha" => Sweep::Alpha,
            "width" => Sweep::Width,
            "reweighting" => Sweep::Reweighting,
            other => return Err(Error::config(format!("unknown sweep `{other}`"))),
        })
    }

    /// Default grid of values.
    pub fn values(self) -> Vec<f64> {
        match self {
            Sweep::Alpha => vec![0.0, 0.25, 0.5, 0.75, 0.99],
            Sweep::Width => vec![8.0, 12.0, 16.0, 24.0, 32.0],
            Sweep::Reweighting => vec![0.0],
        }
    }

    fn methods(self) -> &'static [Method] {
        match self {
            Sweep::Alpha | Sweep::Width => &[Method::Mse, Method::TaskSpecific],
            Sweep::Reweighting => {
                &[Method::Mse, Method::TaskSpecific, Method::InverseDensity, Method::LossProportional]
            }
        }
    }
}

/// One row of an ablation report. `method == "ratio"` rows hold
/// `J_A(ts) / J_A(mse)` in `output_error`.
#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub experiment: ExperimentKind,
    pub sweep: Sweep,
    pub value: f64,
    pub seed: u64,
    pub method: String,
    pub output_error: f64,
    pub support_error: Option<f64>,
    pub estimated_support_error: Option<f64>,
    pub iterations: Option<usize>,
    pub seconds: Option<f64>,
}

pub const ABLATION_HEADER: &str = "experiment,sweep,value,seed,method,J_A,R_S,R_SN,iters,seconds";

fn cell<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl AblationRow {
    pub fn csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{}",
            self.experiment.as_str(),
            self.sweep.as_str(),
            self.value,
            self.seed,
            self.method,
            self.output_error,
            cell(self.support_error),
            cell(self.estimated_support_error),
            cell(self.iterations),
            cell(self.seconds)
        )
    }
}

fn method_rank(m: &str) -> usize {
    ["mse", "ts", "m1", "m2", "ratio"].iter().position(|x| *x == m).unwrap_or(usize::MAX)
}

fn run_cell(cfg: &ExperimentConfig, sweep: Sweep, value: f64, seed: u64) -> Result<Vec<AblationRow>> {
    let mut c = cfg.clone();
    match sweep {
        Sweep::Alpha => c.data.alpha = value,
        Sweep::Width => c.model.width = value as usize,
        Sweep::Reweighting => {}
    }
    c.validate()?;
    let dataset = generate_dataset(&c, seed)?;
    let mut rows = Vec::new();
    let mut by_method = Vec::new();
    for &m in sweep.methods() {
        let arm = train_arm(&c, &dataset, m, seed)?;
        let ev = evaluate(&c, &dataset, &arm.model, m.as_str(), seed)?;
        by_method.push((m, ev.output_error));
        rows.push(AblationRow {
            experiment: c.kind(),
            sweep,
            value,
            seed,
            method: m.as_str().into(),
            output_error: ev.output_error,
            support_error: Some(ev.support_error),
            estimated_support_error: Some(ev.estimated_support_error),
            iterations: Some(arm.records.len()),
            seconds: c.train.record_wallclock.then_some(arm.seconds),
        });
    }
    let ja = |m: Method| by_method.iter().find(|(k, _)| *k == m).map(|(_, v)| *v);
    if let (Some(mse), Some(ts)) = (ja(Method::Mse), ja(Method::TaskSpecific)) {
        rows.push(AblationRow {
            experiment: c.kind(),
            sweep,
            value,
            seed,
            method: "ratio".into(),
            output_error: ts / mse,
            support_error: None,
            estimated_support_error: None,
            iterations: None,
            seconds: None,
        });
    }
    Ok(rows)
}

/// Runs every (value, seed) cell in parallel; rows come back sorted.
pub fn ablate(cfg: &ExperimentConfig, sweep: Sweep, values: &[f64]) -> Result<Vec<AblationRow>> {
    cfg.validate()?;
    if values.is_empty() {
        return Err(Error::config("sweep has no values"));
    }
    let cells: Vec<(f64, u64)> =
        values.iter().flat_map(|&v| cfg.experiment.seeds.iter().map(move |&s| (v, s))).collect();
    let results: Vec<Result<Vec<AblationRow>>> =
        cells.par_iter().map(|&(v, s)| run_cell(cfg, sweep, v, s)).collect();
    let mut rows = Vec::new();
    for r in results {
        rows.extend(r?);
    }
    rows.sort_by(|a, b| {
        a.value
            .total_cmp(&b.value)
            .then(a.seed.cmp(&b.seed))
            .then(method_rank(&a.method).cmp(&method_rank(&b.method)))
    });
    Ok(rows)
}

pub fn write_ablation_rows(rows: &[AblationRow], mut w: impl Write) -> Result<()> {
    writeln!(w, "{ABLATION_HEADER}")?;
    for r in rows {
        writeln!(w, "{}", r.csv())?;
    }
    Ok(())
}

/// Median of a nonempty sample (mean of the middle pair for even sizes).
pub fn median(values: &[f64]) -> f64 {
    quantile(values, 0.5)
}

/// Linearly interpolated sample quantile.
pub fn quantile(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (pos - lo as f64) * (v[hi] - v[lo])
}
