//! MSE pretraining and the iterative task-specific training loop.

use std::borrow::Cow;
use std::io::Write;
use std::time::Instant;

use crate::datagen::Dataset;
use crate::error::{Error, Result};
use crate::kernels::{estimate_density, KernelSpec};
use crate::models::{fit_polynomial, Model, ModelKind, ModelSpec};
use crate::optim::{
    controller_update, relative_l1_change, run_reweighted_training, Action, ControllerPolicy, OptimizerKind,
    OptimizerState,
};
use crate::points::Points;
use crate::rng::SeedStream;
use crate::tasks::{GroundTruth, Task};
use crate::weighting::{reweighting_coefficients, WeightingConfig};

/// Plain MSE training settings.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MseConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Stop when the loss improved by less than `tolerance` (relative) over this many epochs.
    pub patience: usize,
    pub tolerance: f64,
}

impl Default for MseConfig {
    fn default() -> Self {
        Self { learning_rate: 1e-3, batch_size: 256, max_epochs: 1000, patience: 20, tolerance: 1e-6 }
    }
}

/// Minimizes the unweighted MSE. Polynomials are solved exactly by least
/// squares; other kinds start from a Glorot initialization and run Adam.
pub fn train_mse(spec: ModelSpec, dataset: &Dataset, cfg: &MseConfig, seed: u64) -> Result<Model> {
    if dataset.is_empty() {
        return Err(Error::invalid("cannot train on an empty dataset"));
    }
    let ones = vec![1.0; dataset.len()];
    if spec.kind == ModelKind::Polynomial {
        return fit_polynomial(spec, dataset.inputs(), dataset.labels(), &ones);
    }
    let init = Model::init(spec, seed)?;
    train_mse_from(init, dataset, cfg, seed)
}

/// [`train_mse`] from given parameters.
pub fn train_mse_from(init: Model, dataset: &Dataset, cfg: &MseConfig, seed: u64) -> Result<Model> {
    let ones = vec![1.0; dataset.len()];
    let mut model = init;
    let mut opt = OptimizerState::adam(cfg.learning_rate, 1, cfg.batch_size);
    let mut history: Vec<f64> = Vec::new();
    for epoch in 0..cfg.max_epochs {
        let (next, next_opt, loss) =
            run_reweighted_training(&model, dataset, &ones, &opt, SeedStream::substream(seed, 1 + epoch as u64).next_u64())?;
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

/// When the iterative loop stops.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StoppingConfig {
    pub max_iterations: usize,
    /// Stop once the standard deviation of the last `window` support errors is below `std_tolerance`.
    pub window: usize,
    pub std_tolerance: f64,
    /// Stop after this many strict increases in a row.
    pub max_consecutive_increases: usize,
}

impl Default for StoppingConfig {
    fn default() -> Self {
        Self { max_iterations: 500, window: 10, std_tolerance: 1e-6, max_consecutive_increases: 20 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TaskSpecificConfig {
    pub weighting: WeightingConfig,
    pub policy: ControllerPolicy,
    pub stopping: StoppingConfig,
    /// Polynomials: replace the gradient pass by an exact weighted least-squares fit.
    pub exact_polynomial_fit: bool,
    /// Fill the `seconds` log column (makes logs run-dependent).
    pub record_wallclock: bool,
}

impl TaskSpecificConfig {
    pub fn new(weighting: WeightingConfig) -> Self {
        Self {
            weighting,
            policy: ControllerPolicy::default(),
            stopping: StoppingConfig::default(),
            exact_polynomial_fit: true,
            record_wallclock: false,
        }
    }
}

/// One row of the training log.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainRecord {
    pub iteration: usize,
    pub risk_rn: f64,
    pub metric_rsn: f64,
    pub true_support_error: Option<f64>,
    pub true_output_error: Option<f64>,
    pub optimizer: OptimizerKind,
    pub learning_rate: f64,
    pub epochs: usize,
    pub support_len: usize,
    pub seconds: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    pub metric_rsn: f64,
    pub iteration: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopReason {
    Converged,
    Diverging,
    MaxIterations,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub best: Checkpoint,
    pub records: Vec<TrainRecord>,
    pub stop: StopReason,
}

fn is_lost_support(e: &Error) -> bool {
    matches!(
        e,
        Error::TotallyLostSupport { .. } | Error::DegenerateNeighborhood { .. } | Error::DivergedRollout { .. }
    )
}

fn std_dev(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0)).sqrt()
}

/// Dataset with densities computed by `kernel`, reusing stored ones if they match.
pub fn with_matching_densities<'a>(dataset: &'a Dataset, kernel: &KernelSpec) -> Result<Cow<'a, Dataset>> {
    match dataset.density_kernel() {
        Some(k) if k == kernel && dataset.densities().is_some() => Ok(Cow::Borrowed(dataset)),
        _ => Ok(Cow::Owned(dataset.clone().with_densities(*kernel)?)),
    }
}

/// The reweight-and-retrain loop.
///
/// Every iteration runs the task with the current model, recomputes the
/// sample coefficients on its support, adapts the optimizer, and trains one
/// pass on the reweighted loss. The model with the smallest estimated support
/// error is returned. A model whose support leaves the data is an error at
/// iteration 0 and a rollback afterwards.
pub fn train_task_specific(
    init: &Model,
    dataset: &Dataset,
    task: &dyn Task,
    cfg: &TaskSpecificConfig,
    seed: u64,
    oracle: Option<&GroundTruth<'_>>,
) -> Result<TrainOutcome> {
    cfg.weighting.validate()?;
    cfg.policy.validate()?;
    if cfg.stopping.max_iterations == 0 || cfg.stopping.window < 2 {
        return Err(Error::invalid("need max_iterations >= 1 and a stopping window of at least 2"));
    }
    if task.input_dim() != dataset.input_dim() {
        return Err(Error::DimensionMismatch { expected: dataset.input_dim(), got: task.input_dim() });
    }
    let data = with_matching_densities(dataset, &cfg.weighting.kernel_rho)?;
    let data = data.as_ref();
    let exact = cfg.exact_polynomial_fit && init.spec().kind == ModelKind::Polynomial;
    let clock = Instant::now();

    let mut model = init.clone();
    let mut opt = OptimizerState::initial(&cfg.policy);
    let mut best: Option<Checkpoint> = None;
    let mut records: Vec<TrainRecord> = Vec::new();
    let mut rsn_history: Vec<f64> = Vec::new();
    let mut previous: Option<(Model, f64, Vec<f64>)> = None;
    let mut increases = 0usize;
    let mut stop = StopReason::MaxIterations;

    for iteration in 0..cfg.stopping.max_iterations {
        let run = task
            .run(&model)
            .and_then(|(support, output)| {
                let state = reweighting_coefficients(data, &model, &support.points, &cfg.weighting)?;
                Ok((support, output, state))
            });
        let (support, output, state) = match run {
            Ok(v) => v,
            Err(e) if is_lost_support(&e) && iteration > 0 => {
                let (prev_model, _, _) = previous.clone().expect("previous iteration exists");
                model = prev_model;
                opt = OptimizerState {
                    epochs_per_iteration: (opt.epochs_per_iteration / 2).max(cfg.policy.epochs_min),
                    ..OptimizerState::initial(&cfg.policy)
                };
                continue;
            }
            Err(e) => return Err(e),
        };

        let (true_rs, true_ja) = match oracle {
            Some(gt) => {
                let ev = gt.evaluate_run(&model, support.clone(), output)?;
                (Some(ev.support_error), Some(ev.output_error))
            }
            None => (None, None),
        };

        let rsn = state.metric_rsn;
        if best.as_ref().is_none_or(|b| rsn < b.metric_rsn) {
            best = Some(Checkpoint { model: model.clone(), metric_rsn: rsn, iteration });
        }

        let mut restore = false;
        if let Some((_, prev_rsn, prev_m)) = &previous {
            let dm = relative_l1_change(prev_m, &state.sample_coefficients);
            let (next, action) = controller_update(&cfg.policy, &opt, *prev_rsn, rsn, dm, true);
            opt = next;
            restore = action == Action::RestoreAndResetSGD;
            increases = if rsn > *prev_rsn { increases + 1 } else { 0 };
        }

        records.push(TrainRecord {
            iteration,
            risk_rn: state.risk_rn,
            metric_rsn: rsn,
            true_support_error: true_rs,
            true_output_error: true_ja,
            optimizer: opt.kind,
            learning_rate: opt.learning_rate,
            epochs: opt.epochs_per_iteration,
            support_len: support.len(),
            seconds: cfg.record_wallclock.then(|| clock.elapsed().as_secs_f64()),
        });
        rsn_history.push(rsn);

        let w = cfg.stopping.window;
        if rsn_history.len() >= w && std_dev(&rsn_history[rsn_history.len() - w..]) < cfg.stopping.std_tolerance {
            stop = StopReason::Converged;
            break;
        }
        if increases >= cfg.stopping.max_consecutive_increases {
            stop = StopReason::Diverging;
            break;
        }

        if restore {
            let (prev_model, prev_rsn, prev_m) = previous.clone().expect("restore needs a previous iteration");
            model = prev_model;
            previous = Some((model.clone(), prev_rsn, prev_m));
            continue;
        }
        previous = Some((model.clone(), rsn, state.sample_coefficients.clone()));

        model = if exact {
            fit_polynomial(*model.spec(), data.inputs(), data.labels(), &state.sample_coefficients)?
        } else {
            let pass_seed = SeedStream::substream(seed, iteration as u64).next_u64();
            let (next, next_opt, _) = run_reweighted_training(&model, data, &state.sample_coefficients, &opt, pass_seed)?;
            opt = next_opt;
            next
        };
    }
    let best = best.ok_or_else(|| Error::invalid("no iteration completed"))?;
    Ok(TrainOutcome { best, records, stop })
}

/// Header of the training-log CSV.
pub const TRAINING_LOG_HEADER: &str = "iter,R_N,R_SN,R_S_true,J_A_true,opt,lr,epochs,J,seconds";

fn opt_cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_training_log(records: &[TrainRecord], mut w: impl Write) -> Result<()> {
    writeln!(w, "{TRAINING_LOG_HEADER}")?;
    for r in records {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{}",
            r.iteration,
            r.risk_rn,
            r.metric_rsn,
            opt_cell(r.true_support_error),
            opt_cell(r.true_output_error),
            r.optimizer.as_str(),
            r.learning_rate,
            r.epochs,
            r.support_len,
            opt_cell(r.seconds)
        )?;
    }
    Ok(())
}

/// Support densities under the training KDE with low-density warnings.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityDiagnostic {
    pub support_densities: Vec<f64>,
    /// Training-density quantile used as the warning threshold.
    pub threshold: f64,
    /// Indices of support points below the threshold.
    pub warnings: Vec<usize>,
}

/// Flags support points whose training density falls below the `quantile`
/// (lower empirical quantile) of the training points' own densities.
pub fn support_density_diagnostic(
    dataset: &Dataset,
    support: &Points,
    kernel_rho: &KernelSpec,
    quantile: f64,
) -> Result<DensityDiagnostic> {
    if !(0.0..=1.0).contains(&quantile) {
        return Err(Error::invalid("quantile must lie in [0, 1]"));
    }
    let data = with_matching_densities(dataset, kernel_rho)?;
    let mut own: Vec<f64> = data.require_densities()?.to_vec();
    own.sort_by(f64::total_cmp);
    let threshold = own[(quantile * (own.len() - 1) as f64).floor() as usize];
    let support_densities = estimate_density(dataset.inputs(), support, kernel_rho)?.values;
    let warnings = support_densities.iter().enumerate().filter(|(_, &d)| d < threshold).map(|(j, _)| j).collect();
    Ok(DensityDiagnostic { support_densities, threshold, warnings })
}
