//! Experiment configuration: bracketed sections of `key = value` lines.
//!
//! A preset supplies every key; a user file and `section.key=value`
//! overrides are merged on top, and unknown keys are rejected.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{KernelSpec, Summation};
use crate::models::{ModelKind, ModelSpec};
use crate::optim::ControllerPolicy;
use crate::tasks::{MepConfig, TrackingConfig};
use crate::trainer::{MseConfig, StoppingConfig, TaskSpecificConfig};
use crate::weighting::WeightingConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExperimentKind {
    Lorenz,
    Tracking,
    Mep,
    Example2,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 4] =
        [ExperimentKind::Lorenz, ExperimentKind::Tracking, ExperimentKind::Mep, ExperimentKind::Example2];

    pub fn as_str(self) -> &'static str {
        match self {
            ExperimentKind::Lorenz => "lorenz",
            ExperimentKind::Tracking => "tracking",
            ExperimentKind::Mep => "mep",
            ExperimentKind::Example2 => "example2",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::config(format!("unknown experiment `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    pub name: ExperimentKind,
    pub seeds: Vec<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub n: usize,
    /// Fraction of samples drawn near the reference support.
    pub alpha: f64,
    /// Noise variance of the near-support component.
    pub near_variance: f64,
    /// Langevin temperature (mep).
    pub temperature: f64,
    /// Flow-map time step and RK4 substeps (lorenz).
    pub flow_tau: f64,
    pub flow_substeps: usize,
    /// Slope of the `-a|x|` target (example2).
    pub slope: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub kind: String,
    /// Hidden width, or degree for polynomials.
    pub width: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MseSection {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub tolerance: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightingSection {
    pub sharpness: f64,
    pub omega0: f64,
    pub var_rho: f64,
    pub var_nu: f64,
    pub var_l: f64,
    pub var_m: f64,
    pub truncation: f64,
    /// `grid` or `direct`.
    pub summation: String,
    /// Pick the local-error variance by leave-one-out after MSE training.
    pub calibrate_l: bool,
    pub calibrate_candidates: Vec<f64>,
    pub calibrate_neighbors: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerSection {
    pub sgd_lr: f64,
    pub adam_lr_ratio: f64,
    pub epochs_min: usize,
    pub epochs_max: usize,
    pub epoch_growth: f64,
    pub m_change_threshold: f64,
    pub batch_size: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StoppingSection {
    pub max_iterations: usize,
    pub window: usize,
    pub std_tolerance: f64,
    pub max_increases: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub exact_polynomial_fit: bool,
    pub record_wallclock: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSection {
    /// Rollout length.
    pub steps: usize,
    /// Rollout start; empty draws one per seed.
    pub x0: Vec<f64>,
    /// Explicit Euler step for vector-field rollouts; 0 means flow map.
    pub euler_step: f64,
    pub horizon: f64,
    pub intervals: usize,
    pub substeps: usize,
    pub restarts: usize,
    pub optimizer_iterations: usize,
    pub nodes: usize,
    pub string_step: f64,
    pub string_tolerance: f64,
    pub string_iterations: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentSection,
    pub data: DataSection,
    pub model: ModelSection,
    pub mse: MseSection,
    pub weighting: WeightingSection,
    pub controller: ControllerSection,
    pub stopping: StoppingSection,
    pub train: TrainSection,
    pub task: TaskSection,
}

fn base(name: ExperimentKind) -> ExperimentConfig {
    let tracking = TrackingConfig::default();
    let mep = MepConfig::default();
    let policy = ControllerPolicy::default();
    let stopping = StoppingConfig::default();
    let mse = MseConfig::default();
    ExperimentConfig {
        experiment: ExperimentSection { name, seeds: vec![0] },
        data: DataSection {
            n: 10_000,
            alpha: 0.0,
            near_variance: 1.0,
            temperature: 1.0,
            flow_tau: 0.01,
            flow_substeps: 10,
            slope: 1.0,
        },
        model: ModelSection { kind: "resnet".into(), width: 64 },
        mse: MseSection {
            learning_rate: mse.learning_rate,
            batch_size: mse.batch_size,
            max_epochs: mse.max_epochs,
            patience: mse.patience,
            tolerance: mse.tolerance,
        },
        weighting: WeightingSection {
            sharpness: 10.0,
            omega0: 0.5,
            var_rho: 1.0,
            var_nu: 2.0,
            var_l: 1.0,
            var_m: 1.0,
            truncation: KernelSpec::DEFAULT_TRUNCATION,
            summation: "grid".into(),
            calibrate_l: false,
            calibrate_candidates: vec![],
            calibrate_neighbors: 200,
        },
        controller: ControllerSection {
            sgd_lr: policy.sgd_lr,
            adam_lr_ratio: policy.adam_lr_ratio,
            epochs_min: policy.epochs_min,
            epochs_max: policy.epochs_max,
            epoch_growth: policy.epoch_growth,
            m_change_threshold: policy.m_change_threshold,
            batch_size: policy.batch_size,
        },
        stopping: StoppingSection {
            max_iterations: stopping.max_iterations,
            window: stopping.window,
            std_tolerance: stopping.std_tolerance,
            max_increases: stopping.max_consecutive_increases,
        },
        train: TrainSection { exact_polynomial_fit: true, record_wallclock: false },
        task: TaskSection {
            steps: 25,
            x0: vec![],
            euler_step: 0.0,
            horizon: tracking.horizon,
            intervals: tracking.intervals,
            substeps: tracking.substeps,
            restarts: tracking.restarts,
            optimizer_iterations: tracking.max_iterations,
            nodes: mep.nodes,
            string_step: mep.step,
            string_tolerance: mep.tolerance,
            string_iterations: mep.max_iterations,
        },
    }
}

/// Desk-scale defaults for each experiment.
pub fn preset(name: ExperimentKind) -> ExperimentConfig {
    let mut c = base(name);
    match name {
        ExperimentKind::Lorenz => {
            c.experiment.seeds = vec![0, 1, 2, 3, 4];
            c.mse.max_epochs = 200;
            c.stopping.max_iterations = 60;
        }
        ExperimentKind::Tracking => {
            c.experiment.seeds = vec![0, 1, 2];
            c.model = ModelSection { kind: "fnn".into(), width: 8 };
            c.data.near_variance = 0.0;
            c.weighting.var_rho = 0.01;
            c.weighting.var_nu = 0.01;
            c.weighting.var_l = 0.01;
            c.weighting.var_m = 0.05;
            c.mse.max_epochs = 300;
            c.stopping.max_iterations = 60;
        }
        ExperimentKind::Mep => {
            c.experiment.seeds = vec![0, 1, 2];
            c.model = ModelSection { kind: "energy".into(), width: 32 };
            c.data.alpha = 0.25;
            c.data.near_variance = 0.01;
            c.weighting.var_rho = 0.01;
            c.weighting.var_nu = 0.001;
            c.weighting.var_l = 0.001;
            c.weighting.var_m = 0.01;
            c.mse.max_epochs = 300;
            c.stopping.max_iterations = 60;
        }
        ExperimentKind::Example2 => {
            c.model = ModelSection { kind: "poly".into(), width: 1 };
            c.data.near_variance = 0.0;
            c.weighting.var_rho = 1e-3;
            c.weighting.var_nu = 1e-3;
            c.weighting.var_l = 1e-3;
            c.weighting.var_m = 1e-3;
            c.task.steps = 20;
            c.task.x0 = vec![1.0];
            c.task.euler_step = 0.1;
        }
    }
    c
}

fn merge(into: &mut toml::Table, from: toml::Table) {
    for (k, v) in from {
        match (into.get_mut(&k), v) {
            (Some(toml::Value::Table(a)), toml::Value::Table(b)) => merge(a, b),
            (_, v) => {
                into.insert(k, v);
            }
        }
    }
}

fn to_table(cfg: &ExperimentConfig) -> toml::Table {
    toml::Table::try_from(cfg).expect("config serializes to a table")
}

impl ExperimentConfig {
    /// Preset (from `preset` or the file's `experiment.name`), then the file,
    /// then `section.key=value` overrides.
    pub fn load(preset_name: Option<ExperimentKind>, file_text: Option<&str>, overrides: &[String]) -> Result<Self> {
        let user: toml::Table = match file_text {
            Some(t) => t.parse().map_err(|e: toml::de::Error| Error::config(e.to_string()))?,
            None => toml::Table::new(),
        };
        let mut over = toml::Table::new();
        for o in overrides {
            let (path, value) =
                o.split_once('=').ok_or_else(|| Error::config(format!("override `{o}` is not key=value")))?;
            let (section, key) = path
                .trim()
                .split_once('.')
                .ok_or_else(|| Error::config(format!("override key `{path}` is not section.key")))?;
            let parsed: toml::Table = format!("v = {}", value.trim())
                .parse()
                .or_else(|_| format!("v = {:?}", value.trim()).parse())
                .map_err(|e: toml::de::Error| Error::config(e.to_string()))?;
            let mut sec = toml::Table::new();
            sec.insert(key.to_string(), parsed["v"].clone());
            let mut t = toml::Table::new();
            t.insert(section.to_string(), toml::Value::Table(sec));
            merge(&mut over, t);
        }
        let named = |t: &toml::Table| {
            t.get("experiment").and_then(|e| e.get("name")).and_then(|n| n.as_str()).map(str::to_string)
        };
        let name = match (named(&over).or_else(|| named(&user)), preset_name) {
            (Some(n), _) => ExperimentKind::parse(&n)?,
            (None, Some(p)) => p,
            (None, None) => return Err(Error::config("no experiment named: give --preset or experiment.name")),
        };
        let mut table = to_table(&preset(name));
        merge(&mut table, user);
        merge(&mut table, over);
        let cfg: ExperimentConfig =
            toml::Value::Table(table).try_into().map_err(|e: toml::de::Error| Error::config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_text(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.experiment.seeds.is_empty() {
            return Err(Error::config("seed list is empty"));
        }
        if self.data.n == 0 {
            return Err(Error::config("data.n must be positive"));
        }
        if !(0.0..=1.0).contains(&self.data.alpha) {
            return Err(Error::config("data.alpha must lie in [0, 1]"));
        }
        if self.weighting.calibrate_l && self.weighting.calibrate_candidates.is_empty() {
            return Err(Error::config("calibrate_l needs calibrate_candidates"));
        }
        let wrap = |e: Error| Error::config(e.to_string());
        self.model_spec().map_err(wrap)?.validate().map_err(wrap)?;
        self.weighting_config().map_err(wrap)?.validate().map_err(wrap)?;
        self.policy().validate().map_err(wrap)?;
        Ok(())
    }

    pub fn kind(&self) -> ExperimentKind {
        self.experiment.name
    }

    pub fn model_spec(&self) -> Result<ModelSpec> {
        let kind = ModelKind::parse(&self.model.kind).map_err(|e| Error::config(e.to_string()))?;
        let w = self.model.width;
        let (din, dout) = match self.kind() {
            ExperimentKind::Lorenz | ExperimentKind::Mep => (3, 3),
            ExperimentKind::Tracking => (3, 1),
            ExperimentKind::Example2 => (1, 1),
        };
        Ok(match kind {
            ModelKind::ResNetFlowMap => ModelSpec::resnet_flow_map(din, w, self.data.flow_tau),
            ModelKind::ScalarFnn => ModelSpec::scalar_fnn(din, w),
            ModelKind::Polynomial => ModelSpec::polynomial(din, dout, w),
            ModelKind::EnergyGradient => ModelSpec::energy_gradient(w),
        })
    }

    pub fn weighting_config(&self) -> Result<WeightingConfig> {
        let w = &self.weighting;
        let k = |v: f64| KernelSpec::with_truncation(v, w.truncation);
        let mut cfg = WeightingConfig::new(k(w.var_rho)?, k(w.var_nu)?, k(w.var_l)?, k(w.var_m)?);
        cfg.sharpness = w.sharpness;
        cfg.omega0 = w.omega0;
        cfg.summation = match w.summation.as_str() {
            "grid" => Summation::Grid,
            "direct" => Summation::Direct,
            other => return Err(Error::config(format!("unknown summation `{other}`"))),
        };
        Ok(cfg)
    }

    pub fn policy(&self) -> ControllerPolicy {
        let c = &self.controller;
        ControllerPolicy {
            sgd_lr: c.sgd_lr,
            adam_lr_ratio: c.adam_lr_ratio,
            epochs_min: c.epochs_min,
            epochs_max: c.epochs_max,
            epoch_growth: c.epoch_growth,
            m_change_threshold: c.m_change_threshold,
            batch_size: c.batch_size,
        }
    }

    pub fn mse_config(&self) -> MseConfig {
        let m = &self.mse;
        MseConfig {
            learning_rate: m.learning_rate,
            batch_size: m.batch_size,
            max_epochs: m.max_epochs,
            patience: m.patience,
            tolerance: m.tolerance,
        }
    }

    pub fn task_specific_config(&self) -> Result<TaskSpecificConfig> {
        let s = &self.stopping;
        Ok(TaskSpecificConfig {
            weighting: self.weighting_config()?,
            policy: self.policy(),
            stopping: StoppingConfig {
                max_iterations: s.max_iterations,
                window: s.window,
                std_tolerance: s.std_tolerance,
                max_consecutive_increases: s.max_increases,
            },
            exact_polynomial_fit: self.train.exact_polynomial_fit,
            record_wallclock: self.train.record_wallclock,
        })
    }

    pub fn tracking_config(&self) -> TrackingConfig {
        let t = &self.task;
        TrackingConfig {
            horizon: t.horizon,
            intervals: t.intervals,
            substeps: t.substeps,
            restarts: t.restarts,
            max_iterations: t.optimizer_iterations,
            ..TrackingConfig::default()
        }
    }

    pub fn mep_config(&self) -> MepConfig {
        let t = &self.task;
        MepConfig {
            nodes: t.nodes,
            step: t.string_step,
            tolerance: t.string_tolerance,
            max_iterations: t.string_iterations,
            ..MepConfig::default()
        }
    }
}
