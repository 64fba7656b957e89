//! Command-line front end. Exit codes: 0 success, 1 runtime or IO failure,
//! 2 usage or configuration error.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::datagen::Dataset;
use crate::error::{Error, Result};
use crate::experiment::{
    ablate, dataset_file_name, evaluate, generate_dataset, quantile, run_stem, train_arm, write_ablation_rows,
    write_eval_rows, ExperimentConfig, ExperimentKind, Method, Sweep,
};
use crate::models::{read_model_file, write_model_file};
use crate::trainer::write_training_log;

#[derive(Parser, Debug)]
#[command(name = "tssl", version, about = "Task-specific surrogate training experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum PresetArg {
    Lorenz,
    Tracking,
    Mep,
    Example2,
}

impl From<PresetArg> for ExperimentKind {
    fn from(p: PresetArg) -> Self {
        match p {
            PresetArg::Lorenz => ExperimentKind::Lorenz,
            PresetArg::Tracking => ExperimentKind::Tracking,
            PresetArg::Mep => ExperimentKind::Mep,
            PresetArg::Example2 => ExperimentKind::Example2,
        }
    }
}

#[derive(Args, Debug, Clone)]
pub struct Shared {
    /// TOML config file, merged over the preset.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub preset: Option<PresetArg>,
    /// Run a single seed instead of the configured list.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Worker threads; defaults to TSSL_THREADS or all cores.
    #[arg(long)]
    pub threads: Option<usize>,
    /// Override one config value, e.g. `--set data.alpha=0.5`.
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Print the effective configuration and exit.
    #[arg(long)]
    pub print_config: bool,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum MethodArg {
    Mse,
    Ts,
    M1,
    M2,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum SweepArg {
    Alpha,
    Width,
    Reweighting,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Sample and label training data for every seed.
    GenData {
        #[command(flatten)]
        shared: Shared,
    },
    /// Train one arm on previously generated data.
    Train {
        #[command(flatten)]
        shared: Shared,
        #[arg(long, value_enum)]
        method: MethodArg,
    },
    /// Evaluate a model file against the ground truth.
    Eval {
        #[command(flatten)]
        shared: Shared,
        #[arg(long)]
        model: PathBuf,
    },
    /// Sweep one setting over all seeds.
    Ablate {
        #[command(flatten)]
        shared: Shared,
        #[arg(long, value_enum)]
        sweep: SweepArg,
        /// Comma-separated sweep values; defaults to the standard grid.
        #[arg(long, value_delimiter = ',')]
        values: Vec<f64>,
    },
    /// Summarize every ablation CSV in the output directory.
    Report {
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
}

fn load_config(shared: &Shared) -> Result<ExperimentConfig> {
    let text = match &shared.config {
        Some(p) => Some(fs::read_to_string(p).map_err(|e| Error::config(format!("{}: {e}", p.display())))?),
        None => None,
    };
    let mut cfg = ExperimentConfig::load(shared.preset.map(Into::into), text.as_deref(), &shared.overrides)?;
    if let Some(s) = shared.seed {
        cfg.experiment.seeds = vec![s];
    }
    Ok(cfg)
}

fn init_threads(requested: Option<usize>) {
    let n = requested.or_else(|| std::env::var("TSSL_THREADS").ok().and_then(|v| v.parse().ok()));
    if let Some(n) = n {
        // a pool may already exist when called twice in one process
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
}

fn create_file(path: &Path) -> Result<fs::File> {
    Ok(fs::File::create(path)?)
}

fn read_dataset(out: &Path, kind: ExperimentKind, seed: u64) -> Result<Dataset> {
    Dataset::read_file(out.join(dataset_file_name(kind, seed)))
}

/// Prints the config and returns true when `--print-config` was given.
fn maybe_print(shared: &Shared, cfg: &ExperimentConfig, stdout: &mut dyn Write) -> Result<bool> {
    if shared.print_config {
        write!(stdout, "{}", cfg.to_text())?;
    }
    Ok(shared.print_config)
}

fn run_command(cmd: Command, stdout: &mut dyn Write) -> Result<()> {
    match cmd {
        Command::GenData { shared } => {
            let cfg = load_config(&shared)?;
            if maybe_print(&shared, &cfg, stdout)? {
                return Ok(());
            }
            init_threads(shared.threads);
            fs::create_dir_all(&shared.out)?;
            for &seed in &cfg.experiment.seeds {
                let ds = generate_dataset(&cfg, seed)?;
                let path = shared.out.join(dataset_file_name(cfg.kind(), seed));
                ds.write_file(&path)?;
                writeln!(stdout, "{}", path.display())?;
            }
        }
        Command::Train { shared, method } => {
            let cfg = load_config(&shared)?;
            if maybe_print(&shared, &cfg, stdout)? {
                return Ok(());
            }
            init_threads(shared.threads);
            let method = match method {
                MethodArg::Mse => Method::Mse,
                MethodArg::Ts => Method::TaskSpecific,
                MethodArg::M1 => Method::InverseDensity,
                MethodArg::M2 => Method::LossProportional,
            };
            for &seed in &cfg.experiment.seeds {
                let ds = read_dataset(&shared.out, cfg.kind(), seed)?;
                let arm = train_arm(&cfg, &ds, method, seed)?;
                let stem = run_stem(cfg.kind(), method, seed);
                write_model_file(shared.out.join(format!("{stem}.tssm")), &arm.model)?;
                write_training_log(&arm.records, create_file(&shared.out.join(format!("{stem}_log.csv")))?)?;
                let mut rows = Vec::new();
                if method != Method::Mse {
                    rows.push(evaluate(&cfg, &ds, &arm.mse_model, Method::Mse.as_str(), seed)?);
                }
                rows.push(evaluate(&cfg, &ds, &arm.model, method.as_str(), seed)?);
                write_eval_rows(&rows, create_file(&shared.out.join(format!("{stem}_eval.csv")))?)?;
                write_eval_rows(&rows, &mut *stdout)?;
            }
        }
        Command::Eval { shared, model } => {
            let cfg = load_config(&shared)?;
            if maybe_print(&shared, &cfg, stdout)? {
                return Ok(());
            }
            init_threads(shared.threads);
            let m = read_model_file(&model)?;
            let label = model.file_stem().and_then(|s| s.to_str()).unwrap_or("model").to_string();
            let mut rows = Vec::new();
            for &seed in &cfg.experiment.seeds {
                let ds = read_dataset(&shared.out, cfg.kind(), seed)?;
                rows.push(evaluate(&cfg, &ds, &m, &label, seed)?);
            }
            write_eval_rows(&rows, &mut *stdout)?;
        }
        Command::Ablate { shared, sweep, values } => {
            let cfg = load_config(&shared)?;
            if maybe_print(&shared, &cfg, stdout)? {
                return Ok(());
            }
            init_threads(shared.threads);
            let sweep = match sweep {
                SweepArg::Alpha => Sweep::Alpha,
                SweepArg::Width => Sweep::Width,
                SweepArg::Reweighting => Sweep::Reweighting,
            };
            let values = if values.is_empty() { sweep.values() } else { values };
            let rows = ablate(&cfg, sweep, &values)?;
            fs::create_dir_all(&shared.out)?;
            let path = shared.out.join(format!("ablate_{}_{}.csv", cfg.kind().as_str(), sweep.as_str()));
            write_ablation_rows(&rows, create_file(&path)?)?;
            writeln!(stdout, "{}", path.display())?;
        }
        Command::Report { out } => {
            let report = build_report(&out)?;
            fs::write(out.join("report.csv"), &report)?;
            write!(stdout, "{report}")?;
        }
    }
    Ok(())
}

pub const REPORT_HEADER: &str = "experiment,sweep,value,method,count,median,q25,q75,min,max";

/// Per-(experiment, sweep, value, method) quantiles of `J_A` across seeds,
/// over every `ablate_*.csv` in `out`.
pub fn build_report(out: &Path) -> Result<String> {
    let mut files: Vec<PathBuf> = fs::read_dir(out)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            let name = p.file_name().and_then(|n| n.to_str()).unwrap_or("");
            name.starts_with("ablate_") && name.ends_with(".csv")
        })
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::invalid(format!("no ablation CSVs in {}", out.display())));
    }
    let mut groups: BTreeMap<(String, String, String, String), Vec<f64>> = BTreeMap::new();
    for f in &files {
        let mut rdr = csv::Reader::from_path(f).map_err(|e| Error::format(e.to_string()))?;
        for rec in rdr.records() {
            let rec = rec.map_err(|e| Error::format(e.to_string()))?;
            let get = |i: usize| rec.get(i).unwrap_or("").to_string();
            let ja: f64 = get(5).parse().map_err(|_| Error::format(format!("bad J_A in {}", f.display())))?;
            groups.entry((get(0), get(1), get(2), get(4))).or_default().push(ja);
        }
    }
    let mut s = format!("{REPORT_HEADER}\n");
    for ((exp, sweep, value, method), v) in groups {
        let (lo, hi) = v.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
        s.push_str(&format!(
            "{exp},{sweep},{value},{method},{},{},{},{},{lo},{hi}\n",
            v.len(),
            quantile(&v, 0.5),
            quantile(&v, 0.25),
            quantile(&v, 0.75)
        ));
    }
    Ok(s)
}

/// Parses `args` (program name first) and runs; returns the exit code.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            if e.use_stderr() {
                let _ = write!(stderr, "{e}");
                return 2;
            }
            let _ = write!(stdout, "{e}");
            return 0;
        }
    };
    match run_command(cli.command, stdout) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            match e {
                Error::Config(_) => 2,
                _ => 1,
            }
        }
    }
}
