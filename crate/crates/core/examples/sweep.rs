//! Small alpha sweep on the affine toy, written as CSV to stdout.

use tssl::experiment::{ablate, preset, write_ablation_rows, ExperimentKind, Sweep};

fn main() -> tssl::Result<()> {
    let mut cfg = preset(ExperimentKind::Example2);
    cfg.experiment.seeds = vec![0, 1];
    cfg.data.n = 4000;
    // the near component is drawn around the true rollout states
    cfg.data.near_variance = 1e-3;
    let rows = ablate(&cfg, Sweep::Alpha, &[0.0, 0.5])?;
    write_ablation_rows(&rows, std::io::stdout())?;
    Ok(())
}
