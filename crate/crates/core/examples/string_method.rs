//! Minimum energy path of the double well with the true gradient.

use tssl::datagen::{energy, NegEnergyGradient};
use tssl::tasks::{string_method_run, MepConfig, TaskOutput};

fn main() -> tssl::Result<()> {
    let cfg = MepConfig::default();
    let (_, out) = string_method_run(&NegEnergyGradient, &cfg)?;
    let TaskOutput::Path { nodes } = out else { unreachable!() };
    let (k, e) = nodes
        .rows()
        .map(energy)
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .unwrap();
    println!("{} nodes, highest node {k} at {:?}", nodes.len(), nodes.row(k));
    println!("barrier from x_A: {:.4}", e - energy(&cfg.start));
    Ok(())
}
