//! The 89-mix sweep at reduced cost (one trial, few epochs) with its SVG.

use racemix::harness::{run_distribution_sweep, ExperimentConfig, RowKind};

fn main() -> racemix::Result<()> {
    let mut cfg = ExperimentConfig::default();
    cfg.trials = 1;
    cfg.train.epochs = 4;
    cfg.output_dir = std::env::temp_dir().join("racemix-example-sweep");
    let table = run_distribution_sweep(&cfg)?;
    let best = table
        .of_kind(RowKind::Mean)
        .min_by(|a, b| a.variance.total_cmp(&b.variance))
        .expect("rows");
    println!(
        "lowest variance {:.3} at mix {} (counts {:?})",
        best.variance,
        best.mix.as_ref().expect("sweep rows carry mixes"),
        best.counts.0
    );
    println!("csv and svg in {}", cfg.output_path().display());
    Ok(())
}
