//! One model per training race, each tested on all four races.

use racemix::harness::{format_grid, run_single_race, single_race_grid, ExperimentConfig};

fn main() -> racemix::Result<()> {
    let mut cfg = ExperimentConfig::default();
    cfg.trials = 2;
    cfg.output_dir = std::env::temp_dir().join("racemix-example-single");
    let table = run_single_race(&cfg)?;
    print!("{}", format_grid(&single_race_grid(&table, "arcface")?));
    Ok(())
}
