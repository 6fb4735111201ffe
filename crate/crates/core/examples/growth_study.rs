//! Add images to existing subjects or add new subjects of one race, and
//! report the accuracy change against the base set.

use racemix::harness::{run_growth_study, ExperimentConfig, RowKind};

fn main() -> racemix::Result<()> {
    let mut cfg = ExperimentConfig::default();
    cfg.trials = 2;
    cfg.output_dir = std::env::temp_dir().join("racemix-example-growth");
    let table = run_growth_study(&cfg)?;
    for r in table.of_kind(RowKind::Delta) {
        println!(
            "{:<26} {:+6.2} {:+6.2} {:+6.2} {:+6.2}",
            r.key, r.acc[0], r.acc[1], r.acc[2], r.acc[3]
        );
    }
    Ok(())
}
