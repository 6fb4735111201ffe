//! Train with patch-blur noise at several probabilities.

use racemix::harness::{run_noise_study, ExperimentConfig, RowKind};

fn main() -> racemix::Result<()> {
    let mut cfg = ExperimentConfig::default();
    cfg.trials = 1;
    cfg.output_dir = std::env::temp_dir().join("racemix-example-noise");
    let table = run_noise_study(&cfg)?;
    for r in table.of_kind(RowKind::Mean) {
        println!(
            "p = {:<4} acc {:.2} {:.2} {:.2} {:.2}  variance {:.3}",
            r.p.unwrap_or(0.0),
            r.acc[0],
            r.acc[1],
            r.acc[2],
            r.acc[3],
            r.variance
        );
    }
    Ok(())
}
