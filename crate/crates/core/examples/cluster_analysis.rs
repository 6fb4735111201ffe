//! Compactness and k-NN race membership of test embeddings from a model
//! trained on the uniform mix.

use racemix::harness::{run_cluster, ExperimentConfig};
use racemix::RaceCategory;

fn main() -> racemix::Result<()> {
    let mut cfg = ExperimentConfig::default();
    cfg.output_dir = std::env::temp_dir().join("racemix-example-cluster");
    let report = run_cluster(&cfg)?;
    println!(
        "{:<10} {:>8}   membership (afr asi cau ind)",
        "race", "compact"
    );
    for race in RaceCategory::ALL {
        let row = report.membership[race.index()];
        println!(
            "{:<10} {:>8.4}   {:.2} {:.2} {:.2} {:.2}",
            race.name(),
            report.compactness[race.index()],
            row[0],
            row[1],
            row[2],
            row[3]
        );
    }
    println!("written to {}", cfg.output_path().display());
    Ok(())
}
