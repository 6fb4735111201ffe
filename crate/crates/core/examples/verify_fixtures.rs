//! Recompute mean and variance for the bundled published tables.

use racemix::harness::verify_fixtures;

fn main() -> racemix::Result<()> {
    let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures");
    let report = verify_fixtures(dir)?;
    for r in report.failures() {
        println!(
            "{} {}: variance {:.4} vs published {:.2}",
            r.file, r.label, r.variance, r.published_variance
        );
    }
    println!(
        "{}/{} rows within +-{}",
        report.rows.len() - report.failures().len(),
        report.rows.len(),
        report.tolerance
    );
    Ok(())
}
