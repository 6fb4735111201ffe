//! Fold-selected threshold accuracy on hand-made scores, and the fairness
//! summary over four per-race accuracies.

use racemix::evalproto::{fairness_report, pair_accuracy, ReportMeta};

fn main() -> racemix::Result<()> {
    let scores = [0.91, 0.85, 0.40, 0.35, 0.77, 0.30, 0.62, 0.12, 0.88, 0.51];
    let labels = [
        true, true, false, false, true, false, true, false, true, false,
    ];
    let acc = pair_accuracy(&scores, &labels, 5)?;
    println!("accuracy {:.1}%", acc.accuracy);
    for (t, a) in acc.thresholds.iter().zip(&acc.fold_accuracy) {
        println!("  threshold {t:.2} -> fold accuracy {a:.2}");
    }

    let report = fairness_report([71.68, 71.70, 80.68, 75.25], ReportMeta::default());
    println!("mean {:.2}  variance {:.2}", report.mean, report.variance);
    Ok(())
}
