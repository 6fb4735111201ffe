//! Train an ArcFace embedding on a uniform manifest, report its training
//! accuracy and pair-matching accuracy per race, then checkpoint it.

use racemix::corpus::sample_manifest;
use racemix::embednet::{save_checkpoint, train_with, training_accuracy, LossHead};
use racemix::evalproto::{evaluate, ReportMeta};
use racemix::harness::{ExperimentConfig, ExperimentData};
use racemix::{mix_to_counts, RaceCategory, RaceMix};

fn main() -> racemix::Result<()> {
    let cfg = ExperimentConfig::default();
    let data = ExperimentData::prepare(&cfg)?;
    let counts = mix_to_counts(&RaceMix::uniform(), cfg.total_subjects)?;
    let manifest = sample_manifest(&data.pool, counts, cfg.images_per_subject, 1)?;

    let mut tc = cfg.train.clone();
    tc.head = LossHead::arcface();
    let (model, log) = train_with(&manifest, &data.store, &tc, None)?;
    println!(
        "loss {:.3} -> {:.3}, training accuracy {:.3}",
        log.rows[0].loss,
        log.final_loss().unwrap(),
        training_accuracy(&model, &manifest, &data.store)?
    );

    let report = evaluate(&model, &data.store, &data.pairs, ReportMeta::default())?;
    for race in RaceCategory::ALL {
        println!("{:<10} {:.2}", race.name(), report.accuracy(race));
    }
    println!("mean {:.2}  variance {:.3}", report.mean, report.variance);

    let path = std::env::temp_dir().join("racemix-example-model.bin");
    save_checkpoint(&model, tc.seed, &path)?;
    println!("checkpoint -> {}", path.display());
    Ok(())
}
