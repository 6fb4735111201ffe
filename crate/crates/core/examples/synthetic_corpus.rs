//! Generate a synthetic corpus, rank its subject pool and sample a manifest
//! for a skewed mix.

use racemix::corpus::{build_subject_pool, sample_manifest, synth_corpus, SynthConfig};
use racemix::{mix_to_counts, RaceCategory};

fn main() -> racemix::Result<()> {
    let cfg = SynthConfig::default();
    let corpus = synth_corpus(&cfg)?;
    println!(
        "{} images, feature dim {}",
        corpus.catalog.len(),
        corpus.features.dim()
    );

    let pool = build_subject_pool(&corpus.catalog, cfg.subjects_per_race, 6)?;
    let mix = "1/2,1/6,1/6,1/6".parse()?;
    let counts = mix_to_counts(&mix, 200)?;
    let manifest = sample_manifest(&pool, counts, 6, 42)?;
    manifest.validate()?;
    for race in RaceCategory::ALL {
        println!(
            "{:<10} {:>3} subjects {:>4} images",
            race.name(),
            manifest.subject_counts().get(race),
            manifest.image_counts()[race.index()]
        );
    }
    let out = std::env::temp_dir().join("racemix-example-manifest.jsonl");
    manifest.write(&out)?;
    println!("manifest -> {}", out.display());
    Ok(())
}
