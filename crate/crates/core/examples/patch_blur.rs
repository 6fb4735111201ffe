//! Blur one random cell of a face box in a generated image, write before and
//! after PNGs, and print the face-ratio curve summary of a synthetic catalog.

use racemix::augment::{inject_patch_blur, ratio_curve, NoiseConfig, PixelImage};
use racemix::corpus::{synth_corpus, FaceBox, SynthConfig};
use racemix::RaceCategory;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> racemix::Result<()> {
    let (w, h) = (96u32, 96u32);
    let data = (0..h)
        .flat_map(|y| {
            (0..w).flat_map(move |x| {
                [
                    ((x / 6 + y / 6) % 2) as f64,
                    x as f64 / 96.0,
                    y as f64 / 96.0,
                ]
            })
        })
        .collect();
    let img = PixelImage::new(w, h, 3, data)?;
    let face = FaceBox {
        x: 16,
        y: 16,
        width: 64,
        height: 64,
    };
    let cfg = NoiseConfig {
        p: 1.0,
        ..Default::default()
    };
    let (out, patch) = inject_patch_blur(&img, &face, &cfg, &mut ChaCha8Rng::seed_from_u64(3))?;
    println!("blurred patch: {patch:?}");

    let dir = std::env::temp_dir();
    img.write_png(dir.join("racemix-example-before.png"))?;
    out.write_png(dir.join("racemix-example-after.png"))?;
    println!("images -> {}", dir.display());

    let corpus = synth_corpus(&SynthConfig::default())?;
    let curve = ratio_curve(&corpus.catalog)?;
    for race in RaceCategory::ALL {
        let c = &curve[race.index()];
        println!(
            "{:<10} median face ratio {:.3}",
            race.name(),
            c[c.len() / 2]
        );
    }
    Ok(())
}
