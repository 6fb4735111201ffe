//! Compare analytic and central-difference gradients for every loss head.

use racemix::embednet::{check_gradients, EmbeddingModel, LossHead, Mlp};
use racemix::seeds;
use rand::Rng;
use rand_distr::StandardNormal;

fn main() -> racemix::Result<()> {
    for head in [
        LossHead::SoftmaxCe,
        LossHead::center_loss(),
        LossHead::sphereface(),
        LossHead::arcface(),
    ] {
        let mut rng = seeds::stream(1, &["example", head.name()]);
        let mut model = EmbeddingModel::init(Mlp::new(6, &[8], 5), head, 4, &mut rng);
        for w in model.params.iter_mut() {
            *w += 0.3 * rng.sample::<f64, _>(StandardNormal);
        }
        let xs: Vec<Vec<f64>> = (0..6)
            .map(|_| (0..6).map(|_| rng.sample(StandardNormal)).collect())
            .collect();
        let batch: Vec<(&[f64], usize)> = xs
            .iter()
            .enumerate()
            .map(|(i, x)| (x.as_slice(), i % 4))
            .collect();
        let g = check_gradients(&model, &batch, 1e-5, 1e-8)?;
        println!(
            "{:<10} max rel {:.2e}  max abs {:.2e}  ({} params, {} at ReLU kinks)",
            head.name(),
            g.max_relative,
            g.max_absolute,
            g.checked,
            g.kinked
        );
    }
    Ok(())
}
