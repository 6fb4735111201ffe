use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::corpus::{DatasetManifest, FeatureStore};
use crate::embednet::head::LossHead;
use crate::embednet::model::{Backbone, EmbeddingModel, Mlp};
use crate::error::{Error, Result};
use crate::seeds;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub seed: u64,
    pub head: LossHead,
    pub hidden: Vec<usize>,
    pub embed_dim: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 12,
            batch_size: 64,
            learning_rate: 0.05,
            momentum: 0.9,
            weight_decay: 5e-4,
            seed: 0,
            head: LossHead::arcface(),
            hidden: vec![64, 64],
            embed_dim: 32,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::InvalidArgument(
                "epochs and batch_size must be >= 1".into(),
            ));
        }
        if self.embed_dim == 0 || self.hidden.contains(&0) {
            return Err(Error::InvalidArgument("layer widths must be >= 1".into()));
        }
        if !(self.learning_rate >= 0.0) || !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidArgument(
                "learning_rate must be >= 0 and momentum in [0, 1)".into(),
            ));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::InvalidArgument("weight_decay must be >= 0".into()));
        }
        self.head.validate()
    }
}

/// Rewrites an input vector before it enters the network, e.g. training-time
/// augmentation. Called once per image per epoch.
pub trait InputTransform: Sync {
    fn apply(&self, epoch: usize, image_id: &str, x: &mut [f64]) -> Result<()>;
}

/// SGD with momentum; weight decay applies to weights only, not biases.
#[derive(Debug, Clone)]
pub struct Sgd {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: Vec<f64>,
    decay_mask: Vec<bool>,
}

impl Sgd {
    pub fn new<B: Backbone>(cfg: &TrainConfig, model: &EmbeddingModel<B>) -> Self {
        let n = model.params.len();
        Self {
            learning_rate: cfg.learning_rate,
            momentum: cfg.momentum,
            weight_decay: cfg.weight_decay,
            velocity: vec![0.0; n],
            decay_mask: (0..n).map(|i| model.is_weight(i)).collect(),
        }
    }

    pub fn step<B: Backbone>(&mut self, model: &mut EmbeddingModel<B>, grad: &[f64]) {
        let mut moved = false;
        for (i, (p, g)) in model.params.iter_mut().zip(grad).enumerate() {
            let mut g = *g;
            if self.decay_mask[i] {
                g += self.weight_decay * *p;
            }
            self.velocity[i] = self.momentum * self.velocity[i] + g;
            let next = *p - self.learning_rate * self.velocity[i];
            moved |= next != *p;
            *p = next;
        }
        // rows are already unit length unless something moved
        if moved && model.head.is_angular() {
            model.normalize_classifier();
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub step: usize,
    pub epoch: usize,
    pub loss: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub rows: Vec<LogRow>,
}

impl TrainLog {
    pub fn final_loss(&self) -> Option<f64> {
        self.rows.last().map(|r| r.loss)
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path)?;
        for r in &self.rows {
            w.serialize(r)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Trains on every image of the manifest, one identity per entry.
pub fn train(
    manifest: &DatasetManifest,
    store: &FeatureStore,
    cfg: &TrainConfig,
) -> Result<EmbeddingModel> {
    Ok(train_with(manifest, store, cfg, None)?.0)
}

pub fn train_with(
    manifest: &DatasetManifest,
    store: &FeatureStore,
    cfg: &TrainConfig,
    transform: Option<&dyn InputTransform>,
) -> Result<(EmbeddingModel, TrainLog)> {
    cfg.validate()?;
    let samples = manifest.labelled_images();
    if samples.is_empty() {
        return Err(Error::InvalidArgument("manifest has no images".into()));
    }
    let inputs: Vec<Vec<f64>> = samples
        .iter()
        .map(|(id, _)| {
            store
                .require(id)
                .map(|v| v.iter().map(|x| *x as f64).collect())
        })
        .collect::<Result<_>>()?;

    let backbone = Mlp::new(store.dim(), &cfg.hidden, cfg.embed_dim);
    let mut init_rng = seeds::stream(cfg.seed, &["init"]);
    let mut model = EmbeddingModel::init(backbone, cfg.head, manifest.entries.len(), &mut init_rng);
    let mut opt = Sgd::new(cfg, &model);
    let mut log = TrainLog::default();
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut scratch: Vec<Vec<f64>> = Vec::new();
    let mut step = 0;

    for epoch in 0..cfg.epochs {
        let mut rng = seeds::stream(cfg.seed, &["shuffle", &epoch.to_string()]);
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            scratch.clear();
            for &i in chunk {
                let mut x = inputs[i].clone();
                if let Some(t) = transform {
                    t.apply(epoch, samples[i].0, &mut x)?;
                }
                scratch.push(x);
            }
            let batch: Vec<(&[f64], usize)> = chunk
                .iter()
                .zip(&scratch)
                .map(|(&i, x)| (x.as_slice(), samples[i].1))
                .collect();
            let batch_ids = || chunk.iter().map(|&i| samples[i].0.to_string()).collect();
            let lg = match model.loss_and_grad(&batch) {
                Ok(lg) => lg,
                Err(Error::Degenerate(_)) => {
                    return Err(Error::NonFiniteLoss {
                        step,
                        epoch,
                        batch: batch_ids(),
                    })
                }
                Err(e) => return Err(e),
            };
            if !lg.loss.is_finite() || lg.grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFiniteLoss {
                    step,
                    epoch,
                    batch: batch_ids(),
                });
            }
            opt.step(&mut model, &lg.grad);
            if matches!(model.head, LossHead::CenterLoss { .. }) {
                let labels: Vec<usize> = batch.iter().map(|b| b.1).collect();
                model.center_update(&lg.embeddings, &labels)?;
            }
            log.rows.push(LogRow {
                step,
                epoch,
                loss: lg.loss,
            });
            step += 1;
        }
    }
    Ok((model, log))
}

/// Fraction of manifest images whose arg-max logit is their own identity.
pub fn training_accuracy<B: Backbone>(
    model: &EmbeddingModel<B>,
    manifest: &DatasetManifest,
    store: &FeatureStore,
) -> Result<f64> {
    let samples = manifest.labelled_images();
    let mut correct = 0;
    for (id, y) in &samples {
        let x: Vec<f64> = store.require(id)?.iter().map(|v| *v as f64).collect();
        let (_, logits) = model.forward(&x)?;
        let best = logits
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |acc, (j, z)| {
                if *z > acc.1 {
                    (j, *z)
                } else {
                    acc
                }
            });
        if best.0 == *y {
            correct += 1;
        }
    }
    Ok(correct as f64 / samples.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CheckpointHeader {
    input_dim: usize,
    hidden: Vec<usize>,
    embed_dim: usize,
    num_identities: usize,
    head: LossHead,
    seed: u64,
    params: usize,
    centers: usize,
}

/// Writes `path` (little-endian f32 params then centers) and a JSON sidecar
/// next to it with the shapes, head and seed.
pub fn save_checkpoint(model: &EmbeddingModel, seed: u64, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let header = CheckpointHeader {
        input_dim: model.input_dim(),
        hidden: model.backbone.hidden().to_vec(),
        embed_dim: model.embed_dim(),
        num_identities: model.num_identities,
        head: model.head,
        seed,
        params: model.params.len(),
        centers: model.centers.len(),
    };
    let mut blob = Vec::with_capacity(4 * (header.params + header.centers));
    for v in model.params.iter().chain(&model.centers) {
        blob.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&blob).map_err(|e| Error::io(path, e))?;
    let side = FeatureStore::sidecar_path(path);
    std::fs::write(&side, serde_json::to_vec_pretty(&header)?).map_err(|e| Error::io(&side, e))
}

/// Returns the model and the seed recorded in the header.
pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(EmbeddingModel, u64)> {
    let path = path.as_ref();
    let side = FeatureStore::sidecar_path(path);
    let text = std::fs::read(&side).map_err(|e| Error::io(&side, e))?;
    let h: CheckpointHeader = serde_json::from_slice(&text)?;
    let blob = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut model = EmbeddingModel::zeros(
        Mlp::new(h.input_dim, &h.hidden, h.embed_dim),
        h.head,
        h.num_identities,
    );
    if model.params.len() != h.params || model.centers.len() != h.centers {
        return Err(Error::malformed(
            "checkpoint",
            "header shapes disagree with layer sizes",
        ));
    }
    if blob.len() != 4 * (h.params + h.centers) {
        return Err(Error::malformed(
            "checkpoint",
            format!(
                "blob has {} bytes, expected {}",
                blob.len(),
                4 * (h.params + h.centers)
            ),
        ));
    }
    let mut vals = blob
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64);
    for p in model.params.iter_mut().chain(model.centers.iter_mut()) {
        *p = vals.next().unwrap();
    }
    Ok((model, h.seed))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{build_subject_pool, single_race_manifest, synth_corpus, SynthConfig};
    use crate::race::RaceCategory;

    fn tiny_setup() -> (DatasetManifest, FeatureStore) {
        let corpus = synth_corpus(&SynthConfig {
            dim: 10,
            sigma_between: 3.0,
            sigma_within: 0.1,
            subjects_per_race: 10,
            images_per_subject: 5,
            seed: 11,
            ..Default::default()
        })
        .unwrap();
        let pool = build_subject_pool(&corpus.catalog, 10, 5).unwrap();
        let m = single_race_manifest(&pool, RaceCategory::Asian, 10, 1, None).unwrap();
        (m, corpus.features)
    }

    #[test]
    fn zero_epochs_rejected() {
        let (m, s) = tiny_setup();
        let cfg = TrainConfig {
            epochs: 0,
            ..Default::default()
        };
        assert!(matches!(
            train(&m, &s, &cfg),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn separable_identities_are_learned() {
        let (m, s) = tiny_setup();
        for head in [LossHead::SoftmaxCe, LossHead::arcface()] {
            let cfg = TrainConfig {
                epochs: 60,
                batch_size: 10,
                head,
                hidden: vec![32],
                embed_dim: 16,
                ..Default::default()
            };
            let model = train(&m, &s, &cfg).unwrap();
            let acc = training_accuracy(&model, &m, &s).unwrap();
            assert!(acc >= 0.95, "{}: {acc}", head.name());
        }
    }

    #[test]
    fn training_is_deterministic() {
        let (m, s) = tiny_setup();
        let cfg = TrainConfig {
            epochs: 3,
            batch_size: 8,
            head: LossHead::center_loss(),
            ..Default::default()
        };
        let (a, la) = train_with(&m, &s, &cfg, None).unwrap();
        let (b, lb) = train_with(&m, &s, &cfg, None).unwrap();
        assert_eq!(a.params, b.params);
        assert_eq!(a.centers, b.centers);
        assert_eq!(la, lb);
        assert!(la.rows.iter().all(|r| r.loss.is_finite()));
    }

    #[test]
    fn zero_learning_rate_step_is_identity() {
        let (m, s) = tiny_setup();
        let cfg = TrainConfig {
            epochs: 1,
            learning_rate: 0.0,
            ..Default::default()
        };
        let mut rng = seeds::stream(5, &["t"]);
        for head in [
            LossHead::SoftmaxCe,
            LossHead::arcface(),
            LossHead::sphereface(),
        ] {
            let mut model =
                EmbeddingModel::init(Mlp::new(s.dim(), &[8], 4), head, m.entries.len(), &mut rng);
            let before = model.clone();
            let grad = vec![1.0; model.params.len()];
            Sgd::new(&cfg, &model).step(&mut model, &grad);
            assert_eq!(model.params, before.params);
        }
    }

    #[test]
    fn checkpoint_round_trip_is_f32_exact() {
        let (m, s) = tiny_setup();
        let cfg = TrainConfig {
            epochs: 1,
            head: LossHead::center_loss(),
            ..Default::default()
        };
        let model = train(&m, &s, &cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.bin");
        save_checkpoint(&model, 7, &path).unwrap();
        let (back, seed) = load_checkpoint(&path).unwrap();
        assert_eq!(seed, 7);
        assert_eq!(back.head, model.head);
        for (a, b) in back.params.iter().zip(&model.params) {
            assert_eq!(*a, *b as f32 as f64);
        }
        assert_eq!(back.centers.len(), model.centers.len());
    }
}
