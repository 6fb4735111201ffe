//! Synthetic identity corpus for desk-scale runs.
//!
//! Each race has a prototype vector. Identities are drawn around the
//! prototype with a per-dimension, per-race spread; images are drawn around
//! their identity with isotropic noise. By default the feature space is cut
//! into one block per race plus a shared block, and identities of a race vary
//! mostly inside that race's block, so a model trained on one race learns
//! directions that transfer only partially to the others.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::corpus::{FaceBox, FeatureStore, ImageRecord};
use crate::error::{Error, Result};
use crate::race::RaceCategory;
use crate::seeds;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub dim: usize,
    /// Per-race mean vectors; `None` uses the block layout.
    pub prototypes: Option<[Vec<f64>; 4]>,
    pub sigma_between: f64,
    pub sigma_within: f64,
    /// Per-race, per-dimension multipliers on `sigma_between`; `None` uses the
    /// block layout.
    pub race_spread: Option<[Vec<f64>; 4]>,
    pub subjects_per_race: usize,
    pub images_per_subject: usize,
    pub seed: u64,
    /// Prepended to every subject and image id (keeps train/test splits apart).
    pub id_prefix: String,
    /// Range of face-box to image area ratios per race.
    pub face_ratio: [(f64, f64); 4],
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            dim: 32,
            prototypes: None,
            sigma_between: 1.0,
            sigma_within: 0.35,
            race_spread: None,
            subjects_per_race: 200,
            images_per_subject: 6,
            seed: 0,
            id_prefix: String::new(),
            face_ratio: [(0.08, 0.40), (0.20, 0.65), (0.08, 0.40), (0.20, 0.65)],
        }
    }
}

const PROTOTYPE_OFFSET: f64 = 1.5;
const OWN_SPREAD: f64 = 1.0;
const SHARED_SPREAD: f64 = 0.5;
const OTHER_SPREAD: f64 = 0.2;

impl SynthConfig {
    fn block(&self) -> usize {
        (self.dim / 5).max(1)
    }

    fn in_own_block(&self, race: RaceCategory, d: usize) -> Option<bool> {
        let b = self.block();
        if d >= 4 * b {
            None
        } else {
            Some(d / b == race.index())
        }
    }

    pub fn prototype(&self, race: RaceCategory) -> Vec<f64> {
        if let Some(p) = &self.prototypes {
            return p[race.index()].clone();
        }
        (0..self.dim)
            .map(|d| match self.in_own_block(race, d) {
                Some(true) => PROTOTYPE_OFFSET,
                _ => 0.0,
            })
            .collect()
    }

    pub fn spread(&self, race: RaceCategory) -> Vec<f64> {
        if let Some(s) = &self.race_spread {
            return s[race.index()].clone();
        }
        (0..self.dim)
            .map(|d| match self.in_own_block(race, d) {
                Some(true) => OWN_SPREAD,
                Some(false) => OTHER_SPREAD,
                None => SHARED_SPREAD,
            })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.dim < 2 {
            return bad(format!("dim must be >= 2, got {}", self.dim));
        }
        if !(self.sigma_between > 0.0) || !(self.sigma_within > 0.0) {
            return bad("spreads must be > 0".into());
        }
        for race in RaceCategory::ALL {
            if self.prototype(race).len() != self.dim || self.spread(race).len() != self.dim {
                return bad(format!("{race} prototype/spread length differs from dim"));
            }
            if self.spread(race).iter().any(|s| !(*s > 0.0)) {
                return bad(format!("{race} spread multipliers must be > 0"));
            }
            let (lo, hi) = self.face_ratio[race.index()];
            if !(lo > 0.0 && lo <= hi && hi <= 1.0) {
                return bad(format!("{race} face ratio range ({lo}, {hi}) invalid"));
            }
        }
        Ok(())
    }

    pub fn subject_id(&self, race: RaceCategory, s: usize) -> String {
        format!("{}{}-s{s:05}", self.id_prefix, race.short())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthCorpus {
    pub catalog: Vec<ImageRecord>,
    pub features: FeatureStore,
}

pub fn synth_corpus(cfg: &SynthConfig) -> Result<SynthCorpus> {
    cfg.validate()?;
    let mut catalog = Vec::with_capacity(4 * cfg.subjects_per_race * cfg.images_per_subject);
    let mut features = FeatureStore::new(cfg.dim);
    let mut buf = vec![0f32; cfg.dim];
    for race in RaceCategory::ALL {
        let proto = cfg.prototype(race);
        let spread = cfg.spread(race);
        let (lo, hi) = cfg.face_ratio[race.index()];
        for s in 0..cfg.subjects_per_race {
            let subject_id = cfg.subject_id(race, s);
            let mut rng = seeds::stream(cfg.seed, &["synth", &subject_id]);
            let mean: Vec<f64> = proto
                .iter()
                .zip(&spread)
                .map(|(p, m)| p + cfg.sigma_between * m * rng.sample::<f64, _>(StandardNormal))
                .collect();
            for i in 0..cfg.images_per_subject {
                let image_id = format!("{subject_id}-i{i:03}");
                for (slot, mu) in buf.iter_mut().zip(&mean) {
                    *slot = (mu + cfg.sigma_within * rng.sample::<f64, _>(StandardNormal)) as f32;
                }
                features.push(image_id.clone(), &buf)?;

                let side: u32 = rng.gen_range(112..=250);
                let ratio: f64 = rng.gen_range(lo..=hi);
                let bside = ((side as f64 * ratio.sqrt()).round() as u32).clamp(1, side);
                let x = rng.gen_range(0..=side - bside);
                let y = rng.gen_range(0..=side - bside);
                catalog.push(ImageRecord {
                    path: format!("synth://{image_id}"),
                    image_id,
                    subject_id: subject_id.clone(),
                    race,
                    face_box: Some(FaceBox {
                        x,
                        y,
                        width: bside,
                        height: bside,
                    }),
                    dims: Some((side, side)),
                });
            }
        }
    }
    Ok(SynthCorpus { catalog, features })
}
