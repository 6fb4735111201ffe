use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::augment::NoiseConfig;
use crate::cluster::ClusterConfig;
use crate::corpus::{GrowthPreset, SynthConfig};
use crate::embednet::{LossHead, TrainConfig};
use crate::error::{Error, Result};

/// Environment variable naming the directory relative output paths resolve
/// against.
pub const OUTPUT_ROOT_ENV: &str = "RACEMIX_OUTPUT_ROOT";

/// Everything an experiment needs; one JSON document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub heads: Vec<LossHead>,
    pub trials: usize,
    pub train: TrainConfig,

    /// Synthetic training corpus, used unless `catalog` is set.
    pub synth: SynthConfig,
    /// Subjects per race in the synthetic test split.
    pub test_subjects_per_race: usize,
    /// CSV image catalog for training (replaces `synth`).
    pub catalog: Option<PathBuf>,
    /// Feature store holding every catalog and pair image.
    pub features: Option<PathBuf>,
    /// Pair file; generated from the test split when absent.
    pub pairs: Option<PathBuf>,
    pub pairs_per_race: usize,
    pub folds: usize,

    /// Per-race pool cap; defaults to the synthetic subjects per race.
    pub pool_cap: Option<usize>,
    pub images_per_subject: usize,
    /// Subjects per sweep dataset.
    pub total_subjects: usize,
    /// Restrict the sweep to these indices of the 89 enumerated mixes.
    pub sweep_points: Option<Vec<usize>>,
    /// Subjects per single-race model; `None` uses the whole pool.
    pub single_race_subjects: Option<usize>,
    /// Images per subject for single-race models; `None` uses all.
    pub single_race_images: Option<usize>,
    pub growth: GrowthPreset,
    pub noise: NoiseConfig,
    pub noise_grid: Vec<f64>,
    pub cluster: ClusterConfig,

    pub output_dir: PathBuf,
    /// Stop with a resume token after this many cells (run-control only).
    pub stop_after_cells: Option<usize>,
    pub threads: Option<usize>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            heads: vec![LossHead::arcface()],
            trials: 5,
            train: TrainConfig::default(),
            synth: SynthConfig::default(),
            test_subjects_per_race: 100,
            catalog: None,
            features: None,
            pairs: None,
            pairs_per_race: 600,
            folds: 10,
            pool_cap: None,
            images_per_subject: 6,
            total_subjects: 200,
            sweep_points: None,
            single_race_subjects: None,
            single_race_images: None,
            growth: GrowthPreset::default(),
            noise: NoiseConfig::default(),
            noise_grid: vec![0.0, 0.1, 0.2, 0.3, 0.4, 0.5],
            cluster: ClusterConfig {
                samples_per_race: 300,
                ..Default::default()
            },
            output_dir: PathBuf::from("racemix-out"),
            stop_after_cells: None,
            threads: None,
        }
    }
}

/// Sets `key` (dot-separated path) in a JSON document. The value is parsed
/// as JSON when possible, otherwise taken as a string.
pub fn apply_override(doc: &mut Value, key: &str, raw: &str) -> Result<()> {
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = doc;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let last = i + 1 == parts.len();
        node = match node {
            Value::Object(map) => {
                if last {
                    map.insert(part.to_string(), value);
                    return Ok(());
                }
                map.entry(part.to_string())
                    .or_insert_with(|| Value::Object(Default::default()))
            }
            Value::Array(items) => {
                let idx: usize = part.parse().map_err(|_| {
                    Error::InvalidArgument(format!("{key}: {part} is not an index"))
                })?;
                let len = items.len();
                let slot = items.get_mut(idx).ok_or_else(|| {
                    Error::InvalidArgument(format!("{key}: index {idx} out of {len}"))
                })?;
                if last {
                    *slot = value;
                    return Ok(());
                }
                slot
            }
            Value::Null => {
                *node = Value::Object(Default::default());
                let Value::Object(map) = node else {
                    unreachable!()
                };
                if last {
                    map.insert(part.to_string(), value);
                    return Ok(());
                }
                map.entry(part.to_string())
                    .or_insert_with(|| Value::Object(Default::default()))
            }
            _ => {
                return Err(Error::InvalidArgument(format!(
                    "{key}: cannot descend into scalar at {part}"
                )))
            }
        };
    }
    Ok(())
}

impl ExperimentConfig {
    /// Defaults, then the JSON file (if any), then `--key value` overrides.
    pub fn load(path: Option<&Path>, overrides: &[(String, String)]) -> Result<Self> {
        let mut doc = serde_json::to_value(Self::default())?;
        if let Some(path) = path {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            let file: Value = serde_json::from_str(&text)?;
            merge(&mut doc, file);
        }
        for (k, v) in overrides {
            apply_override(&mut doc, k, v)?;
        }
        let cfg: Self = serde_json::from_value(doc)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 || self.heads.is_empty() {
            return Err(Error::InvalidArgument(
                "need >= 1 trial and >= 1 head".into(),
            ));
        }
        if self.total_subjects == 0 || self.images_per_subject == 0 {
            return Err(Error::InvalidArgument(
                "total_subjects and images_per_subject must be >= 1".into(),
            ));
        }
        if self.catalog.is_some() && (self.features.is_none() || self.pairs.is_none()) {
            return Err(Error::InvalidArgument(
                "a catalog needs a feature store and a pair file".into(),
            ));
        }
        if self.noise_grid.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::InvalidArgument(
                "noise_grid values must lie in [0, 1]".into(),
            ));
        }
        for h in &self.heads {
            h.validate()?;
        }
        self.train.validate()?;
        self.noise.validate()?;
        self.growth.validate()?;
        for path in [&self.catalog, &self.features, &self.pairs]
            .into_iter()
            .flatten()
        {
            if !path.exists() {
                return Err(Error::InvalidArgument(format!(
                    "{} does not exist",
                    path.display()
                )));
            }
        }
        Ok(())
    }

    pub fn pool_cap(&self) -> usize {
        self.pool_cap.unwrap_or(self.synth.subjects_per_race)
    }

    /// `output_dir`, under the output-root variable when relative.
    pub fn output_path(&self) -> PathBuf {
        if self.output_dir.is_absolute() {
            return self.output_dir.clone();
        }
        match std::env::var_os(OUTPUT_ROOT_ENV) {
            Some(root) => PathBuf::from(root).join(&self.output_dir),
            None => self.output_dir.clone(),
        }
    }

    /// Hash of the fields that determine results; run-control fields
    /// (output location, thread count, early stop) are excluded.
    pub fn results_hash(&self) -> String {
        let mut c = self.clone();
        c.output_dir = PathBuf::new();
        c.stop_after_cells = None;
        c.threads = None;
        let bytes = serde_json::to_vec(&c).expect("config serializes");
        let digest = Sha256::digest(&bytes);
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}
