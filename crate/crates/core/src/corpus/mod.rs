//! Image catalogs, subject pools, training manifests and the synthetic
//! identity corpus.

mod catalog;
mod features;
mod manifest;
mod pool;
mod synth;

pub use catalog::{read_catalog, write_catalog, FaceBox, ImageRecord};
pub use features::FeatureStore;
pub use manifest::{
    grow_manifest, growth_base_manifest, sample_manifest, single_race_manifest, DatasetManifest,
    Design, GrowthMode, GrowthPreset, ManifestEntry,
};
pub use pool::{build_subject_pool, PoolSubject, SubjectPool};
pub use synth::{synth_corpus, SynthConfig, SynthCorpus};
