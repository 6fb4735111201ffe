//! Experiment engine for studying how the race composition of a
//! face-recognition training set shapes per-race verification accuracy and
//! the variance across races.
//!
//! The pieces, bottom-up:
//!
//! - [`distributions`]: the 89 race mixes on four nested 3-simplexes, exact
//!   apportionment to subject counts, and the flattened-net plot layout.
//! - [`corpus`]: image catalogs, subject pools, constrained manifest
//!   sampling (single race, mix, dataset growth) and a synthetic identity
//!   corpus with a flat feature store.
//! - [`embednet`]: a small embedding network trained under softmax,
//!   center-loss, SphereFace and ArcFace heads with analytic gradients.
//! - [`evalproto`]: cosine pair matching with fold-selected thresholds and the
//!   mean / population-variance fairness summary.
//! - [`cluster`]: intra-race cosine compactness and weighted k-NN race
//!   membership.
//! - [`augment`]: patch-blur noise injection and face-size ratio statistics.
//! - [`harness`]: seeded end-to-end experiment designs, results tables,
//!   SVG plots and published-table fixture verification.

pub mod augment;
pub mod cluster;
pub mod corpus;
pub mod distributions;
pub mod embednet;
pub mod error;
pub mod evalproto;
pub mod harness;
pub mod race;
pub mod seeds;

pub use distributions::{enumerate_simplex_points, mix_to_counts, RaceMix, SubjectCounts};
pub use error::{Error, Result};
pub use race::RaceCategory;
