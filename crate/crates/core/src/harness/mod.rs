//! Experiment designs end to end: configuration, seeded cell execution with
//! resumable ordered output, results tables, flattened-net SVG plots and
//! verification of published summary tables.
//!
//! Every design writes `<output>/<design>.csv`. Trial rows come first in
//! cell order (head, key, trial), then a mean and an sd row per (head, key),
//! then any delta rows. While a design runs, `<design>.resume.json` records
//! how many rows are final; rerunning the same config picks up from there.

mod config;
mod fixtures;
mod plot;
mod results;
mod runner;

pub use config::{apply_override, ExperimentConfig, OUTPUT_ROOT_ENV};
pub use fixtures::{
    fixture_files, read_fixture, variance_range, verify_fixtures, FixtureReport, FixtureRow,
    FIXTURE_TOLERANCE,
};
pub use plot::{emit_simplex_svg, markers_per_panel, Metric};
pub use results::{aggregate, delta, ResultRow, ResultsTable, RowKind, COLUMNS};
pub use runner::{
    cluster_embeddings, counts_for, format_grid, growth_keys, has_resume_token, results_path,
    run_cluster, run_cluster_with, run_distribution_sweep, run_distribution_sweep_with,
    run_growth_study, run_growth_study_with, run_noise_study, run_noise_study_with,
    run_single_race, run_single_race_with, single_race_grid, sweep_mixes, test_synth_config,
    ExperimentData,
};
