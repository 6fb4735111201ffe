use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::augment::FeatureBlur;
use crate::cluster::{cluster_report, ClusterReport, RaceGroups};
use crate::corpus::{
    build_subject_pool, grow_manifest, growth_base_manifest, read_catalog, sample_manifest,
    single_race_manifest, synth_corpus, DatasetManifest, Design, FeatureStore, GrowthMode,
    ImageRecord, SubjectPool, SynthConfig,
};
use crate::distributions::{enumerate_simplex_points, mix_to_counts, RaceMix, SubjectCounts};
use crate::embednet::{
    embed_all, train_with, EmbeddingModel, InputTransform, LossHead, TrainConfig,
};
use crate::error::{Error, Result};
use crate::evalproto::{evaluate, synth_pairs, PairSet, ReportMeta};
use crate::harness::config::ExperimentConfig;
use crate::harness::plot::emit_simplex_svg;
use crate::harness::results::{aggregate, delta, ResultRow, ResultsTable, RowKind};
use crate::race::RaceCategory;
use crate::seeds::derive_seed;

/// Training corpus, features for every train and test image, the pair set
/// and the ranked subject pool.
#[derive(Debug, Clone)]
pub struct ExperimentData {
    pub catalog: Vec<ImageRecord>,
    /// Test images grouped by race (synthetic split, or the pair images).
    pub test_images: [Vec<String>; 4],
    pub store: FeatureStore,
    pub pairs: PairSet,
    pub pool: SubjectPool,
}

/// The synthetic test split: same prototypes and spreads as training,
/// disjoint identities.
pub fn test_synth_config(cfg: &ExperimentConfig) -> SynthConfig {
    SynthConfig {
        subjects_per_race: cfg.test_subjects_per_race,
        seed: derive_seed(cfg.synth.seed, &["test"]),
        id_prefix: format!("test-{}", cfg.synth.id_prefix),
        ..cfg.synth.clone()
    }
}

impl ExperimentData {
    pub fn prepare(cfg: &ExperimentConfig) -> Result<Self> {
        let (catalog, store, pairs, test_images) = match &cfg.catalog {
            Some(path) => {
                let catalog = read_catalog(path)?;
                let store = FeatureStore::read(cfg.features.as_ref().expect("validated"))?;
                let pairs = PairSet::read_csv(cfg.pairs.as_ref().expect("validated"), cfg.folds)?;
                let mut test: [Vec<String>; 4] = Default::default();
                for race in RaceCategory::ALL {
                    let list = &mut test[race.index()];
                    for p in pairs.pairs(race) {
                        list.push(p.image_a.clone());
                        list.push(p.image_b.clone());
                    }
                    list.sort();
                    list.dedup();
                }
                (catalog, store, pairs, test)
            }
            None => {
                let train = synth_corpus(&cfg.synth)?;
                let test = synth_corpus(&test_synth_config(cfg))?;
                let mut store = train.features;
                let mut test_images: [Vec<String>; 4] = Default::default();
                for rec in &test.catalog {
                    store.push(rec.image_id.clone(), test.features.require(&rec.image_id)?)?;
                    test_images[rec.race.index()].push(rec.image_id.clone());
                }
                let pairs = match &cfg.pairs {
                    Some(p) => PairSet::read_csv(p, cfg.folds)?,
                    None => synth_pairs(
                        &test.catalog,
                        cfg.pairs_per_race,
                        cfg.folds,
                        derive_seed(cfg.seed, &["pairs"]),
                    )?,
                };
                (train.catalog, store, pairs, test_images)
            }
        };
        pairs.validate()?;
        for p in pairs.per_race.iter().flatten() {
            store.require(&p.image_a)?;
            store.require(&p.image_b)?;
        }
        let pool = build_subject_pool(&catalog, cfg.pool_cap(), cfg.images_per_subject)?;
        Ok(Self {
            catalog,
            test_images,
            store,
            pairs,
            pool,
        })
    }
}

/// One unit of work: a training set plus a head and trial.
#[derive(Debug, Clone)]
struct Cell {
    key: String,
    head: LossHead,
    trial: usize,
    mix: Option<RaceMix>,
    p: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ResumeToken {
    config_hash: String,
    completed: usize,
}

/// Where a design writes its table.
pub fn results_path(cfg: &ExperimentConfig, design: &str) -> PathBuf {
    cfg.output_path().join(format!("{design}.csv"))
}

fn token_path(cfg: &ExperimentConfig, design: &str) -> PathBuf {
    cfg.output_path().join(format!("{design}.resume.json"))
}

fn cell_seed(cfg: &ExperimentConfig, design: &str, cell: &Cell) -> u64 {
    derive_seed(cfg.seed, &[design, &cell.key, &cell.trial.to_string()])
}

fn train_config(cfg: &ExperimentConfig, head: LossHead, seed: u64) -> TrainConfig {
    TrainConfig {
        head,
        seed: derive_seed(seed, &["train", head.name()]),
        ..cfg.train.clone()
    }
}

fn train_and_eval(
    cfg: &ExperimentConfig,
    data: &ExperimentData,
    design: &str,
    cell: &Cell,
    manifest: &DatasetManifest,
    train_seed: u64,
    transform: Option<&dyn InputTransform>,
) -> Result<ResultRow> {
    let tc = train_config(cfg, cell.head, train_seed);
    let (model, _) = train_with(manifest, &data.store, &tc, transform)?;
    let meta = ReportMeta {
        mix: cell.mix,
        seed: tc.seed,
        head: cell.head.name().to_string(),
        trial: cell.trial,
    };
    let report = evaluate(&model, &data.store, &data.pairs, meta)?;
    Ok(ResultRow::from_report(
        design,
        &cell.key,
        manifest.subject_counts(),
        &report,
        cell.p,
    ))
}

/// Runs cells in parallel batches, appending finished rows in cell order to
/// `<design>.csv` with a resume token beside it. A token whose config hash
/// matches lets a rerun skip the rows already on disk.
fn run_cells<F>(
    cfg: &ExperimentConfig,
    design: &str,
    cells: &[Cell],
    f: F,
) -> Result<Vec<ResultRow>>
where
    F: Fn(&Cell) -> Result<ResultRow> + Sync,
{
    let dir = cfg.output_path();
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let csv_path = results_path(cfg, design);
    let token = token_path(cfg, design);
    let hash = cfg.results_hash();

    let mut done: Vec<ResultRow> = Vec::new();
    if token.exists() {
        let text = std::fs::read_to_string(&token).map_err(|e| Error::io(&token, e))?;
        let t: ResumeToken = serde_json::from_str(&text)?;
        if t.config_hash == hash && csv_path.exists() {
            let rows = ResultsTable::read_csv(&csv_path)?.rows;
            if rows.len() >= t.completed && t.completed <= cells.len() {
                done = rows.into_iter().take(t.completed).collect();
            }
        }
    }
    // rewrite so the file holds exactly the resumed prefix
    ResultsTable { rows: done.clone() }.write_csv(&csv_path)?;
    let write_token = |completed: usize| -> Result<()> {
        let t = ResumeToken {
            config_hash: hash.clone(),
            completed,
        };
        std::fs::write(&token, serde_json::to_vec_pretty(&t)?).map_err(|e| Error::io(&token, e))
    };
    write_token(done.len())?;

    let batch = cfg
        .threads
        .unwrap_or_else(rayon::current_num_threads)
        .max(1);
    let mut ran = 0;
    let mut next = done.len();
    while next < cells.len() {
        let mut end = (next + batch).min(cells.len());
        if let Some(limit) = cfg.stop_after_cells {
            if ran >= limit {
                return Err(Error::Aborted {
                    completed: next,
                    token,
                });
            }
            end = end.min(next + (limit - ran));
        }
        let rows: Vec<Result<ResultRow>> = cells[next..end].par_iter().map(&f).collect();
        // keep every row that precedes the first failure
        let mut fresh = Vec::with_capacity(rows.len());
        let mut failure = None;
        for r in rows {
            match r {
                Ok(row) if failure.is_none() => fresh.push(row),
                Ok(_) => {}
                Err(e) => {
                    failure.get_or_insert(e);
                }
            }
        }
        ResultsTable::append_csv(&fresh, &csv_path)?;
        ran += fresh.len();
        next += fresh.len();
        done.extend(fresh);
        write_token(next)?;
        if let Some(e) = failure {
            return Err(e);
        }
    }
    if let Some(limit) = cfg.stop_after_cells {
        if ran >= limit && ran > 0 && next < cells.len() {
            return Err(Error::Aborted {
                completed: next,
                token,
            });
        }
    }
    Ok(done)
}

/// Trial rows, then per (head, key) mean and sd rows in first-seen order.
fn with_aggregates(trials: Vec<ResultRow>) -> Result<ResultsTable> {
    let mut groups: Vec<((String, String), Vec<&ResultRow>)> = Vec::new();
    for r in &trials {
        let k = (r.head.clone(), r.key.clone());
        match groups.iter_mut().find(|g| g.0 == k) {
            Some(g) => g.1.push(r),
            None => groups.push((k, vec![r])),
        }
    }
    let mut agg = Vec::with_capacity(2 * groups.len());
    for (_, rows) in &groups {
        let (m, s) = aggregate(rows)?;
        agg.push(m);
        agg.push(s);
    }
    let mut rows = trials;
    rows.extend(agg);
    Ok(ResultsTable { rows })
}

fn finish(cfg: &ExperimentConfig, design: &str, table: &ResultsTable) -> Result<()> {
    table.write_csv(results_path(cfg, design))?;
    let token = token_path(cfg, design);
    if token.exists() {
        std::fs::remove_file(&token).map_err(|e| Error::io(&token, e))?;
    }
    Ok(())
}

fn in_pool<R>(cfg: &ExperimentConfig, f: impl FnOnce() -> R + Send) -> Result<R>
where
    R: Send,
{
    match cfg.threads {
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
            Ok(pool.install(f))
        }
        None => Ok(f()),
    }
}

fn cells_for<K: Clone>(
    cfg: &ExperimentConfig,
    keys: &[K],
    make: impl Fn(&K, LossHead, usize) -> Cell,
) -> Vec<Cell> {
    let mut cells = Vec::new();
    for head in &cfg.heads {
        for k in keys {
            for trial in 0..cfg.trials {
                cells.push(make(k, *head, trial));
            }
        }
    }
    cells
}

/// Subjects per single-race model.
fn single_race_subjects(cfg: &ExperimentConfig, pool: &SubjectPool) -> Result<usize> {
    let n = match cfg.single_race_subjects {
        Some(n) => n,
        None => RaceCategory::ALL
            .iter()
            .map(|r| pool.len(*r))
            .min()
            .unwrap_or(0),
    };
    for race in RaceCategory::ALL {
        if pool.len(race) < n || n == 0 {
            return Err(Error::InsufficientPool {
                race,
                requested: n.max(1),
                available: pool.len(race),
            });
        }
    }
    Ok(n)
}

/// Every head x train race x trial; each model is tested on all four races.
pub fn run_single_race(cfg: &ExperimentConfig) -> Result<ResultsTable> {
    let data = ExperimentData::prepare(cfg)?;
    run_single_race_with(cfg, &data)
}

pub fn run_single_race_with(cfg: &ExperimentConfig, data: &ExperimentData) -> Result<ResultsTable> {
    const DESIGN: &str = "single_race";
    let subjects = single_race_subjects(cfg, &data.pool)?;
    let cells = cells_for(cfg, &RaceCategory::ALL, |race, head, trial| Cell {
        key: race.name().to_string(),
        head,
        trial,
        mix: Some(RaceMix::single(*race)),
        p: None,
    });
    let trials = in_pool(cfg, || {
        run_cells(cfg, DESIGN, &cells, |cell| {
            let race: RaceCategory = cell.key.parse()?;
            let seed = cell_seed(cfg, DESIGN, cell);
            let manifest = single_race_manifest(
                &data.pool,
                race,
                subjects,
                derive_seed(seed, &["sample"]),
                cfg.single_race_images,
            )?;
            train_and_eval(cfg, data, DESIGN, cell, &manifest, seed, None)
        })
    })??;
    let table = with_aggregates(trials)?;
    finish(cfg, DESIGN, &table)?;
    Ok(table)
}

/// Mean and sample sd per (train race, test race) for one head, from a
/// single-race table.
pub fn single_race_grid(table: &ResultsTable, head: &str) -> Result<[[(f64, f64); 4]; 4]> {
    let mut grid = [[(f64::NAN, f64::NAN); 4]; 4];
    for race in RaceCategory::ALL {
        let find = |kind| {
            table
                .of_kind(kind)
                .find(|r| r.head == head && r.key == race.name())
                .ok_or_else(|| Error::malformed("results", format!("no {kind} row for {race}")))
        };
        let (m, s) = (find(RowKind::Mean)?, find(RowKind::Sd)?);
        for t in 0..4 {
            grid[race.index()][t] = (m.acc[t], s.acc[t]);
        }
    }
    Ok(grid)
}

/// Text grid, rows = train race, columns = test race.
pub fn format_grid(grid: &[[(f64, f64); 4]; 4]) -> String {
    let mut out = format!("{:<10}", "train\\test");
    for race in RaceCategory::ALL {
        out.push_str(&format!("{:>14}", race.name()));
    }
    out.push('\n');
    for race in RaceCategory::ALL {
        out.push_str(&format!("{:<10}", race.name()));
        for (m, s) in grid[race.index()] {
            out.push_str(&format!("{:>14}", format!("{m:.1} ± {s:.1}")));
        }
        out.push('\n');
    }
    out
}

/// The sweep mixes (all 89, or the configured subset) with their indices.
pub fn sweep_mixes(cfg: &ExperimentConfig) -> Result<Vec<(usize, RaceMix)>> {
    let all = enumerate_simplex_points();
    match &cfg.sweep_points {
        None => Ok(all.into_iter().enumerate().collect()),
        Some(idx) => idx
            .iter()
            .map(|&i| {
                all.get(i)
                    .cloned()
                    .map(|m| (i, m))
                    .ok_or_else(|| Error::InvalidArgument(format!("sweep point {i} out of 89")))
            })
            .collect(),
    }
}

/// mix -> counts -> manifest -> train -> evaluate for every mix, head and
/// trial. Writes `sweep.csv` and, for complete sweeps, one SVG per head.
pub fn run_distribution_sweep(cfg: &ExperimentConfig) -> Result<ResultsTable> {
    let data = ExperimentData::prepare(cfg)?;
    run_distribution_sweep_with(cfg, &data)
}

pub fn run_distribution_sweep_with(
    cfg: &ExperimentConfig,
    data: &ExperimentData,
) -> Result<ResultsTable> {
    const DESIGN: &str = "sweep";
    let mixes = sweep_mixes(cfg)?;
    let mut counts = Vec::with_capacity(mixes.len());
    for (_, mix) in &mixes {
        let c = mix_to_counts(mix, cfg.total_subjects)?;
        for race in RaceCategory::ALL {
            if c.get(race) > data.pool.len(race) {
                return Err(Error::InsufficientPool {
                    race,
                    requested: c.get(race),
                    available: data.pool.len(race),
                });
            }
        }
        counts.push(c);
    }
    let cells = cells_for(cfg, &mixes, |(i, mix), head, trial| Cell {
        key: i.to_string(),
        head,
        trial,
        mix: Some(*mix),
        p: None,
    });
    let trials = in_pool(cfg, || {
        run_cells(cfg, DESIGN, &cells, |cell| {
            let idx = mixes
                .iter()
                .position(|(i, _)| i.to_string() == cell.key)
                .expect("cell from mixes");
            let seed = cell_seed(cfg, DESIGN, cell);
            let mut manifest = sample_manifest(
                &data.pool,
                counts[idx],
                cfg.images_per_subject,
                derive_seed(seed, &["sample"]),
            )?;
            manifest.design = Design::Distribution {
                mix: cell.mix,
                counts: counts[idx],
            };
            train_and_eval(cfg, data, DESIGN, cell, &manifest, seed, None)
        })
    })??;
    let table = with_aggregates(trials)?;
    finish(cfg, DESIGN, &table)?;
    if mixes.len() == 89 {
        for head in &cfg.heads {
            let svg = emit_simplex_svg(&table, head.name(), None)?;
            let path = cfg.output_path().join(format!("sweep-{}.svg", head.name()));
            std::fs::write(&path, svg).map_err(|e| Error::io(&path, e))?;
        }
    }
    Ok(table)
}

/// Growth variant keys in output order.
pub fn growth_keys() -> Vec<String> {
    let mut keys = vec!["base".to_string()];
    for race in RaceCategory::ALL {
        for mode in [GrowthMode::MoreImages, GrowthMode::MoreSubjects] {
            keys.push(format!("{}-{}", race.name(), mode.name()));
        }
    }
    keys
}

fn parse_growth_key(key: &str) -> Result<Option<(RaceCategory, GrowthMode)>> {
    if key == "base" {
        return Ok(None);
    }
    let (race, mode) = key
        .split_once('-')
        .ok_or_else(|| Error::malformed("growth key", key))?;
    let mode = match mode {
        "more_images" => GrowthMode::MoreImages,
        "more_subjects" => GrowthMode::MoreSubjects,
        other => return Err(Error::malformed("growth key", other)),
    };
    Ok(Some((race.parse()?, mode)))
}

/// Base run plus 4 races x 2 growth modes, then delta rows (variant mean
/// minus base mean) per head.
pub fn run_growth_study(cfg: &ExperimentConfig) -> Result<ResultsTable> {
    let data = ExperimentData::prepare(cfg)?;
    run_growth_study_with(cfg, &data)
}

pub fn run_growth_study_with(
    cfg: &ExperimentConfig,
    data: &ExperimentData,
) -> Result<ResultsTable> {
    const DESIGN: &str = "growth";
    let preset = cfg.growth;
    preset.validate()?;
    let keys = growth_keys();
    let cells = cells_for(cfg, &keys, |k, head, trial| Cell {
        key: k.clone(),
        head,
        trial,
        mix: None,
        p: None,
    });
    let trials = in_pool(cfg, || {
        run_cells(cfg, DESIGN, &cells, |cell| {
            // the base manifest is shared by every variant of a trial
            let base_seed = derive_seed(
                cfg.seed,
                &[DESIGN, "base", &cell.trial.to_string(), "sample"],
            );
            let base = growth_base_manifest(&data.pool, &preset, base_seed)?;
            let manifest = match parse_growth_key(&cell.key)? {
                None => base,
                Some((race, mode)) => {
                    let grow_seed = derive_seed(cell_seed(cfg, DESIGN, cell), &["sample"]);
                    grow_manifest(&base, race, mode, &data.pool, &preset, grow_seed)?
                }
            };
            train_and_eval(
                cfg,
                data,
                DESIGN,
                cell,
                &manifest,
                cell_seed(cfg, DESIGN, cell),
                None,
            )
        })
    })??;
    let mut table = with_aggregates(trials)?;
    let means: Vec<ResultRow> = table.of_kind(RowKind::Mean).cloned().collect();
    for head in &cfg.heads {
        let base = means
            .iter()
            .find(|r| r.head == head.name() && r.key == "base")
            .expect("base mean row");
        for r in means
            .iter()
            .filter(|r| r.head == head.name() && r.key != "base")
        {
            table.rows.push(delta(r, base));
        }
    }
    finish(cfg, DESIGN, &table)?;
    Ok(table)
}

/// Balanced training manifest for the noise study (uniform mix).
fn noise_manifest(
    cfg: &ExperimentConfig,
    data: &ExperimentData,
    trial: usize,
) -> Result<DatasetManifest> {
    let counts = mix_to_counts(&RaceMix::uniform(), cfg.total_subjects)?;
    let mut m = sample_manifest(
        &data.pool,
        counts,
        cfg.images_per_subject,
        derive_seed(cfg.seed, &["noise", "sample", &trial.to_string()]),
    )?;
    m.design = Design::Distribution {
        mix: Some(RaceMix::uniform()),
        counts,
    };
    Ok(m)
}

/// One uniform-mix model per noise probability, head and trial. The
/// training seed depends on trial and head only, so p = 0 reproduces the
/// unaugmented run exactly.
pub fn run_noise_study(cfg: &ExperimentConfig) -> Result<ResultsTable> {
    let data = ExperimentData::prepare(cfg)?;
    run_noise_study_with(cfg, &data)
}

pub fn run_noise_study_with(cfg: &ExperimentConfig, data: &ExperimentData) -> Result<ResultsTable> {
    const DESIGN: &str = "noise";
    let grid: Vec<f64> = cfg.noise_grid.clone();
    FeatureBlur::new(cfg.noise, data.store.dim())?;
    let cells = cells_for(cfg, &grid, |p, head, trial| Cell {
        key: p.to_string(),
        head,
        trial,
        mix: Some(RaceMix::uniform()),
        p: Some(*p),
    });
    let trials = in_pool(cfg, || {
        run_cells(cfg, DESIGN, &cells, |cell| {
            let manifest = noise_manifest(cfg, data, cell.trial)?;
            let blur = FeatureBlur::new(
                crate::augment::NoiseConfig {
                    p: cell.p.expect("noise cell"),
                    seed: derive_seed(cell_seed(cfg, DESIGN, cell), &["augment"]),
                    ..cfg.noise
                },
                data.store.dim(),
            )?;
            let train_seed = derive_seed(cfg.seed, &[DESIGN, &cell.trial.to_string()]);
            train_and_eval(cfg, data, DESIGN, cell, &manifest, train_seed, Some(&blur))
        })
    })??;
    let table = with_aggregates(trials)?;
    finish(cfg, DESIGN, &table)?;
    Ok(table)
}

/// Trains the first head on the uniform mix (trial 0) and reports
/// compactness and k-NN membership of the test embeddings. Writes
/// `cluster.json` and `cluster.csv`.
pub fn run_cluster(cfg: &ExperimentConfig) -> Result<ClusterReport> {
    let data = ExperimentData::prepare(cfg)?;
    run_cluster_with(cfg, &data)
}

pub fn run_cluster_with(cfg: &ExperimentConfig, data: &ExperimentData) -> Result<ClusterReport> {
    let manifest = noise_manifest(cfg, data, 0)?;
    let head = cfg.heads[0];
    let tc = train_config(cfg, head, derive_seed(cfg.seed, &["cluster"]));
    let (model, _) = in_pool(cfg, || train_with(&manifest, &data.store, &tc, None))??;
    let report = cluster_embeddings(&model, data, cfg)?;
    let dir = cfg.output_path();
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    report.write_json(dir.join("cluster.json"))?;
    report.write_csv(dir.join("cluster.csv"))?;
    Ok(report)
}

pub fn cluster_embeddings(
    model: &EmbeddingModel,
    data: &ExperimentData,
    cfg: &ExperimentConfig,
) -> Result<ClusterReport> {
    let mut groups: RaceGroups = Default::default();
    for race in RaceCategory::ALL {
        let ids: Vec<&str> = data.test_images[race.index()]
            .iter()
            .map(String::as_str)
            .collect();
        groups[race.index()] = embed_all(model, &data.store, &ids)?;
    }
    let cc = crate::cluster::ClusterConfig {
        seed: derive_seed(cfg.seed, &["cluster", "sample"]),
        ..cfg.cluster
    };
    cluster_report(&groups, &cc)
}

/// Subject counts a config would use for `mix`.
pub fn counts_for(cfg: &ExperimentConfig, mix: &RaceMix) -> Result<SubjectCounts> {
    mix_to_counts(mix, cfg.total_subjects)
}

/// Whether `dir` holds an unfinished run of `design`.
pub fn has_resume_token(cfg: &ExperimentConfig, design: &str) -> bool {
    Path::new(&token_path(cfg, design)).exists()
}
