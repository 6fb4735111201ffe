use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use racemix::corpus::{sample_manifest, write_catalog, DatasetManifest, Design};
use racemix::embednet::{load_checkpoint, save_checkpoint, train_with, training_accuracy};
use racemix::evalproto::{evaluate, ReportMeta};
use racemix::harness::{
    self, emit_simplex_svg, format_grid, single_race_grid, verify_fixtures, ExperimentConfig,
    ExperimentData, Metric, ResultsTable, RowKind,
};
use racemix::{enumerate_simplex_points, mix_to_counts, Error, RaceMix};

/// Training-set race composition experiments.
///
/// Every subcommand reads the JSON config given by --config (if any) and then
/// applies trailing `--key value` overrides, e.g. `--train.epochs 3`.
/// Relative output directories resolve under $RACEMIX_OUTPUT_ROOT when set.
#[derive(Parser)]
#[command(name = "racemix", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Common {
    /// JSON config file.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Config overrides as `--key value` pairs (dotted keys reach nested fields).
    #[arg(trailing_var_arg = true, allow_hyphen_values = true, num_args = 0..)]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Print the 89 mixes with their subject counts.
    Enumerate {
        /// Subject total to apportion (default: config total_subjects).
        #[arg(long)]
        total: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Write the synthetic corpus: catalogs, feature store, pairs.
    Synth {
        #[command(flatten)]
        common: Common,
    },
    /// Write a training manifest for one mix.
    Sample {
        /// Mix as four fractions, e.g. 1/2,1/6,1/6,1/6.
        #[arg(long, conflicts_with = "index")]
        mix: Option<String>,
        /// Index into the enumerated mixes.
        #[arg(long)]
        index: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Train one model on a manifest.
    Train {
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Evaluate a checkpoint on the pair set.
    Eval {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Compactness and k-NN race membership of test embeddings.
    Cluster {
        #[command(flatten)]
        common: Common,
    },
    /// Train and evaluate on every enumerated mix.
    Sweep {
        #[command(flatten)]
        common: Common,
    },
    /// One model per training race, tested on all races.
    SingleRace {
        #[command(flatten)]
        common: Common,
    },
    /// Add images or subjects to one race of a base set.
    Growth {
        #[command(flatten)]
        common: Common,
    },
    /// Patch-blur noise at each configured probability.
    Noise {
        #[command(flatten)]
        common: Common,
    },
    /// Render a sweep results CSV as a flattened-net SVG.
    Plot {
        /// Sweep CSV (default: <output>/sweep.csv).
        #[arg(long)]
        results: Option<PathBuf>,
        #[arg(long, default_value = "arcface")]
        head: String,
        /// african|asian|caucasian|indian|mean|variance; all six when absent.
        #[arg(long)]
        metric: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Recompute summaries of the published tables.
    VerifyFixtures {
        /// Fixture file or directory (default: bundled fixtures).
        path: Option<PathBuf>,
    },
}

fn parse_overrides(raw: &[String]) -> anyhow::Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    let mut it = raw.iter();
    while let Some(flag) = it.next() {
        let Some(key) = flag.strip_prefix("--") else {
            bail!("expected --key, got {flag:?}");
        };
        match key.split_once('=') {
            Some((k, v)) => out.push((k.to_string(), v.to_string())),
            None => {
                let v = it
                    .next()
                    .with_context(|| format!("--{key} needs a value"))?;
                out.push((key.to_string(), v.clone()));
            }
        }
    }
    Ok(out)
}

fn load(common: &Common) -> anyhow::Result<ExperimentConfig> {
    let overrides = parse_overrides(&common.overrides)?;
    let cfg = ExperimentConfig::load(common.config.as_deref(), &overrides)?;
    std::fs::create_dir_all(cfg.output_path())
        .with_context(|| format!("creating {}", cfg.output_path().display()))?;
    Ok(cfg)
}

fn summarize(table: &ResultsTable) {
    for r in table.of_kind(RowKind::Mean) {
        println!(
            "{:<24} {:<12} acc {:>6.2} {:>6.2} {:>6.2} {:>6.2}  mean {:>6.2}  var {:>7.3}",
            r.key, r.head, r.acc[0], r.acc[1], r.acc[2], r.acc[3], r.mean, r.variance
        );
    }
    for r in table.of_kind(RowKind::Delta) {
        println!(
            "{:<24} {:<12} delta {:+6.2} {:+6.2} {:+6.2} {:+6.2}",
            r.key, r.head, r.acc[0], r.acc[1], r.acc[2], r.acc[3]
        );
    }
}

fn manifest_path(cfg: &ExperimentConfig) -> PathBuf {
    cfg.output_path().join("manifest.jsonl")
}

fn run(cmd: Cmd) -> anyhow::Result<bool> {
    match cmd {
        Cmd::Enumerate { total, common } => {
            let cfg = load(&common)?;
            let total = total.unwrap_or(cfg.total_subjects);
            println!("index,mix_afr,mix_asi,mix_cau,mix_ind,african_subj,asian_subj,cauc_subj,indian_subj");
            for (i, mix) in enumerate_simplex_points().iter().enumerate() {
                let c = mix_to_counts(mix, total)?.0;
                let m = mix.to_strings();
                println!(
                    "{i},{},{},{},{},{},{},{},{}",
                    m[0], m[1], m[2], m[3], c[0], c[1], c[2], c[3]
                );
            }
        }
        Cmd::Synth { common } => {
            let cfg = load(&common)?;
            let data = ExperimentData::prepare(&cfg)?;
            let dir = cfg.output_path();
            write_catalog(dir.join("catalog.csv"), &data.catalog)?;
            data.store.write(dir.join("features.bin"))?;
            data.pairs.write_csv(dir.join("pairs.csv"))?;
            println!(
                "{} training images, {} stored features, {} pairs -> {}",
                data.catalog.len(),
                data.store.len(),
                data.pairs.len(),
                dir.display()
            );
        }
        Cmd::Sample { mix, index, common } => {
            let cfg = load(&common)?;
            let mix: RaceMix = match (mix, index) {
                (Some(m), _) => m.parse()?,
                (None, Some(i)) => enumerate_simplex_points()
                    .get(i)
                    .cloned()
                    .with_context(|| format!("index {i} out of 89"))?,
                (None, None) => RaceMix::uniform(),
            };
            let data = ExperimentData::prepare(&cfg)?;
            let counts = mix_to_counts(&mix, cfg.total_subjects)?;
            let mut m = sample_manifest(&data.pool, counts, cfg.images_per_subject, cfg.seed)?;
            m.design = Design::Distribution {
                mix: Some(mix),
                counts,
            };
            m.write(manifest_path(&cfg))?;
            println!(
                "{} subjects {:?} -> {}",
                counts.total(),
                counts.0,
                manifest_path(&cfg).display()
            );
        }
        Cmd::Train { manifest, common } => {
            let cfg = load(&common)?;
            let data = ExperimentData::prepare(&cfg)?;
            let m = DatasetManifest::read(manifest.unwrap_or_else(|| manifest_path(&cfg)))?;
            let mut tc = cfg.train.clone();
            tc.head = cfg.heads[0];
            let (model, log) = train_with(&m, &data.store, &tc, None)?;
            let dir = cfg.output_path();
            save_checkpoint(&model, tc.seed, dir.join("model.bin"))?;
            log.write_csv(dir.join("train_log.csv"))?;
            println!(
                "final loss {:.4}, training accuracy {:.3} -> {}",
                log.final_loss().unwrap_or(f64::NAN),
                training_accuracy(&model, &m, &data.store)?,
                dir.join("model.bin").display()
            );
        }
        Cmd::Eval { checkpoint, common } => {
            let cfg = load(&common)?;
            let data = ExperimentData::prepare(&cfg)?;
            let path = checkpoint.unwrap_or_else(|| cfg.output_path().join("model.bin"));
            let (model, seed) = load_checkpoint(&path)?;
            let meta = ReportMeta {
                seed,
                head: model.head.name().to_string(),
                ..Default::default()
            };
            let report = evaluate(&model, &data.store, &data.pairs, meta)?;
            let json = serde_json::to_string_pretty(&report)?;
            std::fs::write(cfg.output_path().join("eval.json"), &json)?;
            println!("{json}");
        }
        Cmd::Cluster { common } => {
            let cfg = load(&common)?;
            let r = harness::run_cluster(&cfg)?;
            println!("{}", serde_json::to_string_pretty(&r)?);
        }
        Cmd::Sweep { common } => summarize(&harness::run_distribution_sweep(&load(&common)?)?),
        Cmd::SingleRace { common } => {
            let cfg = load(&common)?;
            let t = harness::run_single_race(&cfg)?;
            for head in &cfg.heads {
                println!(
                    "{}\n{}",
                    head.name(),
                    format_grid(&single_race_grid(&t, head.name())?)
                );
            }
        }
        Cmd::Growth { common } => summarize(&harness::run_growth_study(&load(&common)?)?),
        Cmd::Noise { common } => summarize(&harness::run_noise_study(&load(&common)?)?),
        Cmd::Plot {
            results,
            head,
            metric,
            out,
            common,
        } => {
            let cfg = load(&common)?;
            let results = results.unwrap_or_else(|| harness::results_path(&cfg, "sweep"));
            let table = ResultsTable::read_csv(&results)?;
            let metric: Option<Metric> = metric.map(|m| m.parse()).transpose()?;
            let svg = emit_simplex_svg(&table, &head, metric)?;
            let out = out.unwrap_or_else(|| cfg.output_path().join(format!("sweep-{head}.svg")));
            std::fs::write(&out, svg)?;
            println!("{}", out.display());
        }
        Cmd::VerifyFixtures { path } => {
            let path =
                path.unwrap_or_else(|| Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures"));
            let report = verify_fixtures(&path)?;
            print!("{}", report.render());
            return Ok(report.all_pass());
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.cmd) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            match e.downcast_ref::<Error>() {
                Some(Error::Aborted { .. }) => ExitCode::from(3),
                _ => ExitCode::FAILURE,
            }
        }
    }
}
