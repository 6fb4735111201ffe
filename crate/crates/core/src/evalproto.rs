//! Pair-matching verification: cosine scores, fold-selected thresholds,
//! per-race accuracy and the mean / population-variance fairness summary.
//!
//! Thresholds are chosen on the training folds among the training scores
//! themselves (plus both infinities), predicting a match iff
//! `score >= threshold`. Because candidates are observed scores rather than
//! midpoints, accuracy depends only on the ordering of scores and is
//! unchanged by any strictly increasing transform.

use std::collections::HashMap;
use std::path::Path;

use rand::seq::index;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{FeatureStore, ImageRecord};
use crate::distributions::RaceMix;
use crate::embednet::{Backbone, EmbeddingModel};
use crate::error::{Error, Result};
use crate::race::RaceCategory;
use crate::seeds;

pub const DEFAULT_FOLDS: usize = 10;

pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::ShapeMismatch {
            expected: a.len(),
            got: b.len(),
        });
    }
    let (mut ab, mut aa, mut bb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        ab += x * y;
        aa += x * x;
        bb += y * y;
    }
    if aa == 0.0 || bb == 0.0 {
        return Err(Error::Degenerate("cosine of a zero vector".into()));
    }
    Ok((ab / (aa.sqrt() * bb.sqrt())).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairAccuracy {
    /// Mean held-out fold accuracy, percent.
    pub accuracy: f64,
    /// Selected threshold per held-out fold (may be infinite).
    pub thresholds: Vec<f64>,
    pub fold_accuracy: Vec<f64>,
}

/// Folds are contiguous blocks of `scores.len() / folds` pairs.
pub fn pair_accuracy(scores: &[f64], labels: &[bool], folds: usize) -> Result<PairAccuracy> {
    if folds < 2 {
        return Err(Error::InvalidArgument(format!(
            "need >= 2 folds, got {folds}"
        )));
    }
    if !scores.len().is_multiple_of(folds) || scores.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "{} pairs not divisible into {folds} folds",
            scores.len()
        )));
    }
    let block = scores.len() / folds;
    let fold_of: Vec<usize> = (0..scores.len()).map(|i| i / block).collect();
    pair_accuracy_with_folds(scores, labels, &fold_of, folds)
}

/// Explicit fold assignment; every fold in `0..folds` must be non-empty.
pub fn pair_accuracy_with_folds(
    scores: &[f64],
    labels: &[bool],
    fold_of: &[usize],
    folds: usize,
) -> Result<PairAccuracy> {
    if scores.len() != labels.len() || scores.len() != fold_of.len() {
        return Err(Error::ShapeMismatch {
            expected: scores.len(),
            got: labels.len().min(fold_of.len()),
        });
    }
    if folds < 2 {
        return Err(Error::InvalidArgument(format!(
            "need >= 2 folds, got {folds}"
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::InvalidArgument("NaN score".into()));
    }
    let mut sizes = vec![0usize; folds];
    for &f in fold_of {
        if f >= folds {
            return Err(Error::InvalidArgument(format!("fold {f} >= {folds}")));
        }
        sizes[f] += 1;
    }
    if let Some(empty) = sizes.iter().position(|&n| n == 0) {
        return Err(Error::InvalidArgument(format!("fold {empty} is empty")));
    }

    let mut thresholds = Vec::with_capacity(folds);
    let mut fold_accuracy = Vec::with_capacity(folds);
    for held in 0..folds {
        let mut train: Vec<(f64, bool)> = (0..scores.len())
            .filter(|&i| fold_of[i] != held)
            .map(|i| (scores[i], labels[i]))
            .collect();
        let t = best_threshold(&mut train);
        let (mut correct, mut n) = (0usize, 0usize);
        for i in (0..scores.len()).filter(|&i| fold_of[i] == held) {
            n += 1;
            if (scores[i] >= t) == labels[i] {
                correct += 1;
            }
        }
        thresholds.push(t);
        fold_accuracy.push(correct as f64 / n as f64);
    }
    let accuracy = 100.0 * fold_accuracy.iter().sum::<f64>() / folds as f64;
    Ok(PairAccuracy {
        accuracy,
        thresholds,
        fold_accuracy,
    })
}

/// Lowest threshold among `-inf`, the distinct scores and `+inf` maximizing
/// training accuracy.
fn best_threshold(train: &mut [(f64, bool)]) -> f64 {
    train.sort_by(|a, b| a.0.total_cmp(&b.0));
    // threshold -inf: everything predicted a match
    let mut correct: i64 = train.iter().filter(|p| p.1).count() as i64;
    let mut best = (correct, f64::NEG_INFINITY);
    let mut i = 0;
    while i < train.len() {
        let v = train[i].0;
        // threshold v keeps groups >= v as matches; same count as before
        if correct > best.0 {
            best = (correct, v);
        }
        while i < train.len() && train[i].0 == v {
            correct += if train[i].1 { -1 } else { 1 };
            i += 1;
        }
    }
    if correct > best.0 {
        best = (correct, f64::INFINITY);
    }
    best.1
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReportMeta {
    pub mix: Option<RaceMix>,
    pub seed: u64,
    pub head: String,
    pub trial: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Percent, canonical race order.
    pub per_race: [f64; 4],
    pub mean: f64,
    /// Population variance (divide by 4), percent squared.
    pub variance: f64,
    pub meta: ReportMeta,
}

impl EvalReport {
    pub fn accuracy(&self, race: RaceCategory) -> f64 {
        self.per_race[race.index()]
    }
}

pub fn fairness_report(per_race: [f64; 4], meta: ReportMeta) -> EvalReport {
    let mean = per_race.iter().sum::<f64>() / 4.0;
    let variance = per_race
        .iter()
        .map(|a| (a - mean) * (a - mean))
        .sum::<f64>()
        / 4.0;
    EvalReport {
        per_race,
        mean,
        variance,
        meta,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Pair {
    pub image_a: String,
    pub image_b: String,
    pub is_match: bool,
    pub fold: Option<usize>,
}

/// Labelled verification pairs per race.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairSet {
    pub per_race: [Vec<Pair>; 4],
    pub folds: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct PairRow {
    race: RaceCategory,
    image_a: String,
    image_b: String,
    is_match: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    fold: Option<usize>,
}

fn parse_bool(s: &str) -> Result<bool> {
    match s.trim().to_ascii_lowercase().as_str() {
        "1" | "true" | "yes" => Ok(true),
        "0" | "false" | "no" => Ok(false),
        other => Err(Error::malformed("pair file", format!("is_match {other:?}"))),
    }
}

impl PairSet {
    pub fn pairs(&self, race: RaceCategory) -> &[Pair] {
        &self.per_race[race.index()]
    }

    pub fn len(&self) -> usize {
        self.per_race.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Per race: non-empty, divisible by the fold count and balanced between
    /// matches and non-matches; explicit folds, if any, on every pair.
    pub fn validate(&self) -> Result<()> {
        for race in RaceCategory::ALL {
            let pairs = self.pairs(race);
            let bad = |d: String| Err(Error::malformed("pair set", format!("{race}: {d}")));
            if pairs.is_empty() {
                return bad("no pairs".into());
            }
            let explicit = pairs.iter().filter(|p| p.fold.is_some()).count();
            if explicit != 0 && explicit != pairs.len() {
                return bad("fold column present on some pairs only".into());
            }
            if explicit == 0 && !pairs.len().is_multiple_of(self.folds) {
                return bad(format!(
                    "{} pairs not divisible by {} folds",
                    pairs.len(),
                    self.folds
                ));
            }
            let matches = pairs.iter().filter(|p| p.is_match).count();
            if 2 * matches != pairs.len() {
                return bad(format!("{matches} matches of {} pairs", pairs.len()));
            }
        }
        Ok(())
    }

    pub fn read_csv(path: impl AsRef<Path>, folds: usize) -> Result<Self> {
        let mut rdr = csv::Reader::from_path(path.as_ref())?;
        let mut per_race: [Vec<Pair>; 4] = Default::default();
        for row in rdr.deserialize() {
            let row: PairRow = row?;
            per_race[row.race.index()].push(Pair {
                image_a: row.image_a,
                image_b: row.image_b,
                is_match: parse_bool(&row.is_match)?,
                fold: row.fold,
            });
        }
        let set = PairSet { per_race, folds };
        set.validate()?;
        Ok(set)
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path)?;
        for race in RaceCategory::ALL {
            for p in self.pairs(race) {
                w.serialize(PairRow {
                    race,
                    image_a: p.image_a.clone(),
                    image_b: p.image_b.clone(),
                    is_match: if p.is_match { "1" } else { "0" }.into(),
                    fold: p.fold,
                })?;
            }
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Balanced pairs over a catalog: per race and fold, half same-subject and
/// half different-subject pairs, all within the race.
pub fn synth_pairs(
    catalog: &[ImageRecord],
    per_race: usize,
    folds: usize,
    seed: u64,
) -> Result<PairSet> {
    if folds < 2 || !per_race.is_multiple_of(2 * folds) || per_race == 0 {
        return Err(Error::InvalidArgument(format!(
            "{per_race} pairs per race must be a positive multiple of 2 x {folds} folds"
        )));
    }
    let mut by_subject: [Vec<(&str, Vec<&str>)>; 4] = Default::default();
    {
        let mut groups: HashMap<&str, (RaceCategory, Vec<&str>)> = HashMap::new();
        for r in catalog {
            groups
                .entry(r.subject_id.as_str())
                .or_insert_with(|| (r.race, Vec::new()))
                .1
                .push(r.image_id.as_str());
        }
        for (s, (race, mut imgs)) in groups {
            imgs.sort_unstable();
            by_subject[race.index()].push((s, imgs));
        }
        for list in by_subject.iter_mut() {
            list.sort_unstable_by(|a, b| a.0.cmp(b.0));
        }
    }

    let mut out: [Vec<Pair>; 4] = Default::default();
    let half = per_race / folds / 2;
    for race in RaceCategory::ALL {
        let subjects = &by_subject[race.index()];
        let multi: Vec<_> = subjects.iter().filter(|s| s.1.len() >= 2).collect();
        if multi.is_empty() || subjects.len() < 2 {
            return Err(Error::InsufficientPool {
                race,
                requested: 2,
                available: multi.len().min(subjects.len()),
            });
        }
        let mut rng = seeds::stream(seed, &["pairs", race.short()]);
        for _ in 0..folds {
            for _ in 0..half {
                let s = multi[rng.gen_range(0..multi.len())];
                let ij = index::sample(&mut rng, s.1.len(), 2);
                out[race.index()].push(Pair {
                    image_a: s.1[ij.index(0)].to_string(),
                    image_b: s.1[ij.index(1)].to_string(),
                    is_match: true,
                    fold: None,
                });
            }
            for _ in 0..half {
                let ab = index::sample(&mut rng, subjects.len(), 2);
                let (sa, sb) = (&subjects[ab.index(0)], &subjects[ab.index(1)]);
                out[race.index()].push(Pair {
                    image_a: sa.1[rng.gen_range(0..sa.1.len())].to_string(),
                    image_b: sb.1[rng.gen_range(0..sb.1.len())].to_string(),
                    is_match: false,
                    fold: None,
                });
            }
        }
    }
    Ok(PairSet {
        per_race: out,
        folds,
    })
}

/// Per-race accuracy of an arbitrary embedding function, then the fairness
/// summary.
pub fn evaluate_with<F>(embed: F, pairs: &PairSet, meta: ReportMeta) -> Result<EvalReport>
where
    F: Fn(&str) -> Result<Vec<f64>> + Sync,
{
    pairs.validate()?;
    let per_race: Vec<f64> = RaceCategory::ALL
        .par_iter()
        .map(|race| {
            let list = pairs.pairs(*race);
            let mut scores = Vec::with_capacity(list.len());
            let mut labels = Vec::with_capacity(list.len());
            for p in list {
                scores.push(cosine_similarity(&embed(&p.image_a)?, &embed(&p.image_b)?)?);
                labels.push(p.is_match);
            }
            let acc = match list[0].fold {
                Some(_) => {
                    let folds: Vec<usize> = list.iter().map(|p| p.fold.unwrap()).collect();
                    pair_accuracy_with_folds(&scores, &labels, &folds, pairs.folds)?
                }
                None => pair_accuracy(&scores, &labels, pairs.folds)?,
            };
            Ok(acc.accuracy)
        })
        .collect::<Result<_>>()?;
    Ok(fairness_report(
        [per_race[0], per_race[1], per_race[2], per_race[3]],
        meta,
    ))
}

pub fn evaluate<B: Backbone>(
    model: &EmbeddingModel<B>,
    store: &FeatureStore,
    pairs: &PairSet,
    meta: ReportMeta,
) -> Result<EvalReport> {
    // embed each distinct image once
    let mut ids: Vec<&str> = pairs
        .per_race
        .iter()
        .flatten()
        .flat_map(|p| [p.image_a.as_str(), p.image_b.as_str()])
        .collect();
    ids.sort_unstable();
    ids.dedup();
    let table: HashMap<&str, Vec<f64>> = ids
        .par_iter()
        .map(|id| {
            let x: Vec<f64> = store.require(id)?.iter().map(|v| *v as f64).collect();
            Ok((*id, model.embed(&x)?))
        })
        .collect::<Result<_>>()?;
    evaluate_with(
        |id| {
            table
                .get(id)
                .cloned()
                .ok_or_else(|| Error::MissingImage(id.to_string()))
        },
        pairs,
        meta,
    )
}
