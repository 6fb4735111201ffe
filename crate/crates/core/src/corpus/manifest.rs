//! Training manifests: which subjects and images make up one training set.
//!
//! On disk a manifest is JSON lines: a header object with the design
//! metadata, then one object per subject.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::corpus::{PoolSubject, SubjectPool};
use crate::distributions::{RaceMix, SubjectCounts};
use crate::error::{Error, Result};
use crate::race::RaceCategory;
use crate::seeds;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GrowthMode {
    MoreImages,
    MoreSubjects,
}

impl GrowthMode {
    pub fn name(self) -> &'static str {
        match self {
            GrowthMode::MoreImages => "more_images",
            GrowthMode::MoreSubjects => "more_subjects",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Design {
    Distribution {
        mix: Option<RaceMix>,
        counts: SubjectCounts,
    },
    SingleRace {
        race: RaceCategory,
    },
    GrowthBase,
    Growth {
        race: RaceCategory,
        mode: GrowthMode,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub subject_id: String,
    pub race: RaceCategory,
    pub images: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    experiment_id: String,
    design: Design,
    images_per_subject: Option<usize>,
    seed: u64,
    subjects: usize,
    images: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub experiment_id: String,
    pub design: Design,
    /// Fixed per-subject image budget, when the design has one.
    pub images_per_subject: Option<usize>,
    pub seed: u64,
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn subject_counts(&self) -> SubjectCounts {
        let mut c = [0; 4];
        for e in &self.entries {
            c[e.race.index()] += 1;
        }
        SubjectCounts(c)
    }

    pub fn image_counts(&self) -> [usize; 4] {
        let mut c = [0; 4];
        for e in &self.entries {
            c[e.race.index()] += e.images.len();
        }
        c
    }

    pub fn total_images(&self) -> usize {
        self.entries.iter().map(|e| e.images.len()).sum()
    }

    /// `(image id, identity label)` for every image, labels in entry order.
    pub fn labelled_images(&self) -> Vec<(&str, usize)> {
        self.entries
            .iter()
            .enumerate()
            .flat_map(|(label, e)| e.images.iter().map(move |id| (id.as_str(), label)))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for e in &self.entries {
            if let Some(n) = self.images_per_subject {
                if e.images.len() != n {
                    return Err(Error::malformed(
                        "manifest",
                        format!(
                            "subject {} has {} images, expected {n}",
                            e.subject_id,
                            e.images.len()
                        ),
                    ));
                }
            }
            for id in &e.images {
                if !seen.insert(id.as_str()) {
                    return Err(Error::DuplicateImage(id.clone()));
                }
            }
        }
        if let Design::Distribution { counts, .. } = &self.design {
            if self.subject_counts() != *counts {
                return Err(Error::malformed(
                    "manifest",
                    format!(
                        "subject counts {:?} differ from design {:?}",
                        self.subject_counts(),
                        counts
                    ),
                ));
            }
        }
        Ok(())
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let f = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(f);
        let header = Header {
            experiment_id: self.experiment_id.clone(),
            design: self.design.clone(),
            images_per_subject: self.images_per_subject,
            seed: self.seed,
            subjects: self.entries.len(),
            images: self.total_images(),
        };
        serde_json::to_writer(&mut w, &header)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
        for e in &self.entries {
            serde_json::to_writer(&mut w, e)?;
            w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let f = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut lines = BufReader::new(f).lines();
        let first = lines
            .next()
            .ok_or_else(|| Error::malformed("manifest", "empty file"))?
            .map_err(|e| Error::io(path, e))?;
        let header: Header = serde_json::from_str(&first)?;
        let mut entries = Vec::with_capacity(header.subjects);
        for line in lines {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            entries.push(serde_json::from_str(&line)?);
        }
        let m = DatasetManifest {
            experiment_id: header.experiment_id,
            design: header.design,
            images_per_subject: header.images_per_subject,
            seed: header.seed,
            entries,
        };
        if m.entries.len() != header.subjects || m.total_images() != header.images {
            return Err(Error::malformed(
                "manifest",
                "header totals do not match body",
            ));
        }
        Ok(m)
    }
}

/// Picks `n` of the subject's images excluding `used`, from the stream keyed
/// by `(seed, tag, subject id)`. The result keeps pool (sorted) order.
fn pick_images(
    seed: u64,
    tag: &str,
    subject: &PoolSubject,
    used: &[String],
    n: usize,
) -> Result<Vec<String>> {
    let free: Vec<&String> = subject
        .images
        .iter()
        .filter(|i| !used.contains(i))
        .collect();
    if free.len() < n {
        return Err(Error::InsufficientImages {
            subject: subject.subject_id.clone(),
            requested: n,
            available: free.len(),
        });
    }
    let mut rng = seeds::stream(seed, &[tag, &subject.subject_id]);
    let mut idx = index::sample(&mut rng, free.len(), n).into_vec();
    idx.sort_unstable();
    Ok(idx.into_iter().map(|i| free[i].clone()).collect())
}

fn entry(subject: &PoolSubject, images: Vec<String>) -> ManifestEntry {
    ManifestEntry {
        subject_id: subject.subject_id.clone(),
        race: subject.race,
        images,
    }
}

/// Top-ranked `counts[r]` subjects of each race, `images_per_subject` images
/// each drawn without replacement from a per-subject stream.
pub fn sample_manifest(
    pool: &SubjectPool,
    counts: SubjectCounts,
    images_per_subject: usize,
    seed: u64,
) -> Result<DatasetManifest> {
    let mut entries = Vec::with_capacity(counts.total());
    for race in RaceCategory::ALL {
        for s in pool.require(race, counts.get(race))? {
            entries.push(entry(
                s,
                pick_images(seed, "subject", s, &[], images_per_subject)?,
            ));
        }
    }
    let c = counts.0;
    Ok(DatasetManifest {
        experiment_id: format!("counts-{}-{}-{}-{}", c[0], c[1], c[2], c[3]),
        design: Design::Distribution { mix: None, counts },
        images_per_subject: Some(images_per_subject),
        seed,
        entries,
    })
}

/// All weight on one race. With `images_per_subject = None` every pooled
/// image of each subject is used.
pub fn single_race_manifest(
    pool: &SubjectPool,
    race: RaceCategory,
    subjects: usize,
    seed: u64,
    images_per_subject: Option<usize>,
) -> Result<DatasetManifest> {
    let mut entries = Vec::with_capacity(subjects);
    for s in pool.require(race, subjects)? {
        let images = match images_per_subject {
            Some(n) => pick_images(seed, "subject", s, &[], n)?,
            None => s.images.clone(),
        };
        entries.push(entry(s, images));
    }
    Ok(DatasetManifest {
        experiment_id: format!("single-{}", race.name()),
        design: Design::SingleRace { race },
        images_per_subject,
        seed,
        entries,
    })
}

/// Budgets for the dataset-growth design. Both growth modes add
/// `base_subjects * added_images == new_subjects * new_subject_images`
/// images to one race.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GrowthPreset {
    pub base_subjects: usize,
    pub base_images: usize,
    pub added_images: usize,
    pub new_subjects: usize,
    pub new_subject_images: usize,
}

impl GrowthPreset {
    /// 2500 subjects x 10 images per race; +5 images per subject or +1250
    /// subjects x 10 images.
    pub const PAPER: GrowthPreset = GrowthPreset {
        base_subjects: 2500,
        base_images: 10,
        added_images: 5,
        new_subjects: 1250,
        new_subject_images: 10,
    };

    pub const DESK: GrowthPreset = GrowthPreset {
        base_subjects: 100,
        base_images: 4,
        added_images: 2,
        new_subjects: 50,
        new_subject_images: 4,
    };

    pub fn added_total(&self) -> usize {
        self.base_subjects * self.added_images
    }

    pub fn validate(&self) -> Result<()> {
        if self.base_subjects * self.added_images != self.new_subjects * self.new_subject_images {
            return Err(Error::InvalidArgument(format!(
                "growth modes add different image totals: {}x{} vs {}x{}",
                self.base_subjects, self.added_images, self.new_subjects, self.new_subject_images
            )));
        }
        Ok(())
    }
}

impl Default for GrowthPreset {
    fn default() -> Self {
        Self::DESK
    }
}

/// `base_subjects` top-ranked subjects per race with `base_images` each.
pub fn growth_base_manifest(
    pool: &SubjectPool,
    preset: &GrowthPreset,
    seed: u64,
) -> Result<DatasetManifest> {
    preset.validate()?;
    let counts = SubjectCounts([preset.base_subjects; 4]);
    let mut m = sample_manifest(pool, counts, preset.base_images, seed)?;
    m.experiment_id = "growth-base".into();
    m.design = Design::GrowthBase;
    Ok(m)
}

/// Adds data to one race of a growth base manifest. `MoreImages` gives every
/// existing subject of `race` `added_images` unused images; `MoreSubjects`
/// appends the next `new_subjects` ranked pool subjects with
/// `new_subject_images` each. Other races are untouched.
pub fn grow_manifest(
    base: &DatasetManifest,
    race: RaceCategory,
    mode: GrowthMode,
    pool: &SubjectPool,
    preset: &GrowthPreset,
    seed: u64,
) -> Result<DatasetManifest> {
    preset.validate()?;
    let mut out = base.clone();
    out.experiment_id = format!("growth-{}-{}", race.name(), mode.name());
    out.design = Design::Growth { race, mode };
    out.images_per_subject = None;
    match mode {
        GrowthMode::MoreImages => {
            for e in out.entries.iter_mut().filter(|e| e.race == race) {
                let subject = pool
                    .subjects(race)
                    .iter()
                    .find(|s| s.subject_id == e.subject_id)
                    .ok_or_else(|| {
                        Error::malformed("growth base", format!("{} not in pool", e.subject_id))
                    })?;
                let extra = pick_images(seed, "grow", subject, &e.images, preset.added_images)?;
                e.images.extend(extra);
                e.images.sort();
            }
        }
        GrowthMode::MoreSubjects => {
            let present: HashSet<&str> =
                base.entries.iter().map(|e| e.subject_id.as_str()).collect();
            let fresh: Vec<&PoolSubject> = pool
                .subjects(race)
                .iter()
                .filter(|s| !present.contains(s.subject_id.as_str()))
                .take(preset.new_subjects)
                .collect();
            if fresh.len() < preset.new_subjects {
                return Err(Error::InsufficientPool {
                    race,
                    requested: preset.new_subjects,
                    available: fresh.len(),
                });
            }
            // keep entries grouped by race in canonical order
            let insert_at = out
                .entries
                .iter()
                .rposition(|e| e.race <= race)
                .map_or(0, |i| i + 1);
            let mut added = Vec::with_capacity(fresh.len());
            for s in fresh {
                added.push(entry(
                    s,
                    pick_images(seed, "subject", s, &[], preset.new_subject_images)?,
                ));
            }
            out.entries.splice(insert_at..insert_at, added);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{build_subject_pool, ImageRecord};

    fn catalog(per_race: usize, images: usize) -> Vec<ImageRecord> {
        let mut out = Vec::new();
        for race in RaceCategory::ALL {
            for s in 0..per_race {
                for i in 0..images {
                    out.push(ImageRecord {
                        image_id: format!("{}-s{s:04}-i{i:02}", race.short()),
                        subject_id: format!("{}-s{s:04}", race.short()),
                        race,
                        path: String::new(),
                        face_box: None,
                        dims: None,
                    });
                }
            }
        }
        out
    }

    #[test]
    fn table_row_manifest_sizes() {
        let pool = build_subject_pool(&catalog(3000, 20), 3000, 18).unwrap();
        let m = sample_manifest(&pool, SubjectCounts([3000, 667, 667, 666]), 18, 9).unwrap();
        assert_eq!(m.entries.len(), 5000);
        assert_eq!(m.total_images(), 90_000);
        m.validate().unwrap();
    }

    #[test]
    fn single_race_corner_and_determinism() {
        let pool = build_subject_pool(&catalog(20, 8), 20, 6).unwrap();
        let m = sample_manifest(&pool, SubjectCounts([0, 0, 0, 12]), 6, 1).unwrap();
        assert!(m.entries.iter().all(|e| e.race == RaceCategory::Indian));
        assert_eq!(
            m,
            sample_manifest(&pool, SubjectCounts([0, 0, 0, 12]), 6, 1).unwrap()
        );
        assert_ne!(
            m,
            sample_manifest(&pool, SubjectCounts([0, 0, 0, 12]), 6, 2).unwrap()
        );
        assert!(matches!(
            sample_manifest(&pool, SubjectCounts([21, 0, 0, 0]), 6, 1),
            Err(Error::InsufficientPool { .. })
        ));
    }

    #[test]
    fn single_race_uses_all_images_by_default() {
        let pool = build_subject_pool(&catalog(10, 7), 10, 1).unwrap();
        let afr = single_race_manifest(&pool, RaceCategory::African, 7, 0, None).unwrap();
        assert_eq!(afr.total_images(), 49);
        let one = single_race_manifest(&pool, RaceCategory::Asian, 1, 0, None).unwrap();
        assert_eq!(one.entries.len(), 1);
        let a: HashSet<_> = afr.entries.iter().map(|e| &e.subject_id).collect();
        assert!(one.entries.iter().all(|e| !a.contains(&e.subject_id)));
    }

    #[test]
    fn growth_modes_add_equal_totals() {
        let preset = GrowthPreset::DESK;
        let pool = build_subject_pool(&catalog(160, 6), 160, 6).unwrap();
        let base = growth_base_manifest(&pool, &preset, 4).unwrap();
        let imgs = grow_manifest(
            &base,
            RaceCategory::Caucasian,
            GrowthMode::MoreImages,
            &pool,
            &preset,
            4,
        )
        .unwrap();
        let subs = grow_manifest(
            &base,
            RaceCategory::Caucasian,
            GrowthMode::MoreSubjects,
            &pool,
            &preset,
            4,
        )
        .unwrap();
        assert_eq!(imgs.total_images(), subs.total_images());
        assert_eq!(
            imgs.total_images() - base.total_images(),
            preset.added_total()
        );
        assert_eq!(imgs.subject_counts(), base.subject_counts());
        assert_eq!(subs.subject_counts().get(RaceCategory::Caucasian), 150);
        imgs.validate().unwrap();
        subs.validate().unwrap();
        // other races untouched
        for m in [&imgs, &subs] {
            for e in m
                .entries
                .iter()
                .filter(|e| e.race != RaceCategory::Caucasian)
            {
                assert!(base.entries.contains(e));
            }
        }
        // base preserved as a subset
        for e in &base.entries {
            let grown = imgs
                .entries
                .iter()
                .find(|g| g.subject_id == e.subject_id)
                .unwrap();
            assert!(e.images.iter().all(|i| grown.images.contains(i)));
            assert!(subs.entries.contains(e));
        }
    }

    #[test]
    fn growth_fails_without_spare_data() {
        let preset = GrowthPreset::DESK;
        let pool = build_subject_pool(&catalog(100, 5), 100, 4).unwrap();
        let base = growth_base_manifest(&pool, &preset, 0).unwrap();
        assert!(grow_manifest(
            &base,
            RaceCategory::Asian,
            GrowthMode::MoreImages,
            &pool,
            &preset,
            0
        )
        .is_err());
        assert!(grow_manifest(
            &base,
            RaceCategory::Asian,
            GrowthMode::MoreSubjects,
            &pool,
            &preset,
            0
        )
        .is_err());
    }

    #[test]
    fn jsonl_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.jsonl");
        let pool = build_subject_pool(&catalog(5, 4), 5, 3).unwrap();
        let mut m = sample_manifest(&pool, SubjectCounts([2, 1, 0, 2]), 3, 11).unwrap();
        m.design = Design::Distribution {
            mix: Some(RaceMix::uniform()),
            counts: m.subject_counts(),
        };
        m.write(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 6);
        assert!(text.lines().next().unwrap().contains("\"1/4\""));
        assert_eq!(DatasetManifest::read(&path).unwrap(), m);
    }
}
