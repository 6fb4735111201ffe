use std::collections::{BTreeMap, HashSet};

use crate::corpus::ImageRecord;
use crate::error::{Error, Result};
use crate::race::RaceCategory;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PoolSubject {
    pub subject_id: String,
    pub race: RaceCategory,
    /// Sorted ascending so selection never depends on catalog row order.
    pub images: Vec<String>,
}

/// Per race, the best-covered subjects ranked by descending image count.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubjectPool {
    per_race: [Vec<PoolSubject>; 4],
    cap: usize,
    min_images: usize,
}

impl SubjectPool {
    pub fn subjects(&self, race: RaceCategory) -> &[PoolSubject] {
        &self.per_race[race.index()]
    }

    pub fn len(&self, race: RaceCategory) -> usize {
        self.per_race[race.index()].len()
    }

    pub fn cap(&self) -> usize {
        self.cap
    }

    pub fn min_images(&self) -> usize {
        self.min_images
    }

    /// Races whose pool holds fewer than `cap` subjects, with their size.
    pub fn short_races(&self) -> Vec<(RaceCategory, usize)> {
        RaceCategory::ALL
            .iter()
            .filter(|r| self.len(**r) < self.cap)
            .map(|r| (*r, self.len(*r)))
            .collect()
    }

    pub(crate) fn require(&self, race: RaceCategory, n: usize) -> Result<&[PoolSubject]> {
        let subs = self.subjects(race);
        if subs.len() < n {
            return Err(Error::InsufficientPool {
                race,
                requested: n,
                available: subs.len(),
            });
        }
        Ok(&subs[..n])
    }
}

/// Ranks subjects per race by image count (ties by ascending subject id),
/// drops those with fewer than `images_per_subject` images and keeps the top
/// `per_race_cap`.
pub fn build_subject_pool(
    catalog: &[ImageRecord],
    per_race_cap: usize,
    images_per_subject: usize,
) -> Result<SubjectPool> {
    if catalog.is_empty() {
        return Err(Error::InvalidArgument("empty catalog".into()));
    }
    let mut subjects: BTreeMap<&str, (RaceCategory, Vec<String>)> = BTreeMap::new();
    let mut seen = HashSet::new();
    for rec in catalog {
        if !seen.insert(rec.image_id.as_str()) {
            return Err(Error::DuplicateImage(rec.image_id.clone()));
        }
        let entry = subjects
            .entry(rec.subject_id.as_str())
            .or_insert_with(|| (rec.race, Vec::new()));
        if entry.0 != rec.race {
            return Err(Error::malformed(
                "catalog",
                format!(
                    "subject {} labelled both {} and {}",
                    rec.subject_id, entry.0, rec.race
                ),
            ));
        }
        entry.1.push(rec.image_id.clone());
    }

    let mut per_race: [Vec<PoolSubject>; 4] = Default::default();
    for (id, (race, mut images)) in subjects {
        if images.len() < images_per_subject {
            continue;
        }
        images.sort();
        per_race[race.index()].push(PoolSubject {
            subject_id: id.to_string(),
            race,
            images,
        });
    }
    for list in per_race.iter_mut() {
        // BTreeMap iteration already gives ascending ids; the sort is stable
        list.sort_by_key(|s| std::cmp::Reverse(s.images.len()));
        list.truncate(per_race_cap);
    }
    Ok(SubjectPool {
        per_race,
        cap: per_race_cap,
        min_images: images_per_subject,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn catalog_with_counts(race: RaceCategory, counts: &[usize]) -> Vec<ImageRecord> {
        let mut out = Vec::new();
        for (s, &n) in counts.iter().enumerate() {
            for i in 0..n {
                out.push(ImageRecord {
                    image_id: format!("{}-s{s:03}-i{i:03}", race.short()),
                    subject_id: format!("{}-s{s:03}", race.short()),
                    race,
                    path: String::new(),
                    face_box: None,
                    dims: None,
                });
            }
        }
        out
    }

    #[test]
    fn single_subject_pool() {
        let cat = catalog_with_counts(RaceCategory::Asian, &[20]);
        let pool = build_subject_pool(&cat, 1, 18).unwrap();
        assert_eq!(pool.len(RaceCategory::Asian), 1);
        assert_eq!(pool.subjects(RaceCategory::Asian)[0].images.len(), 20);
    }

    #[test]
    fn sort_filter_and_truncate() {
        let counts: Vec<usize> = (1..=30).collect();
        let cat = catalog_with_counts(RaceCategory::African, &counts);
        let pool = build_subject_pool(&cat, 10, 18).unwrap();
        let got: Vec<usize> = pool
            .subjects(RaceCategory::African)
            .iter()
            .map(|s| s.images.len())
            .collect();
        // oracle: filter >= 18, sort descending, take 10
        let mut expect: Vec<usize> = counts.iter().copied().filter(|&c| c >= 18).collect();
        expect.sort_by(|a, b| b.cmp(a));
        expect.truncate(10);
        assert_eq!(got, expect);
        assert_eq!(got, (21..=30).rev().collect::<Vec<_>>());
        let short = pool.short_races();
        assert_eq!(short.len(), 3);
        assert!(short
            .iter()
            .all(|(r, n)| *r != RaceCategory::African && *n == 0));
    }

    #[test]
    fn ties_rank_by_subject_id() {
        let cat = catalog_with_counts(RaceCategory::Indian, &[5, 7, 5, 7]);
        let pool = build_subject_pool(&cat, 4, 1).unwrap();
        let ids: Vec<&str> = pool
            .subjects(RaceCategory::Indian)
            .iter()
            .map(|s| s.subject_id.as_str())
            .collect();
        assert_eq!(ids, ["ind-s001", "ind-s003", "ind-s000", "ind-s002"]);
    }

    #[test]
    fn inconsistent_race_or_duplicate_image_fails() {
        let mut cat = catalog_with_counts(RaceCategory::Indian, &[2]);
        let mut dup = cat[0].clone();
        assert!(matches!(
            build_subject_pool(&[dup.clone(), dup.clone()], 1, 1),
            Err(Error::DuplicateImage(_))
        ));
        dup.image_id = "other".into();
        dup.race = RaceCategory::Asian;
        cat.push(dup);
        assert!(build_subject_pool(&cat, 1, 1).is_err());
        assert!(build_subject_pool(&[], 1, 1).is_err());
    }
}
