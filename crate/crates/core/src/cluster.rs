//! Race compactness of an embedding space.
//!
//! Distances are cosine distances `1 - cos(x, y)` on raw embeddings. Each
//! sampled image takes its `k` nearest neighbors from the pooled sample
//! (itself excluded); neighbors vote for their own race with weight
//! `1 / max(d, epsilon)`.

use std::path::Path;

use rand::seq::index;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::race::RaceCategory;
use crate::seeds;

/// Embeddings grouped by race, canonical order.
pub type RaceGroups = [Vec<Vec<f64>>; 4];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClusterConfig {
    pub k: usize,
    pub samples_per_race: usize,
    pub seed: u64,
    pub epsilon: f64,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        Self {
            k: 20,
            samples_per_race: 5000,
            seed: 0,
            epsilon: 1e-6,
        }
    }
}

impl ClusterConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.samples_per_race < self.k + 1 || !(self.epsilon > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "cluster config needs k >= 1, samples > k, epsilon > 0: {self:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterReport {
    /// Mean cosine distance to the race's mean vector.
    pub compactness: [f64; 4],
    /// `membership[true race][assigned race]`, rows sum to 1.
    pub membership: [[f64; 4]; 4],
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn unit(v: &[f64]) -> Result<Vec<f64>> {
    let n = norm(v);
    if n == 0.0 {
        return Err(Error::Degenerate("zero embedding".into()));
    }
    Ok(v.iter().map(|x| x / n).collect())
}

fn cos_dist(a: &[f64], b: &[f64]) -> f64 {
    // inputs are unit vectors
    1.0 - a
        .iter()
        .zip(b)
        .map(|(x, y)| x * y)
        .sum::<f64>()
        .clamp(-1.0, 1.0)
}

pub fn intra_race_cosine(groups: &RaceGroups) -> Result<[f64; 4]> {
    let mut out = [0.0; 4];
    for race in RaceCategory::ALL {
        let g = &groups[race.index()];
        if g.is_empty() {
            return Err(Error::InvalidArgument(format!("no embeddings for {race}")));
        }
        let dim = g[0].len();
        let mut mean = vec![0.0; dim];
        for x in g {
            if x.len() != dim {
                return Err(Error::ShapeMismatch {
                    expected: dim,
                    got: x.len(),
                });
            }
            for (m, v) in mean.iter_mut().zip(x) {
                *m += v;
            }
        }
        let mu =
            unit(&mean).map_err(|_| Error::Degenerate(format!("{race} mean embedding is zero")))?;
        let mut total = 0.0;
        for x in g {
            total += cos_dist(&unit(x)?, &mu);
        }
        out[race.index()] = total / g.len() as f64;
    }
    Ok(out)
}

/// Weighted k-NN race vote for every point against all other points.
/// Distance ties go to the lower pool index; vote ties to the earlier race.
pub fn knn_assign(
    points: &[Vec<f64>],
    races: &[RaceCategory],
    k: usize,
    epsilon: f64,
) -> Result<Vec<RaceCategory>> {
    if points.len() != races.len() {
        return Err(Error::ShapeMismatch {
            expected: points.len(),
            got: races.len(),
        });
    }
    if k == 0 || k >= points.len() {
        return Err(Error::InvalidArgument(format!(
            "k = {k} needs at least k + 1 points, have {}",
            points.len()
        )));
    }
    let units: Vec<Vec<f64>> = points.iter().map(|p| unit(p)).collect::<Result<_>>()?;
    Ok((0..units.len())
        .into_par_iter()
        .map(|q| {
            let mut d: Vec<(f64, usize)> = units
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != q)
                .map(|(j, u)| (cos_dist(&units[q], u), j))
                .collect();
            let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
            d.select_nth_unstable_by(k - 1, cmp);
            let mut near = d[..k].to_vec();
            near.sort_by(cmp);
            let mut votes = [0.0; 4];
            for (dist, j) in near {
                votes[races[j].index()] += 1.0 / dist.max(epsilon);
            }
            let mut best = 0;
            for r in 1..4 {
                if votes[r] > votes[best] {
                    best = r;
                }
            }
            RaceCategory::ALL[best]
        })
        .collect())
}

/// Samples `samples_per_race` embeddings per race without replacement,
/// pools them in canonical race order and tallies k-NN assignments.
pub fn knn_membership(groups: &RaceGroups, cfg: &ClusterConfig) -> Result<[[f64; 4]; 4]> {
    cfg.validate()?;
    let mut points = Vec::with_capacity(4 * cfg.samples_per_race);
    let mut races = Vec::with_capacity(4 * cfg.samples_per_race);
    for race in RaceCategory::ALL {
        let g = &groups[race.index()];
        if g.len() < cfg.samples_per_race {
            return Err(Error::InsufficientPool {
                race,
                requested: cfg.samples_per_race,
                available: g.len(),
            });
        }
        let mut rng = seeds::stream(cfg.seed, &["cluster", race.short()]);
        let mut idx = index::sample(&mut rng, g.len(), cfg.samples_per_race).into_vec();
        idx.sort_unstable();
        for i in idx {
            points.push(g[i].clone());
            races.push(race);
        }
    }
    let assigned = knn_assign(&points, &races, cfg.k, cfg.epsilon)?;
    let mut counts = [[0usize; 4]; 4];
    for (t, a) in races.iter().zip(&assigned) {
        counts[t.index()][a.index()] += 1;
    }
    Ok(counts.map(|row| row.map(|c| c as f64 / cfg.samples_per_race as f64)))
}

pub fn cluster_report(groups: &RaceGroups, cfg: &ClusterConfig) -> Result<ClusterReport> {
    Ok(ClusterReport {
        compactness: intra_race_cosine(groups)?,
        membership: knn_membership(groups, cfg)?,
    })
}

impl ClusterReport {
    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, serde_json::to_vec_pretty(self)?).map_err(|e| Error::io(path, e))
    }

    /// One row per true race: compactness then the membership fractions.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path)?;
        w.write_record([
            "race",
            "compactness",
            "to_afr",
            "to_asi",
            "to_cau",
            "to_ind",
        ])?;
        for race in RaceCategory::ALL {
            let i = race.index();
            let mut rec = vec![race.name().to_string(), self.compactness[i].to_string()];
            rec.extend(self.membership[i].iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn blobs(n: usize, spread: f64, shared: bool, seed: u64) -> RaceGroups {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        std::array::from_fn(|r| {
            (0..n)
                .map(|_| {
                    (0..6)
                        .map(|d| {
                            let center = if shared {
                                f64::from(d == 0)
                            } else {
                                f64::from(d == r)
                            };
                            center + spread * rng.sample::<f64, _>(StandardNormal)
                        })
                        .collect()
                })
                .collect()
        })
    }

    #[test]
    fn compactness_examples() {
        let mut g = blobs(5, 0.0, false, 1);
        assert_eq!(intra_race_cosine(&g).unwrap(), [0.0; 4]);
        g[0] = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let c = intra_race_cosine(&g).unwrap();
        assert!((c[0] - (1.0 - 0.5f64.sqrt())).abs() < 1e-4);
        let scaled: RaceGroups = g.clone().map(|v| {
            v.into_iter()
                .map(|x| x.iter().map(|a| a * 3.0).collect())
                .collect()
        });
        let cs = intra_race_cosine(&scaled).unwrap();
        for r in 0..4 {
            assert!((cs[r] - c[r]).abs() < 1e-12);
        }
        g[1] = vec![vec![1.0, 0.0], vec![-1.0, 0.0]];
        assert!(intra_race_cosine(&g).is_err());
    }

    #[test]
    fn contraction_toward_mean_never_loosens() {
        let g = blobs(40, 0.8, false, 2);
        let shrink = |f: f64| -> RaceGroups {
            g.clone().map(|v| {
                let dim = v[0].len();
                let mean: Vec<f64> = (0..dim)
                    .map(|d| v.iter().map(|x| x[d]).sum::<f64>() / v.len() as f64)
                    .collect();
                v.iter()
                    .map(|x| x.iter().zip(&mean).map(|(a, m)| m + f * (a - m)).collect())
                    .collect()
            })
        };
        let (a, b, c) = (
            intra_race_cosine(&shrink(1.0)).unwrap(),
            intra_race_cosine(&shrink(0.5)).unwrap(),
            intra_race_cosine(&shrink(0.0)).unwrap(),
        );
        for r in 0..4 {
            assert!(a[r] >= b[r] && b[r] >= c[r] && c[r].abs() < 1e-12);
        }
    }

    #[test]
    fn separated_blobs_give_identity() {
        let g = blobs(10, 0.0, false, 3);
        let m = knn_membership(
            &g,
            &ClusterConfig {
                k: 3,
                samples_per_race: 10,
                ..Default::default()
            },
        )
        .unwrap();
        for r in 0..4 {
            for c in 0..4 {
                assert_eq!(m[r][c], f64::from(r == c));
            }
        }
    }

    #[test]
    fn k1_matches_all_pairs_oracle() {
        for seed in 0..5 {
            let g = blobs(20, 1.0, false, seed);
            let points: Vec<Vec<f64>> = g.iter().flatten().cloned().collect();
            let races: Vec<RaceCategory> = (0..80).map(|i| RaceCategory::ALL[i / 20]).collect();
            let got = knn_assign(&points, &races, 1, 1e-6).unwrap();
            for q in 0..80 {
                let mut best = (f64::INFINITY, 0);
                for j in 0..80 {
                    if j == q {
                        continue;
                    }
                    let dot: f64 = points[q].iter().zip(&points[j]).map(|(a, b)| a * b).sum();
                    let d = 1.0 - dot / (norm(&points[q]) * norm(&points[j]));
                    if d < best.0 {
                        best = (d, j);
                    }
                }
                assert_eq!(got[q], races[best.1]);
            }
        }
    }

    #[test]
    fn rescaling_keeps_assignments() {
        let g = blobs(30, 1.0, false, 4);
        let points: Vec<Vec<f64>> = g.iter().flatten().cloned().collect();
        let races: Vec<RaceCategory> = (0..120).map(|i| RaceCategory::ALL[i / 30]).collect();
        let a = knn_assign(&points, &races, 5, 1e-6).unwrap();
        let scaled: Vec<Vec<f64>> = points
            .iter()
            .map(|p| p.iter().map(|v| v * 4.0).collect())
            .collect();
        assert_eq!(a, knn_assign(&scaled, &races, 5, 1e-6).unwrap());
    }

    #[test]
    fn identical_distributions_are_symmetric() {
        let mut sums = [[0.0; 4]; 4];
        let seeds = 10;
        for seed in 0..seeds {
            let g = blobs(100, 1.0, true, 100 + seed);
            let m = knn_membership(
                &g,
                &ClusterConfig {
                    k: 20,
                    samples_per_race: 100,
                    seed,
                    ..Default::default()
                },
            )
            .unwrap();
            for r in 0..4 {
                assert!((m[r].iter().sum::<f64>() - 1.0).abs() < 1e-9);
                for c in 0..4 {
                    sums[r][c] += m[r][c] / seeds as f64;
                }
            }
        }
        for row in sums {
            for v in row {
                assert!((v - 0.25).abs() < 0.05, "{sums:?}");
            }
        }
    }

    #[test]
    fn config_and_pool_errors() {
        let g = blobs(5, 0.1, false, 5);
        assert!(knn_membership(
            &g,
            &ClusterConfig {
                k: 5,
                samples_per_race: 5,
                ..Default::default()
            }
        )
        .is_err());
        assert!(knn_membership(
            &g,
            &ClusterConfig {
                k: 2,
                samples_per_race: 6,
                ..Default::default()
            }
        )
        .is_err());
    }
}
