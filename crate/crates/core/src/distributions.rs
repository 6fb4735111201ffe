//! Race-mix enumeration on four nested 3-simplexes, integer apportionment of
//! mixes to subject counts, and the flattened-net plot layout.
//!
//! All mix arithmetic is exact (`Ratio<i64>`); floats only appear in plot
//! coordinates and in the secondary apportionment tie-break.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use num_rational::Ratio;
use num_traits::{One, Zero};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::race::RaceCategory;

pub type Weight = Ratio<i64>;

/// Composition of a training set as exact fractions per race.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RaceMix {
    weights: [Weight; 4],
}

impl RaceMix {
    pub fn new(weights: [Weight; 4]) -> Result<Self> {
        if weights.iter().any(|w| *w < Weight::zero()) {
            return Err(Error::InvalidMix(format!("negative weight in {weights:?}")));
        }
        let sum: Weight = weights.iter().sum();
        if !sum.is_one() {
            return Err(Error::InvalidMix(format!("weights sum to {sum}, not 1")));
        }
        Ok(Self { weights })
    }

    pub fn uniform() -> Self {
        Self {
            weights: [Weight::new(1, 4); 4],
        }
    }

    pub fn single(race: RaceCategory) -> Self {
        let mut weights = [Weight::zero(); 4];
        weights[race.index()] = Weight::one();
        Self { weights }
    }

    pub fn weights(&self) -> &[Weight; 4] {
        &self.weights
    }

    pub fn weight(&self, race: RaceCategory) -> Weight {
        self.weights[race.index()]
    }

    pub fn is_uniform(&self) -> bool {
        *self == Self::uniform()
    }

    /// Weights as `num/den` strings in canonical race order.
    pub fn to_strings(&self) -> [String; 4] {
        self.weights.map(|w| format!("{}/{}", w.numer(), w.denom()))
    }

    pub fn from_strs(parts: &[&str]) -> Result<Self> {
        if parts.len() != 4 {
            return Err(Error::InvalidMix(format!(
                "expected 4 weights, got {}",
                parts.len()
            )));
        }
        let mut weights = [Weight::zero(); 4];
        for (slot, p) in weights.iter_mut().zip(parts) {
            *slot = parse_weight(p)?;
        }
        Self::new(weights)
    }

    pub fn to_f64(&self) -> [f64; 4] {
        self.weights.map(ratio_to_f64)
    }
}

impl fmt::Display for RaceMix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = self.to_strings();
        write!(f, "({}, {}, {}, {})", s[0], s[1], s[2], s[3])
    }
}

impl FromStr for RaceMix {
    type Err = Error;

    /// Accepts four weights separated by commas, semicolons or whitespace.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s
            .trim_matches(|c| c == '(' || c == ')')
            .split(|c: char| c == ',' || c == ';' || c.is_whitespace())
            .filter(|p| !p.is_empty())
            .collect();
        Self::from_strs(&parts)
    }
}

impl Serialize for RaceMix {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_strings().serialize(s)
    }
}

impl<'de> Deserialize<'de> for RaceMix {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let parts = <[String; 4]>::deserialize(d)?;
        let refs: Vec<&str> = parts.iter().map(String::as_str).collect();
        RaceMix::from_strs(&refs).map_err(serde::de::Error::custom)
    }
}

/// Parses `num/den`, an integer, or a terminating decimal such as `0.25`.
pub fn parse_weight(s: &str) -> Result<Weight> {
    let s = s.trim();
    let bad = || Error::InvalidMix(format!("cannot parse weight {s:?}"));
    if let Some((n, d)) = s.split_once('/') {
        let n: i64 = n.trim().parse().map_err(|_| bad())?;
        let d: i64 = d.trim().parse().map_err(|_| bad())?;
        if d == 0 {
            return Err(bad());
        }
        return Ok(Weight::new(n, d));
    }
    if let Some((int, frac)) = s.split_once('.') {
        if frac.len() > 12 || !frac.chars().all(|c| c.is_ascii_digit()) {
            return Err(bad());
        }
        let den = 10i64.pow(frac.len() as u32);
        let int: i64 = if int.is_empty() {
            0
        } else {
            int.parse().map_err(|_| bad())?
        };
        let frac: i64 = if frac.is_empty() {
            0
        } else {
            frac.parse().map_err(|_| bad())?
        };
        return Ok(Weight::new(int * den + frac, den));
    }
    s.parse::<i64>()
        .map(Weight::from_integer)
        .map_err(|_| bad())
}

fn ratio_to_f64(w: Weight) -> f64 {
    *w.numer() as f64 / *w.denom() as f64
}

/// One nested simplex: corners are permutations of `(high, low, low, low)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SimplexLevel {
    pub high: Weight,
    pub low: Weight,
}

/// Outermost to innermost.
pub const LEVELS: [SimplexLevel; 4] = [
    SimplexLevel {
        high: Ratio::new_raw(1, 1),
        low: Ratio::new_raw(0, 1),
    },
    SimplexLevel {
        high: Ratio::new_raw(3, 5),
        low: Ratio::new_raw(2, 15),
    },
    SimplexLevel {
        high: Ratio::new_raw(2, 5),
        low: Ratio::new_raw(1, 5),
    },
    SimplexLevel {
        high: Ratio::new_raw(3, 10),
        low: Ratio::new_raw(7, 30),
    },
];

/// Interpolation parameters along each simplex edge.
pub const EDGE_STEPS: [Ratio<i64>; 3] = [
    Ratio::new_raw(1, 4),
    Ratio::new_raw(1, 2),
    Ratio::new_raw(3, 4),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PointKind {
    Uniform,
    Corner {
        level: usize,
        race: RaceCategory,
    },
    /// `(1 - t) * corner(from) + t * corner(to)`, with `from < to`.
    Edge {
        level: usize,
        from: RaceCategory,
        to: RaceCategory,
        t: Ratio<i64>,
    },
}

impl PointKind {
    pub fn level(&self) -> Option<usize> {
        match *self {
            PointKind::Uniform => None,
            PointKind::Corner { level, .. } | PointKind::Edge { level, .. } => Some(level),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SimplexPoint {
    pub mix: RaceMix,
    pub kind: PointKind,
}

fn corner(level: SimplexLevel, race: RaceCategory) -> [Weight; 4] {
    let mut w = [level.low; 4];
    w[race.index()] = level.high;
    w
}

/// The 89 design points with their provenance, in enumeration order.
pub fn simplex_points() -> Vec<SimplexPoint> {
    let mut out = Vec::with_capacity(89);
    out.push(SimplexPoint {
        mix: RaceMix::uniform(),
        kind: PointKind::Uniform,
    });
    for (li, level) in LEVELS.iter().enumerate() {
        for race in RaceCategory::ALL {
            out.push(SimplexPoint {
                mix: RaceMix {
                    weights: corner(*level, race),
                },
                kind: PointKind::Corner { level: li, race },
            });
        }
        for (ai, &from) in RaceCategory::ALL.iter().enumerate() {
            for &to in &RaceCategory::ALL[ai + 1..] {
                let a = corner(*level, from);
                let b = corner(*level, to);
                for t in EDGE_STEPS {
                    let mut w = [Weight::zero(); 4];
                    for i in 0..4 {
                        w[i] = (Weight::one() - t) * a[i] + t * b[i];
                    }
                    out.push(SimplexPoint {
                        mix: RaceMix { weights: w },
                        kind: PointKind::Edge {
                            level: li,
                            from,
                            to,
                            t,
                        },
                    });
                }
            }
        }
    }
    out
}

pub fn enumerate_simplex_points() -> Vec<RaceMix> {
    simplex_points().into_iter().map(|p| p.mix).collect()
}

/// Integer subject counts per race.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SubjectCounts(pub [usize; 4]);

impl SubjectCounts {
    pub fn get(&self, race: RaceCategory) -> usize {
        self.0[race.index()]
    }

    pub fn total(&self) -> usize {
        self.0.iter().sum()
    }

    pub fn single(race: RaceCategory, n: usize) -> Self {
        let mut c = [0; 4];
        c[race.index()] = n;
        SubjectCounts(c)
    }
}

/// Largest-remainder apportionment of `total` subjects.
///
/// Floors and remainders are exact. Units left over go to the largest exact
/// remainders; races whose exact remainders tie are ordered by the remainder
/// of the double-precision percent product `f64(100 w) * (total / 100)`
/// (larger first, which matches counts produced by percent-based float
/// apportionment), then by canonical race order.
pub fn mix_to_counts(mix: &RaceMix, total: usize) -> Result<SubjectCounts> {
    if total == 0 {
        return Err(Error::InvalidArgument("total must be at least 1".into()));
    }
    let t = total as i128;
    struct Share {
        floor: i128,
        rem_num: i128,
        den: i128,
        float_rem: f64,
    }
    let shares: Vec<Share> = mix
        .weights
        .iter()
        .map(|w| {
            let n = *w.numer() as i128 * t;
            let d = *w.denom() as i128;
            let floor = n.div_euclid(d);
            let pct = *w * 100;
            let pct_f = *pct.numer() as f64 / *pct.denom() as f64;
            Share {
                floor,
                rem_num: n - floor * d,
                den: d,
                float_rem: pct_f * (total as f64 / 100.0) - floor as f64,
            }
        })
        .collect();
    let assigned: i128 = shares.iter().map(|s| s.floor).sum();
    let leftover = (t - assigned) as usize;

    let mut order: Vec<usize> = (0..4).collect();
    order.sort_by(|&a, &b| {
        let (sa, sb) = (&shares[a], &shares[b]);
        // rem_a / den_a vs rem_b / den_b, descending
        (sb.rem_num * sa.den)
            .cmp(&(sa.rem_num * sb.den))
            .then_with(|| {
                sb.float_rem
                    .partial_cmp(&sa.float_rem)
                    .unwrap_or(Ordering::Equal)
            })
            .then_with(|| a.cmp(&b))
    });
    let mut counts = shares.iter().map(|s| s.floor as usize).collect::<Vec<_>>();
    for &i in order.iter().take(leftover) {
        counts[i] += 1;
    }
    Ok(SubjectCounts([counts[0], counts[1], counts[2], counts[3]]))
}

// ---------------------------------------------------------------------------
// Flattened tetrahedron net
// ---------------------------------------------------------------------------

/// A face of the tetrahedron, named by the race it omits. The face omitting
/// Indian is the central (inverted) triangle of the net; the other three are
/// the corner flaps, each sitting opposite its omitted race's central vertex.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NetFace(pub RaceCategory);

impl NetFace {
    pub const CENTRAL: NetFace = NetFace(RaceCategory::Indian);

    pub fn is_central(self) -> bool {
        self == Self::CENTRAL
    }

    pub fn retained(self) -> [RaceCategory; 3] {
        let mut out = [RaceCategory::African; 3];
        let mut k = 0;
        for r in RaceCategory::ALL {
            if r != self.0 {
                out[k] = r;
                k += 1;
            }
        }
        out
    }

    /// Barycentric position (w.r.t. the big triangle's corners top,
    /// bottom-left, bottom-right) of this face's vertex for `race`.
    fn vertex(self, race: RaceCategory) -> [Weight; 3] {
        let h = Weight::new(1, 2);
        let z = Weight::zero();
        let o = Weight::one();
        // central vertices sit at the big triangle's edge midpoints
        let central = |r: RaceCategory| match r {
            RaceCategory::African => [z, h, h],
            RaceCategory::Asian => [h, z, h],
            RaceCategory::Caucasian => [h, h, z],
            RaceCategory::Indian => unreachable!("central face omits indian"),
        };
        if race != RaceCategory::Indian {
            return central(race);
        }
        match self.0 {
            RaceCategory::African => [o, z, z],
            RaceCategory::Asian => [z, o, z],
            RaceCategory::Caucasian => [z, z, o],
            RaceCategory::Indian => unreachable!("central face has no indian vertex"),
        }
    }
}

/// Big-triangle corner of a flap, used for labelling.
pub fn flap_corner_label(face: NetFace) -> Option<RaceCategory> {
    (!face.is_central()).then_some(face.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlotInstance {
    pub mix: RaceMix,
    pub face: NetFace,
    /// Exact barycentric coordinates in the big triangle.
    pub barycentric: [Weight; 3],
    /// Cartesian position in a unit-side triangle with the apex at
    /// `(0.5, 0)` and y growing downward.
    pub position: [f64; 2],
}

const CORNERS: [[f64; 2]; 3] = [
    [0.5, 0.0],
    [0.0, 0.866_025_403_784_438_6],
    [1.0, 0.866_025_403_784_438_6],
];

fn face_position(face: NetFace, mix: &RaceMix) -> [Weight; 3] {
    let kept = face.retained();
    let norm: Weight = kept.iter().map(|r| mix.weight(*r)).sum();
    let mut bary = [Weight::zero(); 3];
    for r in kept {
        let share = mix.weight(r) / norm;
        let v = face.vertex(r);
        for i in 0..3 {
            bary[i] += share * v[i];
        }
    }
    bary
}

fn to_cartesian(b: &[Weight; 3]) -> [f64; 2] {
    let mut p = [0.0; 2];
    for (w, c) in b.iter().zip(CORNERS.iter()) {
        let w = ratio_to_f64(*w);
        p[0] += w * c[0];
        p[1] += w * c[1];
    }
    p
}

const FACES: [NetFace; 4] = [
    NetFace(RaceCategory::Indian),
    NetFace(RaceCategory::African),
    NetFace(RaceCategory::Asian),
    NetFace(RaceCategory::Caucasian),
];

/// Places every mix on the flattened net. A level-`s` point appears on face
/// `d` iff its `d` weight equals that level's low value; the uniform mix
/// appears at every face centroid. Coincident instances (outer-level points on
/// the central triangle's edges and vertices) are merged into one marker.
pub fn net_layout(points: &[RaceMix]) -> Result<Vec<PlotInstance>> {
    let catalog = simplex_points();
    let mut out: Vec<PlotInstance> = Vec::new();
    let mut seen: std::collections::HashMap<[Weight; 3], usize> = Default::default();
    for mix in points {
        let kind = catalog
            .iter()
            .find(|p| p.mix == *mix)
            .map(|p| p.kind)
            .ok_or_else(|| Error::UnknownMix(mix.to_string()))?;
        for face in FACES {
            let on_face = match kind.level() {
                None => true,
                Some(level) => mix.weight(face.0) == LEVELS[level].low,
            };
            if !on_face {
                continue;
            }
            let bary = face_position(face, mix);
            if let Some(&i) = seen.get(&bary) {
                debug_assert_eq!(out[i].mix, *mix);
                continue;
            }
            seen.insert(bary, out.len());
            out.push(PlotInstance {
                mix: *mix,
                face,
                barycentric: bary,
                position: to_cartesian(&bary),
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn r(n: i64, d: i64) -> Weight {
        Weight::new(n, d)
    }

    fn mix(w: [(i64, i64); 4]) -> RaceMix {
        RaceMix::new(w.map(|(n, d)| r(n, d))).unwrap()
    }

    #[test]
    fn rejects_bad_mixes() {
        assert!(RaceMix::new([r(1, 2), r(1, 2), r(1, 2), r(-1, 2)]).is_err());
        assert!(RaceMix::new([r(1, 2), r(1, 4), r(0, 1), r(0, 1)]).is_err());
    }

    #[test]
    fn enumeration_contains_paper_corners() {
        let pts = enumerate_simplex_points();
        assert_eq!(pts.len(), 89);
        assert!(pts.contains(&mix([(1, 1), (0, 1), (0, 1), (0, 1)])));
        assert!(pts.contains(&mix([(3, 10), (7, 30), (7, 30), (7, 30)])));
        assert!(pts.contains(&mix([(3, 4), (0, 1), (0, 1), (1, 4)])));
        assert!(pts[0].is_uniform());
    }

    #[test]
    fn enumeration_is_deterministic() {
        assert_eq!(enumerate_simplex_points(), enumerate_simplex_points());
    }

    #[test]
    fn apportionment_examples() {
        let c = mix_to_counts(&mix([(3, 5), (2, 15), (2, 15), (2, 15)]), 5000).unwrap();
        assert_eq!(c.0, [3000, 667, 667, 666]);
        let c = mix_to_counts(&mix([(17, 60), (7, 30), (7, 30), (1, 4)]), 5000).unwrap();
        assert_eq!(c.0, [1417, 1167, 1166, 1250]);
        let c = mix_to_counts(&mix([(3, 10), (7, 30), (7, 30), (7, 30)]), 5000).unwrap();
        assert_eq!(c.0, [1500, 1167, 1167, 1166]);
        assert_eq!(
            mix_to_counts(&RaceMix::uniform(), 4).unwrap().0,
            [1, 1, 1, 1]
        );
        assert!(mix_to_counts(&RaceMix::uniform(), 0).is_err());
    }

    #[test]
    fn float_tie_break_applies_only_to_exact_ties() {
        // exact remainders 2/3 for afr, asi, ind; the double remainders rank
        // afr and ind above asi
        let c = mix_to_counts(&mix([(2, 15), (2, 15), (1, 4), (29, 60)]), 5000).unwrap();
        assert_eq!(c.0, [667, 666, 1250, 2417]);
    }

    #[test]
    fn weight_parsing() {
        assert_eq!(parse_weight("7/30").unwrap(), r(7, 30));
        assert_eq!(parse_weight("0.25").unwrap(), r(1, 4));
        assert_eq!(parse_weight("1").unwrap(), r(1, 1));
        assert!(parse_weight("1/0").is_err());
        let m: RaceMix = "1/4, 1/4, 1/4, 1/4".parse().unwrap();
        assert!(m.is_uniform());
        let json = serde_json::to_string(&m).unwrap();
        assert_eq!(json, r#"["1/4","1/4","1/4","1/4"]"#);
        assert_eq!(serde_json::from_str::<RaceMix>(&json).unwrap(), m);
    }

    #[test]
    fn net_has_181_markers() {
        let layout = net_layout(&enumerate_simplex_points()).unwrap();
        assert_eq!(layout.len(), 181);
    }

    #[test]
    fn uniform_sits_at_every_centroid() {
        let layout = net_layout(&[RaceMix::uniform()]).unwrap();
        assert_eq!(layout.len(), 4);
        let third = r(1, 3);
        for inst in &layout {
            let face = inst.face;
            let mut expect = [Weight::zero(); 3];
            for race in face.retained() {
                let v = face.vertex(race);
                for i in 0..3 {
                    expect[i] += third * v[i];
                }
            }
            assert_eq!(inst.barycentric, expect);
        }
    }

    #[test]
    fn pure_african_merges_to_one_vertex() {
        let layout = net_layout(&[RaceMix::single(RaceCategory::African)]).unwrap();
        // present on the three faces containing african, all at one vertex
        assert_eq!(layout.len(), 1);
        assert_eq!(layout[0].barycentric, [r(0, 1), r(1, 2), r(1, 2)]);
        let indian = net_layout(&[RaceMix::single(RaceCategory::Indian)]).unwrap();
        // the three outer corners of the net are distinct
        assert_eq!(indian.len(), 3);
    }

    #[test]
    fn net_rejects_foreign_mix() {
        let m = mix([(1, 2), (1, 6), (1, 6), (1, 6)]);
        assert!(matches!(net_layout(&[m]), Err(Error::UnknownMix(_))));
    }
}
