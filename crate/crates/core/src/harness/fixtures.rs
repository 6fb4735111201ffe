use std::path::{Path, PathBuf};

use crate::distributions::SubjectCounts;
use crate::error::{Error, Result};
use crate::evalproto::{fairness_report, ReportMeta};

/// Allowed gap between a recomputed and a published summary value.
pub const FIXTURE_TOLERANCE: f64 = 0.015;

/// Half-width of the rounding interval of a two-decimal published value.
const HALF_ULP: f64 = 0.005;

#[derive(Debug, Clone, PartialEq)]
pub struct FixtureRow {
    pub file: String,
    /// 1-based data line within its file.
    pub line: usize,
    pub label: String,
    pub counts: SubjectCounts,
    pub acc: [f64; 4],
    pub published_mean: f64,
    pub published_variance: f64,
    pub mean: f64,
    pub variance: f64,
}

impl FixtureRow {
    pub fn mean_diff(&self) -> f64 {
        self.mean - self.published_mean
    }

    pub fn variance_diff(&self) -> f64 {
        self.variance - self.published_variance
    }

    pub fn passes(&self, tol: f64) -> bool {
        self.mean_diff().abs() <= tol && self.variance_diff().abs() <= tol
    }

    /// Whether the published mean and variance are attainable by some
    /// accuracies that round to the published two-decimal values.
    pub fn rounding_consistent(&self) -> bool {
        let (mlo, mhi) = (self.mean - HALF_ULP, self.mean + HALF_ULP);
        let (vlo, vhi) = variance_range(&self.acc, HALF_ULP);
        let near =
            |x: f64, lo: f64, hi: f64| x >= lo - HALF_ULP - 1e-9 && x <= hi + HALF_ULP + 1e-9;
        near(self.published_mean, mlo, mhi) && near(self.published_variance, vlo, vhi)
    }
}

fn pop_var(x: &[f64; 4]) -> f64 {
    fairness_report(*x, ReportMeta::default()).variance
}

/// Min and max population variance over the box `acc[i] +- half`.
pub fn variance_range(acc: &[f64; 4], half: f64) -> (f64, f64) {
    // convex in x, so the max sits at a vertex
    let mut hi = f64::NEG_INFINITY;
    for mask in 0..16u32 {
        let v: [f64; 4] =
            std::array::from_fn(|i| acc[i] + if mask >> i & 1 == 1 { half } else { -half });
        hi = hi.max(pop_var(&v));
    }
    // min_x var = min_c (1/4) sum dist(c, I_i)^2, convex in c
    let f = |c: f64| {
        acc.iter()
            .map(|a| {
                let d = (c - a).abs() - half;
                if d > 0.0 {
                    d * d
                } else {
                    0.0
                }
            })
            .sum::<f64>()
            / 4.0
    };
    let (mut a, mut b) = (
        acc.iter().cloned().fold(f64::INFINITY, f64::min),
        acc.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
    );
    for _ in 0..200 {
        let m1 = a + (b - a) / 3.0;
        let m2 = b - (b - a) / 3.0;
        if f(m1) <= f(m2) {
            b = m2;
        } else {
            a = m1;
        }
    }
    (f((a + b) / 2.0), hi)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FixtureReport {
    pub tolerance: f64,
    pub rows: Vec<FixtureRow>,
}

impl FixtureReport {
    pub fn failures(&self) -> Vec<&FixtureRow> {
        self.rows
            .iter()
            .filter(|r| !r.passes(self.tolerance))
            .collect()
    }

    pub fn all_pass(&self) -> bool {
        !self.rows.is_empty() && self.failures().is_empty()
    }

    pub fn rounding_inconsistent(&self) -> Vec<&FixtureRow> {
        self.rows
            .iter()
            .filter(|r| !r.rounding_consistent())
            .collect()
    }

    /// One line per row plus a totals line.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for r in &self.rows {
            out.push_str(&format!(
                "{} {:>3} {:<8} mean {:>7.3} (pub {:>6.2}, {:+.4})  var {:>7.3} (pub {:>6.2}, {:+.4})  {}{}\n",
                r.file,
                r.line,
                r.label,
                r.mean,
                r.published_mean,
                r.mean_diff(),
                r.variance,
                r.published_variance,
                r.variance_diff(),
                if r.passes(self.tolerance) { "ok" } else { "FAIL" },
                if r.rounding_consistent() { "" } else { " (inconsistent with rounding)" },
            ));
        }
        out.push_str(&format!(
            "{}/{} rows within +-{}; {} rows inconsistent with two-decimal rounding\n",
            self.rows.len() - self.failures().len(),
            self.rows.len(),
            self.tolerance,
            self.rounding_inconsistent().len()
        ));
        out
    }
}

const REQUIRED: [&str; 10] = [
    "african_subj",
    "asian_subj",
    "cauc_subj",
    "indian_subj",
    "acc_afr",
    "acc_asi",
    "acc_cau",
    "acc_ind",
    "acc_mean",
    "acc_var",
];

/// Reads one fixture file. Columns are found by name; optional `levels` and
/// `row` columns label each line.
pub fn read_fixture(path: impl AsRef<Path>) -> Result<Vec<FixtureRow>> {
    let path = path.as_ref();
    let file = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let mut rdr = csv::Reader::from_path(path)?;
    let headers = rdr.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h.trim() == name);
    let idx: Vec<usize> = REQUIRED
        .iter()
        .map(|n| {
            col(n).ok_or_else(|| Error::malformed("fixture", format!("{file}: no {n} column")))
        })
        .collect::<Result<_>>()?;
    let (levels, rowcol) = (col("levels"), col("row"));
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = i + 1;
        let field = |k: usize| -> Result<&str> {
            rec.get(idx[k]).map(str::trim).ok_or_else(|| {
                Error::malformed("fixture", format!("{file} line {line}: short row"))
            })
        };
        let bad = |k: usize, v: &str| {
            Error::malformed(
                "fixture",
                format!("{file} line {line}: {} = {v:?}", REQUIRED[k]),
            )
        };
        let count = |k: usize| -> Result<usize> {
            let v = field(k)?;
            v.parse().map_err(|_| bad(k, v))
        };
        let num = |k: usize| -> Result<f64> {
            let v = field(k)?;
            v.parse::<f64>()
                .ok()
                .filter(|x| x.is_finite())
                .ok_or_else(|| bad(k, v))
        };
        let acc = [num(4)?, num(5)?, num(6)?, num(7)?];
        let rep = fairness_report(acc, ReportMeta::default());
        let label = match (
            levels.and_then(|c| rec.get(c)),
            rowcol.and_then(|c| rec.get(c)),
        ) {
            (Some(l), Some(r)) => format!("{l}:{r}"),
            (Some(l), None) => l.to_string(),
            (None, Some(r)) => r.to_string(),
            (None, None) => String::new(),
        };
        out.push(FixtureRow {
            file: file.clone(),
            line,
            label,
            counts: SubjectCounts([count(0)?, count(1)?, count(2)?, count(3)?]),
            acc,
            published_mean: num(8)?,
            published_variance: num(9)?,
            mean: rep.mean,
            variance: rep.variance,
        });
    }
    if out.is_empty() {
        return Err(Error::malformed("fixture", format!("{file}: no rows")));
    }
    Ok(out)
}

/// Fixture CSV files under `dir`, sorted by name.
pub fn fixture_files(dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::malformed(
            "fixture",
            format!("no csv files in {}", dir.display()),
        ));
    }
    Ok(files)
}

/// Recomputes mean and population variance of every fixture row (a file, or
/// every CSV in a directory) and compares with the published values.
pub fn verify_fixtures(path: impl AsRef<Path>) -> Result<FixtureReport> {
    let path = path.as_ref();
    let files = if path.is_dir() {
        fixture_files(path)?
    } else {
        vec![path.to_path_buf()]
    };
    let mut rows = Vec::new();
    for f in files {
        rows.extend(read_fixture(f)?);
    }
    Ok(FixtureReport {
        tolerance: FIXTURE_TOLERANCE,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const HEADER: &str = "african_subj,asian_subj,cauc_subj,indian_subj,acc_afr,acc_asi,acc_cau,acc_ind,acc_mean,acc_var\n";

    fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
        let p = dir.join(name);
        std::fs::write(&p, format!("{HEADER}{body}")).unwrap();
        p
    }

    #[test]
    fn published_examples_pass() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            dir.path(),
            "a.csv",
            "1250,1250,1250,1250,71.68,71.70,80.68,75.25,74.83,13.53\n\
             0,0,0,5000,78.92,71.05,77.28,76.65,75.97,8.77\n",
        );
        let rep = verify_fixtures(&p).unwrap();
        assert!(rep.all_pass(), "{}", rep.render());
        assert!(rep.rounding_inconsistent().is_empty());
    }

    #[test]
    fn corrupted_row_is_the_only_failure() {
        let dir = tempfile::tempdir().unwrap();
        write(
            dir.path(),
            "a.csv",
            "1250,1250,1250,1250,71.68,71.70,80.68,75.25,74.83,14.53\n\
             0,0,0,5000,78.92,71.05,77.28,76.65,75.97,8.77\n",
        );
        let rep = verify_fixtures(dir.path()).unwrap();
        let f = rep.failures();
        assert_eq!(f.len(), 1);
        assert_eq!(f[0].line, 1);
        assert!(!f[0].rounding_consistent());
    }

    #[test]
    fn variance_range_brackets_box_samples() {
        let acc = [71.80, 72.47, 81.73, 74.72];
        let (lo, hi) = variance_range(&acc, 0.005);
        assert!(lo < pop_var(&acc) && pop_var(&acc) < hi);
        // dense grid over the box never escapes the range
        for k in 0..625u32 {
            let v: [f64; 4] = std::array::from_fn(|i| {
                acc[i] - 0.005 + 0.0025 * ((k / 5u32.pow(i as u32)) % 5) as f64
            });
            let x = pop_var(&v);
            assert!(x >= lo - 1e-9 && x <= hi + 1e-9);
        }
        // equal intervals admit zero variance
        assert_eq!(variance_range(&[1.0, 1.0, 1.0, 1.0], 0.005).0, 0.0);
    }

    #[test]
    fn malformed_fixtures_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "bad.csv", "1,2,3,4,x,1,1,1,1,1\n");
        assert!(matches!(read_fixture(&p), Err(Error::Malformed { .. })));
        let q = dir.path().join("short.csv");
        std::fs::write(&q, "acc_afr\n1\n").unwrap();
        assert!(read_fixture(&q).is_err());
    }
}
