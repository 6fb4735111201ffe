use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::distributions::{RaceMix, SubjectCounts};
use crate::error::{Error, Result};
use crate::evalproto::{fairness_report, EvalReport, ReportMeta};

/// Column order of every results file. The first ten columns are shared with
/// the published-table fixtures.
pub const COLUMNS: [&str; 20] = [
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
    "design",
    "key",
    "head",
    "trial",
    "row_kind",
    "mix_afr",
    "mix_asi",
    "mix_cau",
    "mix_ind",
    "p",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RowKind {
    /// One trained and evaluated model.
    Trial,
    /// Per-race mean over trials; fairness summary recomputed from it.
    Mean,
    /// Sample standard deviation over trials, column by column.
    Sd,
    /// Variant minus base, column by column.
    Delta,
}

impl fmt::Display for RowKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RowKind::Trial => "trial",
            RowKind::Mean => "mean",
            RowKind::Sd => "sd",
            RowKind::Delta => "delta",
        })
    }
}

impl FromStr for RowKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "trial" => Ok(RowKind::Trial),
            "mean" => Ok(RowKind::Mean),
            "sd" => Ok(RowKind::Sd),
            "delta" => Ok(RowKind::Delta),
            other => Err(Error::malformed("results", format!("row_kind {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub counts: SubjectCounts,
    pub acc: [f64; 4],
    pub mean: f64,
    pub variance: f64,
    pub design: String,
    /// Cell key within the design: mix index, train race, growth variant,
    /// noise probability.
    pub key: String,
    pub head: String,
    pub trial: Option<usize>,
    pub kind: RowKind,
    pub mix: Option<RaceMix>,
    pub p: Option<f64>,
}

impl ResultRow {
    pub fn from_report(
        design: &str,
        key: &str,
        counts: SubjectCounts,
        report: &EvalReport,
        p: Option<f64>,
    ) -> Self {
        Self {
            counts,
            acc: report.per_race,
            mean: report.mean,
            variance: report.variance,
            design: design.to_string(),
            key: key.to_string(),
            head: report.meta.head.clone(),
            trial: Some(report.meta.trial),
            kind: RowKind::Trial,
            mix: report.meta.mix,
            p,
        }
    }

    fn to_record(&self) -> Vec<String> {
        let mut r: Vec<String> = self.counts.0.iter().map(|c| c.to_string()).collect();
        r.extend(self.acc.iter().map(|a| a.to_string()));
        r.push(self.mean.to_string());
        r.push(self.variance.to_string());
        r.push(self.design.clone());
        r.push(self.key.clone());
        r.push(self.head.clone());
        r.push(self.trial.map(|t| t.to_string()).unwrap_or_default());
        r.push(self.kind.to_string());
        match &self.mix {
            Some(m) => r.extend(m.to_strings()),
            None => r.extend(std::iter::repeat_n(String::new(), 4)),
        }
        r.push(self.p.map(|p| p.to_string()).unwrap_or_default());
        r
    }

    fn from_record(rec: &csv::StringRecord) -> Result<Self> {
        if rec.len() != COLUMNS.len() {
            return Err(Error::malformed(
                "results",
                format!("expected {} columns, got {}", COLUMNS.len(), rec.len()),
            ));
        }
        let bad = |i: usize| Error::malformed("results", format!("{} = {:?}", COLUMNS[i], &rec[i]));
        let num = |i: usize| rec[i].parse::<f64>().map_err(|_| bad(i));
        let count = |i: usize| rec[i].parse::<usize>().map_err(|_| bad(i));
        let opt = |i: usize| (!rec[i].is_empty()).then(|| &rec[i]);
        let mix = match opt(15) {
            Some(_) => Some(RaceMix::from_strs(&[
                &rec[15], &rec[16], &rec[17], &rec[18],
            ])?),
            None => None,
        };
        Ok(Self {
            counts: SubjectCounts([count(0)?, count(1)?, count(2)?, count(3)?]),
            acc: [num(4)?, num(5)?, num(6)?, num(7)?],
            mean: num(8)?,
            variance: num(9)?,
            design: rec[10].to_string(),
            key: rec[11].to_string(),
            head: rec[12].to_string(),
            trial: opt(13).map(|_| count(13)).transpose()?,
            kind: rec[14].parse()?,
            mix,
            p: opt(19).map(|_| num(19)).transpose()?,
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ResultsTable {
    pub rows: Vec<ResultRow>,
}

impl ResultsTable {
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(COLUMNS)?;
        for r in &self.rows {
            w.write_record(r.to_record())?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// Appends rows without a header (the file must already have one).
    pub(crate) fn append_csv(rows: &[ResultRow], path: &Path) -> Result<()> {
        let file = std::fs::OpenOptions::new()
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        let mut w = csv::Writer::from_writer(file);
        for r in rows {
            w.write_record(r.to_record())?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let mut rdr = csv::Reader::from_path(path.as_ref())?;
        if rdr.headers()?.iter().ne(COLUMNS) {
            return Err(Error::malformed("results", "unexpected header"));
        }
        let rows = rdr
            .records()
            .map(|r| ResultRow::from_record(&r?))
            .collect::<Result<_>>()?;
        Ok(Self { rows })
    }

    pub fn of_kind(&self, kind: RowKind) -> impl Iterator<Item = &ResultRow> {
        self.rows.iter().filter(move |r| r.kind == kind)
    }
}

fn sample_sd(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = xs.iter().sum::<f64>() / xs.len() as f64;
    (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

/// Mean row (fairness summary over the mean accuracies) and sd row for a
/// group of trial rows sharing design, key and head.
pub fn aggregate(trials: &[&ResultRow]) -> Result<(ResultRow, ResultRow)> {
    let first = *trials
        .first()
        .ok_or_else(|| Error::InvalidArgument("no trial rows to aggregate".into()))?;
    let n = trials.len() as f64;
    let col = |f: &dyn Fn(&ResultRow) -> f64| -> Vec<f64> { trials.iter().map(|r| f(r)).collect() };
    let acc: [f64; 4] = std::array::from_fn(|i| trials.iter().map(|r| r.acc[i]).sum::<f64>() / n);
    let rep = fairness_report(acc, ReportMeta::default());
    let mean = ResultRow {
        acc,
        mean: rep.mean,
        variance: rep.variance,
        trial: None,
        kind: RowKind::Mean,
        ..first.clone()
    };
    let sd = ResultRow {
        acc: std::array::from_fn(|i| sample_sd(&col(&|r| r.acc[i]))),
        mean: sample_sd(&col(&|r| r.mean)),
        variance: sample_sd(&col(&|r| r.variance)),
        trial: None,
        kind: RowKind::Sd,
        ..first.clone()
    };
    Ok((mean, sd))
}

/// Column-wise `variant - base` with the variant's metadata.
pub fn delta(variant: &ResultRow, base: &ResultRow) -> ResultRow {
    ResultRow {
        acc: std::array::from_fn(|i| variant.acc[i] - base.acc[i]),
        mean: variant.mean - base.mean,
        variance: variant.variance - base.variance,
        kind: RowKind::Delta,
        ..variant.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(acc: [f64; 4], trial: usize) -> ResultRow {
        let rep = fairness_report(acc, ReportMeta::default());
        ResultRow {
            counts: SubjectCounts([1, 2, 3, 4]),
            acc,
            mean: rep.mean,
            variance: rep.variance,
            design: "sweep".into(),
            key: "17".into(),
            head: "arcface".into(),
            trial: Some(trial),
            kind: RowKind::Trial,
            mix: Some("1/3,0,1/6,1/2".parse().unwrap()),
            p: Some(0.1),
        }
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let t = ResultsTable {
            rows: vec![
                row([71.1 / 3.0, 0.1 + 0.2, 80.0, 1e-17], 0),
                row([50.0; 4], 1),
            ],
        };
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.csv");
        t.write_csv(&p).unwrap();
        assert_eq!(ResultsTable::read_csv(&p).unwrap(), t);
        let header = std::fs::read_to_string(&p).unwrap();
        assert!(header.starts_with("african_subj,asian_subj,cauc_subj,indian_subj,acc_afr"));
    }

    #[test]
    fn aggregate_and_delta() {
        let a = row([70.0, 72.0, 80.0, 74.0], 0);
        let b = row([72.0, 74.0, 82.0, 76.0], 1);
        let (m, sd) = aggregate(&[&a, &b]).unwrap();
        assert_eq!(m.acc, [71.0, 73.0, 81.0, 75.0]);
        assert_eq!(m.kind, RowKind::Mean);
        assert!((sd.acc[0] - 2f64.sqrt()).abs() < 1e-12);
        let d = delta(&b, &a);
        assert_eq!(d.acc, [2.0; 4]);
        assert_eq!(d.kind, RowKind::Delta);
    }
}
