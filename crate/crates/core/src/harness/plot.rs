use std::fmt::Write as _;

use crate::distributions::{enumerate_simplex_points, net_layout, RaceMix};
use crate::error::{Error, Result};
use crate::harness::results::{ResultRow, ResultsTable, RowKind};
use crate::race::RaceCategory;

/// Quantity a panel colors its markers by.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    Accuracy(RaceCategory),
    Mean,
    Variance,
}

impl Metric {
    pub const PANELS: [Metric; 6] = [
        Metric::Accuracy(RaceCategory::African),
        Metric::Accuracy(RaceCategory::Asian),
        Metric::Accuracy(RaceCategory::Caucasian),
        Metric::Accuracy(RaceCategory::Indian),
        Metric::Mean,
        Metric::Variance,
    ];

    pub fn title(self) -> String {
        match self {
            Metric::Accuracy(r) => format!("{} accuracy", r.name()),
            Metric::Mean => "mean accuracy".into(),
            Metric::Variance => "variance".into(),
        }
    }

    pub fn value(self, row: &ResultRow) -> f64 {
        match self {
            Metric::Accuracy(r) => row.acc[r.index()],
            Metric::Mean => row.mean,
            Metric::Variance => row.variance,
        }
    }
}

impl std::str::FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(Metric::Mean),
            "variance" | "var" => Ok(Metric::Variance),
            other => Ok(Metric::Accuracy(other.parse()?)),
        }
    }
}

const PANEL: f64 = 320.0;
const SIDE: f64 = 260.0;
const MARGIN: f64 = 30.0;
const RADIUS: f64 = 4.0;

/// Piecewise-linear blue -> yellow -> red ramp.
fn color(t: f64) -> String {
    let stops = [
        (49.0, 54.0, 149.0),
        (255.0, 255.0, 191.0),
        (215.0, 48.0, 39.0),
    ];
    let t = t.clamp(0.0, 1.0) * 2.0;
    let i = (t.floor() as usize).min(1);
    let f = t - i as f64;
    let (a, b) = (stops[i], stops[i + 1]);
    let mix = |x: f64, y: f64| (x + (y - x) * f).round() as u8;
    format!(
        "#{:02x}{:02x}{:02x}",
        mix(a.0, b.0),
        mix(a.1, b.1),
        mix(a.2, b.2)
    )
}

/// Per-mix rows of one head, in enumeration order. Mean rows are used when
/// present, otherwise trial rows of trial 0.
fn sweep_rows<'a>(table: &'a ResultsTable, head: &str) -> Result<Vec<(RaceMix, &'a ResultRow)>> {
    let pick = |kind: RowKind| -> Vec<&'a ResultRow> {
        table
            .rows
            .iter()
            .filter(|r| r.kind == kind && r.head == head && r.design == "sweep")
            .filter(|r| kind != RowKind::Trial || r.trial == Some(0))
            .collect()
    };
    let mut rows = pick(RowKind::Mean);
    if rows.is_empty() {
        rows = pick(RowKind::Trial);
    }
    let mut out = Vec::with_capacity(89);
    for mix in enumerate_simplex_points() {
        let row = rows
            .iter()
            .find(|r| r.mix.as_ref() == Some(&mix))
            .ok_or_else(|| {
                Error::InvalidArgument(format!("incomplete sweep for {head}: no row for mix {mix}"))
            })?;
        out.push((mix, *row));
    }
    Ok(out)
}

fn panel(
    svg: &mut String,
    ox: f64,
    oy: f64,
    metric: Metric,
    rows: &[(RaceMix, &ResultRow)],
) -> Result<()> {
    let values: Vec<f64> = rows.iter().map(|(_, r)| metric.value(r)).collect();
    let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let scale = |v: f64| if hi > lo { (v - lo) / (hi - lo) } else { 0.5 };
    let px = |p: [f64; 2]| (ox + MARGIN + p[0] * SIDE, oy + MARGIN + p[1] * SIDE);

    let _ = writeln!(svg, r#"<g class="panel" data-metric="{}">"#, metric.title());
    let _ = writeln!(
        svg,
        r#"<text x="{:.3}" y="{:.3}" font-size="13" text-anchor="middle">{}</text>"#,
        ox + MARGIN + SIDE / 2.0,
        oy + 18.0,
        metric.title()
    );
    // outer triangle and the central face of the net
    let h = 0.866_025_403_784_438_6;
    let outer = [[0.5, 0.0], [0.0, h], [1.0, h]];
    let inner = [[0.25, h / 2.0], [0.75, h / 2.0], [0.5, h]];
    for tri in [outer, inner] {
        let pts: Vec<String> = tri
            .iter()
            .map(|p| {
                let (x, y) = px(*p);
                format!("{x:.3},{y:.3}")
            })
            .collect();
        let _ = writeln!(
            svg,
            r##"<polygon points="{}" fill="none" stroke="#888" stroke-width="1"/>"##,
            pts.join(" ")
        );
    }
    // pure-race vertices: the unfolded indian apex at all three outer
    // corners, the others at the central triangle's corners
    let labels = [
        ([0.5, -0.06], RaceCategory::Indian),
        ([-0.04, h + 0.05], RaceCategory::Indian),
        ([1.04, h + 0.05], RaceCategory::Indian),
        ([0.5, h + 0.05], RaceCategory::African),
        ([0.8, h / 2.0 - 0.02], RaceCategory::Asian),
        ([0.2, h / 2.0 - 0.02], RaceCategory::Caucasian),
    ];
    for (p, race) in labels {
        let (x, y) = px(p);
        let _ = writeln!(
            svg,
            r##"<text x="{x:.3}" y="{y:.3}" font-size="10" fill="#444" text-anchor="middle">{}</text>"##,
            race.short()
        );
    }
    let points: Vec<RaceMix> = rows.iter().map(|(m, _)| *m).collect();
    for inst in net_layout(&points)? {
        let i = points
            .iter()
            .position(|m| *m == inst.mix)
            .expect("layout of given points");
        let v = values[i];
        let (x, y) = px(inst.position);
        let _ = writeln!(
            svg,
            r#"<circle class="m" cx="{x:.3}" cy="{y:.3}" r="{RADIUS}" fill="{}" data-mix="{}" data-value="{v:.6}"/>"#,
            color(scale(v)),
            inst.mix
        );
    }
    // legend: ramp with min and max labels
    let ly = oy + MARGIN + SIDE * h + 18.0;
    for k in 0..20 {
        let _ = writeln!(
            svg,
            r#"<rect x="{:.3}" y="{ly:.3}" width="{:.3}" height="8" fill="{}"/>"#,
            ox + MARGIN + k as f64 * SIDE / 20.0,
            SIDE / 20.0,
            color(k as f64 / 19.0)
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{:.3}" y="{:.3}" font-size="11">{lo:.2}</text>"#,
        ox + MARGIN,
        ly + 20.0
    );
    let _ = writeln!(
        svg,
        r#"<text x="{:.3}" y="{:.3}" font-size="11" text-anchor="end">{hi:.2}</text>"#,
        ox + MARGIN + SIDE,
        ly + 20.0
    );
    svg.push_str("</g>\n");
    Ok(())
}

/// Flattened-net SVG for one head of a sweep table: all six panels, or the
/// one chosen panel. Each panel has one circle of class `m` per net marker.
pub fn emit_simplex_svg(
    table: &ResultsTable,
    head: &str,
    metric: Option<Metric>,
) -> Result<String> {
    let rows = sweep_rows(table, head)?;
    let panels: Vec<Metric> = match metric {
        Some(m) => vec![m],
        None => Metric::PANELS.to_vec(),
    };
    let cols = panels.len().min(3);
    let nrows = panels.len().div_ceil(3);
    let (w, h) = (cols as f64 * PANEL, nrows as f64 * PANEL);
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w:.0}" height="{h:.0}" viewBox="0 0 {w:.0} {h:.0}">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    for (i, m) in panels.iter().enumerate() {
        let (ox, oy) = ((i % 3) as f64 * PANEL, (i / 3) as f64 * PANEL);
        panel(&mut svg, ox, oy, *m, &rows)?;
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

/// Number of `class="m"` markers in each panel of an SVG from
/// [`emit_simplex_svg`].
pub fn markers_per_panel(svg: &str) -> Vec<usize> {
    svg.split(r#"<g class="panel""#)
        .skip(1)
        .map(|p| p.matches(r#"class="m""#).count())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distributions::SubjectCounts;
    use crate::evalproto::{fairness_report, ReportMeta};

    pub(crate) fn fake_sweep() -> ResultsTable {
        let rows = enumerate_simplex_points()
            .into_iter()
            .enumerate()
            .map(|(i, mix)| {
                let w = mix.to_f64();
                let acc: [f64; 4] = std::array::from_fn(|r| 70.0 + 10.0 * w[r] + i as f64 * 0.01);
                let rep = fairness_report(acc, ReportMeta::default());
                ResultRow {
                    counts: SubjectCounts([0; 4]),
                    acc,
                    mean: rep.mean,
                    variance: rep.variance,
                    design: "sweep".into(),
                    key: i.to_string(),
                    head: "arcface".into(),
                    trial: None,
                    kind: RowKind::Mean,
                    mix: Some(mix),
                    p: None,
                }
            })
            .collect();
        ResultsTable { rows }
    }

    #[test]
    fn every_panel_has_181_markers() {
        let svg = emit_simplex_svg(&fake_sweep(), "arcface", None).unwrap();
        assert_eq!(markers_per_panel(&svg), vec![181; 6]);
        let one = emit_simplex_svg(&fake_sweep(), "arcface", Some(Metric::Mean)).unwrap();
        assert_eq!(markers_per_panel(&one), vec![181]);
    }

    #[test]
    fn variance_minimum_marker_is_argmin_row() {
        let t = fake_sweep();
        let svg = emit_simplex_svg(&t, "arcface", Some(Metric::Variance)).unwrap();
        let best = t
            .rows
            .iter()
            .min_by(|a, b| a.variance.partial_cmp(&b.variance).unwrap())
            .unwrap();
        let marker = svg
            .lines()
            .filter(|l| l.contains(r#"class="m""#))
            .min_by(|a, b| {
                let v = |l: &str| -> f64 {
                    l.split("data-value=\"")
                        .nth(1)
                        .unwrap()
                        .split('"')
                        .next()
                        .unwrap()
                        .parse()
                        .unwrap()
                };
                v(a).partial_cmp(&v(b)).unwrap()
            })
            .unwrap();
        assert!(marker.contains(&format!("data-mix=\"{}\"", best.mix.unwrap())));
    }

    #[test]
    fn svg_is_stable_and_incomplete_sweeps_fail() {
        let t = fake_sweep();
        assert_eq!(
            emit_simplex_svg(&t, "arcface", None).unwrap(),
            emit_simplex_svg(&t.clone(), "arcface", None).unwrap()
        );
        let mut short = t;
        short.rows.pop();
        assert!(emit_simplex_svg(&short, "arcface", None).is_err());
        assert!(emit_simplex_svg(&fake_sweep(), "softmax_ce", None).is_err());
    }

    #[test]
    fn ramp_endpoints() {
        assert_eq!(color(0.0), "#313695");
        assert_eq!(color(1.0), "#d73027");
    }
}
