//! Sweep results: relative error rates, CSV, JSON and an SVG line plot.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use arbiter_core::objectives::relative_error_rate;
use serde::{Deserialize, Serialize};

use crate::config::Setup;
use crate::error::{Error, Result};
use crate::storage::{write_atomic, write_json};
use crate::train::CurvePoint;

pub const CSV_HEADER: &str = "setup,subset_size,seed,accuracy,relative_error_rate,checkpoint_path";

/// Outcome of one (setup, subset, seed) cell before relative error rates
/// are known.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub setup: Setup,
    pub subset_exponent: u32,
    pub subset_size: usize,
    pub seed: u64,
    pub accuracy: f64,
    /// Relative to the experiment output directory.
    pub checkpoint_path: String,
    pub finetune_best_step: usize,
    pub finetune_curve: Vec<CurvePoint>,
    pub pretrain_best_step: Option<usize>,
    pub pretrain_curve: Option<Vec<CurvePoint>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportCell {
    #[serde(flatten)]
    pub result: CellResult,
    pub relative_error_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub setup: Setup,
    pub subset_size: usize,
    pub mean_accuracy: f64,
    pub mean_relative_error_rate: f64,
    pub seeds: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    /// Subset size of the reference baseline cells.
    pub reference_subset_size: usize,
    pub cells: Vec<ReportCell>,
    pub summary: Vec<SummaryRow>,
}

/// One CSV row.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub setup: Setup,
    pub subset_size: usize,
    pub seed: u64,
    pub accuracy: f64,
    pub relative_error_rate: f64,
    pub checkpoint_path: String,
}

/// Orders the cells and computes each one's relative error rate against
/// the baseline at the smallest subset with the same seed.
pub fn build_report(mut cells: Vec<CellResult>) -> Result<Report> {
    let smallest = cells
        .iter()
        .map(|c| c.subset_size)
        .min()
        .ok_or_else(|| Error::Invalid("no results to report".into()))?;
    cells.sort_by(|a, b| {
        (a.setup, std::cmp::Reverse(a.subset_size), a.seed).cmp(&(b.setup, std::cmp::Reverse(b.subset_size), b.seed))
    });
    let mut reference = BTreeMap::new();
    for c in cells.iter().filter(|c| c.setup == Setup::Baseline && c.subset_size == smallest) {
        if reference.insert(c.seed, c.accuracy).is_some() {
            return Err(Error::Invalid(format!("duplicate baseline cell for seed {}", c.seed)));
        }
    }
    let cells = cells
        .into_iter()
        .map(|c| {
            let base = *reference.get(&c.seed).ok_or(Error::MissingBaseline {
                seed: c.seed,
                subset_size: smallest,
            })?;
            let rer = relative_error_rate(c.accuracy, base)?;
            Ok(ReportCell {
                result: c,
                relative_error_rate: rer,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut groups: BTreeMap<(Setup, std::cmp::Reverse<usize>), Vec<&ReportCell>> = BTreeMap::new();
    for c in &cells {
        groups
            .entry((c.result.setup, std::cmp::Reverse(c.result.subset_size)))
            .or_default()
            .push(c);
    }
    let summary = groups
        .into_iter()
        .map(|((setup, size), g)| {
            let n = g.len() as f64;
            SummaryRow {
                setup,
                subset_size: size.0,
                mean_accuracy: g.iter().map(|c| c.result.accuracy).sum::<f64>() / n,
                mean_relative_error_rate: g.iter().map(|c| c.relative_error_rate).sum::<f64>() / n,
                seeds: g.len(),
            }
        })
        .collect();
    Ok(Report {
        reference_subset_size: smallest,
        cells,
        summary,
    })
}

pub fn to_csv(report: &Report) -> Result<String> {
    let mut s = String::from(CSV_HEADER);
    s.push('\n');
    for c in &report.cells {
        let r = &c.result;
        if r.checkpoint_path.contains([',', '"', '\n']) {
            return Err(Error::Invalid(format!("checkpoint path {:?} cannot be written to CSV", r.checkpoint_path)));
        }
        writeln!(
            s,
            "{},{},{},{},{},{}",
            r.setup, r.subset_size, r.seed, r.accuracy, c.relative_error_rate, r.checkpoint_path
        )
        .expect("writing to a String");
    }
    Ok(s)
}

pub fn parse_csv(text: &str) -> Result<Vec<ReportRow>> {
    let mut lines = text.lines();
    if lines.next() != Some(CSV_HEADER) {
        return Err(Error::Invalid("unexpected CSV header".into()));
    }
    lines
        .filter(|l| !l.is_empty())
        .map(|line| {
            let f: Vec<&str> = line.split(',').collect();
            let bad = || Error::Invalid(format!("bad CSV row {line:?}"));
            if f.len() != 6 {
                return Err(bad());
            }
            Ok(ReportRow {
                setup: f[0].parse()?,
                subset_size: f[1].parse().map_err(|_| bad())?,
                seed: f[2].parse().map_err(|_| bad())?,
                accuracy: f[3].parse().map_err(|_| bad())?,
                relative_error_rate: f[4].parse().map_err(|_| bad())?,
                checkpoint_path: f[5].to_string(),
            })
        })
        .collect()
}

const COLORS: [&str; 4] = ["#1b1b1b", "#1f77b4", "#d62728", "#2ca02c"];

/// Mean relative error rate against subset size (log axis), one line per setup.
pub fn to_svg(report: &Report) -> String {
    let (w, h) = (640.0, 420.0);
    let (left, right, top, bottom) = (70.0, 150.0, 40.0, 60.0);
    let (pw, ph) = (w - left - right, h - top - bottom);
    let sizes: Vec<usize> = {
        let mut v: Vec<usize> = report.summary.iter().map(|r| r.subset_size).collect();
        v.sort_unstable();
        v.dedup();
        v
    };
    let (xmin, xmax) = match (sizes.first(), sizes.last()) {
        (Some(&a), Some(&b)) => ((a as f64).ln(), (b as f64).ln()),
        _ => (0.0, 1.0),
    };
    let x_of = |size: usize| {
        if xmax > xmin {
            left + ((size as f64).ln() - xmin) / (xmax - xmin) * pw
        } else {
            left + pw / 2.0
        }
    };
    let ymax = report
        .summary
        .iter()
        .map(|r| r.mean_relative_error_rate)
        .fold(1.0f64, f64::max)
        * 1.1;
    let y_of = |v: f64| top + ph - v / ymax * ph;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="22" text-anchor="middle" font-size="14">Relative error rate with respect to the smallest-subset baseline</text>"#,
        w / 2.0
    );
    let _ = writeln!(
        s,
        r#"<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
    );
    for i in 0..=5 {
        let v = ymax * i as f64 / 5.0;
        let y = y_of(v);
        let _ = writeln!(
            s,
            r##"<line x1="{left}" y1="{y:.1}" x2="{:.1}" y2="{y:.1}" stroke="#dddddd"/><text x="{:.1}" y="{:.1}" text-anchor="end">{v:.2}</text>"##,
            left + pw,
            left - 6.0,
            y + 4.0
        );
    }
    for &size in &sizes {
        let x = x_of(size);
        let _ = writeln!(
            s,
            r#"<line x1="{x:.1}" y1="{:.1}" x2="{x:.1}" y2="{:.1}" stroke="black"/><text x="{x:.1}" y="{:.1}" text-anchor="middle">{size}</text>"#,
            top + ph,
            top + ph + 5.0,
            top + ph + 18.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">training scenarios (log scale)</text>"#,
        left + pw / 2.0,
        h - 15.0
    );
    let _ = writeln!(
        s,
        r#"<text x="18" y="{:.1}" text-anchor="middle" transform="rotate(-90 18 {:.1})">relative error rate</text>"#,
        top + ph / 2.0,
        top + ph / 2.0
    );
    for (k, setup) in Setup::ALL.iter().enumerate() {
        let mut pts: Vec<(usize, f64)> = report
            .summary
            .iter()
            .filter(|r| r.setup == *setup)
            .map(|r| (r.subset_size, r.mean_relative_error_rate))
            .collect();
        if pts.is_empty() {
            continue;
        }
        pts.sort_by_key(|p| p.0);
        let color = COLORS[k % COLORS.len()];
        let path: Vec<String> = pts.iter().map(|&(n, v)| format!("{:.1},{:.1}", x_of(n), y_of(v))).collect();
        let _ = writeln!(
            s,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#,
            path.join(" ")
        );
        for &(n, v) in &pts {
            let _ = writeln!(s, r#"<circle cx="{:.1}" cy="{:.1}" r="3.5" fill="{color}"/>"#, x_of(n), y_of(v));
        }
        let ly = top + 10.0 + 20.0 * k as f64;
        let lx = left + pw + 15.0;
        let _ = writeln!(
            s,
            r#"<line x1="{lx:.1}" y1="{ly:.1}" x2="{:.1}" y2="{ly:.1}" stroke="{color}" stroke-width="2"/><text x="{:.1}" y="{:.1}">{setup}</text>"#,
            lx + 20.0,
            lx + 26.0,
            ly + 4.0
        );
    }
    s.push_str("</svg>\n");
    s
}

pub fn write_report(out: &Path, report: &Report) -> Result<()> {
    write_atomic(&out.join("report.csv"), to_csv(report)?.as_bytes())?;
    write_json(&out.join("report.json"), report)?;
    write_atomic(&out.join("report.svg"), to_svg(report).as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cell(setup: Setup, size: usize, seed: u64, acc: f64) -> CellResult {
        CellResult {
            setup,
            subset_exponent: 0,
            subset_size: size,
            seed,
            accuracy: acc,
            checkpoint_path: format!("checkpoints/{setup}-{size}-{seed}.ckpt"),
            finetune_best_step: 0,
            finetune_curve: Vec::new(),
            pretrain_best_step: None,
            pretrain_curve: None,
        }
    }

    #[test]
    fn reference_cell_is_one_and_rows_recompute() {
        let cells = vec![
            cell(Setup::Contrastive, 31, 0, 0.7),
            cell(Setup::Baseline, 31, 0, 0.6),
            cell(Setup::Baseline, 125, 0, 0.8),
            cell(Setup::Contrastive, 125, 0, 0.85),
        ];
        let r = build_report(cells).unwrap();
        assert_eq!(r.reference_subset_size, 31);
        let rows = parse_csv(&to_csv(&r).unwrap()).unwrap();
        assert_eq!(rows.len(), 4);
        for row in &rows {
            assert_eq!(row.relative_error_rate, (1.0 - row.accuracy) / (1.0 - 0.6));
        }
        let base = rows.iter().find(|x| x.setup == Setup::Baseline && x.subset_size == 31).unwrap();
        assert_eq!(base.relative_error_rate, 1.0);
        assert!(to_svg(&r).starts_with("<svg"));
    }

    #[test]
    fn missing_baseline_is_an_error() {
        let cells = vec![cell(Setup::Baseline, 125, 0, 0.8), cell(Setup::Combo, 31, 0, 0.7)];
        assert!(matches!(build_report(cells), Err(Error::MissingBaseline { .. })));
        let cells = vec![cell(Setup::Baseline, 31, 1, 0.8), cell(Setup::Combo, 31, 0, 0.7)];
        assert!(matches!(build_report(cells), Err(Error::MissingBaseline { seed: 0, .. })));
    }
}
