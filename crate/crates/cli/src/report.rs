//! `report`: tables and a conditioning chart from a directory of traces.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::run::Spread;
use crate::trace::{self, TraceRow};
use crate::{say, CliError};

pub const CHART_FILE: &str = "kappa_chart.svg";

#[derive(Debug, Clone)]
pub struct SeedTrace {
    pub label: String,
    pub seed: u64,
    pub path: PathBuf,
    pub rows: Vec<TraceRow>,
}

impl SeedTrace {
    /// Validation error of the last logged step (NaN for an empty trace).
    pub fn final_val_error(&self) -> f64 {
        self.rows.last().map_or(f64::NAN, |r| r.val_error)
    }

    /// Mean `log10 κ` over logged steps, skipping failed steps.
    pub fn mean_log10_kappa(&self) -> f64 {
        let k: Vec<f64> = self.rows.iter().map(|r| r.log10_kappa).filter(|k| !k.is_nan()).collect();
        if k.is_empty() {
            f64::NAN
        } else {
            k.iter().sum::<f64>() / k.len() as f64
        }
    }

    pub fn svd_failures(&self) -> usize {
        self.rows.last().map_or(0, |r| r.svd_failures)
    }
}

/// All seeds sharing a label.
#[derive(Debug, Clone)]
pub struct Group {
    pub label: String,
    pub traces: Vec<SeedTrace>,
}

impl Group {
    pub fn val_error(&self) -> Spread {
        let v: Vec<f64> = self.traces.iter().map(SeedTrace::final_val_error).collect();
        Spread::of(&v)
    }

    /// Mean over seeds of each trace's mean `log10 κ`.
    pub fn mean_log10_kappa(&self) -> f64 {
        self.traces.iter().map(SeedTrace::mean_log10_kappa).sum::<f64>() / self.traces.len() as f64
    }

    pub fn svd_failures(&self) -> usize {
        self.traces.iter().map(SeedTrace::svd_failures).sum()
    }

    /// Seed-averaged `log10 κ` at every step logged by all seeds.
    pub fn kappa_series(&self) -> Vec<(usize, f64)> {
        let mut by_step: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
        for t in &self.traces {
            for r in &t.rows {
                by_step.entry(r.step).or_default().push(r.log10_kappa);
            }
        }
        by_step
            .into_iter()
            .filter(|(_, v)| v.len() == self.traces.len())
            .map(|(s, v)| (s, v.iter().sum::<f64>() / v.len() as f64))
            .collect()
    }

    fn variant_and_policy(&self) -> (&str, &str) {
        self.label.split_once('-').unwrap_or(("", &self.label))
    }
}

/// The treatments-improve-conditioning claim for one network variant.
#[derive(Debug, Clone, PartialEq)]
pub struct OrderingCheck {
    pub variant: String,
    pub ow: f64,
    pub nog: f64,
    pub none: f64,
    /// Seeds on which the untreated run had lower κ than both treatments.
    pub none_lowest_seeds: Vec<u64>,
    pub passed: bool,
}

#[derive(Debug, Clone)]
pub struct Report {
    pub groups: Vec<Group>,
    pub ordering: Vec<OrderingCheck>,
    pub chart: Option<PathBuf>,
}

fn visit(dir: &Path, found: &mut Vec<PathBuf>) -> Result<(), CliError> {
    let entries = fs::read_dir(dir).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => CliError::Input(format!("{}: no such directory", dir.display())),
        _ => CliError::io(dir, e),
    })?;
    let mut paths = Vec::new();
    for entry in entries {
        paths.push(entry.map_err(|e| CliError::io(dir, e))?.path());
    }
    paths.sort();
    for path in paths {
        if path.is_dir() {
            visit(&path, found)?;
        } else if path
            .file_name()
            .and_then(|n| n.to_str())
            .and_then(trace::parse_file_name)
            .is_some()
        {
            found.push(path);
        }
    }
    Ok(())
}

/// Reads every `trace_<label>_seed<seed>.csv` under `dir`, recursively.
pub fn load_traces(dir: &Path) -> Result<Vec<Group>, CliError> {
    let mut paths = Vec::new();
    visit(dir, &mut paths)?;
    if paths.is_empty() {
        return Err(CliError::Input(format!("{}: no trace files found", dir.display())));
    }
    let mut groups: BTreeMap<String, Vec<SeedTrace>> = BTreeMap::new();
    for path in paths {
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default();
        let (label, seed) = trace::parse_file_name(name).expect("filtered by name");
        let traces = groups.entry(label.clone()).or_default();
        if let Some(other) = traces.iter().find(|t| t.seed == seed) {
            return Err(CliError::Input(format!(
                "{} duplicates {}",
                path.display(),
                other.path.display()
            )));
        }
        let rows = trace::read_trace(&path)?;
        traces.push(SeedTrace { label, seed, path, rows });
    }
    Ok(groups
        .into_iter()
        .map(|(label, mut traces)| {
            traces.sort_by_key(|t| t.seed);
            Group { label, traces }
        })
        .collect())
}

/// Checks `OW < NOG < none` on seed-averaged `log10 κ` for every variant
/// that has all three policies, and that no seed has the untreated run
/// below both treatments.
pub fn ordering_checks(groups: &[Group]) -> Vec<OrderingCheck> {
    let mut variants: Vec<&str> = groups.iter().map(|g| g.variant_and_policy().0).collect();
    variants.dedup();
    let mut checks = Vec::new();
    for variant in variants {
        let find = |policy: &str| {
            groups.iter().find(|g| g.variant_and_policy() == (variant, policy))
        };
        let (Some(ow), Some(nog), Some(none)) = (find("ow"), find("nog"), find("none")) else {
            continue;
        };
        let per_seed = |g: &Group, seed: u64| {
            g.traces.iter().find(|t| t.seed == seed).map(SeedTrace::mean_log10_kappa)
        };
        let none_lowest_seeds: Vec<u64> = none
            .traces
            .iter()
            .filter_map(|t| {
                let k = t.mean_log10_kappa();
                match (per_seed(ow, t.seed), per_seed(nog, t.seed)) {
                    (Some(a), Some(b)) if k < a && k < b => Some(t.seed),
                    _ => None,
                }
            })
            .collect();
        let (k_ow, k_nog, k_none) = (ow.mean_log10_kappa(), nog.mean_log10_kappa(), none.mean_log10_kappa());
        checks.push(OrderingCheck {
            variant: variant.to_string(),
            ow: k_ow,
            nog: k_nog,
            none: k_none,
            passed: k_ow < k_nog && k_nog < k_none && none_lowest_seeds.is_empty(),
            none_lowest_seeds,
        });
    }
    checks
}

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

/// Standalone SVG line chart of seed-averaged `log10 κ` against step.
/// Non-finite points break the line.
pub fn render_chart(groups: &[Group]) -> String {
    let (width, height) = (720.0, 420.0);
    let (left, right, top, bottom) = (60.0, 170.0, 20.0, 45.0);
    let series: Vec<(&str, Vec<(usize, f64)>)> =
        groups.iter().map(|g| (g.label.as_str(), g.kappa_series())).collect();
    let points = || series.iter().flat_map(|(_, s)| s.iter().copied());
    let x_max = points().map(|(s, _)| s).max().unwrap_or(0).max(1) as f64;
    let finite = || points().map(|(_, k)| k).filter(|k| k.is_finite());
    let y_lo = finite().fold(0.0f64, f64::min).floor();
    let y_hi = finite().fold(f64::NEG_INFINITY, f64::max).max(y_lo + 1.0).ceil();
    let px = |s: f64| left + s / x_max * (width - left - right);
    let py = |k: f64| height - bottom - (k - y_lo) / (y_hi - y_lo) * (height - top - bottom);

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect width="{width}" height="{height}" fill="white"/>"#);
    let (x0, x1, y0, y1) = (px(0.0), px(x_max), py(y_lo), py(y_hi));
    let _ = writeln!(
        svg,
        r#"<path d="M{x0:.1},{y1:.1} V{y0:.1} H{x1:.1}" fill="none" stroke="black"/>"#
    );
    for i in 0..=4 {
        let s = x_max * i as f64 / 4.0;
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            px(s),
            y0 + 16.0,
            s.round()
        );
        let k = y_lo + (y_hi - y_lo) * i as f64 / 4.0;
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#,
            x0 - 6.0,
            py(k) + 4.0,
            trace::format_float((k * 100.0).round() / 100.0)
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">step</text>"#,
        (x0 + x1) / 2.0,
        height - 8.0
    );
    let _ = writeln!(
        svg,
        r#"<text x="14" y="{:.1}" text-anchor="middle" transform="rotate(-90 14 {:.1})">log10 condition number</text>"#,
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0
    );
    for (i, (label, s)) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let mut segment: Vec<String> = Vec::new();
        let flush = |segment: &mut Vec<String>, svg: &mut String| {
            if !segment.is_empty() {
                let _ = writeln!(
                    svg,
                    r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#,
                    segment.join(" ")
                );
                segment.clear();
            }
        };
        for &(step, k) in s {
            if k.is_finite() {
                segment.push(format!("{:.1},{:.1}", px(step as f64), py(k)));
            } else {
                flush(&mut segment, &mut svg);
            }
        }
        flush(&mut segment, &mut svg);
        let ly = top + 10.0 + 18.0 * i as f64;
        let lx = width - right + 15.0;
        let _ = writeln!(
            svg,
            r#"<line x1="{lx:.1}" y1="{ly:.1}" x2="{:.1}" y2="{ly:.1}" stroke="{color}" stroke-width="2"/><text x="{:.1}" y="{:.1}">{}</text>"#,
            lx + 20.0,
            lx + 25.0,
            ly + 4.0,
            escape(label)
        );
    }
    svg.push_str("</svg>\n");
    svg
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn fmt2(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.2}")
    } else {
        trace::format_float(x)
    }
}

pub fn cmd_report(dir: &Path, chart: bool, out: &mut dyn Write) -> Result<Report, CliError> {
    let groups = load_traces(dir)?;
    say!(
        out,
        "{:<28} {:>5} {:>16} {:>8} {:>12} {:>9}",
        "label",
        "seeds",
        "val_error",
        "min",
        "log10_kappa",
        "failures"
    );
    for g in &groups {
        let v = g.val_error();
        say!(
            out,
            "{:<28} {:>5} {:>16} {:>8} {:>12.3} {:>9}",
            g.label,
            g.traces.len(),
            format!("{} ± {}", fmt2(v.mean), fmt2(v.std)),
            fmt2(v.min),
            g.mean_log10_kappa(),
            g.svd_failures()
        );
    }
    let ordering = ordering_checks(&groups);
    for c in &ordering {
        let status = if c.passed { "PASS" } else { "FAIL" };
        say!(
            out,
            "ordering {}: ow {:.3} < nog {:.3} < none {:.3}, none lowest on seeds {:?}: {status}",
            c.variant,
            c.ow,
            c.nog,
            c.none,
            c.none_lowest_seeds
        );
    }
    if ordering.is_empty() {
        say!(out, "ordering: skipped (needs none, nog and ow traces of one variant)");
    }
    let chart = if chart {
        let path = dir.join(CHART_FILE);
        fs::write(&path, render_chart(&groups)).map_err(|e| CliError::io(&path, e))?;
        say!(out, "wrote {}", path.display());
        Some(path)
    } else {
        None
    };
    if ordering.iter().any(|c| !c.passed) {
        return Err(CliError::CheckFailed("conditioning ordering does not hold".into()));
    }
    Ok(Report { groups, ordering, chart })
}
