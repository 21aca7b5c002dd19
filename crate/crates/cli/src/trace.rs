//! Trace CSV files.

use std::fs;
use std::path::Path;

use orthocond::train::{ConditioningTrace, StepRecord};

use crate::CliError;

pub const HEADER: &str =
    "step,epoch,loss,val_error,log10_kappa,eta_used,grad_ortho_residual,weight_ortho_residual,svd_failures";

/// One logged step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub step: usize,
    pub epoch: usize,
    pub loss: f64,
    pub val_error: f64,
    pub log10_kappa: f64,
    pub eta_used: f64,
    pub grad_ortho_residual: f64,
    pub weight_ortho_residual: f64,
    pub svd_failures: usize,
}

impl From<&StepRecord> for TraceRow {
    fn from(r: &StepRecord) -> Self {
        Self {
            step: r.step,
            epoch: r.epoch,
            loss: r.loss,
            val_error: r.val_error,
            log10_kappa: r.log10_kappa,
            eta_used: r.eta_used,
            grad_ortho_residual: r.grad_ortho_residual,
            weight_ortho_residual: r.weight_ortho_residual,
            svd_failures: r.svd_failures,
        }
    }
}

/// Nine significant digits, shortest of fixed and scientific notation
/// (like C's `%.9g`); `inf`, `-inf` and `nan` for non-finite values.
pub fn format_float(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf" } else { "-inf" }.into();
    }
    if x == 0.0 {
        return "0".into();
    }
    let sci = format!("{x:.8e}");
    let (mantissa, exp) = sci.split_once('e').expect("scientific format");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-5..9).contains(&exp) {
        let decimals = (8 - exp) as usize;
        trim_zeros(&format!("{x:.decimals$}")).to_string()
    } else {
        format!("{}e{exp}", trim_zeros(mantissa))
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

/// Steps that go into the file: every `interval`-th step and the last step
/// of each epoch.
pub fn logged_rows(trace: &ConditioningTrace, interval: usize) -> Vec<TraceRow> {
    let records = &trace.records;
    records
        .iter()
        .enumerate()
        .filter(|(k, r)| {
            let epoch_end = records.get(k + 1).is_none_or(|next| next.epoch != r.epoch);
            r.step % interval == 0 || epoch_end
        })
        .map(|(_, r)| TraceRow::from(r))
        .collect()
}

pub fn render(rows: &[TraceRow]) -> String {
    let mut out = String::with_capacity(64 * (rows.len() + 1));
    out.push_str(HEADER);
    out.push('\n');
    for r in rows {
        let floats = [
            r.loss,
            r.val_error,
            r.log10_kappa,
            r.eta_used,
            r.grad_ortho_residual,
            r.weight_ortho_residual,
        ]
        .map(format_float);
        out.push_str(&format!("{},{},{},{}\n", r.step, r.epoch, floats.join(","), r.svd_failures));
    }
    out
}

pub fn write_trace(path: &Path, rows: &[TraceRow]) -> Result<(), CliError> {
    fs::write(path, render(rows)).map_err(|e| CliError::io(path, e))
}

/// Parses a trace file; errors name the file and the 1-based line.
pub fn parse(text: &str, origin: &Path) -> Result<Vec<TraceRow>, CliError> {
    let bad = |line: usize, msg: String| CliError::Input(format!("{}:{line}: {msg}", origin.display()));
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == HEADER => {}
        Some(h) => return Err(bad(1, format!("unexpected header {h:?}"))),
        None => return Err(bad(1, "empty file".into())),
    }
    let mut rows = Vec::new();
    for (k, line) in lines.enumerate() {
        let n = k + 2;
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 9 {
            return Err(bad(n, format!("expected 9 fields, found {}", fields.len())));
        }
        let int = |i: usize| {
            fields[i]
                .parse::<usize>()
                .map_err(|_| bad(n, format!("field {} is not a count: {:?}", i + 1, fields[i])))
        };
        let float = |i: usize| {
            fields[i]
                .parse::<f64>()
                .map_err(|_| bad(n, format!("field {} is not a number: {:?}", i + 1, fields[i])))
        };
        rows.push(TraceRow {
            step: int(0)?,
            epoch: int(1)?,
            loss: float(2)?,
            val_error: float(3)?,
            log10_kappa: float(4)?,
            eta_used: float(5)?,
            grad_ortho_residual: float(6)?,
            weight_ortho_residual: float(7)?,
            svd_failures: int(8)?,
        });
    }
    if let Some(pos) = rows.windows(2).position(|w| w[1].step <= w[0].step) {
        return Err(bad(pos + 3, "step index is not increasing".into()));
    }
    Ok(rows)
}

pub fn read_trace(path: &Path) -> Result<Vec<TraceRow>, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    parse(&text, path)
}

pub fn file_name(label: &str, seed: u64) -> String {
    format!("trace_{label}_seed{seed}.csv")
}

/// Inverse of [`file_name`].
pub fn parse_file_name(name: &str) -> Option<(String, u64)> {
    let stem = name.strip_prefix("trace_")?.strip_suffix(".csv")?;
    let (label, seed) = stem.rsplit_once("_seed")?;
    Some((label.to_string(), seed.parse().ok()?))
}
