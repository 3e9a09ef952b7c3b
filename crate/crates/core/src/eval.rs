//! Unbiased Pass@k estimation and the relative-gain benchmark report.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("bad arguments: n={n}, c={c}, k={k}")]
    BadArgs { n: u64, c: u64, k: u64 },
    #[error("problem `{0}` has fewer samples than the largest k")]
    KExceedsN(String),
    #[error("baseline value must be positive")]
    ZeroBaseline,
    #[error("table is missing cells: {0}")]
    MissingCells(String),
    #[error("no results")]
    Empty,
    #[error("cannot parse table: {0}")]
    Parse(String),
}

/// Sampling settings used for the published evaluations. The toy harness
/// samples from its own policy; these are kept for the record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub samples_per_problem: u64,
    pub temperature: f64,
    pub top_p: f64,
    pub max_tokens: usize,
    pub ks: Vec<u64>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            samples_per_problem: 64,
            temperature: 0.6,
            top_p: 0.95,
            max_tokens: 4096,
            ks: vec![1, 5, 8],
        }
    }
}

/// Probability that at least one of `k` draws (without replacement) from
/// `n` samples, `c` of them correct, is correct.
///
/// Uses `1 - prod_{i<k} (n-c-i)/(n-i)` so no binomial is ever formed.
pub fn pass_at_k(n: u64, c: u64, k: u64) -> Result<f64, EvalError> {
    if k < 1 || k > n || c > n {
        return Err(EvalError::BadArgs { n, c, k });
    }
    if n - c < k {
        return Ok(1.0);
    }
    if k == 1 {
        return Ok(c as f64 / n as f64);
    }
    let mut miss = 1.0;
    for i in 0..k {
        miss *= (n - c - i) as f64 / (n - i) as f64;
    }
    Ok(1.0 - miss)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProblemResult {
    pub problem_id: String,
    pub n: u64,
    pub c: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub method: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub benchmark: Option<String>,
}

/// Dataset mean of per-problem Pass@k for each requested k.
pub fn evaluate_set(results: &[ProblemResult], ks: &[u64]) -> Result<BTreeMap<u64, f64>, EvalError> {
    if results.is_empty() {
        return Err(EvalError::Empty);
    }
    let k_max = ks.iter().copied().max().unwrap_or(1);
    if let Some(r) = results.iter().find(|r| r.n < k_max) {
        return Err(EvalError::KExceedsN(r.problem_id.clone()));
    }
    let mut out = BTreeMap::new();
    for &k in ks {
        let mut total = 0.0;
        for r in results {
            total += pass_at_k(r.n, r.c, k)?;
        }
        out.insert(k, total / results.len() as f64);
    }
    Ok(out)
}

/// Percentage change of `new` over `old`.
pub fn relative_gain(new: f64, old: f64) -> Result<f64, EvalError> {
    if !(old > 0.0) {
        return Err(EvalError::ZeroBaseline);
    }
    Ok((new / old - 1.0) * 100.0)
}

/// One benchmark × k cell: the three Pass@k means (percent) and, when the
/// source prints one, the published arrow.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub family: String,
    pub benchmark: String,
    pub k: u64,
    pub base: f64,
    pub grpo: f64,
    pub mr_rlvr: f64,
    #[serde(default)]
    pub published_gain: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportCell {
    pub row: TableRow,
    /// Gain recomputed from the printed means.
    pub gain: f64,
}

impl ReportCell {
    /// Published arrow if present, else the recomputed one.
    pub fn headline_gain(&self) -> f64 {
        self.row.published_gain.unwrap_or(self.gain)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub cells: Vec<ReportCell>,
}

pub fn parse_table_csv(text: &str) -> Result<Vec<TableRow>, EvalError> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    reader
        .deserialize()
        .map(|r| r.map_err(|e| EvalError::Parse(e.to_string())))
        .collect()
}

pub fn build_report(rows: Vec<TableRow>) -> Result<BenchmarkReport, EvalError> {
    let cells = rows
        .into_iter()
        .map(|row| {
            let gain = relative_gain(row.mr_rlvr, row.grpo)?;
            Ok(ReportCell { row, gain })
        })
        .collect::<Result<Vec<_>, EvalError>>()?;
    Ok(BenchmarkReport { cells })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AggregateGains {
    pub pass1_avg: f64,
    pub pass5_avg: f64,
    pub pass8_avg: f64,
}

fn aggregate_with(
    table: &BenchmarkReport,
    pick: impl Fn(&ReportCell) -> f64,
) -> Result<AggregateGains, EvalError> {
    let families: BTreeSet<&str> = table.cells.iter().map(|c| c.row.family.as_str()).collect();
    let benchmarks: BTreeSet<&str> = table.cells.iter().map(|c| c.row.benchmark.as_str()).collect();
    if families.is_empty() {
        return Err(EvalError::MissingCells("table is empty".into()));
    }
    let mut avgs = [0.0; 3];
    for (slot, k) in [1u64, 5, 8].into_iter().enumerate() {
        let mut sum = 0.0;
        for fam in &families {
            for bench in &benchmarks {
                let cell = table
                    .cells
                    .iter()
                    .find(|c| c.row.k == k && c.row.family == *fam && c.row.benchmark == *bench)
                    .ok_or_else(|| EvalError::MissingCells(format!("{fam}/{bench}/Pass@{k}")))?;
                sum += pick(cell);
            }
        }
        avgs[slot] = sum / (families.len() * benchmarks.len()) as f64;
    }
    Ok(AggregateGains {
        pass1_avg: avgs[0],
        pass5_avg: avgs[1],
        pass8_avg: avgs[2],
    })
}

/// Mean relative gain per k over every family × benchmark cell, using the
/// published arrows where the table carries them.
pub fn aggregate_gains(table: &BenchmarkReport) -> Result<AggregateGains, EvalError> {
    aggregate_with(table, ReportCell::headline_gain)
}

/// Same as [`aggregate_gains`] but always from the recomputed gains.
pub fn aggregate_recomputed(table: &BenchmarkReport) -> Result<AggregateGains, EvalError> {
    aggregate_with(table, |c| c.gain)
}

pub fn arrow(gain: f64) -> String {
    if gain >= 0.0 {
        format!("↑{gain:.2}%")
    } else {
        format!("↓{:.2}%", -gain)
    }
}

/// Fixed-layout text table: one block per model family, one line per
/// benchmark, Base / +GRPO / +MR-RLVR for each k followed by the arrow.
pub fn render_report(table: &BenchmarkReport) -> Result<String, EvalError> {
    let mut out = String::new();
    let mut families: Vec<&str> = Vec::new();
    let mut benchmarks: Vec<&str> = Vec::new();
    for c in &table.cells {
        if !families.contains(&c.row.family.as_str()) {
            families.push(&c.row.family);
        }
        if !benchmarks.contains(&c.row.benchmark.as_str()) {
            benchmarks.push(&c.row.benchmark);
        }
    }
    for fam in families {
        let _ = writeln!(out, "== {fam} ==");
        let _ = writeln!(
            out,
            "{:<10} | {:^34} | {:^34} | {:^34}",
            "Benchmark", "Pass@1 (%)", "Pass@5 (%)", "Pass@8 (%)"
        );
        let _ = writeln!(
            out,
            "{:<10} | {}| {}| {}",
            "",
            "Base   +GRPO  +MR-RLVR            ",
            "Base   +GRPO  +MR-RLVR            ",
            "Base   +GRPO  +MR-RLVR            "
        );
        for bench in &benchmarks {
            let mut line = format!("{bench:<10}");
            for k in [1u64, 5, 8] {
                match table
                    .cells
                    .iter()
                    .find(|c| c.row.family == fam && c.row.benchmark == *bench && c.row.k == k)
                {
                    Some(c) => {
                        let _ = write!(
                            line,
                            " | {:>5.2}  {:>5.2}  {:>5.2} {:<10}",
                            c.row.base,
                            c.row.grpo,
                            c.row.mr_rlvr,
                            arrow(c.gain)
                        );
                    }
                    None => line.push_str(&format!(" | {:<33}", "-")),
                }
            }
            let _ = writeln!(out, "{}", line.trim_end());
        }
        out.push('\n');
    }
    let agg = aggregate_gains(table)?;
    let rec = aggregate_recomputed(table)?;
    let _ = writeln!(
        out,
        "Average relative gain (published arrows): Pass@1 {:+.2}%  Pass@5 {:+.2}%  Pass@8 {:+.2}%",
        agg.pass1_avg, agg.pass5_avg, agg.pass8_avg
    );
    let _ = writeln!(
        out,
        "Average relative gain (recomputed):       Pass@1 {:+.2}%  Pass@5 {:+.2}%  Pass@8 {:+.2}%",
        rec.pass1_avg, rec.pass5_avg, rec.pass8_avg
    );
    Ok(out)
}

/// CSV form of the report with both the recomputed and the published gain.
pub fn render_report_csv(table: &BenchmarkReport) -> String {
    let mut out = String::from("family,benchmark,k,base,grpo,mr_rlvr,gain,published_gain\n");
    for c in &table.cells {
        let _ = writeln!(
            out,
            "{},{},{},{:.2},{:.2},{:.2},{:.4},{}",
            c.row.family,
            c.row.benchmark,
            c.row.k,
            c.row.base,
            c.row.grpo,
            c.row.mr_rlvr,
            c.gain,
            c.row
                .published_gain
                .map(|g| format!("{g:.2}"))
                .unwrap_or_default()
        );
    }
    out
}
