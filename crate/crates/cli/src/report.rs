use std::collections::BTreeMap;
use std::path::PathBuf;

use mrrlvr_core::eval::{
    aggregate_gains, build_report, evaluate_set, parse_table_csv, render_report, render_report_csv, ProblemResult,
};
use mrrlvr_core::fsutil::write_atomic;
use serde::Serialize;

use crate::{fail, CmdResult, Context, ExitContext, EXIT_INPUT};

#[derive(Debug, clap::Args)]
pub struct EvalArgs {
    /// Per-problem results: `{"problem_id", "n", "c"}` plus optional
    /// `benchmark` and `method`, one per line.
    #[arg(long)]
    results: PathBuf,
    /// Comma-separated k values.
    #[arg(long, value_delimiter = ',')]
    k: Vec<u64>,
    /// Also write the means as JSON.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, clap::Args)]
pub struct ReportArgs {
    /// Table CSV: family,benchmark,k,base,grpo,mr_rlvr[,published_gain].
    #[arg(long = "from")]
    from: PathBuf,
    /// Write the text report here as well as to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write per-cell gains as CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Serialize)]
struct EvalOutput {
    seed: u64,
    ks: Vec<u64>,
    problems: usize,
    overall: BTreeMap<u64, f64>,
    /// Keyed by `benchmark/method` when the results carry them.
    groups: BTreeMap<String, BTreeMap<u64, f64>>,
}

fn write(path: &PathBuf, bytes: &[u8]) -> CmdResult {
    write_atomic(path, bytes).map_err(|e| fail(1, format!("cannot write {}: {e}", path.display())))
}

pub fn run_eval(ctx: &Context, args: EvalArgs) -> CmdResult {
    let ks = if args.k.is_empty() { ctx.file.eval.ks.clone() } else { args.k.clone() };
    ctx.announce(
        "eval",
        &serde_json::json!({ "results": args.results, "ks": ks }),
    );
    let text = std::fs::read_to_string(&args.results)
        .map_err(|e| fail(EXIT_INPUT, format!("cannot read {}: {e}", args.results.display())))?;
    let mut results = Vec::new();
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let r: ProblemResult = serde_json::from_str(line)
            .map_err(|e| fail(EXIT_INPUT, format!("{}:{}: {e}", args.results.display(), i + 1)))?;
        if r.n == 0 || r.c > r.n {
            return Err(fail(EXIT_INPUT, format!("{}:{}: need 0 <= c <= n, n >= 1", args.results.display(), i + 1)));
        }
        results.push(r);
    }
    let overall = evaluate_set(&results, &ks).exit_code(EXIT_INPUT)?;
    let mut grouped: BTreeMap<String, Vec<ProblemResult>> = BTreeMap::new();
    for r in &results {
        if r.benchmark.is_some() || r.method.is_some() {
            let key = format!(
                "{}/{}",
                r.benchmark.as_deref().unwrap_or("-"),
                r.method.as_deref().unwrap_or("-")
            );
            grouped.entry(key).or_default().push(r.clone());
        }
    }
    let mut groups = BTreeMap::new();
    for (key, rs) in &grouped {
        groups.insert(key.clone(), evaluate_set(rs, &ks).exit_code(EXIT_INPUT)?);
    }

    println!("{} problems", results.len());
    for (k, v) in &overall {
        println!("Pass@{k} {v:.6}");
    }
    for (key, means) in &groups {
        let cells: Vec<String> = means.iter().map(|(k, v)| format!("Pass@{k} {v:.6}")).collect();
        println!("{key}: {}", cells.join("  "));
    }
    if let Some(path) = &args.out {
        let out = EvalOutput {
            seed: ctx.seed,
            ks,
            problems: results.len(),
            overall,
            groups,
        };
        write(path, &serde_json::to_vec_pretty(&out).exit_code(1)?)?;
    }
    Ok(())
}

pub fn run_report(ctx: &Context, args: ReportArgs) -> CmdResult {
    ctx.announce("report", &serde_json::json!({ "from": args.from }));
    let text = std::fs::read_to_string(&args.from)
        .map_err(|e| fail(EXIT_INPUT, format!("cannot read {}: {e}", args.from.display())))?;
    let rows = parse_table_csv(&text).exit_code(EXIT_INPUT)?;
    let table = build_report(rows).exit_code(EXIT_INPUT)?;
    let rendered = render_report(&table).exit_code(EXIT_INPUT)?;
    let agg = aggregate_gains(&table).exit_code(EXIT_INPUT)?;
    print!("{rendered}");
    println!(
        "Averages: {:.2} / {:.2} / {:.2} (Pass@1/5/8)",
        agg.pass1_avg, agg.pass5_avg, agg.pass8_avg
    );
    if let Some(path) = &args.out {
        write(path, rendered.as_bytes())?;
    }
    if let Some(path) = &args.csv {
        write(path, render_report_csv(&table).as_bytes())?;
    }
    Ok(())
}
