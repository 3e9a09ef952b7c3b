use std::collections::HashMap;
use std::path::PathBuf;

use mrrlvr_core::corpus::{MaskedInstance, ProblemKind, ProblemRecord, ReorderInstance};
use mrrlvr_core::fsutil::{to_jsonl, write_atomic};
use mrrlvr_core::rewards::{
    final_reward, process_reward, MaskScoring, ProcessInstance, ProcessRewardConfig, ProcessTaskKind, RewardBreakdown,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::{fail, CmdResult, Context, ExitContext, EXIT_INPUT};

#[derive(Debug, clap::Args)]
pub struct Args {
    /// Instance files: masked or reorder instances, stage-one files, or
    /// problem records (scored with the final-answer reward).
    #[arg(long, required = true, num_args = 1..)]
    instances: Vec<PathBuf>,
    /// Responses, one `{"instance_id": .., "response": ..}` per line.
    #[arg(long)]
    responses: PathBuf,
    /// Output JSONL; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Masked positions scored per fill instance.
    #[arg(long)]
    eval_positions: Option<usize>,
    /// Fill similarities below this score zero (1 = exact match only).
    #[arg(long)]
    similarity_floor: Option<f64>,
}

enum Instance {
    Mask(MaskedInstance),
    Reorder(ReorderInstance),
    Final(ProblemRecord),
}

impl Instance {
    fn from_value(v: Value) -> Result<(String, Self), String> {
        let has = |k: &str| v.get(k).is_some();
        let parsed = if has("trajectory") {
            let r: ProblemRecord = serde_json::from_value(v).map_err(|e| e.to_string())?;
            (r.id.clone(), Self::Final(r))
        } else if has("ground_truths") {
            let m: MaskedInstance = serde_json::from_value(v).map_err(|e| e.to_string())?;
            m.check()?;
            (m.instance_id.clone(), Self::Mask(m))
        } else if has("true_order") {
            let r: ReorderInstance = serde_json::from_value(v).map_err(|e| e.to_string())?;
            r.check()?;
            (r.instance_id.clone(), Self::Reorder(r))
        } else {
            return Err("not a masked instance, reorder instance or problem record".into());
        };
        Ok(parsed)
    }
}

#[derive(Deserialize)]
struct Response {
    instance_id: String,
    response: String,
}

#[derive(Serialize)]
struct Scored<'a> {
    instance_id: &'a str,
    kind: String,
    reward: f64,
    breakdown: RewardBreakdown,
    seed: u64,
}

#[derive(Serialize)]
struct Resolved<'a> {
    instances: &'a [PathBuf],
    responses: &'a PathBuf,
    rewards: &'a ProcessRewardConfig,
}

fn read_jsonl(path: &PathBuf) -> Result<Vec<(usize, Value)>, crate::Failure> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| fail(EXIT_INPUT, format!("cannot read {}: {e}", path.display())))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l)
                .map(|v| (i + 1, v))
                .map_err(|e| fail(EXIT_INPUT, format!("{}:{}: {e}", path.display(), i + 1)))
        })
        .collect()
}

/// Ten equal-width bins over [0, 1]; 1.0 falls in the last.
fn histogram(values: &[f64]) -> String {
    let mut bins = [0usize; 10];
    for &v in values {
        bins[((v * 10.0) as usize).min(9)] += 1;
    }
    let mut out = String::new();
    for (i, n) in bins.iter().enumerate() {
        out.push_str(&format!("  [{:.1}, {:.1}{} {n}\n", i as f64 / 10.0, (i + 1) as f64 / 10.0, if i == 9 { "]" } else { ")" }));
    }
    out
}

pub fn run(ctx: &Context, args: Args) -> CmdResult {
    let config = ProcessRewardConfig {
        eval_positions: args.eval_positions.unwrap_or(ctx.file.rewards.eval_positions),
        seed: ctx.seed,
        scoring: MaskScoring {
            similarity_floor: args.similarity_floor.unwrap_or(ctx.file.rewards.similarity_floor),
        },
    };
    ctx.announce(
        "score",
        &Resolved {
            instances: &args.instances,
            responses: &args.responses,
            rewards: &config,
        },
    );

    let mut instances: HashMap<String, Instance> = HashMap::new();
    for path in &args.instances {
        for (line, v) in read_jsonl(path)? {
            let (id, inst) = Instance::from_value(v)
                .map_err(|e| fail(EXIT_INPUT, format!("{}:{line}: {e}", path.display())))?;
            if instances.insert(id.clone(), inst).is_some() {
                return Err(fail(EXIT_INPUT, format!("duplicate instance_id `{id}`")));
            }
        }
    }
    let mut responses = Vec::new();
    for (line, v) in read_jsonl(&args.responses)? {
        let r: Response = serde_json::from_value(v)
            .map_err(|e| fail(EXIT_INPUT, format!("{}:{line}: {e}", args.responses.display())))?;
        if !instances.contains_key(&r.instance_id) {
            return Err(fail(
                EXIT_INPUT,
                format!("{}:{line}: unknown instance_id `{}`", args.responses.display(), r.instance_id),
            ));
        }
        responses.push(r);
    }

    let scored: Vec<Scored> = responses
        .par_iter()
        .map(|r| {
            let value = match &instances[&r.instance_id] {
                Instance::Mask(m) => process_reward(ProcessTaskKind::Mask, ProcessInstance::Mask(m), &r.response, &config),
                Instance::Reorder(o) => {
                    process_reward(ProcessTaskKind::Reorder, ProcessInstance::Reorder(o), &r.response, &config)
                }
                Instance::Final(p) if p.kind == ProblemKind::Computation => Ok(final_reward(&p.final_answer, &r.response)),
                Instance::Final(p) => {
                    return Err(fail(EXIT_INPUT, format!("`{}` is a proof record with no final answer to check", p.id)))
                }
            }
            .exit_code(1)?;
            Ok(Scored {
                instance_id: &r.instance_id,
                kind: value.breakdown.kind.clone(),
                reward: value.value,
                breakdown: value.breakdown,
                seed: ctx.seed,
            })
        })
        .collect::<Result<_, _>>()?;

    let bytes = to_jsonl(&scored).exit_code(1)?;
    match &args.out {
        Some(path) => {
            write_atomic(path, &bytes).map_err(|e| fail(1, format!("cannot write {}: {e}", path.display())))?;
        }
        None => print!("{}", String::from_utf8_lossy(&bytes)),
    }
    let values: Vec<f64> = scored.iter().map(|s| s.reward).collect();
    let mean = if values.is_empty() { 0.0 } else { values.iter().sum::<f64>() / values.len() as f64 };
    let malformed = scored.iter().filter(|s| s.breakdown.malformed.is_some()).count();
    eprintln!("{} responses, mean reward {mean:.4}, {malformed} malformed", values.len());
    eprint!("{}", histogram(&values));
    Ok(())
}
