use std::path::PathBuf;

use mrrlvr_core::pipeline::{
    latest_checkpoint, read_metrics, resume, run_stage1, run_stage2, Checkpoint, PipelineError, Stage, StageConfig,
};

use crate::{fail, CmdResult, Context, Failure, EXIT_DATA, EXIT_INPUT};

#[derive(Debug, clap::Args)]
pub struct Args {
    /// 1: process rewards on fill and ordering tasks. 2: outcome reward.
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=2))]
    stage: u8,
    /// Run directory: manifest, metrics and checkpoints.
    #[arg(long, default_value = "run")]
    out: PathBuf,
    /// Stage-one checkpoint to start stage two from.
    #[arg(long, conflicts_with = "from_scratch")]
    init: Option<PathBuf>,
    /// Stage two from a fresh policy: the outcome-only baseline.
    #[arg(long)]
    from_scratch: bool,
    /// Continue from a checkpoint file, or from the latest one in `--out`
    /// when no path is given.
    #[arg(long, num_args = 0..=1)]
    resume: Option<Option<PathBuf>>,
    /// Stop after this many steps, leaving a resumable checkpoint.
    #[arg(long)]
    halt_at: Option<u64>,
    /// Passes over the task pools.
    #[arg(long)]
    epochs: Option<usize>,
    /// Queries per step, each sampled as one group.
    #[arg(long)]
    batch_queries: Option<usize>,
    /// Step cap across all epochs.
    #[arg(long)]
    max_steps: Option<u64>,
    #[arg(long)]
    checkpoint_every: Option<u64>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    kl_coef: Option<f64>,
    #[arg(long)]
    group_size: Option<usize>,
    /// Task JSONL files instead of generated synthetic tasks.
    #[arg(long, num_args = 1..)]
    dataset: Vec<PathBuf>,
    /// Language-model learning rate instead of the toy default.
    #[arg(long)]
    paper_scale: bool,
}

fn code_for(e: &PipelineError) -> u8 {
    match e {
        PipelineError::DatasetMissing(_) => EXIT_DATA,
        PipelineError::Grpo(_) => 1,
        _ => EXIT_INPUT,
    }
}

fn pipeline(e: PipelineError) -> Failure {
    Failure {
        code: code_for(&e),
        error: e.into(),
    }
}

pub fn resolve(ctx: &Context, args: &Args) -> StageConfig {
    let stage = if args.stage == 1 { Stage::One } else { Stage::Two };
    let file = &ctx.file;
    let mut c = StageConfig::new(stage, &args.out);
    c.seed = ctx.seed;
    c.grpo = file.grpo;
    c.policy = file.policy;
    c.synthetic = Some(file.synthetic);
    c.epochs = args.epochs.unwrap_or(file.pipeline.epochs);
    c.batch_queries = args.batch_queries.unwrap_or(file.pipeline.batch_queries);
    c.max_steps = args.max_steps.or(file.pipeline.max_steps);
    c.checkpoint_every = args.checkpoint_every.unwrap_or(file.pipeline.checkpoint_every);
    c.datasets = if args.dataset.is_empty() {
        file.pipeline.datasets.clone()
    } else {
        args.dataset.clone()
    };
    if args.paper_scale || file.pipeline.paper_scale {
        c = c.paper_scale();
    }
    if let Some(lr) = args.learning_rate {
        c.grpo.learning_rate = lr;
    }
    if let Some(k) = args.kl_coef {
        c.grpo.kl_coef = k;
    }
    if let Some(g) = args.group_size {
        c.grpo.group_size = g;
    }
    c.from_scratch = args.from_scratch;
    c.init_checkpoint = args.init.clone();
    c.halt_at = args.halt_at;
    c
}

pub fn run(ctx: &Context, args: Args) -> CmdResult {
    let config = resolve(ctx, &args);
    ctx.announce("train", &config);
    config.validate().map_err(pipeline)?;

    let done = match &args.resume {
        Some(p) => {
            let dir = p.as_ref().unwrap_or(&args.out);
            let path = if dir.is_dir() {
                latest_checkpoint(dir).ok_or_else(|| fail(EXIT_INPUT, format!("no checkpoint in {}", dir.display())))?
            } else {
                dir.clone()
            };
            eprintln!("resuming from {}", path.display());
            let ckpt = Checkpoint::load(&path).map_err(pipeline)?;
            resume(&ckpt, &config).map_err(pipeline)?
        }
        None => match config.stage {
            Stage::One => run_stage1(&config).map_err(pipeline)?,
            Stage::Two => {
                let init = match &config.init_checkpoint {
                    Some(p) => Some(Checkpoint::load(p).map_err(pipeline)?),
                    None => None,
                };
                run_stage2(&config, init.as_ref()).map_err(pipeline)?
            }
        },
    };

    let metrics = read_metrics(&config.checkpoint_dir).map_err(pipeline)?;
    let tail = &metrics[metrics.len().saturating_sub(10)..];
    let recent = if tail.is_empty() {
        0.0
    } else {
        tail.iter().map(|m| m.mean_reward).sum::<f64>() / tail.len() as f64
    };
    println!("stage {} step {}", done.stage.number(), done.step);
    println!("mean reward over the last {} steps: {recent:.4}", tail.len());
    println!("run directory {}", config.checkpoint_dir.display());
    Ok(())
}
