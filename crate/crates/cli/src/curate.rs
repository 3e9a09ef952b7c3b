use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use mrrlvr_core::corpus::{load_records, parse_annotations, ProblemRecord, TrajectoryAnnotation};
use mrrlvr_core::curation::{annotate, build_stage_datasets, AnnotationClient, AnnotationTarget, CurationConfig, CurationError};
use mrrlvr_core::fsutil::{to_jsonl, write_atomic};
use mrrlvr_core::seed::sha256_hex;
use rayon::prelude::*;
use serde::Serialize;

use crate::{fail, CmdResult, Context, ExitContext, Failure, EXIT_ANNOTATION, EXIT_DATA, EXIT_INPUT};

#[derive(Debug, clap::Args)]
pub struct Args {
    /// Problem records, one JSON object per line.
    #[arg(long = "in")]
    input: PathBuf,
    /// Output directory for the dataset files.
    #[arg(long)]
    out: PathBuf,
    /// Precomputed annotations (JSONL); skips annotation entirely.
    #[arg(long, conflicts_with = "live")]
    annotations: Option<PathBuf>,
    /// Offline rule-based annotation. This is the default.
    #[arg(long, conflicts_with = "live")]
    mock: bool,
    /// Annotate through the endpoint in MRLVR_ANNOT_URL (key in MRLVR_ANNOT_KEY).
    #[arg(long)]
    live: bool,
    /// Model name sent to the live endpoint.
    #[arg(long, default_value = "annotator")]
    model: String,
    /// Masked instances with fewer masks are dropped.
    #[arg(long)]
    min_masks: Option<usize>,
    /// Fewest annotated steps a reordering instance may have.
    #[arg(long)]
    min_steps: Option<usize>,
    /// Most annotated steps a reordering instance may have.
    #[arg(long)]
    max_steps: Option<usize>,
    /// Split sizes; too few instances for any of them exits 4.
    #[arg(long)]
    stage1_train: Option<usize>,
    #[arg(long)]
    stage1_val: Option<usize>,
    #[arg(long)]
    stage2_train: Option<usize>,
    #[arg(long)]
    stage2_val: Option<usize>,
}

#[derive(Serialize)]
struct Resolved<'a> {
    input: &'a Path,
    out: &'a Path,
    annotation: String,
    curation: &'a CurationConfig,
}

#[derive(Serialize)]
struct SummaryFile<'a> {
    seed: u64,
    input_sha256: String,
    annotation: &'a str,
    config: &'a CurationConfig,
    counts: &'a mrrlvr_core::curation::CurationSummary,
    stage1_train: usize,
    stage1_val: usize,
    stage2_train: usize,
    stage2_val: usize,
}

/// Theorems and steps for one record. An empty half is left empty and
/// shows up later in the skip counts; transport failures abort.
fn annotate_record(client: &AnnotationClient, record: &ProblemRecord) -> Result<TrajectoryAnnotation, CurationError> {
    let mut out = TrajectoryAnnotation {
        problem_id: record.id.clone(),
        ..Default::default()
    };
    match annotate(client, record, AnnotationTarget::Theorems) {
        Ok(a) => out.theorems = a.theorems,
        Err(CurationError::EmptyAnnotation(_)) => {}
        Err(e) => return Err(e),
    }
    match annotate(client, record, AnnotationTarget::Steps) {
        Ok(a) => out.steps = a.steps,
        Err(CurationError::EmptyAnnotation(_)) => {}
        Err(e) => return Err(e),
    }
    Ok(out)
}

pub fn run(ctx: &Context, args: Args) -> CmdResult {
    let mut config = ctx.file.curation.clone();
    config.seed = ctx.seed;
    let overrides = [
        (&mut config.min_masks, args.min_masks),
        (&mut config.min_steps, args.min_steps),
        (&mut config.max_steps, args.max_steps),
        (&mut config.stage1_train, args.stage1_train),
        (&mut config.stage1_val, args.stage1_val),
        (&mut config.stage2_train, args.stage2_train),
        (&mut config.stage2_val, args.stage2_val),
    ];
    for (slot, value) in overrides {
        if let Some(v) = value {
            *slot = v;
        }
    }
    config.validate().exit_code(EXIT_INPUT)?;
    let mode = match (&args.annotations, args.live) {
        (Some(p), _) => format!("file:{}", p.display()),
        (None, true) => format!("live:{}", args.model),
        (None, false) => "mock".to_string(),
    };
    ctx.announce(
        "curate",
        &Resolved {
            input: &args.input,
            out: &args.out,
            annotation: mode.clone(),
            curation: &config,
        },
    );

    let input_bytes = std::fs::read(&args.input)
        .map_err(|e| fail(EXIT_INPUT, format!("cannot read input {}: {e}", args.input.display())))?;
    let records = load_records(&args.input).exit_code(EXIT_INPUT)?;

    let annotations: Vec<TrajectoryAnnotation> = match &args.annotations {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| fail(EXIT_INPUT, format!("cannot read annotations {}: {e}", path.display())))?;
            parse_annotations(&text).exit_code(EXIT_INPUT)?
        }
        None => {
            let client = if args.live {
                AnnotationClient::from_env(&args.model).exit_code(EXIT_ANNOTATION)?
            } else {
                AnnotationClient::mock()
            };
            records
                .par_iter()
                .map(|r| annotate_record(&client, r))
                .collect::<Result<Vec<_>, _>>()
                .exit_code(EXIT_ANNOTATION)?
        }
    };

    let datasets = build_stage_datasets(&records, &annotations, &config).map_err(|e| match e {
        CurationError::InsufficientData { .. } => Failure {
            code: EXIT_DATA,
            error: e.into(),
        },
        other => Failure {
            code: EXIT_INPUT,
            error: other.into(),
        },
    })?;

    std::fs::create_dir_all(&args.out)
        .map_err(|e| fail(1, format!("cannot create {}: {e}", args.out.display())))?;
    let mut files: BTreeMap<&str, Vec<u8>> = BTreeMap::new();
    files.insert("annotations.jsonl", to_jsonl(&annotations).exit_code(1)?);
    files.insert("masked.jsonl", to_jsonl(&datasets.masked).exit_code(1)?);
    files.insert("reorder.jsonl", to_jsonl(&datasets.reorder).exit_code(1)?);
    files.insert("stage1_train.jsonl", to_jsonl(&datasets.stage1_train).exit_code(1)?);
    files.insert("stage1_val.jsonl", to_jsonl(&datasets.stage1_val).exit_code(1)?);
    files.insert("stage2_train.jsonl", to_jsonl(&datasets.stage2_train).exit_code(1)?);
    files.insert("stage2_val.jsonl", to_jsonl(&datasets.stage2_val).exit_code(1)?);
    let summary = SummaryFile {
        seed: ctx.seed,
        input_sha256: sha256_hex(&input_bytes),
        annotation: &mode,
        config: &config,
        counts: &datasets.summary,
        stage1_train: datasets.stage1_train.len(),
        stage1_val: datasets.stage1_val.len(),
        stage2_train: datasets.stage2_train.len(),
        stage2_val: datasets.stage2_val.len(),
    };
    let mut summary_bytes = serde_json::to_vec_pretty(&summary).exit_code(1)?;
    summary_bytes.push(b'\n');
    files.insert("summary.json", summary_bytes);
    for (name, bytes) in &files {
        let path = args.out.join(name);
        write_atomic(&path, bytes).map_err(|e| fail(1, format!("cannot write {}: {e}", path.display())))?;
    }

    let s = &datasets.summary;
    println!("records               {}", s.records);
    println!("masked built          {}", s.masked_built);
    println!("dropped (< {} masks)   {}", config.min_masks, s.masked_below_min);
    println!("reorder built         {}", s.reorder_built);
    for (reason, n) in &s.skipped {
        println!("skipped {reason:<22} {n}");
    }
    println!(
        "stage1 train/val      {}/{}",
        datasets.stage1_train.len(),
        datasets.stage1_val.len()
    );
    println!(
        "stage2 train/val      {}/{}",
        datasets.stage2_train.len(),
        datasets.stage2_val.len()
    );
    println!("wrote {}", args.out.display());
    Ok(())
}
