//! Masked-and-reordered RLVR at desk scale.
//!
//! The crate is organised along the pipeline:
//!
//! - [`corpus`]: problem records, annotations and curated instances.
//! - [`mathtext`]: normalisation, equivalence and similarity over math text.
//! - [`rewards`]: answer parsers plus the fill, ordering, process and outcome rewards.
//! - [`curation`]: masking, step shuffling, filters, prompt rendering, annotation client.
//! - [`grpo`]: the group-relative clipped objective, its gradient, toy policies and tasks.
//! - [`pipeline`]: two-stage orchestration with checkpoints, manifests and resume.
//! - [`eval`]: unbiased Pass@k and the relative-gain report.

pub mod corpus;
pub mod curation;
pub mod eval;
pub mod fsutil;
pub mod grpo;
pub mod mathtext;
pub mod pipeline;
pub mod rewards;
pub mod seed;

/// Literal tag that stands in for a masked formula.
pub const MASK_TAG: &str = "<formula_masked>";
