//! Synthetic benchmark generation and evaluation.

pub mod eval;
pub mod synth;

pub use eval::{
    ablation_csv, evaluate, hop_ablation, is_hit, normalize_answer, require_all_hops, sweep_csv, sweep_incompleteness,
    AblationRow, EvalRecord, EvalSetup, MatchMode, Metrics, SweepPoint, ABLATION_HEADER,
};
pub use synth::{generate, SyntheticBenchmark, SyntheticSpec, VocabularyStyle};
