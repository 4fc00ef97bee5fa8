//! Onset decoding, tolerance matching and score reporting.

mod baseline;
mod decode;
mod evaluate;
mod matching;
mod predictions;
mod report;

pub use baseline::{informed_random_baseline, informed_random_trials};
pub use decode::{decode_onsets, DecodeParams};
pub use evaluate::{evaluate_model, evaluate_scorer, score_predictions, FrameScorer, ModelScorer, WindowOutputs};
pub use matching::{match_onsets, prf, Counts, MatchResult, Prf, MATCH_SLACK};
pub use predictions::{read_predictions, write_predictions, OnsetPrediction};
pub use report::{render_report, Averaging, EvalReport, ReferenceRow, RenderedReport, VideoScore, REFERENCE_LABEL, REFERENCE_ROWS};

/// Default matching tolerance in seconds.
pub const DEFAULT_TOLERANCE_SEC: f64 = 0.05;
