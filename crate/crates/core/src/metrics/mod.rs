//! Confusion counts, sensitivity/specificity/balanced accuracy, IoU, and
//! dataset evaluation.
//!
//! Frames are pooled before ratios are taken (micro-averaging): a report over
//! several frames or sequences is computed from the merged counts.

mod confusion;
mod evaluate;
mod report;

pub use confusion::{accumulate, ConfusionCounts};
pub use evaluate::{evaluate, predict_mask, EvaluationReport, SequenceRow, AGGREGATE_ROW};
pub use report::{
    binary_report, format_percent, iou_report, mean_defined, presentation_order, round_half_up,
    BinaryReport, IouReport,
};
