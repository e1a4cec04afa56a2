use super::confusion::ConfusionCounts;
use crate::error::{Error, Result};

/// Binary metrics with the tool (class 1) as the positive class. `None` marks
/// an undefined ratio.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BinaryReport {
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
    pub balanced_accuracy: Option<f64>,
}

impl BinaryReport {
    pub fn from_rates(sensitivity: Option<f64>, specificity: Option<f64>) -> Self {
        Self {
            sensitivity,
            specificity,
            balanced_accuracy: sensitivity.zip(specificity).map(|(a, b)| (a + b) / 2.0),
        }
    }
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

pub fn binary_report(counts: &ConfusionCounts) -> Result<BinaryReport> {
    if counts.num_classes() != 2 {
        return Err(Error::invalid(format!(
            "binary report needs 2 classes, counts have {}",
            counts.num_classes()
        )));
    }
    let tool = 1;
    let sensitivity = ratio(counts.tp[tool], counts.tp[tool] + counts.fn_[tool]);
    let specificity = ratio(counts.tn[tool], counts.tn[tool] + counts.fp[tool]);
    Ok(BinaryReport::from_rates(sensitivity, specificity))
}

#[derive(Clone, Debug, PartialEq)]
pub struct IouReport {
    /// Indexed by class ID.
    pub per_class: Vec<Option<f64>>,
    /// Mean over classes present in the ground truth.
    pub mean: Option<f64>,
}

/// `tp / (tp + fp + fn)` per class. A class absent from both prediction and
/// ground truth is undefined; the mean covers classes present in the ground
/// truth.
pub fn iou_report(counts: &ConfusionCounts) -> IouReport {
    let per_class: Vec<Option<f64>> = (0..counts.num_classes())
        .map(|c| ratio(counts.tp[c], counts.tp[c] + counts.fp[c] + counts.fn_[c]))
        .collect();
    let present: Vec<Option<f64>> = per_class
        .iter()
        .enumerate()
        .map(|(c, v)| if counts.in_ground_truth(c) { *v } else { None })
        .collect();
    IouReport {
        mean: mean_defined(&present),
        per_class,
    }
}

/// Mean of the defined entries; `None` if there are none.
pub fn mean_defined(values: &[Option<f64>]) -> Option<f64> {
    let defined: Vec<f64> = values.iter().flatten().copied().collect();
    (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64)
}

/// Class IDs in report order: manipulator, shaft, background for the 3-class
/// map; tool, background for the binary map.
pub fn presentation_order(num_classes: usize) -> Vec<usize> {
    match num_classes {
        2 | 3 => (0..num_classes).rev().collect(),
        n => (0..n).collect(),
    }
}

/// Round half upward to `decimals` places, after snapping
/// away binary representation error (0.9225 is stored as 0.92249999…).
pub fn round_half_up(value: f64, decimals: i32) -> f64 {
    let scale = 10f64.powi(decimals);
    let snapped = (value * scale * 1e6).round() / 1e6;
    (snapped + 0.5).floor() / scale
}

/// A ratio as a percentage with one decimal, or `n/a` when undefined.
pub fn format_percent(value: Option<f64>) -> String {
    match value {
        Some(v) => format!("{:.1}", round_half_up(v * 100.0, 1)),
        None => "n/a".to_string(),
    }
}
