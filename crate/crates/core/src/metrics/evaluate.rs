use super::confusion::ConfusionCounts;
use super::report::{binary_report, format_percent, iou_report, presentation_order, BinaryReport, IouReport};
use crate::backbone::{forward, ModelSpec, ParamStore};
use crate::dataset::{ClassMap, FrameSource, ImageTensor, LabelMask, Normalization};
use crate::error::{Error, Result};

pub const AGGREGATE_ROW: &str = "aggregate";

/// Argmax of the full-resolution logits.
pub fn predict_mask(
    spec: &ModelSpec,
    params: &ParamStore<f32>,
    normalization: &Normalization,
    image: &ImageTensor,
) -> Result<LabelMask> {
    let logits = forward(spec, params, &normalization.apply(image))?;
    LabelMask::argmax(&logits)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SequenceRow {
    pub id: String,
    pub counts: ConfusionCounts,
}

/// Per-sequence rows and the pooled aggregate.
#[derive(Clone, Debug, PartialEq)]
pub struct EvaluationReport {
    pub class_map: ClassMap,
    pub rows: Vec<SequenceRow>,
    pub aggregate: ConfusionCounts,
}

impl EvaluationReport {
    /// Sequence rows followed by the aggregate row.
    pub fn all_rows(&self) -> impl Iterator<Item = (&str, &ConfusionCounts)> {
        self.rows
            .iter()
            .map(|r| (r.id.as_str(), &r.counts))
            .chain(std::iter::once((AGGREGATE_ROW, &self.aggregate)))
    }

    pub fn iou(&self) -> IouReport {
        iou_report(&self.aggregate)
    }

    pub fn binary(&self) -> Option<BinaryReport> {
        binary_report(&self.aggregate).ok()
    }

    fn class_label(&self, c: usize) -> String {
        self.class_map
            .name(c)
            .map_or_else(|| format!("class{c}"), str::to_string)
    }

    /// `sequence,class,iou` with IoU as a percentage (one decimal); each row
    /// ends with a `mean` entry.
    pub fn iou_csv(&self) -> String {
        let order = presentation_order(self.class_map.len());
        let mut out = String::from("sequence,class,iou\n");
        for (id, counts) in self.all_rows() {
            let report = iou_report(counts);
            for &c in &order {
                out.push_str(&format!(
                    "{id},{},{}\n",
                    self.class_label(c),
                    csv_value(report.per_class[c])
                ));
            }
            out.push_str(&format!("{id},mean,{}\n", csv_value(report.mean)));
        }
        out
    }

    /// `sequence,sensitivity,specificity,balanced_accuracy`; only for two
    /// classes.
    pub fn binary_csv(&self) -> Option<String> {
        if self.class_map.len() != 2 {
            return None;
        }
        let mut out = String::from("sequence,sensitivity,specificity,balanced_accuracy\n");
        for (id, counts) in self.all_rows() {
            let r = binary_report(counts).ok()?;
            out.push_str(&format!(
                "{id},{},{},{}\n",
                csv_value(r.sensitivity),
                csv_value(r.specificity),
                csv_value(r.balanced_accuracy)
            ));
        }
        Some(out)
    }

    /// Plain-text tables: binary metrics (two classes only) and per-class IoU.
    pub fn table(&self) -> String {
        let mut out = String::new();
        let width = self
            .all_rows()
            .map(|(id, _)| id.len())
            .max()
            .unwrap_or(0)
            .max(9);
        if self.class_map.len() == 2 {
            out.push_str(&format!(
                "{:<width$} | {:>11} | {:>11} | {:>17}\n",
                "", "Sensitivity", "Specificity", "Balanced Accuracy"
            ));
            out.push_str(&format!("{}\n", "-".repeat(width + 49)));
            for (id, counts) in self.all_rows() {
                if let Ok(r) = binary_report(counts) {
                    out.push_str(&format!(
                        "{id:<width$} | {:>11} | {:>11} | {:>17}\n",
                        pct(r.sensitivity),
                        pct(r.specificity),
                        pct(r.balanced_accuracy)
                    ));
                }
            }
            out.push('\n');
        }
        let order = presentation_order(self.class_map.len());
        let mut header = format!("{:<width$}", "");
        for &c in &order {
            header.push_str(&format!(" | {:>11}", self.class_label(c)));
        }
        header.push_str(&format!(" | {:>12}", "Overall Mean"));
        out.push_str(&header);
        out.push('\n');
        out.push_str(&"-".repeat(header.len()));
        out.push('\n');
        for (id, counts) in self.all_rows() {
            let r = iou_report(counts);
            out.push_str(&format!("{id:<width$}"));
            for &c in &order {
                out.push_str(&format!(" | {:>11}", format_percent(r.per_class[c])));
            }
            out.push_str(&format!(" | {:>12}\n", format_percent(r.mean)));
        }
        out
    }
}

fn csv_value(v: Option<f64>) -> String {
    v.map(|_| format_percent(v)).unwrap_or_default()
}

fn pct(v: Option<f64>) -> String {
    match v {
        Some(_) => format!("{}%", format_percent(v)),
        None => format_percent(v),
    }
}

/// Predict every frame, accumulate counts per sequence, and pool them.
pub fn evaluate<S: FrameSource + ?Sized>(
    spec: &ModelSpec,
    params: &ParamStore<f32>,
    data: &S,
    normalization: &Normalization,
) -> Result<EvaluationReport> {
    let classes = data.num_classes();
    if spec.num_classes != classes {
        return Err(Error::invalid(format!(
            "model predicts {} classes, dataset has {classes}",
            spec.num_classes
        )));
    }
    let mut rows = Vec::with_capacity(data.num_sequences());
    let mut aggregate = ConfusionCounts::new(classes);
    for s in 0..data.num_sequences() {
        let mut counts = ConfusionCounts::new(classes);
        for i in 0..data.sequence_len(s) {
            let frame = data.frame(s, i)?;
            let pred = predict_mask(spec, params, normalization, &frame.image)?;
            counts.add(&pred, &frame.mask)?;
        }
        aggregate = aggregate.merge(&counts)?;
        rows.push(SequenceRow {
            id: data.sequence_id(s).to_string(),
            counts,
        });
    }
    Ok(EvaluationReport {
        class_map: data.class_map().clone(),
        rows,
        aggregate,
    })
}
