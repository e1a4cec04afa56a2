use log::{info, warn};

use super::config::TrainingConfig;
use super::train::train;
use crate::backbone::{ModelSpec, ParamStore};
use crate::dataset::{split_train_val, Sequences};
use crate::error::{Error, Result};
use crate::metrics::evaluate;

pub const DEFAULT_LEARNING_RATES: [f64; 5] = [1e-2, 1e-3, 1e-4, 1e-5, 1e-6];

#[derive(Clone, Debug, PartialEq)]
pub struct GridSearchResult {
    pub best_rate: f64,
    /// `(rate, validation score)` in candidate order; diverged runs score
    /// negative infinity.
    pub scores: Vec<(f64, f64)>,
}

/// Score every candidate and return the best; ties go to the smaller rate.
/// A [`Error::Diverged`] from `score` counts as negative infinity, any other
/// error aborts the search.
pub fn select_learning_rate(
    candidates: &[f64],
    mut score: impl FnMut(f64) -> Result<f64>,
) -> Result<GridSearchResult> {
    if candidates.is_empty() {
        return Err(Error::invalid("no candidate learning rates"));
    }
    if let Some(bad) = candidates.iter().find(|r| !(**r > 0.0 && r.is_finite())) {
        return Err(Error::invalid(format!("learning rate {bad} must be positive")));
    }
    let mut scores = Vec::with_capacity(candidates.len());
    for &rate in candidates {
        let value = match score(rate) {
            Ok(v) if v.is_nan() => f64::NEG_INFINITY,
            Ok(v) => v,
            Err(Error::Diverged { iteration, .. }) => {
                warn!("learning rate {rate} diverged at iteration {iteration}");
                f64::NEG_INFINITY
            }
            Err(e) => return Err(e),
        };
        info!("learning rate {rate}: validation score {value}");
        scores.push((rate, value));
    }
    let best_rate = scores
        .iter()
        .copied()
        .reduce(|best, cand| {
            if cand.1 > best.1 || (cand.1 == best.1 && cand.0 < best.0) {
                cand
            } else {
                best
            }
        })
        .expect("non-empty")
        .0;
    Ok(GridSearchResult { best_rate, scores })
}

/// Train once per candidate from the same parameters and seed on the
/// training side of a tail split, and score by validation mean IoU.
pub fn lr_grid_search<F: Clone>(
    spec: &ModelSpec,
    params: &ParamStore<f32>,
    dataset: &Sequences<F>,
    candidates: &[f64],
    config: &TrainingConfig,
    val_fraction: f64,
) -> Result<GridSearchResult>
where
    Sequences<F>: crate::dataset::FrameSource,
{
    let (train_set, val_set) = split_train_val(dataset, val_fraction, config.seed)?;
    select_learning_rate(candidates, |rate| {
        let run = TrainingConfig {
            learning_rate: rate,
            ..config.clone()
        };
        let outcome = train(spec, params.clone(), &train_set, &run)?;
        let report = evaluate(spec, &outcome.checkpoint.params, &val_set, &run.normalization)?;
        Ok(report.iou().mean.unwrap_or(f64::NEG_INFINITY))
    })
}
