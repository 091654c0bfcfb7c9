//! Evaluation metrics: RMSE and MAE of the one-step capacity loss and of
//! the accumulated capacity curve, plus the 2-sigma calibration score
//! (the percentage of measurements inside the predicted 95.4% interval).

use serde::{Deserialize, Serialize};

use crate::ageing::{self, VarianceAccumulation, DEFAULT_STEP_AH};
use crate::curriculum::{Dataset, TrainingCase};
use crate::error::{Error, Result};
use crate::gp::TrainedModel;

pub fn rmse(pred: &[f64], actual: &[f64]) -> Result<f64> {
    check_lengths(pred, actual)?;
    let n = pred.len() as f64;
    Ok((pred
        .iter()
        .zip(actual)
        .map(|(p, a)| (p - a) * (p - a))
        .sum::<f64>()
        / n)
        .sqrt())
}

pub fn mae(pred: &[f64], actual: &[f64]) -> Result<f64> {
    check_lengths(pred, actual)?;
    let n = pred.len() as f64;
    Ok(pred
        .iter()
        .zip(actual)
        .map(|(p, a)| (p - a).abs())
        .sum::<f64>()
        / n)
}

/// Percentage of measurements strictly inside the +-2 sigma interval.
/// Approximately 95.4 for well-calibrated Gaussian predictions.
pub fn calibration_score(pred_mean: &[f64], pred_sigma: &[f64], actual: &[f64]) -> Result<f64> {
    check_lengths(pred_mean, actual)?;
    check_lengths(pred_mean, pred_sigma)?;
    if pred_sigma.iter().any(|s| *s < 0.0) {
        return Err(Error::invalid("sigmas must be >= 0"));
    }
    let n = pred_mean.len() as f64;
    let hits = pred_mean
        .iter()
        .zip(pred_sigma)
        .zip(actual)
        .filter(|((m, s), a)| (*m - *a).abs() < 2.0 * **s)
        .count();
    Ok(100.0 * hits as f64 / n)
}

fn check_lengths(a: &[f64], b: &[f64]) -> Result<()> {
    if a.is_empty() || a.len() != b.len() {
        return Err(Error::LengthMismatch {
            left: a.len(),
            right: b.len(),
            context: "metric inputs must be nonempty and equal length",
        });
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalGroup {
    Training,
    Validation,
    Targeted,
    All,
}

impl EvalGroup {
    pub fn label(&self) -> &'static str {
        match self {
            EvalGroup::Training => "training",
            EvalGroup::Validation => "validation",
            EvalGroup::Targeted => "targeted",
            EvalGroup::All => "all",
        }
    }
}

/// Metrics for one cell.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CellMetrics {
    pub cell_id: String,
    pub mae_dq: f64,
    pub rmse_dq: f64,
    pub cs2_dq: f64,
    pub mae_q: f64,
    pub rmse_q: f64,
    pub cs2_q: f64,
}

/// Group aggregate: the unweighted mean of the per-cell metrics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub group: EvalGroup,
    pub n_cells: usize,
    pub mae_dq: f64,
    pub rmse_dq: f64,
    pub cs2_dq: f64,
    pub mae_q: f64,
    pub rmse_q: f64,
    pub cs2_q: f64,
    pub cells: Vec<CellMetrics>,
}

/// How sigma enters the calibration scores: the loss score uses the
/// observation-level sigma (latent plus noise), the curve score uses the
/// rollout's accumulated sigma.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvaluateOptions {
    pub step_ah: f64,
    pub variance_mode: VarianceAccumulation,
}

impl Default for EvaluateOptions {
    fn default() -> Self {
        EvaluateOptions {
            step_ah: DEFAULT_STEP_AH,
            variance_mode: VarianceAccumulation::Independent,
        }
    }
}

/// Evaluate a fitted model against every group of a training case. Cells
/// are scored in parallel; groups without cells are omitted.
pub fn evaluate_case(
    model: &TrainedModel,
    case: &TrainingCase,
    dataset: &Dataset,
    options: &EvaluateOptions,
) -> Result<Vec<EvaluationReport>> {
    use rayon::prelude::*;
    let per_cell: Vec<(String, CellMetrics)> = dataset
        .cells
        .par_iter()
        .map(|cell| Ok((cell.cell_id.clone(), cell_metrics(model, cell, options)?)))
        .collect::<Result<_>>()?;
    let lookup = |ids: &[String]| -> Vec<CellMetrics> {
        per_cell
            .iter()
            .filter(|(id, _)| ids.contains(id))
            .map(|(_, m)| m.clone())
            .collect()
    };

    let mut reports = Vec::new();
    let groups = [
        (EvalGroup::Training, lookup(&case.training_cells)),
        (EvalGroup::Validation, lookup(&case.validation_cells)),
        (EvalGroup::Targeted, lookup(&case.targeted_validation_cells)),
        (
            EvalGroup::All,
            per_cell.iter().map(|(_, m)| m.clone()).collect(),
        ),
    ];
    for (group, cells) in groups {
        if cells.is_empty() {
            continue;
        }
        reports.push(aggregate(group, cells));
    }
    Ok(reports)
}

fn aggregate(group: EvalGroup, cells: Vec<CellMetrics>) -> EvaluationReport {
    let n = cells.len() as f64;
    let mean = |f: fn(&CellMetrics) -> f64| cells.iter().map(f).sum::<f64>() / n;
    EvaluationReport {
        group,
        n_cells: cells.len(),
        mae_dq: mean(|c| c.mae_dq),
        rmse_dq: mean(|c| c.rmse_dq),
        cs2_dq: mean(|c| c.cs2_dq),
        mae_q: mean(|c| c.mae_q),
        rmse_q: mean(|c| c.rmse_q),
        cs2_q: mean(|c| c.cs2_q),
        cells,
    }
}

/// Per-cell metrics: one-step loss predictions over the cell's windows, and
/// a free-running rollout compared against the measured curve.
pub fn cell_metrics(
    model: &TrainedModel,
    cell: &crate::curriculum::CellData,
    options: &EvaluateOptions,
) -> Result<CellMetrics> {
    // capacity-loss metrics over the windowized samples
    let inputs: Vec<_> = cell.samples.iter().map(|s| s.input).collect();
    let targets: Vec<f64> = cell.samples.iter().map(|s| s.target).collect();
    if inputs.is_empty() {
        return Err(Error::invalid(format!(
            "cell {} has no samples to evaluate",
            cell.cell_id
        )));
    }
    let pred = model.predict(&inputs, false)?;
    let obs_sigma: Vec<f64> = pred
        .observation_variance(model.hyperparameters().noise_var)
        .iter()
        .map(|v| v.sqrt())
        .collect();
    let mae_dq = mae(&pred.mean, &targets)?;
    let rmse_dq = rmse(&pred.mean, &targets)?;
    let cs2_dq = calibration_score(&pred.mean, &obs_sigma, &targets)?;

    // capacity-curve metrics from a free-running rollout over the measured grid
    let conditions = cell.conditions;
    let last_ah = cell
        .curve
        .points
        .last()
        .ok_or_else(|| Error::invalid("empty curve"))?
        .ah;
    let schedule = ageing::ConditionSchedule::from_static(conditions, last_ah + options.step_ah)?;
    let forecast = ageing::rollout(
        model,
        &schedule,
        last_ah,
        options.step_ah,
        options.variance_mode,
    )?;

    let mut pred_q = Vec::new();
    let mut sigma_q = Vec::new();
    let mut actual_q = Vec::new();
    for point in cell.curve.points.iter().skip(1) {
        let Some(fp) = forecast
            .points
            .iter()
            .find(|fp| (fp.ah - point.ah).abs() < 1e-6)
        else {
            continue;
        };
        pred_q.push(fp.q_mean);
        sigma_q.push(fp.q_sigma);
        actual_q.push(point.q_norm);
    }
    if pred_q.is_empty() {
        return Err(Error::invalid(format!(
            "cell {}: no forecast points aligned with the measured grid",
            cell.cell_id
        )));
    }
    let mae_q = mae(&pred_q, &actual_q)?;
    let rmse_q = rmse(&pred_q, &actual_q)?;
    let cs2_q = calibration_score(&pred_q, &sigma_q, &actual_q)?;

    Ok(CellMetrics {
        cell_id: cell.cell_id.clone(),
        mae_dq,
        rmse_dq,
        cs2_dq,
        mae_q,
        rmse_q,
        cs2_q,
    })
}

/// The column layout shared by the report CSV and JSON: per group, the
/// loss-level and curve-level MAE, RMSE and calibration score.
pub const REPORT_COLUMNS: [&str; 6] = ["mae_dq", "rmse_dq", "cs2_dq", "mae_q", "rmse_q", "cs2_q"];
