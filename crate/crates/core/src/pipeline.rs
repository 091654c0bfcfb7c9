//! End-to-end helpers: assemble a curriculum dataset from raw series and
//! train a model on a sample set or a training case.

use rayon::prelude::*;

use crate::curriculum::{CellData, Dataset, TrainingCase};
use crate::error::{Error, Result};
use crate::gp::{self, TrainedModel};
use crate::optimizer::{self, OptimizeOutcome, OptimizerConfig};
use crate::preprocess::{
    self, AgeingSample, PreprocessOptions, RawCapacitySeries, DEFAULT_MAX_LAG,
};

/// Preprocess and windowize a corpus of statically cycled cells.
/// Dynamically cycled cells are rejected here; they go through the
/// model-update workflow instead.
pub fn build_dataset(
    corpus: &[RawCapacitySeries],
    options: &PreprocessOptions,
    max_lag: usize,
) -> Result<Dataset> {
    let cells = corpus
        .par_iter()
        .map(|series| {
            let conditions = *series.conditions.as_static().ok_or_else(|| {
                Error::invalid(format!(
                    "cell {} has a dynamic profile; static conditions required",
                    series.cell_id
                ))
            })?;
            let curve = preprocess::preprocess_series(series, options)?;
            let samples = preprocess::windowize(&curve, &conditions, max_lag)?;
            Ok(CellData {
                cell_id: series.cell_id.clone(),
                conditions,
                curve,
                samples,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset { cells })
}

pub fn default_max_lag() -> usize {
    DEFAULT_MAX_LAG
}

/// Optimize hyperparameters from data-driven defaults (single-level stress
/// dimensions frozen) and fit the final model on all samples.
pub fn train_on_samples(
    samples: &[AgeingSample],
    config: &OptimizerConfig,
) -> Result<(TrainedModel, OptimizeOutcome)> {
    if samples.is_empty() {
        return Err(Error::invalid("no training samples"));
    }
    let inputs: Vec<_> = samples.iter().map(|s| s.input).collect();
    let targets: Vec<f64> = samples.iter().map(|s| s.target).collect();
    let init = optimizer::initial_hyperparameters(&inputs, &targets)?;
    let outcome = optimizer::optimize(&inputs, &targets, &init, config)?;
    let model = gp::fit(&inputs, &targets, &outcome.hyperparameters)?;
    Ok((model, outcome))
}

/// Samples belonging to a case's training cells.
pub fn case_samples(dataset: &Dataset, case: &TrainingCase) -> Vec<AgeingSample> {
    dataset
        .cells
        .iter()
        .filter(|c| case.training_cells.contains(&c.cell_id))
        .flat_map(|c| c.samples.iter().cloned())
        .collect()
}

/// Train the model for one training case.
pub fn train_case(
    dataset: &Dataset,
    case: &TrainingCase,
    config: &OptimizerConfig,
) -> Result<(TrainedModel, OptimizeOutcome)> {
    train_on_samples(&case_samples(dataset, case), config)
}
