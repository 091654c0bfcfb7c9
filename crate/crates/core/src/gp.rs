//! Exact Gaussian-process regression with a zero mean function.
//!
//! Training factorizes the noisy Gram matrix once (Cholesky, with escalating
//! diagonal jitter because the training data legitimately contains exactly
//! repeated input rows). Prediction and the marginal-likelihood gradient are
//! computed against that factorization. Models are immutable; retraining
//! produces a new model.

use std::path::Path;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{self, Hyperparameters, StressInputVector, N_PARAMS};
use crate::optimizer::{self, OptimizerConfig};

const LN_2PI: f64 = 1.8378770664093453;

/// Jitter escalation ladder, as multiples of the mean Gram diagonal.
const JITTER_STEPS: [f64; 8] = [0.0, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6, 1e-5, 1e-4];

/// A fitted GP regression model.
#[derive(Debug, Clone)]
pub struct TrainedModel {
    inputs: Vec<StressInputVector>,
    targets: DVector<f64>,
    hp: Hyperparameters,
    chol: Cholesky<f64, Dyn>,
    alpha: DVector<f64>,
    lml: f64,
    applied_jitter: f64,
}

/// Posterior prediction: latent mean and variance per test point, plus the
/// full covariance when requested. Variances are for the noise-free latent
/// function; add the model noise variance for observation-level intervals.
#[derive(Debug, Clone)]
pub struct PredictiveDistribution {
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
    pub full_cov: Option<DMatrix<f64>>,
}

impl PredictiveDistribution {
    pub fn sigma(&self) -> Vec<f64> {
        self.variance.iter().map(|v| v.sqrt()).collect()
    }

    /// Observation-level variances (latent plus noise).
    pub fn observation_variance(&self, noise_var: f64) -> Vec<f64> {
        self.variance.iter().map(|v| v + noise_var).collect()
    }
}

/// Fit a model on the given data with fixed hyperparameters, escalating
/// diagonal jitter if the plain factorization fails.
pub fn fit(
    inputs: &[StressInputVector],
    targets: &[f64],
    hp: &Hyperparameters,
) -> Result<TrainedModel> {
    fit_with_ladder(inputs, targets, hp, &JITTER_STEPS)
}

/// Fit with no jitter allowed. The hyperparameter search uses this so that
/// regions only reachable through added jitter (which silently distorts the
/// likelihood being maximized) are rejected instead of explored.
pub(crate) fn fit_strict(
    inputs: &[StressInputVector],
    targets: &[f64],
    hp: &Hyperparameters,
) -> Result<TrainedModel> {
    fit_with_ladder(inputs, targets, hp, &[0.0])
}

fn fit_with_ladder(
    inputs: &[StressInputVector],
    targets: &[f64],
    hp: &Hyperparameters,
    ladder: &[f64],
) -> Result<TrainedModel> {
    if inputs.is_empty() {
        return Err(Error::invalid("fit requires at least one training row"));
    }
    if inputs.len() != targets.len() {
        return Err(Error::LengthMismatch {
            left: inputs.len(),
            right: targets.len(),
            context: "fit inputs vs targets",
        });
    }
    hp.validate()?;
    for x in inputs {
        x.validate()?;
    }

    let n = inputs.len();
    let gram = kernel::gram(inputs, hp)?;
    if gram.iter().any(|v| !v.is_finite()) {
        // overflowed covariances cannot be repaired by jitter
        return Err(Error::IllConditionedKernel {
            attempted_jitters: vec![],
        });
    }
    let mean_diag = gram.diagonal().sum() / n as f64;

    let mut attempted = Vec::new();
    let mut factored = None;
    for &step in ladder {
        let jitter = step * mean_diag;
        attempted.push(jitter);
        let mut k = gram.clone();
        if jitter > 0.0 {
            for i in 0..n {
                k[(i, i)] += jitter;
            }
        }
        if let Some(c) = Cholesky::new(k) {
            factored = Some((c, jitter));
            break;
        }
    }
    let (chol, applied_jitter) = factored.ok_or(Error::IllConditionedKernel {
        attempted_jitters: attempted,
    })?;

    let y = DVector::from_column_slice(targets);
    let alpha = chol.solve(&y);
    let log_det_half: f64 = chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum();
    let lml = -0.5 * y.dot(&alpha) - log_det_half - 0.5 * n as f64 * LN_2PI;

    Ok(TrainedModel {
        inputs: inputs.to_vec(),
        targets: y,
        hp: hp.clone(),
        chol,
        alpha,
        lml,
        applied_jitter,
    })
}

impl TrainedModel {
    pub fn inputs(&self) -> &[StressInputVector] {
        &self.inputs
    }

    pub fn targets(&self) -> &[f64] {
        self.targets.as_slice()
    }

    pub fn hyperparameters(&self) -> &Hyperparameters {
        &self.hp
    }

    pub fn log_marginal_likelihood(&self) -> f64 {
        self.lml
    }

    pub fn applied_jitter(&self) -> f64 {
        self.applied_jitter
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    /// Gradient of the log marginal likelihood with respect to the log of
    /// each hyperparameter, in canonical order. Frozen entries are zero.
    ///
    /// Uses the exact-GP identity: each component is
    /// `0.5 * tr[(alpha alpha^T - K^-1) dK/dtheta]`.
    pub fn log_marginal_likelihood_grad(&self) -> Result<[f64; N_PARAMS]> {
        let n = self.inputs.len();
        let k_inv = self.chol.inverse();
        let mut grad = [0.0; N_PARAMS];
        for i in 0..n {
            for j in 0..=i {
                let dk = kernel::kernel_grad(&self.inputs[i], &self.inputs[j], &self.hp, i == j)?;
                let w = self.alpha[i] * self.alpha[j] - k_inv[(i, j)];
                // off-diagonal pairs appear twice in the trace
                let scale = if i == j { 0.5 } else { 1.0 };
                for p in 0..N_PARAMS {
                    grad[p] += scale * w * dk[p];
                }
            }
        }
        Ok(grad)
    }

    /// Posterior prediction at the given test inputs.
    pub fn predict(
        &self,
        test_inputs: &[StressInputVector],
        want_full_cov: bool,
    ) -> Result<PredictiveDistribution> {
        for x in test_inputs {
            x.validate()?;
        }
        let m = test_inputs.len();
        if m == 0 {
            return Ok(PredictiveDistribution {
                mean: vec![],
                variance: vec![],
                full_cov: want_full_cov.then(|| DMatrix::zeros(0, 0)),
            });
        }
        // K(X, X*) is n x m; mean = K*^T alpha.
        let k_star = kernel::gram_cross(&self.inputs, test_inputs, &self.hp)?;
        let mean_vec = k_star.transpose() * &self.alpha;

        // v = L^-1 K*; cov = K** - v^T v via triangular solve.
        let mut v = k_star;
        let solved = self.chol.l_dirty().solve_lower_triangular_mut(&mut v);
        debug_assert!(solved);

        let mut variance = Vec::with_capacity(m);
        for (j, x) in test_inputs.iter().enumerate() {
            let prior = kernel::kernel_eval(x, x, &self.hp, false)?;
            let reduction = v.column(j).norm_squared();
            // round-off below ~1e-12 is clamped to zero
            variance.push((prior - reduction).max(0.0));
        }

        let full_cov = if want_full_cov {
            let k_ss = kernel::gram_cross(test_inputs, test_inputs, &self.hp)?;
            Some(k_ss - v.transpose() * v)
        } else {
            None
        };

        Ok(PredictiveDistribution {
            mean: mean_vec.as_slice().to_vec(),
            variance,
            full_cov,
        })
    }

    /// Append new observations and re-optimize the hyperparameters from the
    /// current optimum as a warm start. Stress dimensions that were frozen
    /// for lack of variation are released once the combined data varies in
    /// them, so an update from in-field profiles pulls previously ignored
    /// factors into inference. With empty new data this is a fixed point up
    /// to the optimizer tolerance.
    pub fn retrain_with(
        &self,
        new_inputs: &[StressInputVector],
        new_targets: &[f64],
        config: &OptimizerConfig,
    ) -> Result<TrainedModel> {
        if new_inputs.len() != new_targets.len() {
            return Err(Error::LengthMismatch {
                left: new_inputs.len(),
                right: new_targets.len(),
                context: "retrain_with inputs vs targets",
            });
        }
        let mut inputs = self.inputs.clone();
        inputs.extend_from_slice(new_inputs);
        let mut targets = self.targets.as_slice().to_vec();
        targets.extend_from_slice(new_targets);

        let mut warm = self.hp.clone();
        let ranges = kernel::observed_ranges(&inputs);
        for (n, &range) in ranges.iter().enumerate() {
            if warm.frozen[n] && range > 0.0 {
                warm.length_scales[n] = range;
                warm.frozen[n] = false;
            }
        }

        let outcome = optimizer::optimize(&inputs, &targets, &warm, config)?;
        fit(&inputs, &targets, &outcome.hyperparameters)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let doc = ModelDocument {
            format_version: MODEL_FORMAT_VERSION,
            inputs: self.inputs.iter().map(|x| x.to_array()).collect(),
            targets: self.targets.as_slice().to_vec(),
            hyperparameters: self.hp.clone(),
            applied_jitter: self.applied_jitter,
            lml: self.lml,
        };
        let file = std::fs::File::create(path)?;
        serde_json::to_writer_pretty(std::io::BufWriter::new(file), &doc)?;
        Ok(())
    }

    /// Load a persisted model. Factorizations are recomputed, never stored.
    pub fn load(path: &Path) -> Result<TrainedModel> {
        let file = std::fs::File::open(path)?;
        let doc: ModelDocument = serde_json::from_reader(std::io::BufReader::new(file))?;
        if doc.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::MalformedData(format!(
                "unsupported model format version {}",
                doc.format_version
            )));
        }
        let inputs: Vec<StressInputVector> = doc
            .inputs
            .into_iter()
            .map(StressInputVector::from_array)
            .collect::<Result<_>>()?;
        fit(&inputs, &doc.targets, &doc.hyperparameters)
    }
}

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct ModelDocument {
    format_version: u32,
    inputs: Vec<[f64; 6]>,
    targets: Vec<f64>,
    hyperparameters: Hyperparameters,
    applied_jitter: f64,
    lml: f64,
}
