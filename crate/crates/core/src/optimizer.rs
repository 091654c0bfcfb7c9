//! Hyperparameter optimization by multi-restart quasi-Newton ascent of the
//! log marginal likelihood.
//!
//! All unfrozen hyperparameters are optimized in log space, which enforces
//! positivity by construction. Restart 0 always starts exactly at the
//! supplied hyperparameters (so re-optimizing from a previous optimum is a
//! fixed point); further restarts sample log-uniformly around data-driven
//! defaults. Restarts are independent, run in parallel, and are merged by a
//! deterministic best-of comparison.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::gp;
use crate::kernel::{Hyperparameters, StressInputVector, N_PARAMS, STRESS_DIMS};

/// Relative noise floor: sigma_n^2 is kept at or above this multiple of the
/// target variance to prevent degenerate zero-noise optima against
/// duplicated input rows.
pub const NOISE_FLOOR_FACTOR: f64 = 1e-8;

/// Length-scales are kept at or above this fraction of the smallest
/// observed level spacing of their dimension. Below roughly one spacing
/// every observed pair is already decorrelated, the likelihood goes flat
/// and the scale (hence the relevance ranking) loses identifiability.
pub const LENGTH_SCALE_FLOOR_FACTOR: f64 = 0.1;

/// Restart initializations sample log-uniformly within this factor of the
/// data-driven defaults.
const RESTART_SPREAD: f64 = 100.0;

const ARMIJO_C1: f64 = 1e-4;
const BACKTRACK_SHRINK: f64 = 0.5;
const MAX_BACKTRACKS: usize = 30;
/// Cap on the infinity-norm of one step in log-parameter space. Unscaled
/// first steps otherwise teleport across basins (typically into the
/// structureless all-noise fit).
const MAX_LOG_STEP: f64 = 2.0;

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    /// Number of restarts (the first always starts at the supplied
    /// hyperparameters).
    pub restarts: usize,
    /// Iteration cap per restart.
    pub max_iters: usize,
    /// Convergence threshold on the gradient infinity-norm.
    pub grad_tol: f64,
    /// RNG seed for restart sampling.
    pub seed: u64,
    /// When set, hyperparameters are optimized on a random subsample of at
    /// most this many rows and the final model is fitted on everything.
    /// Keeps the cubic factorization cost inside the search loop bounded.
    pub max_rows_for_hyperopt: Option<usize>,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            restarts: 8,
            max_iters: 120,
            grad_tol: 1e-4,
            seed: 0,
            max_rows_for_hyperopt: Some(512),
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.restarts < 1 {
            return Err(Error::invalid("restarts must be >= 1"));
        }
        if !(self.grad_tol.is_finite() && self.grad_tol > 0.0) {
            return Err(Error::invalid("grad_tol must be finite and > 0"));
        }
        Ok(())
    }
}

/// (hyperparameters, lml, iterations, converged) or the failure cause.
type RestartRun = std::result::Result<(Hyperparameters, f64, usize, bool), String>;

#[derive(Debug, Clone)]
pub struct RestartDiagnostics {
    pub restart: usize,
    pub lml: f64,
    pub iterations: usize,
    pub converged: bool,
    pub failure: Option<String>,
}

#[derive(Debug, Clone)]
pub struct OptimizeOutcome {
    pub hyperparameters: Hyperparameters,
    pub lml: f64,
    pub diagnostics: Vec<RestartDiagnostics>,
}

/// Data-driven starting hyperparameters.
///
/// Stress length-scales start at the observed span of their dimension;
/// dimensions with a single observed level are frozen at a large scale so
/// they drop out of inference. The linear offset starts at the mean
/// Ah-increment, the signal variance at the target variance, and the noise
/// variance at 1% of it.
pub fn initial_hyperparameters(
    inputs: &[StressInputVector],
    targets: &[f64],
) -> Result<Hyperparameters> {
    if inputs.is_empty() || targets.is_empty() {
        return Err(Error::invalid(
            "cannot derive defaults from an empty dataset",
        ));
    }
    let ranges = crate::kernel::observed_ranges(inputs);
    let var_y = variance(targets).max(1e-12);
    let mean_dah = inputs.iter().map(|x| x.delta_ah).sum::<f64>() / inputs.len() as f64;

    let mut length_scales = [0.0; STRESS_DIMS];
    let mut freeze = [false; STRESS_DIMS];
    for n in 0..STRESS_DIMS {
        if ranges[n] > 0.0 {
            length_scales[n] = ranges[n];
        } else {
            // single observed level: pinned below
            length_scales[n] = 1.0;
            freeze[n] = true;
        }
    }
    let mut hp = Hyperparameters::new(
        length_scales,
        mean_dah.max(1.0),
        var_y,
        (0.01 * var_y).max(NOISE_FLOOR_FACTOR * var_y),
    )?;
    for (n, &frozen) in freeze.iter().enumerate() {
        if frozen {
            let magnitude = inputs
                .iter()
                .map(|x| x.stress()[n].abs())
                .fold(0.0, f64::max);
            hp.freeze_stress_dim(n, magnitude.max(1e-12));
        }
    }
    Ok(hp)
}

fn variance(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / values.len() as f64
}

/// Maximize the log marginal likelihood over the unfrozen hyperparameters.
///
/// Returns the best hyperparameters across restarts together with the
/// achieved log marginal likelihood and per-restart diagnostics. With every
/// parameter frozen the input is returned unchanged (likelihood evaluated
/// once).
pub fn optimize(
    inputs: &[StressInputVector],
    targets: &[f64],
    initial_hp: &Hyperparameters,
    config: &OptimizerConfig,
) -> Result<OptimizeOutcome> {
    config.validate()?;
    if inputs.is_empty() {
        return Err(Error::invalid("optimize requires a nonempty dataset"));
    }
    initial_hp.validate()?;

    let (opt_inputs, opt_targets) = subsample_rows(inputs, targets, config);

    let free = initial_hp.unfrozen_indices();
    if free.is_empty() {
        let model = gp::fit(&opt_inputs, &opt_targets, initial_hp)?;
        return Ok(OptimizeOutcome {
            hyperparameters: initial_hp.clone(),
            lml: model.log_marginal_likelihood(),
            diagnostics: vec![RestartDiagnostics {
                restart: 0,
                lml: model.log_marginal_likelihood(),
                iterations: 0,
                converged: true,
                failure: None,
            }],
        });
    }

    let noise_floor = NOISE_FLOOR_FACTOR * variance(&opt_targets).max(1e-12);
    let defaults = initial_hyperparameters(&opt_inputs, &opt_targets)?;

    let runs: Vec<(usize, RestartRun)> = (0..config.restarts)
        .into_par_iter()
        .map(|r| {
            let start = if r == 0 {
                initial_hp.clone()
            } else {
                sample_restart(initial_hp, &defaults, config.seed, r)
            };
            let result = ascend(
                &opt_inputs,
                &opt_targets,
                &start,
                &free,
                noise_floor,
                config,
            )
            .map_err(|e| e.to_string());
            (r, result)
        })
        .collect();

    let mut diagnostics = Vec::with_capacity(config.restarts);
    let mut best: Option<(usize, Hyperparameters, f64)> = None;
    let mut causes = Vec::new();
    for (r, run) in runs {
        match run {
            Ok((hp, lml, iterations, converged)) => {
                diagnostics.push(RestartDiagnostics {
                    restart: r,
                    lml,
                    iterations,
                    converged,
                    failure: None,
                });
                let better = match &best {
                    None => true,
                    Some((br, _, blml)) => lml > *blml || (lml == *blml && r < *br),
                };
                if better {
                    best = Some((r, hp, lml));
                }
            }
            Err(cause) => {
                diagnostics.push(RestartDiagnostics {
                    restart: r,
                    lml: f64::NEG_INFINITY,
                    iterations: 0,
                    converged: false,
                    failure: Some(cause.clone()),
                });
                causes.push(format!("restart {r}: {cause}"));
            }
        }
    }
    diagnostics.sort_by_key(|d| d.restart);

    match best {
        Some((_, hyperparameters, lml)) => Ok(OptimizeOutcome {
            hyperparameters,
            lml,
            diagnostics,
        }),
        None => Err(Error::OptimizationFailed { causes }),
    }
}

fn subsample_rows(
    inputs: &[StressInputVector],
    targets: &[f64],
    config: &OptimizerConfig,
) -> (Vec<StressInputVector>, Vec<f64>) {
    match config.max_rows_for_hyperopt {
        Some(cap) if inputs.len() > cap => {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_5a3e);
            let mut idx: Vec<usize> = (0..inputs.len()).collect();
            // partial Fisher-Yates: the first `cap` entries are a uniform sample
            for i in 0..cap {
                let j = rng.gen_range(i..idx.len());
                idx.swap(i, j);
            }
            idx.truncate(cap);
            idx.sort_unstable();
            (
                idx.iter().map(|&i| inputs[i]).collect(),
                idx.iter().map(|&i| targets[i]).collect(),
            )
        }
        _ => (inputs.to_vec(), targets.to_vec()),
    }
}

/// Per-restart seeds are derived by counter so results do not depend on the
/// parallel schedule.
fn sample_restart(
    template: &Hyperparameters,
    defaults: &Hyperparameters,
    seed: u64,
    restart: usize,
) -> Hyperparameters {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(restart as u64));
    let spread = RESTART_SPREAD.ln();
    let mut hp = template.clone();
    for i in 0..N_PARAMS {
        if hp.frozen[i] {
            continue;
        }
        let center = defaults.get(i).ln();
        hp.set(i, (center + rng.gen_range(-spread..spread)).exp());
    }
    hp
}

struct Objective<'a> {
    inputs: &'a [StressInputVector],
    targets: &'a [f64],
    template: &'a Hyperparameters,
    free: &'a [usize],
    /// Lower bound per free parameter, in log space.
    log_floor: Vec<f64>,
}

/// Smallest positive spacing between distinct observed values along each
/// input dimension (stress dims first, throughput increment last).
fn min_spacings(inputs: &[StressInputVector]) -> [f64; 6] {
    let mut out = [0.0; 6];
    for (d, slot) in out.iter_mut().enumerate() {
        let mut values: Vec<f64> = inputs.iter().map(|x| x.to_array()[d]).collect();
        values.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut min = f64::INFINITY;
        for w in values.windows(2) {
            let gap = w[1] - w[0];
            if gap > 1e-12 && gap < min {
                min = gap;
            }
        }
        *slot = if min.is_finite() { min } else { 0.0 };
    }
    out
}

fn log_floors(
    inputs: &[StressInputVector],
    template: &Hyperparameters,
    free: &[usize],
    noise_floor: f64,
) -> Vec<f64> {
    let spacings = min_spacings(inputs);
    free.iter()
        .map(|&i| match i {
            // length-scales: keep the correlation between neighbouring
            // observed levels identifiable
            0..=5 => {
                let floor = LENGTH_SCALE_FLOOR_FACTOR * spacings[i];
                if floor > 0.0 {
                    floor.ln()
                } else {
                    // single observed level: only the template value is
                    // meaningful, pin near it from below
                    (template.get(i) * 1e-6).ln()
                }
            }
            6 => f64::NEG_INFINITY,
            7 => noise_floor.ln(),
            _ => unreachable!(),
        })
        .collect()
}

impl Objective<'_> {
    fn hp_from(&self, z: &[f64]) -> Hyperparameters {
        let mut hp = self.template.clone();
        for (k, &i) in self.free.iter().enumerate() {
            hp.set(i, z[k].exp().max(self.log_floor[k].exp()));
        }
        hp
    }

    fn project(&self, z: &mut [f64]) {
        for (k, floor) in self.log_floor.iter().enumerate() {
            if z[k] < *floor {
                z[k] = *floor;
            }
        }
    }

    fn eval(&self, z: &[f64]) -> Result<f64> {
        let hp = self.hp_from(z);
        Ok(gp::fit_strict(self.inputs, self.targets, &hp)?.log_marginal_likelihood())
    }

    fn eval_with_grad(&self, z: &[f64]) -> Result<(f64, Vec<f64>)> {
        let hp = self.hp_from(z);
        let model = gp::fit_strict(self.inputs, self.targets, &hp)?;
        let full = model.log_marginal_likelihood_grad()?;
        let grad = self.free.iter().map(|&i| full[i]).collect();
        Ok((model.log_marginal_likelihood(), grad))
    }
}

/// BFGS ascent with backtracking line search in log-parameter space,
/// projected onto the lower bounds.
fn ascend(
    inputs: &[StressInputVector],
    targets: &[f64],
    start: &Hyperparameters,
    free: &[usize],
    noise_floor: f64,
    config: &OptimizerConfig,
) -> Result<(Hyperparameters, f64, usize, bool)> {
    let objective = Objective {
        inputs,
        targets,
        template: start,
        free,
        log_floor: log_floors(inputs, start, free, noise_floor),
    };
    let d = free.len();
    let mut z: Vec<f64> = free.iter().map(|&i| start.get(i).ln()).collect();
    objective.project(&mut z);

    let (mut f, mut grad) = objective.eval_with_grad(&z)?;
    // inverse Hessian approximation, identity to start
    let mut h = nalgebra::DMatrix::<f64>::identity(d, d);
    let mut iterations = 0;
    let mut converged = projected_inf_norm(&z, &grad, &objective.log_floor) < config.grad_tol;

    while !converged && iterations < config.max_iters {
        iterations += 1;
        let g = nalgebra::DVector::from_column_slice(&grad);
        let mut direction = &h * &g; // ascent direction
        if direction.dot(&g) <= 0.0 {
            // curvature information went bad; reset to steepest ascent
            h = nalgebra::DMatrix::identity(d, d);
            direction = g.clone();
        }

        let dmax = direction.amax();
        let mut step = if dmax > MAX_LOG_STEP {
            MAX_LOG_STEP / dmax
        } else {
            1.0
        };
        let slope = direction.dot(&g);
        let mut accepted = None;
        for _ in 0..MAX_BACKTRACKS {
            let mut z_new: Vec<f64> = (0..d).map(|k| z[k] + step * direction[k]).collect();
            objective.project(&mut z_new);
            match objective.eval(&z_new) {
                Ok(f_new) if f_new >= f + ARMIJO_C1 * step * slope => {
                    accepted = Some(z_new);
                    break;
                }
                _ => step *= BACKTRACK_SHRINK,
            }
        }
        let Some(z_new) = accepted else {
            // no admissible step along this direction
            converged = projected_inf_norm(&z, &grad, &objective.log_floor) < config.grad_tol;
            break;
        };

        let (f_new, grad_new) = objective.eval_with_grad(&z_new)?;
        let s = nalgebra::DVector::from_iterator(d, (0..d).map(|k| z_new[k] - z[k]));
        // y is the change in the *descent* gradient of -f
        let y = nalgebra::DVector::from_iterator(d, (0..d).map(|k| grad[k] - grad_new[k]));
        let sy = s.dot(&y);
        if sy > 1e-12 * s.norm() * y.norm() {
            // BFGS update of the inverse Hessian
            let rho = 1.0 / sy;
            let hy = &h * &y;
            let yhy = y.dot(&hy);
            h = &h - rho * (&hy * s.transpose() + &s * hy.transpose())
                + rho * rho * (sy + yhy) * (&s * s.transpose());
        }

        z = z_new;
        f = f_new;
        grad = grad_new;
        converged = projected_inf_norm(&z, &grad, &objective.log_floor) < config.grad_tol;
    }

    Ok((objective.hp_from(&z), f, iterations, converged))
}

/// Gradient infinity-norm with components pinned at an active lower bound
/// masked out (an ascent push below the floor is not a usable direction).
fn projected_inf_norm(z: &[f64], grad: &[f64], floors: &[f64]) -> f64 {
    z.iter()
        .zip(grad)
        .zip(floors)
        .fold(0.0, |acc, ((&zk, &gk), &floor)| {
            let effective = if zk <= floor + 1e-12 && gk < 0.0 {
                0.0
            } else {
                gk.abs()
            };
            acc.max(effective)
        })
}
