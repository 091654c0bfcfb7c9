//! Domain layer binding the GP machinery to capacity prediction: cycling
//! conditions, time-varying condition schedules, and capacity-curve rollout
//! by accumulation of per-step capacity-loss predictions.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gp::TrainedModel;
use crate::kernel::StressInputVector;
use crate::preprocess::{AgeingSample, CapacityCurve};

pub const KELVIN_OFFSET: f64 = 273.15;

/// Default characterization cadence [Ah]: one capacity test per 100
/// full-equivalent cycles of the 20 Ah cell.
pub const DEFAULT_STEP_AH: f64 = 4000.0;

/// Static cycling conditions of one cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CyclingConditions {
    pub temp_c: f64,
    pub dod: f64,
    pub mid_soc: f64,
    pub c_chg: f64,
    pub c_dchg: f64,
}

impl CyclingConditions {
    pub fn new(temp_c: f64, dod: f64, mid_soc: f64, c_chg: f64, c_dchg: f64) -> Result<Self> {
        let c = CyclingConditions {
            temp_c,
            dod,
            mid_soc,
            c_chg,
            c_dchg,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if self.temp_c <= -KELVIN_OFFSET {
            return Err(Error::invalid(format!(
                "temperature {} degC is at or below absolute zero",
                self.temp_c
            )));
        }
        // structural checks; operating-window concerns are warnings only
        to_input_unchecked(self, 1.0).validate()
    }

    /// Non-fatal notes for operation outside the recommended window, where
    /// the model extrapolates (cold temperatures and high C-rates are not
    /// represented in typical training data).
    pub fn warnings(&self) -> Vec<String> {
        let mut w = Vec::new();
        if self.temp_c < 0.0 || self.temp_c > 55.0 {
            w.push(format!(
                "temperature {} degC is outside the recommended -30..55 degC cycling window",
                self.temp_c
            ));
        }
        if self.c_chg > 2.0 || self.c_dchg > 2.0 {
            w.push("C-rate above 2C is outside the tested range".to_string());
        }
        w
    }
}

fn to_input_unchecked(conditions: &CyclingConditions, delta_ah: f64) -> StressInputVector {
    StressInputVector {
        delta_ah,
        inv_temp: 1.0 / (conditions.temp_c + KELVIN_OFFSET),
        dod: conditions.dod,
        mid_soc: conditions.mid_soc,
        c_chg: conditions.c_chg,
        c_dchg: conditions.c_dchg,
    }
}

/// Build the model input for predicting the loss over `delta_ah` under the
/// given conditions. Temperature enters as its reciprocal in Kelvin.
pub fn to_input(conditions: &CyclingConditions, delta_ah: f64) -> Result<StressInputVector> {
    if conditions.temp_c <= -KELVIN_OFFSET {
        return Err(Error::invalid(format!(
            "temperature {} degC is at or below absolute zero",
            conditions.temp_c
        )));
    }
    let x = to_input_unchecked(conditions, delta_ah);
    x.validate()?;
    Ok(x)
}

/// Piecewise-constant condition profile, contiguous from 0 Ah.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionSchedule {
    pub segments: Vec<ScheduleSegment>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleSegment {
    pub ah_span: f64,
    pub conditions: CyclingConditions,
}

impl ConditionSchedule {
    pub fn new(segments: Vec<ScheduleSegment>) -> Result<Self> {
        let s = ConditionSchedule { segments };
        s.validate()?;
        Ok(s)
    }

    pub fn from_static(conditions: CyclingConditions, ah_span: f64) -> Result<Self> {
        ConditionSchedule::new(vec![ScheduleSegment {
            ah_span,
            conditions,
        }])
    }

    pub fn validate(&self) -> Result<()> {
        if self.segments.is_empty() {
            return Err(Error::invalid("schedule must have at least one segment"));
        }
        for seg in &self.segments {
            if !(seg.ah_span.is_finite() && seg.ah_span > 0.0) {
                return Err(Error::invalid("schedule segment spans must be > 0"));
            }
            seg.conditions.validate()?;
        }
        Ok(())
    }

    pub fn total_span(&self) -> f64 {
        self.segments.iter().map(|s| s.ah_span).sum()
    }

    /// Conditions in force at the given throughput (half-open segments).
    pub fn conditions_at(&self, ah: f64) -> Option<&CyclingConditions> {
        let mut start = 0.0;
        for seg in &self.segments {
            if ah < start + seg.ah_span {
                return Some(&seg.conditions);
            }
            start += seg.ah_span;
        }
        None
    }

    /// Drop the first `ah0` Ah of coverage (used when a curve is re-based to
    /// its beginning-of-life point).
    pub fn skip(&self, ah0: f64) -> Result<ConditionSchedule> {
        if ah0 < 0.0 {
            return Err(Error::invalid("cannot skip a negative span"));
        }
        if ah0 == 0.0 {
            return Ok(self.clone());
        }
        let mut out = Vec::new();
        let mut consumed = 0.0;
        for seg in &self.segments {
            let end = consumed + seg.ah_span;
            if end <= ah0 + 1e-12 {
                consumed = end;
                continue;
            }
            let start = consumed.max(ah0);
            out.push(ScheduleSegment {
                ah_span: end - start,
                conditions: seg.conditions,
            });
            consumed = end;
        }
        if out.is_empty() {
            return Err(Error::ScheduleExhausted {
                covered: self.total_span(),
                required: ah0,
            });
        }
        ConditionSchedule::new(out)
    }

    /// Constant-condition span starting at `ah`: how far the conditions at
    /// `ah` extend without change.
    fn constant_until(&self, ah: f64) -> Option<f64> {
        let mut start = 0.0;
        for seg in &self.segments {
            let end = start + seg.ah_span;
            if ah < end - 1e-9 {
                return Some(end);
            }
            start = end;
        }
        None
    }
}

/// How per-step predictive variances combine along a rollout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum VarianceAccumulation {
    /// Sum per-step variances (independence assumption). Known to be
    /// over-confident for the accumulated curve; kept as the default
    /// because it matches the reference behaviour of the model.
    Independent,
    /// Use the full joint covariance of the per-step predictions.
    Correlated,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ForecastPoint {
    pub ah: f64,
    pub q_mean: f64,
    pub q_sigma: f64,
}

/// Per-step capacity-loss distribution underlying a forecast.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StepDelta {
    pub ah_start: f64,
    pub ah_end: f64,
    pub dq_mean: f64,
    pub dq_var: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CapacityForecast {
    pub points: Vec<ForecastPoint>,
    pub steps: Vec<StepDelta>,
}

/// Forecast the capacity curve from beginning of life (100%) over
/// `horizon_ah`, stepping by `step_ah` and splitting steps at segment
/// boundaries.
pub fn rollout(
    model: &TrainedModel,
    schedule: &ConditionSchedule,
    horizon_ah: f64,
    step_ah: f64,
    mode: VarianceAccumulation,
) -> Result<CapacityForecast> {
    rollout_from(model, schedule, 0.0, 100.0, horizon_ah, step_ah, mode)
}

/// Forecast starting from a known capacity anchor at `start_ah` (used when
/// re-forecasting after a model update: the forecast restarts from the
/// measured capacity, not from the model's own accumulated estimate).
pub fn rollout_from(
    model: &TrainedModel,
    schedule: &ConditionSchedule,
    start_ah: f64,
    start_q: f64,
    horizon_ah: f64,
    step_ah: f64,
    mode: VarianceAccumulation,
) -> Result<CapacityForecast> {
    if !(step_ah.is_finite() && step_ah > 0.0) {
        return Err(Error::invalid("step_ah must be > 0"));
    }
    if !(horizon_ah.is_finite() && horizon_ah > 0.0) {
        return Err(Error::invalid("horizon_ah must be > 0"));
    }
    schedule.validate()?;
    let local = schedule.skip(start_ah)?;
    if local.total_span() < horizon_ah - 1e-9 {
        return Err(Error::ScheduleExhausted {
            covered: local.total_span(),
            required: horizon_ah,
        });
    }

    // Build the substeps first: step boundaries every step_ah, split at
    // segment boundaries.
    let mut boundaries = Vec::new();
    let mut ah = 0.0;
    while ah < horizon_ah - 1e-9 {
        let step_end = (ah + step_ah).min(horizon_ah);
        let seg_end = local.constant_until(ah).ok_or(Error::ScheduleExhausted {
            covered: local.total_span(),
            required: horizon_ah,
        })?;
        let end = step_end.min(seg_end);
        boundaries.push((ah, end));
        ah = end;
    }

    let mut step_inputs = Vec::with_capacity(boundaries.len());
    for &(a, b) in &boundaries {
        let conditions = local.conditions_at(a).ok_or(Error::ScheduleExhausted {
            covered: local.total_span(),
            required: horizon_ah,
        })?;
        step_inputs.push(to_input(conditions, b - a)?);
    }

    let want_full = matches!(mode, VarianceAccumulation::Correlated);
    let pred = model.predict(&step_inputs, want_full)?;

    let mut points = Vec::with_capacity(boundaries.len() + 1);
    points.push(ForecastPoint {
        ah: start_ah,
        q_mean: start_q,
        q_sigma: 0.0,
    });
    let mut steps = Vec::with_capacity(boundaries.len());
    // accumulate the loss sum separately so the mean at any point is exactly
    // the anchor plus the running sum of step means
    let mut dq_sum = 0.0;
    let mut var = 0.0;
    for (k, &(a, b)) in boundaries.iter().enumerate() {
        dq_sum += pred.mean[k];
        var = match mode {
            VarianceAccumulation::Independent => var + pred.variance[k],
            VarianceAccumulation::Correlated => {
                let cov = pred.full_cov.as_ref().expect("full covariance requested");
                let mut v = 0.0;
                for i in 0..=k {
                    for j in 0..=k {
                        v += cov[(i, j)];
                    }
                }
                v.max(0.0)
            }
        };
        steps.push(StepDelta {
            ah_start: start_ah + a,
            ah_end: start_ah + b,
            dq_mean: pred.mean[k],
            dq_var: pred.variance[k],
        });
        points.push(ForecastPoint {
            ah: start_ah + b,
            q_mean: start_q + dq_sum,
            q_sigma: var.sqrt(),
        });
    }

    Ok(CapacityForecast { points, steps })
}

/// One-step samples from a curve under a time-varying schedule: a window is
/// emitted only when the conditions are constant across it.
pub fn windowize_dynamic(
    curve: &CapacityCurve,
    schedule: &ConditionSchedule,
    max_lag: usize,
) -> Result<Vec<AgeingSample>> {
    let pts = &curve.points;
    let mut samples = Vec::new();
    for i in 0..pts.len() {
        for lag in 1..=max_lag {
            let j = i + lag;
            if j >= pts.len() {
                break;
            }
            let a = pts[i].ah;
            let b = pts[j].ah;
            let Some(end) = schedule.constant_until(a) else {
                continue;
            };
            if b <= end + 1e-9 {
                let conditions = schedule
                    .conditions_at(a)
                    .ok_or_else(|| Error::invalid("schedule does not cover curve"))?;
                samples.push(AgeingSample {
                    input: to_input(conditions, b - a)?,
                    target: pts[j].q_norm - pts[i].q_norm,
                });
            }
        }
    }
    Ok(samples)
}

/// Outcome of splitting a dynamic cell at an update point.
#[derive(Debug, Clone)]
pub struct UpdateSplit {
    /// Windowized samples whose windows end at or before the split.
    pub training: Vec<AgeingSample>,
    /// Measured anchor the post-split forecast restarts from.
    pub anchor: (f64, f64),
    /// Measured points after the anchor, for evaluation.
    pub eval_points: Vec<(f64, f64)>,
}

/// Split a curve for the model-update workflow: everything observed up to
/// `split_ah` becomes training data, and the remainder is held out for
/// evaluating the updated forecast.
pub fn update_point_split(
    schedule: &ConditionSchedule,
    curve: &CapacityCurve,
    split_ah: f64,
    max_lag: usize,
) -> Result<UpdateSplit> {
    let last_ah = curve
        .points
        .last()
        .ok_or_else(|| Error::invalid("empty curve"))?
        .ah;
    if !(0.0..last_ah).contains(&split_ah) {
        return Err(Error::invalid(format!(
            "split {split_ah} Ah is outside the observed range [0, {last_ah})"
        )));
    }

    let all = windowize_dynamic(curve, schedule, max_lag)?;
    let mut training = Vec::new();
    for (sample, window) in all.iter().zip(window_ends(curve, max_lag)) {
        if window <= split_ah + 1e-9 {
            training.push(sample.clone());
        }
    }

    let anchor_idx = curve
        .points
        .iter()
        .rposition(|p| p.ah <= split_ah + 1e-9)
        .ok_or_else(|| Error::invalid("no measured point at or before the split"))?;
    let anchor = (curve.points[anchor_idx].ah, curve.points[anchor_idx].q_norm);
    let eval_points = curve.points[anchor_idx + 1..]
        .iter()
        .map(|p| (p.ah, p.q_norm))
        .collect();

    Ok(UpdateSplit {
        training,
        anchor,
        eval_points,
    })
}

/// Window end throughputs in the same order windowize_dynamic emits samples.
fn window_ends(curve: &CapacityCurve, max_lag: usize) -> Vec<f64> {
    let pts = &curve.points;
    let mut ends = Vec::new();
    for i in 0..pts.len() {
        for lag in 1..=max_lag {
            let j = i + lag;
            if j >= pts.len() {
                break;
            }
            ends.push(pts[j].ah);
        }
    }
    ends
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gp;
    use crate::kernel::Hyperparameters;
    use approx::assert_relative_eq;

    fn conditions() -> CyclingConditions {
        CyclingConditions::new(25.0, 80.0, 50.0, 1.0 / 3.0, 1.0).unwrap()
    }

    fn constant_rate_model(rate_per_ah: f64, noise_var: f64) -> TrainedModel {
        // one-segment training grid that the linear kernel part fits exactly;
        // the signal variance is scaled so prior covariances are O(1) in %^2
        let cond = conditions();
        let mut inputs = Vec::new();
        let mut targets = Vec::new();
        for lag in 1..=3 {
            for _ in 0..3 {
                let dah = 4000.0 * lag as f64;
                inputs.push(to_input(&cond, dah).unwrap());
                targets.push(-rate_per_ah * dah);
            }
        }
        let hp =
            Hyperparameters::new([1e-3, 100.0, 100.0, 2.0, 2.0], 8000.0, 2e-8, noise_var).unwrap();
        gp::fit(&inputs, &targets, &hp).unwrap()
    }

    #[test]
    fn to_input_converts_temperature() {
        let c = CyclingConditions::new(25.0, 100.0, 50.0, 1.0, 1.0).unwrap();
        let x = to_input(&c, 4000.0).unwrap();
        assert_relative_eq!(x.inv_temp, 1.0 / 298.15, max_relative = 1e-12);
        assert_relative_eq!(x.inv_temp, 0.003354, max_relative = 1e-3);

        let c0 = CyclingConditions::new(0.0, 100.0, 50.0, 1.0, 1.0).unwrap();
        let x0 = to_input(&c0, 4000.0).unwrap();
        assert_relative_eq!(x0.inv_temp, 0.003661, max_relative = 1e-3);
    }

    #[test]
    fn to_input_rejects_nonpositive_delta_ah() {
        assert!(to_input(&conditions(), 0.0).is_err());
        assert!(to_input(&conditions(), -4000.0).is_err());
    }

    #[test]
    fn to_input_rejects_absolute_zero() {
        let c = CyclingConditions {
            temp_c: -300.0,
            dod: 50.0,
            mid_soc: 50.0,
            c_chg: 1.0,
            c_dchg: 1.0,
        };
        assert!(to_input(&c, 4000.0).is_err());
    }

    #[test]
    fn cold_temperature_is_a_warning_not_an_error() {
        let c = CyclingConditions::new(-10.0, 50.0, 50.0, 1.0, 1.0).unwrap();
        assert!(!c.warnings().is_empty());
    }

    #[test]
    fn rollout_accumulates_constant_rate() {
        // -0.5% per 4000 Ah
        let model = constant_rate_model(0.5 / 4000.0, 1e-10);
        let schedule = ConditionSchedule::from_static(conditions(), 1e6).unwrap();
        let fc = rollout(
            &model,
            &schedule,
            20000.0,
            4000.0,
            VarianceAccumulation::Independent,
        )
        .unwrap();
        assert_eq!(fc.points.len(), 6);
        let last = fc.points.last().unwrap();
        assert_relative_eq!(last.q_mean, 97.5, epsilon = 1e-3);
        // near-zero predictive variance stays near zero
        assert!(last.q_sigma < 1e-3, "sigma {}", last.q_sigma);
    }

    #[test]
    fn rollout_point_count_includes_partial_final_step() {
        let model = constant_rate_model(1e-4, 1e-8);
        let schedule = ConditionSchedule::from_static(conditions(), 1e6).unwrap();
        let fc = rollout(
            &model,
            &schedule,
            10000.0,
            4000.0,
            VarianceAccumulation::Independent,
        )
        .unwrap();
        // ceil(10000/4000) + 1 = 4 points at 0, 4000, 8000, 10000
        assert_eq!(fc.points.len(), 4);
        assert_relative_eq!(fc.points[3].ah, 10000.0);
    }

    #[test]
    fn rollout_sigma_is_nondecreasing() {
        let model = constant_rate_model(1e-4, 0.01);
        let schedule = ConditionSchedule::from_static(conditions(), 1e6).unwrap();
        let fc = rollout(
            &model,
            &schedule,
            60000.0,
            4000.0,
            VarianceAccumulation::Independent,
        )
        .unwrap();
        for w in fc.points.windows(2) {
            assert!(w[1].q_sigma >= w[0].q_sigma);
        }
    }

    #[test]
    fn rollout_invariant_to_segment_representation() {
        let model = constant_rate_model(1e-4, 1e-6);
        let one = ConditionSchedule::from_static(conditions(), 40000.0).unwrap();
        let many = ConditionSchedule::new(
            (0..10)
                .map(|_| ScheduleSegment {
                    ah_span: 4000.0,
                    conditions: conditions(),
                })
                .collect(),
        )
        .unwrap();
        let fa = rollout(
            &model,
            &one,
            40000.0,
            4000.0,
            VarianceAccumulation::Independent,
        )
        .unwrap();
        let fb = rollout(
            &model,
            &many,
            40000.0,
            4000.0,
            VarianceAccumulation::Independent,
        )
        .unwrap();
        assert_eq!(fa.points.len(), fb.points.len());
        for (a, b) in fa.points.iter().zip(&fb.points) {
            assert_relative_eq!(a.q_mean, b.q_mean, epsilon = 1e-10);
            assert_relative_eq!(a.q_sigma, b.q_sigma, epsilon = 1e-10);
        }
    }

    #[test]
    fn rollout_mean_equals_sum_of_step_means() {
        let model = constant_rate_model(2e-4, 0.01);
        let schedule = ConditionSchedule::from_static(conditions(), 1e6).unwrap();
        let fc = rollout(
            &model,
            &schedule,
            48000.0,
            4000.0,
            VarianceAccumulation::Independent,
        )
        .unwrap();
        let total: f64 = fc.steps.iter().map(|s| s.dq_mean).sum();
        let last = fc.points.last().unwrap();
        assert_eq!(last.q_mean, 100.0 + total);
    }

    #[test]
    fn rollout_splits_steps_at_segment_boundaries() {
        let model = constant_rate_model(1e-4, 1e-6);
        let warm = CyclingConditions::new(45.0, 80.0, 50.0, 1.0 / 3.0, 1.0).unwrap();
        let schedule = ConditionSchedule::new(vec![
            ScheduleSegment {
                ah_span: 6000.0,
                conditions: conditions(),
            },
            ScheduleSegment {
                ah_span: 1e6,
                conditions: warm,
            },
        ])
        .unwrap();
        let fc = rollout(
            &model,
            &schedule,
            12000.0,
            4000.0,
            VarianceAccumulation::Independent,
        )
        .unwrap();
        // boundaries: 0-4000, 4000-6000 (split), 6000-10000, 10000-12000
        assert_eq!(fc.steps.len(), 4);
        assert_relative_eq!(fc.steps[1].ah_end, 6000.0);
    }

    #[test]
    fn rollout_errors_when_schedule_too_short() {
        let model = constant_rate_model(1e-4, 1e-6);
        let schedule = ConditionSchedule::from_static(conditions(), 8000.0).unwrap();
        let err = rollout(
            &model,
            &schedule,
            16000.0,
            4000.0,
            VarianceAccumulation::Independent,
        );
        assert!(matches!(err, Err(Error::ScheduleExhausted { .. })));
    }

    fn dynamic_curve_and_schedule() -> (CapacityCurve, ConditionSchedule) {
        use crate::preprocess::{ConditionSpec, CurvePoint, Provenance};
        let warm = CyclingConditions::new(45.0, 80.0, 50.0, 1.0 / 3.0, 1.0).unwrap();
        let schedule = ConditionSchedule::new(vec![
            ScheduleSegment {
                ah_span: 90_000.0,
                conditions: conditions(),
            },
            ScheduleSegment {
                ah_span: 90_000.0,
                conditions: warm,
            },
        ])
        .unwrap();
        let points = (0..=45)
            .map(|i| CurvePoint {
                ah: 4000.0 * i as f64,
                q_norm: 100.0 - 0.05 * i as f64,
                source_index: i,
            })
            .collect();
        let curve = CapacityCurve {
            cell_id: "CELL124".into(),
            conditions: ConditionSpec::Dynamic {
                schedule: schedule.clone(),
            },
            points,
            provenance: Provenance::default(),
        };
        (curve, schedule)
    }

    #[test]
    fn update_split_at_zero_has_empty_training() {
        let (curve, schedule) = dynamic_curve_and_schedule();
        let split = update_point_split(&schedule, &curve, 0.0, 3).unwrap();
        assert!(split.training.is_empty());
        assert_eq!(split.anchor, (0.0, 100.0));
        assert_eq!(split.eval_points.len(), 45);
    }

    #[test]
    fn update_split_training_windows_end_before_the_split() {
        let (curve, schedule) = dynamic_curve_and_schedule();
        let split = update_point_split(&schedule, &curve, 90_000.0, 3).unwrap();
        assert!(!split.training.is_empty());
        // every training window ends at or before the split; with lag-3
        // windows inside the first segment the last start is 78000 Ah
        for sample in &split.training {
            assert!(sample.input.delta_ah <= 12_000.0);
        }
        assert_eq!(split.anchor.0, 88_000.0);
        assert!(split.eval_points.iter().all(|&(ah, _)| ah > 88_000.0));
        // windows crossing the segment boundary are not emitted
        let n_swept: usize = split
            .training
            .iter()
            .filter(|s| s.input.inv_temp > 1.0 / (45.0 + KELVIN_OFFSET) - 1e-9)
            .count();
        assert_eq!(n_swept, split.training.len(), "first segment only");
    }

    #[test]
    fn update_split_outside_range_is_invalid() {
        let (curve, schedule) = dynamic_curve_and_schedule();
        assert!(update_point_split(&schedule, &curve, -1.0, 3).is_err());
        assert!(update_point_split(&schedule, &curve, 500_000.0, 3).is_err());
    }

    #[test]
    fn correlated_mode_grows_sigma_faster_for_identical_steps() {
        let model = constant_rate_model(1e-4, 0.04);
        let schedule = ConditionSchedule::from_static(conditions(), 1e6).unwrap();
        let ind = rollout(
            &model,
            &schedule,
            40000.0,
            4000.0,
            VarianceAccumulation::Independent,
        )
        .unwrap();
        let cor = rollout(
            &model,
            &schedule,
            40000.0,
            4000.0,
            VarianceAccumulation::Correlated,
        )
        .unwrap();
        // identical repeated inputs are perfectly correlated predictions
        let si = ind.points.last().unwrap().q_sigma;
        let sc = cor.points.last().unwrap().q_sigma;
        assert!(sc >= si);
    }
}
