//! Synthetic ageing-corpus generator with a closed-form ground truth.
//!
//! The loss-rate law combines the qualitative dependencies seen in cycling
//! data: Arrhenius temperature acceleration, a DOD power law, a U-shaped
//! middle-SOC term with its optimum at 50%, a charge-rate knee above 1C and
//! a weak discharge-rate slope. Ground truth is stored beside the noisy
//! measurements so end-to-end tests can score true errors, not residuals.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ageing::{ConditionSchedule, CyclingConditions, KELVIN_OFFSET};
use crate::error::{Error, Result};
use crate::preprocess::{ConditionSpec, RawCapacitySeries};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeneratorParams {
    /// Pre-exponential loss-rate scale [%/Ah].
    pub pre_exponential: f64,
    /// Activation-energy ratio Ea/R [K].
    pub ea_over_r: f64,
    /// DOD power-law exponent.
    pub dod_exponent: f64,
    /// Curvature of the U-shaped middle-SOC dependency.
    pub soc_curvature: f64,
    /// C-rate where charge-rate acceleration sets in [C].
    pub chg_rate_knee: f64,
    /// Width of the knee transition [C]. The knee is smooth: a hard kink
    /// would force the fitted length-scale of this dimension toward zero
    /// and swamp every other relevance weight.
    pub chg_rate_knee_width: f64,
    /// Slope of the charge-rate acceleration past the knee [per C].
    pub chg_rate_slope: f64,
    /// Weak linear discharge-rate sensitivity [per C].
    pub dchg_sensitivity: f64,
    /// Gaussian measurement noise per characterization [% of capacity].
    pub measurement_noise_sigma: f64,
    /// Nominal cell capacity [Ah].
    pub nominal_capacity_ah: f64,
    /// Prepend an initial capacity rise (exercises its removal).
    pub phase1_rise: bool,
    /// Append an accelerating terminal drop (exercises its truncation).
    pub phase3_knee: bool,
    pub seed: u64,
}

impl Default for GeneratorParams {
    fn default() -> Self {
        // Scaled so hot full-DOD cycling loses roughly 15-20% over
        // 160000 Ah, with temperature the dominant factor and the
        // discharge rate the weakest.
        GeneratorParams {
            pre_exponential: 3.9e5,
            ea_over_r: 7000.0,
            dod_exponent: 0.4,
            soc_curvature: 0.8,
            chg_rate_knee: 1.0,
            chg_rate_knee_width: 0.35,
            chg_rate_slope: 0.25,
            dchg_sensitivity: 0.02,
            measurement_noise_sigma: 0.2,
            nominal_capacity_ah: 20.0,
            phase1_rise: false,
            phase3_knee: false,
            seed: 0,
        }
    }
}

impl GeneratorParams {
    pub fn validate(&self) -> Result<()> {
        let positives = [
            self.pre_exponential,
            self.ea_over_r,
            self.dod_exponent,
            self.nominal_capacity_ah,
            self.chg_rate_knee,
            self.chg_rate_knee_width,
        ];
        if positives.iter().any(|p| !(p.is_finite() && *p > 0.0)) {
            return Err(Error::invalid("generator scales must be positive"));
        }
        if self.measurement_noise_sigma < 0.0 {
            return Err(Error::invalid("measurement noise must be >= 0"));
        }
        Ok(())
    }
}

/// Deterministic ground-truth loss rate [% per Ah] for the conditions.
pub fn true_rate(conditions: &CyclingConditions, params: &GeneratorParams) -> f64 {
    let inv_temp = 1.0 / (conditions.temp_c + KELVIN_OFFSET);
    let w = params.chg_rate_knee_width.max(1e-6);
    // smooth ramp: ~0 below the knee, slope 1 above it
    let z = (conditions.c_chg - params.chg_rate_knee) / w;
    let excess = if z > 30.0 { z * w } else { w * z.exp().ln_1p() };
    params.pre_exponential
        * (-params.ea_over_r * inv_temp).exp()
        * (conditions.dod / 100.0).powf(params.dod_exponent)
        * (1.0 + params.soc_curvature * ((conditions.mid_soc - 50.0) / 50.0).powi(2))
        * (1.0 + params.chg_rate_slope * excess)
        * (1.0 + params.dchg_sensitivity * (conditions.c_dchg - 1.0))
}

/// Noise-free capacity loss [%] accumulated over a schedule up to `ah`.
pub fn true_loss(schedule: &ConditionSchedule, ah: f64, params: &GeneratorParams) -> f64 {
    let mut loss = 0.0;
    let mut consumed = 0.0;
    for seg in &schedule.segments {
        if consumed >= ah {
            break;
        }
        let span = seg.ah_span.min(ah - consumed);
        loss += true_rate(&seg.conditions, params) * span;
        consumed += span;
    }
    loss
}

/// Noise-free ground truth stored beside each generated cell.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GroundTruth {
    pub cell_id: String,
    /// (ah, q_norm) of the fade law itself, before noise and before any
    /// prepended rise or appended drop.
    pub curve: Vec<(f64, f64)>,
    /// Loss rate per segment [%/Ah].
    pub segment_rates: Vec<f64>,
}

/// Characterization cadence used by the generator [Ah].
pub const CADENCE_AH: f64 = 4000.0;

/// Generate one cell cycled under the given schedule, characterized every
/// 4000 Ah out to `horizon_ah`.
pub fn generate_cell(
    cell_id: &str,
    schedule: &ConditionSchedule,
    horizon_ah: f64,
    params: &GeneratorParams,
    cell_seed: u64,
) -> Result<(RawCapacitySeries, GroundTruth)> {
    params.validate()?;
    schedule.validate()?;
    if schedule.total_span() < horizon_ah {
        return Err(Error::ScheduleExhausted {
            covered: schedule.total_span(),
            required: horizon_ah,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed.wrapping_add(cell_seed));
    let steps = (horizon_ah / CADENCE_AH).round() as usize;

    let mut truth_curve = Vec::with_capacity(steps + 1);
    for k in 0..=steps {
        let ah = CADENCE_AH * k as f64;
        truth_curve.push((ah, 100.0 - true_loss(schedule, ah, params)));
    }

    let q_max_ah = params.nominal_capacity_ah;
    let mut points: Vec<(f64, f64)> = Vec::new();
    let mut ah_offset = 0.0;

    if params.phase1_rise {
        // two pre-maximum measurements ~0.3% below nominal
        points.push((0.0, q_max_ah * (1.0 - 0.003)));
        points.push((CADENCE_AH, q_max_ah * (1.0 - 0.001)));
        ah_offset = 2.0 * CADENCE_AH;
    }
    for &(ah, q) in &truth_curve {
        let noise = params.measurement_noise_sigma * normal(&mut rng);
        points.push((ah + ah_offset, q_max_ah * (q + noise) / 100.0));
    }
    if params.phase3_knee {
        let last_ah = points.last().unwrap().0;
        let last_q = 100.0 * points.last().unwrap().1 / q_max_ah;
        for k in 1..=3usize {
            // accelerating quadratic drop, well past the detector threshold
            let drop = 1.5 * (k * k) as f64;
            points.push((
                last_ah + CADENCE_AH * k as f64,
                q_max_ah * (last_q - drop) / 100.0,
            ));
        }
    }

    let conditions = if schedule.segments.len() == 1 {
        ConditionSpec::Static {
            conditions: schedule.segments[0].conditions,
        }
    } else {
        // shift the schedule so it covers any prepended rise measurements
        let mut segments = schedule.segments.clone();
        if ah_offset > 0.0 {
            let mut first = segments[0];
            first.ah_span = ah_offset;
            segments.insert(0, first);
        }
        ConditionSpec::Dynamic {
            schedule: ConditionSchedule::new(segments)?,
        }
    };

    let series = RawCapacitySeries {
        cell_id: cell_id.to_string(),
        conditions,
        points,
    };
    series.validate()?;
    Ok((
        series,
        GroundTruth {
            cell_id: cell_id.to_string(),
            curve: truth_curve,
            segment_rates: schedule
                .segments
                .iter()
                .map(|s| true_rate(&s.conditions, params))
                .collect(),
        },
    ))
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen_range(1e-12..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// The static test matrix: 34 combinations of temperature, DOD, middle-SOC
/// and charge/discharge C-rates covering the tested operating window.
pub fn test_matrix() -> Vec<CyclingConditions> {
    let c3 = 1.0 / 3.0;
    let mut grid = Vec::new();
    let mut push = |temp: f64, dod: f64, mid: f64, chg: f64, dchg: f64| {
        grid.push(CyclingConditions {
            temp_c: temp,
            dod,
            mid_soc: mid,
            c_chg: chg,
            c_dchg: dchg,
        });
    };

    // DOD 100, mid 50, C/3-1C at all three temperatures
    for t in [25.0, 35.0, 45.0] {
        push(t, 100.0, 50.0, c3, 1.0);
    }
    // DOD 80, mid 50: the C-rate exploration block
    for t in [25.0, 35.0, 45.0] {
        push(t, 80.0, 50.0, c3, 1.0);
    }
    push(25.0, 80.0, 50.0, 1.0, 1.0);
    push(25.0, 80.0, 50.0, c3, c3);
    push(35.0, 80.0, 50.0, c3, 2.0);
    push(35.0, 80.0, 50.0, 0.5, 1.0);
    push(35.0, 80.0, 50.0, 1.0, 1.0);
    push(35.0, 80.0, 50.0, 2.0, 1.0);
    push(35.0, 80.0, 50.0, 2.0, 2.0);
    // DOD 65, mid 50
    for t in [25.0, 35.0, 45.0] {
        push(t, 65.0, 50.0, c3, 1.0);
    }
    // DOD 50: mid-SOC exploration at 35 degC plus the standard mid-50 row
    push(35.0, 50.0, 65.0, c3, 1.0);
    for t in [25.0, 35.0, 45.0] {
        push(t, 50.0, 50.0, c3, 1.0);
    }
    push(35.0, 50.0, 35.0, c3, 1.0);
    // DOD 35, mid 50
    for t in [25.0, 35.0, 45.0] {
        push(t, 35.0, 50.0, c3, 1.0);
    }
    // DOD 20: wide mid-SOC spread at 35 degC
    push(35.0, 20.0, 80.0, c3, 1.0);
    push(35.0, 20.0, 65.0, c3, 1.0);
    for t in [25.0, 35.0, 45.0] {
        push(t, 20.0, 50.0, c3, 1.0);
    }
    push(35.0, 20.0, 35.0, c3, 1.0);
    push(35.0, 20.0, 20.0, c3, 1.0);
    // DOD 10: only away from mid 50
    push(35.0, 10.0, 80.0, c3, 1.0);
    push(35.0, 10.0, 65.0, c3, 1.0);
    push(35.0, 10.0, 20.0, c3, 1.0);

    grid
}

/// Generate the full grid corpus: `cells_per_condition` cells at every
/// matrix condition. Cell ids are CELL001, CELL002, ...
pub fn generate_grid_corpus(
    params: &GeneratorParams,
    cells_per_condition: usize,
    horizon_ah: f64,
) -> Result<Vec<(RawCapacitySeries, GroundTruth)>> {
    if cells_per_condition == 0 {
        return Err(Error::invalid("cells_per_condition must be >= 1"));
    }
    let mut out = Vec::new();
    let mut cell_no = 0u64;
    for conditions in test_matrix() {
        for _ in 0..cells_per_condition {
            cell_no += 1;
            let id = format!("CELL{cell_no:03}");
            let schedule = ConditionSchedule::from_static(conditions, horizon_ah + CADENCE_AH)?;
            out.push(generate_cell(&id, &schedule, horizon_ah, params, cell_no)?);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ageing::ScheduleSegment;
    use approx::assert_relative_eq;

    fn base_conditions() -> CyclingConditions {
        CyclingConditions::new(25.0, 100.0, 50.0, 1.0 / 3.0, 1.0).unwrap()
    }

    #[test]
    fn arrhenius_acceleration_with_temperature() {
        let p = GeneratorParams::default();
        let cold = base_conditions();
        let hot = CyclingConditions {
            temp_c: 45.0,
            ..cold
        };
        let ratio = true_rate(&hot, &p) / true_rate(&cold, &p);
        let expected = (p.ea_over_r * (1.0 / 298.15 - 1.0 / 318.15)).exp();
        assert_relative_eq!(ratio, expected, max_relative = 1e-12);
        assert!(ratio > 1.0);
    }

    #[test]
    fn dod_power_law() {
        let p = GeneratorParams::default();
        let full = base_conditions();
        let half = CyclingConditions { dod: 50.0, ..full };
        let ratio = true_rate(&full, &p) / true_rate(&half, &p);
        assert_relative_eq!(ratio, 2.0_f64.powf(p.dod_exponent), max_relative = 1e-12);
    }

    #[test]
    fn mid_soc_fifty_minimizes_rate() {
        let p = GeneratorParams::default();
        let at = |mid: f64| {
            true_rate(
                &CyclingConditions {
                    mid_soc: mid,
                    ..base_conditions()
                },
                &p,
            )
        };
        let r50 = at(50.0);
        for mid in [0.0, 20.0, 35.0, 65.0, 80.0, 100.0] {
            assert!(at(mid) >= r50);
        }
        assert!(at(20.0) > r50);
    }

    #[test]
    fn zero_noise_static_cell_is_exactly_linear() {
        let p = GeneratorParams {
            measurement_noise_sigma: 0.0,
            ..Default::default()
        };
        let schedule = ConditionSchedule::from_static(base_conditions(), 1e6).unwrap();
        let (series, truth) = generate_cell("CELL001", &schedule, 40000.0, &p, 1).unwrap();
        let rate = true_rate(&base_conditions(), &p);
        for (k, &(ah, cap)) in series.points.iter().enumerate() {
            let q = 100.0 * cap / p.nominal_capacity_ah;
            assert_relative_eq!(q, 100.0 - rate * ah, max_relative = 1e-12);
            assert_relative_eq!(truth.curve[k].1, q, max_relative = 1e-12);
        }
    }

    #[test]
    fn fixed_seed_reproduces_corpus() {
        let p = GeneratorParams::default();
        let a = generate_grid_corpus(&p, 1, 20000.0).unwrap();
        let b = generate_grid_corpus(&p, 1, 20000.0).unwrap();
        assert_eq!(a.len(), b.len());
        for ((sa, _), (sb, _)) in a.iter().zip(&b) {
            assert_eq!(sa.cell_id, sb.cell_id);
            assert_eq!(sa.points, sb.points);
        }
    }

    #[test]
    fn grid_corpus_has_one_cell_per_condition_slot() {
        let p = GeneratorParams::default();
        let corpus = generate_grid_corpus(&p, 3, 20000.0).unwrap();
        assert_eq!(corpus.len(), 3 * test_matrix().len());
        assert_eq!(corpus.len(), 102);
    }

    #[test]
    fn dynamic_loss_integrates_piecewise() {
        let p = GeneratorParams::default();
        let warm = CyclingConditions {
            temp_c: 45.0,
            ..base_conditions()
        };
        let schedule = ConditionSchedule::new(vec![
            ScheduleSegment {
                ah_span: 8000.0,
                conditions: base_conditions(),
            },
            ScheduleSegment {
                ah_span: 8000.0,
                conditions: warm,
            },
        ])
        .unwrap();
        let total = true_loss(&schedule, 16000.0, &p);
        let part = true_rate(&base_conditions(), &p) * 8000.0 + true_rate(&warm, &p) * 8000.0;
        assert_relative_eq!(total, part, max_relative = 1e-12);
        // partial coverage of the second segment
        let partial = true_loss(&schedule, 12000.0, &p);
        let expected = true_rate(&base_conditions(), &p) * 8000.0 + true_rate(&warm, &p) * 4000.0;
        assert_relative_eq!(partial, expected, max_relative = 1e-12);
    }

    #[test]
    fn phase_toggles_shape_the_series() {
        let p = GeneratorParams {
            measurement_noise_sigma: 0.0,
            phase1_rise: true,
            phase3_knee: true,
            ..Default::default()
        };
        let schedule = ConditionSchedule::from_static(base_conditions(), 1e6).unwrap();
        let (series, _) = generate_cell("CELL001", &schedule, 40000.0, &p, 1).unwrap();
        // 2 rise points + 11 fade points + 3 knee points
        assert_eq!(series.points.len(), 16);
        // maximum sits after the rise
        let max_idx = series
            .points
            .iter()
            .enumerate()
            .max_by(|a, b| a.1 .1.partial_cmp(&b.1 .1).unwrap())
            .unwrap()
            .0;
        assert_eq!(max_idx, 2);
        // knee steps exceed the default drop threshold
        let n = series.points.len();
        let q = |i: usize| 100.0 * series.points[i].1 / p.nominal_capacity_ah;
        assert!(q(n - 2) - q(n - 1) > crate::preprocess::DEFAULT_DROP_THRESHOLD);
    }

    #[test]
    fn generator_windowize_consistency() {
        // noise-free generated targets equal true_rate times the window span
        let p = GeneratorParams {
            measurement_noise_sigma: 0.0,
            ..Default::default()
        };
        let cond = base_conditions();
        let schedule = ConditionSchedule::from_static(cond, 1e6).unwrap();
        let (series, _) = generate_cell("CELL001", &schedule, 40000.0, &p, 9).unwrap();
        let curve = crate::preprocess::trim_phase1(&series).unwrap();
        let samples = crate::preprocess::windowize(&curve, &cond, 3).unwrap();
        let rate = true_rate(&cond, &p);
        for s in &samples {
            assert_relative_eq!(s.target, -rate * s.input.delta_ah, epsilon = 1e-9);
        }
    }
}
