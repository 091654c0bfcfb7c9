//! Raw capacity-curve preprocessing.
//!
//! Measured capacity retention curves show an initial rise (a geometric
//! effect, not ageing), a long progressive-fade phase, and sometimes a
//! sudden terminal drop. Only the progressive fade is modelled: the rise is
//! dropped and the curve re-anchored at its maximal-capacity point, the
//! terminal drop is truncated, and abnormal single measurements can be
//! flagged. Windowing then turns a curve into overlapping
//! (stress input, capacity-loss) training samples.

use serde::{Deserialize, Serialize};

use crate::ageing::{to_input, ConditionSchedule, CyclingConditions};
use crate::error::{Error, Result};
use crate::kernel::StressInputVector;

/// Default terminal-drop detector: loss above 1% per step sustained for two
/// consecutive steps.
pub const DEFAULT_DROP_THRESHOLD: f64 = 1.0;
pub const DEFAULT_DROP_WINDOW: usize = 2;
pub const DEFAULT_OUTLIER_Z: f64 = 3.5;
/// Windows up to three characterization steps give the 4000/8000/12000 Ah
/// training grid at the default cadence.
pub const DEFAULT_MAX_LAG: usize = 3;

/// Residuals below this magnitude (in % of capacity) are never flagged as
/// outliers, whatever the local scatter.
const OUTLIER_ABS_FLOOR: f64 = 1e-6;

/// Conditions attached to a cell: constant, or a piecewise profile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ConditionSpec {
    Static { conditions: CyclingConditions },
    Dynamic { schedule: ConditionSchedule },
}

impl ConditionSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            ConditionSpec::Static { conditions } => conditions.validate(),
            ConditionSpec::Dynamic { schedule } => schedule.validate(),
        }
    }

    pub fn as_static(&self) -> Option<&CyclingConditions> {
        match self {
            ConditionSpec::Static { conditions } => Some(conditions),
            ConditionSpec::Dynamic { .. } => None,
        }
    }
}

/// Raw per-cell measurements straight from characterization tests.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RawCapacitySeries {
    pub cell_id: String,
    pub conditions: ConditionSpec,
    /// Ordered (ah_throughput [Ah], capacity [Ah]) pairs.
    pub points: Vec<(f64, f64)>,
}

impl RawCapacitySeries {
    pub fn validate(&self) -> Result<()> {
        self.conditions.validate()?;
        if self
            .points
            .iter()
            .any(|&(a, c)| !a.is_finite() || !(c.is_finite() && c > 0.0))
        {
            return Err(Error::MalformedData(format!(
                "cell {}: capacities must be positive and finite",
                self.cell_id
            )));
        }
        if self.points.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err(Error::MalformedData(format!(
                "cell {}: ah_throughput must be strictly increasing",
                self.cell_id
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropReason {
    InitialRise,
    SuddenDrop,
    Outlier,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DroppedPoint {
    /// Index into the raw series.
    pub source_index: usize,
    pub reason: DropReason,
}

/// Record of what preprocessing did to a cell.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Provenance {
    pub original_points: usize,
    pub dropped: Vec<DroppedPoint>,
    /// Advisory outlier flags (kept in the curve unless explicitly dropped).
    pub flagged: Vec<usize>,
}

impl Provenance {
    pub fn retained_fraction(&self) -> f64 {
        if self.original_points == 0 {
            return 0.0;
        }
        (self.original_points - self.dropped.len()) as f64 / self.original_points as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    /// Throughput since the re-anchored beginning of life [Ah].
    pub ah: f64,
    /// Capacity normalized to the maximal capacity [%].
    pub q_norm: f64,
    /// Index into the raw series this point came from.
    pub source_index: usize,
}

/// A modelling-ready capacity curve: first point is (0, 100) by
/// construction.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CapacityCurve {
    pub cell_id: String,
    pub conditions: ConditionSpec,
    pub points: Vec<CurvePoint>,
    pub provenance: Provenance,
}

/// One training row: a six-dimensional input and the capacity loss observed
/// over its window (negative for loss).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgeingSample {
    pub input: StressInputVector,
    pub target: f64,
}

/// Drop the initial capacity rise and re-anchor the curve at its maximal
/// capacity point (ties broken toward the earliest maximum, keeping the
/// longest fade segment).
pub fn trim_phase1(series: &RawCapacitySeries) -> Result<CapacityCurve> {
    series.validate()?;
    if series.points.len() < 2 {
        return Err(Error::invalid(format!(
            "cell {}: need at least 2 points",
            series.cell_id
        )));
    }
    let mut max_idx = 0;
    for (i, &(_, cap)) in series.points.iter().enumerate() {
        if cap > series.points[max_idx].1 {
            max_idx = i;
        }
    }
    if max_idx == series.points.len() - 1 {
        return Err(Error::DegenerateCurve {
            cell_id: series.cell_id.clone(),
            reason: "maximal capacity at the last measurement leaves nothing to model".into(),
        });
    }

    let (ah0, q_max) = series.points[max_idx];
    let points = series.points[max_idx..]
        .iter()
        .enumerate()
        .map(|(k, &(ah, cap))| CurvePoint {
            ah: ah - ah0,
            q_norm: 100.0 * cap / q_max,
            source_index: max_idx + k,
        })
        .collect();
    let dropped = (0..max_idx)
        .map(|i| DroppedPoint {
            source_index: i,
            reason: DropReason::InitialRise,
        })
        .collect();

    let conditions = match &series.conditions {
        ConditionSpec::Static { conditions } => ConditionSpec::Static {
            conditions: *conditions,
        },
        ConditionSpec::Dynamic { schedule } => ConditionSpec::Dynamic {
            schedule: schedule.skip(ah0)?,
        },
    };

    Ok(CapacityCurve {
        cell_id: series.cell_id.clone(),
        conditions,
        points,
        provenance: Provenance {
            original_points: series.points.len(),
            dropped,
            flagged: Vec::new(),
        },
    })
}

/// Truncate the sudden terminal capacity drop: find the first index from
/// which the per-step loss exceeds `drop_threshold` (% per step) for
/// `window` consecutive steps, and cut the curve there. A single noisy step
/// shorter than the window does not trigger.
pub fn trim_phase3(curve: &CapacityCurve, drop_threshold: f64, window: usize) -> CapacityCurve {
    let mut curve = curve.clone();
    if window == 0 || curve.points.len() < window + 1 {
        return curve;
    }
    let n = curve.points.len();
    let mut cut = None;
    'outer: for i in 0..n - window {
        for k in 0..window {
            let loss = curve.points[i + k].q_norm - curve.points[i + k + 1].q_norm;
            if loss <= drop_threshold {
                continue 'outer;
            }
        }
        cut = Some(i);
        break;
    }
    if let Some(i) = cut {
        for p in &curve.points[i + 1..] {
            curve.provenance.dropped.push(DroppedPoint {
                source_index: p.source_index,
                reason: DropReason::SuddenDrop,
            });
        }
        curve.points.truncate(i + 1);
    }
    curve
}

/// Flag measurements whose residual from a robust local linear fit (five
/// point window, the point itself excluded from its own fit) exceeds
/// `z_threshold` robust standard deviations. Flags are advisory; use
/// [`drop_flagged`] to actually remove them.
pub fn flag_outliers(curve: &CapacityCurve, z_threshold: f64) -> Result<CapacityCurve> {
    let n = curve.points.len();
    if n < 5 {
        return Err(Error::invalid(format!(
            "cell {}: outlier detection needs at least 5 points, got {n}",
            curve.cell_id
        )));
    }
    let mut curve = curve.clone();
    let mut residuals = Vec::with_capacity(n);
    for i in 0..n {
        let lo = i.saturating_sub(2).min(n - 5);
        let window: Vec<(f64, f64)> = (lo..lo + 5)
            .filter(|&j| j != i)
            .map(|j| (curve.points[j].ah, curve.points[j].q_norm))
            .collect();
        let (slope, intercept) = theil_sen(&window);
        residuals.push(curve.points[i].q_norm - (slope * curve.points[i].ah + intercept));
    }
    let sigma = robust_sigma(&residuals).max(OUTLIER_ABS_FLOOR);
    curve.provenance.flagged = residuals
        .iter()
        .enumerate()
        .filter(|(_, r)| r.abs() > z_threshold * sigma && r.abs() > OUTLIER_ABS_FLOOR)
        .map(|(i, _)| curve.points[i].source_index)
        .collect();
    Ok(curve)
}

/// Remove the points flagged by [`flag_outliers`], recording them as
/// dropped.
pub fn drop_flagged(curve: &CapacityCurve) -> CapacityCurve {
    let mut curve = curve.clone();
    let flagged = std::mem::take(&mut curve.provenance.flagged);
    curve.points.retain(|p| !flagged.contains(&p.source_index));
    for source_index in flagged {
        curve.provenance.dropped.push(DroppedPoint {
            source_index,
            reason: DropReason::Outlier,
        });
    }
    curve
}

/// Median-of-pairwise-slopes line fit; robust to a single contaminated
/// point in a five-point window.
fn theil_sen(points: &[(f64, f64)]) -> (f64, f64) {
    let mut slopes = Vec::new();
    for (j, &(xj, yj)) in points.iter().enumerate() {
        for &(xk, yk) in &points[j + 1..] {
            if (xk - xj).abs() > 0.0 {
                slopes.push((yk - yj) / (xk - xj));
            }
        }
    }
    let slope = median(&mut slopes);
    let mut offsets: Vec<f64> = points.iter().map(|&(x, y)| y - slope * x).collect();
    let intercept = median(&mut offsets);
    (slope, intercept)
}

fn median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// 1.4826 * median absolute deviation: a robust spread estimate.
fn robust_sigma(residuals: &[f64]) -> f64 {
    let mut vals = residuals.to_vec();
    let center = median(&mut vals);
    let mut dev: Vec<f64> = residuals.iter().map(|r| (r - center).abs()).collect();
    1.4826 * median(&mut dev)
}

/// Emit every overlapping window up to `max_lag` characterization steps as
/// a training sample: the target is the difference of the two retained
/// normalized capacities (negative for loss), never an interpolated value.
/// Windows restart from every interior point, so identical inputs with
/// different targets are expected and act as repeated noisy observations.
pub fn windowize(
    curve: &CapacityCurve,
    conditions: &CyclingConditions,
    max_lag: usize,
) -> Result<Vec<AgeingSample>> {
    let pts = &curve.points;
    if pts.len() < 2 {
        return Ok(Vec::new());
    }
    let mut samples = Vec::new();
    for i in 0..pts.len() {
        for lag in 1..=max_lag {
            let j = i + lag;
            if j >= pts.len() {
                break;
            }
            samples.push(AgeingSample {
                input: to_input(conditions, pts[j].ah - pts[i].ah)?,
                target: pts[j].q_norm - pts[i].q_norm,
            });
        }
    }
    Ok(samples)
}

/// Options for the full per-cell pipeline.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PreprocessOptions {
    pub drop_threshold: f64,
    pub drop_window: usize,
    pub outlier_z: f64,
    /// Remove flagged outliers instead of only recording them.
    pub drop_outliers: bool,
}

impl Default for PreprocessOptions {
    fn default() -> Self {
        PreprocessOptions {
            drop_threshold: DEFAULT_DROP_THRESHOLD,
            drop_window: DEFAULT_DROP_WINDOW,
            outlier_z: DEFAULT_OUTLIER_Z,
            drop_outliers: false,
        }
    }
}

/// Full pipeline for one cell: drop the initial rise, truncate the terminal
/// drop, flag (and optionally remove) outliers.
pub fn preprocess_series(
    series: &RawCapacitySeries,
    options: &PreprocessOptions,
) -> Result<CapacityCurve> {
    let curve = trim_phase1(series)?;
    let curve = trim_phase3(&curve, options.drop_threshold, options.drop_window);
    let curve = if curve.points.len() >= 5 {
        flag_outliers(&curve, options.outlier_z)?
    } else {
        curve
    };
    Ok(if options.drop_outliers {
        drop_flagged(&curve)
    } else {
        curve
    })
}
