//! Progressive training cases: stress-factor levels are introduced one by
//! one, phase by phase (temperature, then DOD, middle-SOC, charging C-rate,
//! discharging C-rate), so each case's model has seen a strictly larger
//! slice of the operating window than the one before.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::ageing::CyclingConditions;
use crate::error::{Error, Result};
use crate::preprocess::{AgeingSample, CapacityCurve};

/// Tolerance for treating two condition levels as the same value.
const LEVEL_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StressFactor {
    Temperature,
    Dod,
    MidSoc,
    ChargeRate,
    DischargeRate,
}

/// Phase order of the curriculum.
pub const PHASE_ORDER: [StressFactor; 5] = [
    StressFactor::Temperature,
    StressFactor::Dod,
    StressFactor::MidSoc,
    StressFactor::ChargeRate,
    StressFactor::DischargeRate,
];

impl StressFactor {
    pub fn name(&self) -> &'static str {
        match self {
            StressFactor::Temperature => "temperature",
            StressFactor::Dod => "dod",
            StressFactor::MidSoc => "mid_soc",
            StressFactor::ChargeRate => "c_chg",
            StressFactor::DischargeRate => "c_dchg",
        }
    }

    pub fn level_of(&self, c: &CyclingConditions) -> f64 {
        match self {
            StressFactor::Temperature => c.temp_c,
            StressFactor::Dod => c.dod,
            StressFactor::MidSoc => c.mid_soc,
            StressFactor::ChargeRate => c.c_chg,
            StressFactor::DischargeRate => c.c_dchg,
        }
    }
}

/// One cell of a curriculum dataset: static conditions plus its processed
/// curve and windowized samples.
#[derive(Debug, Clone)]
pub struct CellData {
    pub cell_id: String,
    pub conditions: CyclingConditions,
    pub curve: CapacityCurve,
    pub samples: Vec<AgeingSample>,
}

#[derive(Debug, Clone, Default)]
pub struct Dataset {
    pub cells: Vec<CellData>,
}

impl Dataset {
    /// Distinct levels of a factor, ascending.
    pub fn levels(&self, factor: StressFactor) -> Vec<f64> {
        distinct_levels(self.cells.iter().map(|c| factor.level_of(&c.conditions)))
    }

    pub fn total_samples(&self) -> usize {
        self.cells.iter().map(|c| c.samples.len()).sum()
    }
}

fn distinct_levels(values: impl Iterator<Item = f64>) -> Vec<f64> {
    let mut v: Vec<f64> = values.collect();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    v.dedup_by(|a, b| (*a - *b).abs() < LEVEL_EPS);
    v
}

fn contains_level(levels: &[f64], value: f64) -> bool {
    levels.iter().any(|&l| (l - value).abs() < LEVEL_EPS)
}

/// Introduction order for the levels of one stress factor.
///
/// The highest level comes first and the lowest second (skipped when
/// already known); the range is then completed by repeatedly taking the
/// available level closest to the midpoint of the largest gap between
/// known levels. Distance ties go to the candidate in the larger gap,
/// then to the higher value. `deferred` levels are excluded entirely;
/// they join the training set later, once the conditions blocking them
/// are represented.
pub fn level_order(levels: &[f64], preincluded: &[f64], deferred: &[f64]) -> Vec<f64> {
    let levels = distinct_levels(levels.iter().copied());
    let mut known: Vec<f64> = levels
        .iter()
        .copied()
        .filter(|&l| contains_level(preincluded, l))
        .collect();
    let mut eligible: Vec<f64> = levels
        .iter()
        .copied()
        .filter(|&l| !contains_level(preincluded, l) && !contains_level(deferred, l))
        .collect();
    let mut order = Vec::new();

    let take = |value: f64, eligible: &mut Vec<f64>, known: &mut Vec<f64>| {
        eligible.retain(|&l| (l - value).abs() >= LEVEL_EPS);
        known.push(value);
        known.sort_by(|a, b| a.partial_cmp(b).unwrap());
        value
    };

    if let Some(&hi) = levels.last() {
        if contains_level(&eligible, hi) {
            order.push(take(hi, &mut eligible, &mut known));
        }
    }
    if let Some(&lo) = levels.first() {
        if contains_level(&eligible, lo) {
            order.push(take(lo, &mut eligible, &mut known));
        }
    }

    while !eligible.is_empty() {
        // score each candidate by (enclosing-gap span, -distance to the gap
        // midpoint, value); highest wins
        let mut best: Option<(f64, f64, f64)> = None;
        for &cand in &eligible {
            let (span, dist) = enclosing_gap(&known, cand);
            let better = match best {
                None => true,
                Some((bspan, bdist, bval)) => {
                    span > bspan + LEVEL_EPS
                        || ((span - bspan).abs() <= LEVEL_EPS
                            && (dist < bdist - LEVEL_EPS
                                || ((dist - bdist).abs() <= LEVEL_EPS && cand > bval)))
                }
            };
            if better {
                best = Some((span, dist, cand));
            }
        }
        let (_, _, value) = best.expect("nonempty eligible set");
        order.push(take(value, &mut eligible, &mut known));
    }
    order
}

/// Span of the gap between known levels that encloses the candidate, and
/// the candidate's distance to that gap's midpoint. Candidates outside the
/// known range get an unbounded gap so they are introduced first.
fn enclosing_gap(known: &[f64], candidate: f64) -> (f64, f64) {
    if known.is_empty() {
        return (f64::INFINITY, 0.0);
    }
    let lo = known[0];
    let hi = known[known.len() - 1];
    if candidate < lo || candidate > hi {
        return (f64::INFINITY, 0.0);
    }
    for w in known.windows(2) {
        if candidate >= w[0] && candidate <= w[1] {
            let span = w[1] - w[0];
            let mid = 0.5 * (w[0] + w[1]);
            return (span, (candidate - mid).abs());
        }
    }
    (0.0, 0.0)
}

/// One progressive training case.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainingCase {
    /// 1-based case number.
    pub index: usize,
    /// Factor whose level this case introduced.
    pub phase: StressFactor,
    /// Levels introduced by this case (two for the very first case).
    pub introduced_levels: Vec<f64>,
    /// Conditions whose cells are in training.
    pub included_conditions: Vec<CyclingConditions>,
    pub training_cells: Vec<String>,
    pub validation_cells: Vec<String>,
    pub targeted_validation_cells: Vec<String>,
    /// Training samples / total samples.
    pub data_fraction: f64,
}

/// Per-factor state while building the case ladder.
struct LevelState {
    levels: Vec<f64>,
    included: Vec<f64>,
    deferred: Vec<f64>,
}

/// Build the progressive case ladder for a dataset of statically cycled
/// cells. Phases follow [`PHASE_ORDER`]; within a phase levels follow
/// [`level_order`]. A level is deferred out of its phase when no cell
/// combines it with the already-included levels of the other factors, and
/// joins automatically once a later phase includes the blocking level.
pub fn build_cases(dataset: &Dataset) -> Result<Vec<TrainingCase>> {
    if dataset.cells.is_empty() {
        return Err(Error::invalid("cannot build cases from an empty dataset"));
    }
    let total_samples = dataset.total_samples();
    if total_samples == 0 {
        return Err(Error::invalid("dataset has no training samples"));
    }

    // Anchor condition: the levels co-occurring with the maximal DOD.
    let anchor = anchor_conditions(dataset)?;
    let mut states: Vec<LevelState> = PHASE_ORDER
        .iter()
        .enumerate()
        .map(|(p, &factor)| {
            let levels = dataset.levels(factor);
            let anchor_level = PHASE_ORDER[p].level_of(&anchor);
            LevelState {
                levels,
                included: vec![anchor_level],
                deferred: Vec::new(),
            }
        })
        .collect();

    let mut cases = Vec::new();
    let mut index = 0;
    let mut ladder_opened = false;

    for (p, &factor) in PHASE_ORDER.iter().enumerate() {
        // defer levels that cannot be reached with the other factors'
        // currently included levels
        let deferred: Vec<f64> = states[p]
            .levels
            .iter()
            .copied()
            .filter(|&level| {
                !contains_level(&states[p].included, level)
                    && !level_reachable(dataset, &states, p, level)
            })
            .collect();
        states[p].deferred = deferred.clone();

        let order = if ladder_opened {
            level_order(&states[p].levels, &states[p].included, &deferred)
        } else {
            // the ladder opens with both extremes of the first factor that
            // has any variation; its anchor level carries no special status
            let candidates: Vec<f64> = states[p]
                .levels
                .iter()
                .copied()
                .filter(|&l| !contains_level(&deferred, l))
                .collect();
            if candidates.len() < 2 {
                // single-level factor: nothing to learn in this phase
                continue;
            }
            states[p].included.clear();
            level_order(&states[p].levels, &[], &deferred)
        };
        if order.is_empty() {
            continue;
        }

        let mut queue = order.into_iter();
        if !ladder_opened {
            let first = queue.next().expect("nonempty order");
            let second = queue.next().expect("two candidates checked above");
            let introduced = vec![first, second];
            for &l in &introduced {
                states[p].included.push(l);
            }
            ladder_opened = true;
            index += 1;
            cases.push(make_case(
                dataset,
                index,
                factor,
                introduced,
                &mut states,
                total_samples,
            ));
        }
        for level in queue {
            states[p].included.push(level);
            index += 1;
            cases.push(make_case(
                dataset,
                index,
                factor,
                vec![level],
                &mut states,
                total_samples,
            ));
        }
    }

    Ok(cases)
}

/// Anchor condition levels: the combination explored first. The maximal DOD
/// pins it; the other factors take the modal level among maximal-DOD cells.
fn anchor_conditions(dataset: &Dataset) -> Result<CyclingConditions> {
    let dods = dataset.levels(StressFactor::Dod);
    let max_dod = *dods.last().ok_or_else(|| Error::invalid("no cells"))?;
    let at_max: Vec<&CellData> = dataset
        .cells
        .iter()
        .filter(|c| (c.conditions.dod - max_dod).abs() < LEVEL_EPS)
        .collect();
    let modal = |f: StressFactor| -> f64 {
        let levels = distinct_levels(at_max.iter().map(|c| f.level_of(&c.conditions)));
        let mut best = (0usize, levels[0]);
        for &l in &levels {
            let count = at_max
                .iter()
                .filter(|c| (f.level_of(&c.conditions) - l).abs() < LEVEL_EPS)
                .count();
            if count > best.0 {
                best = (count, l);
            }
        }
        best.1
    };
    Ok(CyclingConditions {
        temp_c: modal(StressFactor::Temperature),
        dod: max_dod,
        mid_soc: modal(StressFactor::MidSoc),
        c_chg: modal(StressFactor::ChargeRate),
        c_dchg: modal(StressFactor::DischargeRate),
    })
}

/// Whether some cell combines `level` of phase `p`'s factor with the
/// included levels of every other factor.
fn level_reachable(dataset: &Dataset, states: &[LevelState], p: usize, level: f64) -> bool {
    dataset.cells.iter().any(|cell| {
        (PHASE_ORDER[p].level_of(&cell.conditions) - level).abs() < LEVEL_EPS
            && PHASE_ORDER.iter().enumerate().all(|(q, factor)| {
                q == p || contains_level(&states[q].included, factor.level_of(&cell.conditions))
            })
    })
}

fn condition_included(states: &[LevelState], c: &CyclingConditions) -> bool {
    PHASE_ORDER
        .iter()
        .enumerate()
        .all(|(q, factor)| contains_level(&states[q].included, factor.level_of(c)))
}

fn make_case(
    dataset: &Dataset,
    index: usize,
    phase: StressFactor,
    introduced_levels: Vec<f64>,
    states: &mut [LevelState],
    total_samples: usize,
) -> TrainingCase {
    // closure pass: deferred levels of earlier factors join once a cell
    // combining them with the included levels exists
    loop {
        let mut changed = false;
        for p in 0..PHASE_ORDER.len() {
            let pending: Vec<f64> = states[p].deferred.clone();
            for level in pending {
                if level_reachable(dataset, states, p, level) {
                    states[p].included.push(level);
                    states[p]
                        .deferred
                        .retain(|&d| (d - level).abs() >= LEVEL_EPS);
                    changed = true;
                }
            }
        }
        if !changed {
            break;
        }
    }

    let mut included_conditions: Vec<CyclingConditions> = Vec::new();
    let mut training_cells = Vec::new();
    let mut validation_cells = Vec::new();
    let mut training_samples = 0usize;
    for cell in &dataset.cells {
        if condition_included(states, &cell.conditions) {
            training_cells.push(cell.cell_id.clone());
            training_samples += cell.samples.len();
            if !included_conditions
                .iter()
                .any(|c| conditions_equal(c, &cell.conditions))
            {
                included_conditions.push(cell.conditions);
            }
        } else {
            validation_cells.push(cell.cell_id.clone());
        }
    }

    let targeted = targeted_validation_cells(dataset, states, phase);

    TrainingCase {
        index,
        phase,
        introduced_levels,
        included_conditions,
        training_cells,
        validation_cells,
        targeted_validation_cells: targeted,
        data_fraction: training_samples as f64 / total_samples as f64,
    }
}

fn conditions_equal(a: &CyclingConditions, b: &CyclingConditions) -> bool {
    PHASE_ORDER
        .iter()
        .all(|f| (f.level_of(a) - f.level_of(b)).abs() < LEVEL_EPS)
}

/// Validation cells whose only deviation from the included conditions is an
/// unobserved level of the phase's factor: all other factors sit at
/// already-included levels. Empty when the phase's factor is fully
/// explored (the generalisation error cannot be evaluated there any more).
fn targeted_validation_cells(
    dataset: &Dataset,
    states: &[LevelState],
    phase: StressFactor,
) -> Vec<String> {
    let p = PHASE_ORDER.iter().position(|&f| f == phase).unwrap();
    dataset
        .cells
        .iter()
        .filter(|cell| {
            let level = phase.level_of(&cell.conditions);
            !contains_level(&states[p].included, level)
                && PHASE_ORDER.iter().enumerate().all(|(q, factor)| {
                    q == p || contains_level(&states[q].included, factor.level_of(&cell.conditions))
                })
        })
        .map(|c| c.cell_id.clone())
        .collect()
}

/// Re-derive a case's targeted validation set from a built ladder (for
/// reports; the sets are already stored on each case).
pub fn targeted_validation(case: &TrainingCase, dataset: &Dataset) -> Vec<String> {
    let ids: BTreeSet<&String> = case.targeted_validation_cells.iter().collect();
    dataset
        .cells
        .iter()
        .filter(|c| ids.contains(&c.cell_id))
        .map(|c| c.cell_id.clone())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::preprocess::{ConditionSpec, Provenance};

    fn mock_cell(id: &str, conditions: CyclingConditions, samples: usize) -> CellData {
        CellData {
            cell_id: id.to_string(),
            conditions,
            curve: CapacityCurve {
                cell_id: id.to_string(),
                conditions: ConditionSpec::Static { conditions },
                points: Vec::new(),
                provenance: Provenance::default(),
            },
            samples: vec![
                AgeingSample {
                    input: crate::ageing::to_input(&conditions, 4000.0).unwrap(),
                    target: -0.1,
                };
                samples
            ],
        }
    }

    /// Dataset mirroring the static test matrix, one cell per condition.
    fn grid_dataset() -> Dataset {
        let cells = crate::synth::test_matrix()
            .into_iter()
            .enumerate()
            .map(|(i, c)| mock_cell(&format!("CELL{:03}", i + 1), c, 10))
            .collect();
        Dataset { cells }
    }

    #[test]
    fn level_order_reproduces_the_dod_walkthrough() {
        let levels = [10.0, 20.0, 35.0, 50.0, 65.0, 80.0, 100.0];
        let order = level_order(&levels, &[100.0], &[10.0]);
        assert_eq!(order, vec![20.0, 65.0, 50.0, 80.0, 35.0]);
    }

    #[test]
    fn level_order_single_level() {
        assert_eq!(level_order(&[42.0], &[], &[]), vec![42.0]);
    }

    #[test]
    fn level_order_two_levels_highest_first() {
        assert_eq!(level_order(&[1.0, 2.0], &[], &[]), vec![2.0, 1.0]);
    }

    #[test]
    fn level_order_mid_soc_sequence() {
        // preincluded 50: highest 80, lowest 20, then 65 before 35
        let order = level_order(&[20.0, 35.0, 50.0, 65.0, 80.0], &[50.0], &[]);
        assert_eq!(order, vec![80.0, 20.0, 65.0, 35.0]);
    }

    #[test]
    fn level_order_charge_rate_sequence() {
        // C/3 preincluded (the anchor); highest 2C first, then midpoint 1C,
        // then C/2
        let c3 = 1.0 / 3.0;
        let order = level_order(&[c3, 0.5, 1.0, 2.0], &[c3], &[]);
        assert_eq!(order, vec![2.0, 1.0, 0.5]);
    }

    #[test]
    fn level_order_is_permutation_and_deterministic() {
        let levels = [10.0, 20.0, 35.0, 50.0, 65.0, 80.0, 100.0];
        let a = level_order(&levels, &[], &[]);
        let b = level_order(&levels, &[], &[]);
        assert_eq!(a, b);
        let mut sorted = a.clone();
        sorted.sort_by(|x, y| x.partial_cmp(y).unwrap());
        assert_eq!(sorted, levels);
    }

    #[test]
    fn build_cases_yields_sixteen_nested_cases() {
        let dataset = grid_dataset();
        let cases = build_cases(&dataset).unwrap();
        assert_eq!(cases.len(), 16);

        // nested inclusion and non-decreasing data fraction
        for w in cases.windows(2) {
            for cond in &w[0].included_conditions {
                assert!(
                    w[1].included_conditions
                        .iter()
                        .any(|c| conditions_equal(c, cond)),
                    "case {} not nested in case {}",
                    w[0].index,
                    w[1].index
                );
            }
            assert!(w[1].data_fraction >= w[0].data_fraction - 1e-12);
        }
        assert!((cases[15].data_fraction - 1.0).abs() < 1e-12);

        // every cell is exactly one of training/validation
        let n = dataset.cells.len();
        for case in &cases {
            assert_eq!(case.training_cells.len() + case.validation_cells.len(), n);
            for t in &case.targeted_validation_cells {
                assert!(case.validation_cells.contains(t));
            }
        }
    }

    #[test]
    fn case_one_covers_the_temperature_extremes_at_full_dod() {
        let cases = build_cases(&grid_dataset()).unwrap();
        let case1 = &cases[0];
        assert_eq!(case1.phase, StressFactor::Temperature);
        assert_eq!(case1.introduced_levels, vec![45.0, 25.0]);
        // training conditions: {25, 45} x 100% DOD only
        assert_eq!(case1.included_conditions.len(), 2);
        for c in &case1.included_conditions {
            assert_eq!(c.dod, 100.0);
            assert!(c.temp_c == 25.0 || c.temp_c == 45.0);
            assert_eq!(c.mid_soc, 50.0);
        }
    }

    #[test]
    fn case_two_adds_the_middle_temperature() {
        let cases = build_cases(&grid_dataset()).unwrap();
        assert_eq!(cases[1].phase, StressFactor::Temperature);
        assert_eq!(cases[1].introduced_levels, vec![35.0]);
        assert_eq!(cases[1].included_conditions.len(), 3);
    }

    #[test]
    fn dod_phase_follows_the_walkthrough_order() {
        let cases = build_cases(&grid_dataset()).unwrap();
        let dod_cases: Vec<&TrainingCase> = cases
            .iter()
            .filter(|c| c.phase == StressFactor::Dod)
            .collect();
        let introduced: Vec<f64> = dod_cases
            .iter()
            .flat_map(|c| c.introduced_levels.clone())
            .collect();
        assert_eq!(introduced, vec![20.0, 65.0, 50.0, 80.0, 35.0]);
        // cases 3..=7
        assert_eq!(dod_cases[0].index, 3);
        assert_eq!(dod_cases[4].index, 7);
    }

    #[test]
    fn case_four_includes_three_dods_across_three_temperatures() {
        let cases = build_cases(&grid_dataset()).unwrap();
        let case4 = &cases[3];
        assert_eq!(case4.index, 4);
        let dods = distinct_levels(case4.included_conditions.iter().map(|c| c.dod));
        assert_eq!(dods, vec![20.0, 65.0, 100.0]);
        let temps = distinct_levels(case4.included_conditions.iter().map(|c| c.temp_c));
        assert_eq!(temps, vec![25.0, 35.0, 45.0]);
    }

    #[test]
    fn case_four_targets_the_remaining_dod_levels() {
        let dataset = grid_dataset();
        let cases = build_cases(&dataset).unwrap();
        let case4 = &cases[3];
        let by_id = |id: &String| {
            dataset
                .cells
                .iter()
                .find(|c| &c.cell_id == id)
                .unwrap()
                .conditions
        };
        assert!(!case4.targeted_validation_cells.is_empty());
        for id in &case4.targeted_validation_cells {
            let c = by_id(id);
            assert!(
                c.dod == 50.0 || c.dod == 80.0 || c.dod == 35.0,
                "dod {}",
                c.dod
            );
            assert_eq!(c.mid_soc, 50.0);
            assert_eq!(c.c_dchg, 1.0);
            assert!((c.c_chg - 1.0 / 3.0).abs() < 1e-9);
        }
    }

    #[test]
    fn case_seven_targeted_set_is_empty() {
        let cases = build_cases(&grid_dataset()).unwrap();
        let case7 = &cases[6];
        assert_eq!(case7.index, 7);
        assert_eq!(case7.phase, StressFactor::Dod);
        // the only unobserved DOD (10%) never coexists with mid-SOC 50
        assert!(case7.targeted_validation_cells.is_empty());
    }

    #[test]
    fn deferred_dod_joins_during_the_mid_soc_phase() {
        let cases = build_cases(&grid_dataset()).unwrap();
        // before the mid-SOC phase no 10% DOD condition is included
        let case7 = &cases[6];
        assert!(!case7.included_conditions.iter().any(|c| c.dod == 10.0));
        // the first mid-SOC case (index 8, level 80) pulls in the 10% DOD
        // cells tested at mid-SOC 80
        let case8 = &cases[7];
        assert_eq!(case8.phase, StressFactor::MidSoc);
        assert_eq!(case8.introduced_levels, vec![80.0]);
        assert!(case8.included_conditions.iter().any(|c| c.dod == 10.0));
    }

    #[test]
    fn phase_case_counts_match_the_ladder() {
        let cases = build_cases(&grid_dataset()).unwrap();
        let count = |f: StressFactor| cases.iter().filter(|c| c.phase == f).count();
        assert_eq!(count(StressFactor::Temperature), 2);
        assert_eq!(count(StressFactor::Dod), 5);
        assert_eq!(count(StressFactor::MidSoc), 4);
        assert_eq!(count(StressFactor::ChargeRate), 3);
        assert_eq!(count(StressFactor::DischargeRate), 2);
    }

    #[test]
    fn missing_phase_dimension_is_skipped() {
        // dataset with a single temperature everywhere: the temperature
        // phase cannot introduce anything beyond the anchor
        let c3 = 1.0 / 3.0;
        let cells = vec![
            mock_cell(
                "A",
                CyclingConditions::new(35.0, 100.0, 50.0, c3, 1.0).unwrap(),
                5,
            ),
            mock_cell(
                "B",
                CyclingConditions::new(35.0, 80.0, 50.0, c3, 1.0).unwrap(),
                5,
            ),
            mock_cell(
                "C",
                CyclingConditions::new(35.0, 20.0, 50.0, c3, 1.0).unwrap(),
                5,
            ),
        ];
        let cases = build_cases(&Dataset { cells }).unwrap();
        assert!(cases.iter().all(|c| c.phase == StressFactor::Dod));
        assert_eq!(cases.len(), 2); // 80 and 20 introduced (100 is anchor)
    }
}
