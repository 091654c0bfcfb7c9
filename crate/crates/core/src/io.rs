//! File formats: raw and processed cell CSVs, schedules, forecasts and
//! evaluation reports. CSV dialect: comma separated, '.' decimal, UTF-8,
//! one header row. Lines starting with '#' are comments and are skipped on
//! read, so emitted files may carry a provenance header block.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::ageing::{ConditionSchedule, CyclingConditions, ScheduleSegment};
use crate::error::{Error, Result};
use crate::metrics::EvaluationReport;
use crate::preprocess::{CapacityCurve, ConditionSpec, Provenance, RawCapacitySeries};

#[derive(Debug, Serialize, Deserialize)]
struct RawRow {
    cell_id: String,
    // aliases let already-processed curves be re-read as raw input, which
    // makes the preprocessing pipeline idempotent on its own output
    #[serde(alias = "ah_since_bol")]
    ah_throughput: f64,
    #[serde(alias = "q_norm")]
    capacity_ah: f64,
    temp_c: f64,
    dod_pct: f64,
    mid_soc_pct: f64,
    c_chg: f64,
    c_dchg: f64,
}

fn conditions_of_row(r: &RawRow) -> CyclingConditions {
    CyclingConditions {
        temp_c: r.temp_c,
        dod: r.dod_pct,
        mid_soc: r.mid_soc_pct,
        c_chg: r.c_chg,
        c_dchg: r.c_dchg,
    }
}

fn reader(path: &Path) -> Result<csv::Reader<std::fs::File>> {
    Ok(csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(path)?)
}

/// Write one cell's raw series. Each row repeats the conditions of the
/// interval that starts at it (for static cells every row is identical).
pub fn write_raw_series(path: &Path, series: &RawCapacitySeries, header: &[String]) -> Result<()> {
    let mut file = std::fs::File::create(path)?;
    for line in header {
        writeln!(file, "# {line}")?;
    }
    let mut w = csv::Writer::from_writer(file);
    for &(ah, cap) in &series.points {
        let conditions = match &series.conditions {
            ConditionSpec::Static { conditions } => *conditions,
            ConditionSpec::Dynamic { schedule } => *schedule
                .conditions_at(ah)
                .or_else(|| schedule.segments.last().map(|s| &s.conditions))
                .ok_or_else(|| Error::invalid("empty schedule"))?,
        };
        w.serialize(RawRow {
            cell_id: series.cell_id.clone(),
            ah_throughput: ah,
            capacity_ah: cap,
            temp_c: conditions.temp_c,
            dod_pct: conditions.dod,
            mid_soc_pct: conditions.mid_soc,
            c_chg: conditions.c_chg,
            c_dchg: conditions.c_dchg,
        })?;
    }
    w.flush()?;
    Ok(())
}

/// Read one or more cells from a raw CSV (long format: rows of different
/// cells may share a file).
pub fn read_raw_series(path: &Path) -> Result<Vec<RawCapacitySeries>> {
    let mut rows_by_cell: Vec<(String, Vec<RawRow>)> = Vec::new();
    for record in reader(path)?.deserialize() {
        let row: RawRow = record?;
        match rows_by_cell.iter_mut().find(|(id, _)| *id == row.cell_id) {
            Some((_, rows)) => rows.push(row),
            None => rows_by_cell.push((row.cell_id.clone(), vec![row])),
        }
    }
    if rows_by_cell.is_empty() {
        return Err(Error::MalformedData(format!(
            "{}: no data rows",
            path.display()
        )));
    }

    let mut out = Vec::new();
    for (cell_id, rows) in rows_by_cell {
        let first = conditions_of_row(&rows[0]);
        let is_static = rows.iter().all(|r| conditions_of_row(r) == first);
        let conditions = if is_static {
            ConditionSpec::Static { conditions: first }
        } else {
            // row i's conditions cover [ah_i, ah_{i+1})
            let mut segments = Vec::new();
            for pair in rows.windows(2) {
                segments.push(ScheduleSegment {
                    ah_span: pair[1].ah_throughput - pair[0].ah_throughput,
                    conditions: conditions_of_row(&pair[0]),
                });
            }
            if rows[0].ah_throughput > 0.0 {
                segments.insert(
                    0,
                    ScheduleSegment {
                        ah_span: rows[0].ah_throughput,
                        conditions: first,
                    },
                );
            }
            ConditionSpec::Dynamic {
                schedule: ConditionSchedule::new(segments)?,
            }
        };
        let series = RawCapacitySeries {
            cell_id,
            conditions,
            points: rows
                .iter()
                .map(|r| (r.ah_throughput, r.capacity_ah))
                .collect(),
        };
        series.validate()?;
        out.push(series);
    }
    Ok(out)
}

#[derive(Debug, Serialize, Deserialize)]
struct CurveRow {
    cell_id: String,
    ah_since_bol: f64,
    q_norm: f64,
    temp_c: f64,
    dod_pct: f64,
    mid_soc_pct: f64,
    c_chg: f64,
    c_dchg: f64,
}

/// Write a processed curve with its conditions, so the file alone suffices
/// for windowing and evaluation.
pub fn write_curve(path: &Path, curve: &CapacityCurve, header: &[String]) -> Result<()> {
    let mut file = std::fs::File::create(path)?;
    for line in header {
        writeln!(file, "# {line}")?;
    }
    let mut w = csv::Writer::from_writer(file);
    for p in &curve.points {
        let conditions = match &curve.conditions {
            ConditionSpec::Static { conditions } => *conditions,
            ConditionSpec::Dynamic { schedule } => *schedule
                .conditions_at(p.ah)
                .or_else(|| schedule.segments.last().map(|s| &s.conditions))
                .ok_or_else(|| Error::invalid("empty schedule"))?,
        };
        w.serialize(CurveRow {
            cell_id: curve.cell_id.clone(),
            ah_since_bol: p.ah,
            q_norm: p.q_norm,
            temp_c: conditions.temp_c,
            dod_pct: conditions.dod,
            mid_soc_pct: conditions.mid_soc,
            c_chg: conditions.c_chg,
            c_dchg: conditions.c_dchg,
        })?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_curves(path: &Path) -> Result<Vec<CapacityCurve>> {
    let mut rows_by_cell: Vec<(String, Vec<CurveRow>)> = Vec::new();
    for record in reader(path)?.deserialize() {
        let row: CurveRow = record?;
        match rows_by_cell.iter_mut().find(|(id, _)| *id == row.cell_id) {
            Some((_, rows)) => rows.push(row),
            None => rows_by_cell.push((row.cell_id.clone(), vec![row])),
        }
    }
    let mut out = Vec::new();
    for (cell_id, rows) in rows_by_cell {
        let first = CyclingConditions {
            temp_c: rows[0].temp_c,
            dod: rows[0].dod_pct,
            mid_soc: rows[0].mid_soc_pct,
            c_chg: rows[0].c_chg,
            c_dchg: rows[0].c_dchg,
        };
        let all_static = rows.iter().all(|r| {
            r.temp_c == first.temp_c
                && r.dod_pct == first.dod
                && r.mid_soc_pct == first.mid_soc
                && r.c_chg == first.c_chg
                && r.c_dchg == first.c_dchg
        });
        let conditions = if all_static {
            ConditionSpec::Static { conditions: first }
        } else {
            let mut segments = Vec::new();
            for pair in rows.windows(2) {
                segments.push(ScheduleSegment {
                    ah_span: pair[1].ah_since_bol - pair[0].ah_since_bol,
                    conditions: CyclingConditions {
                        temp_c: pair[0].temp_c,
                        dod: pair[0].dod_pct,
                        mid_soc: pair[0].mid_soc_pct,
                        c_chg: pair[0].c_chg,
                        c_dchg: pair[0].c_dchg,
                    },
                });
            }
            ConditionSpec::Dynamic {
                schedule: ConditionSchedule::new(segments)?,
            }
        };
        out.push(CapacityCurve {
            cell_id,
            conditions,
            points: rows
                .iter()
                .enumerate()
                .map(|(i, r)| crate::preprocess::CurvePoint {
                    ah: r.ah_since_bol,
                    q_norm: r.q_norm,
                    source_index: i,
                })
                .collect(),
            provenance: Provenance {
                original_points: rows.len(),
                ..Default::default()
            },
        });
    }
    Ok(out)
}

pub fn write_provenance(path: &Path, provenance: &Provenance) -> Result<()> {
    let file = std::fs::File::create(path)?;
    serde_json::to_writer_pretty(std::io::BufWriter::new(file), provenance)?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let file = std::fs::File::create(path)?;
    serde_json::to_writer_pretty(std::io::BufWriter::new(file), value)?;
    Ok(())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let file = std::fs::File::open(path)?;
    Ok(serde_json::from_reader(std::io::BufReader::new(file))?)
}

#[derive(Debug, Serialize, Deserialize)]
struct ScheduleRow {
    ah_span: f64,
    temp_c: f64,
    dod_pct: f64,
    mid_soc_pct: f64,
    c_chg: f64,
    c_dchg: f64,
}

/// Schedule as CSV: one segment per row.
pub fn read_schedule_csv(path: &Path) -> Result<ConditionSchedule> {
    let mut segments = Vec::new();
    for record in reader(path)?.deserialize() {
        let row: ScheduleRow = record?;
        segments.push(ScheduleSegment {
            ah_span: row.ah_span,
            conditions: CyclingConditions {
                temp_c: row.temp_c,
                dod: row.dod_pct,
                mid_soc: row.mid_soc_pct,
                c_chg: row.c_chg,
                c_dchg: row.c_dchg,
            },
        });
    }
    ConditionSchedule::new(segments)
}

/// Forecast CSV: throughput, mean, sigma and the 2-sigma band.
pub fn write_forecast(
    path: &Path,
    forecast: &crate::ageing::CapacityForecast,
    header: &[String],
) -> Result<()> {
    let mut file = std::fs::File::create(path)?;
    for line in header {
        writeln!(file, "# {line}")?;
    }
    let mut w = csv::Writer::from_writer(file);
    w.write_record(["ah", "q_mean", "q_sigma", "lower_2sigma", "upper_2sigma"])?;
    for p in &forecast.points {
        w.write_record(&[
            p.ah.to_string(),
            p.q_mean.to_string(),
            p.q_sigma.to_string(),
            (p.q_mean - 2.0 * p.q_sigma).to_string(),
            (p.q_mean + 2.0 * p.q_sigma).to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Evaluation reports as CSV rows: one row per (case, group).
pub fn write_report_csv(
    path: &Path,
    rows: &[(usize, EvaluationReport)],
    header: &[String],
) -> Result<()> {
    let mut file = std::fs::File::create(path)?;
    for line in header {
        writeln!(file, "# {line}")?;
    }
    let mut w = csv::Writer::from_writer(file);
    w.write_record([
        "case", "group", "n_cells", "mae_dq", "rmse_dq", "cs2_dq", "mae_q", "rmse_q", "cs2_q",
    ])?;
    for (case, r) in rows {
        w.write_record(&[
            case.to_string(),
            r.group.label().to_string(),
            r.n_cells.to_string(),
            r.mae_dq.to_string(),
            r.rmse_dq.to_string(),
            r.cs2_dq.to_string(),
            r.mae_q.to_string(),
            r.rmse_q.to_string(),
            r.cs2_q.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
