//! Subcommand implementations. Each command is deterministic for a fixed
//! config and seed, and stamps its outputs with the config hash.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use serde::Serialize;

use cyclegp_core::ageing::{self, ConditionSchedule, CyclingConditions};
use cyclegp_core::curriculum::{self, Dataset, StressFactor, PHASE_ORDER};
use cyclegp_core::gp::TrainedModel;
use cyclegp_core::kernel::{self, STRESS_NAMES};
use cyclegp_core::preprocess::{self, ConditionSpec, RawCapacitySeries};
use cyclegp_core::{io, metrics, pipeline, synth};

use crate::config::ExperimentConfig;

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

#[derive(Serialize)]
struct Stamped<T: Serialize> {
    artifact_version: String,
    config_sha256: String,
    #[serde(flatten)]
    payload: T,
}

fn stamped<T: Serialize>(config: &ExperimentConfig, payload: T) -> Stamped<T> {
    Stamped {
        artifact_version: cyclegp_core::ARTIFACT_VERSION.to_string(),
        config_sha256: config.hash(),
        payload,
    }
}

/// Collect raw series from a file or from every `*.csv` in a directory.
fn load_raw(input: &Path) -> Result<Vec<RawCapacitySeries>> {
    let mut series = Vec::new();
    if input.is_dir() {
        let mut paths: Vec<PathBuf> = std::fs::read_dir(input)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|e| e == "csv"))
            .collect();
        paths.sort();
        if paths.is_empty() {
            bail!("no .csv files under {}", input.display());
        }
        for p in paths {
            series.extend(io::read_raw_series(&p)?);
        }
    } else {
        series.extend(io::read_raw_series(input)?);
    }
    series.sort_by(|a, b| a.cell_id.cmp(&b.cell_id));
    Ok(series)
}

fn load_curves(input: &Path) -> Result<Vec<cyclegp_core::preprocess::CapacityCurve>> {
    let mut curves = Vec::new();
    if input.is_dir() {
        let mut paths: Vec<PathBuf> = std::fs::read_dir(input)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|e| e == "csv"))
            .collect();
        paths.sort();
        if paths.is_empty() {
            bail!("no .csv files under {}", input.display());
        }
        for p in paths {
            curves.extend(io::read_curves(&p)?);
        }
    } else {
        curves.extend(io::read_curves(input)?);
    }
    curves.sort_by(|a, b| a.cell_id.cmp(&b.cell_id));
    Ok(curves)
}

/// Rebuild a curriculum dataset from processed curves (static cells only).
fn dataset_from_curves(
    curves: Vec<cyclegp_core::preprocess::CapacityCurve>,
    max_lag: usize,
) -> Result<Dataset> {
    let mut cells = Vec::new();
    for curve in curves {
        let conditions = *curve
            .conditions
            .as_static()
            .ok_or_else(|| anyhow!("cell {} has a dynamic profile", curve.cell_id))?;
        let samples = preprocess::windowize(&curve, &conditions, max_lag)?;
        cells.push(curriculum::CellData {
            cell_id: curve.cell_id.clone(),
            conditions,
            curve,
            samples,
        });
    }
    Ok(Dataset { cells })
}

// ---------------------------------------------------------------------------

pub fn cmd_synth(config: &ExperimentConfig) -> Result<()> {
    let out = &config.out_dir;
    let cells_dir = out.join("cells");
    let truth_dir = out.join("truth");
    ensure_dir(&cells_dir)?;
    ensure_dir(&truth_dir)?;

    let corpus = synth::generate_grid_corpus(
        &config.synth.params,
        config.synth.cells_per_condition,
        config.synth.horizon_ah,
    )?;
    let header = config.header("synth");
    let mut ids = Vec::new();
    for (series, truth) in &corpus {
        io::write_raw_series(
            &cells_dir.join(format!("{}.csv", series.cell_id)),
            series,
            &header,
        )?;
        io::write_json(&truth_dir.join(format!("{}.json", series.cell_id)), truth)?;
        ids.push(series.cell_id.clone());
    }

    #[derive(Serialize)]
    struct Manifest {
        cells: Vec<String>,
        conditions: usize,
        horizon_ah: f64,
    }
    io::write_json(
        &out.join("synth_manifest.json"),
        &stamped(
            config,
            Manifest {
                conditions: synth::test_matrix().len(),
                horizon_ah: config.synth.horizon_ah,
                cells: ids,
            },
        ),
    )?;
    println!("wrote {} cells under {}", corpus.len(), cells_dir.display());
    Ok(())
}

pub fn cmd_preprocess(config: &ExperimentConfig, input: &Path) -> Result<()> {
    let out = config.out_dir.join("processed");
    ensure_dir(&out)?;
    let series = load_raw(input)?;
    let header = config.header("preprocess");

    #[derive(Serialize)]
    struct CellSummary {
        cell_id: String,
        retained_fraction: f64,
        dropped: usize,
        flagged: usize,
    }
    let mut summaries = Vec::new();
    for s in &series {
        let curve = preprocess::preprocess_series(s, &config.preprocess)?;
        io::write_curve(&out.join(format!("{}.csv", curve.cell_id)), &curve, &header)?;
        io::write_provenance(
            &out.join(format!("{}.provenance.json", curve.cell_id)),
            &curve.provenance,
        )?;
        summaries.push(CellSummary {
            cell_id: curve.cell_id.clone(),
            retained_fraction: curve.provenance.retained_fraction(),
            dropped: curve.provenance.dropped.len(),
            flagged: curve.provenance.flagged.len(),
        });
    }

    #[derive(Serialize)]
    struct Summary {
        cells: Vec<CellSummary>,
        mean_retained_fraction: f64,
    }
    let mean =
        summaries.iter().map(|c| c.retained_fraction).sum::<f64>() / summaries.len().max(1) as f64;
    io::write_json(
        &config.out_dir.join("preprocess_summary.json"),
        &stamped(
            config,
            Summary {
                mean_retained_fraction: mean,
                cells: summaries,
            },
        ),
    )?;
    println!(
        "processed {} cells into {} (mean retained fraction {:.1}%)",
        series.len(),
        out.display(),
        100.0 * mean
    );
    Ok(())
}

#[derive(Serialize)]
struct TrainSummary {
    n_samples: usize,
    lml: f64,
    hyperparameters: cyclegp_core::kernel::Hyperparameters,
    frozen_dimensions: Vec<String>,
    restarts: Vec<RestartSummary>,
}

#[derive(Serialize)]
struct RestartSummary {
    restart: usize,
    lml: f64,
    iterations: usize,
    converged: bool,
    failure: Option<String>,
}

fn train_summary(
    outcome: &cyclegp_core::optimizer::OptimizeOutcome,
    n_samples: usize,
) -> TrainSummary {
    TrainSummary {
        n_samples,
        lml: outcome.lml,
        hyperparameters: outcome.hyperparameters.clone(),
        frozen_dimensions: (0..kernel::STRESS_DIMS)
            .filter(|&n| outcome.hyperparameters.frozen[n])
            .map(|n| STRESS_NAMES[n].to_string())
            .collect(),
        restarts: outcome
            .diagnostics
            .iter()
            .map(|d| RestartSummary {
                restart: d.restart,
                lml: d.lml,
                iterations: d.iterations,
                converged: d.converged,
                failure: d.failure.clone(),
            })
            .collect(),
    }
}

pub fn cmd_train(config: &ExperimentConfig, input: &Path, model_out: Option<&Path>) -> Result<()> {
    let dataset = dataset_from_curves(load_curves(input)?, config.max_lag)?;
    let samples: Vec<_> = dataset
        .cells
        .iter()
        .flat_map(|c| c.samples.iter().cloned())
        .collect();
    let (model, outcome) = pipeline::train_on_samples(&samples, &config.optimizer)?;

    ensure_dir(&config.out_dir)?;
    let model_path = model_out
        .map(Path::to_path_buf)
        .unwrap_or_else(|| config.out_dir.join("model.json"));
    model.save(&model_path)?;
    io::write_json(
        &config.out_dir.join("train_summary.json"),
        &stamped(config, train_summary(&outcome, samples.len())),
    )?;
    println!(
        "trained on {} samples from {} cells; lml {:.3}; model at {}",
        samples.len(),
        dataset.cells.len(),
        outcome.lml,
        model_path.display()
    );
    Ok(())
}

pub fn cmd_curriculum(config: &ExperimentConfig, input: &Path) -> Result<()> {
    let dataset = dataset_from_curves(load_curves(input)?, config.max_lag)?;
    let cases = curriculum::build_cases(&dataset)?;
    let out = &config.out_dir;
    ensure_dir(out)?;
    let models_dir = out.join("models");
    ensure_dir(&models_dir)?;

    let eval_options = metrics::EvaluateOptions {
        step_ah: config.rollout.step_ah,
        variance_mode: config.rollout.variance_mode,
    };

    let mut report_rows = Vec::new();
    let mut sensitivity_rows = Vec::new();
    for case in &cases {
        io::write_json(
            &out.join(format!("case{:02}.json", case.index)),
            &stamped(config, case.clone()),
        )?;
        let mut opt = config.optimizer.clone();
        opt.seed = config.seed.wrapping_add(case.index as u64);
        let (model, outcome) = pipeline::train_case(&dataset, case, &opt)?;
        model.save(&models_dir.join(format!("model_case{:02}.json", case.index)))?;
        io::write_json(
            &out.join(format!("train_case{:02}.json", case.index)),
            &stamped(config, train_summary(&outcome, model.len())),
        )?;

        for report in metrics::evaluate_case(&model, case, &dataset, &eval_options)? {
            report_rows.push((case.index, report));
        }
        let ranges = kernel::observed_ranges(model.inputs());
        match kernel::relevance(model.hyperparameters(), &ranges) {
            Ok(weights) => sensitivity_rows.push((case.index, weights)),
            Err(cyclegp_core::Error::EmptyRelevance) => {
                sensitivity_rows.push((case.index, [0.0; kernel::STRESS_DIMS]))
            }
            Err(e) => return Err(e.into()),
        }
        let targeted_note = if case.targeted_validation_cells.is_empty() {
            " (targeted group empty: factor fully explored)"
        } else {
            ""
        };
        println!(
            "case {:02}: {} training cells, fraction {:.2}%{}",
            case.index,
            case.training_cells.len(),
            100.0 * case.data_fraction,
            targeted_note
        );
    }

    let header = config.header("curriculum");
    io::write_report_csv(&out.join("report.csv"), &report_rows, &header)?;
    io::write_json(
        &out.join("report.json"),
        &stamped(
            config,
            serde_json::json!({
                "rows": report_rows
                    .iter()
                    .map(|(case, r)| serde_json::json!({ "case": case, "report": r }))
                    .collect::<Vec<_>>()
            }),
        ),
    )?;
    write_accuracy_curves(&out.join("accuracy_curves.csv"), &report_rows, &header)?;
    write_sensitivity_csv(&out.join("sensitivity.csv"), &sensitivity_rows, &header)?;
    println!("wrote {} case reports under {}", cases.len(), out.display());
    Ok(())
}

/// Per-case accuracy curves (the report restricted to the error columns),
/// one row per case and group.
fn write_accuracy_curves(
    path: &Path,
    rows: &[(usize, metrics::EvaluationReport)],
    header: &[String],
) -> Result<()> {
    let mut file = std::fs::File::create(path)?;
    use std::io::Write;
    for line in header {
        writeln!(file, "# {line}")?;
    }
    let mut w = csv::Writer::from_writer(file);
    w.write_record(["case", "group", "mae_dq", "mae_q", "cs2_dq", "cs2_q"])?;
    for (case, r) in rows {
        w.write_record(&[
            case.to_string(),
            r.group.label().to_string(),
            r.mae_dq.to_string(),
            r.mae_q.to_string(),
            r.cs2_dq.to_string(),
            r.cs2_q.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn write_sensitivity_csv(
    path: &Path,
    rows: &[(usize, [f64; kernel::STRESS_DIMS])],
    header: &[String],
) -> Result<()> {
    let mut file = std::fs::File::create(path)?;
    use std::io::Write;
    for line in header {
        writeln!(file, "# {line}")?;
    }
    let mut w = csv::Writer::from_writer(file);
    let mut record = vec!["case".to_string()];
    record.extend(STRESS_NAMES.iter().map(|s| s.to_string()));
    w.write_record(&record)?;
    for (case, weights) in rows {
        let mut record = vec![case.to_string()];
        record.extend(weights.iter().map(|v| v.to_string()));
        w.write_record(&record)?;
    }
    w.flush()?;
    Ok(())
}

pub fn cmd_sensitivity(config: &ExperimentConfig, models: &[PathBuf], out: &Path) -> Result<()> {
    if models.is_empty() {
        bail!("no model files given");
    }
    let mut rows = Vec::new();
    for (i, path) in models.iter().enumerate() {
        let model = TrainedModel::load(path)?;
        let ranges = kernel::observed_ranges(model.inputs());
        let weights = match kernel::relevance(model.hyperparameters(), &ranges) {
            Ok(w) => w,
            Err(cyclegp_core::Error::EmptyRelevance) => [0.0; kernel::STRESS_DIMS],
            Err(e) => return Err(e.into()),
        };
        rows.push((i + 1, weights));
    }
    if let Some(parent) = out.parent() {
        if !parent.as_os_str().is_empty() {
            ensure_dir(parent)?;
        }
    }
    write_sensitivity_csv(out, &rows, &config.header("sensitivity"))?;
    println!(
        "wrote relevance table for {} models to {}",
        rows.len(),
        out.display()
    );
    Ok(())
}

pub struct SweepArgs {
    pub model: PathBuf,
    pub dimension: String,
    pub grid: Option<String>,
    pub fixed: Vec<String>,
    pub delta_ah: f64,
    pub out: PathBuf,
}

pub fn cmd_sweep(config: &ExperimentConfig, args: &SweepArgs) -> Result<()> {
    let model = TrainedModel::load(&args.model)?;
    let factor = parse_factor(&args.dimension)?;

    // defaults follow the standard probing conditions
    let mut conditions = CyclingConditions {
        temp_c: 35.0,
        dod: 80.0,
        mid_soc: 50.0,
        c_chg: 1.0 / 3.0,
        c_dchg: 1.0,
    };
    for spec in &args.fixed {
        let (key, value) = spec
            .split_once('=')
            .ok_or_else(|| anyhow!("--fixed expects key=value, got {spec}"))?;
        let value: f64 = value.parse().with_context(|| format!("parsing {spec}"))?;
        match parse_factor(key)? {
            StressFactor::Temperature => conditions.temp_c = value,
            StressFactor::Dod => conditions.dod = value,
            StressFactor::MidSoc => conditions.mid_soc = value,
            StressFactor::ChargeRate => conditions.c_chg = value,
            StressFactor::DischargeRate => conditions.c_dchg = value,
        }
    }

    let (lo, hi, step) = match &args.grid {
        Some(g) => {
            let parts: Vec<&str> = g.split(':').collect();
            if parts.len() != 3 {
                bail!("--grid expects lo:hi:step");
            }
            (parts[0].parse()?, parts[1].parse()?, parts[2].parse()?)
        }
        None => default_grid(factor),
    };
    if step <= 0.0 || hi <= lo {
        bail!("grid must have lo < hi and step > 0");
    }

    let mut file = std::fs::File::create(&args.out)?;
    use std::io::Write;
    for line in config.header("sweep") {
        writeln!(file, "# {line}")?;
    }
    let mut w = csv::Writer::from_writer(file);
    w.write_record([args.dimension.as_str(), "sigma_latent", "sigma_observation"])?;
    let noise_var = model.hyperparameters().noise_var;
    let mut value = lo;
    while value <= hi + 1e-9 {
        let mut c = conditions;
        match factor {
            StressFactor::Temperature => c.temp_c = value,
            StressFactor::Dod => c.dod = value,
            StressFactor::MidSoc => c.mid_soc = value,
            StressFactor::ChargeRate => c.c_chg = value,
            StressFactor::DischargeRate => c.c_dchg = value,
        }
        let x = ageing::to_input(&c, args.delta_ah)?;
        let pred = model.predict(&[x], false)?;
        w.write_record(&[
            value.to_string(),
            pred.variance[0].sqrt().to_string(),
            (pred.variance[0] + noise_var).sqrt().to_string(),
        ])?;
        value += step;
    }
    w.flush()?;
    println!(
        "wrote sigma sweep over {} to {}",
        args.dimension,
        args.out.display()
    );
    Ok(())
}

fn parse_factor(name: &str) -> Result<StressFactor> {
    PHASE_ORDER
        .iter()
        .copied()
        .find(|f| f.name() == name || (name == "temp_c" && *f == StressFactor::Temperature))
        .ok_or_else(|| {
            anyhow!(
                "unknown dimension {name}; expected one of {}",
                PHASE_ORDER.map(|f| f.name()).join(", ")
            )
        })
}

fn default_grid(factor: StressFactor) -> (f64, f64, f64) {
    match factor {
        StressFactor::Temperature => (-5.0, 55.0, 1.0),
        StressFactor::Dod => (2.5, 100.0, 2.5),
        StressFactor::MidSoc => (0.0, 100.0, 2.5),
        StressFactor::ChargeRate => (0.1, 2.5, 0.05),
        StressFactor::DischargeRate => (0.1, 2.5, 0.05),
    }
}

pub struct PredictArgs {
    pub model: PathBuf,
    pub schedule: Option<PathBuf>,
    pub cell: Option<PathBuf>,
    pub horizon_ah: Option<f64>,
    pub update_at: Option<f64>,
    pub svg: bool,
}

pub fn cmd_predict(config: &ExperimentConfig, args: &PredictArgs) -> Result<()> {
    let model = TrainedModel::load(&args.model)?;
    ensure_dir(&config.out_dir)?;
    let header = config.header("predict");

    // measured cell (required for --update-at), else schedule file
    let (schedule, curve) = match (&args.cell, &args.schedule) {
        (Some(cell_path), _) => {
            let series = load_raw(cell_path)?;
            let series = series
                .first()
                .ok_or_else(|| anyhow!("no cell in {}", cell_path.display()))?;
            let curve = preprocess::preprocess_series(series, &config.preprocess)?;
            let schedule = match &curve.conditions {
                ConditionSpec::Static { conditions } => {
                    ConditionSchedule::from_static(*conditions, f64::MAX)?
                }
                ConditionSpec::Dynamic { schedule } => schedule.clone(),
            };
            (schedule, Some(curve))
        }
        (None, Some(schedule_path)) => {
            let schedule = if schedule_path.extension().is_some_and(|e| e == "csv") {
                io::read_schedule_csv(schedule_path)?
            } else {
                let schedule: ConditionSchedule = io::read_json(schedule_path)?;
                schedule.validate()?;
                schedule
            };
            (schedule, None)
        }
        (None, None) => bail!("predict needs --schedule or --cell"),
    };

    let horizon = match args.horizon_ah {
        Some(h) => h,
        None => match &curve {
            Some(c) => c.points.last().map(|p| p.ah).unwrap_or(0.0),
            None => schedule.total_span(),
        },
    };
    if horizon <= 0.0 {
        bail!("forecast horizon must be > 0");
    }

    let forecast = ageing::rollout(
        &model,
        &schedule,
        horizon,
        config.rollout.step_ah,
        config.rollout.variance_mode,
    )?;
    let initial_path = config.out_dir.join("forecast_initial.csv");
    io::write_forecast(&initial_path, &forecast, &header)?;
    if args.svg {
        std::fs::write(
            config.out_dir.join("forecast_initial.svg"),
            crate::svg::forecast_svg(&forecast, "capacity forecast"),
        )?;
    }
    println!("wrote {}", initial_path.display());

    if let Some(update_at) = args.update_at {
        let curve = curve
            .ok_or_else(|| anyhow!("--update-at needs --cell with measured data to retrain on"))?;
        let split = ageing::update_point_split(&schedule, &curve, update_at, config.max_lag)?;
        let inputs: Vec<_> = split.training.iter().map(|s| s.input).collect();
        let targets: Vec<f64> = split.training.iter().map(|s| s.target).collect();
        let updated = model.retrain_with(&inputs, &targets, &config.optimizer)?;
        updated.save(&config.out_dir.join("model_updated.json"))?;

        let (anchor_ah, anchor_q) = split.anchor;
        let remaining = horizon - anchor_ah;
        if remaining <= 0.0 {
            bail!("update point {update_at} leaves no forecast horizon");
        }
        let fc_updated = ageing::rollout_from(
            &updated,
            &schedule,
            anchor_ah,
            anchor_q,
            remaining,
            config.rollout.step_ah,
            config.rollout.variance_mode,
        )?;
        let updated_path = config.out_dir.join("forecast_updated.csv");
        io::write_forecast(&updated_path, &fc_updated, &header)?;
        if args.svg {
            std::fs::write(
                config.out_dir.join("forecast_updated.svg"),
                crate::svg::forecast_svg(&fc_updated, "updated capacity forecast"),
            )?;
        }
        println!(
            "wrote {} ({} training windows up to {update_at} Ah)",
            updated_path.display(),
            split.training.len()
        );
    }
    Ok(())
}

pub fn cmd_evaluate(
    config: &ExperimentConfig,
    model_path: &Path,
    input: &Path,
    case_path: Option<&Path>,
) -> Result<()> {
    let model = TrainedModel::load(model_path)?;
    let dataset = dataset_from_curves(load_curves(input)?, config.max_lag)?;

    let case = match case_path {
        Some(p) => {
            #[derive(serde::Deserialize)]
            struct CaseFile {
                #[serde(flatten)]
                case: curriculum::TrainingCase,
            }
            let file: CaseFile = io::read_json(p)?;
            file.case
        }
        None => {
            // no partition given: every cell is a training cell
            let all: Vec<String> = dataset.cells.iter().map(|c| c.cell_id.clone()).collect();
            curriculum::TrainingCase {
                index: 0,
                phase: StressFactor::Temperature,
                introduced_levels: vec![],
                included_conditions: vec![],
                training_cells: all,
                validation_cells: vec![],
                targeted_validation_cells: vec![],
                data_fraction: 1.0,
            }
        }
    };

    let eval_options = metrics::EvaluateOptions {
        step_ah: config.rollout.step_ah,
        variance_mode: config.rollout.variance_mode,
    };
    let reports = metrics::evaluate_case(&model, &case, &dataset, &eval_options)?;
    ensure_dir(&config.out_dir)?;
    let rows: Vec<(usize, metrics::EvaluationReport)> =
        reports.into_iter().map(|r| (case.index, r)).collect();
    io::write_report_csv(
        &config.out_dir.join("evaluation.csv"),
        &rows,
        &config.header("evaluate"),
    )?;
    io::write_json(
        &config.out_dir.join("evaluation.json"),
        &stamped(
            config,
            serde_json::json!({
                "rows": rows
                    .iter()
                    .map(|(case, r)| serde_json::json!({ "case": case, "report": r }))
                    .collect::<Vec<_>>()
            }),
        ),
    )?;
    for (_, r) in &rows {
        println!(
            "{}: {} cells, MAE_dQ {:.3}%, MAE_Q {:.3}%, CS2_dQ {:.1}%, CS2_Q {:.1}%",
            r.group.label(),
            r.n_cells,
            r.mae_dq,
            r.mae_q,
            r.cs2_dq,
            r.cs2_q
        );
    }
    Ok(())
}
