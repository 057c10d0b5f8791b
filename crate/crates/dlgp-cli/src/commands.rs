//! The six pipeline commands. Each one reads what it needs through the
//! config, writes data products to files, and keeps diagnostics on the error
//! stream, so stdout stays parseable where a command prints a table.

use std::path::{Path, PathBuf};

use nalgebra::DMatrix;

use dlgp::adapters::{DlgpAdapter, MeanPredictorAdapter, PlainGpAdapter, QuantileDlAdapter};
use dlgp::data::{
    load_motorcycle, load_xy_csv, read_replicates_csv, simulate_design, symmetric_lhs,
    write_replicates_csv, ScenarioSpec, TrainingDataset,
};
use dlgp::metrics::{benchmark, make_splits, SurrogateAdapter};
use dlgp::model::{load_model, save_model, DlgpModel, PredictOptions};
use dlgp::quantile::{
    augment_with_alpha, empirical_quantiles, read_quantile_design_csv, write_quantile_design_csv,
    QuantileDesign, QuantileRow,
};
use dlgp::{Error, Result};

use crate::config::ExperimentConfig;
use crate::io;

fn warn_all(warnings: &[String]) {
    for w in warnings {
        eprintln!("warning: {w}");
    }
}

// ---------------------------------------------------------------------------
// simulate
// ---------------------------------------------------------------------------

pub fn simulate(cfg: &ExperimentConfig, seed: Option<u64>, out: Option<PathBuf>) -> Result<()> {
    let sim = cfg
        .simulate
        .as_ref()
        .ok_or_else(|| Error::Config("config has no [simulate] section".into()))?;
    let scenario = if sim.parameters.is_empty() {
        ScenarioSpec::epidemic_defaults()
    } else {
        ScenarioSpec {
            names: sim.parameters.iter().map(|p| p.name.clone()).collect(),
            ranges: sim.parameters.iter().map(|p| (p.lo, p.hi)).collect(),
        }
    };
    scenario.validate()?;
    let seed = seed.unwrap_or(sim.seed);
    // The design stream tag (m, 1) cannot collide with the per-replicate
    // streams (s, r), whose scenario index s stays below m.
    let design_seed = dlgp::data::derive_seed(seed, sim.scenarios as u64, 1);
    let unit = symmetric_lhs(sim.scenarios, scenario.dim(), design_seed)?;
    let design = scenario.scale_unit(&unit)?;
    let table = simulate_design(&design, &scenario, sim.replicates, sim.horizon_weeks, seed)?;

    let out_path = match (out, &cfg.data.replicates) {
        (Some(path), _) => path,
        (None, Some(path)) => cfg.resolve(path),
        (None, None) => {
            return Err(Error::Config(
                "no output location: set [data].replicates or pass --out".into(),
            ))
        }
    };
    io::ensure_parent(&out_path)?;
    write_replicates_csv(&out_path, &table)?;
    eprintln!(
        "simulated {} scenarios x {} replicates over {} weeks -> {} ({} rows)",
        sim.scenarios,
        sim.replicates,
        sim.horizon_weeks,
        out_path.display(),
        table.rows.len()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// prep-quantiles
// ---------------------------------------------------------------------------

pub fn prep_quantiles(cfg: &ExperimentConfig, out: Option<PathBuf>) -> Result<()> {
    let levels = &cfg.quantiles.levels;
    let in_path = cfg
        .data
        .replicates
        .as_ref()
        .ok_or_else(|| Error::Config("config has no [data].replicates path".into()))?;
    let in_path = io::existing(cfg.resolve(in_path))?;
    let table = read_replicates_csv(&in_path)?;
    let scenarios = table.scenarios()?;
    let m = scenarios.len();
    let designs = DMatrix::from_fn(m, table.input_dim, |i, j| scenarios[i].theta[j]);
    let trajectories: Vec<DMatrix<f64>> = scenarios
        .iter()
        .map(|s| empirical_quantiles(&s.trajectories, levels))
        .collect::<Result<_>>()?;
    let design = augment_with_alpha(&designs, &trajectories, levels)?;

    let out_path = match (out, &cfg.data.quantile_design) {
        (Some(path), _) => path,
        (None, Some(path)) => cfg.resolve(path),
        (None, None) => {
            return Err(Error::Config(
                "no output location: set [data].quantile_design or pass --out".into(),
            ))
        }
    };
    io::ensure_parent(&out_path)?;
    write_quantile_design_csv(&out_path, &design)?;
    eprintln!(
        "read {} replicate rows across {} scenarios; wrote {} quantile rows \
         ({} levels x {} weeks) -> {}",
        table.rows.len(),
        m,
        design.len(),
        levels.len(),
        table.horizon,
        out_path.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// Shared trajectory plumbing
// ---------------------------------------------------------------------------

struct TrajectoryBundle {
    design: QuantileDesign,
    /// Levels per scenario block (the configured quantile list length).
    k: usize,
    /// Scenario id of each consecutive k-row block of the design.
    scenario_ids: Vec<usize>,
    holdout_blocks: Vec<usize>,
    train_blocks: Vec<usize>,
}

/// Load the quantile design and split its scenario blocks into training and
/// holdout sets. Blocks follow the replicate table's scenario order when that
/// file is available; otherwise they are numbered 0..m, which is exactly what
/// `simulate` assigns.
fn load_trajectory_bundle(cfg: &ExperimentConfig) -> Result<TrajectoryBundle> {
    let qd_path = cfg
        .data
        .quantile_design
        .as_ref()
        .ok_or_else(|| Error::Config("config has no [data].quantile_design path".into()))?;
    let qd_path = io::existing(cfg.resolve(qd_path))?;
    let design = read_quantile_design_csv(&qd_path)?;
    let k = cfg.quantiles.levels.len();
    if design.len() % k != 0 {
        return Err(Error::Input(format!(
            "quantile design has {} rows, not a multiple of the {} configured levels",
            design.len(),
            k
        )));
    }
    let m = design.len() / k;
    let scenario_ids: Vec<usize> = match &cfg.data.replicates {
        Some(rp) => {
            let rpath = cfg.resolve(rp);
            if rpath.is_file() {
                let table = read_replicates_csv(&rpath)?;
                let scenarios = table.scenarios()?;
                if scenarios.len() != m {
                    return Err(Error::Input(format!(
                        "replicate table has {} scenarios but the quantile design has {m} blocks",
                        scenarios.len()
                    )));
                }
                scenarios.iter().map(|s| s.scenario_id).collect()
            } else {
                (0..m).collect()
            }
        }
        None => (0..m).collect(),
    };
    let mut holdout_blocks = Vec::new();
    for &id in &cfg.trajectory.holdout_scenarios {
        match scenario_ids.iter().position(|&s| s == id) {
            Some(block) => holdout_blocks.push(block),
            None => {
                return Err(Error::Config(format!(
                    "holdout scenario {id} is not among the {m} scenarios in the data"
                )))
            }
        }
    }
    let train_blocks: Vec<usize> = (0..m).filter(|b| !holdout_blocks.contains(b)).collect();
    if train_blocks.is_empty() {
        return Err(Error::Config("every scenario is held out; nothing to train on".into()));
    }
    Ok(TrajectoryBundle { design, k, scenario_ids, holdout_blocks, train_blocks })
}

fn block_rows(bundle: &TrajectoryBundle, blocks: &[usize]) -> Vec<QuantileRow> {
    blocks
        .iter()
        .flat_map(|&b| (0..bundle.k).map(move |l| bundle.design.rows[b * bundle.k + l].clone()))
        .collect()
}

/// Queries for a set of blocks: one row per (scenario, level), inputs (θ, α).
fn block_queries(bundle: &TrajectoryBundle, blocks: &[usize]) -> DMatrix<f64> {
    let d = bundle.design.input_dim;
    let rows: Vec<&QuantileRow> = blocks
        .iter()
        .flat_map(|&b| (0..bundle.k).map(move |l| &bundle.design.rows[b * bundle.k + l]))
        .collect();
    DMatrix::from_fn(rows.len(), d + 1, |i, j| {
        if j < d {
            rows[i].theta[j]
        } else {
            rows[i].alpha
        }
    })
}

/// The dataset `train` fits and `predict`/`evaluate` condition on: quantile
/// design minus holdouts when configured, otherwise the plain xy CSV.
fn load_training_data(cfg: &ExperimentConfig) -> Result<(TrainingDataset, String)> {
    if cfg.data.quantile_design.is_some() {
        let bundle = load_trajectory_bundle(cfg)?;
        let kept = QuantileDesign::new(
            bundle.design.input_dim,
            bundle.design.horizon,
            block_rows(&bundle, &bundle.train_blocks),
        )?;
        let data = kept.to_training()?;
        let desc = format!(
            "{} quantile rows ({} scenarios x {} levels; {} scenarios held out)",
            data.len(),
            bundle.train_blocks.len(),
            bundle.k,
            bundle.holdout_blocks.len()
        );
        Ok((data, desc))
    } else if let Some(xy) = &cfg.data.xy {
        let path = io::existing(cfg.resolve(xy))?;
        let data = load_xy_csv(&path)?;
        let desc = format!("{} rows from {}", data.len(), path.display());
        Ok((data, desc))
    } else {
        Err(Error::Config(
            "no training data: set [data].quantile_design or [data].xy".into(),
        ))
    }
}

fn default_model_path(cfg: &ExperimentConfig) -> PathBuf {
    cfg.out_dir().join("model.json")
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

pub fn train(cfg: &ExperimentConfig, seed: Option<u64>, out: Option<PathBuf>) -> Result<()> {
    let specs = cfg.layer_specs()?;
    let (data, desc) = load_training_data(cfg)?;
    let train_config = cfg.train_config(seed);
    let mut model = DlgpModel::init(
        data.input_dim(),
        &specs,
        data.output_dim(),
        &cfg.dlgp_init(),
        train_config.seed,
    )?;
    model.covariance_mode = cfg.model.covariance;
    model.output_transform = cfg.model.output_transform;
    model.dense_cap = cfg.model.dense_cap;

    let model_path = out.unwrap_or_else(|| default_model_path(cfg));
    let trace_path = model_path.with_file_name("trace.csv");
    io::ensure_parent(&model_path)?;

    eprintln!("training on {desc}");
    let mut trace: Vec<(usize, f64)> = Vec::with_capacity(train_config.n_steps);
    let result = model.train_with_progress(&data, &train_config, |step, value| {
        trace.push((step, value));
    });
    match result {
        Ok(outcome) => {
            io::write_trace_csv(&trace_path, &trace)?;
            save_model(&outcome.model, &model_path)?;
            warn_all(&outcome.warnings);
            eprintln!(
                "final log likelihood {:.4} after {} steps; model -> {}, trace -> {}",
                outcome.final_log_marginal,
                trace.len(),
                model_path.display(),
                trace_path.display()
            );
            Ok(())
        }
        Err(e) => {
            // Keep whatever was computed for triage; the command still fails.
            let kept = io::write_trace_csv(&trace_path, &trace).is_ok();
            if kept {
                eprintln!(
                    "warning: training aborted; kept the partial likelihood trace \
                     ({} steps) at {}",
                    trace.len(),
                    trace_path.display()
                );
            }
            Err(e)
        }
    }
}

// ---------------------------------------------------------------------------
// predict
// ---------------------------------------------------------------------------

#[allow(clippy::too_many_arguments)]
pub fn predict(
    cfg: &ExperimentConfig,
    model_path: Option<PathBuf>,
    queries_path: Option<PathBuf>,
    out: Option<PathBuf>,
    level: Option<f64>,
    dump_covariance: Option<PathBuf>,
) -> Result<()> {
    let model_path = io::existing(model_path.unwrap_or_else(|| default_model_path(cfg)))?;
    let (model, warnings) = load_model(&model_path)?;
    warn_all(&warnings);

    let queries = match queries_path {
        Some(path) => io::read_matrix_csv(&io::existing(path)?)?,
        None => {
            let bundle = load_trajectory_bundle(cfg)?;
            if bundle.holdout_blocks.is_empty() {
                return Err(Error::Config(
                    "nothing to predict: pass --queries or configure \
                     [trajectory].holdout_scenarios"
                        .into(),
                ));
            }
            block_queries(&bundle, &bundle.holdout_blocks)
        }
    };
    let (train_data, _) = load_training_data(cfg)?;
    let opts = PredictOptions {
        include_noise: true,
        level: level.unwrap_or(cfg.output.level),
    };
    let preds = model.predict(&train_data, &queries, &opts)?;

    let out_path = out.unwrap_or_else(|| cfg.out_dir().join("predictions.csv"));
    io::write_predictions_csv(&out_path, &preds)?;
    if let Some(cov_path) = dump_covariance {
        io::write_covariance_csv(&cov_path, &preds)?;
    }
    eprintln!(
        "predicted {} query rows x {} outputs at level {} -> {}",
        queries.nrows(),
        model.output_dim(),
        opts.level,
        out_path.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// benchmark-motorcycle
// ---------------------------------------------------------------------------

/// Resolve the benchmark dataset: the configured path, falling back to
/// `$DLGP_CACHE_DIR/<file name>` when the configured copy is absent.
fn benchmark_data_path(cfg: &ExperimentConfig) -> Result<PathBuf> {
    let configured = cfg.resolve(
        cfg.data
            .xy
            .as_ref()
            .ok_or_else(|| Error::Config("config has no [data].xy path".into()))?,
    );
    if configured.is_file() {
        return Ok(configured);
    }
    if let Ok(cache) = std::env::var("DLGP_CACHE_DIR") {
        let name = configured.file_name().unwrap_or_else(|| "motorcycle.csv".as_ref());
        let cached = Path::new(&cache).join(name);
        if cached.is_file() {
            return Ok(cached);
        }
    }
    Err(Error::Input(format!("file not found: {}", configured.display())))
}

fn build_adapters(
    cfg: &ExperimentConfig,
    names: &[String],
) -> Result<Vec<Box<dyn SurrogateAdapter>>> {
    let level = cfg.output.level;
    names
        .iter()
        .map(|name| match name.as_str() {
            "dl-gp" => Ok(Box::new(DlgpAdapter {
                name: "dl-gp".into(),
                layers: cfg.layer_specs()?,
                init: cfg.dlgp_init(),
                train: cfg.train_config(None),
                predict: PredictOptions { include_noise: true, level },
                restarts: cfg.train.restarts,
            }) as Box<dyn SurrogateAdapter>),
            "gp" => Ok(Box::new(PlainGpAdapter { level, ..PlainGpAdapter::default() })
                as Box<dyn SurrogateAdapter>),
            "q-dl" => Ok(Box::new(QuantileDlAdapter {
                levels: cfg.quantiles.levels.clone(),
                ..QuantileDlAdapter::default()
            }) as Box<dyn SurrogateAdapter>),
            "mean" => Ok(Box::new(MeanPredictorAdapter { level, ..MeanPredictorAdapter::default() })
                as Box<dyn SurrogateAdapter>),
            other => Err(Error::Config(format!(
                "unknown model {other:?}; valid models: {}",
                crate::config::KNOWN_MODELS.join(", ")
            ))),
        })
        .collect()
}

pub fn benchmark_motorcycle(
    cfg: &ExperimentConfig,
    splits: Option<usize>,
    models: Option<String>,
    seed: Option<u64>,
    out: Option<PathBuf>,
) -> Result<()> {
    let data_path = benchmark_data_path(cfg)?;
    let (data, warnings) = load_motorcycle(&data_path)?;
    warn_all(&warnings);

    let names: Vec<String> = match models {
        Some(list) => list.split(',').map(|s| s.trim().to_string()).collect(),
        None => cfg.splits.models.clone(),
    };
    if names.is_empty() {
        return Err(Error::Config("no models selected".into()));
    }
    let adapters = build_adapters(cfg, &names)?;
    let adapter_refs: Vec<&dyn SurrogateAdapter> = adapters.iter().map(|a| a.as_ref()).collect();

    let n_splits = splits.unwrap_or(cfg.splits.count);
    let seed = seed.unwrap_or(cfg.splits.seed);
    let plan = make_splits(data.len(), cfg.splits.fraction, n_splits, seed)?;
    eprintln!(
        "scoring {} model(s) over {} splits of {} rows ({}% train)",
        names.len(),
        n_splits,
        data.len(),
        cfg.splits.fraction * 100.0
    );
    let report = benchmark(&adapter_refs, &data, &plan, seed)?;
    for failure in &report.failures {
        eprintln!(
            "warning: model {} failed split {}: {}",
            failure.model, failure.split, failure.message
        );
    }

    let out_path = out.unwrap_or_else(|| cfg.out_dir().join("motorcycle-report.csv"));
    io::write_benchmark_csv(&out_path, &report)?;
    print!("{}", io::render_benchmark_table(&report, n_splits));
    eprintln!("report -> {}", out_path.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// evaluate
// ---------------------------------------------------------------------------

struct HoldoutScore {
    scenario_id: usize,
    alpha: f64,
    inside: usize,
    horizon: usize,
}

pub fn evaluate(cfg: &ExperimentConfig, out: Option<PathBuf>) -> Result<()> {
    let bundle = load_trajectory_bundle(cfg)?;
    if bundle.holdout_blocks.is_empty() {
        return Err(Error::Config(
            "no holdout scenarios configured in [trajectory].holdout_scenarios".into(),
        ));
    }
    let model_path = io::existing(default_model_path(cfg))?;
    let (model, warnings) = load_model(&model_path)?;
    warn_all(&warnings);
    let (train_data, _) = load_training_data(cfg)?;

    let queries = block_queries(&bundle, &bundle.holdout_blocks);
    let opts = PredictOptions { include_noise: true, level: cfg.output.level };
    let preds = model.predict(&train_data, &queries, &opts)?;

    let out_path = out.unwrap_or_else(|| cfg.out_dir().join("holdout-bands.csv"));
    io::ensure_parent(&out_path)?;
    let mut writer = csv::Writer::from_path(&out_path)?;
    writer.write_record([
        "scenario_id",
        "alpha",
        "week",
        "observed",
        "mean",
        "lo",
        "hi",
        "inside",
    ])?;
    let horizon = bundle.design.horizon;
    let mut scores: Vec<HoldoutScore> = Vec::new();
    for (row_idx, pred) in preds.iter().enumerate() {
        let block = bundle.holdout_blocks[row_idx / bundle.k];
        let level_idx = row_idx % bundle.k;
        let design_row = &bundle.design.rows[block * bundle.k + level_idx];
        let scenario_id = bundle.scenario_ids[block];
        let mut inside = 0usize;
        for t in 0..horizon {
            let observed = design_row.trajectory[t];
            let is_inside = observed >= pred.lo[t] && observed <= pred.hi[t];
            if is_inside {
                inside += 1;
            }
            writer.write_record([
                scenario_id.to_string(),
                design_row.alpha.to_string(),
                t.to_string(),
                observed.to_string(),
                pred.mean[t].to_string(),
                pred.lo[t].to_string(),
                pred.hi[t].to_string(),
                u8::from(is_inside).to_string(),
            ])?;
        }
        scores.push(HoldoutScore { scenario_id, alpha: design_row.alpha, inside, horizon });
    }
    writer.flush()?;

    println!("{:<12} {:>7} {:>10}", "scenario", "alpha", "coverage");
    let mut total_inside = 0usize;
    let mut total_points = 0usize;
    for s in &scores {
        total_inside += s.inside;
        total_points += s.horizon;
        println!(
            "{:<12} {:>7} {:>10.3}",
            s.scenario_id,
            s.alpha,
            s.inside as f64 / s.horizon as f64
        );
    }
    println!(
        "{:<12} {:>7} {:>10.3}",
        "overall",
        "",
        total_inside as f64 / total_points as f64
    );
    eprintln!(
        "evaluated {} held-out quantile trajectories over {} weeks -> {}",
        scores.len(),
        horizon,
        out_path.display()
    );
    Ok(())
}
