//! Replicate-to-quantile preprocessing and a quantile-regression network.
//!
//! A stochastic simulator run `n` times at the same design point yields an
//! `n x T` replicate matrix. `empirical_quantiles` condenses it to a handful
//! of quantile trajectories, and `augment_with_alpha` turns those into
//! training rows `(theta, alpha, trajectory)` where the extra input `alpha`
//! names which quantile the row describes — so a single deterministic
//! surrogate can be asked for any of them.
//!
//! The second half is a small direct baseline: one network with a shared
//! trunk and one output head per quantile level, trained by gradient descent
//! on a squared-error-plus-pinball loss. Heads may cross during training;
//! predictions repair that by sorting (`quantile_crossing_fix`).

use nalgebra::DMatrix;
use std::io::Write as _;
use std::path::Path;

use crate::data::{parse_cell, standardize, Standardization, TrainingDataset};
use crate::error::{Error, Result};
use crate::net::{Activation, LayerSpec, NetworkParams};

/// Check a quantile-level list: non-empty, strictly increasing, all in (0,1).
pub fn validate_levels(qs: &[f64]) -> Result<()> {
    if qs.is_empty() {
        return Err(Error::Input("need at least one quantile level".into()));
    }
    for (k, &q) in qs.iter().enumerate() {
        if !(q > 0.0 && q < 1.0) {
            return Err(Error::Input(format!(
                "quantile level {q} (position {k}) is outside (0, 1)"
            )));
        }
        if k > 0 && qs[k - 1] >= q {
            return Err(Error::Input(format!(
                "quantile levels must be strictly increasing; {} is followed by {q}",
                qs[k - 1]
            )));
        }
    }
    Ok(())
}

/// Linear-interpolation empirical quantile of a sorted sample: with
/// `h = (n-1) q`, interpolate between the order statistics flanking `h`.
/// (The convention known as "type 7" — the default in most statistical
/// software; pinned so results reproduce bit-for-bit.)
fn quantile_of_sorted(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    let h = (n - 1) as f64 * q;
    let lo = h.floor() as usize;
    if lo + 1 >= n {
        return sorted[n - 1];
    }
    sorted[lo] + (h - lo as f64) * (sorted[lo + 1] - sorted[lo])
}

/// Per-time-column empirical quantiles of a replicate matrix (rows are
/// replicates, columns are time steps). Returns a `|qs| x T` matrix whose
/// row `k` is the level-`qs[k]` trajectory; rows are pointwise
/// non-decreasing because the levels must be strictly increasing.
pub fn empirical_quantiles(replicates: &DMatrix<f64>, qs: &[f64]) -> Result<DMatrix<f64>> {
    validate_levels(qs)?;
    let n = replicates.nrows();
    if n == 0 {
        return Err(Error::Input("need at least one replicate row".into()));
    }
    if replicates.iter().any(|v| !v.is_finite()) {
        return Err(Error::Input("replicates contain a non-finite value".into()));
    }
    let t_len = replicates.ncols();
    let mut out = DMatrix::zeros(qs.len(), t_len);
    let mut col = vec![0.0; n];
    for t in 0..t_len {
        for (a, v) in col.iter_mut().enumerate() {
            *v = replicates[(a, t)];
        }
        col.sort_by(f64::total_cmp);
        for (k, &q) in qs.iter().enumerate() {
            out[(k, t)] = quantile_of_sorted(&col, q);
        }
    }
    Ok(out)
}

/// One row of a quantile-augmented design: a design point, the quantile
/// level it is annotated with, and the matching empirical quantile
/// trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantileRow {
    pub theta: Vec<f64>,
    pub alpha: f64,
    pub trajectory: Vec<f64>,
}

/// Design rows augmented with a latent quantile index. Each design point
/// appears once per level, the rows differing only in `alpha` and the
/// trajectory; rows are meant to be unique as `(theta, alpha)` pairs
/// (duplicate design points are retained as given, never collapsed).
#[derive(Debug, Clone, PartialEq)]
pub struct QuantileDesign {
    pub input_dim: usize,
    pub horizon: usize,
    pub rows: Vec<QuantileRow>,
}

impl QuantileDesign {
    pub fn new(input_dim: usize, horizon: usize, rows: Vec<QuantileRow>) -> Result<Self> {
        for (i, row) in rows.iter().enumerate() {
            if row.theta.len() != input_dim {
                return Err(Error::Input(format!(
                    "row {i} has {} design values, expected {input_dim}",
                    row.theta.len()
                )));
            }
            if row.trajectory.len() != horizon {
                return Err(Error::Input(format!(
                    "row {i} has {} trajectory values, expected {horizon}",
                    row.trajectory.len()
                )));
            }
            if !(0.0..=1.0).contains(&row.alpha) {
                return Err(Error::Input(format!(
                    "row {i} has alpha {} outside [0, 1]",
                    row.alpha
                )));
            }
            if row.theta.iter().chain(row.trajectory.iter()).any(|v| !v.is_finite()) {
                return Err(Error::Input(format!("row {i} contains a non-finite value")));
            }
        }
        Ok(QuantileDesign { input_dim, horizon, rows })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// View as a training set: inputs are `(theta, alpha)` (d+1 columns),
    /// outputs are the trajectories (T columns).
    pub fn to_training(&self) -> Result<TrainingDataset> {
        let n = self.len();
        let theta = DMatrix::from_fn(n, self.input_dim + 1, |r, c| {
            if c < self.input_dim {
                self.rows[r].theta[c]
            } else {
                self.rows[r].alpha
            }
        });
        let y = DMatrix::from_fn(n, self.horizon, |r, c| self.rows[r].trajectory[c]);
        TrainingDataset::new(theta, y)
    }
}

/// Pair every design row with its per-level quantile trajectories: row
/// `(theta_i, qs[k], quantile_trajs[i].row(k))` for each design `i` and
/// level `k`, giving exactly `m * |qs|` rows, in design-major order.
pub fn augment_with_alpha(
    designs: &DMatrix<f64>,
    quantile_trajs: &[DMatrix<f64>],
    qs: &[f64],
) -> Result<QuantileDesign> {
    validate_levels(qs)?;
    let m = designs.nrows();
    if quantile_trajs.len() != m {
        return Err(Error::Input(format!(
            "{} designs but {} quantile-trajectory blocks",
            m,
            quantile_trajs.len()
        )));
    }
    let horizon = quantile_trajs.first().map_or(0, |t| t.ncols());
    let mut rows = Vec::with_capacity(m * qs.len());
    for (i, trajs) in quantile_trajs.iter().enumerate() {
        if trajs.nrows() != qs.len() || trajs.ncols() != horizon {
            return Err(Error::Input(format!(
                "quantile block {i} is {}x{}, expected {}x{horizon}",
                trajs.nrows(),
                trajs.ncols(),
                qs.len()
            )));
        }
        let theta: Vec<f64> = designs.row(i).iter().copied().collect();
        for (k, &q) in qs.iter().enumerate() {
            rows.push(QuantileRow {
                theta: theta.clone(),
                alpha: q,
                trajectory: trajs.row(k).iter().copied().collect(),
            });
        }
    }
    QuantileDesign::new(designs.ncols(), horizon, rows)
}

/// Write a quantile design as CSV: `theta_1..theta_d,alpha,t_0..t_{T-1}`.
pub fn write_quantile_design_csv(path: &Path, design: &QuantileDesign) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut out = std::io::BufWriter::new(file);
    let mut header: Vec<String> =
        (1..=design.input_dim).map(|j| format!("theta_{j}")).collect();
    header.push("alpha".to_string());
    header.extend((0..design.horizon).map(|t| format!("t_{t}")));
    writeln!(out, "{}", header.join(","))?;
    for row in &design.rows {
        let mut fields: Vec<String> = row.theta.iter().map(|v| v.to_string()).collect();
        fields.push(row.alpha.to_string());
        fields.extend(row.trajectory.iter().map(|v| v.to_string()));
        writeln!(out, "{}", fields.join(","))?;
    }
    out.flush()?;
    Ok(())
}

/// Read a quantile design written by `write_quantile_design_csv`.
pub fn read_quantile_design_csv(path: &Path) -> Result<QuantileDesign> {
    let mut reader = csv::ReaderBuilder::new().from_path(path)?;
    let headers = reader.headers()?.clone();
    let d = headers.iter().filter(|h| h.starts_with("theta_")).count();
    let horizon = headers.iter().filter(|h| h.starts_with("t_")).count();
    if d == 0 || headers.get(d) != Some("alpha") || headers.len() != d + 1 + horizon {
        return Err(Error::Input(
            "line 1: expected header theta_1..theta_d,alpha,t_0..".into(),
        ));
    }
    let mut rows = Vec::new();
    for (rec_idx, record) in reader.records().enumerate() {
        let line = rec_idx + 2;
        let record = record?;
        if record.len() != d + 1 + horizon {
            return Err(Error::Input(format!(
                "line {line}: expected {} fields, found {}",
                d + 1 + horizon,
                record.len()
            )));
        }
        let theta: Vec<f64> =
            (0..d).map(|j| parse_cell(&record[j], line, &headers[j])).collect::<Result<_>>()?;
        let alpha = parse_cell(&record[d], line, "alpha")?;
        let trajectory: Vec<f64> = (0..horizon)
            .map(|t| parse_cell(&record[d + 1 + t], line, &headers[d + 1 + t]))
            .collect::<Result<_>>()?;
        rows.push(QuantileRow { theta, alpha, trajectory });
    }
    QuantileDesign::new(d, horizon, rows)
}

/// Squared error plus the level-`q` pinball penalty:
/// `(y - y_hat)^2 + max(q (y_hat - y), (q - 1)(y_hat - y))`. Nonnegative.
///
/// Note the orientation: the pinball term charges `(1-q)` per unit of
/// under-prediction and `q` per unit of over-prediction, so on its own it is
/// minimized (over constant predictions) at the empirical `(1-q)`-quantile.
/// Trained heads therefore come out in reverse level order; the set of
/// learned curves is the same, and `quantile_crossing_fix` sorts each
/// prediction, so downstream consumers always see ascending quantiles.
pub fn pinball_mse_loss(y: f64, y_hat: f64, q: f64) -> Result<f64> {
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::Input(format!("quantile level {q} is outside (0, 1)")));
    }
    let u = y_hat - y;
    Ok(u * u + (q * u).max((q - 1.0) * u))
}

/// Monotone rearrangement of quantile-head outputs: sorts ascending, so the
/// value multiset is preserved but crossings disappear. Applied at
/// prediction time only; training leaves the heads unconstrained.
pub fn quantile_crossing_fix(preds: &[f64]) -> Vec<f64> {
    let mut out = preds.to_vec();
    out.sort_by(f64::total_cmp);
    out
}

/// A trained quantile network: shared trunk, one linear head per level, and
/// the input/output statistics everything is computed under.
#[derive(Debug, Clone)]
pub struct QuantileNet {
    pub network: NetworkParams,
    pub levels: Vec<f64>,
    pub stats: Standardization,
}

#[derive(Debug, Clone)]
pub struct QuantileTrainConfig {
    pub learning_rate: f64,
    pub n_steps: usize,
    pub seed: u64,
}

impl Default for QuantileTrainConfig {
    fn default() -> Self {
        QuantileTrainConfig { learning_rate: 0.05, n_steps: 2000, seed: 0 }
    }
}

#[derive(Debug)]
pub struct QuantileTrainOutcome {
    pub net: QuantileNet,
    /// Mean loss at the start of each step.
    pub trace: Vec<f64>,
    pub warnings: Vec<String>,
}

/// Train the quantile baseline on a single-output dataset: the given trunk
/// layers are extended with one linear head per level, and all heads are
/// trained together by full-batch gradient descent on the mean (over
/// samples) of the per-head squared-error-plus-pinball losses. Deterministic
/// for a fixed seed.
pub fn train_quantile_dl(
    data: &TrainingDataset,
    qs: &[f64],
    trunk: &[LayerSpec],
    config: &QuantileTrainConfig,
) -> Result<QuantileTrainOutcome> {
    validate_levels(qs)?;
    if data.output_dim() != 1 {
        return Err(Error::Config(format!(
            "the quantile network is univariate; got {} output columns",
            data.output_dim()
        )));
    }
    if data.is_empty() {
        return Err(Error::Input("training needs at least one row".into()));
    }
    if !(config.learning_rate.is_finite() && config.learning_rate > 0.0) {
        return Err(Error::Config(format!(
            "learning rate must be positive, got {}",
            config.learning_rate
        )));
    }
    let (std_data, stats, warnings) = standardize(data)?;
    let mut specs: Vec<LayerSpec> = trunk.to_vec();
    specs.push(LayerSpec { width: qs.len(), activation: Activation::Identity });
    let mut network = NetworkParams::init(data.input_dim(), &specs, config.seed)?;

    let n = std_data.len();
    let inv_n = 1.0 / n as f64;
    let mut trace = Vec::with_capacity(config.n_steps);
    for step in 0..config.n_steps {
        let (pred, cache) = network.forward(&std_data.theta)?;
        let mut loss = 0.0;
        let mut grad = DMatrix::zeros(n, qs.len());
        for a in 0..n {
            let y = std_data.y[(a, 0)];
            for (k, &q) in qs.iter().enumerate() {
                let y_hat = pred[(a, k)];
                loss += pinball_mse_loss(y, y_hat, q)?;
                let u = y_hat - y;
                let pinball_slope = if u > 0.0 { q } else { q - 1.0 };
                grad[(a, k)] = (2.0 * u + pinball_slope) * inv_n;
            }
        }
        loss *= inv_n;
        if !loss.is_finite() {
            return Err(Error::Training(format!(
                "quantile loss became {loss} at step {step}; lower the learning rate"
            )));
        }
        trace.push(loss);
        let (grads, _) = network.backward(&cache, &grad)?;
        network.ascend(&grads, -config.learning_rate);
    }
    Ok(QuantileTrainOutcome {
        net: QuantileNet { network, levels: qs.to_vec(), stats },
        trace,
        warnings,
    })
}

impl QuantileNet {
    /// Raw head outputs on the original scale, one row per query and one
    /// column per level, without the crossing repair.
    pub fn predict_unsorted(&self, queries: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let std_queries = self.stats.standardize_inputs(queries)?;
        let (pred, _) = self.network.forward(&std_queries)?;
        let mean = self.stats.output_mean[0];
        let sd = self.stats.output_sd[0];
        Ok(pred.map(|v| v * sd + mean))
    }

    /// Head outputs with the crossing repair applied per row; column `k` is
    /// the level-`levels[k]` prediction and rows are non-decreasing across
    /// columns.
    pub fn predict(&self, queries: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let mut pred = self.predict_unsorted(queries)?;
        let row_buf: &mut Vec<f64> = &mut vec![0.0; pred.ncols()];
        for a in 0..pred.nrows() {
            for (k, v) in row_buf.iter_mut().enumerate() {
                *v = pred[(a, k)];
            }
            let fixed = quantile_crossing_fix(row_buf);
            for (k, v) in fixed.into_iter().enumerate() {
                pred[(a, k)] = v;
            }
        }
        Ok(pred)
    }

    /// Position of a level in `levels`, matched within floating tolerance.
    pub fn level_index(&self, level: f64) -> Result<usize> {
        self.levels
            .iter()
            .position(|&q| (q - level).abs() < 1e-9)
            .ok_or_else(|| {
                Error::Input(format!("level {level} is not among the trained levels {:?}", self.levels))
            })
    }
}
