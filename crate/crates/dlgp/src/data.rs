//! Dataset plumbing: CSV loaders and writers, standardization, symmetric
//! Latin hypercube designs, a stochastic epidemic simulator for generating
//! replicate trajectories, and a synthetic heteroskedastic test-bed.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use std::io::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::exec;

/// Paired inputs and outputs, one observation per row. `theta` is `N x d`,
/// `y` is `N x p`; every value is finite.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingDataset {
    pub theta: DMatrix<f64>,
    pub y: DMatrix<f64>,
}

impl TrainingDataset {
    pub fn new(theta: DMatrix<f64>, y: DMatrix<f64>) -> Result<Self> {
        if theta.nrows() != y.nrows() {
            return Err(Error::Input(format!(
                "{} input rows but {} output rows",
                theta.nrows(),
                y.nrows()
            )));
        }
        if theta.iter().chain(y.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Input("dataset contains a non-finite value".into()));
        }
        Ok(TrainingDataset { theta, y })
    }

    pub fn len(&self) -> usize {
        self.theta.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn input_dim(&self) -> usize {
        self.theta.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.y.ncols()
    }

    /// Copy of the rows listed in `idx` (used by split harnesses).
    pub fn subset(&self, idx: &[usize]) -> Result<Self> {
        for &i in idx {
            if i >= self.len() {
                return Err(Error::Input(format!(
                    "row index {i} out of range for {} rows",
                    self.len()
                )));
            }
        }
        let theta = DMatrix::from_fn(idx.len(), self.input_dim(), |r, c| self.theta[(idx[r], c)]);
        let y = DMatrix::from_fn(idx.len(), self.output_dim(), |r, c| self.y[(idx[r], c)]);
        Ok(TrainingDataset { theta, y })
    }
}

/// Per-column location/scale used to map a dataset to z-scores and map
/// predictions back. Scales use the population (1/N) standard deviation;
/// constant columns keep scale 1 and are listed so callers can warn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub input_mean: Vec<f64>,
    pub input_sd: Vec<f64>,
    pub output_mean: Vec<f64>,
    pub output_sd: Vec<f64>,
    pub constant_inputs: Vec<usize>,
    pub constant_outputs: Vec<usize>,
}

fn column_stats(m: &DMatrix<f64>) -> (Vec<f64>, Vec<f64>, Vec<usize>) {
    let n = m.nrows() as f64;
    let mut means = Vec::with_capacity(m.ncols());
    let mut sds = Vec::with_capacity(m.ncols());
    let mut constants = Vec::new();
    for j in 0..m.ncols() {
        let col = m.column(j);
        let mean = if m.nrows() == 0 { 0.0 } else { col.sum() / n };
        let var = if m.nrows() == 0 {
            0.0
        } else {
            col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n
        };
        let sd = var.sqrt();
        means.push(mean);
        if sd == 0.0 {
            constants.push(j);
            sds.push(1.0);
        } else {
            sds.push(sd);
        }
    }
    (means, sds, constants)
}

impl Standardization {
    /// No-op transform of the given widths.
    pub fn identity(input_dim: usize, output_dim: usize) -> Self {
        Standardization {
            input_mean: vec![0.0; input_dim],
            input_sd: vec![1.0; input_dim],
            output_mean: vec![0.0; output_dim],
            output_sd: vec![1.0; output_dim],
            constant_inputs: Vec::new(),
            constant_outputs: Vec::new(),
        }
    }

    pub fn fit(data: &TrainingDataset) -> Self {
        let (input_mean, input_sd, constant_inputs) = column_stats(&data.theta);
        let (output_mean, output_sd, constant_outputs) = column_stats(&data.y);
        Standardization {
            input_mean,
            input_sd,
            output_mean,
            output_sd,
            constant_inputs,
            constant_outputs,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.input_mean.len()
    }

    pub fn output_dim(&self) -> usize {
        self.output_mean.len()
    }

    pub fn standardize_inputs(&self, theta: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if theta.ncols() != self.input_dim() {
            return Err(Error::Input(format!(
                "inputs have {} columns but the transform expects {}",
                theta.ncols(),
                self.input_dim()
            )));
        }
        Ok(DMatrix::from_fn(theta.nrows(), theta.ncols(), |i, j| {
            (theta[(i, j)] - self.input_mean[j]) / self.input_sd[j]
        }))
    }

    pub fn standardize_outputs(&self, y: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if y.ncols() != self.output_dim() {
            return Err(Error::Input(format!(
                "outputs have {} columns but the transform expects {}",
                y.ncols(),
                self.output_dim()
            )));
        }
        Ok(DMatrix::from_fn(y.nrows(), y.ncols(), |i, j| {
            (y[(i, j)] - self.output_mean[j]) / self.output_sd[j]
        }))
    }

    /// Map one z-score output vector back to original units.
    pub fn destandardize_output_vec(&self, z: &DVector<f64>) -> Result<DVector<f64>> {
        if z.len() != self.output_dim() {
            return Err(Error::Input(format!(
                "vector has {} entries but the transform expects {}",
                z.len(),
                self.output_dim()
            )));
        }
        Ok(DVector::from_fn(z.len(), |i, _| z[i] * self.output_sd[i] + self.output_mean[i]))
    }
}

/// Fit column statistics on `data` and return the z-scored dataset, the
/// transform, and a human-readable warning per constant column.
pub fn standardize(data: &TrainingDataset) -> Result<(TrainingDataset, Standardization, Vec<String>)> {
    let stats = Standardization::fit(data);
    let mut warnings = Vec::new();
    for &j in &stats.constant_inputs {
        warnings.push(format!("input column {j} is constant; leaving its scale at 1"));
    }
    for &j in &stats.constant_outputs {
        warnings.push(format!("output column {j} is constant; leaving its scale at 1"));
    }
    let standardized = TrainingDataset::new(
        stats.standardize_inputs(&data.theta)?,
        stats.standardize_outputs(&data.y)?,
    )?;
    Ok((standardized, stats, warnings))
}

// ---------------------------------------------------------------------------
// CSV I/O
// ---------------------------------------------------------------------------

pub(crate) fn parse_cell(raw: &str, line: usize, column: &str) -> Result<f64> {
    let v: f64 = raw.trim().parse().map_err(|_| {
        Error::Input(format!("line {line}: column {column}: cannot parse {raw:?} as a number"))
    })?;
    if !v.is_finite() {
        return Err(Error::Input(format!(
            "line {line}: column {column}: non-finite value {raw:?}"
        )));
    }
    Ok(v)
}

/// Load a dataset from a CSV with header `x_1..x_d,y_1..y_p`. Errors carry
/// 1-based line numbers (the header is line 1).
pub fn load_xy_csv(path: &Path) -> Result<TrainingDataset> {
    let mut reader = csv::ReaderBuilder::new().flexible(true).from_path(path)?;
    let headers = reader.headers()?.clone();
    let mut d = 0;
    let mut p = 0;
    for (idx, h) in headers.iter().enumerate() {
        let expect_x = format!("x_{}", idx + 1);
        let expect_y = format!("y_{}", idx - d + 1);
        if p == 0 && h == expect_x {
            d += 1;
        } else if h == expect_y {
            p += 1;
        } else {
            return Err(Error::Input(format!(
                "line 1: unexpected header {h:?}; expected columns x_1..x_d then y_1..y_p"
            )));
        }
    }
    if d == 0 || p == 0 {
        return Err(Error::Input(
            "line 1: header must contain at least one x_ column and one y_ column".into(),
        ));
    }
    let mut theta_rows: Vec<f64> = Vec::new();
    let mut y_rows: Vec<f64> = Vec::new();
    let mut n = 0;
    for (rec_idx, record) in reader.records().enumerate() {
        let line = rec_idx + 2;
        let record = record?;
        if record.len() != d + p {
            return Err(Error::Input(format!(
                "line {line}: expected {} fields, found {}",
                d + p,
                record.len()
            )));
        }
        for (j, raw) in record.iter().enumerate() {
            let v = parse_cell(raw, line, &headers[j])?;
            if j < d {
                theta_rows.push(v);
            } else {
                y_rows.push(v);
            }
        }
        n += 1;
    }
    TrainingDataset::new(
        DMatrix::from_row_slice(n, d, &theta_rows),
        DMatrix::from_row_slice(n, p, &y_rows),
    )
}

/// Write a dataset with the `x_1..x_d,y_1..y_p` header `load_xy_csv` expects.
pub fn write_xy_csv(path: &Path, data: &TrainingDataset) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    let mut header: Vec<String> = (1..=data.input_dim()).map(|j| format!("x_{j}")).collect();
    header.extend((1..=data.output_dim()).map(|j| format!("y_{j}")));
    writer.write_record(&header)?;
    for i in 0..data.len() {
        let mut row: Vec<String> =
            (0..data.input_dim()).map(|j| data.theta[(i, j)].to_string()).collect();
        row.extend((0..data.output_dim()).map(|j| data.y[(i, j)].to_string()));
        writer.write_record(&row)?;
    }
    writer.flush()?;
    Ok(())
}

/// Expected row count of the bundled motorcycle-impact dataset.
pub const MOTORCYCLE_ROWS: usize = 133;
/// Rows beyond the first at each repeated time point (133 rows, 94 distinct times).
pub const MOTORCYCLE_REPLICATE_ROWS: usize = 39;

/// Load the motorcycle impact dataset (time in ms, head acceleration in g)
/// from a two-column CSV. Deviations from the canonical row and replicate
/// counts are reported as warnings, not errors, so locally modified copies
/// still load.
pub fn load_motorcycle(path: &Path) -> Result<(TrainingDataset, Vec<String>)> {
    let mut reader = csv::ReaderBuilder::new().from_path(path)?;
    let headers = reader.headers()?.clone();
    if headers.len() != 2 {
        return Err(Error::Input(format!(
            "line 1: expected 2 columns (time, acceleration), found {}",
            headers.len()
        )));
    }
    let mut times = Vec::new();
    let mut accel = Vec::new();
    for (rec_idx, record) in reader.records().enumerate() {
        let line = rec_idx + 2;
        let record = record?;
        if record.len() != 2 {
            return Err(Error::Input(format!(
                "line {line}: expected 2 fields, found {}",
                record.len()
            )));
        }
        times.push(parse_cell(&record[0], line, &headers[0])?);
        accel.push(parse_cell(&record[1], line, &headers[1])?);
    }
    if times.is_empty() {
        return Err(Error::Input("file contains no data rows".into()));
    }
    let mut warnings = Vec::new();
    if times.len() != MOTORCYCLE_ROWS {
        warnings.push(format!(
            "expected {MOTORCYCLE_ROWS} rows in the motorcycle dataset, found {}",
            times.len()
        ));
    }
    let mut sorted = times.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    sorted.dedup();
    let replicate_rows = times.len() - sorted.len();
    if times.len() == MOTORCYCLE_ROWS && replicate_rows != MOTORCYCLE_REPLICATE_ROWS {
        warnings.push(format!(
            "expected {MOTORCYCLE_REPLICATE_ROWS} replicate rows, found {replicate_rows}"
        ));
    }
    let n = times.len();
    let data = TrainingDataset::new(
        DMatrix::from_vec(n, 1, times),
        DMatrix::from_vec(n, 1, accel),
    )?;
    Ok((data, warnings))
}

// ---------------------------------------------------------------------------
// Designs
// ---------------------------------------------------------------------------

/// Symmetric Latin hypercube sample on the unit cube: `m` rows (must be
/// even), `d` columns, each column stratified into `m` equal bins with
/// exactly one point per bin, and rows paired so that row `i` and row
/// `m-1-i` are exact mirrors (`x + x' = 1` coordinatewise).
pub fn symmetric_lhs(m: usize, d: usize, seed: u64) -> Result<DMatrix<f64>> {
    if m < 2 || m % 2 != 0 {
        return Err(Error::Input(format!(
            "symmetric designs need an even number of rows of at least 2; got {m} (try {})",
            m.max(1) + m % 2
        )));
    }
    if d == 0 {
        return Err(Error::Input("design needs at least one column".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let half = m / 2;
    let mut design = DMatrix::zeros(m, d);
    let mut strata: Vec<usize> = (0..half).collect();
    for j in 0..d {
        // Shuffle which low-stratum goes to which row pair, flip a coin for
        // the orientation of each pair, and mirror the in-bin jitter.
        for i in (1..half).rev() {
            let k = rng.random_range(0..=i);
            strata.swap(i, k);
        }
        for i in 0..half {
            let low = strata[i];
            let flip = rng.random::<bool>();
            let u: f64 = rng.random();
            let s = if flip { m - 1 - low } else { low };
            let value = (s as f64 + u) / m as f64;
            design[(i, j)] = value;
            design[(m - 1 - i, j)] = 1.0 - value;
        }
    }
    Ok(design)
}

/// Named parameter ranges for a simulation scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub names: Vec<String>,
    pub ranges: Vec<(f64, f64)>,
}

impl ScenarioSpec {
    /// Default parameterization of the epidemic simulator: transmission
    /// probability, initial infected count, intervention delay (weeks),
    /// intervention efficacy, and travel-reduction fraction.
    pub fn epidemic_defaults() -> Self {
        ScenarioSpec {
            names: vec![
                "transmission_probability".into(),
                "initial_infected".into(),
                "intervention_delay_weeks".into(),
                "intervention_efficacy".into(),
                "travel_reduction".into(),
            ],
            ranges: vec![(3e-5, 8e-5), (1.0, 20.0), (2.0, 10.0), (0.1, 0.8), (0.0, 1.0)],
        }
    }

    pub fn dim(&self) -> usize {
        self.ranges.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.names.len() != self.ranges.len() {
            return Err(Error::Config(format!(
                "{} parameter names but {} ranges",
                self.names.len(),
                self.ranges.len()
            )));
        }
        for (name, &(lo, hi)) in self.names.iter().zip(&self.ranges) {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(Error::Config(format!(
                    "range for {name} must be finite with lo < hi, got [{lo}, {hi}]"
                )));
            }
        }
        Ok(())
    }

    pub fn check_point(&self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.dim() {
            return Err(Error::Input(format!(
                "parameter vector has {} entries, expected {}",
                theta.len(),
                self.dim()
            )));
        }
        for (k, (&v, &(lo, hi))) in theta.iter().zip(&self.ranges).enumerate() {
            if !(v.is_finite() && v >= lo && v <= hi) {
                return Err(Error::Input(format!(
                    "parameter {} ({}) = {v} outside its range [{lo}, {hi}]",
                    k + 1,
                    self.names[k]
                )));
            }
        }
        Ok(())
    }

    /// Map a unit-cube design onto these ranges.
    pub fn scale_unit(&self, unit: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if unit.ncols() != self.dim() {
            return Err(Error::Input(format!(
                "design has {} columns, expected {}",
                unit.ncols(),
                self.dim()
            )));
        }
        Ok(DMatrix::from_fn(unit.nrows(), unit.ncols(), |i, j| {
            let (lo, hi) = self.ranges[j];
            lo + unit[(i, j)] * (hi - lo)
        }))
    }
}

// ---------------------------------------------------------------------------
// Epidemic simulator
// ---------------------------------------------------------------------------

/// One simulated trajectory per replicate, grouped by design scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicateTable {
    pub input_dim: usize,
    pub horizon: usize,
    pub rows: Vec<ReplicateRow>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplicateRow {
    pub scenario_id: usize,
    pub replicate_id: usize,
    pub theta: Vec<f64>,
    pub trajectory: Vec<f64>,
}

/// Replicates of one scenario collected into a matrix (replicates x weeks).
#[derive(Debug, Clone)]
pub struct ScenarioReplicates {
    pub scenario_id: usize,
    pub theta: Vec<f64>,
    pub trajectories: DMatrix<f64>,
}

impl ReplicateTable {
    /// Group rows by scenario id, preserving first-appearance order.
    pub fn scenarios(&self) -> Result<Vec<ScenarioReplicates>> {
        let mut order: Vec<usize> = Vec::new();
        for row in &self.rows {
            if !order.contains(&row.scenario_id) {
                order.push(row.scenario_id);
            }
        }
        let mut out = Vec::with_capacity(order.len());
        for sid in order {
            let rows: Vec<&ReplicateRow> =
                self.rows.iter().filter(|r| r.scenario_id == sid).collect();
            let theta = rows[0].theta.clone();
            for r in &rows {
                if r.theta != theta {
                    return Err(Error::Input(format!(
                        "scenario {sid} has inconsistent parameter vectors across replicates"
                    )));
                }
            }
            let trajectories = DMatrix::from_fn(rows.len(), self.horizon, |i, t| {
                rows[i].trajectory[t]
            });
            out.push(ScenarioReplicates { scenario_id: sid, theta, trajectories });
        }
        Ok(out)
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Independent, reproducible stream seed for work item `(a, b)` of a run.
pub fn derive_seed(base: u64, a: u64, b: u64) -> u64 {
    let mut s = splitmix64(base);
    s = splitmix64(s ^ a.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    splitmix64(s ^ b.wrapping_mul(0xD1B5_4A32_D192_ED03))
}

/// Closed population size of the simulated community.
pub const EPIDEMIC_POPULATION: f64 = 50_000.0;
/// Contact volume scaling the per-contact transmission probability into a
/// weekly per-infectious transmission rate.
pub const EPIDEMIC_CONTACTS_PER_WEEK: f64 = 40_000.0;

fn simulate_one_trajectory<R: Rng>(theta: &[f64], horizon: usize, rng: &mut R) -> Vec<f64> {
    let base_rate = theta[0] * EPIDEMIC_CONTACTS_PER_WEEK * (1.0 - 0.5 * theta[4]);
    let initial = theta[1].round().max(1.0);
    let delay = theta[2];
    let efficacy = theta[3];
    let mut susceptible = (EPIDEMIC_POPULATION - initial).max(0.0) as u64;
    let mut infectious = initial;
    let mut cumulative = initial;
    let mut trajectory = Vec::with_capacity(horizon);
    for week in 0..horizon {
        let mut rate = base_rate;
        if week as f64 >= delay {
            rate *= 1.0 - efficacy;
        }
        let hazard = rate * infectious / EPIDEMIC_POPULATION;
        let p_infect = 1.0 - (-hazard).exp();
        let new_infections = Binomial::new(susceptible, p_infect)
            .expect("probability is always in [0, 1]")
            .sample(rng);
        susceptible -= new_infections;
        infectious = new_infections as f64;
        cumulative += new_infections as f64;
        trajectory.push(cumulative);
    }
    trajectory
}

/// Run the stochastic epidemic simulator for one parameter set. Weekly new
/// infections are Binomial draws against a hazard proportional to the current
/// infectious pool; the hospital intervention cuts the transmission rate by
/// `intervention_efficacy` from week `intervention_delay_weeks` on, and the
/// travel restriction halves it at full strength for the whole run. Outputs
/// are cumulative case counts (initial cases included), so every trajectory
/// is non-negative and non-decreasing. Replicate `r` draws from an RNG stream
/// derived from `(seed, scenario 0, r)`, making runs reproducible and
/// independent of evaluation order.
pub fn simulate_epidemic(
    theta: &[f64],
    scenario: &ScenarioSpec,
    n_replicates: usize,
    horizon_weeks: usize,
    seed: u64,
) -> Result<ReplicateTable> {
    scenario.validate()?;
    scenario.check_point(theta)?;
    if n_replicates == 0 || horizon_weeks == 0 {
        return Err(Error::Input(
            "need at least one replicate and a horizon of at least one week".into(),
        ));
    }
    let rows = (0..n_replicates)
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0, r as u64));
            ReplicateRow {
                scenario_id: 0,
                replicate_id: r,
                theta: theta.to_vec(),
                trajectory: simulate_one_trajectory(theta, horizon_weeks, &mut rng),
            }
        })
        .collect();
    Ok(ReplicateTable { input_dim: theta.len(), horizon: horizon_weeks, rows })
}

/// Simulate every row of a design, scenarios in parallel when the `parallel`
/// feature is on. Scenario `s`, replicate `r` always uses the stream derived
/// from `(seed, s, r)`, so the result is identical on both execution paths.
pub fn simulate_design(
    design: &DMatrix<f64>,
    scenario: &ScenarioSpec,
    n_replicates: usize,
    horizon_weeks: usize,
    seed: u64,
) -> Result<ReplicateTable> {
    scenario.validate()?;
    if design.ncols() != scenario.dim() {
        return Err(Error::Input(format!(
            "design has {} columns but the scenario has {} parameters",
            design.ncols(),
            scenario.dim()
        )));
    }
    if n_replicates == 0 || horizon_weeks == 0 {
        return Err(Error::Input(
            "need at least one replicate and a horizon of at least one week".into(),
        ));
    }
    let thetas: Vec<Vec<f64>> =
        (0..design.nrows()).map(|i| design.row(i).iter().copied().collect()).collect();
    for theta in &thetas {
        scenario.check_point(theta)?;
    }
    let per_scenario: Vec<Vec<ReplicateRow>> = exec::map_indexed(thetas.len(), |s| {
        let theta = &thetas[s];
        (0..n_replicates)
            .map(|r| {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, s as u64, r as u64));
                ReplicateRow {
                    scenario_id: s,
                    replicate_id: r,
                    theta: theta.clone(),
                    trajectory: simulate_one_trajectory(theta, horizon_weeks, &mut rng),
                }
            })
            .collect()
    });
    Ok(ReplicateTable {
        input_dim: scenario.dim(),
        horizon: horizon_weeks,
        rows: per_scenario.into_iter().flatten().collect(),
    })
}

/// Write a replicate table as CSV: `scenario_id,replicate_id,theta_1..,t_0..`
/// (time columns are zero-indexed weeks).
pub fn write_replicates_csv(path: &Path, table: &ReplicateTable) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut out = std::io::BufWriter::new(file);
    let mut header = vec!["scenario_id".to_string(), "replicate_id".to_string()];
    header.extend((1..=table.input_dim).map(|j| format!("theta_{j}")));
    header.extend((0..table.horizon).map(|t| format!("t_{t}")));
    writeln!(out, "{}", header.join(","))?;
    for row in &table.rows {
        let mut fields = vec![row.scenario_id.to_string(), row.replicate_id.to_string()];
        fields.extend(row.theta.iter().map(|v| v.to_string()));
        fields.extend(row.trajectory.iter().map(|v| v.to_string()));
        writeln!(out, "{}", fields.join(","))?;
    }
    out.flush()?;
    Ok(())
}

/// Read a replicate table written by `write_replicates_csv`.
pub fn read_replicates_csv(path: &Path) -> Result<ReplicateTable> {
    let mut reader = csv::ReaderBuilder::new().from_path(path)?;
    let headers = reader.headers()?.clone();
    let d = headers.iter().filter(|h| h.starts_with("theta_")).count();
    let horizon = headers.iter().filter(|h| h.starts_with("t_")).count();
    if headers.len() != 2 + d + horizon
        || headers.get(0) != Some("scenario_id")
        || headers.get(1) != Some("replicate_id")
    {
        return Err(Error::Input(
            "line 1: expected header scenario_id,replicate_id,theta_*,t_*".into(),
        ));
    }
    if d == 0 || horizon == 0 {
        return Err(Error::Input("line 1: need at least one theta_ and one t_ column".into()));
    }
    let mut rows = Vec::new();
    for (rec_idx, record) in reader.records().enumerate() {
        let line = rec_idx + 2;
        let record = record?;
        if record.len() != 2 + d + horizon {
            return Err(Error::Input(format!(
                "line {line}: expected {} fields, found {}",
                2 + d + horizon,
                record.len()
            )));
        }
        let scenario_id: usize = record[0]
            .trim()
            .parse()
            .map_err(|_| Error::Input(format!("line {line}: bad scenario_id {:?}", &record[0])))?;
        let replicate_id: usize = record[1]
            .trim()
            .parse()
            .map_err(|_| Error::Input(format!("line {line}: bad replicate_id {:?}", &record[1])))?;
        let theta: Vec<f64> = (0..d)
            .map(|j| parse_cell(&record[2 + j], line, &headers[2 + j]))
            .collect::<Result<_>>()?;
        let trajectory: Vec<f64> = (0..horizon)
            .map(|t| parse_cell(&record[2 + d + t], line, &headers[2 + d + t]))
            .collect::<Result<_>>()?;
        rows.push(ReplicateRow { scenario_id, replicate_id, theta, trajectory });
    }
    Ok(ReplicateTable { input_dim: d, horizon, rows })
}

// ---------------------------------------------------------------------------
// Synthetic heteroskedastic test-bed
// ---------------------------------------------------------------------------

/// Regime label (0, 1, 2) for an input on the synthetic heteroskedastic
/// domain `[0, 60)`: calm, volatile, decaying.
pub fn heteroskedastic_regime(x: f64) -> usize {
    ((x / 20.0).floor() as isize).clamp(0, 2) as usize
}

fn heteroskedastic_mean_sd(x: f64) -> (f64, f64) {
    match heteroskedastic_regime(x) {
        0 => (0.0, 0.5),
        1 => (-60.0 * (std::f64::consts::TAU * (x - 20.0) / 20.0).sin(), 12.0),
        _ => (40.0 * (-(x - 40.0) / 8.0).exp(), 4.0),
    }
}

/// One-dimensional dataset with three noise regimes of very different
/// magnitude, for exercising heteroskedastic interval calibration. Returns
/// the dataset plus the regime label of every row.
pub fn synthetic_heteroskedastic(
    n_per_regime: usize,
    seed: u64,
) -> Result<(TrainingDataset, Vec<usize>)> {
    if n_per_regime == 0 {
        return Err(Error::Input("need at least one point per regime".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = 3 * n_per_regime;
    let mut xs = Vec::with_capacity(n);
    let mut ys = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for regime in 0..3 {
        for _ in 0..n_per_regime {
            let x = 20.0 * regime as f64 + 20.0 * rng.random::<f64>();
            let (mean, sd) = heteroskedastic_mean_sd(x);
            let z: f64 = StandardNormal.sample(&mut rng);
            xs.push(x);
            ys.push(mean + sd * z);
            labels.push(regime);
        }
    }
    let data =
        TrainingDataset::new(DMatrix::from_vec(n, 1, xs), DMatrix::from_vec(n, 1, ys))?;
    Ok((data, labels))
}
