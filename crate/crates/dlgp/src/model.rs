//! The deep-feature GP surrogate: a deterministic network maps inputs to a
//! low-dimensional feature space, one univariate GP lives on each feature
//! coordinate, and a mixture matrix combines the GP values into the outputs,
//! plus independent Gaussian observation noise per output.
//!
//! With `psi = network(theta)` (N rows, q feature columns), mixture `W`
//! (p x q), bias `b`, and noise standard deviations `sigma`, the stacked
//! training vector `[y_1; ...; y_p]` (output-major: entry `i*N + n` is output
//! i at row n) is modeled as Gaussian with mean `b_i` per block and
//! covariance
//!
//! ```text
//! C = sum_j (w_j w_j^T) (x) K_j  +  diag(sigma_i^2) (x) I_N
//! ```
//!
//! where `K_j` is the squared-exponential Gram matrix of feature column `j`
//! including its nugget, `w_j` is column `j` of `W`, and `(x)` is the
//! Kronecker product over (output, row) indices. The latent nugget `r_j`
//! sits inside `K_j`, so it is shared across outputs at equal rows — the
//! latent GP draw is the same no matter which output reads it — while the
//! observation noise stays block-diagonal.
//!
//! Everything the model computes happens on an internal scale: outputs are
//! optionally transformed (`log1p`), then inputs and outputs are z-scored by
//! the statistics stored in the model. Training is gradient ascent on the
//! exact marginal likelihood for the network, mixture, bias, and log noise,
//! interleaved with hypercube slice-sampling sweeps over the kernel
//! hyperparameters (log lengthscales and log nuggets), which are deliberately
//! excluded from the gradient step.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::data::{derive_seed, standardize, Standardization, TrainingDataset};
use crate::error::{Error, Result};
use crate::exec;
use crate::gp::{
    chol_psd, gram, se_value, CholFactor, KernelHyper, LOG_2PI, LOG_LENGTHSCALE_BOUNDS,
    LOG_NUGGET_BOUNDS,
};
use crate::metrics::interval_z;
use crate::net::{LayerSpec, NetworkGrads, NetworkParams};
use crate::sampler::{slice_sample_hypercube, SliceConfig};

/// Upper bound on the stacked dimension `N * p` a dense joint covariance may
/// have, unless the caller raises it.
pub const DEFAULT_DENSE_CAP: usize = 4000;

/// Optional monotone transform applied to outputs before standardization.
/// Predictions map means and interval endpoints back through the inverse;
/// reported covariances stay on the transformed scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputTransform {
    #[default]
    None,
    Log1p,
}

impl OutputTransform {
    pub fn forward_value(&self, y: f64) -> Result<f64> {
        match self {
            OutputTransform::None => Ok(y),
            OutputTransform::Log1p => {
                if y <= -1.0 {
                    return Err(Error::Input(format!(
                        "log1p transform needs outputs above -1, got {y}"
                    )));
                }
                Ok(y.ln_1p())
            }
        }
    }

    pub fn inverse_value(&self, w: f64) -> f64 {
        match self {
            OutputTransform::None => w,
            OutputTransform::Log1p => w.exp_m1(),
        }
    }

    fn apply_matrix(&self, y: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if matches!(self, OutputTransform::None) {
            return Ok(y.clone());
        }
        let mut out = DMatrix::zeros(y.nrows(), y.ncols());
        for i in 0..y.nrows() {
            for j in 0..y.ncols() {
                out[(i, j)] = self.forward_value(y[(i, j)])?;
            }
        }
        Ok(out)
    }
}

/// How the likelihood treats the coupling between outputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CovarianceMode {
    /// Exact stacked covariance over all outputs at once; refuses to build
    /// anything larger than the dense cap.
    #[default]
    Full,
    /// Independent N x N covariance per output (`sum_j W_ij^2 K_j +
    /// sigma_i^2 I`). Drops cross-output correlations from the likelihood but
    /// scales to wide outputs; use it when `N * p` exceeds the dense cap.
    PerOutput,
}

/// The full parameter set of a deep-feature GP surrogate.
#[derive(Debug, Clone, PartialEq)]
pub struct DlgpModel {
    pub network: NetworkParams,
    /// Mixture matrix `W`, outputs x features.
    pub mixture: DMatrix<f64>,
    /// Constant mean per output (on the internal scale).
    pub bias: DVector<f64>,
    /// Observation-noise standard deviation per output; squared wherever a
    /// covariance is assembled.
    pub output_noise: DVector<f64>,
    /// Kernel hyperparameters, one per feature coordinate.
    pub kernel_hypers: Vec<KernelHyper>,
    /// Input/output statistics fitted at training time.
    pub stats: Standardization,
    pub output_transform: OutputTransform,
    pub covariance_mode: CovarianceMode,
    pub dense_cap: usize,
}

/// Initial values for a fresh model.
#[derive(Debug, Clone, Copy)]
pub struct DlgpInit {
    pub lengthscale: f64,
    pub nugget: f64,
    pub noise: f64,
    /// Standard deviation of the random mixture entries.
    pub mixture_scale: f64,
}

impl Default for DlgpInit {
    fn default() -> Self {
        DlgpInit { lengthscale: 1.0, nugget: 0.01, noise: 0.5, mixture_scale: 0.5 }
    }
}

/// Dataset mapped to the model's internal scale (outputs transformed, both
/// sides z-scored). Exposed so oracles can feed exact values through the
/// likelihood without a standardization step.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub theta: DMatrix<f64>,
    pub y: DMatrix<f64>,
}

impl PreparedData {
    pub fn len(&self) -> usize {
        self.theta.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Gradients of the log marginal likelihood, shaped like the parameters.
/// Noise gradients are with respect to log sigma.
#[derive(Debug, Clone)]
pub struct DlgpGradients {
    pub network: NetworkGrads,
    pub mixture: DMatrix<f64>,
    pub bias: DVector<f64>,
    pub log_noise: DVector<f64>,
}

impl DlgpModel {
    /// Fresh model: seeded network, random mixture, zero bias, constant
    /// initial noise and kernel hyperparameters, identity standardization.
    pub fn init(
        input_dim: usize,
        specs: &[LayerSpec],
        output_dim: usize,
        init: &DlgpInit,
        seed: u64,
    ) -> Result<Self> {
        if output_dim == 0 {
            return Err(Error::Config("model needs at least one output".into()));
        }
        if !(init.noise.is_finite() && init.noise > 0.0) {
            return Err(Error::Config(format!(
                "initial noise must be positive, got {}",
                init.noise
            )));
        }
        if !(init.mixture_scale.is_finite() && init.mixture_scale > 0.0) {
            return Err(Error::Config(format!(
                "mixture scale must be positive, got {}",
                init.mixture_scale
            )));
        }
        let hyper = KernelHyper { lengthscale: init.lengthscale, nugget: init.nugget };
        hyper.validate()?;
        let network = NetworkParams::init(input_dim, specs, derive_seed(seed, 0, 0))?;
        let q = network.output_dim();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 1, 0));
        let mixture = DMatrix::from_fn(output_dim, q, |_, _| {
            let z: f64 = StandardNormal.sample(&mut rng);
            z * init.mixture_scale
        });
        Ok(DlgpModel {
            network,
            mixture,
            bias: DVector::zeros(output_dim),
            output_noise: DVector::from_element(output_dim, init.noise),
            kernel_hypers: vec![hyper; q],
            stats: Standardization::identity(input_dim, output_dim),
            output_transform: OutputTransform::None,
            covariance_mode: CovarianceMode::Full,
            dense_cap: DEFAULT_DENSE_CAP,
        })
    }

    pub fn latent_dim(&self) -> usize {
        self.network.output_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.mixture.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.network.input_dim()
    }

    pub fn validate(&self) -> Result<()> {
        let q = self.latent_dim();
        let p = self.output_dim();
        if p == 0 {
            return Err(Error::Config("model has no outputs".into()));
        }
        if self.mixture.ncols() != q {
            return Err(Error::Config(format!(
                "mixture has {} columns but the network produces {} features",
                self.mixture.ncols(),
                q
            )));
        }
        if self.kernel_hypers.len() != q {
            return Err(Error::Config(format!(
                "{} kernel hyperparameter sets for {} features",
                self.kernel_hypers.len(),
                q
            )));
        }
        if self.bias.len() != p || self.output_noise.len() != p {
            return Err(Error::Config(format!(
                "bias ({}) and noise ({}) must both have one entry per output ({p})",
                self.bias.len(),
                self.output_noise.len()
            )));
        }
        for hyper in &self.kernel_hypers {
            hyper.validate()?;
        }
        for &s in self.output_noise.iter() {
            if !(s.is_finite() && s > 0.0) {
                return Err(Error::Config(format!(
                    "output noise must be positive and finite, got {s}"
                )));
            }
        }
        if self.mixture.iter().chain(self.bias.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Config("model parameters contain a non-finite value".into()));
        }
        if self.stats.input_dim() != self.input_dim() || self.stats.output_dim() != p {
            return Err(Error::Config(format!(
                "standardization covers {}x{} but the model is {}x{}",
                self.stats.input_dim(),
                self.stats.output_dim(),
                self.input_dim(),
                p
            )));
        }
        if self.dense_cap == 0 {
            return Err(Error::Config("dense cap must be at least 1".into()));
        }
        Ok(())
    }

    /// Map a raw dataset onto the model's internal scale using the stored
    /// transform and statistics.
    pub fn prepare(&self, raw: &TrainingDataset) -> Result<PreparedData> {
        if raw.input_dim() != self.input_dim() {
            return Err(Error::Input(format!(
                "data has {} input columns but the model expects {}",
                raw.input_dim(),
                self.input_dim()
            )));
        }
        if raw.output_dim() != self.output_dim() {
            return Err(Error::Input(format!(
                "data has {} output columns but the model expects {}",
                raw.output_dim(),
                self.output_dim()
            )));
        }
        let transformed = self.output_transform.apply_matrix(&raw.y)?;
        Ok(PreparedData {
            theta: self.stats.standardize_inputs(&raw.theta)?,
            y: self.stats.standardize_outputs(&transformed)?,
        })
    }

    fn check_dense_cap(&self, n: usize) -> Result<()> {
        let stacked = n * self.output_dim();
        if stacked > self.dense_cap {
            return Err(Error::Resource(format!(
                "joint covariance would be {stacked}x{stacked} (cap {}); \
                 switch the covariance mode to per-output or raise the cap",
                self.dense_cap
            )));
        }
        Ok(())
    }

    fn latent_grams(&self, psi: &DMatrix<f64>, hypers: &[KernelHyper]) -> Result<Vec<DMatrix<f64>>> {
        (0..self.latent_dim())
            .map(|j| {
                let col: Vec<f64> = psi.column(j).iter().copied().collect();
                gram(&col, &hypers[j])
            })
            .collect()
    }

    fn stacked_residual(&self, y: &DMatrix<f64>) -> DVector<f64> {
        let n = y.nrows();
        let p = self.output_dim();
        DVector::from_fn(n * p, |idx, _| {
            let i = idx / n;
            let a = idx % n;
            y[(a, i)] - self.bias[i]
        })
    }

    fn assemble_full(
        &self,
        grams: &[DMatrix<f64>],
        n: usize,
        include_noise: bool,
    ) -> DMatrix<f64> {
        let p = self.output_dim();
        let mut c = DMatrix::zeros(n * p, n * p);
        for (j, k) in grams.iter().enumerate() {
            for i in 0..p {
                for i2 in 0..p {
                    let w = self.mixture[(i, j)] * self.mixture[(i2, j)];
                    if w == 0.0 {
                        continue;
                    }
                    for a in 0..n {
                        for b in 0..n {
                            c[(i * n + a, i2 * n + b)] += w * k[(a, b)];
                        }
                    }
                }
            }
        }
        if include_noise {
            for i in 0..p {
                let s2 = self.output_noise[i] * self.output_noise[i];
                for a in 0..n {
                    c[(i * n + a, i * n + a)] += s2;
                }
            }
        }
        c
    }

    fn per_output_cov(
        &self,
        grams: &[DMatrix<f64>],
        n: usize,
        output: usize,
        include_noise: bool,
    ) -> DMatrix<f64> {
        let mut c = DMatrix::zeros(n, n);
        for (j, k) in grams.iter().enumerate() {
            let w2 = self.mixture[(output, j)] * self.mixture[(output, j)];
            if w2 == 0.0 {
                continue;
            }
            for a in 0..n {
                for b in 0..n {
                    c[(a, b)] += w2 * k[(a, b)];
                }
            }
        }
        if include_noise {
            let s2 = self.output_noise[output] * self.output_noise[output];
            for a in 0..n {
                c[(a, a)] += s2;
            }
        }
        c
    }

    /// Log marginal likelihood of prepared data under the current parameters
    /// and the given kernel hyperparameters (which may differ from the stored
    /// ones; the slice sweep exploits that).
    fn log_marginal_given(
        &self,
        psi: &DMatrix<f64>,
        y: &DMatrix<f64>,
        hypers: &[KernelHyper],
    ) -> Result<f64> {
        let n = psi.nrows();
        let p = self.output_dim();
        let grams = self.latent_grams(psi, hypers)?;
        match self.covariance_mode {
            CovarianceMode::Full => {
                self.check_dense_cap(n)?;
                let c = self.assemble_full(&grams, n, true);
                let chol = chol_psd(&c)?;
                let r = self.stacked_residual(y);
                let alpha = chol.solve_vec(&r);
                Ok(-0.5 * r.dot(&alpha)
                    - 0.5 * chol.log_det()
                    - 0.5 * (n * p) as f64 * LOG_2PI)
            }
            CovarianceMode::PerOutput => {
                let mut total = 0.0;
                for i in 0..p {
                    let c = self.per_output_cov(&grams, n, i, true);
                    let chol = chol_psd(&c)?;
                    let r = DVector::from_fn(n, |a, _| y[(a, i)] - self.bias[i]);
                    let alpha = chol.solve_vec(&r);
                    total += -0.5 * r.dot(&alpha)
                        - 0.5 * chol.log_det()
                        - 0.5 * n as f64 * LOG_2PI;
                }
                Ok(total)
            }
        }
    }

    /// Log marginal likelihood of prepared data.
    pub fn log_marginal(&self, prep: &PreparedData) -> Result<f64> {
        self.validate()?;
        let (psi, _) = self.network.forward(&prep.theta)?;
        self.log_marginal_given(&psi, &prep.y, &self.kernel_hypers)
    }

    /// Log marginal likelihood and its gradients with respect to every
    /// gradient-trained parameter (network, mixture, bias, log noise).
    /// Kernel hyperparameters get no gradient: they are updated by slice
    /// sampling instead.
    pub fn log_marginal_and_gradients(&self, prep: &PreparedData) -> Result<(f64, DlgpGradients)> {
        self.validate()?;
        let n = prep.len();
        let p = self.output_dim();
        let q = self.latent_dim();
        let (psi, cache) = self.network.forward(&prep.theta)?;
        let grams = self.latent_grams(&psi, &self.kernel_hypers)?;

        let mut grad_mixture = DMatrix::zeros(p, q);
        let mut grad_bias = DVector::zeros(p);
        let mut grad_log_noise = DVector::zeros(p);
        let mut grad_psi = DMatrix::zeros(n, q);
        let value;

        match self.covariance_mode {
            CovarianceMode::Full => {
                self.check_dense_cap(n)?;
                let c = self.assemble_full(&grams, n, true);
                let chol = chol_psd(&c)?;
                let r = self.stacked_residual(&prep.y);
                let alpha = chol.solve_vec(&r);
                value = -0.5 * r.dot(&alpha)
                    - 0.5 * chol.log_det()
                    - 0.5 * (n * p) as f64 * LOG_2PI;
                let c_inv = chol.inverse();
                // A = (alpha alpha^T - C^{-1}) / 2; then dL/dtheta = tr(A dC/dtheta).
                let np = n * p;
                let a_mat = DMatrix::from_fn(np, np, |u, v| {
                    0.5 * (alpha[u] * alpha[v] - c_inv[(u, v)])
                });

                for i in 0..p {
                    grad_bias[i] = (0..n).map(|a| alpha[i * n + a]).sum();
                    let s2 = self.output_noise[i] * self.output_noise[i];
                    grad_log_noise[i] =
                        2.0 * s2 * (0..n).map(|a| a_mat[(i * n + a, i * n + a)]).sum::<f64>();
                }

                for j in 0..q {
                    // G[i,i2] = sum_{a,b} A[(i,a),(i2,b)] K_j[a,b]
                    let mut g = DMatrix::zeros(p, p);
                    for i in 0..p {
                        for i2 in 0..p {
                            let mut s = 0.0;
                            for a in 0..n {
                                for b in 0..n {
                                    s += a_mat[(i * n + a, i2 * n + b)] * grams[j][(a, b)];
                                }
                            }
                            g[(i, i2)] = s;
                        }
                    }
                    for i in 0..p {
                        grad_mixture[(i, j)] =
                            2.0 * (0..p).map(|i2| g[(i, i2)] * self.mixture[(i2, j)]).sum::<f64>();
                    }
                    // H[a,b] = sum_{i,i2} W_ij W_i2j A[(i,a),(i2,b)]
                    let mut h = DMatrix::zeros(n, n);
                    for i in 0..p {
                        for i2 in 0..p {
                            let w = self.mixture[(i, j)] * self.mixture[(i2, j)];
                            if w == 0.0 {
                                continue;
                            }
                            for a in 0..n {
                                for b in 0..n {
                                    h[(a, b)] += w * a_mat[(i * n + a, i2 * n + b)];
                                }
                            }
                        }
                    }
                    accumulate_feature_grad(&mut grad_psi, j, &h, &psi, &self.kernel_hypers[j]);
                }
            }
            CovarianceMode::PerOutput => {
                let mut total = 0.0;
                let mut h: Vec<DMatrix<f64>> = vec![DMatrix::zeros(n, n); q];
                for i in 0..p {
                    let c = self.per_output_cov(&grams, n, i, true);
                    let chol = chol_psd(&c)?;
                    let r = DVector::from_fn(n, |a, _| prep.y[(a, i)] - self.bias[i]);
                    let alpha = chol.solve_vec(&r);
                    total += -0.5 * r.dot(&alpha)
                        - 0.5 * chol.log_det()
                        - 0.5 * n as f64 * LOG_2PI;
                    let c_inv = chol.inverse();
                    let a_i =
                        DMatrix::from_fn(n, n, |u, v| 0.5 * (alpha[u] * alpha[v] - c_inv[(u, v)]));
                    grad_bias[i] = alpha.sum();
                    let s2 = self.output_noise[i] * self.output_noise[i];
                    grad_log_noise[i] = 2.0 * s2 * a_i.diagonal().sum();
                    for j in 0..q {
                        let mut frob = 0.0;
                        for a in 0..n {
                            for b in 0..n {
                                frob += a_i[(a, b)] * grams[j][(a, b)];
                            }
                        }
                        grad_mixture[(i, j)] = 2.0 * self.mixture[(i, j)] * frob;
                        let w2 = self.mixture[(i, j)] * self.mixture[(i, j)];
                        if w2 != 0.0 {
                            for a in 0..n {
                                for b in 0..n {
                                    h[j][(a, b)] += w2 * a_i[(a, b)];
                                }
                            }
                        }
                    }
                }
                value = total;
                for j in 0..q {
                    accumulate_feature_grad(&mut grad_psi, j, &h[j], &psi, &self.kernel_hypers[j]);
                }
            }
        }

        let (net_grads, _) = self.network.backward(&cache, &grad_psi)?;
        Ok((
            value,
            DlgpGradients {
                network: net_grads,
                mixture: grad_mixture,
                bias: grad_bias,
                log_noise: grad_log_noise,
            },
        ))
    }
}

/// grad_psi[a, j] += 2 * sum_{b != a} H[a,b] * d k_j(psi_aj, psi_bj) / d psi_aj
fn accumulate_feature_grad(
    grad_psi: &mut DMatrix<f64>,
    j: usize,
    h: &DMatrix<f64>,
    psi: &DMatrix<f64>,
    hyper: &KernelHyper,
) {
    let n = psi.nrows();
    let ll2 = hyper.lengthscale * hyper.lengthscale;
    for a in 0..n {
        let mut s = 0.0;
        for b in 0..n {
            if a == b {
                continue;
            }
            let x = psi[(a, j)];
            let x2 = psi[(b, j)];
            let dk = -((x - x2) / ll2) * se_value(x, x2, hyper.lengthscale);
            s += h[(a, b)] * dk;
        }
        grad_psi[(a, j)] = 2.0 * s;
    }
}

/// Dense stacked covariance over (output, row) pairs for the given features.
/// Entry `(i*N + a, i2*N + b)` couples output `i` at row `a` with output `i2`
/// at row `b`. With `include_noise` the per-output noise variance is added on
/// the diagonal. Refuses to materialize more than `model.dense_cap` rows.
pub fn joint_covariance(
    psi: &DMatrix<f64>,
    model: &DlgpModel,
    include_noise: bool,
) -> Result<DMatrix<f64>> {
    model.validate()?;
    if psi.ncols() != model.latent_dim() {
        return Err(Error::Input(format!(
            "features have {} columns but the model has {} latent coordinates",
            psi.ncols(),
            model.latent_dim()
        )));
    }
    model.check_dense_cap(psi.nrows())?;
    let grams = model.latent_grams(psi, &model.kernel_hypers)?;
    Ok(model.assemble_full(&grams, psi.nrows(), include_noise))
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub n_steps: usize,
    /// Run a slice-sampling sweep over the kernel hyperparameters after
    /// every this many gradient steps (0 disables sweeps).
    pub slice_interval: usize,
    pub slice: SliceConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-2,
            n_steps: 500,
            slice_interval: 25,
            slice: SliceConfig::default(),
            seed: 0,
        }
    }
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub model: DlgpModel,
    /// Log marginal likelihood at the start of each step.
    pub trace: Vec<f64>,
    /// Log marginal likelihood of the returned model, after the final
    /// gradient step and hyperparameter sweep (the trace stops one update
    /// earlier).
    pub final_log_marginal: f64,
    pub warnings: Vec<String>,
}

impl DlgpModel {
    /// Fit the model to raw data: fits the standardization, then alternates
    /// gradient ascent on (network, mixture, bias, log noise) with slice
    /// sweeps over the kernel hyperparameters. Deterministic for a fixed
    /// seed. Returns the trained model plus the per-step likelihood trace.
    pub fn train(self, data: &TrainingDataset, config: &TrainConfig) -> Result<TrainOutcome> {
        self.train_with_progress(data, config, |_, _| {})
    }

    /// Like [`DlgpModel::train`], but reports `(step, log_likelihood)` after
    /// each likelihood evaluation, so a caller keeps the partial trace even
    /// when training later aborts.
    pub fn train_with_progress(
        mut self,
        data: &TrainingDataset,
        config: &TrainConfig,
        mut on_step: impl FnMut(usize, f64),
    ) -> Result<TrainOutcome> {
        self.validate()?;
        if data.is_empty() {
            return Err(Error::Input("training needs at least one row".into()));
        }
        if !(config.learning_rate.is_finite() && config.learning_rate > 0.0) {
            return Err(Error::Config(format!(
                "learning rate must be positive, got {}",
                config.learning_rate
            )));
        }
        if data.input_dim() != self.input_dim() || data.output_dim() != self.output_dim() {
            return Err(Error::Input(format!(
                "data is {}->{} but the model is {}->{}",
                data.input_dim(),
                data.output_dim(),
                self.input_dim(),
                self.output_dim()
            )));
        }
        let transformed =
            TrainingDataset::new(data.theta.clone(), self.output_transform.apply_matrix(&data.y)?)?;
        let (std_data, stats, mut warnings) = standardize(&transformed)?;
        self.stats = stats;
        let prep = PreparedData { theta: std_data.theta, y: std_data.y };

        let lr = config.learning_rate;
        let mut trace = Vec::with_capacity(config.n_steps);
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut sweep_warned = false;
        for step in 0..config.n_steps {
            let (value, grads) = self.log_marginal_and_gradients(&prep)?;
            if !value.is_finite() {
                return Err(Error::Training(format!(
                    "log likelihood became {value} at step {step}; lower the learning rate"
                )));
            }
            trace.push(value);
            on_step(step, value);
            self.network.ascend(&grads.network, lr);
            self.mixture += &grads.mixture * lr;
            self.bias += &grads.bias * lr;
            for i in 0..self.output_noise.len() {
                let rho = (self.output_noise[i].ln() + lr * grads.log_noise[i]).clamp(-18.0, 7.0);
                self.output_noise[i] = rho.exp();
            }
            if config.slice_interval > 0 && (step + 1) % config.slice_interval == 0 {
                match self.sweep_hypers(&prep, &config.slice, &mut rng) {
                    Ok(()) => {}
                    // A sweep can only start from a point with finite
                    // likelihood; if gradient steps just left it non-finite,
                    // skip the sweep and let the next step's check decide.
                    Err(Error::Input(msg)) => {
                        if !sweep_warned {
                            warnings.push(format!("skipped a hyperparameter sweep: {msg}"));
                            sweep_warned = true;
                        }
                    }
                    Err(e) => return Err(e),
                }
            }
        }
        let final_log_marginal = self.log_marginal(&prep)?;
        Ok(TrainOutcome { model: self, trace, final_log_marginal, warnings })
    }

    /// One hypercube slice-sampling update of all kernel hyperparameters in
    /// log space, holding every gradient-trained parameter fixed. Bounds:
    /// log lengthscale in [-5, 5], log nugget in [-12, 2]; the target is
    /// minus infinity outside, and numerical failures inside the target are
    /// treated as zero density rather than aborting the chain.
    fn sweep_hypers(
        &mut self,
        prep: &PreparedData,
        slice: &SliceConfig,
        rng: &mut ChaCha8Rng,
    ) -> Result<()> {
        let q = self.latent_dim();
        let (psi, _) = self.network.forward(&prep.theta)?;
        let (len_lo, len_hi) = LOG_LENGTHSCALE_BOUNDS;
        let (nug_lo, nug_hi) = LOG_NUGGET_BOUNDS;
        let mut x0 = Vec::with_capacity(2 * q);
        for h in &self.kernel_hypers {
            x0.push(h.lengthscale.ln().clamp(len_lo, len_hi));
        }
        for h in &self.kernel_hypers {
            x0.push(h.nugget.max(1e-12).ln().clamp(nug_lo, nug_hi));
        }
        let target = |x: &[f64]| -> f64 {
            for k in 0..q {
                if x[k] < len_lo || x[k] > len_hi {
                    return f64::NEG_INFINITY;
                }
                if x[q + k] < nug_lo || x[q + k] > nug_hi {
                    return f64::NEG_INFINITY;
                }
            }
            let hypers: Vec<KernelHyper> = (0..q)
                .map(|k| KernelHyper { lengthscale: x[k].exp(), nugget: x[q + k].exp() })
                .collect();
            match self.log_marginal_given(&psi, &prep.y, &hypers) {
                Ok(v) => v,
                Err(_) => f64::NEG_INFINITY,
            }
        };
        let x1 = slice_sample_hypercube(target, &x0, slice, rng)?;
        for k in 0..q {
            self.kernel_hypers[k] =
                KernelHyper { lengthscale: x1[k].exp(), nugget: x1[q + k].exp() };
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Prediction
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy)]
pub struct PredictOptions {
    /// Add observation noise (and the latent nugget) to predictive
    /// variances, describing a new noisy observation rather than the latent
    /// mixture value.
    pub include_noise: bool,
    /// Central-interval coverage for `lo`/`hi`.
    pub level: f64,
}

impl Default for PredictOptions {
    fn default() -> Self {
        PredictOptions { include_noise: true, level: 0.90 }
    }
}

/// Posterior at one query point. `mean`, `lo`, `hi` are in original output
/// units (inverse transform applied). `covariance` is on the model's
/// destandardized output scale, which equals original units unless an output
/// transform is active.
#[derive(Debug, Clone)]
pub struct PosteriorPrediction {
    pub mean: DVector<f64>,
    pub lo: DVector<f64>,
    pub hi: DVector<f64>,
    pub covariance: DMatrix<f64>,
}

impl DlgpModel {
    /// Prior covariance among outputs at any single query point. The
    /// squared-exponential kernel has unit variance at zero distance, so this
    /// does not depend on where the query lands.
    fn query_prior(&self, include_noise: bool) -> DMatrix<f64> {
        let p = self.output_dim();
        let q = self.latent_dim();
        let mut prior = DMatrix::zeros(p, p);
        for i in 0..p {
            for i2 in 0..p {
                let mut s = 0.0;
                for j in 0..q {
                    s += self.mixture[(i, j)]
                        * self.mixture[(i2, j)]
                        * (1.0 + self.kernel_hypers[j].nugget);
                }
                prior[(i, i2)] = s;
            }
            if include_noise {
                prior[(i, i)] += self.output_noise[i] * self.output_noise[i];
            }
        }
        prior
    }

    fn finish_prediction(
        &self,
        mean_std: &DVector<f64>,
        cov_std: &DMatrix<f64>,
        z: f64,
    ) -> Result<PosteriorPrediction> {
        let p = self.output_dim();
        let mut cov = DMatrix::zeros(p, p);
        let mut mean = DVector::zeros(p);
        let mut lo = DVector::zeros(p);
        let mut hi = DVector::zeros(p);
        for i in 0..p {
            let mut var = cov_std[(i, i)];
            if var < 0.0 {
                if var < -1e-10 {
                    return Err(Error::Numerical(format!(
                        "predictive variance for output {i} is {var:.3e}"
                    )));
                }
                var = 0.0;
            }
            let sd_model = self.stats.output_sd[i];
            let center = mean_std[i] * sd_model + self.stats.output_mean[i];
            let half = z * var.sqrt() * sd_model;
            mean[i] = self.output_transform.inverse_value(center);
            lo[i] = self.output_transform.inverse_value(center - half);
            hi[i] = self.output_transform.inverse_value(center + half);
            for i2 in 0..p {
                let v = 0.5 * (cov_std[(i, i2)] + cov_std[(i2, i)]);
                cov[(i, i2)] = v * sd_model * self.stats.output_sd[i2];
            }
        }
        Ok(PosteriorPrediction { mean, lo, hi, covariance: cov })
    }

    /// Posterior predictions at each query row, conditioning on the raw
    /// training data (mapped through the model's stored transform and
    /// statistics). Queries are processed in parallel when the `parallel`
    /// feature is on; results are ordered by query row either way.
    pub fn predict(
        &self,
        train: &TrainingDataset,
        queries: &DMatrix<f64>,
        opts: &PredictOptions,
    ) -> Result<Vec<PosteriorPrediction>> {
        self.validate()?;
        let z = interval_z(opts.level)?;
        if queries.ncols() != self.input_dim() {
            return Err(Error::Input(format!(
                "queries have {} columns but the model expects {}",
                queries.ncols(),
                self.input_dim()
            )));
        }
        let prep = self.prepare(train)?;
        let queries_std = self.stats.standardize_inputs(queries)?;
        let (psi_q, _) = self.network.forward(&queries_std)?;
        let m = queries.nrows();
        let n = prep.len();
        let p = self.output_dim();
        let q = self.latent_dim();
        let prior = self.query_prior(opts.include_noise);

        if n == 0 {
            let mut out = Vec::with_capacity(m);
            for _ in 0..m {
                out.push(self.finish_prediction(&self.bias, &prior, z)?);
            }
            return Ok(out);
        }

        let (psi_t, _) = self.network.forward(&prep.theta)?;
        let grams = self.latent_grams(&psi_t, &self.kernel_hypers)?;

        match self.covariance_mode {
            CovarianceMode::Full => {
                self.check_dense_cap(n)?;
                let c = self.assemble_full(&grams, n, true);
                let chol = chol_psd(&c)?;
                let alpha = chol.solve_vec(&self.stacked_residual(&prep.y));
                let results: Vec<Result<PosteriorPrediction>> = exec::map_indexed(m, |mq| {
                    // Cross-covariance between outputs at the query and the
                    // stacked training vector; nuggets do not appear here.
                    let mut s = DMatrix::zeros(p, n * p);
                    for j in 0..q {
                        let lam = self.kernel_hypers[j].lengthscale;
                        let kvec: Vec<f64> =
                            (0..n).map(|a| se_value(psi_q[(mq, j)], psi_t[(a, j)], lam)).collect();
                        for i in 0..p {
                            let wi = self.mixture[(i, j)];
                            if wi == 0.0 {
                                continue;
                            }
                            for i2 in 0..p {
                                let w = wi * self.mixture[(i2, j)];
                                if w == 0.0 {
                                    continue;
                                }
                                for a in 0..n {
                                    s[(i, i2 * n + a)] += w * kvec[a];
                                }
                            }
                        }
                    }
                    let mean_std = &self.bias + &s * &alpha;
                    let solved = chol.solve_mat(&s.transpose());
                    let cov_std = &prior - &s * &solved;
                    self.finish_prediction(&mean_std, &cov_std, z)
                });
                results.into_iter().collect()
            }
            CovarianceMode::PerOutput => {
                let mut chols: Vec<CholFactor> = Vec::with_capacity(p);
                let mut alphas: Vec<DVector<f64>> = Vec::with_capacity(p);
                for i in 0..p {
                    let c = self.per_output_cov(&grams, n, i, true);
                    let chol = chol_psd(&c)?;
                    let r = DVector::from_fn(n, |a, _| prep.y[(a, i)] - self.bias[i]);
                    alphas.push(chol.solve_vec(&r));
                    chols.push(chol);
                }
                let results: Vec<Result<PosteriorPrediction>> = exec::map_indexed(m, |mq| {
                    let mut mean_std = DVector::zeros(p);
                    let mut cov_std = DMatrix::zeros(p, p);
                    for i in 0..p {
                        let mut cross = DVector::zeros(n);
                        for j in 0..q {
                            let w2 = self.mixture[(i, j)] * self.mixture[(i, j)];
                            if w2 == 0.0 {
                                continue;
                            }
                            let lam = self.kernel_hypers[j].lengthscale;
                            for a in 0..n {
                                cross[a] += w2 * se_value(psi_q[(mq, j)], psi_t[(a, j)], lam);
                            }
                        }
                        mean_std[i] = self.bias[i] + cross.dot(&alphas[i]);
                        let solved = chols[i].solve_vec(&cross);
                        cov_std[(i, i)] = prior[(i, i)] - cross.dot(&solved);
                    }
                    self.finish_prediction(&mean_std, &cov_std, z)
                });
                results.into_iter().collect()
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Persistence
// ---------------------------------------------------------------------------

const MODEL_FORMAT: &str = "dlgp-model";
const FORMAT_MAJOR: u64 = 1;
const FORMAT_MINOR: u64 = 1;

/// Optional fields added in minor version 1; absent in older files.
const OPTIONAL_FIELDS: &[&str] = &["covariance_mode", "output_transform", "dense_cap"];

fn default_dense_cap() -> usize {
    DEFAULT_DENSE_CAP
}

#[derive(Serialize, Deserialize)]
struct MatrixData {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl MatrixData {
    fn from_matrix(m: &DMatrix<f64>) -> Self {
        let mut data = Vec::with_capacity(m.nrows() * m.ncols());
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                data.push(m[(i, j)]);
            }
        }
        MatrixData { rows: m.nrows(), cols: m.ncols(), data }
    }

    fn to_matrix(&self) -> Result<DMatrix<f64>> {
        if self.data.len() != self.rows * self.cols {
            return Err(Error::Format(format!(
                "matrix claims {}x{} but carries {} values",
                self.rows,
                self.cols,
                self.data.len()
            )));
        }
        Ok(DMatrix::from_row_slice(self.rows, self.cols, &self.data))
    }
}

#[derive(Serialize, Deserialize)]
struct LayerData {
    activation: crate::net::Activation,
    weight: MatrixData,
    bias: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct NetworkData {
    input_dim: usize,
    layers: Vec<LayerData>,
}

#[derive(Serialize, Deserialize)]
struct VersionData {
    major: u64,
    minor: u64,
}

/// On-disk layout; serialization order follows field order here and is part
/// of the format.
#[derive(Serialize, Deserialize)]
struct ModelFile {
    format: String,
    version: VersionData,
    #[serde(default)]
    covariance_mode: CovarianceMode,
    #[serde(default)]
    output_transform: OutputTransform,
    #[serde(default = "default_dense_cap")]
    dense_cap: usize,
    network: NetworkData,
    mixture: MatrixData,
    bias: Vec<f64>,
    output_noise: Vec<f64>,
    kernel_hypers: Vec<KernelHyper>,
    standardization: Standardization,
}

/// Serialize a model as pretty-printed JSON. Numbers round-trip bit-exactly.
pub fn save_model(model: &DlgpModel, path: &Path) -> Result<()> {
    model.validate()?;
    let network = NetworkData {
        input_dim: model.network.input_dim(),
        layers: model
            .network
            .layers
            .iter()
            .map(|l| LayerData {
                activation: l.activation,
                weight: MatrixData::from_matrix(&l.weight),
                bias: l.bias.iter().copied().collect(),
            })
            .collect(),
    };
    let file = ModelFile {
        format: MODEL_FORMAT.to_string(),
        version: VersionData { major: FORMAT_MAJOR, minor: FORMAT_MINOR },
        covariance_mode: model.covariance_mode,
        output_transform: model.output_transform,
        dense_cap: model.dense_cap,
        network,
        mixture: MatrixData::from_matrix(&model.mixture),
        bias: model.bias.iter().copied().collect(),
        output_noise: model.output_noise.iter().copied().collect(),
        kernel_hypers: model.kernel_hypers.clone(),
        standardization: model.stats.clone(),
    };
    let json = serde_json::to_string_pretty(&file)?;
    std::fs::write(path, json + "\n")?;
    Ok(())
}

/// Read a model file, tolerating older minor versions by filling defaults
/// (each filled field produces a warning). Unknown formats and newer or
/// different major versions are refused.
pub fn load_model(path: &Path) -> Result<(DlgpModel, Vec<String>)> {
    let text = std::fs::read_to_string(path)?;
    let value: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| Error::Format(format!("not valid JSON: {e}")))?;
    let format = value.get("format").and_then(|v| v.as_str()).unwrap_or("");
    if format != MODEL_FORMAT {
        return Err(Error::Format(format!(
            "expected a {MODEL_FORMAT:?} file, found format {format:?}"
        )));
    }
    let major = value.pointer("/version/major").and_then(|v| v.as_u64());
    let minor = value.pointer("/version/minor").and_then(|v| v.as_u64());
    let (major, minor) = match (major, minor) {
        (Some(ma), Some(mi)) => (ma, mi),
        _ => return Err(Error::Format("missing or malformed version".into())),
    };
    if major != FORMAT_MAJOR {
        return Err(Error::Format(format!(
            "major version {major} is not supported (this build reads {FORMAT_MAJOR}.x)"
        )));
    }
    let mut warnings = Vec::new();
    if minor > FORMAT_MINOR {
        warnings.push(format!(
            "file minor version {minor} is newer than supported {FORMAT_MINOR}; unknown fields are ignored"
        ));
    }
    for field in OPTIONAL_FIELDS {
        if value.get(field).is_none() {
            warnings.push(format!("field {field:?} absent (minor version {minor}); using default"));
        }
    }
    let file: ModelFile = serde_json::from_value(value)?;
    let mut layers = Vec::with_capacity(file.network.layers.len());
    let mut specs = Vec::with_capacity(file.network.layers.len());
    for l in &file.network.layers {
        specs.push(LayerSpec { width: l.weight.rows, activation: l.activation });
        layers.push((l.weight.to_matrix()?, DVector::from_row_slice(&l.bias), l.activation));
    }
    let mut network = NetworkParams::init(file.network.input_dim, &specs, 0)?;
    for (layer, (w, b, act)) in network.layers.iter_mut().zip(layers) {
        if layer.weight.shape() != w.shape() || layer.bias.len() != b.len() {
            return Err(Error::Format("layer shapes are internally inconsistent".into()));
        }
        layer.weight = w;
        layer.bias = b;
        layer.activation = act;
    }
    let model = DlgpModel {
        network,
        mixture: file.mixture.to_matrix()?,
        bias: DVector::from_row_slice(&file.bias),
        output_noise: DVector::from_row_slice(&file.output_noise),
        kernel_hypers: file.kernel_hypers,
        stats: file.standardization,
        output_transform: file.output_transform,
        covariance_mode: file.covariance_mode,
        dense_cap: file.dense_cap,
    };
    model.validate().map_err(|e| Error::Format(format!("model file is inconsistent: {e}")))?;
    Ok((model, warnings))
}
