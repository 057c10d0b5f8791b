//! Univariate Gaussian-process primitives: squared-exponential kernel, Gram
//! matrices with a nugget, a hand-rolled Cholesky with jitter escalation,
//! marginal likelihood, exact posteriors, and a small gradient-ascent fitter
//! for the kernel hyperparameters.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const LOG_2PI: f64 = 1.8378770664093453;

/// Squared-exponential kernel hyperparameters for one latent coordinate.
/// `lengthscale` must be positive; `nugget` is a variance added on the
/// diagonal of every Gram matrix built from these hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelHyper {
    pub lengthscale: f64,
    pub nugget: f64,
}

impl KernelHyper {
    pub fn validate(&self) -> Result<()> {
        if !(self.lengthscale.is_finite() && self.lengthscale > 0.0) {
            return Err(Error::Config(format!(
                "lengthscale must be positive and finite, got {}",
                self.lengthscale
            )));
        }
        if !(self.nugget.is_finite() && self.nugget >= 0.0) {
            return Err(Error::Config(format!(
                "nugget must be non-negative and finite, got {}",
                self.nugget
            )));
        }
        Ok(())
    }
}

pub(crate) fn se_value(x: f64, x2: f64, lengthscale: f64) -> f64 {
    let d = (x - x2) / lengthscale;
    (-0.5 * d * d).exp()
}

/// Unit-amplitude squared-exponential kernel `exp(-((x-x2)/l)^2 / 2)`.
/// Amplitude is deliberately fixed at 1: downstream mixture weights carry
/// the output scale.
pub fn se_kernel(x: f64, x2: f64, lengthscale: f64) -> Result<f64> {
    if !(lengthscale.is_finite() && lengthscale > 0.0) {
        return Err(Error::Config(format!(
            "lengthscale must be positive and finite, got {lengthscale}"
        )));
    }
    if !x.is_finite() || !x2.is_finite() {
        return Err(Error::Input("kernel inputs must be finite".into()));
    }
    Ok(se_value(x, x2, lengthscale))
}

/// d/dx of `se_kernel(x, x2, l)`: `-((x - x2)/l^2) * k(x, x2)`.
pub fn se_kernel_input_grad(x: f64, x2: f64, lengthscale: f64) -> Result<f64> {
    let k = se_kernel(x, x2, lengthscale)?;
    Ok(-((x - x2) / (lengthscale * lengthscale)) * k)
}

/// Gram matrix of the squared-exponential kernel over `xs`, with the nugget
/// added on the diagonal.
pub fn gram(xs: &[f64], hyper: &KernelHyper) -> Result<DMatrix<f64>> {
    hyper.validate()?;
    if xs.iter().any(|v| !v.is_finite()) {
        return Err(Error::Input("kernel inputs must be finite".into()));
    }
    let n = xs.len();
    let mut k = DMatrix::zeros(n, n);
    for i in 0..n {
        k[(i, i)] = 1.0 + hyper.nugget;
        for j in 0..i {
            let v = se_value(xs[i], xs[j], hyper.lengthscale);
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    Ok(k)
}

/// Lower-triangular Cholesky factor together with the jitter that was needed
/// to get it.
#[derive(Debug, Clone)]
pub struct CholFactor {
    pub l: DMatrix<f64>,
    pub jitter: f64,
}

impl CholFactor {
    pub fn dim(&self) -> usize {
        self.l.nrows()
    }

    pub fn log_det(&self) -> f64 {
        2.0 * self.l.diagonal().iter().map(|v| v.ln()).sum::<f64>()
    }

    /// Solve `K x = b` via the two triangular systems.
    pub fn solve_vec(&self, b: &DVector<f64>) -> DVector<f64> {
        let y = self
            .l
            .solve_lower_triangular(b)
            .expect("cholesky factor has positive diagonal");
        self.l
            .transpose()
            .solve_upper_triangular(&y)
            .expect("cholesky factor has positive diagonal")
    }

    /// Solve `K X = B` column-wise.
    pub fn solve_mat(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        let y = self
            .l
            .solve_lower_triangular(b)
            .expect("cholesky factor has positive diagonal");
        self.l
            .transpose()
            .solve_upper_triangular(&y)
            .expect("cholesky factor has positive diagonal")
    }

    /// Dense inverse of `K`; used where a full matrix of solve results is
    /// needed anyway.
    pub fn inverse(&self) -> DMatrix<f64> {
        self.solve_mat(&DMatrix::identity(self.dim(), self.dim()))
    }
}

fn try_chol(k: &DMatrix<f64>, jitter: f64) -> std::result::Result<DMatrix<f64>, (usize, f64)> {
    let n = k.nrows();
    let mut l = DMatrix::zeros(n, n);
    for j in 0..n {
        let mut s = k[(j, j)] + jitter;
        for t in 0..j {
            s -= l[(j, t)] * l[(j, t)];
        }
        if !(s.is_finite() && s > 0.0) {
            return Err((j, s));
        }
        let d = s.sqrt();
        l[(j, j)] = d;
        for i in (j + 1)..n {
            let mut v = k[(i, j)];
            for t in 0..j {
                v -= l[(i, t)] * l[(j, t)];
            }
            l[(i, j)] = v / d;
        }
    }
    Ok(l)
}

/// Cholesky factorization for positive semi-definite matrices. Tries the
/// matrix as given, then escalates diagonal jitter geometrically from 1e-10
/// to 1e-4; the jitter that succeeded is reported in the factor. A matrix
/// that still fails at the largest jitter yields a numerical error naming the
/// failing pivot.
pub fn chol_psd(k: &DMatrix<f64>) -> Result<CholFactor> {
    if k.nrows() != k.ncols() {
        return Err(Error::Input(format!(
            "matrix must be square, got {}x{}",
            k.nrows(),
            k.ncols()
        )));
    }
    let mut worst_asym = 0.0_f64;
    for i in 0..k.nrows() {
        if !k[(i, i)].is_finite() {
            return Err(Error::Input("matrix contains a non-finite value".into()));
        }
        for j in 0..i {
            if !k[(i, j)].is_finite() || !k[(j, i)].is_finite() {
                return Err(Error::Input("matrix contains a non-finite value".into()));
            }
            worst_asym = worst_asym.max((k[(i, j)] - k[(j, i)]).abs());
        }
    }
    if worst_asym > 1e-8 {
        return Err(Error::Input(format!(
            "matrix is not symmetric (max |K_ij - K_ji| = {worst_asym:.3e})"
        )));
    }

    let mut jitter = 0.0;
    loop {
        let failure = match try_chol(k, jitter) {
            Ok(l) => return Ok(CholFactor { l, jitter }),
            Err(fail) => fail,
        };
        jitter = if jitter == 0.0 { 1e-10 } else { jitter * 10.0 };
        if jitter > 1e-4 {
            let (idx, pivot) = failure;
            return Err(Error::Numerical(format!(
                "cholesky failed at pivot {idx} (value {pivot:.6e}) even with jitter 1e-4"
            )));
        }
    }
}

/// Log density of `y` under N(0, K): `-y^T K^{-1} y / 2 - log|K|/2 - N log(2 pi)/2`.
/// `k` must already contain any nugget or noise terms.
pub fn log_marginal(y: &DVector<f64>, k: &DMatrix<f64>) -> Result<f64> {
    if y.len() != k.nrows() {
        return Err(Error::Input(format!(
            "y has length {} but K is {}x{}",
            y.len(),
            k.nrows(),
            k.ncols()
        )));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::Input("y contains a non-finite value".into()));
    }
    if y.is_empty() {
        return Ok(0.0);
    }
    let chol = chol_psd(k)?;
    let alpha = chol.solve_vec(y);
    Ok(-0.5 * y.dot(&alpha) - 0.5 * chol.log_det() - 0.5 * (y.len() as f64) * LOG_2PI)
}

/// Exact posterior over query points: mean vector and full covariance.
#[derive(Debug, Clone)]
pub struct GpPosterior {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

/// Posterior of a GP with constant prior mean `mean` and the given kernel,
/// conditioned on `(train_x, train_y)`. With `include_noise` the nugget is
/// added at the query diagonal too, so the covariance describes a new noisy
/// observation rather than the latent function value.
pub fn gp_posterior(
    train_x: &[f64],
    train_y: &[f64],
    query_x: &[f64],
    hyper: &KernelHyper,
    mean: f64,
    include_noise: bool,
) -> Result<GpPosterior> {
    hyper.validate()?;
    if train_x.len() != train_y.len() {
        return Err(Error::Input(format!(
            "{} training inputs but {} training outputs",
            train_x.len(),
            train_y.len()
        )));
    }
    if !mean.is_finite()
        || train_x.iter().chain(train_y).chain(query_x).any(|v| !v.is_finite())
    {
        return Err(Error::Input("inputs must be finite".into()));
    }
    let m = query_x.len();
    let query_nugget = if include_noise { hyper.nugget } else { 0.0 };
    let mut prior = DMatrix::from_fn(m, m, |i, j| {
        se_value(query_x[i], query_x[j], hyper.lengthscale)
    });
    for i in 0..m {
        prior[(i, i)] += query_nugget;
    }
    if train_x.is_empty() {
        return Ok(GpPosterior { mean: DVector::from_element(m, mean), cov: prior });
    }

    let k_train = gram(train_x, hyper)?;
    let chol = chol_psd(&k_train)?;
    let centered = DVector::from_fn(train_y.len(), |i, _| train_y[i] - mean);
    let alpha = chol.solve_vec(&centered);
    let cross = DMatrix::from_fn(m, train_x.len(), |i, j| {
        se_value(query_x[i], train_x[j], hyper.lengthscale)
    });
    let mean_vec = DVector::from_element(m, mean) + &cross * &alpha;
    let explained = &cross * chol.solve_mat(&cross.transpose());
    let mut cov = prior - explained;
    // Symmetrize and clamp the tiny negative diagonals round-off produces.
    for i in 0..m {
        for j in 0..i {
            let v = 0.5 * (cov[(i, j)] + cov[(j, i)]);
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
        if cov[(i, i)] < 0.0 {
            if cov[(i, i)] < -1e-10 {
                return Err(Error::Numerical(format!(
                    "posterior variance at query {} is {:.3e}",
                    i,
                    cov[(i, i)]
                )));
            }
            cov[(i, i)] = 0.0;
        }
    }
    Ok(GpPosterior { mean: mean_vec, cov })
}

/// Marginal likelihood of a zero-mean GP and its gradient with respect to
/// `(log lengthscale, log nugget)`.
fn log_marginal_and_grad(xs: &[f64], y: &DVector<f64>, hyper: &KernelHyper) -> Result<(f64, f64, f64)> {
    let n = xs.len();
    let k = gram(xs, hyper)?;
    let chol = chol_psd(&k)?;
    let alpha = chol.solve_vec(y);
    let value = -0.5 * y.dot(&alpha) - 0.5 * chol.log_det() - 0.5 * (n as f64) * LOG_2PI;
    let k_inv = chol.inverse();
    // dL/dtheta = tr((alpha alpha^T - K^{-1}) dK/dtheta) / 2
    let mut g_len = 0.0;
    let mut g_nug = 0.0;
    let ll2 = hyper.lengthscale * hyper.lengthscale;
    for i in 0..n {
        let a_ii = alpha[i] * alpha[i] - k_inv[(i, i)];
        g_nug += 0.5 * a_ii * hyper.nugget;
        for j in 0..n {
            if i == j {
                continue;
            }
            let a_ij = alpha[i] * alpha[j] - k_inv[(i, j)];
            let d2 = (xs[i] - xs[j]) * (xs[i] - xs[j]);
            let dk = se_value(xs[i], xs[j], hyper.lengthscale) * d2 / ll2;
            g_len += 0.5 * a_ij * dk;
        }
    }
    Ok((value, g_len, g_nug))
}

pub const LOG_LENGTHSCALE_BOUNDS: (f64, f64) = (-5.0, 5.0);
pub const LOG_NUGGET_BOUNDS: (f64, f64) = (-12.0, 2.0);

/// Fit `(lengthscale, nugget)` of a zero-mean GP by gradient ascent on the
/// log marginal likelihood in log-parameter space. Returns the fitted
/// hyperparameters and the final likelihood value. Callers are expected to
/// hand in centered/standardized observations.
pub fn fit_kernel_hyper(
    xs: &[f64],
    y: &DVector<f64>,
    init: &KernelHyper,
    steps: usize,
    learning_rate: f64,
) -> Result<(KernelHyper, f64)> {
    init.validate()?;
    if xs.len() != y.len() {
        return Err(Error::Input(format!(
            "{} inputs but {} outputs",
            xs.len(),
            y.len()
        )));
    }
    if !(learning_rate.is_finite() && learning_rate > 0.0) {
        return Err(Error::Config(format!(
            "learning rate must be positive, got {learning_rate}"
        )));
    }
    let clamp = |v: f64, (lo, hi): (f64, f64)| v.clamp(lo, hi);
    let mut log_len = clamp(init.lengthscale.ln(), LOG_LENGTHSCALE_BOUNDS);
    let mut log_nug = clamp(init.nugget.max(1e-12).ln(), LOG_NUGGET_BOUNDS);
    if steps == 0 {
        let hyper = KernelHyper { lengthscale: log_len.exp(), nugget: log_nug.exp() };
        let value = log_marginal(y, &gram(xs, &hyper)?)?;
        return Ok((hyper, value));
    }
    let start = KernelHyper { lengthscale: log_len.exp(), nugget: log_nug.exp() };
    let (mut value, mut g_len, mut g_nug) = log_marginal_and_grad(xs, y, &start)?;
    if !value.is_finite() {
        return Err(Error::Training(format!(
            "log marginal is {value} at lengthscale {} nugget {}",
            start.lengthscale, start.nugget
        )));
    }
    // Monotone ascent: a proposed step is halved until the likelihood does
    // not drop, so the fit can never dive past a ridge into the spiky
    // tiny-lengthscale regime the raw gradient points across.
    for _ in 0..steps {
        let mut step = learning_rate;
        let mut accepted = false;
        for _ in 0..30 {
            let cand_len = clamp(log_len + step * g_len, LOG_LENGTHSCALE_BOUNDS);
            let cand_nug = clamp(log_nug + step * g_nug, LOG_NUGGET_BOUNDS);
            let cand = KernelHyper { lengthscale: cand_len.exp(), nugget: cand_nug.exp() };
            match log_marginal_and_grad(xs, y, &cand) {
                Ok((v, gl, gn)) if v.is_finite() && v >= value => {
                    log_len = cand_len;
                    log_nug = cand_nug;
                    value = v;
                    g_len = gl;
                    g_nug = gn;
                    accepted = true;
                    break;
                }
                // A drop or a numerical failure both mean the step was too
                // long; a genuinely bad region just keeps rejecting.
                _ => step *= 0.5,
            }
        }
        if !accepted {
            break;
        }
    }
    let hyper = KernelHyper { lengthscale: log_len.exp(), nugget: log_nug.exp() };
    Ok((hyper, value))
}
