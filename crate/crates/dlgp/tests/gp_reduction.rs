//! With one output, one identity feature, a unit mixture weight, and zero
//! bias, the deep-feature model is exactly a single squared-exponential GP
//! whose effective nugget is the kernel nugget plus the squared observation
//! noise. `predict` must reproduce the standalone GP posterior to tight
//! absolute tolerance on random datasets.

use dlgp::data::{Standardization, TrainingDataset};
use dlgp::gp::{gp_posterior, KernelHyper};
use dlgp::model::{
    CovarianceMode, DlgpModel, OutputTransform, PredictOptions, DEFAULT_DENSE_CAP,
};
use dlgp::net::NetworkParams;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TOL: f64 = 1e-8;

fn single_gp_model(lengthscale: f64, nugget: f64, noise: f64) -> DlgpModel {
    DlgpModel {
        network: NetworkParams::identity(1).unwrap(),
        mixture: DMatrix::from_element(1, 1, 1.0),
        bias: DVector::zeros(1),
        output_noise: DVector::from_element(1, noise),
        kernel_hypers: vec![KernelHyper { lengthscale, nugget }],
        stats: Standardization::identity(1, 1),
        output_transform: OutputTransform::None,
        covariance_mode: CovarianceMode::Full,
        dense_cap: DEFAULT_DENSE_CAP,
    }
}

#[test]
fn single_output_identity_feature_reduces_to_plain_gp() {
    let mut worst = 0.0_f64;
    for case in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(9_000 + case);
        let n = rng.random_range(1..=20);
        let lengthscale = rng.random_range(0.3..3.0);
        let nugget = rng.random_range(1e-6..0.3);
        let noise = rng.random_range(0.05..1.0);

        let xs: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
        let ys: Vec<f64> = xs
            .iter()
            .map(|&x| (1.3 * x).sin() + 0.3 * rng.random_range(-1.0..1.0))
            .collect();
        let queries: Vec<f64> = (0..5).map(|_| rng.random_range(-4.0..4.0)).collect();

        let model = single_gp_model(lengthscale, nugget, noise);
        let data = TrainingDataset::new(
            DMatrix::from_vec(n, 1, xs.clone()),
            DMatrix::from_vec(n, 1, ys.clone()),
        )
        .unwrap();
        let query_mat = DMatrix::from_vec(queries.len(), 1, queries.clone());
        let preds = model
            .predict(&data, &query_mat, &PredictOptions { include_noise: true, level: 0.90 })
            .unwrap();

        // The observation noise folds into the nugget of an equivalent
        // standalone GP describing a new noisy observation.
        let folded = KernelHyper { lengthscale, nugget: nugget + noise * noise };
        let oracle = gp_posterior(&xs, &ys, &queries, &folded, 0.0, true).unwrap();

        for (m, pred) in preds.iter().enumerate() {
            let d_mean = (pred.mean[0] - oracle.mean[m]).abs();
            let d_var = (pred.covariance[(0, 0)] - oracle.cov[(m, m)]).abs();
            let sd = oracle.cov[(m, m)].max(0.0).sqrt();
            let d_lo = (pred.lo[0] - (oracle.mean[m] - 1.645 * sd)).abs();
            let d_hi = (pred.hi[0] - (oracle.mean[m] + 1.645 * sd)).abs();
            worst = worst.max(d_mean).max(d_var).max(d_lo).max(d_hi);
            assert!(
                d_mean <= TOL && d_var <= TOL && d_lo <= TOL && d_hi <= TOL,
                "case {case} query {m}: mean diff {d_mean:.3e}, var diff {d_var:.3e}, \
                 lo diff {d_lo:.3e}, hi diff {d_hi:.3e}"
            );
        }
    }
    eprintln!("single-GP reduction: worst abs deviation {worst:.3e} over 100 datasets");
}

#[test]
fn reduction_holds_in_per_output_mode_too() {
    // With a single output the per-output covariance equals the full one, so
    // the same oracle must match.
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let n = 12;
    let xs: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
    let ys: Vec<f64> = xs.iter().map(|&x| x * x - 1.0).collect();
    let queries = vec![-1.7, 0.0, 2.3];

    let mut model = single_gp_model(1.1, 0.05, 0.3);
    model.covariance_mode = CovarianceMode::PerOutput;
    let data = TrainingDataset::new(
        DMatrix::from_vec(n, 1, xs.clone()),
        DMatrix::from_vec(n, 1, ys.clone()),
    )
    .unwrap();
    let preds = model
        .predict(
            &data,
            &DMatrix::from_vec(queries.len(), 1, queries.clone()),
            &PredictOptions::default(),
        )
        .unwrap();
    let folded = KernelHyper { lengthscale: 1.1, nugget: 0.05 + 0.3 * 0.3 };
    let oracle = gp_posterior(&xs, &ys, &queries, &folded, 0.0, true).unwrap();
    for (m, pred) in preds.iter().enumerate() {
        assert!((pred.mean[0] - oracle.mean[m]).abs() <= TOL);
        assert!((pred.covariance[(0, 0)] - oracle.cov[(m, m)]).abs() <= TOL);
    }
}
