//! `predict` against brute-force conditioning of the joint Gaussian over all
//! (output, row) pairs. The oracle assembles the stacked covariance over
//! training rows plus one query row, partitions it, and conditions with a
//! hand-rolled Gauss-elimination solver — no shared factorization code with
//! the library path.

use dlgp::data::{Standardization, TrainingDataset};
use dlgp::gp::KernelHyper;
use dlgp::model::{
    joint_covariance, CovarianceMode, DlgpModel, OutputTransform, PredictOptions,
    DEFAULT_DENSE_CAP,
};
use dlgp::net::{Activation, LayerSpec, NetworkParams};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TOL: f64 = 1e-8;

/// Solve `a x = b` for several right-hand sides by Gaussian elimination with
/// partial pivoting, on plain nested Vecs.
fn gauss_solve(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = a.len();
    let m = b[0].len();
    let mut aug: Vec<Vec<f64>> = (0..n)
        .map(|i| a[i].iter().copied().chain(b[i].iter().copied()).collect())
        .collect();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| aug[i][col].abs().total_cmp(&aug[j][col].abs()))
            .unwrap();
        aug.swap(col, pivot);
        let p = aug[col][col];
        assert!(p.abs() > 1e-14, "singular matrix in oracle solve");
        for row in 0..n {
            if row == col {
                continue;
            }
            let f = aug[row][col] / p;
            if f == 0.0 {
                continue;
            }
            for k in col..n + m {
                aug[row][k] -= f * aug[col][k];
            }
        }
    }
    (0..n).map(|i| (0..m).map(|j| aug[i][n + j] / aug[i][i]).collect()).collect()
}

#[test]
fn predict_matches_brute_force_joint_conditioning() {
    let mut worst = 0.0_f64;
    for case in 0..50u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(40_000 + case);
        let n = rng.random_range(1..=8usize);
        let p = rng.random_range(1..=3usize);
        let q = rng.random_range(1..=2usize);
        let d = rng.random_range(1..=3usize);

        let network = NetworkParams::init(
            d,
            &[
                LayerSpec { width: 4, activation: Activation::Tanh },
                LayerSpec { width: q, activation: Activation::Tanh },
            ],
            500 + case,
        )
        .unwrap();
        let model = DlgpModel {
            network,
            mixture: DMatrix::from_fn(p, q, |_, _| rng.random_range(-1.0..1.0)),
            bias: DVector::from_fn(p, |_, _| rng.random_range(-0.5..0.5)),
            output_noise: DVector::from_fn(p, |_, _| rng.random_range(0.1..1.0)),
            kernel_hypers: (0..q)
                .map(|_| KernelHyper {
                    lengthscale: rng.random_range(0.5..2.5),
                    nugget: rng.random_range(1e-4..0.2),
                })
                .collect(),
            stats: Standardization::identity(d, p),
            output_transform: OutputTransform::None,
            covariance_mode: CovarianceMode::Full,
            dense_cap: DEFAULT_DENSE_CAP,
        };

        let theta = DMatrix::from_fn(n, d, |_, _| rng.random_range(-2.0..2.0));
        let y = DMatrix::from_fn(n, p, |_, _| rng.random_range(-2.0..2.0));
        let data = TrainingDataset::new(theta.clone(), y.clone()).unwrap();
        let query = DMatrix::from_fn(1, d, |_, _| rng.random_range(-2.0..2.0));

        let pred = &model
            .predict(&data, &query, &PredictOptions { include_noise: true, level: 0.90 })
            .unwrap()[0];

        // Oracle: stacked covariance over all rows (training plus query),
        // entry (i*rows + a, i2*rows + b), then Gaussian conditioning.
        let mut all_inputs = DMatrix::zeros(n + 1, d);
        for a in 0..n {
            for c in 0..d {
                all_inputs[(a, c)] = theta[(a, c)];
            }
        }
        for c in 0..d {
            all_inputs[(n, c)] = query[(0, c)];
        }
        let (psi_all, _) = model.network.forward(&all_inputs).unwrap();
        let c_all = joint_covariance(&psi_all, &model, true).unwrap();

        let rows = n + 1;
        let train_idx: Vec<usize> =
            (0..p).flat_map(|i| (0..n).map(move |a| i * rows + a)).collect();
        let query_idx: Vec<usize> = (0..p).map(|i| i * rows + n).collect();

        let c_tt: Vec<Vec<f64>> = train_idx
            .iter()
            .map(|&r| train_idx.iter().map(|&c| c_all[(r, c)]).collect())
            .collect();
        // Right-hand sides: the centered training observations and the
        // transposed cross block, solved in one elimination pass.
        let rhs: Vec<Vec<f64>> = train_idx
            .iter()
            .enumerate()
            .map(|(k, &r)| {
                let i = k / n;
                let a = k % n;
                let mut row = vec![y[(a, i)] - model.bias[i]];
                row.extend(query_idx.iter().map(|&qc| c_all[(r, qc)]));
                row
            })
            .collect();
        let solved = gauss_solve(&c_tt, &rhs);

        for i in 0..p {
            let mut mean = model.bias[i];
            for (k, &r) in train_idx.iter().enumerate() {
                let _ = r;
                mean += c_all[(query_idx[i], train_idx[k])] * solved[k][0];
            }
            let d_mean = (pred.mean[i] - mean).abs();
            worst = worst.max(d_mean);
            assert!(d_mean <= TOL, "case {case} output {i}: mean diff {d_mean:.3e}");
            for i2 in 0..p {
                let mut cov = c_all[(query_idx[i], query_idx[i2])];
                for (k, _) in train_idx.iter().enumerate() {
                    cov -= c_all[(query_idx[i], train_idx[k])] * solved[k][1 + i2];
                }
                let d_cov = (pred.covariance[(i, i2)] - cov).abs();
                worst = worst.max(d_cov);
                assert!(
                    d_cov <= TOL,
                    "case {case} outputs ({i},{i2}): covariance diff {d_cov:.3e}"
                );
            }
        }
    }
    eprintln!("joint conditioning: worst abs deviation {worst:.3e} over 50 instances");
}
