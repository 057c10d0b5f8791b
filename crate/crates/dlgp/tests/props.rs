//! Randomized invariants over the numeric building blocks. Each property is
//! something a caller is allowed to rely on regardless of inputs: kernel
//! bounds, factorization round-trips, design stratification, quantile
//! monotonicity, loss orientation, coverage bounds, simulator shape, sampler
//! support, and split bookkeeping.

use dlgp::data::{
    simulate_epidemic, standardize, symmetric_lhs, ScenarioSpec, TrainingDataset,
};
use dlgp::gp::{chol_psd, gram, se_kernel, KernelHyper};
use dlgp::metrics::{interval_coverage, make_splits};
use dlgp::quantile::{
    augment_with_alpha, empirical_quantiles, pinball_mse_loss, quantile_crossing_fix,
};
use dlgp::sampler::{slice_sample_1d, SliceConfig};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

proptest! {
    #[test]
    fn se_kernel_is_symmetric_bounded_and_one_at_zero_distance(
        x in -50.0..50.0f64,
        x2 in -50.0..50.0f64,
        lengthscale in 0.05..20.0f64,
    ) {
        let k = se_kernel(x, x2, lengthscale).unwrap();
        let k_rev = se_kernel(x2, x, lengthscale).unwrap();
        prop_assert_eq!(k, k_rev);
        // Extreme scaled distances may underflow to exactly zero; that is
        // still inside the valid range.
        prop_assert!((0.0..=1.0).contains(&k));
        prop_assert_eq!(se_kernel(x, x, lengthscale).unwrap(), 1.0);
    }

    #[test]
    fn gram_factorization_round_trips(
        xs in proptest::collection::vec(-5.0..5.0f64, 1..12),
        lengthscale in 0.1..5.0f64,
        nugget in 1e-6..0.5f64,
    ) {
        let hyper = KernelHyper { lengthscale, nugget };
        let k = gram(&xs, &hyper).unwrap();
        let chol = chol_psd(&k).unwrap();
        // Reconstruct through a solve: K * (K^{-1} b) must give back b.
        let b = DVector::from_fn(xs.len(), |i, _| (i as f64 * 0.7).sin());
        let back = &k * chol.solve_vec(&b);
        for i in 0..xs.len() {
            prop_assert!((back[i] - b[i]).abs() < 1e-7,
                "row {}: {} vs {}", i, back[i], b[i]);
        }
    }

    #[test]
    fn standardization_round_trips_outputs(
        raw in proptest::collection::vec((-1e3..1e3f64, -1e3..1e3f64), 2..20),
    ) {
        let n = raw.len();
        let theta = DMatrix::from_fn(n, 1, |i, _| raw[i].0);
        let y = DMatrix::from_fn(n, 1, |i, _| raw[i].1);
        let data = TrainingDataset::new(theta, y.clone()).unwrap();
        let (z, stats, _) = standardize(&data).unwrap();
        // The transform works on one output vector at a time.
        for i in 0..n {
            let back = stats
                .destandardize_output_vec(&DVector::from_element(1, z.y[(i, 0)]))
                .unwrap();
            prop_assert!((back[0] - y[(i, 0)]).abs() <= 1e-9 * (1.0 + y[(i, 0)].abs()));
        }
    }

    #[test]
    fn symmetric_lhs_is_stratified_in_unit_cube_and_mirrored(
        half in 1..12usize,
        d in 1..5usize,
        seed in 0..1000u64,
    ) {
        let m = 2 * half;
        let design = symmetric_lhs(m, d, seed).unwrap();
        for c in 0..d {
            let mut strata: Vec<usize> =
                (0..m).map(|r| (design[(r, c)] * m as f64).floor() as usize).collect();
            strata.sort_unstable();
            prop_assert_eq!(&strata[..], &(0..m).collect::<Vec<_>>()[..],
                "column {} misses a stratum", c);
        }
        // Reflection through the center maps the design onto itself.
        for r in 0..m {
            let mirrored: Vec<f64> = (0..d).map(|c| 1.0 - design[(r, c)]).collect();
            let found = (0..m).any(|r2| {
                (0..d).all(|c| (design[(r2, c)] - mirrored[c]).abs() < 1e-12)
            });
            prop_assert!(found, "row {} has no mirror partner", r);
        }
    }

    #[test]
    fn empirical_quantile_rows_never_cross(
        reps in proptest::collection::vec(
            proptest::collection::vec(-100.0..100.0f64, 6), 1..15),
        seed in 0..50u64,
    ) {
        let n = reps.len();
        let mat = DMatrix::from_fn(n, 6, |i, j| reps[i][j]);
        let mut levels = vec![0.1, 0.25, 0.5, 0.6, 0.9];
        // Shift the grid a little so ties and interpolation both occur.
        let offset = (seed as f64) * 1e-3;
        for q in levels.iter_mut() {
            *q += offset;
        }
        let qs = empirical_quantiles(&mat, &levels).unwrap();
        for t in 0..6 {
            for k in 1..levels.len() {
                prop_assert!(qs[(k, t)] >= qs[(k - 1, t)]);
            }
        }
    }

    #[test]
    fn pinball_component_is_nonnegative_and_balances_at_its_minimizer(
        ys in proptest::collection::vec(-10.0..10.0f64, 20),
        q in 0.05..0.95f64,
    ) {
        let pin = |y: f64, c: f64| pinball_mse_loss(y, c, q).unwrap() - (y - c) * (y - c);
        for &y in &ys {
            prop_assert!(pin(y, ys[0]) >= 0.0);
        }
        // Scan the sample points as candidate constants; the minimizer's
        // below/above counts must bracket the mirrored level, i.e. the
        // summed pinball term is minimized at the empirical (1-q)-quantile.
        let total = |c: f64| ys.iter().map(|&y| pin(y, c)).sum::<f64>();
        let best = ys
            .iter()
            .copied()
            .min_by(|a, b| total(*a).total_cmp(&total(*b)))
            .unwrap();
        let n = ys.len() as f64;
        let below = ys.iter().filter(|&&y| y < best).count() as f64;
        let at_or_below = ys.iter().filter(|&&y| y <= best).count() as f64;
        prop_assert!(below <= (1.0 - q) * n + 1e-9);
        prop_assert!(at_or_below >= (1.0 - q) * n - 1e-9);
    }

    #[test]
    fn crossing_fix_sorts_without_changing_the_multiset(
        preds in proptest::collection::vec(-100.0..100.0f64, 1..12),
    ) {
        let fixed = quantile_crossing_fix(&preds);
        for w in fixed.windows(2) {
            prop_assert!(w[0] <= w[1]);
        }
        let mut expect = preds.clone();
        expect.sort_by(f64::total_cmp);
        prop_assert_eq!(fixed, expect);
    }

    #[test]
    fn coverage_is_a_fraction_and_grows_with_the_interval(
        pts in proptest::collection::vec((-10.0..10.0f64, 0.0..5.0f64), 1..20),
        widen in 0.0..5.0f64,
    ) {
        let n = pts.len();
        let y = DVector::from_fn(n, |i, _| pts[i].0);
        let lo = DVector::from_fn(n, |i, _| pts[i].0.round() - pts[i].1);
        let hi = DVector::from_fn(n, |i, _| pts[i].0.round() + pts[i].1);
        let c = interval_coverage(&y, &lo, &hi).unwrap();
        prop_assert!((0.0..=1.0).contains(&c));
        let lo_w = lo.map(|v| v - widen);
        let hi_w = hi.map(|v| v + widen);
        let c_w = interval_coverage(&y, &lo_w, &hi_w).unwrap();
        prop_assert!(c_w >= c);
    }

    #[test]
    fn simulated_trajectories_are_cumulative_nonnegative_and_finite(
        unit in proptest::collection::vec(0.0..1.0f64, 5),
        seed in 0..200u64,
    ) {
        let scenario = ScenarioSpec::epidemic_defaults();
        let cube = DMatrix::from_fn(1, 5, |_, c| unit[c]);
        let theta: Vec<f64> = scenario.scale_unit(&cube).unwrap().row(0).iter().copied().collect();
        let table = simulate_epidemic(&theta, &scenario, 3, 10, seed).unwrap();
        for row in &table.rows {
            prop_assert_eq!(row.trajectory.len(), 10);
            let mut prev = 0.0;
            for &v in &row.trajectory {
                prop_assert!(v.is_finite() && v >= prev);
                prev = v;
            }
        }
    }

    #[test]
    fn slice_samples_stay_inside_a_random_support(
        a in -5.0..0.0f64,
        width in 0.1..6.0f64,
        seed in 0..200u64,
    ) {
        let b = a + width;
        let target = move |x: f64| if (a..=b).contains(&x) { 0.0 } else { f64::NEG_INFINITY };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = a + 0.5 * width;
        for _ in 0..20 {
            x = slice_sample_1d(target, x, &SliceConfig::default(), &mut rng).unwrap();
            prop_assert!((a..=b).contains(&x));
        }
    }

    #[test]
    fn splits_partition_the_rows(
        n in 5..200usize,
        fraction in 0.2..0.9f64,
        k in 1..8usize,
        seed in 0..500u64,
    ) {
        let train_size = (fraction * n as f64).round() as usize;
        prop_assume!(train_size > 0 && train_size < n);
        let plan = make_splits(n, fraction, k, seed).unwrap();
        prop_assert_eq!(plan.splits.len(), k);
        for split in &plan.splits {
            prop_assert_eq!(split.train.len(), train_size);
            let mut all: Vec<usize> =
                split.train.iter().chain(split.test.iter()).copied().collect();
            all.sort_unstable();
            prop_assert_eq!(&all[..], &(0..n).collect::<Vec<_>>()[..]);
        }
    }

    #[test]
    fn augmentation_repeats_each_design_point_once_per_level(
        m in 1..8usize,
        d in 1..4usize,
        t in 1..6usize,
        seed in 0..100u64,
    ) {
        let mut rng_state = seed;
        let mut next = move || {
            rng_state = rng_state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (rng_state >> 11) as f64 / (1u64 << 53) as f64
        };
        let designs = DMatrix::from_fn(m, d, |_, _| next());
        let levels = [0.1, 0.5, 0.9];
        let trajs: Vec<DMatrix<f64>> =
            (0..m).map(|_| DMatrix::from_fn(levels.len(), t, |_, _| next())).collect();
        let design = augment_with_alpha(&designs, &trajs, &levels).unwrap();
        prop_assert_eq!(design.rows.len(), m * levels.len());
        for (r, row) in design.rows.iter().enumerate() {
            let block = r / levels.len();
            let level = r % levels.len();
            prop_assert_eq!(row.alpha, levels[level]);
            for c in 0..d {
                prop_assert_eq!(row.theta[c], designs[(block, c)]);
            }
        }
    }
}
