//! Slice sampling: a univariate sampler with stepping-out and shrinkage, and
//! a multivariate hypercube variant that only shrinks. Both work on log
//! densities known up to a constant and draw exactly one new state per call,
//! so a chain is just repeated calls threading the same RNG.

use rand::Rng;

use crate::error::{Error, Result};

/// Minimum bracket extent before the shrinkage loop gives up.
const MIN_BRACKET: f64 = 1e-12;

#[derive(Debug, Clone, Copy)]
pub struct SliceConfig {
    /// Initial bracket width `w`.
    pub width: f64,
    /// Cap on stepping-out moves per side (univariate sampler only).
    pub max_stepouts: u32,
}

impl Default for SliceConfig {
    fn default() -> Self {
        SliceConfig { width: 1.0, max_stepouts: 64 }
    }
}

impl SliceConfig {
    fn validate(&self) -> Result<()> {
        if !(self.width.is_finite() && self.width > 0.0) {
            return Err(Error::Config(format!(
                "slice width must be positive and finite, got {}",
                self.width
            )));
        }
        Ok(())
    }
}

fn check_density_value(v: f64) -> Result<f64> {
    if v.is_nan() {
        return Err(Error::Numerical("log density evaluated to NaN".into()));
    }
    Ok(v)
}

/// One update of Neal-style univariate slice sampling: draw a level under the
/// density at `x0`, place a width-`w` bracket around `x0` uniformly at random,
/// step out until both ends are below the level (bounded by `max_stepouts`
/// per side), then shrink until a point on the slice is found.
pub fn slice_sample_1d<F, R>(
    mut log_density: F,
    x0: f64,
    config: &SliceConfig,
    rng: &mut R,
) -> Result<f64>
where
    F: FnMut(f64) -> f64,
    R: Rng + ?Sized,
{
    config.validate()?;
    if !x0.is_finite() {
        return Err(Error::Input(format!("initial point must be finite, got {x0}")));
    }
    let f0 = check_density_value(log_density(x0))?;
    if !f0.is_finite() {
        return Err(Error::Input(format!(
            "initial point has non-finite log density ({f0}); start inside the support"
        )));
    }
    let log_level = f0 + rng.random::<f64>().ln();

    let w = config.width;
    let mut lo = x0 - w * rng.random::<f64>();
    let mut hi = lo + w;
    for _ in 0..config.max_stepouts {
        if check_density_value(log_density(lo))? <= log_level {
            break;
        }
        lo -= w;
    }
    for _ in 0..config.max_stepouts {
        if check_density_value(log_density(hi))? <= log_level {
            break;
        }
        hi += w;
    }

    loop {
        let x1 = lo + rng.random::<f64>() * (hi - lo);
        let f1 = check_density_value(log_density(x1))?;
        if f1 > log_level {
            assert!(f1 >= log_level, "slice membership violated: {f1} < {log_level}");
            return Ok(x1);
        }
        if x1 < x0 {
            lo = x1;
        } else {
            hi = x1;
        }
        if hi - lo < MIN_BRACKET {
            return Err(Error::Numerical(format!(
                "slice bracket collapsed below {MIN_BRACKET:e} around x = {x0}"
            )));
        }
    }
}

/// One update of the hypercube slice sampler: an axis-aligned box of side
/// `w` is placed uniformly at random around `x0` and only ever shrinks —
/// no stepping out — with each coordinate shrinking toward `x0`
/// independently when a proposal misses the slice.
pub fn slice_sample_hypercube<F, R>(
    mut log_density: F,
    x0: &[f64],
    config: &SliceConfig,
    rng: &mut R,
) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> f64,
    R: Rng + ?Sized,
{
    config.validate()?;
    if x0.is_empty() {
        return Err(Error::Input("initial point must have at least one coordinate".into()));
    }
    if x0.iter().any(|v| !v.is_finite()) {
        return Err(Error::Input("initial point must be finite".into()));
    }
    let f0 = check_density_value(log_density(x0))?;
    if !f0.is_finite() {
        return Err(Error::Input(format!(
            "initial point has non-finite log density ({f0}); start inside the support"
        )));
    }
    let log_level = f0 + rng.random::<f64>().ln();

    let w = config.width;
    let dim = x0.len();
    let mut lo = Vec::with_capacity(dim);
    let mut hi = Vec::with_capacity(dim);
    for &c in x0 {
        let l = c - w * rng.random::<f64>();
        lo.push(l);
        hi.push(l + w);
    }

    let mut x1 = vec![0.0; dim];
    loop {
        for k in 0..dim {
            x1[k] = lo[k] + rng.random::<f64>() * (hi[k] - lo[k]);
        }
        let f1 = check_density_value(log_density(&x1))?;
        if f1 > log_level {
            assert!(f1 >= log_level, "slice membership violated: {f1} < {log_level}");
            return Ok(x1);
        }
        let mut widest = 0.0_f64;
        for k in 0..dim {
            if x1[k] < x0[k] {
                lo[k] = x1[k];
            } else {
                hi[k] = x1[k];
            }
            widest = widest.max(hi[k] - lo[k]);
        }
        if widest < MIN_BRACKET {
            return Err(Error::Numerical(format!(
                "hypercube slice box collapsed below {MIN_BRACKET:e}"
            )));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn std_normal(x: f64) -> f64 {
        -0.5 * x * x
    }

    #[test]
    fn same_seed_gives_same_draw() {
        let cfg = SliceConfig::default();
        let mut a = ChaCha8Rng::seed_from_u64(9);
        let mut b = ChaCha8Rng::seed_from_u64(9);
        let xa = slice_sample_1d(std_normal, 0.3, &cfg, &mut a).unwrap();
        let xb = slice_sample_1d(std_normal, 0.3, &cfg, &mut b).unwrap();
        assert_eq!(xa, xb);
    }

    #[test]
    fn stays_inside_a_bounded_support() {
        let cfg = SliceConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let target =
            |x: f64| if (0.0..1.0).contains(&x) { 0.0 } else { f64::NEG_INFINITY };
        let mut x = 0.5;
        for _ in 0..500 {
            x = slice_sample_1d(target, x, &cfg, &mut rng).unwrap();
            assert!((0.0..1.0).contains(&x));
        }
    }

    #[test]
    fn rejects_start_outside_support() {
        let cfg = SliceConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let target = |x: f64| if x > 0.0 { 0.0 } else { f64::NEG_INFINITY };
        let err = slice_sample_1d(target, -1.0, &cfg, &mut rng).unwrap_err();
        assert!(matches!(err, Error::Input(_)));
    }

    #[test]
    fn nan_density_is_a_numerical_error() {
        let cfg = SliceConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let err = slice_sample_1d(|_| f64::NAN, 0.0, &cfg, &mut rng).unwrap_err();
        assert!(matches!(err, Error::Numerical(_)));
    }

    #[test]
    fn degenerate_target_collapses_the_bracket() {
        // Positive density only exactly at x0: every proposal misses, the
        // bracket shrinks to nothing, and the sampler reports it.
        let cfg = SliceConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let target = |x: f64| if x == 0.0 { 0.0 } else { f64::NEG_INFINITY };
        let err = slice_sample_1d(target, 0.0, &cfg, &mut rng).unwrap_err();
        assert!(matches!(err, Error::Numerical(_)));
    }

    #[test]
    fn hypercube_respects_box_support() {
        let cfg = SliceConfig { width: 0.8, max_stepouts: 0 };
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let target = |x: &[f64]| {
            if x.iter().all(|v| (-1.0..1.0).contains(v)) {
                -x.iter().map(|v| v * v).sum::<f64>()
            } else {
                f64::NEG_INFINITY
            }
        };
        let mut x = vec![0.0, 0.0, 0.0];
        for _ in 0..300 {
            x = slice_sample_hypercube(target, &x, &cfg, &mut rng).unwrap();
            assert!(x.iter().all(|v| (-1.0..1.0).contains(v)));
        }
    }

    #[test]
    fn hypercube_rejects_empty_point() {
        let cfg = SliceConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(slice_sample_hypercube(|_| 0.0, &[], &cfg, &mut rng).is_err());
    }
}
