//! Series-level operations: bootstrap resampling and the turning-point
//! randomness test.

use alloc::vec::Vec;

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::special::normal_sf;
use super::{Df, StatsError, TestResult};

pub(crate) fn uniform_index(rng: &mut ChaCha8Rng, len: usize) -> usize {
    debug_assert!(len > 0);
    let len = len as u64;
    let bound = u64::MAX - u64::MAX % len;
    loop {
        let v = rng.next_u64();
        if v < bound {
            return (v % len) as usize;
        }
    }
}

/// Draw `n_out` samples uniformly with replacement, turning an autocorrelated
/// series into an exchangeable one. Deterministic per seed.
pub fn bootstrap_iid(series: &[f64], n_out: usize, seed: u64) -> Result<Vec<f64>, StatsError> {
    if series.is_empty() {
        return Err(StatsError::EmptySeries);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..n_out)
        .map(|_| series[uniform_index(&mut rng, series.len())])
        .collect())
}

/// Count interior turning points and compare against the iid expectation
/// `2(n-2)/3` with variance `(16n-29)/90`, two-sided normal p-value.
///
/// Ties are broken by an infinitesimal index-ordered jitter: of two equal
/// values the later one counts as larger, so every consecutive difference
/// has a definite sign.
pub fn turning_point_test(series: &[f64]) -> Result<TestResult, StatsError> {
    let n = series.len();
    if n < 20 {
        return Err(StatsError::SeriesTooShort { needed: 20, got: n });
    }
    let rising = |i: usize, j: usize| -> bool {
        // sign of x[j] - x[i] for i < j with index tie-break
        series[j] > series[i] || series[j] == series[i]
    };
    let mut turning_points = 0u64;
    for i in 1..n - 1 {
        let up_before = rising(i - 1, i);
        let up_after = rising(i, i + 1);
        if up_before != up_after {
            turning_points += 1;
        }
    }
    let nf = n as f64;
    let expected = 2.0 * (nf - 2.0) / 3.0;
    let variance = (16.0 * nf - 29.0) / 90.0;
    let z = (turning_points as f64 - expected) / libm::sqrt(variance);
    let p = 2.0 * normal_sf(libm::fabs(z));
    Ok(TestResult {
        statistic: turning_points as f64,
        p_value: p.min(1.0),
        df: Df::None,
    })
}
