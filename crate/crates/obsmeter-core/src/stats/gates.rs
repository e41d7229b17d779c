//! Assumption gates run before the analysis of variance: a skewness/kurtosis
//! omnibus normality test per treatment group and a median-centered Levene
//! test plus variance ratio across groups.

use alloc::vec::Vec;

use libm::{cbrt, fabs, log, pow, sqrt};

use super::special::{chi_squared_sf_df2, f_sf};
use super::{mean, sample_variance, Df, StatsError, TestResult};

/// D'Agostino-Pearson K-squared omnibus test. Combines the transformed
/// sample skewness and kurtosis into a statistic that is chi-squared with
/// two degrees of freedom under normality.
///
/// A zero-variance group trivially fails the gate (statistic infinite,
/// p = 0), which routes the pipeline to the permutation branch.
pub fn normality_gate(group: &[f64]) -> Result<TestResult, StatsError> {
    let n = group.len();
    if n < 20 {
        return Err(StatsError::SeriesTooShort { needed: 20, got: n });
    }
    let nf = n as f64;
    let m = mean(group);
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for x in group {
        let d = x - m;
        m2 += d * d;
        m3 += d * d * d;
        m4 += d * d * d * d;
    }
    m2 /= nf;
    m3 /= nf;
    m4 /= nf;
    if m2 <= 0.0 {
        return Ok(TestResult {
            statistic: f64::INFINITY,
            p_value: 0.0,
            df: Df::One(2.0),
        });
    }

    // skewness transform (D'Agostino)
    let g1 = m3 / pow(m2, 1.5);
    let y = g1 * sqrt((nf + 1.0) * (nf + 3.0) / (6.0 * (nf - 2.0)));
    let beta2 = 3.0 * (nf * nf + 27.0 * nf - 70.0) * (nf + 1.0) * (nf + 3.0)
        / ((nf - 2.0) * (nf + 5.0) * (nf + 7.0) * (nf + 9.0));
    let w2 = -1.0 + sqrt(2.0 * (beta2 - 1.0));
    let delta = 1.0 / sqrt(0.5 * log(w2));
    let alpha = sqrt(2.0 / (w2 - 1.0));
    let y = if y == 0.0 { 1e-300 } else { y / alpha };
    let z1 = delta * log(y + sqrt(y * y + 1.0));

    // kurtosis transform (Anscombe-Glynn)
    let b2 = m4 / (m2 * m2);
    let eb2 = 3.0 * (nf - 1.0) / (nf + 1.0);
    let vb2 = 24.0 * nf * (nf - 2.0) * (nf - 3.0) / ((nf + 1.0) * (nf + 1.0) * (nf + 3.0) * (nf + 5.0));
    let x = (b2 - eb2) / sqrt(vb2);
    let sqrt_beta1 = 6.0 * (nf * nf - 5.0 * nf + 2.0) / ((nf + 7.0) * (nf + 9.0))
        * sqrt(6.0 * (nf + 3.0) * (nf + 5.0) / (nf * (nf - 2.0) * (nf - 3.0)));
    let a = 6.0 + 8.0 / sqrt_beta1 * (2.0 / sqrt_beta1 + sqrt(1.0 + 4.0 / (sqrt_beta1 * sqrt_beta1)));
    let term1 = 1.0 - 2.0 / (9.0 * a);
    let denom = 1.0 + x * sqrt(2.0 / (a - 4.0));
    let term2 = if denom < 0.0 {
        -cbrt((1.0 - 2.0 / a) / -denom)
    } else {
        cbrt((1.0 - 2.0 / a) / denom)
    };
    let z2 = (term1 - term2) / sqrt(2.0 / (9.0 * a));

    let k2 = z1 * z1 + z2 * z2;
    Ok(TestResult {
        statistic: k2,
        p_value: chi_squared_sf_df2(k2),
        df: Df::One(2.0),
    })
}

/// Levene test statistic (median-centered, Brown-Forsythe flavour) plus the
/// max/min sample variance ratio across treatment groups.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeteroskedasticityReport {
    pub levene: TestResult,
    pub variance_ratio: f64,
}

fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

pub fn heteroskedasticity_gate(groups: &[&[f64]]) -> Result<HeteroskedasticityReport, StatsError> {
    if groups.len() < 2 {
        return Err(StatsError::FewerThanTwoGroups);
    }
    for g in groups {
        if g.len() < 2 {
            return Err(StatsError::SeriesTooShort { needed: 2, got: g.len() });
        }
    }
    let k = groups.len() as f64;
    let total: usize = groups.iter().map(|g| g.len()).sum();
    let nf = total as f64;

    // absolute deviations from each group's median
    let mut z_groups: Vec<Vec<f64>> = Vec::with_capacity(groups.len());
    for g in groups {
        let mut sorted = g.to_vec();
        sorted.sort_unstable_by(|a, b| a.partial_cmp(b).expect("finite data"));
        let med = median(&sorted);
        z_groups.push(g.iter().map(|x| fabs(x - med)).collect());
    }
    let z_means: Vec<f64> = z_groups.iter().map(|z| mean(z)).collect();
    let z_grand = z_groups.iter().flatten().sum::<f64>() / nf;

    let ss_between: f64 = z_groups
        .iter()
        .zip(&z_means)
        .map(|(z, zm)| z.len() as f64 * (zm - z_grand) * (zm - z_grand))
        .sum();
    let ss_within: f64 = z_groups
        .iter()
        .zip(&z_means)
        .map(|(z, zm)| z.iter().map(|v| (v - zm) * (v - zm)).sum::<f64>())
        .sum();

    let df1 = k - 1.0;
    let df2 = nf - k;
    let statistic = if ss_within == 0.0 {
        if ss_between == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        (ss_between / df1) / (ss_within / df2)
    };
    let p_value = if statistic.is_infinite() {
        0.0
    } else {
        f_sf(statistic, df1, df2)
    };

    let variances: Vec<f64> = groups.iter().map(|g| sample_variance(g)).collect();
    let max_v = variances.iter().cloned().fold(f64::MIN, f64::max);
    let min_v = variances.iter().cloned().fold(f64::MAX, f64::min);
    let variance_ratio = if min_v <= 0.0 { f64::INFINITY } else { max_v / min_v };

    Ok(HeteroskedasticityReport {
        levene: TestResult {
            statistic,
            p_value,
            df: Df::Two(df1, df2),
        },
        variance_ratio,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * b.abs().max(1e-12)
    }

    #[test]
    fn normality_matches_reference_implementation() {
        // frozen normal draws with known omnibus statistic
        let xs = [
            7.15235, 12.527457, 8.258677, 9.481654, 9.849313, 8.518231, 7.264415, 11.297786,
            10.722116, 6.094274, 14.694819, 11.936994, 8.481226, 11.804397, 9.066094, 9.878621,
            11.577689, 7.486664, 11.151715, 12.797958, 12.644596, 9.400603, 11.805839, 6.756835,
            9.683621, 10.898968, 7.312798, 9.836625, 13.44948, 15.236319,
        ];
        let r = normality_gate(&xs).unwrap();
        assert!(close(r.statistic, 0.7143249683570284, 1e-10), "k2={}", r.statistic);
        assert!(close(r.p_value, 0.6996588050120542, 1e-10), "p={}", r.p_value);
    }

    #[test]
    fn heavy_skew_rejected() {
        // frozen exponential draws
        let xs = [
            0.162366, 1.698813, 2.371805, 3.19287, 1.281325, 1.671801, 1.088224, 2.146748,
            0.702618, 0.088847, 0.43398, 2.399746, 1.087537, 3.260049, 0.579917, 0.502018,
            0.508296, 0.402321, 0.009372, 0.786646, 0.117334, 0.065405, 1.038062, 0.054279,
            0.912369, 1.039891, 0.458251, 1.19488, 4.125331, 2.134233, 0.386032, 0.086451,
            1.348715, 0.754572, 1.200541, 0.150635, 1.354366, 0.555525, 0.159277, 0.169183,
        ];
        let r = normality_gate(&xs).unwrap();
        assert!(close(r.statistic, 13.86396257074901, 1e-10));
        assert!(r.p_value < 0.001);
    }

    #[test]
    fn short_group_guarded() {
        assert!(matches!(
            normality_gate(&[1.0; 10]),
            Err(StatsError::SeriesTooShort { .. })
        ));
    }

    #[test]
    fn constant_group_fails_gate() {
        let r = normality_gate(&[2.0; 30]).unwrap();
        assert_eq!(r.p_value, 0.0);
    }

    #[test]
    fn levene_matches_reference_implementation() {
        let g1 = [12.1, 11.8, 12.5, 12.0, 11.9, 12.3, 12.2, 11.7];
        let g2 = [13.0, 12.2, 14.1, 11.5, 12.8, 13.5, 12.1, 13.9];
        let g3 = [10.0, 15.0, 9.5, 14.2, 11.1, 13.3, 10.7, 14.8];
        let r = heteroskedasticity_gate(&[&g1, &g2, &g3]).unwrap();
        assert!(close(r.levene.statistic, 27.819764590485537, 1e-10));
        assert!(close(r.levene.p_value, 1.2489581889639595e-06, 1e-8));
        assert!(close(r.variance_ratio, 70.72681704260651, 1e-10));
    }

    #[test]
    fn identical_groups_have_unit_ratio() {
        let g = [1.0, 2.0, 3.0, 4.0, 5.0];
        let r = heteroskedasticity_gate(&[&g, &g]).unwrap();
        assert_eq!(r.variance_ratio, 1.0);
        assert!(r.levene.p_value > 0.99);
    }

    #[test]
    fn one_group_is_error() {
        let g = [1.0, 2.0];
        assert_eq!(
            heteroskedasticity_gate(&[&g]).unwrap_err(),
            StatsError::FewerThanTwoGroups
        );
    }
}
