//! Balanced two-way analysis of variance with interaction, in the classical
//! parametric form and a permutation form whose p-values come from an
//! empirical null built by shuffling observations across all cells.

use alloc::vec::Vec;

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::series::uniform_index;
use super::special::f_sf;
use super::{significance_stars, Df, StatsError, TestResult};

/// A balanced a x b design with n observations per cell, stored row-major
/// as `data[(i * b + j) * n + k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct CellGrid {
    pub a: usize,
    pub b: usize,
    pub n: usize,
    data: Vec<f64>,
}

impl CellGrid {
    /// Build from per-cell sample lists indexed `cells[i][j]`. All cells
    /// must hold the same number of observations.
    pub fn new(cells: &[Vec<Vec<f64>>]) -> Result<CellGrid, StatsError> {
        let a = cells.len();
        if a < 2 {
            return Err(StatsError::BadDesign);
        }
        let b = cells[0].len();
        if b < 2 || cells.iter().any(|row| row.len() != b) {
            return Err(StatsError::BadDesign);
        }
        let n = cells[0][0].len();
        if n < 2 {
            return Err(StatsError::SeriesTooShort { needed: 2, got: n });
        }
        let mut data = Vec::with_capacity(a * b * n);
        for row in cells {
            for cell in row {
                if cell.len() != n {
                    return Err(StatsError::UnbalancedDesign);
                }
                data.extend_from_slice(cell);
            }
        }
        Ok(CellGrid { a, b, n, data })
    }

    pub fn cell(&self, i: usize, j: usize) -> &[f64] {
        let start = (i * self.b + j) * self.n;
        &self.data[start..start + self.n]
    }

    pub fn cell_mean(&self, i: usize, j: usize) -> f64 {
        self.cell(i, j).iter().sum::<f64>() / self.n as f64
    }

    pub fn values(&self) -> &[f64] {
        &self.data
    }

    pub fn total_len(&self) -> usize {
        self.data.len()
    }
}

/// One effect line of the ANOVA table.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EffectRow {
    pub df: f64,
    pub ss: f64,
    pub ms: f64,
    pub f: f64,
    pub p: f64,
}

impl EffectRow {
    pub fn stars(&self) -> &'static str {
        significance_stars(self.p)
    }
}

/// The SS/df/MS/F/p decomposition over both factors and their interaction.
#[derive(Debug, Clone, PartialEq)]
pub struct AnovaTable {
    pub factor_a: EffectRow,
    pub factor_b: EffectRow,
    pub interaction: EffectRow,
    pub residual_df: f64,
    pub residual_ss: f64,
    pub residual_ms: f64,
    pub ss_total: f64,
    /// Number of permutations behind the p-values; zero for the parametric
    /// form.
    pub permutations: u32,
}

impl AnovaTable {
    pub fn effects(&self) -> [(&'static str, &EffectRow); 3] {
        [
            ("factor_a", &self.factor_a),
            ("factor_b", &self.factor_b),
            ("interaction", &self.interaction),
        ]
    }
}

struct Decomposition {
    ss_a: f64,
    ss_b: f64,
    ss_ab: f64,
    ss_e: f64,
    ss_t: f64,
}

/// Centered two-pass sums of squares; exact additivity for balanced designs.
fn decompose(grid: &CellGrid) -> Decomposition {
    let (a, b, n) = (grid.a, grid.b, grid.n);
    let nf = n as f64;
    let total = grid.total_len() as f64;
    let grand = grid.values().iter().sum::<f64>() / total;

    let mut cell_means = Vec::with_capacity(a * b);
    for i in 0..a {
        for j in 0..b {
            cell_means.push(grid.cell_mean(i, j));
        }
    }
    let a_means: Vec<f64> = (0..a)
        .map(|i| (0..b).map(|j| cell_means[i * b + j]).sum::<f64>() / b as f64)
        .collect();
    let b_means: Vec<f64> = (0..b)
        .map(|j| (0..a).map(|i| cell_means[i * b + j]).sum::<f64>() / a as f64)
        .collect();

    let ss_a = (b as f64) * nf * a_means.iter().map(|m| (m - grand) * (m - grand)).sum::<f64>();
    let ss_b = (a as f64) * nf * b_means.iter().map(|m| (m - grand) * (m - grand)).sum::<f64>();
    let mut ss_ab = 0.0;
    for i in 0..a {
        for j in 0..b {
            let d = cell_means[i * b + j] - a_means[i] - b_means[j] + grand;
            ss_ab += d * d;
        }
    }
    ss_ab *= nf;
    let mut ss_e = 0.0;
    for i in 0..a {
        for j in 0..b {
            let m = cell_means[i * b + j];
            ss_e += grid.cell(i, j).iter().map(|x| (x - m) * (x - m)).sum::<f64>();
        }
    }
    let ss_t = grid
        .values()
        .iter()
        .map(|x| (x - grand) * (x - grand))
        .sum::<f64>();
    Decomposition { ss_a, ss_b, ss_ab, ss_e, ss_t }
}

struct FStats {
    f_a: f64,
    f_b: f64,
    f_ab: f64,
}

fn f_stats(grid: &CellGrid, values: &[f64]) -> FStats {
    // aggregated-sums route used inside the permutation loop
    let (a, b, n) = (grid.a, grid.b, grid.n);
    let nf = n as f64;
    let total = values.len() as f64;
    let mut cell_sums = alloc::vec![0.0f64; a * b];
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for (idx, v) in values.iter().enumerate() {
        cell_sums[idx / n] += v;
        sum += v;
        sum_sq += v * v;
    }
    let correction = sum * sum / total;
    let mut a_sums = alloc::vec![0.0f64; a];
    let mut b_sums = alloc::vec![0.0f64; b];
    for i in 0..a {
        for j in 0..b {
            a_sums[i] += cell_sums[i * b + j];
            b_sums[j] += cell_sums[i * b + j];
        }
    }
    let ss_a = a_sums.iter().map(|s| s * s).sum::<f64>() / (b as f64 * nf) - correction;
    let ss_b = b_sums.iter().map(|s| s * s).sum::<f64>() / (a as f64 * nf) - correction;
    let ss_cells = cell_sums.iter().map(|s| s * s).sum::<f64>() / nf - correction;
    let ss_ab = ss_cells - ss_a - ss_b;
    let ss_t = sum_sq - correction;
    let ss_e = ss_t - ss_cells;

    let df_a = (a - 1) as f64;
    let df_b = (b - 1) as f64;
    let df_ab = df_a * df_b;
    let df_e = (a * b * (n - 1)) as f64;
    let ms_e = ss_e / df_e;
    FStats {
        f_a: (ss_a / df_a) / ms_e,
        f_b: (ss_b / df_b) / ms_e,
        f_ab: (ss_ab / df_ab) / ms_e,
    }
}

fn build_table(grid: &CellGrid, p: (f64, f64, f64), permutations: u32) -> Result<AnovaTable, StatsError> {
    let d = decompose(grid);
    let (a, b, n) = (grid.a, grid.b, grid.n);
    let df_a = (a - 1) as f64;
    let df_b = (b - 1) as f64;
    let df_ab = df_a * df_b;
    let df_e = (a * b * (n - 1)) as f64;
    if d.ss_e <= 0.0 {
        return Err(StatsError::DegenerateVariance);
    }
    let ms_e = d.ss_e / df_e;
    let row = |ss: f64, df: f64, p: f64| EffectRow {
        df,
        ss,
        ms: ss / df,
        f: (ss / df) / ms_e,
        p,
    };
    Ok(AnovaTable {
        factor_a: row(d.ss_a, df_a, p.0),
        factor_b: row(d.ss_b, df_b, p.1),
        interaction: row(d.ss_ab, df_ab, p.2),
        residual_df: df_e,
        residual_ss: d.ss_e,
        residual_ms: ms_e,
        ss_total: d.ss_t,
        permutations,
    })
}

/// Classical balanced two-way ANOVA with interaction; p-values from the F
/// survival function.
pub fn anova_two_way(grid: &CellGrid) -> Result<AnovaTable, StatsError> {
    let d = decompose(grid);
    let (a, b, n) = (grid.a, grid.b, grid.n);
    let df_a = (a - 1) as f64;
    let df_b = (b - 1) as f64;
    let df_ab = df_a * df_b;
    let df_e = (a * b * (n - 1)) as f64;
    if d.ss_e <= 0.0 {
        return Err(StatsError::DegenerateVariance);
    }
    let ms_e = d.ss_e / df_e;
    let p = (
        f_sf((d.ss_a / df_a) / ms_e, df_a, df_e),
        f_sf((d.ss_b / df_b) / ms_e, df_b, df_e),
        f_sf((d.ss_ab / df_ab) / ms_e, df_ab, df_e),
    );
    build_table(grid, p, 0)
}

/// Permutation ANOVA: same decomposition, p-values from shuffling the raw
/// observations across all cells and recomputing all three F statistics per
/// permutation. The smallest attainable p is `1/(1 + n_perm)`.
pub fn permanova_two_way(grid: &CellGrid, n_perm: u32, seed: u64) -> Result<AnovaTable, StatsError> {
    if n_perm < 99 {
        return Err(StatsError::TooFewPermutations);
    }
    // fail on degenerate designs the same way the parametric form does
    if decompose(grid).ss_e <= 0.0 {
        return Err(StatsError::DegenerateVariance);
    }
    let observed = f_stats(grid, grid.values());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut shuffled: Vec<f64> = grid.values().to_vec();
    let mut ge_a = 0u32;
    let mut ge_b = 0u32;
    let mut ge_ab = 0u32;
    for _ in 0..n_perm {
        // Fisher-Yates
        for i in (1..shuffled.len()).rev() {
            let j = uniform_index(&mut rng, i + 1);
            shuffled.swap(i, j);
        }
        let fs = f_stats(grid, &shuffled);
        if fs.f_a >= observed.f_a {
            ge_a += 1;
        }
        if fs.f_b >= observed.f_b {
            ge_b += 1;
        }
        if fs.f_ab >= observed.f_ab {
            ge_ab += 1;
        }
    }
    let denom = (1 + n_perm) as f64;
    let p = (
        (1 + ge_a) as f64 / denom,
        (1 + ge_b) as f64 / denom,
        (1 + ge_ab) as f64 / denom,
    );
    build_table(grid, p, n_perm)
}

/// Convenience wrapper producing a [`TestResult`] view of one effect row.
pub fn effect_result(row: &EffectRow, residual_df: f64) -> TestResult {
    TestResult {
        statistic: row.f,
        p_value: row.p,
        df: Df::Two(row.df, residual_df),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * b.abs().max(1e-12)
    }

    fn reference_grid() -> CellGrid {
        CellGrid::new(&[
            vec![
                vec![10.1, 9.8, 10.3, 10.0],
                vec![10.4, 10.2, 10.6, 10.1],
            ],
            vec![
                vec![8.1, 8.4, 7.9, 8.2],
                vec![9.6, 9.3, 9.8, 9.5],
            ],
        ])
        .unwrap()
    }

    #[test]
    fn matches_reference_decomposition() {
        let t = anova_two_way(&reference_grid()).unwrap();
        assert!(close(t.factor_a.ss, 7.155624999999985, 1e-10));
        assert!(close(t.factor_b.ss, 2.8056249999999903, 1e-10));
        assert!(close(t.interaction.ss, 1.265625000000004, 1e-9));
        assert!(close(t.residual_ss, 0.5375000000000001, 1e-10));
        assert!(close(t.factor_a.f, 159.75348837209265, 1e-9));
        assert!(close(t.factor_a.p, 2.706385082414207e-08, 1e-7));
        assert!(close(t.factor_b.p, 4.1971085454575765e-06, 1e-7));
        assert!(close(t.interaction.p, 0.00018360279111114482, 1e-7));
        assert_eq!(t.factor_a.stars(), "***");
    }

    #[test]
    fn ss_additivity() {
        let t = anova_two_way(&reference_grid()).unwrap();
        let total = t.factor_a.ss + t.factor_b.ss + t.interaction.ss + t.residual_ss;
        assert!(close(total, t.ss_total, 1e-12));
    }

    #[test]
    fn four_by_two_df_structure() {
        // four levels of the first factor, two of the second
        let mut cells = Vec::new();
        for i in 0..4 {
            let mut row = Vec::new();
            for j in 0..2 {
                row.push((0..5).map(|k| (i * 7 + j * 3 + k) as f64 * 0.9 + ((k * i) as f64).sin()).collect());
            }
            cells.push(row);
        }
        let t = anova_two_way(&CellGrid::new(&cells).unwrap()).unwrap();
        assert_eq!(t.factor_a.df, 3.0);
        assert_eq!(t.factor_b.df, 1.0);
        assert_eq!(t.interaction.df, 3.0);
        assert_eq!(t.residual_df, (4 * 2 * 4) as f64);
    }

    #[test]
    fn unbalanced_rejected() {
        let cells = vec![
            vec![vec![1.0, 2.0], vec![1.0, 2.0, 3.0]],
            vec![vec![1.0, 2.0], vec![1.0, 2.0]],
        ];
        assert_eq!(CellGrid::new(&cells).unwrap_err(), StatsError::UnbalancedDesign);
    }

    #[test]
    fn degenerate_variance_rejected() {
        let cells = vec![
            vec![vec![1.0, 1.0], vec![2.0, 2.0]],
            vec![vec![3.0, 3.0], vec![4.0, 4.0]],
        ];
        let grid = CellGrid::new(&cells).unwrap();
        assert_eq!(anova_two_way(&grid).unwrap_err(), StatsError::DegenerateVariance);
        assert_eq!(
            permanova_two_way(&grid, 999, 1).unwrap_err(),
            StatsError::DegenerateVariance
        );
    }

    #[test]
    fn strong_effect_hits_permutation_floor() {
        let mut cells = Vec::new();
        for i in 0..2 {
            let mut row = Vec::new();
            for j in 0..2 {
                // factor A shifts the mean by many standard deviations
                row.push(
                    (0..20)
                        .map(|k| (i as f64) * 50.0 + (j + k) as f64 * 0.01)
                        .collect(),
                );
            }
            cells.push(row);
        }
        let t = permanova_two_way(&CellGrid::new(&cells).unwrap(), 999, 9).unwrap();
        assert_eq!(t.factor_a.p, 0.001);
        assert_eq!(t.factor_a.stars(), "***");
    }

    #[test]
    fn permanova_is_deterministic() {
        let grid = reference_grid();
        let a = permanova_two_way(&grid, 199, 5).unwrap();
        let b = permanova_two_way(&grid, 199, 5).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn parametric_and_permutation_p_agree_on_normalish_data() {
        // mild effect, moderate n: the two routes should land close
        let mut state = 0x243F6A8885A308D3u64;
        let mut next = || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (state >> 11) as f64 / (1u64 << 53) as f64
        };
        let mut cells = Vec::new();
        for i in 0..2 {
            let mut row = Vec::new();
            for _j in 0..2 {
                row.push(
                    (0..100)
                        .map(|_| {
                            // sum of uniforms approximates a normal
                            let g: f64 = (0..12).map(|_| next()).sum::<f64>() - 6.0;
                            g + i as f64 * 0.35
                        })
                        .collect(),
                );
            }
            cells.push(row);
        }
        let grid = CellGrid::new(&cells).unwrap();
        let para = anova_two_way(&grid).unwrap();
        let perm = permanova_two_way(&grid, 1999, 3).unwrap();
        for (pa, pb) in [
            (para.factor_a.p, perm.factor_a.p),
            (para.factor_b.p, perm.factor_b.p),
            (para.interaction.p, perm.interaction.p),
        ] {
            assert!((pa - pb).abs() < 0.05, "parametric {pa} vs permutation {pb}");
        }
    }
}
