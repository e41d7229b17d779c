//! Tukey Honest Significant Differences over the cells of a balanced
//! two-way design, with p-values from the studentized range distribution.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use libm::{fabs, sqrt};

use super::anova::{anova_two_way, CellGrid};
use super::special::studentized_range_sf;
use super::{significance_stars, StatsError};

/// One pairwise comparison between treatment cells.
#[derive(Debug, Clone, PartialEq)]
pub struct TukeyRow {
    /// Cell indices (row-major over the grid) of the pair, `first - second`.
    pub pair: (usize, usize),
    /// Mean difference in response units.
    pub diff: f64,
    pub p_adj: f64,
    pub significant: bool,
}

impl TukeyRow {
    /// The same comparison stated the other way around: the difference
    /// negates, the adjusted p-value is unchanged.
    pub fn swapped(&self) -> TukeyRow {
        TukeyRow {
            pair: (self.pair.1, self.pair.0),
            diff: -self.diff,
            p_adj: self.p_adj,
            significant: self.significant,
        }
    }

    pub fn stars(&self) -> &'static str {
        significance_stars(self.p_adj)
    }

    pub fn label(&self, names: &[String]) -> String {
        format!("{}-{}", names[self.pair.0], names[self.pair.1])
    }
}

/// All-pairs mean comparisons across the a x b cells. The residual mean
/// square and degrees of freedom come from the corresponding two-way ANOVA;
/// `q = |diff| / sqrt(MS_resid / n)` is referred to the studentized range
/// with `k = a*b` groups. Rows cover every unordered pair; significance is
/// flagged at `p_adj <= alpha`.
pub fn tukey_hsd(grid: &CellGrid, alpha: f64) -> Result<Vec<TukeyRow>, StatsError> {
    let table = anova_two_way(grid)?;
    let k = grid.a * grid.b;
    let n = grid.n as f64;
    let se = sqrt(table.residual_ms / n);
    let mut means = Vec::with_capacity(k);
    for i in 0..grid.a {
        for j in 0..grid.b {
            means.push(grid.cell_mean(i, j));
        }
    }
    let mut rows = Vec::with_capacity(k * (k - 1) / 2);
    for first in 0..k {
        for second in 0..first {
            let diff = means[first] - means[second];
            let q = fabs(diff) / se;
            let p_adj = studentized_range_sf(q, k, table.residual_df);
            rows.push(TukeyRow {
                pair: (first, second),
                diff,
                p_adj,
                significant: p_adj <= alpha,
            });
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn grid_with_offsets(offsets: [f64; 4]) -> CellGrid {
        let base = [0.3, -0.1, 0.2, -0.4, 0.1, 0.0, -0.2, 0.15];
        let mut cells = Vec::new();
        for i in 0..2 {
            let mut row = Vec::new();
            for j in 0..2 {
                let off = offsets[i * 2 + j];
                row.push(base.iter().map(|v| v + off).collect::<Vec<f64>>());
            }
            cells.push(row);
        }
        CellGrid::new(&cells).unwrap()
    }

    #[test]
    fn identical_cells_have_zero_diff_and_high_p() {
        let grid = grid_with_offsets([5.0, 5.0, 5.0, 5.0]);
        let rows = tukey_hsd(&grid, 0.05).unwrap();
        assert_eq!(rows.len(), 6);
        for row in rows {
            assert!(fabs(row.diff) < 1e-12);
            assert!(row.p_adj > 0.999);
            assert!(!row.significant);
        }
    }

    #[test]
    fn planted_offset_is_detected() {
        let grid = grid_with_offsets([0.0, 0.0, 0.0, 10.0]);
        let rows = tukey_hsd(&grid, 0.05).unwrap();
        for row in &rows {
            let touches_planted = row.pair.0 == 3 || row.pair.1 == 3;
            assert_eq!(row.significant, touches_planted, "{row:?}");
        }
    }

    #[test]
    fn swapping_negates_diff_only() {
        let grid = grid_with_offsets([0.0, 1.0, 2.0, 3.0]);
        for row in tukey_hsd(&grid, 0.05).unwrap() {
            let s = row.swapped();
            assert_eq!(s.diff, -row.diff);
            assert_eq!(s.p_adj, row.p_adj);
        }
    }

    #[test]
    fn p_adj_decreases_with_distance() {
        let grid = grid_with_offsets([0.0, 0.4, 0.8, 1.6]);
        let rows = tukey_hsd(&grid, 0.05).unwrap();
        let by_pair = |a: usize, b: usize| {
            rows.iter()
                .find(|r| r.pair == (a, b) || r.pair == (b, a))
                .unwrap()
        };
        assert!(by_pair(0, 3).p_adj < by_pair(0, 2).p_adj);
        assert!(by_pair(0, 2).p_adj < by_pair(0, 1).p_adj);
    }

    #[test]
    fn label_formatting() {
        let row = TukeyRow {
            pair: (1, 0),
            diff: -10.2,
            p_adj: 0.0,
            significant: true,
        };
        let names = vec![String::from("vanilla:off"), String::from("advanced:off")];
        assert_eq!(row.label(&names), "advanced:off-vanilla:off");
        assert_eq!(row.stars(), "***");
    }
}
