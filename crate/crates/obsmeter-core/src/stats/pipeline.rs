//! End-to-end analysis over a two-factor experiment: trim startup and
//! teardown samples, resample each treatment cell into an exchangeable set,
//! run the assumption gates, pick the parametric or permutation ANOVA
//! accordingly, and localize significant effects with Tukey HSD.

use alloc::vec::Vec;

use super::anova::{anova_two_way, permanova_two_way, AnovaTable, CellGrid};
use super::gates::{heteroskedasticity_gate, normality_gate, HeteroskedasticityReport};
use super::series::{bootstrap_iid, turning_point_test};
use super::tukey::{tukey_hsd, TukeyRow};
use super::{StatsError, TestResult};

/// One trial's dependent-variable time series for one treatment cell.
#[derive(Debug, Clone, PartialEq)]
pub struct ResponseSeries {
    pub values: Vec<f64>,
    pub factor_a: usize,
    pub factor_b: usize,
    pub trial: usize,
    pub trimmed: bool,
}

impl ResponseSeries {
    pub fn new(factor_a: usize, factor_b: usize, trial: usize, values: Vec<f64>) -> ResponseSeries {
        ResponseSeries {
            values,
            factor_a,
            factor_b,
            trial,
            trimmed: false,
        }
    }

    /// Drop the first and last raw samples (incomplete startup and teardown
    /// windows). The remaining series must hold at least 10 samples.
    pub fn trim(&mut self) -> Result<(), StatsError> {
        if self.trimmed {
            return Ok(());
        }
        if self.values.len() < 12 {
            return Err(StatsError::SeriesTooShort {
                needed: 12,
                got: self.values.len(),
            });
        }
        self.values.remove(0);
        self.values.pop();
        self.trimmed = true;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AnalysisBranch {
    Parametric,
    Permutation,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellGates {
    /// Independence check on the raw (pre-bootstrap) pooled series; absent
    /// when the cell is too short for the test.
    pub turning_point: Option<TestResult>,
    /// Normality omnibus on the bootstrapped cell.
    pub normality: TestResult,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineReport {
    pub alpha: f64,
    /// Row-major over (factor_a, factor_b) cells.
    pub cell_gates: Vec<CellGates>,
    pub heteroskedasticity: HeteroskedasticityReport,
    pub branch: AnalysisBranch,
    pub table: AnovaTable,
    /// All-pairs comparisons, present when any effect was significant;
    /// interpret the interaction rows first.
    pub tukey: Vec<TukeyRow>,
    pub reject_factor_a: bool,
    pub reject_factor_b: bool,
    pub reject_interaction: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PipelineConfig {
    pub alpha: f64,
    pub n_perm: u32,
    pub seed: u64,
    /// Bootstrap size per cell; defaults to the largest pooled cell so the
    /// design comes out balanced.
    pub samples_per_cell: Option<usize>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            alpha: 0.05,
            n_perm: 999,
            seed: 0,
            samples_per_cell: None,
        }
    }
}

fn cell_seed(base: u64, cell: usize) -> u64 {
    base ^ (cell as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Run the full analysis for an `a x b` design. `series` holds one entry
/// per (cell, trial); every cell needs at least one trial.
pub fn analysis_pipeline(
    series: &[ResponseSeries],
    dims: (usize, usize),
    config: &PipelineConfig,
) -> Result<PipelineReport, StatsError> {
    let (a, b) = dims;
    if a < 2 || b < 2 {
        return Err(StatsError::BadDesign);
    }

    // trim and pool trials per cell
    let mut pooled: Vec<Vec<f64>> = alloc::vec![Vec::new(); a * b];
    for s in series {
        if s.factor_a >= a || s.factor_b >= b {
            return Err(StatsError::BadDesign);
        }
        let mut s = s.clone();
        s.trim()?;
        pooled[s.factor_a * b + s.factor_b].extend_from_slice(&s.values);
    }
    if pooled.iter().any(|c| c.is_empty()) {
        return Err(StatsError::EmptySeries);
    }

    let n_out = config
        .samples_per_cell
        .unwrap_or_else(|| pooled.iter().map(|c| c.len()).max().unwrap_or(0));

    // gates and iid-ification
    let mut cell_gates = Vec::with_capacity(a * b);
    let mut resampled: Vec<Vec<f64>> = Vec::with_capacity(a * b);
    for (idx, cell) in pooled.iter().enumerate() {
        let turning_point = turning_point_test(cell).ok();
        let boot = bootstrap_iid(cell, n_out, cell_seed(config.seed, idx))?;
        let normality = normality_gate(&boot)?;
        cell_gates.push(CellGates {
            turning_point,
            normality,
        });
        resampled.push(boot);
    }
    let group_refs: Vec<&[f64]> = resampled.iter().map(|c| c.as_slice()).collect();
    let heteroskedasticity = heteroskedasticity_gate(&group_refs)?;

    let cells: Vec<Vec<Vec<f64>>> = (0..a)
        .map(|i| (0..b).map(|j| resampled[i * b + j].clone()).collect())
        .collect();
    let grid = CellGrid::new(&cells)?;

    let all_normal = cell_gates.iter().all(|g| g.normality.p_value > config.alpha);
    let (branch, table) = if all_normal {
        (AnalysisBranch::Parametric, anova_two_way(&grid)?)
    } else {
        (
            AnalysisBranch::Permutation,
            permanova_two_way(&grid, config.n_perm, config.seed.wrapping_add(1))?,
        )
    };

    let reject_factor_a = table.factor_a.p <= config.alpha;
    let reject_factor_b = table.factor_b.p <= config.alpha;
    let reject_interaction = table.interaction.p <= config.alpha;
    let tukey = if reject_factor_a || reject_factor_b || reject_interaction {
        tukey_hsd(&grid, config.alpha)?
    } else {
        Vec::new()
    };

    Ok(PipelineReport {
        alpha: config.alpha,
        cell_gates,
        heteroskedasticity,
        branch,
        table,
        tukey,
        reject_factor_a,
        reject_factor_b,
        reject_interaction,
    })
}
