//! The statistical analysis pipeline: iid-ification by resampling,
//! assumption gates, two-way (permutation) ANOVA with interactions and the
//! Tukey HSD post-hoc test.

pub mod anova;
pub mod gates;
pub mod pipeline;
pub mod series;
pub mod special;
pub mod tukey;

pub use anova::{anova_two_way, permanova_two_way, AnovaTable, CellGrid, EffectRow};
pub use gates::{heteroskedasticity_gate, normality_gate, HeteroskedasticityReport};
pub use pipeline::{
    analysis_pipeline, AnalysisBranch, PipelineConfig, PipelineReport, ResponseSeries,
};
pub use series::{bootstrap_iid, turning_point_test};
pub use tukey::{tukey_hsd, TukeyRow};

use core::fmt;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Df {
    None,
    One(f64),
    Two(f64, f64),
}

/// A test statistic with its p-value and degrees of freedom.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TestResult {
    pub statistic: f64,
    pub p_value: f64,
    pub df: Df,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StatsError {
    EmptySeries,
    SeriesTooShort { needed: usize, got: usize },
    FewerThanTwoGroups,
    UnbalancedDesign,
    DegenerateVariance,
    TooFewPermutations,
    BadDesign,
}

impl fmt::Display for StatsError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StatsError::EmptySeries => write!(f, "series is empty"),
            StatsError::SeriesTooShort { needed, got } => {
                write!(f, "series too short: need {needed}, got {got}")
            }
            StatsError::FewerThanTwoGroups => write!(f, "need at least two groups"),
            StatsError::UnbalancedDesign => write!(f, "cells must hold equal sample counts"),
            StatsError::DegenerateVariance => write!(f, "residual variance is zero"),
            StatsError::TooFewPermutations => write!(f, "need at least 99 permutations"),
            StatsError::BadDesign => write!(f, "both factors need at least two levels"),
        }
    }
}

impl core::error::Error for StatsError {}

/// Significance stars at the 0.05 / 0.01 / 0.001 levels.
pub fn significance_stars(p: f64) -> &'static str {
    if p <= 0.001 {
        "***"
    } else if p <= 0.01 {
        "**"
    } else if p <= 0.05 {
        "*"
    } else {
        ""
    }
}

pub(crate) fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

pub(crate) fn sample_variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() as f64 - 1.0)
}
