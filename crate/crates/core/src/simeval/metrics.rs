use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::basis::quad_weights;
use crate::error::{JcrcError, Result};
use crate::registration::Warp;

fn same_len(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(JcrcError::Validation(format!("length mismatch: {a} vs {b}")));
    }
    Ok(())
}

/// Fraction of positions where the labels agree.
pub fn metric_ca(truth: &[u8], pred: &[u8]) -> Result<f64> {
    same_len(truth.len(), pred.len())?;
    if truth.is_empty() {
        return Err(JcrcError::Validation("no labels to compare".into()));
    }
    let hits = truth.iter().zip(pred).filter(|(a, b)| a == b).count();
    Ok(hits as f64 / truth.len() as f64)
}

fn choose2(n: u64) -> f64 {
    (n * n.saturating_sub(1)) as f64 / 2.0
}

struct Contingency {
    cells: f64,
    rows: f64,
    cols: f64,
    total: f64,
}

fn contingency(truth: &[u8], pred: &[u8]) -> Result<Contingency> {
    same_len(truth.len(), pred.len())?;
    if truth.len() < 2 {
        return Err(JcrcError::Validation("pair-counting indices need at least 2 items".into()));
    }
    let mut table: BTreeMap<(u8, u8), u64> = BTreeMap::new();
    let mut rows: BTreeMap<u8, u64> = BTreeMap::new();
    let mut cols: BTreeMap<u8, u64> = BTreeMap::new();
    for (&a, &b) in truth.iter().zip(pred) {
        *table.entry((a, b)).or_default() += 1;
        *rows.entry(a).or_default() += 1;
        *cols.entry(b).or_default() += 1;
    }
    Ok(Contingency {
        cells: table.values().map(|&n| choose2(n)).sum(),
        rows: rows.values().map(|&n| choose2(n)).sum(),
        cols: cols.values().map(|&n| choose2(n)).sum(),
        total: choose2(truth.len() as u64),
    })
}

/// Rand index: share of item pairs on which the two partitions agree.
pub fn metric_rand(truth: &[u8], pred: &[u8]) -> Result<f64> {
    let c = contingency(truth, pred)?;
    Ok((c.total + 2.0 * c.cells - c.rows - c.cols) / c.total)
}

/// Adjusted Rand index (Hubert–Arabie). Two single-cluster partitions
/// score 1.
pub fn metric_ari(truth: &[u8], pred: &[u8]) -> Result<f64> {
    let c = contingency(truth, pred)?;
    let expected = c.rows * c.cols / c.total;
    let max = 0.5 * (c.rows + c.cols);
    if max == expected {
        return Ok(1.0);
    }
    Ok((c.cells - expected) / (max - expected))
}

/// Bias and spread of a scalar estimator across replicates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BiasSsd {
    /// `|mean - truth|`.
    pub bias: f64,
    /// `mean - truth`.
    pub signed_bias: f64,
    /// Sample standard deviation.
    pub ssd: f64,
}

pub fn metric_bias_ssd(estimates: &[f64], truth: f64) -> Result<BiasSsd> {
    if estimates.len() < 2 {
        return Err(JcrcError::Validation("bias and SSD need at least 2 replicates".into()));
    }
    let n = estimates.len() as f64;
    let mean = estimates.iter().sum::<f64>() / n;
    let var = estimates.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok(BiasSsd {
        bias: (mean - truth).abs(),
        signed_bias: mean - truth,
        ssd: var.sqrt(),
    })
}

/// Integrated squared bias and integrated mean squared error of a functional
/// estimator, with the expectation replaced by the replicate mean and the
/// integral by trapezoidal quadrature on `grid`.
pub fn metric_isbias_imse(estimates: &[Vec<f64>], truth: &[f64], grid: &[f64]) -> Result<(f64, f64)> {
    same_len(truth.len(), grid.len())?;
    if estimates.is_empty() {
        return Err(JcrcError::Validation("no replicates".into()));
    }
    for e in estimates {
        same_len(e.len(), grid.len())?;
    }
    let w = quad_weights(grid);
    let r = estimates.len() as f64;
    let mut isbias = 0.0;
    let mut imse = 0.0;
    for j in 0..grid.len() {
        let mean = estimates.iter().map(|e| e[j]).sum::<f64>() / r;
        isbias += w[j] * (mean - truth[j]).powi(2);
        imse += w[j] * estimates.iter().map(|e| (e[j] - truth[j]).powi(2)).sum::<f64>() / r;
    }
    Ok((isbias, imse.max(isbias)))
}

/// Mean over subjects of `∫ (ĝ - g)²` on `grid`.
pub fn warp_imse(estimated: &[Warp], truth: &[Warp], grid: &[f64]) -> Result<f64> {
    same_len(estimated.len(), truth.len())?;
    if estimated.is_empty() {
        return Err(JcrcError::Validation("no warps to compare".into()));
    }
    let w = quad_weights(grid);
    let total: f64 = estimated
        .iter()
        .zip(truth)
        .map(|(e, t)| grid.iter().zip(&w).map(|(&s, wj)| wj * (e.eval(s) - t.eval(s)).powi(2)).sum::<f64>())
        .sum();
    Ok(total / estimated.len() as f64)
}

/// Same as [`warp_imse`] for warps already sampled on `grid`.
pub fn sampled_imse(estimated: &[Vec<f64>], truth: &[Vec<f64>], grid: &[f64]) -> Result<f64> {
    same_len(estimated.len(), truth.len())?;
    if estimated.is_empty() {
        return Err(JcrcError::Validation("nothing to compare".into()));
    }
    let w = quad_weights(grid);
    let mut total = 0.0;
    for (e, t) in estimated.iter().zip(truth) {
        same_len(e.len(), grid.len())?;
        same_len(t.len(), grid.len())?;
        total += e.iter().zip(t).zip(&w).map(|((a, b), wj)| wj * (a - b).powi(2)).sum::<f64>();
    }
    Ok(total / estimated.len() as f64)
}

/// Classification and estimation summaries. Absent entries were not
/// computable from the inputs given.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub format_version: u32,
    pub n: usize,
    pub ca: Option<f64>,
    pub ri: Option<f64>,
    pub ari: Option<f64>,
    /// `b0` then the covariate coefficients.
    pub scalar_coefs: Vec<BiasSsd>,
    /// `(isbias, imse)` of each functional coefficient.
    pub functional_coefs: Vec<(f64, f64)>,
    pub warp_imse: Option<f64>,
}

impl MetricsReport {
    pub fn classification(truth: &[u8], pred: &[u8]) -> Result<Self> {
        Ok(MetricsReport {
            format_version: crate::FORMAT_VERSION,
            n: truth.len(),
            ca: Some(metric_ca(truth, pred)?),
            ri: Some(metric_rand(truth, pred)?),
            ari: Some(metric_ari(truth, pred)?),
            ..Default::default()
        })
    }
}
