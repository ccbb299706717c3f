use log::{info, warn};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::model::TrainingData;
use crate::config::RunConfig;
use crate::curves::CurvePanel;
use crate::error::{JcrcError, Result};
use crate::registration::AlignedPanel;

/// Mean validation deviance of one `(k_x, k_e)` pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CvScore {
    pub k_x: usize,
    pub k_e: usize,
    pub deviance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub chosen: (usize, usize),
    /// Best first; ties ordered by smaller `k_e`, then smaller `k_x`.
    pub ranking: Vec<CvScore>,
    pub folds_used: usize,
    pub folds_skipped: usize,
}

impl CvReport {
    /// 1-based rank of a pair, if it was evaluated.
    pub fn rank_of(&self, k_x: usize, k_e: usize) -> Option<usize> {
        self.ranking.iter().position(|s| s.k_x == k_x && s.k_e == k_e).map(|r| r + 1)
    }
}

/// Fold index of every subject. Each class is shuffled with a generator
/// seeded by `seed` and dealt round-robin, so folds have near-equal class
/// counts.
pub fn stratified_folds(labels: &[u8], folds: usize, seed: u64) -> Vec<usize> {
    let mut out = vec![0; labels.len()];
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut next = 0;
    for class in 0..2u8 {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        idx.shuffle(&mut rng);
        for i in idx {
            out[i] = next % folds;
            next += 1;
        }
    }
    out
}

fn has_both(labels: &[u8], rows: &[usize]) -> bool {
    rows.iter().any(|&i| labels[i] == 0) && rows.iter().any(|&i| labels[i] == 1)
}

/// Chooses `(k_x, k_e)` by `folds`-fold cross-validated deviance. Curves
/// keep the alignment of the full registration fit; FPCA and the GLMM are
/// refit on every training fold.
pub fn cross_validate_k(
    panel: &CurvePanel,
    aligned: &AlignedPanel,
    pairs: &[(usize, usize)],
    folds: usize,
    cfg: &RunConfig,
) -> Result<CvReport> {
    if pairs.is_empty() {
        return Err(JcrcError::Validation("no (k_x, k_e) candidates".into()));
    }
    if let Some(&(kx, ke)) = pairs.iter().find(|(kx, ke)| kx < ke || *ke < 2) {
        return Err(JcrcError::Validation(format!(
            "candidate (k_x = {kx}, k_e = {ke}) violates k_x >= k_e >= 2"
        )));
    }
    if folds < 2 {
        return Err(JcrcError::Validation(format!("need at least 2 folds, got {folds}")));
    }
    let data = TrainingData::new(panel, aligned)?;
    let n = panel.len();
    if n < folds {
        return Err(JcrcError::Validation(format!("{n} subjects cannot fill {folds} folds")));
    }
    let fold_of = stratified_folds(&data.labels, folds, cfg.seed);
    let k_max = pairs.iter().map(|p| p.0).max().unwrap_or(0);

    let per_fold: Vec<Option<Vec<f64>>> = (0..folds)
        .into_par_iter()
        .map(|f| -> Result<Option<Vec<f64>>> {
            let train: Vec<usize> = (0..n).filter(|&i| fold_of[i] != f).collect();
            let test: Vec<usize> = (0..n).filter(|&i| fold_of[i] == f).collect();
            if !has_both(&data.labels, &train) || !has_both(&data.labels, &test) {
                warn!("cross-validation fold {f} has a single class and is skipped");
                return Ok(None);
            }
            let full = data.fpca(&train, k_max, cfg.smoothing_window)?;
            let mut devs = Vec::with_capacity(pairs.len());
            for &(kx, ke) in pairs {
                let model = data.fit(&train, full.truncate(kx)?, ke, cfg)?;
                devs.push(data.deviance(&model, &test)?);
            }
            Ok(Some(devs))
        })
        .collect::<Result<_>>()?;

    let used: Vec<&Vec<f64>> = per_fold.iter().flatten().collect();
    if used.is_empty() {
        return Err(JcrcError::Validation("every cross-validation fold has a single class".into()));
    }
    let mut ranking: Vec<CvScore> = pairs
        .iter()
        .enumerate()
        .map(|(c, &(k_x, k_e))| CvScore {
            k_x,
            k_e,
            deviance: used.iter().map(|d| d[c]).sum::<f64>() / used.len() as f64,
        })
        .collect();
    ranking.sort_by(|a, b| {
        a.deviance
            .total_cmp(&b.deviance)
            .then(a.k_e.cmp(&b.k_e))
            .then(a.k_x.cmp(&b.k_x))
    });
    ranking.dedup_by(|a, b| a.k_x == b.k_x && a.k_e == b.k_e);
    let best = ranking[0];
    info!(
        "cross-validation chose K_x = {}, K_e = {} (deviance {:.4})",
        best.k_x, best.k_e, best.deviance
    );
    Ok(CvReport {
        chosen: (best.k_x, best.k_e),
        ranking,
        folds_used: used.len(),
        folds_skipped: folds - used.len(),
    })
}
