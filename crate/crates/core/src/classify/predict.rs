use std::io::Write;
use std::path::Path;

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::glmm::logistic;
use super::model::{classify_prob, ClassifierModel};
use crate::curves::{create, open_csv, CurvePanel, SubjectCurve};
use crate::error::{JcrcError, Result};
use crate::registration::{align_subject, NewSubject, RegistrationFit};

/// Outcome for one subject.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionResult {
    pub subject_id: String,
    pub pi_hat: f64,
    pub label: u8,
    pub iterations: usize,
    pub converged: bool,
    /// A warp fit failed and the identity random warp was used.
    #[serde(skip)]
    pub degraded: bool,
}

fn label_of(pi: f64) -> u8 {
    (pi >= 0.5) as u8
}

/// Alternates label and warp for one new subject: start from the scalar-only
/// logistic fit, warp the curve towards the current label's group, align,
/// score and classify, until neither the label nor `pi` changes (tolerance
/// `1e-6`) or `max_iter` rounds have run.
pub fn predict_new(
    reg: &RegistrationFit,
    model: &ClassifierModel,
    curve: &SubjectCurve,
    v: &[f64],
    max_iter: usize,
) -> Result<PredictionResult> {
    let subject = NewSubject::new(reg, curve)?;
    let mut pi = logistic(model.scalar_predictor(v)?);
    let mut label = label_of(pi);
    // the warp fit depends only on the label, so each group is solved once
    let mut cache: [Option<(f64, bool)>; 2] = [None, None];
    let mut degraded = false;
    for it in 1..=max_iter {
        let (next, deg) = match cache[label as usize] {
            Some(c) => c,
            None => {
                let w = subject.fit_warp(label)?;
                let aligned = align_subject(curve, &w.warp, &model.fpca.grid);
                let p = classify_prob(model, &model.fpca.scores(&aligned)?, v)?;
                cache[label as usize] = Some((p, w.degraded));
                (p, w.degraded)
            }
        };
        degraded |= deg;
        let next_label = label_of(next);
        let done = next_label == label && (next - pi).abs() < 1e-6;
        pi = next;
        label = next_label;
        if done {
            return Ok(PredictionResult {
                subject_id: curve.subject_id.clone(),
                pi_hat: pi,
                label,
                iterations: it,
                converged: true,
                degraded,
            });
        }
    }
    warn!("subject {}: label iteration did not settle in {max_iter} rounds", curve.subject_id);
    Ok(PredictionResult {
        subject_id: curve.subject_id.clone(),
        pi_hat: pi,
        label,
        iterations: max_iter,
        converged: false,
        degraded,
    })
}

/// [`predict_new`] for every subject of `panel`, in panel order. Labels in
/// the panel are ignored.
pub fn predict_panel(
    reg: &RegistrationFit,
    model: &ClassifierModel,
    panel: &CurvePanel,
    max_iter: usize,
) -> Result<Vec<PredictionResult>> {
    if max_iter == 0 {
        return Err(JcrcError::Validation("max_iter must be >= 1".into()));
    }
    let out: Vec<PredictionResult> = panel
        .curves
        .par_iter()
        .zip(&panel.scalars)
        .map(|(c, s)| predict_new(reg, model, c, &s.v, max_iter))
        .collect::<Result<_>>()?;
    for r in out.iter().filter(|r| r.degraded) {
        warn!("subject {}: warp fit failed, identity random warp used", r.subject_id);
    }
    Ok(out)
}

pub fn write_predictions(path: &Path, rows: &[PredictionResult]) -> Result<()> {
    let mut w = create(path)?;
    let io = |e| JcrcError::io(path, e);
    writeln!(w, "subject_id,pi_hat,label,iterations,converged").map_err(io)?;
    for r in rows {
        writeln!(w, "{},{},{},{},{}", r.subject_id, r.pi_hat, r.label, r.iterations, r.converged).map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn read_predictions(path: &Path) -> Result<Vec<PredictionResult>> {
    let mut rdr = open_csv(path)?;
    let parse = |row: usize, message: String| JcrcError::Parse {
        location: format!("{}:{row}", path.display()),
        message,
    };
    let headers = rdr.headers().map_err(|e| parse(1, e.to_string()))?.clone();
    let expected = ["subject_id", "pi_hat", "label", "iterations", "converged"];
    if headers.iter().map(str::trim).collect::<Vec<_>>() != expected {
        return Err(parse(1, format!("expected header {}", expected.join(","))));
    }
    let mut out = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        let row = k + 2;
        let rec = rec.map_err(|e| parse(row, e.to_string()))?;
        let bad = |what: &str| parse(row, format!("bad {what}"));
        let pi_hat: f64 = rec[1].trim().parse().map_err(|_| bad("pi_hat"))?;
        if !(0.0..=1.0).contains(&pi_hat) {
            return Err(bad("pi_hat"));
        }
        let label: u8 = rec[2].trim().parse().map_err(|_| bad("label"))?;
        if label > 1 {
            return Err(bad("label"));
        }
        out.push(PredictionResult {
            subject_id: rec[0].trim().to_string(),
            pi_hat,
            label,
            iterations: rec[3].trim().parse().map_err(|_| bad("iterations"))?,
            converged: rec[4].trim().parse().map_err(|_| bad("converged"))?,
            degraded: false,
        });
    }
    Ok(out)
}
