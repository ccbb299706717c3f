//! End-to-end fitting: registration, choice of `(k_x, k_e)`, classifier.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::classify::{cross_validate_k, fit_classifier_aligned, ClassifierModel, CvReport};
use crate::config::RunConfig;
use crate::curves::{CurvePanel, TimeMap};
use crate::error::Result;
use crate::registration::{align_curves, fit_registration_mapped, RegistrationFit};

/// Wall-clock seconds per stage.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub registration: f64,
    pub cross_validation: f64,
    pub classifier: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub format_version: u32,
    pub n_subjects: usize,
    pub k_x: usize,
    pub k_e: usize,
    pub cv: Option<CvReport>,
    pub registration_trace: Vec<f64>,
    pub outer_iterations: usize,
    pub registration_converged: bool,
    pub sigma: f64,
    pub sigma_e: f64,
    pub sigma_e_converged: bool,
    pub warp_flags: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub timings: Option<Timings>,
    pub config: RunConfig,
}

pub struct FitOutput {
    pub registration: RegistrationFit,
    pub classifier: ClassifierModel,
    pub report: FitReport,
}

/// Fits both levels on a labelled panel. `(k_x, k_e)` come from the config
/// when both are set and from cross-validation otherwise.
pub fn fit_all(panel: &CurvePanel, cfg: &RunConfig, time_map: TimeMap, record_timings: bool) -> Result<FitOutput> {
    cfg.validate()?;
    let t0 = Instant::now();
    let registration = fit_registration_mapped(panel, cfg, time_map)?;
    let aligned = align_curves(panel, &registration)?;
    let t1 = Instant::now();
    let (cv, (k_x, k_e)) = match (cfg.k_x, cfg.k_e) {
        (Some(kx), Some(ke)) => (None, (kx, ke)),
        _ => {
            let r = cross_validate_k(panel, &aligned, &cfg.cv_pairs, cfg.cv_folds, cfg)?;
            let chosen = r.chosen;
            (Some(r), chosen)
        }
    };
    let t2 = Instant::now();
    let classifier = fit_classifier_aligned(panel, &aligned, k_x, k_e, cfg)?;
    let t3 = Instant::now();
    let report = FitReport {
        format_version: crate::FORMAT_VERSION,
        n_subjects: panel.len(),
        k_x,
        k_e,
        cv,
        registration_trace: registration.trace.clone(),
        outer_iterations: registration.outer_iterations,
        registration_converged: registration.converged,
        sigma: registration.vars.sigma,
        sigma_e: classifier.sigma_e,
        sigma_e_converged: classifier.sigma_e_converged,
        warp_flags: registration.warp_flags.clone(),
        timings: record_timings.then(|| Timings {
            registration: (t1 - t0).as_secs_f64(),
            cross_validation: (t2 - t1).as_secs_f64(),
            classifier: (t3 - t2).as_secs_f64(),
        }),
        config: cfg.clone(),
    };
    Ok(FitOutput {
        registration,
        classifier,
        report,
    })
}
