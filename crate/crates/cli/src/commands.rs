use std::fmt;
use std::path::{Path, PathBuf};

use jcrc::basis::uniform_grid;
use jcrc::classify::{predict_panel, read_predictions, write_predictions, ClassifierModel};
use jcrc::curves::{join_panel, load_curves_mapped, load_panel, load_scalars, write_curves, write_scalars, CurvePanel};
use jcrc::pipeline::fit_all;
use jcrc::registration::{align_subject, write_aligned, AlignedPanel, RegistrationFit};
use jcrc::simeval::{
    fitted_warp_imse, metric_bias_ssd, metric_isbias_imse, simulate_study1, simulate_study2, MetricsReport, Scenario,
    SimConfig1, SimConfig2, SimTruth,
};
use jcrc::{JcrcError, RunConfig};
use serde::Serialize;

use crate::{Cli, Command, EvaluateArgs, FitArgs, PanelArgs, PredictArgs, RegisterArgs, ScenarioArg, SimulateArgs, Split};

pub enum CliError {
    Usage(String),
    Lib(JcrcError),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Lib(e) if e.is_numerical() => 4,
            CliError::Lib(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "{m}"),
            CliError::Lib(e) => write!(f, "{e}"),
        }
    }
}

impl From<JcrcError> for CliError {
    fn from(e: JcrcError) -> Self {
        CliError::Lib(e)
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Lib(e.into())
    }
}

type Result<T> = std::result::Result<T, CliError>;

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Lib(JcrcError::Io {
        path: path.display().to_string(),
        source: e,
    })
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| io_err(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    std::fs::write(path, s).map_err(|e| io_err(path, e))
}

fn make_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))
}

fn set_threads(n: Option<usize>) -> Result<()> {
    if let Some(n) = n {
        if n == 0 {
            return Err(CliError::Usage("--threads must be at least 1".into()));
        }
        // a second call would fail; only the first configuration counts
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate(a) => {
            set_threads(cli.threads)?;
            simulate(a)
        }
        Command::Fit(a) => fit(a, cli.threads),
        Command::Predict(a) => {
            set_threads(cli.threads)?;
            predict(a)
        }
        Command::Register(a) => {
            set_threads(cli.threads)?;
            register(a)
        }
        Command::Evaluate(a) => {
            set_threads(cli.threads)?;
            evaluate(a)
        }
    }
}

fn simulate(a: SimulateArgs) -> Result<()> {
    let data = match (a.study, a.scenario) {
        (1, None) => {
            simulate_study1(&SimConfig1::new(a.n_subjects.unwrap_or(80), a.n_obs.unwrap_or(100), a.seed))?
        }
        (1, Some(_)) => return Err(CliError::Usage("--scenario applies to study 2 only".into())),
        (_, None) => return Err(CliError::Usage("study 2 needs --scenario A or B".into())),
        (_, Some(s)) => {
            if a.n_subjects.is_some() || a.n_obs.is_some() {
                return Err(CliError::Usage("--n-subjects/--n-obs apply to study 1 only".into()));
            }
            let scen = match s {
                ScenarioArg::A => Scenario::A,
                ScenarioArg::B => Scenario::B,
            };
            simulate_study2(&SimConfig2::new(scen, a.seed))?
        }
    };
    make_dir(&a.out)?;
    write_curves(&a.out.join("curves.csv"), &data.panel.curves)?;
    write_scalars(&a.out.join("scalars.csv"), &data.panel.scalars)?;
    write_json(&a.out.join("truth.json"), &data.truth)
}

fn load_truth(path: &Path) -> Result<SimTruth> {
    let t: SimTruth = serde_json::from_str(&read(path)?)?;
    if t.format_version != jcrc::FORMAT_VERSION {
        return Err(JcrcError::Validation(format!(
            "truth file has format version {}, expected {}",
            t.format_version,
            jcrc::FORMAT_VERSION
        ))
        .into());
    }
    Ok(t)
}

/// Subject ids selected by `--truth`/`--split`, or `None` for everything.
fn split_ids(truth: Option<&Path>, split: Split) -> Result<Option<Vec<String>>> {
    let Some(truth) = truth else { return Ok(None) };
    let truth = load_truth(truth)?;
    Ok(match split {
        Split::Train => Some(truth.train_ids()),
        Split::Test => Some(truth.test_ids()),
        Split::All => None,
    })
}

fn restrict(panel: CurvePanel, p: &PanelArgs) -> Result<CurvePanel> {
    match split_ids(p.truth.as_deref(), p.split)? {
        Some(ids) => Ok(panel.select_ids(&ids)?),
        None => Ok(panel),
    }
}

fn fit(a: FitArgs, threads: Option<usize>) -> Result<()> {
    let mut cfg = match &a.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    set_threads(threads.or(cfg.threads))?;
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let (Some(kx), Some(ke)) = (a.k_x, a.k_e) {
        cfg = cfg.with_k(kx, ke);
    }
    cfg.validate()?;
    let (panel, map) = load_panel(&a.panel.curves, &a.panel.scalars)?;
    let panel = restrict(panel, &a.panel)?;
    panel.require_labels()?;
    let out = fit_all(&panel, &cfg, map, a.report_timings)?;
    make_dir(&a.out)?;
    write_json(&a.out.join("registration.json"), &out.registration)?;
    write_json(&a.out.join("classifier.json"), &out.classifier)?;
    write_json(&a.out.join("fit_report.json"), &out.report)
}

fn load_model(dir: &Path) -> Result<(RegistrationFit, ClassifierModel)> {
    let reg = RegistrationFit::from_json(&read(&dir.join("registration.json"))?)?;
    let model = ClassifierModel::from_json(&read(&dir.join("classifier.json"))?)?;
    Ok((reg, model))
}

fn is_blank(path: &Path) -> Result<bool> {
    Ok(read(path)?.trim().is_empty())
}

fn predict(a: PredictArgs) -> Result<()> {
    let (reg, model) = load_model(&a.model)?;
    let p = &a.panel;
    let curves = if is_blank(&p.curves)? { Vec::new() } else { load_curves_mapped(&p.curves, &reg.time_map)? };
    let scalars = if is_blank(&p.scalars)? { Vec::new() } else { load_scalars(&p.scalars)? };
    let rows = if curves.is_empty() && scalars.is_empty() {
        Vec::new()
    } else {
        let panel = restrict(join_panel(curves, scalars)?, p)?;
        predict_panel(&reg, &model, &panel, model.config.predict_max_iter)?
    };
    write_predictions(&a.out, &rows)?;
    Ok(())
}

fn register(a: RegisterArgs) -> Result<()> {
    let reg = RegistrationFit::from_json(&read(&a.model.join("registration.json"))?)?;
    let mut curves = if is_blank(&a.curves)? { Vec::new() } else { load_curves_mapped(&a.curves, &reg.time_map)? };
    if let Some(ids) = split_ids(a.truth.as_deref(), a.split)? {
        curves.retain(|c| ids.contains(&c.subject_id));
    }
    let grid = uniform_grid(reg.config.align_grid_size);
    let mut out = AlignedPanel {
        grid,
        subject_ids: Vec::with_capacity(curves.len()),
        curves: Vec::with_capacity(curves.len()),
    };
    for c in &curves {
        let i = reg.warps.index_of(&c.subject_id).ok_or_else(|| {
            JcrcError::Validation(format!("subject {} is not part of the registration fit", c.subject_id))
        })?;
        out.curves.push(align_subject(c, &reg.warps.subject_warp(i)?, &out.grid));
        out.subject_ids.push(c.subject_id.clone());
    }
    write_aligned(&a.out, &out)?;
    Ok(())
}

#[derive(Serialize)]
struct EvaluateInputs {
    truth: PathBuf,
    predictions: Option<PathBuf>,
    classifier: Vec<PathBuf>,
    registration: Option<PathBuf>,
}

#[derive(Serialize)]
struct EvaluateOutput {
    #[serde(flatten)]
    metrics: MetricsReport,
    config: EvaluateInputs,
}

fn evaluate(a: EvaluateArgs) -> Result<()> {
    if a.predictions.is_none() && a.classifier.is_empty() && a.registration.is_none() {
        return Err(CliError::Usage(
            "nothing to evaluate; give --predictions, --classifier or --registration".into(),
        ));
    }
    let truth = load_truth(&a.truth)?;
    let mut m = MetricsReport {
        format_version: jcrc::FORMAT_VERSION,
        ..Default::default()
    };
    if let Some(p) = &a.predictions {
        let preds = read_predictions(p)?;
        let mut truth_labels = Vec::with_capacity(preds.len());
        let mut seen = std::collections::BTreeSet::new();
        for r in &preds {
            let i = truth.index_of(&r.subject_id).ok_or_else(|| {
                JcrcError::Validation(format!("predicted subject {} is not in the truth file", r.subject_id))
            })?;
            if !seen.insert(&r.subject_id) {
                return Err(JcrcError::Validation(format!("subject {} is predicted twice", r.subject_id)).into());
            }
            truth_labels.push(truth.labels[i]);
        }
        let pred: Vec<u8> = preds.iter().map(|r| r.label).collect();
        m = MetricsReport::classification(&truth_labels, &pred)?;
    }
    if !a.classifier.is_empty() {
        let (Some(b0), Some(b1)) = (truth.b0, truth.b1) else {
            return Err(JcrcError::Validation("truth file has no coefficients to compare with".into()).into());
        };
        let models = a
            .classifier
            .iter()
            .map(|p| Ok(ClassifierModel::from_json(&read(p)?)?))
            .collect::<Result<Vec<_>>>()?;
        if models.iter().any(|c| c.p() != 1) {
            return Err(JcrcError::Validation("expected one scalar covariate".into()).into());
        }
        if models.len() >= 2 {
            let b0s: Vec<f64> = models.iter().map(|c| c.intercept_uncentred()).collect();
            let b1s: Vec<f64> = models.iter().map(|c| c.b1[0]).collect();
            m.scalar_coefs = vec![metric_bias_ssd(&b0s, b0)?, metric_bias_ssd(&b1s, b1)?];
        }
        let grid = &truth.beta_grid;
        m.functional_coefs = (0..2)
            .map(|f| {
                let est: Vec<Vec<f64>> =
                    models.iter().map(|c| grid.iter().map(|&t| c.beta(f, t)).collect()).collect();
                metric_isbias_imse(&est, &truth.beta[f], grid)
            })
            .collect::<jcrc::Result<_>>()?;
    }
    if let Some(p) = &a.registration {
        let reg = RegistrationFit::from_json(&read(p)?)?;
        m.warp_imse = Some(fitted_warp_imse(&reg, &truth)?);
    }
    let out = EvaluateOutput {
        metrics: m,
        config: EvaluateInputs {
            truth: a.truth.clone(),
            predictions: a.predictions.clone(),
            classifier: a.classifier.clone(),
            registration: a.registration.clone(),
        },
    };
    write_json(&a.out, &out)
}
