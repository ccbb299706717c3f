use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector, Matrix2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::basis::{uniform_grid, BSplineBasis};
use crate::curves::{join_panel, CurvePanel, ObservationGrid, ScalarRecord, SubjectCurve};
use crate::error::{JcrcError, Result};
use crate::gp::{matern_cov, CovSpec, KernelKind, MaternParams, SpdFactor};
use crate::registration::Warp;

/// Points of the dense grid on which true curves are projected onto splines.
const PROJECTION_POINTS: usize = 401;

/// Settings of the first study (estimation accuracy).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig1 {
    pub n_subjects: usize,
    pub n_obs: usize,
    pub sigma_r: f64,
    pub sigma_w: f64,
    pub sigma: f64,
    pub rho_r: MaternParams,
    pub o0: [[f64; 2]; 2],
    pub o1: [[f64; 2]; 2],
    pub b0: f64,
    pub b1: f64,
    pub anchors: Vec<f64>,
    pub seed: u64,
}

impl SimConfig1 {
    pub fn new(n_subjects: usize, n_obs: usize, seed: u64) -> Self {
        SimConfig1 {
            n_subjects,
            n_obs,
            sigma_r: 0.02,
            sigma_w: 0.005,
            sigma: 0.02,
            rho_r: MaternParams {
                amplitude: 100.0,
                range: 0.3,
                smoothness: 3.0,
            },
            o0: [[10.0, 4.0], [4.0, 8.0]],
            o1: [[10.0, 8.0], [8.0, 15.0]],
            b0: 0.1,
            b1: -0.5,
            anchors: vec![0.0, 0.33, 0.67, 1.0],
            seed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Scenario {
    A,
    B,
}

impl std::str::FromStr for Scenario {
    type Err = JcrcError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "A" | "a" => Ok(Scenario::A),
            "B" | "b" => Ok(Scenario::B),
            _ => Err(JcrcError::Validation(format!("unknown scenario {s:?}; expected A or B"))),
        }
    }
}

/// Settings of the second study (prediction).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig2 {
    pub scenario: Scenario,
    pub n_subjects: usize,
    pub n_obs: usize,
    pub delta1: f64,
    pub delta2: f64,
    pub sigma: f64,
    pub sigma_r: f64,
    pub sigma_w: f64,
    /// Time exponents inside the group-1 means of coordinates 1 and 2.
    pub exponent1: f64,
    pub exponent2: f64,
    pub rho_r: MaternParams,
    pub o0: [[f64; 2]; 2],
    pub o1: [[f64; 2]; 2],
    pub anchors: Vec<f64>,
    pub seed: u64,
}

impl SimConfig2 {
    pub fn new(scenario: Scenario, seed: u64) -> Self {
        let (delta1, delta2, s) = match scenario {
            Scenario::A => (0.18, 0.7, 0.03),
            Scenario::B => (0.15, 0.5, 0.02),
        };
        SimConfig2 {
            scenario,
            n_subjects: 120,
            n_obs: 100,
            delta1,
            delta2,
            sigma: s,
            sigma_r: s,
            sigma_w: s / 4.0,
            exponent1: 1.1,
            exponent2: 1.2,
            rho_r: MaternParams {
                amplitude: 100.0,
                range: 0.3,
                smoothness: 3.0,
            },
            o0: [[10.0, 4.0], [4.0, 8.0]],
            o1: [[10.0, 8.0], [8.0, 15.0]],
            anchors: vec![0.0, 0.33, 0.67, 1.0],
            seed,
        }
    }

    /// Groups that differ in nothing: both deltas and the exponents neutral.
    pub fn null(mut self) -> Self {
        self.delta1 = 0.0;
        self.delta2 = 0.0;
        self.exponent1 = 1.0;
        self.exponent2 = 1.0;
        self
    }

    /// `t_j = (j + 1) / (n + 2)` for `j = 1..=n`.
    pub fn grid(&self) -> Vec<f64> {
        (1..=self.n_obs).map(|j| (j + 1) as f64 / (self.n_obs + 2) as f64).collect()
    }
}

/// Ground truth kept alongside a simulated panel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimTruth {
    pub format_version: u32,
    pub study: u8,
    pub subject_ids: Vec<String>,
    /// Generating group of each subject.
    pub groups: Vec<u8>,
    pub labels: Vec<u8>,
    pub anchors: Vec<f64>,
    /// Full anchor offsets of each subject's true warp.
    pub warp_offsets: Vec<Vec<f64>>,
    /// Linear predictor and probability (first study only).
    pub eta: Option<Vec<f64>>,
    pub pi: Option<Vec<f64>>,
    /// Training subjects (second study: first half of each group).
    pub train: Vec<bool>,
    pub b0: Option<f64>,
    pub b1: Option<f64>,
    /// Grid on which the true coefficient functions are sampled.
    pub beta_grid: Vec<f64>,
    /// `beta[a]` on `beta_grid` (first study only; empty otherwise).
    pub beta: Vec<Vec<f64>>,
    /// Spline weights of each subject's unwarped curve, `[i][a]`.
    pub curve_coefs: Vec<Vec<Vec<f64>>>,
    pub config: serde_json::Value,
}

impl SimTruth {
    pub fn warp(&self, i: usize) -> Result<Warp> {
        Warp::from_offsets(&self.anchors, &self.warp_offsets[i]).ok_or_else(|| JcrcError::NonMonotoneWarp {
            subject: self.subject_ids[i].clone(),
        })
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.subject_ids.iter().position(|s| s == id)
    }

    pub fn train_ids(&self) -> Vec<String> {
        self.ids_where(true)
    }

    pub fn test_ids(&self) -> Vec<String> {
        self.ids_where(false)
    }

    fn ids_where(&self, flag: bool) -> Vec<String> {
        self.subject_ids
            .iter()
            .zip(&self.train)
            .filter(|(_, t)| **t == flag)
            .map(|(s, _)| s.clone())
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct SimData {
    pub panel: CurvePanel,
    pub truth: SimTruth,
}

pub fn beta1(t: f64) -> f64 {
    (2.0 * PI * t).cos()
}

pub fn beta2(t: f64) -> f64 {
    2.0 * (t - 1.0).powi(2)
}

fn normal_pdf(t: f64, mean: f64, sd: f64) -> f64 {
    let z = (t - mean) / sd;
    (-0.5 * z * z).exp() / (sd * (2.0 * PI).sqrt())
}

fn beta_pdf(t: f64, a: f64, b: f64) -> f64 {
    if t <= 0.0 || t >= 1.0 {
        return 0.0;
    }
    t.powf(a - 1.0) * (1.0 - t).powf(b - 1.0) / puruspe::beta(a, b)
}

/// Mean curves of the first study, `mu[k][a](t)`.
pub fn study1_mean(k: u8, a: usize, t: f64) -> f64 {
    match (k, a) {
        (0, 0) => 0.6 * normal_pdf(t, 0.0, 1.0) + 0.4 * beta_pdf(t, 2.0, 3.0),
        (0, _) => (2.0 * PI * t + 0.5).sin(),
        (_, 0) => 0.5 * normal_pdf(t, 0.5, 0.5) + 0.5 * beta_pdf(t, 3.0, 4.0),
        (_, _) => (2.0 * PI * t.powf(1.2) + 0.5).sin(),
    }
}

/// Mean curves of the second study.
pub fn study2_mean(cfg: &SimConfig2, k: u8, a: usize, t: f64) -> f64 {
    match (k, a) {
        (0, 0) => (2.0 * PI * t).cos().exp(),
        (0, _) => (2.0 * PI * t).sin().exp(),
        (_, 0) => (2.0 * PI * t.powf(cfg.exponent1) - cfg.delta1).cos().exp(),
        (_, _) => (2.0 * PI * t.powf(cfg.exponent2) + cfg.delta1).sin().exp(),
    }
}

/// Pieces shared by both generators.
struct Generator {
    basis: BSplineBasis,
    /// Least-squares projection from the dense grid to spline weights.
    projector: DMatrix<f64>,
    /// `projector * chol(Matérn)`: spline weights of a unit-scale GP draw.
    gp_to_coefs: DMatrix<f64>,
    dense: Vec<f64>,
    warp_chol: [Matrix2<f64>; 2],
    anchors: Vec<f64>,
}

fn chol2(o: &[[f64; 2]; 2]) -> Result<Matrix2<f64>> {
    let m = Matrix2::new(o[0][0], o[0][1], o[1][0], o[1][1]);
    if o[0][1] != o[1][0] {
        return Err(JcrcError::Validation("warp covariance must be symmetric".into()));
    }
    m.cholesky()
        .map(|c| c.l())
        .ok_or_else(|| JcrcError::Validation("warp covariance must be positive definite".into()))
}

impl Generator {
    fn new(rho_r: &MaternParams, o: [&[[f64; 2]; 2]; 2], anchors: &[f64]) -> Result<Self> {
        if anchors.len() != 4 {
            return Err(JcrcError::Validation("simulations use four warp anchors".into()));
        }
        let basis = BSplineBasis::uniform(4, 8)?;
        let dense = uniform_grid(PROJECTION_POINTS);
        let psi = basis.design(&dense)?;
        let gram = psi.transpose() * &psi;
        let projector = SpdFactor::new(&gram)?.solve(&psi.transpose());
        let spec = CovSpec {
            kind: KernelKind::Matern,
            params: *rho_r,
        };
        let cov = matern_cov(&spec, &dense, &dense)?;
        let l = SpdFactor::new(&cov)?.lower();
        Ok(Generator {
            gp_to_coefs: &projector * l,
            projector,
            basis,
            dense,
            warp_chol: [chol2(o[0])?, chol2(o[1])?],
            anchors: anchors.to_vec(),
        })
    }

    fn mean_coefs(&self, f: impl Fn(f64) -> f64) -> DVector<f64> {
        let vals = DVector::from_iterator(self.dense.len(), self.dense.iter().map(|&t| f(t)));
        &self.projector * vals
    }
}

struct Subject {
    curve: SubjectCurve,
    coefs: [DVector<f64>; 2],
    offsets: Vec<f64>,
    v: f64,
    uniform: f64,
}

struct Draw<'a> {
    gen: &'a Generator,
    grid: &'a [f64],
    sigma: f64,
    sigma_r: f64,
    sigma_w: f64,
    seed: u64,
}

impl Draw<'_> {
    /// Every random quantity of subject `i` comes from its own stream.
    fn subject(&self, i: usize, k: u8, mean: &[DVector<f64>; 2], v_range: (f64, f64)) -> Result<Subject> {
        let mut rng = ChaCha20Rng::seed_from_u64(self.seed);
        rng.set_stream(i as u64);
        let g = self.gen;
        let mut std_normal = |n: usize| -> DVector<f64> {
            DVector::from_iterator(n, (0..n).map(|_| StandardNormal.sample(&mut rng)))
        };
        let p = g.dense.len();
        let z1 = std_normal(p);
        let z2 = std_normal(p);
        let coefs = [
            &mean[0] + &g.gp_to_coefs * z1 * self.sigma_r,
            &mean[1] + &g.gp_to_coefs * z2 * self.sigma_r,
        ];
        let gamma = std_normal(2) * self.sigma_w;
        let w = g.warp_chol[k as usize] * nalgebra::Vector2::new(gamma[0], gamma[1]);
        let offsets = vec![0.0, w[0], w[1], 0.0];
        let id = format!("s{i:04}");
        let warp = Warp::from_offsets(&g.anchors, &offsets).ok_or_else(|| JcrcError::NonMonotoneWarp { subject: id.clone() })?;
        let eps = std_normal(2 * self.grid.len());
        let mut xs = [Vec::with_capacity(self.grid.len()), Vec::with_capacity(self.grid.len())];
        for (j, &t) in self.grid.iter().enumerate() {
            let s = warp.eval(t);
            for a in 0..2 {
                let c = coefs[a].as_slice();
                xs[a].push(g.basis.eval_combination(s, c)? + self.sigma * eps[2 * j + a]);
            }
        }
        let v = rng.random_range(v_range.0..v_range.1);
        let uniform: f64 = rng.random();
        let [x1, x2] = xs;
        Ok(Subject {
            curve: SubjectCurve::new(id, ObservationGrid::new(self.grid.to_vec())?, x1, x2)?,
            coefs,
            offsets,
            v,
            uniform,
        })
    }
}

fn group_of(i: usize, n: usize) -> u8 {
    u8::from(i >= n / 2)
}

/// First study: curves, the outcome model `eta = b0 + b1 v + mean_j [x1 beta1 + x2 beta2]`
/// on the aligned noise-free curves, and Bernoulli labels.
pub fn simulate_study1(cfg: &SimConfig1) -> Result<SimData> {
    if cfg.n_subjects < 2 || cfg.n_obs < 4 {
        return Err(JcrcError::Validation("need at least 2 subjects and 4 observations".into()));
    }
    let gen = Generator::new(&cfg.rho_r, [&cfg.o0, &cfg.o1], &cfg.anchors)?;
    let grid = uniform_grid(cfg.n_obs);
    let means: Vec<[DVector<f64>; 2]> = (0..2u8)
        .map(|k| [gen.mean_coefs(|t| study1_mean(k, 0, t)), gen.mean_coefs(|t| study1_mean(k, 1, t))])
        .collect();
    let draw = Draw {
        gen: &gen,
        grid: &grid,
        sigma: cfg.sigma,
        sigma_r: cfg.sigma_r,
        sigma_w: cfg.sigma_w,
        seed: cfg.seed,
    };
    let b1_grid: Vec<f64> = grid.iter().map(|&t| beta1(t)).collect();
    let b2_grid: Vec<f64> = grid.iter().map(|&t| beta2(t)).collect();
    let mut subjects = Vec::with_capacity(cfg.n_subjects);
    let mut eta = Vec::new();
    let mut pi = Vec::new();
    let mut labels = Vec::new();
    for i in 0..cfg.n_subjects {
        let k = group_of(i, cfg.n_subjects);
        let range = if k == 0 { (1.0, 2.0) } else { (0.5, 1.5) };
        let s = draw.subject(i, k, &means[k as usize], range)?;
        let mut integral = 0.0;
        for (j, &t) in grid.iter().enumerate() {
            integral += gen.basis.eval_combination(t, s.coefs[0].as_slice())? * b1_grid[j]
                + gen.basis.eval_combination(t, s.coefs[1].as_slice())? * b2_grid[j];
        }
        let e = cfg.b0 + cfg.b1 * s.v + integral / grid.len() as f64;
        let p = 1.0 / (1.0 + (-e).exp());
        eta.push(e);
        pi.push(p);
        labels.push(u8::from(s.uniform < p));
        subjects.push((k, s));
    }
    let n = cfg.n_subjects;
    finish(
        1,
        subjects,
        labels,
        Some(eta),
        Some(pi),
        vec![true; n],
        Some((cfg.b0, cfg.b1)),
        grid.clone(),
        vec![b1_grid, b2_grid],
        &cfg.anchors,
        serde_json::to_value(cfg)?,
    )
}

/// Second study: group = label, scalar law shifted by `delta2` in group 1,
/// and a train/test split taking the first half of each group.
pub fn simulate_study2(cfg: &SimConfig2) -> Result<SimData> {
    if cfg.n_subjects < 4 || cfg.n_obs < 4 {
        return Err(JcrcError::Validation("need at least 4 subjects and 4 observations".into()));
    }
    let gen = Generator::new(&cfg.rho_r, [&cfg.o0, &cfg.o1], &cfg.anchors)?;
    let grid = cfg.grid();
    let means: Vec<[DVector<f64>; 2]> = (0..2u8)
        .map(|k| [gen.mean_coefs(|t| study2_mean(cfg, k, 0, t)), gen.mean_coefs(|t| study2_mean(cfg, k, 1, t))])
        .collect();
    let draw = Draw {
        gen: &gen,
        grid: &grid,
        sigma: cfg.sigma,
        sigma_r: cfg.sigma_r,
        sigma_w: cfg.sigma_w,
        seed: cfg.seed,
    };
    let n = cfg.n_subjects;
    let n0 = n / 2;
    let mut subjects = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    let mut train = Vec::with_capacity(n);
    for i in 0..n {
        let k = group_of(i, n);
        let range = if k == 0 { (1.0, 2.0) } else { (1.0 - cfg.delta2, 2.0 - cfg.delta2) };
        let s = draw.subject(i, k, &means[k as usize], range)?;
        let (pos, size) = if k == 0 { (i, n0) } else { (i - n0, n - n0) };
        train.push(pos < size / 2);
        labels.push(k);
        subjects.push((k, s));
    }
    finish(
        2,
        subjects,
        labels,
        None,
        None,
        train,
        None,
        Vec::new(),
        Vec::new(),
        &cfg.anchors,
        serde_json::to_value(cfg)?,
    )
}

#[allow(clippy::too_many_arguments)]
fn finish(
    study: u8,
    subjects: Vec<(u8, Subject)>,
    labels: Vec<u8>,
    eta: Option<Vec<f64>>,
    pi: Option<Vec<f64>>,
    train: Vec<bool>,
    b: Option<(f64, f64)>,
    beta_grid: Vec<f64>,
    beta: Vec<Vec<f64>>,
    anchors: &[f64],
    config: serde_json::Value,
) -> Result<SimData> {
    let mut curves = Vec::with_capacity(subjects.len());
    let mut scalars = Vec::with_capacity(subjects.len());
    let mut truth = SimTruth {
        format_version: crate::FORMAT_VERSION,
        study,
        subject_ids: Vec::new(),
        groups: Vec::new(),
        labels: labels.clone(),
        anchors: anchors.to_vec(),
        warp_offsets: Vec::new(),
        eta,
        pi,
        train,
        b0: b.map(|x| x.0),
        b1: b.map(|x| x.1),
        beta_grid,
        beta,
        curve_coefs: Vec::new(),
        config,
    };
    for ((k, s), y) in subjects.into_iter().zip(labels) {
        truth.subject_ids.push(s.curve.subject_id.clone());
        truth.groups.push(k);
        truth.warp_offsets.push(s.offsets);
        truth.curve_coefs.push(s.coefs.iter().map(|c| c.iter().copied().collect()).collect());
        scalars.push(ScalarRecord::new(s.curve.subject_id.clone(), vec![s.v], Some(y))?);
        curves.push(s.curve);
    }
    Ok(SimData {
        panel: join_panel(curves, scalars)?,
        truth,
    })
}
