//! Small derivative-free and quasi-Newton minimizers.
//!
//! Objectives may return `f64::INFINITY` to mark infeasible points; both
//! methods treat that as "worse than anything finite".

/// Outcome of a minimization. `x` is always the best point evaluated.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub evals: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, Copy)]
pub struct BfgsOptions {
    /// Central finite-difference step.
    pub fd_step: f64,
    pub max_evals: usize,
    /// Stop when the largest gradient component falls below this.
    pub gtol: f64,
    /// Stop when an iteration improves `f` by less than `ftol * (|f| + ftol)`.
    pub ftol: f64,
}

impl Default for BfgsOptions {
    fn default() -> Self {
        BfgsOptions {
            fd_step: 1e-5,
            max_evals: 500,
            gtol: 1e-8,
            ftol: 1e-12,
        }
    }
}

struct Counted<F> {
    f: F,
    evals: usize,
    best_x: Vec<f64>,
    best_f: f64,
}

impl<F: FnMut(&[f64]) -> f64> Counted<F> {
    fn call(&mut self, x: &[f64]) -> f64 {
        self.evals += 1;
        let v = (self.f)(x);
        let v = if v.is_nan() { f64::INFINITY } else { v };
        if v < self.best_f {
            self.best_f = v;
            self.best_x.copy_from_slice(x);
        }
        v
    }
}

fn fd_gradient<F: FnMut(&[f64]) -> f64>(obj: &mut Counted<F>, x: &[f64], fx: f64, h: f64) -> Vec<f64> {
    let mut xp = x.to_vec();
    (0..x.len())
        .map(|i| {
            xp[i] = x[i] + h;
            let fp = obj.call(&xp);
            xp[i] = x[i] - h;
            let fm = obj.call(&xp);
            xp[i] = x[i];
            match (fp.is_finite(), fm.is_finite()) {
                (true, true) => (fp - fm) / (2.0 * h),
                (true, false) => (fp - fx) / h,
                (false, true) => (fx - fm) / h,
                (false, false) => 0.0,
            }
        })
        .collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// BFGS on the inverse Hessian with central-difference gradients and
/// Armijo backtracking.
pub fn bfgs_fd<F: FnMut(&[f64]) -> f64>(f: F, x0: &[f64], opts: &BfgsOptions) -> OptimResult {
    let d = x0.len();
    let mut obj = Counted {
        f,
        evals: 0,
        best_x: x0.to_vec(),
        best_f: f64::INFINITY,
    };
    let mut x = x0.to_vec();
    let mut fx = obj.call(&x);
    if d == 0 || !fx.is_finite() {
        return OptimResult {
            x,
            f: fx,
            evals: obj.evals,
            converged: d == 0,
        };
    }
    let mut hinv = vec![0.0; d * d];
    let reset = |h: &mut Vec<f64>| {
        h.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..d {
            h[i * d + i] = 1.0;
        }
    };
    reset(&mut hinv);
    let mut g = fd_gradient(&mut obj, &x, fx, opts.fd_step);
    let mut converged = false;
    let mut first = true;
    while obj.evals + 2 * d + 1 < opts.max_evals {
        let gmax = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if gmax < opts.gtol {
            converged = true;
            break;
        }
        let mut p: Vec<f64> = (0..d).map(|i| -dot(&hinv[i * d..(i + 1) * d], &g)).collect();
        let mut slope = dot(&g, &p);
        if slope >= 0.0 {
            reset(&mut hinv);
            p = g.iter().map(|v| -v).collect();
            slope = -dot(&g, &g);
        }
        // on the first step scale the unit-Hessian direction to a modest length
        let mut alpha = if first {
            (0.1 / gmax).min(1.0)
        } else {
            1.0
        };
        first = false;
        let mut accepted = None;
        for _ in 0..40 {
            if obj.evals >= opts.max_evals {
                break;
            }
            let xn: Vec<f64> = x.iter().zip(&p).map(|(a, b)| a + alpha * b).collect();
            let fxn = obj.call(&xn);
            if fxn.is_finite() && fxn <= fx + 1e-4 * alpha * slope {
                accepted = Some((xn, fxn));
                break;
            }
            alpha *= 0.5;
        }
        let Some((xn, fxn)) = accepted else {
            // no descent along the direction: stationary to FD accuracy
            converged = true;
            break;
        };
        let small = fx - fxn <= opts.ftol * (fx.abs() + opts.ftol);
        let gn = fd_gradient(&mut obj, &xn, fxn, opts.fd_step);
        let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = gn.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() && sy > 0.0 {
            let hy: Vec<f64> = (0..d).map(|i| dot(&hinv[i * d..(i + 1) * d], &y)).collect();
            let yhy = dot(&y, &hy);
            let rho = 1.0 / sy;
            for i in 0..d {
                for j in 0..d {
                    hinv[i * d + j] += rho * ((1.0 + rho * yhy) * s[i] * s[j] - hy[i] * s[j] - s[i] * hy[j]);
                }
            }
        }
        x = xn;
        fx = fxn;
        g = gn;
        if small {
            converged = true;
            break;
        }
    }
    OptimResult {
        x: obj.best_x,
        f: obj.best_f,
        evals: obj.evals,
        converged,
    }
}

#[derive(Debug, Clone, Copy)]
pub struct NelderMeadOptions {
    /// Initial simplex edge along each axis.
    pub step: f64,
    pub max_evals: usize,
    /// Stop when the spread of simplex values is below `ftol * (|f_best| + 1e-10)`.
    pub ftol: f64,
    /// ...and the simplex diameter is below `xtol`.
    pub xtol: f64,
}

impl Default for NelderMeadOptions {
    fn default() -> Self {
        NelderMeadOptions {
            step: 0.5,
            max_evals: 400,
            ftol: 1e-8,
            xtol: 1e-6,
        }
    }
}

/// Nelder–Mead simplex search with the standard coefficients
/// (reflection 1, expansion 2, contraction ½, shrink ½).
pub fn nelder_mead<F: FnMut(&[f64]) -> f64>(f: F, x0: &[f64], opts: &NelderMeadOptions) -> OptimResult {
    let d = x0.len();
    let mut obj = Counted {
        f,
        evals: 0,
        best_x: x0.to_vec(),
        best_f: f64::INFINITY,
    };
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(d + 1);
    let f0 = obj.call(x0);
    simplex.push((x0.to_vec(), f0));
    for i in 0..d {
        let mut x = x0.to_vec();
        x[i] += opts.step;
        let fx = obj.call(&x);
        simplex.push((x, fx));
    }
    let mut converged = false;
    let order = |s: &mut Vec<(Vec<f64>, f64)>| s.sort_by(|a, b| a.1.total_cmp(&b.1));
    while obj.evals < opts.max_evals {
        order(&mut simplex);
        let fbest = simplex[0].1;
        let fworst = simplex[d].1;
        let diam = simplex[1..]
            .iter()
            .map(|(x, _)| {
                x.iter()
                    .zip(&simplex[0].0)
                    .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()))
            })
            .fold(0.0f64, f64::max);
        if fbest.is_finite() && fworst - fbest <= opts.ftol * (fbest.abs() + 1e-10) && diam <= opts.xtol {
            converged = true;
            break;
        }
        let centroid: Vec<f64> = (0..d)
            .map(|j| simplex[..d].iter().map(|(x, _)| x[j]).sum::<f64>() / d as f64)
            .collect();
        let along = |t: f64| -> Vec<f64> {
            centroid
                .iter()
                .zip(&simplex[d].0)
                .map(|(c, w)| c + t * (w - c))
                .collect()
        };
        let xr = along(-1.0);
        let fr = obj.call(&xr);
        if fr < simplex[0].1 {
            let xe = along(-2.0);
            let fe = obj.call(&xe);
            simplex[d] = if fe < fr { (xe, fe) } else { (xr, fr) };
            continue;
        }
        if fr < simplex[d - 1].1 {
            simplex[d] = (xr, fr);
            continue;
        }
        let (xc, fc) = if fr < simplex[d].1 {
            let xc = along(-0.5);
            let fc = obj.call(&xc);
            (xc, fc)
        } else {
            let xc = along(0.5);
            let fc = obj.call(&xc);
            (xc, fc)
        };
        if fc < simplex[d].1.min(fr) {
            simplex[d] = (xc, fc);
            continue;
        }
        let best = simplex[0].0.clone();
        for v in simplex.iter_mut().skip(1) {
            let xs: Vec<f64> = best.iter().zip(&v.0).map(|(b, x)| b + 0.5 * (x - b)).collect();
            let fs = obj.call(&xs);
            *v = (xs, fs);
        }
    }
    OptimResult {
        x: obj.best_x,
        f: obj.best_f,
        evals: obj.evals,
        converged,
    }
}
