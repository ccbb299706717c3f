//! Spline bases, monotone interpolation and quadrature on `[0, 1]`.
//!
//! Everything in this module is a pure function of its inputs. Matrices are
//! `nalgebra::DMatrix<f64>` with one row per evaluation point.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{JcrcError, Result};

/// Slack allowed when checking that an abscissa lies in `[0, 1]`.
const DOMAIN_SLACK: f64 = 1e-12;

fn check_unit(t: f64) -> Result<f64> {
    if !t.is_finite() || t < -DOMAIN_SLACK || t > 1.0 + DOMAIN_SLACK {
        return Err(JcrcError::Domain(format!("abscissa {t} outside [0, 1]")));
    }
    Ok(t.clamp(0.0, 1.0))
}

/// `n` equally spaced points from 0 to 1 inclusive.
pub fn uniform_grid(n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![0.0],
        _ => (0..n).map(|i| i as f64 / (n - 1) as f64).collect(),
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct BSplineSpec {
    order: usize,
    interior_knots: Vec<f64>,
}

/// Clamped B-spline basis on `[0, 1]`.
///
/// With `order` k and m interior knots the basis has `q = m + k` functions.
/// Boundary knots 0 and 1 are repeated k times.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BSplineSpec", into = "BSplineSpec")]
pub struct BSplineBasis {
    order: usize,
    interior_knots: Vec<f64>,
    knots: Vec<f64>,
}

impl TryFrom<BSplineSpec> for BSplineBasis {
    type Error = JcrcError;
    fn try_from(spec: BSplineSpec) -> Result<Self> {
        BSplineBasis::new(spec.order, spec.interior_knots)
    }
}

impl From<BSplineBasis> for BSplineSpec {
    fn from(b: BSplineBasis) -> Self {
        BSplineSpec {
            order: b.order,
            interior_knots: b.interior_knots,
        }
    }
}

impl BSplineBasis {
    pub fn new(order: usize, interior_knots: Vec<f64>) -> Result<Self> {
        if order == 0 {
            return Err(JcrcError::Validation("B-spline order must be >= 1".into()));
        }
        let mut prev = 0.0;
        for &k in &interior_knots {
            if !(k > prev && k < 1.0) {
                return Err(JcrcError::Validation(format!(
                    "interior knots must be strictly increasing inside (0, 1); got {interior_knots:?}"
                )));
            }
            prev = k;
        }
        let mut knots = vec![0.0; order];
        knots.extend_from_slice(&interior_knots);
        knots.extend(std::iter::repeat_n(1.0, order));
        Ok(BSplineBasis {
            order,
            interior_knots,
            knots,
        })
    }

    /// `n_interior` equally spaced interior knots: `i / (n_interior + 1)`.
    pub fn uniform(order: usize, n_interior: usize) -> Result<Self> {
        let knots = (1..=n_interior)
            .map(|i| i as f64 / (n_interior + 1) as f64)
            .collect();
        Self::new(order, knots)
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn interior_knots(&self) -> &[f64] {
        &self.interior_knots
    }

    /// Full clamped knot vector.
    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    /// Number of basis functions `q`.
    pub fn dim(&self) -> usize {
        self.interior_knots.len() + self.order
    }

    /// Index `mu` with `knots[mu] <= t < knots[mu + 1]`, using the last
    /// non-empty interval for `t == 1`.
    fn span(&self, t: f64) -> usize {
        let q = self.dim();
        let p = self.order - 1;
        if t >= 1.0 {
            return q - 1;
        }
        // knots[p..=q] are the distinct breakpoints 0, interior..., 1
        let breaks = &self.knots[p..=q];
        let idx = breaks.partition_point(|&k| k <= t);
        p + idx.saturating_sub(1)
    }

    /// Non-zero basis values of the given degree at `t` (which must already be
    /// clamped to `[0, 1]`); returns `(span, values)` where `values[r]` belongs
    /// to basis index `span - degree + r`.
    fn nonzero(&self, t: f64, degree: usize, out: &mut [f64]) -> usize {
        let mu = self.span(t);
        let kn = &self.knots;
        let mut left = [0.0f64; 16];
        let mut right = [0.0f64; 16];
        out[0] = 1.0;
        for j in 1..=degree {
            left[j] = t - kn[mu + 1 - j];
            right[j] = kn[mu + j] - t;
            let mut saved = 0.0;
            for r in 0..j {
                let denom = right[r + 1] + left[j - r];
                let temp = if denom != 0.0 { out[r] / denom } else { 0.0 };
                out[r] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            out[j] = saved;
        }
        mu
    }

    /// Writes all `q` basis values at `t` into `row`.
    pub fn eval_row(&self, t: f64, row: &mut [f64]) -> Result<()> {
        let t = check_unit(t)?;
        let p = self.order - 1;
        let mut vals = [0.0f64; 16];
        let mu = self.nonzero(t, p, &mut vals);
        row.iter_mut().for_each(|v| *v = 0.0);
        for r in 0..=p {
            row[mu - p + r] = vals[r];
        }
        Ok(())
    }

    /// Value of the spline `sum_l coefs[l] * psi_l(t)`.
    pub fn eval_combination(&self, t: f64, coefs: &[f64]) -> Result<f64> {
        let t = check_unit(t)?;
        let p = self.order - 1;
        let mut vals = [0.0f64; 16];
        let mu = self.nonzero(t, p, &mut vals);
        Ok((0..=p).map(|r| vals[r] * coefs[mu - p + r]).sum())
    }

    /// First derivative of the spline `sum_l coefs[l] * psi_l` at `t`.
    pub fn deriv_combination(&self, t: f64, coefs: &[f64]) -> Result<f64> {
        let t = check_unit(t)?;
        let p = self.order - 1;
        if p == 0 {
            return Ok(0.0);
        }
        let mut vals = [0.0f64; 16];
        let mu = self.nonzero(t, p - 1, &mut vals);
        let kn = &self.knots;
        let mut acc = 0.0;
        // lower-degree value vals[r] belongs to index i = mu - (p - 1) + r
        for r in 0..p {
            let i = mu + 1 - p + r;
            let denom = kn[i + p] - kn[i];
            if denom > 0.0 {
                acc += p as f64 * (coefs[i] - coefs[i - 1]) / denom * vals[r];
            }
        }
        Ok(acc)
    }

    /// Design matrix `[n x q]` at the given abscissae.
    pub fn design(&self, times: &[f64]) -> Result<DMatrix<f64>> {
        let q = self.dim();
        let mut m = DMatrix::zeros(times.len(), q);
        let mut row = vec![0.0; q];
        for (j, &t) in times.iter().enumerate() {
            self.eval_row(t, &mut row)?;
            for l in 0..q {
                m[(j, l)] = row[l];
            }
        }
        Ok(m)
    }
}

/// Design matrix of `basis` on `grid`.
pub fn bspline_design(grid: &[f64], basis: &BSplineBasis) -> Result<DMatrix<f64>> {
    basis.design(grid)
}

/// Truncated power basis `{1, t, (t - k_3)_+, ..., (t - k_Ke)_+}` for the
/// functional regression coefficient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruncatedPowerBasis {
    kappa: Vec<f64>,
}

impl TruncatedPowerBasis {
    pub fn new(kappa: Vec<f64>) -> Result<Self> {
        let mut prev = 0.0;
        for &k in &kappa {
            if !(k > prev && k < 1.0) {
                return Err(JcrcError::Validation(format!(
                    "truncated power knots must be strictly increasing inside (0, 1); got {kappa:?}"
                )));
            }
            prev = k;
        }
        Ok(TruncatedPowerBasis { kappa })
    }

    /// Basis of size `k_e` whose `k_e - 2` knots are the empirical quantiles
    /// (linear interpolation between order statistics) at probabilities
    /// `l / (k_e - 1)`, `l = 1..k_e-2`, of the distinct values in `times`.
    pub fn from_quantiles(times: &[f64], k_e: usize) -> Result<Self> {
        if k_e < 2 {
            return Err(JcrcError::Validation(format!("K_e must be >= 2, got {k_e}")));
        }
        let mut uniq: Vec<f64> = times.to_vec();
        uniq.sort_by(f64::total_cmp);
        uniq.dedup();
        if uniq.len() < 2 {
            return Err(JcrcError::Validation(
                "need at least two distinct time points for knot placement".into(),
            ));
        }
        let n = uniq.len();
        let kappa = (1..k_e - 1)
            .map(|l| {
                let p = l as f64 / (k_e - 1) as f64;
                let h = p * (n - 1) as f64;
                let lo = h.floor() as usize;
                let hi = (lo + 1).min(n - 1);
                uniq[lo] + (h - lo as f64) * (uniq[hi] - uniq[lo])
            })
            .collect();
        Self::new(kappa)
    }

    /// Knot locations `k_3 .. k_Ke`.
    pub fn knots(&self) -> &[f64] {
        &self.kappa
    }

    /// Basis size `K_e`.
    pub fn dim(&self) -> usize {
        self.kappa.len() + 2
    }

    pub fn row(&self, t: f64, row: &mut [f64]) {
        row[0] = 1.0;
        row[1] = t;
        for (l, &k) in self.kappa.iter().enumerate() {
            row[l + 2] = (t - k).max(0.0);
        }
    }

    /// Evaluates `sum_l coefs[l] * varphi_l(t)`.
    pub fn eval_combination(&self, t: f64, coefs: &[f64]) -> f64 {
        coefs[0]
            + coefs[1] * t
            + self
                .kappa
                .iter()
                .zip(&coefs[2..])
                .map(|(k, e)| e * (t - k).max(0.0))
                .sum::<f64>()
    }

    pub fn design(&self, times: &[f64]) -> Result<DMatrix<f64>> {
        let mut m = DMatrix::zeros(times.len(), self.dim());
        let mut row = vec![0.0; self.dim()];
        for (j, &t) in times.iter().enumerate() {
            self.row(check_unit(t)?, &mut row);
            for (l, v) in row.iter().enumerate() {
                m[(j, l)] = *v;
            }
        }
        Ok(m)
    }
}

/// Design matrix of a truncated power basis on `grid`.
pub fn tpower_design(grid: &[f64], basis: &TruncatedPowerBasis) -> Result<DMatrix<f64>> {
    basis.design(grid)
}

/// Piecewise-cubic Hermite interpolant with Hyman's monotonicity filter.
///
/// Non-decreasing ordinates give a non-decreasing C¹ function; the
/// interpolant passes through every anchor exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct MonotoneInterpolant {
    anchors: Vec<f64>,
    values: Vec<f64>,
    slopes: Vec<f64>,
}

/// Builds the Hyman-filtered cubic Hermite interpolant through
/// `(anchors[j], values[j])`.
pub fn hyman_interp(anchors: &[f64], values: &[f64]) -> Result<MonotoneInterpolant> {
    MonotoneInterpolant::new(anchors, values)
}

impl MonotoneInterpolant {
    pub fn new(anchors: &[f64], values: &[f64]) -> Result<Self> {
        let n = anchors.len();
        if n != values.len() {
            return Err(JcrcError::Validation(format!(
                "anchor/value length mismatch: {n} vs {}",
                values.len()
            )));
        }
        if n < 2 {
            return Err(JcrcError::Validation("need at least two anchors".into()));
        }
        if anchors.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(JcrcError::Validation(format!(
                "anchors must be strictly increasing: {anchors:?}"
            )));
        }
        if values.iter().chain(anchors).any(|v| !v.is_finite()) {
            return Err(JcrcError::Validation("non-finite anchor data".into()));
        }
        let h: Vec<f64> = anchors.windows(2).map(|w| w[1] - w[0]).collect();
        let delta: Vec<f64> = values
            .windows(2)
            .zip(&h)
            .map(|(w, h)| (w[1] - w[0]) / h)
            .collect();
        let mut slopes = vec![0.0; n];
        if n == 2 {
            slopes[0] = delta[0];
            slopes[1] = delta[0];
        } else {
            // three-point estimates, one-sided at the ends
            slopes[0] = ((2.0 * h[0] + h[1]) * delta[0] - h[0] * delta[1]) / (h[0] + h[1]);
            for j in 1..n - 1 {
                slopes[j] = (h[j] * delta[j - 1] + h[j - 1] * delta[j]) / (h[j - 1] + h[j]);
            }
            slopes[n - 1] = ((2.0 * h[n - 2] + h[n - 3]) * delta[n - 2] - h[n - 2] * delta[n - 3])
                / (h[n - 2] + h[n - 3]);
        }
        hyman_filter(&delta, &mut slopes);
        Ok(MonotoneInterpolant {
            anchors: anchors.to_vec(),
            values: values.to_vec(),
            slopes,
        })
    }

    pub fn anchors(&self) -> &[f64] {
        &self.anchors
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Filtered Hermite slopes at the anchors.
    pub fn slopes(&self) -> &[f64] {
        &self.slopes
    }

    fn interval(&self, t: f64) -> usize {
        let n = self.anchors.len();
        self.anchors[1..n - 1].partition_point(|&a| a <= t)
    }

    /// Evaluates the interpolant; beyond the anchor range it continues
    /// linearly with the end slope.
    pub fn eval(&self, t: f64) -> f64 {
        let n = self.anchors.len();
        if t <= self.anchors[0] {
            return self.values[0] + self.slopes[0] * (t - self.anchors[0]);
        }
        if t >= self.anchors[n - 1] {
            return self.values[n - 1] + self.slopes[n - 1] * (t - self.anchors[n - 1]);
        }
        let j = self.interval(t);
        let h = self.anchors[j + 1] - self.anchors[j];
        let s = (t - self.anchors[j]) / h;
        let s2 = s * s;
        let s3 = s2 * s;
        let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
        let h10 = s3 - 2.0 * s2 + s;
        let h01 = -2.0 * s3 + 3.0 * s2;
        let h11 = s3 - s2;
        h00 * self.values[j]
            + h10 * h * self.slopes[j]
            + h01 * self.values[j + 1]
            + h11 * h * self.slopes[j + 1]
    }

    /// First derivative of the interpolant.
    pub fn derivative(&self, t: f64) -> f64 {
        let n = self.anchors.len();
        if t <= self.anchors[0] {
            return self.slopes[0];
        }
        if t >= self.anchors[n - 1] {
            return self.slopes[n - 1];
        }
        let j = self.interval(t);
        let h = self.anchors[j + 1] - self.anchors[j];
        let s = (t - self.anchors[j]) / h;
        let s2 = s * s;
        let d00 = 6.0 * s2 - 6.0 * s;
        let d10 = 3.0 * s2 - 4.0 * s + 1.0;
        let d01 = -6.0 * s2 + 6.0 * s;
        let d11 = 3.0 * s2 - 2.0 * s;
        (d00 * self.values[j] + d01 * self.values[j + 1]) / h
            + d10 * self.slopes[j]
            + d11 * self.slopes[j + 1]
    }
}

/// Hyman (1983) slope filter: clip each slope to `[0, 3 min(|S0|, |S1|)]` in
/// the direction of local monotonicity.
fn hyman_filter(delta: &[f64], slopes: &mut [f64]) {
    let n = slopes.len();
    for j in 0..n {
        let s0 = if j == 0 { delta[0] } else { delta[j - 1] };
        let s1 = if j == n - 1 { delta[n - 2] } else { delta[j] };
        let bound = 3.0 * s0.abs().min(s1.abs());
        let sig = if s0 * s1 > 0.0 { s1 } else { slopes[j] };
        slopes[j] = if sig >= 0.0 {
            slopes[j].max(0.0).min(bound)
        } else {
            slopes[j].min(0.0).max(-bound)
        };
    }
}

/// Trapezoidal quadrature weights on `grid`; they sum to the grid span.
pub fn quad_weights(grid: &[f64]) -> Vec<f64> {
    let n = grid.len();
    let mut w = vec![0.0; n];
    for j in 0..n.saturating_sub(1) {
        let h = 0.5 * (grid[j + 1] - grid[j]);
        w[j] += h;
        w[j + 1] += h;
    }
    w
}

/// `(l, s)` entry is the quadrature of `f_l * g_s` with the given weights.
pub fn cross_gram_weighted(f_cols: &DMatrix<f64>, g_cols: &DMatrix<f64>, weights: &[f64]) -> Result<DMatrix<f64>> {
    let n = weights.len();
    if f_cols.nrows() != n || g_cols.nrows() != n {
        return Err(JcrcError::Validation(format!(
            "cross_gram shape mismatch: {} and {} rows for {n} weights",
            f_cols.nrows(),
            g_cols.nrows()
        )));
    }
    let mut wg = g_cols.clone();
    for (j, w) in weights.iter().enumerate() {
        wg.row_mut(j).scale_mut(*w);
    }
    Ok(f_cols.transpose() * wg)
}

/// `cross_gram_weighted` with trapezoidal weights on `grid`.
pub fn cross_gram(f_cols: &DMatrix<f64>, g_cols: &DMatrix<f64>, grid: &[f64]) -> Result<DMatrix<f64>> {
    cross_gram_weighted(f_cols, g_cols, &quad_weights(grid))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    /// Textbook Cox–de Boor recursion, kept independent of the triangular
    /// scheme used by `BSplineBasis`.
    fn cox_de_boor(knots: &[f64], i: usize, k: usize, t: f64, last: usize) -> f64 {
        if k == 1 {
            let inside = knots[i] <= t && t < knots[i + 1];
            let closed_end = t == 1.0 && i == last;
            return if inside || closed_end { 1.0 } else { 0.0 };
        }
        let mut v = 0.0;
        let d1 = knots[i + k - 1] - knots[i];
        if d1 > 0.0 {
            v += (t - knots[i]) / d1 * cox_de_boor(knots, i, k - 1, t, last);
        }
        let d2 = knots[i + k] - knots[i + 1];
        if d2 > 0.0 {
            v += (knots[i + k] - t) / d2 * cox_de_boor(knots, i + 1, k - 1, t, last);
        }
        v
    }

    fn oracle_design(basis: &BSplineBasis, times: &[f64]) -> DMatrix<f64> {
        let q = basis.dim();
        let k = basis.order();
        let knots = basis.knots();
        // the last non-degenerate order-1 interval
        let last = q - 1;
        DMatrix::from_fn(times.len(), q, |j, l| cox_de_boor(knots, l, k, times[j], last))
    }

    #[test]
    fn partition_of_unity() {
        let b = BSplineBasis::uniform(4, 8).unwrap();
        assert_eq!(b.dim(), 12);
        let grid: Vec<f64> = (0..=200).map(|i| i as f64 / 200.0).collect();
        let d = b.design(&grid).unwrap();
        for j in 0..grid.len() {
            assert_abs_diff_eq!(d.row(j).sum(), 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn order_one_is_indicator() {
        let b = BSplineBasis::uniform(1, 3).unwrap();
        let grid = [0.0, 0.1, 0.25, 0.3, 0.6, 0.75, 0.99, 1.0];
        let d = b.design(&grid).unwrap();
        for j in 0..grid.len() {
            let ones = d.row(j).iter().filter(|&&v| v == 1.0).count();
            let zeros = d.row(j).iter().filter(|&&v| v == 0.0).count();
            assert_eq!((ones, zeros), (1, 3), "row {j}: {:?}", d.row(j));
        }
        assert_eq!(d[(2, 1)], 1.0);
        assert_eq!(d[(7, 3)], 1.0);
    }

    #[test]
    fn outside_domain_rejected() {
        let b = BSplineBasis::uniform(4, 2).unwrap();
        assert!(matches!(b.design(&[0.5, 1.2]), Err(JcrcError::Domain(_))));
        assert!(matches!(b.design(&[-0.01]), Err(JcrcError::Domain(_))));
    }

    #[test]
    fn derivative_matches_finite_difference() {
        let b = BSplineBasis::uniform(4, 8).unwrap();
        let coefs: Vec<f64> = (0..12).map(|i| ((i * 7) % 5) as f64 - 2.0).collect();
        for &t in &[0.05, 0.2, 0.37, 0.5, 0.81, 0.95] {
            let h = 1e-6;
            let fd = (b.eval_combination(t + h, &coefs).unwrap()
                - b.eval_combination(t - h, &coefs).unwrap())
                / (2.0 * h);
            let an = b.deriv_combination(t, &coefs).unwrap();
            assert_abs_diff_eq!(an, fd, epsilon = 1e-6);
        }
    }

    proptest! {
        #[test]
        fn design_matches_cox_de_boor(times in proptest::collection::vec(0.0f64..=1.0, 1..40),
                                      order in 1usize..=5, n_int in 0usize..10) {
            let b = BSplineBasis::uniform(order, n_int).unwrap();
            let d = b.design(&times).unwrap();
            let o = oracle_design(&b, &times);
            let diff = (d - o).abs().max();
            prop_assert!(diff < 1e-12, "max diff {diff}");
        }

        #[test]
        fn tpower_matches_formula(times in proptest::collection::vec(0.0f64..=1.0, 1..30)) {
            let tp = TruncatedPowerBasis::new(vec![0.2, 0.5, 0.7]).unwrap();
            let d = tp.design(&times).unwrap();
            for (j, &t) in times.iter().enumerate() {
                let expect = [1.0, t, if t > 0.2 { t - 0.2 } else { 0.0 },
                              if t > 0.5 { t - 0.5 } else { 0.0 }, if t > 0.7 { t - 0.7 } else { 0.0 }];
                for l in 0..5 {
                    prop_assert_eq!(d[(j, l)], expect[l]);
                }
            }
        }

        #[test]
        fn hyman_monotone_dense_scan(steps in proptest::collection::vec(0.0f64..1.0, 2..9)) {
            let n = steps.len() + 1;
            let anchors: Vec<f64> = (0..n).map(|i| i as f64 / (n - 1) as f64).collect();
            let mut values = vec![0.0];
            for s in &steps {
                values.push(values.last().unwrap() + s);
            }
            let f = hyman_interp(&anchors, &values).unwrap();
            let mut prev = f.eval(0.0);
            for i in 1..=10_000 {
                let v = f.eval(i as f64 / 10_000.0);
                prop_assert!(v - prev >= -1e-12);
                prev = v;
            }
        }

        #[test]
        fn quad_exact_for_linear(raw in proptest::collection::vec(0.0f64..1.0, 2..50),
                                 a in -5.0f64..5.0, b in -5.0f64..5.0) {
            let mut grid = raw.clone();
            grid.sort_by(f64::total_cmp);
            grid.dedup();
            prop_assume!(grid.len() >= 2);
            let w = quad_weights(&grid);
            let (lo, hi) = (grid[0], *grid.last().unwrap());
            let q: f64 = grid.iter().zip(&w).map(|(t, w)| w * (a + b * t)).sum();
            let exact = a * (hi - lo) + 0.5 * b * (hi * hi - lo * lo);
            prop_assert!((q - exact).abs() < 1e-12);
        }
    }

    #[test]
    fn tpower_rows() {
        let tp = TruncatedPowerBasis::new(vec![0.5, 0.8]).unwrap();
        let d = tp.design(&[0.0, 1.0]).unwrap();
        assert_eq!(d.row(0).iter().copied().collect::<Vec<_>>(), vec![1.0, 0.0, 0.0, 0.0]);
        assert_abs_diff_eq!(d[(1, 2)], 0.5, epsilon = 1e-15);
        assert_eq!(tp.dim(), 4);
    }

    #[test]
    fn tpower_quantile_knots() {
        let times: Vec<f64> = (0..=100).map(|i| i as f64 / 100.0).collect();
        let tp = TruncatedPowerBasis::from_quantiles(&times, 6).unwrap();
        let k = tp.knots();
        assert_eq!(k.len(), 4);
        for (got, want) in k.iter().zip([0.2, 0.4, 0.6, 0.8]) {
            assert_abs_diff_eq!(*got, want, epsilon = 1e-12);
        }
        assert!(TruncatedPowerBasis::from_quantiles(&[0.3, 0.3], 4).is_err());
    }

    #[test]
    fn hyman_identity_and_interpolation() {
        let anchors = [0.0, 0.33, 0.67, 1.0];
        let f = hyman_interp(&anchors, &anchors).unwrap();
        for i in 0..=1000 {
            let t = i as f64 / 1000.0;
            assert_abs_diff_eq!(f.eval(t), t, epsilon = 1e-12);
        }
        let values = [0.0, 0.4, 0.5, 1.0];
        let f = hyman_interp(&anchors, &values).unwrap();
        for (a, v) in anchors.iter().zip(values) {
            assert_eq!(f.eval(*a), v);
        }
    }

    #[test]
    fn hyman_increasing_fd_scan() {
        let anchors = [0.0, 0.1, 0.2, 0.5, 0.9, 1.0];
        let values = [0.0, 0.0, 0.8, 0.81, 0.82, 3.0];
        let f = hyman_interp(&anchors, &values).unwrap();
        let mut prev = f.eval(0.0);
        for i in 1..=1000 {
            let v = f.eval(i as f64 / 1000.0);
            assert!(v - prev >= -1e-12, "decrease at {i}");
            prev = v;
        }
    }

    #[test]
    fn hyman_rejects_bad_anchors() {
        assert!(hyman_interp(&[0.0, 0.5, 0.5, 1.0], &[0.0, 0.1, 0.2, 1.0]).is_err());
        assert!(hyman_interp(&[0.0, 1.0], &[0.0]).is_err());
    }

    #[test]
    fn hyman_derivative_matches_fd() {
        let f = hyman_interp(&[0.0, 0.3, 0.6, 1.0], &[0.0, 0.2, 0.7, 1.0]).unwrap();
        for &t in &[0.1, 0.29, 0.45, 0.8] {
            let h = 1e-7;
            let fd = (f.eval(t + h) - f.eval(t - h)) / (2.0 * h);
            assert_abs_diff_eq!(f.derivative(t), fd, epsilon = 1e-6);
        }
    }

    #[test]
    fn quadrature_closed_forms() {
        let grid = uniform_grid(101);
        let w = quad_weights(&grid);
        assert_abs_diff_eq!(w.iter().sum::<f64>(), 1.0, epsilon = 1e-14);
        let lin: f64 = grid.iter().zip(&w).map(|(t, w)| t * w).sum();
        assert_abs_diff_eq!(lin, 0.5, epsilon = 1e-6);
        let s: f64 = grid
            .iter()
            .zip(&w)
            .map(|(t, w)| (2.0 * std::f64::consts::PI * t).sin() * w)
            .sum();
        assert_abs_diff_eq!(s, 0.0, epsilon = 1e-4);
    }

    /// Composite Simpson on an odd number of points, independent of the
    /// trapezoidal rule under test.
    fn simpson(f: impl Fn(f64) -> f64, n: usize) -> f64 {
        let h = 1.0 / (n - 1) as f64;
        (0..n)
            .map(|i| {
                let c = if i == 0 || i == n - 1 {
                    1.0
                } else if i % 2 == 1 {
                    4.0
                } else {
                    2.0
                };
                c * f(i as f64 * h)
            })
            .sum::<f64>()
            * h
            / 3.0
    }

    #[test]
    fn cross_gram_constant_column() {
        let grid = uniform_grid(11);
        let ones = DMatrix::from_element(11, 1, 1.0);
        let g = cross_gram(&ones, &ones, &grid).unwrap();
        assert_abs_diff_eq!(g[(0, 0)], 1.0, epsilon = 1e-14);
        assert!(cross_gram(&ones, &DMatrix::zeros(10, 1), &grid).is_err());
    }

    #[test]
    fn cross_gram_orthonormal_set() {
        use std::f64::consts::{PI, SQRT_2};
        let fs: Vec<Box<dyn Fn(f64) -> f64>> = vec![
            Box::new(|_| 1.0),
            Box::new(|t| SQRT_2 * (2.0 * PI * t).sin()),
            Box::new(|t| SQRT_2 * (2.0 * PI * t).cos()),
            Box::new(|t| SQRT_2 * (4.0 * PI * t).cos()),
        ];
        // the Simpson oracle confirms the set is orthonormal
        for (a, fa) in fs.iter().enumerate() {
            for (b, fb) in fs.iter().enumerate() {
                let v = simpson(|t| fa(t) * fb(t), 2001);
                assert_abs_diff_eq!(v, if a == b { 1.0 } else { 0.0 }, epsilon = 1e-10);
            }
        }
        let grid = uniform_grid(100);
        let m = DMatrix::from_fn(100, 4, |j, l| fs[l](grid[j]));
        let g = cross_gram(&m, &m, &grid).unwrap();
        let err = (g - DMatrix::identity(4, 4)).abs().max();
        assert!(err < 2e-3, "orthonormality error {err}");
    }

    #[test]
    fn cross_gram_refinement() {
        let f = |t: f64| (3.0 * t).sin() + t * t;
        let g = |t: f64| (-t).exp();
        let coarse = uniform_grid(201);
        let fine = uniform_grid(2001);
        let on = |grid: &[f64]| {
            let fm = DMatrix::from_fn(grid.len(), 1, |j, _| f(grid[j]));
            let gm = DMatrix::from_fn(grid.len(), 1, |j, _| g(grid[j]));
            cross_gram(&fm, &gm, grid).unwrap()[(0, 0)]
        };
        assert!((on(&coarse) - on(&fine)).abs() < 1e-4);
    }
}
