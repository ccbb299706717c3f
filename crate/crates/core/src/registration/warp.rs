use serde::{Deserialize, Serialize};

use crate::basis::{hyman_interp, MonotoneInterpolant};
use crate::error::{JcrcError, Result};

/// A single warping function `g` on `[0, 1]`: the Hyman interpolant of
/// ordinates `anchors + offsets`.
#[derive(Debug, Clone)]
pub struct Warp {
    interp: MonotoneInterpolant,
}

impl Warp {
    pub fn identity(anchors: &[f64]) -> Self {
        Warp {
            interp: hyman_interp(anchors, anchors).expect("anchors validated by the caller"),
        }
    }

    /// Warp through `(anchors[j], ordinates[j])`; `None` unless the ordinates
    /// are strictly increasing.
    pub fn from_ordinates(anchors: &[f64], ordinates: &[f64]) -> Option<Self> {
        if ordinates.windows(2).any(|w| !(w[1] > w[0])) {
            return None;
        }
        hyman_interp(anchors, ordinates).ok().map(|interp| Warp { interp })
    }

    /// Warp with ordinates `anchors + offsets`.
    pub fn from_offsets(anchors: &[f64], offsets: &[f64]) -> Option<Self> {
        let ord: Vec<f64> = anchors.iter().zip(offsets).map(|(a, w)| a + w).collect();
        Self::from_ordinates(anchors, &ord)
    }

    pub fn eval(&self, t: f64) -> f64 {
        self.interp.eval(t).clamp(0.0, 1.0)
    }

    pub fn eval_many(&self, times: &[f64]) -> Vec<f64> {
        times.iter().map(|&t| self.eval(t)).collect()
    }

    pub fn derivative(&self, t: f64) -> f64 {
        self.interp.derivative(t)
    }

    /// `g⁻¹(s)` by bisection on `[0, 1]`.
    pub fn inverse(&self, s: f64) -> f64 {
        let (mut lo, mut hi) = (0.0f64, 1.0f64);
        if s <= self.eval(0.0) {
            return 0.0;
        }
        if s >= self.eval(1.0) {
            return 1.0;
        }
        while hi - lo > 1e-14 {
            let mid = 0.5 * (lo + hi);
            if self.eval(mid) < s {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    /// True when `n` equally spaced evaluations never decrease.
    pub fn is_monotone_dense(&self, n: usize) -> bool {
        let mut prev = self.eval(0.0);
        (1..=n).all(|i| {
            let v = self.eval(i as f64 / n as f64);
            let ok = v >= prev;
            prev = v;
            ok
        })
    }
}

/// Fixed and random warp offsets at the anchors.
///
/// Offsets at the first and last anchor are always zero so every warp fixes
/// 0 and 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WarpState {
    pub anchors: Vec<f64>,
    /// `w_fixed[k]`: offsets of group `k`.
    pub w_fixed: Vec<Vec<f64>>,
    pub subject_ids: Vec<String>,
    /// Group of each subject.
    pub groups: Vec<u8>,
    /// `w_random[i]`: offsets of subject `i`.
    pub w_random: Vec<Vec<f64>>,
}

impl WarpState {
    pub fn zeros(anchors: &[f64], subject_ids: Vec<String>, groups: Vec<u8>) -> Self {
        let nw = anchors.len();
        WarpState {
            anchors: anchors.to_vec(),
            w_fixed: vec![vec![0.0; nw]; 2],
            w_random: vec![vec![0.0; nw]; subject_ids.len()],
            subject_ids,
            groups,
        }
    }

    /// Number of free (interior) anchors.
    pub fn n_interior(&self) -> usize {
        self.anchors.len().saturating_sub(2)
    }

    pub fn len(&self) -> usize {
        self.subject_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subject_ids.is_empty()
    }

    pub fn index_of(&self, subject: &str) -> Option<usize> {
        self.subject_ids.iter().position(|s| s == subject)
    }

    /// Total offsets `w_k + w_ki` for subject `i` under group `group`.
    pub fn offsets(&self, group: u8, i: usize) -> Vec<f64> {
        self.w_fixed[group as usize]
            .iter()
            .zip(&self.w_random[i])
            .map(|(a, b)| a + b)
            .collect()
    }

    pub fn warp(&self, group: u8, i: usize) -> Result<Warp> {
        Warp::from_offsets(&self.anchors, &self.offsets(group, i)).ok_or_else(|| {
            JcrcError::NonMonotoneWarp {
                subject: self.subject_ids[i].clone(),
            }
        })
    }

    /// Warp of subject `i` under its own group.
    pub fn subject_warp(&self, i: usize) -> Result<Warp> {
        self.warp(self.groups[i], i)
    }

    /// Group template warp `t + w_k`.
    pub fn group_warp(&self, group: u8) -> Result<Warp> {
        Warp::from_offsets(&self.anchors, &self.w_fixed[group as usize]).ok_or_else(|| {
            JcrcError::NonMonotoneWarp {
                subject: format!("<group {group}>"),
            }
        })
    }

    pub fn group_mean_random(&self, group: u8) -> Vec<f64> {
        let nw = self.anchors.len();
        let members: Vec<usize> = (0..self.len()).filter(|&i| self.groups[i] == group).collect();
        let mut m = vec![0.0; nw];
        for &i in &members {
            for (acc, v) in m.iter_mut().zip(&self.w_random[i]) {
                *acc += v;
            }
        }
        if !members.is_empty() {
            m.iter_mut().for_each(|v| *v /= members.len() as f64);
        }
        m
    }

    /// Moves the within-group mean of the random offsets into the fixed
    /// offsets. Every subject's warp is unchanged.
    pub fn center(&mut self) {
        for k in 0..2u8 {
            let m = self.group_mean_random(k);
            for (f, v) in self.w_fixed[k as usize].iter_mut().zip(&m) {
                *f += v;
            }
            for i in 0..self.len() {
                if self.groups[i] == k {
                    for (r, v) in self.w_random[i].iter_mut().zip(&m) {
                        *r -= v;
                    }
                }
            }
        }
    }
}

/// Embeds interior offsets into a full anchor vector with zero ends.
pub(crate) fn embed(interior: &[f64]) -> Vec<f64> {
    let mut v = Vec::with_capacity(interior.len() + 2);
    v.push(0.0);
    v.extend_from_slice(interior);
    v.push(0.0);
    v
}

pub(crate) fn interior(full: &[f64]) -> &[f64] {
    &full[1..full.len() - 1]
}

fn lookup(warps: &WarpState, subject: &str) -> Result<usize> {
    warps
        .index_of(subject)
        .ok_or_else(|| JcrcError::Validation(format!("no warp for subject {subject}")))
}

/// `g_ki(t) = t + w_k(t) + w_ki(t)` at `times`.
pub fn eval_warp(warps: &WarpState, group: u8, subject: &str, times: &[f64]) -> Result<Vec<f64>> {
    let w = warps.warp(group, lookup(warps, subject)?)?;
    times
        .iter()
        .map(|&t| {
            if (0.0..=1.0).contains(&t) {
                Ok(w.eval(t))
            } else {
                Err(JcrcError::Domain(format!("time {t} outside [0, 1]")))
            }
        })
        .collect()
}

/// `g_ki⁻¹` at `times`.
pub fn invert_warp(warps: &WarpState, group: u8, subject: &str, times: &[f64]) -> Result<Vec<f64>> {
    let w = warps.warp(group, lookup(warps, subject)?)?;
    Ok(times.iter().map(|&t| w.inverse(t)).collect())
}
