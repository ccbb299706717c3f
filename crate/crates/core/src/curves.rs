//! Sampled two-dimensional curves, scalar covariates and their CSV formats.
//!
//! Curves CSV (long format), header `subject_id,t,x1,x2`:
//!
//! ```text
//! subject_id,t,x1,x2
//! s0000,0,2.718,1.0
//! s0000,0.0101,2.716,1.064
//! ```
//!
//! Scalars CSV, header `subject_id,y,v1,...,vp`; `y` is empty for unlabeled
//! subjects.

use std::collections::{BTreeMap, HashMap};
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{JcrcError, Result};

/// Strictly increasing sample instants in `[0, 1]`, at least four of them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ObservationGrid(Vec<f64>);

impl ObservationGrid {
    pub const MIN_LEN: usize = 4;

    pub fn new(times: Vec<f64>) -> Result<Self> {
        if times.len() < Self::MIN_LEN {
            return Err(JcrcError::Validation(format!(
                "grid has {} points, need at least {}",
                times.len(),
                Self::MIN_LEN
            )));
        }
        if let Some(t) = times.iter().find(|t| !(0.0..=1.0).contains(*t)) {
            return Err(JcrcError::Domain(format!("time {t} outside [0, 1]")));
        }
        if let Some(w) = times.windows(2).find(|w| w[1] <= w[0]) {
            return Err(JcrcError::Validation(format!(
                "grid not strictly increasing at {} -> {}",
                w[0], w[1]
            )));
        }
        Ok(ObservationGrid(times))
    }

    pub fn times(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl TryFrom<Vec<f64>> for ObservationGrid {
    type Error = JcrcError;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        ObservationGrid::new(v)
    }
}

impl From<ObservationGrid> for Vec<f64> {
    fn from(g: ObservationGrid) -> Self {
        g.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectCurve {
    pub subject_id: String,
    pub grid: ObservationGrid,
    pub x1: Vec<f64>,
    pub x2: Vec<f64>,
}

impl SubjectCurve {
    pub fn new(subject_id: impl Into<String>, grid: ObservationGrid, x1: Vec<f64>, x2: Vec<f64>) -> Result<Self> {
        let subject_id = subject_id.into();
        if x1.len() != grid.len() || x2.len() != grid.len() {
            return Err(JcrcError::Validation(format!(
                "subject {subject_id}: {} times but {} / {} values",
                grid.len(),
                x1.len(),
                x2.len()
            )));
        }
        if x1.iter().chain(&x2).any(|v| !v.is_finite()) {
            return Err(JcrcError::Validation(format!(
                "subject {subject_id}: non-finite curve value"
            )));
        }
        Ok(SubjectCurve {
            subject_id,
            grid,
            x1,
            x2,
        })
    }

    pub fn times(&self) -> &[f64] {
        self.grid.times()
    }

    /// Coordinate `a` (0 or 1).
    pub fn coord(&self, a: usize) -> &[f64] {
        if a == 0 {
            &self.x1
        } else {
            &self.x2
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalarRecord {
    pub subject_id: String,
    pub v: Vec<f64>,
    pub y: Option<u8>,
}

impl ScalarRecord {
    pub fn new(subject_id: impl Into<String>, v: Vec<f64>, y: Option<u8>) -> Result<Self> {
        let subject_id = subject_id.into();
        if v.iter().any(|x| !x.is_finite()) {
            return Err(JcrcError::Validation(format!(
                "subject {subject_id}: non-finite scalar covariate"
            )));
        }
        if matches!(y, Some(l) if l > 1) {
            return Err(JcrcError::Validation(format!(
                "subject {subject_id}: label must be 0 or 1"
            )));
        }
        Ok(ScalarRecord { subject_id, v, y })
    }
}

/// Joined curves and scalars, sorted by subject id; `curves[i]` and
/// `scalars[i]` describe the same subject.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePanel {
    pub curves: Vec<SubjectCurve>,
    pub scalars: Vec<ScalarRecord>,
    pub group_of: BTreeMap<String, u8>,
}

/// Joins curves with scalar records one-to-one on `subject_id`.
pub fn join_panel(curves: Vec<SubjectCurve>, scalars: Vec<ScalarRecord>) -> Result<CurvePanel> {
    if curves.is_empty() || scalars.is_empty() {
        return Err(JcrcError::Validation("cannot build a panel from empty input".into()));
    }
    let mut by_id: BTreeMap<String, SubjectCurve> = BTreeMap::new();
    for c in curves {
        let id = c.subject_id.clone();
        if by_id.insert(id.clone(), c).is_some() {
            return Err(JcrcError::Validation(format!("duplicate curve for subject {id}")));
        }
    }
    let mut srec: BTreeMap<String, ScalarRecord> = BTreeMap::new();
    for s in scalars {
        let id = s.subject_id.clone();
        if srec.insert(id.clone(), s).is_some() {
            return Err(JcrcError::Validation(format!("duplicate scalar record for subject {id}")));
        }
    }
    let no_scalar: Vec<&String> = by_id.keys().filter(|k| !srec.contains_key(*k)).collect();
    let no_curve: Vec<&String> = srec.keys().filter(|k| !by_id.contains_key(*k)).collect();
    if !no_scalar.is_empty() || !no_curve.is_empty() {
        return Err(JcrcError::Validation(format!(
            "unmatched subjects; curves without scalars: {no_scalar:?}; scalars without curves: {no_curve:?}"
        )));
    }
    let p = srec.values().next().map(|s| s.v.len()).unwrap_or(0);
    if let Some(s) = srec.values().find(|s| s.v.len() != p) {
        return Err(JcrcError::Validation(format!(
            "subject {} has {} covariates, expected {p}",
            s.subject_id,
            s.v.len()
        )));
    }
    let group_of = srec
        .values()
        .filter_map(|s| s.y.map(|y| (s.subject_id.clone(), y)))
        .collect();
    Ok(CurvePanel {
        curves: by_id.into_values().collect(),
        scalars: srec.into_values().collect(),
        group_of,
    })
}

impl CurvePanel {
    pub fn len(&self) -> usize {
        self.curves.len()
    }

    pub fn is_empty(&self) -> bool {
        self.curves.is_empty()
    }

    /// Number of scalar covariates.
    pub fn p(&self) -> usize {
        self.scalars.first().map(|s| s.v.len()).unwrap_or(0)
    }

    pub fn ids(&self) -> Vec<&str> {
        self.curves.iter().map(|c| c.subject_id.as_str()).collect()
    }

    /// All labels, or `None` if any subject is unlabeled.
    pub fn labels(&self) -> Option<Vec<u8>> {
        self.scalars.iter().map(|s| s.y).collect()
    }

    /// Labels, failing if the panel cannot be used for fitting.
    pub fn require_labels(&self) -> Result<Vec<u8>> {
        let y = self.labels().ok_or_else(|| {
            JcrcError::Validation("fitting needs a label for every subject".into())
        })?;
        for k in [0u8, 1] {
            if !y.contains(&k) {
                return Err(JcrcError::Validation(format!("no subject in group {k}")));
            }
        }
        Ok(y)
    }

    /// Sub-panel with the subjects at `idx` (kept in id order).
    pub fn select(&self, idx: &[usize]) -> CurvePanel {
        let mut idx = idx.to_vec();
        idx.sort_unstable();
        idx.dedup();
        let curves: Vec<SubjectCurve> = idx.iter().map(|&i| self.curves[i].clone()).collect();
        let scalars: Vec<ScalarRecord> = idx.iter().map(|&i| self.scalars[i].clone()).collect();
        let group_of = scalars
            .iter()
            .filter_map(|s| s.y.map(|y| (s.subject_id.clone(), y)))
            .collect();
        CurvePanel {
            curves,
            scalars,
            group_of,
        }
    }

    /// Sub-panel with the listed subject ids.
    pub fn select_ids(&self, ids: &[String]) -> Result<CurvePanel> {
        let pos: HashMap<&str, usize> = self
            .curves
            .iter()
            .enumerate()
            .map(|(i, c)| (c.subject_id.as_str(), i))
            .collect();
        let idx = ids
            .iter()
            .map(|id| {
                pos.get(id.as_str())
                    .copied()
                    .ok_or_else(|| JcrcError::Validation(format!("unknown subject {id}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(self.select(&idx))
    }

    /// Every distinct observation time, sorted.
    pub fn pooled_times(&self) -> Vec<f64> {
        let mut t: Vec<f64> = self.curves.iter().flat_map(|c| c.times().iter().copied()).collect();
        t.sort_by(f64::total_cmp);
        t.dedup();
        t
    }
}

/// Affine map `t -> (t - offset) / scale` taking raw times into `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeMap {
    pub offset: f64,
    pub scale: f64,
}

impl Default for TimeMap {
    fn default() -> Self {
        TimeMap {
            offset: 0.0,
            scale: 1.0,
        }
    }
}

impl TimeMap {
    pub fn is_identity(&self) -> bool {
        self.offset == 0.0 && self.scale == 1.0
    }

    /// Identity when all times already lie in `[0, 1]`, otherwise the
    /// min/max rescale.
    pub fn fit(times: impl IntoIterator<Item = f64>) -> Result<Self> {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for t in times {
            lo = lo.min(t);
            hi = hi.max(t);
        }
        if lo >= 0.0 && hi <= 1.0 || lo > hi {
            return Ok(TimeMap::default());
        }
        if hi <= lo {
            return Err(JcrcError::Validation("all observation times are equal".into()));
        }
        Ok(TimeMap {
            offset: lo,
            scale: hi - lo,
        })
    }

    pub fn apply(&self, t: f64) -> f64 {
        if self.is_identity() {
            t
        } else {
            (t - self.offset) / self.scale
        }
    }
}

struct RawCurve {
    first_line: u64,
    rows: Vec<(f64, f64, f64, u64)>,
}

fn parse_f64(field: &str, what: &str, location: &str) -> Result<f64> {
    let v: f64 = field.trim().parse().map_err(|_| JcrcError::Parse {
        location: location.to_string(),
        message: format!("{what} value {field:?} is not a number"),
    })?;
    if !v.is_finite() {
        return Err(JcrcError::Parse {
            location: location.to_string(),
            message: format!("{what} value {field:?} is not finite"),
        });
    }
    Ok(v)
}

pub(crate) fn open_csv(path: &Path) -> Result<csv::Reader<std::fs::File>> {
    let f = std::fs::File::open(path).map_err(|e| JcrcError::io(path, e))?;
    Ok(csv::ReaderBuilder::new().has_headers(true).from_reader(f))
}

fn read_raw_curves(path: &Path) -> Result<Vec<(String, RawCurve)>> {
    let name = path.display().to_string();
    let mut rdr = open_csv(path)?;
    let headers = rdr.headers().map_err(|e| JcrcError::Parse {
        location: format!("{name}:1"),
        message: e.to_string(),
    })?;
    let got: Vec<&str> = headers.iter().map(str::trim).collect();
    if got != ["subject_id", "t", "x1", "x2"] {
        return Err(JcrcError::Parse {
            location: format!("{name}:1"),
            message: format!("expected header subject_id,t,x1,x2, found {}", got.join(",")),
        });
    }
    let mut order: Vec<String> = Vec::new();
    let mut raw: HashMap<String, RawCurve> = HashMap::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| JcrcError::Parse {
            location: name.clone(),
            message: e.to_string(),
        })?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let loc = format!("{name}:{line}");
        if rec.len() != 4 {
            return Err(JcrcError::Parse {
                location: loc,
                message: format!("expected 4 fields, found {}", rec.len()),
            });
        }
        let id = rec[0].trim().to_string();
        if id.is_empty() {
            return Err(JcrcError::Parse {
                location: loc,
                message: "empty subject_id".into(),
            });
        }
        let t = parse_f64(&rec[1], "t", &loc)?;
        let x1 = parse_f64(&rec[2], "x1", &loc)?;
        let x2 = parse_f64(&rec[3], "x2", &loc)?;
        let entry = raw.entry(id.clone()).or_insert_with(|| {
            order.push(id.clone());
            RawCurve {
                first_line: line,
                rows: Vec::new(),
            }
        });
        entry.rows.push((t, x1, x2, line));
    }
    Ok(order
        .into_iter()
        .map(|id| {
            let r = raw.remove(&id).expect("every id was inserted");
            (id, r)
        })
        .collect())
}

fn build_curves(name: &str, raw: Vec<(String, RawCurve)>, map: &TimeMap) -> Result<Vec<SubjectCurve>> {
    raw.into_iter()
        .map(|(id, mut r)| {
            r.rows.sort_by(|a, b| a.0.total_cmp(&b.0));
            if let Some(w) = r.rows.windows(2).find(|w| w[0].0 == w[1].0) {
                return Err(JcrcError::Parse {
                    location: format!("{name}:{}", w[1].3),
                    message: format!("duplicate (subject_id, t) = ({id}, {})", w[0].0),
                });
            }
            let loc = format!("{name}:{}", r.first_line);
            let times: Vec<f64> = r.rows.iter().map(|row| map.apply(row.0)).collect();
            let grid = ObservationGrid::new(times).map_err(|e| JcrcError::Parse {
                location: loc.clone(),
                message: format!("subject {id}: {e}"),
            })?;
            let x1 = r.rows.iter().map(|row| row.1).collect();
            let x2 = r.rows.iter().map(|row| row.2).collect();
            SubjectCurve::new(id, grid, x1, x2)
        })
        .collect()
}

/// Loads a curves CSV, rescaling time to `[0, 1]` when it falls outside.
pub fn load_curves_with_map(path: &Path) -> Result<(Vec<SubjectCurve>, TimeMap)> {
    let raw = read_raw_curves(path)?;
    let map = TimeMap::fit(raw.iter().flat_map(|(_, r)| r.rows.iter().map(|row| row.0)))?;
    let curves = build_curves(&path.display().to_string(), raw, &map)?;
    Ok((curves, map))
}

/// Loads a curves CSV; see [`load_curves_with_map`].
pub fn load_curves(path: &Path) -> Result<Vec<SubjectCurve>> {
    Ok(load_curves_with_map(path)?.0)
}

/// Loads a curves CSV using a time map fixed at training time.
pub fn load_curves_mapped(path: &Path, map: &TimeMap) -> Result<Vec<SubjectCurve>> {
    let raw = read_raw_curves(path)?;
    build_curves(&path.display().to_string(), raw, map)
}

pub fn load_scalars(path: &Path) -> Result<Vec<ScalarRecord>> {
    let name = path.display().to_string();
    let mut rdr = open_csv(path)?;
    let headers = rdr.headers().map_err(|e| JcrcError::Parse {
        location: format!("{name}:1"),
        message: e.to_string(),
    })?;
    if headers.len() < 2 || headers[0].trim() != "subject_id" || headers[1].trim() != "y" {
        return Err(JcrcError::Parse {
            location: format!("{name}:1"),
            message: "expected header subject_id,y,v1,...,vp".into(),
        });
    }
    let width = headers.len();
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| JcrcError::Parse {
            location: name.clone(),
            message: e.to_string(),
        })?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let loc = format!("{name}:{line}");
        if rec.len() != width {
            return Err(JcrcError::Parse {
                location: loc,
                message: format!("expected {width} fields, found {}", rec.len()),
            });
        }
        let y = match rec[1].trim() {
            "" => None,
            "0" => Some(0),
            "1" => Some(1),
            other => {
                return Err(JcrcError::Parse {
                    location: loc,
                    message: format!("label {other:?} is not 0, 1 or empty"),
                })
            }
        };
        let v = (2..width)
            .map(|j| parse_f64(&rec[j], &format!("v{}", j - 1), &loc))
            .collect::<Result<Vec<_>>>()?;
        out.push(ScalarRecord::new(rec[0].trim(), v, y).map_err(|e| JcrcError::Parse {
            location: loc,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

/// Loads and joins a curves file with a scalars file.
pub fn load_panel(curves: &Path, scalars: &Path) -> Result<(CurvePanel, TimeMap)> {
    let (c, map) = load_curves_with_map(curves)?;
    Ok((join_panel(c, load_scalars(scalars)?)?, map))
}

pub(crate) fn create(path: &Path) -> Result<std::io::BufWriter<std::fs::File>> {
    let f = std::fs::File::create(path).map_err(|e| JcrcError::io(path, e))?;
    Ok(std::io::BufWriter::new(f))
}

/// Writes curves in the long CSV format. Floats use the shortest
/// representation that parses back to the same value.
pub fn write_curves(path: &Path, curves: &[SubjectCurve]) -> Result<()> {
    let mut w = create(path)?;
    let io = |e| JcrcError::io(path, e);
    writeln!(w, "subject_id,t,x1,x2").map_err(io)?;
    for c in curves {
        for j in 0..c.grid.len() {
            writeln!(w, "{},{},{},{}", c.subject_id, c.times()[j], c.x1[j], c.x2[j]).map_err(io)?;
        }
    }
    w.flush().map_err(io)
}

pub fn write_scalars(path: &Path, scalars: &[ScalarRecord]) -> Result<()> {
    let mut w = create(path)?;
    let io = |e| JcrcError::io(path, e);
    let p = scalars.first().map(|s| s.v.len()).unwrap_or(1);
    let mut header = String::from("subject_id,y");
    for j in 1..=p {
        header.push_str(&format!(",v{j}"));
    }
    writeln!(w, "{header}").map_err(io)?;
    for s in scalars {
        let y = s.y.map(|y| y.to_string()).unwrap_or_default();
        let v: Vec<String> = s.v.iter().map(|x| x.to_string()).collect();
        if v.is_empty() {
            writeln!(w, "{},{}", s.subject_id, y).map_err(io)?;
        } else {
            writeln!(w, "{},{},{}", s.subject_id, y, v.join(",")).map_err(io)?;
        }
    }
    w.flush().map_err(io)
}
