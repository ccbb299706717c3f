//! Serde adapters that store `DMatrix<f64>` as a list of rows.

use nalgebra::DMatrix;
use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| m.row(i).iter().copied().collect())
        .collect()
}

fn from_rows<E: serde::de::Error>(rows: Vec<Vec<f64>>, ncols_hint: Option<usize>) -> Result<DMatrix<f64>, E> {
    let nrows = rows.len();
    let ncols = rows.first().map(Vec::len).or(ncols_hint).unwrap_or(0);
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(E::custom("ragged matrix rows"));
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
    to_rows(m).serialize(s)
}

pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DMatrix<f64>, D::Error> {
    let rows = Vec::<Vec<f64>>::deserialize(d)?;
    from_rows(rows, None)
}

/// Adapter for `Vec<DMatrix<f64>>`.
pub mod vec {
    use super::*;

    pub fn serialize<S: Serializer>(ms: &[DMatrix<f64>], s: S) -> Result<S::Ok, S::Error> {
        ms.iter().map(to_rows).collect::<Vec<_>>().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<DMatrix<f64>>, D::Error> {
        let all = Vec::<Vec<Vec<f64>>>::deserialize(d)?;
        all.into_iter()
            .map(|rows| from_rows::<D::Error>(rows, None))
            .collect::<Result<_, _>>()
            .map_err(D::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Serialize, Deserialize, PartialEq, Debug)]
    struct Holder {
        #[serde(with = "crate::serde_mat")]
        m: DMatrix<f64>,
        #[serde(with = "crate::serde_mat::vec")]
        ms: Vec<DMatrix<f64>>,
    }

    #[test]
    fn round_trip() {
        let h = Holder {
            m: DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 0.1 + 0.2]),
            ms: vec![DMatrix::identity(2, 2), DMatrix::zeros(1, 4)],
        };
        let s = serde_json::to_string(&h).unwrap();
        assert!(s.starts_with(r#"{"m":[[1.0,2.0,3.0],[4.0,5.0,"#));
        let back: Holder = serde_json::from_str(&s).unwrap();
        assert_eq!(back, h);
    }

    #[test]
    fn ragged_rejected() {
        let r: Result<Holder, _> = serde_json::from_str(r#"{"m":[[1.0],[1.0,2.0]],"ms":[]}"#);
        assert!(r.is_err());
    }
}
