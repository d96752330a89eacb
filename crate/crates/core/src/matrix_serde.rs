//! Row-major JSON form for `DMatrix<f64>`.

use nalgebra::DMatrix;
use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RowMajor {
    rows: usize,
    cols: usize,
    data: Vec<Vec<f64>>,
}

pub fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| m.row(i).iter().copied().collect())
        .collect()
}

pub fn from_rows(rows: usize, cols: usize, data: &[Vec<f64>]) -> Result<DMatrix<f64>, String> {
    if data.len() != rows || data.iter().any(|r| r.len() != cols) {
        return Err(format!(
            "matrix data does not match declared shape {rows}x{cols}"
        ));
    }
    Ok(DMatrix::from_fn(rows, cols, |i, j| data[i][j]))
}

pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
    RowMajor {
        rows: m.nrows(),
        cols: m.ncols(),
        data: to_rows(m),
    }
    .serialize(s)
}

pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DMatrix<f64>, D::Error> {
    let r = RowMajor::deserialize(d)?;
    from_rows(r.rows, r.cols, &r.data).map_err(D::Error::custom)
}

pub mod option {
    use super::*;

    pub fn serialize<S: Serializer>(m: &Option<DMatrix<f64>>, s: S) -> Result<S::Ok, S::Error> {
        m.as_ref()
            .map(|m| RowMajor {
                rows: m.nrows(),
                cols: m.ncols(),
                data: to_rows(m),
            })
            .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<DMatrix<f64>>, D::Error> {
        match Option::<RowMajor>::deserialize(d)? {
            Some(r) => from_rows(r.rows, r.cols, &r.data)
                .map(Some)
                .map_err(D::Error::custom),
            None => Ok(None),
        }
    }
}
