//! Row-major JSON encodings for matrices: real matrices as nested arrays,
//! complex entries as `[re, im]` pairs.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::ser::{SerializeSeq, Serializer};
use serde::{Deserialize, Deserializer};

pub fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

pub fn from_rows(rows: &[Vec<f64>]) -> Option<DMatrix<f64>> {
    let n = rows.len();
    let k = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != k) {
        return None;
    }
    Some(DMatrix::from_fn(n, k, |i, j| rows[i][j]))
}

pub fn rows<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
    let mut seq = s.serialize_seq(Some(m.nrows()))?;
    for r in to_rows(m) {
        seq.serialize_element(&r)?;
    }
    seq.end()
}

pub fn opt_rows<S: Serializer>(m: &Option<DMatrix<f64>>, s: S) -> Result<S::Ok, S::Error> {
    match m {
        Some(m) => rows(m, s),
        None => s.serialize_none(),
    }
}

pub fn de_rows<'de, D: Deserializer<'de>>(d: D) -> Result<DMatrix<f64>, D::Error> {
    let raw = Vec::<Vec<f64>>::deserialize(d)?;
    from_rows(&raw).ok_or_else(|| serde::de::Error::custom("ragged matrix rows"))
}

pub fn vector<S: Serializer>(v: &DVector<f64>, s: S) -> Result<S::Ok, S::Error> {
    s.collect_seq(v.iter())
}

pub fn complex_list<S: Serializer>(v: &[Complex64], s: S) -> Result<S::Ok, S::Error> {
    s.collect_seq(v.iter().map(|z| [z.re, z.im]))
}

pub fn opt_complex_rows<S: Serializer>(m: &Option<DMatrix<Complex64>>, s: S) -> Result<S::Ok, S::Error> {
    match m {
        Some(m) => {
            let rows: Vec<Vec<[f64; 2]>> = m.row_iter().map(|r| r.iter().map(|z| [z.re, z.im]).collect()).collect();
            s.serialize_some(&rows)
        }
        None => s.serialize_none(),
    }
}
