//! The JSON document describing a potential together with its frequency:
//!
//! ```json
//! {"dim": 1, "coeffs": [[1, 0.5, 0.0], [-1, 0.5, 0.0]], "rho": 0.01,
//!  "lambda": 5.0, "omega": [0.6180339887498949], "dio": {"A": 2.0, "c": 0.2}}
//! ```
//!
//! Each coefficient row is the mode `k` (d integers) followed by the real and
//! imaginary parts of `v̂(k)`.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::{Frequency, TrigPotential};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DioSpec {
    #[serde(rename = "A")]
    pub a: f64,
    pub c: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PotentialSpec {
    pub dim: usize,
    pub coeffs: Vec<Vec<f64>>,
    pub rho: f64,
    pub lambda: f64,
    pub omega: Vec<f64>,
    pub dio: DioSpec,
}

impl PotentialSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::ConfigInvalid {
            path: format!("line {} column {}", e.line(), e.column()),
            reason: e.to_string(),
        })
    }

    pub fn build(&self) -> Result<(TrigPotential, Frequency)> {
        let invalid = |path: String, reason: String| Error::ConfigInvalid { path, reason };
        let mut coeffs = Vec::with_capacity(self.coeffs.len());
        for (i, row) in self.coeffs.iter().enumerate() {
            if row.len() != self.dim + 2 {
                return Err(invalid(
                    format!("coeffs[{i}]"),
                    format!("expected {} numbers, got {}", self.dim + 2, row.len()),
                ));
            }
            let mut k = Vec::with_capacity(self.dim);
            for &x in &row[..self.dim] {
                if x.fract() != 0.0 {
                    return Err(invalid(format!("coeffs[{i}]"), format!("mode {x} not an integer")));
                }
                k.push(x as i64);
            }
            coeffs.push((k, Complex64::new(row[self.dim], row[self.dim + 1])));
        }
        let v = TrigPotential::new(self.dim, coeffs, self.rho, self.lambda)
            .map_err(|e| invalid("coeffs".into(), e.to_string()))?;
        if self.omega.len() != self.dim {
            return Err(invalid("omega".into(), "length must equal dim".into()));
        }
        let w = Frequency::new(&self.omega, self.dio.a, self.dio.c)
            .map_err(|e| invalid("dio".into(), e.to_string()))?;
        Ok((v, w))
    }

    /// Inverse of [`build`](Self::build).
    pub fn from_parts(v: &TrigPotential, w: &Frequency) -> Self {
        let dim = v.dim();
        PotentialSpec {
            dim,
            coeffs: v
                .terms()
                .iter()
                .map(|t| {
                    let mut row: Vec<f64> = t.k[..dim].iter().map(|&k| k as f64).collect();
                    row.push(t.amp.re);
                    row.push(t.amp.im);
                    row
                })
                .collect(),
            rho: v.strip_width(),
            lambda: v.coupling(),
            omega: w.components().to_vec(),
            dio: DioSpec {
                a: w.dio_a(),
                c: w.dio_c(),
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Phase;

    #[test]
    fn parses_documented_example() {
        let doc = r#"{"dim": 1, "coeffs": [[1, 0.5, 0.0], [-1, 0.5, 0.0]], "rho": 0.01,
                      "lambda": 5.0, "omega": [0.6180339887498949], "dio": {"A": 2.0, "c": 0.2}}"#;
        let (v, w) = PotentialSpec::from_json(doc).unwrap().build().unwrap();
        assert!((v.eval(&Phase::scalar(0.0)) - 5.0).abs() < 1e-14);
        assert_eq!(w.dio_a(), 2.0);
        let back = PotentialSpec::from_parts(&v, &w);
        assert_eq!(back.build().unwrap().0, v);
    }

    #[test]
    fn reports_bad_rows() {
        let doc = r#"{"dim": 2, "coeffs": [[1, 0.5, 0.0]], "rho": 0.01,
                      "lambda": 1.0, "omega": [0.1, 0.2], "dio": {"A": 2.0, "c": 0.2}}"#;
        let err = PotentialSpec::from_json(doc).unwrap().build().unwrap_err();
        match err {
            Error::ConfigInvalid { path, .. } => assert_eq!(path, "coeffs[0]"),
            e => panic!("unexpected {e}"),
        }
        assert!(PotentialSpec::from_json("{not json").is_err());
    }
}
