//! Success-ratio weighted urn: a failure on arm `q` spreads one ball over the
//! other arms in proportion to their smoothed success ratios
//! `R_k = (S_k + 1) / (N_k + 1)`.

use std::sync::Arc;

use nalgebra::DMatrix;
use num_rational::Ratio;
use serde::Deserialize;

use super::{
    check_probability, exact_decimal, exact_two_arm_lambda, generating, parse_params,
    two_point_covariance, AdditionRule, DriftClass, MomentSpec, Response, RuleEntry, RuleError,
    RuleRegistry,
};
use crate::urn::{History, RandomStream};

#[derive(Debug, Clone, PartialEq)]
pub struct BaiHuShen {
    p: Vec<f64>,
}

/// Smoothed success ratios; all ones before any subject is treated.
pub fn success_ratios(history: &History<'_>) -> Vec<f64> {
    history
        .draws
        .iter()
        .zip(history.successes)
        .map(|(&n, &s)| (s as f64 + 1.0) / (n as f64 + 1.0))
        .collect()
}

/// Failure row of arm `q` under weights `w`: `w_k / (sum w - w_q)` off `q`.
fn failure_row(q: usize, w: &[f64], row: &mut [f64]) {
    let rest: f64 = w.iter().enumerate().filter(|&(k, _)| k != q).map(|(_, x)| x).sum();
    for (k, x) in row.iter_mut().enumerate() {
        *x = if k == q { 0.0 } else { w[k] / rest };
    }
}

fn matrix_for(p: &[f64], w: &[f64]) -> DMatrix<f64> {
    let k = p.len();
    let mut h = DMatrix::zeros(k, k);
    let mut row = vec![0.0; k];
    for q in 0..k {
        failure_row(q, w, &mut row);
        for j in 0..k {
            h[(q, j)] = if j == q { p[q] } else { (1.0 - p[q]) * row[j] };
        }
    }
    h
}

impl BaiHuShen {
    pub fn new(p: Vec<f64>) -> Result<Self, RuleError> {
        if p.len() < 2 {
            return Err(RuleError::invalid("p", "needs at least two arms"));
        }
        for (k, &pk) in p.iter().enumerate() {
            check_probability(&format!("p[{k}]"), pk)?;
        }
        Ok(Self { p })
    }
}

impl AdditionRule for BaiHuShen {
    fn kind(&self) -> &'static str {
        "bai_hu_shen"
    }

    fn arms(&self) -> usize {
        self.p.len()
    }

    fn epu_exact(&self) -> bool {
        true
    }

    fn sample_row(&self, arm: usize, history: &History<'_>, rng: &mut RandomStream, row: &mut [f64]) -> Response {
        if rng.uniform() < self.p[arm] {
            row.fill(0.0);
            row[arm] = 1.0;
            Response::Success
        } else {
            failure_row(arm, &success_ratios(history), row);
            Response::Failure
        }
    }

    fn conditional_generating_matrix(&self, history: &History<'_>) -> DMatrix<f64> {
        matrix_for(&self.p, &success_ratios(history))
    }

    fn limit_spec(&self) -> Result<MomentSpec, RuleError> {
        let k = self.p.len();
        let h = generating(matrix_for(&self.p, &self.p), false)?;
        let mut u = vec![0.0; k];
        let d = (0..k)
            .map(|q| {
                failure_row(q, &self.p, &mut u);
                two_point_covariance(q, self.p[q], &u)
            })
            .collect();
        MomentSpec::new(h, d)
    }

    /// `alpha_i = o(i^-1/4)` almost surely.
    fn drift_class(&self) -> Result<DriftClass, RuleError> {
        Ok(DriftClass::new(1.0, 0.25, 0.0))
    }

    fn exact_tau(&self) -> Option<Ratio<i64>> {
        match self.p[..] {
            [p1, p2] => exact_two_arm_lambda(exact_decimal(p1)?, exact_decimal(p2)?),
            _ => None,
        }
    }

    fn params(&self) -> serde_json::Value {
        serde_json::json!({"p": self.p})
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Params {
    p: Vec<f64>,
}

pub(super) fn register(reg: &mut RuleRegistry) {
    reg.register(RuleEntry {
        name: "bai_hu_shen",
        summary: "multi-arm urn weighting failures by smoothed success ratios (S_k+1)/(N_k+1) (param p)",
        reference: "Bai, Hu and Shen (2002)",
        example: || serde_json::json!({"p": [0.6, 0.5, 0.4]}),
        factory: |v| {
            let p: Params = parse_params(v)?;
            Ok(Arc::new(BaiHuShen::new(p.p)?))
        },
    });
}
