//! Randomized play-the-winner and its multi-arm extension: a success on arm
//! `q` adds a ball of type `q`, a failure adds `1/(K-1)` ball of every other
//! type. Also the time-trend variant with drifting success probabilities.

use std::sync::Arc;

use nalgebra::DMatrix;
use num_rational::Ratio;
use serde::{Deserialize, Serialize};

use super::{
    check_probability, exact_decimal, exact_two_arm_lambda, generating, parse_params,
    two_point_covariance, AdditionRule, DriftClass, MomentSpec, Response, RuleEntry, RuleError,
    RuleRegistry,
};
use crate::urn::{History, RandomStream};

fn failure_row(q: usize, k: usize) -> Vec<f64> {
    let share = 1.0 / (k as f64 - 1.0);
    (0..k).map(|j| if j == q { 0.0 } else { share }).collect()
}

#[inline]
fn fill_row(arm: usize, success: bool, row: &mut [f64]) {
    if success {
        row.fill(0.0);
        row[arm] = 1.0;
    } else {
        row.fill(1.0 / (row.len() as f64 - 1.0));
        row[arm] = 0.0;
    }
}

fn matrix_for(p: &[f64]) -> DMatrix<f64> {
    let k = p.len();
    let share = 1.0 / (k as f64 - 1.0);
    DMatrix::from_fn(k, k, |q, j| if q == j { p[q] } else { (1.0 - p[q]) * share })
}

fn moment_spec_for(p: &[f64]) -> Result<MomentSpec, RuleError> {
    let k = p.len();
    let h = generating(matrix_for(p), false)?;
    let d = (0..k)
        .map(|q| two_point_covariance(q, p[q], &failure_row(q, k)))
        .collect();
    MomentSpec::new(h, d)
}

fn exact_lambda_for(p: &[f64]) -> Option<Ratio<i64>> {
    match p {
        [p1, p2] => exact_two_arm_lambda(exact_decimal(*p1)?, exact_decimal(*p2)?),
        _ => None,
    }
}

/// Homogeneous play-the-winner urn (`rpw` for two arms, `wei` for any K).
#[derive(Debug, Clone, PartialEq)]
pub struct PlayTheWinner {
    kind: &'static str,
    p: Vec<f64>,
}

impl PlayTheWinner {
    pub fn rpw(p1: f64, p2: f64) -> Result<Self, RuleError> {
        check_probability("p1", p1)?;
        check_probability("p2", p2)?;
        Ok(Self {
            kind: "rpw",
            p: vec![p1, p2],
        })
    }

    pub fn wei(p: Vec<f64>) -> Result<Self, RuleError> {
        if p.len() < 2 {
            return Err(RuleError::invalid("p", "needs at least two arms"));
        }
        for (k, &pk) in p.iter().enumerate() {
            check_probability(&format!("p[{k}]"), pk)?;
        }
        Ok(Self { kind: "wei", p })
    }

    pub fn success_probabilities(&self) -> &[f64] {
        &self.p
    }
}

impl AdditionRule for PlayTheWinner {
    fn kind(&self) -> &'static str {
        self.kind
    }

    fn arms(&self) -> usize {
        self.p.len()
    }

    fn epu_exact(&self) -> bool {
        true
    }

    #[inline]
    fn sample_row(&self, arm: usize, _: &History<'_>, rng: &mut RandomStream, row: &mut [f64]) -> Response {
        let success = rng.uniform() < self.p[arm];
        fill_row(arm, success, row);
        if success {
            Response::Success
        } else {
            Response::Failure
        }
    }

    fn conditional_generating_matrix(&self, _: &History<'_>) -> DMatrix<f64> {
        matrix_for(&self.p)
    }

    fn limit_spec(&self) -> Result<MomentSpec, RuleError> {
        moment_spec_for(&self.p)
    }

    fn drift_class(&self) -> Result<DriftClass, RuleError> {
        Ok(DriftClass::homogeneous())
    }

    fn exact_tau(&self) -> Option<Ratio<i64>> {
        exact_lambda_for(&self.p)
    }

    fn params(&self) -> serde_json::Value {
        match self.kind {
            "rpw" => serde_json::json!({"p1": self.p[0], "p2": self.p[1]}),
            _ => serde_json::json!({"p": self.p}),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrendBase {
    Rpw,
    Wei,
}

/// Play-the-winner with `p_ik = p_k + delta_k i^-gamma`.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeTrend {
    base: TrendBase,
    p: Vec<f64>,
    delta: Vec<f64>,
    gamma: f64,
}

impl TimeTrend {
    pub fn new(base: TrendBase, p: Vec<f64>, delta: Vec<f64>, gamma: f64) -> Result<Self, RuleError> {
        match base {
            TrendBase::Rpw if p.len() != 2 => {
                return Err(RuleError::invalid("p", "must have two entries for an rpw base"))
            }
            _ if p.len() < 2 => return Err(RuleError::invalid("p", "needs at least two arms")),
            _ => {}
        }
        if delta.len() != p.len() {
            return Err(RuleError::invalid("delta", "must have one entry per arm"));
        }
        if !(gamma > 0.0) || !gamma.is_finite() {
            return Err(RuleError::invalid("gamma", "must be positive"));
        }
        for (k, (&pk, &dk)) in p.iter().zip(&delta).enumerate() {
            check_probability(&format!("p[{k}]"), pk)?;
            // i^-gamma lies in (0, 1], so the extreme stage is i = 1.
            let first = pk + dk;
            if !dk.is_finite() || !(0.0..=1.0).contains(&first) {
                return Err(RuleError::invalid(
                    format!("delta[{k}]"),
                    format!("moves p[{k}] outside [0,1] at stage 1 (p + delta = {first})"),
                ));
            }
        }
        Ok(Self { base, p, delta, gamma })
    }

    pub fn probabilities_at(&self, step: u64) -> Vec<f64> {
        let w = (step.max(1) as f64).powf(-self.gamma);
        self.p.iter().zip(&self.delta).map(|(p, d)| p + d * w).collect()
    }

    /// The homogeneous rule this one drifts towards.
    pub fn limit_rule(&self) -> PlayTheWinner {
        PlayTheWinner {
            kind: match self.base {
                TrendBase::Rpw => "rpw",
                TrendBase::Wei => "wei",
            },
            p: self.p.clone(),
        }
    }
}

impl AdditionRule for TimeTrend {
    fn kind(&self) -> &'static str {
        "time_trend"
    }

    fn arms(&self) -> usize {
        self.p.len()
    }

    fn epu_exact(&self) -> bool {
        true
    }

    #[inline]
    fn sample_row(&self, arm: usize, history: &History<'_>, rng: &mut RandomStream, row: &mut [f64]) -> Response {
        let w = (history.step.max(1) as f64).powf(-self.gamma);
        let p = self.p[arm] + self.delta[arm] * w;
        let success = rng.uniform() < p;
        fill_row(arm, success, row);
        if success {
            Response::Success
        } else {
            Response::Failure
        }
    }

    fn conditional_generating_matrix(&self, history: &History<'_>) -> DMatrix<f64> {
        matrix_for(&self.probabilities_at(history.step))
    }

    fn limit_spec(&self) -> Result<MomentSpec, RuleError> {
        moment_spec_for(&self.p)
    }

    fn drift_class(&self) -> Result<DriftClass, RuleError> {
        // Row q of H_i - H is delta_q i^-gamma on the diagonal and
        // -delta_q i^-gamma / (K-1) elsewhere: absolute row sum 2 |delta_q| i^-gamma.
        let c = 2.0 * self.delta.iter().fold(0.0f64, |m, d| m.max(d.abs()));
        Ok(DriftClass::new(c, self.gamma, 0.0))
    }

    fn exact_tau(&self) -> Option<Ratio<i64>> {
        exact_lambda_for(&self.p)
    }

    fn params(&self) -> serde_json::Value {
        serde_json::json!({
            "base": self.base,
            "p": self.p,
            "delta": self.delta,
            "gamma": self.gamma,
        })
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RpwParams {
    p1: f64,
    p2: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct WeiParams {
    p: Vec<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TrendParams {
    base: TrendBase,
    p: Vec<f64>,
    delta: Vec<f64>,
    gamma: f64,
}

pub(super) fn register(reg: &mut RuleRegistry) {
    reg.register(RuleEntry {
        name: "rpw",
        summary: "randomized play-the-winner, two arms (params p1, p2)",
        reference: "Wei and Durham (1978); variance of N_n: Matthews and Rosenberger (1997)",
        example: || serde_json::json!({"p1": 0.7, "p2": 0.4}),
        factory: |v| {
            let p: RpwParams = parse_params(v)?;
            Ok(Arc::new(PlayTheWinner::rpw(p.p1, p.p2)?))
        },
    });
    reg.register(RuleEntry {
        name: "wei",
        summary: "multi-arm play-the-winner, failure adds 1/(K-1) to each other type (params p)",
        reference: "Wei (1979)",
        example: || serde_json::json!({"p": [0.5, 0.5, 0.5]}),
        factory: |v| {
            let p: WeiParams = parse_params(v)?;
            Ok(Arc::new(PlayTheWinner::wei(p.p)?))
        },
    });
    reg.register(RuleEntry {
        name: "time_trend",
        summary: "play-the-winner with p_ik = p_k + delta_k i^-gamma (params base, p, delta, gamma)",
        reference: "Hu and Rosenberger (2000)",
        example: || serde_json::json!({"base": "rpw", "p": [0.5, 0.5], "delta": [0.2, 0.2], "gamma": 1.0}),
        factory: |v| {
            let p: TrendParams = parse_params(v)?;
            Ok(Arc::new(TimeTrend::new(p.base, p.p, p.delta, p.gamma)?))
        },
    });
}

#[cfg(test)]
mod tests {
    use super::*;

    fn history(step: u64) -> (u64, Vec<u64>, Vec<u64>) {
        (step, vec![0; 3], vec![0; 3])
    }

    #[test]
    fn rpw_row_law() {
        let rule = PlayTheWinner::rpw(0.7, 0.4).unwrap();
        let (step, n, s) = history(1);
        let h = History { step, draws: &n[..2], successes: &s[..2] };
        let mut rng = RandomStream::new(1, 1);
        let mut row = [0.0; 2];
        let trials = 100_000;
        let mut same = 0;
        for _ in 0..trials {
            match rule.sample_row(0, &h, &mut rng, &mut row) {
                Response::Success => {
                    assert_eq!(row, [1.0, 0.0]);
                    same += 1;
                }
                _ => assert_eq!(row, [0.0, 1.0]),
            }
        }
        let freq = same as f64 / trials as f64;
        assert!((freq - 0.7).abs() < 4.0 * (0.21f64 / trials as f64).sqrt());
    }

    #[test]
    fn wei_failure_splits_evenly() {
        let mut row = [0.0; 3];
        fill_row(1, false, &mut row);
        assert_eq!(row, [0.5, 0.0, 0.5]);
    }

    #[test]
    fn rpw_generating_matrix_and_moments() {
        let rule = PlayTheWinner::rpw(0.7, 0.4).unwrap();
        let (step, n, s) = history(9);
        let h = rule.conditional_generating_matrix(&History { step, draws: &n[..2], successes: &s[..2] });
        assert_eq!(h, DMatrix::from_row_slice(2, 2, &[0.7, 0.30000000000000004, 0.6, 0.4]));
        let spec = rule.limit_spec().unwrap();
        let a1 = 0.7 * 0.30000000000000004;
        let expect = DMatrix::from_row_slice(2, 2, &[a1, -a1, -a1, a1]);
        assert!((&spec.d[0] - expect).amax() < 1e-15);
    }

    #[test]
    fn wei_moments_match_two_point_brute_force() {
        let rule = PlayTheWinner::wei(vec![0.5, 0.5, 0.5]).unwrap();
        let spec = rule.limit_spec().unwrap();
        // rows {e_0 w.p. 1/2, (0, 1/2, 1/2) w.p. 1/2}
        let outcomes = [([1.0, 0.0, 0.0], 0.5), ([0.0, 0.5, 0.5], 0.5)];
        let mean: Vec<f64> = (0..3).map(|j| outcomes.iter().map(|(r, w)| w * r[j]).sum()).collect();
        for i in 0..3 {
            for j in 0..3 {
                let cov: f64 = outcomes
                    .iter()
                    .map(|(r, w)| w * (r[i] - mean[i]) * (r[j] - mean[j]))
                    .sum();
                assert!((spec.d[0][(i, j)] - cov).abs() < 1e-15);
            }
        }
        assert!((spec.d[0][(0, 0)] - 0.25).abs() < 1e-15);
        assert!((spec.d[0][(0, 1)] + 0.125).abs() < 1e-15);
        assert!((spec.d[0][(1, 1)] - 0.0625).abs() < 1e-15);
    }

    #[test]
    fn rpw_exact_tau() {
        let rule = PlayTheWinner::rpw(0.9, 0.6).unwrap();
        assert_eq!(rule.exact_tau(), Some(Ratio::new(1, 2)));
        assert_eq!(PlayTheWinner::wei(vec![0.9, 0.6, 0.5]).unwrap().exact_tau(), None);
    }

    #[test]
    fn validation_messages() {
        assert_eq!(PlayTheWinner::rpw(1.2, 0.5).unwrap_err().to_string(), "p1 out of (0,1)");
        assert!(PlayTheWinner::wei(vec![0.5]).is_err());
        assert!(TimeTrend::new(TrendBase::Rpw, vec![0.5, 0.5], vec![0.6, 0.0], 1.0).is_err());
        assert!(TimeTrend::new(TrendBase::Rpw, vec![0.5, 0.5], vec![0.2, 0.2], 0.0).is_err());
        assert!(TimeTrend::new(TrendBase::Rpw, vec![0.5, 0.5, 0.5], vec![0.0; 3], 1.0).is_err());
    }

    #[test]
    fn time_trend_drift_rate() {
        let rule = TimeTrend::new(TrendBase::Rpw, vec![0.5, 0.5], vec![0.2, 0.2], 1.0).unwrap();
        let limit = rule.limit_spec().unwrap();
        for i in [1u64, 2, 10, 1000] {
            let (step, n, s) = history(i);
            let hi = rule.conditional_generating_matrix(&History { step, draws: &n[..2], successes: &s[..2] });
            let diff = &hi - limit.h.entries();
            let norm = (0..2).map(|r| diff.row(r).abs().sum()).fold(0.0, f64::max);
            assert!((norm - 0.4 / i as f64).abs() < 1e-14, "i={i}: {norm}");
        }
        let drift = rule.drift_class().unwrap();
        assert!((drift.c - 0.4).abs() < 1e-15);
        assert_eq!(drift.gamma, 1.0);
        assert!(drift.summable && drift.root_summable);
    }

    #[test]
    fn wei_trend_drift_uses_row_norm() {
        let rule = TimeTrend::new(TrendBase::Wei, vec![0.5, 0.6, 0.4], vec![-0.1, 0.3, 0.0], 0.75).unwrap();
        let limit = rule.limit_spec().unwrap();
        let drift = rule.drift_class().unwrap();
        for i in [1u64, 7, 500] {
            let (step, n, s) = history(i);
            let hi = rule.conditional_generating_matrix(&History { step, draws: &n, successes: &s });
            let diff = &hi - limit.h.entries();
            let norm = (0..3).map(|r| diff.row(r).abs().sum()).fold(0.0, f64::max);
            assert!((norm - drift.alpha(i)).abs() < 1e-14);
        }
        assert!(drift.summable && drift.root_summable);
    }
}
