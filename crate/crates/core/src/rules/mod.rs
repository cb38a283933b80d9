//! Addition rules: the catalog of response-adaptive urn designs behind a common
//! trait, plus a name-keyed registry used by the experiment config.
//!
//! Every rule exposes four views of itself:
//! * a sampler for the drawn arm's addition row given the history,
//! * the conditional generating matrix `H_i = E[D_i | history]`,
//! * the limit `H` together with the limiting row covariances `d_q`,
//! * the drift class of `alpha_i = |H_i - H|_inf`.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use num_rational::Ratio;
use num_traits::{CheckedAdd, CheckedMul, CheckedSub};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::spectral::{decimal_ratio, validate_generating_matrix, GeneratingMatrix, SpectralError};
use crate::urn::{History, RandomStream};

mod bai_hu_shen;
mod custom;
mod generalized;
mod play_the_winner;

pub use bai_hu_shen::BaiHuShen;
pub use custom::{CustomTabulated, DriftDeclaration};
pub use generalized::{CovariateLaw, GeneralizedPlayTheWinner};
pub use play_the_winner::{PlayTheWinner, TimeTrend, TrendBase};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RuleError {
    #[error("{field} {reason}")]
    InvalidParameter { field: String, reason: String },
    #[error("invalid history: {0}")]
    InvalidHistory(String),
    #[error("rule declares no convergent limit generating matrix")]
    NoKnownLimit,
    #[error("rule declares no drift rate for its generating matrices")]
    UnknownDrift,
    #[error("unknown rule kind `{0}`")]
    UnknownRule(String),
    #[error("rule parameters: {0}")]
    Params(String),
    #[error(transparent)]
    Spectral(#[from] SpectralError),
}

impl RuleError {
    pub(crate) fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Self {
        RuleError::InvalidParameter {
            field: field.into(),
            reason: reason.into(),
        }
    }
}

/// Observed response of the allocated subject, when the rule has one.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Response {
    Success,
    Failure,
    Unobserved,
}

pub trait AdditionRule: Send + Sync + fmt::Debug {
    /// Registry name.
    fn kind(&self) -> &'static str;

    fn arms(&self) -> usize;

    fn withdrawal_allowed(&self) -> bool {
        false
    }

    /// True when every realized addition row sums to exactly one.
    fn epu_exact(&self) -> bool;

    /// Samples row `arm` of the addition matrix into `row`.
    fn sample_row(
        &self,
        arm: usize,
        history: &History<'_>,
        rng: &mut RandomStream,
        row: &mut [f64],
    ) -> Response;

    /// `E[D_i | history]`; rows sum to one.
    fn conditional_generating_matrix(&self, history: &History<'_>) -> DMatrix<f64>;

    fn limit_spec(&self) -> Result<MomentSpec, RuleError>;

    fn drift_class(&self) -> Result<DriftClass, RuleError>;

    /// Exact `tau` of the limit matrix when it has a closed form in the
    /// (decimal) parameters.
    fn exact_tau(&self) -> Option<Ratio<i64>> {
        None
    }

    /// Canonical parameter object, as accepted by the registry factory.
    fn params(&self) -> serde_json::Value;
}

/// Draws a full addition matrix. Rows are sampled in index order; the
/// response of row `arm` is returned with it.
pub fn sample_addition(
    rule: &dyn AdditionRule,
    arm: usize,
    history: &History<'_>,
    rng: &mut RandomStream,
) -> (DMatrix<f64>, Response) {
    let k = rule.arms();
    let mut d = DMatrix::zeros(k, k);
    let mut row = vec![0.0; k];
    let mut response = Response::Unobserved;
    for q in 0..k {
        let r = rule.sample_row(q, history, rng, &mut row);
        if q == arm {
            response = r;
        }
        for (j, &x) in row.iter().enumerate() {
            d[(q, j)] = x;
        }
    }
    (d, response)
}

/// Limit generating matrix and limiting conditional covariances of each row.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentSpec {
    pub h: GeneratingMatrix,
    pub d: Vec<DMatrix<f64>>,
}

impl MomentSpec {
    pub fn new(h: GeneratingMatrix, d: Vec<DMatrix<f64>>) -> Result<Self, RuleError> {
        let k = h.arms();
        if d.len() != k || d.iter().any(|m| m.shape() != (k, k)) {
            return Err(RuleError::invalid("d", "needs one KxK covariance per arm"));
        }
        for (q, m) in d.iter().enumerate() {
            let scale = 1.0 + m.amax();
            if (m - m.transpose()).amax() > 1e-12 * scale {
                return Err(RuleError::invalid(format!("d[{q}]"), "is not symmetric"));
            }
            let min = m.clone().symmetric_eigenvalues().min();
            if min < -1e-10 * scale {
                return Err(RuleError::invalid(
                    format!("d[{q}]"),
                    format!("is not positive semi-definite (eigenvalue {min})"),
                ));
            }
        }
        Ok(Self { h, d })
    }

    pub fn arms(&self) -> usize {
        self.h.arms()
    }

    /// Scales every row covariance by `factor` (used to study noise scaling).
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            h: self.h.clone(),
            d: self.d.iter().map(|m| m * factor).collect(),
        }
    }
}

/// `alpha_i = C i^-gamma log^-beta(i + 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DriftClass {
    pub c: f64,
    pub gamma: f64,
    pub beta: f64,
    /// `sum alpha_i / i < inf`
    pub summable: bool,
    /// `sum alpha_i / sqrt(i) < inf`
    pub root_summable: bool,
}

impl DriftClass {
    pub fn new(c: f64, gamma: f64, beta: f64) -> Self {
        if c == 0.0 {
            return Self::homogeneous();
        }
        let summable = gamma > 0.0 || (gamma == 0.0 && beta > 1.0);
        let root_summable = gamma > 0.5 || (gamma == 0.5 && beta > 1.0);
        Self {
            c,
            gamma,
            beta,
            summable,
            root_summable,
        }
    }

    pub fn homogeneous() -> Self {
        Self {
            c: 0.0,
            gamma: 0.0,
            beta: 0.0,
            summable: true,
            root_summable: true,
        }
    }

    pub fn is_homogeneous(&self) -> bool {
        self.c == 0.0
    }

    pub fn alpha(&self, i: u64) -> f64 {
        if self.c == 0.0 {
            return 0.0;
        }
        let i = i as f64;
        self.c * i.powf(-self.gamma) * (i + 1.0).ln().powf(-self.beta)
    }
}

/// Play-the-winner row covariance: `p q (e_q - u)^T (e_q - u)` where the
/// failure row `u` spreads one ball over the other arms.
pub(crate) fn two_point_covariance(q: usize, p: f64, failure_row: &[f64]) -> DMatrix<f64> {
    let k = failure_row.len();
    let diff: Vec<f64> = (0..k)
        .map(|j| if j == q { 1.0 } else { 0.0 } - failure_row[j])
        .collect();
    DMatrix::from_fn(k, k, |i, j| p * (1.0 - p) * diff[i] * diff[j])
}

pub(crate) fn check_probability(field: &str, p: f64) -> Result<(), RuleError> {
    if p > 0.0 && p < 1.0 {
        Ok(())
    } else {
        Err(RuleError::invalid(field, "out of (0,1)"))
    }
}

pub(crate) fn generating(raw: DMatrix<f64>, withdrawal: bool) -> Result<GeneratingMatrix, RuleError> {
    Ok(validate_generating_matrix(&raw, withdrawal)?)
}

/// `p1 + p2 - 1` in exact arithmetic, for two-arm rules with decimal inputs.
pub(crate) fn exact_two_arm_lambda(p1: Ratio<i64>, p2: Ratio<i64>) -> Option<Ratio<i64>> {
    p1.checked_add(&p2)?.checked_sub(&Ratio::from_integer(1))
}

pub(crate) fn exact_decimal(x: f64) -> Option<Ratio<i64>> {
    decimal_ratio(x)
}

pub(crate) fn exact_mul(a: Ratio<i64>, b: Ratio<i64>) -> Option<Ratio<i64>> {
    a.checked_mul(&b)
}

pub(crate) fn parse_params<T: for<'de> Deserialize<'de>>(params: &serde_json::Value) -> Result<T, RuleError> {
    serde_json::from_value(params.clone()).map_err(|e| RuleError::Params(e.to_string()))
}

pub type RuleFactory = fn(&serde_json::Value) -> Result<Arc<dyn AdditionRule>, RuleError>;

#[derive(Clone)]
pub struct RuleEntry {
    pub name: &'static str,
    pub summary: &'static str,
    pub reference: &'static str,
    /// A parameter object the factory accepts.
    pub example: fn() -> serde_json::Value,
    pub factory: RuleFactory,
}

impl fmt::Debug for RuleEntry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("RuleEntry").field("name", &self.name).finish()
    }
}

/// Name-keyed rule catalog.
#[derive(Debug, Clone, Default)]
pub struct RuleRegistry {
    entries: BTreeMap<&'static str, RuleEntry>,
}

impl RuleRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn builtin() -> Self {
        let mut reg = Self::new();
        play_the_winner::register(&mut reg);
        generalized::register(&mut reg);
        bai_hu_shen::register(&mut reg);
        custom::register(&mut reg);
        reg
    }

    pub fn register(&mut self, entry: RuleEntry) {
        self.entries.insert(entry.name, entry);
    }

    pub fn get(&self, name: &str) -> Option<&RuleEntry> {
        self.entries.get(name)
    }

    pub fn entries(&self) -> impl Iterator<Item = &RuleEntry> {
        self.entries.values()
    }

    pub fn build(&self, name: &str, params: &serde_json::Value) -> Result<Arc<dyn AdditionRule>, RuleError> {
        let entry = self
            .get(name)
            .ok_or_else(|| RuleError::UnknownRule(name.to_string()))?;
        (entry.factory)(params)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn drift_conditions() {
        let h = DriftClass::homogeneous();
        assert!(h.summable && h.root_summable);
        assert_eq!(h.alpha(10), 0.0);

        let trend = DriftClass::new(0.4, 1.0, 0.0);
        assert!(trend.summable && trend.root_summable);

        let bhs = DriftClass::new(1.0, 0.25, 0.0);
        assert!(bhs.summable && !bhs.root_summable);

        let log_rate = DriftClass::new(1.0, 0.0, 1.5);
        assert!(log_rate.summable && !log_rate.root_summable);
        let slow_log = DriftClass::new(1.0, 0.0, 1.0);
        assert!(!slow_log.summable);
        let half = DriftClass::new(1.0, 0.5, 2.0);
        assert!(half.root_summable);
        let half_flat = DriftClass::new(1.0, 0.5, 0.0);
        assert!(!half_flat.root_summable);
    }

    #[test]
    fn every_builtin_builds_from_its_example() {
        let reg = RuleRegistry::builtin();
        let names: Vec<_> = reg.entries().map(|e| e.name).collect();
        for expected in ["bai_hu_shen", "custom", "friedman", "generalized_pw", "random_total", "rpw", "time_trend", "wei"] {
            assert!(names.contains(&expected), "missing {expected}");
        }
        for entry in reg.entries() {
            let rule = (entry.factory)(&(entry.example)()).unwrap();
            assert_eq!(rule.kind(), entry.name);
            // canonical params rebuild an identical rule
            let again = reg.build(entry.name, &rule.params()).unwrap();
            assert_eq!(again.params(), rule.params());
        }
    }

    #[test]
    fn unknown_rule() {
        let reg = RuleRegistry::builtin();
        assert_eq!(
            reg.build("urn_of_doom", &serde_json::json!({})).unwrap_err(),
            RuleError::UnknownRule("urn_of_doom".into())
        );
    }

    #[test]
    fn unknown_parameter_rejected() {
        let reg = RuleRegistry::builtin();
        let err = reg
            .build("rpw", &serde_json::json!({"p1": 0.5, "p2": 0.5, "p3": 0.1}))
            .unwrap_err();
        assert!(matches!(err, RuleError::Params(_)));
    }

    #[test]
    fn moment_spec_rejects_indefinite() {
        let h = generating(DMatrix::from_row_slice(2, 2, &[0.5, 0.5, 0.5, 0.5]), false).unwrap();
        let bad = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        assert!(MomentSpec::new(h, vec![bad.clone(), bad]).is_err());
    }
}
