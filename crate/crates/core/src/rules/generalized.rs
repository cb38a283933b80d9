//! Generalized play-the-winner with covariate-dependent responses: row `k` of
//! the addition matrix is `(d_k, 1 - d_k)` (or its mirror) with `d_k` drawn
//! from a law on `[0, 1]` with mean `p_k` and variance `a_k`.

use std::sync::Arc;

use nalgebra::DMatrix;
use num_rational::Ratio;
use num_traits::{CheckedAdd, CheckedDiv};
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};

use super::{
    exact_decimal, exact_mul, exact_two_arm_lambda, generating, parse_params, AdditionRule, DriftClass,
    MomentSpec, Response, RuleEntry, RuleError, RuleRegistry,
};
use crate::urn::{History, RandomStream};

/// Law of the same-type share `d_k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "snake_case", deny_unknown_fields)]
pub enum CovariateLaw {
    Bernoulli { p: f64 },
    Beta { alpha: f64, beta: f64 },
    Constant { value: f64 },
    Tabulated { values: Vec<f64>, probs: Vec<f64> },
}

impl CovariateLaw {
    fn validate(&self, field: &str) -> Result<(), RuleError> {
        let bad = |reason: &str| Err(RuleError::invalid(field, reason));
        match self {
            CovariateLaw::Bernoulli { p } if !(*p > 0.0 && *p < 1.0) => bad("bernoulli p out of (0,1)"),
            CovariateLaw::Beta { alpha, beta }
                if !(*alpha > 0.0 && *beta > 0.0 && alpha.is_finite() && beta.is_finite()) =>
            {
                bad("beta shape parameters must be positive")
            }
            CovariateLaw::Constant { value } if !(*value > 0.0 && *value < 1.0) => {
                bad("constant share out of (0,1)")
            }
            CovariateLaw::Tabulated { values, probs } => {
                if values.is_empty() || values.len() != probs.len() {
                    return bad("tabulated law needs matching, nonempty values and probs");
                }
                if values.iter().any(|v| !(0.0..=1.0).contains(v)) {
                    return bad("tabulated values must lie in [0,1]");
                }
                if probs.iter().any(|p| !(*p >= 0.0)) || (probs.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
                    return bad("tabulated probs must be nonnegative and sum to 1");
                }
                let mean = self.mean();
                if !(mean > 0.0 && mean < 1.0) {
                    return bad("tabulated mean out of (0,1)");
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    pub fn mean(&self) -> f64 {
        match self {
            CovariateLaw::Bernoulli { p } => *p,
            CovariateLaw::Beta { alpha, beta } => alpha / (alpha + beta),
            CovariateLaw::Constant { value } => *value,
            CovariateLaw::Tabulated { values, probs } => values.iter().zip(probs).map(|(v, p)| v * p).sum(),
        }
    }

    pub fn variance(&self) -> f64 {
        match self {
            CovariateLaw::Bernoulli { p } => p * (1.0 - p),
            CovariateLaw::Beta { alpha, beta } => {
                let s = alpha + beta;
                alpha * beta / (s * s * (s + 1.0))
            }
            CovariateLaw::Constant { .. } => 0.0,
            CovariateLaw::Tabulated { values, probs } => {
                let m = self.mean();
                values.iter().zip(probs).map(|(v, p)| p * (v - m) * (v - m)).sum()
            }
        }
    }

    fn exact_mean(&self) -> Option<Ratio<i64>> {
        match self {
            CovariateLaw::Bernoulli { p } => exact_decimal(*p),
            CovariateLaw::Constant { value } => exact_decimal(*value),
            CovariateLaw::Beta { alpha, beta } => {
                let a = exact_decimal(*alpha)?;
                a.checked_div(&a.checked_add(&exact_decimal(*beta)?)?)
            }
            CovariateLaw::Tabulated { values, probs } => {
                let mut acc = Ratio::from_integer(0);
                for (v, p) in values.iter().zip(probs) {
                    acc = acc.checked_add(&exact_mul(exact_decimal(*v)?, exact_decimal(*p)?)?)?;
                }
                Some(acc)
            }
        }
    }

    fn sample(&self, rng: &mut RandomStream) -> f64 {
        match self {
            CovariateLaw::Bernoulli { p } => {
                if rng.uniform() < *p {
                    1.0
                } else {
                    0.0
                }
            }
            CovariateLaw::Beta { alpha, beta } => Beta::new(*alpha, *beta)
                .expect("validated shape parameters")
                .sample(rng),
            CovariateLaw::Constant { value } => *value,
            CovariateLaw::Tabulated { values, probs } => {
                let u = rng.uniform();
                let mut acc = 0.0;
                for (v, p) in values.iter().zip(probs) {
                    acc += p;
                    if u < acc {
                        return *v;
                    }
                }
                *values.last().expect("nonempty")
            }
        }
    }
}

/// Two-arm rule with addition rows `(d_1, 1 - d_1)` and `(1 - d_2, d_2)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneralizedPlayTheWinner {
    laws: [CovariateLaw; 2],
}

impl GeneralizedPlayTheWinner {
    pub fn new(d1: CovariateLaw, d2: CovariateLaw) -> Result<Self, RuleError> {
        d1.validate("d1")?;
        d2.validate("d2")?;
        Ok(Self { laws: [d1, d2] })
    }

    /// `(p1, p2, a1, a2)`: means and variances of the two share laws.
    pub fn moments(&self) -> (f64, f64, f64, f64) {
        (
            self.laws[0].mean(),
            self.laws[1].mean(),
            self.laws[0].variance(),
            self.laws[1].variance(),
        )
    }
}

fn bernoulli_row(value: f64) -> Response {
    if value == 1.0 {
        Response::Success
    } else if value == 0.0 {
        Response::Failure
    } else {
        Response::Unobserved
    }
}

impl AdditionRule for GeneralizedPlayTheWinner {
    fn kind(&self) -> &'static str {
        "generalized_pw"
    }

    fn arms(&self) -> usize {
        2
    }

    fn epu_exact(&self) -> bool {
        true
    }

    fn sample_row(&self, arm: usize, _: &History<'_>, rng: &mut RandomStream, row: &mut [f64]) -> Response {
        let d = self.laws[arm].sample(rng);
        row[arm] = d;
        row[1 - arm] = 1.0 - d;
        match self.laws[arm] {
            CovariateLaw::Bernoulli { .. } => bernoulli_row(d),
            _ => Response::Unobserved,
        }
    }

    fn conditional_generating_matrix(&self, _: &History<'_>) -> DMatrix<f64> {
        let (p1, p2, _, _) = self.moments();
        DMatrix::from_row_slice(2, 2, &[p1, 1.0 - p1, 1.0 - p2, p2])
    }

    fn limit_spec(&self) -> Result<MomentSpec, RuleError> {
        let (p1, p2, a1, a2) = self.moments();
        let h = generating(DMatrix::from_row_slice(2, 2, &[p1, 1.0 - p1, 1.0 - p2, p2]), false)?;
        let pattern = |a: f64| DMatrix::from_row_slice(2, 2, &[a, -a, -a, a]);
        MomentSpec::new(h, vec![pattern(a1), pattern(a2)])
    }

    fn drift_class(&self) -> Result<DriftClass, RuleError> {
        Ok(DriftClass::homogeneous())
    }

    fn exact_tau(&self) -> Option<Ratio<i64>> {
        exact_two_arm_lambda(self.laws[0].exact_mean()?, self.laws[1].exact_mean()?)
    }

    fn params(&self) -> serde_json::Value {
        serde_json::json!({"d1": self.laws[0], "d2": self.laws[1]})
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Params {
    d1: CovariateLaw,
    d2: CovariateLaw,
}

pub(super) fn register(reg: &mut RuleRegistry) {
    reg.register(RuleEntry {
        name: "generalized_pw",
        summary: "two-arm play-the-winner with covariate shares d_k ~ bernoulli | beta | constant | tabulated (params d1, d2)",
        reference: "Wei and Durham (1978), with random covariate shares",
        example: || {
            serde_json::json!({
                "d1": {"law": "beta", "alpha": 7.0, "beta": 3.0},
                "d2": {"law": "bernoulli", "p": 0.4},
            })
        },
        factory: |v| {
            let p: Params = parse_params(v)?;
            Ok(Arc::new(GeneralizedPlayTheWinner::new(p.d1, p.d2)?))
        },
    });
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn beta_moments() {
        let law = CovariateLaw::Beta { alpha: 7.0, beta: 3.0 };
        assert!((law.mean() - 0.7).abs() < 1e-15);
        assert!((law.variance() - 21.0 / 1100.0).abs() < 1e-15);
        assert_eq!(law.exact_mean(), Some(Ratio::new(7, 10)));
    }

    #[test]
    fn degenerate_shares_have_zero_covariance() {
        let rule = GeneralizedPlayTheWinner::new(
            CovariateLaw::Constant { value: 0.7 },
            CovariateLaw::Constant { value: 0.4 },
        )
        .unwrap();
        let spec = rule.limit_spec().unwrap();
        assert!(spec.d.iter().all(|d| d.amax() == 0.0));
    }

    #[test]
    fn bernoulli_shares_reduce_to_rpw() {
        let rule = GeneralizedPlayTheWinner::new(
            CovariateLaw::Bernoulli { p: 0.7 },
            CovariateLaw::Bernoulli { p: 0.4 },
        )
        .unwrap();
        let rpw = super::super::PlayTheWinner::rpw(0.7, 0.4).unwrap();
        let a = rule.limit_spec().unwrap();
        let b = rpw.limit_spec().unwrap();
        assert!((a.h.entries() - b.h.entries()).amax() < 1e-15);
        for q in 0..2 {
            assert!((&a.d[q] - &b.d[q]).amax() < 1e-15);
        }
        assert_eq!(rule.exact_tau(), rpw.exact_tau());
    }

    #[test]
    fn tabulated_law_checks() {
        let bad = CovariateLaw::Tabulated { values: vec![0.2, 1.4], probs: vec![0.5, 0.5] };
        assert!(GeneralizedPlayTheWinner::new(bad, CovariateLaw::Bernoulli { p: 0.5 }).is_err());
        let unnormalized = CovariateLaw::Tabulated { values: vec![0.2, 0.4], probs: vec![0.5, 0.4] };
        assert!(GeneralizedPlayTheWinner::new(unnormalized, CovariateLaw::Bernoulli { p: 0.5 }).is_err());
        let good = CovariateLaw::Tabulated { values: vec![0.2, 0.8], probs: vec![0.25, 0.75] };
        assert!((good.mean() - 0.65).abs() < 1e-15);
        assert_eq!(good.exact_mean(), Some(Ratio::new(13, 20)));
    }

    #[test]
    fn realized_rows_sum_to_one() {
        let rule = GeneralizedPlayTheWinner::new(
            CovariateLaw::Beta { alpha: 2.0, beta: 5.0 },
            CovariateLaw::Tabulated { values: vec![0.1, 0.9], probs: vec![0.5, 0.5] },
        )
        .unwrap();
        let h = History { step: 1, draws: &[0, 0], successes: &[0, 0] };
        let mut rng = RandomStream::new(4, 4);
        let mut row = [0.0; 2];
        for arm in [0, 1, 0, 1, 1] {
            rule.sample_row(arm, &h, &mut rng, &mut row);
            assert_eq!(row[0] + row[1], 1.0);
        }
    }
}
