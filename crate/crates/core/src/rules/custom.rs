//! User-tabulated rules: each arm carries a finite law over addition rows.
//! The `friedman` and `random_total` presets are built on the same type.

use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{generating, parse_params, AdditionRule, DriftClass, MomentSpec, Response, RuleEntry, RuleError, RuleRegistry};
use crate::urn::{History, RandomStream};

const PROB_TOL: f64 = 1e-12;

/// What the user asserts about `alpha_i = |H_i - H|_inf`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DriftDeclaration {
    Homogeneous,
    Rate {
        c: f64,
        gamma: f64,
        #[serde(default)]
        beta: f64,
    },
    /// `H_i` has no limit; no asymptotic claim applies.
    Nonconvergent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Outcome {
    pub prob: f64,
    pub row: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CustomTabulated {
    kind: &'static str,
    laws: Vec<Vec<(f64, Vec<f64>)>>,
    withdrawal: bool,
    drift: Option<DriftDeclaration>,
    params: serde_json::Value,
}

impl CustomTabulated {
    /// `laws[q]` lists `(probability, row)` pairs for arm `q`.
    pub fn new(laws: Vec<Vec<(f64, Vec<f64>)>>, withdrawal: bool) -> Result<Self, RuleError> {
        let k = laws.len();
        if k < 2 {
            return Err(RuleError::invalid("arms", "needs at least two arms"));
        }
        let mut expected_sum = None;
        for (q, law) in laws.iter().enumerate() {
            let field = format!("arms[{q}]");
            if law.is_empty() {
                return Err(RuleError::invalid(field, "has no outcomes"));
            }
            let mut total = 0.0;
            let mut sum = 0.0;
            for (prob, row) in law {
                if !(*prob >= 0.0 && prob.is_finite()) {
                    return Err(RuleError::invalid(&field, format!("probability {prob} is not in [0,1]")));
                }
                if row.len() != k {
                    return Err(RuleError::invalid(&field, format!("row has {} entries, expected {k}", row.len())));
                }
                if row.iter().any(|x| !x.is_finite()) {
                    return Err(RuleError::invalid(&field, "row has a non-finite entry"));
                }
                if !withdrawal && row.iter().any(|&x| x < 0.0) {
                    return Err(RuleError::invalid(&field, "removes balls but withdrawal_allowed is false"));
                }
                total += prob;
                sum += prob * row.iter().sum::<f64>();
            }
            if (total - 1.0).abs() > PROB_TOL {
                return Err(RuleError::invalid(&field, format!("probabilities sum to {total}, not 1")));
            }
            match expected_sum {
                None => expected_sum = Some(sum),
                Some(first) if (sum - first).abs() > PROB_TOL * first.abs().max(1.0) => {
                    return Err(RuleError::invalid(
                        &field,
                        format!("expected row sum {sum} differs from arm 0's {first}"),
                    ));
                }
                _ => {}
            }
        }
        let params = serde_json::json!({
            "arms": laws
                .iter()
                .map(|law| law.iter().map(|(prob, row)| Outcome { prob: *prob, row: row.clone() }).collect::<Vec<_>>())
                .collect::<Vec<_>>(),
            "withdrawal_allowed": withdrawal,
        });
        Ok(Self {
            kind: "custom",
            laws,
            withdrawal,
            drift: None,
            params,
        })
    }

    /// One fixed addition row per arm.
    pub fn deterministic(rows: Vec<Vec<f64>>) -> Result<Self, RuleError> {
        let withdrawal = rows.iter().flatten().any(|&x| x < 0.0);
        Self::new(rows.into_iter().map(|r| vec![(1.0, r)]).collect(), withdrawal)
    }

    pub fn with_drift(mut self, drift: DriftDeclaration) -> Result<Self, RuleError> {
        if let DriftDeclaration::Rate { c, gamma, beta } = drift {
            if !(c >= 0.0 && c.is_finite() && gamma >= 0.0 && gamma.is_finite() && beta.is_finite()) {
                return Err(RuleError::invalid("drift", "needs c >= 0, gamma >= 0 and finite beta"));
            }
        }
        self.drift = Some(drift);
        if let serde_json::Value::Object(m) = &mut self.params {
            m.insert("drift".into(), serde_json::to_value(drift).expect("plain enum"));
        }
        Ok(self)
    }

    fn preset(mut self, kind: &'static str, params: serde_json::Value) -> Self {
        self.kind = kind;
        self.params = params;
        self
    }

    /// Two-arm Friedman urn: a draw adds `alpha` of its own type and
    /// `1 - alpha` of the other.
    pub fn friedman(alpha: f64) -> Result<Self, RuleError> {
        if !(0.0..1.0).contains(&alpha) {
            return Err(RuleError::invalid("alpha", "out of [0,1)"));
        }
        Ok(Self::deterministic(vec![vec![alpha, 1.0 - alpha], vec![1.0 - alpha, alpha]])?
            .with_drift(DriftDeclaration::Homogeneous)?
            .preset("friedman", serde_json::json!({"alpha": alpha})))
    }

    /// Two arms; a draw adds two balls of the other type or nothing, each
    /// with probability one half. Total added is random.
    pub fn random_total() -> Self {
        Self::new(
            vec![
                vec![(0.5, vec![0.0, 2.0]), (0.5, vec![0.0, 0.0])],
                vec![(0.5, vec![2.0, 0.0]), (0.5, vec![0.0, 0.0])],
            ],
            false,
        )
        .and_then(|r| r.with_drift(DriftDeclaration::Homogeneous))
        .expect("valid preset")
        .preset("random_total", serde_json::json!({}))
    }

    fn mean_matrix(&self) -> DMatrix<f64> {
        let k = self.laws.len();
        let mut h = DMatrix::zeros(k, k);
        for (q, law) in self.laws.iter().enumerate() {
            for (prob, row) in law {
                for j in 0..k {
                    h[(q, j)] += prob * row[j];
                }
            }
        }
        h
    }
}

impl AdditionRule for CustomTabulated {
    fn kind(&self) -> &'static str {
        self.kind
    }

    fn arms(&self) -> usize {
        self.laws.len()
    }

    fn withdrawal_allowed(&self) -> bool {
        self.withdrawal
    }

    fn epu_exact(&self) -> bool {
        self.laws
            .iter()
            .flatten()
            .all(|(_, row)| (row.iter().sum::<f64>() - 1.0).abs() <= PROB_TOL)
    }

    fn sample_row(&self, arm: usize, _: &History<'_>, rng: &mut RandomStream, row: &mut [f64]) -> Response {
        let law = &self.laws[arm];
        let chosen = if law.len() == 1 {
            &law[0].1
        } else {
            let u = rng.uniform();
            let mut acc = 0.0;
            law.iter()
                .find(|(p, _)| {
                    acc += p;
                    u < acc
                })
                .map_or(&law[law.len() - 1].1, |(_, r)| r)
        };
        row.copy_from_slice(chosen);
        Response::Unobserved
    }

    fn conditional_generating_matrix(&self, _: &History<'_>) -> DMatrix<f64> {
        self.mean_matrix()
    }

    /// Moments of the urn rescaled to unit row sum.
    fn limit_spec(&self) -> Result<MomentSpec, RuleError> {
        if self.drift == Some(DriftDeclaration::Nonconvergent) {
            return Err(RuleError::NoKnownLimit);
        }
        let mean = self.mean_matrix();
        let h = generating(mean.clone(), self.withdrawal)?;
        let scale = h.row_sum();
        let k = self.laws.len();
        let d = self
            .laws
            .iter()
            .enumerate()
            .map(|(q, law)| {
                let mut cov = DMatrix::zeros(k, k);
                for (prob, row) in law {
                    for i in 0..k {
                        for j in 0..k {
                            cov[(i, j)] += prob * (row[i] - mean[(q, i)]) * (row[j] - mean[(q, j)]);
                        }
                    }
                }
                cov / (scale * scale)
            })
            .collect();
        MomentSpec::new(h, d)
    }

    fn drift_class(&self) -> Result<DriftClass, RuleError> {
        match self.drift {
            None => Err(RuleError::UnknownDrift),
            Some(DriftDeclaration::Nonconvergent) => Err(RuleError::NoKnownLimit),
            Some(DriftDeclaration::Homogeneous) => Ok(DriftClass::homogeneous()),
            Some(DriftDeclaration::Rate { c, gamma, beta }) => Ok(DriftClass::new(c, gamma, beta)),
        }
    }

    fn params(&self) -> serde_json::Value {
        self.params.clone()
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Params {
    arms: Vec<Vec<Outcome>>,
    #[serde(default)]
    withdrawal_allowed: bool,
    #[serde(default)]
    drift: Option<DriftDeclaration>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct FriedmanParams {
    #[serde(default)]
    alpha: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct NoParams {}

pub(super) fn register(reg: &mut RuleRegistry) {
    reg.register(RuleEntry {
        name: "custom",
        summary: "per-arm finite law over addition rows (params arms, withdrawal_allowed, drift)",
        reference: "user supplied",
        example: || {
            serde_json::json!({
                "arms": [
                    [{"prob": 0.5, "row": [1.0, 0.0]}, {"prob": 0.5, "row": [0.0, 1.0]}],
                    [{"prob": 1.0, "row": [0.5, 0.5]}],
                ],
                "drift": {"kind": "homogeneous"},
            })
        },
        factory: |v| {
            let p: Params = parse_params(v)?;
            let laws = p
                .arms
                .into_iter()
                .map(|law| law.into_iter().map(|o| (o.prob, o.row)).collect())
                .collect();
            let rule = CustomTabulated::new(laws, p.withdrawal_allowed)?;
            Ok(Arc::new(match p.drift {
                Some(d) => rule.with_drift(d)?,
                None => rule,
            }))
        },
    });
    reg.register(RuleEntry {
        name: "friedman",
        summary: "two-arm Friedman urn adding alpha of the drawn type and 1-alpha of the other (param alpha, default 0)",
        reference: "Friedman (1949)",
        example: || serde_json::json!({"alpha": 0.0}),
        factory: |v| {
            let p: FriedmanParams = parse_params(v)?;
            Ok(Arc::new(CustomTabulated::friedman(p.alpha)?))
        },
    });
    reg.register(RuleEntry {
        name: "random_total",
        summary: "two-arm urn adding two balls of the other type or none, each with probability 1/2",
        reference: "user supplied",
        example: || serde_json::json!({}),
        factory: |v| {
            let _: NoParams = parse_params(v)?;
            Ok(Arc::new(CustomTabulated::random_total()))
        },
    });
}
