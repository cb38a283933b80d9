//! JSON experiment configs: parsing with defaults, validation, emission and
//! a key-order independent digest.

use std::fs;
use std::path::Path;

use serde::Deserialize;
use serde_json::Value;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::montecarlo::{ExperimentConfig, RuleSpec, Target, Tolerances};
use crate::rules::{RuleError, RuleRegistry};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },
    #[error("{field} {message}")]
    Validation { field: String, message: String },
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

fn invalid(field: impl Into<String>, message: impl Into<String>) -> ConfigError {
    ConfigError::Validation { field: field.into(), message: message.into() }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    rule: Value,
    #[serde(default, alias = "Y0")]
    y0: Option<Vec<f64>>,
    n: u64,
    replicates: u64,
    #[serde(default)]
    checkpoints: Option<Vec<u64>>,
    #[serde(default)]
    seed: u64,
    #[serde(default)]
    targets: Option<Vec<Target>>,
    #[serde(default)]
    kappa: Option<f64>,
    #[serde(default)]
    tolerances: Tolerances,
}

/// `10, 100, ...` up to `n`, then `n` itself.
pub fn decade_checkpoints(n: u64) -> Vec<u64> {
    let mut out = Vec::new();
    let mut c = 10u64;
    while c < n {
        out.push(c);
        c = match c.checked_mul(10) {
            Some(next) => next,
            None => break,
        };
    }
    out.push(n);
    out
}

/// Text between the first pair of backticks of a serde message, if any.
fn quoted_name(message: &str) -> Option<&str> {
    let start = message.find('`')? + 1;
    let len = message[start..].find('`')?;
    Some(&message[start..start + len])
}

fn rule_error(err: RuleError) -> ConfigError {
    match err {
        RuleError::InvalidParameter { field, reason } => invalid(field, reason),
        RuleError::UnknownRule(kind) => invalid("rule.kind", format!("`{kind}` is not a known rule")),
        RuleError::Params(msg) => invalid(format!("rule.{}", quoted_name(&msg).unwrap_or("params")), msg),
        other => invalid("rule", other.to_string()),
    }
}

pub fn parse_config_str(text: &str) -> Result<ExperimentConfig, ConfigError> {
    let value: Value = serde_json::from_str(text).map_err(|e| ConfigError::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    from_value(value)
}

pub fn parse_config(path: &Path) -> Result<ExperimentConfig, ConfigError> {
    let text = fs::read_to_string(path).map_err(|e| ConfigError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    parse_config_str(&text)
}

pub fn from_value(value: Value) -> Result<ExperimentConfig, ConfigError> {
    let raw: RawConfig = serde_json::from_value(value).map_err(|e| {
        let msg = e.to_string();
        invalid(quoted_name(&msg).unwrap_or("config").to_string(), msg)
    })?;

    let Value::Object(mut rule_obj) = raw.rule else {
        return Err(invalid("rule", "must be an object with a `kind`"));
    };
    let kind = match rule_obj.remove("kind") {
        Some(Value::String(k)) => k,
        _ => return Err(invalid("rule.kind", "must be a string")),
    };
    let spec = RuleSpec { kind, params: rule_obj };
    let rule = spec.build(&RuleRegistry::builtin()).map_err(rule_error)?;
    let k = rule.arms();

    if raw.n < 10 {
        return Err(invalid("n", "must be at least 10"));
    }
    if raw.replicates < 2 {
        return Err(invalid("replicates", "must be at least 2"));
    }
    let y0 = raw.y0.unwrap_or_else(|| vec![1.0; k]);
    if y0.len() != k {
        return Err(invalid("y0", format!("has {} entries, the rule has {k} arms", y0.len())));
    }
    if y0.iter().any(|y| !(y.is_finite() && *y >= 0.0)) || !(y0.iter().sum::<f64>() > 0.0) {
        return Err(invalid("y0", "must be finite, nonnegative and not all zero"));
    }
    let checkpoints = raw.checkpoints.unwrap_or_else(|| decade_checkpoints(raw.n));
    if checkpoints.is_empty()
        || checkpoints.windows(2).any(|w| w[0] >= w[1])
        || checkpoints[0] == 0
        || *checkpoints.last().expect("nonempty") > raw.n
    {
        return Err(invalid("checkpoints", format!("must be strictly increasing within [1, {}]", raw.n)));
    }
    let targets = raw.targets.unwrap_or_else(|| Target::ALL.to_vec());
    if targets.is_empty() {
        return Err(invalid("targets", "must name at least one of a, y, n"));
    }
    if targets.iter().enumerate().any(|(i, t)| targets[..i].contains(t)) {
        return Err(invalid("targets", "has duplicates"));
    }
    if let Some(kappa) = raw.kappa {
        if !kappa.is_finite() {
            return Err(invalid("kappa", "must be finite"));
        }
    }
    let t = raw.tolerances;
    for (name, x) in [
        ("covariance_rel", t.covariance_rel),
        ("critical_rel", t.critical_rel),
        ("ks_p_min", t.ks_p_min),
        ("absolute", t.absolute),
    ] {
        if !(x.is_finite() && x >= 0.0) {
            return Err(invalid(format!("tolerances.{name}"), "must be finite and nonnegative"));
        }
    }
    if !(t.consistency_fraction > 0.0 && t.consistency_fraction <= 1.0) {
        return Err(invalid("tolerances.consistency_fraction", "out of (0,1]"));
    }

    Ok(ExperimentConfig {
        rule: spec,
        y0,
        n: raw.n,
        replicates: raw.replicates,
        checkpoints,
        seed: raw.seed,
        targets,
        kappa: raw.kappa,
        tolerances: t,
    })
}

/// Fully expanded config text; `parse_config_str(&emit(c)) == c`.
pub fn emit(cfg: &ExperimentConfig) -> String {
    let mut s = serde_json::to_string_pretty(cfg).expect("config serializes");
    s.push('\n');
    s
}

/// Compact JSON with object keys sorted at every level.
pub fn canonical_json(value: &Value) -> String {
    fn write(v: &Value, out: &mut String) {
        match v {
            Value::Object(m) => {
                let mut keys: Vec<&String> = m.keys().collect();
                keys.sort();
                out.push('{');
                for (i, k) in keys.into_iter().enumerate() {
                    if i > 0 {
                        out.push(',');
                    }
                    out.push_str(&Value::String(k.clone()).to_string());
                    out.push(':');
                    write(&m[k], out);
                }
                out.push('}');
            }
            Value::Array(a) => {
                out.push('[');
                for (i, x) in a.iter().enumerate() {
                    if i > 0 {
                        out.push(',');
                    }
                    write(x, out);
                }
                out.push(']');
            }
            other => out.push_str(&other.to_string()),
        }
    }
    let mut out = String::new();
    write(value, &mut out);
    out
}

/// SHA-256 of the canonical form of a JSON document.
pub fn digest_json(text: &str) -> Result<String, ConfigError> {
    let value: Value = serde_json::from_str(text).map_err(|e| ConfigError::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    Ok(hex::encode(Sha256::digest(canonical_json(&value).as_bytes())))
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{"rule": {"kind": "rpw", "p1": 0.7, "p2": 0.4}, "n": 10000, "replicates": 1000, "seed": 42}"#;

    #[test]
    fn minimal_config_gets_defaults() {
        let cfg = parse_config_str(MINIMAL).unwrap();
        assert_eq!(cfg.y0, vec![1.0, 1.0]);
        assert_eq!(cfg.checkpoints, vec![10, 100, 1000, 10000]);
        assert_eq!(cfg.targets, Target::ALL.to_vec());
        assert_eq!(cfg.tolerances, Tolerances::default());
        assert_eq!(cfg.seed, 42);
    }

    #[test]
    fn decade_grid_ends_at_horizon() {
        assert_eq!(decade_checkpoints(2500), vec![10, 100, 1000, 2500]);
        assert_eq!(decade_checkpoints(10), vec![10]);
    }

    #[test]
    fn rule_parameter_errors_name_the_field() {
        let text = MINIMAL.replace("0.7", "1.2");
        let err = parse_config_str(&text).unwrap_err();
        assert_eq!(err.to_string(), "p1 out of (0,1)");
    }

    #[test]
    fn unknown_keys_rejected() {
        let text = MINIMAL.replace("\"seed\"", "\"sede\"");
        match parse_config_str(&text).unwrap_err() {
            ConfigError::Validation { field, .. } => assert_eq!(field, "sede"),
            e => panic!("{e}"),
        }
        let text = MINIMAL.replace("\"p2\": 0.4", "\"p2\": 0.4, \"p3\": 1");
        match parse_config_str(&text).unwrap_err() {
            ConfigError::Validation { field, .. } => assert_eq!(field, "rule.p3"),
            e => panic!("{e}"),
        }
    }

    #[test]
    fn syntax_errors_carry_position() {
        let err = parse_config_str("{\n  \"n\": 10,\n  \"rule\": }").unwrap_err();
        assert!(matches!(err, ConfigError::Parse { line: 3, column: 11, .. }), "{err:?}");
    }

    #[test]
    fn bai_hu_shen_config() {
        let cfg = parse_config_str(r#"{"rule": {"kind": "bai_hu_shen", "p": [0.6, 0.5, 0.4]}, "n": 1000, "replicates": 10}"#)
            .unwrap();
        let drift = cfg.build_rule().unwrap().drift_class().unwrap();
        assert_eq!(drift.gamma, 0.25);
        assert_eq!(cfg.y0.len(), 3);
    }

    #[test]
    fn structural_validation() {
        let cases = [
            (r#""n": 5"#, "n"),
            (r#""replicates": 1"#, "replicates"),
            (r#""y0": [1, 2, 3]"#, "y0"),
            (r#""checkpoints": [100, 10]"#, "checkpoints"),
            (r#""checkpoints": [20000]"#, "checkpoints"),
            (r#""targets": ["n", "n"]"#, "targets"),
        ];
        for (patch, field) in cases {
            let key = patch.split(':').next().unwrap();
            let base: Value = serde_json::from_str(MINIMAL).unwrap();
            let mut obj = base.as_object().unwrap().clone();
            let extra: Value = serde_json::from_str(&format!("{{{patch}}}")).unwrap();
            for (k, v) in extra.as_object().unwrap() {
                obj.insert(k.clone(), v.clone());
            }
            match from_value(Value::Object(obj)).unwrap_err() {
                ConfigError::Validation { field: f, .. } => assert_eq!(f, field, "{key}"),
                e => panic!("{e}"),
            }
        }
    }

    #[test]
    fn digest_ignores_key_order_and_whitespace() {
        let a = digest_json(MINIMAL).unwrap();
        let b = digest_json(r#"{"seed":42,"replicates":1000,"n":10000,"rule":{"p2":0.4,"kind":"rpw","p1":0.7}}"#).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, digest_json(&MINIMAL.replace("42", "43")).unwrap());
    }

    #[test]
    fn emitted_config_round_trips() {
        let cfg = parse_config_str(MINIMAL).unwrap();
        assert_eq!(parse_config_str(&emit(&cfg)).unwrap(), cfg);
    }
}
