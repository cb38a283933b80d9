//! Sampled addition rows against each catalog rule's declared moments.

use nalgebra::DMatrix;
use urnlab_core::rules::{AdditionRule, RuleRegistry};
use urnlab_core::urn::{History, RandomStream};

const ROWS: usize = 100_000;

struct Fixture {
    draws: Vec<u64>,
    successes: Vec<u64>,
    step: u64,
}

/// A late-stage history. Success ratios `(S+1)/(N+1)` equal the
/// success probabilities exactly when the rule takes a `p` vector, so the
/// conditional covariance coincides with the limit one.
fn fixture(rule: &dyn AdditionRule) -> Fixture {
    let k = rule.arms();
    let p: Vec<f64> = match rule.params().get("p") {
        Some(serde_json::Value::Array(a)) => a.iter().map(|x| x.as_f64().unwrap()).collect(),
        _ => vec![0.5; k],
    };
    let draws = vec![999_999u64; k];
    let successes: Vec<u64> = p.iter().map(|pk| (pk * 1e6).round() as u64 - 1).collect();
    let step = draws.iter().sum::<u64>() * 1000 + 1;
    Fixture { draws, successes, step }
}

struct RowStats {
    mean: Vec<f64>,
    mean_se: Vec<f64>,
    cov: DMatrix<f64>,
    cov_se: DMatrix<f64>,
    max_sum_error: f64,
}

fn sample_stats(rule: &dyn AdditionRule, arm: usize, fx: &Fixture, seed: u64) -> RowStats {
    let k = rule.arms();
    let history = History { step: fx.step, draws: &fx.draws, successes: &fx.successes };
    let mut rng = RandomStream::new(seed, arm as u64);
    let mut rows = Vec::with_capacity(ROWS);
    let mut row = vec![0.0; k];
    let mut max_sum_error = 0.0f64;
    for _ in 0..ROWS {
        rule.sample_row(arm, &history, &mut rng, &mut row);
        max_sum_error = max_sum_error.max((row.iter().sum::<f64>() - 1.0).abs());
        rows.push(row.clone());
    }
    let m = ROWS as f64;
    let mean: Vec<f64> = (0..k).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / m).collect();
    let mut cov = DMatrix::zeros(k, k);
    let mut cov_se = DMatrix::zeros(k, k);
    let mut mean_se = vec![0.0; k];
    for i in 0..k {
        for j in 0..k {
            let prods: Vec<f64> = rows.iter().map(|r| (r[i] - mean[i]) * (r[j] - mean[j])).collect();
            let c = prods.iter().sum::<f64>() / (m - 1.0);
            let v = prods.iter().map(|x| (x - c) * (x - c)).sum::<f64>() / (m - 1.0);
            cov[(i, j)] = c;
            cov_se[(i, j)] = (v / m).sqrt();
        }
        mean_se[i] = (cov[(i, i)] / m).sqrt();
    }
    RowStats { mean, mean_se, cov, cov_se, max_sum_error }
}

/// `|x - target| <= z * se`, with an exact match required when the
/// sample shows no spread.
fn within(x: f64, target: f64, se: f64, z: f64) -> bool {
    if se < 1e-14 {
        (x - target).abs() < 1e-12
    } else {
        (x - target).abs() <= z * se
    }
}

#[test]
fn every_catalog_rule_matches_its_moments() {
    let registry = RuleRegistry::builtin();
    let mut checked = 0;
    for (idx, entry) in registry.entries().enumerate() {
        let rule = registry.build(entry.name, &(entry.example)()).unwrap();
        let fx = fixture(rule.as_ref());
        let history = History { step: fx.step, draws: &fx.draws, successes: &fx.successes };
        let h = rule.conditional_generating_matrix(&history);
        let spec = rule.limit_spec().unwrap();
        let c1 = spec.h.row_sum();
        for arm in 0..rule.arms() {
            let s = sample_stats(rule.as_ref(), arm, &fx, 1000 + idx as u64);
            for j in 0..rule.arms() {
                // conditional means are normalized to unit row sum
                assert!(
                    within(s.mean[j] / c1, h[(arm, j)], s.mean_se[j] / c1, 4.0),
                    "{} arm {arm} col {j}: mean {} vs {}",
                    entry.name,
                    s.mean[j] / c1,
                    h[(arm, j)]
                );
                for i in 0..rule.arms() {
                    let target = spec.d[arm][(i, j)] * c1 * c1;
                    // plus the O(1/m) bias of centring at the sample mean
                    let se = s.cov_se[(i, j)] + 5.0 * (s.cov[(i, i)] * s.cov[(j, j)]).sqrt() / ROWS as f64;
                    assert!(
                        within(s.cov[(i, j)], target, se, 5.0),
                        "{} arm {arm} cov ({i},{j}): {} vs {target}",
                        entry.name,
                        s.cov[(i, j)]
                    );
                }
            }
            if rule.epu_exact() {
                assert!(s.max_sum_error <= f64::EPSILON, "{} arm {arm}: sum error {}", entry.name, s.max_sum_error);
            }
            checked += 1;
        }
    }
    assert!(checked >= 16, "only {checked} arms checked");
}

#[test]
fn epu_rules_add_exactly_one_ball_per_draw() {
    let registry = RuleRegistry::builtin();
    for name in ["rpw", "wei", "bai_hu_shen", "friedman"] {
        let entry = registry.get(name).unwrap();
        let rule = registry.build(name, &(entry.example)()).unwrap();
        assert!(rule.epu_exact(), "{name}");
        let fx = fixture(rule.as_ref());
        let history = History { step: 5, draws: &fx.draws, successes: &fx.successes };
        let mut rng = RandomStream::new(77, 0);
        let mut row = vec![0.0; rule.arms()];
        for arm in 0..rule.arms() {
            for _ in 0..10_000 {
                rule.sample_row(arm, &history, &mut rng, &mut row);
                assert_eq!(row.iter().sum::<f64>(), 1.0, "{name}");
            }
        }
    }
}
