use nalgebra::{DMatrix, DVector};
use num_bigint::BigInt;
use num_complex::Complex64;
use num_rational::BigRational;
use num_traits::{ToPrimitive, Zero};
use proptest::prelude::*;

use urnlab_core::asymptotics::{analyze, NULL_TOL};
use urnlab_core::config::{emit, parse_config_str};
use urnlab_core::montecarlo::{
    covariance_claim, deviations_at, run_replicates, verify, EmpiricalMoments, ExperimentConfig, RuleSpec, Target,
    Tolerances,
};
use urnlab_core::rules::{CustomTabulated, DriftDeclaration, PlayTheWinner};
use urnlab_core::spectral::{spectral_decompose, validate_generating_matrix};

fn stochastic_row(raw: &[f64]) -> Vec<f64> {
    let s: f64 = raw.iter().sum();
    raw.iter().map(|x| x / s).collect()
}

prop_compose! {
    fn positive_matrix(k: usize)(raw in prop::collection::vec(0.05f64..1.0, k * k)) -> DMatrix<f64> {
        let rows: Vec<Vec<f64>> = raw.chunks(k).map(stochastic_row).collect();
        DMatrix::from_fn(k, k, |i, j| rows[i][j])
    }
}

prop_compose! {
    /// Each arm adds one of two random unit-sum rows.
    fn two_outcome_rule(k: usize)(
        rows in prop::collection::vec(prop::collection::vec(0.0f64..1.0, k), 2 * k),
        probs in prop::collection::vec(0.1f64..0.9, k),
    ) -> Option<CustomTabulated> {
        let laws: Vec<Vec<(f64, Vec<f64>)>> = (0..k)
            .map(|q| vec![
                (probs[q], stochastic_row(&rows[2 * q].iter().map(|x| x + 0.05).collect::<Vec<_>>())),
                (1.0 - probs[q], stochastic_row(&rows[2 * q + 1].iter().map(|x| x + 0.05).collect::<Vec<_>>())),
            ])
            .collect();
        CustomTabulated::new(laws, false).ok()?.with_drift(DriftDeclaration::Homogeneous).ok()
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 200, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn eigen_identities(h in (2usize..=5).prop_flat_map(positive_matrix)) {
        let k = h.nrows();
        let g = validate_generating_matrix(&h, false).unwrap();
        let s = spectral_decompose(&g).unwrap();
        let vh = s.v.transpose() * g.entries();
        prop_assert!((vh - s.v.transpose()).amax() < 1e-10);
        prop_assert!((s.v.sum() - 1.0).abs() < 1e-10);
        prop_assert!(s.v.iter().all(|&x| x > 0.0));
        if let Some(basis) = &s.basis {
            let hc = g.entries().map(|x| Complex64::new(x, 0.0));
            prop_assert!(basis.column(0).iter().all(|z| (z - Complex64::new(1.0, 0.0)).norm() < 1e-12));
            for (j, lambda) in s.eigenvalues.iter().enumerate() {
                let t = basis.column(j + 1);
                let scale = t.iter().map(|z| z.norm()).fold(0.0, f64::max);
                prop_assert!((&hc * &t - t.map(|z| z * lambda)).iter().all(|z| z.norm() < 1e-10 * scale.max(1.0)));
            }
            let id = &basis.t * &basis.t_inv;
            prop_assert!((id - DMatrix::<Complex64>::identity(k, k)).iter().all(|z| z.norm() < 1e-10 * s.condition_number.max(1.0)));
            // the first row of T^-1 is v
            for j in 0..k {
                prop_assert!((basis.t_inv[(0, j)] - Complex64::new(s.v[j], 0.0)).norm() < 1e-10 * s.condition_number.max(1.0));
            }
        }
    }

    #[test]
    fn sigma_n_annihilates_ones(rule in two_outcome_rule(3)) {
        let rule = match rule {
            Some(r) => r,
            None => return Ok(()),
        };
        let a = analyze(&rule).unwrap();
        prop_assume!(a.sigma_n.is_some());
        let sn = a.sigma_n.unwrap();
        let sy = a.sigma_y.unwrap();
        let ones = DVector::from_element(3, 1.0);
        prop_assert!((&sn * &ones).amax() < NULL_TOL);
        prop_assert!((&sn - sn.transpose()).amax() < 1e-12);
        prop_assert!(sn.clone().symmetric_eigen().eigenvalues.min() > -1e-9);
        prop_assert!(sy.clone().symmetric_eigen().eigenvalues.min() > -1e-9);
        // Y's total is deterministic for these unit-sum rules
        prop_assert!((&sy * &ones).amax() < NULL_TOL);
    }

    #[test]
    fn two_pass_moments_match_exact_rationals(
        data in prop::collection::vec(prop::collection::vec(-4096i64..4096, 3), 2..60),
        shift in -1.0e6f64..1.0e6,
    ) {
        // dyadic values with a large common offset stress cancellation
        let samples: Vec<Vec<f64>> = data
            .iter()
            .map(|r| r.iter().map(|&x| shift.round() + x as f64 / 64.0).collect())
            .collect();
        let m = EmpiricalMoments::from_samples(Target::Y, 1, &samples).unwrap();
        let exact: Vec<Vec<BigRational>> = data
            .iter()
            .map(|r| {
                r.iter()
                    .map(|&x| {
                        BigRational::from_integer(BigInt::from(shift.round() as i64))
                            + BigRational::new(BigInt::from(x), BigInt::from(64))
                    })
                    .collect()
            })
            .collect();
        let n = BigRational::from_integer(BigInt::from(exact.len()));
        let mean: Vec<BigRational> = (0..3)
            .map(|j| exact.iter().fold(BigRational::zero(), |acc, r| acc + &r[j]) / &n)
            .collect();
        let rel = |got: f64, want: &BigRational| {
            let w = want.to_f64().unwrap();
            if w == 0.0 { got.abs() } else { ((got - w) / w).abs() }
        };
        for j in 0..3 {
            prop_assert!(rel(m.mean[j], &mean[j]) < 1e-10);
            for i in 0..3 {
                let c = exact.iter().fold(BigRational::zero(), |acc, r| {
                    acc + (&r[i] - &mean[i]) * (&r[j] - &mean[j])
                }) / (&n - BigRational::from_integer(BigInt::from(1)));
                let scale = (m.covariance[(i, i)] * m.covariance[(j, j)]).sqrt();
                let err = (m.covariance[(i, j)] - c.to_f64().unwrap()).abs();
                prop_assert!(err <= 1e-10 * scale.max(1e-300), "({i},{j}) {err}");
            }
        }
    }
}

fn rpw_config(p1: f64, p2: f64, n: u64, replicates: u64, checkpoints: Vec<u64>, seed: u64) -> ExperimentConfig {
    let mut params = serde_json::Map::new();
    params.insert("p1".into(), p1.into());
    params.insert("p2".into(), p2.into());
    ExperimentConfig {
        rule: RuleSpec { kind: "rpw".into(), params },
        y0: vec![1.0, 1.0],
        n,
        replicates,
        checkpoints,
        seed,
        targets: Target::ALL.to_vec(),
        kappa: None,
        tolerances: Tolerances::default(),
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn config_round_trips(
        p1 in 0.01f64..0.99,
        p2 in 0.01f64..0.99,
        n in 10u64..1_000_000,
        replicates in 2u64..100_000,
        seed in any::<u64>(),
        kappa in prop::option::of(0.5f64..2.0),
        scale in 0.01f64..10.0,
        y0 in prop::collection::vec(0.0f64..50.0, 2),
    ) {
        let mut cfg = rpw_config(p1, p2, n, replicates, urnlab_core::config::decade_checkpoints(n), seed);
        cfg.kappa = kappa;
        cfg.tolerances = cfg.tolerances.scaled(scale);
        cfg.y0 = vec![y0[0] + 0.5, y0[1]];
        let back = parse_config_str(&emit(&cfg)).unwrap();
        prop_assert_eq!(back, cfg);
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 6, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn verification_report_is_byte_identical_across_pools(seed in any::<u64>(), threads in 2usize..5) {
        let cfg = rpw_config(0.7, 0.4, 1000, 40, vec![10, 100, 1000], seed);
        let one = verify(&cfg, Some(1)).unwrap();
        let many = verify(&cfg, Some(threads)).unwrap();
        prop_assert_eq!(
            serde_json::to_vec(&one.report).unwrap(),
            serde_json::to_vec(&many.report).unwrap()
        );
    }

    #[test]
    fn n_deviation_covariance_rows_sum_to_zero(seed in any::<u64>()) {
        let rule = urnlab_core::rules::RuleRegistry::builtin()
            .build("wei", &serde_json::json!({"p": [0.6, 0.5, 0.4]}))
            .unwrap();
        let a = analyze(rule.as_ref()).unwrap();
        let run = run_replicates(rule.as_ref(), &[1.0; 3], 500, &[500], 30, seed, Some(1)).unwrap();
        let samples = deviations_at(&run, 500, Target::N, &a.v, &a.regime, 3.0).unwrap();
        let m = EmpiricalMoments::from_samples(Target::N, 500, &samples).unwrap();
        let scale = m.covariance.amax();
        prop_assert!((m.covariance * DVector::from_element(3, 1.0)).amax() < 1e-12 * scale.max(1.0));
    }
}

/// Relative error of the empirical Sigma_N at `n` shrinks from 1e3 to 1e5
/// for most seeds.
#[test]
fn variance_error_shrinks_with_n() {
    let rule = PlayTheWinner::rpw(0.8, 0.6).unwrap();
    let a = analyze(&rule).unwrap();
    let theory = a.sigma_n.clone().unwrap();
    let seeds = 10u64;
    let mut improved = 0;
    for seed in 0..seeds {
        let run = run_replicates(&rule, &[1.0, 1.0], 100_000, &[1_000, 100_000], 400, 500 + seed, None).unwrap();
        let rel_at = |n: u64| {
            let s = deviations_at(&run, n, Target::N, &a.v, &a.regime, 2.0).unwrap();
            let m = EmpiricalMoments::from_samples(Target::N, n, &s).unwrap();
            covariance_claim("N", &m, &theory, 1.0, "covariance_rel", 0.0).relative_error.unwrap()
        };
        let (early, late) = (rel_at(1_000), rel_at(100_000));
        println!("seed {seed}: relative error {early:.4} at 1e3, {late:.4} at 1e5");
        if late <= early {
            improved += 1;
        }
    }
    assert!(improved as f64 >= 0.9 * seeds as f64, "{improved} of {seeds} seeds improved");
}
