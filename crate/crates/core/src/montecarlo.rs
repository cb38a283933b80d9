//! Replicated trials, empirical moments of scaled deviations, and the checks
//! that compare them with the analytic limits.
//!
//! Replicate `r` always draws from `RandomStream::new(seed, r)` and results
//! are collected in replicate order, so every output is independent of the
//! thread count.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

use crate::asymptotics::{analyze, AsymptoticError, AsymptoticReport};
use crate::matrix_json;
use crate::rules::{AdditionRule, RuleError, RuleRegistry};
use crate::spectral::{RegimeClass, RegimeKind};
use crate::urn::{simulate_trial, Checkpoint, RandomStream, Trajectory};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Target {
    /// Total ball count `a_n`.
    A,
    /// Composition `Y_n`.
    Y,
    /// Allocation counts `N_n`.
    N,
}

impl Target {
    pub const ALL: [Target; 3] = [Target::A, Target::Y, Target::N];

    pub fn label(self) -> &'static str {
        match self {
            Target::A => "a",
            Target::Y => "Y",
            Target::N => "N",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Tolerances {
    /// Relative covariance error, sub-critical regime.
    pub covariance_rel: f64,
    /// Relative covariance error, critical regime.
    pub critical_rel: f64,
    /// Smallest passing Kolmogorov-Smirnov p-value.
    pub ks_p_min: f64,
    /// Quantile level of the consistency envelope.
    pub consistency_fraction: f64,
    /// Absolute bound when the theoretical covariance vanishes.
    pub absolute: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            covariance_rel: 0.05,
            critical_rel: 0.15,
            ks_p_min: 0.001,
            consistency_fraction: 0.95,
            absolute: 1e-6,
        }
    }
}

impl Tolerances {
    /// Scales the error bounds; pass thresholds on p-values and fractions
    /// are left alone.
    pub fn scaled(self, factor: f64) -> Self {
        Self {
            covariance_rel: self.covariance_rel * factor,
            critical_rel: self.critical_rel * factor,
            absolute: self.absolute * factor,
            ..self
        }
    }
}

/// Rule kind plus its parameter object, stored flat as `{"kind": ..., params}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleSpec {
    pub kind: String,
    #[serde(flatten)]
    pub params: serde_json::Map<String, serde_json::Value>,
}

impl RuleSpec {
    pub fn build(&self, registry: &RuleRegistry) -> Result<Arc<dyn AdditionRule>, RuleError> {
        registry.build(&self.kind, &serde_json::Value::Object(self.params.clone()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub rule: RuleSpec,
    pub y0: Vec<f64>,
    pub n: u64,
    pub replicates: u64,
    pub checkpoints: Vec<u64>,
    pub seed: u64,
    pub targets: Vec<Target>,
    /// Exponent of the consistency check; `max(tau, 1/2) + 0.1` when absent.
    pub kappa: Option<f64>,
    pub tolerances: Tolerances,
}

impl ExperimentConfig {
    pub fn build_rule(&self) -> Result<Arc<dyn AdditionRule>, RuleError> {
        self.rule.build(&RuleRegistry::builtin())
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MonteCarloError {
    #[error("consistency needs two increasing recorded checkpoints, got {0:?}")]
    InsufficientCheckpoints(Vec<u64>),
    #[error("kappa = {kappa} must exceed max(tau, 1/2) = {bound}")]
    KappaTooSmall { kappa: f64, bound: f64 },
    #[error("checkpoint {0} was not recorded")]
    MissingCheckpoint(u64),
    #[error("need at least two completed replicates, got {0}")]
    TooFewReplicates(usize),
    #[error("thread pool: {0}")]
    ThreadPool(String),
    #[error(transparent)]
    Asymptotic(#[from] AsymptoticError),
    #[error(transparent)]
    Rule(#[from] RuleError),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplicateFailure {
    pub replicate: u64,
    pub step: u64,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    /// Completed replicates in ascending replicate order.
    pub trajectories: Vec<(u64, Trajectory)>,
    pub failures: Vec<ReplicateFailure>,
}

/// Runs `replicates` independent trials on a pool of `threads` workers
/// (`None`: rayon's default).
pub fn run_replicates(
    rule: &dyn AdditionRule,
    y0: &[f64],
    n: u64,
    checkpoints: &[u64],
    replicates: u64,
    seed: u64,
    threads: Option<usize>,
) -> Result<RunOutput, MonteCarloError> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(t) = threads {
        builder = builder.num_threads(t);
    }
    let pool = builder.build().map_err(|e| MonteCarloError::ThreadPool(e.to_string()))?;
    let results: Vec<_> = pool.install(|| {
        (0..replicates)
            .into_par_iter()
            .map(|r| {
                let mut rng = RandomStream::new(seed, r);
                (r, simulate_trial(rule, y0, n, checkpoints, &mut rng))
            })
            .collect()
    });
    let mut out = RunOutput { trajectories: Vec::with_capacity(results.len()), failures: Vec::new() };
    for (r, res) in results {
        match res {
            Ok(t) => out.trajectories.push((r, t)),
            Err(e) => out.failures.push(ReplicateFailure { replicate: r, step: e.step, error: e.source.to_string() }),
        }
    }
    Ok(out)
}

/// `(statistic - n center) / V_n`. The total ball count is centered at
/// `a_0 + n` and scaled by `sqrt(n)`.
pub fn scaled_deviation(cp: &Checkpoint, target: Target, v: &DVector<f64>, regime: &RegimeClass, a0: f64) -> Vec<f64> {
    let n = cp.n as f64;
    match target {
        Target::A => vec![(cp.total - a0 - n) / n.sqrt()],
        Target::Y => {
            let vn = regime.scaling(n);
            cp.y.iter().zip(v.iter()).map(|(y, vk)| (y - n * vk) / vn).collect()
        }
        Target::N => {
            let vn = regime.scaling(n);
            cp.draws.iter().zip(v.iter()).map(|(&d, vk)| (d as f64 - n * vk) / vn).collect()
        }
    }
}

/// Scaled deviations of every completed replicate at checkpoint `n`.
pub fn deviations_at(
    run: &RunOutput,
    n: u64,
    target: Target,
    v: &DVector<f64>,
    regime: &RegimeClass,
    a0: f64,
) -> Result<Vec<Vec<f64>>, MonteCarloError> {
    run.trajectories
        .iter()
        .map(|(_, t)| {
            t.at(n)
                .map(|cp| scaled_deviation(cp, target, v, regime, a0))
                .ok_or(MonteCarloError::MissingCheckpoint(n))
        })
        .collect()
}

/// Mean and covariance across replicates, with standard errors.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EmpiricalMoments {
    pub target: Target,
    pub n: u64,
    pub replicates: usize,
    pub mean: Vec<f64>,
    pub mean_se: Vec<f64>,
    #[serde(serialize_with = "matrix_json::rows")]
    pub covariance: DMatrix<f64>,
    /// Delta-method standard error of each covariance entry.
    #[serde(serialize_with = "matrix_json::rows")]
    pub covariance_se: DMatrix<f64>,
}

impl EmpiricalMoments {
    /// Two passes: the mean first, then centered products.
    pub fn from_samples(target: Target, n: u64, samples: &[Vec<f64>]) -> Result<Self, MonteCarloError> {
        let m = samples.len();
        if m < 2 {
            return Err(MonteCarloError::TooFewReplicates(m));
        }
        let k = samples[0].len();
        let mf = m as f64;
        let mut mean = vec![0.0; k];
        for x in samples {
            for (acc, xi) in mean.iter_mut().zip(x) {
                *acc += xi;
            }
        }
        mean.iter_mut().for_each(|x| *x /= mf);

        let mut cov = DMatrix::<f64>::zeros(k, k);
        let mut fourth = DMatrix::<f64>::zeros(k, k);
        let mut dev = vec![0.0; k];
        for x in samples {
            for i in 0..k {
                dev[i] = x[i] - mean[i];
            }
            for i in 0..k {
                for j in 0..k {
                    let p = dev[i] * dev[j];
                    cov[(i, j)] += p;
                    fourth[(i, j)] += p * p;
                }
            }
        }
        let biased = &cov / mf;
        let covariance = cov / (mf - 1.0);
        let covariance_se = DMatrix::from_fn(k, k, |i, j| {
            let var = fourth[(i, j)] / mf - biased[(i, j)] * biased[(i, j)];
            (var.max(0.0) / mf).sqrt()
        });
        let mean_se = (0..k).map(|i| (covariance[(i, i)].max(0.0) / mf).sqrt()).collect();
        Ok(Self { target, n, replicates: m, mean, mean_se, covariance, covariance_se })
    }
}

/// One verified statement.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Claim {
    pub name: String,
    pub statistic: String,
    pub n: u64,
    pub theoretical: f64,
    pub empirical: f64,
    pub standard_error: Option<f64>,
    pub relative_error: Option<f64>,
    pub tolerance: f64,
    /// Field of `Tolerances` the verdict is measured against.
    pub tolerance_name: String,
    pub p_value: Option<f64>,
    pub passed: bool,
    /// Reported but excluded from the overall verdict.
    pub informational: bool,
    pub note: Option<String>,
}

/// `n^-kappa |N_n - n v|_inf` for one checkpoint.
pub fn consistency_statistic(cp: &Checkpoint, v: &DVector<f64>, kappa: f64) -> f64 {
    let n = cp.n as f64;
    let dev = cp
        .draws
        .iter()
        .zip(v.iter())
        .fold(0.0f64, |acc, (&d, vk)| acc.max((d as f64 - n * vk).abs()));
    dev * n.powf(-kappa)
}

pub fn statistics_at(run: &RunOutput, n: u64, v: &DVector<f64>, kappa: f64) -> Result<Vec<f64>, MonteCarloError> {
    run.trajectories
        .iter()
        .map(|(_, t)| {
            t.at(n)
                .map(|cp| consistency_statistic(cp, v, kappa))
                .ok_or(MonteCarloError::MissingCheckpoint(n))
        })
        .collect()
}

/// Empirical `q`-quantile (nearest rank).
pub fn quantile(values: &[f64], q: f64) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = ((q * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    sorted[rank - 1]
}

/// Share of replicates whose own statistic is smaller at `to` than at `from`.
pub fn per_replicate_decrease_share(
    run: &RunOutput,
    v: &DVector<f64>,
    kappa: f64,
    from: u64,
    to: u64,
) -> Result<f64, MonteCarloError> {
    let a = statistics_at(run, from, v, kappa)?;
    let b = statistics_at(run, to, v, kappa)?;
    if a.is_empty() {
        return Err(MonteCarloError::TooFewReplicates(0));
    }
    Ok(a.iter().zip(&b).filter(|(x, y)| y < x).count() as f64 / a.len() as f64)
}

/// Envelope check of `n^-kappa |N_n - n v|_inf -> 0`: the `fraction`-quantile
/// across replicates must be smaller at `to` than at `from`.
pub fn consistency_check(
    run: &RunOutput,
    v: &DVector<f64>,
    tau: f64,
    kappa: f64,
    from: u64,
    to: u64,
    fraction: f64,
) -> Result<Claim, MonteCarloError> {
    let bound = tau.max(0.5);
    if !(kappa > bound) {
        return Err(MonteCarloError::KappaTooSmall { kappa, bound });
    }
    if to <= from {
        return Err(MonteCarloError::InsufficientCheckpoints(vec![from, to]));
    }
    let a = statistics_at(run, from, v, kappa)?;
    let b = statistics_at(run, to, v, kappa)?;
    if a.is_empty() {
        return Err(MonteCarloError::TooFewReplicates(0));
    }
    let (qa, qb) = (quantile(&a, fraction), quantile(&b, fraction));
    let share = per_replicate_decrease_share(run, v, kappa, from, to)?;
    Ok(Claim {
        name: format!("consistency N, kappa = {kappa}"),
        statistic: format!("{fraction}-quantile over replicates of n^-kappa |N_n - n v|_inf at {to}, against {from}"),
        n: to,
        theoretical: qa,
        empirical: qb,
        standard_error: None,
        relative_error: None,
        tolerance: fraction,
        tolerance_name: "consistency_fraction".into(),
        p_value: None,
        passed: qb < qa,
        informational: false,
        note: Some(format!(
            "quantile {qa:.6e} at {from}, {qb:.6e} at {to}; {:.1}% of replicates decrease individually",
            100.0 * share
        )),
    })
}

fn frobenius(m: &DMatrix<f64>) -> f64 {
    m.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Covariance agreement between empirical moments and the limit `theory`:
/// relative error of the largest-magnitude theoretical entry, and the
/// Frobenius relative error; both must be within `tol`. A vanishing theory
/// is compared absolutely against the raw second moment.
pub fn covariance_claim(
    label: &str,
    moments: &EmpiricalMoments,
    theory: &DMatrix<f64>,
    tol: f64,
    tol_name: &str,
    absolute: f64,
) -> Claim {
    let (mut bi, mut bj) = (0, 0);
    for i in 0..theory.nrows() {
        for j in 0..theory.ncols() {
            if theory[(i, j)].abs() > theory[(bi, bj)].abs() {
                (bi, bj) = (i, j);
            }
        }
    }
    let th = theory[(bi, bj)];
    let name = format!("covariance {label}");
    if th.abs() <= 1e-12 {
        let m = DVector::from_column_slice(&moments.mean);
        let second = &moments.covariance * ((moments.replicates as f64 - 1.0) / moments.replicates as f64) + &m * m.transpose();
        let worst = second.amax();
        return Claim {
            name,
            statistic: "largest raw second moment (theory vanishes)".into(),
            n: moments.n,
            theoretical: 0.0,
            empirical: worst,
            standard_error: None,
            relative_error: None,
            tolerance: absolute,
            tolerance_name: "absolute".into(),
            p_value: None,
            passed: worst <= absolute,
            informational: false,
            note: None,
        };
    }
    let emp = moments.covariance[(bi, bj)];
    let rel = (emp - th).abs() / th.abs();
    let frob = frobenius(&(&moments.covariance - theory)) / frobenius(theory);
    Claim {
        name,
        statistic: format!("entry ({bi},{bj}) of the scaled-deviation covariance"),
        n: moments.n,
        theoretical: th,
        empirical: emp,
        standard_error: Some(moments.covariance_se[(bi, bj)]),
        relative_error: Some(rel),
        tolerance: tol,
        tolerance_name: tol_name.into(),
        p_value: None,
        passed: rel <= tol && frob <= tol,
        informational: false,
        note: Some(format!("Frobenius relative error {frob:.6e}")),
    }
}

/// Kolmogorov distribution tail `P(K > x)`.
pub fn kolmogorov_tail(x: f64) -> f64 {
    // the alternating series is inaccurate near 0, where the tail is 1 to 1e-6
    if x < 0.27 {
        return 1.0;
    }
    let mut sum = 0.0;
    for j in 1..=100 {
        let jf = j as f64;
        let term = 2.0 * (-1.0f64).powi(j - 1) * (-2.0 * jf * jf * x * x).exp();
        sum += term;
        if term.abs() < 1e-16 {
            break;
        }
    }
    sum.clamp(0.0, 1.0)
}

/// One-sample KS test against the standard normal: `(D, p)`, with the
/// small-sample correction `(sqrt(m) + 0.12 + 0.11 / sqrt(m)) D`.
pub fn ks_normal(sample: &[f64]) -> (f64, f64) {
    let mut z = sample.to_vec();
    z.sort_by(f64::total_cmp);
    let m = z.len() as f64;
    let normal = Normal::standard();
    let d = z.iter().enumerate().fold(0.0f64, |acc, (i, &x)| {
        let f = normal.cdf(x);
        acc.max(f - i as f64 / m).max((i + 1) as f64 / m - f)
    });
    let sm = m.sqrt();
    (d, kolmogorov_tail((sm + 0.12 + 0.11 / sm) * d))
}

/// Leading eigenvector of `theory`, sign fixed so its largest entry is positive.
pub fn leading_direction(theory: &DMatrix<f64>) -> (DVector<f64>, f64) {
    let eig = theory.clone().symmetric_eigen();
    let top = eig.eigenvalues.imax();
    let mut u = eig.eigenvectors.column(top).into_owned();
    if u[u.iamax()] < 0.0 {
        u = -u;
    }
    (u, eig.eigenvalues[top])
}

/// Projects samples on the leading direction of `theory` and standardizes
/// them by their own mean and standard deviation.
pub fn standardized_leading_component(samples: &[Vec<f64>], theory: &DMatrix<f64>) -> Vec<f64> {
    let (u, _) = leading_direction(theory);
    let proj: Vec<f64> = samples.iter().map(|x| x.iter().zip(u.iter()).map(|(a, b)| a * b).sum()).collect();
    let m = proj.len() as f64;
    let mean = proj.iter().sum::<f64>() / m;
    let var = proj.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (m - 1.0);
    let sd = var.sqrt();
    proj.iter().map(|x| (x - mean) / sd).collect()
}

pub fn normality_claim(label: &str, n: u64, samples: &[Vec<f64>], theory: &DMatrix<f64>, p_min: f64) -> Claim {
    let z = standardized_leading_component(samples, theory);
    let (d, p) = ks_normal(&z);
    Claim {
        name: format!("normality {label}"),
        statistic: "KS distance of the standardized leading component from N(0,1)".into(),
        n,
        theoretical: 0.0,
        empirical: d,
        standard_error: None,
        relative_error: None,
        tolerance: p_min,
        tolerance_name: "ks_p_min".into(),
        p_value: Some(p),
        passed: p > p_min,
        informational: false,
        note: None,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerificationReport {
    pub rule: String,
    pub params: serde_json::Value,
    pub seed: u64,
    pub n: u64,
    pub replicates: u64,
    pub completed: usize,
    pub regime: RegimeClass,
    pub scaling: String,
    pub claims: Vec<Claim>,
    pub failures: Vec<ReplicateFailure>,
    pub notes: Vec<String>,
    pub all_passed: bool,
}

impl VerificationReport {
    pub fn failed_claims(&self) -> impl Iterator<Item = &Claim> {
        self.claims.iter().filter(|c| !c.passed && !c.informational)
    }
}

/// Everything `verify` produces.
#[derive(Debug, Clone)]
pub struct Verification {
    pub analysis: AsymptoticReport,
    pub run: RunOutput,
    /// Per target, per checkpoint.
    pub moments: Vec<EmpiricalMoments>,
    pub report: VerificationReport,
}

fn is_decade(n: u64) -> bool {
    let mut m = n;
    while m >= 10 && m % 10 == 0 {
        m /= 10;
    }
    m == 1 && n >= 10
}

/// The last two power-of-ten checkpoints, provided the grid spans at least
/// two decades.
pub fn consistency_pair(checkpoints: &[u64]) -> Option<(u64, u64)> {
    let (&first, &last) = (checkpoints.first()?, checkpoints.last()?);
    if first.saturating_mul(100) > last {
        return None;
    }
    let decades: Vec<u64> = checkpoints.iter().copied().filter(|&c| is_decade(c)).collect();
    match decades[..] {
        [.., a, b] => Some((a, b)),
        _ => None,
    }
}

pub fn theory_for(target: Target, analysis: &AsymptoticReport) -> Option<DMatrix<f64>> {
    match target {
        Target::A => Some(DMatrix::from_element(1, 1, analysis.sigma11)),
        Target::Y => analysis.sigma_y.clone(),
        Target::N => analysis.sigma_n.clone(),
    }
}

/// Moments of the scaled deviations, target-major then by checkpoint.
pub fn collect_moments(
    run: &RunOutput,
    targets: &[Target],
    checkpoints: &[u64],
    analysis: &AsymptoticReport,
    a0: f64,
) -> Result<Vec<EmpiricalMoments>, MonteCarloError> {
    let mut out = Vec::with_capacity(targets.len() * checkpoints.len());
    for &target in targets {
        for &c in checkpoints {
            let samples = deviations_at(run, c, target, &analysis.v, &analysis.regime, a0)?;
            out.push(EmpiricalMoments::from_samples(target, c, &samples)?);
        }
    }
    Ok(out)
}

/// Exponent used by the consistency check when the config omits one.
pub fn default_kappa(tau: f64) -> f64 {
    tau.max(0.5) + 0.1
}

/// Simulates `cfg` and checks every applicable claim. Limit theorems are
/// checked at the last checkpoint.
pub fn verify(cfg: &ExperimentConfig, threads: Option<usize>) -> Result<Verification, MonteCarloError> {
    let rule = cfg.build_rule()?;
    let analysis = analyze(rule.as_ref())?;
    let run = run_replicates(rule.as_ref(), &cfg.y0, cfg.n, &cfg.checkpoints, cfg.replicates, cfg.seed, threads)?;
    let regime = analysis.regime;
    let a0: f64 = cfg.y0.iter().sum();
    let tol = cfg.tolerances;
    let mut claims = Vec::new();
    let mut notes = analysis.notes.clone();

    if !run.failures.is_empty() {
        claims.push(Claim {
            name: "replicates completed".into(),
            statistic: "completed replicates".into(),
            n: cfg.n,
            theoretical: cfg.replicates as f64,
            empirical: run.trajectories.len() as f64,
            standard_error: None,
            relative_error: None,
            tolerance: 0.0,
            tolerance_name: "none".into(),
            p_value: None,
            passed: false,
            informational: false,
            note: Some(format!("{} replicates aborted", run.failures.len())),
        });
    }

    let moments = if run.trajectories.len() >= 2 {
        collect_moments(&run, &cfg.targets, &cfg.checkpoints, &analysis, a0)?
    } else {
        Vec::new()
    };

    let kappa = cfg.kappa.unwrap_or_else(|| default_kappa(analysis.tau));
    let horizon = *cfg.checkpoints.last().ok_or(MonteCarloError::InsufficientCheckpoints(Vec::new()))?;
    let limit_exists = analysis.drift.is_some_and(|d| d.summable);
    match consistency_pair(&cfg.checkpoints) {
        Some((from, to)) if limit_exists && !run.trajectories.is_empty() => {
            claims.push(consistency_check(
                &run,
                &analysis.v,
                analysis.tau,
                kappa,
                from,
                to,
                tol.consistency_fraction,
            )?);
        }
        Some(_) => notes.push("consistency check skipped: no convergent limit declared".into()),
        None => notes.push("consistency check skipped: checkpoints span less than two decades".into()),
    }

    let clt_regime = matches!(regime.kind, RegimeKind::SubCritical | RegimeKind::Critical);
    if clt_regime && limit_exists && run.trajectories.len() >= 2 {
        let (rel, rel_name) = match regime.kind {
            RegimeKind::Critical => (tol.critical_rel, "critical_rel"),
            _ => (tol.covariance_rel, "covariance_rel"),
        };
        for &target in &cfg.targets {
            // a_n always has the sqrt(n) scale; Y and N follow the regime
            let Some(theory) = theory_for(target, &analysis) else {
                notes.push(format!("no limit covariance for {}: CLT check skipped", target.label()));
                continue;
            };
            let m = moments
                .iter()
                .find(|m| m.target == target && m.n == horizon)
                .ok_or(MonteCarloError::MissingCheckpoint(horizon))?;
            let label = format!("{} ({})", target.label(), analysis.scaling);
            let mut claim = covariance_claim(&label, m, &theory, rel, rel_name, tol.absolute);
            if analysis.centering_approximation && target != Target::A {
                claim.informational = true;
                claim.note = Some("centering approximation".into());
            }
            let singular = claim.theoretical == 0.0;
            claims.push(claim);
            if !singular && target != Target::A {
                let samples = deviations_at(&run, horizon, target, &analysis.v, &regime, a0)?;
                let mut claim = normality_claim(&label, horizon, &samples, &theory, tol.ks_p_min);
                if analysis.centering_approximation {
                    claim.informational = true;
                    claim.note = Some("centering approximation".into());
                }
                claims.push(claim);
            } else if singular {
                notes.push(format!("{}: theoretical covariance vanishes, normality test skipped", target.label()));
            }
        }
    } else if !clt_regime {
        notes.push(format!("{} regime: only consistency is checked", regime.kind));
    }

    let all_passed = claims.iter().all(|c| c.passed || c.informational);
    let report = VerificationReport {
        rule: analysis.rule.clone(),
        params: analysis.params.clone(),
        seed: cfg.seed,
        n: cfg.n,
        replicates: cfg.replicates,
        completed: run.trajectories.len(),
        regime,
        scaling: analysis.scaling.clone(),
        claims,
        failures: run.failures.clone(),
        notes,
        all_passed,
    };
    Ok(Verification { analysis, run, moments, report })
}
