//! Limiting covariances of the urn composition `Y_n` and the allocation
//! counts `N_n`, assembled in eigen-coordinates of the limit generating
//! matrix and mapped back with `(T^-1)* . T^-1`.
//!
//! All eigen-coordinate entries conjugate the `i` (row) index, so `Sigma` and
//! `Sigma~` are Hermitian by construction.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::Serialize;
use thiserror::Error;

use crate::matrix_json;
use crate::rules::{AdditionRule, DriftClass, MomentSpec, RuleError};
use crate::spectral::{
    classify_exact_tau, classify_regime, decimal_ratio, spectral_decompose, EigenBasis, RegimeClass, RegimeKind,
    SpectralData, SpectralError,
};

/// Largest tolerated imaginary residue of an assembled covariance.
pub const IMAG_TOL: f64 = 1e-9;
/// Most negative tolerated eigenvalue before clipping.
pub const PSD_TOL: f64 = 1e-9;
/// `|Sigma_N 1'|_inf` bound.
pub const NULL_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AsymptoticError {
    #[error("limit generating matrix is not diagonalizable (nu = {nu})")]
    NotDiagonalizable { nu: u32 },
    #[error("no covariance formula for the {} regime (tau = {}, K = {arms})", .regime.kind, .regime.tau)]
    UnsupportedRegime { regime: RegimeClass, arms: usize },
    #[error("super-critical regime (tau = {}): no central limit theorem", .0.tau)]
    SuperCritical(RegimeClass),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("{which} has imaginary residue {residue:e}")]
    ComplexResidue { which: &'static str, residue: f64 },
    #[error("{which} is indefinite (eigenvalue {eigenvalue:e})")]
    Indefinite { which: &'static str, eigenvalue: f64 },
    #[error("Sigma_N does not annihilate the all-ones direction (residual {0:e})")]
    NullDirection(f64),
    #[error("invalid two-arm parameters: {0}")]
    InvalidParameters(String),
    #[error(transparent)]
    Rule(#[from] RuleError),
    #[error(transparent)]
    Spectral(#[from] SpectralError),
}

/// `diag(v) - v'v`: covariance of a single multinomial draw from `v`.
pub fn allocation_covariance(v: &DVector<f64>) -> DMatrix<f64> {
    DMatrix::from_diagonal(v) - v * v.transpose()
}

/// `R = sum_j v_j d_j + H'(diag(v) - v'v)H`.
pub fn compute_r(spec: &MomentSpec, s: &SpectralData) -> Result<DMatrix<f64>, AsymptoticError> {
    let k = spec.arms();
    if s.arms() != k {
        return Err(AsymptoticError::DimensionMismatch { expected: k, found: s.arms() });
    }
    let h = spec.h.entries();
    let mut r = h.transpose() * allocation_covariance(&s.v) * h;
    for (j, d) in spec.d.iter().enumerate() {
        r += d * s.v[j];
    }
    Ok((&r + r.transpose()) * 0.5)
}

/// `sigma_11 = sum_q v_q 1 d_q 1'`, the variance of `n^-1/2 (a_n - n)`.
pub fn sigma_total(spec: &MomentSpec, s: &SpectralData) -> f64 {
    spec.d.iter().zip(s.v.iter()).map(|(d, &vq)| vq * d.sum()).sum()
}

/// A covariance in eigen-coordinates and its real image in the original ones.
#[derive(Debug, Clone, PartialEq)]
pub struct Covariance {
    pub eigen: DMatrix<Complex64>,
    pub original: DMatrix<f64>,
    /// Smallest eigenvalue of `original` before clipping.
    pub raw_min_eigenvalue: f64,
}

/// Components of `Sigma~` in eigen-coordinates: `a + b + b~ + c`.
#[derive(Debug, Clone, PartialEq)]
pub struct AllocationTerms {
    pub a: DMatrix<Complex64>,
    pub b: DMatrix<Complex64>,
    pub b_adj: DMatrix<Complex64>,
    pub c: DMatrix<Complex64>,
}

impl AllocationTerms {
    pub fn total(&self) -> DMatrix<Complex64> {
        &self.a + &self.b + &self.b_adj + &self.c
    }
}

fn one() -> Complex64 {
    Complex64::new(1.0, 0.0)
}

fn basis(s: &SpectralData) -> Result<&EigenBasis, AsymptoticError> {
    match (&s.basis, s.diagonalizable) {
        (Some(b), true) => Ok(b),
        _ => Err(AsymptoticError::NotDiagonalizable { nu: s.nu }),
    }
}

fn require_subcritical(s: &SpectralData) -> Result<(), AsymptoticError> {
    let regime = classify_regime(s);
    match regime.kind {
        RegimeKind::SubCritical => Ok(()),
        _ => Err(AsymptoticError::UnsupportedRegime { regime, arms: s.arms() }),
    }
}

fn check_dim(r: &DMatrix<f64>, s: &SpectralData) -> Result<(), AsymptoticError> {
    if r.nrows() != s.arms() || r.ncols() != s.arms() {
        return Err(AsymptoticError::DimensionMismatch { expected: s.arms(), found: r.nrows() });
    }
    Ok(())
}

/// `t_i^* M t_j` for every pair of basis columns.
fn sandwich(b: &EigenBasis, m: &DMatrix<f64>) -> DMatrix<Complex64> {
    let mc = m.map(|x| Complex64::new(x, 0.0));
    b.t.adjoint() * mc * &b.t
}

/// Maps an eigen-coordinate Hermitian matrix to a real PSD matrix in the
/// original coordinates.
fn to_original(which: &'static str, b: &EigenBasis, eigen: &DMatrix<Complex64>) -> Result<Covariance, AsymptoticError> {
    let m = b.t_inv.adjoint() * eigen * &b.t_inv;
    let herm = (&m + m.adjoint()) * Complex64::new(0.5, 0.0);
    let scale = herm.iter().fold(1.0f64, |acc, z| acc.max(z.norm()));
    let residue = herm.iter().fold(0.0f64, |acc, z| acc.max(z.im.abs()));
    if residue > IMAG_TOL * scale {
        return Err(AsymptoticError::ComplexResidue { which, residue });
    }
    let real = herm.map(|z| z.re);
    let eig = real.clone().symmetric_eigen();
    let min = eig.eigenvalues.min();
    if min < -PSD_TOL * scale {
        return Err(AsymptoticError::Indefinite { which, eigenvalue: min });
    }
    let original = if min < 0.0 {
        log::debug!("{which}: clipping eigenvalue {min:e} to 0");
        let clipped = eig.eigenvalues.map(|x| x.max(0.0));
        let q = &eig.eigenvectors;
        let out = q * DMatrix::from_diagonal(&clipped) * q.transpose();
        (&out + out.transpose()) * 0.5
    } else {
        real
    };
    Ok(Covariance { eigen: eigen.clone(), original, raw_min_eigenvalue: min })
}

/// `Sigma` of the composition: `sigma_11 = 1R1'`,
/// `sigma_1j = 1 R t_j / (1 - lambda_j)`,
/// `sigma_ij = t_i^* R t_j / (1 - conj(lambda_i) - lambda_j)`.
pub fn sigma_y_eigen(r: &DMatrix<f64>, s: &SpectralData) -> Result<DMatrix<Complex64>, AsymptoticError> {
    check_dim(r, s)?;
    let b = basis(s)?;
    let k = s.arms();
    let g = sandwich(b, r);
    let lambda = |j: usize| if j == 0 { one() } else { s.eigenvalues[j - 1] };
    Ok(DMatrix::from_fn(k, k, |i, j| match (i, j) {
        (0, 0) => g[(0, 0)],
        (0, _) => g[(0, j)] / (one() - lambda(j)),
        (_, 0) => g[(i, 0)] / (one() - lambda(i).conj()),
        _ => g[(i, j)] / (one() - lambda(i).conj() - lambda(j)),
    }))
}

pub fn sigma_y_diagonalizable(r: &DMatrix<f64>, s: &SpectralData) -> Result<Covariance, AsymptoticError> {
    require_subcritical(s)?;
    let eigen = sigma_y_eigen(r, s)?;
    to_original("Sigma_Y", basis(s)?, &eigen)
}

/// The four parts of `Sigma~`; the first row and column vanish.
pub fn allocation_terms(r: &DMatrix<f64>, s: &SpectralData) -> Result<AllocationTerms, AsymptoticError> {
    check_dim(r, s)?;
    let b = basis(s)?;
    let k = s.arms();
    let a_full = sandwich(b, &allocation_covariance(&s.v));
    let g = sandwich(b, r);
    let lambda = |j: usize| s.eigenvalues[j - 1];
    let zero = Complex64::new(0.0, 0.0);
    let build = |f: &dyn Fn(usize, usize) -> Complex64| {
        DMatrix::from_fn(k, k, |i, j| if i == 0 || j == 0 { zero } else { f(i, j) })
    };
    let a = build(&|i, j| a_full[(i, j)]);
    let b_mat = build(&|i, j| lambda(j) / (one() - lambda(j)) * a_full[(i, j)]);
    let b_adj = build(&|i, j| lambda(i).conj() / (one() - lambda(i).conj()) * a_full[(i, j)]);
    let c = build(&|i, j| {
        let li = lambda(i).conj();
        let lj = lambda(j);
        (one() / (one() - li) + one() / (one() - lj)) / (one() - li - lj) * g[(i, j)]
    });
    Ok(AllocationTerms { a, b: b_mat, b_adj, c })
}

fn check_null(cov: &Covariance) -> Result<(), AsymptoticError> {
    let ones = DVector::from_element(cov.original.nrows(), 1.0);
    let residual = (&cov.original * ones).amax();
    let scale = cov.original.amax().max(1.0);
    if residual > NULL_TOL * scale {
        return Err(AsymptoticError::NullDirection(residual));
    }
    Ok(())
}

pub fn sigma_n_diagonalizable(r: &DMatrix<f64>, s: &SpectralData) -> Result<Covariance, AsymptoticError> {
    require_subcritical(s)?;
    let eigen = allocation_terms(r, s)?.total();
    let cov = to_original("Sigma_N", basis(s)?, &eigen)?;
    check_null(&cov)?;
    Ok(cov)
}

/// Two-arm critical case `lambda_1 = 1/2`: `sigma~_22 = t^* R t / |1 - lambda_1|^2`
/// under the `n log n` scaling.
pub fn sigma_n_critical_two_arm(r: &DMatrix<f64>, s: &SpectralData) -> Result<Covariance, AsymptoticError> {
    let regime = classify_regime(s);
    if regime.kind != RegimeKind::Critical || s.arms() != 2 || regime.nu != 1 {
        return Err(AsymptoticError::UnsupportedRegime { regime, arms: s.arms() });
    }
    check_dim(r, s)?;
    let b = basis(s)?;
    let g = sandwich(b, r);
    let lambda = s.eigenvalues[0];
    let mut eigen = DMatrix::from_element(2, 2, Complex64::new(0.0, 0.0));
    eigen[(1, 1)] = g[(1, 1)] / (one() - lambda).norm_sqr();
    let cov = to_original("Sigma_N", b, &eigen)?;
    check_null(&cov)?;
    Ok(cov)
}

/// Two-arm closed forms for the generalized play-the-winner rule with share
/// means `p1, p2` and share variances `a1, a2`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TwoArmClosedForm {
    pub v: [f64; 2],
    pub lambda1: f64,
    pub regime: RegimeClass,
    /// Coefficient of `[[1,-1],[-1,1]]` in `R`.
    pub r_coefficient: f64,
    /// `sigma~_22` in the basis `t_1 = (q1, -q2)`.
    pub sigma22: f64,
    /// Coefficient of `[[1,-1],[-1,1]]` in `Sigma_N` (`Sigma_1` or `Sigma_2`).
    pub sigma_n_coefficient: f64,
}

pub fn k2_closed_forms(p1: f64, p2: f64, a1: f64, a2: f64) -> Result<TwoArmClosedForm, AsymptoticError> {
    for (name, p) in [("p1", p1), ("p2", p2)] {
        if !(p > 0.0 && p < 1.0) {
            return Err(AsymptoticError::InvalidParameters(format!("{name} out of (0,1)")));
        }
    }
    for (name, a) in [("a1", a1), ("a2", a2)] {
        if !(a >= 0.0 && a.is_finite()) {
            return Err(AsymptoticError::InvalidParameters(format!("{name} must be a nonnegative variance")));
        }
    }
    let (q1, q2) = (1.0 - p1, 1.0 - p2);
    let s = q1 + q2;
    let lambda1 = p1 + p2 - 1.0;
    let regime = match (decimal_ratio(p1), decimal_ratio(p2)) {
        (Some(x), Some(y)) => classify_exact_tau(x + y - 1, 1),
        _ => crate::spectral::classify_tau(lambda1, 1),
    };
    let bracket = (a1 * q2 + a2 * q1) * s + q1 * q2 * (p1 - q2) * (p1 - q2);
    let sigma22 = match regime.kind {
        RegimeKind::SubCritical => {
            q1 * q2 + 2.0 * (1.0 - q1 - q2) * q1 * q2 / s + 2.0 * bracket / (s * (1.0 - 2.0 * lambda1))
        }
        RegimeKind::Critical => 4.0 * bracket,
        RegimeKind::SuperCritical => return Err(AsymptoticError::SuperCritical(regime)),
    };
    Ok(TwoArmClosedForm {
        v: [q2 / s, q1 / s],
        lambda1,
        regime,
        r_coefficient: bracket / (s * s),
        sigma22,
        sigma_n_coefficient: sigma22 / (s * s),
    })
}

/// Everything the analytic engine can say about a rule.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AsymptoticReport {
    pub rule: String,
    pub params: serde_json::Value,
    pub arms: usize,
    #[serde(serialize_with = "matrix_json::vector")]
    pub v: DVector<f64>,
    #[serde(serialize_with = "matrix_json::complex_list")]
    pub eigenvalues: Vec<Complex64>,
    pub tau: f64,
    pub nu: u32,
    pub diagonalizable: bool,
    pub condition_number: f64,
    pub regime: RegimeClass,
    pub scaling: String,
    pub drift: Option<DriftClass>,
    /// The `n v` centering is justified only when `sum alpha_i / sqrt(i) < inf`.
    pub centering_approximation: bool,
    pub sigma11: f64,
    #[serde(serialize_with = "matrix_json::rows")]
    pub r: DMatrix<f64>,
    #[serde(serialize_with = "matrix_json::opt_rows")]
    pub sigma_y: Option<DMatrix<f64>>,
    #[serde(serialize_with = "matrix_json::opt_rows")]
    pub sigma_n: Option<DMatrix<f64>>,
    #[serde(serialize_with = "matrix_json::opt_complex_rows")]
    pub sigma_y_eigen: Option<DMatrix<Complex64>>,
    #[serde(serialize_with = "matrix_json::opt_complex_rows")]
    pub sigma_n_eigen: Option<DMatrix<Complex64>>,
    pub notes: Vec<String>,
}

pub fn analyze(rule: &dyn AdditionRule) -> Result<AsymptoticReport, AsymptoticError> {
    let spec = rule.limit_spec()?;
    let s = spectral_decompose(&spec.h)?.with_exact_tau(rule.exact_tau());
    let regime = classify_regime(&s);
    let mut notes = Vec::new();

    let drift = match rule.drift_class() {
        Ok(d) => Some(d),
        Err(e) => {
            notes.push(format!("drift: {e}"));
            None
        }
    };
    if let Some(d) = drift {
        if !d.summable {
            notes.push("sum alpha_i / i diverges: no limit theorem applies".into());
        }
    }
    let centering_approximation = !drift.is_some_and(|d| d.root_summable);
    if centering_approximation {
        notes.push("sum alpha_i / sqrt(i) is not known to converge: CLT centered at n v is a centering approximation".into());
    }

    let r = compute_r(&spec, &s)?;
    let sigma11 = sigma_total(&spec, &s);
    let (mut sigma_y, mut sigma_n, mut sigma_y_eigen, mut sigma_n_eigen) = (None, None, None, None);
    match regime.kind {
        RegimeKind::SubCritical if s.diagonalizable => {
            let y = sigma_y_diagonalizable(&r, &s)?;
            let n = sigma_n_diagonalizable(&r, &s)?;
            sigma_y = Some(y.original);
            sigma_y_eigen = Some(y.eigen);
            sigma_n = Some(n.original);
            sigma_n_eigen = Some(n.eigen);
        }
        RegimeKind::SubCritical => {
            notes.push(format!("{}", AsymptoticError::NotDiagonalizable { nu: s.nu }));
        }
        RegimeKind::Critical => match sigma_n_critical_two_arm(&r, &s) {
            Ok(n) => {
                sigma_n = Some(n.original);
                sigma_n_eigen = Some(n.eigen);
                notes.push("critical regime: Sigma_N under sqrt(n log n) scaling; Sigma_Y not provided".into());
            }
            Err(e) => notes.push(e.to_string()),
        },
        RegimeKind::SuperCritical => {
            notes.push(AsymptoticError::SuperCritical(regime).to_string());
        }
    }

    Ok(AsymptoticReport {
        rule: rule.kind().to_string(),
        params: rule.params(),
        arms: s.arms(),
        v: s.v.clone(),
        eigenvalues: s.eigenvalues.clone(),
        tau: s.tau,
        nu: s.nu,
        diagonalizable: s.diagonalizable,
        condition_number: s.condition_number,
        regime,
        scaling: regime.scaling_label(),
        drift,
        centering_approximation,
        sigma11,
        r,
        sigma_y,
        sigma_n,
        sigma_y_eigen,
        sigma_n_eigen,
        notes,
    })
}
