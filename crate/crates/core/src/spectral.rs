//! Generating-matrix validation and the spectral quantities that drive the
//! limit theorems: the stationary allocation `v`, the nonprincipal spectrum,
//! `tau`/`nu`, the eigen-basis `T` and the scaling regime.

use std::cmp::Ordering;
use std::fmt;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use num_rational::Ratio;
use num_traits::{ToPrimitive, Zero};
use serde::Serialize;
use thiserror::Error;

/// Rows of a generating matrix must agree to this (relative) tolerance.
pub const ROW_SUM_TOL: f64 = 1e-12;
/// `|tau - 1/2|` below this is treated as critical when no exact value is known.
pub const CRITICAL_TOL: f64 = 1e-12;
/// Eigenvector matrices with a larger condition number are treated as defective.
pub const CONDITION_LIMIT: f64 = 1e8;

// Eigenvalues closer than this are treated as one repeated eigenvalue.
const CLUSTER_TOL: f64 = 1e-6;
// Singular values below NULL_TOL * (1 + |H|) span a numerical null space.
const NULL_TOL: f64 = 1e-7;
// Nonprincipal eigenvalues this close to 1 make the principal eigenvalue non-simple.
const SIMPLE_GAP: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SpectralError {
    #[error("generating matrix must be square with at least two arms, got {rows}x{cols}")]
    Shape { rows: usize, cols: usize },
    #[error("entry ({row}, {col}) is not finite")]
    NonFinite { row: usize, col: usize },
    #[error("off-diagonal entry ({row}, {col}) = {value} is negative")]
    NegativeOffDiagonal { row: usize, col: usize, value: f64 },
    #[error("diagonal entry ({row}, {row}) = {value} is negative and withdrawal is not allowed")]
    NegativeDiagonal { row: usize, value: f64 },
    #[error("unequal row sums: row 0 sums to {first}, row {row} sums to {value}")]
    UnequalRowSums { row: usize, first: f64, value: f64 },
    #[error("common row sum {0} is not positive")]
    NonPositiveRowSum(f64),
    #[error("generating matrix is reducible (principal left eigenvector not unique and strictly positive)")]
    Reducible,
    #[error("eigenvalue 1 is not simple: nonprincipal eigenvalue {0} attains it")]
    DegenerateSpectrum(Complex64),
}

/// A validated generating matrix with common row sum normalized to one.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GeneratingMatrix {
    #[serde(serialize_with = "crate::matrix_json::rows")]
    entries: DMatrix<f64>,
    row_sum: f64,
    withdrawal_allowed: bool,
}

impl GeneratingMatrix {
    pub fn arms(&self) -> usize {
        self.entries.nrows()
    }

    /// Normalized entries (rows sum to one).
    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    /// The common row sum `c1` of the raw matrix before normalization.
    pub fn row_sum(&self) -> f64 {
        self.row_sum
    }

    pub fn withdrawal_allowed(&self) -> bool {
        self.withdrawal_allowed
    }
}

/// Validates the extended Polya urn conditions and rescales the matrix so that
/// every row sums to one.
pub fn validate_generating_matrix(
    raw: &DMatrix<f64>,
    withdrawal_allowed: bool,
) -> Result<GeneratingMatrix, SpectralError> {
    let (rows, cols) = raw.shape();
    if rows != cols || rows < 2 {
        return Err(SpectralError::Shape { rows, cols });
    }
    for row in 0..rows {
        for col in 0..cols {
            let value = raw[(row, col)];
            if !value.is_finite() {
                return Err(SpectralError::NonFinite { row, col });
            }
            if row != col && value < 0.0 {
                return Err(SpectralError::NegativeOffDiagonal { row, col, value });
            }
            if row == col && value < 0.0 && !withdrawal_allowed {
                return Err(SpectralError::NegativeDiagonal { row, value });
            }
        }
    }

    let sums: Vec<f64> = (0..rows).map(|r| raw.row(r).sum()).collect();
    let first = sums[0];
    let scale = first.abs().max(1.0);
    for (row, &value) in sums.iter().enumerate().skip(1) {
        if (value - first).abs() > ROW_SUM_TOL * scale {
            return Err(SpectralError::UnequalRowSums { row, first, value });
        }
    }
    if first <= 0.0 {
        return Err(SpectralError::NonPositiveRowSum(first));
    }

    if !is_irreducible(raw) {
        return Err(SpectralError::Reducible);
    }

    Ok(GeneratingMatrix {
        entries: raw / first,
        row_sum: first,
        withdrawal_allowed,
    })
}

/// `(I + H)^(K-1)` strictly positive, evaluated on the sparsity pattern so that
/// negative (withdrawal) diagonals do not interfere.
fn is_irreducible(raw: &DMatrix<f64>) -> bool {
    let k = raw.nrows();
    let base: Vec<Vec<bool>> = (0..k)
        .map(|i| (0..k).map(|j| i == j || raw[(i, j)] > 0.0).collect())
        .collect();
    let mut reach = base.clone();
    for _ in 1..k.saturating_sub(1) {
        let mut next = vec![vec![false; k]; k];
        for i in 0..k {
            for l in 0..k {
                if reach[i][l] {
                    for j in 0..k {
                        next[i][j] |= base[l][j];
                    }
                }
            }
        }
        reach = next;
    }
    reach.iter().all(|row| row.iter().all(|&b| b))
}

/// Eigen-basis of a diagonalizable generating matrix: `T` has the all-ones
/// vector first, then the right eigenvectors of `lambda_1..lambda_{K-1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenBasis {
    pub t: DMatrix<Complex64>,
    pub t_inv: DMatrix<Complex64>,
}

impl EigenBasis {
    /// Column `j` of `T` (column 0 is the all-ones vector).
    pub fn column(&self, j: usize) -> DVector<Complex64> {
        self.t.column(j).into_owned()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectralData {
    pub v: DVector<f64>,
    /// Nonprincipal eigenvalues, sorted by descending real part (then imaginary part).
    pub eigenvalues: Vec<Complex64>,
    pub tau: f64,
    pub nu: u32,
    /// Present exactly when `diagonalizable` holds.
    pub basis: Option<EigenBasis>,
    pub condition_number: f64,
    pub diagonalizable: bool,
    /// Exact `tau` supplied by a rule catalog entry, preferred by the classifier.
    pub exact_tau: Option<Ratio<i64>>,
}

impl SpectralData {
    pub fn arms(&self) -> usize {
        self.v.len()
    }

    pub fn with_exact_tau(mut self, exact: Option<Ratio<i64>>) -> Self {
        self.exact_tau = exact;
        self
    }

    /// `diag(1, lambda_1, ..., lambda_{K-1})`.
    pub fn jordan_diagonal(&self) -> DMatrix<Complex64> {
        let mut d = vec![Complex64::new(1.0, 0.0)];
        d.extend(self.eigenvalues.iter().copied());
        DMatrix::from_diagonal(&DVector::from_vec(d))
    }
}

#[derive(Debug)]
struct Cluster {
    center: Complex64,
    size: usize,
}

pub fn spectral_decompose(h: &GeneratingMatrix) -> Result<SpectralData, SpectralError> {
    let hm = h.entries();
    let k = hm.nrows();
    let scale = 1.0 + hm.norm();

    let mut all: Vec<Complex64> = hm.clone().complex_eigenvalues().iter().copied().collect();
    let principal = all
        .iter()
        .enumerate()
        .min_by(|a, b| (a.1 - 1.0).norm().total_cmp(&(b.1 - 1.0).norm()))
        .map(|(i, _)| i)
        .expect("matrix has at least two eigenvalues");
    all.remove(principal);
    for lam in all.iter_mut() {
        if lam.im.abs() <= 1e-12 * scale {
            lam.im = 0.0;
        }
    }
    if let Some(bad) = all
        .iter()
        .find(|l| (*l - 1.0).norm() < SIMPLE_GAP || l.re >= 1.0 - SIMPLE_GAP)
    {
        return Err(SpectralError::DegenerateSpectrum(*bad));
    }

    let v = stationary_vector(hm)?;

    // Group (numerically) repeated eigenvalues.
    all.sort_by(eigen_order);
    let mut clusters: Vec<Cluster> = Vec::new();
    let mut assigned = vec![false; all.len()];
    for i in 0..all.len() {
        if assigned[i] {
            continue;
        }
        let members: Vec<usize> = (i..all.len())
            .filter(|&j| !assigned[j] && (all[j] - all[i]).norm() < CLUSTER_TOL)
            .collect();
        let mut center = Complex64::zero();
        for &j in &members {
            assigned[j] = true;
            center += all[j];
        }
        center /= members.len() as f64;
        if center.im.abs() <= 1e-12 * scale {
            center.im = 0.0;
        }
        clusters.push(Cluster {
            center,
            size: members.len(),
        });
    }
    clusters.sort_by(|a, b| eigen_order(&a.center, &b.center));
    let eigenvalues: Vec<Complex64> = clusters
        .iter()
        .flat_map(|c| std::iter::repeat_n(c.center, c.size))
        .collect();
    let tau = eigenvalues[0].re;

    let mut columns: Vec<Option<Vec<DVector<Complex64>>>> = Vec::with_capacity(clusters.len());
    let mut all_full = true;
    let mut nu = 1u32;
    for (ci, cluster) in clusters.iter().enumerate() {
        let vectors = if cluster.center.im < 0.0 {
            // Conjugate partner was (or will be) handled through its Im > 0 twin.
            let twin = clusters
                .iter()
                .position(|c| (c.center - cluster.center.conj()).norm() < CLUSTER_TOL && c.size == cluster.size);
            match twin {
                Some(t) if t < ci => columns[t]
                    .as_ref()
                    .map(|vs| vs.iter().map(|x| x.map(|z| z.conj())).collect()),
                _ => null_vectors(hm, cluster.center, cluster.size, scale),
            }
        } else {
            null_vectors(hm, cluster.center, cluster.size, scale)
        };
        if vectors.is_none() {
            all_full = false;
            if (cluster.center.re - tau).abs() <= 1e-9 {
                nu = nu.max(max_block_order(hm, cluster.center, cluster.size, scale));
            }
        }
        columns.push(vectors);
    }

    let mut condition_number = f64::INFINITY;
    let mut basis = None;
    if all_full {
        let mut t = DMatrix::<Complex64>::from_element(k, k, Complex64::new(1.0, 0.0));
        let mut col = 1;
        for vs in columns.iter().flatten() {
            for x in vs {
                t.set_column(col, &normalize_column(x));
                col += 1;
            }
        }
        let sv = t.clone().singular_values();
        let smax = sv.iter().cloned().fold(0.0, f64::max);
        let smin = sv.iter().cloned().fold(f64::INFINITY, f64::min);
        condition_number = if smin > 0.0 { smax / smin } else { f64::INFINITY };
        if condition_number <= CONDITION_LIMIT {
            if let Some(t_inv) = t.clone().try_inverse() {
                basis = Some(EigenBasis { t, t_inv });
            }
        }
    }
    let diagonalizable = basis.is_some();

    Ok(SpectralData {
        v,
        eigenvalues,
        tau,
        nu,
        basis,
        condition_number,
        diagonalizable,
        exact_tau: None,
    })
}

fn eigen_order(a: &Complex64, b: &Complex64) -> Ordering {
    b.re.total_cmp(&a.re).then(b.im.total_cmp(&a.im))
}

/// Solves `v (H - I) = 0`, `sum v = 1` with one balance equation replaced by the
/// normalization.
fn stationary_vector(hm: &DMatrix<f64>) -> Result<DVector<f64>, SpectralError> {
    let k = hm.nrows();
    let mut a = hm.transpose() - DMatrix::<f64>::identity(k, k);
    a.row_mut(k - 1).fill(1.0);
    let mut rhs = DVector::<f64>::zeros(k);
    rhs[k - 1] = 1.0;
    let mut v = a.lu().solve(&rhs).ok_or(SpectralError::Reducible)?;
    let total = v.sum();
    v /= total;
    if v.iter().any(|&x| !(x > 0.0)) {
        return Err(SpectralError::Reducible);
    }
    Ok(v)
}

fn shifted(hm: &DMatrix<f64>, lambda: Complex64) -> DMatrix<Complex64> {
    let k = hm.nrows();
    DMatrix::from_fn(k, k, |i, j| {
        let base = Complex64::new(hm[(i, j)], 0.0);
        if i == j {
            base - lambda
        } else {
            base
        }
    })
}

/// Right singular vectors spanning the null space of `H - lambda I`, or `None`
/// when the geometric multiplicity falls short of `size`.
fn null_vectors(
    hm: &DMatrix<f64>,
    lambda: Complex64,
    size: usize,
    scale: f64,
) -> Option<Vec<DVector<Complex64>>> {
    let a = shifted(hm, lambda);
    let svd = a.svd(false, true);
    let v_t = svd.v_t.as_ref().expect("requested right singular vectors");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&i, &j| svd.singular_values[i].total_cmp(&svd.singular_values[j]));
    let smallest = &order[..size];
    if smallest
        .iter()
        .any(|&i| svd.singular_values[i] > NULL_TOL * scale)
    {
        return None;
    }
    let mut picked: Vec<usize> = smallest.to_vec();
    picked.sort_unstable();
    Some(
        picked
            .into_iter()
            .map(|i| v_t.row(i).transpose().map(|z| z.conj()))
            .collect(),
    )
}

/// Largest Jordan block order of a defective cluster: smallest `p` with
/// `nullity((H - lambda I)^p) = size`.
fn max_block_order(hm: &DMatrix<f64>, lambda: Complex64, size: usize, scale: f64) -> u32 {
    let a = shifted(hm, lambda);
    let mut power = a.clone();
    for p in 1..=size {
        let sv = power.clone().singular_values();
        let tol = 1e-6 * scale.powi(p as i32);
        let nullity = sv.iter().filter(|&&s| s <= tol).count();
        if nullity >= size {
            return p as u32;
        }
        power = &power * &a;
    }
    size as u32
}

/// Unit max-norm with the first nonzero entry real-positive.
fn normalize_column(x: &DVector<Complex64>) -> DVector<Complex64> {
    let max = x.iter().map(|z| z.norm()).fold(0.0, f64::max);
    let mut y = x / Complex64::new(max, 0.0);
    if let Some(first) = y.iter().find(|z| z.norm() > 1e-12).copied() {
        let phase = first / first.norm();
        y *= phase.conj();
        // remove roundoff in the pivot itself
        if let Some(p) = y.iter_mut().find(|z| z.norm() > 1e-12) {
            p.im = 0.0;
        }
    }
    y
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum RegimeKind {
    SubCritical,
    Critical,
    SuperCritical,
}

impl fmt::Display for RegimeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            RegimeKind::SubCritical => "sub-critical",
            RegimeKind::Critical => "critical",
            RegimeKind::SuperCritical => "super-critical",
        };
        f.write_str(s)
    }
}

/// Regime plus the fluctuation scale `V_n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RegimeClass {
    pub kind: RegimeKind,
    pub tau: f64,
    pub nu: u32,
}

impl RegimeClass {
    /// `V_n` evaluated at `n`.
    pub fn scaling(&self, n: f64) -> f64 {
        let nu = self.nu as f64;
        match self.kind {
            RegimeKind::SubCritical => n.sqrt(),
            RegimeKind::Critical => n.sqrt() * n.ln().powf(nu - 0.5),
            RegimeKind::SuperCritical => n.powf(self.tau) * n.ln().powf(nu - 1.0),
        }
    }

    pub fn scaling_label(&self) -> String {
        match self.kind {
            RegimeKind::SubCritical => "sqrt(n)".to_string(),
            RegimeKind::Critical if self.nu == 1 => "sqrt(n log n)".to_string(),
            RegimeKind::Critical => format!("sqrt(n) log^{} n", self.nu as f64 - 0.5),
            RegimeKind::SuperCritical if self.nu == 1 => format!("n^{}", self.tau),
            RegimeKind::SuperCritical => format!("n^{} log^{} n", self.tau, self.nu - 1),
        }
    }
}

pub fn classify_regime(s: &SpectralData) -> RegimeClass {
    match s.exact_tau {
        Some(exact) => classify_exact_tau(exact, s.nu),
        None => classify_tau(s.tau, s.nu),
    }
}

pub fn classify_tau(tau: f64, nu: u32) -> RegimeClass {
    let kind = if (tau - 0.5).abs() <= CRITICAL_TOL {
        RegimeKind::Critical
    } else if tau < 0.5 {
        RegimeKind::SubCritical
    } else {
        RegimeKind::SuperCritical
    };
    let tau = if kind == RegimeKind::Critical { 0.5 } else { tau };
    RegimeClass { kind, tau, nu }
}

pub fn classify_exact_tau(tau: Ratio<i64>, nu: u32) -> RegimeClass {
    let half = Ratio::new(1, 2);
    let kind = match tau.cmp(&half) {
        Ordering::Less => RegimeKind::SubCritical,
        Ordering::Equal => RegimeKind::Critical,
        Ordering::Greater => RegimeKind::SuperCritical,
    };
    RegimeClass {
        kind,
        tau: tau.to_f64().unwrap_or(f64::NAN),
        nu,
    }
}

/// Recovers the decimal literal a user most likely typed for `x` (its shortest
/// round-trip representation) as an exact rational.
pub fn decimal_ratio(x: f64) -> Option<Ratio<i64>> {
    if !x.is_finite() {
        return None;
    }
    let text = format!("{x}");
    let (negative, digits) = match text.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, text.as_str()),
    };
    let (int_part, frac_part) = digits.split_once('.').unwrap_or((digits, ""));
    if frac_part.len() > 15 || int_part.len() > 3 {
        return None;
    }
    let denom = 10i64.checked_pow(frac_part.len() as u32)?;
    let int: i64 = int_part.parse().ok()?;
    let frac: i64 = if frac_part.is_empty() {
        0
    } else {
        frac_part.parse().ok()?
    };
    let numer = int.checked_mul(denom)?.checked_add(frac)?;
    let r = Ratio::new(numer, denom);
    Some(if negative { -r } else { r })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    fn mat(rows: &[&[f64]]) -> DMatrix<f64> {
        let k = rows.len();
        DMatrix::from_fn(k, rows[0].len(), |i, j| rows[i][j])
    }

    #[test]
    fn rpw_matrix_is_valid() {
        let h = validate_generating_matrix(&mat(&[&[0.7, 0.3], &[0.6, 0.4]]), false).unwrap();
        assert_eq!(h.row_sum(), 1.0);
    }

    #[test]
    fn rescales_to_unit_row_sum() {
        let h = validate_generating_matrix(&mat(&[&[1.0, 1.0], &[2.0, 0.0]]), false).unwrap();
        assert_eq!(h.row_sum(), 2.0);
        assert_eq!(h.entries(), &mat(&[&[0.5, 0.5], &[1.0, 0.0]]));
    }

    #[test]
    fn identity_is_reducible() {
        let err = validate_generating_matrix(&DMatrix::identity(2, 2), false).unwrap_err();
        assert_eq!(err, SpectralError::Reducible);
    }

    #[test]
    fn negative_off_diagonal_rejected() {
        let err = validate_generating_matrix(&mat(&[&[1.5, -0.5], &[0.5, 0.5]]), true).unwrap_err();
        assert!(matches!(err, SpectralError::NegativeOffDiagonal { row: 0, col: 1, .. }));
    }

    #[test]
    fn negative_diagonal_needs_withdrawal() {
        let raw = mat(&[&[-0.5, 1.5], &[0.5, 0.5]]);
        assert!(matches!(
            validate_generating_matrix(&raw, false),
            Err(SpectralError::NegativeDiagonal { row: 0, .. })
        ));
        assert!(validate_generating_matrix(&raw, true).is_ok());
    }

    #[test]
    fn unequal_row_sums_rejected() {
        let err = validate_generating_matrix(&mat(&[&[0.7, 0.3], &[0.6, 0.5]]), false).unwrap_err();
        assert!(matches!(err, SpectralError::UnequalRowSums { row: 1, .. }));
    }

    #[test]
    fn shape_checked() {
        let err = validate_generating_matrix(&DMatrix::from_element(1, 1, 1.0), false).unwrap_err();
        assert_eq!(err, SpectralError::Shape { rows: 1, cols: 1 });
    }

    #[test]
    fn symmetric_two_arm() {
        let h = validate_generating_matrix(&mat(&[&[0.5, 0.5], &[0.5, 0.5]]), false).unwrap();
        let s = spectral_decompose(&h).unwrap();
        assert!(close(s.v[0], 0.5, 1e-14) && close(s.v[1], 0.5, 1e-14));
        assert!(s.eigenvalues[0].norm() < 1e-14);
        assert!(s.tau.abs() < 1e-14);
        assert_eq!(s.nu, 1);
        assert!(s.diagonalizable);
    }

    #[test]
    fn rpw_spectrum() {
        let h = validate_generating_matrix(&mat(&[&[0.7, 0.3], &[0.6, 0.4]]), false).unwrap();
        let s = spectral_decompose(&h).unwrap();
        assert!(close(s.v[0], 2.0 / 3.0, 1e-14));
        assert!(close(s.v[1], 1.0 / 3.0, 1e-14));
        assert!(close(s.eigenvalues[0].re, 0.1, 1e-14));
        assert_eq!(s.eigenvalues[0].im, 0.0);
    }

    #[test]
    fn wei_symmetric_repeated_eigenvalue() {
        let h = validate_generating_matrix(
            &mat(&[&[0.5, 0.25, 0.25], &[0.25, 0.5, 0.25], &[0.25, 0.25, 0.5]]),
            false,
        )
        .unwrap();
        let s = spectral_decompose(&h).unwrap();
        for k in 0..3 {
            assert!(close(s.v[k], 1.0 / 3.0, 1e-14));
        }
        assert!(s.diagonalizable);
        assert!(close(s.eigenvalues[0].re, 0.25, 1e-12));
        assert!(close(s.eigenvalues[1].re, 0.25, 1e-12));
    }

    #[test]
    fn exact_defective_block() {
        // Eigenvalues 1, 1/4 (Jordan block of order 2).
        // Built as T J T^{-1} with T having the ones vector first.
        let t = mat(&[&[1.0, 1.0, 0.0], &[1.0, 0.0, 1.0], &[1.0, -1.0, -1.0]]);
        let j = mat(&[&[1.0, 0.0, 0.0], &[0.0, 0.25, 0.05], &[0.0, 0.0, 0.25]]);
        let raw = &t * j * t.clone().try_inverse().unwrap();
        let h = validate_generating_matrix(&raw, false).unwrap();
        let s = spectral_decompose(&h).unwrap();
        assert!(!s.diagonalizable);
        assert!(s.basis.is_none());
        assert_eq!(s.nu, 2);
        assert!(close(s.tau, 0.25, 1e-6));
        assert_eq!(classify_regime(&s).kind, RegimeKind::SubCritical);
    }

    #[test]
    fn regime_table() {
        let sub = classify_tau(0.1, 1);
        assert_eq!(sub.kind, RegimeKind::SubCritical);
        assert_eq!(sub.scaling(100.0), 10.0);
        let crit = classify_tau(0.5, 1);
        assert_eq!(crit.kind, RegimeKind::Critical);
        let n: f64 = 1e4;
        assert!(close(crit.scaling(n), (n * n.ln()).sqrt(), 1e-9));
        let sup = classify_tau(0.6, 1);
        assert_eq!(sup.kind, RegimeKind::SuperCritical);
        assert!(close(sup.scaling(n), n.powf(0.6), 1e-9));
        let sup2 = classify_tau(0.6, 2);
        assert!(close(sup2.scaling(n), n.powf(0.6) * n.ln(), 1e-9));
    }

    #[test]
    fn exact_path_beats_roundoff() {
        let p1 = decimal_ratio(0.9).unwrap();
        let p2 = decimal_ratio(0.6).unwrap();
        let lambda = p1 + p2 - Ratio::from_integer(1);
        assert_eq!(lambda, Ratio::new(1, 2));
        assert_eq!(classify_exact_tau(lambda, 1).kind, RegimeKind::Critical);
        assert_eq!(
            classify_exact_tau(Ratio::new(1, 2) + Ratio::new(1, 1_000_000_000_000_000), 1).kind,
            RegimeKind::SuperCritical
        );
    }

    #[test]
    fn decimal_ratio_recovers_literals() {
        assert_eq!(decimal_ratio(0.7), Some(Ratio::new(7, 10)));
        assert_eq!(decimal_ratio(-1.25), Some(Ratio::new(-5, 4)));
        assert_eq!(decimal_ratio(3.0), Some(Ratio::from_integer(3)));
        assert_eq!(decimal_ratio(1.0 / 3.0), None);
        assert_eq!(decimal_ratio(f64::NAN), None);
    }
}
