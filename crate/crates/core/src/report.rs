//! Output files of a run: trajectories and moments as CSV, reports as JSON,
//! whitespace-separated plot data and a manifest with content digests.

use std::fs;
use std::io::{self, Write};
use std::path::Path;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

use crate::asymptotics::AsymptoticReport;
use crate::montecarlo::{
    default_kappa, leading_direction, quantile, standardized_leading_component, statistics_at, theory_for,
    deviations_at, EmpiricalMoments, ExperimentConfig, RunOutput, Target, VerificationReport,
};

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("{path}: {source}")]
    Io { path: String, source: io::Error },
    #[error("moments.csv line {line}: {message}")]
    Csv { line: usize, message: String },
    #[error(transparent)]
    MonteCarlo(#[from] crate::montecarlo::MonteCarloError),
}

/// Twelve significant digits.
pub fn fmt12(x: f64) -> String {
    format!("{x:.11e}")
}

pub fn trajectories_header(arms: usize) -> String {
    let mut cols = vec!["replicate".to_string(), "n".to_string()];
    cols.extend((0..arms).map(|k| format!("Y_{k}")));
    cols.extend((0..arms).map(|k| format!("N_{k}")));
    cols.push("a".into());
    cols.join(",")
}

/// One row per completed replicate and checkpoint.
pub fn write_trajectories<W: Write>(mut w: W, run: &RunOutput, arms: usize) -> io::Result<()> {
    writeln!(w, "{}", trajectories_header(arms))?;
    for (rep, traj) in &run.trajectories {
        for cp in &traj.checkpoints {
            write!(w, "{rep},{}", cp.n)?;
            for y in &cp.y {
                write!(w, ",{}", fmt12(*y))?;
            }
            for d in &cp.draws {
                write!(w, ",{d}")?;
            }
            writeln!(w, ",{}", fmt12(cp.total))?;
        }
    }
    Ok(())
}

pub const MOMENTS_HEADER: &str = "target,n,replicates,stat,i,j,empirical,standard_error,theoretical";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentRow {
    pub target: Target,
    pub n: u64,
    pub replicates: usize,
    /// `mean` (j unused, written as 0) or `cov`.
    pub stat: String,
    pub i: usize,
    pub j: usize,
    pub empirical: f64,
    pub standard_error: f64,
    /// Limit value; the centred mean has limit 0.
    pub theoretical: Option<f64>,
}

pub fn moment_rows(moments: &[EmpiricalMoments], analysis: Option<&AsymptoticReport>) -> Vec<MomentRow> {
    let mut rows = Vec::new();
    for m in moments {
        let theory = analysis.and_then(|a| theory_for(m.target, a));
        for i in 0..m.mean.len() {
            rows.push(MomentRow {
                target: m.target,
                n: m.n,
                replicates: m.replicates,
                stat: "mean".into(),
                i,
                j: 0,
                empirical: m.mean[i],
                standard_error: m.mean_se[i],
                theoretical: theory.as_ref().map(|_| 0.0),
            });
        }
        for i in 0..m.covariance.nrows() {
            for j in 0..m.covariance.ncols() {
                rows.push(MomentRow {
                    target: m.target,
                    n: m.n,
                    replicates: m.replicates,
                    stat: "cov".into(),
                    i,
                    j,
                    empirical: m.covariance[(i, j)],
                    standard_error: m.covariance_se[(i, j)],
                    theoretical: theory.as_ref().map(|t| t[(i, j)]),
                });
            }
        }
    }
    rows
}

pub fn write_moments<W: Write>(mut w: W, rows: &[MomentRow]) -> io::Result<()> {
    writeln!(w, "{MOMENTS_HEADER}")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{}",
            r.target.label(),
            r.n,
            r.replicates,
            r.stat,
            r.i,
            r.j,
            fmt12(r.empirical),
            fmt12(r.standard_error),
            r.theoretical.map(fmt12).unwrap_or_default()
        )?;
    }
    Ok(())
}

pub fn read_moments(text: &str) -> Result<Vec<MomentRow>, ReportError> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h == MOMENTS_HEADER => {}
        _ => return Err(ReportError::Csv { line: 1, message: "unexpected header".into() }),
    }
    let mut rows = Vec::new();
    for (idx, line) in lines {
        let bad = |message: String| ReportError::Csv { line: idx + 1, message };
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 9 {
            return Err(bad(format!("expected 9 fields, found {}", f.len())));
        }
        let target = match f[0] {
            "a" => Target::A,
            "Y" => Target::Y,
            "N" => Target::N,
            other => return Err(bad(format!("unknown target {other}"))),
        };
        let int = |s: &str| s.parse::<u64>().map_err(|e| bad(format!("{s}: {e}")));
        let float = |s: &str| s.parse::<f64>().map_err(|e| bad(format!("{s}: {e}")));
        rows.push(MomentRow {
            target,
            n: int(f[1])?,
            replicates: int(f[2])? as usize,
            stat: f[3].to_string(),
            i: int(f[4])? as usize,
            j: int(f[5])? as usize,
            empirical: float(f[6])?,
            standard_error: float(f[7])?,
            theoretical: if f[8].is_empty() { None } else { Some(float(f[8])?) },
        });
    }
    Ok(rows)
}

/// `n` against the cross-replicate `fraction`-quantile of
/// `n^-kappa |N_n - n v|_inf`. Plot files carry two columns and no header.
pub fn write_deviation_plot<W: Write>(
    mut w: W,
    run: &RunOutput,
    v: &DVector<f64>,
    kappa: f64,
    checkpoints: &[u64],
    fraction: f64,
) -> Result<(), ReportError> {
    let io = |e| ReportError::Io { path: "plot_deviation.dat".into(), source: e };
    for &c in checkpoints {
        let stats = statistics_at(run, c, v, kappa)?;
        if stats.is_empty() {
            continue;
        }
        writeln!(w, "{c} {}", fmt12(quantile(&stats, fraction))).map_err(io)?;
    }
    Ok(())
}

/// Empirical variance of the component along the leading eigenvector of the
/// limit covariance, per checkpoint.
pub fn write_variance_plot<W: Write>(
    mut w: W,
    moments: &[EmpiricalMoments],
    target: Target,
    analysis: &AsymptoticReport,
) -> io::Result<bool> {
    let Some(theory) = theory_for(target, analysis) else {
        return Ok(false);
    };
    let (u, _) = leading_direction(&theory);
    for m in moments.iter().filter(|m| m.target == target) {
        let var = (u.transpose() * &m.covariance * &u)[(0, 0)];
        writeln!(w, "{} {}", m.n, fmt12(var))?;
    }
    Ok(true)
}

/// Normal quantiles against the sorted standardized sample.
pub fn write_qq_plot<W: Write>(mut w: W, standardized: &[f64]) -> io::Result<()> {
    let normal = Normal::standard();
    let mut z = standardized.to_vec();
    z.sort_by(f64::total_cmp);
    let m = z.len() as f64;
    for (i, x) in z.iter().enumerate() {
        let q = normal.inverse_cdf((i as f64 + 0.5) / m);
        writeln!(w, "{} {}", fmt12(q), fmt12(*x))?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputFile {
    pub name: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    /// SHA-256 of the key-sorted compact form of the config file.
    pub config_digest: String,
    pub seed: u64,
    pub threads: usize,
    pub started: String,
    pub finished: String,
    pub outputs: Vec<OutputFile>,
}

pub fn file_entry(dir: &Path, name: &str) -> Result<OutputFile, ReportError> {
    let path = dir.join(name);
    let bytes = fs::read(&path).map_err(|e| ReportError::Io { path: path.display().to_string(), source: e })?;
    Ok(OutputFile { name: name.to_string(), bytes: bytes.len() as u64, sha256: hex::encode(Sha256::digest(&bytes)) })
}

/// Writes `contents` to `dir/name` and returns its digest entry.
pub fn write_file(dir: &Path, name: &str, contents: &[u8]) -> Result<OutputFile, ReportError> {
    let path = dir.join(name);
    fs::write(&path, contents).map_err(|e| ReportError::Io { path: path.display().to_string(), source: e })?;
    file_entry(dir, name)
}

fn render<F: FnOnce(&mut Vec<u8>) -> io::Result<()>>(f: F) -> Vec<u8> {
    let mut buf = Vec::new();
    f(&mut buf).expect("writing to memory");
    buf
}

pub fn to_json<T: Serialize>(value: &T) -> Vec<u8> {
    let mut s = serde_json::to_vec_pretty(value).expect("report serializes");
    s.push(b'\n');
    s
}

/// Everything a simulation produces: trajectories, and when the rule has an
/// analysis, moments and plots. Returns the written files in order.
pub fn write_simulation(
    dir: &Path,
    cfg: &ExperimentConfig,
    arms: usize,
    run: &RunOutput,
    analysis: Option<&AsymptoticReport>,
    moments: &[EmpiricalMoments],
) -> Result<Vec<OutputFile>, ReportError> {
    fs::create_dir_all(dir).map_err(|e| ReportError::Io { path: dir.display().to_string(), source: e })?;
    let mut files = vec![write_file(dir, "trajectories.csv", &render(|b| write_trajectories(b, run, arms)))?];
    let Some(analysis) = analysis else {
        return Ok(files);
    };
    files.push(write_file(dir, "analysis.json", &to_json(analysis))?);
    let rows = moment_rows(moments, Some(analysis));
    files.push(write_file(dir, "moments.csv", &render(|b| write_moments(b, &rows)))?);

    if !run.trajectories.is_empty() {
        let kappa = cfg.kappa.unwrap_or_else(|| default_kappa(analysis.tau));
        let mut buf = Vec::new();
        write_deviation_plot(
            &mut buf,
            run,
            &analysis.v,
            kappa,
            &cfg.checkpoints,
            cfg.tolerances.consistency_fraction,
        )?;
        files.push(write_file(dir, "plot_deviation.dat", &buf)?);
    }
    for &target in &cfg.targets {
        let mut buf = Vec::new();
        let written = write_variance_plot(&mut buf, moments, target, analysis)
            .map_err(|e| ReportError::Io { path: "plot_variance".into(), source: e })?;
        if written && !moments.is_empty() {
            files.push(write_file(dir, &format!("plot_variance_{}.dat", target.label().to_lowercase()), &buf)?);
        }
    }
    let horizon = *cfg.checkpoints.last().expect("validated checkpoints");
    if let (Some(theory), true) = (analysis.sigma_n.as_ref(), run.trajectories.len() >= 2) {
        if theory.iter().any(|x| *x != 0.0) {
            let samples = deviations_at(run, horizon, Target::N, &analysis.v, &analysis.regime, cfg.y0.iter().sum())?;
            let z = standardized_leading_component(&samples, theory);
            files.push(write_file(dir, "plot_qq.dat", &render(|b| write_qq_plot(b, &z)))?);
        }
    }
    Ok(files)
}

/// Simulation outputs plus `report.json`.
pub fn write_verification(
    dir: &Path,
    cfg: &ExperimentConfig,
    arms: usize,
    run: &RunOutput,
    analysis: &AsymptoticReport,
    moments: &[EmpiricalMoments],
    report: &VerificationReport,
) -> Result<Vec<OutputFile>, ReportError> {
    let mut files = write_simulation(dir, cfg, arms, run, Some(analysis), moments)?;
    files.push(write_file(dir, "report.json", &to_json(report))?);
    Ok(files)
}
