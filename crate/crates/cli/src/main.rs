use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use chrono::Utc;
use clap::{Args, Parser, Subcommand};
use nalgebra::DMatrix;
use serde_json::Value;

use urnlab_core::asymptotics::{analyze, AsymptoticReport};
use urnlab_core::config::{digest_json, emit, from_value, parse_config_str};
use urnlab_core::montecarlo::{collect_moments, run_replicates, verify, ExperimentConfig, RuleSpec};
use urnlab_core::report::{to_json, write_file, write_simulation, write_verification, OutputFile, RunManifest};
use urnlab_core::rules::RuleRegistry;

const EXIT_FAILED: u8 = 1;
const EXIT_ERROR: u8 = 2;

#[derive(Parser)]
#[command(name = "urnlab", version, about = "Generalized Friedman urn simulator and asymptotic verifier")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print the limit proportions, spectrum, regime and limit covariances of a rule.
    Analyze(RunArgs),
    /// Simulate replicates and write trajectories and moments.
    Simulate(RunArgs),
    /// Simulate and check every applicable limit theorem; exit 0 iff all pass.
    Verify(RunArgs),
    /// List built-in rules.
    Catalog,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads: a positive integer or `auto`. Falls back to URNLAB_THREADS.
    #[arg(long)]
    threads: Option<String>,
    #[arg(long, default_value = "urnlab-out")]
    out: PathBuf,
    /// Multiplies every relative and absolute tolerance.
    #[arg(long)]
    tolerance_scale: Option<f64>,
}

fn resolve_threads(flag: Option<&str>) -> Result<usize> {
    let env = std::env::var("URNLAB_THREADS").ok();
    let raw = flag.map(str::to_string).or(env);
    match raw.as_deref().map(str::trim) {
        None | Some("auto") => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
        Some(s) => match s.parse::<usize>() {
            Ok(n) if n > 0 => Ok(n),
            _ => bail!("--threads must be a positive integer or `auto`, got `{s}`"),
        },
    }
}

struct Loaded {
    text: String,
    cfg: ExperimentConfig,
}

fn load(args: &RunArgs) -> Result<Loaded> {
    let text = fs::read_to_string(&args.config).with_context(|| format!("reading {}", args.config.display()))?;
    let mut cfg = parse_config_str(&text).with_context(|| format!("config {}", args.config.display()))?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(f) = args.tolerance_scale {
        if !(f.is_finite() && f >= 0.0) {
            bail!("--tolerance-scale must be finite and nonnegative");
        }
        cfg.tolerances = cfg.tolerances.scaled(f);
    }
    Ok(Loaded { text, cfg })
}

/// The rule object of a config file; a bare `{"kind": ...}` object is also accepted.
fn load_rule_spec(path: &Path) -> Result<RuleSpec> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let value: Value = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    let rule = match value.get("rule") {
        Some(r) => r.clone(),
        None if value.get("kind").is_some() => value,
        None => bail!("{}: no `rule` object", path.display()),
    };
    let wrapped = serde_json::json!({"rule": rule, "n": 10, "replicates": 2});
    Ok(from_value(wrapped)?.rule)
}

fn fmt_matrix(m: &DMatrix<f64>) -> String {
    m.row_iter()
        .map(|r| r.iter().map(|x| format!("{x:>12.6}")).collect::<Vec<_>>().join(" "))
        .map(|r| format!("    {r}"))
        .collect::<Vec<_>>()
        .join("\n")
}

fn print_analysis(a: &AsymptoticReport) {
    println!("rule        {} {}", a.rule, a.params);
    println!("arms        {}", a.arms);
    let v: Vec<String> = a.v.iter().map(|x| format!("{x:.6}")).collect();
    println!("v           ({})", v.join(", "));
    let lambdas: Vec<String> = a
        .eigenvalues
        .iter()
        .map(|z| if z.im == 0.0 { format!("{:.6}", z.re) } else { format!("{:.6}{:+.6}i", z.re, z.im) })
        .collect();
    println!("eigenvalues 1, {}", lambdas.join(", "));
    println!("tau         {:.6}", a.tau);
    println!("nu          {}", a.nu);
    println!("regime      {}", a.regime.kind);
    println!("V_n         {}", a.scaling);
    println!("sigma_11    {:.6}", a.sigma11);
    match &a.sigma_y {
        Some(m) => println!("Sigma_Y\n{}", fmt_matrix(m)),
        None => println!("Sigma_Y     not available"),
    }
    match &a.sigma_n {
        Some(m) => println!("Sigma_N\n{}", fmt_matrix(m)),
        None => println!("Sigma_N     not available"),
    }
    if let Some(e) = &a.sigma_n_eigen {
        println!("Sigma_N in eigen coordinates (real parts)\n{}", fmt_matrix(&e.map(|z| z.re)));
    }
    for note in &a.notes {
        println!("note        {note}");
    }
}

fn write_manifest(
    out: &Path,
    command: &str,
    text: &str,
    cfg: &ExperimentConfig,
    threads: usize,
    started: String,
    mut outputs: Vec<OutputFile>,
) -> Result<()> {
    outputs.push(write_file(out, "config.json", emit(cfg).as_bytes())?);
    let manifest = RunManifest {
        tool: "urnlab".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        command: command.into(),
        config_digest: digest_json(text)?,
        seed: cfg.seed,
        threads,
        started,
        finished: Utc::now().to_rfc3339(),
        outputs,
    };
    write_file(out, "manifest.json", &to_json(&manifest))?;
    Ok(())
}

fn cmd_analyze(args: &RunArgs) -> Result<u8> {
    let spec = load_rule_spec(&args.config)?;
    let rule = spec.build(&RuleRegistry::builtin())?;
    let report = analyze(rule.as_ref())?;
    print_analysis(&report);
    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    write_file(&args.out, "analysis.json", &to_json(&report))?;
    Ok(0)
}

fn cmd_simulate(args: &RunArgs) -> Result<u8> {
    let started = Utc::now().to_rfc3339();
    let Loaded { text, cfg } = load(args)?;
    let threads = resolve_threads(args.threads.as_deref())?;
    let rule = cfg.build_rule()?;
    let run = run_replicates(rule.as_ref(), &cfg.y0, cfg.n, &cfg.checkpoints, cfg.replicates, cfg.seed, Some(threads))?;
    let analysis = match analyze(rule.as_ref()) {
        Ok(a) => Some(a),
        Err(e) => {
            eprintln!("no asymptotic analysis: {e}; writing trajectories only");
            None
        }
    };
    let moments = match &analysis {
        Some(a) if run.trajectories.len() >= 2 => {
            collect_moments(&run, &cfg.targets, &cfg.checkpoints, a, cfg.y0.iter().sum())?
        }
        _ => Vec::new(),
    };
    let files = write_simulation(&args.out, &cfg, rule.arms(), &run, analysis.as_ref(), &moments)?;
    write_manifest(&args.out, "simulate", &text, &cfg, threads, started, files)?;
    println!("{} of {} replicates completed; outputs in {}", run.trajectories.len(), cfg.replicates, args.out.display());
    for f in &run.failures {
        eprintln!("replicate {} aborted at step {}: {}", f.replicate, f.step, f.error);
    }
    Ok(if run.failures.is_empty() { 0 } else { EXIT_FAILED })
}

fn cmd_verify(args: &RunArgs) -> Result<u8> {
    let started = Utc::now().to_rfc3339();
    let Loaded { text, cfg } = load(args)?;
    let threads = resolve_threads(args.threads.as_deref())?;
    let v = verify(&cfg, Some(threads))?;
    let arms = v.analysis.arms;
    let files = write_verification(&args.out, &cfg, arms, &v.run, &v.analysis, &v.moments, &v.report)?;
    write_manifest(&args.out, "verify", &text, &cfg, threads, started, files)?;

    println!("{} {} regime, V_n = {}", v.report.rule, v.report.regime.kind, v.report.scaling);
    for c in &v.report.claims {
        let verdict = match (c.passed, c.informational) {
            (true, _) => "PASS",
            (false, true) => "INFO",
            (false, false) => "FAIL",
        };
        let detail = match (c.relative_error, c.p_value) {
            (Some(r), _) => format!("rel error {r:.4} vs {} {}", c.tolerance_name, c.tolerance),
            (None, Some(p)) => format!("p = {p:.4} vs {} {}", c.tolerance_name, c.tolerance),
            _ => format!("empirical {} vs {}", c.empirical, c.theoretical),
        };
        println!("{verdict} {} at n = {}: {detail}", c.name, c.n);
        if let Some(note) = &c.note {
            println!("     {note}");
        }
    }
    for note in &v.report.notes {
        println!("note {note}");
    }
    if v.report.all_passed {
        println!("all claims passed");
        Ok(0)
    } else {
        let failed: Vec<&str> = v.report.failed_claims().map(|c| c.name.as_str()).collect();
        eprintln!("failed claims: {}", failed.join("; "));
        Ok(EXIT_FAILED)
    }
}

fn cmd_catalog() -> Result<u8> {
    let registry = RuleRegistry::builtin();
    for e in registry.entries() {
        println!("{:<16} {}", e.name, e.summary);
        println!("{:<16} reference: {}", "", e.reference);
        println!("{:<16} example:   {}", "", (e.example)());
    }
    Ok(0)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Analyze(a) => cmd_analyze(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Verify(a) => cmd_verify(a),
        Command::Catalog => cmd_catalog(),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_ERROR)
        }
    }
}
