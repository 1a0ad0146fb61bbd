//! `mfd` — estimate vaccine efficacy from trial CSVs and run Monte Carlo
//! studies of the estimators.
//!
//! Exit codes: 0 success, 2 usage or input validation failure, 3 numerical
//! or estimation failure.

mod manifest;
mod runner;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use mfd_core::data::{load_csv, OutcomeKind};
use mfd_core::estimators::{
    analyze_counts, s_corrected, EfficacyEstimate, EstimationOptions, Specificity,
};
use mfd_core::report::quantile_summary;
use mfd_core::sim::{summarize, RepOutcome, ScenarioConfig, SimSummary};
use mfd_core::survival::analyze_survival;
use mfd_core::Error;

use manifest::RunManifest;

#[derive(Parser)]
#[command(name = "mfd", version, about = "Mendelian factorial design efficacy estimation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate efficacy from a subject-level CSV file.
    Estimate(EstimateArgs),
    /// Run a Monte Carlo study from a scenario configuration file.
    Simulate(SimulateArgs),
    /// Aggregate one or more study output directories into combined tables.
    Report(ReportArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum OutcomeArg {
    Count,
    Survival,
}

#[derive(Args)]
struct EstimateArgs {
    /// Input CSV (schema: site,z,g,x1..xd,y or site,z,g,x1..xd,time,event).
    #[arg(long)]
    input: PathBuf,
    #[arg(long, value_enum)]
    outcome: OutcomeArg,
    /// Comma-separated list from: mfd, naive, bounded, s_corrected.
    #[arg(long, default_value = "mfd,naive,bounded")]
    estimators: String,
    /// Known case specificity for the s-corrected estimator.
    #[arg(long)]
    s: Option<f64>,
    /// Confidence interval lo,hi for the specificity.
    #[arg(long, value_name = "LO,HI")]
    s_interval: Option<String>,
    /// Level 1-beta of the specificity interval.
    #[arg(long, default_value_t = 0.05)]
    s_beta: f64,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long, default_value_t = 0.001)]
    alpha0: f64,
    #[arg(long, default_value_t = 0.001)]
    alpha_tilde: f64,
    /// Randomization probability P(Z=1), known by design.
    #[arg(long, default_value_t = 0.5)]
    pz: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SimulateArgs {
    /// Scenario configuration file (key = value lines).
    #[arg(long)]
    config: PathBuf,
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Replication-level worker threads; output is independent of this.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Args)]
struct ReportArgs {
    /// Study output directories produced by `mfd simulate`.
    #[arg(long, num_args = 1.., required = true)]
    inputs: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Estimate(args) => cmd_estimate(args),
        Command::Simulate(args) => cmd_simulate(args),
        Command::Report(args) => cmd_report(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err))
        }
    }
}

/// 2 for usage/validation failures, 3 for numerical ones.
fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Parse { .. }
        | Error::Validation(_)
        | Error::Positivity(_)
        | Error::Parameter(_)
        | Error::Io(_) => 2,
        Error::NonConvergence(_) | Error::Numerical(_) => 3,
    }
}

fn usage(msg: impl Into<String>) -> Error {
    Error::Parameter(msg.into())
}

// ---------------------------------------------------------------------------
// estimate
// ---------------------------------------------------------------------------

fn cmd_estimate(args: EstimateArgs) -> Result<(), Error> {
    let requested: Vec<&str> = args.estimators.split(',').map(str::trim).collect();
    for name in &requested {
        if !["mfd", "naive", "bounded", "s_corrected"].contains(name) {
            return Err(usage(format!("unknown estimator {name:?}")));
        }
    }
    let wants = |name: &str| requested.contains(&name);

    let specificity = match (args.s, &args.s_interval) {
        (Some(_), Some(_)) => {
            return Err(usage("--s and --s-interval are mutually exclusive"))
        }
        (Some(v), None) => Some(Specificity::Known(v)),
        (None, Some(raw)) => {
            let (lo, hi) = raw
                .split_once(',')
                .ok_or_else(|| usage("--s-interval expects LO,HI"))?;
            let lo: f64 = lo.trim().parse().map_err(|_| usage("--s-interval lo must be a number"))?;
            let hi: f64 = hi.trim().parse().map_err(|_| usage("--s-interval hi must be a number"))?;
            Some(Specificity::Interval { lo, hi, beta: args.s_beta })
        }
        (None, None) => None,
    };
    if wants("s_corrected") && specificity.is_none() {
        return Err(usage("--estimators s_corrected requires --s or --s-interval"));
    }

    let opts = EstimationOptions {
        p_z: args.pz,
        alpha: args.alpha,
        alpha0: args.alpha0,
        alpha_tilde: args.alpha_tilde,
    };

    let mut estimates: Vec<EfficacyEstimate<f64>> = Vec::new();
    match args.outcome {
        OutcomeArg::Count => {
            let ds = load_csv::<f64, _>(&args.input, OutcomeKind::Count)?;
            let analysis = analyze_counts(&ds, &opts)?;
            if wants("mfd") {
                estimates.push(analysis.mfd.clone());
            }
            if wants("naive") {
                estimates.push(analysis.naive.clone());
            }
            if wants("bounded") {
                estimates.push(analysis.bounded.clone());
            }
            if wants("s_corrected") {
                let s = specificity.expect("checked above");
                estimates.push(s_corrected(&analysis.naive, s, args.alpha)?);
            }
        }
        OutcomeArg::Survival => {
            if wants("s_corrected") {
                return Err(usage("s_corrected is defined for count outcomes only"));
            }
            let ds = load_csv::<f64, _>(&args.input, OutcomeKind::Survival)?;
            let analysis = analyze_survival(&ds, &opts)?;
            if wants("mfd") {
                estimates.push(analysis.mfd.clone());
            }
            if wants("naive") {
                estimates.push(analysis.naive.clone());
            }
            if wants("bounded") {
                estimates.push(analysis.bounded.clone());
            }
        }
    }

    std::fs::create_dir_all(&args.out)?;
    write_estimates_csv(&args.out.join("estimates.csv"), &estimates)?;

    let mut manifest = RunManifest::new("estimate");
    manifest.add_input(&args.input)?;
    manifest.set(
        "options",
        format!(
            "estimators={} alpha={} alpha0={} alpha_tilde={} pz={}",
            args.estimators, args.alpha, args.alpha0, args.alpha_tilde, args.pz
        ),
    );
    manifest.add_output("estimates.csv");
    manifest.write(&args.out.join("manifest.txt"))?;

    println!(
        "{:<12} {:>10} {:>10} {:>10} {:>10}  flags",
        "method", "tau_hat", "se", "ci_lower", "ci_upper"
    );
    for e in &estimates {
        println!(
            "{:<12} {:>10.4} {:>10.4} {:>10.4} {:>10.4}  {}",
            e.method.to_string(),
            e.tau_hat,
            e.se,
            e.ci.0,
            e.ci.1,
            e.flags
        );
    }
    Ok(())
}

fn write_estimates_csv(path: &Path, estimates: &[EfficacyEstimate<f64>]) -> Result<(), Error> {
    let mut text = String::from("method,tau_hat,se,ci_lower,ci_upper,flags\n");
    for e in estimates {
        text.push_str(&format!(
            "{},{},{},{},{},{}\n",
            e.method, e.tau_hat, e.se, e.ci.0, e.ci.1, e.flags
        ));
    }
    std::fs::write(path, text)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// simulate
// ---------------------------------------------------------------------------

fn cmd_simulate(args: SimulateArgs) -> Result<(), Error> {
    let text = std::fs::read_to_string(&args.config)?;
    let mut cfg: ScenarioConfig<f64> = ScenarioConfig::from_key_values(&text)?;

    // Environment overrides, echoed into the manifest.
    let mut seed_override = None;
    if let Ok(seed) = std::env::var("MFD_SEED") {
        let seed: u64 = seed
            .parse()
            .map_err(|_| usage("MFD_SEED must be an unsigned integer"))?;
        cfg.seed = seed;
        seed_override = Some(seed);
    }
    let mut jobs = args.jobs.max(1);
    let mut jobs_override = None;
    if let Ok(raw) = std::env::var("MFD_JOBS") {
        let j: usize = raw
            .parse()
            .map_err(|_| usage("MFD_JOBS must be a positive integer"))?;
        jobs = j.max(1);
        jobs_override = Some(jobs);
    }

    let scenario = args
        .config
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "scenario".to_string());

    let outcomes = runner::run_parallel(&cfg, jobs);
    let summary = summarize(&cfg, &outcomes)?;

    std::fs::create_dir_all(&args.out)?;
    write_summary_csv(&args.out.join("summary.csv"), &scenario, &summary)?;
    write_replications_csv(&args.out.join("replications.csv"), &scenario, &outcomes)?;

    let mut manifest = RunManifest::new("simulate");
    manifest.add_input(&args.config)?;
    manifest.set("scenario", scenario.clone());
    manifest.set("seed", cfg.seed.to_string());
    manifest.set("jobs", jobs.to_string());
    if let Some(seed) = seed_override {
        manifest.set("seed_override_env", seed.to_string());
    }
    if let Some(j) = jobs_override {
        manifest.set("jobs_override_env", j.to_string());
    }
    manifest.set_block("resolved_config", &cfg.to_key_values());
    manifest.add_output("summary.csv");
    manifest.add_output("replications.csv");
    manifest.write(&args.out.join("manifest.txt"))?;

    println!(
        "scenario {scenario}: {} replications, {} failed",
        summary.n_reps, summary.n_failed
    );
    println!(
        "{:<10} {:>10} {:>8} {:>10} {:>10} {:>8}",
        "estimator", "prop|bias|", "rmse", "rmse_trim", "coverage", "power"
    );
    for e in &summary.estimators {
        println!(
            "{:<10} {:>10.4} {:>8.4} {:>10.4} {:>10.4} {:>8.4}",
            e.method.to_string(),
            e.prop_abs_bias,
            e.rmse,
            e.rmse_trimmed,
            e.coverage,
            e.power
        );
    }
    Ok(())
}

const SUMMARY_HEADER: &str =
    "scenario,estimator,n_reps,n_failed,mean_tau,prop_abs_bias,rmse,rmse_trimmed,coverage,power";

fn write_summary_csv(path: &Path, scenario: &str, summary: &SimSummary<f64>) -> Result<(), Error> {
    let mut text = String::from(SUMMARY_HEADER);
    text.push('\n');
    for e in &summary.estimators {
        text.push_str(&format!(
            "{},{},{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}\n",
            scenario,
            e.method,
            summary.n_reps,
            summary.n_failed,
            e.mean_tau,
            e.prop_abs_bias,
            e.rmse,
            e.rmse_trimmed,
            e.coverage,
            e.power
        ));
    }
    std::fs::write(path, text)?;
    Ok(())
}

const REPLICATIONS_HEADER: &str = "scenario,rep,estimator,tau_hat,se,ci_lower,ci_upper,flags";

fn write_replications_csv(
    path: &Path,
    scenario: &str,
    outcomes: &[Option<RepOutcome<f64>>],
) -> Result<(), Error> {
    let mut text = String::from(REPLICATIONS_HEADER);
    text.push('\n');
    for (rep, outcome) in outcomes.iter().enumerate() {
        match outcome {
            Some(o) => {
                for e in &o.estimates {
                    text.push_str(&format!(
                        "{},{},{},{},{},{},{},{}\n",
                        scenario, rep, e.method, e.tau_hat, e.se, e.ci.0, e.ci.1, e.flags
                    ));
                }
            }
            None => text.push_str(&format!("{scenario},{rep},failed,,,,,\n")),
        }
    }
    std::fs::write(path, text)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// report
// ---------------------------------------------------------------------------

fn cmd_report(args: ReportArgs) -> Result<(), Error> {
    if args.inputs.is_empty() {
        return Err(usage("report requires at least one input directory"));
    }
    let mut combined = String::from(SUMMARY_HEADER);
    combined.push('\n');
    let mut estimates: Vec<(String, String, f64)> = Vec::new();

    for dir in &args.inputs {
        let summary_path = dir.join("summary.csv");
        let summary_text = std::fs::read_to_string(&summary_path).map_err(|_| {
            Error::Validation(format!("{} is missing summary.csv", dir.display()))
        })?;
        let mut lines = summary_text.lines();
        match lines.next() {
            Some(header) if header == SUMMARY_HEADER => {}
            other => {
                return Err(Error::Validation(format!(
                    "{}: summary.csv header mismatch (got {:?})",
                    dir.display(),
                    other.unwrap_or("")
                )))
            }
        }
        for line in lines {
            if !line.trim().is_empty() {
                combined.push_str(line);
                combined.push('\n');
            }
        }

        let reps_path = dir.join("replications.csv");
        let reps_text = std::fs::read_to_string(&reps_path).map_err(|_| {
            Error::Validation(format!("{} is missing replications.csv", dir.display()))
        })?;
        let mut lines = reps_text.lines();
        match lines.next() {
            Some(header) if header == REPLICATIONS_HEADER => {}
            other => {
                return Err(Error::Validation(format!(
                    "{}: replications.csv header mismatch (got {:?})",
                    dir.display(),
                    other.unwrap_or("")
                )))
            }
        }
        for (idx, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 8 {
                return Err(Error::Parse {
                    line: idx + 2,
                    msg: format!("{}: malformed replications row", dir.display()),
                });
            }
            if fields[2] == "failed" {
                continue;
            }
            let tau: f64 = fields[3].parse().map_err(|_| Error::Parse {
                line: idx + 2,
                msg: format!("{}: tau_hat must be a number", dir.display()),
            })?;
            estimates.push((fields[0].to_string(), fields[2].to_string(), tau));
        }
    }

    std::fs::create_dir_all(&args.out)?;
    std::fs::write(args.out.join("combined_summary.csv"), combined)?;

    let rows = quantile_summary(&estimates);
    let mut text = String::from("scenario,estimator,q05,q25,q50,q75,q95,mean,median,n\n");
    for r in &rows {
        text.push_str(&format!(
            "{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{}\n",
            r.scenario, r.estimator, r.q05, r.q25, r.q50, r.q75, r.q95, r.mean, r.median, r.n
        ));
    }
    std::fs::write(args.out.join("quantiles.csv"), text)?;

    let mut manifest = RunManifest::new("report");
    for dir in &args.inputs {
        manifest.add_input(&dir.join("summary.csv"))?;
        manifest.add_input(&dir.join("replications.csv"))?;
    }
    manifest.add_output("combined_summary.csv");
    manifest.add_output("quantiles.csv");
    manifest.write(&args.out.join("manifest.txt"))?;

    println!(
        "aggregated {} input director{} into {} quantile rows",
        args.inputs.len(),
        if args.inputs.len() == 1 { "y" } else { "ies" },
        rows.len()
    );
    Ok(())
}
