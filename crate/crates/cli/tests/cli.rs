//! Command-level tests: flags, exit codes, and output files.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use mfd_core::data::write_csv;
use mfd_core::survival::{simulate_survival_trial, SurvivalScenario};

fn mfd(args: &[&str], envs: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_mfd"));
    cmd.args(args).env_remove("MFD_SEED").env_remove("MFD_JOBS");
    for (k, v) in envs {
        cmd.env(k, v);
    }
    cmd.output().expect("spawn mfd")
}

fn tmp_dir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("mfd_cli_{tag}_{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn exit_code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn read(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap_or_else(|_| panic!("missing {}", path.display()))
}

#[test]
fn estimate_single_site_matches_cell_means_closed_form() {
    let dir = tmp_dir("est_sat");
    // Cell means: (1,1)=1, (1,0)=2, (0,1)=2, (0,0)=3 -> tau = 1 - (-1)/(-1) = 0.
    let csv = "site,z,g,y\nA,1,1,0\nA,1,1,2\nA,1,0,1\nA,1,0,3\nA,0,1,2\nA,0,1,2\nA,0,0,3\nA,0,0,3\n";
    let input = dir.join("trial.csv");
    std::fs::write(&input, csv).unwrap();
    let out = mfd(
        &[
            "estimate",
            "--input",
            input.to_str().unwrap(),
            "--outcome",
            "count",
            "--estimators",
            "mfd,naive",
            "--out",
            dir.to_str().unwrap(),
        ],
        &[],
    );
    assert_eq!(exit_code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let estimates = read(&dir.join("estimates.csv"));
    let mfd_row: Vec<&str> = estimates
        .lines()
        .find(|l| l.starts_with("mfd,"))
        .expect("mfd row")
        .split(',')
        .collect();
    let tau: f64 = mfd_row[1].parse().unwrap();
    let closed_form = 1.0 - (1.0 - 2.0) / (2.0 - 3.0);
    assert!((tau - closed_form).abs() < 1e-8, "tau {tau}");
    assert!(read(&dir.join("manifest.txt")).contains("command = estimate"));
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn estimate_requires_specificity_for_s_corrected() {
    let dir = tmp_dir("est_use");
    let input = dir.join("trial.csv");
    std::fs::write(&input, "site,z,g,y\nA,1,1,1\nA,1,0,1\nA,0,1,1\nA,0,0,2\n").unwrap();
    let out = mfd(
        &[
            "estimate",
            "--input",
            input.to_str().unwrap(),
            "--outcome",
            "count",
            "--estimators",
            "s_corrected",
            "--out",
            dir.to_str().unwrap(),
        ],
        &[],
    );
    assert_eq!(exit_code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("--s"));
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn estimate_validation_failure_exits_2_and_estimation_failure_exits_3() {
    let dir = tmp_dir("est_err");
    // Missing (1,1) cell: positivity -> exit 2.
    let input = dir.join("bad.csv");
    std::fs::write(&input, "site,z,g,y\nA,1,0,1\nA,0,1,1\nA,0,0,2\n").unwrap();
    let out = mfd(
        &[
            "estimate",
            "--input",
            input.to_str().unwrap(),
            "--outcome",
            "count",
            "--out",
            dir.to_str().unwrap(),
        ],
        &[],
    );
    assert_eq!(exit_code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("positivity"));

    // All cell means equal: mu0 = 0 exactly -> numerical failure, exit 3.
    let input2 = dir.join("degenerate.csv");
    std::fs::write(&input2, "site,z,g,y\nA,1,1,1\nA,1,0,1\nA,0,1,1\nA,0,0,1\n").unwrap();
    let out = mfd(
        &[
            "estimate",
            "--input",
            input2.to_str().unwrap(),
            "--outcome",
            "count",
            "--out",
            dir.to_str().unwrap(),
        ],
        &[],
    );
    assert_eq!(exit_code(&out), 3);
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn estimate_survival_csv_produces_cox_rows() {
    let dir = tmp_dir("est_surv");
    let sc = SurvivalScenario {
        baseline_hazard: 1.0,
        kappa: 4.0 / 3.0,
        phi: 0.3,
        tau: 0.5,
        nu: 0.5,
        eta: 0.0,
        horizon: 1.0,
        p_g: 0.2,
        n: 2000,
    };
    let ds = simulate_survival_trial(&sc, 4242).unwrap();
    let input = dir.join("survival.csv");
    write_csv(&ds, &input).unwrap();
    let out = mfd(
        &[
            "estimate",
            "--input",
            input.to_str().unwrap(),
            "--outcome",
            "survival",
            "--out",
            dir.to_str().unwrap(),
        ],
        &[],
    );
    assert_eq!(exit_code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let estimates = read(&dir.join("estimates.csv"));
    let cox_row: Vec<&str> = estimates
        .lines()
        .find(|l| l.starts_with("cox_mfd,"))
        .expect("cox_mfd row")
        .split(',')
        .collect();
    let se: f64 = cox_row[2].parse().unwrap();
    assert!(se.is_finite() && se > 0.0, "se {se}");
    assert!(estimates.contains("cox_naive,"));
    assert!(estimates.contains("cox_bounded,"));
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn simulate_single_replication_writes_one_row_per_estimator() {
    let dir = tmp_dir("sim_one");
    let config = dir.join("one.conf");
    std::fs::write(&config, "n = 400\nn_sim = 1\nseed = 5\n").unwrap();
    let out = mfd(
        &[
            "simulate",
            "--config",
            config.to_str().unwrap(),
            "--out",
            dir.to_str().unwrap(),
        ],
        &[],
    );
    assert_eq!(exit_code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let reps = read(&dir.join("replications.csv"));
    let data_rows: Vec<&str> = reps.lines().skip(1).filter(|l| !l.is_empty()).collect();
    assert_eq!(data_rows.len(), 3); // mfd, naive, bounded for the single replication
    assert!(data_rows.iter().all(|l| l.starts_with("one,0,")));
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn simulate_rejects_bad_config_with_exit_2() {
    let dir = tmp_dir("sim_bad");
    let config = dir.join("bad.conf");
    std::fs::write(&config, "n = 400\nbogus_key = 1\n").unwrap();
    let out = mfd(
        &[
            "simulate",
            "--config",
            config.to_str().unwrap(),
            "--out",
            dir.to_str().unwrap(),
        ],
        &[],
    );
    assert_eq!(exit_code(&out), 2);
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn simulate_env_seed_override_is_recorded() {
    let dir = tmp_dir("sim_env");
    let config = dir.join("env.conf");
    std::fs::write(&config, "n = 400\nn_sim = 2\nseed = 5\n").unwrap();
    let out = mfd(
        &[
            "simulate",
            "--config",
            config.to_str().unwrap(),
            "--out",
            dir.to_str().unwrap(),
        ],
        &[("MFD_SEED", "123")],
    );
    assert_eq!(exit_code(&out), 0);
    let manifest = read(&dir.join("manifest.txt"));
    assert!(manifest.contains("seed = 123"));
    assert!(manifest.contains("seed_override_env = 123"));
    assert!(manifest.contains("seed = 123"));
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn report_aggregates_and_checks_schema() {
    let dir = tmp_dir("report");
    // Two studies with distinct scenario names.
    for (name, seed) in [("s1", 11u64), ("s2", 12)] {
        let config = dir.join(format!("{name}.conf"));
        std::fs::write(&config, format!("n = 400\nn_sim = 6\nseed = {seed}\n")).unwrap();
        let out_dir = dir.join(name);
        let out = mfd(
            &[
                "simulate",
                "--config",
                config.to_str().unwrap(),
                "--out",
                out_dir.to_str().unwrap(),
            ],
            &[],
        );
        assert_eq!(exit_code(&out), 0);
    }
    let report_dir = dir.join("combined");
    let out = mfd(
        &[
            "report",
            "--inputs",
            dir.join("s1").to_str().unwrap(),
            dir.join("s2").to_str().unwrap(),
            "--out",
            report_dir.to_str().unwrap(),
        ],
        &[],
    );
    assert_eq!(exit_code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));

    let quantiles = read(&report_dir.join("quantiles.csv"));
    let rows: Vec<&str> = quantiles.lines().skip(1).filter(|l| !l.is_empty()).collect();
    assert_eq!(rows.len(), 6); // 2 scenarios x 3 estimators

    // Independent sort-based oracle for one (scenario, estimator) group.
    let reps = read(&dir.join("s1").join("replications.csv"));
    let mut taus: Vec<f64> = reps
        .lines()
        .skip(1)
        .filter(|l| l.starts_with("s1,") && l.split(',').nth(2) == Some("mfd"))
        .map(|l| l.split(',').nth(3).unwrap().parse().unwrap())
        .collect();
    taus.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let type7 = |p: f64| {
        let h = p * (taus.len() - 1) as f64;
        let lo = h.floor() as usize;
        let hi = (lo + 1).min(taus.len() - 1);
        taus[lo] + (h - lo as f64) * (taus[hi] - taus[lo])
    };
    let mfd_row: Vec<&str> = rows
        .iter()
        .find(|l| l.starts_with("s1,mfd,"))
        .unwrap()
        .split(',')
        .collect();
    let q05: f64 = mfd_row[2].parse().unwrap();
    let q50: f64 = mfd_row[4].parse().unwrap();
    let q95: f64 = mfd_row[6].parse().unwrap();
    assert!((q05 - type7(0.05)).abs() < 1e-5);
    assert!((q50 - type7(0.50)).abs() < 1e-5);
    assert!((q95 - type7(0.95)).abs() < 1e-5);

    // Combined summary carries both scenarios.
    let combined = read(&report_dir.join("combined_summary.csv"));
    assert!(combined.lines().any(|l| l.starts_with("s1,")));
    assert!(combined.lines().any(|l| l.starts_with("s2,")));
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn report_of_empty_directory_exits_2() {
    let dir = tmp_dir("report_empty");
    let empty = dir.join("empty");
    std::fs::create_dir_all(&empty).unwrap();
    let out = mfd(
        &[
            "report",
            "--inputs",
            empty.to_str().unwrap(),
            "--out",
            dir.join("out").to_str().unwrap(),
        ],
        &[],
    );
    assert_eq!(exit_code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("summary.csv"));
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn report_rejects_schema_mismatch() {
    let dir = tmp_dir("report_schema");
    let study = dir.join("study");
    std::fs::create_dir_all(&study).unwrap();
    std::fs::write(study.join("summary.csv"), "wrong,header\n1,2\n").unwrap();
    std::fs::write(study.join("replications.csv"), "also,wrong\n").unwrap();
    let out = mfd(
        &[
            "report",
            "--inputs",
            study.to_str().unwrap(),
            "--out",
            dir.join("out").to_str().unwrap(),
        ],
        &[],
    );
    assert_eq!(exit_code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("header mismatch"));
    std::fs::remove_dir_all(&dir).ok();
}
