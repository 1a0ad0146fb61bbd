//! Monte Carlo study engine for the count-outcome estimators.
//!
//! Each simulated subject carries latent malaria-attributable and
//! non-malaria fever counts drawn from negatively dependent negative
//! binomial distributions (Gaussian copula); the estimators only ever see
//! their sum. Rates are calibrated so the placebo arm averages a target
//! number of any-cause fevers per child-year at a chosen case specificity.
//!
//! Determinism: every draw comes from a stream keyed by
//! (seed, replication, subject, tag), so a study is a pure function of its
//! configuration, independent of execution order.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::data::{DatasetBuilder, Outcome, OutcomeKind, TrialDataset};
use crate::error::{Error, Result};
use crate::estimators::{analyze_counts, EfficacyEstimate, EstimationOptions, Method};
use crate::num::{cast, cast_usize, Scalar};
use crate::seed;
use crate::stats::{normal_cdf, quantile_sorted};

/// Generative and inference settings of one simulation scenario.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScenarioConfig<F> {
    /// Total subjects, split equally across arms.
    pub n: usize,
    /// Number of sites (subjects assigned round-robin; prevalence is
    /// common across sites).
    pub sites: usize,
    pub tau: F,
    pub nu: F,
    pub eta: F,
    /// Case specificity target in the placebo arm.
    pub s: F,
    /// Mendelian factor prevalence.
    pub p_g: F,
    /// Gaussian copula dependence between the two latent counts.
    pub rho: F,
    /// Negative binomial overdispersion (variance mu + mu^2/r).
    pub r: F,
    /// Placebo-arm any-cause fevers per child-year.
    pub total_mean: F,
    /// Lognormal sd of the individual efficacies tau_i, nu_i.
    pub effi_sd: F,
    /// Lognormal sd of the subject-level noise terms.
    pub noise_sd: F,
    /// Covariate loading of the malaria mean.
    pub x_load_m: F,
    /// Covariate loading of the non-malaria mean.
    pub x_load_nm: F,
    pub n_sim: usize,
    pub seed: u64,
    pub alpha: F,
    pub alpha0: F,
    pub alpha_tilde: F,
}

impl<F: Scalar> Default for ScenarioConfig<F> {
    fn default() -> Self {
        Self {
            n: 2000,
            sites: 1,
            tau: cast(0.5),
            nu: cast(0.5),
            eta: cast(0.0),
            s: cast(0.8),
            p_g: cast(0.2),
            rho: cast(-0.1),
            r: cast(10.0),
            total_mean: cast(1.5),
            effi_sd: cast(0.05),
            noise_sd: cast(0.05),
            x_load_m: cast(0.05),
            x_load_nm: cast(0.075),
            n_sim: 500,
            seed: 20250801,
            alpha: cast(0.05),
            alpha0: cast(0.001),
            alpha_tilde: cast(0.001),
        }
    }
}

impl<F: Scalar> ScenarioConfig<F> {
    pub fn validate(&self) -> Result<()> {
        let one = F::one();
        let checks = [
            (self.n >= 8, "n must be at least 8"),
            (self.sites >= 1, "sites must be at least 1"),
            (self.n.is_multiple_of(2 * self.sites), "n must be divisible by 2*sites"),
            (self.tau < one, "tau must be < 1"),
            (self.nu < one, "nu must be < 1"),
            (self.eta < one, "eta must be < 1"),
            (self.s > F::zero() && self.s <= one, "s must be in (0, 1]"),
            (self.p_g > F::zero() && self.p_g < one, "p_g must be in (0, 1)"),
            (self.rho > -one && self.rho < one, "rho must be in (-1, 1)"),
            (self.r > F::zero(), "r must be positive"),
            (self.total_mean > F::zero(), "total_mean must be positive"),
            (self.effi_sd >= F::zero(), "effi_sd must be nonnegative"),
            (self.noise_sd >= F::zero(), "noise_sd must be nonnegative"),
            (self.n_sim >= 1, "n_sim must be at least 1"),
            (self.alpha > F::zero() && self.alpha < one, "alpha must be in (0, 1)"),
            (
                self.alpha0 >= F::zero() && self.alpha0 <= self.alpha / cast(2.0),
                "alpha0 must be in [0, alpha/2]",
            ),
            (
                self.alpha_tilde > F::zero() && self.alpha_tilde < one,
                "alpha_tilde must be in (0, 1)",
            ),
        ];
        for (ok, msg) in checks {
            if !ok {
                return Err(Error::Parameter(msg.into()));
            }
        }
        Ok(())
    }

    pub fn estimation_options(&self) -> EstimationOptions<F> {
        EstimationOptions {
            p_z: cast(0.5),
            alpha: self.alpha,
            alpha0: self.alpha0,
            alpha_tilde: self.alpha_tilde,
        }
    }

    /// Parse `key = value` lines (UTF-8, `#` comments). Unknown keys are
    /// schema violations; missing keys take defaults.
    pub fn from_key_values(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: idx + 1,
                msg: format!("expected key = value, got {raw:?}"),
            })?;
            let key = key.trim();
            let value = value.trim();
            let parse_err = |msg: String| Error::Parse { line: idx + 1, msg };
            let real = |v: &str| -> Result<F> {
                v.parse::<f64>()
                    .map(cast)
                    .map_err(|_| parse_err(format!("{key} must be a real number, got {v:?}")))
            };
            let integer = |v: &str| -> Result<usize> {
                v.parse::<usize>()
                    .map_err(|_| parse_err(format!("{key} must be a nonnegative integer, got {v:?}")))
            };
            match key {
                "n" => cfg.n = integer(value)?,
                "sites" => cfg.sites = integer(value)?,
                "tau" => cfg.tau = real(value)?,
                "nu" => cfg.nu = real(value)?,
                "eta" => cfg.eta = real(value)?,
                "s" => cfg.s = real(value)?,
                "p_g" => cfg.p_g = real(value)?,
                "rho" => cfg.rho = real(value)?,
                "r" => cfg.r = real(value)?,
                "total_mean" => cfg.total_mean = real(value)?,
                "effi_sd" => cfg.effi_sd = real(value)?,
                "noise_sd" => cfg.noise_sd = real(value)?,
                "x_load_m" => cfg.x_load_m = real(value)?,
                "x_load_nm" => cfg.x_load_nm = real(value)?,
                "n_sim" => cfg.n_sim = integer(value)?,
                "seed" => {
                    cfg.seed = value.parse::<u64>().map_err(|_| {
                        parse_err(format!("seed must be a u64, got {value:?}"))
                    })?
                }
                "alpha" => cfg.alpha = real(value)?,
                "alpha0" => cfg.alpha0 = real(value)?,
                "alpha_tilde" => cfg.alpha_tilde = real(value)?,
                other => {
                    return Err(parse_err(format!("unknown configuration key {other:?}")))
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Key/value rendering in the file schema (round-trips through
    /// [`Self::from_key_values`]).
    pub fn to_key_values(&self) -> String {
        format!(
            "n = {}\nsites = {}\ntau = {}\nnu = {}\neta = {}\ns = {}\np_g = {}\nrho = {}\nr = {}\ntotal_mean = {}\neffi_sd = {}\nnoise_sd = {}\nx_load_m = {}\nx_load_nm = {}\nn_sim = {}\nseed = {}\nalpha = {}\nalpha0 = {}\nalpha_tilde = {}\n",
            self.n,
            self.sites,
            self.tau,
            self.nu,
            self.eta,
            self.s,
            self.p_g,
            self.rho,
            self.r,
            self.total_mean,
            self.effi_sd,
            self.noise_sd,
            self.x_load_m,
            self.x_load_nm,
            self.n_sim,
            self.seed,
            self.alpha,
            self.alpha0,
            self.alpha_tilde,
        )
    }
}

/// Rates (kappa, phi) solving the placebo-arm calibration system:
/// expected any-cause total equals `total_mean` and the expected malaria
/// fraction equals `s`, i.e. kappa = s t / (1 - p_g nu), phi = (1 - s) t.
pub fn calibrate_rates<F: Scalar>(cfg: &ScenarioConfig<F>) -> (F, F) {
    let kappa = cfg.s * cfg.total_mean / (F::one() - cfg.p_g * cfg.nu);
    let phi = (F::one() - cfg.s) * cfg.total_mean;
    (kappa, phi)
}

/// One simulated subject, including the latent split of its fever count.
/// Estimators must only see `y_m + y_nm`.
#[derive(Debug, Clone)]
pub struct SimSubject<F> {
    pub z: bool,
    pub g: bool,
    pub x: F,
    pub mu_m: F,
    pub mu_nm: F,
    pub y_m: u64,
    pub y_nm: u64,
}

impl<F: Scalar> SimSubject<F> {
    pub fn total(&self) -> u64 {
        self.y_m + self.y_nm
    }
}

const TAG_G: u64 = 0;
const TAG_X: u64 = 1;
const TAG_TAU: u64 = 2;
const TAG_NU: u64 = 3;
const TAG_EPS_M: u64 = 4;
const TAG_EPS_NM: u64 = 5;
const TAG_COPULA: u64 = 6;

fn standard_normal(rng: &mut impl Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// Mean-one lognormal factor exp(sd N - sd^2/2).
fn lognormal_factor(sd: f64, rng: &mut impl Rng) -> f64 {
    (sd * standard_normal(rng) - sd * sd / 2.0).exp()
}

/// Draw one subject of the given arm. `path` identifies the subject
/// (e.g. [replication, subject index]); each elementary draw uses its own
/// tagged stream.
pub fn draw_subject<F: Scalar>(
    cfg: &ScenarioConfig<F>,
    kappa: F,
    phi: F,
    z: bool,
    path: &[u64],
) -> SimSubject<F> {
    let tagged = |tag: u64| {
        let mut parts = path.to_vec();
        parts.push(tag);
        seed::stream(cfg.seed, &parts)
    };
    let g = tagged(TAG_G).gen::<f64>() < cfg.p_g.to_f64().unwrap();
    let x = standard_normal(&mut tagged(TAG_X));

    let effi_sd = cfg.effi_sd.to_f64().unwrap();
    let one_minus_tau_i =
        (1.0 - cfg.tau.to_f64().unwrap()) * lognormal_factor(effi_sd, &mut tagged(TAG_TAU));
    let one_minus_nu_i =
        (1.0 - cfg.nu.to_f64().unwrap()) * lognormal_factor(effi_sd, &mut tagged(TAG_NU));

    let x_load_m = cfg.x_load_m.to_f64().unwrap();
    let x_load_nm = cfg.x_load_nm.to_f64().unwrap();
    let x_m = (x_load_m * x - x_load_m * x_load_m / 2.0).exp();
    let x_nm = (x_load_nm * x - x_load_nm * x_load_nm / 2.0).exp();

    let noise_sd = cfg.noise_sd.to_f64().unwrap();
    let eps_m = lognormal_factor(noise_sd, &mut tagged(TAG_EPS_M));
    let eps_nm = lognormal_factor(noise_sd, &mut tagged(TAG_EPS_NM));

    let mu_m = kappa.to_f64().unwrap()
        * if g { one_minus_nu_i } else { 1.0 }
        * if z { one_minus_tau_i } else { 1.0 }
        * x_m
        * eps_m;
    let mu_nm = phi.to_f64().unwrap() * x_nm * eps_nm;

    let (y_m, y_nm) = nb_copula_pair(
        mu_m,
        mu_nm,
        cfg.r.to_f64().unwrap(),
        cfg.rho.to_f64().unwrap(),
        &mut tagged(TAG_COPULA),
    );

    SimSubject {
        z,
        g,
        x: cast(x),
        mu_m: cast(mu_m),
        mu_nm: cast(mu_nm),
        y_m,
        y_nm,
    }
}

/// Dependent negative binomial pair via a Gaussian copula: correlated
/// standard normals mapped through the normal CDF and inverted through
/// each marginal's quantile function.
pub fn nb_copula_pair(
    mu_m: f64,
    mu_nm: f64,
    r: f64,
    rho: f64,
    rng: &mut impl Rng,
) -> (u64, u64) {
    let z1 = standard_normal(rng);
    let z2 = rho * z1 + (1.0 - rho * rho).sqrt() * standard_normal(rng);
    let u1: f64 = normal_cdf(z1);
    let u2: f64 = normal_cdf(z2);
    (nb_quantile(u1, mu_m, r), nb_quantile(u2, mu_nm, r))
}

/// Quantile of NB(mu, r) in the mean/overdispersion parameterization
/// (variance mu + mu^2/r) by cumulative-probability search, capped at the
/// 1 - 1e-12 quantile.
pub fn nb_quantile(u: f64, mu: f64, r: f64) -> u64 {
    if mu <= 0.0 {
        return 0;
    }
    let target = u.min(1.0 - 1e-12);
    let p_succ = r / (r + mu);
    let q_fail = mu / (r + mu);
    let mut pmf = p_succ.powf(r);
    let mut cdf = pmf;
    let mut k = 0u64;
    while cdf < target {
        pmf *= (k as f64 + r) / (k as f64 + 1.0) * q_fail;
        cdf += pmf;
        k += 1;
        if pmf < 1e-300 {
            break;
        }
    }
    k
}

/// Everything recorded for one replication: the observed-data estimates
/// and latent calibration diagnostics.
#[derive(Debug, Clone)]
pub struct RepOutcome<F> {
    pub rep_index: usize,
    pub estimates: Vec<EfficacyEstimate<F>>,
}

/// Simulate a full trial dataset (subjects only; latents discarded).
pub fn simulate_trial<F: Scalar>(
    cfg: &ScenarioConfig<F>,
    kappa: F,
    phi: F,
    rep_index: usize,
) -> Result<TrialDataset<F>> {
    let mut builder = DatasetBuilder::new(OutcomeKind::Count);
    for i in 0..cfg.n {
        let z = i < cfg.n / 2;
        let subject = draw_subject(cfg, kappa, phi, z, &[rep_index as u64, i as u64]);
        let site = format!("{}", (i % cfg.sites) + 1);
        builder.push(
            &site,
            subject.z,
            subject.g,
            vec![subject.x],
            Outcome::Count(subject.total()),
        )?;
    }
    builder.finish()
}

/// Run one replication: simulate, estimate with the MFD, naive, and
/// bounded procedures, and return the estimates. Errors represent failed
/// replications and are recorded, not fatal.
pub fn run_replication<F: Scalar>(
    cfg: &ScenarioConfig<F>,
    kappa: F,
    phi: F,
    rep_index: usize,
) -> Result<RepOutcome<F>> {
    let ds = simulate_trial(cfg, kappa, phi, rep_index)?;
    let analysis = analyze_counts(&ds, &cfg.estimation_options())?;
    if analysis.mfd.flags.nonconverged_glm || analysis.naive.flags.nonconverged_glm {
        return Err(Error::NonConvergence(format!(
            "replication {rep_index}: working model did not converge"
        )));
    }
    Ok(RepOutcome {
        rep_index,
        estimates: vec![analysis.mfd, analysis.naive, analysis.bounded],
    })
}

/// Aggregate metrics for one estimator across replications.
#[derive(Debug, Clone)]
pub struct EstimatorSummary<F> {
    pub method: Method,
    pub mean_tau: F,
    /// |mean - tau| / |tau| (plain |mean| when tau = 0).
    pub prop_abs_bias: F,
    pub rmse: F,
    /// RMSE over the central 95% of estimates; reported alongside the
    /// untrimmed value because weak-factor settings produce rare extreme
    /// ratios that dominate the plain RMSE.
    pub rmse_trimmed: F,
    /// Fraction of two-sided CIs containing the true tau.
    pub coverage: F,
    /// Fraction of two-sided CIs excluding zero.
    pub power: F,
}

/// Study-level aggregation of all replications.
#[derive(Debug, Clone)]
pub struct SimSummary<F> {
    pub estimators: Vec<EstimatorSummary<F>>,
    pub n_reps: usize,
    pub n_failed: usize,
}

/// Serial study runner; a pure function of the configuration.
pub struct StudyReport<F> {
    pub summary: SimSummary<F>,
    /// One slot per replication; `None` marks a failed replication.
    pub outcomes: Vec<Option<RepOutcome<F>>>,
}

/// Aggregate replication outcomes (slots with `None` are failures).
pub fn summarize<F: Scalar>(
    cfg: &ScenarioConfig<F>,
    outcomes: &[Option<RepOutcome<F>>],
) -> Result<SimSummary<F>> {
    let successes: Vec<&RepOutcome<F>> = outcomes.iter().flatten().collect();
    if successes.is_empty() {
        return Err(Error::Numerical("all replications failed".into()));
    }
    let methods: Vec<Method> = successes[0].estimates.iter().map(|e| e.method).collect();
    let tau = cfg.tau;
    let mut estimators = Vec::with_capacity(methods.len());
    for (slot, &method) in methods.iter().enumerate() {
        let ests: Vec<&EfficacyEstimate<F>> =
            successes.iter().map(|o| &o.estimates[slot]).collect();
        let n_f: F = cast_usize(ests.len());
        let mean_tau = ests.iter().map(|e| e.tau_hat).fold(F::zero(), |a, b| a + b) / n_f;
        let prop_abs_bias = if tau == F::zero() {
            mean_tau.abs()
        } else {
            (mean_tau - tau).abs() / tau.abs()
        };
        let rmse = (ests
            .iter()
            .map(|e| (e.tau_hat - tau) * (e.tau_hat - tau))
            .fold(F::zero(), |a, b| a + b)
            / n_f)
            .sqrt();
        let rmse_trimmed = {
            let mut sorted: Vec<F> = ests.iter().map(|e| e.tau_hat).collect();
            sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite estimates"));
            let lo = quantile_sorted(&sorted, cast(0.025));
            let hi = quantile_sorted(&sorted, cast(0.975));
            let kept: Vec<F> = sorted.into_iter().filter(|t| *t >= lo && *t <= hi).collect();
            if kept.is_empty() {
                rmse
            } else {
                (kept
                    .iter()
                    .map(|t| (*t - tau) * (*t - tau))
                    .fold(F::zero(), |a, b| a + b)
                    / cast_usize::<F>(kept.len()))
                .sqrt()
            }
        };
        let coverage = cast_usize::<F>(
            ests.iter().filter(|e| e.ci.0 <= tau && tau <= e.ci.1).count(),
        ) / n_f;
        let power = cast_usize::<F>(
            ests.iter()
                .filter(|e| e.ci.0 > F::zero() || e.ci.1 < F::zero())
                .count(),
        ) / n_f;
        estimators.push(EstimatorSummary {
            method,
            mean_tau,
            prop_abs_bias,
            rmse,
            rmse_trimmed,
            coverage,
            power,
        });
    }
    Ok(SimSummary {
        estimators,
        n_reps: outcomes.len(),
        n_failed: outcomes.len() - successes.len(),
    })
}

/// Run the whole study serially.
pub fn run_study<F: Scalar>(cfg: &ScenarioConfig<F>) -> Result<StudyReport<F>> {
    cfg.validate()?;
    let (kappa, phi) = calibrate_rates(cfg);
    let outcomes: Vec<Option<RepOutcome<F>>> = (0..cfg.n_sim)
        .map(|rep| run_replication(cfg, kappa, phi, rep).ok())
        .collect();
    let summary = summarize(cfg, &outcomes)?;
    Ok(StudyReport { summary, outcomes })
}
