//! Time-to-first-fever efficacy under proportional hazards.
//!
//! The any-cause first-fever hazard factors as
//! `lambda(t) exp{alpha + omega z + gamma g + iota z*g + beta^T x}` when the
//! latent malaria and non-malaria fever processes are conditionally
//! independent with a shared baseline. Efficacy is recovered from the
//! fitted coefficients as
//! `tau = 1 - (exp(omega + gamma + iota) - exp(omega)) / (exp(gamma) - 1)`,
//! with delta-method standard errors from the partial-likelihood
//! information. The interaction coefficient is named `iota` here; the
//! baseline hazard keeps the conventional lambda.

use rand::Rng;

use crate::data::{DatasetBuilder, Outcome, OutcomeKind, TrialDataset};
use crate::error::{Error, Result};
use crate::estimators::{
    bounded_ci, bounded_tau, wald_ci, EfficacyEstimate, EstimateFlags, EstimationOptions, Method,
};
use crate::linalg::{invert_sym, solve_sym_dropping};
use crate::num::{cast, Scalar};
use crate::seed;

const MAX_ITER: usize = 50;
const MAX_HALVINGS: usize = 30;
const SCORE_TOL_PER_EVENT: f64 = 1e-9;
/// |exp(gamma) - 1| below this marks the Mendelian factor too weak for a
/// stable ratio.
const WEAK_FACTOR_GUARD: f64 = 1e-6;
/// Coefficients beyond this magnitude indicate monotone likelihood
/// (some cell without events).
const MONOTONE_BOUND: f64 = 20.0;

/// Fitted Cox model for the factorial hazard.
#[derive(Debug, Clone)]
pub struct CoxFit<F> {
    /// Coefficient on Z.
    pub omega: F,
    /// Coefficient on G.
    pub gamma: F,
    /// Coefficient on the Z x G interaction.
    pub iota: F,
    /// Covariate coefficients.
    pub beta_x: Vec<F>,
    /// Observed information of the partial likelihood at the optimum,
    /// row-major p x p with column order (z, g, z*g, x...).
    pub info: Vec<F>,
    pub converged: bool,
    pub iterations: usize,
    pub n_events: usize,
    /// Set when coefficients ran away, e.g. a (z, g) cell without events.
    pub monotone: bool,
}

impl<F: Scalar> CoxFit<F> {
    pub fn n_coefs(&self) -> usize {
        3 + self.beta_x.len()
    }

    fn coef_vec(&self) -> Vec<F> {
        let mut v = vec![self.omega, self.gamma, self.iota];
        v.extend_from_slice(&self.beta_x);
        v
    }
}

struct SortedSurvival<F> {
    /// Row indices ordered by ascending time.
    order: Vec<usize>,
    times: Vec<F>,
    events: Vec<bool>,
    /// Covariate rows (z, g, z*g, x...).
    x: Vec<Vec<F>>,
    p: usize,
}

fn prepare<F: Scalar>(ds: &TrialDataset<F>) -> Result<SortedSurvival<F>> {
    if ds.outcome_kind() != OutcomeKind::Survival {
        return Err(Error::Validation("Cox fit requires survival outcomes".into()));
    }
    let n = ds.n();
    let d = ds.n_covariates();
    let p = 3 + d;
    let mut times = Vec::with_capacity(n);
    let mut events = Vec::with_capacity(n);
    let mut x = Vec::with_capacity(n);
    for r in ds.records() {
        let (time, event) = match r.outcome {
            Outcome::Survival { time, event } => (time, event),
            _ => unreachable!(),
        };
        times.push(time);
        events.push(event);
        let zf = if r.z { F::one() } else { F::zero() };
        let gf = if r.g { F::one() } else { F::zero() };
        let mut row = Vec::with_capacity(p);
        row.push(zf);
        row.push(gf);
        row.push(zf * gf);
        row.extend_from_slice(&r.covariates);
        x.push(row);
    }
    if !events.iter().any(|&e| e) {
        return Err(Error::Validation("Cox fit requires at least one event".into()));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| times[a].partial_cmp(&times[b]).expect("finite times"));
    Ok(SortedSurvival { order, times, events, x, p })
}

/// Log partial likelihood, score, and observed information under Breslow
/// tie handling. Walks event times from the largest down, growing the
/// risk-set sums incrementally.
fn breslow_quantities<F: Scalar>(
    data: &SortedSurvival<F>,
    beta: &[F],
) -> (F, Vec<F>, Vec<F>) {
    let p = data.p;
    let mut loglik = F::zero();
    let mut score = vec![F::zero(); p];
    let mut info = vec![F::zero(); p * p];

    let mut s0 = F::zero();
    let mut s1 = vec![F::zero(); p];
    let mut s2 = vec![F::zero(); p * p];

    let n = data.order.len();
    let mut pos = n;
    while pos > 0 {
        // Group all subjects sharing this time; they all enter the risk set
        // before the group's events are scored.
        let t = data.times[data.order[pos - 1]];
        let group_end = pos;
        while pos > 0 && data.times[data.order[pos - 1]] == t {
            pos -= 1;
        }
        let mut d_events = 0usize;
        let mut event_eta_sum = F::zero();
        let mut event_x_sum = vec![F::zero(); p];
        for &i in &data.order[pos..group_end] {
            let xi = &data.x[i];
            let eta = xi.iter().zip(beta).fold(F::zero(), |acc, (&x, &b)| acc + x * b);
            let w = eta.exp();
            s0 = s0 + w;
            for a in 0..p {
                let wxa = w * xi[a];
                s1[a] = s1[a] + wxa;
                for b in a..p {
                    s2[a * p + b] = s2[a * p + b] + wxa * xi[b];
                }
            }
            if data.events[i] {
                d_events += 1;
                event_eta_sum = event_eta_sum + eta;
                for a in 0..p {
                    event_x_sum[a] = event_x_sum[a] + xi[a];
                }
            }
        }
        if d_events > 0 {
            let d: F = cast(d_events as f64);
            loglik = loglik + event_eta_sum - d * s0.ln();
            for a in 0..p {
                let mean_a = s1[a] / s0;
                score[a] = score[a] + event_x_sum[a] - d * mean_a;
                for b in a..p {
                    let mean_b = s1[b] / s0;
                    info[a * p + b] =
                        info[a * p + b] + d * (s2[a * p + b] / s0 - mean_a * mean_b);
                }
            }
        }
    }
    for a in 0..data.p {
        for b in 0..a {
            info[a * p + b] = info[b * p + a];
        }
    }
    (loglik, score, info)
}

/// Maximum partial likelihood estimation by Newton-Raphson with
/// step-halving; Breslow handling of tied event times.
pub fn fit_cox<F: Scalar>(ds: &TrialDataset<F>) -> Result<CoxFit<F>> {
    let data = prepare(ds)?;
    let p = data.p;
    let n_events = data.events.iter().filter(|&&e| e).count();
    let score_tol = cast::<F>(SCORE_TOL_PER_EVENT) * cast::<F>(n_events.max(1) as f64);
    let half: F = cast(0.5);

    let mut beta = vec![F::zero(); p];
    let (mut loglik, mut score, mut info) = breslow_quantities(&data, &beta);
    let mut converged = false;
    let mut iterations = 0;

    for iter in 1..=MAX_ITER {
        iterations = iter;
        let max_score = score.iter().fold(F::zero(), |m, s| m.max(s.abs()));
        if max_score < score_tol {
            converged = true;
            break;
        }
        let step = solve_sym_dropping(&info, &score, p);
        let mut candidate: Vec<F> = beta.iter().zip(&step.x).map(|(&b, &d)| b + d).collect();
        let mut out = breslow_quantities(&data, &candidate);
        // Accept steps within float noise of the current log-likelihood so
        // the final Newton polish near the optimum is not rejected.
        let ll_tol = cast::<F>(1e-10) * (F::one() + loglik.abs());
        let mut halvings = 0;
        while out.0 < loglik - ll_tol && halvings < MAX_HALVINGS {
            candidate = beta
                .iter()
                .zip(&candidate)
                .map(|(&b, &c)| half * (b + c))
                .collect();
            out = breslow_quantities(&data, &candidate);
            halvings += 1;
        }
        if out.0 < loglik - ll_tol {
            break;
        }
        beta = candidate;
        loglik = out.0;
        score = out.1;
        info = out.2;
    }

    let monotone_bound: F = cast(MONOTONE_BOUND);
    let monotone = beta.iter().any(|b| b.abs() > monotone_bound);
    Ok(CoxFit {
        omega: beta[0],
        gamma: beta[1],
        iota: beta[2],
        beta_x: beta[3..].to_vec(),
        info,
        converged,
        iterations,
        n_events,
        monotone,
    })
}

/// Maximum absolute partial-likelihood score component at the fit, for
/// checking the estimating equations.
pub fn max_abs_score<F: Scalar>(ds: &TrialDataset<F>, fit: &CoxFit<F>) -> Result<F> {
    let data = prepare(ds)?;
    let (_, score, _) = breslow_quantities(&data, &fit.coef_vec());
    Ok(score.iter().fold(F::zero(), |m, s| m.max(s.abs())))
}

// ---------------------------------------------------------------------------
// Efficacy on the hazard scale
// ---------------------------------------------------------------------------

/// tau from the factorial hazard coefficients:
/// 1 - (exp(omega + gamma + iota) - exp(omega)) / (exp(gamma) - 1).
pub fn cox_tau_from_coefs<F: Scalar>(omega: F, gamma: F, iota: F) -> Result<F> {
    let denom = gamma.exp() - F::one();
    if denom == F::zero() {
        return Err(Error::Numerical(
            "hazard-scale efficacy undefined: exp(gamma) - 1 is zero (factor has no effect)"
                .into(),
        ));
    }
    Ok(F::one() - ((omega + gamma + iota).exp() - omega.exp()) / denom)
}

/// Plug-in efficacy from a fitted Cox model.
pub fn cox_mfd_tau<F: Scalar>(fit: &CoxFit<F>) -> Result<F> {
    cox_tau_from_coefs(fit.omega, fit.gamma, fit.iota)
}

/// Analytic gradient of tau with respect to (omega, gamma, iota).
pub fn cox_tau_gradient<F: Scalar>(omega: F, gamma: F, iota: F) -> [F; 3] {
    let a = (omega + gamma + iota).exp();
    let b = omega.exp();
    let c = gamma.exp();
    let d = c - F::one();
    [
        -(a - b) / d,
        -(a * d - (a - b) * c) / (d * d),
        -a / d,
    ]
}

/// Delta-method variance of the plug-in efficacy: the gradient against the
/// (omega, gamma, iota) block of the inverse information.
pub fn cox_mfd_variance<F: Scalar>(fit: &CoxFit<F>) -> Result<F> {
    if !fit.converged {
        return Err(Error::NonConvergence(
            "Cox fit did not converge; variance unavailable".into(),
        ));
    }
    let p = fit.n_coefs();
    let inv = invert_sym(&fit.info, p)?;
    let g = cox_tau_gradient(fit.omega, fit.gamma, fit.iota);
    let mut var = F::zero();
    for a in 0..3 {
        for b in 0..3 {
            var = var + g[a] * inv[a * p + b] * g[b];
        }
    }
    Ok(var.max(F::zero()))
}

/// The hazard-scale naive estimator 1 - exp(omega): consistent for a convex
/// combination of tau and the spillover efficacy, hence a lower bound when
/// spillover does not exceed tau.
pub fn cox_naive_tau<F: Scalar>(fit: &CoxFit<F>) -> F {
    F::one() - fit.omega.exp()
}

/// Delta-method variance of the naive estimator.
pub fn cox_naive_variance<F: Scalar>(fit: &CoxFit<F>) -> Result<F> {
    let p = fit.n_coefs();
    let inv = invert_sym(&fit.info, p)?;
    let e = fit.omega.exp();
    Ok((e * e * inv[0]).max(F::zero()))
}

/// Full hazard-scale MFD estimate with Wald inference.
pub fn cox_mfd_estimate<F: Scalar>(
    fit: &CoxFit<F>,
    opts: &EstimationOptions<F>,
) -> Result<EfficacyEstimate<F>> {
    let tau = cox_mfd_tau(fit)?;
    let var = cox_mfd_variance(fit)?;
    let weak = (fit.gamma.exp() - F::one()).abs() <= cast(WEAK_FACTOR_GUARD);
    Ok(EfficacyEstimate {
        method: Method::CoxMfd,
        tau_hat: tau,
        se: var.sqrt(),
        ci: wald_ci(tau, var, opts.alpha),
        flags: EstimateFlags {
            weak_denominator: weak,
            nonconverged_glm: !fit.converged,
            clipped_at_bound: false,
        },
    })
}

/// Hazard-scale naive estimate with Wald inference.
pub fn cox_naive_estimate<F: Scalar>(
    fit: &CoxFit<F>,
    opts: &EstimationOptions<F>,
) -> Result<EfficacyEstimate<F>> {
    let tau = cox_naive_tau(fit);
    let var = cox_naive_variance(fit)?;
    Ok(EfficacyEstimate {
        method: Method::CoxNaive,
        tau_hat: tau,
        se: var.sqrt(),
        ci: wald_ci(tau, var, opts.alpha),
        flags: EstimateFlags {
            nonconverged_glm: !fit.converged,
            ..Default::default()
        },
    })
}

/// Bounded estimator on the hazard scale; same construction as the
/// count-scale version.
pub fn cox_bounded_estimate<F: Scalar>(
    mfd: &EfficacyEstimate<F>,
    naive: &EfficacyEstimate<F>,
    opts: &EstimationOptions<F>,
) -> Result<EfficacyEstimate<F>> {
    let (tau, clipped) = bounded_tau(mfd.tau_hat, naive, opts.alpha_tilde);
    let ci = bounded_ci(mfd, naive, opts.alpha, opts.alpha0)?;
    Ok(EfficacyEstimate {
        method: Method::CoxBounded,
        tau_hat: tau,
        se: mfd.se,
        ci,
        flags: EstimateFlags {
            clipped_at_bound: clipped,
            weak_denominator: mfd.flags.weak_denominator,
            nonconverged_glm: mfd.flags.nonconverged_glm || naive.flags.nonconverged_glm,
        },
    })
}

/// All three hazard-scale estimates from one fit.
pub struct SurvivalAnalysis<F> {
    pub fit: CoxFit<F>,
    pub mfd: EfficacyEstimate<F>,
    pub naive: EfficacyEstimate<F>,
    pub bounded: EfficacyEstimate<F>,
}

pub fn analyze_survival<F: Scalar>(
    ds: &TrialDataset<F>,
    opts: &EstimationOptions<F>,
) -> Result<SurvivalAnalysis<F>> {
    let fit = fit_cox(ds)?;
    let mfd = cox_mfd_estimate(&fit, opts)?;
    let naive = cox_naive_estimate(&fit, opts)?;
    let bounded = cox_bounded_estimate(&mfd, &naive, opts)?;
    Ok(SurvivalAnalysis { fit, mfd, naive, bounded })
}

// ---------------------------------------------------------------------------
// Scenario generation
// ---------------------------------------------------------------------------

/// Generative parameters of a proportional-hazards trial: latent malaria
/// and non-malaria first-fever times are independent exponentials sharing a
/// constant baseline hazard; observation is administratively censored at
/// the follow-up horizon.
#[derive(Debug, Clone, Copy)]
pub struct SurvivalScenario<F> {
    /// Constant baseline hazard rate per year.
    pub baseline_hazard: F,
    /// Malaria hazard multiplier.
    pub kappa: F,
    /// Non-malaria hazard multiplier.
    pub phi: F,
    pub tau: F,
    pub nu: F,
    pub eta: F,
    /// Follow-up horizon in years.
    pub horizon: F,
    /// Mendelian factor prevalence.
    pub p_g: F,
    /// Total subjects, split equally across arms.
    pub n: usize,
}

impl<F: Scalar> SurvivalScenario<F> {
    pub fn validate(&self) -> Result<()> {
        let checks = [
            (self.baseline_hazard > F::zero(), "baseline hazard must be positive"),
            (self.kappa > F::zero(), "kappa must be positive"),
            (self.phi >= F::zero(), "phi must be nonnegative"),
            (self.tau < F::one(), "tau must be < 1"),
            (self.nu < F::one(), "nu must be < 1"),
            (self.eta < F::one(), "eta must be < 1"),
            (self.horizon > F::zero(), "horizon must be positive"),
            (self.p_g > F::zero() && self.p_g < F::one(), "p_g must be in (0,1)"),
            (self.n >= 4, "n must be at least 4"),
        ];
        for (ok, msg) in checks {
            if !ok {
                return Err(Error::Parameter(msg.into()));
            }
        }
        Ok(())
    }
}

/// Map the generative parameters onto the factorial hazard coefficients
/// (alpha, omega, gamma, iota). Together with [`cox_tau_from_coefs`] this
/// round-trips tau exactly.
pub fn hazard_coefficients<F: Scalar>(
    kappa: F,
    phi: F,
    tau: F,
    nu: F,
    eta: F,
) -> (F, F, F, F) {
    let base = kappa + phi;
    let alpha = base.ln();
    let omega = ((kappa * (F::one() - tau) + phi * (F::one() - eta)) / base).ln();
    let gamma = ((kappa * (F::one() - nu) + phi) / base).ln();
    let iota = ((kappa * (F::one() - tau) * (F::one() - nu) + phi * (F::one() - eta)) / base)
        .ln()
        - omega
        - gamma;
    (alpha, omega, gamma, iota)
}

const TAG_G: u64 = 0;
const TAG_TIME_M: u64 = 1;
const TAG_TIME_NM: u64 = 2;

fn draw_exponential<F: Scalar>(rate: F, rng: &mut impl Rng) -> F {
    if rate <= F::zero() {
        return F::infinity();
    }
    // U in (0, 1): reject the zero so times stay strictly positive.
    let mut u: f64 = rng.gen();
    while u <= 0.0 {
        u = rng.gen();
    }
    -cast::<F>(u.ln()) / rate
}

/// Simulate one proportional-hazards trial. Subjects `0..n/2` receive the
/// vaccine; draws are keyed by (seed, subject, tag) so the output is a pure
/// function of the scenario and seed.
pub fn simulate_survival_trial<F: Scalar>(
    sc: &SurvivalScenario<F>,
    master_seed: u64,
) -> Result<TrialDataset<F>> {
    sc.validate()?;
    let mut builder = DatasetBuilder::new(OutcomeKind::Survival);
    let one = F::one();
    for i in 0..sc.n {
        let z = i < sc.n / 2;
        let g = {
            let mut rng = seed::stream(master_seed, &[i as u64, TAG_G]);
            rng.gen::<f64>() < sc.p_g.to_f64().unwrap()
        };
        let rate_m = sc.baseline_hazard
            * sc.kappa
            * if z { one - sc.tau } else { one }
            * if g { one - sc.nu } else { one };
        let rate_nm = sc.baseline_hazard * sc.phi * if z { one - sc.eta } else { one };
        let t_m = {
            let mut rng = seed::stream(master_seed, &[i as u64, TAG_TIME_M]);
            draw_exponential(rate_m, &mut rng)
        };
        let t_nm = {
            let mut rng = seed::stream(master_seed, &[i as u64, TAG_TIME_NM]);
            draw_exponential(rate_nm, &mut rng)
        };
        let first = t_m.min(t_nm);
        let (time, event) = if first < sc.horizon {
            (first, true)
        } else {
            (sc.horizon, false)
        };
        builder.push("1", z, g, vec![], Outcome::Survival { time, event })?;
    }
    builder.finish()
}
