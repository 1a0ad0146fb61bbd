//! Cross-sectional efficacy estimators and influence-function inference.
//!
//! The substitution (MFD) estimator follows the two-step targeted fitting
//! procedure: a factorial Poisson working model, an optional targeting
//! update with site indicators and inverse-prevalence "clever" covariates,
//! counterfactual cell means with equal site weighting, and the ratio
//! contrast tau = 1 - (mu11 - mu10)/(mu01 - mu00). Inference is a plug-in
//! of the per-subject efficient influence function.

use std::fmt;

use crate::data::{zg_index, TrialDataset, ZG_CELLS};
use crate::error::{Error, Result};
use crate::glm::{
    build_design_initial, build_design_targeting, fit_poisson_glm, initial_row,
    linear_predictor, predict_mean, targeting_row, GlmFit,
};
use crate::num::{cast, cast_usize, Scalar};
use crate::stats::normal_quantile;

/// Relative scale of the weak-denominator guard: estimates whose
/// denominator falls below this multiple of the mean outcome are flagged,
/// not suppressed, so the bounded estimator can still clip them.
const DENOM_GUARD: f64 = 1e-8;

/// Estimator identity carried by every estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Mfd,
    Naive,
    SCorrected,
    Bounded,
    CoxMfd,
    CoxNaive,
    CoxBounded,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Method::Mfd => "mfd",
            Method::Naive => "naive",
            Method::SCorrected => "s_corrected",
            Method::Bounded => "bounded",
            Method::CoxMfd => "cox_mfd",
            Method::CoxNaive => "cox_naive",
            Method::CoxBounded => "cox_bounded",
        };
        write!(f, "{s}")
    }
}

/// Diagnostic flags attached to an estimate.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct EstimateFlags {
    /// |mu0| fell below the guard; the ratio is numerically fragile.
    pub weak_denominator: bool,
    /// Some working model did not converge.
    pub nonconverged_glm: bool,
    /// The bounded estimator clipped the point estimate.
    pub clipped_at_bound: bool,
}

impl EstimateFlags {
    pub fn any(&self) -> bool {
        self.weak_denominator || self.nonconverged_glm || self.clipped_at_bound
    }
}

impl fmt::Display for EstimateFlags {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut names = Vec::new();
        if self.weak_denominator {
            names.push("weak_denominator");
        }
        if self.nonconverged_glm {
            names.push("nonconverged_glm");
        }
        if self.clipped_at_bound {
            names.push("clipped_at_bound");
        }
        write!(f, "{}", names.join(";"))
    }
}

/// Point estimate with standard error and confidence interval.
#[derive(Debug, Clone)]
pub struct EfficacyEstimate<F> {
    pub method: Method,
    pub tau_hat: F,
    pub se: F,
    /// Two-sided interval at level 1 - alpha.
    pub ci: (F, F),
    pub flags: EstimateFlags,
}

/// Inference settings; `p_z` is the randomization probability, treated as
/// known by design.
#[derive(Debug, Clone, Copy)]
pub struct EstimationOptions<F> {
    pub p_z: F,
    pub alpha: F,
    pub alpha0: F,
    pub alpha_tilde: F,
}

impl<F: Scalar> Default for EstimationOptions<F> {
    fn default() -> Self {
        Self {
            p_z: cast(0.5),
            alpha: cast(0.05),
            alpha0: cast(0.001),
            alpha_tilde: cast(0.001),
        }
    }
}

/// Plug-in cell means and their column differences.
#[derive(Debug, Clone, Copy)]
pub struct MuEstimates<F> {
    pub mu11: F,
    pub mu10: F,
    pub mu01: F,
    pub mu00: F,
    /// mu11 - mu10.
    pub mu1: F,
    /// mu01 - mu00.
    pub mu0: F,
}

impl<F: Scalar> MuEstimates<F> {
    pub fn from_cells(mu11: F, mu10: F, mu01: F, mu00: F) -> Self {
        Self {
            mu11,
            mu10,
            mu01,
            mu00,
            mu1: mu11 - mu10,
            mu0: mu01 - mu00,
        }
    }

    pub fn cell(&self, z: bool, g: bool) -> F {
        match (z, g) {
            (true, true) => self.mu11,
            (true, false) => self.mu10,
            (false, true) => self.mu01,
            (false, false) => self.mu00,
        }
    }
}

/// Fitted working models of the two-step procedure. `fit1` is absent when
/// the targeting step is skipped (single-site trials).
#[derive(Debug, Clone)]
pub struct MfdModel<F> {
    pub fit0: GlmFit<F>,
    pub fit1: Option<GlmFit<F>>,
}

impl<F: Scalar> MfdModel<F> {
    pub fn converged(&self) -> bool {
        self.fit0.converged && self.fit1.as_ref().is_none_or(|f| f.converged)
    }
}

/// Fit the initial factorial model and, for multi-site data, the targeting
/// update. Single-site trials skip the update (the factorial model already
/// solves the influence-function equations there).
pub fn fit_mfd_model<F: Scalar>(ds: &TrialDataset<F>) -> Result<MfdModel<F>> {
    let y = ds.count_values()?;
    let dm0 = build_design_initial(ds);
    let fit0 = fit_poisson_glm(&dm0, &y)?;
    let fit1 = if ds.n_sites() > 1 && fit0.converged {
        let dm1 = build_design_targeting(ds, &fit0)?;
        Some(fit_poisson_glm(&dm1, &y)?)
    } else {
        None
    };
    Ok(MfdModel { fit0, fit1 })
}

/// Counterfactual fitted means mu1_hat(z, g, X_i) for every subject and
/// every (z, g) cell, indexed by [`zg_index`]. The initial model evaluated
/// at the counterfactual cell feeds the targeting offset.
pub fn counterfactual_means<F: Scalar>(
    ds: &TrialDataset<F>,
    model: &MfdModel<F>,
) -> Vec<[F; 4]> {
    let prevalences = ds.site_prevalences();
    let weights = ds.site_weights();
    let n_sites = ds.n_sites();
    ds.records()
        .iter()
        .map(|r| {
            std::array::from_fn(|idx| {
                let (z, g) = ZG_CELLS[idx];
                let eta0 = linear_predictor(&model.fit0, &initial_row(z, g, &r.covariates), F::zero());
                match &model.fit1 {
                    Some(fit1) => {
                        let row1 = targeting_row(
                            r.site,
                            n_sites,
                            z,
                            g,
                            prevalences[r.site],
                            weights[r.site],
                        );
                        predict_mean(fit1, &row1, eta0)
                    }
                    None => eta0.exp(),
                }
            })
        })
        .collect()
}

/// Equally-site-weighted average of a per-subject quantity:
/// (1/J) sum_j (1/I_j) sum_i v_i.
fn site_weighted_mean<F: Scalar>(ds: &TrialDataset<F>, values: impl Fn(usize) -> F) -> F {
    let j: F = cast_usize(ds.n_sites());
    let sizes = ds.site_sizes();
    let mut acc = F::zero();
    for (i, r) in ds.records().iter().enumerate() {
        acc = acc + values(i) / cast_usize::<F>(sizes[r.site]);
    }
    acc / j
}

/// Step-3 plug-in cell means mu_zg(P_n).
pub fn estimate_mu<F: Scalar>(ds: &TrialDataset<F>, model: &MfdModel<F>) -> MuEstimates<F> {
    let cf = counterfactual_means(ds, model);
    let mean_cell =
        |idx: usize| -> F { site_weighted_mean(ds, |i| cf[i][idx]) };
    MuEstimates::from_cells(
        mean_cell(zg_index(true, true)),
        mean_cell(zg_index(true, false)),
        mean_cell(zg_index(false, true)),
        mean_cell(zg_index(false, false)),
    )
}

/// The substitution estimator tau = 1 - mu1/mu0.
///
/// Errors only when the denominator is exactly zero; weak denominators are
/// the caller's concern (see [`mfd_estimate`]).
pub fn mfd_tau<F: Scalar>(mu: &MuEstimates<F>) -> Result<F> {
    if mu.mu0 == F::zero() {
        return Err(Error::Numerical(
            "efficacy undefined: mu01 - mu00 is exactly zero".into(),
        ));
    }
    Ok(F::one() - mu.mu1 / mu.mu0)
}

/// Marginal arm means m_z = P_n mu0_hat(z, G, X) under the initial fit with
/// observed G, equally site weighted.
pub fn naive_arm_means<F: Scalar>(ds: &TrialDataset<F>, fit0: &GlmFit<F>) -> (F, F) {
    let mean_for = |z: bool| -> F {
        site_weighted_mean(ds, |i| {
            let r = &ds.records()[i];
            predict_mean(fit0, &initial_row(z, r.g, &r.covariates), F::zero())
        })
    };
    (mean_for(true), mean_for(false))
}

/// The naive estimator 1 - m_1/m_0, treating every fever with parasitemia
/// as a case.
pub fn naive_tau<F: Scalar>(ds: &TrialDataset<F>, fit0: &GlmFit<F>) -> Result<F> {
    let (m1, m0) = naive_arm_means(ds, fit0);
    if m0 == F::zero() {
        return Err(Error::Numerical(
            "naive efficacy undefined: placebo-arm mean is zero".into(),
        ));
    }
    Ok(F::one() - m1 / m0)
}

/// Per-subject efficient influence function values for the four cell means.
#[derive(Debug, Clone)]
pub struct InfluenceValues<F> {
    /// phi_zg(P_n)(O_i), indexed by [`zg_index`].
    pub phi: Vec<[F; 4]>,
}

impl<F: Scalar> InfluenceValues<F> {
    /// phi_z = phi_z1 - phi_z0 for one subject.
    pub fn phi_z(&self, i: usize, z: bool) -> F {
        self.phi[i][zg_index(z, true)] - self.phi[i][zg_index(z, false)]
    }

    /// Equally-site-weighted empirical mean of each phi_zg; zero (to fit
    /// tolerance) once the influence-function equations are solved.
    pub fn site_weighted_means(&self, ds: &TrialDataset<F>) -> [F; 4] {
        let j: F = cast_usize(ds.n_sites());
        let sizes = ds.site_sizes();
        let mut acc = [F::zero(); 4];
        for (i, r) in ds.records().iter().enumerate() {
            for (slot, phi) in acc.iter_mut().zip(self.phi[i]) {
                *slot = *slot + phi / cast_usize::<F>(sizes[r.site]);
            }
        }
        acc.map(|v| v / j)
    }
}

/// Plug-in EIF values phi_zg(P_n)(O) for every subject:
/// indicator residual over q_j(G=g) q(Z=z), plus the counterfactual mean
/// centered at mu_zg(P_n).
pub fn influence_values<F: Scalar>(
    ds: &TrialDataset<F>,
    model: &MfdModel<F>,
    mu: &MuEstimates<F>,
    opts: &EstimationOptions<F>,
) -> Result<InfluenceValues<F>> {
    let prevalences = ds.site_prevalences();
    for (jdx, &p) in prevalences.iter().enumerate() {
        if p <= F::zero() || p >= F::one() {
            return Err(Error::Positivity(format!(
                "site {:?} has prevalence {p}; influence values require 0 < p < 1",
                ds.site_names()[jdx]
            )));
        }
    }
    let cf = counterfactual_means(ds, model);
    let one = F::one();
    let phi = ds
        .records()
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let y = r.count_value().expect("count dataset");
            std::array::from_fn(|idx| {
                let (z, g) = ZG_CELLS[idx];
                let m_hat = cf[i][idx];
                let mut value = m_hat - mu.cell(z, g);
                if r.z == z && r.g == g {
                    let q_g = if g {
                        prevalences[r.site]
                    } else {
                        one - prevalences[r.site]
                    };
                    let q_z = if z { opts.p_z } else { one - opts.p_z };
                    value = value + (y - m_hat) / (q_g * q_z);
                }
                value
            })
        })
        .collect();
    Ok(InfluenceValues { phi })
}

/// Plug-in variance of the MFD estimator:
/// (1/n^2) sum_i { phi_0(O_i) mu1/mu0^2 - phi_1(O_i)/mu0 }^2.
pub fn variance_mfd<F: Scalar>(iv: &InfluenceValues<F>, mu: &MuEstimates<F>) -> F {
    let n = iv.phi.len();
    let n_f: F = cast_usize(n);
    let scale0 = mu.mu1 / (mu.mu0 * mu.mu0);
    let scale1 = F::one() / mu.mu0;
    let mut acc = F::zero();
    for i in 0..n {
        let term = iv.phi_z(i, false) * scale0 - iv.phi_z(i, true) * scale1;
        acc = acc + term * term;
    }
    acc / (n_f * n_f)
}

// ---------------------------------------------------------------------------
// Confidence limits
// ---------------------------------------------------------------------------

/// One-sided lower confidence bound tau - z_{1-alpha} sqrt(var); minus
/// infinity when alpha is zero.
pub fn lower_bound<F: Scalar>(tau: F, var: F, alpha: F) -> F {
    let z = normal_quantile(F::one() - alpha);
    if z.is_infinite() {
        return -F::infinity();
    }
    tau - z * var.max(F::zero()).sqrt()
}

/// One-sided upper confidence bound tau + z_{1-alpha} sqrt(var).
pub fn upper_bound<F: Scalar>(tau: F, var: F, alpha: F) -> F {
    let z = normal_quantile(F::one() - alpha);
    if z.is_infinite() {
        return F::infinity();
    }
    tau + z * var.max(F::zero()).sqrt()
}

/// Two-sided Wald interval at level 1 - alpha.
pub fn wald_ci<F: Scalar>(tau: F, var: F, alpha: F) -> (F, F) {
    let half = alpha / cast(2.0);
    (lower_bound(tau, var, half), upper_bound(tau, var, half))
}

// ---------------------------------------------------------------------------
// Estimator drivers
// ---------------------------------------------------------------------------

fn mean_outcome<F: Scalar>(ds: &TrialDataset<F>) -> F {
    let y = ds
        .records()
        .iter()
        .map(|r| r.count_value().unwrap_or(F::zero()))
        .fold(F::zero(), |a, b| a + b);
    y / cast_usize::<F>(ds.n())
}

/// Full MFD estimate with EIF-based Wald inference.
pub fn mfd_estimate<F: Scalar>(
    ds: &TrialDataset<F>,
    model: &MfdModel<F>,
    opts: &EstimationOptions<F>,
) -> Result<EfficacyEstimate<F>> {
    let mu = estimate_mu(ds, model);
    let tau = mfd_tau(&mu)?;
    let iv = influence_values(ds, model, &mu, opts)?;
    let var = variance_mfd(&iv, &mu);
    let ci = wald_ci(tau, var, opts.alpha);
    let guard = cast::<F>(DENOM_GUARD) * mean_outcome(ds);
    let flags = EstimateFlags {
        weak_denominator: mu.mu0.abs() <= guard,
        nonconverged_glm: !model.converged(),
        clipped_at_bound: false,
    };
    Ok(EfficacyEstimate {
        method: Method::Mfd,
        tau_hat: tau,
        se: var.sqrt(),
        ci,
        flags,
    })
}

/// Naive estimate with influence-function plus delta-method inference, the
/// same plug-in pattern applied to the marginal arm means (G treated as a
/// covariate).
pub fn naive_estimate<F: Scalar>(
    ds: &TrialDataset<F>,
    fit0: &GlmFit<F>,
    opts: &EstimationOptions<F>,
) -> Result<EfficacyEstimate<F>> {
    let (m1, m0) = naive_arm_means(ds, fit0);
    if m0 == F::zero() {
        return Err(Error::Numerical(
            "naive efficacy undefined: placebo-arm mean is zero".into(),
        ));
    }
    let tau = F::one() - m1 / m0;

    // psi_z(O) = 1(Z=z)(y - mu0_hat(z, G, X))/q(z) + mu0_hat(z, G, X) - m_z
    let n = ds.n();
    let n_f: F = cast_usize(n);
    let one = F::one();
    let scale0 = m1 / (m0 * m0);
    let scale1 = one / m0;
    let mut acc = F::zero();
    for r in ds.records() {
        let y = r.count_value().expect("count dataset");
        let mut psi = [F::zero(); 2]; // [psi_0, psi_1]
        for (slot, z) in [(0usize, false), (1usize, true)] {
            let m_hat = predict_mean(fit0, &initial_row(z, r.g, &r.covariates), F::zero());
            let mut v = m_hat - if z { m1 } else { m0 };
            if r.z == z {
                let q_z = if z { opts.p_z } else { one - opts.p_z };
                v = v + (y - m_hat) / q_z;
            }
            psi[slot] = v;
        }
        let term = psi[0] * scale0 - psi[1] * scale1;
        acc = acc + term * term;
    }
    let var = acc / (n_f * n_f);
    let ci = wald_ci(tau, var, opts.alpha);
    Ok(EfficacyEstimate {
        method: Method::Naive,
        tau_hat: tau,
        se: var.sqrt(),
        ci,
        flags: EstimateFlags {
            nonconverged_glm: !fit0.converged,
            ..Default::default()
        },
    })
}

/// Clip an estimate to [L_{0,alpha_tilde}, 1] using the naive lower bound;
/// consistent because the naive estimand never exceeds tau (for eta <= tau)
/// and tau <= 1 by construction.
pub fn bounded_tau<F: Scalar>(tau: F, naive: &EfficacyEstimate<F>, alpha_tilde: F) -> (F, bool) {
    let l0 = lower_bound(naive.tau_hat, naive.se * naive.se, alpha_tilde);
    let clipped = tau.max(l0).min(F::one());
    (clipped, clipped != tau)
}

/// The combined confidence interval
/// [max{L_{alpha/2 - alpha0}, L_{0,alpha0}}, min{1, U_{alpha/2}}].
pub fn bounded_ci<F: Scalar>(
    mfd: &EfficacyEstimate<F>,
    naive: &EfficacyEstimate<F>,
    alpha: F,
    alpha0: F,
) -> Result<(F, F)> {
    let half = alpha / cast(2.0);
    if alpha0 < F::zero() || alpha0 > half {
        return Err(Error::Parameter(format!(
            "alpha0 must lie in [0, alpha/2]; got alpha0={alpha0}, alpha={alpha}"
        )));
    }
    let mfd_var = mfd.se * mfd.se;
    let naive_var = naive.se * naive.se;
    // tau <= 1 always, so a lower endpoint above 1 is vacuous and clips.
    let lower = lower_bound(mfd.tau_hat, mfd_var, half - alpha0)
        .max(lower_bound(naive.tau_hat, naive_var, alpha0))
        .min(F::one());
    // When the two one-sided intervals have empty intersection (the MFD
    // interval sits entirely below the naive lower bound), collapse to the
    // lower endpoint; this only enlarges the displayed intersection.
    let upper = upper_bound(mfd.tau_hat, mfd_var, half).min(F::one()).max(lower);
    Ok((lower, upper))
}

/// Bounded estimator: the MFD point estimate clipped to the naive lower
/// bound and the logical upper bound, with the combined interval.
pub fn bounded_estimate<F: Scalar>(
    mfd: &EfficacyEstimate<F>,
    naive: &EfficacyEstimate<F>,
    opts: &EstimationOptions<F>,
) -> Result<EfficacyEstimate<F>> {
    let (tau, clipped) = bounded_tau(mfd.tau_hat, naive, opts.alpha_tilde);
    let ci = bounded_ci(mfd, naive, opts.alpha, opts.alpha0)?;
    Ok(EfficacyEstimate {
        method: Method::Bounded,
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

/// Known specificity or a confidence interval for it.
#[derive(Debug, Clone, Copy)]
pub enum Specificity<F> {
    Known(F),
    /// A 1 - beta confidence interval for s.
    Interval { lo: F, hi: F, beta: F },
}

/// Correct the naive estimator for known (or interval-bounded) case
/// specificity by dividing by s; the interval case takes the union of
/// level-(1 - alpha - beta) intervals over s, evaluated at the interval
/// extremes (the endpoints are monotone in s).
pub fn s_corrected<F: Scalar>(
    naive: &EfficacyEstimate<F>,
    s: Specificity<F>,
    alpha: F,
) -> Result<EfficacyEstimate<F>> {
    let check = |s: F| -> Result<()> {
        if s <= F::zero() || s > F::one() {
            return Err(Error::Parameter(format!(
                "specificity must lie in (0, 1], got {s}"
            )));
        }
        Ok(())
    };
    let (point_s, level, s_values) = match s {
        Specificity::Known(v) => {
            check(v)?;
            (v, alpha, vec![v])
        }
        Specificity::Interval { lo, hi, beta } => {
            check(lo)?;
            check(hi)?;
            if lo > hi {
                return Err(Error::Parameter("specificity interval has lo > hi".into()));
            }
            if beta < F::zero() || alpha + beta >= F::one() {
                return Err(Error::Parameter("need 0 <= beta and alpha + beta < 1".into()));
            }
            let two: F = cast(2.0);
            ((lo + hi) / two, alpha + beta, vec![lo, hi])
        }
    };

    let var = naive.se * naive.se;
    let mut lower = F::infinity();
    let mut upper = -F::infinity();
    for s_val in &s_values {
        let (l, u) = wald_ci(naive.tau_hat, var, level);
        lower = lower.min(l / *s_val);
        upper = upper.max(u / *s_val);
    }
    Ok(EfficacyEstimate {
        method: Method::SCorrected,
        tau_hat: naive.tau_hat / point_s,
        se: naive.se / point_s,
        ci: (lower, upper),
        flags: naive.flags,
    })
}

/// Convenience wrapper running the full count-data analysis.
pub struct CountAnalysis<F> {
    pub model: MfdModel<F>,
    pub mfd: EfficacyEstimate<F>,
    pub naive: EfficacyEstimate<F>,
    pub bounded: EfficacyEstimate<F>,
}

pub fn analyze_counts<F: Scalar>(
    ds: &TrialDataset<F>,
    opts: &EstimationOptions<F>,
) -> Result<CountAnalysis<F>> {
    ds.check_positivity()?;
    let model = fit_mfd_model(ds)?;
    let mfd = mfd_estimate(ds, &model, opts)?;
    let naive = naive_estimate(ds, &model.fit0, opts)?;
    let bounded = bounded_estimate(&mfd, &naive, opts)?;
    Ok(CountAnalysis {
        model,
        mfd,
        naive,
        bounded,
    })
}
