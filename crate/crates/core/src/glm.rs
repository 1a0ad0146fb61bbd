//! Weighted Poisson regression with log link, offsets, and the factorial /
//! targeting design builders.
//!
//! The fitter is plain IRLS with step-halving. Rank-deficient designs are
//! handled by dropping later columns deterministically, so refits of the
//! same data always produce the same coefficients.

use crate::data::TrialDataset;
use crate::error::{Error, Result};
use crate::linalg::solve_sym_dropping;
use crate::num::{cast, cast_usize, Scalar};

/// Linear predictors are clamped to this symmetric range before
/// exponentiation; keeps separation cases finite without touching fits in
/// ordinary regimes.
pub const LINEAR_PREDICTOR_BOUND: f64 = 30.0;

const MAX_ITER: usize = 100;
const MAX_HALVINGS: usize = 30;
const DEV_REL_TOL: f64 = 1e-8;
const SCORE_TOL_PER_OBS: f64 = 1e-8;

/// Dense design matrix with per-row weights and log-scale offsets.
#[derive(Debug, Clone)]
pub struct DesignMatrix<F> {
    n: usize,
    p: usize,
    data: Vec<F>,
    labels: Vec<String>,
    /// Prior (frequency) weights multiplying each subject's log-likelihood.
    pub weights: Vec<F>,
    /// Known additive terms of the linear predictor.
    pub offsets: Vec<F>,
}

impl<F: Scalar> DesignMatrix<F> {
    pub fn new(n: usize, labels: Vec<String>) -> Self {
        let p = labels.len();
        Self {
            n,
            p,
            data: Vec::with_capacity(n * p),
            labels,
            weights: vec![F::one(); n],
            offsets: vec![F::zero(); n],
        }
    }

    pub fn push_row(&mut self, row: &[F]) {
        debug_assert_eq!(row.len(), self.p);
        self.data.extend_from_slice(row);
    }

    pub fn row(&self, i: usize) -> &[F] {
        &self.data[i * self.p..(i + 1) * self.p]
    }

    pub fn n_rows(&self) -> usize {
        self.n
    }

    pub fn n_cols(&self) -> usize {
        self.p
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    /// Structural invariants: finite entries, positive weights, unique labels.
    pub fn validate(&self) -> Result<()> {
        if self.data.len() != self.n * self.p {
            return Err(Error::Validation("design matrix row count mismatch".into()));
        }
        if self.data.iter().any(|x| !x.is_finite()) {
            return Err(Error::Validation("non-finite design entry".into()));
        }
        if !self.weights.iter().all(|w| *w > F::zero()) {
            return Err(Error::Validation("weights must be positive".into()));
        }
        if self.offsets.iter().any(|o| !o.is_finite()) {
            return Err(Error::Validation("non-finite offset".into()));
        }
        for (i, a) in self.labels.iter().enumerate() {
            if self.labels[i + 1..].contains(a) {
                return Err(Error::Validation(format!("duplicate column label {a:?}")));
            }
        }
        Ok(())
    }
}

/// A fitted Poisson GLM.
#[derive(Debug, Clone)]
pub struct GlmFit<F> {
    /// Coefficients in design-column order; aliased columns get zero.
    pub beta: Vec<F>,
    pub deviance: F,
    pub converged: bool,
    pub iterations: usize,
    /// Expected information X^T W X at the optimum (zeroed on aliased
    /// rows/columns), row-major p x p.
    pub fisher_information: Vec<F>,
    /// Columns dropped as linearly dependent (deterministic, last-in).
    pub aliased: Vec<usize>,
    /// Set when fitted means ran into the linear-predictor clamp,
    /// indicating separation-like behavior.
    pub separation: bool,
    /// Deviance after each accepted IRLS step.
    pub deviance_path: Vec<F>,
}

impl<F: Scalar> GlmFit<F> {
    pub fn n_cols(&self) -> usize {
        self.beta.len()
    }
}

#[inline]
fn clamp_eta<F: Scalar>(eta: F) -> F {
    let bound: F = cast(LINEAR_PREDICTOR_BOUND);
    eta.max(-bound).min(bound)
}

/// Clamped linear predictor `offset + row . beta`.
pub fn linear_predictor<F: Scalar>(fit: &GlmFit<F>, row: &[F], offset: F) -> F {
    let eta = row
        .iter()
        .zip(&fit.beta)
        .fold(offset, |acc, (&x, &b)| acc + x * b);
    clamp_eta(eta)
}

/// Fitted mean exp(offset + row . beta); strictly positive and finite.
pub fn predict_mean<F: Scalar>(fit: &GlmFit<F>, row: &[F], offset: F) -> F {
    linear_predictor(fit, row, offset).exp()
}

/// Poisson deviance 2 sum w [y log(y/mu) - (y - mu)] with the usual y = 0
/// convention.
pub fn poisson_deviance<F: Scalar>(y: &[F], mu: &[F], weights: &[F]) -> F {
    let two: F = cast(2.0);
    let mut dev = F::zero();
    for i in 0..y.len() {
        let term = if y[i] > F::zero() {
            y[i] * (y[i] / mu[i]).ln() - (y[i] - mu[i])
        } else {
            mu[i]
        };
        dev = dev + two * weights[i] * term;
    }
    dev
}

/// Maximize the weighted Poisson log-likelihood by IRLS.
///
/// Non-convergence is not an error: the returned fit carries a `converged`
/// flag that callers must check.
pub fn fit_poisson_glm<F: Scalar>(dm: &DesignMatrix<F>, y: &[F]) -> Result<GlmFit<F>> {
    dm.validate()?;
    let n = dm.n_rows();
    let p = dm.n_cols();
    if y.len() != n {
        return Err(Error::Validation(format!(
            "outcome length {} does not match design rows {n}",
            y.len()
        )));
    }
    if y.iter().any(|v| !v.is_finite() || *v < F::zero()) {
        return Err(Error::Validation("outcomes must be nonnegative and finite".into()));
    }

    let half: F = cast(0.5);
    let score_tol = cast::<F>(SCORE_TOL_PER_OBS) * cast_usize::<F>(n);

    // Initial means as in textbook IRLS: mu = y + 1/2 keeps logs finite.
    let mut mu: Vec<F> = y.iter().map(|&v| v + half).collect();
    let mut eta: Vec<F> = mu.iter().map(|&m| m.ln()).collect();
    let mut beta = vec![F::zero(); p];
    let mut dev_old = F::infinity();
    let mut aliased = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    let mut deviance_path = Vec::new();

    for iter in 1..=MAX_ITER {
        iterations = iter;

        // Working response and weights at the current means.
        let mut xtwx = vec![F::zero(); p * p];
        let mut xtwz = vec![F::zero(); p];
        for i in 0..n {
            let wi = dm.weights[i] * mu[i];
            let zi = (eta[i] - dm.offsets[i]) + (y[i] - mu[i]) / mu[i];
            let row = dm.row(i);
            for a in 0..p {
                let wxa = wi * row[a];
                xtwz[a] = xtwz[a] + wxa * zi;
                for b in a..p {
                    xtwx[a * p + b] = xtwx[a * p + b] + wxa * row[b];
                }
            }
        }
        for a in 0..p {
            for b in 0..a {
                xtwx[a * p + b] = xtwx[b * p + a];
            }
        }

        let solved = solve_sym_dropping(&xtwx, &xtwz, p);
        let mut beta_new = solved.x;
        aliased = solved.dropped;

        let eval = |b: &[F]| -> (Vec<F>, Vec<F>, F) {
            let mut eta_new = Vec::with_capacity(n);
            let mut mu_new = Vec::with_capacity(n);
            for i in 0..n {
                let row = dm.row(i);
                let e = clamp_eta(
                    row.iter()
                        .zip(b)
                        .fold(dm.offsets[i], |acc, (&x, &coef)| acc + x * coef),
                );
                eta_new.push(e);
                mu_new.push(e.exp());
            }
            let dev = poisson_deviance(y, &mu_new, &dm.weights);
            (eta_new, mu_new, dev)
        };

        let (mut eta_new, mut mu_new, mut dev_new) = eval(&beta_new);

        // Step-halving toward the previous accepted coefficients.
        if iter > 1 {
            let mut halvings = 0;
            while dev_new > dev_old && halvings < MAX_HALVINGS {
                for a in 0..p {
                    beta_new[a] = half * (beta_new[a] + beta[a]);
                }
                let out = eval(&beta_new);
                eta_new = out.0;
                mu_new = out.1;
                dev_new = out.2;
                halvings += 1;
            }
            if dev_new > dev_old {
                // No improving step exists; keep the previous iterate.
                break;
            }
        }

        beta = beta_new;
        eta = eta_new;
        mu = mu_new;
        deviance_path.push(dev_new);

        let max_score = max_abs_score(dm, y, &mu, &aliased);
        let rel_change = (dev_new - dev_old).abs() / (cast::<F>(0.1) + dev_new.abs());
        dev_old = dev_new;
        if max_score < score_tol || (iter > 1 && rel_change < cast(DEV_REL_TOL)) {
            converged = true;
            break;
        }
    }

    // Fitted means this extreme only arise from cells the model drives to
    // zero or infinity; the score criterion stops iteration around
    // |eta| ~ 18 for structural zeros, well past any plausible rate.
    let bound: F = cast(LINEAR_PREDICTOR_BOUND / 2.0);
    let separation = eta.iter().any(|e| e.abs() >= bound);

    // Expected information at the optimum, aliased rows/columns zeroed.
    let mut fisher = vec![F::zero(); p * p];
    for (i, &mui) in mu.iter().enumerate() {
        let wi = dm.weights[i] * mui;
        let row = dm.row(i);
        for a in 0..p {
            for b in a..p {
                fisher[a * p + b] = fisher[a * p + b] + wi * row[a] * row[b];
            }
        }
    }
    for a in 0..p {
        for b in 0..a {
            fisher[a * p + b] = fisher[b * p + a];
        }
    }
    for &drop in &aliased {
        for k in 0..p {
            fisher[drop * p + k] = F::zero();
            fisher[k * p + drop] = F::zero();
        }
    }

    Ok(GlmFit {
        beta,
        deviance: dev_old,
        converged,
        iterations,
        fisher_information: fisher,
        aliased,
        separation,
        deviance_path,
    })
}

fn max_abs_score<F: Scalar>(dm: &DesignMatrix<F>, y: &[F], mu: &[F], aliased: &[usize]) -> F {
    let p = dm.n_cols();
    let mut score = vec![F::zero(); p];
    for (i, (&yi, &mui)) in y.iter().zip(mu).enumerate() {
        let r = dm.weights[i] * (yi - mui);
        let row = dm.row(i);
        for a in 0..p {
            score[a] = score[a] + r * row[a];
        }
    }
    let mut max = F::zero();
    for (a, s) in score.iter().enumerate() {
        if !aliased.contains(&a) && s.abs() > max {
            max = s.abs();
        }
    }
    max
}

// ---------------------------------------------------------------------------
// Design builders
// ---------------------------------------------------------------------------

/// Column labels of the full factorial expansion (x1..xd) * g * z.
pub fn initial_labels(d: usize) -> Vec<String> {
    let mut labels = Vec::with_capacity(4 * (d + 1));
    labels.push("(Intercept)".to_string());
    for k in 1..=d {
        labels.push(format!("x{k}"));
    }
    labels.push("g".to_string());
    labels.push("z".to_string());
    for k in 1..=d {
        labels.push(format!("x{k}:g"));
    }
    for k in 1..=d {
        labels.push(format!("x{k}:z"));
    }
    labels.push("g:z".to_string());
    for k in 1..=d {
        labels.push(format!("x{k}:g:z"));
    }
    labels
}

/// One row of the initial design evaluated at (z, g, x).
pub fn initial_row<F: Scalar>(z: bool, g: bool, x: &[F]) -> Vec<F> {
    let d = x.len();
    let zf = if z { F::one() } else { F::zero() };
    let gf = if g { F::one() } else { F::zero() };
    let mut row = Vec::with_capacity(4 * (d + 1));
    row.push(F::one());
    row.extend_from_slice(x);
    row.push(gf);
    row.push(zf);
    for &xk in x {
        row.push(xk * gf);
    }
    for &xk in x {
        row.push(xk * zf);
    }
    row.push(gf * zf);
    for &xk in x {
        row.push(xk * gf * zf);
    }
    row
}

/// Initial working-model design: intercept, main effects, and all
/// interactions among {covariates, G, Z}; unit weights, zero offsets.
pub fn build_design_initial<F: Scalar>(ds: &TrialDataset<F>) -> DesignMatrix<F> {
    let d = ds.n_covariates();
    let mut dm = DesignMatrix::new(ds.n(), initial_labels(d));
    for r in ds.records() {
        dm.push_row(&initial_row(r.z, r.g, &r.covariates));
    }
    dm
}

/// Targeting ("clever covariate") column values for a subject in site `j`
/// with counterfactual status (z, g): the four entries
/// w 1(z)1(g)/p, w 1(z)1(1-g)/(1-p), w 1(1-z)1(g)/p, w 1(1-z)1(1-g)/(1-p).
pub fn clever_covariates<F: Scalar>(z: bool, g: bool, prevalence: F, site_weight: F) -> [F; 4] {
    let zf = if z { F::one() } else { F::zero() };
    let gf = if g { F::one() } else { F::zero() };
    let one = F::one();
    [
        site_weight * zf * gf / prevalence,
        site_weight * zf * (one - gf) / (one - prevalence),
        site_weight * (one - zf) * gf / prevalence,
        site_weight * (one - zf) * (one - gf) / (one - prevalence),
    ]
}

/// Labels of the targeting design: one indicator per site then the four
/// clever covariates.
pub fn targeting_labels(site_names: &[String]) -> Vec<String> {
    let mut labels: Vec<String> = site_names.iter().map(|s| format!("site:{s}")).collect();
    labels.extend(
        ["h_z1g1", "h_z1g0", "h_z0g1", "h_z0g0"]
            .iter()
            .map(|s| s.to_string()),
    );
    labels
}

/// One row of the targeting design for a subject of site `j`.
pub fn targeting_row<F: Scalar>(
    site: usize,
    n_sites: usize,
    z: bool,
    g: bool,
    prevalence: F,
    site_weight: F,
) -> Vec<F> {
    let mut row = vec![F::zero(); n_sites + 4];
    row[site] = F::one();
    let h = clever_covariates(z, g, prevalence, site_weight);
    row[n_sites..n_sites + 4].copy_from_slice(&h);
    row
}

/// Targeting-step design: per-row offset log mu0(Z, G, X), site indicators,
/// and the four clever covariates; unit weights.
///
/// Requires more than one site (single-site trials skip the step) and a
/// converged initial fit.
pub fn build_design_targeting<F: Scalar>(
    ds: &TrialDataset<F>,
    fit0: &GlmFit<F>,
) -> Result<DesignMatrix<F>> {
    if ds.n_sites() < 2 {
        return Err(Error::Validation(
            "targeting design requires more than one site; single-site trials skip the step"
                .into(),
        ));
    }
    if !fit0.converged {
        return Err(Error::NonConvergence(
            "initial fit did not converge; cannot build targeting design".into(),
        ));
    }
    let prevalences = ds.site_prevalences();
    for (j, &p) in prevalences.iter().enumerate() {
        if p <= F::zero() || p >= F::one() {
            return Err(Error::Positivity(format!(
                "site {:?} has prevalence {p}; targeting requires 0 < p < 1",
                ds.site_names()[j]
            )));
        }
    }
    let site_weights = ds.site_weights();
    let n_sites = ds.n_sites();
    let mut dm = DesignMatrix::new(ds.n(), targeting_labels(ds.site_names()));
    for (i, r) in ds.records().iter().enumerate() {
        dm.push_row(&targeting_row(
            r.site,
            n_sites,
            r.z,
            r.g,
            prevalences[r.site],
            site_weights[r.site],
        ));
        let row0 = initial_row(r.z, r.g, &r.covariates);
        dm.offsets[i] = linear_predictor(fit0, &row0, F::zero());
    }
    Ok(dm)
}
