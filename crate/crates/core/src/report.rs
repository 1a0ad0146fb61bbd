//! Aggregation of study outputs into box/whisker-style quantile series.

use crate::num::{cast, Scalar};
use crate::stats::{mean, quantile_sorted};

/// One (scenario, estimator) row of the quantile table.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantileRow<F> {
    pub scenario: String,
    pub estimator: String,
    pub q05: F,
    pub q25: F,
    pub q50: F,
    pub q75: F,
    pub q95: F,
    pub mean: F,
    pub median: F,
    pub n: usize,
}

/// Group point estimates by (scenario, estimator) in first-appearance
/// order and compute the 5/25/50/75/95% quantiles, mean, and median.
pub fn quantile_summary<F: Scalar>(estimates: &[(String, String, F)]) -> Vec<QuantileRow<F>> {
    let mut order: Vec<(String, String)> = Vec::new();
    for (scenario, estimator, _) in estimates {
        let key = (scenario.clone(), estimator.clone());
        if !order.contains(&key) {
            order.push(key);
        }
    }
    order
        .into_iter()
        .map(|(scenario, estimator)| {
            let mut values: Vec<F> = estimates
                .iter()
                .filter(|(s, e, _)| *s == scenario && *e == estimator)
                .map(|(_, _, v)| *v)
                .collect();
            values.sort_by(|a, b| a.partial_cmp(b).expect("finite estimates"));
            let q = |p: f64| quantile_sorted(&values, cast(p));
            QuantileRow {
                scenario,
                estimator,
                q05: q(0.05),
                q25: q(0.25),
                q50: q(0.50),
                q75: q(0.75),
                q95: q(0.95),
                mean: mean(&values),
                median: q(0.50),
                n: values.len(),
            }
        })
        .collect()
}
