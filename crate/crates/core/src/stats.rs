//! Log-domain helpers shared by the filters.

use nalgebra::{DMatrix, DVector};

pub const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Sums a slice with pairwise (tree) reduction, so the result is independent of
/// how the values were produced.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    match values.len() {
        0 => 0.0,
        1 => values[0],
        2 => values[0] + values[1],
        n => {
            let mid = n / 2;
            pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
        }
    }
}

/// `log(sum(exp(v)))`, returning `-inf` when every entry is `-inf`.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    let shifted: Vec<f64> = values.iter().map(|v| (v - max).exp()).collect();
    max + pairwise_sum(&shifted).ln()
}

/// Normalized weights from log-weights. Returns `None` when no entry is finite
/// or some entry is NaN.
pub fn normalize_log_weights(log_w: &[f64]) -> Option<Vec<f64>> {
    if log_w.iter().any(|v| v.is_nan()) {
        return None;
    }
    let lse = log_sum_exp(log_w);
    if !lse.is_finite() {
        return None;
    }
    let mut w: Vec<f64> = log_w.iter().map(|v| (v - lse).exp()).collect();
    let total = pairwise_sum(&w);
    for x in &mut w {
        *x /= total;
    }
    Some(w)
}

/// Effective sample size `1 / sum(w^2)`.
pub fn effective_sample_size(weights: &[f64]) -> f64 {
    let sq: Vec<f64> = weights.iter().map(|w| w * w).collect();
    1.0 / pairwise_sum(&sq)
}

/// Log density of `N(y | mean, cov)` via Cholesky. `None` if `cov` is not
/// positive definite.
pub fn gaussian_log_pdf(y: &DVector<f64>, mean: &DVector<f64>, cov: &DMatrix<f64>) -> Option<f64> {
    let chol = cov.clone().cholesky()?;
    let diff = y - mean;
    let sol = chol.solve(&diff);
    let log_det = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    let quad = diff.dot(&sol);
    let d = y.len() as f64;
    let val = -0.5 * (d * LN_2PI + log_det + quad);
    val.is_finite().then_some(val)
}

/// Log density of an isotropic Gaussian `N(y | mean, var I)`.
pub fn isotropic_log_pdf(y: &[f64], mean: &[f64], var: f64) -> f64 {
    let quad: f64 = y.iter().zip(mean).map(|(a, b)| (a - b) * (a - b)).sum();
    -0.5 * (y.len() as f64 * (LN_2PI + var.ln()) + quad / var)
}

/// Weighted quantile of scalar samples (lower interpolation on the weighted CDF).
pub fn weighted_quantile(values: &[f64], weights: &[f64], q: f64) -> f64 {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let total: f64 = weights.iter().sum();
    let mut acc = 0.0;
    for &i in &idx {
        acc += weights[i] / total;
        if acc >= q {
            return values[i];
        }
    }
    values[*idx.last().expect("non-empty sample")]
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn log_sum_exp_handles_extremes() {
        assert_eq!(log_sum_exp(&[f64::NEG_INFINITY, f64::NEG_INFINITY]), f64::NEG_INFINITY);
        assert_relative_eq!(log_sum_exp(&[0.0, 0.0]), 2f64.ln(), epsilon = 1e-15);
        assert_relative_eq!(log_sum_exp(&[-1000.0, -1000.0]), -1000.0 + 2f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn normalize_rejects_all_neg_inf() {
        assert!(normalize_log_weights(&[f64::NEG_INFINITY; 3]).is_none());
        let w = normalize_log_weights(&[-2000.0, -2000.0 + 3f64.ln(), f64::NEG_INFINITY]).unwrap();
        assert_relative_eq!(w[0], 0.25, epsilon = 1e-11);
        assert_relative_eq!(w[1], 0.75, epsilon = 1e-11);
        assert_eq!(w[2], 0.0);
    }

    #[test]
    fn gaussian_log_pdf_scalar() {
        let v = gaussian_log_pdf(
            &DVector::from_vec(vec![0.0]),
            &DVector::from_vec(vec![0.0]),
            &DMatrix::from_element(1, 1, 2.0),
        )
        .unwrap();
        assert_relative_eq!(v.exp(), 1.0 / (4.0 * std::f64::consts::PI).sqrt(), epsilon = 1e-15);
        assert_relative_eq!(isotropic_log_pdf(&[0.0], &[0.0], 2.0), v, epsilon = 1e-15);
    }

    #[test]
    fn weighted_quantile_basic() {
        let v = [3.0, 1.0, 2.0];
        let w = [1.0, 1.0, 2.0];
        assert_eq!(weighted_quantile(&v, &w, 0.2), 1.0);
        assert_eq!(weighted_quantile(&v, &w, 0.5), 2.0);
        assert_eq!(weighted_quantile(&v, &w, 0.9), 3.0);
    }
}
