//! Resampling schemes.

use rand::Rng;

use crate::error::{check_len, NhfError, Result};

/// `N` i.i.d. categorical draws from `weights` (which need not be normalized).
pub fn multinomial_resample<R: Rng + ?Sized>(weights: &[f64], rng: &mut R) -> Vec<usize> {
    let cdf = cumulative(weights);
    let total = *cdf.last().unwrap_or(&0.0);
    (0..weights.len())
        .map(|_| {
            let u: f64 = rng.random::<f64>() * total;
            locate(&cdf, weights, u)
        })
        .collect()
}

fn cumulative(weights: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    weights
        .iter()
        .map(|w| {
            acc += w;
            acc
        })
        .collect()
}

/// Smallest `j` with `u < cdf[j]`, falling back to the last positive weight
/// when rounding pushes `u` past the end.
fn locate(cdf: &[f64], weights: &[f64], u: f64) -> usize {
    let j = cdf.partition_point(|&c| c <= u);
    if j < cdf.len() {
        return j;
    }
    weights.iter().rposition(|w| *w > 0.0).unwrap_or(cdf.len() - 1)
}

/// Inverse-CDF resampling over a Hilbert-ordered cloud.
///
/// `order[k]` is the particle at position `k` of the sorted cloud and
/// `uniforms[i]` the scalar QMC coordinate of point `i`. Slot `s` takes the
/// `s`-th smallest uniform `v` and selects `order[j]` for the `j` with
/// `cdf[j-1] < v <= cdf[j]` (cumulative weights in sorted order). Returns the
/// selected particle per slot and the permutation `c` that sorts `uniforms`.
pub fn sorted_uniform_resample(weights: &[f64], order: &[usize], uniforms: &[f64]) -> Result<(Vec<usize>, Vec<usize>)> {
    let n = weights.len();
    check_len("Hilbert order", n, order.len())?;
    check_len("resampling uniforms", n, uniforms.len())?;
    if uniforms.iter().any(|u| !(0.0..=1.0).contains(u)) {
        return Err(NhfError::invalid("resampling uniforms must lie in [0,1]"));
    }
    let sorted_w: Vec<f64> = order.iter().map(|&i| weights[i]).collect();
    let cdf = cumulative(&sorted_w);
    let total = *cdf.last().unwrap_or(&0.0);
    let mut c: Vec<usize> = (0..n).collect();
    c.sort_by(|&a, &b| uniforms[a].total_cmp(&uniforms[b]));
    let first_positive = sorted_w.iter().position(|w| *w > 0.0).unwrap_or(0);
    let last_positive = sorted_w.iter().rposition(|w| *w > 0.0).unwrap_or(n.saturating_sub(1));
    let mut j = 0;
    let picks = c
        .iter()
        .map(|&ci| {
            let v = uniforms[ci] * total;
            if v <= 0.0 {
                return order[first_positive];
            }
            // uniforms are visited in ascending order, so j only moves forward
            while j < n && cdf[j] < v {
                j += 1;
            }
            order[j.min(last_positive)]
        })
        .collect();
    Ok((picks, c))
}
