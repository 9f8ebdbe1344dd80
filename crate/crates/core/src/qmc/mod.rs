//! Low-discrepancy machinery for the quasi-Monte Carlo outer layer: Halton
//! points, the Box–Muller transform, a logistic rescaling of particle clouds
//! into the unit cube, and Hilbert-curve ordering.

mod hilbert;

use serde::{Deserialize, Serialize};

use crate::error::{NhfError, Result};

pub use hilbert::{hilbert_index, hilbert_sort, HilbertMap};

/// The first `d` primes.
pub fn first_primes(d: usize) -> Vec<u64> {
    let mut primes = Vec::with_capacity(d);
    let mut candidate = 2u64;
    while primes.len() < d {
        if primes
            .iter()
            .take_while(|&&p| p * p <= candidate)
            .all(|&p| candidate % p != 0)
        {
            primes.push(candidate);
        }
        candidate += 1;
    }
    primes
}

/// Van der Corput radical inverse of `index` in `base`.
pub fn radical_inverse(mut index: u64, base: u64) -> f64 {
    let inv = 1.0 / base as f64;
    let mut scale = inv;
    let mut out = 0.0;
    while index > 0 {
        out += (index % base) as f64 * scale;
        index /= base;
        scale *= inv;
    }
    out
}

/// Unscrambled Halton sequence in `[0,1)^d`, read sequentially.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HaltonStream {
    bases: Vec<u64>,
    next_index: u64,
}

impl HaltonStream {
    pub fn new(dim: usize) -> Result<Self> {
        Self::starting_at(dim, 0)
    }

    pub fn starting_at(dim: usize, next_index: u64) -> Result<Self> {
        if dim == 0 {
            return Err(NhfError::invalid("Halton dimension must be positive"));
        }
        Ok(Self {
            bases: first_primes(dim),
            next_index,
        })
    }

    pub fn dim(&self) -> usize {
        self.bases.len()
    }

    pub fn bases(&self) -> &[u64] {
        &self.bases
    }

    pub fn next_index(&self) -> u64 {
        self.next_index
    }

    /// Returns the point at `next_index` and advances.
    pub fn next_point(&mut self) -> Vec<f64> {
        let p = halton_point(self.next_index, self);
        self.next_index += 1;
        p
    }

    /// The next `n` points.
    pub fn next_block(&mut self, n: usize) -> Vec<Vec<f64>> {
        (0..n).map(|_| self.next_point()).collect()
    }
}

/// Component `j` is the radical inverse of `index` in base `bases[j]`.
pub fn halton_point(index: u64, stream: &HaltonStream) -> Vec<f64> {
    stream.bases.iter().map(|&b| radical_inverse(index, b)).collect()
}

/// Box–Muller: two independent standard normals from `u1 in (0,1]`, `u2 in [0,1)`.
pub fn gaussian_from_uniform(u1: f64, u2: f64) -> Result<(f64, f64)> {
    if !(u1 > 0.0 && u1 <= 1.0) {
        return Err(NhfError::invalid(format!("Box-Muller needs u1 in (0,1], got {u1}")));
    }
    if !u2.is_finite() {
        return Err(NhfError::invalid("Box-Muller needs a finite u2"));
    }
    let r = (-2.0 * u1.ln()).sqrt();
    let (s, c) = (std::f64::consts::TAU * u2).sin_cos();
    Ok((r * c, r * s))
}

/// Half-width used to centre the logistic map on a weighted cloud.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PsiSpread {
    /// `theta± = m ± 2 s^2` (weighted variance).
    #[default]
    Variance,
    /// `theta± = m ± 2 s` (weighted standard deviation).
    StdDev,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PsiConfig {
    pub spread: PsiSpread,
    /// Lower bound on `theta+ - theta-`.
    pub floor: f64,
}

impl Default for PsiConfig {
    fn default() -> Self {
        Self {
            spread: PsiSpread::Variance,
            floor: 1e-12,
        }
    }
}

/// Largest double below one; the logistic output is clamped to
/// `[1 - MAX_UNIT, MAX_UNIT]` so it stays inside the open unit cube.
const MAX_UNIT: f64 = 1.0 - f64::EPSILON / 2.0;

/// Maps a weighted cloud of `d`-vectors into `(0,1)^d` component-wise with
/// `1 / (1 + exp(-(theta - theta-) / (theta+ - theta-)))`, where `theta±` are
/// built from the weighted mean and spread of each component.
pub fn psi_map(points: &[Vec<f64>], weights: &[f64], cfg: &PsiConfig) -> Result<Vec<Vec<f64>>> {
    crate::error::check_len("psi_map weights", points.len(), weights.len())?;
    if points.is_empty() {
        return Ok(Vec::new());
    }
    let d = points[0].len();
    for p in points {
        crate::error::check_len("psi_map point", d, p.len())?;
    }
    if weights.iter().any(|w| !(*w >= 0.0)) {
        return Err(NhfError::invalid("psi_map weights must be non-negative"));
    }
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) {
        return Err(NhfError::invalid("psi_map weights must have positive mass"));
    }
    let mut lo = vec![0.0; d];
    let mut width = vec![0.0; d];
    for j in 0..d {
        let weighted = || points.iter().zip(weights).filter(|(_, w)| **w > 0.0);
        let mean: f64 = weighted().map(|(p, w)| w * p[j]).sum::<f64>() / total;
        let var: f64 = weighted().map(|(p, w)| w * (p[j] - mean).powi(2)).sum::<f64>() / total;
        let half = match cfg.spread {
            PsiSpread::Variance => 2.0 * var,
            PsiSpread::StdDev => 2.0 * var.sqrt(),
        };
        lo[j] = mean - half;
        width[j] = (2.0 * half).max(cfg.floor);
    }
    Ok(points
        .iter()
        .map(|p| {
            (0..d)
                .map(|j| {
                    let t = (p[j] - lo[j]) / width[j];
                    (1.0 / (1.0 + (-t).exp())).clamp(1.0 - MAX_UNIT, MAX_UNIT)
                })
                .collect()
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Purpose};
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn primes() {
        assert_eq!(first_primes(6), vec![2, 3, 5, 7, 11, 13]);
    }

    #[test]
    fn halton_examples() {
        let s1 = HaltonStream::new(1).unwrap();
        assert_eq!(halton_point(0, &s1), vec![0.0]);
        assert_eq!(
            (1..4).map(|i| halton_point(i, &s1)[0]).collect::<Vec<_>>(),
            vec![0.5, 0.25, 0.75]
        );
        let mut s2 = HaltonStream::new(2).unwrap();
        assert_eq!(halton_point(0, &s2), vec![0.0, 0.0]);
        let p = halton_point(1, &s2);
        assert_eq!(p[0], 0.5);
        assert!((p[1] - 1.0 / 3.0).abs() < 1e-16);
        s2.next_point();
        assert_eq!(s2.next_point(), p);
        assert_eq!(s2.next_index(), 2);
    }

    #[test]
    fn box_muller_examples() {
        assert_eq!(gaussian_from_uniform(1.0, 0.3).unwrap(), (0.0, 0.0));
        let (a, b) = gaussian_from_uniform((-0.5f64).exp(), 0.0).unwrap();
        assert!((a - 1.0).abs() < 1e-15 && b.abs() < 1e-15);
        let (a, b) = gaussian_from_uniform((-0.5f64).exp(), 0.25).unwrap();
        assert!(a.abs() < 1e-15 && (b - 1.0).abs() < 1e-15);
        assert!(gaussian_from_uniform(0.0, 0.5).is_err());
    }

    #[test]
    fn box_muller_on_halton_pairs_is_standard_normal() {
        let mut s = HaltonStream::starting_at(2, 1).unwrap();
        let n = 1 << 14;
        let mut z1 = Vec::with_capacity(n);
        let mut z2 = Vec::with_capacity(n);
        for _ in 0..n {
            let p = s.next_point();
            let (a, b) = gaussian_from_uniform(1.0 - p[0], p[1]).unwrap();
            z1.push(a);
            z2.push(b);
        }
        for z in [z1, z2] {
            let m = z.iter().sum::<f64>() / n as f64;
            let v = z.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n as f64;
            assert!(m.abs() < 0.02, "mean {m}");
            assert!((v - 1.0).abs() < 0.05, "var {v}");
        }
    }

    /// Star discrepancy over anchored boxes with corners on a 64x64 grid.
    fn grid_discrepancy(points: &[[f64; 2]]) -> f64 {
        let g = 64;
        let n = points.len() as f64;
        let mut worst: f64 = 0.0;
        for a in 1..=g {
            for b in 1..=g {
                let (x, y) = (a as f64 / g as f64, b as f64 / g as f64);
                let count = points.iter().filter(|p| p[0] < x && p[1] < y).count() as f64;
                worst = worst.max((count / n - x * y).abs());
            }
        }
        worst
    }

    #[test]
    fn halton_beats_pseudo_random_discrepancy() {
        let mut s = HaltonStream::new(2).unwrap();
        let halton: Vec<[f64; 2]> = (0..1024)
            .map(|_| {
                let p = s.next_point();
                [p[0], p[1]]
            })
            .collect();
        let dh = grid_discrepancy(&halton);
        let mean_random = (0..20)
            .map(|k| {
                let mut rng = stream(k, Purpose::Prior, &[]);
                let pts: Vec<[f64; 2]> = (0..1024).map(|_| [rng.random(), rng.random()]).collect();
                grid_discrepancy(&pts)
            })
            .sum::<f64>()
            / 20.0;
        assert!(dh < mean_random, "halton {dh} random {mean_random}");
    }

    #[test]
    fn psi_examples() {
        let cfg = PsiConfig::default();
        let out = psi_map(&[vec![0.0], vec![2.0]], &[0.5, 0.5], &cfg).unwrap();
        assert!((out[0][0] - 1.0 / (1.0 + (-0.25f64).exp())).abs() < 1e-15);
        assert!((out[1][0] - 1.0 / (1.0 + (-0.75f64).exp())).abs() < 1e-15);
        assert!((out[0][0] - 0.5622).abs() < 1e-4 && (out[1][0] - 0.6792).abs() < 1e-4);
        // a point at theta- maps to one half: m = 1, s^2 = 1, theta- = -1
        let at_lo = psi_map(&[vec![0.0], vec![2.0], vec![-1.0]], &[0.5, 0.5, 0.0], &cfg).unwrap();
        assert_eq!(at_lo[2][0], 0.5);
        let ext = psi_map(
            &[vec![0.0], vec![2.0], vec![1e300], vec![-1e300]],
            &[0.5, 0.5, 0.0, 0.0],
            &cfg,
        )
        .unwrap();
        assert!(ext[2][0] < 1.0 && ext[2][0] > 0.999);
        assert!(ext[3][0] > 0.0 && ext[3][0] < 1e-3);
    }

    #[test]
    fn psi_degenerate_cloud_is_total() {
        let out = psi_map(&vec![vec![3.0, 1.0]; 4], &[0.25; 4], &PsiConfig::default()).unwrap();
        for p in out {
            assert_eq!(p, vec![0.5, 0.5]);
        }
    }

    #[test]
    fn psi_std_form() {
        let cfg = PsiConfig {
            spread: PsiSpread::StdDev,
            ..PsiConfig::default()
        };
        // m = 1, s = 2: theta- = -3, width 8
        let out = psi_map(&[vec![-1.0], vec![3.0]], &[0.5, 0.5], &cfg).unwrap();
        assert!((out[0][0] - 1.0 / (1.0 + (-0.25f64).exp())).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn psi_inside_unit_cube_and_monotone(
            pts in prop::collection::vec(prop::collection::vec(-1e3..1e3f64, 2), 2..20),
            raw_w in prop::collection::vec(0.01..1.0f64, 20),
        ) {
            let w: Vec<f64> = raw_w[..pts.len()].to_vec();
            let total: f64 = w.iter().sum();
            let w: Vec<f64> = w.iter().map(|x| x / total).collect();
            let out = psi_map(&pts, &w, &PsiConfig::default()).unwrap();
            for p in &out {
                for v in p { prop_assert!(*v > 0.0 && *v < 1.0); }
            }
            for a in 0..pts.len() {
                for b in 0..pts.len() {
                    for j in 0..2 {
                        if pts[a][j] < pts[b][j] { prop_assert!(out[a][j] <= out[b][j]); }
                    }
                }
            }
        }

        #[test]
        fn halton_points_in_unit_cube(index in 0u64..1_000_000, dim in 1usize..8) {
            let s = HaltonStream::new(dim).unwrap();
            for v in halton_point(index, &s) { prop_assert!((0.0..1.0).contains(&v)); }
        }
    }
}
