//! Prior box and jittering kernels for the parameter particles.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{NhfError, Result};
use crate::qmc::{gaussian_from_uniform, HaltonStream};

/// Axis-aligned support of the uniform parameter prior.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorBox {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl PriorBox {
    pub fn new(bounds: &[(f64, f64)]) -> Result<Self> {
        let b = Self {
            lo: bounds.iter().map(|p| p.0).collect(),
            hi: bounds.iter().map(|p| p.1).collect(),
        };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        if self.lo.is_empty() || self.lo.len() != self.hi.len() {
            return Err(NhfError::invalid("prior box needs matching non-empty bounds"));
        }
        for (j, (l, h)) in self.lo.iter().zip(&self.hi).enumerate() {
            if !(l.is_finite() && h.is_finite() && l < h) {
                return Err(NhfError::invalid(format!(
                    "prior box component {j} needs lo < hi, got [{l}, {h}]"
                )));
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn width(&self, j: usize) -> f64 {
        self.hi[j] - self.lo[j]
    }

    /// Maps a point of `[0,1)^d` affinely into the box.
    pub fn from_unit(&self, u: &[f64]) -> Vec<f64> {
        u.iter()
            .enumerate()
            .map(|(j, v)| self.lo[j] + v * self.width(j))
            .collect()
    }

    /// Folds `value` back into `[lo_j, hi_j]` by repeated reflection at the walls.
    pub fn reflect(&self, j: usize, value: f64) -> f64 {
        let (lo, w) = (self.lo[j], self.width(j));
        if (lo..=self.hi[j]).contains(&value) {
            return value;
        }
        if !value.is_finite() {
            return lo + 0.5 * w;
        }
        let t = (value - lo).rem_euclid(2.0 * w);
        let folded = if t > w { 2.0 * w - t } else { t };
        (lo + folded).clamp(lo, self.hi[j])
    }
}

/// Where prior samples come from.
pub enum PriorSource<'a, R: Rng + ?Sized> {
    Random(&'a mut R),
    Halton(&'a mut HaltonStream),
}

/// `n` draws from the uniform prior over `prior`.
pub fn draw_prior<R: Rng + ?Sized>(n: usize, prior: &PriorBox, source: PriorSource<'_, R>) -> Result<Vec<Vec<f64>>> {
    prior.validate()?;
    let d = prior.dim();
    match source {
        PriorSource::Random(rng) => Ok((0..n)
            .map(|_| {
                (0..d)
                    .map(|j| prior.lo[j] + rng.random::<f64>() * prior.width(j))
                    .collect()
            })
            .collect()),
        PriorSource::Halton(stream) => {
            if stream.dim() != d {
                return Err(NhfError::DimensionMismatch {
                    context: "Halton prior stream",
                    expected: d,
                    actual: stream.dim(),
                });
            }
            Ok((0..n).map(|_| prior.from_unit(&stream.next_point())).collect())
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JitterMode {
    /// Each particle moves with probability `epsilon`, by `N(0, diag(std^2))`.
    #[default]
    Mixture,
    /// Every particle moves, by `N(0, diag(std^2) / N)`.
    AlwaysJitter,
}

/// Markov kernel applied to every parameter particle before weighting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JitterKernel {
    pub mode: JitterMode,
    pub epsilon: f64,
    pub std: Vec<f64>,
    /// Number of parameter particles the kernel was built for.
    pub n: usize,
}

impl JitterKernel {
    pub fn new(mode: JitterMode, epsilon: f64, std: Vec<f64>, n: usize) -> Result<Self> {
        if n == 0 {
            return Err(NhfError::invalid("jitter kernel needs N >= 1"));
        }
        if std.iter().any(|s| !(*s >= 0.0 && s.is_finite())) {
            return Err(NhfError::invalid(
                "jitter standard deviations must be finite and non-negative",
            ));
        }
        if mode == JitterMode::Mixture {
            let bound = 1.0 / (n as f64).sqrt();
            if !(0.0..=bound * (1.0 + 1e-12)).contains(&epsilon) {
                return Err(NhfError::invalid(format!(
                    "mixture jitter needs 0 <= epsilon <= N^-1/2 = {bound}, got {epsilon}"
                )));
            }
        }
        Ok(Self { mode, epsilon, std, n })
    }

    /// `std_j = 0.05 (hi_j - lo_j)`, `epsilon = N^-1/2`.
    pub fn default_for(prior: &PriorBox, n: usize, mode: JitterMode) -> Result<Self> {
        let std = (0..prior.dim()).map(|j| 0.05 * prior.width(j)).collect();
        Self::new(mode, 1.0 / (n as f64).sqrt(), std, n)
    }

    pub fn dim(&self) -> usize {
        self.std.len()
    }

    /// Number of uniforms one QMC-driven proposal consumes: an even number of
    /// Box–Muller inputs covering `d` normals, plus the mixture coin.
    pub fn uniforms_needed(&self) -> usize {
        2 * self.dim().div_ceil(2) + 1
    }

    fn scale(&self) -> f64 {
        match self.mode {
            JitterMode::Mixture => 1.0,
            JitterMode::AlwaysJitter => 1.0 / (self.n as f64).sqrt(),
        }
    }

    fn moves(&self, coin: f64) -> bool {
        match self.mode {
            JitterMode::Mixture => coin < self.epsilon,
            JitterMode::AlwaysJitter => true,
        }
    }

    fn apply(&self, theta: &[f64], prior: &PriorBox, normals: impl Iterator<Item = f64>) -> Vec<f64> {
        let s = self.scale();
        theta
            .iter()
            .zip(&self.std)
            .zip(normals)
            .enumerate()
            .map(|(j, ((t, sd), z))| prior.reflect(j, t + s * sd * z))
            .collect()
    }

    /// Pseudo-random proposal.
    pub fn propose<R: Rng + ?Sized>(&self, theta: &[f64], prior: &PriorBox, rng: &mut R) -> Vec<f64> {
        let coin: f64 = rng.random();
        if !self.moves(coin) {
            return theta.to_vec();
        }
        let normals: Vec<f64> = (0..self.dim()).map(|_| rng.sample(StandardNormal)).collect();
        self.apply(theta, prior, normals.into_iter())
    }

    /// Proposal driven by [`Self::uniforms_needed`] uniforms in `[0,1)`:
    /// consecutive pairs feed Box–Muller (first entry mirrored to `(0,1]`),
    /// the last entry is the mixture coin.
    pub fn propose_qmc(&self, theta: &[f64], prior: &PriorBox, u: &[f64]) -> Result<Vec<f64>> {
        crate::error::check_len("jitter uniforms", self.uniforms_needed(), u.len())?;
        let coin = u[u.len() - 1];
        if !self.moves(coin) {
            return Ok(theta.to_vec());
        }
        let mut normals = Vec::with_capacity(self.dim() + 1);
        for pair in u[..u.len() - 1].chunks_exact(2) {
            let (a, b) = gaussian_from_uniform(1.0 - pair[0], pair[1])?;
            normals.push(a);
            normals.push(b);
        }
        Ok(self.apply(theta, prior, normals.into_iter()))
    }
}

/// Applies the kernel independently to every particle.
pub fn jitter<R: Rng + ?Sized>(
    thetas: &[Vec<f64>],
    kernel: &JitterKernel,
    prior: &PriorBox,
    rng: &mut R,
) -> Vec<Vec<f64>> {
    thetas.iter().map(|t| kernel.propose(t, prior, rng)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Purpose};
    use proptest::prelude::*;
    use rand::Rng;

    fn unit_box(d: usize) -> PriorBox {
        PriorBox::new(&vec![(0.0, 1.0); d]).unwrap()
    }

    #[test]
    fn halton_prior_examples() {
        let prior = unit_box(1);
        let mut h = HaltonStream::starting_at(1, 1).unwrap();
        let draws = draw_prior::<rand_xoshiro::Xoshiro256PlusPlus>(3, &prior, PriorSource::Halton(&mut h)).unwrap();
        assert_eq!(draws, vec![vec![0.5], vec![0.25], vec![0.75]]);
        assert!(PriorBox::new(&[(8.0, 8.0)]).is_err());
    }

    #[test]
    fn random_prior_mean() {
        let prior = PriorBox::new(&[(0.0, 2.0)]).unwrap();
        let mut rng = stream(3, Purpose::Prior, &[]);
        let draws = draw_prior(10_000, &prior, PriorSource::Random(&mut rng)).unwrap();
        let mean = draws.iter().map(|d| d[0]).sum::<f64>() / 10_000.0;
        assert!((mean - 1.0).abs() < 0.05);
    }

    #[test]
    fn zero_std_leaves_particles_alone() {
        let prior = unit_box(2);
        let k = JitterKernel::new(JitterMode::AlwaysJitter, 1.0, vec![0.0, 0.0], 4).unwrap();
        let th = vec![vec![0.2, 0.3], vec![0.9, 0.1]];
        assert_eq!(jitter(&th, &k, &prior, &mut stream(1, Purpose::Particle, &[])), th);
    }

    #[test]
    fn mixture_moves_expected_fraction() {
        let prior = PriorBox::new(&[(-100.0, 100.0)]).unwrap();
        let k = JitterKernel::new(JitterMode::Mixture, 0.01, vec![1.0], 10_000).unwrap();
        let th = vec![vec![0.0]; 10_000];
        let mut frac = 0.0;
        for s in 0..5 {
            let out = jitter(&th, &k, &prior, &mut stream(s, Purpose::Particle, &[]));
            frac += out.iter().filter(|t| t[0] != 0.0).count() as f64 / 10_000.0;
        }
        frac /= 5.0;
        assert!((0.007..=0.013).contains(&frac), "{frac}");
    }

    #[test]
    fn mixture_epsilon_is_bounded_by_inverse_sqrt_n() {
        assert!(JitterKernel::new(JitterMode::Mixture, 0.2, vec![1.0], 100).is_err());
        assert!(JitterKernel::new(JitterMode::Mixture, 0.1, vec![1.0], 100).is_ok());
        assert!(JitterKernel::new(JitterMode::AlwaysJitter, 1.0, vec![1.0], 100).is_ok());
    }

    #[test]
    fn edge_particle_with_huge_jitter_stays_inside() {
        let prior = PriorBox::new(&[(4.0, 12.0)]).unwrap();
        let k = JitterKernel::new(JitterMode::Mixture, 1.0, vec![1e3], 1).unwrap();
        let mut rng = stream(2, Purpose::Particle, &[]);
        for _ in 0..1000 {
            let t = k.propose(&[12.0], &prior, &mut rng);
            assert!((4.0..=12.0).contains(&t[0]));
        }
    }

    #[test]
    fn reflection_folds_back() {
        let prior = PriorBox::new(&[(0.0, 1.0)]).unwrap();
        assert!((prior.reflect(0, 1.25) - 0.75).abs() < 1e-15);
        assert!((prior.reflect(0, -0.25) - 0.25).abs() < 1e-15);
        assert!((prior.reflect(0, 2.25) - 0.25).abs() < 1e-15);
        assert_eq!(prior.reflect(0, 0.4), 0.4);
    }

    #[test]
    fn qmc_proposal_uses_box_muller() {
        let prior = PriorBox::new(&[(-10.0, 10.0), (-10.0, 10.0), (-10.0, 10.0)]).unwrap();
        let k = JitterKernel::new(JitterMode::AlwaysJitter, 1.0, vec![1.0, 2.0, 3.0], 1).unwrap();
        assert_eq!(k.uniforms_needed(), 5);
        let e = (-0.5f64).exp();
        // pairs (1 - e, 0) -> (1, 0) and (1 - e, 0.25) -> (0, 1)
        let out = k
            .propose_qmc(&[0.0, 0.0, 0.0], &prior, &[1.0 - e, 0.0, 1.0 - e, 0.25, 0.5])
            .unwrap();
        assert!((out[0] - 1.0).abs() < 1e-12 && out[1].abs() < 1e-12 && (out[2] - 0.0).abs() < 1e-12);
        let km = JitterKernel::new(JitterMode::Mixture, 0.1, vec![1.0, 1.0, 1.0], 100).unwrap();
        assert_eq!(
            km.propose_qmc(&[1.0, 2.0, 3.0], &prior, &[0.3, 0.3, 0.3, 0.3, 0.5])
                .unwrap(),
            vec![1.0, 2.0, 3.0]
        );
    }

    #[test]
    fn mixture_kernel_half_space_bound() {
        // |h(theta) - h(theta')| for a half-space indicator is nonzero only when
        // the particle moves, which happens with probability epsilon.
        let n = 400;
        let prior = PriorBox::new(&[(-5.0, 5.0), (-5.0, 5.0)]).unwrap();
        let k = JitterKernel::default_for(&prior, n, JitterMode::Mixture).unwrap();
        let mut rng = stream(17, Purpose::Particle, &[]);
        let h = |t: &[f64]| -> f64 {
            if 0.3 * t[0] - t[1] > 0.1 {
                1.0
            } else {
                0.0
            }
        };
        let mut acc = 0.0;
        let trials = 1000;
        for _ in 0..trials {
            let base = [rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)];
            let moved = k.propose(&base, &prior, &mut rng);
            acc += (h(&moved) - h(&base)).abs();
        }
        let mean = acc / trials as f64;
        assert!(
            mean <= k.epsilon && k.epsilon <= 1.0 / (n as f64).sqrt() + 1e-15,
            "{mean}"
        );
    }

    proptest! {
        #[test]
        fn reflection_lands_in_box(v in -1e6..1e6f64, lo in -10.0..0.0f64, w in 0.1..10.0f64) {
            let prior = PriorBox::new(&[(lo, lo + w)]).unwrap();
            let r = prior.reflect(0, v);
            prop_assert!(r >= lo && r <= lo + w);
        }
    }
}
