use statrs::function::erf::erfc;

use super::challenge::{check_len, transform_challenge, Challenge, FeatureVector};
use crate::error::{invalid, Error, Result};
use crate::rng::SimRng;

/// Standard normal cumulative distribution function.
pub fn std_normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// Linear additive delay model of one arbiter chain.
#[derive(Debug, Clone, PartialEq)]
pub struct ArbiterModel {
    weights: Vec<f64>,
    noise_level: f64,
}

impl ArbiterModel {
    pub fn new(weights: Vec<f64>, noise_level: f64) -> Result<Self> {
        if weights.len() < 2 {
            return Err(invalid(
                "arbiter needs at least one stage (n+1 >= 2 weights)",
            ));
        }
        if !(noise_level >= 0.0 && noise_level.is_finite()) {
            return Err(invalid(format!(
                "noise level {noise_level} must be finite and >= 0"
            )));
        }
        Ok(Self {
            weights,
            noise_level,
        })
    }

    /// Stage count `n` (the weight vector has `n + 1` entries).
    pub fn stages(&self) -> usize {
        self.weights.len() - 1
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn noise_level(&self) -> f64 {
        self.noise_level
    }

    /// Standard deviation of the per-evaluation noise term. Unit-normal
    /// weights give `Var(delta) = n + 1`.
    pub fn noise_sigma(&self) -> f64 {
        self.noise_level * (self.weights.len() as f64).sqrt()
    }

    pub fn with_noise_level(&self, noise_level: f64) -> Self {
        Self {
            weights: self.weights.clone(),
            noise_level,
        }
    }

    /// Noiseless delay difference `w . phi`.
    pub fn delta(&self, phi: &FeatureVector) -> Result<f64> {
        if phi.len() != self.weights.len() {
            return Err(Error::DimensionMismatch {
                expected: self.weights.len(),
                got: phi.len(),
            });
        }
        Ok(dot(&self.weights, phi.as_slice()))
    }

    pub fn delta_of(&self, c: &Challenge) -> Result<f64> {
        check_len(c, self.stages())?;
        self.delta(&transform_challenge(c))
    }

    /// `P(response = 1)` for challenge `c`.
    pub fn prob_one(&self, c: &Challenge) -> Result<f64> {
        let delta = self.delta_of(c)?;
        Ok(prob_one(delta, self.noise_sigma()))
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `P(delta + eps > 0)` with `eps ~ N(0, sigma^2)`.
pub(crate) fn prob_one(delta: f64, sigma: f64) -> f64 {
    if sigma == 0.0 {
        if delta > 0.0 {
            1.0
        } else {
            0.0
        }
    } else {
        std_normal_cdf(delta / sigma)
    }
}

/// One noisy arbiter decision. Ties resolve to 0.
#[inline]
pub(crate) fn noisy_bit(delta: f64, sigma: f64, rng: &mut SimRng) -> bool {
    if sigma == 0.0 {
        delta > 0.0
    } else {
        delta + sigma * rng.normal() > 0.0
    }
}

pub fn sample_arbiter(n: usize, noise_level: f64, rng: &mut SimRng) -> Result<ArbiterModel> {
    if n == 0 {
        return Err(invalid("stage count must be >= 1"));
    }
    let weights = (0..=n).map(|_| rng.normal()).collect();
    ArbiterModel::new(weights, noise_level)
}

/// `k` arbiter chains over the same challenge, responses combined by XOR.
#[derive(Debug, Clone, PartialEq)]
pub struct XorModel {
    components: Vec<ArbiterModel>,
}

impl XorModel {
    pub fn new(components: Vec<ArbiterModel>) -> Result<Self> {
        let first = components
            .first()
            .ok_or_else(|| invalid("XOR PUF needs at least one component"))?;
        let (n, noise) = (first.stages(), first.noise_level());
        if components
            .iter()
            .any(|c| c.stages() != n || c.noise_level() != noise)
        {
            return Err(invalid(
                "XOR components must share stage count and noise level",
            ));
        }
        Ok(Self { components })
    }

    pub fn sample(n: usize, k: usize, noise_level: f64, rng: &SimRng) -> Result<Self> {
        if k == 0 {
            return Err(invalid("XOR width must be >= 1"));
        }
        let components = (0..k)
            .map(|i| sample_arbiter(n, noise_level, &mut rng.substream(i as u64)))
            .collect::<Result<Vec<_>>>()?;
        Self::new(components)
    }

    pub fn components(&self) -> &[ArbiterModel] {
        &self.components
    }

    pub fn width(&self) -> usize {
        self.components.len()
    }

    pub fn stages(&self) -> usize {
        self.components[0].stages()
    }

    pub fn noise_level(&self) -> f64 {
        self.components[0].noise_level()
    }

    pub fn noise_sigma(&self) -> f64 {
        self.components[0].noise_sigma()
    }

    pub fn with_noise_level(&self, noise_level: f64) -> Self {
        Self {
            components: self
                .components
                .iter()
                .map(|c| c.with_noise_level(noise_level))
                .collect(),
        }
    }

    pub fn deltas(&self, phi: &FeatureVector) -> Result<Vec<f64>> {
        self.components.iter().map(|c| c.delta(phi)).collect()
    }

    /// `P(response = 1)`: with independent chain noise the XOR parity has
    /// `E[(-1)^r] = prod(1 - 2 p_i)`.
    pub fn prob_one(&self, c: &Challenge) -> Result<f64> {
        check_len(c, self.stages())?;
        let phi = transform_challenge(c);
        let sigma = self.noise_sigma();
        let mut prod = 1.0;
        for comp in &self.components {
            prod *= 1.0 - 2.0 * prob_one(comp.delta(&phi)?, sigma);
        }
        Ok(0.5 * (1.0 - prod))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn delta_examples() {
        let m = ArbiterModel::new(vec![1.0, 0.0, 0.0, 0.0], 0.0).unwrap();
        let phi = transform_challenge(&Challenge::zeros(3));
        assert_eq!(m.delta(&phi).unwrap(), 1.0);

        let m = ArbiterModel::new(vec![1.0, -1.0, 0.0, 2.0], 0.0).unwrap();
        let phi = transform_challenge(&Challenge::new(vec![1, 0, 0]).unwrap());
        assert_eq!(m.delta(&phi).unwrap(), 0.0);
    }

    #[test]
    fn delta_rejects_wrong_dimension() {
        let m = ArbiterModel::new(vec![1.0, 0.0, 0.0, 0.0], 0.0).unwrap();
        let phi = transform_challenge(&Challenge::zeros(4));
        assert!(matches!(
            m.delta(&phi),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn delta_is_linear_in_features() {
        let m = sample_arbiter(16, 0.0, &mut SimRng::new(3)).unwrap();
        let c = Challenge::from_int(0xbeef, 16);
        let phi = transform_challenge(&c);
        // Negate the first n entries, keep the constant.
        let mut neg = phi.clone().into_vec();
        let last = neg.len() - 1;
        for v in &mut neg[..last] {
            *v = -*v;
        }
        let w = m.weights();
        let head: f64 = dot(&w[..last], &phi.as_slice()[..last]);
        let total = m.delta(&phi).unwrap();
        let flipped = dot(w, &neg);
        assert!((total - flipped - 2.0 * head).abs() < 1e-12);
    }

    #[test]
    fn flipping_stage_zero_shifts_delta_by_first_weight() {
        let m = sample_arbiter(32, 0.0, &mut SimRng::new(11)).unwrap();
        let mut rng = SimRng::new(12);
        for _ in 0..50 {
            let c = Challenge::new((0..32).map(|_| rng.bit() as u8).collect()).unwrap();
            let phi_old = transform_challenge(&c);
            let before = m.delta(&phi_old).unwrap();
            let after = m.delta_of(&c.with_flipped(0)).unwrap();
            let expected = -2.0 * m.weights()[0] * phi_old.as_slice()[0];
            assert!((after - before - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn sampler_is_deterministic_and_sized() {
        let a = sample_arbiter(64, 0.05, &mut SimRng::new(9)).unwrap();
        let b = sample_arbiter(64, 0.05, &mut SimRng::new(9)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.weights().len(), 65);
        assert!(sample_arbiter(0, 0.05, &mut SimRng::new(9)).is_err());
    }

    #[test]
    fn sampled_weights_have_unit_std() {
        let mut rng = SimRng::new(2024);
        let mut all = Vec::with_capacity(100_000);
        while all.len() < 100_000 {
            all.extend_from_slice(sample_arbiter(99, 0.0, &mut rng).unwrap().weights());
        }
        let mean = all.iter().sum::<f64>() / all.len() as f64;
        let var = all.iter().map(|w| (w - mean).powi(2)).sum::<f64>() / (all.len() - 1) as f64;
        assert!((var.sqrt() - 1.0).abs() < 0.02, "std {}", var.sqrt());
    }

    #[test]
    fn reliability_limits() {
        assert_eq!(prob_one(0.0, 1.0), 0.5);
        assert_eq!(prob_one(0.3, 0.0), 1.0);
        assert_eq!(prob_one(-0.3, 0.0), 0.0);
        let q = std_normal_cdf(1.959_963_984_540_054);
        assert!((q - 0.975).abs() < 1e-9, "{q}");
    }

    #[test]
    fn xor_rejects_mixed_components() {
        let a = ArbiterModel::new(vec![1.0; 5], 0.0).unwrap();
        let b = ArbiterModel::new(vec![1.0; 6], 0.0).unwrap();
        assert!(XorModel::new(vec![a.clone(), b]).is_err());
        assert!(XorModel::new(vec![]).is_err());
        let c = a.with_noise_level(0.1);
        assert!(XorModel::new(vec![a, c]).is_err());
    }
}
