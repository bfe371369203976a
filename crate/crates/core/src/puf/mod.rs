//! Delay-based PUF simulation under the linear additive delay model.
//!
//! Every evaluation adds fresh Gaussian noise to each arbiter decision.
//! Models are immutable; randomness always comes from an explicit [`SimRng`].

mod arbiter;
mod challenge;
mod descriptor;
mod feedforward;
mod interpose;

pub use arbiter::{sample_arbiter, std_normal_cdf, ArbiterModel, XorModel};
pub use challenge::{transform_challenge, Challenge, FeatureVector};
pub use descriptor::{PufDescriptor, PufKind, MODEL_FORMAT_VERSION};
pub use feedforward::{FeedForwardLoop, FeedForwardModel, StageDelays};
pub use interpose::InterposeModel;

use arbiter::{noisy_bit, prob_one};
use challenge::check_len;

use crate::error::{Error, Result};
use crate::rng::SimRng;

#[derive(Debug, Clone, PartialEq)]
pub enum PufModel {
    Arbiter(ArbiterModel),
    Xor(XorModel),
    Interpose(InterposeModel),
    FeedForward(FeedForwardModel),
}

impl PufModel {
    pub fn kind(&self) -> PufKind {
        match self {
            PufModel::Arbiter(_) => PufKind::Arbiter,
            PufModel::Xor(_) => PufKind::Xor,
            PufModel::Interpose(_) => PufKind::Interpose,
            PufModel::FeedForward(_) => PufKind::FeedForward,
        }
    }

    /// Challenge length accepted by [`eval`](Self::eval).
    pub fn stages(&self) -> usize {
        match self {
            PufModel::Arbiter(m) => m.stages(),
            PufModel::Xor(m) => m.stages(),
            PufModel::Interpose(m) => m.stages(),
            PufModel::FeedForward(m) => m.stages(),
        }
    }

    pub fn noise_level(&self) -> f64 {
        match self {
            PufModel::Arbiter(m) => m.noise_level(),
            PufModel::Xor(m) => m.noise_level(),
            PufModel::Interpose(m) => m.noise_level(),
            PufModel::FeedForward(m) => m.noise_level(),
        }
    }

    /// The same instance with a different noise level (same delays).
    pub fn with_noise_level(&self, noise_level: f64) -> PufModel {
        match self {
            PufModel::Arbiter(m) => PufModel::Arbiter(m.with_noise_level(noise_level)),
            PufModel::Xor(m) => PufModel::Xor(m.with_noise_level(noise_level)),
            PufModel::Interpose(m) => PufModel::Interpose(m.with_noise_level(noise_level)),
            PufModel::FeedForward(m) => PufModel::FeedForward(m.with_noise_level(noise_level)),
        }
    }

    pub fn noiseless(&self) -> PufModel {
        self.with_noise_level(0.0)
    }

    /// One noisy response bit.
    pub fn eval(&self, c: &Challenge, rng: &mut SimRng) -> Result<u8> {
        Ok(self.prepare(c)?.sample(rng))
    }

    /// Precomputes the noiseless delay differences for `c` so repeated
    /// evaluations only pay for the noise draws.
    pub fn prepare<'a>(&'a self, c: &Challenge) -> Result<Prepared<'a>> {
        check_len(c, self.stages())?;
        Ok(match self {
            PufModel::Arbiter(m) => Prepared::Linear {
                deltas: vec![m.delta(&transform_challenge(c))?],
                sigma: m.noise_sigma(),
            },
            PufModel::Xor(m) => Prepared::Linear {
                deltas: m.deltas(&transform_challenge(c))?,
                sigma: m.noise_sigma(),
            },
            PufModel::Interpose(m) => {
                let pos = m.interpose_pos();
                Prepared::Interpose {
                    upper: m.upper().deltas(&transform_challenge(c))?,
                    upper_sigma: m.upper().noise_sigma(),
                    lower: [
                        m.lower()
                            .deltas(&transform_challenge(&c.interposed(pos, 0)))?,
                        m.lower()
                            .deltas(&transform_challenge(&c.interposed(pos, 1)))?,
                    ],
                    lower_sigma: m.lower().noise_sigma(),
                }
            }
            PufModel::FeedForward(m) => Prepared::FeedForward {
                model: m,
                challenge: c.clone(),
            },
        })
    }

    /// `P(response = 1)`; closed form for Arbiter and XOR models only.
    pub fn prob_one(&self, c: &Challenge) -> Result<f64> {
        match self {
            PufModel::Arbiter(m) => m.prob_one(c),
            PufModel::Xor(m) => m.prob_one(c),
            other => Err(Error::Unsupported(format!(
                "no closed-form response probability for {:?} PUFs",
                other.kind()
            ))),
        }
    }
}

/// Analytic reliability `|2 p - 1|` of one challenge.
pub fn analytic_reliability(model: &PufModel, c: &Challenge) -> Result<f64> {
    let p = model.prob_one(c)?;
    Ok((2.0 * p - 1.0).abs())
}

/// A model bound to one challenge, ready for repeated noisy evaluation.
#[derive(Debug, Clone)]
pub enum Prepared<'a> {
    Linear {
        deltas: Vec<f64>,
        sigma: f64,
    },
    Interpose {
        upper: Vec<f64>,
        upper_sigma: f64,
        lower: [Vec<f64>; 2],
        lower_sigma: f64,
    },
    FeedForward {
        model: &'a FeedForwardModel,
        challenge: Challenge,
    },
}

impl Prepared<'_> {
    #[inline]
    pub fn sample(&self, rng: &mut SimRng) -> u8 {
        match self {
            Prepared::Linear { deltas, sigma } => xor_sample(deltas, *sigma, rng),
            Prepared::Interpose {
                upper,
                upper_sigma,
                lower,
                lower_sigma,
            } => {
                let bit = xor_sample(upper, *upper_sigma, rng);
                xor_sample(&lower[bit as usize], *lower_sigma, rng)
            }
            Prepared::FeedForward { model, challenge } => model.eval(challenge, rng) as u8,
        }
    }

    /// `P(response = 1)` when the prepared model is a plain Arbiter/XOR.
    pub fn prob_one(&self) -> Option<f64> {
        match self {
            Prepared::Linear { deltas, sigma } => {
                let prod: f64 = deltas
                    .iter()
                    .map(|&d| 1.0 - 2.0 * prob_one(d, *sigma))
                    .product();
                Some(0.5 * (1.0 - prod))
            }
            _ => None,
        }
    }
}

#[inline]
fn xor_sample(deltas: &[f64], sigma: f64, rng: &mut SimRng) -> u8 {
    deltas
        .iter()
        .fold(0u8, |acc, &d| acc ^ noisy_bit(d, sigma, rng) as u8)
}
