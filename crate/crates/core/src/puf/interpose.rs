use super::arbiter::XorModel;
use crate::error::{invalid, Result};
use crate::rng::SimRng;

/// `(x, y)`-Interpose PUF: the response of an upper `x`-XOR over `n` stages is
/// inserted into the challenge of a lower `y`-XOR over `n + 1` stages.
#[derive(Debug, Clone, PartialEq)]
pub struct InterposeModel {
    upper: XorModel,
    lower: XorModel,
    interpose_pos: usize,
}

impl InterposeModel {
    pub fn new(upper: XorModel, lower: XorModel, interpose_pos: usize) -> Result<Self> {
        let n = upper.stages();
        if lower.stages() != n + 1 {
            return Err(invalid(format!(
                "lower chain must have {} stages, has {}",
                n + 1,
                lower.stages()
            )));
        }
        if interpose_pos > n {
            return Err(invalid(format!(
                "interpose position {interpose_pos} exceeds {n}"
            )));
        }
        Ok(Self {
            upper,
            lower,
            interpose_pos,
        })
    }

    pub fn sample(
        n: usize,
        x: usize,
        y: usize,
        interpose_pos: Option<usize>,
        noise_level: f64,
        rng: &SimRng,
    ) -> Result<Self> {
        let upper = XorModel::sample(n, x, noise_level, &rng.substream(0))?;
        let lower = XorModel::sample(n + 1, y, noise_level, &rng.substream(1))?;
        Self::new(upper, lower, interpose_pos.unwrap_or(n / 2))
    }

    pub fn upper(&self) -> &XorModel {
        &self.upper
    }

    pub fn lower(&self) -> &XorModel {
        &self.lower
    }

    pub fn interpose_pos(&self) -> usize {
        self.interpose_pos
    }

    pub fn stages(&self) -> usize {
        self.upper.stages()
    }

    pub fn noise_level(&self) -> f64 {
        self.upper.noise_level()
    }

    pub fn with_noise_level(&self, noise_level: f64) -> Self {
        Self {
            upper: self.upper.with_noise_level(noise_level),
            lower: self.lower.with_noise_level(noise_level),
            interpose_pos: self.interpose_pos,
        }
    }
}
