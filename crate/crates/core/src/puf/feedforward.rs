use super::arbiter::{noisy_bit, ArbiterModel};
use super::challenge::Challenge;
use crate::error::{invalid, Result};
use crate::rng::SimRng;

/// Per-stage path delays: `[top straight, bottom straight, top crossed, bottom crossed]`.
pub type StageDelays = [f64; 4];

/// A feed-forward loop: an intermediate arbiter placed after `arbiter_stage`
/// drives the select bit of `target_stage`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct FeedForwardLoop {
    pub arbiter_stage: usize,
    pub target_stage: usize,
}

impl FeedForwardLoop {
    pub fn new(arbiter_stage: usize, target_stage: usize) -> Self {
        Self {
            arbiter_stage,
            target_stage,
        }
    }

    /// A single loop spanning the middle third of the chain.
    pub fn default_for(n: usize) -> Self {
        Self::new(n / 3, 2 * n / 3)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeedForwardModel {
    stage_delays: Vec<StageDelays>,
    loops: Vec<FeedForwardLoop>,
    noise_level: f64,
    // Select-bit source per stage: Some(loop index) when driven by a loop.
    driven_by: Vec<Option<usize>>,
}

impl FeedForwardModel {
    pub fn new(
        stage_delays: Vec<StageDelays>,
        loops: Vec<FeedForwardLoop>,
        noise_level: f64,
    ) -> Result<Self> {
        let n = stage_delays.len();
        if n == 0 {
            return Err(invalid("feed-forward PUF needs at least one stage"));
        }
        if !(noise_level >= 0.0 && noise_level.is_finite()) {
            return Err(invalid(format!(
                "noise level {noise_level} must be finite and >= 0"
            )));
        }
        let mut driven_by = vec![None; n];
        for (i, l) in loops.iter().enumerate() {
            if l.arbiter_stage >= l.target_stage {
                return Err(invalid(format!(
                    "loop {i}: arbiter stage {} must precede target stage {}",
                    l.arbiter_stage, l.target_stage
                )));
            }
            if l.target_stage >= n {
                return Err(invalid(format!(
                    "loop {i}: target stage {} out of range for {n} stages",
                    l.target_stage
                )));
            }
            if driven_by[l.target_stage].replace(i).is_some() {
                return Err(invalid(format!(
                    "stage {} is the target of more than one loop",
                    l.target_stage
                )));
            }
        }
        Ok(Self {
            stage_delays,
            loops,
            noise_level,
            driven_by,
        })
    }

    pub fn sample(
        n: usize,
        loops: Vec<FeedForwardLoop>,
        noise_level: f64,
        rng: &mut SimRng,
    ) -> Result<Self> {
        if n == 0 {
            return Err(invalid("stage count must be >= 1"));
        }
        let delays = (0..n)
            .map(|_| [rng.normal(), rng.normal(), rng.normal(), rng.normal()])
            .collect();
        Self::new(delays, loops, noise_level)
    }

    pub fn stages(&self) -> usize {
        self.stage_delays.len()
    }

    pub fn loops(&self) -> &[FeedForwardLoop] {
        &self.loops
    }

    pub fn stage_delays(&self) -> &[StageDelays] {
        &self.stage_delays
    }

    pub fn noise_level(&self) -> f64 {
        self.noise_level
    }

    /// Each stage's delay difference has variance 2, the equivalent linear
    /// weights have total variance `2n`.
    pub fn noise_sigma(&self) -> f64 {
        self.noise_level * (2.0 * self.stages() as f64).sqrt()
    }

    pub fn with_noise_level(&self, noise_level: f64) -> Self {
        Self {
            noise_level,
            ..self.clone()
        }
    }

    /// Linear-model weights reproducing this chain when no loops are present.
    ///
    /// A straight stage maps the difference `D` to `D + a_i`, a crossed one to
    /// `-D + c_i`; expanding over stages gives `w_0 = (a_0 - c_0) / 2`,
    /// `w_i = (a_i - c_i) / 2 + (a_{i-1} + c_{i-1}) / 2`, `w_n = (a_{n-1} + c_{n-1}) / 2`.
    pub fn equivalent_arbiter(&self) -> Result<ArbiterModel> {
        let n = self.stages();
        let mut w = vec![0.0; n + 1];
        for (i, d) in self.stage_delays.iter().enumerate() {
            let straight = d[0] - d[1];
            let crossed = d[2] - d[3];
            w[i] += 0.5 * (straight - crossed);
            w[i + 1] += 0.5 * (straight + crossed);
        }
        ArbiterModel::new(w, 0.0)
    }

    pub(crate) fn eval(&self, c: &Challenge, rng: &mut SimRng) -> bool {
        let sigma = self.noise_sigma();
        let mut loop_bits = vec![0u8; self.loops.len()];
        let mut diff = 0.0;
        let bits = c.bits();
        for (stage, d) in self.stage_delays.iter().enumerate() {
            let select = match self.driven_by[stage] {
                Some(l) => loop_bits[l],
                None => bits[stage],
            };
            diff = if select == 0 {
                diff + (d[0] - d[1])
            } else {
                -diff + (d[2] - d[3])
            };
            for (l, ff) in self.loops.iter().enumerate() {
                if ff.arbiter_stage == stage {
                    loop_bits[l] = noisy_bit(diff, sigma, rng) as u8;
                }
            }
        }
        noisy_bit(diff, sigma, rng)
    }
}
