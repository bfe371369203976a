use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::puf::Challenge;

/// Linear congruential generator `c' = (a c + g) mod 2^bits`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LcgState {
    pub c: u64,
    pub a: u64,
    pub g: u64,
    bits: u32,
}

impl LcgState {
    /// `bits` is the stage count; the modulus is `2^bits`.
    pub fn new(c: u64, a: u64, g: u64, bits: u32) -> Result<Self> {
        if bits == 0 || bits > 64 {
            return Err(invalid(format!(
                "LCG modulus 2^{bits} unsupported; stage count must be in 1..=64"
            )));
        }
        let mask = mask(bits);
        Ok(Self {
            c: c & mask,
            a: a & mask,
            g: g & mask,
            bits,
        })
    }

    pub fn bits(&self) -> u32 {
        self.bits
    }

    /// `2^bits`, saturating at `u64::MAX + 1` which is reported as `None`.
    pub fn modulus(&self) -> Option<u64> {
        1u64.checked_shl(self.bits)
    }

    pub fn next(self) -> Self {
        Self {
            c: self.a.wrapping_mul(self.c).wrapping_add(self.g) & mask(self.bits),
            ..self
        }
    }
}

fn mask(bits: u32) -> u64 {
    if bits == 64 {
        u64::MAX
    } else {
        (1u64 << bits) - 1
    }
}

/// Multiplier and increment of the challenge generator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LcgParams {
    pub a: u64,
    pub g: u64,
}

impl Default for LcgParams {
    /// These constants are not full-period for power-of-two moduli; supply
    /// Hull-Dobell constants (`a = 1 mod 4`, odd `g`) when period matters.
    fn default() -> Self {
        Self { a: 75, g: 74 }
    }
}

/// `count` challenges: the little-endian expansions of the states that
/// follow `seed`.
pub fn lcg_challenges(seed: u64, n: usize, count: usize, lcg: LcgParams) -> Result<Vec<Challenge>> {
    let mut state = LcgState::new(seed, lcg.a, lcg.g, n.min(65) as u32)?;
    Ok((0..count)
        .map(|_| {
            state = state.next();
            Challenge::from_int(state.c as u128, n)
        })
        .collect())
}
