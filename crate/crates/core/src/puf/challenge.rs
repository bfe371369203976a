use std::fmt;

use crate::error::{invalid, Error, Result};

/// A challenge bit vector, one select bit per stage.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Challenge(Vec<u8>);

impl Challenge {
    pub fn new(bits: Vec<u8>) -> Result<Self> {
        if bits.is_empty() {
            return Err(invalid("challenge must have at least one stage"));
        }
        if let Some(b) = bits.iter().find(|&&b| b > 1) {
            return Err(invalid(format!("challenge bit {b} is not 0 or 1")));
        }
        Ok(Self(bits))
    }

    pub fn zeros(n: usize) -> Self {
        Self(vec![0; n.max(1)])
    }

    /// Little-endian binary expansion of `value` into `n` bits.
    pub fn from_int(value: u128, n: usize) -> Self {
        Self(
            (0..n)
                .map(|i| value.checked_shr(i as u32).map_or(0, |v| (v & 1) as u8))
                .collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn bits(&self) -> &[u8] {
        &self.0
    }

    /// Challenge with `bit` inserted before position `pos`.
    pub fn interposed(&self, pos: usize, bit: u8) -> Challenge {
        let mut bits = Vec::with_capacity(self.0.len() + 1);
        bits.extend_from_slice(&self.0[..pos]);
        bits.push(bit);
        bits.extend_from_slice(&self.0[pos..]);
        Challenge(bits)
    }

    pub fn with_flipped(&self, stage: usize) -> Challenge {
        let mut bits = self.0.clone();
        bits[stage] ^= 1;
        Challenge(bits)
    }

    /// Parses a string of `0`/`1` characters.
    pub fn parse(s: &str) -> Result<Self> {
        let bits = s
            .bytes()
            .map(|b| match b {
                b'0' => Ok(0),
                b'1' => Ok(1),
                other => Err(invalid(format!(
                    "unexpected character {:?} in bit string",
                    other as char
                ))),
            })
            .collect::<Result<Vec<u8>>>()?;
        Self::new(bits)
    }
}

impl fmt::Display for Challenge {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for &b in &self.0 {
            f.write_str(if b == 1 { "1" } else { "0" })?;
        }
        Ok(())
    }
}

/// Parity feature vector of a challenge: `phi[i]` is the product of
/// `1 - 2 c[j]` over `j >= i`, with a trailing constant `+1`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector(Vec<f64>);

impl FeatureVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

pub fn transform_challenge(c: &Challenge) -> FeatureVector {
    let n = c.len();
    let mut phi = vec![1.0; n + 1];
    let mut acc = 1.0;
    for i in (0..n).rev() {
        if c.0[i] == 1 {
            acc = -acc;
        }
        phi[i] = acc;
    }
    FeatureVector(phi)
}

pub(crate) fn check_len(c: &Challenge, n: usize) -> Result<()> {
    if c.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: c.len(),
        });
    }
    Ok(())
}
