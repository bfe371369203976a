use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::arbiter::{sample_arbiter, XorModel};
use super::feedforward::{FeedForwardLoop, FeedForwardModel};
use super::interpose::InterposeModel;
use super::PufModel;
use crate::error::{invalid, Error, Result};
use crate::rng::SimRng;

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PufKind {
    Arbiter,
    Xor,
    Interpose,
    FeedForward,
}

impl FromStr for PufKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "arbiter" => Ok(PufKind::Arbiter),
            "xor" => Ok(PufKind::Xor),
            "interpose" => Ok(PufKind::Interpose),
            "feed-forward" | "feedforward" => Ok(PufKind::FeedForward),
            other => Err(invalid(format!("unknown PUF kind {other:?}"))),
        }
    }
}

impl fmt::Display for PufKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PufKind::Arbiter => "arbiter",
            PufKind::Xor => "xor",
            PufKind::Interpose => "interpose",
            PufKind::FeedForward => "feed-forward",
        })
    }
}

/// Seed-based description of a PUF instance. The delay parameters are never
/// stored; [`build`](Self::build) regenerates them exactly from `seed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PufDescriptor {
    pub version: u32,
    pub kind: PufKind,
    pub n: usize,
    pub noise_level: f64,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k_xor: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub y: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub interpose_pos: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loops: Option<Vec<FeedForwardLoop>>,
}

impl PufDescriptor {
    fn base(kind: PufKind, n: usize, noise_level: f64, seed: u64) -> Self {
        Self {
            version: MODEL_FORMAT_VERSION,
            kind,
            n,
            noise_level,
            seed,
            k_xor: None,
            x: None,
            y: None,
            interpose_pos: None,
            loops: None,
        }
    }

    pub fn arbiter(n: usize, noise_level: f64, seed: u64) -> Self {
        Self::base(PufKind::Arbiter, n, noise_level, seed)
    }

    pub fn xor(n: usize, k_xor: usize, noise_level: f64, seed: u64) -> Self {
        Self {
            k_xor: Some(k_xor),
            ..Self::base(PufKind::Xor, n, noise_level, seed)
        }
    }

    pub fn interpose(
        n: usize,
        x: usize,
        y: usize,
        interpose_pos: Option<usize>,
        noise_level: f64,
        seed: u64,
    ) -> Self {
        Self {
            x: Some(x),
            y: Some(y),
            interpose_pos: Some(interpose_pos.unwrap_or(n / 2)),
            ..Self::base(PufKind::Interpose, n, noise_level, seed)
        }
    }

    pub fn feed_forward(
        n: usize,
        loops: Option<Vec<FeedForwardLoop>>,
        noise_level: f64,
        seed: u64,
    ) -> Self {
        Self {
            loops: Some(loops.unwrap_or_else(|| vec![FeedForwardLoop::default_for(n)])),
            ..Self::base(PufKind::FeedForward, n, noise_level, seed)
        }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self {
            seed,
            ..self.clone()
        }
    }

    /// Short human-readable label, e.g. `6-xor` or `(1,8)-interpose`.
    pub fn label(&self) -> String {
        match self.kind {
            PufKind::Arbiter => format!("{}-arbiter", self.n),
            PufKind::Xor => format!("{}-xor-{}", self.k_xor.unwrap_or(0), self.n),
            PufKind::Interpose => format!(
                "({},{})-interpose-{}",
                self.x.unwrap_or(0),
                self.y.unwrap_or(0),
                self.n
            ),
            PufKind::FeedForward => format!("feed-forward-{}", self.n),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != MODEL_FORMAT_VERSION {
            return Err(Error::VersionMismatch {
                found: self.version,
                expected: MODEL_FORMAT_VERSION,
            });
        }
        if self.n == 0 {
            return Err(invalid("puf.n must be >= 1"));
        }
        if !(self.noise_level >= 0.0 && self.noise_level.is_finite()) {
            return Err(invalid("puf.noise_level must be finite and >= 0"));
        }
        match self.kind {
            PufKind::Xor if self.k_xor.unwrap_or(0) == 0 => {
                Err(invalid("xor PUF requires puf.k_xor >= 1"))
            }
            PufKind::Interpose if self.x.unwrap_or(0) == 0 || self.y.unwrap_or(0) == 0 => {
                Err(invalid("interpose PUF requires puf.x >= 1 and puf.y >= 1"))
            }
            PufKind::Interpose if self.interpose_pos.unwrap_or(0) > self.n => Err(invalid(
                format!("puf.interpose_pos must be in [0, {}]", self.n),
            )),
            _ => Ok(()),
        }
    }

    pub fn build(&self) -> Result<PufModel> {
        self.validate()?;
        let rng = SimRng::new(self.seed);
        let n = self.n;
        Ok(match self.kind {
            PufKind::Arbiter => {
                PufModel::Arbiter(sample_arbiter(n, self.noise_level, &mut rng.clone())?)
            }
            PufKind::Xor => PufModel::Xor(XorModel::sample(
                n,
                self.k_xor.unwrap_or(1),
                self.noise_level,
                &rng,
            )?),
            PufKind::Interpose => PufModel::Interpose(InterposeModel::sample(
                n,
                self.x.unwrap_or(1),
                self.y.unwrap_or(1),
                self.interpose_pos,
                self.noise_level,
                &rng,
            )?),
            PufKind::FeedForward => PufModel::FeedForward(FeedForwardModel::sample(
                n,
                self.loops
                    .clone()
                    .unwrap_or_else(|| vec![FeedForwardLoop::default_for(n)]),
                self.noise_level,
                &mut rng.clone(),
            )?),
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("descriptor serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let d: Self = serde_json::from_str(s)?;
        d.validate()?;
        Ok(d)
    }
}
