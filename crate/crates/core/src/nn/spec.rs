use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OutputKind {
    /// One logistic unit.
    Binary,
    /// Softmax over `output_dim` classes.
    Distribution,
}

/// What a head predicts; drives target construction and decoding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HeadRole {
    Response,
    Reliability,
    /// Crossed response x count classes; the response is the block of the argmax.
    Crossed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    #[default]
    Relu,
    Tanh,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 || x.is_nan() {
                    x
                } else {
                    0.0
                }
            }
            Activation::Tanh => x.tanh(),
        }
    }

    /// Derivative expressed through the activation output `y`.
    #[inline]
    pub fn grad_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Relu => (y > 0.0) as u8 as f64,
            Activation::Tanh => 1.0 - y * y,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadSpec {
    pub name: String,
    pub role: HeadRole,
    pub task_layers: Vec<usize>,
    pub output_dim: usize,
    pub output_kind: OutputKind,
    pub loss_weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub input_dim: usize,
    pub shared_layers: Vec<usize>,
    pub heads: Vec<HeadSpec>,
    #[serde(default)]
    pub activation: Activation,
}

impl NetworkSpec {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(invalid("network input dimension must be >= 1"));
        }
        if self.heads.is_empty() {
            return Err(invalid("network needs at least one head"));
        }
        if self.shared_layers.contains(&0) {
            return Err(invalid("shared layer widths must be >= 1"));
        }
        for h in &self.heads {
            if h.output_dim == 0 || h.task_layers.contains(&0) {
                return Err(invalid(format!("head {:?}: widths must be >= 1", h.name)));
            }
            if !(h.loss_weight > 0.0 && h.loss_weight.is_finite()) {
                return Err(invalid(format!(
                    "head {:?}: loss weight must be > 0",
                    h.name
                )));
            }
            if h.output_kind == OutputKind::Binary && h.output_dim != 1 {
                return Err(invalid(format!(
                    "binary head {:?} must have one output",
                    h.name
                )));
            }
        }
        Ok(())
    }

    /// Width feeding the heads.
    pub fn trunk_width(&self) -> usize {
        self.shared_layers.last().copied().unwrap_or(self.input_dim)
    }

    /// `(fan_in, fan_out)` of every dense layer in parameter order: shared
    /// layers first, then each head's task layers followed by its output layer.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let mut shapes = Vec::new();
        let mut fan_in = self.input_dim;
        for &w in &self.shared_layers {
            shapes.push((fan_in, w));
            fan_in = w;
        }
        for h in &self.heads {
            let mut fan_in = self.trunk_width();
            for &w in &h.task_layers {
                shapes.push((fan_in, w));
                fan_in = w;
            }
            shapes.push((fan_in, h.output_dim));
        }
        shapes
    }

    pub fn parameter_count(&self) -> usize {
        self.layer_shapes().iter().map(|(i, o)| i * o + o).sum()
    }

    pub fn head(&self, role: HeadRole) -> Option<(usize, &HeadSpec)> {
        self.heads.iter().enumerate().find(|(_, h)| h.role == role)
    }
}

/// Attack network families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AttackMode {
    /// Response head only; the plain modeling-attack baseline.
    Response,
    /// Single crossed head over `2(m+1)` classes.
    Msa,
    /// Shared body, response head and one-hot reliability head.
    Mlmsa,
    /// As MLMSA, with two task-specific layers per head.
    Alsca,
    /// ALScA topology with a `(k+1)`-dim LDHF reliability head.
    Ldhf { k: usize },
}

impl fmt::Display for AttackMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AttackMode::Response => f.write_str("response"),
            AttackMode::Msa => f.write_str("msa"),
            AttackMode::Mlmsa => f.write_str("mlmsa"),
            AttackMode::Alsca => f.write_str("alsca"),
            AttackMode::Ldhf { k } => write!(f, "ldhf-{k}"),
        }
    }
}

impl FromStr for AttackMode {
    type Err = Error;

    /// Accepts `response`, `msa`, `mlmsa`, `alsca`, and `ldhf-<k>`.
    fn from_str(s: &str) -> Result<Self> {
        let lower = s.to_ascii_lowercase();
        match lower.as_str() {
            "response" => Ok(AttackMode::Response),
            "msa" => Ok(AttackMode::Msa),
            "mlmsa" => Ok(AttackMode::Mlmsa),
            "alsca" => Ok(AttackMode::Alsca),
            other => match other.strip_prefix("ldhf-").map(str::parse::<usize>) {
                Some(Ok(k)) => Ok(AttackMode::Ldhf { k }),
                _ => Err(invalid(format!(
                    "unknown attack mode {s:?} (expected response, msa, mlmsa, alsca or ldhf-<k>)"
                ))),
            },
        }
    }
}

pub const SHARED_LAYERS: [usize; 3] = [64, 128, 128];
pub const TASK_LAYERS: [usize; 2] = [64, 64];
pub const RELIABILITY_LOSS_WEIGHT: f64 = 1.8;
pub const RESPONSE_LOSS_WEIGHT: f64 = 1.0;

fn response_head(task_layers: &[usize]) -> HeadSpec {
    HeadSpec {
        name: "response".into(),
        role: HeadRole::Response,
        task_layers: task_layers.to_vec(),
        output_dim: 1,
        output_kind: OutputKind::Binary,
        loss_weight: RESPONSE_LOSS_WEIGHT,
    }
}

fn reliability_head(task_layers: &[usize], dim: usize) -> HeadSpec {
    HeadSpec {
        name: "reliability".into(),
        role: HeadRole::Reliability,
        task_layers: task_layers.to_vec(),
        output_dim: dim,
        output_kind: OutputKind::Distribution,
        loss_weight: RELIABILITY_LOSS_WEIGHT,
    }
}

/// Network topology of an attack family for `m` repeats per challenge.
pub fn build_architecture(mode: AttackMode, input_dim: usize, m: usize) -> Result<NetworkSpec> {
    if input_dim == 0 {
        return Err(invalid("input dimension must be >= 1"));
    }
    if m == 0 && mode != AttackMode::Response {
        return Err(invalid("reliability-based attacks need m >= 1"));
    }
    let heads = match mode {
        AttackMode::Response => vec![response_head(&[])],
        AttackMode::Msa => vec![HeadSpec {
            name: "crossed".into(),
            role: HeadRole::Crossed,
            task_layers: vec![],
            output_dim: 2 * (m + 1),
            output_kind: OutputKind::Distribution,
            loss_weight: 1.0,
        }],
        AttackMode::Mlmsa => vec![response_head(&[]), reliability_head(&[], m + 1)],
        AttackMode::Alsca => vec![
            response_head(&TASK_LAYERS),
            reliability_head(&TASK_LAYERS, m + 1),
        ],
        AttackMode::Ldhf { k } => {
            if k == 0 || k > m {
                return Err(invalid(format!(
                    "LDHF attack needs 1 <= k <= m (k={k}, m={m})"
                )));
            }
            vec![
                response_head(&TASK_LAYERS),
                reliability_head(&TASK_LAYERS, k + 1),
            ]
        }
    };
    let spec = NetworkSpec {
        input_dim,
        shared_layers: SHARED_LAYERS.to_vec(),
        heads,
        activation: Activation::Relu,
    };
    spec.validate()?;
    Ok(spec)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn alsca_heads() {
        let s = build_architecture(AttackMode::Alsca, 65, 10).unwrap();
        assert_eq!(s.shared_layers, vec![64, 128, 128]);
        assert_eq!(s.heads.len(), 2);
        assert_eq!(s.heads[0].output_dim, 1);
        assert_eq!(s.heads[1].output_dim, 11);
        assert!(s.heads.iter().all(|h| h.task_layers == vec![64, 64]));
        assert_eq!(s.heads[1].loss_weight, 1.8);
        assert_eq!(s.heads[0].loss_weight, 1.0);
    }

    #[test]
    fn msa_single_head() {
        let s = build_architecture(AttackMode::Msa, 65, 10).unwrap();
        assert_eq!(s.heads.len(), 1);
        assert_eq!(s.heads[0].output_dim, 22);
        assert!(s.heads[0].task_layers.is_empty());
    }

    #[test]
    fn ldhf_head_dimension() {
        let s = build_architecture(AttackMode::Ldhf { k: 20 }, 65, 1000).unwrap();
        assert_eq!(s.heads[1].output_dim, 21);
        assert!(build_architecture(AttackMode::Ldhf { k: 20 }, 65, 10).is_err());
        assert!(build_architecture(AttackMode::Ldhf { k: 0 }, 65, 10).is_err());
    }

    #[test]
    fn mlmsa_is_alsca_without_task_layers() {
        let alsca = build_architecture(AttackMode::Alsca, 65, 10).unwrap();
        let mlmsa = build_architecture(AttackMode::Mlmsa, 65, 10).unwrap();
        let mut stripped = alsca.clone();
        for h in &mut stripped.heads {
            h.task_layers.clear();
        }
        assert_eq!(stripped.layer_shapes(), mlmsa.layer_shapes());
        assert_eq!(stripped, mlmsa);
    }

    #[test]
    fn layer_shapes_order() {
        let s = build_architecture(AttackMode::Alsca, 65, 10).unwrap();
        assert_eq!(
            s.layer_shapes(),
            vec![
                (65, 64),
                (64, 128),
                (128, 128),
                (128, 64),
                (64, 64),
                (64, 1),
                (128, 64),
                (64, 64),
                (64, 11),
            ]
        );
    }

    #[test]
    fn mode_parsing() {
        for m in [
            AttackMode::Response,
            AttackMode::Msa,
            AttackMode::Mlmsa,
            AttackMode::Alsca,
            AttackMode::Ldhf { k: 20 },
        ] {
            assert_eq!(m.to_string().parse::<AttackMode>().unwrap(), m);
        }
        assert!("cma-es".parse::<AttackMode>().is_err());
        assert!("ldhf-x".parse::<AttackMode>().is_err());
    }
}
