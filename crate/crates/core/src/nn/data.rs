//! Turns repeated-measurement datasets into network inputs and per-head targets.

use serde::{Deserialize, Serialize};

use super::matrix::Matrix;
use super::network::HeadTarget;
use super::spec::{AttackMode, HeadRole, NetworkSpec};
use crate::crp::{Dataset, RepeatedMeasurement};
use crate::error::{invalid, Result};
use crate::puf::transform_challenge;
use crate::reliability::{ldhf_from_responses, msa_label, onehot_repr, LdhfParams};

/// How a challenge is presented to the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InputEncoding {
    /// Parity features in {-1, +1}^(n+1).
    #[default]
    Parity,
    /// Challenge bits as 0.0 / 1.0.
    RawBits,
}

impl std::str::FromStr for InputEncoding {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "parity" => Ok(InputEncoding::Parity),
            "raw-bits" | "raw" => Ok(InputEncoding::RawBits),
            _ => Err(invalid(format!(
                "unknown input encoding {s:?} (expected parity or raw-bits)"
            ))),
        }
    }
}

impl std::fmt::Display for InputEncoding {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            InputEncoding::Parity => "parity",
            InputEncoding::RawBits => "raw-bits",
        })
    }
}

impl InputEncoding {
    pub fn input_dim(self, n: usize) -> usize {
        match self {
            InputEncoding::Parity => n + 1,
            InputEncoding::RawBits => n,
        }
    }

    pub fn encode(self, record: &RepeatedMeasurement, out: &mut Vec<f64>) {
        match self {
            InputEncoding::Parity => {
                out.extend_from_slice(transform_challenge(&record.challenge).as_slice())
            }
            InputEncoding::RawBits => out.extend(record.challenge.bits().iter().map(|&b| b as f64)),
        }
    }
}

/// Inputs, per-head targets and response labels, row-aligned.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSet {
    pub inputs: Matrix,
    pub targets: Vec<HeadTarget>,
    /// Response label of each row; the majority of its repeated responses.
    pub labels: Vec<u8>,
}

impl TrainingSet {
    pub fn len(&self) -> usize {
        self.inputs.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn subset(&self, idx: &[usize]) -> TrainingSet {
        TrainingSet {
            inputs: self.inputs.gather_rows(idx),
            targets: self.targets.iter().map(|t| t.gather(idx)).collect(),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
        }
    }
}

/// Builds inputs and targets for every head of `spec` from a dataset.
pub fn build_training_set(
    d: &Dataset,
    spec: &NetworkSpec,
    mode: AttackMode,
    encoding: InputEncoding,
) -> Result<TrainingSet> {
    let n = d.header.n;
    let m = d.header.m_repeats;
    if encoding.input_dim(n) != spec.input_dim {
        return Err(invalid(format!(
            "network expects {} inputs but {encoding} encoding of n={n} gives {}",
            spec.input_dim,
            encoding.input_dim(n)
        )));
    }
    let ldhf = match mode {
        AttackMode::Ldhf { k } => Some(LdhfParams::new(m, k)?),
        _ => None,
    };

    let mut inputs = Vec::with_capacity(d.len() * spec.input_dim);
    let mut labels = Vec::with_capacity(d.len());
    for r in &d.records {
        encoding.encode(r, &mut inputs);
        labels.push(r.majority());
    }

    let mut targets = Vec::with_capacity(spec.heads.len());
    for head in &spec.heads {
        let target = match head.role {
            HeadRole::Response => HeadTarget::Binary(labels.iter().map(|&b| b as f64).collect()),
            HeadRole::Reliability => {
                let mut rows = Vec::with_capacity(d.len() * head.output_dim);
                for r in &d.records {
                    let v = match ldhf {
                        Some(p) => ldhf_from_responses(&r.responses, p)?,
                        None => onehot_repr(r.summary()),
                    };
                    if v.dim() != head.output_dim {
                        return Err(invalid(format!(
                            "reliability head has {} outputs but the representation has {}",
                            head.output_dim,
                            v.dim()
                        )));
                    }
                    rows.extend_from_slice(&v.probs);
                }
                HeadTarget::Distribution(Matrix::from_vec(d.len(), head.output_dim, rows))
            }
            HeadRole::Crossed => {
                if head.output_dim != 2 * (m + 1) {
                    return Err(invalid(format!(
                        "crossed head has {} outputs, expected {} for m={m}",
                        head.output_dim,
                        2 * (m + 1)
                    )));
                }
                let mut rows = vec![0.0; d.len() * head.output_dim];
                for (i, (r, &label)) in d.records.iter().zip(&labels).enumerate() {
                    rows[i * head.output_dim + msa_label(label, r.summary())] = 1.0;
                }
                HeadTarget::Distribution(Matrix::from_vec(d.len(), head.output_dim, rows))
            }
        };
        targets.push(target);
    }
    Ok(TrainingSet {
        inputs: Matrix::from_vec(d.len(), spec.input_dim, inputs),
        targets,
        labels,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crp::{generate_dataset, LcgParams, MeasurementConfig};
    use crate::nn::spec::build_architecture;
    use crate::puf::PufDescriptor;

    fn dataset(m: usize) -> Dataset {
        let puf = PufDescriptor::xor(12, 2, 0.5, 1);
        let cfg = MeasurementConfig::new(1, m, 40).unwrap();
        generate_dataset(&puf, &cfg, 9, LcgParams::default()).unwrap()
    }

    #[test]
    fn alsca_targets_follow_records() {
        let d = dataset(10);
        let spec = build_architecture(AttackMode::Alsca, 13, 10).unwrap();
        let set = build_training_set(&d, &spec, AttackMode::Alsca, InputEncoding::Parity).unwrap();
        assert_eq!(set.len(), 40);
        let HeadTarget::Distribution(rel) = &set.targets[1] else {
            panic!()
        };
        for (i, r) in d.records.iter().enumerate() {
            assert_eq!(set.labels[i], r.majority());
            assert_eq!(rel.get(i, r.ones()), 1.0);
            assert_eq!(rel.row(i).iter().sum::<f64>(), 1.0);
            assert_eq!(set.inputs.get(i, 12), 1.0);
        }
    }

    #[test]
    fn msa_targets_are_crossed_one_hot() {
        let d = dataset(4);
        let spec = build_architecture(AttackMode::Msa, 12, 4).unwrap();
        let set = build_training_set(&d, &spec, AttackMode::Msa, InputEncoding::RawBits).unwrap();
        let HeadTarget::Distribution(t) = &set.targets[0] else {
            panic!()
        };
        for (i, r) in d.records.iter().enumerate() {
            let hot = t.row(i).iter().position(|&v| v == 1.0).unwrap();
            assert_eq!(hot, set.labels[i] as usize * 5 + r.ones());
        }
    }

    #[test]
    fn ldhf_targets_are_soft() {
        let d = dataset(20);
        let mode = AttackMode::Ldhf { k: 5 };
        let spec = build_architecture(mode, 13, 20).unwrap();
        let set = build_training_set(&d, &spec, mode, InputEncoding::Parity).unwrap();
        let HeadTarget::Distribution(t) = &set.targets[1] else {
            panic!()
        };
        assert_eq!(t.cols(), 6);
        for i in 0..t.rows() {
            assert!((t.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn input_dimension_must_match() {
        let d = dataset(4);
        let spec = build_architecture(AttackMode::Alsca, 13, 4).unwrap();
        assert!(build_training_set(&d, &spec, AttackMode::Alsca, InputEncoding::RawBits).is_err());
    }
}
