//! Central finite-difference check of the analytic gradients.

use super::matrix::Matrix;
use super::network::{backward, forward, loss, HeadTarget, Parameters};
use super::spec::{Activation, HeadRole, HeadSpec, NetworkSpec, OutputKind};
use crate::error::Result;
use crate::rng::SimRng;

const DENOM_FLOOR: f64 = 1e-6;

/// Largest relative error between analytic and finite-difference gradients,
/// with denominator `max(|a|, |fd|, 1e-6)`. The floor keeps near-zero
/// entries, where central differences carry ~1e-11 roundoff at eps = 1e-5,
/// from dominating the maximum.
pub fn max_relative_error(
    spec: &NetworkSpec,
    params: &Parameters,
    x: &Matrix,
    targets: &[HeadTarget],
    eps: f64,
) -> Result<f64> {
    let (_, grads) = backward(spec, params, x, targets)?;
    let analytic = grads.flatten();
    let mut flat = params.flatten();
    let total = |flat: &[f64]| -> Result<f64> {
        let p = Parameters::unflatten(spec, flat)?;
        Ok(loss(&forward(spec, &p, x)?, targets, spec)?.total)
    };
    let mut worst: f64 = 0.0;
    for i in 0..flat.len() {
        let orig = flat[i];
        flat[i] = orig + eps;
        let up = total(&flat)?;
        flat[i] = orig - eps;
        let down = total(&flat)?;
        flat[i] = orig;
        let fd = (up - down) / (2.0 * eps);
        let a = analytic[i];
        let denom = a.abs().max(fd.abs()).max(DENOM_FLOOR);
        worst = worst.max((a - fd).abs() / denom);
    }
    Ok(worst)
}

/// A random small multi-head network with a matching random batch.
pub fn random_problem(rng: &mut SimRng) -> (NetworkSpec, Parameters, Matrix, Vec<HeadTarget>) {
    let input_dim = 2 + rng.below(4);
    let shared_layers: Vec<usize> = (0..rng.below(3)).map(|_| 2 + rng.below(5)).collect();
    let n_heads = 1 + rng.below(2);
    let mut heads = Vec::with_capacity(n_heads);
    for h in 0..n_heads {
        let binary = h == 0 && rng.bit();
        heads.push(HeadSpec {
            name: format!("h{h}"),
            role: if binary {
                HeadRole::Response
            } else {
                HeadRole::Reliability
            },
            task_layers: (0..rng.below(3)).map(|_| 2 + rng.below(4)).collect(),
            output_dim: if binary { 1 } else { 2 + rng.below(6) },
            output_kind: if binary {
                OutputKind::Binary
            } else {
                OutputKind::Distribution
            },
            loss_weight: 0.5 + 2.0 * rng.uniform(),
        });
    }
    let spec = NetworkSpec {
        input_dim,
        shared_layers,
        heads,
        activation: Activation::Relu,
    };
    let mut params = Parameters::init(&spec, rng);
    // Nonzero biases keep pre-activations off the rectifier kink at 0.
    for layer in &mut params.layers {
        layer.bias.iter_mut().for_each(|b| *b = 0.1 * rng.normal());
    }
    let batch = 1 + rng.below(5);
    let x = Matrix::from_vec(
        batch,
        input_dim,
        (0..batch * input_dim).map(|_| rng.normal()).collect(),
    );
    let targets = spec
        .heads
        .iter()
        .map(|h| match h.output_kind {
            OutputKind::Binary => {
                HeadTarget::Binary((0..batch).map(|_| rng.bit() as u8 as f64).collect())
            }
            OutputKind::Distribution => {
                let mut data = Vec::with_capacity(batch * h.output_dim);
                for _ in 0..batch {
                    let raw: Vec<f64> = (0..h.output_dim).map(|_| rng.uniform()).collect();
                    let s: f64 = raw.iter().sum();
                    data.extend(raw.iter().map(|v| v / s));
                }
                HeadTarget::Distribution(Matrix::from_vec(batch, h.output_dim, data))
            }
        })
        .collect();
    (spec, params, x, targets)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixed_small_spec() {
        let spec = NetworkSpec {
            input_dim: 3,
            shared_layers: vec![4, 5],
            heads: vec![
                HeadSpec {
                    name: "response".into(),
                    role: HeadRole::Response,
                    task_layers: vec![],
                    output_dim: 1,
                    output_kind: OutputKind::Binary,
                    loss_weight: 1.0,
                },
                HeadSpec {
                    name: "reliability".into(),
                    role: HeadRole::Reliability,
                    task_layers: vec![],
                    output_dim: 6,
                    output_kind: OutputKind::Distribution,
                    loss_weight: 1.8,
                },
            ],
            activation: Activation::Relu,
        };
        let mut rng = SimRng::new(21);
        let params = Parameters::init(&spec, &mut rng);
        let x = Matrix::from_vec(3, 3, (0..9).map(|_| rng.normal()).collect());
        let mut onehot = vec![0.0; 18];
        onehot[2] = 1.0;
        onehot[6] = 1.0;
        onehot[17] = 1.0;
        let targets = vec![
            HeadTarget::Binary(vec![1.0, 0.0, 1.0]),
            HeadTarget::Distribution(Matrix::from_vec(3, 6, onehot)),
        ];
        let err = max_relative_error(&spec, &params, &x, &targets, 1e-5).unwrap();
        assert!(err < 1e-4, "relative error {err}");
    }

    #[test]
    fn random_specs() {
        let mut rng = SimRng::new(99);
        for trial in 0..100 {
            let (spec, params, x, targets) = random_problem(&mut rng);
            let err = max_relative_error(&spec, &params, &x, &targets, 1e-5).unwrap();
            assert!(err < 1e-4, "trial {trial}: relative error {err}");
        }
    }

    #[test]
    fn tanh_networks() {
        let mut rng = SimRng::new(5);
        for _ in 0..20 {
            let (mut spec, params, x, targets) = random_problem(&mut rng);
            spec.activation = Activation::Tanh;
            let err = max_relative_error(&spec, &params, &x, &targets, 1e-5).unwrap();
            assert!(err < 1e-4, "relative error {err}");
        }
    }
}
