//! Forward pass, weighted multi-head loss and exact backpropagation.

use super::matrix::{matmul, matmul_nt, matmul_tn, Matrix};
use super::spec::{NetworkSpec, OutputKind};
use crate::error::{invalid, Error, Result};
use crate::rng::SimRng;

/// One fully connected layer, `y = x W + b` with `W` of shape fan_in x fan_out.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self {
            weights: Matrix::zeros(fan_in, fan_out),
            bias: vec![0.0; fan_out],
        }
    }

    fn affine(&self, x: &Matrix) -> Matrix {
        let mut z = matmul(x, &self.weights);
        for i in 0..z.rows() {
            for (v, b) in z.row_mut(i).iter_mut().zip(&self.bias) {
                *v += b;
            }
        }
        z
    }
}

/// Trainable weights of a [`NetworkSpec`], layers in
/// [`NetworkSpec::layer_shapes`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameters {
    pub layers: Vec<Dense>,
}

impl Parameters {
    pub fn zeros(spec: &NetworkSpec) -> Self {
        Self {
            layers: spec
                .layer_shapes()
                .into_iter()
                .map(|(i, o)| Dense::zeros(i, o))
                .collect(),
        }
    }

    /// Uniform in `+-sqrt(6 / (fan_in + fan_out))`, zero biases.
    pub fn init(spec: &NetworkSpec, rng: &mut SimRng) -> Self {
        let mut p = Self::zeros(spec);
        for layer in &mut p.layers {
            let (fan_in, fan_out) = (layer.weights.rows(), layer.weights.cols());
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for w in layer.weights.data_mut() {
                *w = (2.0 * rng.uniform() - 1.0) * limit;
            }
        }
        p
    }

    pub fn check_shapes(&self, spec: &NetworkSpec) -> Result<()> {
        let shapes = spec.layer_shapes();
        if shapes.len() != self.layers.len()
            || shapes.iter().zip(&self.layers).any(|(&(i, o), l)| {
                l.weights.rows() != i || l.weights.cols() != o || l.bias.len() != o
            })
        {
            return Err(invalid("parameter shapes do not match the network spec"));
        }
        Ok(())
    }

    /// All weights then biases of each layer, in layer order.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.extend_from_slice(l.weights.data());
            out.extend_from_slice(&l.bias);
        }
        out
    }

    pub fn unflatten(spec: &NetworkSpec, flat: &[f64]) -> Result<Self> {
        if flat.len() != spec.parameter_count() {
            return Err(Error::DimensionMismatch {
                expected: spec.parameter_count(),
                got: flat.len(),
            });
        }
        let mut p = Self::zeros(spec);
        let mut at = 0;
        for l in &mut p.layers {
            let n = l.weights.data().len();
            l.weights.data_mut().copy_from_slice(&flat[at..at + n]);
            at += n;
            let nb = l.bias.len();
            l.bias.copy_from_slice(&flat[at..at + nb]);
            at += nb;
        }
        Ok(p)
    }

    pub fn len(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.data().len() + l.bias.len())
            .sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Gradients have the same layout as the parameters they differentiate.
pub type Gradients = Parameters;

/// Per-head training targets for a batch.
#[derive(Debug, Clone, PartialEq)]
pub enum HeadTarget {
    /// One 0/1 (or soft) label per sample.
    Binary(Vec<f64>),
    /// One probability row per sample.
    Distribution(Matrix),
}

impl HeadTarget {
    pub fn len(&self) -> usize {
        match self {
            HeadTarget::Binary(v) => v.len(),
            HeadTarget::Distribution(m) => m.rows(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn gather(&self, idx: &[usize]) -> HeadTarget {
        match self {
            HeadTarget::Binary(v) => HeadTarget::Binary(idx.iter().map(|&i| v[i]).collect()),
            HeadTarget::Distribution(m) => HeadTarget::Distribution(m.gather_rows(idx)),
        }
    }
}

/// Activations kept for backpropagation.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// Input followed by every shared hidden activation.
    shared: Vec<Matrix>,
    /// Per head: task hidden activations, then the output probabilities.
    heads: Vec<Vec<Matrix>>,
}

impl ForwardCache {
    /// Output probabilities of each head (batch x output_dim).
    pub fn outputs(&self) -> Vec<&Matrix> {
        self.heads
            .iter()
            .map(|h| h.last().expect("head output"))
            .collect()
    }
}

fn logistic(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn softmax_rows(z: &mut Matrix) {
    for i in 0..z.rows() {
        let row = z.row_mut(i);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
}

pub fn forward_cached(spec: &NetworkSpec, params: &Parameters, x: &Matrix) -> Result<ForwardCache> {
    if x.cols() != spec.input_dim {
        return Err(Error::DimensionMismatch {
            expected: spec.input_dim,
            got: x.cols(),
        });
    }
    params.check_shapes(spec)?;
    if !x.is_finite() {
        return Err(Error::Numeric("non-finite network input".into()));
    }
    let act = spec.activation;
    let hidden = |layer: &Dense, input: &Matrix| {
        let mut h = layer.affine(input);
        h.data_mut().iter_mut().for_each(|v| *v = act.apply(*v));
        h
    };

    let mut layer = params.layers.iter();
    let mut shared = vec![x.clone()];
    for _ in &spec.shared_layers {
        let h = hidden(layer.next().expect("shared layer"), shared.last().unwrap());
        shared.push(h);
    }
    let trunk = shared.last().unwrap();
    let mut heads = Vec::with_capacity(spec.heads.len());
    for head in &spec.heads {
        let mut acts: Vec<Matrix> = Vec::with_capacity(head.task_layers.len() + 1);
        for _ in &head.task_layers {
            let h = hidden(
                layer.next().expect("task layer"),
                acts.last().unwrap_or(trunk),
            );
            acts.push(h);
        }
        let mut out = layer
            .next()
            .expect("output layer")
            .affine(acts.last().unwrap_or(trunk));
        match head.output_kind {
            OutputKind::Binary => out.data_mut().iter_mut().for_each(|v| *v = logistic(*v)),
            OutputKind::Distribution => softmax_rows(&mut out),
        }
        if !out.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite output in head {:?}",
                head.name
            )));
        }
        acts.push(out);
        heads.push(acts);
    }
    Ok(ForwardCache { shared, heads })
}

/// Per-head output probabilities for a batch.
pub fn forward(spec: &NetworkSpec, params: &Parameters, x: &Matrix) -> Result<Vec<Matrix>> {
    let cache = forward_cached(spec, params, x)?;
    Ok(cache
        .heads
        .into_iter()
        .map(|mut h| h.pop().unwrap())
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossValue {
    /// `sum_h loss_weight_h * per_head[h]`.
    pub total: f64,
    /// Mean cross-entropy of each head over the batch.
    pub per_head: Vec<f64>,
}

// ln(q) with 0 ln 0 = 0 handled by the caller skipping zero targets.
fn ln_clamped(q: f64) -> f64 {
    q.max(f64::MIN_POSITIVE).ln()
}

/// Weighted cross-entropy of the head outputs against their targets.
pub fn loss(outputs: &[Matrix], targets: &[HeadTarget], spec: &NetworkSpec) -> Result<LossValue> {
    check_targets(outputs, targets, spec)?;
    let mut per_head = Vec::with_capacity(outputs.len());
    for (out, target) in outputs.iter().zip(targets) {
        let b = out.rows().max(1) as f64;
        let mut sum = 0.0;
        match target {
            HeadTarget::Binary(t) => {
                for (i, &ti) in t.iter().enumerate() {
                    let q = out.get(i, 0);
                    if ti > 0.0 {
                        sum -= ti * ln_clamped(q);
                    }
                    if ti < 1.0 {
                        sum -= (1.0 - ti) * ln_clamped(1.0 - q);
                    }
                }
            }
            HeadTarget::Distribution(t) => {
                for (tv, qv) in t.data().iter().zip(out.data()) {
                    if *tv > 0.0 {
                        sum -= tv * ln_clamped(*qv);
                    }
                }
            }
        }
        per_head.push(sum / b);
    }
    let total = spec
        .heads
        .iter()
        .zip(&per_head)
        .map(|(h, l)| h.loss_weight * l)
        .sum();
    Ok(LossValue { total, per_head })
}

fn check_targets(outputs: &[Matrix], targets: &[HeadTarget], spec: &NetworkSpec) -> Result<()> {
    if outputs.len() != spec.heads.len() || targets.len() != spec.heads.len() {
        return Err(invalid(format!(
            "expected {} heads, got {} outputs and {} targets",
            spec.heads.len(),
            outputs.len(),
            targets.len()
        )));
    }
    for ((head, out), target) in spec.heads.iter().zip(outputs).zip(targets) {
        if target.len() != out.rows() {
            return Err(Error::DimensionMismatch {
                expected: out.rows(),
                got: target.len(),
            });
        }
        match (head.output_kind, target) {
            (OutputKind::Binary, HeadTarget::Binary(t)) => {
                if t.iter().any(|v| !(0.0..=1.0).contains(v)) {
                    return Err(invalid(format!(
                        "head {:?}: binary targets must lie in [0, 1]",
                        head.name
                    )));
                }
            }
            (OutputKind::Distribution, HeadTarget::Distribution(t)) => {
                if t.cols() != head.output_dim {
                    return Err(Error::DimensionMismatch {
                        expected: head.output_dim,
                        got: t.cols(),
                    });
                }
                for i in 0..t.rows() {
                    let row = t.row(i);
                    let s: f64 = row.iter().sum();
                    if (s - 1.0).abs() > 1e-6 || row.iter().any(|&v| v < 0.0) {
                        return Err(invalid(format!(
                            "head {:?}: target row {i} is not a probability vector (sum {s})",
                            head.name
                        )));
                    }
                }
            }
            _ => {
                return Err(invalid(format!(
                    "head {:?}: target kind does not match output kind",
                    head.name
                )))
            }
        }
    }
    Ok(())
}

/// Loss and exact gradients of the weighted total loss.
pub fn backward(
    spec: &NetworkSpec,
    params: &Parameters,
    x: &Matrix,
    targets: &[HeadTarget],
) -> Result<(LossValue, Gradients)> {
    let cache = forward_cached(spec, params, x)?;
    let outputs: Vec<Matrix> = cache.outputs().into_iter().cloned().collect();
    let value = loss(&outputs, targets, spec)?;
    let grads = backward_from_cache(spec, params, &cache, targets);
    Ok((value, grads))
}

pub(crate) fn backward_from_cache(
    spec: &NetworkSpec,
    params: &Parameters,
    cache: &ForwardCache,
    targets: &[HeadTarget],
) -> Gradients {
    let act = spec.activation;
    let batch = cache.shared[0].rows().max(1) as f64;
    let mut grads = Parameters::zeros(spec);
    let n_shared = spec.shared_layers.len();
    let trunk = cache.shared.last().unwrap();
    let mut d_trunk = Matrix::zeros(trunk.rows(), trunk.cols());

    // Heads occupy consecutive layer slots after the shared ones.
    let mut slot = n_shared;
    for ((head, acts), target) in spec.heads.iter().zip(&cache.heads).zip(targets) {
        let first = slot;
        slot += head.task_layers.len() + 1;
        let out = acts.last().unwrap();
        // d(loss)/d(logits) for logistic + BCE and softmax + CE is (q - t) / B.
        let scale = head.loss_weight / batch;
        let mut delta = out.clone();
        match target {
            HeadTarget::Binary(t) => {
                for (d, ti) in delta.data_mut().iter_mut().zip(t) {
                    *d = (*d - ti) * scale;
                }
            }
            HeadTarget::Distribution(t) => {
                for (d, ti) in delta.data_mut().iter_mut().zip(t.data()) {
                    *d = (*d - ti) * scale;
                }
            }
        }
        for l in (first..slot).rev() {
            let local = l - first;
            let input = if local == 0 { trunk } else { &acts[local - 1] };
            accumulate_layer_grads(&mut grads.layers[l], input, &delta);
            let d_input = matmul_nt(&delta, &params.layers[l].weights);
            if local == 0 {
                for (acc, v) in d_trunk.data_mut().iter_mut().zip(d_input.data()) {
                    *acc += v;
                }
            } else {
                delta = through_activation(d_input, input, act);
            }
        }
    }

    let mut delta = through_activation(d_trunk, trunk, act);
    for l in (0..n_shared).rev() {
        let input = &cache.shared[l];
        accumulate_layer_grads(&mut grads.layers[l], input, &delta);
        if l > 0 {
            delta = through_activation(matmul_nt(&delta, &params.layers[l].weights), input, act);
        }
    }
    grads
}

fn accumulate_layer_grads(g: &mut Dense, input: &Matrix, delta: &Matrix) {
    g.weights = matmul_tn(input, delta);
    for i in 0..delta.rows() {
        for (b, d) in g.bias.iter_mut().zip(delta.row(i)) {
            *b += d;
        }
    }
}

fn through_activation(mut d: Matrix, output: &Matrix, act: super::spec::Activation) -> Matrix {
    for (g, y) in d.data_mut().iter_mut().zip(output.data()) {
        *g *= act.grad_from_output(*y);
    }
    d
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::spec::{build_architecture, AttackMode, HeadRole, HeadSpec};

    fn tiny_spec(shared: Vec<usize>, heads: Vec<(usize, OutputKind, Vec<usize>)>) -> NetworkSpec {
        NetworkSpec {
            input_dim: 3,
            shared_layers: shared,
            heads: heads
                .into_iter()
                .enumerate()
                .map(|(i, (dim, kind, task))| HeadSpec {
                    name: format!("h{i}"),
                    role: if i == 0 {
                        HeadRole::Response
                    } else {
                        HeadRole::Reliability
                    },
                    task_layers: task,
                    output_dim: dim,
                    output_kind: kind,
                    loss_weight: if i == 0 { 1.0 } else { 1.8 },
                })
                .collect(),
            activation: Default::default(),
        }
    }

    #[test]
    fn zero_parameters_give_half_and_uniform() {
        let spec = build_architecture(AttackMode::Alsca, 5, 10).unwrap();
        let p = Parameters::zeros(&spec);
        let x = Matrix::from_rows(&[vec![1.0, -1.0, 1.0, 1.0, -1.0]]);
        let out = forward(&spec, &p, &x).unwrap();
        assert_eq!(out[0].data(), &[0.5]);
        assert!(out[1]
            .data()
            .iter()
            .all(|&v| (v - 1.0 / 11.0).abs() < 1e-15));
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let spec = build_architecture(AttackMode::Mlmsa, 8, 10).unwrap();
        let mut rng = SimRng::new(4);
        let p = Parameters::init(&spec, &mut rng);
        let x = Matrix::from_vec(16, 8, (0..128).map(|_| rng.normal() * 3.0).collect());
        let out = forward(&spec, &p, &x).unwrap();
        for i in 0..16 {
            let s: f64 = out[1].row(i).iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
            assert!(out[1].row(i).iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn forward_rejects_bad_shapes_and_non_finite() {
        let spec = build_architecture(AttackMode::Response, 4, 1).unwrap();
        let p = Parameters::zeros(&spec);
        assert!(matches!(
            forward(&spec, &p, &Matrix::zeros(2, 5)),
            Err(Error::DimensionMismatch { .. })
        ));
        let x = Matrix::from_rows(&[vec![f64::NAN, 0.0, 0.0, 0.0]]);
        let mut p = Parameters::init(&spec, &mut SimRng::new(0));
        p.layers[0].bias[0] = 1.0;
        assert!(matches!(forward(&spec, &p, &x), Err(Error::Numeric(_))));
    }

    #[test]
    fn loss_examples() {
        let spec = tiny_spec(
            vec![2],
            vec![
                (1, OutputKind::Binary, vec![]),
                (11, OutputKind::Distribution, vec![]),
            ],
        );
        let mut onehot = vec![0.0; 11];
        onehot[3] = 1.0;
        // Perfect predictions.
        let outs = vec![
            Matrix::from_rows(&[vec![1.0]]),
            Matrix::from_rows(&[onehot.clone()]),
        ];
        let targets = vec![
            HeadTarget::Binary(vec![1.0]),
            HeadTarget::Distribution(Matrix::from_rows(&[onehot.clone()])),
        ];
        let l = loss(&outs, &targets, &spec).unwrap();
        assert_eq!(l.per_head, vec![0.0, 0.0]);

        // Uniform prediction against a one-hot target.
        let outs = vec![
            Matrix::from_rows(&[vec![0.5]]),
            Matrix::from_rows(&[vec![1.0 / 11.0; 11]]),
        ];
        let l = loss(&outs, &targets, &spec).unwrap();
        assert!((l.per_head[1] - 11f64.ln()).abs() < 1e-12);
        assert!((l.per_head[0] - 2f64.ln()).abs() < 1e-12);
        assert!((l.total - (1.8 * l.per_head[1] + l.per_head[0])).abs() < 1e-12);
    }

    #[test]
    fn loss_rejects_non_distribution_targets() {
        let spec = tiny_spec(
            vec![2],
            vec![
                (1, OutputKind::Binary, vec![]),
                (3, OutputKind::Distribution, vec![]),
            ],
        );
        let outs = vec![
            Matrix::from_rows(&[vec![0.5]]),
            Matrix::from_rows(&[vec![0.2, 0.3, 0.5]]),
        ];
        let targets = vec![
            HeadTarget::Binary(vec![1.0]),
            HeadTarget::Distribution(Matrix::from_rows(&[vec![0.5, 0.5, 0.5]])),
        ];
        assert!(loss(&outs, &targets, &spec).is_err());
    }

    #[test]
    fn single_logistic_unit_gradient_closed_form() {
        let spec = NetworkSpec {
            input_dim: 3,
            shared_layers: vec![],
            heads: vec![HeadSpec {
                name: "response".into(),
                role: HeadRole::Response,
                task_layers: vec![],
                output_dim: 1,
                output_kind: OutputKind::Binary,
                loss_weight: 1.0,
            }],
            activation: Default::default(),
        };
        let mut p = Parameters::zeros(&spec);
        p.layers[0].weights = Matrix::from_vec(3, 1, vec![0.3, -0.2, 0.7]);
        p.layers[0].bias = vec![0.1];
        let x = Matrix::from_rows(&[vec![1.0, 2.0, -1.0]]);
        let z: f64 = 0.3 - 0.4 - 0.7 + 0.1;
        let q = 1.0 / (1.0 + (-z).exp());
        let (_, g) = backward(&spec, &p, &x, &[HeadTarget::Binary(vec![1.0])]).unwrap();
        let expected = [(q - 1.0) * 1.0, (q - 1.0) * 2.0, (q - 1.0) * -1.0];
        for (a, b) in g.layers[0].weights.data().iter().zip(expected) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!((g.layers[0].bias[0] - (q - 1.0)).abs() < 1e-15);
    }

    #[test]
    fn gradient_vanishes_at_perfect_fit() {
        // Huge logit on the correct class: q - t underflows to ~0.
        let spec = tiny_spec(
            vec![],
            vec![
                (1, OutputKind::Binary, vec![]),
                (3, OutputKind::Distribution, vec![]),
            ],
        );
        let mut p = Parameters::zeros(&spec);
        p.layers[0].bias = vec![40.0];
        p.layers[1].bias = vec![-20.0, 40.0, -20.0];
        let x = Matrix::from_rows(&[vec![0.5, -0.5, 1.0]]);
        let targets = vec![
            HeadTarget::Binary(vec![1.0]),
            HeadTarget::Distribution(Matrix::from_rows(&[vec![0.0, 1.0, 0.0]])),
        ];
        let (_, g) = backward(&spec, &p, &x, &targets).unwrap();
        let norm: f64 = g.flatten().iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(norm < 1e-8, "gradient norm {norm}");
    }

    #[test]
    fn flatten_round_trip() {
        let spec = build_architecture(AttackMode::Alsca, 7, 4).unwrap();
        let p = Parameters::init(&spec, &mut SimRng::new(3));
        let flat = p.flatten();
        assert_eq!(flat.len(), spec.parameter_count());
        assert_eq!(Parameters::unflatten(&spec, &flat).unwrap(), p);
        assert!(Parameters::unflatten(&spec, &flat[1..]).is_err());
    }
}
