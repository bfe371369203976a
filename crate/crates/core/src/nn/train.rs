use std::io::Write;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::adam::{adam_step_params, AdamState};
use super::data::TrainingSet;
use super::matrix::Matrix;
use super::network::{backward_from_cache, forward, forward_cached, loss, HeadTarget, Parameters};
use super::spec::{HeadRole, NetworkSpec, OutputKind};
use crate::error::{invalid, Error, Result};
use crate::rng::SimRng;

/// Test accuracy an attack must exceed to count as successful.
pub const SUCCESS_THRESHOLD: f64 = 0.85;

const EVAL_CHUNK: usize = 4096;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub min_delta: f64,
    /// Fraction of the training split held out for early stopping.
    pub validation_fraction: f64,
    /// Fraction of all records held out for the final accuracy.
    pub test_fraction: f64,
    pub seed: u64,
    /// Wall-clock budget; exceeding it ends training and fails the attack.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timeout_secs: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 1000,
            max_epochs: 150,
            patience: 10,
            min_delta: 1e-4,
            validation_fraction: 0.01,
            test_fraction: 0.1,
            seed: 0,
            timeout_secs: None,
        }
    }
}

impl TrainConfig {
    /// The LDHF study protocol: 20% of the training data for validation.
    pub fn ldhf_study() -> Self {
        Self {
            validation_fraction: 0.2,
            ..Self::default()
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(invalid("learning rate must be > 0"));
        }
        if self.batch_size == 0 || self.max_epochs == 0 || self.patience == 0 {
            return Err(invalid("batch size, max epochs and patience must be >= 1"));
        }
        if !(self.min_delta >= 0.0) {
            return Err(invalid("min_delta must be >= 0"));
        }
        for (name, f) in [
            ("validation", self.validation_fraction),
            ("test", self.test_fraction),
        ] {
            if !(f > 0.0 && f < 1.0) {
                return Err(invalid(format!(
                    "{name} fraction must lie in (0, 1), got {f}"
                )));
            }
        }
        if let Some(t) = self.timeout_secs {
            if !(t > 0.0) {
                return Err(invalid("timeout must be > 0 seconds"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean training loss of each head over the epoch.
    pub train_loss: Vec<f64>,
    pub train_total: f64,
    pub val_loss: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub response_accuracy: f64,
    /// Mean cross-entropy of the reliability head, if there is one.
    pub reliability_ce: Option<f64>,
    pub head_loss: Vec<f64>,
    pub total_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackResult {
    pub test_accuracy: f64,
    /// Accuracy above the threshold within the time budget.
    pub success: bool,
    pub timed_out: bool,
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub reliability_ce: Option<f64>,
    pub history: Vec<EpochRecord>,
    pub seconds: f64,
    pub train_size: usize,
    pub val_size: usize,
    pub test_size: usize,
}

impl AttackResult {
    pub fn is_success(test_accuracy: f64, timed_out: bool) -> bool {
        !timed_out && test_accuracy > SUCCESS_THRESHOLD
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: Parameters,
    pub result: AttackResult,
}

/// Index partition of a training set.
#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Shuffles record indices with the config seed and cuts test, then
/// validation off the front.
pub fn split_indices(len: usize, cfg: &TrainConfig) -> Result<Split> {
    let mut idx: Vec<usize> = (0..len).collect();
    SimRng::new(cfg.seed).substream(0).shuffle(&mut idx);
    let n_test = (len as f64 * cfg.test_fraction).round() as usize;
    let n_rest = len.saturating_sub(n_test);
    let n_val = ((n_rest as f64 * cfg.validation_fraction).round() as usize).max(1);
    if n_test == 0 || n_rest <= n_val {
        return Err(invalid(format!(
            "dataset of {len} records is too small to split into train/validation/test"
        )));
    }
    let test = idx[..n_test].to_vec();
    let val = idx[n_test..n_test + n_val].to_vec();
    let train = idx[n_test + n_val..].to_vec();
    Ok(Split { train, val, test })
}

/// Predicted response bit of every row.
pub fn predict_responses(
    spec: &NetworkSpec,
    params: &Parameters,
    inputs: &Matrix,
) -> Result<Vec<u8>> {
    let (h, head) = spec
        .heads
        .iter()
        .enumerate()
        .find(|(_, h)| matches!(h.role, HeadRole::Response | HeadRole::Crossed))
        .ok_or_else(|| invalid("network has no response or crossed head"))?;
    let mut out = Vec::with_capacity(inputs.rows());
    for chunk in row_chunks(inputs.rows()) {
        let x = inputs.gather_rows(&chunk);
        let outputs = forward(spec, params, &x)?;
        let o = &outputs[h];
        for i in 0..o.rows() {
            let bit = match (head.role, head.output_kind) {
                (HeadRole::Response, _) => o.get(i, 0) > 0.5,
                (_, OutputKind::Distribution) => argmax(o.row(i)) >= head.output_dim / 2,
                _ => o.get(i, 0) > 0.5,
            };
            out.push(bit as u8);
        }
    }
    Ok(out)
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

fn row_chunks(rows: usize) -> impl Iterator<Item = Vec<usize>> {
    (0..rows)
        .step_by(EVAL_CHUNK)
        .map(move |s| (s..(s + EVAL_CHUNK).min(rows)).collect())
}

/// Response accuracy and per-head losses on a held-out set.
pub fn evaluate(spec: &NetworkSpec, params: &Parameters, set: &TrainingSet) -> Result<Evaluation> {
    if set.is_empty() {
        return Err(invalid("cannot evaluate on an empty test set"));
    }
    let predictions = predict_responses(spec, params, &set.inputs)?;
    let correct = predictions
        .iter()
        .zip(&set.labels)
        .filter(|(p, l)| p == l)
        .count();
    let (head_loss, total_loss) = mean_loss(spec, params, set)?;
    let reliability_ce = spec.head(HeadRole::Reliability).map(|(h, _)| head_loss[h]);
    Ok(Evaluation {
        response_accuracy: correct as f64 / set.len() as f64,
        reliability_ce,
        head_loss,
        total_loss,
    })
}

/// Per-head and weighted total loss averaged over all rows.
fn mean_loss(
    spec: &NetworkSpec,
    params: &Parameters,
    set: &TrainingSet,
) -> Result<(Vec<f64>, f64)> {
    let mut sums = vec![0.0; spec.heads.len()];
    for chunk in row_chunks(set.len()) {
        let part = set.subset(&chunk);
        let outputs = forward(spec, params, &part.inputs)?;
        let l = loss(&outputs, &part.targets, spec)?;
        for (s, v) in sums.iter_mut().zip(&l.per_head) {
            *s += v * chunk.len() as f64;
        }
    }
    let per_head: Vec<f64> = sums.iter().map(|s| s / set.len() as f64).collect();
    let total = spec
        .heads
        .iter()
        .zip(&per_head)
        .map(|(h, l)| h.loss_weight * l)
        .sum();
    Ok((per_head, total))
}

/// Trains a freshly initialised network with mini-batch Adam and early
/// stopping, then scores the response head on the test split.
pub fn train(set: &TrainingSet, spec: &NetworkSpec, cfg: &TrainConfig) -> Result<TrainOutcome> {
    spec.validate()?;
    cfg.validate()?;
    check_targets_match(set, spec)?;
    let start = Instant::now();
    let split = split_indices(set.len(), cfg)?;
    let train_set = set.subset(&split.train);
    let val_set = set.subset(&split.val);
    let test_set = set.subset(&split.test);

    let root = SimRng::new(cfg.seed);
    let mut params = Parameters::init(spec, &mut root.substream(1));
    let mut order_rng = root.substream(2);
    let mut adam = AdamState::new(params.len());
    let mut step = 0u64;

    let mut best_params = params.clone();
    let mut best_val = f64::INFINITY;
    let mut best_epoch = 0;
    let mut reference_val = f64::INFINITY;
    let mut stale = 0;
    let mut history = Vec::new();
    let mut timed_out = false;
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    for epoch in 1..=cfg.max_epochs {
        order_rng.shuffle(&mut order);
        let mut sums = vec![0.0; spec.heads.len()];
        for batch in order.chunks(cfg.batch_size) {
            let part = train_set.subset(batch);
            let cache = forward_cached(spec, &params, &part.inputs)
                .map_err(|e| numeric_context(e, epoch))?;
            let outputs: Vec<Matrix> = cache.outputs().into_iter().cloned().collect();
            let l = loss(&outputs, &part.targets, spec)?;
            if !l.total.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite training loss in epoch {epoch}"
                )));
            }
            for (s, v) in sums.iter_mut().zip(&l.per_head) {
                *s += v * batch.len() as f64;
            }
            let grads = backward_from_cache(spec, &params, &cache, &part.targets);
            step += 1;
            adam_step_params(&mut params, &grads, &mut adam, step, cfg.learning_rate)?;
        }
        let train_loss: Vec<f64> = sums.iter().map(|s| s / train_set.len() as f64).collect();
        let train_total = spec
            .heads
            .iter()
            .zip(&train_loss)
            .map(|(h, l)| h.loss_weight * l)
            .sum();
        let (_, val_loss) =
            mean_loss(spec, &params, &val_set).map_err(|e| numeric_context(e, epoch))?;
        if !val_loss.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite validation loss in epoch {epoch}"
            )));
        }
        let seconds = start.elapsed().as_secs_f64();
        log::debug!("epoch {epoch}: train {train_total:.5} val {val_loss:.5} ({seconds:.1}s)");
        history.push(EpochRecord {
            epoch,
            train_loss,
            train_total,
            val_loss,
            seconds,
        });

        if val_loss < best_val {
            best_val = val_loss;
            best_epoch = epoch;
            best_params.clone_from(&params);
        }
        if val_loss < reference_val - cfg.min_delta {
            reference_val = val_loss;
            stale = 0;
        } else {
            stale += 1;
        }
        if cfg.timeout_secs.is_some_and(|t| seconds > t) {
            timed_out = true;
            break;
        }
        if stale >= cfg.patience {
            break;
        }
    }

    let eval = evaluate(spec, &best_params, &test_set)?;
    let result = AttackResult {
        test_accuracy: eval.response_accuracy,
        success: AttackResult::is_success(eval.response_accuracy, timed_out),
        timed_out,
        epochs_run: history.len(),
        best_epoch,
        best_val_loss: best_val,
        reliability_ce: eval.reliability_ce,
        history,
        seconds: start.elapsed().as_secs_f64(),
        train_size: split.train.len(),
        val_size: split.val.len(),
        test_size: split.test.len(),
    };
    Ok(TrainOutcome {
        params: best_params,
        result,
    })
}

fn numeric_context(e: Error, epoch: usize) -> Error {
    match e {
        Error::Numeric(msg) => Error::Numeric(format!("{msg} (epoch {epoch})")),
        other => other,
    }
}

fn check_targets_match(set: &TrainingSet, spec: &NetworkSpec) -> Result<()> {
    if set.targets.len() != spec.heads.len() {
        return Err(invalid(format!(
            "training set has {} targets for {} heads",
            set.targets.len(),
            spec.heads.len()
        )));
    }
    for (t, h) in set.targets.iter().zip(&spec.heads) {
        let ok = match (t, h.output_kind) {
            (HeadTarget::Binary(_), OutputKind::Binary) => true,
            (HeadTarget::Distribution(m), OutputKind::Distribution) => m.cols() == h.output_dim,
            _ => false,
        };
        if !ok || t.len() != set.len() {
            return Err(invalid(format!(
                "targets for head {:?} do not fit the head",
                h.name
            )));
        }
    }
    Ok(())
}

/// Writes the training log, one row per epoch.
pub fn write_history_csv<W: Write>(
    spec: &NetworkSpec,
    history: &[EpochRecord],
    mut w: W,
) -> Result<()> {
    write!(w, "epoch")?;
    for h in &spec.heads {
        write!(w, ",train_loss_{}", h.name)?;
    }
    writeln!(w, ",train_loss_total,val_loss,seconds")?;
    for r in history {
        write!(w, "{}", r.epoch)?;
        for l in &r.train_loss {
            write!(w, ",{l}")?;
        }
        writeln!(w, ",{},{},{:.3}", r.train_total, r.val_loss, r.seconds)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::spec::{build_architecture, AttackMode};

    fn linear_set(rows: usize, dim: usize, seed: u64, shuffle_labels: bool) -> TrainingSet {
        let mut rng = SimRng::new(seed);
        let w: Vec<f64> = (0..dim).map(|_| rng.normal()).collect();
        let mut data = Vec::with_capacity(rows * dim);
        let mut labels = Vec::with_capacity(rows);
        for _ in 0..rows {
            let x: Vec<f64> = (0..dim)
                .map(|_| if rng.bit() { 1.0 } else { -1.0 })
                .collect();
            let z: f64 = x.iter().zip(&w).map(|(a, b)| a * b).sum();
            labels.push((z > 0.0) as u8);
            data.extend(x);
        }
        if shuffle_labels {
            rng.shuffle(&mut labels);
        }
        TrainingSet {
            inputs: Matrix::from_vec(rows, dim, data),
            targets: vec![HeadTarget::Binary(
                labels.iter().map(|&b| b as f64).collect(),
            )],
            labels,
        }
    }

    fn small_cfg(seed: u64) -> TrainConfig {
        TrainConfig {
            batch_size: 100,
            max_epochs: 40,
            validation_fraction: 0.1,
            learning_rate: 5e-3,
            ..TrainConfig::default()
        }
        .with_seed(seed)
    }

    #[test]
    fn learns_a_linear_rule() {
        let set = linear_set(3000, 9, 1, false);
        let spec = build_architecture(AttackMode::Response, 9, 1).unwrap();
        let out = train(&set, &spec, &small_cfg(2)).unwrap();
        assert!(
            out.result.test_accuracy > 0.95,
            "{:?}",
            out.result.test_accuracy
        );
        assert_eq!(
            out.result.success,
            out.result.test_accuracy > SUCCESS_THRESHOLD
        );
    }

    #[test]
    fn shuffled_labels_stay_at_chance() {
        let set = linear_set(3000, 9, 1, true);
        let spec = build_architecture(AttackMode::Response, 9, 1).unwrap();
        let out = train(&set, &spec, &small_cfg(2)).unwrap();
        let acc = out.result.test_accuracy;
        assert!((0.45..=0.55).contains(&acc), "accuracy {acc}");
    }

    #[test]
    fn training_is_reproducible() {
        let set = linear_set(800, 5, 3, false);
        let spec = build_architecture(AttackMode::Response, 5, 1).unwrap();
        let cfg = TrainConfig {
            max_epochs: 5,
            ..small_cfg(7)
        };
        let a = train(&set, &spec, &cfg).unwrap();
        let b = train(&set, &spec, &cfg).unwrap();
        assert_eq!(a.params, b.params);
        assert_eq!(a.result.test_accuracy, b.result.test_accuracy);
    }

    #[test]
    fn best_validation_parameters_are_returned() {
        let set = linear_set(1500, 7, 5, false);
        let spec = build_architecture(AttackMode::Response, 7, 1).unwrap();
        let cfg = small_cfg(1);
        let out = train(&set, &spec, &cfg).unwrap();
        let min = out
            .result
            .history
            .iter()
            .map(|r| r.val_loss)
            .fold(f64::INFINITY, f64::min);
        assert_eq!(out.result.best_val_loss, min);
        let split = split_indices(set.len(), &cfg).unwrap();
        let (_, val) = mean_loss(&spec, &out.params, &set.subset(&split.val)).unwrap();
        assert!((val - min).abs() < 1e-12);
    }

    #[test]
    fn split_is_disjoint_and_complete() {
        let cfg = TrainConfig::default();
        let s = split_indices(1000, &cfg).unwrap();
        assert_eq!(s.test.len(), 100);
        assert_eq!(s.val.len(), 9);
        let mut all: Vec<usize> = s
            .train
            .iter()
            .chain(&s.val)
            .chain(&s.test)
            .copied()
            .collect();
        all.sort_unstable();
        assert_eq!(all, (0..1000).collect::<Vec<_>>());
        assert!(split_indices(3, &cfg).is_err());
    }

    #[test]
    fn evaluate_trivial_predictors() {
        let spec = build_architecture(AttackMode::Response, 2, 1).unwrap();
        let mut p = Parameters::zeros(&spec);
        let last = p.layers.len() - 1;
        p.layers[last].bias[0] = 5.0;
        let set = TrainingSet {
            inputs: Matrix::from_rows(&[
                vec![1.0, 0.0],
                vec![0.0, 1.0],
                vec![1.0, 1.0],
                vec![0.0, 0.0],
            ]),
            targets: vec![HeadTarget::Binary(vec![1.0, 0.0, 1.0, 0.0])],
            labels: vec![1, 0, 1, 0],
        };
        let e = evaluate(&spec, &p, &set).unwrap();
        assert_eq!(e.response_accuracy, 0.5);
        assert_eq!(e, evaluate(&spec, &p, &set).unwrap());
        let empty = set.subset(&[]);
        assert!(evaluate(&spec, &p, &empty).is_err());
    }

    #[test]
    fn history_csv_layout() {
        let spec = build_architecture(AttackMode::Alsca, 3, 2).unwrap();
        let rec = EpochRecord {
            epoch: 1,
            train_loss: vec![0.5, 1.0],
            train_total: 2.3,
            val_loss: 2.0,
            seconds: 0.25,
        };
        let mut buf = Vec::new();
        write_history_csv(&spec, &[rec], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text,
            "epoch,train_loss_response,train_loss_reliability,train_loss_total,val_loss,seconds\n1,0.5,1,2.3,2,0.250\n"
        );
    }
}
