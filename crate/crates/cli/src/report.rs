use std::collections::BTreeMap;
use std::io::Write;

use ldhf_core::nn::{AttackMode, AttackResult, SUCCESS_THRESHOLD};
use serde::{Deserialize, Serialize};

pub const SUCCESS_RATE_DEFINITION: &str =
    "successful instances / instances, one attack per instance; success = test accuracy > 0.85 within the time limit";

/// Deterministic per-instance outcome. Wall-clock timings live in a separate
/// file so that the report itself is reproducible.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceReport {
    pub index: usize,
    pub seed: u64,
    pub dataset: String,
    pub dataset_fingerprint: String,
    pub checkpoint_fingerprint: String,
    pub test_accuracy: f64,
    pub success: bool,
    pub timed_out: bool,
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reliability_ce: Option<f64>,
    pub train_size: usize,
    pub val_size: usize,
    pub test_size: usize,
}

impl InstanceReport {
    pub fn new(
        index: usize,
        seed: u64,
        dataset: String,
        dataset_fingerprint: String,
        checkpoint_fingerprint: String,
        r: &AttackResult,
    ) -> Self {
        Self {
            index,
            seed,
            dataset,
            dataset_fingerprint,
            checkpoint_fingerprint,
            test_accuracy: r.test_accuracy,
            success: r.success,
            timed_out: r.timed_out,
            epochs_run: r.epochs_run,
            best_epoch: r.best_epoch,
            best_val_loss: r.best_val_loss,
            reliability_ce: r.reliability_ce,
            train_size: r.train_size,
            val_size: r.val_size,
            test_size: r.test_size,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub tool: String,
    pub puf: String,
    pub mode: AttackMode,
    pub success_threshold: f64,
    pub success_rate_definition: String,
    /// Fully resolved configuration the run was started with.
    pub config: BTreeMap<String, String>,
    pub instances: Vec<InstanceReport>,
    pub successes: usize,
    pub timeouts: usize,
    pub success_rate: f64,
    /// Mean test accuracy over all instances, failed ones included.
    pub mean_accuracy: f64,
}

impl RunReport {
    pub fn assemble(
        puf: String,
        mode: AttackMode,
        config: BTreeMap<String, String>,
        mut instances: Vec<InstanceReport>,
    ) -> Self {
        instances.sort_by_key(|r| r.index);
        let successes = instances.iter().filter(|r| r.success).count();
        let timeouts = instances.iter().filter(|r| r.timed_out).count();
        let n = instances.len().max(1) as f64;
        Self {
            tool: tool_version(),
            puf,
            mode,
            success_threshold: SUCCESS_THRESHOLD,
            success_rate_definition: SUCCESS_RATE_DEFINITION.into(),
            config,
            successes,
            timeouts,
            success_rate: successes as f64 / n,
            mean_accuracy: instances.iter().map(|r| r.test_accuracy).sum::<f64>() / n,
            instances,
        }
    }

    pub const CSV_HEADER: &'static str =
        "instance,seed,train_crps,test_accuracy,success,timed_out,epochs,best_epoch,best_val_loss";

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{}", Self::CSV_HEADER)?;
        for r in &self.instances {
            writeln!(
                w,
                "{},{},{},{:.6},{},{},{},{},{:.6}",
                r.index,
                r.seed,
                r.train_size,
                r.test_accuracy,
                r.success,
                r.timed_out,
                r.epochs_run,
                r.best_epoch,
                r.best_val_loss
            )?;
        }
        Ok(())
    }
}

pub fn tool_version() -> String {
    format!("ldhf {}", env!("CARGO_PKG_VERSION"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn instance(index: usize, acc: f64, success: bool) -> InstanceReport {
        InstanceReport {
            index,
            seed: index as u64,
            dataset: String::new(),
            dataset_fingerprint: String::new(),
            checkpoint_fingerprint: String::new(),
            test_accuracy: acc,
            success,
            timed_out: false,
            epochs_run: 1,
            best_epoch: 1,
            best_val_loss: 0.5,
            reliability_ce: None,
            train_size: 90,
            val_size: 1,
            test_size: 10,
        }
    }

    #[test]
    fn nine_of_ten_successes() {
        let rows: Vec<_> = (0..10)
            .rev()
            .map(|i| instance(i, if i == 3 { 0.6 } else { 0.9 }, i != 3))
            .collect();
        let r = RunReport::assemble("x".into(), AttackMode::Alsca, BTreeMap::new(), rows);
        assert_eq!(r.success_rate, 0.9);
        assert_eq!(r.instances[0].index, 0);
        assert!((r.mean_accuracy - 0.87).abs() < 1e-12);
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 11);
        assert!(text.ends_with('\n'));
    }
}
