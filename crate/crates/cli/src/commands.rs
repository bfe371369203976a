use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use anyhow::Context;
use ldhf_core::crp::{
    bit_error_estimate, generate_dataset_with_stats, measure, read_dataset, write_dataset,
    BerEstimate, Dataset, DatasetHeader, MeasurementConfig,
};
use ldhf_core::nn::gradcheck::{max_relative_error, random_problem};
use ldhf_core::nn::{
    adam_step, build_architecture, build_training_set, train, write_history_csv, AdamState,
    Checkpoint, NetworkSpec, TrainOutcome,
};
use ldhf_core::puf::{analytic_reliability, Challenge, PufDescriptor};
use ldhf_core::reliability::{measured_reliability, CountSummary};
use ldhf_core::SimRng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, SweepAxis};
use crate::error::CliError;
use crate::report::{InstanceReport, RunReport};

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn check_measurement_budget(cfg: &ExperimentConfig) -> Result<MeasurementConfig, CliError> {
    let m = cfg.measurement()?;
    if let Some(k) = cfg.k_ldhf {
        if k > m.m_repeats {
            return Err(CliError::Validation(format!(
                "measure.k_ldhf = {k} exceeds measure.m = {}",
                m.m_repeats
            )));
        }
    }
    Ok(m)
}

/// Generates one dataset file per instance. Existing files are overwritten
/// with a warning.
pub fn cmd_gen(cfg: &ExperimentConfig) -> Result<Vec<PathBuf>, CliError> {
    let meas = check_measurement_budget(cfg)?;
    // Validate every instance before touching the file system.
    for i in 0..cfg.instances {
        cfg.instance_puf(i).validate()?;
    }
    let mut paths = Vec::with_capacity(cfg.instances);
    for i in 0..cfg.instances {
        let puf = cfg.instance_puf(i);
        let (d, stats) = generate_dataset_with_stats(&puf, &meas, cfg.instance_seed(i), cfg.lcg)?;
        let path = cfg.dataset_path(i);
        if path.exists() {
            log::warn!("overwriting {}", path.display());
        }
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        }
        write_dataset(&d, &path).with_context(|| format!("writing {}", path.display()))?;
        log::info!(
            "instance {i}: {} records, {} MV ties -> {}",
            d.len(),
            stats.mv_ties,
            path.display()
        );
        paths.push(path);
    }
    Ok(paths)
}

/// Header a dataset for instance `i` must carry under `cfg`.
fn expected_header_matches(
    cfg: &ExperimentConfig,
    i: usize,
    h: &DatasetHeader,
) -> Result<(), String> {
    let meas = cfg.measurement().map_err(|e| e.to_string())?;
    let mut diffs = Vec::new();
    if h.puf != cfg.instance_puf(i) {
        diffs.push(format!("puf {} (seed {})", h.puf.label(), h.puf.seed));
    }
    if h.seed != cfg.instance_seed(i) {
        diffs.push(format!("seed {}", h.seed));
    }
    if h.m_repeats != meas.m_repeats
        || h.num_mv != meas.num_mv
        || h.n_challenges != meas.n_challenges
    {
        diffs.push(format!(
            "measurement m={} num_mv={} N={}",
            h.m_repeats, h.num_mv, h.n_challenges
        ));
    }
    if h.lcg.a != cfg.lcg.a || h.lcg.g != cfg.lcg.g {
        diffs.push(format!("lcg a={} g={}", h.lcg.a, h.lcg.g));
    }
    if diffs.is_empty() {
        Ok(())
    } else {
        Err(diffs.join(", "))
    }
}

pub fn network_for(cfg: &ExperimentConfig, d: &Dataset) -> Result<NetworkSpec, CliError> {
    let input_dim = cfg.attack.encoding.input_dim(d.header.n);
    let mut spec = build_architecture(cfg.attack.mode, input_dim, d.header.m_repeats)?;
    spec.activation = cfg.attack.activation;
    Ok(spec)
}

/// Trains the configured attack on one instance's dataset.
pub fn attack_instance(
    cfg: &ExperimentConfig,
    i: usize,
    d: &Dataset,
) -> Result<(TrainOutcome, Checkpoint), CliError> {
    let spec = network_for(cfg, d)?;
    let set = build_training_set(d, &spec, cfg.attack.mode, cfg.attack.encoding)?;
    let train_cfg = cfg.attack.train.clone().with_seed(cfg.instance_seed(i));
    let outcome = train(&set, &spec, &train_cfg).map_err(|e| match e {
        ldhf_core::Error::InvalidInput(msg) => CliError::Validation(format!("instance {i}: {msg}")),
        other => CliError::runtime(format!("instance {i}: training aborted: {other}")),
    })?;
    let checkpoint = Checkpoint::new(
        cfg.attack.mode,
        cfg.attack.encoding,
        &spec,
        &train_cfg,
        d.fingerprint(),
        &outcome.params,
    );
    Ok((outcome, checkpoint))
}

/// Default dataset list: the files `cmd_gen` writes for this config.
pub fn default_datasets(cfg: &ExperimentConfig) -> Vec<PathBuf> {
    (0..cfg.instances).map(|i| cfg.dataset_path(i)).collect()
}

/// Runs the configured attack on each dataset (dataset `i` belongs to
/// instance `i`) and writes `report.json`, `report.csv`, `timings.csv`,
/// checkpoints and per-epoch logs under `<output.dir>/attack`.
pub fn cmd_attack(cfg: &ExperimentConfig, datasets: &[PathBuf]) -> Result<RunReport, CliError> {
    if datasets.is_empty() {
        return Err(CliError::Validation("no datasets to attack".into()));
    }
    if datasets.len() > cfg.instances {
        return Err(CliError::Validation(format!(
            "{} datasets given but instances.count = {}",
            datasets.len(),
            cfg.instances
        )));
    }
    let mut loaded = Vec::with_capacity(datasets.len());
    for (i, path) in datasets.iter().enumerate() {
        if !path.exists() {
            return Err(CliError::Validation(format!(
                "dataset {} does not exist",
                path.display()
            )));
        }
        let d = read_dataset(path).with_context(|| format!("reading {}", path.display()))?;
        expected_header_matches(cfg, i, &d.header).map_err(|diff| {
            CliError::Validation(format!(
                "fingerprint mismatch: {} does not match the config for instance {i}: {diff}",
                path.display()
            ))
        })?;
        loaded.push(d);
    }

    let outcomes: Vec<(TrainOutcome, Checkpoint)> = loaded
        .par_iter()
        .enumerate()
        .map(|(i, d)| attack_instance(cfg, i, d))
        .collect::<Result<_, _>>()?;

    let out = cfg.output_dir.join("attack");
    let mut rows = Vec::with_capacity(outcomes.len());
    let mut timings = String::from("instance,seconds,epochs,timed_out\n");
    for (i, ((outcome, checkpoint), d)) in outcomes.iter().zip(&loaded).enumerate() {
        let bytes = checkpoint.to_bytes();
        write_file(
            &out.join(format!("checkpoints/instance-{i:03}.json")),
            &bytes,
        )?;
        let mut log = Vec::new();
        write_history_csv(&checkpoint.spec, &outcome.result.history, &mut log)?;
        write_file(&out.join(format!("logs/instance-{i:03}.csv")), &log)?;
        let r = &outcome.result;
        timings.push_str(&format!(
            "{i},{:.3},{},{}\n",
            r.seconds, r.epochs_run, r.timed_out
        ));
        rows.push(InstanceReport::new(
            i,
            cfg.instance_seed(i),
            datasets[i].display().to_string(),
            d.fingerprint(),
            checkpoint.fingerprint(),
            r,
        ));
        log::info!(
            "instance {i}: accuracy {:.4} ({}) after {} epochs, {:.1}s",
            r.test_accuracy,
            if r.success {
                "success"
            } else if r.timed_out {
                "failed (timeout)"
            } else {
                "failed"
            },
            r.epochs_run,
            r.seconds
        );
    }
    let report = RunReport::assemble(cfg.puf.label(), cfg.attack.mode, cfg.resolved.clone(), rows);
    let json = serde_json::to_vec_pretty(&report).context("serializing report")?;
    write_file(&out.join("report.json"), &json)?;
    let mut csv = Vec::new();
    report.write_csv(&mut csv)?;
    write_file(&out.join("report.csv"), &csv)?;
    write_file(&out.join("timings.csv"), timings.as_bytes())?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyRow {
    pub puf: String,
    pub m: usize,
    pub reliability: f64,
    /// Mean over challenges of |R_m - R_max|; zero for the largest m.
    pub mean_diff_vs_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyTable {
    /// Per-instance rows followed by the instance averages.
    pub rows: Vec<StudyRow>,
}

impl StudyTable {
    pub const CSV_HEADER: &'static str = "puf,m,R_m,mean_diff_vs_max";

    pub fn averages(&self) -> impl Iterator<Item = &StudyRow> {
        self.rows.iter().filter(|r| r.puf.ends_with("/mean"))
    }

    pub fn to_csv(&self) -> String {
        let mut s = format!("{}\n", Self::CSV_HEADER);
        for r in &self.rows {
            s.push_str(&format!(
                "{},{},{:.6},{:.6}\n",
                r.puf, r.m, r.reliability, r.mean_diff_vs_max
            ));
        }
        s
    }
}

/// Measured PUF reliability for each m in `study.m_values` and the mean
/// per-challenge difference to the largest m. Smaller m use the first m
/// repeats of the largest-m measurement of the same challenges.
pub fn cmd_reliability_study(cfg: &ExperimentConfig) -> Result<StudyTable, CliError> {
    let mut ms = cfg.study_m_values.clone();
    ms.sort_unstable();
    ms.dedup();
    if ms.len() < 2 {
        return Err(CliError::Validation(
            "study.m_values needs at least two distinct values for the difference column".into(),
        ));
    }
    if ms[0] == 0 {
        return Err(CliError::Validation("study.m_values must be >= 1".into()));
    }
    let m_max = *ms.last().unwrap();
    let meas = MeasurementConfig::new(cfg.num_mv, m_max, cfg.challenges()?)?;
    let mut rows = Vec::new();
    let mut sums = vec![(0.0, 0.0); ms.len()];
    for i in 0..cfg.instances {
        let puf = cfg.instance_puf(i);
        let (d, _) = generate_dataset_with_stats(&puf, &meas, cfg.instance_seed(i), cfg.lcg)?;
        let r_max: Vec<f64> = d
            .records
            .iter()
            .map(|r| measured_reliability(r.summary()))
            .collect::<Result<_, _>>()?;
        for (j, &m) in ms.iter().enumerate() {
            let mut total = 0.0;
            let mut diff = 0.0;
            for (rec, rmax) in d.records.iter().zip(&r_max) {
                let rm = measured_reliability(CountSummary::of(&rec.responses[..m]))?;
                total += rm;
                diff += (rm - rmax).abs();
            }
            let n = d.len() as f64;
            let row = StudyRow {
                puf: format!("{}/seed={}", puf.label(), puf.seed),
                m,
                reliability: total / n,
                mean_diff_vs_max: diff / n,
            };
            sums[j].0 += row.reliability;
            sums[j].1 += row.mean_diff_vs_max;
            rows.push(row);
        }
    }
    for (&m, (r, diff)) in ms.iter().zip(&sums) {
        rows.push(StudyRow {
            puf: format!("{}/mean", cfg.puf.label()),
            m,
            reliability: r / cfg.instances as f64,
            mean_diff_vs_max: diff / cfg.instances as f64,
        });
    }
    let table = StudyTable { rows };
    write_file(
        &cfg.output_dir.join("reliability-study.csv"),
        table.to_csv().as_bytes(),
    )?;
    Ok(table)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BerRow {
    pub puf: String,
    pub num_mv: usize,
    pub estimate: BerEstimate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BerTable {
    pub rows: Vec<BerRow>,
    /// Whether BER strictly decreases with num_mv for every instance; absent
    /// for a single num_mv value.
    pub strictly_decreasing: Option<bool>,
}

impl BerTable {
    pub const CSV_HEADER: &'static str = "puf,num_mv,ber,std_error";

    pub fn to_csv(&self) -> String {
        let mut s = format!("{}\n", Self::CSV_HEADER);
        for r in &self.rows {
            s.push_str(&format!(
                "{},{},{:.6},{:.6}\n",
                r.puf, r.num_mv, r.estimate.ber, r.estimate.std_error
            ));
        }
        s
    }
}

/// Bit error rate of MV-enhanced responses for each `ber.num_mv_values`
/// entry. All values share the same random challenges per instance.
pub fn cmd_ber(cfg: &ExperimentConfig) -> Result<BerTable, CliError> {
    let mut mvs = cfg.ber.num_mv_values.clone();
    if mvs.is_empty() {
        return Err(CliError::Validation("ber.num_mv_values is empty".into()));
    }
    mvs.sort_unstable();
    mvs.dedup();
    let mut rows = Vec::new();
    let mut decreasing = true;
    for i in 0..cfg.instances {
        let puf = cfg.instance_puf(i);
        let model = puf.build()?;
        let rng = SimRng::new(cfg.instance_seed(i)).substream(0xbe7);
        let mut prev: Option<f64> = None;
        for &mv in &mvs {
            let meas = MeasurementConfig::new(mv, cfg.ber.repeats, cfg.ber.challenges)?;
            let estimate = bit_error_estimate(&model, &meas, cfg.ber.reference, &rng)?;
            if prev.is_some_and(|p| estimate.ber >= p) {
                decreasing = false;
            }
            prev = Some(estimate.ber);
            rows.push(BerRow {
                puf: format!("{}/seed={}", puf.label(), puf.seed),
                num_mv: mv,
                estimate,
            });
        }
    }
    let table = BerTable {
        rows,
        strictly_decreasing: (mvs.len() > 1).then_some(decreasing),
    };
    write_file(&cfg.output_dir.join("ber.csv"), table.to_csv().as_bytes())?;
    Ok(table)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepBlock {
    pub axis: SweepAxis,
    pub value: usize,
    pub report: RunReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub blocks: Vec<SweepBlock>,
}

impl SweepReport {
    pub const CSV_HEADER: &'static str =
        "axis,value,instances,successes,success_rate,mean_accuracy,timeouts";

    pub fn to_csv(&self) -> String {
        let mut s = format!("{}\n", Self::CSV_HEADER);
        for b in &self.blocks {
            let r = &b.report;
            s.push_str(&format!(
                "{},{},{},{},{:.6},{:.6},{}\n",
                b.axis,
                b.value,
                r.instances.len(),
                r.successes,
                r.success_rate,
                r.mean_accuracy,
                r.timeouts
            ));
        }
        s
    }
}

/// Repeats gen + attack for each value of the sweep axis, each in its own
/// `<output.dir>/sweep/<axis>-<value>` directory.
pub fn cmd_sweep(raw: &crate::config::RawConfig) -> Result<SweepReport, CliError> {
    let (Some(axis), Some(list)) = (raw.get("sweep.axis"), raw.get("sweep.values")) else {
        return Err(CliError::Validation(
            "sweep needs sweep.axis and sweep.values".into(),
        ));
    };
    let first = list.split(',').next().unwrap_or("").trim().to_string();
    // The swept key may be absent from the base config (k_ldhf usually is).
    let mut base_raw = raw.clone();
    if let Ok(axis) = axis.parse::<SweepAxis>() {
        if base_raw.get(axis.key()).is_none() && !first.is_empty() {
            base_raw.set(axis.key(), first)?;
        }
    }
    let base = ExperimentConfig::from_raw(&base_raw)?;
    let (axis, mut values) = base
        .sweep
        .clone()
        .ok_or_else(|| CliError::Validation("sweep needs sweep.axis and sweep.values".into()))?;
    if values.is_empty() {
        return Err(CliError::Validation("sweep.values is empty".into()));
    }
    values.sort_unstable();
    values.dedup();
    // Validate every point before running any of them.
    let mut points = Vec::with_capacity(values.len());
    for &v in &values {
        let mut point = raw.clone();
        point.set(axis.key(), v.to_string())?;
        if axis == SweepAxis::KLdhf && point.get("attack.mode").is_none() {
            point.set("attack.mode", "ldhf")?;
        }
        let dir = base.output_dir.join("sweep").join(format!("{axis}-{v}"));
        point.set("output.dir", dir.display().to_string())?;
        let cfg = ExperimentConfig::from_raw(&point)
            .map_err(|e| CliError::Validation(format!("sweep {axis} = {v}: {e}")))?;
        check_measurement_budget(&cfg)
            .map_err(|e| CliError::Validation(format!("sweep {axis} = {v}: {e}")))?;
        points.push((v, cfg));
    }
    let mut blocks = Vec::with_capacity(points.len());
    for (v, cfg) in points {
        let paths = cmd_gen(&cfg)?;
        let report = cmd_attack(&cfg, &paths)?;
        blocks.push(SweepBlock {
            axis,
            value: v,
            report,
        });
    }
    let report = SweepReport { blocks };
    let dir = base.output_dir.join("sweep");
    write_file(&dir.join("sweep.csv"), report.to_csv().as_bytes())?;
    let json = serde_json::to_vec_pretty(&report).context("serializing sweep report")?;
    write_file(&dir.join("sweep.json"), &json)?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleCheck {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

/// Analytic reliability of an XOR PUF against Monte Carlo estimates: every
/// challenge must agree within 4 binomial standard errors.
pub fn reliability_oracle(
    challenges: usize,
    repeats: usize,
    seed: u64,
) -> Result<OracleCheck, CliError> {
    let puf = PufDescriptor::xor(32, 3, 0.3, seed);
    let model = puf.build()?;
    let mut rng = SimRng::new(seed).substream(1);
    let cfg = MeasurementConfig::new(1, repeats, 1)?;
    let mut worst: f64 = 0.0;
    let mut failures = 0;
    for i in 0..challenges {
        let c = Challenge::new((0..32).map(|_| rng.bit() as u8).collect())?;
        let analytic = analytic_reliability(&model, &c)?;
        let p = model.prob_one(&c)?;
        let meas = measure(&model, &c, &cfg, &rng.substream(1_000 + i as u64))?;
        let empirical = measured_reliability(meas.summary())?;
        let se = 2.0 * (p * (1.0 - p) / repeats as f64).sqrt();
        let z = if se > 0.0 {
            (empirical - analytic).abs() / se
        } else {
            0.0
        };
        worst = worst.max(z);
        if (empirical - analytic).abs() > 4.0 * se + 1e-12 {
            failures += 1;
        }
    }
    Ok(OracleCheck {
        name: "analytic reliability vs Monte Carlo".into(),
        passed: failures == 0,
        detail: format!("{challenges} challenges x {repeats} repeats on {}: worst |z| = {worst:.2}, {failures} beyond 4 SE", puf.label()),
    })
}

/// Analytic gradients against central finite differences on random small
/// networks.
pub fn gradient_oracle(trials: usize, seed: u64) -> Result<OracleCheck, CliError> {
    let mut rng = SimRng::new(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let (spec, params, x, targets) = random_problem(&mut rng);
        worst = worst.max(max_relative_error(&spec, &params, &x, &targets, 1e-5)?);
    }
    Ok(OracleCheck {
        name: "gradients vs finite differences".into(),
        passed: worst <= 1e-4,
        detail: format!("{trials} random networks: max relative error {worst:.2e} (limit 1e-4)"),
    })
}

/// Adam on f(x) = a (x - b)^2 must end within 1e-3 of b.
pub fn adam_oracle() -> Result<OracleCheck, CliError> {
    let (a, b) = (3.0, 1.7);
    let mut x = vec![-4.0];
    let mut state = AdamState::new(1);
    for t in 1..=500 {
        let g = [2.0 * a * (x[0] - b)];
        adam_step(&mut x, &g, &mut state, t, 0.1)?;
    }
    let err = (x[0] - b).abs();
    Ok(OracleCheck {
        name: "Adam on a 1-D quadratic".into(),
        passed: err <= 1e-3,
        detail: format!("500 steps: |x - x*| = {err:.2e} (limit 1e-3)"),
    })
}

pub fn cmd_oracle_check(seed: u64) -> Result<Vec<OracleCheck>, CliError> {
    Ok(vec![
        reliability_oracle(100, 20_000, seed)?,
        gradient_oracle(100, seed)?,
        adam_oracle()?,
    ])
}

/// Writes JSON to `path`, creating parent directories.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let file = {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        }
        fs::File::create(path).with_context(|| format!("creating {}", path.display()))?
    };
    serde_json::to_writer_pretty(BufWriter::new(file), value).context("serializing JSON")?;
    Ok(())
}
