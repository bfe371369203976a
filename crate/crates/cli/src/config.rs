//! Flat `section.key = value` experiment configuration.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use ldhf_core::crp::{BerReference, LcgParams, MeasurementConfig};
use ldhf_core::nn::{Activation, AttackMode, InputEncoding, TrainConfig};
use ldhf_core::puf::{FeedForwardLoop, PufDescriptor, PufKind};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "LDHF_OUT_DIR";

pub struct KeySpec {
    pub key: &'static str,
    pub default: Option<&'static str>,
    pub help: &'static str,
}

const fn key(key: &'static str, default: Option<&'static str>, help: &'static str) -> KeySpec {
    KeySpec { key, default, help }
}

/// Every accepted configuration key. Each is also a `--<key>` flag.
pub const KEYS: &[KeySpec] = &[
    key("puf.kind", None, "arbiter, xor, interpose or feed-forward"),
    key("puf.n", None, "number of stages"),
    key(
        "puf.noise_level",
        None,
        "noise std as a fraction of the delay-difference std",
    ),
    key("puf.k_xor", None, "chains XORed together (xor)"),
    key("puf.x", None, "upper-layer XOR width (interpose)"),
    key("puf.y", None, "lower-layer XOR width (interpose)"),
    key(
        "puf.interpose_pos",
        None,
        "insertion position of the upper response (interpose, default n/2)",
    ),
    key(
        "puf.loops",
        None,
        "feed-forward loops as from:to pairs, comma separated",
    ),
    key(
        "measure.num_mv",
        Some("1"),
        "noisy evaluations per majority vote",
    ),
    key(
        "measure.m",
        Some("10"),
        "repeated measurements per challenge",
    ),
    key(
        "measure.k_ldhf",
        None,
        "LDHF event length k (must not exceed measure.m)",
    ),
    key("measure.challenges", None, "challenges per dataset"),
    key("lcg.a", Some("75"), "LCG multiplier"),
    key("lcg.g", Some("74"), "LCG increment"),
    key(
        "attack.mode",
        Some("alsca"),
        "response, msa, mlmsa, alsca or ldhf (uses measure.k_ldhf)",
    ),
    key(
        "attack.encoding",
        Some("parity"),
        "network input: parity or raw-bits",
    ),
    key(
        "attack.activation",
        Some("relu"),
        "hidden activation: relu or tanh",
    ),
    key(
        "attack.preset",
        Some("default"),
        "training preset: default or ldhf-study (20% validation)",
    ),
    key(
        "attack.learning_rate",
        None,
        "Adam learning rate (preset: 0.001)",
    ),
    key("attack.batch_size", None, "mini-batch size (preset: 1000)"),
    key("attack.max_epochs", None, "epoch limit (preset: 150)"),
    key(
        "attack.patience",
        None,
        "early-stopping patience in epochs (preset: 10)",
    ),
    key(
        "attack.min_delta",
        None,
        "required validation-loss improvement (preset: 1e-4)",
    ),
    key(
        "attack.validation_fraction",
        None,
        "share of training data for validation (preset: 0.01)",
    ),
    key(
        "attack.test_fraction",
        None,
        "share of all records for testing (preset: 0.1)",
    ),
    key(
        "attack.timeout_secs",
        Some("1800"),
        "per-instance wall-clock limit; exceeding it fails the attack",
    ),
    key("instances.count", Some("1"), "number of PUF instances"),
    key(
        "instances.base_seed",
        Some("0"),
        "instance i uses seed base_seed + i",
    ),
    key(
        "output.dir",
        None,
        "output directory (default: $LDHF_OUT_DIR or ./ldhf-out)",
    ),
    key(
        "study.m_values",
        Some("20,100,1000"),
        "repeat counts compared by reliability-study",
    ),
    key(
        "ber.num_mv_values",
        Some("5,20,50"),
        "majority-vote sizes compared by ber",
    ),
    key(
        "ber.challenges",
        Some("10000"),
        "random challenges per BER estimate",
    ),
    key(
        "ber.repeats",
        Some("1"),
        "MV-enhanced responses per challenge",
    ),
    key(
        "ber.reference",
        Some("noiseless"),
        "noiseless or majority (of 1001 evaluations)",
    ),
    key("sweep.axis", None, "k_ldhf, num_mv, challenges or m"),
    key("sweep.values", None, "comma-separated axis values"),
];

pub fn key_spec(name: &str) -> Option<&'static KeySpec> {
    KEYS.iter().find(|k| k.key == name)
}

/// Raw key/value pairs, defaults not yet applied.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawConfig(pub BTreeMap<String, String>);

impl RawConfig {
    /// Parses `key = value` lines; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut map = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                CliError::Validation(format!("config line {}: expected key = value", i + 1))
            })?;
            let (k, v) = (k.trim(), v.trim());
            if key_spec(k).is_none() {
                return Err(CliError::Validation(format!(
                    "unknown config key {k:?} (line {})",
                    i + 1
                )));
            }
            if map.insert(k.to_string(), v.to_string()).is_some() {
                return Err(CliError::Validation(format!(
                    "config key {k:?} given twice"
                )));
            }
        }
        Ok(Self(map))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            CliError::Validation(format!("cannot read config {}: {e}", path.display()))
        })?;
        Self::parse(&text)
    }

    pub fn set(&mut self, key: &str, value: impl Into<String>) -> Result<(), CliError> {
        if key_spec(key).is_none() {
            return Err(CliError::Validation(format!("unknown config key {key:?}")));
        }
        self.0.insert(key.to_string(), value.into());
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.0.get(key).map(String::as_str)
    }

    /// Explicit values plus defaults for every key that has one.
    pub fn resolved(&self) -> BTreeMap<String, String> {
        let mut out = BTreeMap::new();
        for k in KEYS {
            if let Some(v) = self.get(k.key).or(k.default) {
                out.insert(k.key.to_string(), v.to_string());
            }
        }
        out
    }

    pub fn to_text(&self) -> String {
        self.0.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}

struct Lookup {
    values: BTreeMap<String, String>,
}

impl Lookup {
    fn opt<T: FromStr>(&self, key: &str) -> Result<Option<T>, CliError>
    where
        T::Err: fmt::Display,
    {
        debug_assert!(key_spec(key).is_some(), "unregistered key {key}");
        match self.values.get(key) {
            None => Ok(None),
            Some(v) => v
                .parse::<T>()
                .map(Some)
                .map_err(|e| CliError::Validation(format!("{key} = {v:?}: {e}"))),
        }
    }

    fn req<T: FromStr>(&self, key: &str) -> Result<T, CliError>
    where
        T::Err: fmt::Display,
    {
        self.opt(key)?
            .ok_or_else(|| CliError::Validation(format!("missing required config key {key}")))
    }

    fn list(&self, key: &str) -> Result<Option<Vec<usize>>, CliError> {
        let Some(v) = self.values.get(key) else {
            return Ok(None);
        };
        let items = v
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.parse::<usize>()
                    .map_err(|e| CliError::Validation(format!("{key}: {s:?}: {e}")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Some(items))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepAxis {
    KLdhf,
    NumMv,
    Challenges,
    M,
}

impl SweepAxis {
    pub fn key(self) -> &'static str {
        match self {
            SweepAxis::KLdhf => "measure.k_ldhf",
            SweepAxis::NumMv => "measure.num_mv",
            SweepAxis::Challenges => "measure.challenges",
            SweepAxis::M => "measure.m",
        }
    }
}

impl FromStr for SweepAxis {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "k_ldhf" => Ok(SweepAxis::KLdhf),
            "num_mv" => Ok(SweepAxis::NumMv),
            "challenges" | "crps" => Ok(SweepAxis::Challenges),
            "m" => Ok(SweepAxis::M),
            _ => Err(format!(
                "unknown sweep axis {s:?} (expected k_ldhf, num_mv, challenges or m)"
            )),
        }
    }
}

impl fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SweepAxis::KLdhf => "k_ldhf",
            SweepAxis::NumMv => "num_mv",
            SweepAxis::Challenges => "challenges",
            SweepAxis::M => "m",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackSettings {
    pub mode: AttackMode,
    pub encoding: InputEncoding,
    pub activation: Activation,
    pub train: TrainConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BerSettings {
    pub num_mv_values: Vec<usize>,
    pub challenges: usize,
    pub repeats: usize,
    pub reference: BerReference,
}

/// Typed, validated view of a configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    /// Descriptor of instance 0 before seeding.
    pub puf: PufDescriptor,
    pub num_mv: usize,
    pub m: usize,
    pub k_ldhf: Option<usize>,
    pub challenges: Option<usize>,
    pub lcg: LcgParams,
    pub attack: AttackSettings,
    pub instances: usize,
    pub base_seed: u64,
    pub output_dir: PathBuf,
    pub study_m_values: Vec<usize>,
    pub ber: BerSettings,
    pub sweep: Option<(SweepAxis, Vec<usize>)>,
    /// Resolved key/value view, copied into every report.
    pub resolved: BTreeMap<String, String>,
}

fn parse_loops(s: &str) -> Result<Vec<FeedForwardLoop>, CliError> {
    s.split(',')
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .map(|p| {
            let (a, b) = p
                .split_once(':')
                .ok_or_else(|| CliError::Validation(format!("puf.loops: {p:?} is not from:to")))?;
            let parse = |v: &str| {
                v.trim()
                    .parse::<usize>()
                    .map_err(|e| CliError::Validation(format!("puf.loops: {v:?}: {e}")))
            };
            Ok(FeedForwardLoop {
                arbiter_stage: parse(a)?,
                target_stage: parse(b)?,
            })
        })
        .collect()
}

fn parse_activation(s: &str) -> Result<Activation, CliError> {
    match s {
        "relu" => Ok(Activation::Relu),
        "tanh" => Ok(Activation::Tanh),
        _ => Err(CliError::Validation(format!(
            "attack.activation = {s:?}: expected relu or tanh"
        ))),
    }
}

impl ExperimentConfig {
    pub fn from_raw(raw: &RawConfig) -> Result<Self, CliError> {
        let values = raw.resolved();
        let l = Lookup {
            values: values.clone(),
        };

        let kind: PufKind = l.req("puf.kind")?;
        let n: usize = l.req("puf.n")?;
        let noise: f64 = l.req("puf.noise_level")?;
        let puf = match kind {
            PufKind::Arbiter => PufDescriptor::arbiter(n, noise, 0),
            PufKind::Xor => PufDescriptor::xor(n, l.req("puf.k_xor")?, noise, 0),
            PufKind::Interpose => PufDescriptor::interpose(
                n,
                l.req("puf.x")?,
                l.req("puf.y")?,
                l.opt("puf.interpose_pos")?,
                noise,
                0,
            ),
            PufKind::FeedForward => {
                let loops = match l.values.get("puf.loops") {
                    Some(s) => Some(parse_loops(s)?),
                    None => None,
                };
                PufDescriptor::feed_forward(n, loops, noise, 0)
            }
        };
        puf.build()
            .map_err(|e| CliError::Validation(e.to_string()))?;

        let num_mv: usize = l.req("measure.num_mv")?;
        let m: usize = l.req("measure.m")?;
        let k_ldhf: Option<usize> = l.opt("measure.k_ldhf")?;
        let challenges: Option<usize> = l.opt("measure.challenges")?;
        MeasurementConfig::new(num_mv, m, challenges.unwrap_or(1))
            .map_err(|e| CliError::Validation(e.to_string()))?;
        if let Some(k) = k_ldhf {
            if k == 0 || k > m {
                return Err(CliError::Validation(format!(
                    "measure.k_ldhf = {k} must lie in [1, measure.m = {m}]"
                )));
            }
        }

        let lcg = LcgParams {
            a: l.req("lcg.a")?,
            g: l.req("lcg.g")?,
        };

        let mode = match l.req::<String>("attack.mode")?.as_str() {
            "ldhf" => AttackMode::Ldhf {
                k: k_ldhf.ok_or_else(|| {
                    CliError::Validation("attack.mode = ldhf requires measure.k_ldhf".into())
                })?,
            },
            other => other
                .parse()
                .map_err(|e: ldhf_core::Error| CliError::Validation(e.to_string()))?,
        };
        let mut train = match l.req::<String>("attack.preset")?.as_str() {
            "default" => TrainConfig::default(),
            "ldhf-study" => TrainConfig::ldhf_study(),
            other => {
                return Err(CliError::Validation(format!(
                    "attack.preset = {other:?}: expected default or ldhf-study"
                )))
            }
        };
        if let Some(v) = l.opt("attack.learning_rate")? {
            train.learning_rate = v;
        }
        if let Some(v) = l.opt("attack.batch_size")? {
            train.batch_size = v;
        }
        if let Some(v) = l.opt("attack.max_epochs")? {
            train.max_epochs = v;
        }
        if let Some(v) = l.opt("attack.patience")? {
            train.patience = v;
        }
        if let Some(v) = l.opt("attack.min_delta")? {
            train.min_delta = v;
        }
        if let Some(v) = l.opt("attack.validation_fraction")? {
            train.validation_fraction = v;
        }
        if let Some(v) = l.opt("attack.test_fraction")? {
            train.test_fraction = v;
        }
        train.timeout_secs = l.opt("attack.timeout_secs")?;
        train
            .validate()
            .map_err(|e| CliError::Validation(e.to_string()))?;
        let attack = AttackSettings {
            mode,
            encoding: l.req("attack.encoding")?,
            activation: parse_activation(&l.req::<String>("attack.activation")?)?,
            train,
        };

        let instances: usize = l.req("instances.count")?;
        if instances == 0 {
            return Err(CliError::Validation("instances.count must be >= 1".into()));
        }
        let base_seed: u64 = l.req("instances.base_seed")?;
        base_seed.checked_add(instances as u64 - 1).ok_or_else(|| {
            CliError::Validation("instances.base_seed + instances.count overflows".into())
        })?;

        let output_dir = match l.values.get("output.dir") {
            Some(d) => PathBuf::from(d),
            None => std::env::var_os(OUT_DIR_ENV)
                .map(PathBuf::from)
                .unwrap_or_else(|| PathBuf::from("ldhf-out")),
        };

        let ber = BerSettings {
            num_mv_values: l.list("ber.num_mv_values")?.unwrap_or_default(),
            challenges: l.req("ber.challenges")?,
            repeats: l.req("ber.repeats")?,
            reference: match l.req::<String>("ber.reference")?.as_str() {
                "noiseless" => BerReference::Noiseless,
                "majority" => BerReference::MajorityOfMany,
                other => {
                    return Err(CliError::Validation(format!(
                        "ber.reference = {other:?}: expected noiseless or majority"
                    )))
                }
            },
        };

        let sweep = match l.values.get("sweep.axis") {
            None => None,
            Some(a) => {
                let axis: SweepAxis = a.parse().map_err(CliError::Validation)?;
                let values = l.list("sweep.values")?.ok_or_else(|| {
                    CliError::Validation("sweep.axis requires sweep.values".into())
                })?;
                Some((axis, values))
            }
        };

        Ok(Self {
            puf,
            num_mv,
            m,
            k_ldhf,
            challenges,
            lcg,
            attack,
            instances,
            base_seed,
            output_dir,
            study_m_values: l.list("study.m_values")?.unwrap_or_default(),
            ber,
            sweep,
            resolved: values,
        })
    }

    pub fn instance_seed(&self, i: usize) -> u64 {
        self.base_seed + i as u64
    }

    pub fn instance_puf(&self, i: usize) -> PufDescriptor {
        self.puf.with_seed(self.instance_seed(i))
    }

    pub fn challenges(&self) -> Result<usize, CliError> {
        self.challenges.ok_or_else(|| {
            CliError::Validation("missing required config key measure.challenges".into())
        })
    }

    pub fn measurement(&self) -> Result<MeasurementConfig, CliError> {
        MeasurementConfig::new(self.num_mv, self.m, self.challenges()?)
            .map_err(|e| CliError::Validation(e.to_string()))
    }

    pub fn datasets_dir(&self) -> PathBuf {
        self.output_dir.join("datasets")
    }

    pub fn dataset_path(&self, i: usize) -> PathBuf {
        self.datasets_dir().join(format!("instance-{i:03}.crp"))
    }
}
