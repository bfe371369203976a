use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::data::InputEncoding;
use super::network::Parameters;
use super::spec::{AttackMode, NetworkSpec};
use super::train::TrainConfig;
use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

/// Trained model with everything needed to rebuild and audit it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub mode: AttackMode,
    pub encoding: InputEncoding,
    pub spec: NetworkSpec,
    pub config: TrainConfig,
    pub dataset_fingerprint: String,
    /// Flattened parameters as little-endian IEEE-754 doubles, hex encoded.
    pub parameters: String,
}

impl Checkpoint {
    pub fn new(
        mode: AttackMode,
        encoding: InputEncoding,
        spec: &NetworkSpec,
        config: &TrainConfig,
        dataset_fingerprint: impl Into<String>,
        params: &Parameters,
    ) -> Self {
        let bytes: Vec<u8> = params
            .flatten()
            .iter()
            .flat_map(|v| v.to_le_bytes())
            .collect();
        Self {
            version: CHECKPOINT_FORMAT_VERSION,
            mode,
            encoding,
            spec: spec.clone(),
            config: config.clone(),
            dataset_fingerprint: dataset_fingerprint.into(),
            parameters: hex::encode(bytes),
        }
    }

    pub fn params(&self) -> Result<Parameters> {
        let bytes = hex::decode(&self.parameters)
            .map_err(|e| Error::MalformedHeader(format!("checkpoint parameters: {e}")))?;
        if bytes.len() % 8 != 0 {
            return Err(Error::MalformedHeader(
                "checkpoint parameter bytes not a multiple of 8".into(),
            ));
        }
        let flat: Vec<f64> = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        Parameters::unflatten(&self.spec, &flat)
    }

    pub fn write_to<W: Write>(&self, w: W) -> Result<()> {
        let mut w = BufWriter::new(w);
        serde_json::to_writer_pretty(&mut w, self)?;
        w.write_all(b"\n")?;
        w.flush()?;
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)
            .expect("writing to memory cannot fail");
        buf
    }

    /// SHA-256 of the serialized checkpoint, hex encoded.
    pub fn fingerprint(&self) -> String {
        hex::encode(Sha256::digest(self.to_bytes()))
    }

    pub fn read_from<R: Read>(r: R) -> Result<Self> {
        let c: Checkpoint = serde_json::from_reader(BufReader::new(r))
            .map_err(|e| Error::MalformedHeader(e.to_string()))?;
        if c.version != CHECKPOINT_FORMAT_VERSION {
            return Err(Error::VersionMismatch {
                found: c.version,
                expected: CHECKPOINT_FORMAT_VERSION,
            });
        }
        c.spec.validate()?;
        c.params()?;
        Ok(c)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_to(File::create(path)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(File::open(path)?)
    }
}
