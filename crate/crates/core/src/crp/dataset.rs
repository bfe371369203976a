//! Reliability-annotated CRP datasets and their line-oriented file format.
//!
//! Line 1 is a JSON header; every following line is one record,
//! `<challenge bits> <response bits>`, both as `0`/`1` strings with stage 0
//! and repeat 0 first.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::lcg::{lcg_challenges, LcgParams};
use super::measure::{measure_all, MeasurementConfig, RepeatedMeasurement};
use crate::error::{invalid, Error, Result};
use crate::puf::{Challenge, PufDescriptor};
use crate::rng::{derive_seed, SimRng};

pub const DATASET_FORMAT_VERSION: u32 = 1;

const CHALLENGE_STREAM: u64 = 0x6368_616c;
const NOISE_STREAM: u64 = 0x6e6f_6973;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LcgHeader {
    pub a: u64,
    pub g: u64,
    /// State the generator starts from, derived from the master seed.
    pub start: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub version: u32,
    pub puf: PufDescriptor,
    pub n: usize,
    pub m_repeats: usize,
    pub num_mv: usize,
    #[serde(rename = "N")]
    pub n_challenges: usize,
    pub seed: u64,
    pub lcg: LcgHeader,
}

impl DatasetHeader {
    pub fn measurement(&self) -> MeasurementConfig {
        MeasurementConfig {
            num_mv: self.num_mv,
            m_repeats: self.m_repeats,
            n_challenges: self.n_challenges,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub header: DatasetHeader,
    pub records: Vec<RepeatedMeasurement>,
}

/// Counters collected while generating a dataset.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct GenerationStats {
    /// Majority votes that ended in an exact tie (resolved to 0).
    pub mv_ties: usize,
}

/// LCG start state used for master seed `seed` on `n` stages.
pub fn challenge_start(seed: u64, n: usize) -> u64 {
    let s = derive_seed(seed, CHALLENGE_STREAM);
    if n >= 64 {
        s
    } else {
        s & ((1u64 << n) - 1)
    }
}

/// Noise stream for master seed `seed`; record `i` uses its substream `i`.
pub fn noise_stream(seed: u64) -> SimRng {
    SimRng::new(derive_seed(seed, NOISE_STREAM))
}

pub fn generate_dataset(
    puf: &PufDescriptor,
    cfg: &MeasurementConfig,
    seed: u64,
    lcg: LcgParams,
) -> Result<Dataset> {
    Ok(generate_dataset_with_stats(puf, cfg, seed, lcg)?.0)
}

pub fn generate_dataset_with_stats(
    puf: &PufDescriptor,
    cfg: &MeasurementConfig,
    seed: u64,
    lcg: LcgParams,
) -> Result<(Dataset, GenerationStats)> {
    cfg.validate()?;
    let model = puf.build()?;
    let start = challenge_start(seed, puf.n);
    let challenges = lcg_challenges(start, puf.n, cfg.n_challenges, lcg)?;
    let (records, mv_ties) = measure_all(&model, &challenges, cfg, &noise_stream(seed))?;
    if mv_ties > 0 {
        log::warn!(
            "{mv_ties} majority votes over {} evaluations ended in a tie and were resolved to 0",
            cfg.num_mv
        );
    }
    let header = DatasetHeader {
        version: DATASET_FORMAT_VERSION,
        puf: puf.clone(),
        n: puf.n,
        m_repeats: cfg.m_repeats,
        num_mv: cfg.num_mv,
        n_challenges: cfg.n_challenges,
        seed,
        lcg: LcgHeader {
            a: lcg.a,
            g: lcg.g,
            start,
        },
    };
    Ok((Dataset { header, records }, GenerationStats { mv_ties }))
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn challenges(&self) -> impl Iterator<Item = &Challenge> {
        self.records.iter().map(|r| &r.challenge)
    }

    pub fn write_to<W: Write>(&self, w: W) -> Result<()> {
        let mut w = BufWriter::new(w);
        serde_json::to_writer(&mut w, &self.header)?;
        w.write_all(b"\n")?;
        let mut line = String::new();
        for r in &self.records {
            line.clear();
            line.push_str(&r.challenge.to_string());
            line.push(' ');
            line.extend(r.responses.iter().map(|&b| if b == 1 { '1' } else { '0' }));
            line.push('\n');
            w.write_all(line.as_bytes())?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)
            .expect("writing to memory cannot fail");
        buf
    }

    /// SHA-256 of the serialized dataset, hex encoded.
    pub fn fingerprint(&self) -> String {
        hex::encode(Sha256::digest(self.to_bytes()))
    }

    pub fn read_from<R: Read>(r: R) -> Result<Self> {
        let mut lines = BufReader::new(r).lines();
        let first = lines
            .next()
            .ok_or_else(|| Error::MalformedHeader("empty file".into()))??;
        let header = parse_header(&first)?;
        let mut records = Vec::with_capacity(header.n_challenges);
        for (idx, line) in lines.enumerate() {
            let line = line?;
            let lineno = idx + 2;
            if line.is_empty() {
                continue;
            }
            if records.len() == header.n_challenges {
                return Err(Error::MalformedRecord {
                    line: lineno,
                    reason: format!("more than the {} announced records", header.n_challenges),
                });
            }
            records.push(parse_record(&line, lineno, &header)?);
        }
        if records.len() != header.n_challenges {
            return Err(Error::TruncatedRecords {
                expected: header.n_challenges,
                found: records.len(),
            });
        }
        Ok(Self { header, records })
    }
}

fn parse_header(line: &str) -> Result<DatasetHeader> {
    let value: serde_json::Value =
        serde_json::from_str(line).map_err(|e| Error::MalformedHeader(e.to_string()))?;
    let version = value
        .get("version")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| Error::MalformedHeader("missing integer field \"version\"".into()))?;
    if version != DATASET_FORMAT_VERSION as u64 {
        return Err(Error::VersionMismatch {
            found: version as u32,
            expected: DATASET_FORMAT_VERSION,
        });
    }
    let header: DatasetHeader =
        serde_json::from_value(value).map_err(|e| Error::MalformedHeader(e.to_string()))?;
    if header.m_repeats == 0 || header.num_mv == 0 || header.n != header.puf.n {
        return Err(Error::MalformedHeader(
            "inconsistent n / m_repeats / num_mv fields".into(),
        ));
    }
    Ok(header)
}

fn parse_record(line: &str, lineno: usize, header: &DatasetHeader) -> Result<RepeatedMeasurement> {
    let bad = |reason: String| Error::MalformedRecord {
        line: lineno,
        reason,
    };
    let (ch, resp) = line
        .split_once(' ')
        .ok_or_else(|| bad("expected `<challenge> <responses>`".into()))?;
    let challenge = Challenge::parse(ch).map_err(|e| bad(e.to_string()))?;
    if challenge.len() != header.n {
        return Err(bad(format!(
            "challenge has {} bits, header says {}",
            challenge.len(),
            header.n
        )));
    }
    let responses = resp
        .bytes()
        .map(|b| match b {
            b'0' => Ok(0u8),
            b'1' => Ok(1u8),
            other => Err(bad(format!(
                "unexpected response character {:?}",
                other as char
            ))),
        })
        .collect::<Result<Vec<u8>>>()?;
    if responses.len() != header.m_repeats {
        return Err(bad(format!(
            "{} responses, header says {}",
            responses.len(),
            header.m_repeats
        )));
    }
    Ok(RepeatedMeasurement {
        challenge,
        responses,
    })
}

pub fn write_dataset(d: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    d.write_to(File::create(path)?)
}

pub fn read_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    Dataset::read_from(File::open(path)?)
}

/// Checks that two datasets measured the same challenges in the same order.
pub fn check_same_challenges(a: &Dataset, b: &Dataset) -> Result<()> {
    if a.len() != b.len() {
        return Err(invalid(format!(
            "datasets have {} and {} records",
            a.len(),
            b.len()
        )));
    }
    match a.challenges().zip(b.challenges()).position(|(x, y)| x != y) {
        Some(i) => Err(Error::ChallengeMismatch(i)),
        None => Ok(()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> Dataset {
        let puf = PufDescriptor::xor(16, 2, 0.1, 5);
        let cfg = MeasurementConfig::new(3, 7, 40).unwrap();
        generate_dataset(&puf, &cfg, 11, LcgParams::default()).unwrap()
    }

    #[test]
    fn round_trip_is_lossless() {
        let d = small();
        let back = Dataset::read_from(d.to_bytes().as_slice()).unwrap();
        assert_eq!(back, d);
        assert_eq!(back.fingerprint(), d.fingerprint());
    }

    #[test]
    fn file_round_trip() {
        let d = small();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.crp");
        write_dataset(&d, &path).unwrap();
        assert_eq!(read_dataset(&path).unwrap(), d);
    }

    #[test]
    fn same_seed_same_bytes_different_seed_differs() {
        assert_eq!(small().to_bytes(), small().to_bytes());
        let puf = PufDescriptor::xor(16, 2, 0.1, 5);
        let cfg = MeasurementConfig::new(3, 7, 40).unwrap();
        let other = generate_dataset(&puf, &cfg, 12, LcgParams::default()).unwrap();
        assert_ne!(other.to_bytes(), small().to_bytes());
    }

    #[test]
    fn generation_ignores_thread_count() {
        let build = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| small().to_bytes())
        };
        assert_eq!(build(1), build(3));
    }

    #[test]
    fn read_errors_are_distinct() {
        let bytes = small().to_bytes();
        let text = String::from_utf8(bytes).unwrap();

        let err = Dataset::read_from("not json\n".as_bytes()).unwrap_err();
        assert!(matches!(err, Error::MalformedHeader(_)), "{err}");

        let truncated: String = text.lines().take(10).map(|l| format!("{l}\n")).collect();
        let err = Dataset::read_from(truncated.as_bytes()).unwrap_err();
        assert!(
            matches!(
                err,
                Error::TruncatedRecords {
                    expected: 40,
                    found: 9
                }
            ),
            "{err}"
        );

        let bumped = text.replacen("\"version\":1", "\"version\":2", 1);
        let err = Dataset::read_from(bumped.as_bytes()).unwrap_err();
        assert!(
            matches!(err, Error::VersionMismatch { found: 2, .. }),
            "{err}"
        );

        let mut lines: Vec<&str> = text.lines().collect();
        lines[3] = "0101 1";
        let broken = lines.join("\n");
        let err = Dataset::read_from(broken.as_bytes()).unwrap_err();
        assert!(
            matches!(err, Error::MalformedRecord { line: 4, .. }),
            "{err}"
        );
    }

    #[test]
    fn header_records_provenance() {
        let d = small();
        assert_eq!(d.header.lcg.a, 75);
        assert_eq!(d.header.lcg.g, 74);
        assert_eq!(d.header.seed, 11);
        assert_eq!(d.records.len(), 40);
        assert!(d.records.iter().all(|r| r.responses.len() == 7));
        let first_line = String::from_utf8(d.to_bytes()).unwrap();
        let first_line = first_line.lines().next().unwrap();
        assert!(first_line.contains("\"N\":40"));
    }

    #[test]
    fn challenge_mismatch_is_reported() {
        let a = small();
        let mut b = a.clone();
        b.records[5].challenge = b.records[5].challenge.with_flipped(0);
        assert!(matches!(
            check_same_challenges(&a, &b),
            Err(Error::ChallengeMismatch(5))
        ));
        check_same_challenges(&a, &a).unwrap();
    }
}
