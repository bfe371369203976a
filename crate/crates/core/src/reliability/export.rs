use std::io::{BufRead, BufReader, BufWriter, Read, Write};

use serde::{Deserialize, Serialize};

use super::{
    ldhf_from_responses, lossy_repr, onehot_repr, LdhfParams, ReliabilityVector, ReprKind,
};
use crate::crp::{Dataset, RepeatedMeasurement};
use crate::error::{invalid, Error, Result};
use crate::puf::Challenge;

pub const EXPORT_FORMAT_VERSION: u32 = 1;

/// Which representation to compute from a record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Representation {
    OneHot,
    Lossy { k: usize },
    Ldhf { k: usize },
}

impl Representation {
    pub fn kind(&self) -> ReprKind {
        match self {
            Representation::OneHot => ReprKind::OneHot,
            Representation::Lossy { .. } => ReprKind::Lossy,
            Representation::Ldhf { .. } => ReprKind::Ldhf,
        }
    }

    pub fn k(&self) -> Option<usize> {
        match *self {
            Representation::OneHot => None,
            Representation::Lossy { k } | Representation::Ldhf { k } => Some(k),
        }
    }

    pub fn dim(&self, m: usize) -> usize {
        self.k().unwrap_or(m) + 1
    }

    pub fn compute(&self, record: &RepeatedMeasurement) -> Result<ReliabilityVector> {
        let s = record.summary();
        match *self {
            Representation::OneHot => Ok(onehot_repr(s)),
            Representation::Lossy { k } => lossy_repr(s, k),
            Representation::Ldhf { k } => {
                ldhf_from_responses(&record.responses, LdhfParams::new(s.m, k)?)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExportHeader {
    pub version: u32,
    pub kind: ReprKind,
    pub m: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    pub records: usize,
}

/// Writes one `<challenge> <p_0> <p_1> ...` row per record after a JSON header.
pub fn write_representation<W: Write>(d: &Dataset, repr: Representation, w: W) -> Result<()> {
    let mut w = BufWriter::new(w);
    let header = ExportHeader {
        version: EXPORT_FORMAT_VERSION,
        kind: repr.kind(),
        m: d.header.m_repeats,
        k: repr.k(),
        records: d.len(),
    };
    serde_json::to_writer(&mut w, &header)?;
    w.write_all(b"\n")?;
    for r in &d.records {
        let v = repr.compute(r)?;
        write!(w, "{}", r.challenge)?;
        for p in &v.probs {
            write!(w, " {p}")?;
        }
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_representation<R: Read>(
    r: R,
) -> Result<(ExportHeader, Vec<(Challenge, ReliabilityVector)>)> {
    let mut lines = BufReader::new(r).lines();
    let first = lines
        .next()
        .ok_or_else(|| Error::MalformedHeader("empty file".into()))??;
    let header: ExportHeader =
        serde_json::from_str(&first).map_err(|e| Error::MalformedHeader(e.to_string()))?;
    if header.version != EXPORT_FORMAT_VERSION {
        return Err(Error::VersionMismatch {
            found: header.version,
            expected: EXPORT_FORMAT_VERSION,
        });
    }
    let dim = header.k.unwrap_or(header.m) + 1;
    let mut rows = Vec::with_capacity(header.records);
    for (i, line) in lines.enumerate() {
        let line = line?;
        let mut fields = line.split(' ');
        let bad = |reason: String| Error::MalformedRecord {
            line: i + 2,
            reason,
        };
        let challenge =
            Challenge::parse(fields.next().unwrap_or_default()).map_err(|e| bad(e.to_string()))?;
        let probs = fields
            .map(|f| f.parse::<f64>().map_err(|e| bad(e.to_string())))
            .collect::<Result<Vec<_>>>()?;
        if probs.len() != dim {
            return Err(bad(format!("{} values, expected {dim}", probs.len())));
        }
        rows.push((
            challenge,
            ReliabilityVector {
                kind: header.kind,
                probs,
            },
        ));
    }
    if rows.len() != header.records {
        return Err(Error::TruncatedRecords {
            expected: header.records,
            found: rows.len(),
        });
    }
    if rows.is_empty() && header.records > 0 {
        return Err(invalid("no rows"));
    }
    Ok((header, rows))
}
