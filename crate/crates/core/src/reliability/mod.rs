//! Reliability statistics and representations computed from repeated
//! measurements.
//!
//! All representations are derived from the raw per-repeat responses, so a
//! single dataset serves every attack variant.

mod export;

pub use export::{read_representation, write_representation, ExportHeader, Representation};

use serde::{Deserialize, Serialize};

use crate::crp::{check_same_challenges, measure, Dataset, MeasurementConfig};
use crate::error::{invalid, Result};
use crate::puf::{Challenge, PufModel};
use crate::rng::SimRng;

/// Number of 1-valued responses among `m` repeats.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountSummary {
    pub ones: usize,
    pub m: usize,
}

impl CountSummary {
    pub fn new(ones: usize, m: usize) -> Result<Self> {
        if ones > m {
            return Err(invalid(format!("{ones} ones out of {m} repeats")));
        }
        Ok(Self { ones, m })
    }

    pub fn of(responses: &[u8]) -> Self {
        Self {
            ones: responses.iter().filter(|&&b| b == 1).count(),
            m: responses.len(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReprKind {
    /// `m + 1` entries, indicator of the 1-count.
    OneHot,
    /// `k + 1` entries, indicator of the count bucket.
    Lossy,
    /// `k + 1` entries, frequency of per-event 1-counts.
    Ldhf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityVector {
    pub kind: ReprKind,
    pub probs: Vec<f64>,
}

impl ReliabilityVector {
    fn indicator(kind: ReprKind, dim: usize, at: usize) -> Self {
        let mut probs = vec![0.0; dim];
        probs[at] = 1.0;
        Self { kind, probs }
    }

    pub fn dim(&self) -> usize {
        self.probs.len()
    }

    pub fn argmax(&self) -> usize {
        self.probs
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (i, &p)| {
                if p > best.1 {
                    (i, p)
                } else {
                    best
                }
            })
            .0
    }

    pub fn sum(&self) -> f64 {
        self.probs.iter().sum()
    }
}

/// `R_m(c) = |2 f_1 - 1|`.
pub fn measured_reliability(s: CountSummary) -> Result<f64> {
    if s.m == 0 {
        return Err(invalid("measured reliability needs m >= 1"));
    }
    Ok((2.0 * s.ones as f64 / s.m as f64 - 1.0).abs())
}

/// Mean of [`measured_reliability`] over all records.
pub fn puf_reliability(d: &Dataset) -> Result<f64> {
    if d.is_empty() {
        return Err(invalid("PUF reliability of an empty dataset"));
    }
    let mut total = 0.0;
    for r in &d.records {
        total += measured_reliability(r.summary())?;
    }
    Ok(total / d.len() as f64)
}

pub fn onehot_repr(s: CountSummary) -> ReliabilityVector {
    ReliabilityVector::indicator(ReprKind::OneHot, s.m + 1, s.ones)
}

/// Crossed one-hot class index `response * (m + 1) + ones` in `[0, 2(m+1))`.
pub fn msa_label(response: u8, s: CountSummary) -> usize {
    response as usize * (s.m + 1) + s.ones
}

/// Size of the crossed label space.
pub fn msa_classes(m: usize) -> usize {
    2 * (m + 1)
}

/// Bucketed one-hot of the 1-count: bucket `i < k` holds counts in
/// `[i m / k, (i + 1) m / k)`, bucket `k` holds exactly `m`.
pub fn lossy_repr(s: CountSummary, k: usize) -> Result<ReliabilityVector> {
    if k == 0 || k > s.m {
        return Err(invalid(format!(
            "lossy representation needs 1 <= k <= m, got k={k}, m={}",
            s.m
        )));
    }
    if s.m % k != 0 {
        return Err(invalid(format!("k={k} does not divide m={}", s.m)));
    }
    let bucket = if s.ones == s.m { k } else { s.ones * k / s.m };
    Ok(ReliabilityVector::indicator(ReprKind::Lossy, k + 1, bucket))
}

/// Parameters of the LDHF representation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LdhfParams {
    pub m: usize,
    pub k: usize,
}

impl LdhfParams {
    pub fn new(m: usize, k: usize) -> Result<Self> {
        if k == 0 {
            return Err(invalid("LDHF needs k >= 1"));
        }
        if k > m {
            return Err(invalid(format!(
                "LDHF needs k <= m (k={k}, m={m}): no complete event"
            )));
        }
        Ok(Self { m, k })
    }

    /// Largest multiple of `k` not exceeding `m`.
    pub fn m_prime(&self) -> usize {
        self.k * (self.m / self.k)
    }

    pub fn events(&self) -> usize {
        self.m / self.k
    }
}

/// Splits the first `m'` responses into consecutive events of `k` and returns
/// the frequency of each per-event 1-count `0..=k`. Later responses are ignored.
pub fn ldhf_from_responses(responses: &[u8], p: LdhfParams) -> Result<ReliabilityVector> {
    let p = LdhfParams::new(p.m, p.k)?;
    let m_prime = p.m_prime();
    if responses.len() < m_prime {
        return Err(invalid(format!(
            "LDHF needs {m_prime} responses, got {}",
            responses.len()
        )));
    }
    let mut counts = vec![0usize; p.k + 1];
    for event in responses[..m_prime].chunks_exact(p.k) {
        counts[event.iter().filter(|&&b| b == 1).count()] += 1;
    }
    let events = p.events() as f64;
    Ok(ReliabilityVector {
        kind: ReprKind::Ldhf,
        probs: counts.into_iter().map(|c| c as f64 / events).collect(),
    })
}

/// Measures `c` `p.m` times (each response majority-voted over `num_mv`
/// evaluations) and returns its LDHF vector.
pub fn ldhf_measure(
    model: &PufModel,
    c: &Challenge,
    p: LdhfParams,
    num_mv: usize,
    rng: &SimRng,
) -> Result<ReliabilityVector> {
    let p = LdhfParams::new(p.m, p.k)?;
    let cfg = MeasurementConfig::new(num_mv, p.m, 1)?;
    let meas = measure(model, c, &cfg, rng)?;
    ldhf_from_responses(&meas.responses, p)
}

/// Mean absolute difference of per-challenge measured reliability between
/// two measurements of the same challenge list.
pub fn mean_reliability_difference(a: &Dataset, b: &Dataset) -> Result<f64> {
    check_same_challenges(a, b)?;
    if a.is_empty() {
        return Err(invalid("mean reliability difference of empty datasets"));
    }
    let mut total = 0.0;
    for (ra, rb) in a.records.iter().zip(&b.records) {
        total += (measured_reliability(ra.summary())? - measured_reliability(rb.summary())?).abs();
    }
    Ok(total / a.len() as f64)
}
