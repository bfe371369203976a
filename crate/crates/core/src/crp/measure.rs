use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::puf::{Challenge, Prepared, PufModel};
use crate::reliability::CountSummary;
use crate::rng::SimRng;

/// How each challenge is measured.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MeasurementConfig {
    /// Noisy evaluations combined by majority vote into one response.
    pub num_mv: usize,
    /// Times each challenge is applied.
    pub m_repeats: usize,
    pub n_challenges: usize,
}

impl MeasurementConfig {
    pub fn new(num_mv: usize, m_repeats: usize, n_challenges: usize) -> Result<Self> {
        let cfg = Self {
            num_mv,
            m_repeats,
            n_challenges,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_mv == 0 {
            return Err(invalid("num_mv must be >= 1"));
        }
        if self.m_repeats == 0 {
            return Err(invalid("m_repeats must be >= 1"));
        }
        if self.n_challenges == 0 {
            return Err(invalid("n_challenges must be >= 1"));
        }
        Ok(())
    }
}

/// One challenge and the `m` (majority-voted) responses it produced.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RepeatedMeasurement {
    pub challenge: Challenge,
    pub responses: Vec<u8>,
}

impl RepeatedMeasurement {
    pub fn ones(&self) -> usize {
        self.responses.iter().filter(|&&b| b == 1).count()
    }

    pub fn summary(&self) -> CountSummary {
        CountSummary {
            ones: self.ones(),
            m: self.responses.len(),
        }
    }

    /// Most frequent response; ties resolve to 0.
    pub fn majority(&self) -> u8 {
        (2 * self.ones() > self.responses.len()) as u8
    }
}

/// Outcome of one majority vote.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Vote {
    pub bit: u8,
    pub tie: bool,
}

/// Majority of a bit slice; exact ties return 0.
pub fn majority_of(bits: &[u8]) -> Vote {
    let ones = bits.iter().filter(|&&b| b == 1).count();
    Vote {
        bit: (2 * ones > bits.len()) as u8,
        tie: 2 * ones == bits.len(),
    }
}

pub(crate) fn vote(prepared: &Prepared<'_>, num_mv: usize, rng: &mut SimRng) -> Vote {
    if num_mv == 1 {
        return Vote {
            bit: prepared.sample(rng),
            tie: false,
        };
    }
    let ones: usize = (0..num_mv).map(|_| prepared.sample(rng) as usize).sum();
    Vote {
        bit: (2 * ones > num_mv) as u8,
        tie: 2 * ones == num_mv,
    }
}

pub fn majority_vote(
    model: &PufModel,
    c: &Challenge,
    num_mv: usize,
    rng: &mut SimRng,
) -> Result<u8> {
    if num_mv == 0 {
        return Err(invalid("num_mv must be >= 1"));
    }
    Ok(vote(&model.prepare(c)?, num_mv, rng).bit)
}

/// Applies `c` `cfg.m_repeats` times; repeat `j` draws from `rng.substream(j)`.
pub fn measure(
    model: &PufModel,
    c: &Challenge,
    cfg: &MeasurementConfig,
    rng: &SimRng,
) -> Result<RepeatedMeasurement> {
    Ok(measure_counting_ties(model, c, cfg, rng)?.0)
}

pub(crate) fn measure_counting_ties(
    model: &PufModel,
    c: &Challenge,
    cfg: &MeasurementConfig,
    rng: &SimRng,
) -> Result<(RepeatedMeasurement, usize)> {
    cfg.validate()?;
    let prepared = model.prepare(c)?;
    let mut ties = 0;
    let responses = (0..cfg.m_repeats)
        .map(|j| {
            let v = vote(&prepared, cfg.num_mv, &mut rng.substream(j as u64));
            ties += v.tie as usize;
            v.bit
        })
        .collect();
    Ok((
        RepeatedMeasurement {
            challenge: c.clone(),
            responses,
        },
        ties,
    ))
}

/// Measures every challenge; record `i` uses `rng.substream(i)`, so the
/// result does not depend on the rayon pool size.
pub fn measure_all(
    model: &PufModel,
    challenges: &[Challenge],
    cfg: &MeasurementConfig,
    rng: &SimRng,
) -> Result<(Vec<RepeatedMeasurement>, usize)> {
    let out: Vec<(RepeatedMeasurement, usize)> = challenges
        .par_iter()
        .enumerate()
        .map(|(i, c)| measure_counting_ties(model, c, cfg, &rng.substream(i as u64)))
        .collect::<Result<_>>()?;
    let ties = out.iter().map(|(_, t)| t).sum();
    Ok((out.into_iter().map(|(r, _)| r).collect(), ties))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BerReference {
    /// The response of the same instance with its noise switched off.
    Noiseless,
    /// Majority of [`REFERENCE_VOTES`] single noisy evaluations.
    MajorityOfMany,
}

pub const REFERENCE_VOTES: usize = 1001;

/// Per-challenge fraction of MV-enhanced responses (`m_repeats` each) that
/// disagree with the reference response. Challenge `i` draws from
/// `rng.substream(i)`.
pub fn bit_errors_per_challenge(
    model: &PufModel,
    challenges: &[Challenge],
    num_mv: usize,
    m_repeats: usize,
    reference: BerReference,
    rng: &SimRng,
) -> Result<Vec<f64>> {
    if challenges.is_empty() {
        return Err(invalid("bit error rate needs at least one challenge"));
    }
    let cfg = MeasurementConfig::new(num_mv, m_repeats, challenges.len())?;
    let noiseless = model.noiseless();
    challenges
        .par_iter()
        .enumerate()
        .map(|(i, c)| -> Result<f64> {
            let record_rng = rng.substream(i as u64);
            let reference_bit = match reference {
                BerReference::Noiseless => {
                    noiseless.eval(c, &mut record_rng.substream(u64::MAX))?
                }
                BerReference::MajorityOfMany => {
                    let prepared = model.prepare(c)?;
                    vote(
                        &prepared,
                        REFERENCE_VOTES,
                        &mut record_rng.substream(u64::MAX),
                    )
                    .bit
                }
            };
            let (meas, _) = measure_counting_ties(model, c, &cfg, &record_rng)?;
            let errors = meas
                .responses
                .iter()
                .filter(|&&b| b != reference_bit)
                .count();
            Ok(errors as f64 / m_repeats as f64)
        })
        .collect()
}

/// Mean of [`bit_errors_per_challenge`].
pub fn bit_error_rate_on(
    model: &PufModel,
    challenges: &[Challenge],
    num_mv: usize,
    m_repeats: usize,
    reference: BerReference,
    rng: &SimRng,
) -> Result<f64> {
    Ok(BerEstimate::from_per_challenge(&bit_errors_per_challenge(
        model, challenges, num_mv, m_repeats, reference, rng,
    )?)
    .ber)
}

/// Bit error rate with the standard error of the mean over challenges.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BerEstimate {
    pub ber: f64,
    pub std_error: f64,
    pub challenges: usize,
}

impl BerEstimate {
    pub fn from_per_challenge(errors: &[f64]) -> Self {
        let n = errors.len() as f64;
        let ber = errors.iter().sum::<f64>() / n;
        let var = if errors.len() > 1 {
            errors.iter().map(|e| (e - ber).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        Self {
            ber,
            std_error: (var / n).sqrt(),
            challenges: errors.len(),
        }
    }
}

/// BER over `cfg.n_challenges` uniformly random challenges drawn from
/// `rng.substream(0)`; noise comes from `rng.substream(1)`.
pub fn bit_error_estimate(
    model: &PufModel,
    cfg: &MeasurementConfig,
    reference: BerReference,
    rng: &SimRng,
) -> Result<BerEstimate> {
    cfg.validate()?;
    let challenges = random_challenges(model.stages(), cfg.n_challenges, &mut rng.substream(0));
    let errors = bit_errors_per_challenge(
        model,
        &challenges,
        cfg.num_mv,
        cfg.m_repeats,
        reference,
        &rng.substream(1),
    )?;
    Ok(BerEstimate::from_per_challenge(&errors))
}

pub fn bit_error_rate(
    model: &PufModel,
    cfg: &MeasurementConfig,
    reference: BerReference,
    rng: &SimRng,
) -> Result<f64> {
    Ok(bit_error_estimate(model, cfg, reference, rng)?.ber)
}

pub fn random_challenges(n: usize, count: usize, rng: &mut SimRng) -> Vec<Challenge> {
    (0..count)
        .map(|_| Challenge::from_int(rng.bits128() & mask128(n), n))
        .collect()
}

fn mask128(n: usize) -> u128 {
    if n >= 128 {
        u128::MAX
    } else {
        (1u128 << n) - 1
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::puf::{ArbiterModel, PufDescriptor};

    fn zero_delta_arbiter(noise: f64) -> PufModel {
        PufModel::Arbiter(ArbiterModel::new(vec![1.0, -1.0], noise).unwrap())
    }

    #[test]
    fn majority_of_examples() {
        assert_eq!(majority_of(&[1, 1, 0, 1, 0]).bit, 1);
        assert_eq!(majority_of(&[1, 0]), Vote { bit: 0, tie: true });
        assert_eq!(majority_of(&[0, 0, 1]).bit, 0);
    }

    #[test]
    fn noiseless_majority_equals_deterministic_response() {
        let m = PufDescriptor::xor(32, 3, 0.0, 4).build().unwrap();
        let mut rng = SimRng::new(0);
        for c in random_challenges(32, 50, &mut SimRng::new(1)) {
            let truth = m.eval(&c, &mut rng).unwrap();
            for mv in [1, 2, 5, 20] {
                assert_eq!(majority_vote(&m, &c, mv, &mut rng).unwrap(), truth);
            }
        }
        assert!(majority_vote(&m, &Challenge::zeros(32), 0, &mut rng).is_err());
    }

    #[test]
    fn single_vote_is_plain_eval() {
        let m = PufDescriptor::arbiter(16, 0.5, 4).build().unwrap();
        let c = Challenge::from_int(0x1234, 16);
        let a = majority_vote(&m, &c, 1, &mut SimRng::new(77)).unwrap();
        let b = m.eval(&c, &mut SimRng::new(77)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn noiseless_measurement_is_constant() {
        let m = PufDescriptor::arbiter(16, 0.0, 4).build().unwrap();
        let cfg = MeasurementConfig::new(1, 4, 1).unwrap();
        let r = measure(&m, &Challenge::from_int(99, 16), &cfg, &SimRng::new(3)).unwrap();
        assert_eq!(r.responses.len(), 4);
        assert!(r.responses.iter().all(|&b| b == r.responses[0]));
    }

    #[test]
    fn coin_flip_challenge_counts_are_binomial() {
        let m = zero_delta_arbiter(0.05);
        let cfg = MeasurementConfig::new(1, 1000, 1).unwrap();
        let r = measure(&m, &Challenge::zeros(1), &cfg, &SimRng::new(8)).unwrap();
        assert!((430..=570).contains(&r.ones()), "ones = {}", r.ones());
    }

    #[test]
    fn even_votes_can_tie() {
        let m = zero_delta_arbiter(1.0);
        let cfg = MeasurementConfig::new(2, 400, 1).unwrap();
        let (_, ties) =
            measure_counting_ties(&m, &Challenge::zeros(1), &cfg, &SimRng::new(2)).unwrap();
        assert!(ties > 0);
    }

    #[test]
    fn ber_noiseless_is_zero() {
        let m = PufDescriptor::xor(32, 2, 0.0, 1).build().unwrap();
        let cfg = MeasurementConfig::new(5, 3, 200).unwrap();
        for r in [BerReference::Noiseless, BerReference::MajorityOfMany] {
            assert_eq!(bit_error_rate(&m, &cfg, r, &SimRng::new(3)).unwrap(), 0.0);
        }
    }

    #[test]
    fn ber_of_coin_flip_is_half() {
        let m = zero_delta_arbiter(0.3);
        let ber = bit_error_rate_on(
            &m,
            &[Challenge::zeros(1)],
            1,
            10_000,
            BerReference::Noiseless,
            &SimRng::new(5),
        )
        .unwrap();
        assert!((ber - 0.5).abs() < 0.02, "ber {ber}");
    }

    #[test]
    fn more_votes_lower_ber() {
        let m = PufDescriptor::xor(64, 4, 0.05, 10).build().unwrap();
        let at = |mv| {
            let cfg = MeasurementConfig::new(mv, 1, 10_000).unwrap();
            bit_error_rate(&m, &cfg, BerReference::Noiseless, &SimRng::new(6)).unwrap()
        };
        assert!(at(5) > at(50));
    }
}
