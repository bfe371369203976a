//! Challenge generation, majority voting, repeated measurement and CRP files.

mod dataset;
mod lcg;
mod measure;

pub use dataset::{
    challenge_start, check_same_challenges, generate_dataset, generate_dataset_with_stats,
    noise_stream, read_dataset, write_dataset, Dataset, DatasetHeader, GenerationStats, LcgHeader,
    DATASET_FORMAT_VERSION,
};
pub use lcg::{lcg_challenges, LcgParams, LcgState};
pub use measure::{
    bit_error_estimate, bit_error_rate, bit_error_rate_on, bit_errors_per_challenge, majority_of,
    majority_vote, measure, measure_all, random_challenges, BerEstimate, BerReference,
    MeasurementConfig, RepeatedMeasurement, Vote, REFERENCE_VOTES,
};
