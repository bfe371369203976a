use ldhf_core::reliability::{
    ldhf_from_responses, lossy_repr, measured_reliability, msa_label, onehot_repr, CountSummary,
    LdhfParams,
};
use proptest::prelude::*;

/// Bucket of `ones` by interval membership: bucket j covers
/// `[j m / k, (j+1) m / k)` in exact integer arithmetic, and ones = m is bucket k.
fn bucket_by_interval(ones: usize, m: usize, k: usize) -> usize {
    if ones == m {
        return k;
    }
    (0..k)
        .find(|&j| j * m <= ones * k && ones * k < (j + 1) * m)
        .expect("some interval holds ones")
}

#[test]
fn lossy_bucket_matches_interval_membership_exhaustively() {
    for m in 1..=60 {
        for k in (1..=m).filter(|k| m % k == 0) {
            for ones in 0..=m {
                let v = lossy_repr(CountSummary::new(ones, m).unwrap(), k).unwrap();
                assert_eq!(v.dim(), k + 1);
                assert_eq!(
                    v.argmax(),
                    bucket_by_interval(ones, m, k),
                    "m={m} k={k} ones={ones}"
                );
                assert_eq!(v.sum(), 1.0);
            }
        }
    }
}

#[test]
fn ldhf_with_k_equal_m_is_one_hot() {
    for m in 1..=10usize {
        for pattern in 0u32..(1 << m) {
            let responses: Vec<u8> = (0..m).map(|j| ((pattern >> j) & 1) as u8).collect();
            let ldhf = ldhf_from_responses(&responses, LdhfParams::new(m, m).unwrap()).unwrap();
            assert_eq!(ldhf.probs, onehot_repr(CountSummary::of(&responses)).probs);
        }
    }
}

#[test]
fn msa_labels_cover_all_crossed_classes_once() {
    for m in 1..=12 {
        let mut seen = vec![false; 2 * (m + 1)];
        for response in 0..=1u8 {
            for ones in 0..=m {
                let label = msa_label(response, CountSummary::new(ones, m).unwrap());
                assert!(!seen[label]);
                seen[label] = true;
            }
        }
        assert!(seen.iter().all(|&s| s));
    }
}

fn responses_strategy() -> impl Strategy<Value = Vec<u8>> {
    prop::collection::vec(0u8..=1, 1..200)
}

proptest! {
    #[test]
    fn reliability_is_symmetric(m in 1usize..500, frac in 0.0f64..=1.0) {
        let ones = ((m as f64) * frac).round() as usize;
        let a = measured_reliability(CountSummary::new(ones, m).unwrap()).unwrap();
        let b = measured_reliability(CountSummary::new(m - ones, m).unwrap()).unwrap();
        prop_assert!((a - b).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&a));
    }

    #[test]
    fn all_representations_sum_to_one(responses in responses_strategy(), k_pick in 1usize..200) {
        let s = CountSummary::of(&responses);
        let m = responses.len();
        prop_assert!((onehot_repr(s).sum() - 1.0).abs() <= 1e-9);
        let k = 1 + (k_pick - 1) % m;
        let ldhf = ldhf_from_responses(&responses, LdhfParams::new(m, k).unwrap()).unwrap();
        prop_assert_eq!(ldhf.dim(), k + 1);
        prop_assert!((ldhf.sum() - 1.0).abs() <= 1e-9);
        prop_assert!(ldhf.probs.iter().all(|&p| p >= 0.0));
        let divisors: Vec<usize> = (1..=m).filter(|d| m % d == 0).collect();
        let kd = divisors[k_pick % divisors.len()];
        prop_assert!((lossy_repr(s, kd).unwrap().sum() - 1.0).abs() <= 1e-9);
    }

    #[test]
    fn ldhf_is_invariant_to_order_within_events(responses in responses_strategy(), k in 1usize..20, seed in any::<u64>()) {
        let m = responses.len();
        prop_assume!(k <= m);
        let p = LdhfParams::new(m, k).unwrap();
        let base = ldhf_from_responses(&responses, p).unwrap();
        // Reverse each event and rotate events: counts per event are unchanged.
        let m_prime = p.m_prime();
        let mut events: Vec<Vec<u8>> = responses[..m_prime].chunks(k).map(|e| e.iter().rev().copied().collect()).collect();
        let shift = (seed as usize) % events.len();
        events.rotate_left(shift);
        let mut permuted: Vec<u8> = events.concat();
        permuted.extend_from_slice(&responses[m_prime..]);
        prop_assert_eq!(ldhf_from_responses(&permuted, p).unwrap(), base);
    }

    #[test]
    fn ldhf_is_symmetric_under_bit_flip(responses in responses_strategy(), k in 1usize..20) {
        let m = responses.len();
        prop_assume!(k <= m);
        let p = LdhfParams::new(m, k).unwrap();
        let a = ldhf_from_responses(&responses, p).unwrap();
        let flipped: Vec<u8> = responses.iter().map(|b| 1 - b).collect();
        let b = ldhf_from_responses(&flipped, p).unwrap();
        let reversed: Vec<f64> = b.probs.iter().rev().copied().collect();
        prop_assert_eq!(a.probs, reversed);
    }

    #[test]
    fn ldhf_ignores_trailing_partial_event(responses in responses_strategy(), k in 1usize..20, extra in prop::collection::vec(0u8..=1, 0..19)) {
        let m = responses.len();
        prop_assume!(k <= m);
        let p = LdhfParams::new(m, k).unwrap();
        let trimmed = &responses[..p.m_prime()];
        let extra: Vec<u8> = extra.into_iter().take(k - 1).collect();
        let mut longer = trimmed.to_vec();
        longer.extend(&extra);
        let q = LdhfParams::new(longer.len(), k).unwrap();
        prop_assert_eq!(
            ldhf_from_responses(trimmed, LdhfParams::new(trimmed.len(), k).unwrap()).unwrap(),
            ldhf_from_responses(&longer, q).unwrap()
        );
    }
}
