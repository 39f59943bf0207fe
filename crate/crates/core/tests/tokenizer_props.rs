mod common;

use common::roundtrip::{check_round_trip, quantizable_score};

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use symtune_core::midi::Score;
use symtune_core::tokenizer::{decode, encode, quantize, Vocab, VocabConfig};
use symtune_core::TokenSequence;

fn vocab() -> Vocab {
    Vocab::build(VocabConfig::default()).unwrap()
}

#[test]
fn round_trip_500_random_scores() {
    let v = vocab();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for i in 0..500 {
        let n = rng.random_range(0..60);
        let s = quantizable_score(&mut rng, n);
        check_round_trip(&s, &v).unwrap_or_else(|e| panic!("score {i}: {e}"));
    }
}

#[test]
fn decode_of_encode_equals_quantize() {
    let v = vocab();
    for s in common::seeded_scores(100, 40, 5) {
        let q = quantize(&s, &v);
        let back = decode(&encode(&s, &v), &v);
        let mut keys: Vec<_> = q.iter().map(|n| (n.onset_step * 60, n.pitch, n.duration_steps as u64 * 60)).collect();
        keys.dedup();
        let got: Vec<_> = back.notes.iter().map(|n| (n.onset, n.pitch, n.duration)).collect();
        assert_eq!(got.len(), keys.len());
        for k in &keys {
            assert!(got.contains(k), "{k:?} missing");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn encode_ignores_note_order(seed in any::<u64>()) {
        let v = vocab();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = common::random_score(&mut rng, 30);
        let mut shuffled = s.clone();
        shuffled.notes.reverse();
        let a = encode(&s, &v);
        prop_assert_eq!(&a, &encode(&s, &v));
        prop_assert_eq!(a, encode(&Score::from_parts(shuffled.ticks_per_quarter, shuffled.notes, shuffled.tempos, shuffled.time_signatures), &v));
    }

    #[test]
    fn decode_is_total_on_arbitrary_ids(ids in prop::collection::vec(0u32..300, 0..400)) {
        let v = vocab();
        let s = decode(&TokenSequence::from(ids), &v);
        prop_assert!(s.validate().is_ok());
        for n in &s.notes {
            prop_assert!(n.duration >= 1 && n.pitch <= 127 && (1..=127).contains(&n.velocity));
        }
    }

    #[test]
    fn quantizable_scores_round_trip(seed in any::<u64>()) {
        let v = vocab();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.random_range(0..40);
        let s = quantizable_score(&mut rng, n);
        prop_assert!(check_round_trip(&s, &v).is_ok());
    }
}

#[test]
fn decode_fuzz_1000_sequences() {
    let v = vocab();
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut violations = 0;
    for _ in 0..1000 {
        let len = rng.random_range(0..512);
        let ids: Vec<u32> = (0..len).map(|_| rng.random_range(0..v.len() as u32 + 8)).collect();
        let s = decode(&TokenSequence::from(ids), &v);
        if s.validate().is_err() || s.notes.iter().any(|n| n.duration < 1 || n.pitch > 127) {
            violations += 1;
        }
    }
    assert_eq!(violations, 0);
}
