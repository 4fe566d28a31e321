use proptest::prelude::*;
use tonal_tts::eval::{edit_distance, wer};
use tonal_tts::model::DurationSequence;
use tonal_tts::pinyin::{syllable_inventory, Frontend};
use tonal_tts::seed::sub_seed;
use tonal_tts::trainer::lr_at;

proptest! {
    #[test]
    fn edit_distance_is_a_metric(a in prop::collection::vec(0u8..4, 0..12),
                                 b in prop::collection::vec(0u8..4, 0..12),
                                 c in prop::collection::vec(0u8..4, 0..12)) {
        let d = |x: &[u8], y: &[u8]| edit_distance(x, y).total();
        prop_assert_eq!(d(&a, &a), 0);
        prop_assert_eq!(d(&a, &b), d(&b, &a));
        prop_assert!(d(&a, &c) <= d(&a, &b) + d(&b, &c));
        prop_assert!(d(&a, &b) >= a.len().abs_diff(b.len()));
    }

    #[test]
    fn wer_of_identical_sequences_is_zero(a in prop::collection::vec(0u8..9, 1..20)) {
        prop_assert_eq!(wer(&a, &a), 0.0);
    }

    #[test]
    fn uniform_durations_cover_every_frame(total in 0usize..500, tokens in 1usize..40) {
        let d = DurationSequence::uniform(total, tokens);
        prop_assert_eq!(d.len(), tokens);
        prop_assert_eq!(d.total(), total);
        let (lo, hi) = (d.frames().iter().min().unwrap(), d.frames().iter().max().unwrap());
        prop_assert!(hi - lo <= 1);
    }

    #[test]
    fn learning_rate_is_positive_and_peaks_at_warmup(step in 1u64..20000, warmup in 1usize..5000) {
        let lr = lr_at(step, 128, warmup);
        prop_assert!(lr > 0.0);
        prop_assert!(lr <= lr_at(warmup as u64, 128, warmup) * (1.0 + 1e-12));
    }

    #[test]
    fn every_syllable_tokenizes_under_every_tone(idx in 0usize..400, tone in 1u8..=5) {
        let inv = syllable_inventory();
        let base = &inv[idx % inv.len()];
        let s = format!("{}{tone}", base.trim_end_matches(char::is_numeric));
        let t = Frontend::default().tokens(&s).unwrap();
        prop_assert_eq!(t.phonemes.len(), t.tones.len());
        prop_assert!(!t.is_empty());
    }

    #[test]
    fn sub_seeds_separate_names(root in any::<u64>()) {
        let names = ["init", "dropout", "batches", "griffin_lim"];
        let seeds: std::collections::BTreeSet<u64> = names.iter().map(|n| sub_seed(root, n)).collect();
        prop_assert_eq!(seeds.len(), names.len());
        prop_assert_eq!(sub_seed(root, "init"), sub_seed(root, "init"));
    }
}
