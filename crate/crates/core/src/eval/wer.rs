use super::{EvalError, Side};
use crate::pinyin::g2p;

/// Substitution, deletion and insertion counts of a minimal alignment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct EditCounts {
    pub substitutions: usize,
    pub deletions: usize,
    pub insertions: usize,
}

impl EditCounts {
    pub fn total(&self) -> usize {
        self.substitutions + self.deletions + self.insertions
    }
}

/// Unit-cost Levenshtein alignment of `hyp` against `reference`.
pub fn edit_distance<T: PartialEq>(reference: &[T], hyp: &[T]) -> EditCounts {
    let (n, m) = (reference.len(), hyp.len());
    // each cell holds the best (total, counts) for the prefixes
    let mut prev: Vec<EditCounts> = (0..=m)
        .map(|j| EditCounts {
            insertions: j,
            ..Default::default()
        })
        .collect();
    let mut cur = prev.clone();
    for i in 1..=n {
        cur[0] = EditCounts {
            deletions: i,
            ..Default::default()
        };
        for j in 1..=m {
            let diag = {
                let mut c = prev[j - 1];
                if reference[i - 1] != hyp[j - 1] {
                    c.substitutions += 1;
                }
                c
            };
            let del = EditCounts {
                deletions: prev[j].deletions + 1,
                ..prev[j]
            };
            let ins = EditCounts {
                insertions: cur[j - 1].insertions + 1,
                ..cur[j - 1]
            };
            cur[j] = [diag, del, ins].into_iter().min_by_key(EditCounts::total).unwrap();
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[m]
}

/// `(S + D + I) / len(ref)`; an empty reference scores `len(hyp)`.
pub fn wer<T: PartialEq>(reference: &[T], hyp: &[T]) -> f64 {
    let e = edit_distance(reference, hyp).total() as f64;
    if reference.is_empty() {
        e
    } else {
        e / reference.len() as f64
    }
}

/// Error rates over syllables, phonemes and tones.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WerLevels {
    pub wer: f64,
    pub wer_p: f64,
    pub wer_t: f64,
}

/// Runs G2P on both sentences and scores the syllable, phoneme and tone
/// streams separately.
pub fn wer_levels(reference: &str, hyp: &str) -> Result<WerLevels, EvalError> {
    let r = g2p(reference).map_err(|source| EvalError::G2p {
        side: Side::Reference,
        source,
    })?;
    let h = g2p(hyp).map_err(|source| EvalError::G2p {
        side: Side::Hypothesis,
        source,
    })?;
    Ok(WerLevels {
        wer: wer(&r.syllable_strings(), &h.syllable_strings()),
        wer_p: wer(&r.phonemes, &h.phonemes),
        wer_t: wer(&r.tones, &h.tones),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Plain distance-only DP, written independently of the counting DP.
    fn levenshtein(a: &[u8], b: &[u8]) -> usize {
        let mut d = vec![vec![0usize; b.len() + 1]; a.len() + 1];
        for (i, row) in d.iter_mut().enumerate() {
            row[0] = i;
        }
        for j in 0..=b.len() {
            d[0][j] = j;
        }
        for i in 1..=a.len() {
            for j in 1..=b.len() {
                let sub = d[i - 1][j - 1] + usize::from(a[i - 1] != b[j - 1]);
                d[i][j] = sub.min(d[i - 1][j] + 1).min(d[i][j - 1] + 1);
            }
        }
        d[a.len()][b.len()]
    }

    #[test]
    fn small_cases() {
        let x = ["n", "i"];
        assert_eq!(edit_distance(&x, &x), EditCounts::default());
        let c = edit_distance(&["n", "i", "h", "ao"], &["n", "i", "h"]);
        assert_eq!((c.substitutions, c.deletions, c.insertions), (0, 1, 0));
        let c = edit_distance::<&str>(&[], &["a", "b", "c"]);
        assert_eq!((c.substitutions, c.deletions, c.insertions), (0, 0, 3));
        assert_eq!(wer::<&str>(&[], &["a", "b"]), 2.0);
        assert_eq!(wer::<&str>(&[], &[]), 0.0);
    }

    #[test]
    fn tone_and_phoneme_split() {
        let l = wer_levels("ni3 hao3", "ni3 hao3").unwrap();
        assert_eq!((l.wer, l.wer_p, l.wer_t), (0.0, 0.0, 0.0));
        let l = wer_levels("ni3 hao3", "ni3 hao4").unwrap();
        assert_eq!((l.wer, l.wer_p, l.wer_t), (0.5, 0.0, 0.25));
        let l = wer_levels("ni3 hao3", "ni3").unwrap();
        assert_eq!((l.wer_p, l.wer_t), (0.5, 0.5));
    }

    #[test]
    fn g2p_failures_name_the_side() {
        assert!(matches!(
            wer_levels("ni3", "xyz9"),
            Err(EvalError::G2p {
                side: Side::Hypothesis,
                ..
            })
        ));
        assert!(matches!(
            wer_levels("qq1", "ni3"),
            Err(EvalError::G2p {
                side: Side::Reference,
                ..
            })
        ));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn counts_match_independent_levenshtein(
            a in proptest::collection::vec(0u8..4, 0..8),
            b in proptest::collection::vec(0u8..4, 0..8),
        ) {
            let c = edit_distance(&a, &b);
            prop_assert_eq!(c.total(), levenshtein(&a, &b));
            prop_assert!(c.deletions + c.substitutions <= a.len());
            prop_assert!(c.insertions + c.substitutions <= b.len());
            prop_assert_eq!(a.len() - c.deletions + c.insertions, b.len());
            prop_assert!(wer(&a, &b) >= 0.0);
            prop_assert_eq!(wer(&a, &a), 0.0);
        }
    }
}
