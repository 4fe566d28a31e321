use std::collections::BTreeMap;

use super::{EvalError, MetricReport};

/// 1..5 ratings for one report; `overall` averages the present ones.
#[derive(Debug, Clone, PartialEq)]
pub struct MosRating {
    pub utt_id: String,
    pub system_id: String,
    pub wer: Option<u8>,
    pub mcd: Option<u8>,
    pub pesq: Option<u8>,
    pub overall: Option<f64>,
}

impl MosRating {
    pub fn new(utt_id: String, system_id: String, wer: Option<u8>, mcd: Option<u8>, pesq: Option<u8>) -> Self {
        let present: Vec<f64> = [wer, mcd, pesq].into_iter().flatten().map(f64::from).collect();
        let overall = (!present.is_empty()).then(|| present.iter().sum::<f64>() / present.len() as f64);
        Self {
            utt_id,
            system_id,
            wer,
            mcd,
            pesq,
            overall,
        }
    }
}

/// Value at 1-based rank `ceil(k * n / 100)` of the ascending sort.
pub fn nearest_rank(sorted: &[f64], k: usize) -> f64 {
    let n = sorted.len();
    let rank = ((k * n).div_ceil(100)).max(1);
    sorted[rank - 1]
}

/// P20, P40, P60, P80 of a metric over the pool.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Thresholds(pub [f64; 4]);

impl Thresholds {
    pub fn from_values(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        Some(Self([20, 40, 60, 80].map(|k| nearest_rank(&v, k))))
    }

    /// 5 at or below P20, down to 1 above P80 (lower is better).
    pub fn rate(&self, value: f64) -> u8 {
        match self.0.iter().position(|&t| value <= t) {
            Some(i) => 5 - i as u8,
            None => 1,
        }
    }
}

/// Turns a pool of metric reports into ratings.
pub trait Rater {
    fn rate(&self, pool: &[MetricReport]) -> Result<Vec<MosRating>, EvalError>;
}

/// Percentile binning over the pool; PESQ is rated on its negation so that
/// higher scores earn higher ratings.
#[derive(Debug, Clone, Copy, Default)]
pub struct PercentileRater;

impl Rater for PercentileRater {
    fn rate(&self, pool: &[MetricReport]) -> Result<Vec<MosRating>, EvalError> {
        if pool.is_empty() {
            return Err(EvalError::EmptyPool);
        }
        let wer = Thresholds::from_values(&pool.iter().map(|r| r.wer).collect::<Vec<_>>());
        let mcd = Thresholds::from_values(&pool.iter().map(|r| r.mcd).collect::<Vec<_>>());
        let pesq = Thresholds::from_values(&pool.iter().filter_map(|r| r.pesq.map(|p| -p)).collect::<Vec<_>>());
        Ok(pool
            .iter()
            .map(|r| {
                MosRating::new(
                    r.utt_id.clone(),
                    r.system_id.clone(),
                    wer.map(|t| t.rate(r.wer)),
                    mcd.map(|t| t.rate(r.mcd)),
                    pesq.zip(r.pesq).map(|(t, p)| t.rate(-p)),
                )
            })
            .collect())
    }
}

/// Ratings supplied by an outside judge, keyed by `(system_id, utt_id)`
/// as `[wer, mcd, pesq]`.
#[derive(Debug, Clone, Default)]
pub struct ExternalRatings(pub BTreeMap<(String, String), [Option<u8>; 3]>);

impl Rater for ExternalRatings {
    fn rate(&self, pool: &[MetricReport]) -> Result<Vec<MosRating>, EvalError> {
        if pool.is_empty() {
            return Err(EvalError::EmptyPool);
        }
        pool.iter()
            .map(|r| {
                let key = (r.system_id.clone(), r.utt_id.clone());
                let [w, m, p] = *self.0.get(&key).ok_or_else(|| EvalError::MissingRating(format!("{}/{}", key.0, key.1)))?;
                if let Some(bad) = [w, m, p].into_iter().flatten().find(|v| !(1..=5).contains(v)) {
                    return Err(EvalError::MissingRating(format!("{}/{}: rating {bad} outside 1..5", key.0, key.1)));
                }
                Ok(MosRating::new(r.utt_id.clone(), r.system_id.clone(), w, m, p))
            })
            .collect()
    }
}

pub fn llm_mos(pool: &[MetricReport]) -> Result<Vec<MosRating>, EvalError> {
    PercentileRater.rate(pool)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn report(id: usize, wer: f64, mcd: f64, pesq: Option<f64>) -> MetricReport {
        MetricReport {
            utt_id: format!("u{id}"),
            system_id: "s".into(),
            wer,
            wer_p: wer,
            wer_t: wer,
            mcd,
            pesq,
        }
    }

    #[test]
    fn five_value_pool_rates_five_to_one() {
        let pool: Vec<_> = [0.1, 0.2, 0.3, 0.4, 0.5].iter().enumerate().map(|(i, &w)| report(i, w, 1.0, None)).collect();
        let r = llm_mos(&pool).unwrap();
        assert_eq!(r.iter().map(|m| m.wer.unwrap()).collect::<Vec<_>>(), vec![5, 4, 3, 2, 1]);
        assert!(r.iter().all(|m| m.pesq.is_none()));
    }

    #[test]
    fn identical_reports_all_rate_five() {
        let pool: Vec<_> = (0..6).map(|i| report(i, 0.3, 4.0, Some(2.0))).collect();
        for m in llm_mos(&pool).unwrap() {
            assert_eq!((m.wer, m.mcd, m.pesq, m.overall), (Some(5), Some(5), Some(5), Some(5.0)));
        }
    }

    #[test]
    fn overall_averages_present_ratings() {
        let m = MosRating::new("u".into(), "s".into(), Some(5), Some(3), None);
        assert_eq!(m.overall, Some(4.0));
        assert_eq!(MosRating::new("u".into(), "s".into(), None, None, None).overall, None);
    }

    #[test]
    fn higher_pesq_rates_higher() {
        let pool: Vec<_> = [1.0, 2.0, 3.0, 4.0, 4.5].iter().enumerate().map(|(i, &p)| report(i, 0.1, 1.0, Some(p))).collect();
        let r = llm_mos(&pool).unwrap();
        assert_eq!(r.iter().map(|m| m.pesq.unwrap()).collect::<Vec<_>>(), vec![1, 2, 3, 4, 5]);
    }

    #[test]
    fn empty_pool_and_external_adapter() {
        assert_eq!(llm_mos(&[]), Err(EvalError::EmptyPool));
        let pool = vec![report(0, 0.1, 1.0, None)];
        let mut ext = ExternalRatings::default();
        ext.0.insert(("s".into(), "u0".into()), [Some(4), Some(2), None]);
        assert_eq!(ext.rate(&pool).unwrap()[0].overall, Some(3.0));
        let missing = ExternalRatings::default();
        assert!(matches!(missing.rate(&pool), Err(EvalError::MissingRating(_))));
    }

    fn pool_strategy() -> impl Strategy<Value = Vec<MetricReport>> {
        proptest::collection::vec((0.0..2.0f64, 0.0..20.0f64, proptest::option::of(-0.5..4.5f64)), 1..12)
            .prop_map(|v| v.into_iter().enumerate().map(|(i, (w, m, p))| report(i, w, m, p)).collect())
    }

    proptest! {
        #[test]
        fn ratings_in_range_and_order_free(pool in pool_strategy(), rot in 0usize..12) {
            let r = llm_mos(&pool).unwrap();
            for m in &r {
                for v in [m.wer, m.mcd, m.pesq].into_iter().flatten() {
                    prop_assert!((1..=5).contains(&v));
                }
                if let Some(o) = m.overall {
                    prop_assert!((1.0..=5.0).contains(&o));
                }
            }
            let mut shuffled = pool.clone();
            shuffled.rotate_left(rot % pool.len());
            shuffled.reverse();
            let by_id: BTreeMap<_, _> = r.into_iter().map(|m| (m.utt_id.clone(), m)).collect();
            for m in llm_mos(&shuffled).unwrap() {
                prop_assert_eq!(&by_id[&m.utt_id], &m);
            }
        }

        #[test]
        fn better_values_never_rate_lower(pool in pool_strategy(), pick in 0usize..12, w in 0.0..2.0f64, p in -0.5..4.5f64) {
            let wt = Thresholds::from_values(&pool.iter().map(|r| r.wer).collect::<Vec<_>>()).unwrap();
            let x = pool[pick % pool.len()].wer;
            let lower = x.min(w);
            prop_assert!(wt.rate(lower) >= wt.rate(x));
            let pesqs: Vec<f64> = pool.iter().filter_map(|r| r.pesq.map(|v| -v)).collect();
            if let Some(pt) = Thresholds::from_values(&pesqs) {
                let base = -pesqs[pick % pesqs.len()];
                let higher = base.max(p);
                prop_assert!(pt.rate(-higher) >= pt.rate(-base));
            }
        }
    }
}
