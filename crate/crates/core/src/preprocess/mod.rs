//! Cloud filtering, monthly median compositing and spectral indices.

mod cache;
mod indices;

use std::collections::BTreeMap;

pub use cache::{read_composites, write_composites, COMPOSITE_HEADER};
pub use indices::{
    compute_indices, compute_ndvi, IndexCoefficients, IndexDiagnostic, IndexedMonth,
    TasseledCap,
};

use crate::bands::BandId;
use crate::data::Observation;

pub const DEFAULT_CLOUD_THRESHOLD: f64 = 65.0;

/// Drops S2 observations whose cloud probability is strictly above
/// `threshold` percent. Every other row passes through.
pub fn cloud_filter(observations: &[Observation], threshold: f64) -> Vec<Observation> {
    observations
        .iter()
        .filter(|o| !(o.band.is_raw_s2() && o.cloud_prob.is_some_and(|c| c > threshold)))
        .cloned()
        .collect()
}

/// Median with the mean-of-middles rule for even counts. `None` when empty.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BandComposite {
    pub value: f64,
    pub count: usize,
}

/// Median of one plot's observations in one month. Bands without
/// surviving observations are absent, never zero-filled.
#[derive(Debug, Clone, PartialEq)]
pub struct MonthlyComposite {
    pub plot_id: String,
    pub month: usize,
    pub bands: BTreeMap<BandId, BandComposite>,
}

impl MonthlyComposite {
    pub fn new(plot_id: impl Into<String>, month: usize) -> Self {
        Self {
            plot_id: plot_id.into(),
            month,
            bands: BTreeMap::new(),
        }
    }

    pub fn get(&self, band: BandId) -> Option<f64> {
        self.bands.get(&band).map(|c| c.value)
    }

    pub fn set(&mut self, band: BandId, value: f64, count: usize) {
        self.bands.insert(band, BandComposite { value, count });
    }
}

/// Groups observations by plot, month and band and takes the median.
/// Returns twelve composites per plot (plots sorted by id), possibly empty.
pub fn monthly_median(observations: &[Observation]) -> Vec<MonthlyComposite> {
    let mut buckets: BTreeMap<&str, BTreeMap<(usize, BandId), Vec<f64>>> = BTreeMap::new();
    for o in observations {
        buckets
            .entry(o.plot_id.as_str())
            .or_default()
            .entry((o.month_index(), o.band))
            .or_default()
            .push(o.value);
    }
    let mut out = Vec::with_capacity(buckets.len() * 12);
    for (plot, bands) in buckets {
        let mut months: Vec<MonthlyComposite> =
            (0..12).map(|m| MonthlyComposite::new(plot, m)).collect();
        for ((month, band), values) in bands {
            if let Some(v) = median(&values) {
                months[month].set(band, v, values.len());
            }
        }
        out.extend(months);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::NaiveDate;
    use proptest::prelude::*;

    fn obs(band: BandId, month: u32, value: f64, cloud: Option<f64>) -> Observation {
        Observation {
            plot_id: "P".into(),
            date: NaiveDate::from_ymd_opt(2020, month, 10).unwrap(),
            band,
            value,
            cloud_prob: cloud,
        }
    }

    #[test]
    fn cloud_threshold_is_strict_and_s2_only() {
        let rows = vec![
            obs(BandId::B4, 1, 100.0, Some(70.0)),
            obs(BandId::B4, 1, 100.0, Some(65.0)),
            obs(BandId::VV, 1, -12.0, Some(99.0)),
            obs(BandId::Temperature2m, 1, 280.0, None),
        ];
        let kept = cloud_filter(&rows, DEFAULT_CLOUD_THRESHOLD);
        assert_eq!(kept.len(), 3);
        assert_eq!(kept[0].cloud_prob, Some(65.0));
        assert_eq!(kept[1].band, BandId::VV);
    }

    #[test]
    fn median_conventions() {
        assert_eq!(median(&[0.2, 0.9, 0.4]), Some(0.4));
        assert_eq!(median(&[1.0, 3.0]), Some(2.0));
        assert_eq!(median(&[]), None);
    }

    #[test]
    fn empty_month_is_missing() {
        let rows = vec![
            obs(BandId::B4, 3, 0.2, Some(1.0)),
            obs(BandId::B4, 3, 0.9, Some(1.0)),
            obs(BandId::B4, 3, 0.4, Some(1.0)),
        ];
        let comps = monthly_median(&rows);
        assert_eq!(comps.len(), 12);
        assert_eq!(comps[2].get(BandId::B4), Some(0.4));
        assert_eq!(comps[2].bands[&BandId::B4].count, 3);
        assert_eq!(comps[3].get(BandId::B4), None);
        assert_eq!(comps[2].get(BandId::B8), None);
    }

    proptest! {
        #[test]
        fn median_is_permutation_invariant_and_bounded(
            mut v in prop::collection::vec(-1e6f64..1e6, 1..40),
            seed in any::<u64>(),
        ) {
            let m = median(&v).unwrap();
            let lo = v.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(lo <= m && m <= hi);
            use rand::seq::SliceRandom;
            v.shuffle(&mut crate::rng::rng_from(seed));
            prop_assert_eq!(median(&v).unwrap(), m);
        }

        #[test]
        fn raising_threshold_never_drops_more(
            clouds in prop::collection::vec(0f64..=100.0, 0..60),
            t1 in 0f64..=100.0,
            t2 in 0f64..=100.0,
        ) {
            let rows: Vec<_> = clouds.iter().map(|&c| obs(BandId::B8, 6, 1.0, Some(c))).collect();
            let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
            prop_assert!(cloud_filter(&rows, lo).len() <= cloud_filter(&rows, hi).len());
        }
    }
}
