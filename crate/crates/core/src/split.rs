//! Class-stratified index partitions.

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::rng::{rng_for, Rng};

/// `round(x)` with halves going up. The epsilon absorbs representation
/// error such as `0.7 * 5 = 3.4999999999999996`.
pub fn round_half_up(x: f64) -> usize {
    (x + 0.5 + 1e-9).floor().max(0.0) as usize
}

fn by_class(labels: &[usize]) -> Vec<Vec<usize>> {
    let k = labels.iter().max().map_or(0, |m| m + 1);
    let mut out = vec![Vec::new(); k];
    for (i, &l) in labels.iter().enumerate() {
        out[l].push(i);
    }
    out
}

/// Per class, the first `count(n_c)` indices of a shuffled copy go to the
/// first part. Both parts are returned sorted.
fn partition(labels: &[usize], rng: &mut Rng, count: impl Fn(usize) -> usize) -> (Vec<usize>, Vec<usize>) {
    let mut first = Vec::new();
    let mut second = Vec::new();
    for mut members in by_class(labels) {
        members.shuffle(rng);
        let k = count(members.len()).min(members.len());
        first.extend_from_slice(&members[..k]);
        second.extend_from_slice(&members[k..]);
    }
    first.sort_unstable();
    second.sort_unstable();
    (first, second)
}

/// Train/test split with `round_half_up(train_fraction · n_c)` training
/// samples per class.
pub fn stratified_split(labels: &[usize], train_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::invalid(format!("train fraction {train_fraction} outside (0, 1)")));
    }
    for (class, members) in by_class(labels).iter().enumerate() {
        if !members.is_empty() && members.len() < 2 {
            return Err(Error::TooFewSamples {
                class,
                count: members.len(),
            });
        }
    }
    let mut rng = rng_for(seed, "split", 0);
    Ok(partition(labels, &mut rng, |n| round_half_up(train_fraction * n as f64)))
}

/// Carves a validation set of `round_half_up(fraction · n_c)` per class out
/// of training positions, always leaving at least one sample per class to
/// fit on. Returns (fit, validation) positions into `labels`.
pub fn carve_validation(labels: &[usize], fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut rng = rng_for(seed, "validation", 0);
    let (val, fit) = partition(labels, &mut rng, |n| {
        round_half_up(fraction * n as f64).min(n.saturating_sub(1))
    });
    (fit, val)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn half_up_rounding() {
        assert_eq!(round_half_up(0.7 * 10.0), 7);
        assert_eq!(round_half_up(0.7 * 513.0), 359);
        assert_eq!(round_half_up(0.7 * 89.0), 62);
        assert_eq!(round_half_up(0.7 * 5.0), 4);
        assert_eq!(round_half_up(2.5), 3);
        assert_eq!(round_half_up(0.15 * 10.0), 2);
    }

    #[test]
    fn table_counts_split() {
        let labels: Vec<usize> = std::iter::repeat(0).take(513).chain(std::iter::repeat(1).take(89)).collect();
        let (train, test) = stratified_split(&labels, 0.7, 1).unwrap();
        let count = |idx: &[usize], c| idx.iter().filter(|&&i| labels[i] == c).count();
        assert_eq!((count(&train, 0), count(&test, 0)), (359, 154));
        assert_eq!((count(&train, 1), count(&test, 1)), (62, 27));
    }

    #[test]
    fn singleton_class_is_rejected() {
        assert!(matches!(
            stratified_split(&[0, 0, 1], 0.7, 1),
            Err(Error::TooFewSamples { class: 1, count: 1 })
        ));
    }

    #[test]
    fn validation_keeps_a_fit_sample() {
        let (fit, val) = carve_validation(&[0, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1], 0.15, 3);
        assert!(fit.contains(&0));
        assert_eq!(val.len(), 2);
    }

    proptest! {
        #[test]
        fn split_is_a_partition(labels in prop::collection::vec(0usize..4, 8..120), seed in any::<u64>()) {
            let mut counts = [0usize; 4];
            labels.iter().for_each(|&l| counts[l] += 1);
            prop_assume!(counts.iter().all(|&c| c == 0 || c >= 2));
            let (train, test) = stratified_split(&labels, 0.7, seed).unwrap();
            let mut all: Vec<usize> = train.iter().chain(&test).copied().collect();
            all.sort_unstable();
            prop_assert_eq!(all, (0..labels.len()).collect::<Vec<_>>());
            for c in 0..4 {
                let n_train = train.iter().filter(|&&i| labels[i] == c).count() as f64;
                prop_assert!((n_train - 0.7 * counts[c] as f64).abs() <= 1.0);
            }
        }
    }
}
