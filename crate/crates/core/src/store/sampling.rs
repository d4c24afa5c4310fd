use rand::seq::SliceRandom;

use super::manifest::Split;
use crate::error::{Error, Result};
use crate::stats::{derive_seed, rng_from_seed};

pub const SPLIT_FRACTIONS: [f64; 3] = [0.70, 0.15, 0.15];

/// Interior edges of `n_bins` equal-frequency bins (linear-interpolated quantiles).
pub fn quantile_edges(values: &[f64], n_bins: usize) -> Vec<f64> {
    if values.is_empty() || n_bins < 2 {
        return Vec::new();
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let last = (sorted.len() - 1) as f64;
    (1..n_bins)
        .map(|b| {
            let pos = last * b as f64 / n_bins as f64;
            let lo = pos.floor() as usize;
            let hi = pos.ceil() as usize;
            let t = pos - lo as f64;
            sorted[lo] + t * (sorted[hi] - sorted[lo])
        })
        .collect()
}

/// Bin index of each value; a value equal to an edge goes to the lower bin.
pub fn assign_bins(values: &[f64], edges: &[f64]) -> Vec<usize> {
    values
        .iter()
        .map(|&v| edges.iter().filter(|&&e| v > e).count())
        .collect()
}

fn members_by_bin(values: &[f64], n_bins: usize) -> Vec<Vec<usize>> {
    let bins = assign_bins(values, &quantile_edges(values, n_bins));
    let mut members = vec![Vec::new(); n_bins.max(1)];
    for (i, b) in bins.into_iter().enumerate() {
        members[b].push(i);
    }
    members
}

/// Splits `total` into integer parts proportional to `weights` (largest remainder;
/// ties go to the lower index). Every part is within 1 of its exact share.
pub(crate) fn largest_remainder(total: usize, weights: &[f64]) -> Vec<usize> {
    let sum: f64 = weights.iter().sum();
    if sum <= 0.0 {
        return vec![0; weights.len()];
    }
    let exact: Vec<f64> = weights.iter().map(|w| total as f64 * w / sum).collect();
    let mut parts: Vec<usize> = exact.iter().map(|x| x.floor() as usize).collect();
    let assigned: usize = parts.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = exact[a] - exact[a].floor();
        let fb = exact[b] - exact[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &i in order.iter().take(total.saturating_sub(assigned)) {
        parts[i] += 1;
    }
    parts
}

/// Draws `k` distinct indices, allocating them across `n_bins` equal-frequency
/// CI bins in proportion to bin size. Returned indices are ascending.
pub fn stratified_subsample(ci: &[f64], k: usize, n_bins: usize, seed: u64) -> Result<Vec<usize>> {
    if k > ci.len() {
        return Err(Error::invalid(format!(
            "cannot draw {k} samples from a population of {}",
            ci.len()
        )));
    }
    if n_bins == 0 {
        return Err(Error::invalid("n_bins must be at least 1"));
    }
    let members = members_by_bin(ci, n_bins);
    let sizes: Vec<f64> = members.iter().map(|m| m.len() as f64).collect();
    let quotas = largest_remainder(k, &sizes);
    let mut picked = Vec::with_capacity(k);
    for (b, (mut bin, quota)) in members.into_iter().zip(quotas).enumerate() {
        bin.shuffle(&mut rng_from_seed(derive_seed(seed, b as u64)));
        picked.extend_from_slice(&bin[..quota]);
    }
    picked.sort_unstable();
    Ok(picked)
}

/// Assigns a train/val/test tag to every sample, stratified by CI bin.
pub fn make_split(ci: &[f64], fractions: [f64; 3], n_bins: usize, seed: u64) -> Result<Vec<Split>> {
    if fractions.iter().any(|f| *f < 0.0) || (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::invalid(format!(
            "split fractions {fractions:?} must be nonnegative and sum to 1"
        )));
    }
    if n_bins == 0 {
        return Err(Error::invalid("n_bins must be at least 1"));
    }
    let mut tags = vec![Split::Train; ci.len()];
    // distinct stream from stratified_subsample under the same seed
    let split_seed = derive_seed(seed, u64::MAX);
    for (b, mut bin) in members_by_bin(ci, n_bins).into_iter().enumerate() {
        if !bin.is_empty() && bin.len() < 3 {
            log::warn!(
                "stratum {b} has only {} samples; split proportions are rounded",
                bin.len()
            );
        }
        let counts = largest_remainder(bin.len(), &fractions);
        bin.shuffle(&mut rng_from_seed(derive_seed(split_seed, b as u64)));
        let mut rest = bin.as_slice();
        for (split, count) in Split::ALL.into_iter().zip(counts) {
            for &i in &rest[..count] {
                tags[i] = split;
            }
            rest = &rest[count..];
        }
    }
    Ok(tags)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::HashSet;

    fn count(tags: &[Split], s: Split) -> usize {
        tags.iter().filter(|&&t| t == s).count()
    }

    #[test]
    fn edges_interpolate() {
        let v: Vec<f64> = [0.1, 0.3, 0.5, 0.7, 0.9]
            .iter()
            .flat_map(|&x| std::iter::repeat_n(x, 5))
            .collect();
        let e = quantile_edges(&v, 5);
        assert_eq!(e.len(), 4);
        // position 4.8 between sorted[4] = 0.1 and sorted[5] = 0.3
        assert!((e[0] - 0.26).abs() < 1e-12);
        assert_eq!(assign_bins(&[0.1, 0.3, 0.9], &e), vec![0, 1, 4]);
    }

    #[test]
    fn edge_ties_go_low() {
        assert_eq!(assign_bins(&[0.5, 0.50001], &[0.5]), vec![0, 1]);
    }

    #[test]
    fn subsample_exhaustive() {
        let ci: Vec<f64> = (0..10).map(|i| i as f64 / 9.0).collect();
        let mut idx = stratified_subsample(&ci, 10, 5, 1).unwrap();
        idx.sort_unstable();
        assert_eq!(idx, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn subsample_one_per_group() {
        let groups = [0.1, 0.3, 0.5, 0.7, 0.9];
        let ci: Vec<f64> = groups.iter().flat_map(|&x| std::iter::repeat_n(x, 5)).collect();
        for seed in 0..20 {
            let idx = stratified_subsample(&ci, 5, 5, seed).unwrap();
            let values: HashSet<u64> = idx.iter().map(|&i| ci[i].to_bits()).collect();
            assert_eq!(values.len(), 5, "seed {seed}: {idx:?}");
        }
    }

    #[test]
    fn subsample_full_scale() {
        let ci: Vec<f64> = (0..20000).map(|i| ((i * 7919) % 20000) as f64 / 20000.0).collect();
        let idx = stratified_subsample(&ci, 4000, 5, 42).unwrap();
        assert_eq!(idx.len(), 4000);
        assert_eq!(idx.iter().collect::<HashSet<_>>().len(), 4000);
        let bins = assign_bins(&ci, &quantile_edges(&ci, 5));
        for b in 0..5 {
            assert_eq!(idx.iter().filter(|&&i| bins[i] == b).count(), 800);
        }
    }

    #[test]
    fn subsample_too_large() {
        assert!(stratified_subsample(&[0.1, 0.2], 3, 1, 0).is_err());
    }

    #[test]
    fn split_divisible() {
        let ci: Vec<f64> = (0..100).map(|i| i as f64 / 99.0).collect();
        let tags = make_split(&ci, SPLIT_FRACTIONS, 5, 11).unwrap();
        assert_eq!(
            (count(&tags, Split::Train), count(&tags, Split::Val), count(&tags, Split::Test)),
            (70, 15, 15)
        );
        let bins = assign_bins(&ci, &quantile_edges(&ci, 5));
        for b in 0..5 {
            let in_bin: Vec<Split> = tags.iter().zip(&bins).filter(|(_, &x)| x == b).map(|(t, _)| *t).collect();
            assert_eq!(count(&in_bin, Split::Train), 14);
            assert_eq!(count(&in_bin, Split::Val), 3);
            assert_eq!(count(&in_bin, Split::Test), 3);
        }
    }

    #[test]
    fn split_full_scale() {
        let ci: Vec<f64> = (0..4000).map(|i| ((i * 37) % 4000) as f64 / 4000.0).collect();
        let tags = make_split(&ci, SPLIT_FRACTIONS, 5, 0).unwrap();
        assert_eq!(count(&tags, Split::Train), 2800);
        assert_eq!(count(&tags, Split::Val), 600);
        assert_eq!(count(&tags, Split::Test), 600);
    }

    #[test]
    fn split_rejects_bad_fractions() {
        assert!(make_split(&[0.1, 0.2], [0.5, 0.5, 0.5], 1, 0).is_err());
    }

    #[test]
    fn tiny_strata_still_split() {
        let tags = make_split(&[0.1, 0.9], SPLIT_FRACTIONS, 2, 0).unwrap();
        assert_eq!(tags, vec![Split::Train, Split::Train]);
    }

    proptest! {
        #[test]
        fn split_is_stratified_and_deterministic(
            ci in prop::collection::vec(0.0f64..1.0, 10..300),
            n_bins in 1usize..7,
            seed in any::<u64>(),
        ) {
            let tags = make_split(&ci, SPLIT_FRACTIONS, n_bins, seed).unwrap();
            prop_assert_eq!(&tags, &make_split(&ci, SPLIT_FRACTIONS, n_bins, seed).unwrap());
            let bins = assign_bins(&ci, &quantile_edges(&ci, n_bins));
            for b in 0..n_bins {
                let in_bin: Vec<Split> = tags.iter().zip(&bins).filter(|(_, &x)| x == b).map(|(t, _)| *t).collect();
                if in_bin.is_empty() { continue; }
                let size = in_bin.len() as f64;
                for (s, f) in Split::ALL.into_iter().zip(SPLIT_FRACTIONS) {
                    let frac = count(&in_bin, s) as f64 / size;
                    prop_assert!((frac - f).abs() <= 1.0 / size + 1e-12);
                }
            }
        }

        #[test]
        fn subsample_counts_proportional(
            ci in prop::collection::vec(0.0f64..1.0, 20..300),
            frac in 0.0f64..1.0,
            seed in any::<u64>(),
        ) {
            let k = (ci.len() as f64 * frac) as usize;
            let idx = stratified_subsample(&ci, k, 5, seed).unwrap();
            prop_assert_eq!(idx.len(), k);
            prop_assert_eq!(idx.iter().collect::<HashSet<_>>().len(), k);
            prop_assert_eq!(&idx, &stratified_subsample(&ci, k, 5, seed).unwrap());
            let bins = assign_bins(&ci, &quantile_edges(&ci, 5));
            for b in 0..5 {
                let size = bins.iter().filter(|&&x| x == b).count() as f64;
                let got = idx.iter().filter(|&&i| bins[i] == b).count() as f64;
                prop_assert!((got - size * k as f64 / ci.len() as f64).abs() < 1.0 + 1e-9);
            }
        }
    }
}
