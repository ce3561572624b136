//! Overlapping set partitioning.
//!
//! A candidate set `i_1..i_n` is split into the `n - k + 1` contiguous windows
//! `S_j = (i_j, ..., i_{j+k-1})`, so neighbouring windows share `k - 1` items
//! and every adjacent pair of the candidate order is seen together at least
//! once.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::domain::{CandidateSet, ItemId, Subset};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartitionConfig {
    window_size: usize,
}

impl PartitionConfig {
    pub fn new(window_size: usize) -> Result<Self> {
        if window_size < 2 {
            return Err(Error::invalid("partition config", format!("window size must be >= 2, got {window_size}")));
        }
        Ok(Self { window_size })
    }

    pub fn window_size(&self) -> usize {
        self.window_size
    }
}

impl Default for PartitionConfig {
    fn default() -> Self {
        Self { window_size: 2 }
    }
}

/// Contiguous windows of `config.window_size` items, ordered by 1-based
/// window index.
pub fn partition(set: &CandidateSet, config: &PartitionConfig) -> Result<Vec<Subset>> {
    let k = config.window_size;
    let n = set.len();
    if k > n {
        return Err(Error::WindowExceedsSet { window: k, set_size: n });
    }
    Ok(set
        .items()
        .windows(k)
        .enumerate()
        .map(|(offset, window)| Subset { window_index: offset + 1, items: window.to_vec() })
        .collect())
}

/// One single-item subset per candidate, for point-wise assessment.
pub fn pointwise_subsets(set: &CandidateSet) -> Vec<Subset> {
    set.items()
        .iter()
        .enumerate()
        .map(|(offset, item)| Subset { window_index: offset + 1, items: vec![item.clone()] })
        .collect()
}

/// Window indices each item appears in, ascending.
pub fn memberships(subsets: &[Subset]) -> BTreeMap<ItemId, Vec<usize>> {
    let mut map: BTreeMap<ItemId, Vec<usize>> = BTreeMap::new();
    for subset in subsets {
        for item in &subset.items {
            map.entry(item.clone()).or_default().push(subset.window_index);
        }
    }
    for windows in map.values_mut() {
        windows.sort_unstable();
    }
    map
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::Label;
    use proptest::prelude::*;

    fn set_of(names: &[String]) -> CandidateSet {
        let items: Vec<ItemId> = names.iter().map(|n| ItemId::new(n.clone()).unwrap()).collect();
        let labels = items.iter().map(|i| (i.clone(), Label::Negative)).collect();
        CandidateSet::new(items, labels).unwrap()
    }

    fn names(range: std::ops::RangeInclusive<usize>) -> Vec<String> {
        range.map(|i| i.to_string()).collect()
    }

    fn window_strings(subsets: &[Subset]) -> Vec<Vec<&str>> {
        subsets.iter().map(|s| s.items.iter().map(ItemId::as_str).collect()).collect()
    }

    /// Independent enumeration: every start position whose window fits.
    #[allow(clippy::needless_range_loop)]
    fn brute_force(items: &[String], k: usize) -> Vec<Vec<String>> {
        let mut out = Vec::new();
        let mut start = 0;
        while start + k <= items.len() {
            let mut window = Vec::new();
            for pos in start..start + k {
                window.push(items[pos].clone());
            }
            out.push(window);
            start += 1;
        }
        out
    }

    #[test]
    fn six_items_make_five_pairs() {
        let subsets = partition(&set_of(&names(1..=6)), &PartitionConfig::default()).unwrap();
        assert_eq!(
            window_strings(&subsets),
            vec![vec!["1", "2"], vec!["2", "3"], vec!["3", "4"], vec!["4", "5"], vec!["5", "6"]]
        );
        let indices: Vec<usize> = subsets.iter().map(|s| s.window_index).collect();
        assert_eq!(indices, vec![1, 2, 3, 4, 5]);
    }

    #[test]
    fn window_equal_to_set_is_whole_set() {
        let set = set_of(&names(1..=4));
        let subsets = partition(&set, &PartitionConfig::new(4).unwrap()).unwrap();
        assert_eq!(subsets.len(), 1);
        assert_eq!(subsets[0].items, set.items());
    }

    #[test]
    fn triples_over_five_items() {
        let letters: Vec<String> = ["a", "b", "c", "d", "e"].iter().map(|s| s.to_string()).collect();
        let subsets = partition(&set_of(&letters), &PartitionConfig::new(3).unwrap()).unwrap();
        let expected = brute_force(&letters, 3);
        assert_eq!(expected.len(), 3);
        let got: Vec<Vec<String>> = subsets.iter().map(|s| s.items.iter().map(|i| i.to_string()).collect()).collect();
        assert_eq!(got, expected);
    }

    #[test]
    fn oversized_and_undersized_windows_rejected() {
        let err = partition(&set_of(&names(1..=3)), &PartitionConfig::new(4).unwrap()).unwrap_err();
        assert!(err.to_string().starts_with("window exceeds set size"));
        assert!(PartitionConfig::new(1).is_err());
        assert!(PartitionConfig::new(0).is_err());
    }

    #[test]
    fn membership_counts() {
        let subsets = partition(&set_of(&names(1..=6)), &PartitionConfig::default()).unwrap();
        let m = memberships(&subsets);
        assert_eq!(m[&ItemId::new("1").unwrap()], vec![1]);
        assert_eq!(m[&ItemId::new("3").unwrap()], vec![2, 3]);
        assert_eq!(m[&ItemId::new("6").unwrap()], vec![5]);

        let whole = partition(&set_of(&names(1..=5)), &PartitionConfig::new(5).unwrap()).unwrap();
        assert!(memberships(&whole).values().all(|w| w.len() == 1));

        // n=7, k=3: count covering windows by enumeration.
        let subsets = partition(&set_of(&names(1..=7)), &PartitionConfig::new(3).unwrap()).unwrap();
        let m = memberships(&subsets);
        for pos in 1..=7usize {
            let covering = (1..=5usize).filter(|&j| j <= pos && pos < j + 3).count();
            assert_eq!(m[&ItemId::new(pos.to_string()).unwrap()].len(), covering, "pos {pos}");
        }
        assert_eq!(m[&ItemId::new("4").unwrap()].len(), 3);
    }

    #[test]
    fn pointwise_has_singletons() {
        let subsets = pointwise_subsets(&set_of(&names(1..=4)));
        assert_eq!(subsets.len(), 4);
        assert!(subsets.iter().all(|s| s.items.len() == 1));
    }

    proptest! {
        #[test]
        fn matches_enumeration((n, k) in (2usize..=64).prop_flat_map(|n| (Just(n), 2..=n))) {
            let items = names(1..=n);
            let subsets = partition(&set_of(&items), &PartitionConfig::new(k).unwrap()).unwrap();
            prop_assert_eq!(subsets.len(), n - k + 1);
            let got: Vec<Vec<String>> = subsets
                .iter()
                .map(|s| s.items.iter().map(|i| i.to_string()).collect())
                .collect();
            prop_assert_eq!(got, brute_force(&items, k));

            let m = memberships(&subsets);
            prop_assert_eq!(m.len(), n);
        }

        #[test]
        fn pairs_preserve_adjacency(n in 2usize..=40) {
            let items = names(1..=n);
            let subsets = partition(&set_of(&items), &PartitionConfig::default()).unwrap();
            for pair in items.windows(2) {
                let hits = subsets
                    .iter()
                    .filter(|s| s.items[0].as_str() == pair[0] && s.items[1].as_str() == pair[1])
                    .count();
                prop_assert_eq!(hits, 1);
            }
        }
    }
}
