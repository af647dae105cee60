//! The configuration lattice: sample configurations of a fixed number of
//! allele types, enumerated and ranked densely per total size.
//!
//! Configurations of one size are ordered descending-lexicographically on
//! their counts, so `(m, 0, ..., 0)` has rank 0 and `(0, ..., 0, m)` comes
//! last. The ordering is arbitrary but frozen: CSV outputs expose ranks.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::model::AlleleSet;

/// A sample configuration: per-allele counts with a cached total.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SampleConfig {
    counts: Vec<u32>,
    total: u32,
}

impl SampleConfig {
    pub fn new(counts: Vec<u32>) -> Result<Self> {
        if counts.is_empty() || counts.len() > crate::model::MAX_ALLELES {
            return Err(Error::Domain(format!(
                "configuration length must be 1..={}, got {}",
                crate::model::MAX_ALLELES,
                counts.len()
            )));
        }
        let total = counts
            .iter()
            .try_fold(0u32, |acc, &c| acc.checked_add(c))
            .ok_or_else(|| Error::Domain("configuration total overflows u32".into()))?;
        Ok(Self { counts, total })
    }

    /// Unit configuration `e_i` (zero-based `i`) on `k` alleles.
    pub fn unit(k: usize, i: usize) -> Self {
        let mut counts = vec![0; k];
        counts[i] = 1;
        Self { counts, total: 1 }
    }

    pub fn counts(&self) -> &[u32] {
        &self.counts
    }

    pub fn k(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u32 {
        self.total
    }

    pub fn count(&self, i: usize) -> u32 {
        self.counts[i]
    }

    /// Observed alleles: indices with a positive count.
    pub fn support(&self) -> AlleleSet {
        AlleleSet::from_indices(
            self.counts
                .iter()
                .enumerate()
                .filter(|(_, &c)| c > 0)
                .map(|(i, _)| i),
        )
    }

    pub fn observed_count(&self) -> usize {
        self.counts.iter().filter(|&&c| c > 0).count()
    }

    /// `self` with one individual of allele `i` removed.
    pub fn remove_one(&self, i: usize) -> Self {
        debug_assert!(self.counts[i] > 0);
        let mut counts = self.counts.clone();
        counts[i] -= 1;
        Self { counts, total: self.total - 1 }
    }

    /// `self` with an `i` replaced by a `j`.
    pub fn replace_one(&self, i: usize, j: usize) -> Self {
        debug_assert!(self.counts[i] > 0);
        let mut counts = self.counts.clone();
        counts[i] -= 1;
        counts[j] += 1;
        Self { counts, total: self.total }
    }
}

impl fmt::Display for SampleConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (idx, c) in self.counts.iter().enumerate() {
            if idx > 0 {
                write!(f, ",")?;
            }
            write!(f, "{c}")?;
        }
        Ok(())
    }
}

impl FromStr for SampleConfig {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let counts = s
            .split(',')
            .map(|tok| {
                tok.trim()
                    .parse::<u32>()
                    .map_err(|_| Error::Parse(format!("bad count '{tok}' in configuration '{s}'")))
            })
            .collect::<Result<Vec<u32>>>()?;
        SampleConfig::new(counts)
    }
}

/// Position of a configuration within its level.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConfigRank {
    pub size: u32,
    pub index: u64,
}

/// Number of configurations of `k` alleles with total `m`: `C(m+k-1, k-1)`.
pub fn count_configs(k: usize, m: u32) -> Result<u64> {
    let mut acc: u128 = 1;
    for t in 1..=(k as u128 - 1) {
        acc = acc * (m as u128 + t) / t;
    }
    u64::try_from(acc).map_err(|_| {
        Error::Resource(format!("level cardinality for K={k}, m={m} exceeds 64 bits"))
    })
}

/// Rank of `config` in the declared per-level ordering.
pub fn rank(config: &SampleConfig) -> ConfigRank {
    let mut index = 0u64;
    let mut rem_total = config.total();
    let counts = config.counts();
    for pos in 0..counts.len() - 1 {
        let slots = counts.len() - pos;
        // configurations with a larger leading count come first
        let skipped = rem_total - counts[pos];
        index += hockey_stick(slots - 1, skipped);
        rem_total -= counts[pos];
    }
    ConfigRank { size: config.total(), index }
}

/// `sum_{s=0}^{skipped-1} C(s + slots - 1, slots - 1) = C(skipped + slots - 1, slots)`.
fn hockey_stick(slots: usize, skipped: u32) -> u64 {
    if skipped == 0 {
        return 0;
    }
    let mut acc: u128 = 1;
    for t in 1..=(slots as u128) {
        acc = acc * (skipped as u128 - 1 + t) / t;
    }
    acc as u64
}

/// Inverse of [`rank`]: the configuration of `k` alleles, total `m`, at
/// `index` within the level.
pub fn unrank(k: usize, m: u32, index: u64) -> Result<SampleConfig> {
    let level = count_configs(k, m)?;
    if index >= level {
        return Err(Error::Domain(format!(
            "index {index} out of range for level K={k}, m={m} ({level} states)"
        )));
    }
    let mut counts = vec![0u32; k];
    let mut rem_index = index;
    let mut rem_total = m;
    for pos in 0..k - 1 {
        let slots = k - pos;
        // choose the largest count whose block contains rem_index
        let mut c = rem_total;
        loop {
            let skipped = rem_total - c;
            let before = hockey_stick(slots - 1, skipped);
            let block = count_configs(slots - 1, rem_total - c)?;
            if rem_index < before + block {
                counts[pos] = c;
                rem_index -= before;
                rem_total -= c;
                break;
            }
            c -= 1;
        }
    }
    counts[k - 1] = rem_total;
    SampleConfig::new(counts)
}

/// Iterates one level in rank order without repeated unranking.
pub struct LevelIter {
    counts: Option<Vec<u32>>,
}

impl LevelIter {
    pub fn new(k: usize, m: u32) -> Self {
        let mut counts = vec![0u32; k];
        counts[0] = m;
        Self { counts: Some(counts) }
    }
}

impl Iterator for LevelIter {
    type Item = Vec<u32>;

    fn next(&mut self) -> Option<Vec<u32>> {
        let counts = self.counts.as_mut()?;
        let out = counts.clone();
        let k = counts.len();
        // descending-lex successor: decrement the rightmost positive count
        // left of the tail, then pile the freed mass just after it
        let mut p = None;
        for idx in (0..k - 1).rev() {
            if counts[idx] > 0 {
                p = Some(idx);
                break;
            }
        }
        match p {
            None => self.counts = None,
            Some(p) => {
                let tail: u32 = counts[p + 1..].iter().sum();
                counts[p] -= 1;
                counts[p + 1..].iter_mut().for_each(|c| *c = 0);
                counts[p + 1] = tail + 1;
            }
        }
        Some(out)
    }
}

/// A coalescence move `n - e_i` with its weight `n_i (n_i - 1)`, paired with
/// the mutation moves `n - e_i + e_j`. Mutation moves cover every ordered
/// pair `i != j` with `n_i >= 1`; `j` ranges over all alleles since a
/// mutation may introduce a type not present in the sample.
#[derive(Debug, Clone)]
pub struct Neighbors {
    pub coalescence: Vec<(usize, u64, SampleConfig)>,
    pub mutation: Vec<(usize, usize, SampleConfig)>,
}

pub fn neighbors(config: &SampleConfig) -> Neighbors {
    let k = config.k();
    let mut coalescence = Vec::new();
    let mut mutation = Vec::new();
    for i in 0..k {
        let ni = config.count(i) as u64;
        if ni == 0 {
            continue;
        }
        if config.total() >= 2 {
            coalescence.push((i, ni * (ni - 1), config.remove_one(i)));
        }
        for j in 0..k {
            if j != i {
                mutation.push((i, j, config.replace_one(i, j)));
            }
        }
    }
    Neighbors { coalescence, mutation }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cfg(counts: &[u32]) -> SampleConfig {
        SampleConfig::new(counts.to_vec()).unwrap()
    }

    #[test]
    fn level_cardinalities() {
        assert_eq!(count_configs(4, 2).unwrap(), 10);
        assert_eq!(count_configs(2, 3).unwrap(), 4);
        assert_eq!(count_configs(4, 40).unwrap(), 12341);
        assert_eq!(count_configs(1, 7).unwrap(), 1);
    }

    #[test]
    fn declared_ordering() {
        assert_eq!(rank(&cfg(&[2, 0])).index, 0);
        assert_eq!(rank(&cfg(&[1, 1])).index, 1);
        assert_eq!(rank(&cfg(&[0, 2])).index, 2);
        assert_eq!(unrank(3, 2, 5).unwrap(), cfg(&[0, 0, 2]));
        assert_eq!(unrank(4, 7, 0).unwrap(), cfg(&[7, 0, 0, 0]));
    }

    #[test]
    fn roundtrip_exhaustive() {
        for k in 1..=5usize {
            for m in 0..=12u32 {
                if k == 1 && m == 0 {
                    continue;
                }
                let level = count_configs(k, m).unwrap();
                let mut seen = 0u64;
                for (idx, counts) in LevelIter::new(k, m).enumerate() {
                    let c = SampleConfig::new(counts).unwrap();
                    assert_eq!(rank(&c).index, idx as u64, "config {c}");
                    assert_eq!(unrank(k, m, idx as u64).unwrap(), c);
                    seen += 1;
                }
                assert_eq!(seen, level, "K={k} m={m}");
            }
        }
    }

    #[test]
    fn neighbors_examples() {
        let n = neighbors(&cfg(&[1, 1]));
        assert!(n.coalescence.iter().all(|&(_, w, _)| w == 0));
        let moves: Vec<&SampleConfig> = n.mutation.iter().map(|(_, _, c)| c).collect();
        assert_eq!(moves.len(), 2);
        assert!(moves.contains(&&cfg(&[0, 2])));
        assert!(moves.contains(&&cfg(&[2, 0])));

        let n = neighbors(&cfg(&[2, 0]));
        assert_eq!(n.coalescence, vec![(0, 2, cfg(&[1, 0]))]);
        assert_eq!(n.mutation, vec![(0, 1, cfg(&[1, 1]))]);

        // three coalescence entries (one per occupied allele), one of them
        // weighted; mutation moves for each ordered pair i != j
        let n = neighbors(&cfg(&[2, 1, 1]));
        assert_eq!(n.coalescence.len(), 3);
        assert_eq!(
            n.coalescence.iter().filter(|&&(_, w, _)| w > 0).count(),
            1
        );
        assert_eq!(n.mutation.len(), 6);
    }

    #[test]
    fn parse_and_display() {
        let c: SampleConfig = "2,1,1,0".parse().unwrap();
        assert_eq!(c.counts(), &[2, 1, 1, 0]);
        assert_eq!(c.to_string(), "2,1,1,0");
        assert_eq!(c.support().members(), vec![0, 1, 2]);
        assert!("2,x".parse::<SampleConfig>().is_err());
    }

    proptest! {
        #[test]
        fn roundtrip_random(k in 1usize..=6, m in 0u32..=30, seed in 0u64..u64::MAX) {
            let level = count_configs(k, m).unwrap();
            let index = seed % level;
            let c = unrank(k, m, index).unwrap();
            prop_assert_eq!(c.total(), m);
            let r = rank(&c);
            prop_assert_eq!(r.size, m);
            prop_assert_eq!(r.index, index);
        }
    }
}
