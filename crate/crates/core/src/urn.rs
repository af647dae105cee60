//! The ball-removal urn process and its Monte Carlo estimator.
//!
//! Starting from the sample configuration, balls are removed uniformly at
//! random. Removing the last ball of a color "kills" it: another ball is
//! drawn from the urn, copied, and both copies returned, and the drawn
//! ball's color becomes the killed color's parent. The last surviving color
//! is the root. One run yields a random rooted tree on the observed
//! alleles, and the expectation of the tree weight
//! `f_P(T) = pi_root prod_{parent -> child} P_{parent,child}`
//! equals the rescaled leading coefficient `R(n)`.
//!
//! `mc_estimate_r` draws each sample from its own counter-derived RNG
//! stream and reduces with indexed pairwise summation, so a given
//! `(seed, samples)` pair returns bit-identical results regardless of how
//! many workers run the simulation.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::configspace::SampleConfig;
use crate::error::{Error, Result};
use crate::model::MutationModel;

/// A rooted labeled tree on a subset of alleles, stored as a child-to-parent
/// map. Exactly one vertex (the root) has no parent.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct RootedTree {
    root: usize,
    parent: BTreeMap<usize, usize>,
}

impl RootedTree {
    pub fn root(&self) -> usize {
        self.root
    }

    pub fn parent_of(&self, child: usize) -> Option<usize> {
        self.parent.get(&child).copied()
    }

    /// Edges as `(parent, child)` pairs in child order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.parent.iter().map(|(&c, &p)| (p, c))
    }

    pub fn vertex_count(&self) -> usize {
        self.parent.len() + 1
    }

    /// The vertex covering both edges of a three-vertex tree, ignoring
    /// edge directions.
    pub fn undirected_center(&self) -> Option<usize> {
        if self.vertex_count() != 3 {
            return None;
        }
        let edges: Vec<(usize, usize)> = self.edges().collect();
        let (a, b) = edges[0];
        let (c, d) = edges[1];
        for v in [a, b] {
            if v == c || v == d {
                return Some(v);
            }
        }
        None
    }
}

impl std::fmt::Display for RootedTree {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "root={}", self.root + 1)?;
        for (p, c) in self.edges() {
            write!(f, " {}->{}", p + 1, c + 1)?;
        }
        Ok(())
    }
}

/// One run of the urn process.
pub fn simulate_urn(config: &SampleConfig, rng: &mut impl Rng) -> RootedTree {
    let mut counts = config.counts().to_vec();
    let mut total = config.total();
    let mut colors = config.observed_count();
    let mut parent = BTreeMap::new();
    debug_assert!(total >= 1);
    loop {
        // remove a uniform ball
        let mut draw = rng.gen_range(0..total);
        let mut i = 0usize;
        while draw >= counts[i] {
            draw -= counts[i];
            i += 1;
        }
        counts[i] -= 1;
        total -= 1;
        if counts[i] > 0 {
            continue;
        }
        colors -= 1;
        if colors == 0 {
            return RootedTree { root: i, parent };
        }
        // copy a surviving ball; its color is the killed color's parent
        let mut draw = rng.gen_range(0..total);
        let mut j = 0usize;
        while draw >= counts[j] {
            draw -= counts[j];
            j += 1;
        }
        parent.insert(i, j);
        counts[j] += 1;
        total += 1;
    }
}

/// Tree weight `pi_root prod_{(parent -> child)} P_{parent,child}`.
pub fn f_p(tree: &RootedTree, model: &MutationModel) -> f64 {
    let mut acc = model.pi(tree.root());
    for (p, c) in tree.edges() {
        acc *= model.p(p, c);
    }
    acc
}

/// A Monte Carlo mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub samples: u64,
    pub seed: u64,
}

fn stream_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

fn pairwise_sum(x: &[f64]) -> f64 {
    if x.len() <= 64 {
        return x.iter().sum();
    }
    let mid = x.len() / 2;
    pairwise_sum(&x[..mid]) + pairwise_sum(&x[mid..])
}

/// Sample mean and standard error of `f_P` over independent urn runs.
pub fn mc_estimate_r(
    model: &MutationModel,
    config: &SampleConfig,
    samples: u64,
    seed: u64,
) -> McEstimate {
    let values: Vec<f64> = (0..samples)
        .into_par_iter()
        .map(|idx| {
            let mut rng = stream_rng(seed, idx);
            f_p(&simulate_urn(config, &mut rng), model)
        })
        .collect();
    let mean = pairwise_sum(&values) / samples as f64;
    let stderr = if samples < 2 {
        0.0
    } else {
        let sq: Vec<f64> = values.iter().map(|&v| (v - mean) * (v - mean)).collect();
        let var = pairwise_sum(&sq) / (samples as f64 - 1.0);
        (var / samples as f64).sqrt()
    };
    McEstimate { mean, stderr, samples, seed }
}

/// Empirical distribution of the generated trees, as exact counts.
#[derive(Debug, Clone)]
pub struct TreeDistribution {
    counts: BTreeMap<RootedTree, u64>,
    samples: u64,
}

impl TreeDistribution {
    pub fn samples(&self) -> u64 {
        self.samples
    }

    pub fn counts(&self) -> &BTreeMap<RootedTree, u64> {
        &self.counts
    }

    pub fn frequency(&self, tree: &RootedTree) -> f64 {
        *self.counts.get(tree).unwrap_or(&0) as f64 / self.samples as f64
    }

    pub fn iter(&self) -> impl Iterator<Item = (&RootedTree, f64)> + '_ {
        self.counts
            .iter()
            .map(move |(t, &c)| (t, c as f64 / self.samples as f64))
    }
}

/// Samples the tree distribution for configurations with a small observed
/// set. The space of rooted labeled trees grows super-exponentially, so
/// distributions beyond six observed alleles are refused.
pub fn tree_distribution(
    config: &SampleConfig,
    samples: u64,
    seed: u64,
) -> Result<TreeDistribution> {
    if config.observed_count() > 6 {
        return Err(Error::Unsupported(
            "tree distributions are limited to at most 6 observed alleles".into(),
        ));
    }
    if config.total() == 0 || samples == 0 {
        return Err(Error::Domain("need a nonempty sample and at least one run".into()));
    }
    let mut counts = BTreeMap::new();
    for idx in 0..samples {
        let mut rng = stream_rng(seed, idx);
        *counts.entry(simulate_urn(config, &mut rng)).or_insert(0u64) += 1;
    }
    Ok(TreeDistribution { counts, samples })
}
