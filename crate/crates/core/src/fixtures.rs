//! Reference models used across the test suites, the benchmarks, and the
//! documentation examples.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::combinatorics::{ratio, Rational};
use crate::configspace::SampleConfig;
use crate::model::{MutationModel, STRICT_REVERSIBILITY_TOL};

/// Two alleles that always mutate into each other.
pub fn flip_model(theta: f64) -> MutationModel {
    MutationModel::build(2, theta, vec![vec![0.0, 1.0], vec![1.0, 0.0]], None)
        .expect("flip model is valid")
        .with_reversibility_tol(STRICT_REVERSIBILITY_TOL)
}

/// All off-diagonal targets equally likely; uniform stationary distribution.
pub fn uniform_model(k: usize, theta: f64) -> MutationModel {
    let off = 1.0 / (k as f64 - 1.0);
    let rows: Vec<Vec<f64>> = (0..k)
        .map(|i| (0..k).map(|j| if i == j { 0.0 } else { off }).collect())
        .collect();
    MutationModel::build(k, theta, rows, None)
        .expect("uniform model is valid")
        .with_reversibility_tol(STRICT_REVERSIBILITY_TOL)
}

/// The four-base transition matrix estimated from primate pseudogene data,
/// loaded from the copy shipped in `models/`.
pub fn primate_model(theta: f64) -> MutationModel {
    crate::model::model_from_json(include_str!("../../../models/primate_psi_eta_globin.json"))
        .expect("shipped model is valid")
        .with_theta(theta)
}

/// A reversible four-allele model whose mutation is far from
/// parent-independent, together with a configuration observing all four
/// alleles. The interior-vertex heuristic misses its leading coefficient by
/// roughly 17% while the full closed form matches the oracles; it also
/// serves as the fixed reversible model for the small-rate limit checks.
///
/// Built from stationary weights `pi = (1,2,3,4)/10` and symmetric
/// exchangeabilities `g` (all 1 except `g_12 = 4`, `g_34 = 3`, `g_14 = 2`)
/// via `P_ij = g_ij pi_j / c` with the common normalizer `c = 19/10`, so
/// every entry is an exact multiple of `1/19`.
pub fn star_failure_fixture() -> (MutationModel, SampleConfig) {
    let (p, pi) = star_failure_entries();
    let rows = p.chunks(4).map(|r| r.to_vec()).collect();
    let model = MutationModel::build(4, 0.01, rows, Some(pi))
        .expect("fixture model is valid")
        .with_reversibility_tol(STRICT_REVERSIBILITY_TOL);
    let config = SampleConfig::new(vec![1, 1, 1, 1]).expect("fixture config");
    (model, config)
}

fn star_failure_entries() -> (Vec<f64>, Vec<f64>) {
    let numerators: [[i64; 4]; 4] = [
        [0, 8, 3, 8],
        [4, 8, 3, 4],
        [1, 2, 4, 12],
        [2, 2, 9, 6],
    ];
    let p: Vec<f64> = numerators
        .iter()
        .flat_map(|row| row.iter().map(|&x| x as f64 / 19.0))
        .collect();
    (p, vec![0.1, 0.2, 0.3, 0.4])
}

/// The fixture matrix as exact rationals, for the exact oracle mode.
pub fn star_failure_rational() -> (Vec<Rational>, Vec<Rational>) {
    let numerators: [[i64; 4]; 4] = [
        [0, 8, 3, 8],
        [4, 8, 3, 4],
        [1, 2, 4, 12],
        [2, 2, 9, 6],
    ];
    let p = numerators
        .iter()
        .flat_map(|row| row.iter().map(|&x| ratio(x, 19)))
        .collect();
    let pi = (1..=4).map(|x| ratio(x, 10)).collect();
    (p, pi)
}

pub fn test_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Strictly positive random rows; irreducible on every subset, and
/// generally not reversible.
pub fn random_irreducible_model(k: usize, theta: f64, rng: &mut ChaCha8Rng) -> MutationModel {
    let rows: Vec<Vec<f64>> = (0..k)
        .map(|_| {
            let mut row: Vec<f64> = (0..k).map(|_| rng.gen_range(0.05..1.0)).collect();
            let s: f64 = row.iter().sum();
            row.iter_mut().for_each(|x| *x /= s);
            row
        })
        .collect();
    MutationModel::build(k, theta, rows, None).expect("random rows are valid")
}

/// Detailed balance by construction: random stationary weights and random
/// symmetric exchangeabilities with a common normalizer. Off-diagonal
/// entries are strictly positive, so the model is irreducible on every
/// subset.
pub fn random_reversible_model(k: usize, theta: f64, rng: &mut ChaCha8Rng) -> MutationModel {
    let mut pi: Vec<f64> = (0..k).map(|_| rng.gen_range(0.1..1.0)).collect();
    let s: f64 = pi.iter().sum();
    pi.iter_mut().for_each(|x| *x /= s);
    let mut g = vec![vec![0.0; k]; k];
    for i in 0..k {
        for j in (i + 1)..k {
            let v = rng.gen_range(0.1..1.0);
            g[i][j] = v;
            g[j][i] = v;
        }
    }
    let mass = |i: usize| -> f64 {
        (0..k).filter(|&j| j != i).map(|j| g[i][j] * pi[j]).sum()
    };
    let c = (0..k).map(mass).fold(0.0, f64::max);
    let rows: Vec<Vec<f64>> = (0..k)
        .map(|i| {
            let mut row: Vec<f64> = (0..k)
                .map(|j| if i == j { 0.0 } else { g[i][j] * pi[j] / c })
                .collect();
            // the heaviest row lands on zero up to rounding
            row[i] = (1.0 - row.iter().sum::<f64>()).max(0.0);
            row
        })
        .collect();
    MutationModel::build(k, theta, rows, Some(pi))
        .expect("reversible construction is valid")
        .with_reversibility_tol(STRICT_REVERSIBILITY_TOL)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::AlleleSet;

    #[test]
    fn star_fixture_is_strictly_reversible_and_irreducible() {
        let (model, config) = star_failure_fixture();
        let s = AlleleSet::full(4);
        assert!(model.is_irreducible_on(&s));
        assert!(model.is_reversible_on(&s, STRICT_REVERSIBILITY_TOL));
        assert_eq!(config.observed_count(), 4);
        // rows of the rational matrix sum to one exactly
        let (p, pi) = star_failure_rational();
        for row in p.chunks(4) {
            let sum: Rational = row.iter().cloned().sum();
            assert_eq!(sum, ratio(1, 1));
        }
        let total: Rational = pi.into_iter().sum();
        assert_eq!(total, ratio(1, 1));
    }

    #[test]
    fn primate_model_loads() {
        let m = primate_model(0.01);
        assert_eq!(m.k(), 4);
        assert_eq!(m.theta(), 0.01);
    }

    #[test]
    fn random_reversible_models_pass_the_strict_gate() {
        let mut rng = test_rng(31);
        for _ in 0..20 {
            let m = random_reversible_model(4, 0.01, &mut rng);
            assert!(m.is_reversible_on(&AlleleSet::full(4), STRICT_REVERSIBILITY_TOL));
        }
    }
}
