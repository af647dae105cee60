//! Mutation model: scaled rate, transition matrix, stationary distribution,
//! and the structural predicates (irreducibility, reversibility on a subset
//! of alleles) that the closed forms condition on.

use std::fmt;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::Deserialize;

use crate::error::{Error, Result};

/// Hard cap on the number of allele types. Keeps configuration ranks within
/// 64 bits at desk-scale sample sizes.
pub const MAX_ALLELES: usize = 16;

/// Row-sum slack accepted on input matrices before rejection; accepted rows
/// are renormalized exactly. Published matrices carry rounding error.
pub const ROW_SUM_INPUT_TOL: f64 = 1e-6;

/// Default tolerance for the detailed-balance test. Wide enough to accept
/// transition matrices published to three digits; synthetically constructed
/// reversible models should use [`STRICT_REVERSIBILITY_TOL`].
pub const DEFAULT_REVERSIBILITY_TOL: f64 = 1e-2;
pub const STRICT_REVERSIBILITY_TOL: f64 = 1e-10;

/// A nonempty subset of allele indices in `0..K`, stored as a bitmask.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct AlleleSet {
    mask: u32,
}

impl AlleleSet {
    pub fn from_mask(mask: u32) -> Self {
        Self { mask }
    }

    pub fn from_indices(indices: impl IntoIterator<Item = usize>) -> Self {
        let mut mask = 0;
        for i in indices {
            debug_assert!(i < MAX_ALLELES);
            mask |= 1 << i;
        }
        Self { mask }
    }

    pub fn full(k: usize) -> Self {
        Self { mask: (1u32 << k) - 1 }
    }

    pub fn mask(&self) -> u32 {
        self.mask
    }

    pub fn contains(&self, i: usize) -> bool {
        self.mask & (1 << i) != 0
    }

    pub fn len(&self) -> usize {
        self.mask.count_ones() as usize
    }

    pub fn is_empty(&self) -> bool {
        self.mask == 0
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        let mask = self.mask;
        (0..32usize).filter(move |i| mask & (1 << i) != 0)
    }

    pub fn members(&self) -> Vec<usize> {
        self.iter().collect()
    }
}

impl fmt::Display for AlleleSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{")?;
        for (idx, i) in self.iter().enumerate() {
            if idx > 0 {
                write!(f, ",")?;
            }
            write!(f, "{}", i + 1)?;
        }
        write!(f, "}}")
    }
}

/// A validated K-allele recurrent mutation model: scaled rate `theta`,
/// row-stochastic transition matrix `P`, and stationary distribution `pi`.
/// Immutable after construction; safe to share across threads.
#[derive(Debug, Clone)]
pub struct MutationModel {
    k: usize,
    theta: f64,
    p: Vec<f64>, // row-major k*k
    pi: Vec<f64>,
    reversibility_tol: f64,
}

impl MutationModel {
    /// Validates the inputs and computes the stationary distribution when
    /// `pi` is not supplied. Rows within [`ROW_SUM_INPUT_TOL`] of 1 are
    /// renormalized; larger deviations are rejected.
    pub fn build(k: usize, theta: f64, p: Vec<Vec<f64>>, pi: Option<Vec<f64>>) -> Result<Self> {
        if !(2..=MAX_ALLELES).contains(&k) {
            return Err(Error::Validation(format!(
                "K must be in 2..={MAX_ALLELES}, got {k}"
            )));
        }
        if !theta.is_finite() || theta < 0.0 {
            return Err(Error::Validation(format!(
                "theta must be finite and non-negative, got {theta}"
            )));
        }
        if p.len() != k || p.iter().any(|row| row.len() != k) {
            return Err(Error::Validation(format!("P must be {k}x{k}")));
        }
        let mut flat = Vec::with_capacity(k * k);
        for (r, row) in p.iter().enumerate() {
            if row.iter().any(|&x| !x.is_finite() || x < 0.0) {
                return Err(Error::Validation(format!(
                    "row {} of P contains a negative or non-finite entry",
                    r + 1
                )));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > ROW_SUM_INPUT_TOL {
                return Err(Error::Validation(format!(
                    "row {} of P sums to {sum}, outside 1 +/- {ROW_SUM_INPUT_TOL}",
                    r + 1
                )));
            }
            flat.extend(row.iter().map(|&x| x / sum));
        }
        let pi = match pi {
            Some(mut pi) => {
                if pi.len() != k {
                    return Err(Error::Validation(format!("pi must have length {k}")));
                }
                if pi.iter().any(|&x| !x.is_finite() || x < 0.0) {
                    return Err(Error::Validation(
                        "pi contains a negative or non-finite entry".into(),
                    ));
                }
                let sum: f64 = pi.iter().sum();
                if (sum - 1.0).abs() > ROW_SUM_INPUT_TOL {
                    return Err(Error::Validation(format!(
                        "pi sums to {sum}, outside 1 +/- {ROW_SUM_INPUT_TOL}"
                    )));
                }
                pi.iter_mut().for_each(|x| *x /= sum);
                let residual = balance_residual(k, &flat, &pi);
                if residual > 1e-10 {
                    return Err(Error::Validation(format!(
                        "supplied pi is not stationary for P: max |pi P - pi| = {residual:.3e}"
                    )));
                }
                pi
            }
            None => {
                let rows: Vec<&[f64]> = flat.chunks(k).collect();
                stationary_from_rows(&rows)?
            }
        };
        Ok(Self {
            k,
            theta,
            p: flat,
            pi,
            reversibility_tol: DEFAULT_REVERSIBILITY_TOL,
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    /// Probability that allele `j` mutates to allele `i` (forward in time),
    /// zero-based indices.
    pub fn p(&self, j: usize, i: usize) -> f64 {
        self.p[j * self.k + i]
    }

    pub fn pi(&self, i: usize) -> f64 {
        self.pi[i]
    }

    pub fn pi_slice(&self) -> &[f64] {
        &self.pi
    }

    pub fn p_rows(&self) -> Vec<Vec<f64>> {
        self.p.chunks(self.k).map(|r| r.to_vec()).collect()
    }

    pub fn reversibility_tol(&self) -> f64 {
        self.reversibility_tol
    }

    pub fn with_reversibility_tol(mut self, tol: f64) -> Self {
        self.reversibility_tol = tol;
        self
    }

    /// Same model with a different mutation rate.
    pub fn with_theta(&self, theta: f64) -> Self {
        let mut m = self.clone();
        m.theta = theta;
        m
    }

    /// True iff the directed graph on `s` with edges `i -> j` wherever
    /// `P_ij > 0` (both endpoints in `s`) is strongly connected.
    pub fn is_irreducible_on(&self, s: &AlleleSet) -> bool {
        if s.is_empty() {
            return false;
        }
        let members = s.members();
        if members.len() == 1 {
            return true;
        }
        // forward and backward reachability from the first member
        for transpose in [false, true] {
            let start = members[0];
            let mut seen = 1u32 << start;
            let mut stack = vec![start];
            while let Some(v) = stack.pop() {
                for &w in &members {
                    if seen & (1 << w) != 0 {
                        continue;
                    }
                    let edge = if transpose { self.p(w, v) } else { self.p(v, w) };
                    if edge > 0.0 {
                        seen |= 1 << w;
                        stack.push(w);
                    }
                }
            }
            if seen & s.mask() != s.mask() {
                return false;
            }
        }
        true
    }

    /// Largest relative detailed-balance violation over pairs in `s`:
    /// `max |pi_i P_ij - pi_j P_ji| / max(pi_i P_ij, pi_j P_ji, eps)`.
    pub fn detailed_balance_residual_on(&self, s: &AlleleSet) -> f64 {
        let members = s.members();
        let mut worst = 0.0f64;
        for (a, &i) in members.iter().enumerate() {
            for &j in &members[a + 1..] {
                let fij = self.pi[i] * self.p(i, j);
                let fji = self.pi[j] * self.p(j, i);
                let rel = (fij - fji).abs() / fij.max(fji).max(1e-300);
                worst = worst.max(rel);
            }
        }
        worst
    }

    /// Detailed balance on `s` within `tol`. The test is symmetric in each
    /// pair, so relabeling `i` and `j` never changes the verdict.
    pub fn is_reversible_on(&self, s: &AlleleSet, tol: f64) -> bool {
        self.detailed_balance_residual_on(s) <= tol
    }
}

fn balance_residual(k: usize, p_flat: &[f64], pi: &[f64]) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..k {
        let mut acc = 0.0;
        for j in 0..k {
            acc += pi[j] * p_flat[j * k + i];
        }
        worst = worst.max((acc - pi[i]).abs());
    }
    worst
}

/// Solves `pi P = pi`, `sum pi = 1` by replacing one balance equation with
/// the normalization constraint and LU-factoring the result.
pub fn stationary_distribution(p: &[Vec<f64>]) -> Result<Vec<f64>> {
    let rows: Vec<&[f64]> = p.iter().map(|r| r.as_slice()).collect();
    stationary_from_rows(&rows)
}

fn stationary_from_rows(p: &[&[f64]]) -> Result<Vec<f64>> {
    let k = p.len();
    let mut a = DMatrix::<f64>::zeros(k, k);
    for i in 0..k {
        for j in 0..k {
            a[(i, j)] = p[j][i] - if i == j { 1.0 } else { 0.0 };
        }
    }
    for j in 0..k {
        a[(k - 1, j)] = 1.0;
    }
    let mut b = DVector::<f64>::zeros(k);
    b[k - 1] = 1.0;
    let pi = a
        .lu()
        .solve(&b)
        .ok_or_else(|| Error::Singular("transition matrix has no unique stationary distribution".into()))?;
    let mut pi: Vec<f64> = pi.iter().copied().collect();
    // Rank deficiency that survives pivoting shows up as a poor residual or
    // negative mass rather than an outright LU failure.
    if pi.iter().any(|&x| x < -1e-9) {
        return Err(Error::Singular(
            "stationary solve produced negative mass; multiple recurrent classes?".into(),
        ));
    }
    pi.iter_mut().for_each(|x| *x = x.max(0.0));
    let sum: f64 = pi.iter().sum();
    pi.iter_mut().for_each(|x| *x /= sum);
    let flat: Vec<f64> = p.iter().flat_map(|r| r.iter().copied()).collect();
    let residual = balance_residual(k, &flat, &pi);
    if residual > 1e-10 {
        return Err(Error::Singular(format!(
            "stationary solve residual {residual:.3e} exceeds 1e-10; multiple recurrent classes?"
        )));
    }
    Ok(pi)
}

#[derive(Deserialize)]
struct ModelFile {
    #[serde(rename = "K")]
    k: usize,
    theta: f64,
    #[serde(rename = "P")]
    p: Vec<Vec<f64>>,
    pi: Option<Vec<f64>>,
}

/// Parses a model from its JSON document: fields `K`, `theta`, `P` (K rows
/// of K numbers), and optional `pi`.
pub fn model_from_json(text: &str) -> Result<MutationModel> {
    let file: ModelFile =
        serde_json::from_str(text).map_err(|e| Error::Parse(format!("model JSON: {e}")))?;
    MutationModel::build(file.k, file.theta, file.p, file.pi)
}

pub fn load_model(path: impl AsRef<Path>) -> Result<MutationModel> {
    let text = std::fs::read_to_string(path.as_ref())?;
    model_from_json(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn flip() -> MutationModel {
        MutationModel::build(2, 0.01, vec![vec![0.0, 1.0], vec![1.0, 0.0]], None).unwrap()
    }

    #[test]
    fn flip_stationary_is_uniform() {
        let m = flip();
        assert!((m.pi(0) - 0.5).abs() < 1e-14);
        assert!((m.pi(1) - 0.5).abs() < 1e-14);
    }

    #[test]
    fn lazy_chain_stationary_is_uniform() {
        let m = MutationModel::build(2, 0.1, vec![vec![0.9, 0.1], vec![0.1, 0.9]], None).unwrap();
        assert!((m.pi(0) - 0.5).abs() < 1e-12);
        assert!((m.pi(1) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn uniform_three_allele_stationary() {
        let m = MutationModel::build(
            3,
            0.01,
            vec![
                vec![0.0, 0.5, 0.5],
                vec![0.5, 0.0, 0.5],
                vec![0.5, 0.5, 0.0],
            ],
            None,
        )
        .unwrap();
        for i in 0..3 {
            assert!((m.pi(i) - 1.0 / 3.0).abs() < 1e-14);
        }
    }

    #[test]
    fn block_identity_is_rejected_or_reducible() {
        // two absorbing classes: no unique stationary distribution
        let p = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        assert!(matches!(
            MutationModel::build(2, 0.01, p.clone(), None),
            Err(Error::Singular(_))
        ));
        // with an explicit pi it builds, but is not irreducible on {1,2}
        let m = MutationModel::build(2, 0.01, p, Some(vec![0.5, 0.5])).unwrap();
        assert!(!m.is_irreducible_on(&AlleleSet::full(2)));
        assert!(m.is_irreducible_on(&AlleleSet::from_indices([0])));
    }

    #[test]
    fn bad_rows_rejected() {
        let p = vec![vec![0.7, 0.2], vec![0.5, 0.5]];
        assert!(matches!(
            MutationModel::build(2, 0.01, p, None),
            Err(Error::Validation(_))
        ));
        let p = vec![vec![1.1, -0.1], vec![0.5, 0.5]];
        assert!(matches!(
            MutationModel::build(2, 0.01, p, None),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn supplied_pi_must_be_stationary() {
        let p = vec![vec![0.0, 1.0], vec![1.0, 0.0]];
        assert!(MutationModel::build(2, 0.01, p.clone(), Some(vec![0.5, 0.5])).is_ok());
        assert!(matches!(
            MutationModel::build(2, 0.01, p, Some(vec![0.7, 0.3])),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn flip_is_reversible_and_irreducible() {
        let m = flip();
        let s = AlleleSet::full(2);
        assert!(m.is_irreducible_on(&s));
        assert!(m.is_reversible_on(&s, STRICT_REVERSIBILITY_TOL));
    }

    #[test]
    fn three_cycle_is_not_reversible() {
        let m = MutationModel::build(
            3,
            0.01,
            vec![
                vec![0.0, 0.9, 0.1],
                vec![0.1, 0.0, 0.9],
                vec![0.9, 0.1, 0.0],
            ],
            None,
        )
        .unwrap();
        assert!(!m.is_reversible_on(&AlleleSet::full(3), 1e-2));
        assert!(m.is_irreducible_on(&AlleleSet::full(3)));
    }

    fn random_ergodic(k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
        (0..k)
            .map(|_| {
                let mut row: Vec<f64> = (0..k).map(|_| rng.gen_range(0.01..1.0)).collect();
                let s: f64 = row.iter().sum();
                row.iter_mut().for_each(|x| *x /= s);
                row
            })
            .collect()
    }

    #[test]
    fn stationary_fixed_point_random_matrices() {
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
        for trial in 0..1000 {
            let k = 2 + (trial % 5);
            let p = random_ergodic(k, &mut rng);
            let pi = stationary_distribution(&p).unwrap();
            let mut worst = 0.0f64;
            for i in 0..k {
                let acc: f64 = (0..k).map(|j| pi[j] * p[j][i]).sum();
                worst = worst.max((acc - pi[i]).abs());
            }
            assert!(worst <= 1e-10, "trial {trial}: residual {worst:.3e}");
        }
    }

    #[test]
    fn symmetric_construction_is_strictly_reversible() {
        // pi_i g_ij pi_j symmetric by construction
        let mut rng = ChaCha8Rng::seed_from_u64(0xab1e);
        for _ in 0..50 {
            let k = 4;
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
            let mass: Vec<f64> = (0..k)
                .map(|i| (0..k).filter(|&j| j != i).map(|j| g[i][j] * pi[j]).sum())
                .collect();
            let c = mass.iter().cloned().fold(0.0, f64::max);
            let mut p = vec![vec![0.0; k]; k];
            for i in 0..k {
                for j in 0..k {
                    if j != i {
                        p[i][j] = g[i][j] * pi[j] / c;
                    }
                }
                p[i][i] = (1.0 - p[i].iter().sum::<f64>()).max(0.0);
            }
            let m = MutationModel::build(k, 0.01, p, Some(pi)).unwrap();
            assert!(m.is_reversible_on(&AlleleSet::full(k), STRICT_REVERSIBILITY_TOL));
        }
    }

    #[test]
    fn published_primate_matrix() {
        let m = crate::fixtures::primate_model(0.01);
        // exact stationary distribution of the matrix as printed (solved in
        // rational arithmetic offline); the published three-digit vector
        // (0.308, 0.185, 0.308, 0.199) sits up to 5.92e-4 away from it,
        // since it was computed before the matrix was rounded
        let exact = [0.30818202, 0.18449646, 0.30859187, 0.19872965];
        let published = [0.308, 0.185, 0.308, 0.199];
        for i in 0..4 {
            assert!((m.pi(i) - exact[i]).abs() < 1e-8, "entry {i}");
            assert!((m.pi(i) - published[i]).abs() < 6e-4, "entry {i}");
        }
        let s = AlleleSet::full(4);
        assert!(m.is_irreducible_on(&s));
        assert!(m.is_reversible_on(&s, 1e-2));
        assert!(!m.is_reversible_on(&s, 1e-4));
    }

    #[test]
    fn reversibility_verdict_is_symmetric_under_relabeling() {
        let m = crate::fixtures::primate_model(0.01);
        let rows = m.p_rows();
        let perm = [3usize, 1, 0, 2];
        let permuted_rows: Vec<Vec<f64>> = (0..4)
            .map(|i| (0..4).map(|j| rows[perm[i]][perm[j]]).collect())
            .collect();
        let permuted_pi: Vec<f64> = (0..4).map(|i| m.pi(perm[i])).collect();
        let pm = MutationModel::build(4, 0.01, permuted_rows, Some(permuted_pi)).unwrap();
        let full = AlleleSet::full(4);
        for tol in [1e-2, 1e-3, 1e-4] {
            assert_eq!(m.is_reversible_on(&full, tol), pm.is_reversible_on(&full, tol));
        }
    }

    #[test]
    fn json_roundtrip() {
        let text = r#"{"K":2,"theta":0.5,"P":[[0.0,1.0],[1.0,0.0]]}"#;
        let m = model_from_json(text).unwrap();
        assert_eq!(m.k(), 2);
        assert_eq!(m.theta(), 0.5);
        assert!((m.pi(0) - 0.5).abs() < 1e-14);
        assert!(model_from_json("{\"K\":2}").is_err());
    }
}
