//! Independent ground-truth evaluators for the rescaled leading coefficient
//! `R(n)`, used to certify the closed forms.
//!
//! Two routes compute the same quantity from different recursions:
//!
//! * descent — `n (n-1) R(n) = sum_{i: n_i > 1} n_i (n-1) R(n - e_i) +
//!   sum_{i: n_i = 1} sum_{j != i} P_ji n_j R(n - e_i + e_j)`, with boundary
//!   `R(m e_a) = pi_a`. Each step strictly decreases `(|O|, n)`
//!   lexicographically, so memoized descent terminates.
//! * subsample — conditioning on the first allele lost:
//!   `R(n) = sum_{i != j} P_ji sum_{m: 0 < m <= n, m_i = 1}
//!   [C(n,m)/C(n,|m|)] m_j R(m - e_i + e_j) / (|m| (|m|-1))`, which drops
//!   one observed allele per layer.
//!
//! Both run in doubles or in exact rationals. The rational entry points
//! lift double matrix entries to their exact binary values (no decimal
//! re-rounding), so both arithmetic modes evaluate the same matrix; exact
//! matrices can also be supplied directly.

use std::collections::HashMap;

use num::{BigInt, BigRational, Signed, Zero};

use crate::combinatorics::{lambda_rational, log_lambda, Rational};
use crate::configspace::SampleConfig;
use crate::error::{Error, Result};
use crate::model::{AlleleSet, MutationModel};

/// Scalar field the recursions run over.
pub trait RScalar: Clone {
    fn zero() -> Self;
    fn from_count(c: u64) -> Self;
    /// Exact lift of a double probability.
    fn from_prob(p: f64) -> Self;
    fn is_positive_value(&self) -> bool;
    fn add_assign(&mut self, o: &Self);
    fn mul(&self, o: &Self) -> Self;
    fn div(&self, o: &Self) -> Self;
}

impl RScalar for f64 {
    fn zero() -> Self {
        0.0
    }
    fn from_count(c: u64) -> Self {
        c as f64
    }
    fn from_prob(p: f64) -> Self {
        p
    }
    fn is_positive_value(&self) -> bool {
        *self > 0.0
    }
    fn add_assign(&mut self, o: &Self) {
        *self += o;
    }
    fn mul(&self, o: &Self) -> Self {
        self * o
    }
    fn div(&self, o: &Self) -> Self {
        self / o
    }
}

impl RScalar for Rational {
    fn zero() -> Self {
        <Rational as Zero>::zero()
    }
    fn from_count(c: u64) -> Self {
        Rational::from_integer(BigInt::from(c))
    }
    fn from_prob(p: f64) -> Self {
        BigRational::from_float(p).expect("finite probability")
    }
    fn is_positive_value(&self) -> bool {
        self.is_positive()
    }
    fn add_assign(&mut self, o: &Self) {
        *self += o;
    }
    fn mul(&self, o: &Self) -> Self {
        self * o
    }
    fn div(&self, o: &Self) -> Self {
        self / o
    }
}

/// Which recursion an [`RTable`] evaluates. Tables never mix routes, so two
/// tables over the same model stay independent cross-checks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RMethod {
    Descent,
    Subsample,
}

/// Memoized evaluator for `R(n)` over one model and one recursion route.
/// The memo is keyed on the full count vector; completed tables are
/// read-only and shareable.
pub struct RTable<T> {
    k: usize,
    p: Vec<T>,
    pi: Vec<T>,
    method: RMethod,
    memo: HashMap<Vec<u32>, T>,
}

impl RTable<f64> {
    pub fn new(model: &MutationModel, method: RMethod) -> Self {
        let k = model.k();
        let p = (0..k * k).map(|t| model.p(t / k, t % k)).collect();
        let pi = model.pi_slice().to_vec();
        Self { k, p, pi, method, memo: HashMap::new() }
    }
}

impl RTable<Rational> {
    /// Exact table over the binary lift of a double-precision model.
    pub fn from_model_lifted(model: &MutationModel, method: RMethod) -> Self {
        let k = model.k();
        let p = (0..k * k)
            .map(|t| Rational::from_prob(model.p(t / k, t % k)))
            .collect();
        let pi = model.pi_slice().iter().map(|&x| Rational::from_prob(x)).collect();
        Self { k, p, pi, method, memo: HashMap::new() }
    }
}

impl<T: RScalar> RTable<T> {
    /// Exact table over an explicitly rational (or otherwise custom) matrix.
    pub fn with_matrix(k: usize, p: Vec<T>, pi: Vec<T>, method: RMethod) -> Result<Self> {
        if p.len() != k * k || pi.len() != k {
            return Err(Error::Validation(format!(
                "matrix must be {k}x{k} with a length-{k} stationary vector"
            )));
        }
        Ok(Self { k, p, pi, method, memo: HashMap::new() })
    }

    fn p_at(&self, j: usize, i: usize) -> &T {
        &self.p[j * self.k + i]
    }

    fn irreducible_on(&self, members: &[usize]) -> bool {
        if members.len() <= 1 {
            return true;
        }
        for transpose in [false, true] {
            let start = members[0];
            let mut seen = 1u32 << start;
            let mut stack = vec![start];
            while let Some(v) = stack.pop() {
                for &w in members {
                    if seen & (1 << w) != 0 {
                        continue;
                    }
                    let edge = if transpose { self.p_at(w, v) } else { self.p_at(v, w) };
                    if edge.is_positive_value() {
                        seen |= 1 << w;
                        stack.push(w);
                    }
                }
            }
            let want = AlleleSet::from_indices(members.iter().copied()).mask();
            if seen & want != want {
                return false;
            }
        }
        true
    }

    /// `R(config)` by this table's route, memoized.
    pub fn evaluate(&mut self, config: &SampleConfig) -> Result<T> {
        if config.k() != self.k {
            return Err(Error::Domain(format!(
                "configuration has {} alleles, table has {}",
                config.k(),
                self.k
            )));
        }
        if config.total() == 0 {
            return Err(Error::Domain("configuration must contain at least one individual".into()));
        }
        let support = config.support().members();
        if !self.irreducible_on(&support) {
            return Err(Error::Model(format!(
                "transition matrix is not irreducible on the observed alleles {}",
                config.support()
            )));
        }
        Ok(self.eval_inner(config.counts()))
    }

    fn eval_inner(&mut self, counts: &[u32]) -> T {
        if let Some(v) = self.memo.get(counts) {
            return v.clone();
        }
        let support: Vec<usize> = (0..self.k).filter(|&i| counts[i] > 0).collect();
        let value = if support.len() == 1 {
            self.pi[support[0]].clone()
        } else {
            match self.method {
                RMethod::Descent => self.descent(counts, &support),
                RMethod::Subsample => self.subsample(counts, &support),
            }
        };
        self.memo.insert(counts.to_vec(), value.clone());
        value
    }

    fn descent(&mut self, counts: &[u32], support: &[usize]) -> T {
        let total: u64 = counts.iter().map(|&c| u64::from(c)).sum();
        let mut acc = T::zero();
        let mut child = counts.to_vec();
        for &i in support {
            if counts[i] > 1 {
                child[i] -= 1;
                let sub = self.eval_inner(&child);
                child[i] += 1;
                let w = T::from_count(u64::from(counts[i]) * (total - 1));
                acc.add_assign(&w.mul(&sub));
            } else {
                for &j in support {
                    if j == i {
                        continue;
                    }
                    child[i] -= 1;
                    child[j] += 1;
                    let sub = self.eval_inner(&child);
                    child[i] += 1;
                    child[j] -= 1;
                    let w = self.p_at(j, i).mul(&T::from_count(u64::from(counts[j])));
                    acc.add_assign(&w.mul(&sub));
                }
            }
        }
        acc.div(&T::from_count(total * (total - 1)))
    }

    fn subsample(&mut self, counts: &[u32], support: &[usize]) -> T {
        let mut acc = T::zero();
        let total: u64 = counts.iter().map(|&c| u64::from(c)).sum();
        let mut sub = vec![0u32; self.k];
        for &i in support {
            for &j in support {
                if j == i {
                    continue;
                }
                self.subsample_terms(counts, support, i, j, total, 0, 0, &mut sub, &mut acc);
            }
        }
        acc
    }

    /// Accumulates `P_ji [C(n,m)/C(n,|m|)] m_j R(m - e_i + e_j) / (|m|(|m|-1))`
    /// over subsamples `m` positive on the support with `m_i = 1`.
    #[allow(clippy::too_many_arguments)]
    fn subsample_terms(
        &mut self,
        counts: &[u32],
        support: &[usize],
        i: usize,
        j: usize,
        total: u64,
        pos: usize,
        chosen: u64,
        sub: &mut Vec<u32>,
        acc: &mut T,
    ) {
        if pos == support.len() {
            let m = chosen;
            let mj = u64::from(sub[j]);
            // weight C(n, m-vec) / C(n, m)
            let mut weight = T::from_count(1);
            for &x in support {
                weight = weight.mul(&binom_scalar::<T>(counts[x], sub[x]));
            }
            weight = weight.div(&binom_scalar::<T>(total as u32, m as u32));
            sub[i] -= 1;
            sub[j] += 1;
            let inner = self.eval_inner(sub);
            sub[i] += 1;
            sub[j] -= 1;
            let term = self
                .p_at(j, i)
                .mul(&weight)
                .mul(&T::from_count(mj))
                .mul(&inner)
                .div(&T::from_count(m * (m - 1)));
            acc.add_assign(&term);
            return;
        }
        let x = support[pos];
        let hi = if x == i { 1 } else { counts[x] };
        for v in 1..=hi {
            sub[x] = v;
            self.subsample_terms(counts, support, i, j, total, pos + 1, chosen + u64::from(v), sub, acc);
        }
        sub[x] = 0;
    }
}

fn binom_scalar<T: RScalar>(n: u32, k: u32) -> T {
    if k > n {
        return T::zero();
    }
    let k = k.min(n - k);
    let mut acc = T::from_count(1);
    for t in 1..=u64::from(k) {
        acc = acc
            .mul(&T::from_count(u64::from(n) - u64::from(k) + t))
            .div(&T::from_count(t));
    }
    acc
}

/// `R(n)` by memoized descent in doubles.
pub fn r_dp(model: &MutationModel, config: &SampleConfig) -> Result<f64> {
    RTable::<f64>::new(model, RMethod::Descent).evaluate(config)
}

/// `R(n)` by the subsample recursion in doubles.
pub fn r_subsample(model: &MutationModel, config: &SampleConfig) -> Result<f64> {
    RTable::<f64>::new(model, RMethod::Subsample).evaluate(config)
}

/// `R(n)` by memoized descent over the exact binary lift of the model.
pub fn r_dp_rational(model: &MutationModel, config: &SampleConfig) -> Result<Rational> {
    RTable::<Rational>::from_model_lifted(model, RMethod::Descent).evaluate(config)
}

pub fn r_subsample_rational(model: &MutationModel, config: &SampleConfig) -> Result<Rational> {
    RTable::<Rational>::from_model_lifted(model, RMethod::Subsample).evaluate(config)
}

/// `Q(n) = lambda(n) R(n)` via the descent oracle.
pub fn q_leading_oracle(model: &MutationModel, config: &SampleConfig) -> Result<f64> {
    let r = r_dp(model, config)?;
    Ok(log_lambda(config.counts())?.exp() * r)
}

/// Exact `Q(n)` when the table's matrix entries are exact.
pub fn q_leading_oracle_rational(model: &MutationModel, config: &SampleConfig) -> Result<Rational> {
    let r = r_dp_rational(model, config)?;
    let counts: Vec<u64> = config.counts().iter().map(|&c| u64::from(c)).collect();
    Ok(lambda_rational(&counts)? * r)
}

/// Residual of the descent recursion at `config` given an already-filled
/// table; zero in exact arithmetic.
pub fn descent_residual_rational(
    table: &mut RTable<Rational>,
    config: &SampleConfig,
) -> Result<Rational> {
    let support = config.support().members();
    let counts = config.counts();
    let total: u64 = counts.iter().map(|&c| u64::from(c)).sum();
    let lhs = table.evaluate(config)? * Rational::from_count(total * (total - 1));
    if support.len() == 1 {
        return Ok(<Rational as Zero>::zero());
    }
    let mut rhs = <Rational as Zero>::zero();
    for &i in &support {
        if counts[i] > 1 {
            let sub = table.evaluate(&config.remove_one(i))?;
            rhs += Rational::from_count(u64::from(counts[i]) * (total - 1)) * sub;
        } else {
            for &j in &support {
                if j != i {
                    let sub = table.evaluate(&config.replace_one(i, j))?;
                    rhs += table.p_at(j, i).clone()
                        * Rational::from_count(u64::from(counts[j]))
                        * sub;
                }
            }
        }
    }
    Ok(lhs - rhs)
}
