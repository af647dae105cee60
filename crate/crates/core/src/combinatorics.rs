//! Exact and floating-point combinatorial kernels.
//!
//! Everything exact runs on arbitrary-precision rationals. Each closed-form
//! identity ships with a brute-force evaluator over the same inputs so the
//! two can be swept against each other (see [`run_identity_suite`]).
//! Floating-point versions exist only where the solvers need speed: the
//! harmonic and log-factorial tables are built once with compensated
//! summation and are read-only afterwards.

use std::sync::OnceLock;

use num::bigint::BigInt;
use num::rational::BigRational;
use num::{One, Signed, ToPrimitive, Zero};

use crate::error::{Error, Result};

/// Exact rational scalar used by the identity suite and the rational oracle.
pub type Rational = BigRational;

/// A vector of non-negative counts indexed by type `1..=L`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CountVector {
    counts: Vec<u64>,
}

impl CountVector {
    pub fn new(counts: Vec<u64>) -> Result<Self> {
        if counts.is_empty() {
            return Err(Error::Domain("count vector must have length >= 1".into()));
        }
        Ok(Self { counts })
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

pub fn rational_int(x: i64) -> Rational {
    Rational::from_integer(BigInt::from(x))
}

pub fn ratio(num: i64, den: i64) -> Rational {
    Rational::new(BigInt::from(num), BigInt::from(den))
}

/// `x (x-1) ... (x-k+1)`; the empty product for `k = 0`.
pub fn falling_factorial(x: i64, k: u32) -> BigInt {
    let mut acc = BigInt::one();
    for t in 0..i64::from(k) {
        acc *= BigInt::from(x - t);
    }
    acc
}

/// `x (x+1) ... (x+k-1)`; the empty product for `k = 0`.
pub fn rising_factorial(x: i64, k: u32) -> BigInt {
    let mut acc = BigInt::one();
    for t in 0..i64::from(k) {
        acc *= BigInt::from(x + t);
    }
    acc
}

/// Binomial coefficient with the combinatorial convention: zero whenever
/// `k < 0`, `n < 0`, or `k > n`.
pub fn binomial(n: i64, k: i64) -> BigInt {
    if k < 0 || n < 0 || k > n {
        return BigInt::zero();
    }
    let k = k.min(n - k);
    let mut acc = BigInt::one();
    for t in 1..=k {
        acc = acc * BigInt::from(n - k + t) / BigInt::from(t);
    }
    acc
}

/// Product of per-type binomials `prod_i C(n_i, m_i)`.
pub fn multi_binomial(n: &[u64], m: &[u64]) -> BigInt {
    debug_assert_eq!(n.len(), m.len());
    let mut acc = BigInt::one();
    for (&ni, &mi) in n.iter().zip(m) {
        acc *= binomial(ni as i64, mi as i64);
        if acc.is_zero() {
            break;
        }
    }
    acc
}

/// `H_k = 1 + 1/2 + ... + 1/k`, with `H_0 = 0`.
pub fn harmonic_rational(k: u32) -> Rational {
    let mut acc = Rational::zero();
    for t in 1..=i64::from(k) {
        acc += ratio(1, t);
    }
    acc
}

/// `prod_{i: n_i > 0} (n_i - 1)! / (n - 1)!` as an exact rational.
pub fn lambda_rational(counts: &[u64]) -> Result<Rational> {
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return Err(Error::Domain("lambda requires a nonempty sample".into()));
    }
    let mut num = BigInt::one();
    for &c in counts.iter().filter(|&&c| c > 0) {
        num *= factorial_big(c - 1);
    }
    Ok(Rational::new(num, factorial_big(total - 1)))
}

fn factorial_big(n: u64) -> BigInt {
    let mut acc = BigInt::one();
    for t in 2..=n {
        acc *= BigInt::from(t);
    }
    acc
}

// ---------------------------------------------------------------------------
// Floating-point tables. Built once, then read-only; safe for concurrent use.
// ---------------------------------------------------------------------------

const TABLE_LEN: usize = 1 << 17;

fn kahan_table(term: impl Fn(usize) -> f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(TABLE_LEN);
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    out.push(0.0);
    for k in 1..TABLE_LEN {
        let y = term(k) - comp;
        let t = sum + y;
        comp = (t - sum) - y;
        sum = t;
        out.push(sum);
    }
    out
}

fn harmonic_table() -> &'static [f64] {
    static TABLE: OnceLock<Vec<f64>> = OnceLock::new();
    TABLE.get_or_init(|| kahan_table(|k| 1.0 / k as f64))
}

fn ln_factorial_table() -> &'static [f64] {
    static TABLE: OnceLock<Vec<f64>> = OnceLock::new();
    TABLE.get_or_init(|| kahan_table(|k| (k as f64).ln()))
}

/// `H_k` as a double, from the precomputed compensated table.
pub fn harmonic_f64(k: usize) -> f64 {
    let table = harmonic_table();
    if k < table.len() {
        return table[k];
    }
    // Past the table, extend by plain summation from the last entry. Sample
    // sizes that reach this path are far outside the supported range.
    let mut acc = table[table.len() - 1];
    for t in table.len()..=k {
        acc += 1.0 / t as f64;
    }
    acc
}

/// `ln k!` as a double, from the precomputed compensated table.
pub fn ln_factorial(k: usize) -> f64 {
    let table = ln_factorial_table();
    if k < table.len() {
        return table[k];
    }
    let mut acc = table[table.len() - 1];
    for t in table.len()..=k {
        acc += (t as f64).ln();
    }
    acc
}

/// Natural log of the multinomial coefficient `n! / prod_i n_i!`.
pub fn log_multinomial(counts: &[u32]) -> f64 {
    let total: u64 = counts.iter().map(|&c| u64::from(c)).sum();
    let mut acc = ln_factorial(total as usize);
    for &c in counts {
        acc -= ln_factorial(c as usize);
    }
    acc
}

/// Natural log of `lambda(n)`; the log-domain twin of [`lambda_rational`].
pub fn log_lambda(counts: &[u32]) -> Result<f64> {
    let total: u64 = counts.iter().map(|&c| u64::from(c)).sum();
    if total == 0 {
        return Err(Error::Domain("lambda requires a nonempty sample".into()));
    }
    let mut acc = -ln_factorial(total as usize - 1);
    for &c in counts.iter().filter(|&&c| c > 0) {
        acc += ln_factorial(c as usize - 1);
    }
    Ok(acc)
}

// ---------------------------------------------------------------------------
// Binomial-ratio and harmonic identities.
// ---------------------------------------------------------------------------

/// `sum_{m=x}^{y} C(b,m)/C(a,m)` by the closed form
/// `[C(a+1-x, a+1-b) - C(a-y, a+1-b)] / C(a,b)`.
pub fn fact_ratio_sum(x: u64, y: u64, a: u64, b: u64) -> Result<Rational> {
    if x == 0 || y == 0 || a == 0 || b == 0 || b > a || x > y {
        return Err(Error::Domain(format!(
            "fact_ratio_sum requires 1 <= x <= y and 1 <= b <= a, got x={x} y={y} a={a} b={b}"
        )));
    }
    let (x, y, a, b) = (x as i64, y as i64, a as i64, b as i64);
    let num = binomial(a + 1 - x, a + 1 - b) - binomial(a - y, a + 1 - b);
    Ok(Rational::new(num, binomial(a, b)))
}

/// Term-by-term evaluation of the sum in [`fact_ratio_sum`]. Terms with a
/// vanishing denominator `C(a,m)` have a vanishing numerator as well (since
/// `b <= a`) and count as zero.
pub fn brute_fact_ratio_sum(x: u64, y: u64, a: u64, b: u64) -> Rational {
    let mut acc = Rational::zero();
    for m in x..=y {
        let den = binomial(a as i64, m as i64);
        if !den.is_zero() {
            acc += Rational::new(binomial(b as i64, m as i64), den);
        }
    }
    acc
}

/// `sum_{m=1}^{a} (1/m) C(a-m, b)` by the closed form `C(a,b) (H_a - H_b)`.
pub fn fact_comb_harmonic(a: u64, b: u64) -> Result<Rational> {
    if a == 0 || b == 0 {
        return Err(Error::Domain("fact_comb_harmonic requires a, b >= 1".into()));
    }
    let h = harmonic_rational(a as u32) - harmonic_rational(b as u32);
    Ok(Rational::from_integer(binomial(a as i64, b as i64)) * h)
}

pub fn brute_fact_comb_harmonic(a: u64, b: u64) -> Rational {
    let mut acc = Rational::zero();
    for m in 1..=a {
        acc += Rational::new(binomial((a - m) as i64, b as i64), BigInt::from(m));
    }
    acc
}

/// `sum_{m=1}^{b} [C(b,m)/C(a,m)] / (m+1)` by the closed form
/// `(a+1)/(b+1) (H_{a+1} - H_{a-b}) - 1`.
pub fn fact_ratio2_sum(a: u64, b: u64) -> Result<Rational> {
    if a == 0 || b == 0 || b > a {
        return Err(Error::Domain(format!(
            "fact_ratio2_sum requires 1 <= b <= a, got a={a} b={b}"
        )));
    }
    let h = harmonic_rational(a as u32 + 1) - harmonic_rational((a - b) as u32);
    Ok(ratio(a as i64 + 1, b as i64 + 1) * h - Rational::one())
}

pub fn brute_fact_ratio2_sum(a: u64, b: u64) -> Rational {
    let mut acc = Rational::zero();
    for m in 1..=b {
        acc += Rational::new(
            binomial(b as i64, m as i64),
            binomial(a as i64, m as i64) * BigInt::from(m + 1),
        );
    }
    acc
}

// ---------------------------------------------------------------------------
// Multivariate hypergeometric moments.
// ---------------------------------------------------------------------------

/// Visits every vector `v` with `lo_i <= v_i <= bounds_i` and `|v| = total`,
/// where `lo_i` is 1 on the support of `bounds` if `positive` is set, else 0.
fn for_each_vector(
    bounds: &[u64],
    total: u64,
    positive: bool,
    f: &mut impl FnMut(&[u64]),
) {
    fn rec(
        bounds: &[u64],
        positive: bool,
        idx: usize,
        rem: u64,
        cur: &mut Vec<u64>,
        f: &mut impl FnMut(&[u64]),
    ) {
        if idx == bounds.len() {
            if rem == 0 {
                f(cur);
            }
            return;
        }
        let lo = if positive && bounds[idx] > 0 { 1 } else { 0 };
        let hi = bounds[idx].min(rem);
        if lo > hi {
            return;
        }
        for v in lo..=hi {
            cur.push(v);
            rec(bounds, positive, idx + 1, rem - v, cur, f);
            cur.pop();
        }
    }
    let mut cur = Vec::with_capacity(bounds.len());
    rec(bounds, positive, 0, total, &mut cur, f);
}

/// Falling-factorial moment of the multivariate hypergeometric distribution:
/// `E[prod_i fall(m_i, t_i)] = [prod_i fall(n_i, t_i) / fall(n, |t|)] fall(m, |t|)`.
pub fn hyper_falling_moment(n: &CountVector, m: u64, t: &CountVector) -> Result<Rational> {
    if n.len() != t.len() {
        return Err(Error::Domain(format!(
            "dimension mismatch: |n| = {}, |t| = {}",
            n.len(),
            t.len()
        )));
    }
    let total = n.total();
    let t_total = t.total();
    if m > total || t_total > total {
        return Err(Error::Domain(format!(
            "hyper_falling_moment requires m <= {total} and |t| <= {total}, got m={m} |t|={t_total}"
        )));
    }
    let mut num = falling_factorial(m as i64, t_total as u32);
    for (&ni, &ti) in n.counts().iter().zip(t.counts()) {
        num *= falling_factorial(ni as i64, ti as u32);
        if num.is_zero() {
            return Ok(Rational::zero());
        }
    }
    Ok(Rational::new(
        num,
        falling_factorial(total as i64, t_total as u32),
    ))
}

/// Full-enumeration expectation matching [`hyper_falling_moment`].
pub fn brute_hyper_falling_moment(n: &CountVector, m: u64, t: &CountVector) -> Rational {
    let total = n.total();
    let denom = binomial(total as i64, m as i64);
    let mut acc = Rational::zero();
    for_each_vector(n.counts(), m, false, &mut |mv| {
        let mut term = multi_binomial(n.counts(), mv);
        if term.is_zero() {
            return;
        }
        for (&mi, &ti) in mv.iter().zip(t.counts()) {
            term *= falling_factorial(mi as i64, ti as u32);
            if term.is_zero() {
                return;
            }
        }
        acc += Rational::new(term, denom.clone());
    });
    acc
}

fn check_restricted_args(n: &CountVector, m: u64, indices: &[usize]) -> Result<()> {
    let total = n.total();
    if m == 0 || m > total {
        return Err(Error::Domain(format!(
            "restricted moment requires 1 <= m <= {total}, got m={m}"
        )));
    }
    for &j in indices {
        if j == 0 || j > n.len() {
            return Err(Error::Domain(format!(
                "type index {j} out of range 1..={}",
                n.len()
            )));
        }
    }
    Ok(())
}

/// `sum_{0 < m_vec <= n, |m_vec| = m} [C(n,m_vec)/C(n,m)] m_j (m_j + 1)` via
/// inclusion-exclusion over subsets `T` excluding `j`. Any term whose
/// `C(n - n_T, m)` factor vanishes is zero, evaluated before any division.
pub fn restricted_moment_tweak(n: &CountVector, m: u64, j: usize) -> Result<Rational> {
    check_restricted_args(n, m, &[j])?;
    Ok(restricted_rhs(n, m, &[j], |n_rem, nj, _| {
        // E[fall(m_j,2) + 2 m_j] over the hypergeometric on n - n_T.
        let num = falling_factorial(nj, 2) * falling_factorial(m as i64, 2);
        let first = if num.is_zero() {
            Rational::zero()
        } else {
            Rational::new(num, falling_factorial(n_rem, 2))
        };
        first + Rational::new(BigInt::from(2 * nj * m as i64), BigInt::from(n_rem))
    }))
}

pub fn brute_restricted_moment_tweak(n: &CountVector, m: u64, j: usize) -> Rational {
    brute_restricted(n, m, &mut |mv| {
        let mj = mv[j - 1] as i64;
        BigInt::from(mj * (mj + 1))
    })
}

/// `sum_{0 < m_vec <= n, |m_vec| = m} [C(n,m_vec)/C(n,m)] m_j m_k` via
/// inclusion-exclusion over subsets `T` excluding both `j` and `k`, with the
/// per-term weight `n_j n_k fall(m,2) / fall(n - n_T, 2)`.
pub fn restricted_moment_mixed(n: &CountVector, m: u64, j: usize, k: usize) -> Result<Rational> {
    if j == k {
        return Err(Error::Domain("mixed moment requires j != k".into()));
    }
    check_restricted_args(n, m, &[j, k])?;
    let nk = n.counts()[k - 1] as i64;
    Ok(restricted_rhs(n, m, &[j, k], |n_rem, nj, _| {
        let num = nj * nk * falling_factorial(m as i64, 2);
        if num.is_zero() {
            Rational::zero()
        } else {
            Rational::new(num, falling_factorial(n_rem, 2))
        }
    }))
}

pub fn brute_restricted_moment_mixed(n: &CountVector, m: u64, j: usize, k: usize) -> Rational {
    brute_restricted(n, m, &mut |mv| BigInt::from(mv[j - 1] * mv[k - 1]))
}

/// Shared inclusion-exclusion skeleton: sums `(-1)^|T| inner(n - n_T, n_j)
/// C(n - n_T, m) / C(n, m)` over subsets `T` of the observed types
/// excluding `excluded`, with the zero-binomial convention applied before
/// `inner` runs. Ranging `T` over observed types only matters when `n` has
/// zero entries: an unobserved type is always missing from the subsample,
/// so it is not an excludable event, and admitting it would cancel the sum
/// pairwise.
fn restricted_rhs(
    n: &CountVector,
    m: u64,
    excluded: &[usize],
    inner: impl Fn(i64, i64, &[u64]) -> Rational,
) -> Rational {
    let counts = n.counts();
    let l = counts.len();
    let total = n.total() as i64;
    let nj = counts[excluded[0] - 1] as i64;
    let denom = binomial(total, m as i64);
    let support_mask: u32 = (0..l).filter(|&i| counts[i] > 0).map(|i| 1 << i).sum();
    let mut acc = Rational::zero();
    for mask in 0u32..(1 << l) {
        if mask & !support_mask != 0 {
            continue;
        }
        if excluded.iter().any(|&e| mask & (1 << (e - 1)) != 0) {
            continue;
        }
        let n_t: u64 = (0..l)
            .filter(|&i| mask & (1 << i) != 0)
            .map(|i| counts[i])
            .sum();
        let n_rem = total - n_t as i64;
        let count = binomial(n_rem, m as i64);
        if count.is_zero() {
            continue;
        }
        let term = inner(n_rem, nj, counts) * Rational::new(count, denom.clone());
        if mask.count_ones() % 2 == 0 {
            acc += term;
        } else {
            acc -= term;
        }
    }
    acc
}

fn brute_restricted(n: &CountVector, m: u64, weight: &mut impl FnMut(&[u64]) -> BigInt) -> Rational {
    let total = n.total();
    let denom = binomial(total as i64, m as i64);
    let mut acc = Rational::zero();
    for_each_vector(n.counts(), m, true, &mut |mv| {
        let w = weight(mv);
        if w.is_zero() {
            return;
        }
        acc += Rational::new(multi_binomial(n.counts(), mv) * w, denom.clone());
    });
    acc
}

// ---------------------------------------------------------------------------
// Identity sweep driver (used by the `identities` CLI command and the
// acceptance suite).
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct IdentityReport {
    pub name: &'static str,
    pub cases: u64,
    pub failures: u64,
}

impl IdentityReport {
    pub fn passed(&self) -> bool {
        self.failures == 0
    }
}

/// Sweeps every closed-form identity against its brute-force companion in
/// exact rational arithmetic. `max` bounds the binomial-ratio grid and the
/// count-vector totals; the harmonic-flavoured identities run to `max + 2`.
pub fn run_identity_suite(max: u64) -> Vec<IdentityReport> {
    let mut reports = Vec::new();

    let mut cases = 0;
    let mut failures = 0;
    for a in 1..=max {
        for b in 1..=a {
            for x in 1..=max {
                for y in x..=max {
                    cases += 1;
                    if fact_ratio_sum(x, y, a, b).unwrap() != brute_fact_ratio_sum(x, y, a, b) {
                        failures += 1;
                    }
                }
            }
        }
    }
    reports.push(IdentityReport { name: "binomial-ratio sum", cases, failures });

    let hmax = max + 2;
    let (mut cases, mut failures) = (0, 0);
    for a in 1..=hmax {
        for b in 1..=hmax {
            cases += 1;
            if fact_comb_harmonic(a, b).unwrap() != brute_fact_comb_harmonic(a, b) {
                failures += 1;
            }
        }
    }
    reports.push(IdentityReport { name: "binomial-harmonic sum", cases, failures });

    let (mut cases, mut failures) = (0, 0);
    for a in 1..=hmax {
        for b in 1..=a {
            cases += 1;
            if fact_ratio2_sum(a, b).unwrap() != brute_fact_ratio2_sum(a, b) {
                failures += 1;
            }
        }
    }
    reports.push(IdentityReport { name: "shifted binomial-ratio sum", cases, failures });

    let (mut cases, mut failures) = (0, 0);
    let (mut rcases, mut rfailures) = (0, 0);
    let (mut mcases, mut mfailures) = (0, 0);
    for l in 1..=3usize {
        for total in 1..=max {
            let mut all = Vec::new();
            for_each_vector(&vec![total; l], total, false, &mut |nv| all.push(nv.to_vec()));
            // t vectors with |t| <= 3, shared by every n of this shape
            let mut tvecs = Vec::new();
            for t_total in 0..=3u64.min(total) {
                for_each_vector(&vec![t_total; l], t_total, false, &mut |tv| {
                    tvecs.push(tv.to_vec())
                });
            }
            for nv in all {
                let n = CountVector::new(nv).unwrap();
                for m in 0..=total {
                    for tv in &tvecs {
                        let t = CountVector::new(tv.clone()).unwrap();
                        cases += 1;
                        if hyper_falling_moment(&n, m, &t).unwrap()
                            != brute_hyper_falling_moment(&n, m, &t)
                        {
                            failures += 1;
                        }
                    }
                }
                // restricted second moments
                for m in 1..=total {
                    for j in 1..=l {
                        rcases += 1;
                        if restricted_moment_tweak(&n, m, j).unwrap()
                            != brute_restricted_moment_tweak(&n, m, j)
                        {
                            rfailures += 1;
                        }
                        for k in 1..=l {
                            if k == j {
                                continue;
                            }
                            mcases += 1;
                            if restricted_moment_mixed(&n, m, j, k).unwrap()
                                != brute_restricted_moment_mixed(&n, m, j, k)
                            {
                                mfailures += 1;
                            }
                        }
                    }
                }
            }
        }
    }
    reports.push(IdentityReport { name: "hypergeometric falling moment", cases, failures });
    reports.push(IdentityReport { name: "restricted second moment", cases: rcases, failures: rfailures });
    reports.push(IdentityReport { name: "restricted mixed moment", cases: mcases, failures: mfailures });

    reports
}

/// Converts an exact rational to the nearest double.
pub fn rational_to_f64(r: &Rational) -> f64 {
    r.to_f64().unwrap_or_else(|| {
        if r.is_negative() {
            f64::NEG_INFINITY
        } else {
            f64::INFINITY
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cv(counts: &[u64]) -> CountVector {
        CountVector::new(counts.to_vec()).unwrap()
    }

    #[test]
    fn factorial_powers() {
        assert_eq!(falling_factorial(7, 0), BigInt::from(1));
        assert_eq!(rising_factorial(7, 0), BigInt::from(1));
        assert_eq!(falling_factorial(5, 2), BigInt::from(20));
        assert_eq!(rising_factorial(2, 3), BigInt::from(24));
        assert_eq!(falling_factorial(1, 2), BigInt::from(0));
        assert_eq!(falling_factorial(-2, 2), BigInt::from(6));
    }

    #[test]
    fn harmonic_values() {
        assert_eq!(harmonic_rational(0), Rational::zero());
        assert_eq!(harmonic_rational(1), Rational::one());
        assert_eq!(harmonic_rational(4), ratio(25, 12));
    }

    #[test]
    fn harmonic_differences_and_float_table() {
        let mut prev = Rational::zero();
        for k in 1..=1000u32 {
            let cur = prev.clone() + ratio(1, k as i64);
            assert_eq!(cur.clone() - prev.clone(), ratio(1, k as i64));
            let f = harmonic_f64(k as usize);
            let exact = rational_to_f64(&cur);
            assert!(
                (f - exact).abs() <= 1e-14 * exact,
                "H_{k}: table {f} vs exact {exact}"
            );
            prev = cur;
        }
    }

    #[test]
    fn lambda_values() {
        assert_eq!(lambda_rational(&[5, 0]).unwrap(), Rational::one());
        assert_eq!(lambda_rational(&[2, 2]).unwrap(), ratio(1, 6));
        assert_eq!(lambda_rational(&[1, 1, 1]).unwrap(), ratio(1, 2));
        assert!(lambda_rational(&[0, 0]).is_err());
    }

    #[test]
    fn log_lambda_matches_rational() {
        for counts in [
            vec![5u64, 0, 0],
            vec![2, 2, 0],
            vec![20, 17, 13, 10],
            vec![58, 1, 1],
            vec![30, 15, 10, 5],
        ] {
            let exact = rational_to_f64(&lambda_rational(&counts).unwrap()).ln();
            let counts32: Vec<u32> = counts.iter().map(|&c| c as u32).collect();
            let log = log_lambda(&counts32).unwrap();
            assert!(
                (log - exact).abs() <= 1e-12 * exact.abs().max(1.0),
                "{counts:?}: {log} vs {exact}"
            );
        }
    }

    #[test]
    fn log_multinomial_values() {
        assert_eq!(log_multinomial(&[3, 0]), 0.0);
        assert!((log_multinomial(&[1, 1]) - 2.0f64.ln()).abs() < 1e-15);
        assert!((log_multinomial(&[2, 1, 1]) - 12.0f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn ratio_sum_examples() {
        assert_eq!(fact_ratio_sum(1, 2, 4, 2).unwrap(), ratio(2, 3));
        assert_eq!(fact_ratio_sum(4, 4, 4, 4).unwrap(), Rational::one());
        assert_eq!(fact_ratio_sum(1, 1, 3, 2).unwrap(), ratio(2, 3));
        assert!(fact_ratio_sum(2, 1, 4, 2).is_err());
        assert!(fact_ratio_sum(1, 2, 2, 3).is_err());
    }

    #[test]
    fn comb_harmonic_examples() {
        assert_eq!(fact_comb_harmonic(3, 1).unwrap(), ratio(5, 2));
        assert_eq!(fact_comb_harmonic(1, 1).unwrap(), Rational::zero());
        assert_eq!(fact_comb_harmonic(4, 2).unwrap(), ratio(7, 2));
    }

    #[test]
    fn ratio2_sum_examples() {
        assert_eq!(fact_ratio2_sum(2, 1).unwrap(), ratio(1, 4));
        assert_eq!(fact_ratio2_sum(4, 2).unwrap(), ratio(11, 36));
        // a = b collapses to H_{a+1} - 1
        for a in 1..=6 {
            let expect = harmonic_rational(a as u32 + 1) - Rational::one();
            assert_eq!(fact_ratio2_sum(a, a).unwrap(), expect);
        }
    }

    #[test]
    fn hyper_moment_examples() {
        assert_eq!(
            hyper_falling_moment(&cv(&[2, 2]), 2, &cv(&[1, 1])).unwrap(),
            ratio(2, 3)
        );
        assert_eq!(
            hyper_falling_moment(&cv(&[2, 2]), 2, &cv(&[0, 0])).unwrap(),
            Rational::one()
        );
        assert_eq!(
            hyper_falling_moment(&cv(&[3, 1]), 2, &cv(&[2, 0])).unwrap(),
            Rational::one()
        );
        assert!(hyper_falling_moment(&cv(&[2, 2]), 2, &cv(&[1])).is_err());
    }

    #[test]
    fn restricted_tweak_examples() {
        assert_eq!(
            restricted_moment_tweak(&cv(&[1, 1]), 2, 1).unwrap(),
            rational_int(2)
        );
        assert_eq!(
            restricted_moment_tweak(&cv(&[2, 1]), 2, 1).unwrap(),
            ratio(4, 3)
        );
        assert_eq!(
            restricted_moment_tweak(&cv(&[3, 2]), 3, 2).unwrap(),
            rational_int(3)
        );
    }

    #[test]
    fn restricted_mixed_examples() {
        assert_eq!(
            restricted_moment_mixed(&cv(&[1, 1]), 2, 1, 2).unwrap(),
            Rational::one()
        );
        assert_eq!(
            restricted_moment_mixed(&cv(&[2, 1, 1]), 2, 1, 2).unwrap(),
            Rational::zero()
        );
        assert_eq!(
            restricted_moment_mixed(&cv(&[2, 2, 1]), 3, 1, 2).unwrap(),
            ratio(2, 5)
        );
        assert!(restricted_moment_mixed(&cv(&[1, 1]), 2, 1, 1).is_err());
    }

    /// The mixed-moment identity is easy to get wrong in two ways: summing
    /// over subsets that exclude only `j`, and weighting by the summed-out
    /// sample counts instead of the population counts. That variant evaluates
    /// to 0 on n=(2,2,1), m=3 while the true restricted sum is 2/5.
    #[test]
    fn mixed_moment_single_exclusion_variant_fails() {
        let n = cv(&[2, 2, 1]);
        let (m, j, k) = (3u64, 1usize, 2usize);
        let counts = n.counts();
        let total = n.total() as i64;
        let nj = counts[j - 1] as i64;
        let nk = counts[k - 1] as i64;
        let denom = binomial(total, m as i64);
        let mut acc = Rational::zero();
        for mask in 0u32..(1 << counts.len()) {
            if mask & (1 << (j - 1)) != 0 {
                continue; // only j excluded
            }
            let n_t: u64 = (0..counts.len())
                .filter(|&i| mask & (1 << i) != 0)
                .map(|i| counts[i])
                .sum();
            let n_rem = total - n_t as i64;
            let count = binomial(n_rem, m as i64);
            if count.is_zero() {
                continue;
            }
            let num = nj * nk * falling_factorial(m as i64, 2);
            let term = Rational::new(num, falling_factorial(n_rem, 2))
                * Rational::new(count, denom.clone());
            if mask.count_ones() % 2 == 0 {
                acc += term;
            } else {
                acc -= term;
            }
        }
        let brute = brute_restricted_moment_mixed(&n, m, j, k);
        assert_eq!(brute, ratio(2, 5));
        assert_ne!(acc, brute, "single-exclusion variant should not match");
    }

    #[test]
    fn identity_suite_small() {
        for report in run_identity_suite(6) {
            assert!(report.passed(), "{}: {} failures", report.name, report.failures);
            assert!(report.cases > 0);
        }
    }
}
