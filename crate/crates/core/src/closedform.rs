//! Leading-order coefficients `Q(n)` of the sampling probability's Taylor
//! expansion in the mutation rate, evaluated in closed form.
//!
//! The dispatch covers one to four observed alleles. Up to three observed
//! alleles the transition matrix only needs to be irreducible on the
//! observed set; with four it must also satisfy detailed balance there.
//! Each kernel ships a brute-force companion that evaluates its defining
//! sum over subsample configurations directly; the companions exist so the
//! closed forms can be swept against them and are far too slow for
//! production use.

use crate::combinatorics::{harmonic_f64, log_lambda};
use crate::configspace::SampleConfig;
use crate::error::{Error, Result};
use crate::model::MutationModel;

/// Leading coefficient `Q(n)` with its rescaled companion
/// `R(n) = Q(n) / lambda(n)`, which is a probability in `[0, 1]`.
#[derive(Debug, Clone, Copy)]
pub struct LeadingCoefficient {
    /// `Q(n)`; may be subnormal for very large samples.
    pub value: f64,
    /// `R(n) = Q(n) / lambda(n)`.
    pub rescaled: f64,
    /// The power of theta this coefficient multiplies: one less than the
    /// number of observed alleles.
    pub order: u32,
    /// `ln lambda(n)`, kept so callers can stay in the log domain.
    pub log_lambda: f64,
}

fn fall2(x: f64) -> f64 {
    x * (x - 1.0)
}

fn fall3(x: f64) -> f64 {
    x * (x - 1.0) * (x - 2.0)
}

fn harmonic_diff(n: u32, k: u32) -> f64 {
    harmonic_f64(n as usize) - harmonic_f64(k as usize)
}

fn check_kernel_indices(config: &SampleConfig, indices: &[usize], want_observed: usize) -> Result<()> {
    let support = config.support();
    if support.len() != want_observed {
        return Err(Error::Domain(format!(
            "kernel requires exactly {want_observed} observed alleles, configuration {config} has {}",
            support.len()
        )));
    }
    for (a, &i) in indices.iter().enumerate() {
        if !support.contains(i) {
            return Err(Error::Domain(format!(
                "allele {} is not observed in {config}",
                i + 1
            )));
        }
        if indices[a + 1..].contains(&i) {
            return Err(Error::Domain("kernel indices must be distinct".into()));
        }
    }
    Ok(())
}

/// Three-allele kernel weighting the `pi_j P_ji P_jk` tree shapes.
pub fn o3_alpha(config: &SampleConfig, i: usize, j: usize, k: usize) -> Result<f64> {
    check_kernel_indices(config, &[i, j, k], 3)?;
    Ok(o3_alpha_raw(config, i, j, k))
}

fn o3_alpha_raw(config: &SampleConfig, i: usize, j: usize, k: usize) -> f64 {
    let n = f64::from(config.total());
    let (ni, nj, nk) = (
        f64::from(config.count(i)),
        f64::from(config.count(j)),
        f64::from(config.count(k)),
    );
    fall2(nj) / (n * (nj + nk - 1.0)) - ni * nj / (n * (ni + nk))
        - 2.0 * ni * nj * nk / (n * fall2(nj + nk))
        + 2.0 * ni * nj * nk / fall3(nj + nk + 1.0)
            * harmonic_diff(config.total(), config.count(i) - 1)
}

/// Three-allele kernel weighting the `pi_k P_kj P_ji` tree shapes.
pub fn o3_beta(config: &SampleConfig, i: usize, j: usize, k: usize) -> Result<f64> {
    check_kernel_indices(config, &[i, j, k], 3)?;
    Ok(o3_beta_raw(config, i, j, k))
}

fn o3_beta_raw(config: &SampleConfig, i: usize, j: usize, k: usize) -> f64 {
    let n = f64::from(config.total());
    let (ni, nj, nk) = (
        f64::from(config.count(i)),
        f64::from(config.count(j)),
        f64::from(config.count(k)),
    );
    nj * nk / (n * (nj + nk - 1.0)) + 2.0 * ni * nj * nk / (n * fall2(nj + nk))
        - 2.0 * ni * nj * nk / fall3(nj + nk + 1.0)
            * harmonic_diff(config.total(), config.count(i) - 1)
}

/// Four-allele kernel weighting the star shapes `pi_i P_ij P_ik P_il`.
pub fn o4_gamma(config: &SampleConfig, i: usize, j: usize, k: usize, l: usize) -> Result<f64> {
    check_kernel_indices(config, &[i, j, k, l], 4)?;
    Ok(o4_gamma_raw(config, i, j, k, l))
}

fn o4_gamma_raw(config: &SampleConfig, i: usize, j: usize, k: usize, l: usize) -> f64 {
    let n = f64::from(config.total());
    let (ni, nj, nk, nl) = (
        f64::from(config.count(i)),
        f64::from(config.count(j)),
        f64::from(config.count(k)),
        f64::from(config.count(l)),
    );
    let braces = ((ni - 1.0) / (2.0 * (ni + nj + nk - 1.0)) - 2.0 * nj * nl / fall2(ni + nj + nk))
        + nl / (2.0 * (nj + nk + nl))
        - (nl * (ni - 1.0) / ((nk + nl) * (ni + nj - 1.0)) - 2.0 * nj * nl / fall2(ni + nj));
    ni / n * braces
        + 2.0 * ni * nj * nl / fall3(ni + nj + nk + 1.0)
            * harmonic_diff(config.total(), config.count(l) - 1)
        - 2.0 * ni * nj * nl / fall3(ni + nj + 1.0)
            * harmonic_diff(config.total(), config.count(k) + config.count(l) - 1)
}

/// Four-allele kernel weighting the chain shapes `pi_i P_ij P_ik P_jl`.
pub fn o4_delta(config: &SampleConfig, i: usize, j: usize, k: usize, l: usize) -> Result<f64> {
    check_kernel_indices(config, &[i, j, k, l], 4)?;
    Ok(o4_delta_raw(config, i, j, k, l))
}

fn o4_delta_raw(config: &SampleConfig, i: usize, j: usize, k: usize, l: usize) -> f64 {
    let n = f64::from(config.total());
    let (ni, nj, nk, nl) = (
        f64::from(config.count(i)),
        f64::from(config.count(j)),
        f64::from(config.count(k)),
        f64::from(config.count(l)),
    );
    let braces = (nj / (ni + nj + nk - 1.0) + 2.0 * nj * nl / fall2(ni + nj + nk))
        - (nj * nl / ((nk + nl) * (ni + nj - 1.0)) + 2.0 * nj * nl / fall2(ni + nj));
    ni / n * braces
        - 2.0 * ni * nj * nl / fall3(ni + nj + nk + 1.0)
            * harmonic_diff(config.total(), config.count(l) - 1)
        + 2.0 * ni * nj * nl / fall3(ni + nj + 1.0)
            * harmonic_diff(config.total(), config.count(k) + config.count(l) - 1)
}

// ---------------------------------------------------------------------------
// Brute-force companions: the defining sums over subsample configurations.
// ---------------------------------------------------------------------------

fn binom_f64(n: u32, k: u32) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    let mut acc = 1.0;
    for t in 1..=k {
        acc = acc * f64::from(n - k + t) / f64::from(t);
    }
    acc
}

/// Sums `weight(m_vec) * C(n, m_vec) / (C(n,m) m^2 (m-1))` over all
/// subsamples that are positive on the support and hold exactly one
/// individual of allele `singleton`.
fn defining_sum(
    config: &SampleConfig,
    singleton: usize,
    weight: impl Fn(&[u32]) -> f64,
) -> f64 {
    let support = config.support().members();
    let mut acc = 0.0;
    let mut sub = vec![0u32; config.k()];
    fn rec(
        support: &[usize],
        pos: usize,
        config: &SampleConfig,
        singleton: usize,
        sub: &mut Vec<u32>,
        acc: &mut f64,
        weight: &impl Fn(&[u32]) -> f64,
    ) {
        if pos == support.len() {
            let m: u32 = sub.iter().sum();
            let mut w = weight(sub);
            if w == 0.0 {
                return;
            }
            for &x in support {
                w *= binom_f64(config.count(x), sub[x]);
            }
            let mf = f64::from(m);
            *acc += w / (binom_f64(config.total(), m) * mf * mf * (mf - 1.0));
            return;
        }
        let x = support[pos];
        let range = if x == singleton { 1..=1 } else { 1..=config.count(x) };
        for v in range {
            sub[x] = v;
            rec(support, pos + 1, config, singleton, sub, acc, weight);
        }
        sub[x] = 0;
    }
    rec(&support, 0, config, singleton, &mut sub, &mut acc, &weight);
    acc
}

/// Defining double sum for [`o3_alpha`].
pub fn o3_alpha_brute(config: &SampleConfig, i: usize, j: usize, k: usize) -> Result<f64> {
    check_kernel_indices(config, &[i, j, k], 3)?;
    Ok(defining_sum(config, i, |m| {
        f64::from(m[j]) * f64::from(m[j] + 1)
    }))
}

/// Defining double sum for [`o3_beta`].
pub fn o3_beta_brute(config: &SampleConfig, i: usize, j: usize, k: usize) -> Result<f64> {
    check_kernel_indices(config, &[i, j, k], 3)?;
    Ok(defining_sum(config, i, |m| f64::from(m[j]) * f64::from(m[k])))
}

/// Defining double sum of the unsymmetrized star kernel; related to
/// [`o4_gamma`] by `(zeta(i,j,k,l) + zeta(i,k,j,l)) / 2 =
/// gamma(i,j,k,l) + gamma(i,k,j,l)`.
pub fn o4_zeta_brute(config: &SampleConfig, i: usize, j: usize, k: usize, l: usize) -> Result<f64> {
    check_kernel_indices(config, &[i, j, k, l], 4)?;
    Ok(defining_sum(config, l, |m| {
        f64::from(m[i]) * f64::from(m[i] + 1)
    }))
}

/// Defining double sum for [`o4_delta`].
pub fn o4_delta_brute(config: &SampleConfig, i: usize, j: usize, k: usize, l: usize) -> Result<f64> {
    check_kernel_indices(config, &[i, j, k, l], 4)?;
    Ok(defining_sum(config, l, |m| f64::from(m[i]) * f64::from(m[j])))
}

// ---------------------------------------------------------------------------
// Assembly and dispatch.
// ---------------------------------------------------------------------------

fn ensure_computable(model: &MutationModel, config: &SampleConfig) -> Result<usize> {
    if config.k() != model.k() {
        return Err(Error::Domain(format!(
            "configuration has {} alleles, model has {}",
            config.k(),
            model.k()
        )));
    }
    if config.total() == 0 {
        return Err(Error::Domain("configuration must contain at least one individual".into()));
    }
    let support = config.support();
    let observed = support.len();
    if observed > 4 {
        return Err(Error::Unsupported(format!(
            "no closed form for {observed} observed alleles (maximum is 4)"
        )));
    }
    if !model.is_irreducible_on(&support) {
        return Err(Error::Model(format!(
            "transition matrix is not irreducible on the observed alleles {support}"
        )));
    }
    if observed == 4 && !model.is_reversible_on(&support, model.reversibility_tol()) {
        // name the worst pair in the report
        let members = support.members();
        let mut worst = (0usize, 0usize, 0.0f64);
        for (a, &x) in members.iter().enumerate() {
            for &y in &members[a + 1..] {
                let fxy = model.pi(x) * model.p(x, y);
                let fyx = model.pi(y) * model.p(y, x);
                let rel = (fxy - fyx).abs() / fxy.max(fyx).max(1e-300);
                if rel > worst.2 {
                    worst = (x, y, rel);
                }
            }
        }
        return Err(Error::Model(format!(
            "four observed alleles need detailed balance on {support}: pair ({},{}) violates it \
             by {:.3e} (tolerance {:.1e})",
            worst.0 + 1,
            worst.1 + 1,
            worst.2,
            model.reversibility_tol()
        )));
    }
    Ok(observed)
}

/// `R(n)` assembled from the matching closed form. Preconditions are the
/// caller's responsibility; use [`r_leading`] for the checked entry point.
pub(crate) fn r_leading_unchecked(model: &MutationModel, config: &SampleConfig) -> f64 {
    let support = config.support().members();
    let n = f64::from(config.total());
    match support.len() {
        1 => model.pi(support[0]),
        2 => {
            let mut acc = 0.0;
            for &i in &support {
                for &j in &support {
                    if i != j {
                        acc += f64::from(config.count(j)) / n * model.pi(j) * model.p(j, i);
                    }
                }
            }
            acc
        }
        3 => {
            let mut acc = 0.0;
            for &i in &support {
                for &j in &support {
                    if j == i {
                        continue;
                    }
                    for &k in &support {
                        if k == i || k == j {
                            continue;
                        }
                        acc += model.pi(j)
                            * model.p(j, i)
                            * model.p(j, k)
                            * o3_alpha_raw(config, i, j, k)
                            + model.pi(k)
                                * model.p(k, j)
                                * model.p(j, i)
                                * o3_beta_raw(config, i, j, k);
                    }
                }
            }
            acc
        }
        4 => {
            let mut acc = 0.0;
            for perm in permutations4(&support) {
                let [i, j, k, l] = perm;
                acc += model.pi(i)
                    * model.p(i, j)
                    * model.p(i, k)
                    * (model.p(i, l) * o4_gamma_raw(config, i, j, k, l)
                        + model.p(j, l) * o4_delta_raw(config, i, j, k, l));
            }
            acc
        }
        _ => unreachable!("dispatch is gated to at most four observed alleles"),
    }
}

fn permutations4(s: &[usize]) -> Vec<[usize; 4]> {
    let mut out = Vec::with_capacity(24);
    for &i in s {
        for &j in s {
            if j == i {
                continue;
            }
            for &k in s {
                if k == i || k == j {
                    continue;
                }
                for &l in s {
                    if l != i && l != j && l != k {
                        out.push([i, j, k, l]);
                    }
                }
            }
        }
    }
    out
}

/// `R(n) = Q(n) / lambda(n)` via the closed forms, with precondition checks.
pub fn r_leading(model: &MutationModel, config: &SampleConfig) -> Result<f64> {
    ensure_computable(model, config)?;
    Ok(r_leading_unchecked(model, config))
}

/// Alternate four-allele assembly that folds the `j <-> k` symmetry of the
/// star kernel; kept as a cross-check for the plain transcription.
pub fn r_o4_symmetrized(model: &MutationModel, config: &SampleConfig) -> Result<f64> {
    let observed = ensure_computable(model, config)?;
    if observed != 4 {
        return Err(Error::Domain("symmetrized assembly applies to four observed alleles".into()));
    }
    let support = config.support().members();
    let mut acc = 0.0;
    for &i in &support {
        for &l in &support {
            if l == i {
                continue;
            }
            let rest: Vec<usize> = support.iter().copied().filter(|&x| x != i && x != l).collect();
            let (j, k) = (rest[0], rest[1]);
            acc += model.pi(i)
                * model.p(i, j)
                * model.p(i, k)
                * (model.p(i, l)
                    * (o4_gamma_raw(config, i, j, k, l) + o4_gamma_raw(config, i, k, j, l))
                    + model.p(j, l) * o4_delta_raw(config, i, j, k, l)
                    + model.p(k, l) * o4_delta_raw(config, i, k, j, l));
        }
    }
    Ok(acc)
}

/// Reversible-case three-allele formula: each observed allele in turn as the
/// interior vertex. Agrees with the general assembly whenever the model is
/// reversible on the observed alleles.
pub fn r_o3_reversible(model: &MutationModel, config: &SampleConfig) -> Result<f64> {
    let observed = ensure_computable(model, config)?;
    if observed != 3 {
        return Err(Error::Domain("this formula applies to three observed alleles".into()));
    }
    Ok(r_star_heuristic_unchecked(model, config))
}

/// The interior-vertex heuristic `sum_i (n_i/n) pi_i prod_{j != i} P_ij`
/// over observed alleles. Exact for up to three observed alleles under
/// reversibility (and for parent-independent mutation), but generally wrong
/// for four observed alleles; see the shipped counterexample fixture.
pub fn r_star_heuristic(model: &MutationModel, config: &SampleConfig) -> Result<f64> {
    ensure_computable(model, config)?;
    Ok(r_star_heuristic_unchecked(model, config))
}

fn r_star_heuristic_unchecked(model: &MutationModel, config: &SampleConfig) -> f64 {
    let support = config.support().members();
    let n = f64::from(config.total());
    let mut acc = 0.0;
    for &i in &support {
        let mut term = f64::from(config.count(i)) / n * model.pi(i);
        for &j in &support {
            if j != i {
                term *= model.p(i, j);
            }
        }
        acc += term;
    }
    acc
}

/// Leading coefficient `Q(n)` with its rescaled form and theta order.
pub fn q_leading(model: &MutationModel, config: &SampleConfig) -> Result<LeadingCoefficient> {
    let observed = ensure_computable(model, config)?;
    let rescaled = r_leading_unchecked(model, config);
    let log_lambda = log_lambda(config.counts())?;
    Ok(LeadingCoefficient {
        value: log_lambda.exp() * rescaled,
        rescaled,
        order: observed as u32 - 1,
        log_lambda,
    })
}

/// The leading-order approximation `theta^{|O|-1} Q(n)` in log and linear
/// form. At `theta = 0` the approximation is `Q(n)` itself for monomorphic
/// samples and exactly zero otherwise.
#[derive(Debug, Clone, Copy)]
pub struct ApproxValue {
    pub log_q: f64,
    pub q: f64,
    pub leading: LeadingCoefficient,
}

pub fn q_approx(model: &MutationModel, config: &SampleConfig) -> Result<ApproxValue> {
    let leading = q_leading(model, config)?;
    let theta = model.theta();
    let log_q = if theta == 0.0 {
        if leading.order == 0 {
            leading.rescaled.ln() // lambda = 1 for monomorphic samples
        } else {
            f64::NEG_INFINITY
        }
    } else {
        f64::from(leading.order) * theta.ln() + leading.log_lambda + leading.rescaled.ln()
    };
    Ok(ApproxValue { log_q, q: log_q.exp(), leading })
}
