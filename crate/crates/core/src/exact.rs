//! Exact sampling probabilities by solving the coalescent recursion
//! level by level.
//!
//! Configurations of equal total size couple to each other only through
//! same-size mutation moves, so each level is an independent linear system
//! whose right-hand side comes from the previous level's coalescence terms.
//! The per-state equation for a configuration `n` of size `m` is
//!
//! ```text
//! m (m - 1 + theta) q(n) = sum_i n_i (n_i - 1) q(n - e_i)
//!                        + theta sum_{i,j} P_ji n_i q(n - e_i + e_j)
//! ```
//!
//! with the `j = i` mutation terms moved onto the diagonal. The system is
//! solved matrix-free: a per-level stencil of neighbor ranks and
//! coefficients is built once, then swept Gauss-Seidel (or Jacobi in the
//! deterministic parallel mode) until the recursion residual drops below
//! the target. Every returned level is rescaled so its maximum entry is 1,
//! with the accumulated log factor kept separately; sampling probabilities
//! otherwise underflow doubles near sample size 170.

use rayon::prelude::*;

use crate::combinatorics::log_multinomial;
use crate::configspace::{count_configs, LevelIter, SampleConfig};
use crate::error::{Error, Result};
use crate::model::MutationModel;

/// All sampling probabilities for configurations of one total size, stored
/// against a shared natural-log scale factor: `q = value * exp(log_scale)`.
#[derive(Debug, Clone)]
pub struct LevelTable {
    size: u32,
    values: Vec<f64>,
    log_scale: f64,
}

impl LevelTable {
    pub fn size(&self) -> u32 {
        self.size
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn log_scale(&self) -> f64 {
        self.log_scale
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Natural log of the sampling probability at `rank`.
    pub fn log_q(&self, rank: u64) -> f64 {
        self.values[rank as usize].ln() + self.log_scale
    }
}

/// Sweep strategy for the same-level coupling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SolveMode {
    /// In-place sweeps in ascending rank order; single-threaded,
    /// bit-reproducible.
    #[default]
    GaussSeidel,
    /// Two-buffer sweeps, data-parallel over rank ranges; output bits do not
    /// depend on the worker count.
    Jacobi,
}

#[derive(Debug, Clone)]
pub struct SolverOptions {
    pub mode: SolveMode,
    /// Convergence target for the max relative recursion residual.
    pub residual_tol: f64,
    /// Sweep cap; `None` selects `10 m + 200` at level `m`.
    pub sweep_cap: Option<usize>,
    /// Table allocation budget in MiB; `None` reads `COALSAMP_MEM_BUDGET_MB`
    /// and falls back to 512.
    pub mem_budget_mb: Option<u64>,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            mode: SolveMode::default(),
            residual_tol: 1e-13,
            sweep_cap: None,
            mem_budget_mb: None,
        }
    }
}

impl SolverOptions {
    pub fn budget_bytes(&self) -> u64 {
        let mb = self.mem_budget_mb.unwrap_or_else(|| {
            std::env::var("COALSAMP_MEM_BUDGET_MB")
                .ok()
                .and_then(|v| v.parse().ok())
                .unwrap_or(512)
        });
        mb.saturating_mul(1 << 20)
    }
}

/// Boundary level: `q(e_i) = pi_i`.
pub fn level_one(model: &MutationModel) -> LevelTable {
    // rank order at m = 1 is e_1, e_2, ..., e_K
    LevelTable {
        size: 1,
        values: model.pi_slice().to_vec(),
        log_scale: 0.0,
    }
}

/// Per-level linear system in stencil form. `diag_full` keeps the raw
/// coefficient `m (m - 1 + theta)`; the mutation self-terms `theta P_ii n_i`
/// are kept separately so the recursion residual can be reported exactly as
/// written above.
struct LevelSystem {
    diag_full: f64,
    diag_mut: Vec<f64>,
    rhs: Vec<f64>,
    nbr_offset: Vec<u32>,
    nbr_rank: Vec<u32>,
    nbr_coeff: Vec<f64>,
}

fn build_system(model: &MutationModel, prev: &LevelTable, m: u32, states: usize) -> LevelSystem {
    let k = model.k();
    let theta = model.theta();
    let mut diag_mut = vec![0.0; states];
    let mut rhs = vec![0.0; states];
    let mut nbr_offset = Vec::with_capacity(states + 1);
    let mut nbr_rank = Vec::new();
    let mut nbr_coeff = Vec::new();
    nbr_offset.push(0u32);

    for (r, counts) in LevelIter::new(k, m).enumerate() {
        let mut dmut = 0.0;
        let mut b = 0.0;
        for i in 0..k {
            let ni = counts[i];
            if ni == 0 {
                continue;
            }
            dmut += theta * model.p(i, i) * f64::from(ni);
            if ni >= 2 {
                let mut child = counts.clone();
                child[i] -= 1;
                let child_rank = crate::configspace::rank(
                    &SampleConfig::new(child).expect("child config"),
                )
                .index;
                b += f64::from(ni) * f64::from(ni - 1) * prev.values[child_rank as usize];
            }
            for j in 0..k {
                if j == i {
                    continue;
                }
                let mut nb = counts.clone();
                nb[i] -= 1;
                nb[j] += 1;
                let nb_rank =
                    crate::configspace::rank(&SampleConfig::new(nb).expect("neighbor config"))
                        .index;
                nbr_rank.push(nb_rank as u32);
                nbr_coeff.push(theta * model.p(j, i) * f64::from(ni));
            }
        }
        diag_mut[r] = dmut;
        rhs[r] = b;
        nbr_offset.push(nbr_rank.len() as u32);
    }

    LevelSystem {
        diag_full: f64::from(m) * (f64::from(m) - 1.0 + theta),
        diag_mut,
        rhs,
        nbr_offset,
        nbr_rank,
        nbr_coeff,
    }
}

fn row_inflow(sys: &LevelSystem, r: usize, values: &[f64]) -> f64 {
    let lo = sys.nbr_offset[r] as usize;
    let hi = sys.nbr_offset[r + 1] as usize;
    let mut acc = 0.0;
    for t in lo..hi {
        acc += sys.nbr_coeff[t] * values[sys.nbr_rank[t] as usize];
    }
    acc
}

/// Max relative residual of the recursion over the level, with the `j = i`
/// mutation terms counted on the right-hand side as written.
fn system_residual(sys: &LevelSystem, values: &[f64]) -> f64 {
    (0..values.len())
        .into_par_iter()
        .map(|r| {
            let lhs = sys.diag_full * values[r];
            let rhs = sys.rhs[r] + sys.diag_mut[r] * values[r] + row_inflow(sys, r, values);
            (lhs - rhs).abs() / lhs.max(rhs).max(f64::MIN_POSITIVE)
        })
        .reduce(|| 0.0, f64::max)
}

/// Solves the level-`m` system given level `m - 1`. The diagonal
/// `m (m - 1 + theta) - theta sum_i P_ii n_i` dominates the off-diagonal
/// mutation mass at the mutation rates of interest, so the sweeps contract;
/// if they fail to reach the residual target within the cap a solver error
/// reports the achieved residual.
pub fn solve_level(model: &MutationModel, prev: &LevelTable, opts: &SolverOptions) -> Result<LevelTable> {
    let m = prev.size + 1;
    if model.theta() <= 0.0 {
        return Err(Error::Validation(
            "exact solve requires theta > 0 (at theta = 0 all polymorphic probabilities vanish)"
                .into(),
        ));
    }
    let states = count_configs(model.k(), m)? as usize;
    let sys = build_system(model, prev, m, states);

    // Pure-coalescence predictor: drop mutation terms entirely. Within
    // O(theta) of the solution, which keeps sweep counts low at small rates.
    let mut values: Vec<f64> = sys.rhs.iter().map(|&b| b / sys.diag_full).collect();
    let cap = opts.sweep_cap.unwrap_or(10 * m as usize + 200);
    let mut residual = f64::INFINITY;
    let mut scratch = match opts.mode {
        SolveMode::GaussSeidel => Vec::new(),
        SolveMode::Jacobi => vec![0.0; states],
    };

    for _ in 0..cap {
        match opts.mode {
            SolveMode::GaussSeidel => {
                for r in 0..states {
                    let inflow = row_inflow(&sys, r, &values);
                    values[r] = (sys.rhs[r] + inflow) / (sys.diag_full - sys.diag_mut[r]);
                }
            }
            SolveMode::Jacobi => {
                scratch
                    .par_iter_mut()
                    .enumerate()
                    .for_each(|(r, out)| {
                        let inflow = row_inflow(&sys, r, &values);
                        *out = (sys.rhs[r] + inflow) / (sys.diag_full - sys.diag_mut[r]);
                    });
                std::mem::swap(&mut values, &mut scratch);
            }
        }
        residual = system_residual(&sys, &values);
        if residual <= opts.residual_tol {
            let peak = values.iter().cloned().fold(0.0, f64::max);
            debug_assert!(peak > 0.0);
            let inv = 1.0 / peak;
            values.iter_mut().for_each(|v| *v *= inv);
            return Ok(LevelTable {
                size: m,
                values,
                log_scale: prev.log_scale + peak.ln(),
            });
        }
    }
    Err(Error::Solver {
        level: m,
        sweeps: cap,
        residual,
        target: opts.residual_tol,
    })
}

/// Recomputes the recursion residual of `cur` against `prev` from scratch,
/// outside the solver loop.
pub fn max_relative_residual(model: &MutationModel, prev: &LevelTable, cur: &LevelTable) -> f64 {
    let states = cur.values.len();
    let sys = build_system(model, prev, cur.size, states);
    // undo the rescaling applied after convergence
    let factor = (cur.log_scale - prev.log_scale).exp();
    let values: Vec<f64> = cur.values.iter().map(|&v| v * factor).collect();
    system_residual(&sys, &values)
}

/// Estimated bytes of value storage for levels `1..=n_max`.
fn table_bytes(k: usize, n_max: u32, streamed: bool) -> Result<u64> {
    let mut total = 0u64;
    let mut prev = 0u64;
    let mut worst_pair = 0u64;
    for m in 1..=n_max {
        let states = count_configs(k, m)?;
        let bytes = states
            .checked_mul(8)
            .ok_or_else(|| Error::Resource("level size overflows the byte budget".into()))?;
        worst_pair = worst_pair.max(prev + bytes);
        prev = bytes;
        total = total
            .checked_add(bytes)
            .ok_or_else(|| Error::Resource("table size overflows the byte budget".into()))?;
    }
    Ok(if streamed { worst_pair } else { total })
}

/// Builds and retains every level up to `n_max`.
pub fn exact_q_table(
    model: &MutationModel,
    n_max: u32,
    opts: &SolverOptions,
) -> Result<Vec<LevelTable>> {
    if n_max < 1 {
        return Err(Error::Domain("n_max must be at least 1".into()));
    }
    let bytes = table_bytes(model.k(), n_max, false)?;
    let budget = opts.budget_bytes();
    if bytes > budget {
        return Err(Error::Resource(format!(
            "retaining levels 1..={n_max} needs {bytes} bytes of value tables, budget is {budget} \
             (set COALSAMP_MEM_BUDGET_MB to raise it, or use the streaming mode)"
        )));
    }
    let mut levels = vec![level_one(model)];
    for _ in 2..=n_max {
        let next = solve_level(model, levels.last().unwrap(), opts)?;
        levels.push(next);
    }
    Ok(levels)
}

/// Streams levels `1..=n_max` through `visit`, keeping only two levels in
/// memory at a time.
pub fn exact_q_levels(
    model: &MutationModel,
    n_max: u32,
    opts: &SolverOptions,
    mut visit: impl FnMut(&LevelTable) -> Result<()>,
) -> Result<()> {
    if n_max < 1 {
        return Err(Error::Domain("n_max must be at least 1".into()));
    }
    let bytes = table_bytes(model.k(), n_max, true)?;
    let budget = opts.budget_bytes();
    if bytes > budget {
        return Err(Error::Resource(format!(
            "streaming to level {n_max} needs {bytes} bytes for two adjacent levels, budget is {budget}"
        )));
    }
    let mut cur = level_one(model);
    visit(&cur)?;
    for _ in 2..=n_max {
        cur = solve_level(model, &cur, opts)?;
        visit(&cur)?;
    }
    Ok(())
}

/// An exact sampling probability. `log_q` is always meaningful; the linear
/// value underflows doubles for large samples and is flagged when it does.
#[derive(Debug, Clone, Copy)]
pub struct QValue {
    pub log_q: f64,
    pub q: f64,
    pub underflow: bool,
}

/// Solves levels `1..=|config|` and returns the entry for `config`.
pub fn exact_q(model: &MutationModel, config: &SampleConfig) -> Result<QValue> {
    exact_q_opts(model, config, &SolverOptions::default())
}

pub fn exact_q_opts(
    model: &MutationModel,
    config: &SampleConfig,
    opts: &SolverOptions,
) -> Result<QValue> {
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
    let target = config.total();
    let want = crate::configspace::rank(config).index;
    let mut log_q = f64::NAN;
    exact_q_levels(model, target, opts, |level| {
        if level.size() == target {
            log_q = level.log_q(want);
        }
        Ok(())
    })?;
    let q = log_q.exp();
    Ok(QValue {
        log_q,
        q,
        underflow: log_q < f64::MIN_POSITIVE.ln(),
    })
}

/// Total unordered probability mass of a level:
/// `sum_{|n| = m} multinomial(n) q(n)`, which is 1 for every m.
pub fn level_unordered_mass(model: &MutationModel, level: &LevelTable) -> f64 {
    let k = model.k();
    let mut acc = 0.0;
    for (r, counts) in LevelIter::new(k, level.size()).enumerate() {
        acc += (log_multinomial(&counts) + level.values[r].ln() + level.log_scale).exp();
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::configspace::rank;
    use crate::model::MutationModel;

    fn flip(theta: f64) -> MutationModel {
        MutationModel::build(2, theta, vec![vec![0.0, 1.0], vec![1.0, 0.0]], None).unwrap()
    }

    fn cfg(counts: &[u32]) -> SampleConfig {
        SampleConfig::new(counts.to_vec()).unwrap()
    }

    #[test]
    fn flip_level_two_hand_solution() {
        for theta in [1e-3, 1e-2, 0.1, 1.0] {
            let model = flip(theta);
            let q11 = exact_q(&model, &cfg(&[1, 1])).unwrap().q;
            let q20 = exact_q(&model, &cfg(&[2, 0])).unwrap().q;
            let expect11 = theta / (2.0 * (1.0 + 2.0 * theta));
            let expect20 = (1.0 + theta) / (2.0 * (1.0 + 2.0 * theta));
            assert!(
                (q11 - expect11).abs() <= 1e-12 * expect11,
                "theta={theta}: q11={q11} expect={expect11}"
            );
            assert!(
                (q20 - expect20).abs() <= 1e-12 * expect20,
                "theta={theta}: q20={q20} expect={expect20}"
            );
        }
    }

    #[test]
    fn boundary_is_stationary() {
        let model = flip(0.01);
        let q = exact_q(&model, &cfg(&[1, 0])).unwrap();
        assert_eq!(q.q, 0.5);
    }

    #[test]
    fn level_two_mass_is_one() {
        let model = flip(0.37);
        let levels = exact_q_table(&model, 2, &SolverOptions::default()).unwrap();
        let mass = level_unordered_mass(&model, &levels[1]);
        assert!((mass - 1.0).abs() < 1e-12);
    }

    #[test]
    fn unordered_mass_stays_normalized() {
        let model = flip(0.01);
        exact_q_levels(&model, 30, &SolverOptions::default(), |level| {
            let mass = level_unordered_mass(&model, level);
            assert!(
                (mass - 1.0).abs() <= 1e-8,
                "level {}: mass {mass}",
                level.size()
            );
            Ok(())
        })
        .unwrap();
    }

    #[test]
    fn published_model_table_to_forty() {
        let model = crate::fixtures::primate_model(0.01);
        let levels = exact_q_table(&model, 40, &SolverOptions::default()).unwrap();
        for level in &levels {
            let mass = level_unordered_mass(&model, level);
            assert!(
                (mass - 1.0).abs() <= 1e-8,
                "level {}: mass {mass}",
                level.size()
            );
        }
        // spot value: the boundary entry for the second allele equals its
        // stationary mass; the published 0.185 is good to ~5.1e-4 (it was
        // rounded from the unrounded matrix estimate)
        let q_e2 = levels[0].log_q(rank(&cfg(&[0, 1, 0, 0])).index).exp();
        assert!((q_e2 - 0.18449646).abs() < 1e-8);
        assert!((q_e2 - 0.185).abs() < 6e-4);
    }

    #[test]
    fn residual_certified_independently() {
        let model = flip(0.01);
        let levels = exact_q_table(&model, 12, &SolverOptions::default()).unwrap();
        for w in levels.windows(2) {
            let res = max_relative_residual(&model, &w[0], &w[1]);
            assert!(res <= 1e-12, "level {}: residual {res:.3e}", w[1].size());
        }
    }

    #[test]
    fn jacobi_matches_gauss_seidel() {
        let model = flip(0.05);
        let gs = exact_q_table(&model, 10, &SolverOptions::default()).unwrap();
        let jac = exact_q_table(
            &model,
            10,
            &SolverOptions { mode: SolveMode::Jacobi, ..Default::default() },
        )
        .unwrap();
        for (a, b) in gs.iter().zip(&jac) {
            for (x, y) in a.values().iter().zip(b.values()) {
                let log_a = x.ln() + a.log_scale();
                let log_b = y.ln() + b.log_scale();
                assert!((log_a - log_b).abs() < 1e-11);
            }
        }
    }

    #[test]
    fn jacobi_deterministic_across_pool_sizes() {
        let model = flip(0.05);
        let opts = SolverOptions { mode: SolveMode::Jacobi, ..Default::default() };
        let run = |threads: usize| {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap();
            pool.install(|| exact_q_table(&model, 8, &opts).unwrap())
        };
        let one = run(1);
        let four = run(4);
        for (a, b) in one.iter().zip(&four) {
            assert_eq!(a.values(), b.values());
            assert_eq!(a.log_scale().to_bits(), b.log_scale().to_bits());
        }
    }

    #[test]
    fn symmetric_model_is_exchangeable() {
        let model = MutationModel::build(
            3,
            0.02,
            vec![
                vec![0.0, 0.5, 0.5],
                vec![0.5, 0.0, 0.5],
                vec![0.5, 0.5, 0.0],
            ],
            None,
        )
        .unwrap();
        let a = exact_q(&model, &cfg(&[3, 2, 1])).unwrap().log_q;
        for perm in [[2u32, 3, 1], [1, 3, 2], [2, 1, 3], [3, 1, 2], [1, 2, 3]] {
            let b = exact_q(&model, &cfg(&perm)).unwrap().log_q;
            assert!((a - b).abs() < 1e-12, "permutation {perm:?}");
        }
    }

    #[test]
    fn sweep_cap_reports_solver_error() {
        let model = flip(0.5);
        let level1 = level_one(&model);
        let opts = SolverOptions { sweep_cap: Some(1), ..Default::default() };
        match solve_level(&model, &level1, &opts) {
            Err(Error::Solver { level, residual, .. }) => {
                assert_eq!(level, 2);
                assert!(residual > 1e-13);
            }
            other => panic!("expected solver error, got {other:?}"),
        }
    }

    #[test]
    fn budget_refused_before_allocation() {
        let model = flip(0.01);
        let opts = SolverOptions { mem_budget_mb: Some(0), ..Default::default() };
        assert!(matches!(
            exact_q_table(&model, 10, &opts),
            Err(Error::Resource(_))
        ));
    }

    #[test]
    fn theta_zero_is_rejected() {
        let model = flip(0.0);
        assert!(exact_q(&model, &cfg(&[1, 1])).is_err());
    }

    #[test]
    fn rank_lookup_matches_level_iteration() {
        let model = flip(0.01);
        let levels = exact_q_table(&model, 5, &SolverOptions::default()).unwrap();
        let table = &levels[4];
        for counts in LevelIter::new(2, 5) {
            let c = SampleConfig::new(counts).unwrap();
            let r = rank(&c).index;
            assert!(table.log_q(r).is_finite());
        }
    }
}
