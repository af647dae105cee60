//! Accuracy study of the leading-order approximation: per-configuration
//! relative error, its probability-weighted mean over each sample size, and
//! the worst case, swept over sample sizes and mutation rates.
//!
//! All error arithmetic stays in the log domain: both the exact probability
//! and its approximation underflow linear doubles long before their ratio
//! becomes ill-conditioned, so `|q - q_approx|` is formed as an exp-log-sum
//! anchored at the larger log value.

use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::closedform::{self, q_approx};
use crate::combinatorics::{log_lambda, log_multinomial};
use crate::configspace::{count_configs, unrank, SampleConfig};
use crate::error::{Error, Result};
use crate::exact::{exact_q, exact_q_levels, LevelTable, SolverOptions};
use crate::model::{AlleleSet, MutationModel};

/// Approximation quality at one `(theta, n)` pair.
#[derive(Debug, Clone)]
pub struct ErrorReport {
    pub theta: f64,
    pub n: u32,
    /// Probability-weighted mean relative error over configurations of size `n`.
    pub ex_err: f64,
    /// Maximum relative error over configurations of size `n`.
    pub worst_err: f64,
    /// A configuration attaining `worst_err` (lowest rank on ties).
    pub worst_config: SampleConfig,
}

/// Total unordered probability mass seen at one `(theta, n)` pair; equals 1
/// up to solver tolerance and certifies that `ex_err` is a genuine
/// expectation.
#[derive(Debug, Clone, Copy)]
pub struct LevelMass {
    pub theta: f64,
    pub n: u32,
    pub mass: f64,
}

#[derive(Debug, Clone)]
pub struct SweepOutput {
    pub reports: Vec<ErrorReport>,
    pub masses: Vec<LevelMass>,
}

/// `|q(n) - q_approx(n)| / q(n)` for a single configuration.
pub fn relative_error(model: &MutationModel, config: &SampleConfig) -> Result<f64> {
    let exact = exact_q(model, config)?;
    let approx = q_approx(model, config)?;
    if !exact.log_q.is_finite() {
        return Err(Error::Singular(format!(
            "exact probability of {config} vanished; the model is not ergodic"
        )));
    }
    Ok((approx.log_q - exact.log_q).exp_m1().abs())
}

/// Per-support-set go/no-go map for the closed forms, computed once per
/// model and shared across rates: the gates depend only on `P` and `pi`.
fn build_gates(model: &MutationModel) -> Vec<Option<String>> {
    let k = model.k();
    (0u32..(1 << k))
        .map(|mask| {
            if mask == 0 {
                return Some("empty support".to_string());
            }
            let s = AlleleSet::from_mask(mask);
            if s.len() > 4 {
                return Some(format!(
                    "no closed form for {} observed alleles (maximum is 4)",
                    s.len()
                ));
            }
            if !model.is_irreducible_on(&s) {
                return Some(format!(
                    "transition matrix is not irreducible on the observed alleles {s}"
                ));
            }
            if s.len() == 4 && !model.is_reversible_on(&s, model.reversibility_tol()) {
                return Some(format!(
                    "four observed alleles need detailed balance on {s} \
                     (residual {:.3e}, tolerance {:.1e})",
                    model.detailed_balance_residual_on(&s),
                    model.reversibility_tol()
                ));
            }
            None
        })
        .collect()
}

struct ChunkStat {
    ex: f64,
    mass: f64,
    worst: f64,
    worst_rank: u64,
    gate_failure: Option<String>,
}

const CHUNK: u64 = 4096;

fn scan_level(
    model: &MutationModel,
    level: &LevelTable,
    gates: &[Option<String>],
) -> Result<(f64, f64, f64, u64)> {
    let k = model.k();
    let m = level.size();
    let states = count_configs(k, m)?;
    let theta = model.theta();
    let chunks: u64 = states.div_ceil(CHUNK);
    let stats: Vec<ChunkStat> = (0..chunks)
        .into_par_iter()
        .map(|chunk| {
            let lo = chunk * CHUNK;
            let hi = (lo + CHUNK).min(states);
            let mut counts = unrank(k, m, lo).expect("chunk start").counts().to_vec();
            let mut stat = ChunkStat {
                ex: 0.0,
                mass: 0.0,
                worst: -1.0,
                worst_rank: lo,
                gate_failure: None,
            };
            for r in lo..hi {
                let support_mask = counts
                    .iter()
                    .enumerate()
                    .fold(0u32, |acc, (i, &c)| if c > 0 { acc | (1 << i) } else { acc });
                if let Some(msg) = &gates[support_mask as usize] {
                    stat.gate_failure = Some(format!("at configuration rank {r}: {msg}"));
                    return stat;
                }
                let config = SampleConfig::new(counts.clone()).expect("level config");
                let order = config.observed_count() as u32 - 1;
                let rescaled = closedform::r_leading_unchecked(model, &config);
                let log_qa = f64::from(order) * theta.ln()
                    + log_lambda(&counts).expect("nonempty config")
                    + rescaled.ln();
                let log_q = level.log_q(r);
                let err = (log_qa - log_q).exp_m1().abs();
                let p = (log_multinomial(&counts) + log_q).exp();
                stat.ex += p * err;
                stat.mass += p;
                if err > stat.worst {
                    stat.worst = err;
                    stat.worst_rank = r;
                }
                if r + 1 < hi {
                    descending_lex_successor(&mut counts);
                }
            }
            stat
        })
        .collect();

    let mut ex = 0.0;
    let mut mass = 0.0;
    let mut worst = -1.0;
    let mut worst_rank = 0u64;
    for stat in stats {
        if let Some(msg) = stat.gate_failure {
            return Err(Error::Model(format!("sweep aborted {msg}")));
        }
        ex += stat.ex;
        mass += stat.mass;
        if stat.worst > worst {
            worst = stat.worst;
            worst_rank = stat.worst_rank;
        }
    }
    Ok((ex, mass, worst.max(0.0), worst_rank))
}

fn descending_lex_successor(counts: &mut [u32]) {
    let k = counts.len();
    let p = (0..k - 1).rev().find(|&i| counts[i] > 0).expect("successor exists");
    let tail: u32 = counts[p + 1..].iter().sum();
    counts[p] -= 1;
    counts[p + 1..].iter_mut().for_each(|c| *c = 0);
    counts[p + 1] = tail + 1;
}

/// Runs the error study for each rate in `thetas` over sample sizes
/// `n_min..=n_max`. Exact tables are built once per rate and streamed two
/// levels at a time; each level is scanned once for the expected error, the
/// worst error, and the probability-mass check.
pub fn sweep_errors_detailed(
    model: &MutationModel,
    thetas: &[f64],
    n_min: u32,
    n_max: u32,
    opts: &SolverOptions,
) -> Result<SweepOutput> {
    if thetas.is_empty() {
        return Err(Error::Validation("no rates supplied".into()));
    }
    if thetas.iter().any(|&t| !t.is_finite() || t <= 0.0) {
        return Err(Error::Validation("sweep rates must be positive and finite".into()));
    }
    if n_min < 1 || n_min > n_max {
        return Err(Error::Validation(format!(
            "need 1 <= n_min <= n_max, got {n_min}..{n_max}"
        )));
    }
    let gates = build_gates(model);
    let mut reports = Vec::new();
    let mut masses = Vec::new();
    for &theta in thetas {
        let model_t = model.with_theta(theta);
        exact_q_levels(&model_t, n_max, opts, |level| {
            if level.size() < n_min {
                return Ok(());
            }
            let (ex, mass, worst, worst_rank) = scan_level(&model_t, level, &gates)?;
            reports.push(ErrorReport {
                theta,
                n: level.size(),
                ex_err: ex,
                worst_err: worst,
                worst_config: unrank(model.k(), level.size(), worst_rank)?,
            });
            masses.push(LevelMass { theta, n: level.size(), mass });
            Ok(())
        })?;
    }
    Ok(SweepOutput { reports, masses })
}

pub fn sweep_errors(
    model: &MutationModel,
    thetas: &[f64],
    n_min: u32,
    n_max: u32,
    opts: &SolverOptions,
) -> Result<Vec<ErrorReport>> {
    Ok(sweep_errors_detailed(model, thetas, n_min, n_max, opts)?.reports)
}

/// Writes `theta,n,ex_err,worst_err,worst_config` rows; the configuration
/// column is quoted since it contains commas.
pub fn emit_csv(reports: &[ErrorReport], path: impl AsRef<Path>) -> Result<()> {
    if reports.is_empty() {
        return Err(Error::Validation("refusing to write an empty report list".into()));
    }
    let mut out = std::io::BufWriter::new(std::fs::File::create(path.as_ref())?);
    writeln!(out, "theta,n,ex_err,worst_err,worst_config")?;
    for r in reports {
        writeln!(
            out,
            "{},{},{},{},\"{}\"",
            r.theta, r.n, r.ex_err, r.worst_err, r.worst_config
        )?;
    }
    Ok(())
}

fn theta_series(reports: &[ErrorReport]) -> Vec<(f64, Vec<&ErrorReport>)> {
    let mut series: Vec<(f64, Vec<&ErrorReport>)> = Vec::new();
    for r in reports {
        match series.iter_mut().find(|(t, _)| *t == r.theta) {
            Some((_, v)) => v.push(r),
            None => series.push((r.theta, vec![r])),
        }
    }
    series
}

/// Writes one `n,ex_err,worst_err` series file per rate, named
/// `<stem>.theta-<rate>.csv`. Returns the created paths.
pub fn emit_plot_data(reports: &[ErrorReport], stem: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    if reports.is_empty() {
        return Err(Error::Validation("refusing to write an empty report list".into()));
    }
    let stem = stem.as_ref();
    let mut written = Vec::new();
    for (theta, rows) in theta_series(reports) {
        let mut path = stem.as_os_str().to_owned();
        path.push(format!(".theta-{theta}.csv"));
        let path = PathBuf::from(path);
        let mut out = std::io::BufWriter::new(std::fs::File::create(&path)?);
        writeln!(out, "n,ex_err,worst_err")?;
        for r in rows {
            writeln!(out, "{},{},{}", r.n, r.ex_err, r.worst_err)?;
        }
        written.push(path);
    }
    Ok(written)
}

const SVG_PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

/// Renders a self-contained two-panel line chart (expected and worst-case
/// relative error against sample size, log-scaled y) with one line per rate.
pub fn emit_svg(reports: &[ErrorReport], path: impl AsRef<Path>) -> Result<()> {
    if reports.is_empty() {
        return Err(Error::Validation("refusing to plot an empty report list".into()));
    }
    let series = theta_series(reports);
    let n_lo = reports.iter().map(|r| r.n).min().unwrap() as f64;
    let n_hi = reports.iter().map(|r| r.n).max().unwrap() as f64;
    let mut y_lo = f64::INFINITY;
    let mut y_hi = f64::NEG_INFINITY;
    for r in reports {
        for v in [r.ex_err, r.worst_err] {
            if v > 0.0 {
                y_lo = y_lo.min(v.log10());
                y_hi = y_hi.max(v.log10());
            }
        }
    }
    if !y_lo.is_finite() {
        return Err(Error::Validation("no positive errors to plot".into()));
    }
    y_lo = y_lo.floor();
    y_hi = y_hi.ceil().max(y_lo + 1.0);

    let (pw, ph, margin, gap) = (420.0, 320.0, 52.0, 40.0);
    let width = 2.0 * pw + 2.0 * margin + gap;
    let height = ph + 2.0 * margin;
    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" \
         viewBox=\"0 0 {width} {height}\" font-family=\"sans-serif\" font-size=\"12\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
    ));
    for (panel, (title, pick)) in [
        ("expected relative error", 0usize),
        ("worst-case relative error", 1usize),
    ]
    .iter()
    .enumerate()
    .map(|(i, &(t, p))| (i, (t, p)))
    {
        let x0 = margin + panel as f64 * (pw + gap);
        let y0 = margin;
        let sx = |n: f64| x0 + (n - n_lo) / (n_hi - n_lo).max(1.0) * pw;
        let sy = |v: f64| y0 + ph - (v.log10() - y_lo) / (y_hi - y_lo) * ph;
        svg.push_str(&format!(
            "<rect x=\"{x0}\" y=\"{y0}\" width=\"{pw}\" height=\"{ph}\" fill=\"none\" stroke=\"#444\"/>\n\
             <text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{title}</text>\n",
            x0 + pw / 2.0,
            y0 - 10.0
        ));
        let mut dec = y_lo;
        while dec <= y_hi {
            let y = sy(10f64.powf(dec));
            svg.push_str(&format!(
                "<line x1=\"{x0}\" y1=\"{y}\" x2=\"{}\" y2=\"{y}\" stroke=\"#ddd\"/>\n\
                 <text x=\"{}\" y=\"{}\" text-anchor=\"end\">1e{dec:.0}</text>\n",
                x0 + pw,
                x0 - 6.0,
                y + 4.0
            ));
            dec += 1.0;
        }
        for tick in 0..=4 {
            let n = n_lo + (n_hi - n_lo) * tick as f64 / 4.0;
            svg.push_str(&format!(
                "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{:.0}</text>\n",
                sx(n),
                y0 + ph + 16.0,
                n
            ));
        }
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">sample size n</text>\n",
            x0 + pw / 2.0,
            y0 + ph + 34.0
        ));
        for (s, (theta, rows)) in series.iter().enumerate() {
            let color = SVG_PALETTE[s % SVG_PALETTE.len()];
            let pts: Vec<String> = rows
                .iter()
                .filter(|r| [r.ex_err, r.worst_err][pick] > 0.0)
                .map(|r| format!("{:.2},{:.2}", sx(r.n as f64), sy([r.ex_err, r.worst_err][pick])))
                .collect();
            svg.push_str(&format!(
                "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.6\"/>\n",
                pts.join(" ")
            ));
            if panel == 0 {
                let ly = y0 + 16.0 + 16.0 * s as f64;
                svg.push_str(&format!(
                    "<line x1=\"{}\" y1=\"{ly}\" x2=\"{}\" y2=\"{ly}\" stroke=\"{color}\" stroke-width=\"1.6\"/>\n\
                     <text x=\"{}\" y=\"{}\">theta = {theta}</text>\n",
                    x0 + 10.0,
                    x0 + 34.0,
                    x0 + 40.0,
                    ly + 4.0
                ));
            }
        }
    }
    svg.push_str("</svg>\n");
    std::fs::write(path.as_ref(), svg)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    fn cfg(counts: &[u32]) -> SampleConfig {
        SampleConfig::new(counts.to_vec()).unwrap()
    }

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
    }

    #[test]
    fn relative_error_hand_values() {
        let theta = 0.01;
        let model = fixtures::flip_model(theta);
        let e11 = relative_error(&model, &cfg(&[1, 1])).unwrap();
        assert!(rel(e11, 2.0 * theta) < 1e-10, "{e11}");
        let e20 = relative_error(&model, &cfg(&[2, 0])).unwrap();
        assert!(rel(e20, theta / (1.0 + theta)) < 1e-10, "{e20}");
        let boundary = relative_error(&model, &cfg(&[1, 0])).unwrap();
        assert_eq!(boundary, 0.0);
    }

    #[test]
    fn flip_sweep_level_two() {
        let theta = 0.01;
        let model = fixtures::flip_model(theta);
        let out =
            sweep_errors_detailed(&model, &[theta], 2, 2, &SolverOptions::default()).unwrap();
        assert_eq!(out.reports.len(), 1);
        let r = &out.reports[0];
        assert!(rel(r.ex_err, theta) < 1e-10);
        assert!(rel(r.worst_err, 2.0 * theta) < 1e-10);
        assert_eq!(r.worst_config, cfg(&[1, 1]));
        assert!((out.masses[0].mass - 1.0).abs() < 1e-12);
    }

    #[test]
    fn boundary_level_has_zero_error() {
        let model = fixtures::flip_model(0.01);
        let reports = sweep_errors(&model, &[0.01], 1, 1, &SolverOptions::default()).unwrap();
        assert_eq!(reports[0].ex_err, 0.0);
        assert_eq!(reports[0].worst_err, 0.0);
    }

    #[test]
    fn expected_error_never_exceeds_worst() {
        let model = fixtures::primate_model(0.01);
        let reports = sweep_errors(&model, &[1e-2], 2, 12, &SolverOptions::default()).unwrap();
        for r in &reports {
            assert!(r.ex_err <= r.worst_err + 1e-15, "n={}", r.n);
            assert_eq!(r.worst_config.total(), r.n);
        }
    }

    #[test]
    fn nonreversible_model_aborts_at_four_observed() {
        let rows = vec![
            vec![0.0, 0.8, 0.1, 0.1],
            vec![0.1, 0.0, 0.8, 0.1],
            vec![0.1, 0.1, 0.0, 0.8],
            vec![0.8, 0.1, 0.1, 0.0],
        ];
        let cyclic = crate::model::MutationModel::build(4, 0.01, rows, None).unwrap();
        match sweep_errors(&cyclic, &[1e-2], 2, 4, &SolverOptions::default()) {
            Err(Error::Model(msg)) => assert!(msg.contains("detailed balance"), "{msg}"),
            other => panic!("expected abort, got {other:?}"),
        }
    }

    #[test]
    fn csv_format() {
        let model = fixtures::flip_model(0.01);
        let reports = sweep_errors(&model, &[0.01], 2, 2, &SolverOptions::default()).unwrap();
        let dir = std::env::temp_dir().join(format!("coalsamp-csv-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("errors.csv");
        emit_csv(&reports, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "theta,n,ex_err,worst_err,worst_config");
        let row = lines.next().unwrap();
        let fields: Vec<&str> = row.split(',').collect();
        assert_eq!(fields[0], "0.01");
        assert_eq!(fields[1], "2");
        let ex: f64 = fields[2].parse().unwrap();
        let worst: f64 = fields[3].parse().unwrap();
        assert!(rel(ex, 0.01) < 1e-10);
        assert!(rel(worst, 0.02) < 1e-10);
        assert_eq!(&row[row.len() - 5..], "\"1,1\"");
        std::fs::remove_dir_all(&dir).ok();

        assert!(matches!(emit_csv(&[], "/tmp/never.csv"), Err(Error::Validation(_))));
    }

    #[test]
    fn plot_series_share_the_sample_grid() {
        let model = fixtures::flip_model(0.01);
        let reports =
            sweep_errors(&model, &[1e-3, 5e-3, 1e-2], 2, 6, &SolverOptions::default()).unwrap();
        let dir = std::env::temp_dir().join(format!("coalsamp-plot-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let paths = emit_plot_data(&reports, dir.join("errors")).unwrap();
        assert_eq!(paths.len(), 3);
        let grids: Vec<Vec<String>> = paths
            .iter()
            .map(|p| {
                std::fs::read_to_string(p)
                    .unwrap()
                    .lines()
                    .skip(1)
                    .map(|l| l.split(',').next().unwrap().to_string())
                    .collect()
            })
            .collect();
        assert_eq!(grids[0], grids[1]);
        assert_eq!(grids[1], grids[2]);
        let svg_path = dir.join("errors.svg");
        emit_svg(&reports, &svg_path).unwrap();
        let svg = std::fs::read_to_string(&svg_path).unwrap();
        assert!(svg.starts_with("<svg"));
        assert!(svg.contains("polyline"));
        std::fs::remove_dir_all(&dir).ok();
    }
}
