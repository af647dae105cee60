//! Command-line front end: exact solves, closed-form approximations, the
//! oracle recursions, urn Monte Carlo, the identity sweeps, and the
//! approximation-error study.
//!
//! Exit codes: 0 on success, 3 when the iterative solver fails to
//! converge, 2 for every other error (validation, domain, model, I/O).

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use num::ToPrimitive;

use coalsamp::closedform;
use coalsamp::combinatorics::{rational_to_f64, run_identity_suite};
use coalsamp::configspace::SampleConfig;
use coalsamp::error::Error;
use coalsamp::exact::{exact_q, exact_q_levels, SolverOptions};
use coalsamp::harness::{emit_csv, emit_plot_data, emit_svg, sweep_errors_detailed};
use coalsamp::model::{load_model, MutationModel};
use coalsamp::oracle::{self, RMethod, RTable};
use coalsamp::urn::{f_p, mc_estimate_r, tree_distribution};

#[derive(Parser)]
#[command(
    name = "coalsamp",
    version,
    about = "One-locus coalescent sampling probabilities under finite-alleles recurrent mutation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Exact sampling probability of one configuration.
    Qexact {
        #[arg(long)]
        model: PathBuf,
        /// Comma-separated per-allele counts, e.g. 2,1,1,0.
        #[arg(long)]
        config: SampleConfig,
    },
    /// Exact probabilities for every configuration up to a total size,
    /// written as CSV (size, rank, config, log_q).
    Qtable {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        nmax: u32,
        #[arg(long)]
        out: PathBuf,
    },
    /// Leading-order approximation of one configuration.
    Qapprox {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        config: SampleConfig,
    },
    /// Ground-truth R(n) by direct recursion.
    Oracle {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        config: SampleConfig,
        /// Evaluate in exact rational arithmetic over the binary lift of
        /// the model entries.
        #[arg(long)]
        rational: bool,
        #[arg(long, value_parser = ["dp", "subsample"], default_value = "dp")]
        method: String,
    },
    /// Monte Carlo estimate of R(n) from the urn process.
    Mc {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        config: SampleConfig,
        #[arg(long)]
        samples: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Also print the empirical tree distribution.
        #[arg(long)]
        trees: bool,
    },
    /// Expected and worst-case relative error of the approximation over a
    /// range of sample sizes.
    Sweep {
        #[arg(long)]
        model: PathBuf,
        /// Comma-separated mutation rates.
        #[arg(long, value_delimiter = ',', required = true)]
        theta: Vec<f64>,
        #[arg(long, default_value_t = 2)]
        nmin: u32,
        #[arg(long, default_value_t = 60)]
        nmax: u32,
        #[arg(long)]
        out: PathBuf,
        /// Optional self-contained SVG chart.
        #[arg(long)]
        svg: Option<PathBuf>,
        /// Optional stem for per-rate series files.
        #[arg(long)]
        series: Option<PathBuf>,
    },
    /// Sweep every combinatorial identity against its brute-force
    /// companion in exact rational arithmetic.
    Identities {
        #[arg(long, default_value_t = 8)]
        max: u64,
    },
    /// Stationary distribution and reversibility diagnostics of a model.
    Stationary {
        #[arg(long)]
        model: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            match err {
                Error::Solver { .. } => ExitCode::from(3),
                _ => ExitCode::from(2),
            }
        }
    }
}

fn check_dims(model: &MutationModel, config: &SampleConfig) -> Result<(), Error> {
    if config.k() != model.k() {
        return Err(Error::Validation(format!(
            "configuration has {} alleles but the model has {}",
            config.k(),
            model.k()
        )));
    }
    Ok(())
}

fn run(command: Command) -> Result<(), Error> {
    match command {
        Command::Qexact { model, config } => {
            let model = load_model(model)?;
            check_dims(&model, &config)?;
            let q = exact_q(&model, &config)?;
            println!("config {config}");
            println!("log10_q {}", q.log_q / std::f64::consts::LN_10);
            if q.underflow {
                println!("q underflow");
            } else {
                println!("q {}", q.q);
            }
        }
        Command::Qtable { model, nmax, out } => {
            let model = load_model(model)?;
            let mut writer = std::io::BufWriter::new(std::fs::File::create(&out)?);
            use std::io::Write;
            writeln!(writer, "size,rank,config,log_q")?;
            exact_q_levels(&model, nmax, &SolverOptions::default(), |level| {
                for (r, counts) in
                    coalsamp::configspace::LevelIter::new(model.k(), level.size()).enumerate()
                {
                    let c = SampleConfig::new(counts).expect("level config");
                    writeln!(writer, "{},{},\"{}\",{}", level.size(), r, c, level.log_q(r as u64))?;
                }
                Ok(())
            })?;
            println!("wrote levels 1..={nmax} to {}", out.display());
        }
        Command::Qapprox { model, config } => {
            let model = load_model(model)?;
            check_dims(&model, &config)?;
            let approx = closedform::q_approx(&model, &config)?;
            println!("config {config}");
            println!("observed {}", approx.leading.order + 1);
            println!("Q {}", approx.leading.value);
            println!("R {}", approx.leading.rescaled);
            println!("log10_q_approx {}", approx.log_q / std::f64::consts::LN_10);
        }
        Command::Oracle { model, config, rational, method } => {
            let model = load_model(model)?;
            check_dims(&model, &config)?;
            let method = if method == "dp" { RMethod::Descent } else { RMethod::Subsample };
            if rational {
                let mut table = RTable::from_model_lifted(&model, method);
                let r = table.evaluate(&config)?;
                let counts: Vec<u64> = config.counts().iter().map(|&c| u64::from(c)).collect();
                let q = coalsamp::combinatorics::lambda_rational(&counts)? * r.clone();
                println!("config {config}");
                println!("R {r}");
                println!("R_approx {}", rational_to_f64(&r));
                println!("Q {q}");
                println!("Q_approx {}", q.to_f64().unwrap_or(f64::NAN));
            } else {
                let mut table = RTable::new(&model, method);
                let r = table.evaluate(&config)?;
                println!("config {config}");
                println!("R {r}");
                println!("Q {}", oracle::q_leading_oracle(&model, &config)?);
            }
        }
        Command::Mc { model, config, samples, seed, trees } => {
            let model = load_model(model)?;
            check_dims(&model, &config)?;
            let est = mc_estimate_r(&model, &config, samples, seed);
            println!("config {config}");
            println!("mean {}", est.mean);
            println!("stderr {}", est.stderr);
            println!("samples {samples}");
            println!("seed {seed}");
            if trees {
                let dist = tree_distribution(&config, samples, seed)?;
                println!("trees {}", dist.counts().len());
                for (tree, freq) in dist.iter() {
                    println!("tree {tree} freq {freq} f_P {}", f_p(tree, &model));
                }
            }
        }
        Command::Sweep { model, theta, nmin, nmax, out, svg, series } => {
            let model = load_model(model)?;
            let result =
                sweep_errors_detailed(&model, &theta, nmin, nmax, &SolverOptions::default())?;
            emit_csv(&result.reports, &out)?;
            println!("wrote {} rows to {}", result.reports.len(), out.display());
            if let Some(svg) = svg {
                emit_svg(&result.reports, &svg)?;
                println!("wrote chart to {}", svg.display());
            }
            if let Some(stem) = series {
                for path in emit_plot_data(&result.reports, &stem)? {
                    println!("wrote series to {}", path.display());
                }
            }
            let worst_mass = result
                .masses
                .iter()
                .map(|m| (m.mass - 1.0).abs())
                .fold(0.0f64, f64::max);
            println!("worst |mass - 1| {worst_mass:.3e}");
        }
        Command::Identities { max } => {
            let mut failed = false;
            for report in run_identity_suite(max) {
                let verdict = if report.passed() { "PASS" } else { "FAIL" };
                println!(
                    "{verdict} {} ({} cases, {} failures)",
                    report.name, report.cases, report.failures
                );
                failed |= !report.passed();
            }
            if failed {
                return Err(Error::Validation("identity sweep found failures".into()));
            }
        }
        Command::Stationary { model } => {
            let model = load_model(model)?;
            let pi: Vec<String> = (0..model.k()).map(|i| model.pi(i).to_string()).collect();
            println!("pi {}", pi.join(","));
            let full = coalsamp::model::AlleleSet::full(model.k());
            println!("irreducible {}", model.is_irreducible_on(&full));
            println!(
                "detailed_balance_residual {}",
                model.detailed_balance_residual_on(&full)
            );
            println!(
                "reversible_at_{} {}",
                model.reversibility_tol(),
                model.is_reversible_on(&full, model.reversibility_tol())
            );
        }
    }
    Ok(())
}
