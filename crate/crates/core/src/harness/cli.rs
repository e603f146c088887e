//! Command-line front end.
//!
//! Exit codes: 0 success, 1 invalid parameters, 2 resource-limit refusal,
//! 3 identity-check failure.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::Serialize;

use super::{run_experiment_with, ExperimentConfig, ExperimentReport, Format, Mode, BETA_P_TOL};
use crate::covariance::tabulate_covariance;
use crate::error::{invalid, PspinError, Result};
use crate::model::{fast_sweep_statistics, j_term, CouplingLayout, ENUMERATION_BUDGET};
use crate::momentlab::quenched_moments_from;
use crate::multiindex::{sample_disorder, ModelParams};
use crate::theory::{beta_p_solution, limit_constants};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 1;
pub const EXIT_RESOURCE: i32 = 2;
pub const EXIT_IDENTITY: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "pspin", version, about = "p-spin SK model numerics: exact enumeration, limit constants, replica experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// System size N
    #[arg(long, global = true)]
    n: Option<usize>,
    /// Interaction order p
    #[arg(long, global = true)]
    p: Option<usize>,
    /// Inverse temperature
    #[arg(long, global = true)]
    beta: Option<f64>,
    /// Disorder replicas M
    #[arg(long, global = true, default_value_t = 1000)]
    replicas: usize,
    /// Base seed; replica seeds are derived from it
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    #[arg(long, global = true, value_enum, default_value_t = Mode::Theorem1)]
    mode: Mode,
    /// Output file (stdout when absent)
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    format: Format,
    /// Worker threads
    #[arg(long, global = true, env = "PSPIN_THREADS")]
    threads: Option<usize>,
    /// Run at beta >= beta_p
    #[arg(long, global = true)]
    allow_supercritical: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Limit constants for (beta, p) as JSON
    Constants,
    /// beta_p for one p, or for p = 2..=50
    Betap,
    /// Exact covariance, expansion and Gaussian overlap pmf on the overlap grid (CSV)
    TabulateCovariance,
    /// Identity checks over replicas (JSON report)
    Identities,
    /// Replica experiment in the selected mode
    Run,
    /// Single-disorder F_N, J_N, T_N and quenched moments
    Exact,
}

/// Parses `args` (program name first) and runs; returns the exit code.
pub fn cli_main<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion | ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand => {
                    EXIT_OK
                }
                _ => EXIT_INVALID,
            };
        }
    };
    match dispatch(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("pspin: {e}");
            exit_code(&e)
        }
    }
}

fn exit_code(e: &PspinError) -> i32 {
    match e {
        PspinError::ResourceLimit(_) => EXIT_RESOURCE,
        _ => EXIT_INVALID,
    }
}

fn dispatch(cli: &Cli) -> Result<i32> {
    match cli.command {
        Command::Constants => constants(cli),
        Command::Betap => betap(cli),
        Command::TabulateCovariance => tabulate(cli),
        Command::Identities => experiment(cli, Mode::Identities),
        Command::Run => match cli.mode {
            Mode::Constants => constants(cli),
            Mode::Tabulate => tabulate(cli),
            mode => experiment(cli, mode),
        },
        Command::Exact => exact(cli),
    }
}

fn need<T: Copy>(v: Option<T>, flag: &str) -> Result<T> {
    v.ok_or_else(|| invalid(format!("--{flag} is required")))
}

fn threads(cli: &Cli) -> Result<usize> {
    match cli.threads {
        Some(0) => Err(invalid("--threads must be >= 1")),
        Some(t) => Ok(t),
        None => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
    }
}

/// Writes `text` to `path` through a temporary sibling and a rename.
fn write_atomic(path: &Path, text: &str) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    {
        let mut f = File::create(&tmp)?;
        f.write_all(text.as_bytes())?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

fn emit(cli: &Cli, text: &str) -> Result<()> {
    match &cli.out {
        Some(path) => write_atomic(path, text),
        None => {
            let mut out = io::stdout().lock();
            out.write_all(text.as_bytes())?;
            out.flush()?;
            Ok(())
        }
    }
}

fn json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serialisable");
    s.push('\n');
    s
}

#[derive(Serialize)]
struct ConstantsTable {
    beta_p: f64,
    clt_variance: f64,
    mu: f64,
    sigma2: f64,
    a_exponent: f64,
}

fn constants(cli: &Cli) -> Result<i32> {
    let p = need(cli.p, "p")?;
    let beta = need(cli.beta, "beta")?;
    let c = limit_constants(beta, p)?;
    let table = ConstantsTable {
        beta_p: beta_p_solution(p, BETA_P_TOL)?.beta,
        clt_variance: c.clt_variance,
        mu: c.mu,
        sigma2: c.sigma2,
        a_exponent: c.a_exponent,
    };
    emit(cli, &json(&table))?;
    Ok(EXIT_OK)
}

#[derive(Serialize)]
struct BetaPRow {
    p: usize,
    beta_p: f64,
    one_minus_m: Option<f64>,
}

fn betap(cli: &Cli) -> Result<i32> {
    let row = |p: usize| -> Result<BetaPRow> {
        let s = beta_p_solution(p, BETA_P_TOL)?;
        Ok(BetaPRow { p, beta_p: s.beta, one_minus_m: (p > 2).then_some(s.one_minus_m) })
    };
    let text = match cli.p {
        Some(p) => json(&row(p)?),
        None => json(&(2..=50).map(row).collect::<Result<Vec<_>>>()?),
    };
    emit(cli, &text)?;
    Ok(EXIT_OK)
}

fn tabulate(cli: &Cli) -> Result<i32> {
    let n = need(cli.n, "n")?;
    let p = need(cli.p, "p")?;
    let mut text = String::from("N,p,m,exact,expansion,gaussian_pmf\n");
    for r in tabulate_covariance(n, p)? {
        text.push_str(&format!("{},{},{:?},{:?},{:?},{:?}\n", r.n, r.p, r.m, r.exact, r.expansion, r.gaussian_pmf));
    }
    emit(cli, &text)?;
    Ok(EXIT_OK)
}

fn experiment(cli: &Cli, mode: Mode) -> Result<i32> {
    let params = ModelParams::new(need(cli.n, "n")?, need(cli.p, "p")?, need(cli.beta, "beta")?)?;
    let config = ExperimentConfig {
        params,
        replicas: cli.replicas,
        base_seed: cli.seed,
        mode,
        output_path: cli.out.clone(),
        format: cli.format,
        allow_supercritical: cli.allow_supercritical,
    };
    // refuse before touching any output file
    config.validate()?;
    let threads = threads(cli)?;
    let report = match (cli.format, &cli.out) {
        (Format::Csv, Some(path)) => {
            let mut w = BufWriter::new(File::create(path)?);
            let outcome = run_experiment_with(&config, threads, Some(&mut w))?;
            w.flush()?;
            println!("{}", outcome.report.to_json());
            outcome.report
        }
        (Format::Csv, None) => {
            let mut w = BufWriter::new(io::stdout().lock());
            let outcome = run_experiment_with(&config, threads, Some(&mut w))?;
            w.flush()?;
            eprintln!("{}", outcome.report.to_json());
            outcome.report
        }
        (Format::Json, _) => {
            let outcome = run_experiment_with(&config, threads, None)?;
            emit(cli, &json(&outcome.report))?;
            outcome.report
        }
    };
    Ok(identity_exit(&report))
}

fn identity_exit(report: &ExperimentReport) -> i32 {
    if report.identities_passed() {
        EXIT_OK
    } else {
        for c in report.identities.iter().filter(|c| !c.passed) {
            eprintln!("pspin: identity {} failed: residual {:e} > {:e}", c.name, c.residual, c.tolerance);
        }
        EXIT_IDENTITY
    }
}

#[derive(Serialize)]
struct ExactDump {
    n: usize,
    p: usize,
    beta: f64,
    seed: u64,
    log_z: f64,
    f_n: f64,
    j_n: f64,
    t_n: f64,
    m2: f64,
    m3: f64,
    m4: f64,
    h4: f64,
}

fn exact(cli: &Cli) -> Result<i32> {
    let params = ModelParams::new(need(cli.n, "n")?, need(cli.p, "p")?, need(cli.beta, "beta")?)?;
    if params.n > ENUMERATION_BUDGET {
        return Err(PspinError::ResourceLimit(format!("N={} exceeds the enumeration budget {ENUMERATION_BUDGET}", params.n)));
    }
    let disorder = sample_disorder(params, cli.seed);
    let layout = CouplingLayout::new(params.n, params.p)?;
    let stats = fast_sweep_statistics(&layout, &disorder, &[params.beta])?;
    let q = quenched_moments_from(&stats, &disorder, params.beta);
    let log_z = stats.log_partition[0];
    let dump = ExactDump {
        n: params.n,
        p: params.p,
        beta: params.beta,
        seed: cli.seed,
        log_z,
        f_n: log_z / params.n as f64,
        j_n: j_term(&disorder, params.beta),
        t_n: q.t_value,
        m2: q.m2,
        m3: q.m3,
        m4: q.m4,
        h4: q.h4,
    };
    emit(cli, &json(&dump))?;
    Ok(EXIT_OK)
}
