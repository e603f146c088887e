//! Disorder-replica experiments: per-replica fluctuation samples, streamed CSV
//! output, summary statistics against the theoretical normal targets.

pub mod cli;
pub mod stats;

use std::fmt::Write as _;
use std::io::Write;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use crate::covariance::hermite;
use crate::error::{invalid, PspinError, Result};
use crate::model::{fast_sweep_statistics, j_term, CouplingLayout, ENUMERATION_BUDGET};
use crate::momentlab::{
    coupling_scale, h3_representation, h4_direct, pair_moment_paths, quenched_moments, quenched_moments_from,
    PAIR_ENUMERATION_MAX_N, PAIR_LOOP_BUDGET, TRIPLE_LOOP_BUDGET,
};
use crate::multiindex::{sample_disorder, ModelParams};
use crate::numeric::CompensatedSum;
use crate::rng::{mix_pair, normal_at};
use crate::theory::{beta_p, clt_variance, factorial_exact, finite_n_j_variance, gaussian_moment, limit_constants};

pub use stats::{summarize, Summary};

/// Header of the per-replica CSV stream.
pub const CSV_HEADER: &str = "replica,f_n,j_n,t_n,scaled_t1,scaled_gap,scaled_t2";

/// Replicas computed between two ordered CSV flushes.
const CHUNK: usize = 256;

/// Tolerance handed to the beta_p search by the harness.
pub const BETA_P_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Theorem1,
    Theorem2,
    #[value(name = "jterm_clt", alias = "jterm-clt")]
    JtermClt,
    Identities,
    Constants,
    Tabulate,
}

impl Mode {
    fn enumerates(self) -> bool {
        matches!(self, Mode::Theorem1 | Mode::Theorem2 | Mode::Identities)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, Serialize)]
pub struct ExperimentConfig {
    pub params: ModelParams,
    pub replicas: usize,
    pub base_seed: u64,
    pub mode: Mode,
    pub output_path: Option<PathBuf>,
    pub format: Format,
    pub allow_supercritical: bool,
}

impl ExperimentConfig {
    pub fn new(params: ModelParams, replicas: usize, base_seed: u64, mode: Mode) -> Self {
        ExperimentConfig {
            params,
            replicas,
            base_seed,
            mode,
            output_path: None,
            format: Format::Json,
            allow_supercritical: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.replicas == 0 {
            return Err(invalid("replicas must be >= 1"));
        }
        let n = self.params.n;
        if self.mode.enumerates() && n > ENUMERATION_BUDGET {
            return Err(PspinError::ResourceLimit(format!(
                "mode {:?} enumerates 2^N configurations; N={n} exceeds the budget N <= {ENUMERATION_BUDGET}",
                self.mode
            )));
        }
        if matches!(self.mode, Mode::Constants | Mode::Tabulate) {
            return Err(invalid(format!("mode {:?} is not a replica experiment", self.mode)));
        }
        if self.mode == Mode::Theorem2 && self.params.p < 3 {
            return Err(invalid("theorem2 needs p >= 3"));
        }
        if self.params.beta <= 0.0 {
            return Err(invalid("experiments need beta > 0"));
        }
        if self.supercritical()? && !self.allow_supercritical {
            return Err(invalid(format!(
                "beta={} is not below beta_p={}; pass --allow-supercritical to run anyway",
                self.params.beta,
                beta_p(self.params.p, BETA_P_TOL)?
            )));
        }
        Ok(())
    }

    fn supercritical(&self) -> Result<bool> {
        Ok(self.params.beta >= beta_p(self.params.p, BETA_P_TOL)?)
    }
}

/// Seed of replica `index`'s disorder.
pub fn replica_seed(base_seed: u64, index: u64) -> u64 {
    mix_pair(base_seed, index)
}

/// One replica's record. Enumeration-free modes leave the optional fields empty.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FluctuationSample {
    pub replica_index: u64,
    pub f_n: Option<f64>,
    pub j_n: f64,
    pub t_n: Option<f64>,
    pub scaled_t1: Option<f64>,
    pub scaled_gap: Option<f64>,
    pub scaled_t2: Option<f64>,
}

impl FluctuationSample {
    /// `N^{p/2}(J_N - beta^2/2)`
    pub fn scaled_j(&self, params: &ModelParams) -> f64 {
        let scale = (params.n as f64).powf(params.p as f64 / 2.0);
        scale * (self.j_n - params.beta * params.beta / 2.0)
    }

    /// `ln(Z_N e^{-N J_N}) = N(F_N - J_N)`
    pub fn log_reduced_partition(&self, params: &ModelParams) -> Option<f64> {
        self.f_n.map(|f| params.n as f64 * (f - self.j_n))
    }

    pub fn csv_line(&self) -> String {
        let mut line = self.replica_index.to_string();
        for v in [self.f_n, Some(self.j_n), self.t_n, self.scaled_t1, self.scaled_gap, self.scaled_t2] {
            line.push(',');
            if let Some(v) = v {
                write!(line, "{v:?}").expect("write to String");
            }
        }
        line
    }
}

/// Exponent of `A_N(p)`: `3p/4 - 1/2` for even p, `p - 1` for odd p.
pub fn a_exponent(p: usize) -> f64 {
    if p % 2 == 0 {
        3.0 * p as f64 / 4.0 - 0.5
    } else {
        p as f64 - 1.0
    }
}

/// `J_N` drawn straight from the coupling stream, without storing the couplings.
/// Bit-identical to `j_term(sample_disorder(params, seed), beta)`.
pub fn streamed_j_term(params: &ModelParams, seed: u64) -> f64 {
    let count = params.num_couplings() as u64;
    let sq: CompensatedSum = (0..count).map(|r| normal_at(seed, r)).map(|j| j * j).collect();
    params.beta * params.beta * sq.value() / (2.0 * count as f64)
}

/// Per-replica identity residuals, each already divided by its scale.
#[derive(Debug, Clone, Copy, Default)]
struct ReplicaResiduals {
    cubic_vanishing: Option<f64>,
    cubic_representation: Option<f64>,
    quartic_decomposition: Option<f64>,
    scaled_identity: f64,
}

struct Engine {
    params: ModelParams,
    layout: Option<Arc<CouplingLayout>>,
    mode: Mode,
}

impl Engine {
    fn sample(&self, index: u64, base_seed: u64) -> Result<(FluctuationSample, ReplicaResiduals)> {
        let params = self.params;
        let seed = replica_seed(base_seed, index);
        let n = params.n as f64;
        let beta = params.beta;
        let scale = n.powf(params.p as f64 / 2.0);
        let Some(layout) = &self.layout else {
            let j_n = streamed_j_term(&params, seed);
            let sample = FluctuationSample {
                replica_index: index,
                f_n: None,
                j_n,
                t_n: None,
                scaled_t1: None,
                scaled_gap: None,
                scaled_t2: None,
            };
            return Ok((sample, ReplicaResiduals::default()));
        };
        let disorder = sample_disorder(params, seed);
        let stats = fast_sweep_statistics(layout, &disorder, &[beta])?;
        let moments = quenched_moments_from(&stats, &disorder, beta);
        let f_n = stats.log_partition[0] / n;
        let j_n = j_term(&disorder, beta);
        let sample = FluctuationSample {
            replica_index: index,
            f_n: Some(f_n),
            j_n,
            t_n: Some(moments.t_value),
            scaled_t1: Some(scale * (f_n - beta * beta / 2.0)),
            scaled_gap: Some(scale * (f_n - j_n)),
            scaled_t2: Some(n.powf(a_exponent(params.p)) * (f_n - j_n)),
        };
        let mut residuals = ReplicaResiduals {
            scaled_identity: relative_residual(
                sample.scaled_t1.unwrap() - sample.scaled_gap.unwrap(),
                sample.scaled_j(&params),
            ),
            ..Default::default()
        };
        if self.mode == Mode::Identities {
            // the Gray sweep is the reference the representations are checked against
            let swept = quenched_moments(&disorder, beta)?;
            let a_n = params.a_n();
            let cubic_scale = a_n.powi(3) * coupling_scale(&disorder, 3);
            if params.p % 2 == 1 {
                residuals.cubic_vanishing = Some(swept.m3.abs() / cubic_scale);
            }
            let count = params.num_couplings();
            if count * count <= PAIR_LOOP_BUDGET {
                let h3 = h3_representation(&disorder)?;
                residuals.cubic_representation = Some((h3 + swept.m3).abs() / h3.abs().max(cubic_scale));
            }
            if count * count * count <= TRIPLE_LOOP_BUDGET {
                let quartic_scale = a_n.powi(4) * coupling_scale(&disorder, 2).powi(2);
                residuals.quartic_decomposition = Some((swept.h4 - h4_direct(&disorder)?).abs() / quartic_scale);
            }
        }
        Ok((sample, residuals))
    }
}

fn relative_residual(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

/// One identity check in the report.
#[derive(Debug, Clone, Serialize)]
pub struct IdentityCheck {
    pub name: String,
    pub residual: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl IdentityCheck {
    fn new(name: &str, residual: f64, tolerance: f64) -> Self {
        IdentityCheck { name: name.to_string(), residual, tolerance, passed: residual <= tolerance }
    }
}

/// Echo of the configuration inside the report.
#[derive(Debug, Clone, Serialize)]
pub struct ConfigEcho {
    pub n: usize,
    pub p: usize,
    pub beta: f64,
    pub replicas: usize,
    pub seed: u64,
    pub mode: Mode,
}

#[derive(Debug, Clone, Serialize)]
pub struct ExperimentReport {
    pub config: ConfigEcho,
    pub n_samples: usize,
    pub mean: f64,
    pub variance: f64,
    pub skewness: f64,
    pub ks_distance: f64,
    pub ks_pvalue: f64,
    pub target_mean: f64,
    pub target_variance: f64,
    pub wallclock_seconds: f64,
    /// name of the summarised per-replica statistic
    pub statistic: String,
    pub beta_p: f64,
    pub supercritical: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub exact_finite_n_variance: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gap_mean: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gap_std: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub proxy_fraction: Option<f64>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub identities: Vec<IdentityCheck>,
}

impl ExperimentReport {
    pub fn identities_passed(&self) -> bool {
        self.identities.iter().all(|c| c.passed)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises")
    }
}

/// Samples and report of one experiment.
#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub samples: Vec<FluctuationSample>,
    pub report: ExperimentReport,
}

/// Runs the replicas on `threads` workers. Each finished chunk is written to
/// `sink` in replica order; results do not depend on the thread count.
pub fn run_experiment_with(
    config: &ExperimentConfig,
    threads: usize,
    mut sink: Option<&mut dyn Write>,
) -> Result<ExperimentOutcome> {
    config.validate()?;
    let start = Instant::now();
    let params = config.params;
    let layout = if config.mode.enumerates() {
        Some(Arc::new(CouplingLayout::new(params.n, params.p)?))
    } else {
        None
    };
    let engine = Engine { params, layout, mode: config.mode };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| PspinError::ResourceLimit(format!("thread pool: {e}")))?;

    if let Some(w) = sink.as_deref_mut() {
        writeln!(w, "{CSV_HEADER}")?;
    }
    let mut samples = Vec::with_capacity(config.replicas);
    let mut residuals = Vec::new();
    let total = config.replicas as u64;
    let mut next = 0u64;
    while next < total {
        let end = (next + CHUNK as u64).min(total);
        let chunk: Vec<_> = pool.install(|| {
            (next..end).into_par_iter().map(|i| engine.sample(i, config.base_seed)).collect::<Result<Vec<_>>>()
        })?;
        for (sample, res) in chunk {
            if let Some(w) = sink.as_deref_mut() {
                writeln!(w, "{}", sample.csv_line())?;
            }
            samples.push(sample);
            residuals.push(res);
        }
        if let Some(w) = sink.as_deref_mut() {
            w.flush()?;
        }
        next = end;
    }

    let report = build_report(config, &samples, &residuals, start.elapsed().as_secs_f64())?;
    Ok(ExperimentOutcome { samples, report })
}

/// [`run_experiment_with`] on the global thread count, without a CSV sink.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentOutcome> {
    run_experiment_with(config, rayon::current_num_threads(), None)
}

fn build_report(
    config: &ExperimentConfig,
    samples: &[FluctuationSample],
    residuals: &[ReplicaResiduals],
    wallclock: f64,
) -> Result<ExperimentReport> {
    let params = config.params;
    let (beta, p) = (params.beta, params.p);
    let (statistic, values, target_mean, target_variance): (&str, Vec<f64>, f64, f64) = match config.mode {
        Mode::JtermClt => ("scaled_j", samples.iter().map(|s| s.scaled_j(&params)).collect(), 0.0, clt_variance(beta, p)),
        Mode::Theorem2 => {
            let c = limit_constants(beta, p)?;
            ("scaled_t2", samples.iter().filter_map(|s| s.scaled_t2).collect(), c.mu, c.sigma2)
        }
        _ => ("scaled_t1", samples.iter().filter_map(|s| s.scaled_t1).collect(), 0.0, clt_variance(beta, p)),
    };
    let summary = summarize(&values, target_mean, target_variance)?;

    let mut report = ExperimentReport {
        config: ConfigEcho {
            n: params.n,
            p,
            beta,
            replicas: config.replicas,
            seed: config.base_seed,
            mode: config.mode,
        },
        n_samples: summary.n_samples,
        mean: summary.mean,
        variance: summary.variance,
        skewness: summary.skewness,
        ks_distance: summary.ks_distance,
        ks_pvalue: summary.ks_pvalue,
        target_mean,
        target_variance,
        wallclock_seconds: wallclock,
        statistic: statistic.to_string(),
        beta_p: beta_p(p, BETA_P_TOL)?,
        supercritical: config.supercritical()?,
        exact_finite_n_variance: None,
        gap_mean: None,
        gap_std: None,
        proxy_fraction: None,
        identities: Vec::new(),
    };

    match config.mode {
        Mode::JtermClt => report.exact_finite_n_variance = Some(finite_n_j_variance(beta, params.n, p)?),
        Mode::Theorem1 | Mode::Theorem2 | Mode::Identities => {
            let gaps: Vec<f64> = samples.iter().filter_map(|s| s.scaled_gap).collect();
            let gap = summarize(&gaps, 0.0, 1.0)?;
            report.gap_mean = Some(gap.mean);
            report.gap_std = Some(gap.variance.sqrt());
            if config.mode == Mode::Theorem2 {
                report.proxy_fraction = Some(proxy_fraction(&params, samples));
            }
        }
        _ => {}
    }
    if config.mode == Mode::Identities {
        report.identities = identity_checks(&params, residuals)?;
    }
    Ok(report)
}

/// Share of replicas with `|ln Z' - ln T_N| <= 0.1 |T_N - 1|`, `Z' = Z_N e^{-N J_N}`.
pub fn proxy_fraction(params: &ModelParams, samples: &[FluctuationSample]) -> f64 {
    let hits = samples
        .iter()
        .filter(|s| match (s.log_reduced_partition(params), s.t_n) {
            (Some(lz), Some(t)) if t > 0.0 => (lz - t.ln()).abs() <= 0.1 * (t - 1.0).abs(),
            _ => false,
        })
        .count();
    hits as f64 / samples.len() as f64
}

fn max_of(values: impl Iterator<Item = f64>) -> Option<f64> {
    values.fold(None, |acc: Option<f64>, v| Some(acc.map_or(v, |a| a.max(v))))
}

fn identity_checks(params: &ModelParams, residuals: &[ReplicaResiduals]) -> Result<Vec<IdentityCheck>> {
    let (n, p) = (params.n, params.p);
    let mut checks = Vec::new();
    if let Some(r) = max_of(residuals.iter().filter_map(|r| r.cubic_vanishing)) {
        checks.push(IdentityCheck::new("cubic_moment_vanishes_odd_p", r, 1e-12));
    }
    if let Some(r) = max_of(residuals.iter().filter_map(|r| r.cubic_representation)) {
        checks.push(IdentityCheck::new("cubic_representation", r, 1e-10));
    }
    if let Some(r) = max_of(residuals.iter().filter_map(|r| r.quartic_decomposition)) {
        checks.push(IdentityCheck::new("quartic_decomposition", r, 1e-11));
    }
    let r = max_of(residuals.iter().map(|r| r.scaled_identity)).unwrap_or(0.0);
    checks.push(IdentityCheck::new("scaled_t1_minus_gap", r, 1e-9));

    if n <= PAIR_ENUMERATION_MAX_N {
        let binom = params.num_couplings() as i128;
        let denom = 1i128 << n;
        let k1 = pair_moment_paths(n, p, 1)?;
        let r1 = (k1.overlap_sum.abs() + k1.enumeration.abs()) as f64;
        checks.push(IdentityCheck::new("pair_moment_first_is_zero", r1, 0.0));
        let k2 = pair_moment_paths(n, p, 2)?;
        let r2 = ((k2.overlap_sum - binom * denom).abs() + (k2.enumeration - binom * denom).abs()) as f64;
        checks.push(IdentityCheck::new("pair_moment_second_is_binom", r2, 0.0));
        for k in [3, 4] {
            let paths = pair_moment_paths(n, p, k)?;
            let r = (paths.overlap_sum - paths.enumeration).abs() as f64;
            checks.push(IdentityCheck::new(&format!("pair_moment_{k}_paths_agree"), r, 0.0));
        }
    }
    if p <= 20 {
        let norm = gaussian_moment(&hermite(p)?, 2)?;
        let r = (norm - factorial_exact(p)? as f64).abs();
        checks.push(IdentityCheck::new("hermite_norm_is_factorial", r, 0.0));
    }
    Ok(checks)
}

/// Reports of one configuration across a ladder of system sizes, for trend diagnostics.
pub fn run_ladder(config: &ExperimentConfig, sizes: &[usize], threads: usize) -> Result<Vec<ExperimentReport>> {
    sizes
        .iter()
        .map(|&n| {
            let mut c = config.clone();
            c.params = ModelParams::new(n, config.params.p, config.params.beta)?;
            Ok(run_experiment_with(&c, threads, None)?.report)
        })
        .collect()
}
