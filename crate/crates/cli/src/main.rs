//! Command-line pipeline: ingest raw series, fit the clustering model,
//! sweep cluster counts with selection diagnostics, generate synthetic data,
//! and report posterior summaries.
//!
//! Exit codes: 0 success, 1 partial sweep failure, 2 input error,
//! 3 numerical failure. Diagnostics go to stderr; artifacts go to files.

mod artifacts;
mod ingest;
mod report;
mod run;
mod synthcmd;

use clap::{Args, Parser, Subcommand};
use curveclust::preprocess::LandmarkPolicy;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Debug)]
pub enum CliError {
    /// Unreadable or malformed input (exit 2).
    Input(String),
    /// Numerical failure in fitting (exit 3).
    Numerical(String),
    /// Some sweep entries failed (exit 1).
    PartialSweep(String),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Input(m) => write!(f, "{m}"),
            CliError::Numerical(m) => write!(f, "{m}"),
            CliError::PartialSweep(m) => write!(f, "{m}"),
        }
    }
}

impl CliError {
    fn exit_code(&self) -> ExitCode {
        match self {
            CliError::PartialSweep(_) => ExitCode::from(1),
            CliError::Input(_) => ExitCode::from(2),
            CliError::Numerical(_) => ExitCode::from(3),
        }
    }

    pub fn from_core(err: curveclust::Error) -> Self {
        use curveclust::Error as E;
        match err {
            E::NumericalFailure { .. }
            | E::Factorization(_)
            | E::SingularSystem(_)
            | E::NonFiniteDensity { .. }
            | E::EmptyCluster { .. } => CliError::Numerical(err.to_string()),
            other => CliError::Input(other.to_string()),
        }
    }

    pub fn io(err: std::io::Error, path: &std::path::Path) -> Self {
        CliError::Input(format!("{}: {err}", path.display()))
    }
}

pub type CliResult<T> = Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "curveclust", version, about = "Model-based clustering of discretely observed curves")]
struct Cli {
    /// Size of the rayon thread pool (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

/// Options shared by every command that reads series data.
#[derive(Debug, Args, Clone)]
pub struct InputArgs {
    /// Long-format series CSV: `subject_id,idx,value` (raw mode) or
    /// `subject_id,t,value` (--prepared).
    #[arg(long)]
    pub series: PathBuf,

    /// Sidecar CSV: `subject_id,min_ar,landmark` in raw mode, or
    /// `subject_id,<name>,...` with verbatim covariate columns in
    /// prepared mode.
    #[arg(long)]
    pub covariates_file: Option<PathBuf>,

    /// Input already lies on [0,1] grids with final values; skip the
    /// preprocessing pipeline.
    #[arg(long)]
    pub prepared: bool,

    /// Include covariates in the model (default when a sidecar is given).
    #[arg(long, overrides_with = "no_covariates")]
    pub covariates: bool,

    /// Cluster on the curves alone.
    #[arg(long)]
    pub no_covariates: bool,

    /// Landmark warp target.
    #[arg(long, default_value_t = curveclust::preprocess::DEFAULT_WARP_TARGET)]
    pub warp_target: f64,

    /// Drop subjects shorter than this.
    #[arg(long, default_value_t = 4)]
    pub min_length: usize,

    /// Drop subjects lacking a landmark instead of keeping them unwarped.
    #[arg(long)]
    pub exclude_missing_landmark: bool,

    /// Z-score the covariates before fitting (scalings recorded in the
    /// manifest).
    #[arg(long)]
    pub standardize_covariates: bool,

    /// Number of evenly spaced distinct knots for the cubic basis.
    #[arg(long, default_value_t = 6)]
    pub knots: usize,
}

impl InputArgs {
    pub fn with_covariates(&self) -> bool {
        if self.no_covariates {
            false
        } else {
            self.covariates || self.covariates_file.is_some()
        }
    }

    pub fn landmark_policy(&self) -> LandmarkPolicy {
        if self.exclude_missing_landmark {
            LandmarkPolicy::Exclude
        } else {
            LandmarkPolicy::Bypass
        }
    }
}

/// Options controlling one EM fit.
#[derive(Debug, Args, Clone)]
pub struct FitArgs {
    /// Offset rank h (default min(G-1, p)).
    #[arg(long)]
    pub h: Option<usize>,

    /// Convergence threshold on the relative change of sigma2 (+ sigma2_x).
    #[arg(long, default_value_t = 0.001)]
    pub tol: f64,

    #[arg(long, default_value_t = 500)]
    pub max_iters: usize,

    /// Label initialization: `kmeans:<restarts>` or `uniform`.
    #[arg(long, default_value = "kmeans:20")]
    pub init: String,

    /// Second-derivative penalty weight for the initial spline fits.
    #[arg(long, default_value_t = 0.00014625)]
    pub penalty: f64,

    #[arg(long, default_value_t = 0)]
    pub seed: u64,

    /// Compute conditional moments through the per-subject SVD re-basis.
    #[arg(long)]
    pub rebasis: bool,

    /// Inner coordinate sweeps per M-step.
    #[arg(long, default_value_t = 3)]
    pub inner_sweeps: usize,

    /// Exponent b in the distortion difference d_G^-b - d_{G-1}^-b.
    #[arg(long, default_value_t = 4.0)]
    pub b: f64,

    /// k-means restarts for the distortion criterion.
    #[arg(long, default_value_t = 20)]
    pub distortion_restarts: usize,
}

impl FitArgs {
    pub fn parse_init(&self) -> CliResult<curveclust::InitMode> {
        if self.init == "uniform" {
            return Ok(curveclust::InitMode::UniformRandom);
        }
        if let Some(rest) = self.init.strip_prefix("kmeans:") {
            let restarts: usize = rest
                .parse()
                .map_err(|_| CliError::Input(format!("bad --init restart count '{rest}'")))?;
            return Ok(curveclust::InitMode::KMeans { restarts });
        }
        if self.init == "kmeans" {
            return Ok(curveclust::InitMode::KMeans { restarts: 20 });
        }
        Err(CliError::Input(format!(
            "unknown --init '{}': expected kmeans:<restarts> or uniform",
            self.init
        )))
    }

    pub fn fit_config(&self, g: usize) -> CliResult<curveclust::FitConfig> {
        Ok(curveclust::FitConfig {
            g,
            h: self.h,
            max_iters: self.max_iters,
            tol: self.tol,
            init: self.parse_init()?,
            penalty_weight: self.penalty,
            ridge_floor: 1e-8,
            seed: self.seed,
            inner_sweeps: self.inner_sweeps,
            use_rebasis: self.rebasis,
        })
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Preprocess a raw series file and export the prepared data.
    Ingest {
        #[command(flatten)]
        input: InputArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit the model for a single cluster count.
    Fit {
        #[command(flatten)]
        input: InputArgs,
        #[command(flatten)]
        fit: FitArgs,
        /// Number of clusters.
        #[arg(long)]
        clusters: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit a sweep of cluster counts and score them.
    Sweep {
        #[command(flatten)]
        input: InputArgs,
        #[command(flatten)]
        fit: FitArgs,
        /// Cluster counts: comma list and/or ranges, e.g. `2,3,5` or `2-11`.
        #[arg(long)]
        clusters: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate synthetic data from the generative model.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 500)]
        subjects: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Generate covariates alongside the curves.
        #[arg(long)]
        covariates: bool,
        /// Full generator specification (JSON); overrides the built-in
        /// three-cluster preset.
        #[arg(long)]
        spec: Option<PathBuf>,
    },
    /// Posterior summaries and fitted curves from a saved parameter file.
    Report {
        #[command(flatten)]
        input: InputArgs,
        /// Parameter JSON produced by fit/sweep.
        #[arg(long)]
        params: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Subjects to export fitted curves for (comma-separated ids).
        #[arg(long)]
        subjects: Option<String>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(threads) = cli.threads {
        // Ignore failure: the global pool may already exist in tests.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global();
    }
    let outcome = match cli.command {
        Command::Ingest { input, out } => ingest::run_ingest(&input, &out),
        Command::Fit {
            input,
            fit,
            clusters,
            out,
        } => run::run_fit(&input, &fit, &[clusters], &out),
        Command::Sweep {
            input,
            fit,
            clusters,
            out,
        } => match parse_sweep_list(&clusters) {
            Ok(list) => run::run_fit(&input, &fit, &list, &out),
            Err(e) => Err(e),
        },
        Command::Synth {
            out,
            subjects,
            seed,
            covariates,
            spec,
        } => synthcmd::run_synth(&out, subjects, seed, covariates, spec.as_deref()),
        Command::Report {
            input,
            params,
            out,
            subjects,
        } => report::run_report(&input, &params, &out, subjects.as_deref()),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            err.exit_code()
        }
    }
}

fn parse_sweep_list(text: &str) -> CliResult<Vec<usize>> {
    let mut list = Vec::new();
    for token in text.split(',') {
        let token = token.trim();
        if token.is_empty() {
            continue;
        }
        if let Some((lo, hi)) = token.split_once('-') {
            let lo: usize = lo
                .trim()
                .parse()
                .map_err(|_| CliError::Input(format!("bad cluster range '{token}'")))?;
            let hi: usize = hi
                .trim()
                .parse()
                .map_err(|_| CliError::Input(format!("bad cluster range '{token}'")))?;
            if lo == 0 || hi < lo {
                return Err(CliError::Input(format!("bad cluster range '{token}'")));
            }
            list.extend(lo..=hi);
        } else {
            let g: usize = token
                .parse()
                .map_err(|_| CliError::Input(format!("bad cluster count '{token}'")))?;
            if g == 0 {
                return Err(CliError::Input("cluster count must be positive".into()));
            }
            list.push(g);
        }
    }
    if list.is_empty() {
        return Err(CliError::Input("empty cluster sweep".into()));
    }
    list.sort_unstable();
    list.dedup();
    Ok(list)
}
