mod render;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use obscheck::dirac::{self, DiracError, LcdConfig};
use obscheck::model::{bundled, ModelSpec};
use obscheck::observability::{run_study, write_atomic, StudyConfig, StudyError, StudyReport};
use obscheck::optimizer::OptConfig;

const CACHE_ENV: &str = "OBSCHECK_CACHE_DIR";
const DEFAULT_CACHE: &str = ".obscheck-cache";

const EXIT_OBSERVABLE: u8 = 0;
const EXIT_USAGE: u8 = 1;
const EXIT_INTERNAL: u8 = 2;
const EXIT_NOT_OBSERVABLE: u8 = 3;

/// Numerical observability testing for Gaussian location-scale models.
#[derive(Debug, Parser)]
#[command(name = "obscheck", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Debug, Subcommand)]
enum Cmd {
    /// Run Part I and Part II for every horizon and report the verdict.
    Run(RunArgs),
    /// Generate a symmetric sample set approximating N(0, I).
    Samples(SamplesArgs),
    /// Render a JSON report as text tables.
    Report {
        /// Report written by `run --out`.
        file: PathBuf,
    },
}

#[derive(Debug, Args)]
struct LcdArgs {
    /// Seed of the initial sample draw.
    #[arg(long, default_value_t = dirac::DEFAULT_SEED)]
    seed: u64,
    /// Upper limit of the kernel-width integral.
    #[arg(long, default_value_t = 10.0)]
    b_max: f64,
    /// Quadrature nodes for the kernel-width integral.
    #[arg(long, default_value_t = 128)]
    quad_nodes: usize,
    /// Iteration cap of the sample placement.
    #[arg(long, default_value_t = 400)]
    lcd_max_iters: usize,
}

impl LcdArgs {
    fn config(&self) -> LcdConfig {
        LcdConfig {
            b_max: self.b_max,
            quad_nodes: self.quad_nodes,
            max_iters: self.lcd_max_iters,
            seed: self.seed,
            ..LcdConfig::default()
        }
    }
}

#[derive(Debug, Args)]
struct RunArgs {
    /// Model file (JSON), or `bundled:<name>` for a shipped model.
    #[arg(long)]
    model: String,
    /// Comma-separated horizons.
    #[arg(long = "T", value_delimiter = ',', default_values_t = [4usize, 12, 20])]
    t_list: Vec<usize>,
    /// Number of design observation vectors per horizon.
    #[arg(long = "K", default_value_t = 2000)]
    k: usize,
    #[command(flatten)]
    lcd: LcdArgs,
    /// Write the JSON report here.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write per-run estimates as CSV here.
    #[arg(long)]
    plot: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
    /// Also run K maximizations on random disturbances for comparison.
    #[arg(long)]
    random_baseline: bool,
    /// Sample cache directory (overrides OBSCHECK_CACHE_DIR).
    #[arg(long)]
    cache_dir: Option<PathBuf>,
    /// Do not read or write cached sample sets.
    #[arg(long, conflicts_with = "cache_dir")]
    no_cache: bool,
    /// Added to every true value to form the optimizer start point.
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    init_perturbation: f64,
    /// Gradient sup-norm below which a maximum is accepted [default: 1e-5].
    #[arg(long)]
    grad_check: Option<f64>,
    /// Smallest accepted ratio of extreme Hessian eigenvalues [default: 1e-5].
    #[arg(long)]
    eig_ratio_min: Option<f64>,
    /// Largest accepted local variance [default: 1e8].
    #[arg(long)]
    lvar_max: Option<f64>,
    /// Suppress the text summary on standard output.
    #[arg(long, short)]
    quiet: bool,
}

#[derive(Debug, Args)]
struct SamplesArgs {
    #[arg(long)]
    dim: usize,
    #[arg(long)]
    count: usize,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    lcd: LcdArgs,
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Internal(String),
}

impl From<StudyError> for Failure {
    fn from(e: StudyError) -> Self {
        match e {
            StudyError::Samples(DiracError::InvalidConfig(_))
            | StudyError::Config(_)
            | StudyError::Opt(_)
            | StudyError::Io { .. } => Failure::Usage(e.to_string()),
            StudyError::Samples(_) => Failure::Internal(e.to_string()),
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE } else { 0 });
        }
    };
    let outcome = std::panic::catch_unwind(|| match cli.cmd {
        Cmd::Run(args) => cmd_run(args),
        Cmd::Samples(args) => cmd_samples(args).map(|()| EXIT_OBSERVABLE),
        Cmd::Report { file } => cmd_report(&file).map(|()| EXIT_OBSERVABLE),
    });
    match outcome {
        Ok(Ok(code)) => ExitCode::from(code),
        Ok(Err(Failure::Usage(msg))) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_USAGE)
        }
        Ok(Err(Failure::Internal(msg))) => {
            eprintln!("internal error: {msg}");
            ExitCode::from(EXIT_INTERNAL)
        }
        Err(_) => ExitCode::from(EXIT_INTERNAL),
    }
}

fn load_model(spec: &str) -> Result<ModelSpec, Failure> {
    if let Some(name) = spec.strip_prefix("bundled:") {
        return bundled::load(name).ok_or_else(|| {
            let known: Vec<&str> = bundled::ALL.iter().map(|(n, _)| *n).collect();
            Failure::Usage(format!(
                "no bundled model '{name}' (available: {})",
                known.join(", ")
            ))
        });
    }
    ModelSpec::load(Path::new(spec)).map_err(|e| Failure::Usage(e.to_string()))
}

fn cache_dir(args: &RunArgs) -> Option<PathBuf> {
    if args.no_cache {
        return None;
    }
    Some(
        args.cache_dir
            .clone()
            .or_else(|| std::env::var_os(CACHE_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from(DEFAULT_CACHE)),
    )
}

fn cmd_run(args: RunArgs) -> Result<u8, Failure> {
    let model = load_model(&args.model)?;
    let mut cfg = StudyConfig::new(model);
    cfg.t_list = args.t_list.clone();
    cfg.k = args.k;
    cfg.lcd = args.lcd.config();
    cfg.opt = OptConfig {
        grad_check: args.grad_check.unwrap_or(OptConfig::default().grad_check),
        eig_ratio_min: args
            .eig_ratio_min
            .unwrap_or(OptConfig::default().eig_ratio_min),
        lvar_max: args.lvar_max.unwrap_or(OptConfig::default().lvar_max),
        ..OptConfig::default()
    };
    cfg.init_perturbation = args.init_perturbation;
    cfg.random_baseline = args.random_baseline;
    cfg.cache_dir = cache_dir(&args);
    cfg.validate()?;
    if let Some(dir) = &cfg.cache_dir {
        std::fs::create_dir_all(dir).map_err(|e| {
            Failure::Usage(format!(
                "cannot create cache directory {}: {e}",
                dir.display()
            ))
        })?;
    }

    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = args.threads {
        if n == 0 {
            return Err(Failure::Usage("--threads must be positive".into()));
        }
        pool = pool.num_threads(n);
    }
    let pool = pool
        .build()
        .map_err(|e| Failure::Internal(format!("cannot start worker threads: {e}")))?;
    let report = pool.install(|| run_study(&cfg))?;

    if let Some(path) = &args.out {
        write_atomic(path, report.to_json().as_bytes())?;
    }
    if let Some(path) = &args.plot {
        write_atomic(path, report.plot_csv().as_bytes())?;
    }
    if !args.quiet {
        print!("{}", render::render(&report));
    }
    Ok(if report.verdict.is_observable() {
        EXIT_OBSERVABLE
    } else {
        EXIT_NOT_OBSERVABLE
    })
}

fn cmd_samples(args: SamplesArgs) -> Result<(), Failure> {
    if args.dim == 0 || args.count == 0 {
        return Err(Failure::Usage("--dim and --count must be positive".into()));
    }
    let cfg = args.lcd.config();
    let usage = |e: DiracError| match e {
        DiracError::InvalidConfig(m) => Failure::Usage(m),
        DiracError::Io { .. } => Failure::Usage(e.to_string()),
        other => Failure::Internal(other.to_string()),
    };
    let placement = dirac::place_mixture(args.dim, args.count, &cfg).map_err(usage)?;
    dirac::write_mixture_csv(&args.out, &placement.mixture, &cfg).map_err(usage)?;
    let distance = dirac::lcd_distance(&placement.mixture, &cfg).map_err(usage)?;
    println!(
        "wrote {} points in {} dimension(s) to {}",
        placement.mixture.count(),
        args.dim,
        args.out.display()
    );
    println!("LCD distance: {distance:.10e}");
    if !placement.converged {
        eprintln!(
            "warning: placement stopped after {} iterations (gradient {:.3e})",
            placement.iterations, placement.final_grad_norm
        );
    }
    Ok(())
}

fn cmd_report(path: &Path) -> Result<(), Failure> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::Usage(format!("cannot read {}: {e}", path.display())))?;
    let report = StudyReport::from_json(&text)
        .map_err(|e| Failure::Usage(format!("malformed report {}: {e}", path.display())))?;
    print!("{}", render::render(&report));
    Ok(())
}
