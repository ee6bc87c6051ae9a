//! Command-line front end of the `wclab` binary.
//!
//! Exit codes: 0 success, 2 parse/config/usage errors, 3 dimension mismatch,
//! 4 numeric abort. Verdicts are data and never change the exit code.

use std::ffi::OsString;
use std::f64::consts::PI;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::error::{Error, Result};
use crate::fields::{read_dump, write_dump, PeriodicField, PeriodicGrid};
use crate::lab::{ExperimentConfig, ExperimentReport};
use crate::operator::{catalog, parse_catalog_name, parse_operator, render_operator, DifferentialOperator, CATALOG_NAMES};
use crate::spectral::{ProductMode, SpectralOperator};
use crate::wavecone::{ellipticity_constant, in_wave_cone, DEFAULT_MEMBERSHIP_TOL};

pub const THREADS_ENV: &str = "WCLAB_THREADS";

#[derive(Debug, Parser)]
#[command(name = "wclab", version, about = "Wave cones, exact laminates and two-state rigidity experiments")]
pub struct CliConfig {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Distance of a state from the wave cone of an operator.
    Wavecone(WaveconeArgs),
    /// Run the alternating-projection experiment described by a TOML config.
    Experiment(ExperimentArgs),
    /// Estimate the order of the commutator [A, phi] from frequency sweeps.
    ProbeCommutator(ProbeArgs),
    /// Project a field dump onto the A-free subspace.
    Project(ProjectArgs),
    /// List built-in operators or print one in the text format.
    Catalog(CatalogArgs),
}

#[derive(Debug, Args)]
#[group(required = true, multiple = false)]
pub struct OperatorSource {
    /// Built-in operator, e.g. `curl:2x2`, `div:3x3`, `curlcurl:2`.
    #[arg(long)]
    pub catalog: Option<String>,
    /// Operator in the text format.
    #[arg(long)]
    pub op_file: Option<PathBuf>,
}

impl OperatorSource {
    pub fn resolve(&self) -> Result<DifferentialOperator> {
        match (&self.catalog, &self.op_file) {
            (Some(name), _) => catalog(parse_catalog_name(name)?),
            (None, Some(path)) => parse_operator(&read_text(path)?),
            (None, None) => Err(Error::InvalidArgument("an operator source is required".into())),
        }
    }
}

#[derive(Debug, Args)]
pub struct WaveconeArgs {
    #[command(flatten)]
    pub source: OperatorSource,
    /// State vector, comma separated.
    #[arg(long = "v", allow_hyphen_values = true)]
    pub v: String,
    /// Relative membership tolerance.
    #[arg(long, default_value_t = DEFAULT_MEMBERSHIP_TOL)]
    pub tol: f64,
}

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    pub config: PathBuf,
    /// Overrides `output_dir` from the config.
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
    #[arg(short, long)]
    pub quiet: bool,
}

#[derive(Debug, Args)]
pub struct ProbeArgs {
    #[command(flatten)]
    pub source: OperatorSource,
    /// Grid points per axis (odd).
    #[arg(long, default_value_t = 127)]
    pub n: usize,
    /// Lattice direction of the oscillation; defaults to all ones.
    #[arg(long, allow_hyphen_values = true)]
    pub q: Option<String>,
    /// Amplitude vector; defaults to the first unit vector.
    #[arg(long, allow_hyphen_values = true)]
    pub v0: Option<String>,
    /// Oscillation frequencies.
    #[arg(long, default_value = "2,4,8")]
    pub frequencies: String,
    /// Multiplier profile.
    #[arg(long, value_enum, default_value_t = PhiKind::Smooth)]
    pub phi: PhiKind,
    /// Zero-pad products instead of evaluating them on the grid.
    #[arg(long)]
    pub dealias: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum PhiKind {
    Smooth,
    Constant,
}

#[derive(Debug, Args)]
pub struct ProjectArgs {
    #[command(flatten)]
    pub source: OperatorSource,
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct CatalogArgs {
    /// Print this entry in the operator text format.
    #[arg(long)]
    pub render: Option<String>,
}

/// Exit code for a library error.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::DimensionMismatch { .. } | Error::ShapeMismatch(_) => 3,
        Error::NonFinite { .. } | Error::UnsolvableForcing { .. } => 4,
        _ => 2,
    }
}

pub fn parse_reals(text: &str, what: &str) -> Result<Vec<f64>> {
    let values: Vec<f64> = text
        .split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| Error::Parse { line: 1, message: format!("{what}: cannot parse '{}' as a number", s.trim()) })
        })
        .collect::<Result<_>>()?;
    if let Some(bad) = values.iter().find(|x| !x.is_finite()) {
        return Err(Error::Parse { line: 1, message: format!("{what}: non-finite entry {bad}") });
    }
    Ok(values)
}

fn parse_ints<T: std::str::FromStr>(text: &str, what: &str) -> Result<Vec<T>> {
    text.split(',')
        .map(|s| {
            s.trim()
                .parse::<T>()
                .map_err(|_| Error::Parse { line: 1, message: format!("{what}: cannot parse '{}' as an integer", s.trim()) })
        })
        .collect()
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::InvalidArgument(format!("{}: {e}", path.display())))
}

/// Writes `bytes` to a sibling temp file and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let name = path.file_name().ok_or_else(|| Error::InvalidArgument(format!("{} is not a file path", path.display())))?;
    let mut tmp_name = OsString::from(".");
    tmp_name.push(name);
    tmp_name.push(format!(".tmp{}", std::process::id()));
    let tmp = path.with_file_name(tmp_name);
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path).inspect_err(|_| {
        let _ = fs::remove_file(&tmp);
    })?;
    Ok(())
}

fn configure_threads() -> Result<()> {
    let Ok(raw) = std::env::var(THREADS_ENV) else { return Ok(()) };
    let threads: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&t| t > 0)
        .ok_or_else(|| Error::InvalidArgument(format!("{THREADS_ENV} must be a positive integer, got '{raw}'")))?;
    // a pool built earlier in the same process wins
    let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    Ok(())
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match CliConfig::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = e.exit_code();
            let text = e.render().to_string();
            let _ = if code == 0 { write!(out, "{text}") } else { write!(err, "{text}") };
            return code;
        }
    };
    let result = configure_threads().and_then(|_| dispatch(&cli.command, out, err));
    match result {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            exit_code(&e)
        }
    }
}

fn dispatch(cmd: &Command, out: &mut dyn Write, err: &mut dyn Write) -> Result<()> {
    match cmd {
        Command::Wavecone(a) => cmd_wavecone(a, out),
        Command::Experiment(a) => cmd_experiment(a, out, err),
        Command::ProbeCommutator(a) => cmd_probe_commutator(a, out),
        Command::Project(a) => cmd_project(a, out),
        Command::Catalog(a) => cmd_catalog(a, out),
    }
}

fn join(xs: &[f64]) -> String {
    xs.iter().map(|x| format!("{x:e}")).collect::<Vec<_>>().join(",")
}

pub fn cmd_wavecone(args: &WaveconeArgs, out: &mut dyn Write) -> Result<()> {
    let v = parse_reals(&args.v, "--v")?;
    if !(args.tol.is_finite() && args.tol > 0.0) {
        return Err(Error::InvalidArgument(format!("--tol must be positive, got {}", args.tol)));
    }
    let op = args.source.resolve()?;
    let m = in_wave_cone(&op, &v, args.tol)?;
    let s = &m.search;
    writeln!(out, "operator: {}", op.name().unwrap_or("custom"))?;
    writeln!(out, "gap: {:e}", s.gap)?;
    writeln!(out, "argmin_xi: [{}]", join(&s.argmin_xi))?;
    writeln!(out, "grid_points: {} refinement_iterations: {} resolution: {:e}", s.grid_points, s.refinement_iterations, s.certified_resolution)?;
    writeln!(out, "member: {} (threshold {:e})", m.member, m.threshold)?;
    if !m.member {
        writeln!(out, "ellipticity_constant: {:e}", ellipticity_constant(&op, &v)?)?;
    }
    writeln!(out, "gap={:e} member={} xi={}", s.gap, m.member, join(&s.argmin_xi))?;
    Ok(())
}

/// Per-seed trajectory file name inside the output directory.
pub fn run_csv_name(seed: u64) -> String {
    format!("run-seed-{seed}.csv")
}

pub const SUMMARY_NAME: &str = "summary.csv";

pub fn summary_csv(reports: &[ExperimentReport]) -> String {
    let mut s = String::from("seed,init,verdict,objective,fraction,residual,iterations,fixed_point_at,eps_low,delta\n");
    for r in reports {
        s.push_str(&format!(
            "{},{},{},{:e},{:e},{:e},{},{},{:e},{:e}\n",
            r.seed,
            r.init,
            r.verdict,
            r.final_objective(),
            r.final_fraction(),
            r.residual.last().copied().unwrap_or(0.0),
            r.rows().saturating_sub(1),
            r.fixed_point_at.map_or(String::new(), |i| i.to_string()),
            r.thresholds.eps_low,
            r.thresholds.delta
        ));
    }
    s
}

pub fn cmd_experiment(args: &ExperimentArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<()> {
    if !args.config.is_file() {
        return Err(Error::InvalidArgument(format!("config file {} not found", args.config.display())));
    }
    let mut cfg = ExperimentConfig::load(&args.config)?;
    if let Some(dir) = &args.output_dir {
        cfg.output_dir = dir.clone();
    }
    let started = std::time::Instant::now();
    let reports = cfg.run()?;
    fs::create_dir_all(&cfg.output_dir)?;
    for r in &reports {
        write_atomic(&cfg.output_dir.join(run_csv_name(r.seed)), r.to_csv().as_bytes())?;
    }
    write_atomic(&cfg.output_dir.join(SUMMARY_NAME), summary_csv(&reports).as_bytes())?;
    if !args.quiet {
        for r in &reports {
            writeln!(out, "{}", r.summary_line())?;
        }
        writeln!(out, "wrote {} runs to {}", reports.len(), cfg.output_dir.display())?;
    }
    writeln!(err, "[wclab] experiment finished in {:.2?}", started.elapsed())?;
    Ok(())
}

pub fn cmd_probe_commutator(args: &ProbeArgs, out: &mut dyn Write) -> Result<()> {
    let op = args.source.resolve()?;
    let d = op.dim();
    let q: Vec<i64> = match &args.q {
        Some(t) => parse_ints(t, "--q")?,
        None => vec![1; d],
    };
    if q.len() != d {
        return Err(Error::DimensionMismatch { expected: d, got: q.len() });
    }
    let v0 = match &args.v0 {
        Some(t) => parse_reals(t, "--v0")?,
        None => {
            let mut e = vec![0.0; op.channels()];
            e[0] = 1.0;
            e
        }
    };
    let freqs: Vec<u32> = parse_ints(&args.frequencies, "--frequencies")?;
    let grid = PeriodicGrid::new(d, args.n)?;
    let phi = match args.phi {
        PhiKind::Smooth => PeriodicField::from_fn(grid, 1, |x, o| {
            o[0] = 1.0 + 0.5 * (2.0 * PI * x[0]).cos() + 0.3 * (2.0 * PI * x.iter().sum::<f64>()).sin();
        }),
        PhiKind::Constant => PeriodicField::constant(grid, &[1.0]),
    };
    let mode = if args.dealias { ProductMode::Dealiased } else { ProductMode::Aliased };
    let spectral = SpectralOperator::new(op, grid)?;
    let p = spectral.commutator_order_probe(&phi, &q, &v0, &freqs, mode)?;
    for (i, m) in p.frequencies.iter().enumerate() {
        writeln!(out, "M={m} commutator_norm={:e} operator_norm={:e}", p.commutator_norms[i], p.operator_norms[i])?;
    }
    let slope = p.commutator_slope.map_or("none".to_string(), |s| format!("{s:.6}"));
    writeln!(out, "commutator_slope={slope} operator_slope={:.6} degenerate={}", p.operator_slope, p.degenerate)?;
    Ok(())
}

pub fn cmd_project(args: &ProjectArgs, out: &mut dyn Write) -> Result<()> {
    let op = args.source.resolve()?;
    let bytes = fs::read(&args.input).map_err(|e| Error::InvalidArgument(format!("{}: {e}", args.input.display())))?;
    let field = read_dump(bytes.as_slice())?;
    if field.values().iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite { iteration: 0 });
    }
    if field.channels() != op.channels() {
        return Err(Error::DimensionMismatch { expected: op.channels(), got: field.channels() });
    }
    let spectral = SpectralOperator::new(op, field.grid())?;
    let before = spectral.residual_negative_norm(&field)?;
    let projected = spectral.afree_project(&field)?;
    let after = spectral.residual_negative_norm(&projected)?;
    let mut buf = Vec::new();
    write_dump(&projected, &mut buf)?;
    write_atomic(&args.output, &buf)?;
    writeln!(out, "residual_before={before:e} residual_after={after:e}")?;
    Ok(())
}

pub fn cmd_catalog(args: &CatalogArgs, out: &mut dyn Write) -> Result<()> {
    match &args.render {
        Some(name) => write!(out, "{}", render_operator(&catalog(parse_catalog_name(name)?)?))?,
        None => {
            for name in CATALOG_NAMES {
                let pattern = if name == "curlcurl" { "curlcurl:D (D in 2, 3)" } else { "NAME:MxD" };
                writeln!(out, "{name}\t{}", pattern.replace("NAME", name))?;
            }
        }
    }
    Ok(())
}
