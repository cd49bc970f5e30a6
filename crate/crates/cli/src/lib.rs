//! Subcommands behind the `streamgemm` binary: `run` for inference, `bench`
//! for timing the GEMM engines, and `report` for merging benchmark CSVs.

use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

use streamgemm::engine::{gemm_reference, gemm_streamed, EngineConfig, EngineError, GemmShape};
use streamgemm::frontend::{load_weights, parse_cfg, LayerKind};
use streamgemm::perf::{compare, random_matrix, DevicePreset};
use streamgemm::report::{BenchmarkReport, BenchmarkRow, Metric, ReportError};
use streamgemm::runtime::forward;
use streamgemm::tensor::{Dims4, Matrix, Tensor};

pub const THREADS_ENV: &str = "STREAMGEMM_THREADS";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{}: {msg}", path.display())]
    File { path: PathBuf, msg: String },
    #[error("engine config: {0}")]
    Config(EngineError),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Runtime(_) => 1,
            _ => 2,
        }
    }

    fn file(path: &Path, msg: impl ToString) -> Self {
        CliError::File { path: path.to_path_buf(), msg: msg.to_string() }
    }
}

impl From<EngineError> for CliError {
    fn from(e: EngineError) -> Self {
        match e {
            EngineError::BudgetExceeded { .. } | EngineError::InvalidConfig(_) => CliError::Config(e),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "streamgemm", version, about = "Streamed-GEMM CNN inference and GEMM benchmarks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a Darknet network on a raw input tensor.
    Run(RunArgs),
    /// Time the reference and streamed engines on one GEMM shape.
    Bench(BenchArgs),
    /// Merge benchmark CSVs, normalize to a baseline and write plot data.
    Report(ReportArgs),
}

#[derive(Debug, Clone, Args)]
pub struct EngineArgs {
    #[arg(long, default_value_t = 64)]
    pub tile_m: usize,
    #[arg(long, default_value_t = 64)]
    pub tile_k: usize,
    #[arg(long, default_value_t = 64)]
    pub tile_n: usize,
    #[arg(long, default_value_t = 4)]
    pub banks: usize,
    #[arg(long, default_value_t = 512)]
    pub bus_bits: usize,
    #[arg(long, default_value_t = 2)]
    pub stream_depth: usize,
}

impl Default for EngineArgs {
    fn default() -> Self {
        let d = EngineConfig::default();
        Self {
            tile_m: d.tile_m,
            tile_k: d.tile_k,
            tile_n: d.tile_n,
            banks: d.n_banks,
            bus_bits: d.bus_width_bits,
            stream_depth: d.stream_depth,
        }
    }
}

impl EngineArgs {
    pub fn config(&self, workers: usize) -> Result<EngineConfig, CliError> {
        let config = EngineConfig {
            tile_m: self.tile_m,
            tile_k: self.tile_k,
            tile_n: self.tile_n,
            n_banks: self.banks,
            bus_width_bits: self.bus_bits,
            stream_depth: self.stream_depth,
            workers,
            ..EngineConfig::default()
        };
        config.validate().map_err(CliError::Config)?;
        Ok(config)
    }
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub cfg: PathBuf,
    #[arg(long)]
    pub weights: PathBuf,
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub engine: EngineArgs,
}

#[derive(Debug, Clone, Args)]
pub struct BenchArgs {
    #[arg(long)]
    pub m: usize,
    #[arg(long)]
    pub k: usize,
    #[arg(long)]
    pub n: usize,
    #[arg(long, default_value_t = 5)]
    pub repeat: usize,
    /// Preset file (key=value text); adds one analytic row per file.
    #[arg(long, num_args = 1..)]
    pub preset: Vec<PathBuf>,
    /// Adds analytic rows for the built-in illustrative presets.
    #[arg(long)]
    pub builtin_presets: bool,
    /// Verify against the reference on a sampled sub-block only and skip
    /// timing the reference engine. For shapes too large for the naive loop.
    #[arg(long)]
    pub spot_check: bool,
    #[arg(long)]
    pub csv: Option<PathBuf>,
    /// Free-text host description stored in the report metadata.
    #[arg(long, default_value = "unspecified")]
    pub host: String,
    #[arg(long, default_value = "")]
    pub label_prefix: String,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[command(flatten)]
    pub engine: EngineArgs,
}

impl BenchArgs {
    pub fn new(m: usize, k: usize, n: usize) -> Self {
        Self {
            m,
            k,
            n,
            repeat: 5,
            preset: Vec::new(),
            builtin_presets: false,
            spot_check: false,
            csv: None,
            host: "unspecified".into(),
            label_prefix: String::new(),
            seed: 1,
            engine: EngineArgs::default(),
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct ReportArgs {
    #[arg(long)]
    pub baseline: String,
    #[arg(long, num_args = 1.., required = true)]
    pub csv: Vec<PathBuf>,
    /// Merged CSV with a speedup column. Plot data goes next to it as
    /// `<stem>.<metric>.dat`.
    #[arg(long)]
    pub out: PathBuf,
}

/// Worker count from `STREAMGEMM_THREADS`, else the hardware parallelism.
pub fn worker_threads() -> Result<usize, CliError> {
    match std::env::var(THREADS_ENV) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(t) if t > 0 => Ok(t),
            _ => Err(CliError::Usage(format!("{THREADS_ENV} must be a positive integer, got '{v}'"))),
        },
        Err(_) => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
    }
}

fn read_text(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::file(path, e))
}

fn read_bytes(path: &Path) -> Result<Vec<u8>, CliError> {
    std::fs::read(path).map_err(|e| CliError::file(path, e))
}

fn write_file(path: &Path, data: impl AsRef<[u8]>) -> Result<(), CliError> {
    std::fs::write(path, data).map_err(|e| CliError::file(path, e))
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub dims: Dims4,
    /// Index and value of the largest output when the last layer is softmax.
    pub argmax: Option<(usize, f32)>,
}

impl std::fmt::Display for RunSummary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "output {}", self.dims)?;
        if let Some((i, v)) = self.argmax {
            write!(f, " argmax {i} {v}")?;
        }
        Ok(())
    }
}

pub fn cmd_run(args: &RunArgs, workers: usize) -> Result<RunSummary, CliError> {
    let config = args.engine.config(workers)?;
    let graph = parse_cfg(&read_text(&args.cfg)?).map_err(|e| CliError::file(&args.cfg, e))?;
    let softmax_head = matches!(graph.layers().last().map(|l| l.kind), Some(LayerKind::Softmax));
    let network = load_weights(&read_bytes(&args.weights)?, graph).map_err(|e| CliError::file(&args.weights, e))?;
    let input = Tensor::from_raw_bytes(&read_bytes(&args.input)?).map_err(|e| CliError::file(&args.input, e))?;
    let out = forward(&network, &input, &config).map_err(|e| CliError::Runtime(e.to_string()))?;
    write_file(&args.out, out.to_raw_bytes())?;
    let argmax = softmax_head.then(|| {
        out.data()
            .iter()
            .copied()
            .enumerate()
            .fold((0, f32::NEG_INFINITY), |best, (i, v)| if v > best.1 { (i, v) } else { best })
    });
    Ok(RunSummary { dims: out.dims(), argmax })
}

fn median(samples: &mut [f64]) -> f64 {
    samples.sort_by(f64::total_cmp);
    let mid = samples.len() / 2;
    if samples.len() % 2 == 1 {
        samples[mid]
    } else {
        (samples[mid - 1] + samples[mid]) / 2.0
    }
}

fn bitwise_equal(x: &Matrix, y: &Matrix) -> bool {
    x.rows() == y.rows() && x.cols() == y.cols() && x.data().iter().zip(y.data()).all(|(p, q)| p.to_bits() == q.to_bits())
}

/// Up to `count` evenly spread indices in `0..len`, always including the ends.
pub fn sample_indices(len: usize, count: usize) -> Vec<usize> {
    if len <= count {
        return (0..len).collect();
    }
    let mut v: Vec<usize> = (0..count).map(|i| i * (len - 1) / (count - 1)).collect();
    v.dedup();
    v
}

/// Reference result on the sampled rows and columns of `c`.
fn spot_check(a: &Matrix, b: &Matrix, c: &Matrix) -> Result<bool, CliError> {
    let rows = sample_indices(a.rows(), 64);
    let cols = sample_indices(b.cols(), 64);
    let ctx = |e: streamgemm::TensorError| CliError::Runtime(e.to_string());
    let expected = gemm_reference(&a.select_rows(&rows).map_err(ctx)?, &b.select_cols(&cols).map_err(ctx)?)?;
    let got = c.select_rows(&rows).map_err(ctx)?.select_cols(&cols).map_err(ctx)?;
    Ok(bitwise_equal(&expected, &got))
}

struct Timing {
    median: f64,
    min: f64,
    max: f64,
}

fn time_repeats(repeat: usize, mut f: impl FnMut() -> Result<Matrix, CliError>) -> Result<(Matrix, Timing), CliError> {
    let mut samples = Vec::with_capacity(repeat);
    let mut last = None;
    for _ in 0..repeat {
        let t = Instant::now();
        let c = f()?;
        samples.push(t.elapsed().as_secs_f64());
        last = Some(c);
    }
    let min = samples.iter().copied().fold(f64::INFINITY, f64::min);
    let max = samples.iter().copied().fold(0.0, f64::max);
    Ok((last.expect("repeat >= 1"), Timing { median: median(&mut samples), min, max }))
}

pub fn cmd_bench(args: &BenchArgs, workers: usize) -> Result<BenchmarkReport, CliError> {
    if args.m == 0 || args.k == 0 || args.n == 0 {
        return Err(CliError::Usage("--m, --k and --n must be at least 1".into()));
    }
    if args.repeat == 0 {
        return Err(CliError::Usage("--repeat must be at least 1".into()));
    }
    let shape = GemmShape::new(args.m, args.k, args.n).map_err(|e| CliError::Usage(e.to_string()))?;
    let config = args.engine.config(workers)?;
    let mut presets = Vec::new();
    for path in &args.preset {
        presets.push(DevicePreset::parse(&read_text(path)?).map_err(|e| CliError::file(path, e))?);
    }
    if args.builtin_presets {
        presets.extend(DevicePreset::builtin());
    }
    // Fail on a bad preset before spending time on the engines.
    let analytic = compare(&presets, shape, &config).map_err(|e| CliError::Usage(e.to_string()))?;

    let a = random_matrix(shape.m, shape.k, args.seed);
    let b = random_matrix(shape.k, shape.n, args.seed.wrapping_add(1));
    let (streamed, st) = time_repeats(args.repeat, || Ok(gemm_streamed(&a, &b, &config)?))?;
    let reference = if args.spot_check {
        None
    } else {
        Some(time_repeats(args.repeat, || Ok(gemm_reference(&a, &b)?))?)
    };
    let equal = match &reference {
        Some((c, _)) => bitwise_equal(c, &streamed),
        None => spot_check(&a, &b, &streamed)?,
    };
    if !equal {
        return Err(CliError::Runtime("streamed result differs from the reference; no timings reported".into()));
    }

    let timestamp = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
    let mut report = BenchmarkReport::new()
        .with_metadata("timestamp", timestamp)
        .with_metadata("host", &args.host)
        .with_metadata("config", format!("{config:?}"))
        .with_metadata("repeat", args.repeat)
        .with_metadata("seed", args.seed)
        .with_metadata("flops", shape.flops())
        .with_metadata("bitwise_equal", true)
        .with_metadata("verification", if args.spot_check { "spot-check" } else { "full" });
    let gflops = |s: f64| shape.flops() as f64 / s / 1e9;
    let row = |label: &str, engine: &str, seconds: f64, gpw: Option<f64>, gf: f64| BenchmarkRow {
        label: format!("{}{label}", args.label_prefix),
        m: shape.m,
        k: shape.k,
        n: shape.n,
        engine: engine.to_string(),
        seconds,
        gflops: gf,
        gflops_per_watt: gpw,
    };
    let mut rows = Vec::new();
    if let Some((_, rt)) = &reference {
        report = report
            .with_metadata("reference_min_seconds", rt.min)
            .with_metadata("reference_max_seconds", rt.max);
        rows.push(row("reference", "reference", rt.median, None, gflops(rt.median)));
    }
    report = report
        .with_metadata("streamed_min_seconds", st.min)
        .with_metadata("streamed_max_seconds", st.max);
    rows.push(row("streamed", "streamed", st.median, None, gflops(st.median)));
    for r in &analytic.rows {
        rows.push(row(&r.name, &r.name, r.seconds, r.gflops_per_watt, r.gflops));
    }
    for r in rows {
        report.push(r).map_err(|e| CliError::Usage(e.to_string()))?;
    }
    if let Some(path) = &args.csv {
        write_file(path, report.to_csv().map_err(|e| CliError::Runtime(e.to_string()))?)?;
    }
    Ok(report)
}

/// Paths of the per-metric plot-data files written next to `out`.
pub fn plot_paths(out: &Path) -> Vec<(Metric, PathBuf)> {
    let stem = out.file_stem().map_or("report".into(), |s| s.to_string_lossy().into_owned());
    Metric::ALL
        .iter()
        .map(|&m| (m, out.with_file_name(format!("{stem}.{}.dat", m.name()))))
        .collect()
}

/// Returns the merged report and the printed ratio table.
pub fn cmd_report(args: &ReportArgs) -> Result<(BenchmarkReport, String), CliError> {
    let mut inputs = Vec::with_capacity(args.csv.len());
    for path in &args.csv {
        inputs.push(BenchmarkReport::from_csv(&read_text(path)?).map_err(|e| CliError::file(path, e))?);
    }
    let usage = |e: ReportError| CliError::Usage(e.to_string());
    let merged = BenchmarkReport::merge(&inputs).map_err(usage)?;
    write_file(&args.out, merged.to_normalized_csv(&args.baseline).map_err(usage)?)?;
    for (metric, path) in plot_paths(&args.out) {
        write_file(&path, merged.plot_data(metric, Some(&args.baseline)).map_err(usage)?)?;
    }
    let table = merged.ratio_table(&args.baseline).map_err(usage)?;
    Ok((merged, table))
}

/// Runs one parsed command, printing its summary to stdout.
pub fn execute(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Run(args) => {
            let summary = cmd_run(&args, worker_threads()?)?;
            println!("{summary}");
        }
        Command::Bench(args) => {
            let report = cmd_bench(&args, worker_threads()?)?;
            match &args.csv {
                Some(path) => {
                    for r in &report.rows {
                        println!("{:<24} {:>14.6e} s {:>10.3} GFLOPS", r.label, r.seconds, r.gflops);
                    }
                    println!("bitwise_equal true; wrote {}", path.display());
                }
                None => print!("{}", report.to_csv().map_err(|e| CliError::Runtime(e.to_string()))?),
            }
        }
        Command::Report(args) => {
            let (_, table) = cmd_report(&args)?;
            print!("{table}");
        }
    }
    Ok(())
}
