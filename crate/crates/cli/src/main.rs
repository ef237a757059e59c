use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::info;

use heatscatter::graph::{parse_edge_list, EdgeFields};
use heatscatter::laplacian::SpectralLaplacian;
use heatscatter::scattering::scatter;
use heatscatter::selftest::{self, SelftestConfig};
use heatscatter::semigroup::{default_time, make_filters};
use heatscatter::stochastic::{DeltaPolicy, VarianceModel};
use heatscatter::traffic::{
    fit_model, scan_year, simulate_counts, CountSeries, GridModel, Injection, ScanConfig, TimeGrid, TimePolicy,
};

#[derive(Parser, Debug)]
#[command(name = "heatscatter", version, about = "Heat-semigroup scattering on directed graphs")]
struct Cli {
    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate a year of counts from a model (or the built-in demo profile).
    Simulate(SimulateArgs),
    /// Fit a per-weekday model to a counts file.
    Fit(FitArgs),
    /// Scatter one signal on an edge-list graph.
    Scatter(ScatterArgs),
    /// Score every day of a counts file.
    Detect(DetectArgs),
    /// Run the invariant suites.
    Selftest(SelftestArgs),
}

#[derive(Args, Debug, Clone, Copy)]
struct GridArgs {
    #[arg(long, default_value_t = 288)]
    blocks: usize,
    #[arg(long, default_value_t = 364)]
    days: usize,
}

impl GridArgs {
    fn grid(&self) -> Result<TimeGrid> {
        Ok(TimeGrid::new(self.blocks, self.days)?)
    }
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[command(flatten)]
    grid: GridArgs,
    /// Model JSON; the demo profile is used when absent.
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// `day=D,factor=X` with a 1-based day; repeatable.
    #[arg(long, value_parser = parse_injection)]
    inject: Vec<Injection>,
    /// Counts CSV, `-` for stdout.
    #[arg(short, long, default_value = "-")]
    output: PathBuf,
    /// Also write the generating model as JSON.
    #[arg(long)]
    model_out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct FitArgs {
    #[command(flatten)]
    grid: GridArgs,
    /// Counts CSV.
    input: PathBuf,
    #[arg(long)]
    station: Option<String>,
    /// Model JSON, `-` for stdout.
    #[arg(short, long, default_value = "-")]
    output: PathBuf,
}

#[derive(Args, Debug)]
struct ScatterArgs {
    /// Edge list: `i j` or `i j w a` per line.
    graph: PathBuf,
    /// One value per line, in vertex order.
    signal: PathBuf,
    /// `auto` (ln 2 / λmax) or a positive number.
    #[arg(long, default_value = "auto")]
    t: TimeArg,
    #[arg(long, default_value_t = 5)]
    layers: usize,
    /// Layer norms CSV, `-` for stdout.
    #[arg(short, long, default_value = "-")]
    output: PathBuf,
    /// Dump the Laplacian matrix as CSV.
    #[arg(long)]
    dump_laplacian: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct DetectArgs {
    #[command(flatten)]
    grid: GridArgs,
    /// Counts CSV.
    input: PathBuf,
    #[arg(long, required_unless_present = "fit_first", conflicts_with = "fit_first")]
    model: Option<PathBuf>,
    /// Fit the model on the input itself.
    #[arg(long)]
    fit_first: bool,
    #[arg(long)]
    station: Option<String>,
    #[arg(long, default_value = "auto")]
    t: TimeArg,
    /// `auto` (3·√U) or a positive number.
    #[arg(long, default_value = "auto")]
    delta: DeltaArg,
    /// Variance in Cantelli's bound: `exact` under the model, or `bound`
    /// (chain bound summed over the window).
    #[arg(long, value_enum, default_value_t = VarianceArg::Exact)]
    variance: VarianceArg,
    #[arg(long, default_value_t = 5)]
    layers: usize,
    /// Recorded in the fitted model's metadata.
    #[arg(long)]
    seed: Option<u64>,
    /// Verdicts CSV, `-` for stdout.
    #[arg(short, long, default_value = "-")]
    output: PathBuf,
    /// First-layer heatmap (binary PGM).
    #[arg(long)]
    heatmap: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SelftestArgs {
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Algebraic checks only.
    #[arg(long)]
    quick: bool,
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
enum VarianceArg {
    Exact,
    Bound,
}

impl From<VarianceArg> for VarianceModel {
    fn from(v: VarianceArg) -> Self {
        match v {
            VarianceArg::Exact => VarianceModel::Exact,
            VarianceArg::Bound => VarianceModel::ChainBound,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct TimeArg(TimePolicy);

impl FromStr for TimeArg {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        if s == "auto" {
            return Ok(Self(TimePolicy::Auto));
        }
        match s.parse::<f64>() {
            Ok(t) if t > 0.0 && t.is_finite() => Ok(Self(TimePolicy::Fixed(t))),
            _ => Err(format!("expected `auto` or a positive number, got `{s}`")),
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct DeltaArg(DeltaPolicy);

impl FromStr for DeltaArg {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        if s == "auto" {
            return Ok(Self(DeltaPolicy::default()));
        }
        match s.parse::<f64>() {
            Ok(d) if d > 0.0 && d.is_finite() => Ok(Self(DeltaPolicy::Fixed(d))),
            _ => Err(format!("expected `auto` or a positive number, got `{s}`")),
        }
    }
}

fn parse_injection(s: &str) -> std::result::Result<Injection, String> {
    let (mut day, mut factor) = (None, None);
    for part in s.split(',') {
        let (key, value) = part
            .split_once('=')
            .ok_or_else(|| format!("expected key=value, got `{part}`"))?;
        match key.trim() {
            "day" => day = Some(value.trim().parse::<usize>().map_err(|e| format!("day: {e}"))?),
            "factor" => factor = Some(value.trim().parse::<f64>().map_err(|e| format!("factor: {e}"))?),
            other => return Err(format!("unknown key `{other}`")),
        }
    }
    let day = day.ok_or("missing day")?;
    let factor = factor.ok_or("missing factor")?;
    if day == 0 {
        return Err("day is 1-based".into());
    }
    if !(factor > 0.0 && factor.is_finite()) {
        return Err(format!("factor must be positive, got {factor}"));
    }
    Ok(Injection { day: day - 1, factor })
}

fn is_stdio(path: &Path) -> bool {
    path.as_os_str() == "-"
}

fn check_input(path: &Path) -> Result<()> {
    if !path.is_file() {
        bail!("input file {} not found", path.display());
    }
    Ok(())
}

fn check_output(path: &Path) -> Result<()> {
    if is_stdio(path) {
        return Ok(());
    }
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() && !dir.is_dir() => {
            bail!("output directory {} does not exist", dir.display())
        }
        _ => Ok(()),
    }
}

fn open_input(path: &Path) -> Result<Box<dyn BufRead>> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    Ok(Box::new(BufReader::new(file)))
}

fn write_output(path: &Path, body: impl FnOnce(&mut dyn Write) -> io::Result<()>) -> Result<()> {
    if is_stdio(path) {
        let stdout = io::stdout();
        let mut lock = stdout.lock();
        body(&mut lock)?;
        lock.flush()?;
    } else {
        let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
        let mut out = BufWriter::new(file);
        body(&mut out).with_context(|| format!("writing {}", path.display()))?;
        out.flush()?;
    }
    Ok(())
}

fn read_model(path: &Path) -> Result<GridModel> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    GridModel::from_json(&text).with_context(|| format!("model file {}", path.display()))
}

fn read_counts(path: &Path, grid: TimeGrid, station: Option<&str>) -> Result<CountSeries> {
    CountSeries::read_csv(open_input(path)?, grid, station).with_context(|| format!("counts file {}", path.display()))
}

fn cmd_simulate(args: &SimulateArgs) -> Result<ExitCode> {
    let grid = args.grid.grid()?;
    if let Some(path) = &args.model {
        check_input(path)?;
    }
    check_output(&args.output)?;
    let mut model = match &args.model {
        Some(path) => read_model(path)?,
        None => GridModel::demo(grid.blocks_per_day()),
    };
    model.metadata.seed = Some(args.seed);
    for inj in &args.inject {
        if inj.day >= grid.days() {
            bail!("injection day {} outside 1..={}", inj.day + 1, grid.days());
        }
    }
    let series = simulate_counts(&model, &grid, args.seed, &args.inject)?;
    write_output(&args.output, |out| series.write_csv(out))?;
    if let Some(path) = &args.model_out {
        let json = model.to_json()?;
        write_output(path, |out| writeln!(out, "{json}"))?;
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_fit(args: &FitArgs) -> Result<ExitCode> {
    let grid = args.grid.grid()?;
    check_input(&args.input)?;
    check_output(&args.output)?;
    let series = read_counts(&args.input, grid, args.station.as_deref())?;
    let model = fit_model(&series, &grid)?;
    let json = model.to_json()?;
    write_output(&args.output, |out| writeln!(out, "{json}"))?;
    Ok(ExitCode::SUCCESS)
}

fn read_signal(path: &Path) -> Result<Vec<f64>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut values = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let v: f64 = line
            .parse()
            .map_err(|_| anyhow!("{}: line {}: bad value `{line}`", path.display(), i + 1))?;
        values.push(v);
    }
    Ok(values)
}

fn cmd_scatter(args: &ScatterArgs) -> Result<ExitCode> {
    check_input(&args.graph)?;
    check_input(&args.signal)?;
    check_output(&args.output)?;
    if args.layers == 0 {
        bail!("--layers must be positive");
    }
    let text = std::fs::read_to_string(&args.graph).with_context(|| format!("reading {}", args.graph.display()))?;
    let f = read_signal(&args.signal)?;
    let parsed = parse_edge_list(&text, Some(f.len())).with_context(|| format!("graph {}", args.graph.display()))?;
    let fields = parsed.fields.unwrap_or_else(|| EdgeFields::uniform(&parsed.graph));
    let lap = SpectralLaplacian::build(&parsed.graph, &fields)?;
    if let Some(path) = &args.dump_laplacian {
        write_output(path, |out| lap.write_csv(out))?;
    }
    let t = match args.t.0 {
        TimePolicy::Auto => default_time(&lap)?,
        TimePolicy::Fixed(t) => t,
    };
    info!("t = {t}, λmax = {}", lap.lambda_max());
    let out = scatter(&make_filters(&lap, t)?, &f, args.layers)?;
    write_output(&args.output, |w| out.write_norms_csv(w))?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_detect(args: &DetectArgs) -> Result<ExitCode> {
    let grid = args.grid.grid()?;
    check_input(&args.input)?;
    if let Some(path) = &args.model {
        check_input(path)?;
    }
    check_output(&args.output)?;
    if let Some(path) = &args.heatmap {
        check_output(path)?;
    }
    if args.layers == 0 {
        bail!("--layers must be positive");
    }
    let series = read_counts(&args.input, grid, args.station.as_deref())?;
    let model = match &args.model {
        Some(path) => read_model(path)?,
        None => {
            let mut m = fit_model(&series, &grid)?;
            m.metadata.seed = args.seed;
            m
        }
    };
    let config = ScanConfig {
        time: args.t.0,
        delta: args.delta.0,
        variance: args.variance.into(),
        layers: args.layers,
    };
    let scan = scan_year(&series, &model, &config)?;
    write_output(&args.output, |out| scan.write_verdicts_csv(out))?;
    if let Some(path) = &args.heatmap {
        write_output(path, |out| scan.write_heatmap_pgm(out))?;
    }
    let flagged = scan.flagged_days();
    let scored = scan.days.iter().flatten().count();
    info!(
        "{scored} days scored, {} flagged, Cantelli budget {:.3}",
        flagged.len(),
        scan.cantelli_budget()
    );
    if flagged.is_empty() {
        Ok(ExitCode::SUCCESS)
    } else {
        let days: Vec<String> = flagged.iter().map(|d| (d + 1).to_string()).collect();
        eprintln!("flagged days: {}", days.join(" "));
        Ok(ExitCode::from(2))
    }
}

fn cmd_selftest(args: &SelftestArgs) -> Result<ExitCode> {
    let report = selftest::run(SelftestConfig {
        seed: args.seed,
        quick: args.quick,
    })?;
    eprintln!("{report}");
    Ok(if report.all_passed() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    })
}

fn run(cli: &Cli) -> Result<ExitCode> {
    if let Some(n) = cli.threads {
        if n == 0 {
            bail!("--threads must be positive");
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring thread pool")?;
    }
    match &cli.command {
        Command::Simulate(a) => cmd_simulate(a),
        Command::Fit(a) => cmd_fit(a),
        Command::Scatter(a) => cmd_scatter(a),
        Command::Detect(a) => cmd_detect(a),
        Command::Selftest(a) => cmd_selftest(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    env_logger::Builder::new()
        .filter_level(if cli.verbose {
            log::LevelFilter::Info
        } else {
            log::LevelFilter::Warn
        })
        .format_timestamp(None)
        .init();
    match run(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
