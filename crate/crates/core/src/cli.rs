//! Command-line front end. `main` only parses arguments and maps the result
//! of [`execute`] to an exit code, so every subcommand is callable from tests.

use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::Deserialize;
use thiserror::Error;

use crate::analysis;
use crate::primes::{Prime, PrimeSequence};
use crate::protocol::Variant;
use crate::sim::{
    self, ConfigError, DataAssignment, LossModel, RunOutput, SimConfig, TopologySpec,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_STRICT_ANOMALY: i32 = 3;

const DEMO_GRAPH: &str = include_str!("../data/demo_graph.txt");
const DEMO_VALUES: [u32; 7] = [1, 3, 4, 2, 1, 2, 3];
const DEMO_MAX_VALUE: u32 = 4;
/// The demo follows the agent holding prime 7.
const DEMO_AGENT: usize = 4;

#[derive(Debug, Parser)]
#[command(
    name = "primetime",
    version,
    about = "Prime-product dissemination simulator"
)]
pub struct Cli {
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one experiment and write trace.csv and summary.txt.
    Run(RunArgs),
    /// Run every point of the config's [sweep] grid.
    Sweep(RunArgs),
    /// Run a closed, loss-free experiment and verify it against the hop-set oracle.
    Check(RunArgs),
    /// Compare prime-product and tabular message sizes.
    CompareSize(CompareArgs),
    /// Print one agent's per-round table, message and inbox on a bundled graph.
    Demo(DemoArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OutputFormat {
    Csv,
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Exit with status 3 if the run logged any protocol anomaly.
    #[arg(long)]
    pub strict: bool,
    #[arg(long, value_parser = parse_variant)]
    pub variant: Option<Variant>,
    #[arg(long, value_enum, default_value = "csv")]
    pub format: OutputFormat,
}

#[derive(Debug, Clone, Args)]
pub struct CompareArgs {
    /// Run this config and report per-message sizes instead.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = 4)]
    pub n: usize,
    #[arg(long, default_value_t = 1)]
    pub max_value: u32,
    /// Table capacity for the tabular baseline; defaults to the agent count.
    #[arg(long)]
    pub n_max: Option<u64>,
    /// Also report steady-state growth for n = 1..=N.
    #[arg(long)]
    pub growth_to: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_parser = parse_variant)]
    pub variant: Option<Variant>,
    #[arg(long, value_enum, default_value = "csv")]
    pub format: OutputFormat,
}

#[derive(Debug, Clone, Args)]
pub struct DemoArgs {
    /// Also write both variants' trace CSVs here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn parse_variant(s: &str) -> Result<Variant, String> {
    s.parse()
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Usage(String),
    #[error("i/o error on {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("{0}")]
    Failed(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Usage(_) => EXIT_CONFIG,
            _ => EXIT_FAILURE,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path).map(BufWriter::new).map_err(io_err(path))
}

fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(io_err(dir))
}

/// Parses argv and runs; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    init_logging(cli.verbose);
    let stdout = io::stdout();
    match execute(&cli.command, &mut stdout.lock()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::new()
        .parse_filters(level)
        .format_timestamp(None)
        .try_init();
}

pub fn execute(command: &Command, stdout: &mut dyn Write) -> Result<i32, CliError> {
    match command {
        Command::Run(a) => cmd_run(a, stdout),
        Command::Sweep(a) => cmd_sweep(a, stdout),
        Command::Check(a) => cmd_check(a, stdout),
        Command::CompareSize(a) => cmd_compare_size(a, stdout),
        Command::Demo(a) => cmd_demo(a, stdout),
    }
}

/// Grid keys for `sweep`; any key left out keeps the base config's value.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepGrid {
    pub n: Option<Vec<usize>>,
    pub max_value: Option<Vec<u32>>,
    pub q: Option<Vec<f64>>,
    pub variant: Option<Vec<Variant>>,
    pub seeds: Option<Vec<u64>>,
    /// Seeds `base_seed .. base_seed + seed_count`.
    pub seed_count: Option<u64>,
}

/// Splits a config file into the simulation config and an optional grid.
pub fn load_config(path: &Path) -> Result<(SimConfig, Option<SweepGrid>), CliError> {
    let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut table: toml::Table =
        toml::from_str(&text).map_err(|e| ConfigError::Parse(e.to_string()))?;
    let grid = table
        .remove("sweep")
        .map(|v| v.try_into::<SweepGrid>())
        .transpose()
        .map_err(|e| ConfigError::Parse(format!("[sweep]: {e}")))?;
    let mut cfg: SimConfig = toml::Value::Table(table)
        .try_into()
        .map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
    cfg.resolve_paths(path.parent().unwrap_or(Path::new(".")));
    Ok((cfg, grid))
}

fn load_overridden(args: &RunArgs) -> Result<(SimConfig, Option<SweepGrid>), CliError> {
    let (mut cfg, grid) = load_config(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(v) = args.variant {
        cfg.variant = v;
    }
    cfg.validate()?;
    Ok((cfg, grid))
}

fn write_run(out: &RunOutput, dir: &Path) -> Result<(), CliError> {
    ensure_dir(dir)?;
    let trace_path = dir.join("trace.csv");
    sim::write_trace_csv(&out.traces, create(&trace_path)?)?;
    let summary_path = dir.join("summary.txt");
    let mut w = create(&summary_path)?;
    sim::write_summary(&out.summary, &mut w).map_err(io_err(&summary_path))?;
    w.flush().map_err(io_err(&summary_path))?;
    Ok(())
}

fn strict_code(strict: bool, out: &RunOutput) -> i32 {
    let count = out.anomalies().count();
    if strict && count > 0 {
        eprintln!("strict mode: {count} anomalies logged");
        EXIT_STRICT_ANOMALY
    } else {
        EXIT_OK
    }
}

pub fn cmd_run(args: &RunArgs, stdout: &mut dyn Write) -> Result<i32, CliError> {
    let (cfg, _) = load_overridden(args)?;
    let out = sim::run(&cfg)?;
    write_run(&out, &args.out)?;
    let s = &out.summary;
    let completion = s.completion_round.map_or("never".into(), |k| k.to_string());
    writeln!(
        stdout,
        "{} rounds, completion round {completion}, diameter {}, peak {} bits",
        s.rounds, s.diameter, s.peak_message_bits
    )
    .map_err(io_err(Path::new("<stdout>")))?;
    Ok(strict_code(args.strict, &out))
}

#[derive(Debug, Clone, PartialEq)]
struct GridPoint {
    n: Option<usize>,
    max_value: u32,
    q: Option<f64>,
    variant: Variant,
    seed: u64,
}

fn grid_points(base: &SimConfig, grid: &SweepGrid) -> Result<Vec<GridPoint>, CliError> {
    let ns: Vec<Option<usize>> = match &grid.n {
        Some(v) => v.iter().map(|&n| Some(n)).collect(),
        None => vec![None],
    };
    let ms = grid
        .max_value
        .clone()
        .unwrap_or_else(|| vec![base.max_value]);
    let qs: Vec<Option<f64>> = match &grid.q {
        Some(v) => v.iter().map(|&q| Some(q)).collect(),
        None => vec![None],
    };
    let variants = grid.variant.clone().unwrap_or_else(|| vec![base.variant]);
    let seeds: Vec<u64> = match (&grid.seeds, grid.seed_count) {
        (Some(_), Some(_)) => {
            return Err(CliError::Usage(
                "[sweep]: give either seeds or seed_count".into(),
            ))
        }
        (Some(s), None) => s.clone(),
        (None, Some(c)) => (0..c).map(|i| base.seed + i).collect(),
        (None, None) => vec![base.seed],
    };
    let mut points = Vec::new();
    for &n in &ns {
        for &max_value in &ms {
            for &q in &qs {
                for &variant in &variants {
                    for &seed in &seeds {
                        points.push(GridPoint {
                            n,
                            max_value,
                            q,
                            variant,
                            seed,
                        });
                    }
                }
            }
        }
    }
    points.sort_by(|a, b| {
        a.n.cmp(&b.n)
            .then(a.max_value.cmp(&b.max_value))
            .then(a.q.unwrap_or(-1.0).total_cmp(&b.q.unwrap_or(-1.0)))
            .then(a.variant.cmp(&b.variant))
            .then(a.seed.cmp(&b.seed))
    });
    points.dedup();
    Ok(points)
}

fn point_config(base: &SimConfig, pt: &GridPoint) -> Result<SimConfig, ConfigError> {
    let mut cfg = base.clone();
    if let Some(n) = pt.n {
        cfg.topology = base
            .topology
            .with_node_count(n)
            .ok_or_else(|| ConfigError::Invalid {
                field: "sweep.n".into(),
                reason: "explicit topologies cannot be resized".into(),
            })?;
        if let DataAssignment::Explicit { .. } = cfg.data {
            cfg.data = DataAssignment::default();
        }
    }
    cfg.max_value = pt.max_value;
    if let Some(q) = pt.q {
        cfg.loss = LossModel::Bernoulli { q };
    }
    cfg.variant = pt.variant;
    cfg.seed = pt.seed;
    cfg.validate()?;
    Ok(cfg)
}

fn fmt_q(q: Option<f64>) -> String {
    q.map_or_else(|| "-".to_string(), |q| q.to_string())
}

/// (n, M, q, variant) of one completion-rate row.
type RateKey = (String, u32, String, Variant);

pub fn cmd_sweep(args: &RunArgs, stdout: &mut dyn Write) -> Result<i32, CliError> {
    let (base, grid) = load_overridden(args)?;
    let mut grid = grid.ok_or_else(|| CliError::Usage("config has no [sweep] section".into()))?;
    if let Some(v) = args.variant {
        grid.variant = Some(vec![v]);
    }
    let points = grid_points(&base, &grid)?;
    let results: Vec<Result<RunOutput, String>> = points
        .par_iter()
        .map(|pt| {
            point_config(&base, pt)
                .and_then(|c| sim::run(&c))
                .map_err(|e| e.to_string())
        })
        .collect();

    ensure_dir(&args.out)?;
    let path = args.out.join("sweep.csv");
    let mut w = csv::Writer::from_writer(create(&path)?);
    w.write_record([
        "n",
        "max_value",
        "q",
        "variant",
        "seed",
        "status",
        "completion_round",
        "diameter",
        "peak_message_bits",
        "total_bits_transmitted",
        "anomalies",
    ])?;
    let mut strict_hit = false;
    let mut rates: Vec<(RateKey, usize, usize)> = Vec::new();
    for (pt, res) in points.iter().zip(&results) {
        let n = match (pt.n, &res) {
            (Some(n), _) => n.to_string(),
            (None, Ok(o)) => o.topology.node_count().to_string(),
            (None, Err(_)) => base
                .topology
                .node_count()
                .map_or("-".into(), |n| n.to_string()),
        };
        let key = (n.clone(), pt.max_value, fmt_q(pt.q), pt.variant);
        let completed = matches!(res, Ok(o) if o.summary.completion_round.is_some());
        match rates.iter_mut().find(|(k, _, _)| *k == key) {
            Some((_, runs, done)) => {
                *runs += 1;
                *done += completed as usize;
            }
            None => rates.push((key, 1, completed as usize)),
        }
        let mut row = vec![
            n,
            pt.max_value.to_string(),
            fmt_q(pt.q),
            pt.variant.to_string(),
            pt.seed.to_string(),
        ];
        match res {
            Ok(o) => {
                let s = &o.summary;
                strict_hit |= args.strict && s.anomalies > 0;
                row.extend([
                    "ok".to_string(),
                    s.completion_round.map_or("never".into(), |k| k.to_string()),
                    s.diameter.to_string(),
                    s.peak_message_bits.to_string(),
                    s.total_bits_transmitted.to_string(),
                    s.anomalies.to_string(),
                ]);
            }
            Err(e) => {
                log::warn!("sweep point {pt:?} failed: {e}");
                row.push(format!("error: {e}"));
                row.extend(std::iter::repeat_n(String::new(), 5));
            }
        }
        w.write_record(&row)?;
    }
    w.flush().map_err(io_err(&path))?;

    let path = args.out.join("sweep_rates.csv");
    let mut w = csv::Writer::from_writer(create(&path)?);
    w.write_record([
        "n",
        "max_value",
        "q",
        "variant",
        "runs",
        "completed",
        "completion_rate",
    ])?;
    for ((n, m, q, v), runs, done) in &rates {
        w.write_record([
            n.clone(),
            m.to_string(),
            q.clone(),
            v.to_string(),
            runs.to_string(),
            done.to_string(),
            format!("{:.4}", *done as f64 / *runs as f64),
        ])?;
    }
    w.flush().map_err(io_err(&path))?;

    let failures = results.iter().filter(|r| r.is_err()).count();
    writeln!(stdout, "{} grid points, {failures} failed", points.len())
        .map_err(io_err(Path::new("<stdout>")))?;
    Ok(if strict_hit {
        EXIT_STRICT_ANOMALY
    } else {
        EXIT_OK
    })
}

pub fn cmd_check(args: &RunArgs, stdout: &mut dyn Write) -> Result<i32, CliError> {
    let (cfg, _) = load_overridden(args)?;
    if cfg.loss != LossModel::None {
        return Err(ConfigError::Invalid {
            field: "loss".into(),
            reason: "check needs a loss-free run".into(),
        }
        .into());
    }
    if !cfg.events.is_empty() {
        return Err(ConfigError::Invalid {
            field: "events".into(),
            reason: "check needs a closed network".into(),
        }
        .into());
    }
    let mut cfg = cfg;
    cfg.tail_rounds = cfg.tail_rounds.max(2);
    let out = sim::run(&cfg)?;
    write_run(&out, &args.out)?;
    let verdicts = [
        analysis::check_completion_at_diameter(&out, &out.topology),
        analysis::check_hop_equations(&out, &out.topology, cfg.variant),
    ];
    let path = args.out.join("verdicts.csv");
    analysis::write_verdicts(&verdicts, create(&path)?)?;
    for v in &verdicts {
        writeln!(stdout, "{v}").map_err(io_err(Path::new("<stdout>")))?;
    }
    if verdicts.iter().all(|v| v.passed) {
        Ok(strict_code(args.strict, &out))
    } else {
        Ok(EXIT_FAILURE)
    }
}

pub fn cmd_compare_size(args: &CompareArgs, stdout: &mut dyn Write) -> Result<i32, CliError> {
    let mut sink: Box<dyn Write + '_> = Box::new(&mut *stdout);
    if let Some(path) = &args.config {
        let (mut cfg, _) = load_config(path)?;
        if let Some(seed) = args.seed {
            cfg.seed = seed;
        }
        if let Some(v) = args.variant {
            cfg.variant = v;
        }
        let out = sim::run(&cfg)?;
        let n_max = args.n_max.unwrap_or(out.topology.node_count() as u64);
        let report = analysis::size_report(&out, n_max, cfg.max_value);
        if let Some(dir) = &args.out {
            ensure_dir(dir)?;
            sink = Box::new(create(&dir.join("size_report.csv"))?);
        }
        analysis::write_size_report(&report, &mut sink)?;
        drop(sink);
        writeln!(
            stdout,
            "# total primetime_bits = {}, total tabular_bits = {}",
            report.total_primetime_bits, report.total_tabular_bits
        )
        .map_err(io_err(Path::new("<stdout>")))?;
        return Ok(EXIT_OK);
    }

    if args.n == 0 || args.max_value == 0 {
        return Err(CliError::Usage(
            "--n and --max-value must be at least 1".into(),
        ));
    }
    let n_max = args.n_max.unwrap_or(args.n as u64);
    let table: Vec<(Prime, u32)> = analysis::uniform_full_table(args.n, args.max_value);
    let cmp = analysis::compare_encodings(&table, n_max, args.max_value)
        .map_err(|e| CliError::Failed(e.to_string()))?;
    if let Some(dir) = &args.out {
        ensure_dir(dir)?;
        sink = Box::new(create(&dir.join("compare_size.csv"))?);
    }
    let mut w = csv::Writer::from_writer(&mut sink);
    w.write_record(["n", "M", "n_max", "primetime_bits", "tabular_bits"])?;
    w.write_record([
        args.n.to_string(),
        args.max_value.to_string(),
        n_max.to_string(),
        cmp.primetime_bits.to_string(),
        cmp.tabular_bits.to_string(),
    ])?;
    w.flush().map_err(io_err(Path::new("compare_size.csv")))?;
    drop(w);

    if let Some(limit) = args.growth_to {
        if limit > PrimeSequence::standard().cap() {
            return Err(CliError::Usage(format!(
                "--growth-to is limited to {} agents",
                PrimeSequence::standard().cap()
            )));
        }
        let ns: Vec<usize> = (1..=limit).collect();
        if let Some(dir) = &args.out {
            sink = Box::new(create(&dir.join("growth.csv"))?);
        }
        let mut w = csv::Writer::from_writer(&mut sink);
        w.write_record([
            "n",
            "M",
            "steady_state_bits",
            "tabular_bits",
            "primorial_exceeds_factorial",
        ])?;
        for row in analysis::steady_state_growth(&ns, args.max_value) {
            w.write_record([
                row.n.to_string(),
                args.max_value.to_string(),
                row.steady_state_bits.to_string(),
                analysis::tabular_bits(row.n, row.n as u64, args.max_value).to_string(),
                row.value_exceeds_factorial.to_string(),
            ])?;
        }
        w.flush().map_err(io_err(Path::new("growth.csv")))?;
    }
    Ok(EXIT_OK)
}

/// The bundled demo configuration for one variant.
pub fn demo_config(variant: Variant) -> SimConfig {
    let topology =
        crate::graph::Topology::parse_edge_list(DEMO_GRAPH).expect("bundled graph is valid");
    let mut cfg = SimConfig::new(
        TopologySpec::Edges {
            n: topology.node_count(),
            edges: topology.edges(),
        },
        DEMO_MAX_VALUE,
        variant,
    );
    cfg.data = DataAssignment::Explicit {
        values: DEMO_VALUES.to_vec(),
    };
    cfg
}

fn fmt_pairs(pairs: &[(Prime, u32)]) -> String {
    let inner: Vec<String> = pairs.iter().map(|(p, x)| format!("{p}^{x}")).collect();
    format!("{{{}}}", inner.join(", "))
}

pub fn cmd_demo(args: &DemoArgs, stdout: &mut dyn Write) -> Result<i32, CliError> {
    let so = |e| CliError::Io {
        path: PathBuf::from("<stdout>"),
        source: e,
    };
    for variant in [Variant::PrimeTime, Variant::Incremental] {
        let out = sim::run(&demo_config(variant))?;
        let (prime, value) = out.initial[&DEMO_AGENT];
        writeln!(
            stdout,
            "== {variant}: agent {DEMO_AGENT} (prime {prime}, value {value}), diameter {}, complete at round {} ==",
            out.summary.diameter,
            out.summary.completion_round.map_or("never".into(), |k| k.to_string()),
        )
        .map_err(so)?;
        writeln!(
            stdout,
            "{:<5} | {:<40} | {:<24} | incoming m_j(k)",
            "round", "table T(k)", "sent m(k)"
        )
        .map_err(so)?;
        for t in &out.traces {
            let rec = t.record(DEMO_AGENT).expect("demo agent is always present");
            let incoming: Vec<String> = t
                .incoming(DEMO_AGENT)
                .into_iter()
                .map(|(from, m)| format!("from {}: {m}", out.initial[&from].0))
                .collect();
            writeln!(
                stdout,
                "{:<5} | {:<40} | {:<24} | {}",
                t.round,
                fmt_pairs(&rec.table),
                rec.message.to_string(),
                incoming.join("; ")
            )
            .map_err(so)?;
        }
        writeln!(stdout).map_err(so)?;
        if let Some(dir) = &args.out {
            write_run(&out, &dir.join(variant.as_str()))?;
        }
    }
    Ok(EXIT_OK)
}
