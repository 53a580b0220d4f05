use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use edgegraph::bench::{read_latencies, BenchMeta, BenchReport, BenchRow, Format};
use edgegraph::clock::WallClock;
use edgegraph::costs::CostsFile;
use edgegraph::{files, records};
use edgegraph_core::conv::ConvWorkload;
use edgegraph_core::graph::{assign_devices, insert_copies, run_graph, Graph, OpKind};
use edgegraph_core::timing::{FnTimer, Probe, Timer};
use edgegraph_core::tune::{synthetic_surface, tune_model, tune_random, TuneOutcome, Tuner};
use edgegraph_core::{Session, Tensor};

#[derive(Parser)]
#[command(name = "edgegraph", version, about = "Place, run and tune CNN operator graphs on an emulated GPU")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Place a graph across CPU and GPU, run it, and report devices and timing.
    Run(RunArgs),
    /// Run a graph and dump the emulator's launch statistics.
    Stats(PlaceArgs),
    /// Search schedules for one convolution workload and append the trials to
    /// the records file.
    Tune(TuneArgs),
    /// Pick a data layout per node with the tree dynamic program.
    TuneGraph(TuneGraphArgs),
    /// Render a latency comparison table with speedups.
    Bench(BenchArgs),
}

fn parse_op(s: &str) -> Result<OpKind, String> {
    s.parse()
}

#[derive(Args)]
struct PlaceArgs {
    /// Graph document (JSON).
    graph: PathBuf,
    /// Input tensors: a JSON object mapping input names to tensor records.
    inputs: PathBuf,
    /// Ops placed on the GPU; defaults to every implemented kernel.
    #[arg(long, value_delimiter = ',', value_parser = parse_op)]
    gpu_ops: Option<Vec<OpKind>>,
    /// Ops removed from the GPU list, forcing them onto the CPU.
    #[arg(long, value_delimiter = ',', value_parser = parse_op)]
    fallback: Vec<OpKind>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    place: PlaceArgs,
    /// Write graph outputs to this file.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Method {
    Random,
    Model,
}

#[derive(Clone, Copy, ValueEnum)]
enum TimerKind {
    /// Wall-clock time of the emulated kernel.
    Clock,
    /// Deterministic seeded cost surface.
    Synthetic,
}

#[derive(Args)]
struct TuneArgs {
    /// Workload key, e.g. conv2d/1-3-8-8/8-3-3/1-1/1-1/1-1/1
    #[arg(value_parser = |s: &str| s.parse::<ConvWorkload>().map_err(|e| e.to_string()))]
    workload: ConvWorkload,
    /// Number of configs to measure.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    budget: u64,
    #[arg(long, value_enum, default_value = "model")]
    method: Method,
    /// Records file to append to.
    #[arg(long, env = "EDGEGRAPH_RECORDS", default_value = "edgegraph_records.jsonl")]
    records: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Configs measured per model-guided round.
    #[arg(long, default_value_t = 4, value_parser = clap::value_parser!(u64).range(1..))]
    batch: u64,
    /// Timed runs per config.
    #[arg(long, default_value_t = 3, value_parser = clap::value_parser!(u64).range(1..))]
    repeats: u64,
    #[arg(long, value_enum, default_value = "clock")]
    timer: TimerKind,
    #[arg(long, default_value = "emu")]
    device_tag: String,
}

#[derive(Args)]
struct TuneGraphArgs {
    /// Graph document (JSON).
    graph: PathBuf,
    /// Node and transform costs (JSON).
    #[arg(long)]
    costs: PathBuf,
}

#[derive(Args)]
struct BenchArgs {
    /// Baseline latency in milliseconds.
    #[arg(long, requires = "after", conflicts_with_all = ["baseline_file", "ours_file"])]
    before: Option<f64>,
    /// Optimized latency in milliseconds.
    #[arg(long)]
    after: Option<f64>,
    /// Row label for --before/--after.
    #[arg(long, default_value = "model")]
    name: String,
    /// Baseline latencies: a JSON object mapping names to milliseconds.
    #[arg(long, requires = "ours_file")]
    baseline_file: Option<PathBuf>,
    /// Optimized latencies in the same format.
    #[arg(long)]
    ours_file: Option<PathBuf>,
    /// Decimals in the speedup column.
    #[arg(long, default_value_t = 2)]
    precision: usize,
    #[arg(long, value_enum, default_value = "text")]
    format: ReportFormat,
    #[arg(long)]
    device_tag: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    date: Option<String>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ReportFormat {
    Text,
    Csv,
}

fn gpu_set(args: &PlaceArgs) -> BTreeSet<OpKind> {
    let mut set: BTreeSet<OpKind> = match &args.gpu_ops {
        Some(ops) => ops.iter().copied().collect(),
        None => OpKind::ALL.iter().copied().filter(|&k| k != OpKind::Copy).collect(),
    };
    for op in &args.fallback {
        set.remove(op);
    }
    set
}

fn load_and_place(args: &PlaceArgs) -> Result<(Graph, BTreeMap<String, Tensor>)> {
    let g = files::read_graph(&args.graph)?;
    let inputs = files::read_tensor_map(&args.inputs)?;
    let placed = insert_copies(assign_devices(g, &gpu_set(args))).context("placing graph")?;
    Ok((placed, inputs))
}

fn cmd_run(args: RunArgs) -> Result<()> {
    let (g, inputs) = load_and_place(&args.place)?;
    let start = Instant::now();
    let (outputs, report) = run_graph(&mut Session::new(), &g, &inputs)?;
    let wall = start.elapsed();
    for (id, device) in &report.executed {
        let op = g.node(id).map(|n| n.op.name()).unwrap_or("?");
        println!("node {id} {op} {device}");
    }
    println!("copy nodes: {} ({} elements)", report.copies, report.copied_elements);
    println!("kernel launches: {}", report.launches);
    println!("wall time: {:.3} ms", wall.as_secs_f64() * 1e3);
    if let Some(path) = &args.output {
        files::write_tensor_map(path, &outputs)?;
        println!("outputs written to {}", path.display());
    }
    Ok(())
}

fn cmd_stats(args: PlaceArgs) -> Result<()> {
    let (g, inputs) = load_and_place(&args)?;
    let mut session = Session::new();
    run_graph(&mut session, &g, &inputs)?;
    let s = session.stats();
    println!("launches: {}", s.launches);
    println!("barriers: {}", s.barriers);
    println!("divergence_events: {}", s.divergence_events);
    println!("threads: {}", s.per_thread_items.len());
    println!("work_items: {}", s.per_thread_items.iter().sum::<u64>());
    println!("load_imbalance: {:.6}", s.load_imbalance());
    for (i, l) in s.launch_log.iter().enumerate() {
        println!("launch {i}: grid={} block={} barriers={}", l.grid, l.block, l.barriers);
    }
    Ok(())
}

fn search<T: Timer>(tuner: &mut Tuner<T>, args: &TuneArgs) -> Result<TuneOutcome> {
    let budget = args.budget as usize;
    let out = match args.method {
        Method::Random => tune_random(tuner, &args.workload, budget, args.seed)?,
        Method::Model => tune_model(tuner, &args.workload, budget, (args.batch as usize).min(budget), args.seed)?,
    };
    Ok(out)
}

fn cmd_tune(args: TuneArgs) -> Result<()> {
    let repeats = args.repeats as usize;
    let out = match args.timer {
        TimerKind::Clock => {
            let mut t = Tuner::new(WallClock).with_repeats(repeats).with_device_tag(&args.device_tag);
            search(&mut t, &args)?
        }
        TimerKind::Synthetic => {
            let f = synthetic_surface(&args.workload, args.seed);
            let timer = FnTimer(move |p: &Probe<'_>| p.config.map_or(f64::INFINITY, &f));
            let mut t = Tuner::new(timer).with_repeats(repeats).with_device_tag(&args.device_tag);
            search(&mut t, &args)?
        }
    };
    for (i, r) in out.trials.iter().enumerate() {
        match r.cost_mean {
            Some(c) if r.is_ok() => println!("trial {}: {} cost={c}", i + 1, r.config),
            _ => println!("trial {}: {} failed: {}", i + 1, r.config, r.error.as_deref().unwrap_or("unknown")),
        }
    }
    println!("best: {} cost={}", out.best.config, out.best.cost());
    records::append(&args.records, &out.trials)?;
    println!("appended {} records to {}", out.trials.len(), args.records.display());
    Ok(())
}

fn cmd_tune_graph(args: TuneGraphArgs) -> Result<()> {
    let g = files::read_graph(&args.graph)?;
    let costs = CostsFile::read(&args.costs)?;
    let (layouts, total) = costs.tune(&g)?;
    for n in g.nodes() {
        println!("{} {}", n.id, layouts[&n.id]);
    }
    println!("total cost: {total}");
    Ok(())
}

fn cmd_bench(args: BenchArgs) -> Result<()> {
    let meta = BenchMeta { device_tag: args.device_tag, seed: args.seed, date: args.date };
    let report = match (args.before, args.after, &args.baseline_file, &args.ours_file) {
        (Some(b), Some(a), None, None) => {
            BenchReport::new(vec![BenchRow { name: args.name, baseline_ms: Some(b), ours_ms: a }], meta)?
        }
        (None, Some(a), None, None) => {
            BenchReport::new(vec![BenchRow { name: args.name, baseline_ms: None, ours_ms: a }], meta)?
        }
        (None, None, Some(bf), Some(of)) => BenchReport::paired(&read_latencies(bf)?, &read_latencies(of)?, meta)?,
        (None, None, None, Some(of)) => BenchReport::paired(&BTreeMap::new(), &read_latencies(of)?, meta)?,
        _ => bail!("give either --after [--before] or --ours-file [--baseline-file]"),
    };
    let format = match args.format {
        ReportFormat::Text => Format::Text,
        ReportFormat::Csv => Format::Csv,
    };
    print!("{}", report.render(format, args.precision));
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Stats(a) => cmd_stats(a),
        Command::Tune(a) => cmd_tune(a),
        Command::TuneGraph(a) => cmd_tune_graph(a),
        Command::Bench(a) => cmd_bench(a),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
