use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use ddsat::experiment::{self, Execution, NodeSweepConfig, SensingSweepConfig, SweepError};
use ddsat::metrics::{self, MetricsError};
use ddsat::scenario::{self, ScenarioConfig};
use ddsat::sim::engine::Engine;

#[derive(Parser)]
#[command(
    name = "ddsat",
    version,
    about = "TDMA dynamic spectrum access simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and write frames.csv, summary.csv and trace.txt.
    Run(RunArgs),
    /// Throughput and fairness against the number of secondary nodes.
    SweepNodes(SweepNodesArgs),
    /// Fused sensing accuracy against the number of cooperating nodes.
    SweepSensing(SweepSensingArgs),
}

#[derive(Args)]
struct Common {
    /// Output directory, created if missing.
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Seed; overrides the scenario's own.
    #[arg(long, env = "DDSAT_SEED")]
    seed: Option<u64>,
    /// Run sweeps on one thread.
    #[arg(long)]
    sequential: bool,
}

impl Common {
    fn execution(&self) -> Execution {
        if self.sequential {
            Execution::Sequential
        } else {
            Execution::default()
        }
    }
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    scenario: PathBuf,
    #[arg(long)]
    frames: Option<u64>,
    #[arg(long, default_value_t = metrics::DEFAULT_WARMUP_FRAMES)]
    warmup: u64,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct SweepNodesArgs {
    #[arg(long, default_value_t = 1)]
    min: u8,
    #[arg(long, default_value_t = 4)]
    max: u8,
    #[arg(long, default_value_t = 300)]
    frames: u64,
    /// Seeds per node count.
    #[arg(long, default_value_t = 5)]
    seeds: u64,
    #[arg(long, default_value_t = metrics::DEFAULT_WARMUP_FRAMES)]
    warmup: u64,
    /// Radio and primary settings to sweep with; secondaries are ignored.
    #[arg(long)]
    scenario: Option<PathBuf>,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct SweepSensingArgs {
    /// Cooperating node counts.
    #[arg(long, value_delimiter = ',', default_value = "1,3,5")]
    nodes: Vec<usize>,
    /// Shadowing sigma in dB. Derived from --accuracy when omitted.
    #[arg(long)]
    sigma: Option<f64>,
    /// Per-node detection accuracy to tune sigma for.
    #[arg(long, default_value_t = 0.8)]
    accuracy: f64,
    /// Distance of primary and noise means from the threshold, in dB.
    #[arg(long, default_value_t = 5.0)]
    margin: f64,
    #[arg(long, default_value_t = -60.0, allow_hyphen_values = true)]
    threshold: f64,
    #[arg(long, default_value_t = 10_000)]
    trials: u64,
    #[command(flatten)]
    common: Common,
}

enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<MetricsError> for Failure {
    fn from(e: MetricsError) -> Self {
        Failure::Runtime(e.to_string())
    }
}

impl From<SweepError> for Failure {
    fn from(e: SweepError) -> Self {
        match e {
            SweepError::Usage(m) => Failure::Usage(m),
            other => Failure::Runtime(other.to_string()),
        }
    }
}

fn load_scenario(path: &Path) -> Result<ScenarioConfig, Failure> {
    let text = fs::read_to_string(path)
        .map_err(|e| Failure::Usage(format!("cannot read scenario {}: {e}", path.display())))?;
    scenario::parse_scenario(&text).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))
}

fn prepare_out(dir: &Path) -> Result<(), Failure> {
    fs::create_dir_all(dir)
        .map_err(|e| Failure::Runtime(format!("cannot create {}: {e}", dir.display())))
}

fn cmd_run(args: RunArgs) -> Result<(), Failure> {
    let mut cfg = load_scenario(&args.scenario)?;
    if let Some(f) = args.frames {
        cfg.frames = f;
    }
    let seed = args.common.seed.unwrap_or(cfg.seed);
    let mut engine = Engine::new(&cfg, seed).map_err(|e| Failure::Usage(e.to_string()))?;
    engine.enable_trace();
    engine.run_frames(cfg.frames);

    let out = &args.common.out;
    prepare_out(out)?;
    let trace = format!(
        "# seed={seed} scenario={}\n{}",
        cfg.hash(),
        engine.trace().unwrap_or_default()
    );
    fs::write(out.join("trace.txt"), trace).map_err(MetricsError::from)?;
    let log = engine.into_log();
    metrics::write_file(&out.join("frames.csv"), |f| {
        metrics::write_frames_csv(&log, f)
    })?;
    if cfg.frames > args.warmup && !cfg.secondaries.is_empty() {
        metrics::write_file(&out.join("summary.csv"), |f| {
            metrics::write_summary_csv(&log, args.warmup, f)
        })?;
    }

    let m = &log.monitor;
    println!(
        "seed {seed} scenario {} frames {}",
        cfg.hash(),
        log.meta.frames
    );
    for node in log.nodes() {
        if let Ok(t) = metrics::throughput(&log, node, args.warmup) {
            println!("{node}: {} slots/frame", metrics::fmt_real(t));
        }
    }
    if let Ok(a) = metrics::sensing_accuracy(&log) {
        println!("sensing accuracy {}", metrics::fmt_real(a));
    }
    println!(
        "data packets {} delivered {} outside grant {} on primary {} inconsistent frames {}",
        m.data_packets,
        m.data_delivered,
        m.outside_grant,
        m.on_primary_channel,
        m.inconsistent_frames
    );
    Ok(())
}

fn cmd_sweep_nodes(args: SweepNodesArgs) -> Result<(), Failure> {
    let mut cfg = NodeSweepConfig::perfect_sensing(args.min, args.max, args.frames, args.seeds);
    if let Some(path) = &args.scenario {
        cfg.template = load_scenario(path)?;
    }
    cfg.warmup = args.warmup;
    cfg.base_seed = args.common.seed.unwrap_or(cfg.template.seed);
    let points = experiment::sweep_nodes(&cfg, args.common.execution())?;

    prepare_out(&args.common.out)?;
    let header = format!(
        "sweep=nodes seed={} scenario={} frames={} seeds={} warmup={}",
        cfg.base_seed,
        cfg.template.hash(),
        cfg.frames,
        cfg.seeds,
        cfg.warmup
    );
    let rows = experiment::node_sweep_rows(&points);
    metrics::write_file(&args.common.out.join("sweep.csv"), |f| {
        metrics::write_sweep_csv(&header, &rows, f)
    })?;
    for p in &points {
        println!(
            "k={} throughput {} ± {} jain {} ± {}",
            p.nodes,
            metrics::fmt_real(p.throughput.0),
            metrics::fmt_real(p.throughput.1),
            metrics::fmt_real(p.jain.0),
            metrics::fmt_real(p.jain.1)
        );
    }
    Ok(())
}

fn cmd_sweep_sensing(args: SweepSensingArgs) -> Result<(), Failure> {
    let sigma = match args.sigma {
        Some(s) => s,
        None => experiment::sigma_for_accuracy(args.accuracy, args.margin).ok_or_else(|| {
            Failure::Usage("--accuracy must be in (0.5, 1) and --margin positive".to_string())
        })?,
    };
    let cfg = SensingSweepConfig {
        nodes: args.nodes,
        sigma_db: sigma,
        margin_db: args.margin,
        threshold_dbm: args.threshold,
        trials: args.trials,
        seed: args.common.seed.unwrap_or(0),
    };
    let points = experiment::sweep_sensing(&cfg, args.common.execution())?;

    prepare_out(&args.common.out)?;
    let header = format!(
        "sweep=sensing seed={} sigma={} margin={} threshold={} trials={}",
        cfg.seed,
        metrics::fmt_real(cfg.sigma_db),
        metrics::fmt_real(cfg.margin_db),
        metrics::fmt_real(cfg.threshold_dbm),
        cfg.trials
    );
    let rows = experiment::sensing_sweep_rows(&points);
    metrics::write_file(&args.common.out.join("sweep.csv"), |f| {
        metrics::write_sweep_csv(&header, &rows, f)
    })?;
    for p in &points {
        println!(
            "m={} accuracy {} ± {}",
            p.nodes,
            metrics::fmt_real(p.accuracy),
            metrics::fmt_real(p.ci95)
        );
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(a) => cmd_run(a),
        Command::SweepNodes(a) => cmd_sweep_nodes(a),
        Command::SweepSensing(a) => cmd_sweep_sensing(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
    }
}
