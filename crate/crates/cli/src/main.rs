use std::fs;
use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::{Duration, Instant};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use meshgate_cli::delivery::HttpDelivery;
use meshgate_cli::live::{LiveSim, SharedStatus};
use meshgate_cli::{plot, standalone};
use meshgate_core::config::{Config, ConfigError, PRESETS};
use meshgate_core::experiments::{experiment_traffic, experiment_translation, TrafficReport};
use meshgate_core::gateway::TimingReport;
use meshgate_core::sim::{World, WorldOptions};
use meshgate_middleware::{AppState, ManualClock, ReadingStore, RuleEngine};

#[derive(Parser)]
#[command(name = "meshgate", version, about = "Simulated sensor mesh, IPv4/IPv6 gateway and middleware")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a scenario headless and write its event trace.
    Sim(SimArgs),
    /// Run the mesh, gateway and middleware together behind the HTTP API.
    Serve(ServeArgs),
    /// Reproduce the delay and translation-time measurements.
    Experiments {
        #[command(subcommand)]
        which: Experiment,
    },
    /// Check scenario files; with no arguments, every shipped scenario.
    ValidateConfig { files: Vec<String> },
    /// Run the gateway alone between a serial stream and a UDP socket.
    Gateway(GatewayArgs),
}

#[derive(Args)]
struct ScenarioArg {
    /// Shipped scenario name or path to a scenario file.
    #[arg(long, visible_alias = "config", env = "MESHGATE_CONFIG", default_value = "line7")]
    scenario: String,
}

#[derive(Args)]
struct SimArgs {
    #[command(flatten)]
    scenario: ScenarioArg,
    #[arg(long)]
    seed: Option<u64>,
    /// Simulated seconds.
    #[arg(long)]
    duration: Option<u64>,
    /// Trace file; `-` for standard output.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Directory for the gateway's durable buffer.
    #[arg(long)]
    buffer: Option<PathBuf>,
}

#[derive(Args)]
struct ServeArgs {
    #[command(flatten)]
    scenario: ScenarioArg,
    /// Overrides `middleware.listen`.
    #[arg(long)]
    listen: Option<SocketAddr>,
    /// Reading store file; in memory when absent.
    #[arg(long)]
    store: Option<PathBuf>,
    /// Directory for the gateway's durable buffer; in memory when absent.
    #[arg(long)]
    buffer: Option<PathBuf>,
    /// Simulated seconds per wall-clock second.
    #[arg(long, default_value_t = 1.0)]
    speed: f64,
    /// Stop after this many wall-clock seconds.
    #[arg(long = "for")]
    run_for: Option<f64>,
}

#[derive(Subcommand)]
enum Experiment {
    /// Delay and jitter against the number of motes.
    Traffic {
        #[arg(long, default_value = "traffic", env = "MESHGATE_CONFIG")]
        scenario: String,
        /// `A..B` (inclusive) or a comma list.
        #[arg(long)]
        counts: Option<String>,
        #[arg(long)]
        duration: Option<u64>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "results")]
        out: PathBuf,
    },
    /// Per-packet translation time at the gateway.
    Xlat {
        #[arg(long, default_value = "line7", env = "MESHGATE_CONFIG")]
        scenario: String,
        #[arg(long, default_value_t = 200)]
        packets: usize,
        #[arg(long, default_value = "results")]
        out: PathBuf,
    },
    /// Render SVG charts from the reports in a results directory.
    Plot {
        #[arg(long, default_value = "results")]
        dir: PathBuf,
    },
}

#[derive(Args)]
struct GatewayArgs {
    #[arg(long, env = "MESHGATE_CONFIG", default_value = "line7")]
    config: String,
    /// TCP address of the serial tunnel.
    #[arg(long)]
    serial: SocketAddr,
    /// UDP address for IPv4 packets from the external network.
    #[arg(long)]
    listen: SocketAddr,
    /// Middleware base URL.
    #[arg(long)]
    middleware: String,
    /// Directory for the durable buffer.
    #[arg(long)]
    buffer: PathBuf,
    /// Stop after this many wall-clock seconds.
    #[arg(long = "for")]
    run_for: Option<f64>,
}

enum Failure {
    Config(String, ConfigError),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

fn load(name: &str) -> Result<Config, Failure> {
    Config::load(name).map(|(_, c)| c).map_err(|e| Failure::Config(name.to_string(), e))
}

fn parse_counts(s: &str) -> anyhow::Result<Vec<u16>> {
    let counts: Vec<u16> = match s.split_once("..") {
        Some((a, b)) => (a.trim().parse()?..=b.trim().parse()?).collect(),
        None => s.split(',').map(|x| x.trim().parse()).collect::<Result<_, _>>()?,
    };
    if counts.is_empty() || counts.contains(&0) {
        bail!("mote counts must be positive: {s}");
    }
    Ok(counts)
}

fn write(path: &Path, body: &str) -> anyhow::Result<()> {
    fs::write(path, body).with_context(|| format!("writing {}", path.display()))
}

fn sim(a: SimArgs) -> Result<(), Failure> {
    let mut cfg = load(&a.scenario.scenario)?;
    cfg.seed = a.seed.unwrap_or(cfg.seed);
    cfg.duration_s = a.duration.unwrap_or(cfg.duration_s);
    let trace: Option<Box<dyn Write + Send>> = match &a.trace {
        Some(p) if p.as_os_str() == "-" => Some(Box::new(std::io::stdout())),
        Some(p) => Some(Box::new(std::io::BufWriter::new(
            fs::File::create(p).with_context(|| format!("creating {}", p.display()))?,
        ))),
        None => None,
    };
    let to_stdout = a.trace.as_deref().is_some_and(|p| p.as_os_str() == "-");
    let collector = meshgate_core::gateway::Collector::default();
    let mut opts = WorldOptions::new(Box::new(collector));
    opts.trace = trace;
    opts.buffer_dir = a.buffer;
    let mut w = World::new(&cfg, opts).context("building the world")?;
    w.run();
    let summary = serde_json::json!({
        "seed": cfg.seed,
        "duration_s": cfg.duration_s,
        "readings_delivered": w.accepted_readings().len(),
        "commands": w.take_command_results(),
        "stats": w.stats(),
    });
    let text = serde_json::to_string_pretty(&summary).expect("summary serialises");
    if to_stdout {
        eprintln!("{text}");
    } else {
        println!("{text}");
    }
    Ok(())
}

fn serve(a: ServeArgs) -> Result<(), Failure> {
    let mut cfg = load(&a.scenario.scenario)?;
    if !(a.speed > 0.0 && a.speed.is_finite()) {
        return Err(anyhow::anyhow!("--speed must be positive").into());
    }
    // Live runs sense until stopped.
    cfg.duration_s = 10 * 365 * 86_400;
    let listen = match a.listen {
        Some(l) => l,
        None => cfg.middleware.listen.parse().context("middleware.listen")?,
    };
    let rt = tokio::runtime::Runtime::new().context("starting the runtime")?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(listen).await.with_context(|| format!("binding {listen}"))?;
        let bound = listener.local_addr()?;
        println!("listening on http://{bound}");
        let store = match &a.store {
            Some(p) => ReadingStore::open(p).with_context(|| format!("opening {}", p.display()))?,
            None => ReadingStore::memory(),
        };
        let mut opts = WorldOptions::new(Box::new(HttpDelivery::new(&format!("http://{bound}"))));
        opts.buffer_dir = a.buffer.clone();
        let world = World::new(&cfg, opts).context("building the world")?;
        let clock = ManualClock::new(cfg.epoch_ms);
        let status = SharedStatus::default();
        let live = LiveSim::spawn(world, a.speed, clock.clone(), status.clone());
        let state = AppState::new(&cfg, store, Arc::new(clock), Arc::new(live.commands()), Arc::new(status));
        let rules = meshgate_middleware::spawn_rules(
            state.clone(),
            RuleEngine::new(&cfg.middleware.rules),
            Duration::from_millis(cfg.middleware.rule_interval_ms),
        );
        let run_for = a.run_for;
        let shutdown = async move {
            match run_for {
                Some(s) => tokio::time::sleep(Duration::from_secs_f64(s)).await,
                None => {
                    let _ = tokio::signal::ctrl_c().await;
                }
            }
        };
        let served = meshgate_middleware::serve(listener, state, shutdown).await;
        rules.abort();
        let world = tokio::task::spawn_blocking(move || live.stop()).await.context("stopping the simulation")?;
        println!("stopped at simulated {}", world.now());
        served.context("serving")
    })?;
    Ok(())
}

fn experiments(which: Experiment) -> Result<(), Failure> {
    match which {
        Experiment::Traffic { scenario, counts, duration, seed, out } => {
            let mut cfg = load(&scenario)?;
            cfg.seed = seed.unwrap_or(cfg.seed);
            cfg.duration_s = duration.unwrap_or(cfg.duration_s);
            let counts = match counts {
                Some(c) => parse_counts(&c)?,
                None => cfg.experiment.counts.clone(),
            };
            let started = Instant::now();
            let report = experiment_traffic(&cfg, &counts).context("traffic experiment")?;
            fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
            write(&out.join("traffic_summary.csv"), &report.summary_csv())?;
            write(&out.join("traffic_samples.csv"), &report.samples_csv())?;
            write(&out.join("traffic.json"), &serde_json::to_string(&report).expect("report serialises"))?;
            print!("{}", report.summary_csv());
            eprintln!("{} levels in {:.2?}", report.levels.len(), started.elapsed());
        }
        Experiment::Xlat { scenario, packets, out } => {
            let cfg = load(&scenario)?;
            let report = experiment_translation(&cfg, packets).context("translation experiment")?;
            fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
            write(&out.join("xlat_timing.csv"), &report.csv())?;
            write(&out.join("xlat.json"), &serde_json::to_string(&report).expect("report serialises"))?;
            println!("packets={} mean_us={:.3} jitter_us={:.3}", report.samples_us.len(), report.mean_us, report.jitter_us);
        }
        Experiment::Plot { dir } => {
            let mut drawn = 0;
            let traffic = dir.join("traffic.json");
            if traffic.exists() {
                let r: TrafficReport = serde_json::from_str(&fs::read_to_string(&traffic)?).context("traffic.json")?;
                plot::traffic_svg(&r, &dir.join("traffic.svg")).map_err(|e| anyhow::anyhow!("plotting: {e}"))?;
                drawn += 1;
            }
            let xlat = dir.join("xlat.json");
            if xlat.exists() {
                let r: TimingReport = serde_json::from_str(&fs::read_to_string(&xlat)?).context("xlat.json")?;
                plot::timing_svg(&r, &dir.join("xlat.svg")).map_err(|e| anyhow::anyhow!("plotting: {e}"))?;
                drawn += 1;
            }
            if drawn == 0 {
                return Err(anyhow::anyhow!("no reports in {}", dir.display()).into());
            }
            println!("{drawn} chart(s) written to {}", dir.display());
        }
    }
    Ok(())
}

fn validate(files: Vec<String>) -> Result<(), Failure> {
    let names: Vec<String> =
        if files.is_empty() { PRESETS.iter().map(|(n, _)| n.to_string()).collect() } else { files };
    for n in names {
        load(&n)?;
        println!("ok {n}");
    }
    Ok(())
}

fn gateway(a: GatewayArgs) -> Result<(), Failure> {
    let cfg = load(&a.config)?;
    let opts = standalone::GatewayOptions { serial: a.serial, listen: a.listen, buffer: a.buffer };
    let started = Instant::now();
    let limit = a.run_for.map(Duration::from_secs_f64);
    let stats = standalone::run(&cfg, &opts, Box::new(HttpDelivery::new(&a.middleware)), || {
        limit.is_some_and(|l| started.elapsed() >= l)
    })
    .context("gateway")?;
    println!("{}", serde_json::to_string(&stats).expect("stats serialise"));
    Ok(())
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Runtime(e.into())
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn".into()))
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    let result = match cli.cmd {
        Cmd::Sim(a) => sim(a),
        Cmd::Serve(a) => serve(a),
        Cmd::Experiments { which } => experiments(which),
        Cmd::ValidateConfig { files } => validate(files),
        Cmd::Gateway(a) => gateway(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(name, e)) => {
            eprintln!("{name}: {e}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
