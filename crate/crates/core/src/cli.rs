//! Command-line front end.
//!
//! Exit codes: 0 success, 2 usage, 3 I/O, 4 configuration or parse error,
//! 5 scenario error (connectivity, unreachable destination, bad attack).

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::agents::QTable;
use crate::environment::RewardMode;
use crate::error::{Error, Result};
use crate::experiment::{
    build_scenario, episodes_csv, evaluate, evaluations_csv, run_experiment, scenario_on, train_on,
    Checkpoint, ExperimentConfig, TrainingRun,
};
use crate::nirm::{node_importance, select_targets, AttackModel, ImportanceReport};
use crate::topology::{generate_random_topology, TopologyParams, UavNetwork};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_IO: i32 = 3;
pub const EXIT_CONFIG: i32 = 4;
pub const EXIT_SCENARIO: i32 = 5;

pub const OUT_ENV: &str = "UAVROUTE_OUT";

#[derive(Debug, Parser)]
#[command(name = "uavroute", version, about = "UAV routing recovery simulator")]
pub struct Cli {
    /// Print progress to stderr.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Place UAVs at random and write the topology file.
    Generate(GenerateArgs),
    /// Node and link importance tables for a topology.
    Rank(RankArgs),
    /// Attack nodes of a topology and write the damaged topology.
    Attack(AttackArgs),
    /// Train the configured agents on one scenario per seed.
    Train(TrainArgs),
    /// Score a saved Q-table's greedy route against the shortest-delay oracle.
    Evaluate(EvaluateArgs),
    /// Run a full experiment and write all figure tables plus a manifest.
    Experiment(ExperimentArgs),
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long, default_value_t = 20, value_parser = clap::value_parser!(u64).range(2..))]
    pub nodes: u64,
    #[arg(long, default_value_t = 1000.0)]
    pub width: f64,
    #[arg(long, default_value_t = 1000.0)]
    pub depth: f64,
    #[arg(long, default_value_t = 130.0)]
    pub height_min: f64,
    #[arg(long, default_value_t = 140.0)]
    pub height_max: f64,
    #[arg(long, default_value_t = 30.0)]
    pub o_min: f64,
    #[arg(long, default_value_t = 500.0)]
    pub o_max: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output file; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RankArgs {
    #[arg(long)]
    pub topology: PathBuf,
    /// Directory for nodes.csv and edges.csv; stdout when omitted.
    #[arg(long, env = OUT_ENV)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AttackArgs {
    #[arg(long)]
    pub topology: PathBuf,
    /// Explicit comma-separated targets.
    #[arg(long, value_delimiter = ',', conflicts_with_all = ["count", "model"])]
    pub targets: Vec<usize>,
    /// Number of nodes to attack by importance ranking.
    #[arg(long)]
    pub count: Option<usize>,
    #[arg(long, value_parser = ["deliberate", "random"])]
    pub model: Option<String>,
    /// Nodes that must not be attacked (typically source and destination).
    #[arg(long, value_delimiter = ',')]
    pub protect: Vec<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Train on this seed only.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Restrict to one agent variant by name.
    #[arg(long)]
    pub agent: Option<String>,
    #[arg(long, env = OUT_ENV)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub topology: PathBuf,
    #[arg(long)]
    pub qtable: PathBuf,
    #[arg(long)]
    pub source: usize,
    #[arg(long)]
    pub dest: usize,
    /// Radio, reward and step settings; defaults when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Frozen queue length per node.
    #[arg(long)]
    pub queue: Option<u32>,
    #[arg(long, value_parser = ["literal", "full_delay"])]
    pub reward_mode: Option<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Replace the configured seed list with this single seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, env = OUT_ENV)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    /// Validate the configuration and exit without writing anything.
    #[arg(long)]
    pub dry_run: bool,
}

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Io(_) => EXIT_IO,
        Error::Config(_) | Error::Parse { .. } => EXIT_CONFIG,
        _ => EXIT_SCENARIO,
    }
}

/// Parses `args` and runs the subcommand, returning the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match dispatch(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn dispatch(cli: &Cli) -> Result<()> {
    let verbose = cli.verbose > 0;
    match &cli.command {
        Command::Generate(a) => generate(a),
        Command::Rank(a) => rank(a),
        Command::Attack(a) => attack(a),
        Command::Train(a) => train(a, verbose),
        Command::Evaluate(a) => evaluate_cmd(a),
        Command::Experiment(a) => experiment(a, verbose),
    }
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| {
        Error::Io(std::io::Error::new(
            e.kind(),
            format!("{}: {e}", path.display()),
        ))
    })
}

fn emit(out: Option<&Path>, body: &str) -> Result<()> {
    match out {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir)?;
            }
            std::fs::write(p, body)?;
        }
        None => print!("{body}"),
    }
    Ok(())
}

fn load_config(path: &Path) -> Result<ExperimentConfig> {
    ExperimentConfig::from_toml(&read(path)?)
}

fn generate(a: &GenerateArgs) -> Result<()> {
    let params = TopologyParams {
        n: a.nodes as usize,
        area: (a.width, a.depth),
        heights: (a.height_min, a.height_max),
        o_min: a.o_min,
        o_max: a.o_max,
        ..TopologyParams::default()
    };
    let net = generate_random_topology(&params, a.seed)?;
    emit(a.out.as_deref(), &net.to_text())
}

pub fn nodes_table(report: &ImportanceReport) -> String {
    let mut s = String::from("node,degree,score,rank\n");
    let mut rank_of = vec![0; report.ranking.len()];
    for (r, &id) in report.ranking.iter().enumerate() {
        rank_of[id] = r + 1;
    }
    for id in 0..report.scores.len() {
        let _ = writeln!(
            s,
            "{},{},{},{}",
            id, report.degrees[id], report.scores[id], rank_of[id]
        );
    }
    s
}

pub fn edges_table(report: &ImportanceReport) -> String {
    let mut s = String::from("i,j,triangles,z,importance\n");
    for e in &report.edges {
        let _ = writeln!(
            s,
            "{},{},{},{},{}",
            e.edge.0, e.edge.1, e.triangles, e.z, e.importance
        );
    }
    s
}

fn rank(a: &RankArgs) -> Result<()> {
    let net = UavNetwork::from_text(&read(&a.topology)?)?;
    let report = node_importance(&net);
    let (nodes, edges) = (nodes_table(&report), edges_table(&report));
    match &a.out {
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            std::fs::write(dir.join("nodes.csv"), nodes)?;
            std::fs::write(dir.join("edges.csv"), edges)?;
        }
        None => print!("{nodes}\n{edges}"),
    }
    Ok(())
}

fn attack(a: &AttackArgs) -> Result<()> {
    let net = UavNetwork::from_text(&read(&a.topology)?)?;
    let targets = match a.count {
        Some(count) => {
            let model: AttackModel = a.model.as_deref().unwrap_or("deliberate").parse()?;
            select_targets(&node_importance(&net), count, model, &a.protect, a.seed)?
        }
        None => a.targets.clone(),
    };
    let hit = net.apply_attack(&targets, &a.protect)?;
    emit(a.out.as_deref(), &hit.to_text())
}

fn output_dir(flag: Option<&PathBuf>, config: &ExperimentConfig) -> PathBuf {
    flag.cloned()
        .or_else(|| config.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("out"))
}

fn train(a: &TrainArgs, verbose: bool) -> Result<()> {
    let mut config = load_config(&a.config)?;
    if let Some(seed) = a.seed {
        config.seeds = vec![seed];
    }
    if let Some(name) = &a.agent {
        config.agents.retain(|v| &v.name == name);
        if config.agents.is_empty() {
            return Err(Error::Config(format!("no agent variant named {name:?}")));
        }
    }
    let dir = output_dir(a.out.as_ref(), &config);
    std::fs::create_dir_all(&dir)?;
    let n = config.topology.n;
    let mut runs: Vec<TrainingRun> = Vec::new();
    for &seed in &config.seeds {
        let scenario = build_scenario(&config, n, seed)?;
        std::fs::write(
            dir.join(format!("topology_seed{seed}.txt")),
            scenario.network.to_text(),
        )?;
        for v in &config.agents {
            if verbose {
                eprintln!("training {} on seed {seed}", v.name);
            }
            let run = train_on(&config, v, scenario.clone(), seed)?;
            std::fs::write(
                dir.join(format!("qtable_{}_seed{seed}.csv", v.name)),
                run.q.to_csv(),
            )?;
            runs.push(run);
        }
    }
    let logs: Vec<_> = runs.iter().flat_map(|r| r.logs.iter().cloned()).collect();
    std::fs::write(dir.join("episodes.csv"), episodes_csv(&logs))?;
    let rows: Vec<(String, u64, usize, &Checkpoint)> = runs
        .iter()
        .flat_map(|r| r.checkpoints.iter().map(move |c| (r.agent.clone(), r.seed, n, c)))
        .collect();
    std::fs::write(dir.join("evaluations.csv"), evaluations_csv(&rows))?;
    let mut scen = String::from("seed,source,dest\n");
    for &seed in &config.seeds {
        let s = runs.iter().find(|r| r.seed == seed).expect("run per seed");
        let _ = writeln!(scen, "{seed},{},{}", s.scenario.source, s.scenario.dest);
    }
    std::fs::write(dir.join("scenarios.csv"), scen)?;
    Ok(())
}

fn evaluate_cmd(a: &EvaluateArgs) -> Result<()> {
    let net = UavNetwork::from_text(&read(&a.topology)?)?;
    let q = QTable::from_csv(&read(&a.qtable)?)?;
    if q.len() != net.len() {
        return Err(Error::Config(format!(
            "Q-table covers {} nodes but topology has {}",
            q.len(),
            net.len()
        )));
    }
    let mut config = match &a.config {
        Some(p) => load_config(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(mode) = &a.reward_mode {
        config.reward_mode = mode.parse::<RewardMode>()?;
    }
    let queue = a.queue.unwrap_or_else(|| config.eval_queue());
    let spec = scenario_on(&config, net, a.source, a.dest);
    spec.validate()?;
    let eval = evaluate(&q, &spec, queue)?;
    let n = spec.network.len();
    let row = Checkpoint {
        episode: 0,
        evaluation: eval,
    };
    emit(
        a.out.as_deref(),
        &evaluations_csv(&[("table".to_string(), 0, n, &row)]),
    )
}

fn experiment(a: &ExperimentArgs, verbose: bool) -> Result<()> {
    let mut config = load_config(&a.config)?;
    if let Some(seed) = a.seed {
        config.seeds = vec![seed];
    }
    if a.dry_run {
        eprintln!(
            "config ok: {} episodes, {} seeds, {} agents, sha256 {}",
            config.episodes,
            config.seeds.len(),
            config.agents.len(),
            config.digest()
        );
        return Ok(());
    }
    let dir = output_dir(a.out.as_ref(), &config);
    if verbose {
        eprintln!("running experiment into {}", dir.display());
    }
    let out = run_experiment(&config, a.jobs)?;
    for f in &out.manifest.failures {
        eprintln!(
            "warning: {} n={} seed={} skipped: {}",
            f.agent, f.nodes, f.seed, f.error
        );
    }
    out.write_to(&dir)
}
