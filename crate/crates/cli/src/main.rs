use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use tgr_core::cayley::{build_cayley, spectral_gap, DEFAULT_EIGEN_CAP};
use tgr_core::config::RunConfig;
use tgr_core::ctdg::{batch_map, snapshot, write_csv, write_node_features, EventStream, NodeBank};
use tgr_core::eval::{evaluate_frozen, plot_csv, run_experiment};
use tgr_core::nn::Checkpoint;
use tgr_core::reach::{asymmetry_pairs, staleness_report, temporal_mixing_set, ReachMode};
use tgr_core::tgr::TgrState;

/// Environment variable naming the default output directory.
const OUT_ENV: &str = "TGR_OUT";

#[derive(Parser)]
#[command(name = "tgr", version, about = "Temporal graph rewiring over Cayley expanders")]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train with early stopping and write report, metrics and checkpoint.
    Train(TrainArgs),
    /// Score a checkpoint on the test split.
    Eval(EvalArgs),
    /// Temporal reachability diagnostics.
    #[command(subcommand)]
    Analyze(AnalyzeCommand),
    /// Build a Cayley graph of SL(2, Z_n).
    Cayley(CayleyArgs),
    /// Write a synthetic event stream and its manifest.
    Gen(GenArgs),
}

#[derive(Args, Clone)]
struct DataArgs {
    /// Flat key=value configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Event CSV (`src,dst,t[,f0,...]`).
    #[arg(long)]
    data: Option<PathBuf>,
    /// Node feature CSV (`node,x0,...`) for `--data`.
    #[arg(long)]
    node_features: Option<PathBuf>,
    /// Synthetic generator used when no data file is given.
    #[arg(long, value_parser = ["path", "bipartite", "stale", "erdos-temporal"])]
    gen: Option<String>,
    /// Extra `key=value` settings, applied after the config file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Clone)]
struct RunArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, value_parser = ["on", "off"])]
    rewire: Option<String>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Output directory; defaults to $TGR_OUT, then `tgr-out`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Also write `plot.csv` with epoch,split,loss,mrr rows.
    #[arg(long)]
    emit_plot_data: bool,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    run: RunArgs,
    #[arg(long)]
    checkpoint: PathBuf,
}

#[derive(Subcommand)]
enum AnalyzeCommand {
    /// Earliest mixing key of every node reached from a source.
    Reach {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        source: usize,
        #[arg(long)]
        tau: f64,
        /// strict | batched:<batch size> | dynamic:<update time>
        #[arg(long, default_value = "strict", value_parser = parse_mode)]
        mode: ModeSpec,
    },
    /// Ordered pairs that mix one way only.
    Asymmetry {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        tau: f64,
        #[arg(long, default_value = "strict", value_parser = parse_mode)]
        mode: ModeSpec,
    },
    /// Time since last activation of every observed node.
    Staleness {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        tau: f64,
    },
}

#[derive(Clone, Debug)]
enum ModeSpec {
    Strict,
    Batched(usize),
    Dynamic(f64),
}

fn parse_mode(s: &str) -> std::result::Result<ModeSpec, String> {
    let bad = || format!("invalid mode `{s}`: expected strict, batched:<size> or dynamic:<time>");
    match s.split_once(':') {
        None if s == "strict" => Ok(ModeSpec::Strict),
        Some(("batched", b)) => match b.parse::<usize>() {
            Ok(b) if b > 0 => Ok(ModeSpec::Batched(b)),
            _ => Err(bad()),
        },
        Some(("dynamic", t)) => t
            .parse::<f64>()
            .ok()
            .filter(|t| t.is_finite())
            .map(ModeSpec::Dynamic)
            .ok_or_else(bad),
        _ => Err(bad()),
    }
}

impl ModeSpec {
    fn resolve(&self, stream: &EventStream) -> Result<ReachMode> {
        Ok(match self {
            ModeSpec::Strict => ReachMode::Strict,
            ModeSpec::Batched(b) => ReachMode::Batched(batch_map(stream, *b)?),
            ModeSpec::Dynamic(t) => ReachMode::DynamicFrom(*t),
        })
    }
}

#[derive(Args)]
struct CayleyArgs {
    /// Modulus of SL(2, Z_n).
    #[arg(long, value_parser = clap::value_parser!(u32).range(1..))]
    n: u32,
    /// Print vertex count, degree histogram, connectivity and spectral gap.
    #[arg(long)]
    stats: bool,
    /// Write the undirected edge list as CSV.
    #[arg(long)]
    export: Option<PathBuf>,
}

#[derive(Args)]
struct GenArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn out_dir(flag: &Option<PathBuf>) -> PathBuf {
    flag.clone()
        .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("tgr-out"))
}

fn split_pair(s: &str) -> Result<(&str, &str)> {
    s.split_once('=').with_context(|| format!("expected KEY=VALUE, found `{s}`"))
}

impl DataArgs {
    fn apply(&self, cfg: &mut RunConfig) -> Result<()> {
        if let Some(path) = &self.config {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            cfg.apply_text(&text)?;
        }
        for s in &self.sets {
            let (k, v) = split_pair(s)?;
            cfg.set(k, v)?;
        }
        if let Some(p) = &self.data {
            cfg.data = Some(p.clone());
        }
        if let Some(p) = &self.node_features {
            cfg.node_features = Some(p.clone());
        }
        if let Some(g) = &self.gen {
            cfg.set("gen", g)?;
            cfg.data = None;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        Ok(())
    }

    fn config(&self) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        self.apply(&mut cfg)?;
        Ok(cfg.resolved()?)
    }

    fn stream(&self) -> Result<EventStream> {
        load(&self.config()?)
    }
}

impl RunArgs {
    fn config(&self) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        self.data.apply(&mut cfg)?;
        if let Some(r) = &self.rewire {
            cfg.set("rewire", r)?;
        }
        if let Some(e) = self.epochs {
            cfg.experiment.max_epochs = e;
        }
        if let Some(lr) = self.lr {
            cfg.model.lr = lr;
        }
        if let Some(b) = self.batch_size {
            cfg.experiment.batch_size = b;
        }
        Ok(cfg.resolved()?)
    }
}

fn load(cfg: &RunConfig) -> Result<EventStream> {
    if let Some(path) = &cfg.data {
        if !path.is_file() {
            bail!("data file {} does not exist", path.display());
        }
    }
    cfg.load_stream().context("loading events")
}

/// Writes every file or none: contents are staged in memory by the caller,
/// then written into a fresh temporary directory that replaces `dir`'s
/// entries of the same names.
fn write_outputs(dir: &Path, files: &[(&str, Vec<u8>)]) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let staging = dir.join(".staging");
    if staging.exists() {
        std::fs::remove_dir_all(&staging)?;
    }
    std::fs::create_dir(&staging)?;
    for (name, bytes) in files {
        std::fs::write(staging.join(name), bytes).with_context(|| format!("writing {name}"))?;
    }
    for (name, _) in files {
        std::fs::rename(staging.join(name), dir.join(name))?;
    }
    std::fs::remove_dir(&staging)?;
    Ok(())
}

fn cmd_train(args: &TrainArgs) -> Result<()> {
    let cfg = args.run.config()?;
    let stream = load(&cfg)?;
    let model = TgrState::new(cfg.model.clone(), cfg.mixer_if_rewired(), &stream)?;
    let mut records = Vec::new();
    let outcome = run_experiment(model, &stream, &cfg.experiment, cfg.pairs(), &mut |r| {
        eprintln!("{}", r.to_json());
        records.push(r.clone());
    })?;
    let mut ck = Vec::new();
    outcome.model.checkpoint(stream.len()).write_to(&mut ck)?;
    let metrics: String = records.iter().map(|r| r.to_json() + "\n").collect();
    let mut files = vec![
        ("report.txt", outcome.report.to_kv(true).into_bytes()),
        ("metrics.jsonl", metrics.into_bytes()),
        ("checkpoint.bin", ck),
    ];
    if args.emit_plot_data {
        files.push(("plot.csv", plot_csv(&records).into_bytes()));
    }
    let dir = out_dir(&args.run.out);
    write_outputs(&dir, &files)?;
    println!("test_mrr={}", outcome.report.test_mrr);
    println!("best_epoch={}", outcome.report.best_epoch);
    println!("report={}", dir.join("report.txt").display());
    Ok(())
}

fn cmd_eval(args: &EvalArgs) -> Result<()> {
    let cfg = args.run.config()?;
    let stream = load(&cfg)?;
    let ck = Checkpoint::load(&args.checkpoint).with_context(|| format!("loading {}", args.checkpoint.display()))?;
    let mut model = TgrState::new(cfg.model.clone(), cfg.mixer_if_rewired(), &stream)?;
    model.restore(&ck, &stream)?;
    let res = evaluate_frozen(&mut model, &stream, &cfg.experiment)?;
    let mut report = String::new();
    for (k, v) in cfg.pairs() {
        let _ = writeln!(report, "config.{k}={v}");
    }
    let _ = writeln!(report, "checkpoint={}", args.checkpoint.display());
    let _ = writeln!(report, "test_mrr={}", res.mrr);
    let _ = writeln!(report, "test_loss={}", res.loss);
    let _ = writeln!(report, "test_queries={}", res.queries);
    let _ = writeln!(report, "eval_negatives={}", cfg.experiment.eval_negatives);
    let dir = out_dir(&args.run.out);
    write_outputs(&dir, &[("eval_report.txt", report.into_bytes())])?;
    println!("test_mrr={}", res.mrr);
    Ok(())
}

fn fmt_key(t: f64) -> String {
    if t == f64::NEG_INFINITY {
        "source".to_string()
    } else {
        format!("{t}")
    }
}

fn cmd_analyze(cmd: &AnalyzeCommand) -> Result<()> {
    let mut table = String::new();
    match cmd {
        AnalyzeCommand::Reach { data, source, tau, mode } => {
            let stream = data.stream()?;
            let mode = mode.resolve(&stream)?;
            let front = temporal_mixing_set(&stream, *source, *tau, &mode)?;
            table.push_str("node\tearliest_mix\n");
            for (v, t) in &front.earliest_mix {
                let _ = writeln!(table, "{v}\t{}", fmt_key(*t));
            }
        }
        AnalyzeCommand::Asymmetry { data, tau, mode } => {
            let stream = data.stream()?;
            let mode = mode.resolve(&stream)?;
            table.push_str("u\tv\n");
            for (u, v) in asymmetry_pairs(&stream, *tau, &mode)? {
                let _ = writeln!(table, "{u}\t{v}");
            }
        }
        AnalyzeCommand::Staleness { data, tau } => {
            let stream = data.stream()?;
            let snap = snapshot(&stream, *tau, true);
            let mut bank = NodeBank::new();
            bank.update(snap.events());
            let report: BTreeMap<usize, f64> = staleness_report(&bank, *tau);
            table.push_str("node\tstaleness\n");
            for (u, s) in report {
                let _ = writeln!(table, "{u}\t{s}");
            }
        }
    }
    emit(&table)
}

/// Prints to stdout, treating a closed pipe as success.
fn emit(text: &str) -> Result<()> {
    use std::io::Write;
    let mut out = std::io::stdout().lock();
    match out.write_all(text.as_bytes()).and_then(|_| out.flush()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}

fn cmd_cayley(args: &CayleyArgs) -> Result<()> {
    if args.n < 3 {
        eprintln!("warning: n = {} gives a degenerate Cayley graph; use n >= 3 for expansion", args.n);
    }
    let g = build_cayley(args.n)?;
    let adj = g.adjacency();
    if args.stats || args.export.is_none() {
        println!("n={}", args.n);
        println!("vertices={}", g.num_vertices());
        println!("edges={}", adj.num_edges());
        let hist: Vec<String> = adj.degree_histogram().iter().map(|(d, c)| format!("{d}:{c}")).collect();
        println!("degree_histogram={}", hist.join(","));
        println!("connected={}", adj.is_connected());
        match spectral_gap(adj, DEFAULT_EIGEN_CAP) {
            Ok(l) => println!("lambda1={l}"),
            Err(e) => println!("lambda1=NA ({e})"),
        }
    }
    if let Some(path) = &args.export {
        let mut csv = String::from("u,v\n");
        for (u, v) in adj.edges() {
            let _ = writeln!(csv, "{u},{v}");
        }
        std::fs::write(path, csv).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

fn cmd_gen(args: &GenArgs) -> Result<()> {
    let mut cfg = RunConfig::default();
    args.data.apply(&mut cfg)?;
    if cfg.data.is_some() {
        bail!("gen writes synthetic data; drop --data");
    }
    let cfg = cfg.resolved()?;
    let stream = cfg.gen.generate()?;
    let dir = out_dir(&args.out);
    let mut events = Vec::new();
    write_csv(&stream, &mut events)?;
    let mut files = vec![("events.csv", events), ("manifest.txt", cfg.gen.manifest().into_bytes())];
    if let Some(x) = stream.raw_node_features() {
        let mut feats = Vec::new();
        write_node_features(x, &mut feats)?;
        files.push(("node_features.csv", feats));
    }
    write_outputs(&dir, &files)?;
    println!("events={}", stream.len());
    println!("nodes={}", stream.num_nodes());
    println!("out={}", dir.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match &cli.cmd {
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Analyze(a) => cmd_analyze(a),
        Command::Cayley(a) => cmd_cayley(a),
        Command::Gen(a) => cmd_gen(a),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
