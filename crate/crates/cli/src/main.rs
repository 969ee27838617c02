use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};

use r3l_core::apex::run_distributed;
use r3l_core::backtest::{
    metrics, run_strategy, sensitivity_sweep, BuyAndHold, EquityCurve, MeanVariance, MetricsReport, PolicyStrategy,
    RandomStrategy, SellAndHold, Strategy, SweepParam, SweepRow,
};
use r3l_core::checkpoint::Checkpoint;
use r3l_core::config::{manifest, RunConfig};
use r3l_core::data::MarketData;
use r3l_core::learner::train;
use r3l_core::rng::stream;
use r3l_core::{gradcheck, oracle, Error};

/// Risk-aware distributional actor-critic for portfolio allocation.
#[derive(Parser)]
#[command(name = "r3l", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Run configuration (TOML); defaults apply when omitted
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed; overrides `runtime.seed`
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Train on the configured training range
    Train {
        #[command(flatten)]
        common: Common,
        /// Acting workers; overrides `runtime.actors`
        #[arg(long)]
        actors: Option<usize>,
    },
    /// Evaluate a checkpoint and the benchmark strategies on the test range
    Backtest {
        #[command(flatten)]
        common: Common,
        /// Checkpoint to evaluate; benchmarks only when omitted
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Rolling window (periods) for the mean-variance benchmark; defaults to `network.window`
        #[arg(long)]
        mv_window: Option<usize>,
    },
    /// Retrain for each value of one hyper-parameter and evaluate
    Sweep {
        #[command(flatten)]
        common: Common,
        /// delta, zeta or seed
        #[arg(long)]
        param: SweepParam,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
    },
    /// Finite-difference checks of every autodiff primitive and the composites
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Brute-force validators: rebalance grid, mean-variance grid, tabular quantiles
    Oracle {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 100)]
        instances: usize,
        #[arg(long, default_value_t = 1_000_000)]
        rollouts: usize,
    },
}

/// A check ran to completion and reported failures.
#[derive(Debug)]
struct ChecksFailed(usize);

impl std::fmt::Display for ChecksFailed {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} check(s) failed", self.0)
    }
}

impl std::error::Error for ChecksFailed {}

/// 1 failed checks, 2 bad configuration, 3 data or file problems, 4 runtime failure.
fn exit_code(e: &anyhow::Error) -> u8 {
    if e.downcast_ref::<ChecksFailed>().is_some() {
        return 1;
    }
    match e.downcast_ref::<Error>() {
        Some(Error::Config { .. } | Error::InvalidParameter { .. }) => 2,
        Some(
            Error::Io { .. }
            | Error::EmptyFile { .. }
            | Error::MalformedRow { .. }
            | Error::BarInvariant { .. }
            | Error::DuplicateDate(_)
            | Error::EmptySeries
            | Error::InsufficientHistory { .. }
            | Error::Checkpoint(_),
        ) => 3,
        _ => 4,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn run(command: Command) -> anyhow::Result<()> {
    match command {
        Command::Train { common, actors } => cmd_train(&common, actors),
        Command::Backtest { common, checkpoint, mv_window } => cmd_backtest(&common, checkpoint.as_deref(), mv_window),
        Command::Sweep { common, param, values } => cmd_sweep(&common, param, &values),
        Command::Gradcheck { seed } => cmd_gradcheck(seed),
        Command::Oracle { seed, instances, rollouts } => cmd_oracle(seed, instances, rollouts),
    }
}

struct Prepared {
    cfg: RunConfig,
    seed: u64,
    market: Arc<MarketData>,
}

fn prepare(common: &Common, command: &str) -> anyhow::Result<Prepared> {
    let cfg = match &common.config {
        Some(p) => RunConfig::parse_config(p)?,
        None => RunConfig::default(),
    };
    let seed = common.seed.unwrap_or(cfg.runtime.seed);
    fs::create_dir_all(&common.out_dir).map_err(|e| io_err(&common.out_dir, e))?;
    write(&common.out_dir.join("manifest.txt"), &manifest(&cfg, seed, command))?;
    let market = Arc::new(cfg.load_market(seed)?);
    Ok(Prepared { cfg, seed, market })
}

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io { path: path.to_path_buf(), source }
}

fn write(path: &Path, text: &str) -> anyhow::Result<()> {
    fs::write(path, text).map_err(|e| io_err(path, e))?;
    Ok(())
}

fn checkpoint_path(dir: &Path, updates: u64) -> PathBuf {
    dir.join(format!("checkpoint_{updates}"))
}

fn cmd_train(common: &Common, actors: Option<usize>) -> anyhow::Result<()> {
    let p = prepare(common, "train")?;
    let actors = actors.unwrap_or(p.cfg.runtime.actors);
    let setup = p.cfg.train_setup(p.market.clone(), p.seed)?;
    let dir = common.out_dir.clone();
    let mut save = |c: &Checkpoint| c.save(&checkpoint_path(&dir, c.updates));

    let out = if actors == 1 {
        train(&setup, &mut save)?
    } else {
        let d = run_distributed(&setup, actors, p.cfg.runtime.queue_bound, &mut save)?;
        write(&common.out_dir.join("audit.txt"), &d.audit.to_text())?;
        if !d.audit.lossless() {
            return Err(Error::Runtime("transition audit found losses".into()).into());
        }
        d.train
    };
    let last = out.state.checkpoint();
    let path = checkpoint_path(&common.out_dir, last.updates);
    last.save(&path)?;
    write(&common.out_dir.join("training_log.csv"), &out.log.to_csv())?;
    println!("trained {} updates with {actors} actor(s); checkpoint {}", last.updates, path.display());
    if let Some((tr, var)) = out.log.last_eval() {
        println!("last evaluation: TR {tr:.4}  VaR {var:.4}");
    }
    Ok(())
}

fn report_line(name: &str, m: &MetricsReport) -> String {
    let cols: Vec<String> = m.values().iter().map(|v| v.to_string()).collect();
    format!("{name},{}", cols.join(","))
}

fn cmd_backtest(common: &Common, checkpoint: Option<&Path>, mv_window: Option<usize>) -> anyhow::Result<()> {
    let p = prepare(common, "backtest")?;
    let (_, test) = p.cfg.splits(&p.market)?;
    let env = p.cfg.env_config();
    let learner = p.cfg.learner_config();

    let mut strategies: Vec<Box<dyn Strategy>> = vec![
        Box::new(BuyAndHold),
        Box::new(SellAndHold),
        Box::new(RandomStrategy { rng: stream(p.seed, "random", 0), delta: learner.delta }),
    ];
    if learner.risk.zeta > 0.0 {
        strategies.push(Box::new(MeanVariance { window: mv_window.unwrap_or(p.cfg.network.window), zeta: learner.risk.zeta }));
    }
    if let Some(path) = checkpoint {
        let ckpt = Checkpoint::load(path)?;
        let actor = ckpt.actor_network()?;
        if actor.config().assets != p.market.assets() || actor.config().window != p.market.window() {
            return Err(Error::Config {
                key: "network.window".into(),
                reason: format!("checkpoint {} does not match the configured market", path.display()),
            }
            .into());
        }
        strategies.push(Box::new(PolicyStrategy { actor, delta: learner.delta, label: "R3L".into() }));
    }

    let mut csv = format!("strategy,{}\n", MetricsReport::COLUMNS.join(","));
    println!("{:<6}{}", "", MetricsReport::COLUMNS.map(|c| format!("{c:>11}")).concat());
    for s in strategies.iter_mut() {
        let name = s.name();
        let curve: EquityCurve = match run_strategy(s.as_mut(), &p.market, test, &env) {
            Ok(c) => c,
            Err(e @ (Error::Wipeout { .. } | Error::InfeasibleRebalance { .. })) => {
                eprintln!("{name}: {e}");
                csv.push_str(&format!("{name},{}\n", ["NaN"; 6].join(",")));
                continue;
            }
            Err(e) => return Err(e).with_context(|| format!("strategy {name}")),
        };
        let m = metrics(&curve, p.market.risk_free(), learner.risk.alpha)?;
        println!("{name:<6}{}", m.values().map(|v| format!("{v:>11.4}")).concat());
        csv.push_str(&report_line(&name, &m));
        csv.push('\n');
        write(&common.out_dir.join(format!("equity_{name}.csv")), &curve.to_csv())?;
    }
    write(&common.out_dir.join("metrics.csv"), &csv)
}

fn cmd_sweep(common: &Common, param: SweepParam, values: &[f64]) -> anyhow::Result<()> {
    let p = prepare(common, "sweep")?;
    let setup = p.cfg.train_setup(p.market.clone(), p.seed)?;
    let test = setup.eval.expect("config setups carry a test range");
    let rows = sensitivity_sweep(&setup, test, param, values)?;
    let symbols = p.market.symbols();
    let mut csv = format!("{}\n", SweepRow::csv_header(&symbols));
    for r in &rows {
        println!("{param} = {}: TR {:.4}  VaR {:.4}  weights {:.3}..{:.3}", r.value, r.metrics.tr, r.metrics.var, r.weight_range.0, r.weight_range.1);
        csv.push_str(&r.csv_line());
        csv.push('\n');
    }
    write(&common.out_dir.join("sweep.csv"), &csv)
}

fn cmd_gradcheck(seed: u64) -> anyhow::Result<()> {
    let checks = gradcheck::run_all(seed)?;
    let failed = checks.iter().filter(|c| !c.passed).count();
    for c in &checks {
        println!("{}", c.line());
    }
    if failed > 0 {
        return Err(ChecksFailed(failed).into());
    }
    Ok(())
}

fn cmd_oracle(seed: u64, instances: usize, rollouts: usize) -> anyhow::Result<()> {
    let suites = [
        oracle::rebalance_suite(seed, instances)?,
        oracle::mean_variance_suite(seed, instances)?,
        oracle::tabular_suite(seed, 32, rollouts)?,
    ];
    for s in &suites {
        println!("{}", s.line());
    }
    let failed = suites.iter().filter(|s| !s.passed()).count();
    if failed > 0 {
        return Err(ChecksFailed(failed).into());
    }
    Ok(())
}
