use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use safespec::config::RunConfig;
use safespec::{checkpoint, metrics, monitor, oracle_cmd, plot, run, table, OUTPUT_ENV};
use safespec_core::cmdp::CmdpConfig;
use safespec_core::env::{FeatureMap, Preset};
use safespec_core::parse_task;

#[derive(Parser)]
#[command(
    name = "safespec",
    version,
    about = "Safe policy improvement from task specifications"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the training loop for every configured seed.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// vpg, smfpi or smbpi.
        #[arg(long)]
        algo: Option<String>,
        #[arg(long)]
        lr: Option<f64>,
        /// Comma-separated list, e.g. `0,1,2`.
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Assess a recorded trace against a task.
    Monitor {
        #[arg(long)]
        task: PathBuf,
        #[arg(long)]
        trace: PathBuf,
    },
    /// Compare greedy policies under the sparse and the shaped reward.
    Oracle {
        /// Task over the chain's single variable `pos`.
        #[arg(long, required_unless_present_any = ["table", "random"])]
        task: Option<PathBuf>,
        /// Load the instance from a table file instead.
        #[arg(long, conflicts_with = "task")]
        table: Option<PathBuf>,
        /// Also save the instance as a table.
        #[arg(long)]
        write_table: Option<PathBuf>,
        #[arg(long, default_value_t = 0.1)]
        slip: f64,
        #[arg(long, default_value_t = 0.99)]
        gamma: f64,
        #[arg(long, default_value_t = 6)]
        horizon: usize,
        /// Sweep this many random chains instead.
        #[arg(long)]
        random: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Roll out a checkpointed policy.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        episodes: usize,
        /// Environment, task and CMDP settings; the preset defaults otherwise.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "cartpole-balance")]
        env: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Draw per-seed learning curves of a run as SVG.
    Plot {
        #[arg(long)]
        run: PathBuf,
        #[arg(long, default_value = "return_mean")]
        metric: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn train(
    config: &Path,
    algo: Option<String>,
    lr: Option<f64>,
    seeds: Option<Vec<u64>>,
    epochs: Option<usize>,
) -> Result<()> {
    let mut cfg = RunConfig::load(config)?;
    if let Some(a) = algo {
        cfg.algorithm = a;
    }
    if let Some(lr) = lr {
        cfg.spi.lr = lr;
    }
    if let Some(s) = seeds {
        cfg.seeds = s;
    }
    if let Some(e) = epochs {
        cfg.spi.epochs = e;
    }
    if let Ok(out) = std::env::var(OUTPUT_ENV) {
        cfg.output = PathBuf::from(out);
    }
    let exp = cfg.resolve()?;
    let out = exp.output.clone();
    let done = run::train(&cfg, &exp, &out)?;
    for s in &done {
        println!(
            "seed {}: {} epochs, {} policy updates, final policy {}",
            s.seed,
            s.epochs,
            s.accepted,
            s.final_checkpoint.display()
        );
    }
    println!("outputs in {}", out.display());
    Ok(())
}

fn read_task(path: &Path) -> Result<safespec_core::TaskSpec> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    parse_task(&text).with_context(|| format!("parsing {}", path.display()))
}

fn monitor_cmd(task: &Path, trace: &Path) -> Result<()> {
    let task = read_task(task)?;
    let tau = monitor::read_trace(trace, &task)?;
    let report = monitor::monitor(&task, &tau);
    print!("{}", monitor::render(&task, &tau, &report));
    println!("{}", monitor::CSV_HEADER);
    println!("{}", monitor::csv_row(&tau, &report));
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn oracle(
    task: Option<PathBuf>,
    table_in: Option<PathBuf>,
    write_table: Option<PathBuf>,
    slip: f64,
    gamma: f64,
    horizon: usize,
    random: Option<usize>,
    seed: u64,
) -> Result<ExitCode> {
    if let Some(n) = random {
        let agree = oracle_cmd::sweep(n, seed)?;
        println!("{agree}/{n} random chains have identical greedy action sets");
        return Ok(if agree == n {
            ExitCode::SUCCESS
        } else {
            ExitCode::from(2)
        });
    }
    let m = match (task, table_in) {
        (_, Some(path)) => table::read_table(&fs::read_to_string(&path)?)
            .with_context(|| format!("reading {}", path.display()))?,
        (Some(path), None) => oracle_cmd::chain_instance(&read_task(&path)?, slip, gamma, horizon)?,
        (None, None) => bail!("give --task, --table or --random"),
    };
    if let Some(path) = write_table {
        fs::write(&path, table::write_table(&m))?;
    }
    let c = oracle_cmd::compare(&m)?;
    print!("{}", oracle_cmd::render(&m, &c));
    Ok(if c.agree {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(2)
    })
}

fn eval(
    checkpoint_path: &Path,
    episodes: usize,
    config: Option<PathBuf>,
    env: &str,
    seed: u64,
) -> Result<()> {
    let policy = checkpoint::load(checkpoint_path)
        .with_context(|| format!("loading {}", checkpoint_path.display()))?;
    let (preset, task, cmdp, shaping) = match config {
        Some(path) => {
            let exp = RunConfig::load(&path)?.resolve()?;
            (exp.preset, exp.task, exp.cmdp, exp.shaping)
        }
        None => {
            let preset = Preset::parse(env)?;
            let names = preset.build()?.feature_names();
            let task = preset
                .task()
                .rebind(&names)
                .map_err(|e| anyhow::anyhow!("unbound variable {}", e.0))?;
            let cmdp = CmdpConfig::with_defaults(task.num_constraints());
            (preset, task, cmdp, false)
        }
    };
    let r = run::evaluate(&policy, preset, &task, cmdp, shaping, episodes, seed)?;
    println!("episodes        {}", r.episodes);
    println!("return          {:.3} ± {:.3}", r.return_mean, r.return_std);
    for (i, c) in r.cost_mean.iter().enumerate() {
        println!("cost {}          {:.4}", i + 1, c);
    }
    println!("violation rate  {:.3}", r.violation_rate);
    println!("mean PAM        {:.4}", r.pam_mean);
    Ok(())
}

fn plot_cmd(run_dir: &Path, metric: &str, out: Option<PathBuf>) -> Result<()> {
    let seeds = metrics::seeds_in(run_dir)?;
    if seeds.is_empty() {
        bail!("no metrics files in {}", run_dir.display());
    }
    let mut series = Vec::new();
    for s in seeds {
        let table = metrics::read_metrics(&metrics::metrics_path(run_dir, s))?;
        let values = table
            .column(metric)
            .with_context(|| format!("no numeric column `{metric}`"))?;
        series.push(plot::Series {
            label: format!("seed {s}"),
            values,
        });
    }
    let out = out.unwrap_or_else(|| run_dir.join(format!("{metric}.svg")));
    fs::write(&out, plot::svg(metric, &series))?;
    println!("wrote {}", out.display());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train {
            config,
            algo,
            lr,
            seeds,
            epochs,
        } => train(&config, algo, lr, seeds, epochs).map(|_| ExitCode::SUCCESS),
        Command::Monitor { task, trace } => monitor_cmd(&task, &trace).map(|_| ExitCode::SUCCESS),
        Command::Oracle {
            task,
            table,
            write_table,
            slip,
            gamma,
            horizon,
            random,
            seed,
        } => oracle(task, table, write_table, slip, gamma, horizon, random, seed),
        Command::Eval {
            checkpoint,
            episodes,
            config,
            env,
            seed,
        } => eval(&checkpoint, episodes, config, &env, seed).map(|_| ExitCode::SUCCESS),
        Command::Plot { run, metric, out } => {
            plot_cmd(&run, &metric, out).map(|_| ExitCode::SUCCESS)
        }
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
