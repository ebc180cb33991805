//! Seeded training runs and checkpoint evaluation.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use safespec_core::cmdp::{Cmdp, CmdpConfig};
use safespec_core::env::{collect_batch, Preset};
use safespec_core::policy::Policy;
use safespec_core::spi::{batch_stats, safe_policy_optimization, EpochRecord};
use safespec_core::TaskSpec;

use crate::checkpoint::{self, CheckpointError};
use crate::config::{Experiment, RunConfig};
use crate::metrics::{self, MetricsError, SeedWriters};

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("seed {seed}: {message}")]
    Seed { seed: u64, message: String },
    #[error("{failed} of {total} seeds failed; partial results kept")]
    SeedsFailed { failed: usize, total: usize },
}

/// RNG stream reserved for the initial policy parameters.
const INIT_STREAM: u64 = u64::MAX - 1;

/// The initial policy of a seed.
pub fn initial_policy(exp: &Experiment, seed: u64) -> Policy {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(INIT_STREAM);
    Policy::init(exp.architecture.clone(), &mut rng, exp.log_std_init)
}

pub fn build_cmdp(exp: &Experiment) -> Cmdp {
    Cmdp::new(exp.task.clone(), exp.cmdp.clone(), exp.shaping)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeedOutcome {
    pub seed: u64,
    pub epochs: usize,
    pub accepted: usize,
    pub final_checkpoint: PathBuf,
    pub error: Option<String>,
}

pub fn checkpoint_dir(out: &Path, seed: u64) -> PathBuf {
    out.join("checkpoints").join(format!("seed{seed}"))
}

pub fn final_checkpoint(out: &Path, seed: u64) -> PathBuf {
    out.join(format!("final_seed{seed}.policy"))
}

/// Writes the configuration snapshot: the task text next to a config that
/// points at it, with the output directory set to the snapshot's own.
pub fn write_snapshot(cfg: &RunConfig, exp: &Experiment, out: &Path) -> Result<(), RunError> {
    fs::write(out.join("task.txt"), &exp.task_text)?;
    let mut snap = cfg.clone();
    snap.task = Some(PathBuf::from("task.txt"));
    snap.output = PathBuf::from(".");
    snap.seeds = exp.seeds.clone();
    fs::write(out.join("config.toml"), snap.to_toml())?;
    Ok(())
}

/// Runs one seed, writing its CSV files and checkpoints as it goes.
pub fn run_seed(exp: &Experiment, seed: u64, out: &Path) -> Result<SeedOutcome, RunError> {
    let mut env = exp.preset.build().map_err(|e| RunError::Seed {
        seed,
        message: e.to_string(),
    })?;
    let cmdp = build_cmdp(exp);
    let pi0 = initial_policy(exp, seed);
    let ckpt_dir = checkpoint_dir(out, seed);
    fs::create_dir_all(&ckpt_dir)?;
    checkpoint::save(&pi0, &ckpt_dir.join("initial.policy"))?;
    let mut writers = SeedWriters::create(out, seed, cmdp.num_constraints())?;

    let mut last_policy = pi0.clone();
    let mut epochs = 0;
    let mut accepted = 0;
    let mut io_error: Option<RunError> = None;
    let mut clock = Instant::now();
    let result = safe_policy_optimization(
        &mut env,
        &cmdp,
        pi0,
        &exp.spi,
        exp.algorithm,
        seed,
        |r: &EpochRecord| {
            let seconds = clock.elapsed().as_secs_f64();
            clock = Instant::now();
            epochs += 1;
            last_policy = r.policy.clone();
            if io_error.is_some() {
                return;
            }
            let mut write = || -> Result<(), RunError> {
                writers.record(r, seconds)?;
                if r.changed {
                    accepted += 1;
                    checkpoint::save(
                        &r.policy,
                        &ckpt_dir.join(format!("epoch{:04}.policy", r.epoch)),
                    )?;
                }
                Ok(())
            };
            if let Err(e) = write() {
                io_error = Some(e);
            }
            log::info!(
                "seed {seed} epoch {}: return {:.1}, costs {:?}, {:?}",
                r.epoch,
                r.return_mean,
                r.cost_mean,
                r.outcome
            );
        },
    );
    let final_path = final_checkpoint(out, seed);
    checkpoint::save(&last_policy, &final_path)?;
    if let Some(e) = io_error {
        return Err(e);
    }
    Ok(SeedOutcome {
        seed,
        epochs,
        accepted,
        final_checkpoint: final_path,
        error: result.err().map(|e| e.to_string()),
    })
}

/// Runs every seed in parallel, then writes the aggregate over the seeds
/// that finished.
pub fn train(cfg: &RunConfig, exp: &Experiment, out: &Path) -> Result<Vec<SeedOutcome>, RunError> {
    fs::create_dir_all(out)?;
    write_snapshot(cfg, exp, out)?;
    let outcomes: Vec<Result<SeedOutcome, RunError>> = exp
        .seeds
        .par_iter()
        .map(|seed| run_seed(exp, *seed, out))
        .collect();
    let mut done = Vec::new();
    let mut failed = 0;
    for o in outcomes {
        match o {
            Ok(s) if s.error.is_none() => done.push(s),
            Ok(s) => {
                log::error!(
                    "seed {} stopped after {} epochs: {}",
                    s.seed,
                    s.epochs,
                    s.error.as_deref().unwrap_or("")
                );
                failed += 1;
            }
            Err(e) => {
                log::error!("{e}");
                failed += 1;
            }
        }
    }
    if !done.is_empty() {
        let seeds: Vec<u64> = done.iter().map(|s| s.seed).collect();
        fs::write(
            metrics::aggregate_path(out),
            metrics::aggregate_dir(out, &seeds)?,
        )?;
    }
    if failed > 0 {
        return Err(RunError::SeedsFailed {
            failed,
            total: exp.seeds.len(),
        });
    }
    Ok(done)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub episodes: usize,
    pub return_mean: f64,
    pub return_std: f64,
    pub cost_mean: Vec<f64>,
    pub violation_rate: f64,
    pub pam_mean: f64,
}

/// Rolls a policy out on a preset without updating it.
#[allow(clippy::too_many_arguments)]
pub fn evaluate(
    policy: &Policy,
    preset: Preset,
    task: &TaskSpec,
    cmdp: CmdpConfig,
    shaping: bool,
    episodes: usize,
    seed: u64,
) -> Result<EvalReport, RunError> {
    let seed_err = |message: String| RunError::Seed { seed, message };
    let mut env = preset.build().map_err(|e| seed_err(e.to_string()))?;
    let cmdp = Cmdp::new(task.clone(), cmdp, shaping);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let batch = collect_batch(&mut env, &cmdp, policy, episodes, &mut rng)
        .map_err(|e| seed_err(e.to_string()))?;
    let stats = batch_stats(&batch, &cmdp, &env);
    let pam_mean = if stats.pam.is_empty() {
        0.0
    } else {
        stats.pam.iter().sum::<f64>() / stats.pam.len() as f64
    };
    Ok(EvalReport {
        episodes: batch.len(),
        return_mean: stats.return_mean,
        return_std: stats.return_std,
        cost_mean: stats.cost_mean,
        violation_rate: stats.violation_rate,
        pam_mean,
    })
}
