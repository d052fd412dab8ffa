//! `zksense`: batch driver for the verifiable sensing pipeline.
//!
//! Every command reads and writes files under the configured output root,
//! so the stages compose: `generate`, `train-toy`, `quantize`, `calibrate`,
//! `register`, then `run` (or `commit` and `prove` on separate hosts),
//! `verify`, `audit-verify` and `attack`.

mod commands;
mod config;
mod plot;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use config::Config;

#[derive(Parser, Debug)]
#[command(name = "zksense", version, about = "Verifiable wireless-sensing decisions (toy pipeline)")]
pub struct Cli {
    /// TOML configuration file; defaults apply when absent.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output root (overrides `out`).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Seed for dataset, model and run randomness.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Windows per proof.
    #[arg(long, global = true)]
    pub batch: Option<usize>,
    /// Spot checks per proof.
    #[arg(long, global = true)]
    pub openings: Option<usize>,
    /// Timestamp (ms) written to every audit entry instead of the clock.
    #[arg(long, global = true)]
    pub fixed_time: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Writes a default config and a fresh signing key.
    Init {
        /// Where to write the config (default `zksense.toml`).
        #[arg(default_value = "zksense.toml")]
        path: PathBuf,
        #[arg(long)]
        force: bool,
    },
    /// Generates the synthetic dataset.
    Generate,
    /// Trains the float reference model.
    TrainToy,
    /// Quantizes the float model to 8-bit fixed point.
    Quantize,
    /// Fits temperature and threshold; plots coverage-risk curves.
    Calibrate,
    /// Registers model, profile and policy.
    Register {
        /// Policy tree JSON; the default policy when absent.
        #[arg(long)]
        tree: Option<PathBuf>,
    },
    /// Runs windows end to end and appends to a fresh audit log.
    Run {
        /// Also write each batch proof under `proofs/`.
        #[arg(long)]
        save_proofs: bool,
    },
    /// Device side of the gateway split: decide and commit only.
    Commit,
    /// Gateway side: prove committed windows.
    Prove,
    /// Verifies proofs; a single pair or every proof under `proofs/`.
    Verify {
        #[arg(long, requires = "proof")]
        statements: Option<PathBuf>,
        #[arg(long, requires = "statements")]
        proof: Option<PathBuf>,
    },
    /// Checks the audit log's chain and signatures.
    AuditVerify {
        #[arg(long)]
        log: Option<PathBuf>,
        /// Skip the head anchor (tail truncation then goes unnoticed).
        #[arg(long)]
        no_anchor: bool,
    },
    /// Red-team campaigns against the registered pipeline.
    Attack {
        #[arg(value_enum)]
        kind: AttackArg,
        #[arg(long)]
        trials: Option<usize>,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum AttackArg {
    Replay,
    TamperThreshold,
    Rollback,
    All,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let mut cfg = match &cli.config {
        Some(p) if p.exists() || !matches!(cli.command, Command::Init { .. }) => Config::load(p)?,
        _ => Config::default(),
    };
    if let Some(out) = &cli.out {
        cfg.out = out.clone();
    }
    if let Some(seed) = cli.seed {
        cfg.build.dataset.seed = seed;
        cfg.build.model_seed = seed;
        cfg.build.train.seed = seed;
        cfg.run.seed = seed;
    }
    if let Some(b) = cli.batch {
        cfg.run.batch = b;
    }
    if let Some(k) = cli.openings {
        cfg.run.openings = Some(k);
    }
    let ctx = commands::Ctx { cfg, fixed_time: cli.fixed_time };
    match cli.command {
        Command::Init { path, force } => ctx.init(&path, force),
        Command::Generate => ctx.generate(),
        Command::TrainToy => ctx.train_toy(),
        Command::Quantize => ctx.quantize(),
        Command::Calibrate => ctx.calibrate(),
        Command::Register { tree } => ctx.register(tree.as_deref()),
        Command::Run { save_proofs } => ctx.run(save_proofs),
        Command::Commit => ctx.commit(),
        Command::Prove => ctx.prove(),
        Command::Verify { statements, proof } => ctx.verify(statements.as_deref().zip(proof.as_deref())),
        Command::AuditVerify { log, no_anchor } => ctx.audit_verify(log.as_deref(), !no_anchor),
        Command::Attack { kind, trials } => ctx.attack(kind, trials),
    }
}
