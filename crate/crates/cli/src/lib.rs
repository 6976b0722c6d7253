//! The `grasp` command: data generation and conversion, training,
//! evaluation, stream simulation and gradient checks.
//!
//! Every command writes its files into one output directory together with
//! `run-manifest.json`, which records the resolved configuration, the seed
//! and SHA-256 digests of inputs and outputs.

pub mod args;
mod commands;
pub mod manifest;

use std::path::{Path, PathBuf};

use anyhow::Context;

pub use args::Cli;
use args::{Command, OutArgs};
use manifest::{FileDigest, RunManifest, RUN_MANIFEST};

pub const EXIT_OK: i32 = 0;
/// Bad arguments, unreadable or invalid inputs, refused overwrites.
pub const EXIT_USER: i32 = 1;
/// Training diverged or a gradient check failed.
pub const EXIT_NUMERIC: i32 = 2;
/// `simulate --strict-latency` missed the budget.
pub const EXIT_LATENCY: i32 = 3;

/// Env var naming the parent of default output directories.
pub const OUT_DIR_ENV: &str = "GRASP_OUT_DIR";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("latency budget missed: {0}")]
    Latency(String),
}

/// Maps an error chain to the documented exit code.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<CliError>() {
            return match e {
                CliError::Usage(_) => EXIT_USER,
                CliError::Numeric(_) => EXIT_NUMERIC,
                CliError::Latency(_) => EXIT_LATENCY,
            };
        }
        if let Some(e) = cause.downcast_ref::<grasp_core::Error>() {
            if e.is_numeric() {
                return EXIT_NUMERIC;
            }
        }
    }
    EXIT_USER
}

/// What a command produced, before the manifest is written.
pub(crate) struct Outcome {
    pub config: serde_json::Value,
    pub inputs: Vec<PathBuf>,
    /// Relative to the output directory.
    pub outputs: Vec<PathBuf>,
    pub summary: String,
    /// Set when the command ran to completion but its verdict is a failure.
    pub verdict: Option<CliError>,
}

pub(crate) struct Ctx {
    pub seed: u64,
    pub force: bool,
    pub out: PathBuf,
}

/// `--out`, else `$GRASP_OUT_DIR/<command>`, else `grasp-out/<command>`.
pub fn resolve_out_dir(out: &OutArgs, command: &str) -> PathBuf {
    out.out.clone().unwrap_or_else(|| {
        let base = std::env::var_os(OUT_DIR_ENV)
            .filter(|v| !v.is_empty())
            .map(PathBuf::from)
            .unwrap_or_else(|| PathBuf::from("grasp-out"));
        base.join(command)
    })
}

fn out_args(cmd: &Command) -> &OutArgs {
    match cmd {
        Command::GenData(a) => &a.out,
        Command::Convert(a) => &a.out,
        Command::Train(a) => &a.out,
        Command::Eval(a) => &a.out,
        Command::CrossEval(a) => &a.out,
        Command::Simulate(a) => &a.out,
        Command::GradCheck(a) => &a.out,
        Command::Experiment(a) => &a.out,
    }
}

/// Runs one parsed command line and returns the summary printed on success.
pub fn run(cli: Cli) -> anyhow::Result<String> {
    let name = cli.command.name();
    let ctx = Ctx {
        seed: cli.seed,
        force: cli.force,
        out: resolve_out_dir(out_args(&cli.command), name),
    };
    let go = || -> anyhow::Result<Outcome> {
        match &cli.command {
            Command::GenData(a) => commands::data::gen_data(&ctx, a),
            Command::Convert(a) => commands::data::convert(&ctx, a),
            Command::Train(a) => commands::model::train(&ctx, a),
            Command::Eval(a) => commands::model::eval(&ctx, a),
            Command::CrossEval(a) => commands::model::cross_eval(&ctx, a),
            Command::Simulate(a) => commands::simulate::simulate(&ctx, a),
            Command::GradCheck(a) => commands::model::grad_check(&ctx, a),
            Command::Experiment(a) => commands::model::experiment(&ctx, a),
        }
    };
    let outcome = match cli.jobs {
        Some(0) => return Err(CliError::Usage("--jobs must be at least 1".into()).into()),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .context("building the worker pool")?
            .install(go)?,
        None => go()?,
    };
    write_manifest(&ctx.out, name, cli.seed, &outcome)?;
    match outcome.verdict {
        Some(e) => Err(anyhow::Error::new(e).context(outcome.summary)),
        None => Ok(outcome.summary),
    }
}

fn write_manifest(out: &Path, command: &str, seed: u64, o: &Outcome) -> anyhow::Result<()> {
    let digest = |p: &Path, shown: &Path| -> anyhow::Result<FileDigest> {
        Ok(FileDigest {
            path: shown.to_string_lossy().into_owned(),
            sha256: grasp_core::io::file_digest(p)?,
        })
    };
    let inputs = o
        .inputs
        .iter()
        .map(|p| digest(p, p))
        .collect::<anyhow::Result<_>>()?;
    let outputs = o
        .outputs
        .iter()
        .map(|p| digest(&out.join(p), p))
        .collect::<anyhow::Result<_>>()?;
    let m = RunManifest {
        command: command.to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        seed,
        config: o.config.clone(),
        inputs,
        outputs,
    };
    m.write(&out.join(RUN_MANIFEST))?;
    Ok(())
}
