//! `gloss` — identify a global toxic subspace in a toy transformer's FFN
//! value vectors, remove it by orthogonal projection, and run the
//! surrounding steering / evaluation / synthetic-recovery experiments.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::{CliResult, LoadedConfig};

#[derive(Parser)]
#[command(name = "gloss", version, about = "Global toxic subspace extraction and removal")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Extract candidate directions from contrastive FFN outputs.
    Extract(RunArgs),
    /// Score and order extracted candidates through the vocabulary lens.
    Rank(RunArgs),
    /// Select high-toxicity candidates and build the subspace.
    Subspace(RunArgs),
    /// Project FFN value vectors onto the subspace's orthogonal complement.
    Edit(RunArgs),
    /// Run extract, rank, subspace, and edit in one go.
    Gloss(RunArgs),
    /// Generate with a coefficient intervention and report proxy scores.
    Steer(RunArgs),
    /// Perplexity, fluency, consistency, and toxicity-proxy evaluation.
    Eval(RunArgs),
    /// Factor-model recovery sweep over toxic capacities.
    Synth(RunArgs),
    /// Emit a seeded planted-model fixture plus a ready-to-run config.
    MakeToy(MakeToyArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Pipeline configuration (JSON, unknown keys rejected).
    #[arg(long)]
    config: PathBuf,

    /// Override the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the worker count (GLOSS_THREADS wins over both).
    #[arg(long)]
    threads: Option<usize>,
    /// Override the output directory.
    #[arg(long)]
    output_dir: Option<PathBuf>,
    /// Override the per-layer candidate count.
    #[arg(long)]
    k: Option<usize>,
    /// Override the selection strictness.
    #[arg(long)]
    alpha: Option<f64>,
    /// Override the explained-variance level.
    #[arg(long)]
    eta: Option<f64>,
    /// Override the lens top-m size.
    #[arg(long)]
    m: Option<usize>,
    /// Override the prompt suite path.
    #[arg(long)]
    prompts: Option<PathBuf>,
    /// Override the generated-token count.
    #[arg(long)]
    gen_tokens: Option<usize>,
}

#[derive(Args)]
struct MakeToyArgs {
    /// Directory to write the fixture into.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 42)]
    seed: u64,
}

/// Make a flag-supplied path absolute against the working directory so the
/// config-relative resolution leaves it alone.
fn absolutize(p: &PathBuf) -> String {
    let abs = if p.is_absolute() {
        p.clone()
    } else {
        std::env::current_dir()
            .map(|cwd| cwd.join(p))
            .unwrap_or_else(|_| p.clone())
    };
    abs.to_string_lossy().into_owned()
}

fn load_with_overrides(args: &RunArgs) -> CliResult<LoadedConfig> {
    let mut loaded = LoadedConfig::load(&args.config)?;
    let cfg = &mut loaded.config;
    if let Some(seed) = args.seed {
        cfg.seed = Some(seed);
    }
    if let Some(threads) = args.threads {
        cfg.threads = Some(threads);
    }
    if let Some(dir) = &args.output_dir {
        cfg.output_dir = Some(absolutize(dir));
    }
    if let Some(k) = args.k {
        cfg.k = Some(k);
    }
    if let Some(alpha) = args.alpha {
        cfg.alpha = Some(alpha);
    }
    if let Some(eta) = args.eta {
        cfg.eta = Some(eta);
    }
    if let Some(m) = args.m {
        cfg.m = Some(m);
    }
    if let Some(prompts) = &args.prompts {
        cfg.prompts = Some(absolutize(prompts));
    }
    if let Some(n) = args.gen_tokens {
        cfg.gen_tokens = Some(n);
    }
    Ok(loaded)
}

fn dispatch(command: &Command) -> CliResult<()> {
    let args = match command {
        Command::MakeToy(args) => return commands::cmd_make_toy(&args.out, args.seed),
        Command::Extract(a)
        | Command::Rank(a)
        | Command::Subspace(a)
        | Command::Edit(a)
        | Command::Gloss(a)
        | Command::Steer(a)
        | Command::Eval(a)
        | Command::Synth(a) => a,
    };
    let loaded = load_with_overrides(args)?;
    let threads = commands::effective_threads(loaded.config.threads);
    commands::init_thread_pool(threads);
    match command {
        Command::Extract(_) => commands::cmd_extract(&loaded),
        Command::Rank(_) => commands::cmd_rank(&loaded),
        Command::Subspace(_) => commands::cmd_subspace(&loaded),
        Command::Edit(_) => commands::cmd_edit(&loaded),
        Command::Gloss(_) => commands::cmd_gloss(&loaded),
        Command::Steer(_) => commands::cmd_steer(&loaded),
        Command::Eval(_) => commands::cmd_eval(&loaded),
        Command::Synth(_) => commands::cmd_synth(&loaded),
        Command::MakeToy(_) => unreachable!(),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
