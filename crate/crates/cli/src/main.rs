use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};

use termweave_cli::config::RunConfig;
use termweave_cli::error::{exit_code, EXIT_OK, EXIT_USAGE};
use termweave_cli::stages::{Context, Stage, StageReport, Status};

#[derive(Debug, Parser)]
#[command(name = "termweave", version, about = "Terminology-constrained translation pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Args)]
struct Common {
    /// Run configuration (TOML).
    #[arg(long, short)]
    config: PathBuf,
    /// Override the run seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the work directory.
    #[arg(long)]
    work_dir: Option<PathBuf>,
    /// Serve LLM calls from the cache only and refuse network backends.
    #[arg(long)]
    offline: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate synthetic sentence pairs for every term.
    Datagen(Common),
    /// Deduplicate, language-filter and subset the synthetic pairs.
    Filter(Common),
    /// Score synthetic pairs against a baseline translation.
    Score(Common),
    /// Mix synthetic with generic data and write trainer files.
    Mixprep(Common),
    /// Translate test segments with the fine-tuned and baseline systems.
    Translate(Common),
    /// Report term coverage of the raw translations.
    Termcheck(Common),
    /// Post-edit translations to insert missing terms.
    Ape(Common),
    /// Write coverage and metric reports.
    Eval(Common),
    /// Run or check the whole pipeline.
    Pipeline {
        #[command(subcommand)]
        action: PipelineAction,
    },
}

#[derive(Debug, Subcommand)]
enum PipelineAction {
    /// Run every stage in order, skipping stages that are up to date.
    Run {
        #[command(flatten)]
        common: Common,
        /// Rerun stages even when their manifests are current.
        #[arg(long)]
        force: bool,
    },
    /// Check the manifest hash chain against the files on disk.
    Verify(Common),
}

fn context(common: &Common) -> Result<Context> {
    let mut cfg = RunConfig::load(&common.config)?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(dir) = &common.work_dir {
        cfg.work_dir = dir.clone();
    }
    Context::new(cfg, common.offline)
}

fn print_report(r: &StageReport) {
    match &r.status {
        Status::Ran { summary, cache } => {
            println!("{}: {summary}", r.stage);
            if cache.hits + cache.misses > 0 {
                println!(
                    "{}: cache {} hits, {} misses, {} evictions",
                    r.stage, cache.hits, cache.misses, cache.evictions
                );
            }
        }
        Status::UpToDate => println!("{}: up to date", r.stage),
    }
}

fn run(cli: Cli) -> Result<()> {
    let single = |stage: Stage, common: &Common| -> Result<()> {
        let ctx = context(common)?;
        print_report(&ctx.run_stage(stage)?);
        Ok(())
    };
    match cli.command {
        Command::Datagen(c) => single(Stage::Datagen, &c),
        Command::Filter(c) => single(Stage::Filter, &c),
        Command::Score(c) => single(Stage::Score, &c),
        Command::Mixprep(c) => single(Stage::Mixprep, &c),
        Command::Translate(c) => single(Stage::Translate, &c),
        Command::Termcheck(c) => single(Stage::Termcheck, &c),
        Command::Ape(c) => single(Stage::Ape, &c),
        Command::Eval(c) => single(Stage::Eval, &c),
        Command::Pipeline {
            action: PipelineAction::Run { common, force },
        } => {
            let ctx = context(&common)?;
            ctx.run_pipeline(force, print_report)?;
            Ok(())
        }
        Command::Pipeline {
            action: PipelineAction::Verify(common),
        } => {
            let ctx = context(&common)?;
            for line in ctx.verify()? {
                println!("{line}");
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE } else { EXIT_OK });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::from(EXIT_OK),
        Err(e) => {
            let code = exit_code(&e);
            eprintln!("error: {e:#}");
            ExitCode::from(code)
        }
    }
}

