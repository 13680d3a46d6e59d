//! `pointray` command-line tool.

mod bench;
mod common;
mod fit;
mod gradcheck;
mod render;
mod synth;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

use common::{CliError, Output};

#[derive(Debug, Parser)]
#[command(name = "pointray", version, about = "Differentiable ray-accumulating point cloud renderer")]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Emit machine-readable JSON lines instead of text.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit descriptors to a dataset directory.
    Fit(fit::FitArgs),
    /// Render a scene from every camera in a camera file.
    Render(render::RenderArgs),
    /// Compose the scenes of a manifest and render them.
    Compose(render::ComposeArgs),
    /// Check analytic gradients against finite differences.
    Gradcheck(gradcheck::GradcheckArgs),
    /// Time the rasterization phases.
    Bench(bench::BenchArgs),
    /// Write a synthetic two-layer dataset.
    Synth(synth::SynthArgs),
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Usage("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(format!("cannot configure thread pool: {e}")))?;
    }
    let out = Output { json: cli.json };
    match cli.command {
        Command::Fit(a) => fit::run(a, &out),
        Command::Render(a) => render::run_render(a, &out),
        Command::Compose(a) => render::run_compose(a, &out),
        Command::Gradcheck(a) => gradcheck::run(a, &out),
        Command::Bench(a) => bench::run(a, &out),
        Command::Synth(a) => synth::run(a, &out),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.code())
        }
    }
}
