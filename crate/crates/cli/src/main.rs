use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use frustumocc::par;
use frustumocc_cli::{cmd_bench, cmd_forward, cmd_gen_scene, cmd_verify, exit_code, RunConfig};

#[derive(Parser, Debug)]
#[command(name = "frustumocc", version, about = "Frustum occupancy lifting on synthetic multi-camera scenes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// JSON run configuration; missing keys take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (0 = all cores).
    #[arg(long, global = true, env = "FRUSTUMOCC_THREADS")]
    threads: Option<usize>,
    /// Override a config value by dotted path, e.g. `fusion.w_ex=0.5`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Command {
    /// Run the pipeline and write heatmaps and stats.
    Forward,
    /// Run the verification suites and write a JSON report.
    Verify,
    /// Time naive against sorted voxel pooling.
    Bench,
    /// Write the generated scene as JSON.
    GenScene,
}

fn run(cli: &Cli) -> anyhow::Result<()> {
    let mut cfg = RunConfig::load(cli.config.as_deref(), &cli.overrides)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.out = out.clone();
    }
    let threads = cli.threads.unwrap_or(0);
    par::with_threads(threads, || match cli.command {
        Command::Forward => {
            let a = cmd_forward(&cfg)?;
            for f in &a.files {
                println!("{}", f.display());
            }
            Ok(())
        }
        Command::Verify => cmd_verify(&cfg).map(|_| ()),
        Command::Bench => cmd_bench(&cfg).map(|_| ()),
        Command::GenScene => {
            println!("{}", cmd_gen_scene(&cfg)?.display());
            Ok(())
        }
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
