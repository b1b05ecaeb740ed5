use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};
use ttvbake_cli::commands::{self, EvalReference, FixtureName};
use ttvbake_cli::config::{Overrides, UsageError};
use ttvbake_cli::dataset;

/// Bakes orbit video frames of a mesh into a UV texture atlas.
#[derive(Debug, Parser)]
#[command(name = "ttvbake", version)]
struct Cli {
    #[command(flatten)]
    overrides: Overrides,
    /// More log output (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Render geometry conditioning frames along the orbit.
    Condition,
    /// Render the configured texture into a conditioned frame directory.
    Oracle {
        #[arg(long)]
        input: PathBuf,
    },
    /// Bake color frames into a texture atlas.
    Bake {
        #[arg(long)]
        input: PathBuf,
    },
    /// Progressive texturing with rotation selection.
    Run,
    /// Compare a baked atlas against a reference.
    Eval {
        #[arg(long)]
        atlas: PathBuf,
        /// Ground-truth texture or atlas directory.
        #[arg(long, conflicts_with = "reference_frames", required_unless_present = "reference_frames")]
        reference: Option<PathBuf>,
        /// Frame directory with reference color frames.
        #[arg(long)]
        reference_frames: Option<PathBuf>,
    },
    /// Render a seeded batch of assets.
    Dataset {
        /// TOML file with [[asset]] entries (mesh, texture, name).
        #[arg(long)]
        assets: PathBuf,
    },
    /// Print (and with -o, write) the bake plan.
    Plan {
        /// Fill in the passes by simulating the loop on the mesh.
        #[arg(long)]
        precompute: bool,
    },
    /// Write a built-in test mesh and texture.
    Fixture {
        name: FixtureName,
        #[arg(long, default_value_t = 512)]
        texture_size: usize,
    },
    /// Print the resolved configuration.
    Config,
}

fn run(cli: Cli) -> Result<()> {
    let cfg = cli.overrides.resolve()?;
    match cli.command {
        Command::Condition => {
            let out = commands::cmd_condition(&cfg)?;
            println!("{}", out.display());
        }
        Command::Oracle { input } => {
            let n = commands::cmd_oracle(&cfg, &input)?;
            println!("{n} color frames written");
        }
        Command::Bake { input } => {
            let s = commands::cmd_bake(&cfg, &input)?;
            println!("coverage {:.4} over {} frames", s.coverage, s.frames);
        }
        Command::Run => {
            let report = commands::cmd_run(&cfg)?;
            print!("{}", commands::coverage_table(&report));
        }
        Command::Eval {
            atlas,
            reference,
            reference_frames,
        } => {
            let r = match (reference, reference_frames) {
                (Some(p), _) => EvalReference::Texture(p),
                (None, Some(d)) => EvalReference::Frames(d),
                (None, None) => unreachable!("clap requires one reference"),
            };
            let report = commands::cmd_eval(&cfg, &atlas, &r)?;
            println!(
                "mean PSNR {:.3} dB, mean SSIM {:.4} over {} frames",
                report.mean_psnr_db, report.mean_ssim, report.frame_count
            );
        }
        Command::Dataset { assets } => {
            let list = dataset::read_asset_list(&assets)?;
            let summary = dataset::cmd_dataset(&cfg, &list)?;
            println!("{} of {} assets rendered", summary.completed(), summary.assets.len());
        }
        Command::Plan { precompute } => {
            let plan = commands::cmd_plan(&cfg, precompute)?;
            print!("{}", toml::to_string(&plan)?);
        }
        Command::Fixture { name, texture_size } => {
            let out = cfg.require_output()?;
            commands::cmd_fixture(out, name, texture_size)?;
            println!("{}", out.display());
        }
        Command::Config => print!("{}", cfg.to_toml()),
    }
    Ok(())
}

fn is_usage(err: &anyhow::Error) -> bool {
    err.chain().any(|e| {
        e.downcast_ref::<UsageError>().is_some()
            || e.downcast_ref::<ttvbake_core::Error>().is_some_and(|e| e.is_validation())
    })
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(if is_usage(&e) { 1 } else { 2 })
        }
    }
}
