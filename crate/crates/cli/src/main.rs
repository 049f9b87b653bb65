use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};

use alpr_cli::{
    bench_table, cmd_bench, cmd_decode_grid, cmd_eval, cmd_run, cmd_summarize, cmd_synth,
    decode_table, write_json, BenchCorpus, ConfigArgs, RunSummary,
};
use alpr_core::synth::SynthOptions;

#[derive(Parser)]
#[command(
    name = "alpr",
    version,
    about = "License plate reading from recorded detector output"
)]
struct Cli {
    #[command(flatten)]
    config: ConfigArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Read plates from a frames document and detector fixtures.
    Run {
        frames: PathBuf,
        /// Fixture with plate boxes (and character payloads unless --chars).
        plates: PathBuf,
        /// Separate fixture with character payloads.
        #[arg(long)]
        chars: Option<PathBuf>,
        /// Results document; `-` for stdout.
        #[arg(long, default_value = "-")]
        out: PathBuf,
    },
    /// Score a results document against annotations.
    Eval {
        results: PathBuf,
        annotations: PathBuf,
        /// Where to write the structured report.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Time every pipeline stage per batch size on a generated corpus.
    Bench {
        #[arg(long, default_value_t = 1000)]
        frames: usize,
        #[arg(long, default_value_t = 10)]
        max_plates: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Decode a recorded 36x25x40 recognizer grid and list the characters.
    DecodeGrid {
        tensor: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a synthetic frames/fixture/annotations corpus.
    Synth {
        dir: PathBuf,
        #[arg(long, default_value_t = 100)]
        frames: usize,
        #[arg(long, default_value_t = 4)]
        max_plates: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value_t = 3)]
        max_confusions: usize,
        /// Keep substitutions that make the plate layout ambiguous.
        #[arg(long)]
        allow_ambiguous: bool,
        #[arg(long, default_value_t = 0.1)]
        small_plate_rate: f64,
        #[arg(long, default_value_t = 0.2)]
        grid_rate: f64,
    },
    /// Count annotated plates by line layout and readability.
    Summarize { annotations: PathBuf },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run {
            frames,
            plates,
            chars,
            out,
        } => {
            let cfg = cli.config.resolve()?;
            let doc = cmd_run(&frames, &plates, chars.as_deref(), &cfg)?;
            write_json(&doc, &out)?;
            let summary = RunSummary::of(&doc);
            if out.as_os_str() == "-" {
                eprintln!("{summary}");
            } else {
                println!("{summary}");
            }
        }
        Command::Eval {
            results,
            annotations,
            out,
        } => {
            let doc = cmd_eval(&results, &annotations)?;
            print!("{}", doc.report);
            if let Some(out) = out {
                write_json(&doc, &out)?;
            }
        }
        Command::Bench {
            frames,
            max_plates,
            seed,
            out,
        } => {
            let cfg = cli.config.resolve()?;
            let corpus = BenchCorpus {
                frames,
                max_plates,
                seed,
            };
            let doc = cmd_bench(&cfg, &corpus)?;
            print!("{}", bench_table(&doc));
            println!(
                "readings identical across batch sizes; exact match {}/{}",
                doc.report.recognition.exact_correct, doc.report.recognition.total
            );
            if let Some(out) = out {
                write_json(&doc, &out)?;
            }
        }
        Command::DecodeGrid { tensor, out } => {
            let cfg = cli.config.resolve()?;
            let doc = cmd_decode_grid(&tensor, &cfg)?;
            print!("{}", decode_table(&doc));
            if let Some(out) = out {
                write_json(&doc, &out)?;
            }
        }
        Command::Synth {
            dir,
            frames,
            max_plates,
            seed,
            max_confusions,
            allow_ambiguous,
            small_plate_rate,
            grid_rate,
        } => {
            let cfg = cli.config.resolve()?;
            let opts = SynthOptions {
                frames,
                seed,
                max_plates,
                max_confusions,
                allow_ambiguous,
                small_plate_rate,
                grid_rate,
                min_plate_px: cfg.min_plate_px.ceil() as u32,
                ..SynthOptions::default()
            };
            cmd_synth(&opts, &dir)?;
            println!("wrote {frames} frames to {}", dir.display());
        }
        Command::Summarize { annotations } => {
            print!("{}", cmd_summarize(&annotations)?);
        }
    }
    Ok(())
}
