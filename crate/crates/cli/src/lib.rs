//! The `mad` command line.
//!
//! A competition runs as a sequence of subcommands sharing one manifest:
//!
//! ```text
//! mad stats  --manifest m.json --out stats.csv
//! mad select --manifest m.json --stats stats.csv --out run/madset.jsonl
//! mad rank   --manifest m.json --madset run/madset.jsonl --out run
//! mad add-model --manifest m2.json --state run --model new --stats stats.csv --out run2
//! mad serve  --manifest m.json --madset run/madset.jsonl --log choices.jsonl
//! ```
//!
//! `synth` writes a synthetic competition with its manifest, and `srcc`
//! compares two rankings. Global flags (`--metric`, `--k`, `--eps`, ...)
//! override a `--config` file, which overrides the defaults.

pub mod commands;
pub mod manifest;
pub mod provenance;
pub mod report;
pub mod settings;

use anyhow::Result;
use clap::{Parser, Subcommand};
use mad_core::RankingVector;

use commands::*;
use settings::{Overrides, Settings};

#[derive(Debug, Parser)]
#[command(
    name = "mad",
    version,
    about = "Maximum-discrepancy competitions between segmentation models"
)]
pub struct Cli {
    #[command(flatten)]
    pub overrides: Overrides,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Per-category scale statistics from labeled maps.
    Stats(StatsArgs),
    /// Select the MAD set over every ordered model pair.
    Select(SelectArgs),
    /// Build A and R from dense annotations and rank the models.
    Rank(RankArgs),
    /// Add one model to a ranked competition.
    AddModel(AddModelArgs),
    /// Spearman correlation between two rankings.
    Srcc(SrccArgs),
    /// Write a synthetic competition.
    Synth(SynthArgs),
    /// Serve the 2AFC annotation interface.
    Serve(ServeArgs),
}

fn print_ranking(title: &str, r: &RankingVector<f64>) {
    println!("{title}:");
    for id in r.order() {
        println!("  {id:>12} {:>10.4}", r.score_of(id).unwrap_or(f64::NAN));
    }
}

fn print_rankings(r: &Rankings) {
    print_ranking("aggressiveness", &r.aggressiveness);
    print_ranking("resistance", &r.resistance);
}

pub fn run(cli: Cli) -> Result<()> {
    let o = &cli.overrides;
    match &cli.command {
        Command::AddModel(a) => match cmd_add_model(a, o)? {
            AddModelOutcome::NeedsAnnotations { worklist, images } => {
                println!(
                    "{} image(s) need ground truth; list written to {}",
                    images.len(),
                    worklist.display()
                );
                for id in images {
                    println!("{id}");
                }
            }
            AddModelOutcome::Ranked(r) => print_rankings(&r),
        },
        cmd => {
            let s = Settings::resolve(o)?;
            match cmd {
                Command::Stats(a) => {
                    cmd_stats(a, &s)?;
                    println!("wrote {}", a.out.display());
                }
                Command::Select(a) => print!("{}", cmd_select(a, &s)?),
                Command::Rank(a) => print_rankings(&cmd_rank(a, &s)?),
                Command::Srcc(a) => println!("{}", cmd_srcc(a)?),
                Command::Synth(a) => println!("wrote {}", cmd_synth(a, &s)?.display()),
                Command::Serve(a) => cmd_serve(a, &s)?,
                Command::AddModel(_) => unreachable!(),
            }
        }
    }
    Ok(())
}
