use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand, ValueEnum};
use phtrans_core::model::analyze;
use phtrans_core::train::{self, grad_suite, Checkpoint, RunConfig, SynthSpec, Trainer};
use serde_json::json;

#[derive(Parser)]
#[command(name = "phtrans", version, about = "Hybrid transformer/CNN 3-D segmentation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Text,
    Json,
}

#[derive(Subcommand)]
enum Command {
    /// Train from a run file, writing checkpoints and loss.csv to --out.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the seed in the run file.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Per-case, per-class DSC and Hausdorff distance as TSV.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Write the TSV here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Per-stage extents, parameters and FLOPs of a model config.
    Analyze {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum, default_value = "text")]
        format: Format,
    },
    /// Finite-difference checks of every op, block and a tiny network.
    GradCheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value = "text")]
        format: Format,
    },
    /// Write a synthetic PHVOL dataset.
    Synth {
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        cases: usize,
        #[arg(long)]
        out: PathBuf,
        /// Volume extents D,H,W.
        #[arg(long, value_delimiter = ',', default_values_t = [16, 32, 32])]
        dims: Vec<usize>,
        /// Including background.
        #[arg(long, default_value_t = 2)]
        classes: usize,
        #[arg(long, default_value_t = 1)]
        channels: usize,
        #[arg(long, default_value_t = 0.1)]
        noise: f64,
    },
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Train { config, seed, out } => {
            let run = RunConfig::load(&config).with_context(|| format!("loading {}", config.display()))?;
            let seed = seed.unwrap_or(run.train.seed);
            let mut trainer = Trainer::new(&run, seed)?;
            let ck = trainer.run(&out)?;
            let summary = json!({
                "iterations": ck.iteration,
                "final_loss": ck.loss_history.last(),
                "checkpoint": out.join("final.ckpt"),
            });
            println!("{summary}");
        }
        Command::Evaluate { checkpoint, data, out } => {
            let ck = Checkpoint::load(&checkpoint).with_context(|| format!("loading {}", checkpoint.display()))?;
            let cases = train::load_dataset(&data)?;
            let report = train::evaluate(&ck, &cases)?;
            match out {
                Some(p) => std::fs::write(&p, report.to_tsv()).with_context(|| format!("writing {}", p.display()))?,
                None => print!("{}", report.to_tsv()),
            }
            eprintln!("mean DSC {:.4}, mean HD {:.4}", report.mean_dsc(), report.mean_hd());
        }
        Command::Analyze { config, format } => {
            let text = std::fs::read_to_string(&config).with_context(|| format!("reading {}", config.display()))?;
            let cfg = train::parse_model_config(&text)?;
            let report = analyze::analyze(&cfg)?;
            match format {
                Format::Text => print!("{}", report.to_text()),
                Format::Json => println!("{}", serde_json::to_string_pretty(&report)?),
            }
        }
        Command::GradCheck { seed, format } => {
            let entries = grad_suite::run_all(seed)?;
            match format {
                Format::Text => {
                    println!("{:<40} {:>8} {:>12} {:>12} {:>8}  result", "check", "entries", "max rel", "max abs", "tol");
                    for e in &entries {
                        let r = &e.report;
                        println!(
                            "{:<40} {:>8} {:>12.3e} {:>12.3e} {:>8.0e}  {}",
                            r.name,
                            r.checked,
                            r.max_rel_error,
                            r.max_abs_error,
                            e.tolerance,
                            if e.passed { "PASS" } else { "FAIL" }
                        );
                    }
                }
                Format::Json => println!("{}", serde_json::to_string_pretty(&entries)?),
            }
            let dead = grad_suite::tiny_model_dead_parameters(seed)?;
            if !dead.is_empty() {
                bail!("parameters without gradient: {}", dead.join(", "));
            }
            let failed: Vec<&str> = entries.iter().filter(|e| !e.passed).map(|e| e.report.name.as_str()).collect();
            if !failed.is_empty() {
                bail!("gradient checks failed: {}", failed.join(", "));
            }
        }
        Command::Synth { seed, cases, out, dims, classes, channels, noise } => {
            if dims.len() != 3 {
                bail!("--dims takes three extents D,H,W, got {}", dims.len());
            }
            let spec = SynthSpec {
                cases,
                dims: [dims[0], dims[1], dims[2]],
                num_classes: classes,
                in_channels: channels,
                noise,
                spacing: [1.0; 3],
            };
            let data = train::generate_synthetic(seed, &spec)?;
            train::save_dataset(&out, &data)?;
            println!("{}", json!({ "cases": data.len(), "out": out }));
        }
    }
    Ok(())
}

/// The error chain joined by ": ", dropping links already quoted by the
/// link before them.
fn message(err: &anyhow::Error) -> String {
    let mut parts: Vec<String> = Vec::new();
    for e in err.chain() {
        let s = e.to_string();
        if !parts.last().is_some_and(|p| p.contains(&s)) {
            parts.push(s);
        }
    }
    parts.join(": ")
}

/// One-line JSON description of a failure.
fn error_line(err: &anyhow::Error) -> serde_json::Value {
    let core = err.chain().find_map(|e| e.downcast_ref::<phtrans_core::Error>());
    let mut v = json!({
        "error": match core {
            Some(e) => e.kind(),
            None if err.chain().any(|e| e.is::<std::io::Error>()) => "io",
            None => "error",
        },
        "message": message(err),
    });
    if let Some(phtrans_core::Error::Config(violations)) = core {
        v["violations"] = violations
            .iter()
            .map(|x| json!({ "location": x.location, "message": x.message }))
            .collect();
    }
    v
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", error_line(&e));
            ExitCode::FAILURE
        }
    }
}
