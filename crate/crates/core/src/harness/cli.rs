//! Command-line front end. Exit codes: 0 success, 1 usage error, 2 runtime error.

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};

use crate::agent::{episode_rollout, Policy};
use crate::datasets::{generate_glyphs, write_idx_file, IdxTensor};
use crate::error::{Error, Result};

use super::{
    evaluate, load_checkpoint, load_dataset, model_from_checkpoint, save_checkpoint, train, train_probe,
    write_metrics_csv, write_pgm_grid, Checkpoint, EvalOptions, Probe, TrainConfig,
};

#[derive(Debug, Parser)]
#[command(name = "imago", about = "Glimpse-driven scene imagination", arg_required_else_help = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum PolicyArg {
    Uncertainty,
    Random,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum PolicySet {
    Uncertainty,
    Random,
    Both,
}

impl From<PolicyArg> for Policy {
    fn from(p: PolicyArg) -> Self {
        match p {
            PolicyArg::Uncertainty => Policy::Uncertainty,
            PolicyArg::Random => Policy::Random,
        }
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write glyph scenes as IDX files (images-idx3-ubyte, labels-idx1-ubyte)
    GenData {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 3000)]
        count: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 16)]
        size: usize,
    },
    /// Train a model and write a checkpoint
    Train {
        /// key = value config file; defaults apply when omitted
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Roll out one test scene and write the hypotheses as a PGM grid
    Imagine {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 0)]
        scene_index: usize,
        #[arg(long, value_enum, default_value = "uncertainty")]
        policy: PolicyArg,
        #[arg(long)]
        timesteps: Option<usize>,
        #[arg(long, default_value_t = 8)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out_pgm: PathBuf,
    },
    /// Per-timestep metrics on the test split as CSV
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_enum, default_value = "both")]
        policy: PolicySet,
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out_csv: PathBuf,
        /// Probe checkpoint; entropy and accuracy columns are NA without it
        #[arg(long)]
        probe: Option<PathBuf>,
    },
    /// Train the latent probe classifier on the training split
    Probe {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Parse `args` (including the program name) and run. Returns the exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind::{DisplayHelp, DisplayVersion};
            let text = e.render().to_string();
            return match e.kind() {
                DisplayHelp | DisplayVersion => {
                    let _ = write!(out, "{text}");
                    0
                }
                _ => {
                    let _ = write!(err, "{text}");
                    1
                }
            };
        }
    };
    match execute(cli.command, out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            2
        }
    }
}

fn execute(command: Command, out: &mut dyn Write) -> Result<()> {
    let mut say = |s: String| {
        let _ = writeln!(out, "{s}");
    };
    match command {
        Command::GenData { seed, count, out: dir, size } => {
            let scenes = generate_glyphs(seed, count, size, size)?;
            std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            let images = IdxTensor {
                dims: vec![count, size, size],
                data: scenes.iter().flat_map(|s| s.pixels.data().iter().map(|&v| (v * 255.0).round() as u8)).collect(),
            };
            let labels = IdxTensor {
                dims: vec![count],
                data: scenes.iter().map(|s| s.label.unwrap_or(0)).collect(),
            };
            write_idx_file(dir.join("images-idx3-ubyte"), &images)?;
            write_idx_file(dir.join("labels-idx1-ubyte"), &labels)?;
            say(format!("wrote {count} scenes to {}", dir.display()));
        }
        Command::Train { config, out: path } => {
            let cfg = match config {
                Some(p) => TrainConfig::load(p)?,
                None => TrainConfig::default(),
            };
            let data = load_dataset(&cfg)?;
            let outcome = train(&cfg, &data.train, |e| {
                say(format!(
                    "epoch {:>3}  loss {:.6}  t1 {:.4} t2 {:.4} t3 {:.4} t4 {:.4} t5 {:.4}",
                    e.epoch + 1,
                    e.loss,
                    e.terms[0],
                    e.terms[1],
                    e.terms[2],
                    e.terms[3],
                    e.terms[4]
                ))
            })?;
            save_checkpoint(&path, &Checkpoint::from_store(outcome.step, cfg.to_text(), &outcome.model.store))?;
            say(format!("checkpoint written to {}", path.display()));
        }
        Command::Imagine {
            checkpoint,
            scene_index,
            policy,
            timesteps,
            samples,
            seed,
            out_pgm,
        } => {
            let (cfg, model) = model_from_checkpoint(&load_checkpoint(checkpoint)?)?;
            let data = load_dataset(&cfg)?;
            let scene = data.test.get(scene_index).ok_or_else(|| {
                Error::Config(format!("scene index {scene_index} out of range ({} test scenes)", data.test.len()))
            })?;
            let steps = episode_rollout(&model, scene, timesteps.unwrap_or(cfg.timesteps), policy.into(), samples, seed)?;
            write_pgm_grid(&out_pgm, &steps, scene)?;
            say(format!("wrote {}", out_pgm.display()));
        }
        Command::Eval {
            checkpoint,
            policy,
            samples,
            seed,
            out_csv,
            probe,
        } => {
            let (cfg, model) = model_from_checkpoint(&load_checkpoint(checkpoint)?)?;
            let probe = probe.map(|p| load_checkpoint(p).and_then(|c| Probe::from_checkpoint(&c))).transpose()?;
            let data = load_dataset(&cfg)?;
            let policies = match policy {
                PolicySet::Uncertainty => vec![Policy::Uncertainty],
                PolicySet::Random => vec![Policy::Random],
                PolicySet::Both => vec![Policy::Uncertainty, Policy::Random],
            };
            let rows = evaluate(
                &model,
                probe.as_ref(),
                &data.test,
                &EvalOptions {
                    policies,
                    timesteps: cfg.timesteps,
                    samples: samples.unwrap_or(cfg.eval_samples),
                    seed,
                    repeats: cfg.eval_repeats,
                },
            )?;
            write_metrics_csv(&rows, &out_csv)?;
            say(format!("wrote {} rows to {}", rows.len(), out_csv.display()));
        }
        Command::Probe { checkpoint, out: path } => {
            let (cfg, model) = model_from_checkpoint(&load_checkpoint(checkpoint)?)?;
            let data = load_dataset(&cfg)?;
            let (probe, report) = train_probe(&model, &data.train, &cfg)?;
            save_checkpoint(&path, &probe.to_checkpoint(cfg.to_text()))?;
            say(format!(
                "probe train accuracy {:.4}, written to {}",
                report.train_accuracy,
                path.display()
            ));
        }
    }
    Ok(())
}
