use std::ffi::OsString;
use std::path::PathBuf;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};

use super::stages::{self, ProbeTask};
use super::{CliError, EncoderKind, RunConfig};
use crate::corpus::PolicyMix;
use crate::seqenc::InputMode;
use crate::strategy::geometry::Level;

#[derive(Parser, Debug)]
#[command(name = "pathway", version, about = "Sequence embeddings of algebra solution pathways")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// JSON config file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic corpus.
    Gen {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        problems: Option<usize>,
        #[arg(long)]
        students: Option<usize>,
        #[arg(long)]
        attempts: Option<usize>,
        /// Policy weights optimal,noisy,abandoning.
        #[arg(long, value_parser = parse_mix)]
        mix: Option<PolicyMix>,
    },
    /// Embed every corpus state with a fixed encoder.
    Encode {
        #[command(flatten)]
        common: Common,
        /// Corpus directory.
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, value_enum)]
        encoder: Option<EncoderArg>,
        #[arg(long)]
        dim: Option<usize>,
        #[arg(long)]
        table_path: Option<PathBuf>,
    },
    /// Train the contrastive sequence encoder.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long = "in")]
        input: PathBuf,
        /// State table written by `encode`.
        #[arg(long)]
        states: PathBuf,
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
        #[arg(long = "L")]
        layers: Option<usize>,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        heads: Option<usize>,
        #[arg(long)]
        tau: Option<f64>,
        #[arg(long)]
        dropout: Option<f64>,
        #[arg(long)]
        max_len: Option<usize>,
        #[arg(long)]
        batch: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        patience: Option<usize>,
    },
    /// Embed every attempt with a trained encoder.
    EmbedSeq {
        #[command(flatten)]
        common: Common,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        states: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Train and evaluate a probe on frozen sequence embeddings.
    Probe {
        #[command(flatten)]
        common: Common,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        states: PathBuf,
        #[arg(long)]
        embeddings: PathBuf,
        #[arg(long, value_enum)]
        task: TaskArg,
        /// Also probe the mean-pooled state vectors and write a comparison.
        #[arg(long, value_enum)]
        baseline: Option<BaselineArg>,
        #[arg(long)]
        hidden: Option<usize>,
        #[arg(long)]
        lstm_hidden: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        batch: Option<usize>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        patience: Option<usize>,
    },
    /// Student-level uniqueness, diversity and conformity.
    Measure {
        #[command(flatten)]
        common: Common,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        embeddings: PathBuf,
        #[arg(long)]
        shrinkage: Option<f64>,
    },
    /// Regress outcomes on the strategy measures.
    Regress {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        scores: PathBuf,
        /// CSV with a student_id column and outcome columns.
        #[arg(long)]
        outcomes: PathBuf,
        /// Outcome column to model (repeatable).
        #[arg(long = "outcome")]
        outcome: Vec<String>,
        /// Predictor column (repeatable).
        #[arg(long = "predictor")]
        predictor: Vec<String>,
    },
    /// 2-D projection and silhouettes of state or transition vectors.
    Project {
        #[command(flatten)]
        common: Common,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        states: PathBuf,
        #[arg(long, value_enum)]
        level: Option<LevelArg>,
    },
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum EncoderArg {
    Structural,
    Table,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum ModeArg {
    Transition,
    State,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum TaskArg {
    Content,
    Efficiency,
    Reconstruct,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum BaselineArg {
    Meanpool,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum LevelArg {
    State,
    Transition,
}

fn parse_mix(s: &str) -> Result<PolicyMix, String> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| e.to_string()))
        .collect::<Result<_, _>>()?;
    match parts.as_slice() {
        [a, b, c] => {
            let mix = PolicyMix::new(*a, *b, *c);
            if mix.is_valid() {
                Ok(mix)
            } else {
                Err("weights must be non-negative and sum to 1".into())
            }
        }
        _ => Err("expected three comma-separated weights".into()),
    }
}

fn set<T>(slot: &mut T, flag: Option<T>) {
    if let Some(v) = flag {
        *slot = v;
    }
}

fn base_config(common: &Common) -> Result<RunConfig, CliError> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    set(&mut cfg.seed, common.seed);
    Ok(cfg)
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Gen {
            common,
            problems,
            students,
            attempts,
            mix,
        } => {
            let mut cfg = base_config(&common)?;
            set(&mut cfg.gen.problems, problems);
            set(&mut cfg.gen.students, students);
            set(&mut cfg.gen.attempts, attempts);
            set(&mut cfg.gen.mix, mix);
            stages::gen(&cfg, &common.out)
        }
        Command::Encode {
            common,
            input,
            encoder,
            dim,
            table_path,
        } => {
            let mut cfg = base_config(&common)?;
            set(
                &mut cfg.encode.encoder,
                encoder.map(|e| match e {
                    EncoderArg::Structural => EncoderKind::Structural,
                    EncoderArg::Table => EncoderKind::Table,
                }),
            );
            set(&mut cfg.encode.dim, dim);
            if table_path.is_some() {
                cfg.encode.table_path = table_path;
            }
            stages::encode(&cfg, &input, &common.out)
        }
        Command::Train {
            common,
            input,
            states,
            mode,
            layers,
            k,
            heads,
            tau,
            dropout,
            max_len,
            batch,
            lr,
            epochs,
            patience,
        } => {
            let mut cfg = base_config(&common)?;
            let t = &mut cfg.train;
            set(
                &mut t.mode,
                mode.map(|m| match m {
                    ModeArg::Transition => InputMode::Transition,
                    ModeArg::State => InputMode::State,
                }),
            );
            set(&mut t.layers, layers);
            set(&mut t.k, k);
            if heads.is_some() {
                t.heads = heads;
            }
            set(&mut t.tau, tau);
            set(&mut t.dropout, dropout);
            set(&mut t.max_len, max_len);
            set(&mut t.batch, batch);
            set(&mut t.lr, lr);
            set(&mut t.epochs, epochs);
            set(&mut t.patience, patience);
            stages::train_stage(&cfg, &input, &states, &common.out)
        }
        Command::EmbedSeq {
            common,
            input,
            states,
            checkpoint,
        } => {
            let cfg = base_config(&common)?;
            stages::embed_seq(&cfg, &input, &states, &checkpoint, &common.out)
        }
        Command::Probe {
            common,
            input,
            states,
            embeddings,
            task,
            baseline,
            hidden,
            lstm_hidden,
            lr,
            batch,
            epochs,
            patience,
        } => {
            let mut cfg = base_config(&common)?;
            let p = &mut cfg.probe;
            set(&mut p.hidden, hidden);
            set(&mut p.lstm_hidden, lstm_hidden);
            set(&mut p.lr, lr);
            set(&mut p.batch, batch);
            set(&mut p.epochs, epochs);
            set(&mut p.patience, patience);
            let task = match task {
                TaskArg::Content => ProbeTask::Content,
                TaskArg::Efficiency => ProbeTask::Efficiency,
                TaskArg::Reconstruct => ProbeTask::Reconstruct,
            };
            stages::probe(&cfg, task, baseline.is_some(), &input, &states, &embeddings, &common.out)
        }
        Command::Measure {
            common,
            input,
            embeddings,
            shrinkage,
        } => {
            let mut cfg = base_config(&common)?;
            set(&mut cfg.measure.shrinkage, shrinkage);
            stages::measure(&cfg, &input, &embeddings, &common.out)
        }
        Command::Regress {
            common,
            scores,
            outcomes,
            outcome,
            predictor,
        } => {
            let mut cfg = base_config(&common)?;
            if !outcome.is_empty() {
                cfg.regress.outcomes = outcome;
            }
            if !predictor.is_empty() {
                cfg.regress.predictors = predictor;
            }
            stages::regress(&cfg, &scores, &outcomes, &common.out).map(|_| ())
        }
        Command::Project {
            common,
            input,
            states,
            level,
        } => {
            let mut cfg = base_config(&common)?;
            set(
                &mut cfg.project.level,
                level.map(|l| match l {
                    LevelArg::State => Level::State,
                    LevelArg::Transition => Level::Transition,
                }),
            );
            stages::project(&cfg, &input, &states, &common.out)
        }
    }
}

/// Parses `args` (program name first), runs the stage and returns the exit
/// code. Errors are printed to stderr as one JSON line.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let result = match Cli::try_parse_from(args) {
        Ok(cli) => dispatch(cli),
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            let _ = e.print();
            return 0;
        }
        Err(e) => {
            let text = e.to_string();
            let first = text.lines().next().unwrap_or("usage error");
            Err(CliError::Usage(first.trim_start_matches("error: ").to_string()))
        }
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{}", e.to_line());
            e.code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mix_parsing() {
        assert_eq!(parse_mix("0.5,0.35,0.15").unwrap(), PolicyMix::new(0.5, 0.35, 0.15));
        assert!(parse_mix("0.5,0.5").is_err());
        assert!(parse_mix("0.9,0.9,-0.8").is_err());
    }

    #[test]
    fn usage_errors_exit_2() {
        assert_eq!(run(["pathway", "gen"]), 2);
        assert_eq!(run(["pathway", "nope"]), 2);
        assert_eq!(run(["pathway", "train", "--out", "x", "--in", "y", "--states", "z", "--mode", "bad"]), 2);
    }

    #[test]
    fn help_exits_0() {
        assert_eq!(run(["pathway", "--help"]), 0);
    }
}
