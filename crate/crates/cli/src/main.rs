use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use avgout::avgout::{discrete_diversity, AvgOutExport};
use avgout::checkpoint::Checkpoint;
use avgout::corpus::{self, Vocabulary};
use avgout::metrics::{self, Lexicons};
use avgout::trainer::{self, DecodeMode, TrainConfig, Trainer};
use avgout::{Error, Objective};
use clap::{CommandFactory, Parser, Subcommand};

/// AvgOut diversity toolkit.
#[derive(Debug, Parser)]
#[command(name = "avgout", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build a vocabulary from a tab-separated corpus.
    BuildVocab {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, default_value_t = 1)]
        min_count: usize,
        #[arg(long, default_value_t = 50_000)]
        max_size: usize,
        /// Vocabulary file to write.
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a synthetic dialogue corpus with a controlled share of dull responses.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 2000)]
        num_examples: usize,
        #[arg(long, default_value_t = 0.8)]
        dull_fraction: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train a model; writes the log and checkpoint into --out.
    Train {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        vocab: Option<PathBuf>,
        #[arg(long)]
        objective: Option<String>,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Resume from this checkpoint directory.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory (defaults to --checkpoint when resuming).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate one response per source line.
    Generate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        source: PathBuf,
        #[arg(long, default_value = "greedy")]
        mode: String,
        #[arg(long)]
        lft_score: Option<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Responses file (stdout when omitted).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Diversity report for a responses file.
    Evaluate {
        #[arg(long)]
        responses: PathBuf,
        #[arg(long)]
        references: Option<PathBuf>,
        #[arg(long)]
        activities: Option<PathBuf>,
        #[arg(long)]
        entities: Option<PathBuf>,
        #[arg(long)]
        report: PathBuf,
        /// Directory for the Diversity-32 CSV curves.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Discrete diversity of one token sequence.
    Score {
        #[arg(long)]
        avgout: PathBuf,
        #[arg(long)]
        tokens: String,
    },
}

fn read(path: &Path) -> Result<String, Error> {
    fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.into(),
        source: e,
    })
}

fn write(path: &Path, text: &str) -> Result<(), Error> {
    fs::write(path, text).map_err(|e| Error::Io {
        path: path.into(),
        source: e,
    })
}

fn usage(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}

fn resolved(pairs: &[(&str, String)]) {
    let mut err = io::stderr().lock();
    for (k, v) in pairs {
        let _ = writeln!(err, "{k} = {v}");
    }
}

fn opt(p: &Option<PathBuf>) -> String {
    p.as_ref().map_or("-".into(), |p| p.display().to_string())
}

fn train(
    corpus_path: &Path,
    vocab: Option<&Path>,
    objective: Option<&str>,
    config: Option<&Path>,
    resume: Option<&Path>,
    seed: Option<u64>,
    out: Option<&Path>,
) -> Result<(), Error> {
    let objective = objective.map(str::parse::<Objective>).transpose()?;
    let (mut trainer, out) = match resume {
        Some(dir) => {
            if config.is_some() || objective.is_some() || seed.is_some() {
                return Err(usage(
                    "--config, --objective and --seed cannot be combined with --checkpoint",
                ));
            }
            let ckpt = Checkpoint::load(dir)?;
            if let Some(v) = vocab {
                if Vocabulary::load(v)?.hash() != ckpt.vocab.hash() {
                    return Err(usage("--vocab differs from the checkpoint's vocabulary"));
                }
            }
            (
                Trainer::from_checkpoint(ckpt),
                out.unwrap_or(dir).to_path_buf(),
            )
        }
        None => {
            let mut cfg = match config {
                Some(path) => TrainConfig::from_file(path, objective)?,
                None => {
                    TrainConfig::new(objective.ok_or_else(|| usage("--objective is required"))?)
                }
            };
            if let Some(s) = seed {
                cfg.seed = s;
            }
            cfg.validate()?;
            let vocab = vocab.ok_or_else(|| usage("--vocab is required"))?;
            let out = out.ok_or_else(|| usage("--out is required"))?;
            (
                Trainer::new(cfg, Vocabulary::load(vocab)?)?,
                out.to_path_buf(),
            )
        }
    };
    let cfg = trainer.config().clone();
    eprint!("{}", cfg.to_text());
    resolved(&[
        ("corpus", corpus_path.display().to_string()),
        ("out", out.display().to_string()),
        ("resume_step", trainer.step().to_string()),
    ]);
    let examples = corpus::load_examples(corpus_path, trainer.vocab(), cfg.load_options())?;
    if cfg.holdout >= examples.len() {
        return Err(usage(format!(
            "holdout {} leaves no training examples",
            cfg.holdout
        )));
    }
    let (train, holdout) = examples.split_at(examples.len() - cfg.holdout);
    trainer.run(train, holdout, Some(&out))?;
    println!(
        "trained {} steps; checkpoint in {}",
        trainer.step(),
        out.display()
    );
    if let Some(best) = trainer.best_eval() {
        println!(
            "best eval at step {}: iAUC-avg {:.4}, distinct-1 {:.4}, NLL {:.4}",
            best.step, best.report.iauc_avg, best.report.distinct_1, best.ml_loss
        );
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::BuildVocab {
            corpus: path,
            min_count,
            max_size,
            out,
        } => {
            resolved(&[
                ("corpus", path.display().to_string()),
                ("min_count", min_count.to_string()),
                ("max_size", max_size.to_string()),
                ("out", out.display().to_string()),
            ]);
            let vocab = corpus::build_vocabulary(&path, min_count, max_size)?;
            vocab.save(&out)?;
            println!(
                "{} tokens ({} content), hash {}",
                vocab.len(),
                vocab.content_tokens().len(),
                vocab.hash()
            );
        }
        Command::Synth {
            out,
            num_examples,
            dull_fraction,
            seed,
        } => {
            resolved(&[
                ("out", out.display().to_string()),
                ("num_examples", num_examples.to_string()),
                ("dull_fraction", dull_fraction.to_string()),
                ("seed", seed.to_string()),
            ]);
            corpus::generate_synthetic_corpus(num_examples, dull_fraction, seed, &out)?;
        }
        Command::Train {
            corpus: path,
            vocab,
            objective,
            config,
            checkpoint,
            seed,
            out,
        } => train(
            &path,
            vocab.as_deref(),
            objective.as_deref(),
            config.as_deref(),
            checkpoint.as_deref(),
            seed,
            out.as_deref(),
        )?,
        Command::Generate {
            checkpoint,
            source,
            mode,
            lft_score,
            seed,
            out,
        } => {
            let mode: DecodeMode = mode.parse()?;
            resolved(&[
                ("checkpoint", checkpoint.display().to_string()),
                ("source", source.display().to_string()),
                ("mode", format!("{mode:?}").to_lowercase()),
                ("lft_score", lft_score.map_or("-".into(), |s| s.to_string())),
                ("seed", seed.to_string()),
                ("out", opt(&out)),
            ]);
            let ckpt = Checkpoint::load(&checkpoint)?;
            let text = read(&source)?;
            let lines: Vec<&str> = text.lines().collect();
            let responses = trainer::generate(&ckpt, &lines, mode, lft_score, seed)?;
            let mut body = String::new();
            for r in &responses {
                body.push_str(r);
                body.push('\n');
            }
            match out {
                Some(p) => write(&p, &body)?,
                None => print!("{body}"),
            }
        }
        Command::Evaluate {
            responses,
            references,
            activities,
            entities,
            report,
            out,
        } => {
            resolved(&[
                ("responses", responses.display().to_string()),
                ("references", opt(&references)),
                ("activities", opt(&activities)),
                ("entities", opt(&entities)),
                ("report", report.display().to_string()),
                ("out", opt(&out)),
            ]);
            let tokenize = |text: String| text.lines().map(metrics::tokenize).collect::<Vec<_>>();
            let model = tokenize(read(&responses)?);
            let gold = references.as_deref().map(read).transpose()?.map(tokenize);
            let lexicons = match (&activities, &entities) {
                (Some(a), Some(e)) => Some(Lexicons::load(a, e)?),
                (None, None) => None,
                _ => return Err(usage("--activities and --entities must be given together")),
            };
            if lexicons.is_some() && gold.is_none() {
                return Err(usage("F1 needs --references"));
            }
            let rep = metrics::evaluate_corpus(&model, gold.as_deref(), lexicons.as_ref())?;
            rep.save(&report)?;
            if let Some(dir) = out {
                metrics::write_curves(&metrics::DiversityReport::load(&report)?, &dir)?;
            }
            println!(
                "distinct-1 {:.4} distinct-2 {:.4} iAUC-s {:.4} iAUC-1 {:.4} iAUC-2 {:.4} iAUC-3 {:.4} iAUC-avg {:.4}",
                rep.distinct_1, rep.distinct_2, rep.iauc_s, rep.iauc_1, rep.iauc_2, rep.iauc_3, rep.iauc_avg
            );
            if let (Some(a), Some(e)) = (rep.activity_f1, rep.entity_f1) {
                println!("activity-F1 {a:.4} entity-F1 {e:.4}");
            }
        }
        Command::Score { avgout, tokens } => {
            resolved(&[
                ("avgout", avgout.display().to_string()),
                ("tokens", tokens.clone()),
            ]);
            let export = AvgOutExport::load(&avgout)?;
            let tracker = export.tracker()?;
            let vocab = Vocabulary::from_tokens(
                export
                    .tokens
                    .iter()
                    .skip(corpus::RESERVED_TOKENS.len())
                    .cloned(),
            );
            if vocab.tokens() != export.tokens.as_slice() {
                return Err(Error::Checkpoint(
                    "avgout export does not start with the reserved tokens".into(),
                ));
            }
            let words: Vec<&str> = tokens.split_whitespace().collect();
            let ids: Vec<_> = words.iter().map(|w| vocab.id_or_unk(w)).collect();
            let r = discrete_diversity(&tracker, &ids)?;
            for (w, (id, p)) in words.iter().zip(ids.iter().zip(&r.probabilities)) {
                println!("{w}\t{}\t{p}", vocab.token(*id).unwrap_or("?"));
            }
            println!("N_G = {} N_unique = {}", r.n_g, r.n_unique);
            println!("B_d = {}", r.b_d);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_usage() {
                eprintln!("{}", Cli::command().render_usage());
                ExitCode::from(1)
            } else {
                ExitCode::from(2)
            }
        }
    }
}
