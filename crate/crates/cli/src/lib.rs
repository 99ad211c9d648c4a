//! `dnc` command-line pipeline: synthetic data, augmentation, training,
//! decoding, the spectral baseline, scoring and report tables.

pub mod commands;
pub mod config;
pub mod error;
pub mod report;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use config::{parse_run_config, RunConfig};
pub use error::{CliError, CliResult};

use commands::Input;

#[derive(Debug, Parser)]
#[command(name = "dnc", version, about = "Speaker clustering experiments with discriminative neural clustering")]
struct Cli {
    /// Run configuration (TOML).
    #[arg(short, long, global = true)]
    config: Option<PathBuf>,
    /// Override a config key, e.g. `--set eval.max_len=50`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Overrides `seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides `output_dir`.
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct InputArgs {
    /// Corpus split from the config.
    #[arg(long, default_value = "eval")]
    split: String,
    /// Corpus file, instead of a split.
    #[arg(long, conflicts_with = "split")]
    corpus: Option<PathBuf>,
}

impl InputArgs {
    fn input(&self) -> Input {
        match &self.corpus {
            Some(p) => Input::File(p.clone()),
            None => Input::Split(self.split.clone()),
        }
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate train/dev/eval corpora.
    GenData {
        /// Training meetings.
        #[arg(long)]
        train: Option<usize>,
        #[arg(long)]
        dev: Option<usize>,
        #[arg(long)]
        eval: Option<usize>,
        /// Embedding dimension.
        #[arg(long)]
        dim: Option<usize>,
        /// Speaker concentration; lower values overlap more.
        #[arg(long)]
        overlap: Option<f64>,
    },
    /// Materialise the augmented training stream of a corpus.
    Augment {
        #[arg(long, default_value = "train")]
        split: String,
        #[arg(long, conflicts_with = "split")]
        corpus: Option<PathBuf>,
    },
    /// Train a model through the configured curriculum.
    Train {
        /// Continue from a checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Cluster meetings with a trained model.
    Decode {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[command(flatten)]
        input: InputArgs,
        /// Beam search of this width instead of the configured decoding.
        #[arg(long)]
        beam: Option<usize>,
        /// Greedy decoding.
        #[arg(long, conflicts_with = "beam")]
        greedy: bool,
        #[arg(long)]
        max_len: Option<usize>,
    },
    /// Cluster meetings with the spectral baseline.
    Baseline {
        #[command(flatten)]
        input: InputArgs,
        #[arg(long)]
        p: Option<f64>,
        #[arg(long)]
        restarts: Option<usize>,
        #[arg(long)]
        kmin: Option<usize>,
        #[arg(long)]
        kmax: Option<usize>,
        /// Choose p and diffusion on the dev split.
        #[arg(long)]
        tune: bool,
        #[arg(long)]
        max_len: Option<usize>,
    },
    /// Score a hypothesis label file against a reference corpus.
    Score {
        #[arg(long)]
        hyp: PathBuf,
        /// Reference split.
        #[arg(long, default_value = "eval")]
        split: String,
        /// Reference corpus file, instead of a split.
        #[arg(long = "ref", conflicts_with = "split")]
        reference: Option<PathBuf>,
        #[arg(long)]
        collar: Option<f64>,
        /// Name of the score file.
        #[arg(long)]
        name: Option<String>,
        #[arg(long)]
        max_len: Option<usize>,
    },
    /// Tabulate score files as Markdown and CSV.
    Report,
}

fn overrides(cli: &Cli) -> Vec<String> {
    let mut o = cli.set.clone();
    let mut push = |k: &str, v: String| o.push(format!("{k}={v}"));
    if let Some(s) = cli.seed {
        push("seed", s.to_string());
    }
    if let Some(d) = &cli.output_dir {
        push("output_dir", toml::Value::String(d.to_string_lossy().into_owned()).to_string());
    }
    match &cli.command {
        Command::GenData { train, dev, eval, dim, overlap } => {
            for (key, v) in [("train_meetings", train), ("dev_meetings", dev), ("eval_meetings", eval), ("dim", dim)] {
                if let Some(v) = v {
                    push(&format!("corpus.{key}"), v.to_string());
                }
            }
            if let Some(k) = overlap {
                push("corpus.concentration", format!("{k:?}"));
            }
        }
        Command::Decode { beam, greedy, max_len, .. } => {
            if let Some(w) = beam {
                push("eval.decoding", "\"beam\"".into());
                push("eval.beam_width", w.to_string());
            }
            if *greedy {
                push("eval.decoding", "\"greedy\"".into());
            }
            if let Some(m) = max_len {
                push("eval.max_len", m.to_string());
            }
        }
        Command::Baseline { p, restarts, kmin, kmax, tune, max_len, .. } => {
            if let Some(p) = p {
                push("baseline.p", format!("{p:?}"));
            }
            if let Some(r) = restarts {
                push("baseline.restarts", r.to_string());
            }
            if let Some(k) = kmin {
                push("baseline.k_min", k.to_string());
            }
            if let Some(k) = kmax {
                push("baseline.k_max", k.to_string());
            }
            if *tune {
                push("baseline.tune", "true".into());
            }
            if let Some(m) = max_len {
                push("eval.max_len", m.to_string());
            }
        }
        Command::Score { collar, max_len, .. } => {
            if let Some(c) = collar {
                push("eval.collar_s", format!("{c:?}"));
            }
            if let Some(m) = max_len {
                push("eval.max_len", m.to_string());
            }
        }
        _ => {}
    }
    o
}

fn execute(cli: Cli) -> CliResult<String> {
    let path = cli.config.clone().ok_or_else(|| CliError::Usage("--config is required".into()))?;
    let cfg = RunConfig::load(&path, &overrides(&cli))?;
    let shown = |p: PathBuf| p.display().to_string();
    Ok(match cli.command {
        Command::GenData { .. } => commands::gen_data(&cfg)?.into_iter().map(shown).collect::<Vec<_>>().join("\n"),
        Command::Augment { split, corpus } => {
            let input = corpus.map_or(Input::Split(split), Input::File);
            shown(commands::augment(&cfg, &input)?)
        }
        Command::Train { resume } => shown(commands::train(&cfg, resume.as_deref())?),
        Command::Decode { checkpoint, input, .. } => shown(commands::decode(&cfg, checkpoint.as_deref(), &input.input())?),
        Command::Baseline { input, .. } => shown(commands::baseline(&cfg, &input.input())?),
        Command::Score { hyp, split, reference, name, .. } => {
            let input = reference.map_or(Input::Split(split), Input::File);
            let (path, report) = commands::score(&cfg, &hyp, &input, name.as_deref())?;
            format!("{}\nSER {:.2}% over {:.1} s", path.display(), report.total.ser_percent, report.total.scored_time_s)
        }
        Command::Report => commands::report(&cfg)?.1,
    })
}

/// Runs the command line `args` (program name first). Returns the exit
/// code; results go to stdout and a JSON error record to stderr.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            let err = CliError::Usage(e.to_string().trim().to_string());
            eprintln!("{}", err.to_json());
            return err.exit_code();
        }
    };
    match execute(cli) {
        Ok(out) => {
            if !out.is_empty() {
                println!("{out}");
            }
            0
        }
        Err(err) => {
            eprintln!("{}", err.to_json());
            err.exit_code()
        }
    }
}
