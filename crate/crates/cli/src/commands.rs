//! Subcommand bodies. Each one reads and checks all of its inputs before it
//! creates anything in the output directory.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use dnc::augment::build_training_set;
use dnc::baseline::{cluster_corpus, tune_on_dev, SpectralConfig};
use dnc::eval::{decode_corpus, split_for_eval};
use dnc::io::{read_corpus, read_labels, write_corpus, write_labels, LabelRecord};
use dnc::score::{batch_score, BatchReport};
use dnc::synth::CorpusSpec;
use dnc::train::{Checkpoint, Trainer};
use dnc::types::MeetingRecord;
use serde::Serialize;

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::report::{render_csv, render_markdown, ReportRow};

/// Where a command reads meetings from.
#[derive(Debug, Clone)]
pub enum Input {
    Split(String),
    File(PathBuf),
}

impl Input {
    fn path(&self, cfg: &RunConfig) -> CliResult<PathBuf> {
        match self {
            Input::Split(s) => cfg.split_path(s),
            Input::File(p) => Ok(p.clone()),
        }
    }

    /// Name used for output files.
    fn name(&self) -> String {
        match self {
            Input::Split(s) => s.clone(),
            Input::File(p) => file_stem(p),
        }
    }
}

fn file_stem(p: &Path) -> String {
    let name = p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_else(|| "input".into());
    name.split('.').next().unwrap_or("input").to_string()
}

fn require_file(path: &Path, what: &str) -> CliResult<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::Validation(format!("{what} {} does not exist", path.display())))
    }
}

fn load_corpus(path: &Path, what: &str) -> CliResult<Vec<MeetingRecord>> {
    require_file(path, what)?;
    read_corpus(path).map_err(|e| CliError::from(e).context(path.display()))
}

fn create_dir(path: &Path) -> CliResult<()> {
    fs::create_dir_all(path).map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", path.display())))
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

/// Writes through a sibling temporary file so readers never see half a file.
fn write_atomic(path: &Path, bytes: &[u8]) -> CliResult<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

fn to_records(hyps: BTreeMap<String, Vec<usize>>) -> Vec<LabelRecord> {
    hyps.into_iter().map(|(meeting_id, labels)| LabelRecord { meeting_id, labels }).collect()
}

pub fn gen_data(cfg: &RunConfig) -> CliResult<Vec<PathBuf>> {
    let spec = CorpusSpec { seed: cfg.seed, ..cfg.corpus.clone() };
    let corpus = spec.generate()?;
    let dir = cfg.output_dir().join("corpus");
    create_dir(&dir)?;
    let mut written = Vec::new();
    for (name, meetings) in [("train", &corpus.train), ("dev", &corpus.dev), ("eval", &corpus.eval)] {
        let path = dir.join(format!("{name}.jsonl"));
        write_corpus(meetings, &path)?;
        written.push(path);
    }
    write_json(&spec, &dir.join("spec.json"))?;
    Ok(written)
}

#[derive(Debug, Serialize)]
struct AugmentSummary {
    examples: usize,
    segments: usize,
    mean_length: f64,
    min_length: usize,
    max_length: usize,
    /// Number of examples with k speakers, keyed by k.
    speakers: BTreeMap<usize, usize>,
    config: dnc::augment::AugmentConfig,
}

pub fn augment(cfg: &RunConfig, input: &Input) -> CliResult<PathBuf> {
    let aug = dnc::augment::AugmentConfig { seed: cfg.seed, ..cfg.require(&cfg.augment, "augment")?.clone() };
    let corpus = load_corpus(&input.path(cfg)?, "corpus")?;
    let set = build_training_set(&corpus, &aug)?;
    let mut meetings = Vec::with_capacity(set.len());
    let mut speakers = BTreeMap::new();
    for i in 0..set.len() {
        let mut m = set.meeting(i)?;
        m.meeting_id = format!("{}@{i}", m.meeting_id);
        *speakers.entry(m.num_speakers()).or_insert(0) += 1;
        meetings.push(m);
    }
    let lengths: Vec<usize> = meetings.iter().map(MeetingRecord::len).collect();
    let segments: usize = lengths.iter().sum();
    let summary = AugmentSummary {
        examples: meetings.len(),
        segments,
        mean_length: segments as f64 / meetings.len().max(1) as f64,
        min_length: lengths.iter().copied().min().unwrap_or(0),
        max_length: lengths.iter().copied().max().unwrap_or(0),
        speakers,
        config: aug,
    };
    let dir = cfg.output_dir().join("augment");
    create_dir(&dir)?;
    let path = dir.join(format!("{}.jsonl", input.name()));
    write_corpus(&meetings, &path)?;
    write_json(&summary, &dir.join(format!("{}.summary.json", input.name())))?;
    Ok(path)
}

pub fn train(cfg: &RunConfig, resume: Option<&Path>) -> CliResult<PathBuf> {
    let model_cfg = cfg.require(&cfg.model, "model")?;
    let train_cfg = cfg.require(&cfg.train, "train")?;
    let plan = cfg.require(&cfg.curriculum, "curriculum")?;
    let train = load_corpus(&cfg.split_path("train")?, "train corpus")?;
    let dev = load_corpus(&cfg.split_path("dev")?, "dev corpus")?;
    for m in train.iter().chain(&dev) {
        if m.dim() != model_cfg.input_dim {
            return Err(CliError::Validation(format!(
                "meeting `{}` has dimension {}, the model expects {}",
                m.meeting_id,
                m.dim(),
                model_cfg.input_dim
            )));
        }
    }
    let mut trainer = match resume {
        Some(path) => {
            require_file(path, "checkpoint")?;
            let t = Checkpoint::load(path).map_err(|e| CliError::from(e).context(path.display()))?.into_trainer()?;
            if &t.model.config != model_cfg || &t.config != train_cfg || t.seed != cfg.seed {
                return Err(CliError::Validation(format!(
                    "checkpoint {} was written by a different model, train or seed setting",
                    path.display()
                )));
            }
            t
        }
        None => Trainer::new(model_cfg.clone(), train_cfg.clone(), cfg.seed)?,
    };

    let dir = cfg.output_dir().join("train");
    create_dir(&dir)?;
    let log_path = dir.join("progress.jsonl");
    let mut log = fs::OpenOptions::new()
        .create(true)
        .write(true)
        .append(resume.is_some())
        .truncate(resume.is_none())
        .open(&log_path)?;
    let checkpoint = dir.join("checkpoint.json");
    let summaries = trainer.run_curriculum(plan, &train, &dev, &mut |t, record| {
        let line = serde_json::to_string(record).map_err(dnc::DncError::from)?;
        writeln!(log, "{line}")?;
        let tmp = checkpoint.with_extension("tmp");
        fs::write(&tmp, Checkpoint::from_trainer(t).to_json()?)?;
        fs::rename(&tmp, &checkpoint)?;
        Ok(())
    })?;
    let model_path = dir.join("model.json");
    write_atomic(&model_path, Checkpoint::from_trainer(&trainer).to_json()?.as_bytes())?;
    write_atomic(&checkpoint, Checkpoint::from_trainer(&trainer).to_json()?.as_bytes())?;
    #[derive(Serialize)]
    struct Stage {
        stage: String,
        epochs: usize,
        best_dev_loss: f64,
        best_dev_ser: Option<f64>,
    }
    let stages: Vec<Stage> = summaries
        .into_iter()
        .map(|s| Stage { stage: s.stage, epochs: s.epochs, best_dev_loss: s.best_dev_loss, best_dev_ser: s.best_dev_ser })
        .collect();
    write_json(&stages, &dir.join("summary.json"))?;
    Ok(model_path)
}

pub fn decode(cfg: &RunConfig, checkpoint: Option<&Path>, input: &Input) -> CliResult<PathBuf> {
    let ckpt = checkpoint.map(Path::to_path_buf).unwrap_or_else(|| cfg.output_dir().join("train").join("model.json"));
    require_file(&ckpt, "checkpoint")?;
    let model = Checkpoint::load(&ckpt).map_err(|e| CliError::from(e).context(ckpt.display()))?.into_model()?;
    let corpus = load_corpus(&input.path(cfg)?, "corpus")?;
    if let Some(m) = corpus.iter().find(|m| m.dim() != model.config.input_dim) {
        return Err(CliError::Validation(format!(
            "meeting `{}` has dimension {}, the model expects {}",
            m.meeting_id,
            m.dim(),
            model.config.input_dim
        )));
    }
    let chunks = split_for_eval(&corpus, cfg.eval.max_len)?;
    let hyps = decode_corpus(&model, &chunks, cfg.eval.decoding())?;
    let dir = cfg.output_dir().join("decode");
    create_dir(&dir)?;
    let path = dir.join(format!("{}.labels.jsonl", input.name()));
    write_labels(&to_records(hyps), &path)?;
    Ok(path)
}

pub fn baseline(cfg: &RunConfig, input: &Input) -> CliResult<PathBuf> {
    let corpus = load_corpus(&input.path(cfg)?, "corpus")?;
    let mut spectral: SpectralConfig = cfg.baseline.spectral(cfg.seed);
    let mut tuned_ser = None;
    if cfg.baseline.tune {
        let dev = load_corpus(&cfg.split_path("dev")?, "dev corpus")?;
        let dev = split_for_eval(&dev, cfg.eval.max_len)?;
        let (best, ser) = tune_on_dev(&dev, &spectral, &cfg.baseline.p_grid, cfg.eval.collar_s)?;
        spectral = best;
        tuned_ser = Some(ser);
    }
    let chunks = split_for_eval(&corpus, cfg.eval.max_len)?;
    let (single, multi): (Vec<_>, Vec<_>) = chunks.into_iter().partition(|m| m.len() < 2);
    let mut hyps = cluster_corpus(&multi, &spectral)?;
    for m in single {
        hyps.insert(m.meeting_id.clone(), vec![1; m.len()]);
    }
    let dir = cfg.output_dir().join("baseline");
    create_dir(&dir)?;
    let path = dir.join(format!("{}.labels.jsonl", input.name()));
    write_labels(&to_records(hyps), &path)?;
    #[derive(Serialize)]
    struct Used {
        config: SpectralConfig,
        description: String,
        dev_ser_percent: Option<f64>,
    }
    let used = Used { config: spectral, description: spectral.describe(), dev_ser_percent: tuned_ser };
    write_json(&used, &dir.join(format!("{}.config.json", input.name())))?;
    Ok(path)
}

pub fn score(cfg: &RunConfig, hyp: &Path, reference: &Input, name: Option<&str>) -> CliResult<(PathBuf, BatchReport)> {
    require_file(hyp, "hypothesis file")?;
    let records = read_labels(hyp).map_err(|e| CliError::from(e).context(hyp.display()))?;
    let corpus = load_corpus(&reference.path(cfg)?, "reference corpus")?;
    let chunks = split_for_eval(&corpus, cfg.eval.max_len)?;
    let hyps: BTreeMap<String, Vec<usize>> = records.into_iter().map(|r| (r.meeting_id, r.labels)).collect();
    let report = batch_score(&chunks, &hyps, cfg.eval.collar_s)?;
    let name = match name {
        Some(n) => n.to_string(),
        None => {
            let parent = hyp.parent().and_then(Path::file_name).map(|n| n.to_string_lossy().into_owned());
            match parent {
                Some(p) => format!("{p}-{}", file_stem(hyp)),
                None => file_stem(hyp),
            }
        }
    };
    let dir = cfg.output_dir().join("score");
    create_dir(&dir)?;
    let path = dir.join(format!("{name}.json"));
    write_json(&report, &path)?;
    Ok((path, report))
}

pub fn report(cfg: &RunConfig) -> CliResult<(PathBuf, String)> {
    if cfg.report.arms.is_empty() {
        return Err(CliError::Validation("[report] lists no arms".into()));
    }
    let read = |p: &Option<PathBuf>| -> CliResult<Option<f64>> {
        let Some(p) = p else { return Ok(None) };
        let p = &cfg.output_path(p);
        require_file(p, "score file")?;
        let text = fs::read_to_string(p)?;
        let r: BatchReport =
            serde_json::from_str(&text).map_err(|e| CliError::Validation(format!("{}: {e}", p.display())))?;
        Ok(Some(r.total.ser_percent))
    };
    let rows = cfg
        .report
        .arms
        .iter()
        .map(|a| Ok(ReportRow { name: a.name.clone(), dev_ser: read(&a.dev)?, eval_ser: read(&a.eval)? }))
        .collect::<CliResult<Vec<_>>>()?;
    let md = render_markdown(cfg.report.layout, cfg.report.title.as_deref(), &rows);
    let dir = cfg.output_dir().join("report");
    create_dir(&dir)?;
    write_atomic(&dir.join("report.md"), md.as_bytes())?;
    write_atomic(&dir.join("report.csv"), render_csv(cfg.report.layout, &rows).as_bytes())?;
    Ok((dir.join("report.md"), md))
}
