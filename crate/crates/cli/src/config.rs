//! TOML run configuration.
//!
//! One file describes a whole experiment arm. Command-line flags are
//! overrides of config keys and are applied to the parsed document before it
//! is checked against the schema.

use std::path::{Path, PathBuf};

use dnc::augment::AugmentConfig;
use dnc::baseline::{RefineConfig, SpectralConfig, DEFAULT_P_GRID};
use dnc::model::{Decoding, ModelConfig};
use dnc::score::DEFAULT_COLLAR_S;
use dnc::synth::CorpusSpec;
use dnc::train::{CurriculumPlan, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

/// Environment variable naming the directory relative output paths live in.
pub const OUTPUT_ROOT_ENV: &str = "DNC_OUTPUT_ROOT";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Master seed of every random decision in the run.
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub data: DataPaths,
    #[serde(default)]
    pub corpus: CorpusSpec,
    pub model: Option<ModelConfig>,
    pub train: Option<TrainConfig>,
    pub curriculum: Option<CurriculumPlan>,
    pub augment: Option<AugmentConfig>,
    #[serde(default)]
    pub baseline: BaselineSection,
    #[serde(default)]
    pub eval: EvalSection,
    #[serde(default)]
    pub report: ReportSection,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("dnc-out")
}

/// Corpus files; missing entries default to the files `gen-data` writes
/// into the output directory.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataPaths {
    pub train: Option<PathBuf>,
    pub dev: Option<PathBuf>,
    pub eval: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BaselineSection {
    pub p: f64,
    pub diffusion: bool,
    pub normalized: bool,
    pub k_min: usize,
    pub k_max: usize,
    pub restarts: usize,
    /// Pick `p` and diffusion on the dev split instead of using the values above.
    pub tune: bool,
    pub p_grid: Vec<f64>,
}

impl Default for BaselineSection {
    fn default() -> Self {
        let s = SpectralConfig::default();
        Self {
            p: s.refine.p,
            diffusion: s.refine.diffusion,
            normalized: s.normalized,
            k_min: s.k_min,
            k_max: s.k_max,
            restarts: s.restarts,
            tune: false,
            p_grid: DEFAULT_P_GRID.to_vec(),
        }
    }
}

impl BaselineSection {
    pub fn spectral(&self, seed: u64) -> SpectralConfig {
        SpectralConfig {
            refine: RefineConfig { p: self.p, diffusion: self.diffusion },
            normalized: self.normalized,
            k_min: self.k_min,
            k_max: self.k_max,
            restarts: self.restarts,
            seed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum DecodeMethod {
    #[default]
    Greedy,
    Beam,
}

/// How meetings are clustered and scored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    /// Meetings longer than this are split into near-equal sub-meetings
    /// before clustering and scoring.
    pub max_len: Option<usize>,
    pub collar_s: f64,
    pub decoding: DecodeMethod,
    pub beam_width: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self { max_len: None, collar_s: DEFAULT_COLLAR_S, decoding: DecodeMethod::Greedy, beam_width: 4 }
    }
}

impl EvalSection {
    pub fn decoding(&self) -> Decoding {
        match self.decoding {
            DecodeMethod::Greedy => Decoding::Greedy,
            DecodeMethod::Beam => Decoding::Beam(self.beam_width),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ReportLayout {
    /// One row per augmentation setting.
    #[default]
    Augmentation,
    /// One row per clustering system.
    Systems,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReportSection {
    pub layout: ReportLayout,
    pub title: Option<String>,
    pub arms: Vec<ReportArm>,
}

/// One table row: score files written by `dnc score`. Relative paths are
/// taken from the output directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportArm {
    pub name: String,
    pub dev: Option<PathBuf>,
    pub eval: Option<PathBuf>,
}

impl RunConfig {
    /// Parses `text` after applying `KEY=VALUE` overrides, then checks every
    /// section that is present. Relative input paths are resolved against
    /// `base_dir`.
    pub fn parse(text: &str, overrides: &[String], base_dir: &Path) -> CliResult<Self> {
        let mut doc: toml::Table = text.parse().map_err(|e: toml::de::Error| CliError::Validation(format!("config: {e}")))?;
        for o in overrides {
            apply_override(&mut doc, o)?;
        }
        let mut cfg: RunConfig = doc
            .try_into()
            .map_err(|e: toml::de::Error| CliError::Validation(format!("config: {}", e.message())))?;
        cfg.resolve_paths(base_dir);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[String]) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Validation(format!("cannot read config {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, overrides, base).map_err(|e| e.context(path.display()))
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut Option<PathBuf>| {
            if let Some(path) = p.as_mut() {
                if path.is_relative() {
                    *path = base.join(&*path);
                }
            }
        };
        fix(&mut self.data.train);
        fix(&mut self.data.dev);
        fix(&mut self.data.eval);
    }

    pub fn validate(&self) -> CliResult<()> {
        let v = |r: dnc::Result<()>, section: &str| r.map_err(|e| CliError::Validation(format!("[{section}] {e}")));
        v(self.corpus.validate(), "corpus")?;
        if let Some(m) = &self.model {
            v(m.validate(), "model")?;
        }
        if let Some(t) = &self.train {
            v(t.validate(), "train")?;
        }
        if let Some(c) = &self.curriculum {
            v(c.validate(), "curriculum")?;
        }
        if let Some(a) = &self.augment {
            v(a.validate(), "augment")?;
        }
        let b = &self.baseline;
        if !(b.p > 0.0 && b.p <= 1.0) || b.p_grid.iter().any(|p| !(*p > 0.0 && *p <= 1.0)) {
            return Err(CliError::Validation("[baseline] p values must lie in (0, 1]".into()));
        }
        if b.k_min == 0 || b.k_min > b.k_max || b.restarts == 0 || b.p_grid.is_empty() {
            return Err(CliError::Validation("[baseline] need 1 <= k_min <= k_max, restarts >= 1 and a p grid".into()));
        }
        let e = &self.eval;
        if e.max_len == Some(0) || !(e.collar_s >= 0.0) || e.beam_width == 0 {
            return Err(CliError::Validation("[eval] need max_len >= 1, collar_s >= 0 and beam_width >= 1".into()));
        }
        for arm in &self.report.arms {
            if arm.dev.is_none() && arm.eval.is_none() {
                return Err(CliError::Validation(format!("[report] arm `{}` has no score file", arm.name)));
            }
        }
        Ok(())
    }

    /// Output directory, under `$DNC_OUTPUT_ROOT` when it is relative and the
    /// variable is set.
    pub fn output_dir(&self) -> PathBuf {
        match std::env::var_os(OUTPUT_ROOT_ENV) {
            Some(root) if self.output_dir.is_relative() => PathBuf::from(root).join(&self.output_dir),
            _ => self.output_dir.clone(),
        }
    }

    /// A report input: absolute, or relative to the output directory.
    pub fn output_path(&self, p: &Path) -> PathBuf {
        if p.is_relative() {
            self.output_dir().join(p)
        } else {
            p.to_path_buf()
        }
    }

    /// Corpus file of a split: the configured path or the generated one.
    pub fn split_path(&self, split: &str) -> CliResult<PathBuf> {
        let configured = match split {
            "train" => &self.data.train,
            "dev" => &self.data.dev,
            "eval" => &self.data.eval,
            other => return Err(CliError::Usage(format!("unknown split `{other}`"))),
        };
        Ok(configured.clone().unwrap_or_else(|| self.output_dir().join("corpus").join(format!("{split}.jsonl"))))
    }

    pub fn require<'a, T>(&self, section: &'a Option<T>, name: &str) -> CliResult<&'a T> {
        section.as_ref().ok_or_else(|| CliError::Validation(format!("config has no [{name}] section")))
    }
}

/// Sets `a.b.c = value` in the document; the value is read as TOML and
/// falls back to a plain string.
fn apply_override(doc: &mut toml::Table, assignment: &str) -> CliResult<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| CliError::Usage(format!("override `{assignment}` is not KEY=VALUE")))?;
    let key = key.trim();
    let raw = raw.trim();
    let value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(CliError::Usage(format!("bad override key `{key}`")));
    }
    let mut table = doc;
    for part in &parts[..parts.len() - 1] {
        let entry = table.entry(part.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| CliError::Validation(format!("override `{key}`: `{part}` is not a table")))?;
    }
    table.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

/// Parses a config document with no overrides, resolving paths against the
/// current directory.
pub fn parse_run_config(text: &str) -> CliResult<RunConfig> {
    RunConfig::parse(text, &[], Path::new("."))
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "seed = 3\n";

    #[test]
    fn minimal_config_uses_defaults() {
        let c = parse_run_config(MINIMAL).unwrap();
        assert_eq!(c.seed, 3);
        assert_eq!(c.eval.collar_s, 0.25);
        assert_eq!(c.baseline.spectral(3), SpectralConfig { seed: 3, ..SpectralConfig::default() });
    }

    #[test]
    fn seed_is_required() {
        let e = parse_run_config("output_dir = \"x\"\n").unwrap_err();
        assert_eq!(e.exit_code(), 2);
        assert!(e.message().contains("seed"));
    }

    #[test]
    fn unknown_keys_and_syntax_errors_name_the_line() {
        let e = parse_run_config("seed = 1\n[eval]\nmax_length = 3\n").unwrap_err();
        assert!(e.message().contains("max_length"), "{}", e.message());
        let e = parse_run_config("seed = 1\n[eval\n").unwrap_err();
        assert!(e.message().contains("line 2"), "{}", e.message());
    }

    #[test]
    fn overrides_set_nested_keys() {
        let o = vec!["eval.max_len=50".to_string(), "baseline.p=0.3".into(), "seed=9".into()];
        let c = RunConfig::parse(MINIMAL, &o, Path::new(".")).unwrap();
        assert_eq!((c.seed, c.eval.max_len, c.baseline.p), (9, Some(50), 0.3));
        let o = vec!["output_dir=runs/a".to_string()];
        assert_eq!(RunConfig::parse(MINIMAL, &o, Path::new(".")).unwrap().output_dir, PathBuf::from("runs/a"));
        assert!(RunConfig::parse(MINIMAL, &["nonsense".into()], Path::new(".")).is_err());
        assert!(RunConfig::parse(MINIMAL, &["baseline.p=2".into()], Path::new(".")).is_err());
    }

    #[test]
    fn relative_data_paths_follow_the_config() {
        let c = RunConfig::parse("seed = 1\n[data]\neval = \"e.jsonl\"\n", &[], Path::new("/cfg")).unwrap();
        assert_eq!(c.split_path("eval").unwrap(), PathBuf::from("/cfg/e.jsonl"));
    }
}
