//! Run configuration: one TOML file holding every tunable and every seed.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::abuse::SourceSpec;
use crate::annotation::AnnotationConfig;
use crate::bootstrap::DeepLearnerConfig;
use crate::embedding::{ConeConfig, ConeMetric, DEFAULT_SEED_VERBS};
use crate::ngram::{NgramConfig, NgramLearnerConfig};
use crate::scoring::DEFAULT_WINDOW;
use crate::seed::DepLabelMap;
use crate::sequence::ModelConfig;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub corpus: Option<PathBuf>,
    pub parses: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
    pub output: PathBuf,
}

impl Default for PathsConfig {
    fn default() -> Self {
        PathsConfig {
            corpus: None,
            parses: None,
            embeddings: None,
            output: PathBuf::from("run"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NgramSection {
    pub n_min: usize,
    pub n_max: usize,
    pub cap: usize,
    pub percentile: f64,
    pub smoothing: Option<f64>,
}

impl Default for NgramSection {
    fn default() -> Self {
        let i = NgramConfig::default();
        let l = NgramLearnerConfig::default();
        NgramSection {
            n_min: i.n_min,
            n_max: i.n_max,
            cap: i.cap,
            percentile: l.percentile,
            smoothing: l.smoothing,
        }
    }
}

impl NgramSection {
    pub fn index(&self) -> NgramConfig {
        NgramConfig {
            n_min: self.n_min,
            n_max: self.n_max,
            cap: self.cap,
        }
    }

    pub fn learner(&self) -> NgramLearnerConfig {
        NgramLearnerConfig {
            percentile: self.percentile,
            smoothing: self.smoothing,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConeSection {
    pub seeds: Vec<String>,
    pub multiplier: f64,
    pub metric: ConeMetric,
}

impl Default for ConeSection {
    fn default() -> Self {
        ConeSection {
            seeds: DEFAULT_SEED_VERBS.iter().map(|s| s.to_string()).collect(),
            multiplier: 2.0,
            metric: ConeMetric::EuclideanToMean,
        }
    }
}

impl ConeSection {
    pub fn cone(&self) -> ConeConfig {
        ConeConfig {
            seeds: self.seeds.clone(),
            distance_multiplier: self.multiplier,
            metric: self.metric,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BootstrapSection {
    pub rounds: usize,
    pub amplify_threshold: f64,
    pub amplify_factor: f64,
    pub hard_threshold: f64,
}

impl Default for BootstrapSection {
    fn default() -> Self {
        let d = DeepLearnerConfig::default();
        BootstrapSection {
            rounds: 6,
            amplify_threshold: d.amplify_threshold,
            amplify_factor: d.amplify_factor,
            hard_threshold: d.hard_threshold,
        }
    }
}

impl BootstrapSection {
    pub fn deep(&self) -> DeepLearnerConfig {
        DeepLearnerConfig {
            amplify_threshold: self.amplify_threshold,
            amplify_factor: self.amplify_factor,
            hard_threshold: self.hard_threshold,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AbuseSection {
    pub sources: Vec<SourceSpec>,
    pub shuffle_seed: u64,
    pub model: ModelConfig,
}

impl Default for AbuseSection {
    fn default() -> Self {
        AbuseSection {
            sources: vec![],
            shuffle_seed: 7,
            model: ModelConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScoreSection {
    pub window: usize,
    pub top: usize,
}

impl Default for ScoreSection {
    fn default() -> Self {
        ScoreSection {
            window: DEFAULT_WINDOW,
            top: 50,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub paths: PathsConfig,
    pub ngram: NgramSection,
    pub cone: ConeSection,
    pub dep_labels: DepLabelMap,
    /// The intent learner's network.
    pub model: ModelConfig,
    pub bootstrap: BootstrapSection,
    pub abuse: AbuseSection,
    pub annotation: AnnotationConfig,
    pub score: ScoreSection,
    /// Worker threads; `Some(1)` gives bit-reproducible runs.
    pub threads: Option<usize>,
}

/// Path overrides read from the environment, keyed by `paths` field.
pub const PATH_ENV_VARS: [(&str, &str); 4] = [
    ("corpus", "ABINTENT_CORPUS"),
    ("parses", "ABINTENT_PARSES"),
    ("embeddings", "ABINTENT_EMBEDDINGS"),
    ("output", "ABINTENT_OUTPUT"),
];

fn bad(msg: String) -> Error {
    Error::Config(msg)
}

fn check_unit(name: &str, v: f64) -> Result<()> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(bad(format!("{name} must lie in [0, 1], got {v}")))
    }
}

fn section<T>(name: &str, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::Config(m) => bad(format!("{name}: {m}")),
        other => other,
    })
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        section("ngram", self.ngram.index().validate())?;
        let p = self.ngram.percentile;
        if !(50.0..=100.0).contains(&p) {
            return Err(bad(format!("ngram.percentile must lie in [50, 100], got {p}")));
        }
        if let Some(s) = self.ngram.smoothing {
            if !(s.is_finite() && s >= 0.0) {
                return Err(bad(format!("ngram.smoothing must be finite and non-negative, got {s}")));
            }
        }
        section("cone", self.cone.cone().validate())?;
        section("model", self.model.validate())?;
        section("abuse.model", self.abuse.model.validate())?;
        let b = &self.bootstrap;
        if b.rounds == 0 {
            return Err(bad("bootstrap.rounds must be positive".into()));
        }
        for (name, v) in [
            ("bootstrap.amplify_threshold", b.amplify_threshold),
            ("bootstrap.hard_threshold", b.hard_threshold),
        ] {
            if !(v > 0.5 && v <= 1.0) {
                return Err(bad(format!("{name} must lie in (0.5, 1], got {v}")));
            }
        }
        check_unit("bootstrap.amplify_factor", b.amplify_factor)?;
        let a = &self.annotation;
        if a.tranche_size == 0 || a.quota_tranches == 0 || a.votes_to_resolve == 0 {
            return Err(bad("annotation sizes must be positive".into()));
        }
        if a.max_votes < 2 * a.votes_to_resolve - 1 {
            return Err(bad(format!(
                "annotation.max_votes {} cannot guarantee a first-to-{} resolution",
                a.max_votes, a.votes_to_resolve
            )));
        }
        check_unit("annotation.band_low", a.band_low)?;
        check_unit("annotation.band_high", a.band_high)?;
        if a.band_low > a.band_high {
            return Err(bad("annotation.band_low exceeds band_high".into()));
        }
        if self.score.window == 0 {
            return Err(bad("score.window must be positive".into()));
        }
        if self.threads == Some(0) {
            return Err(bad("threads must be positive".into()));
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let c: RunConfig = toml::from_str(text).map_err(|e| bad(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| bad(e.to_string()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_toml()?)?;
        Ok(())
    }

    /// Replaces `paths` entries with values from `lookup` (normally the
    /// process environment); see [`PATH_ENV_VARS`].
    pub fn apply_path_overrides(&mut self, lookup: impl Fn(&str) -> Option<String>) {
        for (field, var) in PATH_ENV_VARS {
            let Some(v) = lookup(var) else { continue };
            let v = PathBuf::from(v);
            match field {
                "corpus" => self.paths.corpus = Some(v),
                "parses" => self.paths.parses = Some(v),
                "embeddings" => self.paths.embeddings = Some(v),
                _ => self.paths.output = v,
            }
        }
    }

    /// Makes relative paths relative to `base` (the config file's directory).
    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        let paths = &mut self.paths;
        for p in [&mut paths.corpus, &mut paths.parses, &mut paths.embeddings].into_iter().flatten() {
            fix(p);
        }
        fix(&mut paths.output);
        for s in &mut self.abuse.sources {
            fix(&mut s.path);
        }
    }
}

/// Reads and validates a config file; missing keys take their defaults and
/// unknown keys are rejected.
pub fn load_config(path: impl AsRef<Path>) -> Result<RunConfig> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    RunConfig::from_toml(&text).map_err(|e| match e {
        Error::Config(m) => bad(format!("{}: {m}", path.display())),
        other => other,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let c = RunConfig::from_toml("").unwrap();
        assert_eq!(c, RunConfig::default());
        assert_eq!((c.ngram.n_min, c.ngram.n_max, c.ngram.cap), (3, 6, 500_000));
        assert_eq!(c.ngram.percentile, 99.9);
        assert_eq!(c.cone.multiplier, 2.0);
        assert_eq!(c.bootstrap.rounds, 6);
        assert_eq!(c.bootstrap.amplify_factor, 0.10);
        assert_eq!(c.cone.seeds.len(), 7);
    }

    #[test]
    fn invalid_values_are_named() {
        let e = RunConfig::from_toml("[ngram]\npercentile = 101.0\n").unwrap_err();
        assert!(e.to_string().contains("ngram.percentile"), "{e}");
        let e = RunConfig::from_toml("[model]\nattention_dim = 10\n").unwrap_err();
        assert!(e.to_string().contains("model:"), "{e}");
        assert!(RunConfig::from_toml("[bootstrap]\namplify_threshold = 0.5\n").is_err());
        assert!(RunConfig::from_toml("threads = 0\n").is_err());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::from_toml("colour = 1\n").is_err());
        assert!(RunConfig::from_toml("[ngram]\nn_mid = 4\n").is_err());
    }

    #[test]
    fn save_and_load_round_trip() {
        let mut c = RunConfig::default();
        c.ngram.smoothing = Some(0.0);
        c.paths.corpus = Some("corpus.jsonl".into());
        c.model.max_tokens = 12;
        c.threads = Some(1);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("run.toml");
        c.save(&p).unwrap();
        assert_eq!(load_config(&p).unwrap(), c);
    }

    #[test]
    fn env_overrides_touch_paths_only() {
        let mut c = RunConfig::default();
        c.apply_path_overrides(|k| (k == "ABINTENT_EMBEDDINGS").then(|| "vec.txt".to_string()));
        assert_eq!(c.paths.embeddings, Some(PathBuf::from("vec.txt")));
        assert_eq!(c.paths.corpus, None);
    }
}
