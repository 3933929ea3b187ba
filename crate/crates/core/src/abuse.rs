//! Labelled abusive-language sources, ensemble assembly and the supervised
//! abuse classifier.

use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::corpus::clean_text;
use crate::sequence::{train, Checkpoint, ModelConfig, SequenceModel, TextEncoder, TextSource, TrainReport};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceFormat {
    Csv,
    Jsonl,
}

/// Where a labelled source lives and which columns hold text and labels.
/// With several label fields, a record is abusive if any of them is set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceSpec {
    pub name: String,
    pub path: PathBuf,
    #[serde(default)]
    pub format: Option<SourceFormat>,
    pub text_field: String,
    pub label_fields: Vec<String>,
    #[serde(default)]
    pub id_field: Option<String>,
    #[serde(default)]
    pub markup: bool,
}

impl SourceSpec {
    fn format(&self) -> Result<SourceFormat> {
        if let Some(f) = self.format {
            return Ok(f);
        }
        match self.path.extension().and_then(|e| e.to_str()) {
            Some("csv") => Ok(SourceFormat::Csv),
            Some("jsonl") | Some("json") => Ok(SourceFormat::Jsonl),
            _ => Err(Error::Config(format!(
                "cannot infer the format of {}; set `format`",
                self.path.display()
            ))),
        }
    }
}

/// A raw row: text, optional id, and the label cells as found.
#[derive(Debug, Clone, PartialEq)]
pub struct RawRecord {
    pub id: Option<String>,
    pub text: String,
    pub labels: Vec<Option<String>>,
}

/// Reads a truthy/falsy label cell; `None` when empty or unrecognised.
pub fn parse_label(cell: &str) -> Option<bool> {
    let c = cell.trim().to_ascii_lowercase();
    match c.as_str() {
        "" => None,
        "1" | "true" | "yes" | "abusive" | "toxic" | "hate" | "offensive" => Some(true),
        "0" | "false" | "no" | "not" | "none" | "neither" | "normal" | "clean" => Some(false),
        _ => c.parse::<f64>().ok().map(|v| v >= 0.5),
    }
}

/// Any label set means abusive; `None` when no label cell could be read.
pub fn collapse_labels(cells: &[Option<String>]) -> Option<bool> {
    let parsed: Vec<bool> = cells.iter().flatten().filter_map(|c| parse_label(c)).collect();
    if parsed.is_empty() {
        None
    } else {
        Some(parsed.into_iter().any(|b| b))
    }
}

fn value_to_cell(v: &Value) -> Option<String> {
    match v {
        Value::Null => None,
        Value::String(s) => Some(s.clone()),
        Value::Bool(b) => Some(if *b { "1" } else { "0" }.to_string()),
        other => Some(other.to_string()),
    }
}

pub fn read_source(spec: &SourceSpec) -> Result<Vec<RawRecord>> {
    let origin = spec.path.display().to_string();
    match spec.format()? {
        SourceFormat::Csv => {
            let mut rdr = csv::Reader::from_path(&spec.path).map_err(|e| Error::parse(&origin, 0, e.to_string()))?;
            let headers = rdr.headers().map_err(|e| Error::parse(&origin, 1, e.to_string()))?.clone();
            let col = |name: &str| {
                headers
                    .iter()
                    .position(|h| h == name)
                    .ok_or_else(|| Error::parse(&origin, 1, format!("missing column `{name}`")))
            };
            let text_col = col(&spec.text_field)?;
            let label_cols = spec.label_fields.iter().map(|f| col(f)).collect::<Result<Vec<_>>>()?;
            let id_col = spec.id_field.as_deref().map(col).transpose()?;
            let mut out = Vec::new();
            for (i, row) in rdr.records().enumerate() {
                let row = row.map_err(|e| Error::parse(&origin, i + 2, e.to_string()))?;
                out.push(RawRecord {
                    id: id_col.and_then(|c| row.get(c)).map(str::to_string),
                    text: row.get(text_col).unwrap_or_default().to_string(),
                    labels: label_cols.iter().map(|&c| row.get(c).map(str::to_string)).collect(),
                });
            }
            Ok(out)
        }
        SourceFormat::Jsonl => {
            let rows: Vec<serde_json::Map<String, Value>> = crate::io::read_jsonl(&spec.path)?;
            Ok(rows
                .into_iter()
                .map(|row| RawRecord {
                    id: spec.id_field.as_ref().and_then(|f| row.get(f)).and_then(value_to_cell),
                    text: row.get(&spec.text_field).and_then(value_to_cell).unwrap_or_default(),
                    labels: spec.label_fields.iter().map(|f| row.get(f).and_then(value_to_cell)).collect(),
                })
                .collect())
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct AbuseRecord {
    pub source: String,
    pub text: String,
    pub abusive: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceComposition {
    pub name: String,
    pub size: usize,
    pub abusive: usize,
    pub rejected_unlabelled: usize,
    pub dropped_overlap: usize,
}

impl SourceComposition {
    pub fn abusive_fraction(&self) -> f64 {
        if self.size == 0 {
            0.0
        } else {
            self.abusive as f64 / self.size as f64
        }
    }
}

/// Per-source sizes and abusive fractions plus the shuffle seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompositionReport {
    pub sources: Vec<SourceComposition>,
    pub size: usize,
    pub abusive: usize,
    pub shuffle_seed: u64,
}

impl CompositionReport {
    pub fn abusive_fraction(&self) -> f64 {
        if self.size == 0 {
            0.0
        } else {
            self.abusive as f64 / self.size as f64
        }
    }
}

impl fmt::Display for CompositionReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<24} {:>10} {:>9}", "source", "size", "abusive")?;
        for s in &self.sources {
            writeln!(f, "{:<24} {:>10} {:>8.1}%", s.name, s.size, 100.0 * s.abusive_fraction())?;
        }
        writeln!(f, "{:<24} {:>10} {:>8.1}%", "ensemble", self.size, 100.0 * self.abusive_fraction())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbuseDataset {
    pub records: Vec<AbuseRecord>,
    pub composition: CompositionReport,
}

impl AbuseDataset {
    pub fn texts(&self) -> Vec<&str> {
        self.records.iter().map(|r| r.text.as_str()).collect()
    }

    pub fn labels(&self) -> Vec<f64> {
        self.records.iter().map(|r| if r.abusive { 1.0 } else { 0.0 }).collect()
    }
}

/// Builds the ensemble from already-read sources: cleans and lowercases
/// text, rejects unlabelled rows, drops rows whose id is in `exclude_ids`,
/// and shuffles with `seed`.
pub fn assemble_records(sources: Vec<(String, bool, Vec<RawRecord>)>, seed: u64, exclude_ids: &HashSet<String>) -> AbuseDataset {
    let mut records = Vec::new();
    let mut comps = Vec::new();
    for (name, markup, raw) in sources {
        let mut comp = SourceComposition {
            name: name.clone(),
            size: 0,
            abusive: 0,
            rejected_unlabelled: 0,
            dropped_overlap: 0,
        };
        let cleaned: Vec<(Option<bool>, bool, String)> = raw
            .par_iter()
            .map(|r| {
                let overlap = r.id.as_ref().is_some_and(|id| exclude_ids.contains(id));
                (collapse_labels(&r.labels), overlap, clean_text(&r.text, markup).to_lowercase())
            })
            .collect();
        for (label, overlap, text) in cleaned {
            match (label, overlap) {
                (_, true) => comp.dropped_overlap += 1,
                (None, _) => comp.rejected_unlabelled += 1,
                (Some(abusive), _) => {
                    comp.size += 1;
                    comp.abusive += abusive as usize;
                    records.push(AbuseRecord {
                        source: name.clone(),
                        text,
                        abusive,
                    });
                }
            }
        }
        if comp.rejected_unlabelled > 0 {
            log::warn!("{name}: rejected {} unlabelled records", comp.rejected_unlabelled);
        }
        comps.push(comp);
    }
    records.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let composition = CompositionReport {
        size: comps.iter().map(|c| c.size).sum(),
        abusive: comps.iter().map(|c| c.abusive).sum(),
        sources: comps,
        shuffle_seed: seed,
    };
    AbuseDataset { records, composition }
}

pub fn assemble(specs: &[SourceSpec], seed: u64, exclude_ids: &HashSet<String>) -> Result<AbuseDataset> {
    let sources = specs
        .iter()
        .map(|s| Ok((s.name.clone(), s.markup, read_source(s)?)))
        .collect::<Result<Vec<_>>>()?;
    Ok(assemble_records(sources, seed, exclude_ids))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbuseTrainReport {
    pub train: TrainReport,
    pub test_accuracy: Option<f64>,
    pub train_size: usize,
    pub test_size: usize,
}

/// Trains a fresh model on hard labels; the held-out share is the test split.
pub fn train_abuse(dataset: &AbuseDataset, encoder: &TextEncoder, config: ModelConfig) -> Result<(SequenceModel, AbuseTrainReport)> {
    let mut model = SequenceModel::new(config)?;
    let texts = dataset.texts();
    let source = TextSource { encoder, texts: &texts };
    let report = train(&mut model, &source, &dataset.labels())?;
    let test_accuracy = report.history.get(report.best_epoch.saturating_sub(1)).and_then(|r| r.val_accuracy);
    Ok((
        model,
        AbuseTrainReport {
            test_accuracy,
            train_size: report.train_size,
            test_size: report.val_size,
            train: report,
        },
    ))
}

pub fn predict_abuse<S: AsRef<str> + Sync>(model: &SequenceModel, encoder: &TextEncoder, texts: &[S]) -> Result<Vec<f64>> {
    model.predict(&TextSource { encoder, texts })
}

pub const ABUSE_CHECKPOINT_FORMAT: &str = "abintent-abuse-model/1";

/// Abuse model checkpoint: the network plus the embeddings it was trained with.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AbuseCheckpoint {
    pub format: String,
    pub embeddings: PathBuf,
    pub composition: Option<CompositionReport>,
    pub model: Checkpoint,
}

impl AbuseCheckpoint {
    pub fn new(model: &SequenceModel, embeddings: PathBuf, composition: Option<CompositionReport>) -> Self {
        AbuseCheckpoint {
            format: ABUSE_CHECKPOINT_FORMAT.into(),
            embeddings,
            composition,
            model: model.checkpoint(),
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        serde_json::to_writer(std::io::BufWriter::new(std::fs::File::create(path)?), self)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let ck: AbuseCheckpoint = serde_json::from_reader(std::io::BufReader::new(std::fs::File::open(path)?))?;
        if ck.format != ABUSE_CHECKPOINT_FORMAT {
            return Err(Error::Artifact {
                path: path.to_path_buf(),
                message: format!("unsupported format `{}`", ck.format),
            });
        }
        Ok(ck)
    }

    pub fn into_model(self) -> Result<SequenceModel> {
        SequenceModel::from_checkpoint(self.model)
    }
}
