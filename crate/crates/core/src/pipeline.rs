//! End-to-end run: seven stages over plain line-delimited artifacts, each
//! content-hashed and skipped on rerun when its inputs are unchanged.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::abuse::{assemble, predict_abuse, train_abuse, AbuseCheckpoint};
use crate::bootstrap::{self, DeepLearner, LabelState, NgramLearner};
use crate::config::{AbuseSection, RunConfig, ScoreSection};
use crate::corpus::{self, RawDocument, Segment};
use crate::embedding::{expand_desire_verbs, load_embeddings, ConeConfig};
use crate::io::{file_sha256, read_jsonl, sha256_hex, write_jsonl};
use crate::ngram::{propose_labels, score_ngrams, select_predictive, top_grams, NgramIndex, NgramLearnerConfig, NgramScore};
use crate::scoring::{document_scores, format_ranked, rank_report, score_segments, DocumentReportLine, RankKey, ScoreRecord};
use crate::seed::{
    label_corpus, read_parses, relabel_retention, validate_parse, verb_vocabulary, DepLabelMap, DesireVerbs, InitialLabel, TemplateMatcher,
};
use crate::sequence::{SegmentSource, SequenceModel, TextEncoder};
use crate::{Error, Result};

pub const MANIFEST_FORMAT: &str = "abintent-run/1";
pub const MANIFEST_FILE: &str = "manifest.json";

pub const STAGES: [&str; 7] = [
    "preprocess",
    "parse-adapter",
    "seed-label",
    "expand-verbs",
    "bootstrap",
    "train-abuse",
    "score",
];

/// Artifact file names inside the output directory.
pub mod files {
    pub const SEGMENTS: &str = "segments.jsonl";
    pub const CLEAN_REPORT: &str = "clean_report.jsonl";
    pub const PARSES: &str = "parses.jsonl";
    pub const SEED_LABELS: &str = "seed_labels.jsonl";
    pub const DESIRE_VERBS: &str = "desire_verbs.txt";
    pub const EXPANDED_LABELS: &str = "expanded_labels.jsonl";
    pub const NGRAM_INDEX: &str = "ngram_index.jsonl";
    pub const LABELS: &str = "labels.jsonl";
    pub const ROUNDS: &str = "rounds.jsonl";
    pub const INTENT_MODEL: &str = "intent_model.json";
    pub const ABUSE_MODEL: &str = "abuse_model.json";
    pub const ABUSE_DATASET: &str = "abuse_dataset.json";
    pub const SCORES: &str = "scores.jsonl";
    pub const DOCUMENTS: &str = "documents.jsonl";
    pub const TOP_SEGMENTS: &str = "top_segments.tsv";
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageStatus {
    Completed,
    /// Inputs and outputs matched the previous run; nothing was recomputed.
    Reused,
    Failed,
    /// Not attempted: an earlier stage failed or the run stopped early.
    Skipped,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Artifact {
    /// Relative to the output directory.
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageEntry {
    pub name: String,
    pub status: StageStatus,
    pub fingerprint: Option<String>,
    pub artifacts: Vec<Artifact>,
    pub summary: Value,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub format: String,
    pub config_sha256: String,
    pub stages: Vec<StageEntry>,
}

impl RunManifest {
    pub fn stage(&self, name: &str) -> Option<&StageEntry> {
        self.stages.iter().find(|s| s.name == name)
    }

    pub fn failed(&self) -> Option<&StageEntry> {
        self.stages.iter().find(|s| s.status == StageStatus::Failed)
    }

    pub fn artifact(&self, file: &str) -> Option<&Artifact> {
        self.stages.iter().flat_map(|s| &s.artifacts).find(|a| a.path == Path::new(file))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let m: RunManifest = serde_json::from_reader(std::io::BufReader::new(std::fs::File::open(path)?))?;
        if m.format != MANIFEST_FORMAT {
            return Err(Error::Artifact {
                path: path.to_path_buf(),
                message: format!("unsupported format `{}`", m.format),
            });
        }
        Ok(m)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(path, text)?;
        Ok(())
    }
}

fn required<'a>(p: &'a Option<PathBuf>, name: &str) -> Result<&'a PathBuf> {
    p.as_ref().ok_or_else(|| Error::Config(format!("paths.{name} is not set")))
}

fn input_hash(path: &Path) -> Result<String> {
    file_sha256(path).map_err(|e| Error::Artifact {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

struct Runner<'a> {
    config: &'a RunConfig,
    out: PathBuf,
    previous: HashMap<String, StageEntry>,
    manifest: RunManifest,
    stop_after: Option<&'a str>,
}

impl Runner<'_> {
    fn path(&self, file: &str) -> PathBuf {
        self.out.join(file)
    }

    fn hash_of(&self, file: &str) -> String {
        self.manifest.artifact(file).map(|a| a.sha256.clone()).unwrap_or_default()
    }

    fn reusable(&self, name: &str, fingerprint: &str) -> Option<StageEntry> {
        let prev = self.previous.get(name)?;
        let ok_status = matches!(prev.status, StageStatus::Completed | StageStatus::Reused);
        if !ok_status || prev.fingerprint.as_deref() != Some(fingerprint) {
            return None;
        }
        for a in &prev.artifacts {
            match file_sha256(self.out.join(&a.path)) {
                Ok(h) if h == a.sha256 => {}
                _ => return None,
            }
        }
        Some(StageEntry {
            status: StageStatus::Reused,
            ..prev.clone()
        })
    }

    /// Runs one stage unless a previous run already produced the same
    /// outputs from the same inputs. `inputs` lists content hashes and the
    /// config slice the stage depends on.
    fn stage(&mut self, name: &str, inputs: Result<Value>, outputs: &[&str], run: impl FnOnce(&Self) -> Result<Value>) -> bool {
        let attempt = inputs.and_then(|inputs| {
            let fingerprint = sha256_hex(serde_json::to_string(&json!({ "stage": name, "inputs": inputs }))?.as_bytes());
            if let Some(entry) = self.reusable(name, &fingerprint) {
                log::info!("{name}: inputs unchanged, reusing artifacts");
                return Ok(entry);
            }
            log::info!("{name}: running");
            let summary = run(self)?;
            let artifacts = outputs
                .iter()
                .map(|f| {
                    Ok(Artifact {
                        path: PathBuf::from(f),
                        sha256: file_sha256(self.path(f))?,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(StageEntry {
                name: name.into(),
                status: StageStatus::Completed,
                fingerprint: Some(fingerprint),
                artifacts,
                summary,
                error: None,
            })
        });
        match attempt {
            Ok(entry) => {
                self.manifest.stages.push(entry);
                self.stop_after != Some(name)
            }
            Err(e) => {
                log::error!("{name} failed: {e}");
                self.manifest.stages.push(StageEntry {
                    name: name.into(),
                    status: StageStatus::Failed,
                    fingerprint: None,
                    artifacts: vec![],
                    summary: Value::Null,
                    error: Some(e.to_string()),
                });
                false
            }
        }
    }
}

/// Runs every stage into `config.paths.output`, reusing stages whose inputs
/// match the manifest already there. A stage failure is recorded in the
/// returned manifest and leaves earlier artifacts in place; `Err` is only
/// returned when the output directory or manifest cannot be written.
pub fn run_pipeline(config: &RunConfig) -> Result<RunManifest> {
    run_pipeline_until(config, None)
}

/// Like [`run_pipeline`], but stops after stage `until`; later stages are
/// recorded as skipped.
pub fn run_pipeline_until(config: &RunConfig, until: Option<&str>) -> Result<RunManifest> {
    config.validate()?;
    if let Some(u) = until {
        if !STAGES.contains(&u) {
            return Err(Error::Config(format!("unknown stage `{u}`; expected one of {}", STAGES.join(", "))));
        }
    }
    let out = config.paths.output.clone();
    std::fs::create_dir_all(&out)?;
    let manifest_path = out.join(MANIFEST_FILE);
    let previous = match RunManifest::load(&manifest_path) {
        Ok(m) => m.stages.into_iter().map(|s| (s.name.clone(), s)).collect(),
        Err(_) => HashMap::new(),
    };
    let mut runner = Runner {
        config,
        out,
        previous,
        manifest: RunManifest {
            format: MANIFEST_FORMAT.into(),
            config_sha256: sha256_hex(config.to_toml()?.as_bytes()),
            stages: vec![],
        },
        stop_after: until,
    };
    let go = |r: &mut Runner| -> Result<()> {
        match config.threads {
            Some(n) => rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::Config(e.to_string()))?
                .install(|| run_stages(r)),
            None => run_stages(r),
        }
        Ok(())
    };
    go(&mut runner)?;
    for name in STAGES.iter().skip(runner.manifest.stages.len()) {
        runner.manifest.stages.push(StageEntry {
            name: name.to_string(),
            status: StageStatus::Skipped,
            fingerprint: None,
            artifacts: vec![],
            summary: Value::Null,
            error: None,
        });
    }
    runner.manifest.save(&manifest_path)?;
    Ok(runner.manifest)
}

// ---- stage operations over explicit files, shared with the command line ----

pub fn preprocess_file(corpus: &Path, segments_out: &Path, report_out: &Path) -> Result<Value> {
    let docs: Vec<RawDocument> = read_jsonl(corpus)?;
    let (clean, segments) = corpus::preprocess(&docs)?;
    write_jsonl(segments_out, &segments)?;
    std::fs::write(report_out, corpus::corpus_report(&clean).to_jsonl())?;
    Ok(json!({ "documents": docs.len(), "segments": segments.len() }))
}

/// Keeps the valid parses of known segments, in segment order.
pub fn align_parses(segments: &Path, parses: &Path, out: &Path) -> Result<Value> {
    let segments: Vec<Segment> = read_jsonl(segments)?;
    let parses = read_parses(parses)?;
    let known: HashSet<&str> = segments.iter().map(|s| s.segment_id.as_str()).collect();
    let unknown = parses.keys().filter(|k| !known.contains(k.as_str())).count();
    let mut aligned = Vec::new();
    let (mut missing, mut invalid) = (0usize, 0usize);
    for s in &segments {
        match parses.get(&s.segment_id) {
            None => missing += 1,
            Some(p) if validate_parse(&p.tokens).is_err() => invalid += 1,
            Some(p) => aligned.push(p),
        }
    }
    write_jsonl(out, aligned.iter().copied())?;
    Ok(json!({ "aligned": aligned.len(), "missing": missing, "invalid": invalid, "unknown": unknown }))
}

pub fn seed_label_file(
    segments: &Path,
    parses: &Path,
    desire: &DesireVerbs,
    dep_labels: &DepLabelMap,
    out: &Path,
) -> Result<(Vec<InitialLabel>, Value)> {
    let segments: Vec<Segment> = read_jsonl(segments)?;
    let parses = read_parses(parses)?;
    let matcher = TemplateMatcher::new(dep_labels.clone());
    let (labels, dist) = label_corpus(&matcher, &segments, &parses, desire);
    write_jsonl(out, &labels)?;
    Ok((labels, serde_json::to_value(&dist)?))
}

/// One word per line; blank lines and `#` comments are ignored.
pub fn read_word_list(path: &Path) -> Result<Vec<String>> {
    Ok(std::fs::read_to_string(path)?
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_string)
        .collect())
}

pub fn write_word_list<'a>(path: &Path, words: impl IntoIterator<Item = &'a String>) -> Result<()> {
    let mut text = String::new();
    for w in words {
        text.push_str(w);
        text.push('\n');
    }
    std::fs::write(path, text)?;
    Ok(())
}

/// Seeds plus the parse-attested verbs inside the seed cone; with no parses
/// every table word is a candidate.
pub fn expand_verbs_file(embeddings: &Path, parses: Option<&Path>, cone: &ConeConfig, out: &Path) -> Result<BTreeSet<String>> {
    let table = load_embeddings(embeddings)?;
    let verbs = match parses {
        Some(p) => {
            let vocab = verb_vocabulary(read_parses(p)?.values());
            expand_desire_verbs(cone, &table, |w| vocab.contains(w))?
        }
        None => expand_desire_verbs(cone, &table, |_| true)?,
    };
    write_word_list(out, &verbs)?;
    Ok(verbs)
}

pub fn load_encoder(embeddings: &Path, max_tokens: usize, embedding_dim: usize) -> Result<TextEncoder> {
    let table = load_embeddings(embeddings)?;
    if table.dimension() != embedding_dim {
        return Err(Error::Config(format!(
            "embedding table has dimension {}, model expects {embedding_dim}",
            table.dimension()
        )));
    }
    Ok(TextEncoder::new(Arc::new(table), max_tokens))
}

#[derive(Debug, Clone)]
pub struct BootstrapPaths {
    pub index: PathBuf,
    pub labels: PathBuf,
    pub rounds: PathBuf,
    pub model: PathBuf,
}

impl BootstrapPaths {
    pub fn in_dir(dir: &Path) -> Self {
        BootstrapPaths {
            index: dir.join(files::NGRAM_INDEX),
            labels: dir.join(files::LABELS),
            rounds: dir.join(files::ROUNDS),
            model: dir.join(files::INTENT_MODEL),
        }
    }
}

pub fn bootstrap_files(
    segments: &Path,
    initial: &[InitialLabel],
    embeddings: &Path,
    config: &RunConfig,
    out: &BootstrapPaths,
) -> Result<Value> {
    let segments: Vec<Segment> = read_jsonl(segments)?;
    let by_id: HashMap<&str, &InitialLabel> = initial.iter().map(|l| (l.segment_id.as_str(), l)).collect();
    let ordered = segments
        .iter()
        .map(|s| {
            by_id
                .get(s.segment_id.as_str())
                .map(|l| (*l).clone())
                .ok_or_else(|| Error::Config(format!("no initial label for segment `{}`", s.segment_id)))
        })
        .collect::<Result<Vec<_>>>()?;
    let index = NgramIndex::build(&segments, config.ngram.index())?;
    index.save(&out.index)?;
    let encoder = load_encoder(embeddings, config.model.max_tokens, config.model.embedding_dim)?;
    let source = SegmentSource {
        encoder: &encoder,
        segments: &segments,
    };
    let mut state = LabelState::from_initial(&ordered);
    let mut ngram = NgramLearner {
        index: Arc::new(index),
        config: config.ngram.learner(),
    };
    let mut deep = DeepLearner::new(SequenceModel::new(config.model.clone())?, &source, config.bootstrap.deep());
    let reports = bootstrap::run(&mut state, &mut ngram, &mut deep, config.bootstrap.rounds)?;
    state.save(&out.labels)?;
    write_jsonl(&out.rounds, &reports)?;
    deep.model.save(&out.model)?;
    let rounds: Vec<Value> = reports
        .iter()
        .map(|x| {
            json!({
                "round": x.round,
                "new_locked_pos": x.new_locked_pos,
                "new_locked_neg": x.new_locked_neg,
                "locked_total": x.locked_total,
                "contradictions": x.contradictions,
            })
        })
        .collect();
    Ok(json!({ "rounds": rounds, "locked": state.locked_count(), "segments": state.len() }))
}

/// Trains the abuse model on `abuse.sources`, leaving out documents that
/// appear in `exclude_segments`.
pub fn train_abuse_files(
    abuse: &AbuseSection,
    embeddings: &Path,
    exclude_segments: Option<&Path>,
    model_out: &Path,
    dataset_out: &Path,
) -> Result<Value> {
    if abuse.sources.is_empty() {
        return Err(Error::Config("abuse.sources is empty".into()));
    }
    let exclude: HashSet<String> = match exclude_segments {
        Some(p) => read_jsonl::<Segment>(p)?.into_iter().map(|s| s.doc_id).collect(),
        None => HashSet::new(),
    };
    let dataset = assemble(&abuse.sources, abuse.shuffle_seed, &exclude)?;
    let encoder = load_encoder(embeddings, abuse.model.max_tokens, abuse.model.embedding_dim)?;
    let (model, report) = train_abuse(&dataset, &encoder, abuse.model.clone())?;
    AbuseCheckpoint::new(&model, embeddings.to_path_buf(), Some(dataset.composition.clone())).save(model_out)?;
    let mut text = serde_json::to_string_pretty(&dataset.composition)?;
    text.push('\n');
    std::fs::write(dataset_out, text)?;
    Ok(json!({
        "records": dataset.records.len(),
        "test_accuracy": report.test_accuracy,
        "train_size": report.train_size,
        "test_size": report.test_size,
    }))
}

#[derive(Deserialize)]
struct ValueRecord {
    segment_id: String,
    value: f64,
}

/// Intent values for `segments`, in order, from a label store or a seed
/// label file.
pub fn read_intent(labels: &Path, segments: &[Segment]) -> Result<Vec<f64>> {
    let records: Vec<ValueRecord> = read_jsonl(labels)?;
    let by_id: HashMap<&str, f64> = records.iter().map(|r| (r.segment_id.as_str(), r.value)).collect();
    segments
        .iter()
        .map(|s| {
            by_id.get(s.segment_id.as_str()).copied().ok_or_else(|| Error::Artifact {
                path: labels.to_path_buf(),
                message: format!("no label for segment `{}`", s.segment_id),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbuseScore {
    pub segment_id: String,
    pub abuse: f64,
}

/// Loads an abuse checkpoint with its embedding table, or `embeddings`
/// when given.
pub fn load_abuse_model(model: &Path, embeddings: Option<&Path>) -> Result<(SequenceModel, TextEncoder)> {
    let ck = AbuseCheckpoint::load(model)?;
    let table = embeddings.map_or_else(|| ck.embeddings.clone(), Path::to_path_buf);
    let model = ck.into_model()?;
    let encoder = load_encoder(&table, model.config.max_tokens, model.config.embedding_dim)?;
    Ok((model, encoder))
}

pub fn score_abuse_file(model: &Path, embeddings: Option<&Path>, segments: &Path, out: &Path) -> Result<Value> {
    let segments: Vec<Segment> = read_jsonl(segments)?;
    let (model, encoder) = load_abuse_model(model, embeddings)?;
    let texts: Vec<&str> = segments.iter().map(|s| s.text.as_str()).collect();
    let abuse = predict_abuse(&model, &encoder, &texts)?;
    let rows: Vec<AbuseScore> = segments
        .iter()
        .zip(&abuse)
        .map(|(s, &a)| AbuseScore {
            segment_id: s.segment_id.clone(),
            abuse: a,
        })
        .collect();
    write_jsonl(out, &rows)?;
    let mean = if abuse.is_empty() {
        0.0
    } else {
        abuse.iter().sum::<f64>() / abuse.len() as f64
    };
    Ok(json!({ "segments": rows.len(), "mean_abuse": mean }))
}

/// Writes segment scores, document scores and the ranked top segments into
/// `out_dir`.
pub fn score_files(
    segments: &Path,
    intent_labels: &Path,
    abuse_model: &Path,
    embeddings: Option<&Path>,
    score: &ScoreSection,
    out_dir: &Path,
) -> Result<Value> {
    let segments: Vec<Segment> = read_jsonl(segments)?;
    let intent = read_intent(intent_labels, &segments)?;
    let (model, encoder) = load_abuse_model(abuse_model, embeddings)?;
    let texts: Vec<&str> = segments.iter().map(|s| s.text.as_str()).collect();
    let abuse = predict_abuse(&model, &encoder, &texts)?;
    let records = score_segments(&segments, &abuse, &intent)?;
    let docs = document_scores(&segments, &records, score.window)?;
    std::fs::create_dir_all(out_dir)?;
    write_jsonl(
        out_dir.join(files::SCORES),
        records
            .iter()
            .map(|x| ScoreRecord { text: None, ..x.clone() })
            .collect::<Vec<_>>()
            .iter(),
    )?;
    let lines: Vec<DocumentReportLine> = docs.iter().map(DocumentReportLine::from).collect();
    write_jsonl(out_dir.join(files::DOCUMENTS), &lines)?;
    let top = rank_report(&records, RankKey::Product, score.top);
    std::fs::write(out_dir.join(files::TOP_SEGMENTS), format_ranked(&top))?;
    let top_json: Vec<Value> = top
        .iter()
        .take(10)
        .map(|x| json!({ "segment_id": x.segment_id, "abuse": x.abuse, "intent": x.intent, "product": x.product }))
        .collect();
    Ok(json!({ "segments": records.len(), "documents": docs.len(), "top": top_json }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProposalRecord {
    pub segment_id: String,
    pub value: f64,
    pub confidence: f64,
}

/// Scores an index against a label file and writes the n-gram learner's
/// proposals. Returns the summary and the `top` highest-rate grams.
pub fn ngram_score_file(
    index: &Path,
    labels: &Path,
    config: &NgramLearnerConfig,
    out: &Path,
    top: usize,
) -> Result<(Value, Vec<NgramScore>)> {
    let index = NgramIndex::load(index)?;
    let records: Vec<ValueRecord> = read_jsonl(labels)?;
    let by_id: HashMap<&str, f64> = records.iter().map(|r| (r.segment_id.as_str(), r.value)).collect();
    let values = index
        .segment_ids
        .iter()
        .map(|id| {
            by_id.get(id.as_str()).copied().ok_or_else(|| Error::Artifact {
                path: labels.to_path_buf(),
                message: format!("no label for segment `{id}`"),
            })
        })
        .collect::<Result<Vec<f64>>>()?;
    let mut scores = score_ngrams(&index, &values, config.smoothing)?;
    let selection = select_predictive(&mut scores, config.percentile)?;
    let proposals = propose_labels(&index, &scores, &selection);
    let rows: Vec<ProposalRecord> = proposals
        .iter()
        .map(|p| ProposalRecord {
            segment_id: index.segment_ids[p.segment].clone(),
            value: p.value,
            confidence: p.confidence,
        })
        .collect();
    write_jsonl(out, &rows)?;
    let best: Vec<NgramScore> = top_grams(&scores, top).into_iter().cloned().collect();
    let summary = json!({
        "grams": scores.len(),
        "intentful": selection.intentful.len(),
        "non_intentful": selection.non_intentful.len(),
        "proposals": rows.len(),
        "degenerate": selection.degenerate,
    });
    Ok((summary, best))
}

fn run_stages(r: &mut Runner) {
    let c = r.config;

    let inputs = required(&c.paths.corpus, "corpus").and_then(|p| Ok(json!({ "corpus": input_hash(p)? })));
    let ok = r.stage("preprocess", inputs, &[files::SEGMENTS, files::CLEAN_REPORT], |r| {
        preprocess_file(
            required(&c.paths.corpus, "corpus")?,
            &r.path(files::SEGMENTS),
            &r.path(files::CLEAN_REPORT),
        )
    });
    if !ok {
        return;
    }

    let inputs =
        required(&c.paths.parses, "parses").and_then(|p| Ok(json!({ "parses": input_hash(p)?, "segments": r.hash_of(files::SEGMENTS) })));
    let ok = r.stage("parse-adapter", inputs, &[files::PARSES], |r| {
        align_parses(
            &r.path(files::SEGMENTS),
            required(&c.paths.parses, "parses")?,
            &r.path(files::PARSES),
        )
    });
    if !ok {
        return;
    }

    let inputs = Ok(json!({
        "segments": r.hash_of(files::SEGMENTS),
        "parses": r.hash_of(files::PARSES),
        "seeds": c.cone.seeds,
        "dep_labels": c.dep_labels,
    }));
    let ok = r.stage("seed-label", inputs, &[files::SEED_LABELS], |r| {
        let desire = DesireVerbs::from_words(c.cone.seeds.iter().cloned());
        let (_, dist) = seed_label_file(
            &r.path(files::SEGMENTS),
            &r.path(files::PARSES),
            &desire,
            &c.dep_labels,
            &r.path(files::SEED_LABELS),
        )?;
        Ok(dist)
    });
    if !ok {
        return;
    }

    let inputs = required(&c.paths.embeddings, "embeddings").and_then(|p| {
        Ok(json!({
            "embeddings": input_hash(p)?,
            "segments": r.hash_of(files::SEGMENTS),
            "parses": r.hash_of(files::PARSES),
            "seed_labels": r.hash_of(files::SEED_LABELS),
            "cone": c.cone,
            "dep_labels": c.dep_labels,
        }))
    });
    let ok = r.stage("expand-verbs", inputs, &[files::DESIRE_VERBS, files::EXPANDED_LABELS], |r| {
        let verbs = expand_verbs_file(
            required(&c.paths.embeddings, "embeddings")?,
            Some(&r.path(files::PARSES)),
            &c.cone.cone(),
            &r.path(files::DESIRE_VERBS),
        )?;
        let (labels, dist) = seed_label_file(
            &r.path(files::SEGMENTS),
            &r.path(files::PARSES),
            &DesireVerbs::from_words(verbs.iter().cloned()),
            &c.dep_labels,
            &r.path(files::EXPANDED_LABELS),
        )?;
        let seed: Vec<InitialLabel> = read_jsonl(r.path(files::SEED_LABELS))?;
        let retention = relabel_retention(&seed, &labels)?;
        Ok(json!({ "verbs": verbs.len(), "retention": retention, "distribution": dist }))
    });
    if !ok {
        return;
    }

    let inputs = required(&c.paths.embeddings, "embeddings").and_then(|p| {
        Ok(json!({
            "embeddings": input_hash(p)?,
            "segments": r.hash_of(files::SEGMENTS),
            "labels": r.hash_of(files::EXPANDED_LABELS),
            "ngram": c.ngram,
            "model": c.model,
            "bootstrap": c.bootstrap,
        }))
    });
    let ok = r.stage(
        "bootstrap",
        inputs,
        &[files::NGRAM_INDEX, files::LABELS, files::ROUNDS, files::INTENT_MODEL],
        |r| {
            let initial: Vec<InitialLabel> = read_jsonl(r.path(files::EXPANDED_LABELS))?;
            bootstrap_files(
                &r.path(files::SEGMENTS),
                &initial,
                required(&c.paths.embeddings, "embeddings")?,
                c,
                &BootstrapPaths::in_dir(&r.out),
            )
        },
    );
    if !ok {
        return;
    }

    let inputs = (|| {
        let mut sources = Vec::new();
        for s in &c.abuse.sources {
            sources.push(input_hash(&s.path)?);
        }
        Ok(json!({
            "sources": sources,
            "embeddings": input_hash(required(&c.paths.embeddings, "embeddings")?)?,
            "segments": r.hash_of(files::SEGMENTS),
            "abuse": c.abuse,
        }))
    })();
    let ok = r.stage("train-abuse", inputs, &[files::ABUSE_MODEL, files::ABUSE_DATASET], |r| {
        train_abuse_files(
            &c.abuse,
            required(&c.paths.embeddings, "embeddings")?,
            Some(&r.path(files::SEGMENTS)),
            &r.path(files::ABUSE_MODEL),
            &r.path(files::ABUSE_DATASET),
        )
    });
    if !ok {
        return;
    }

    let inputs = Ok(json!({
        "segments": r.hash_of(files::SEGMENTS),
        "labels": r.hash_of(files::LABELS),
        "abuse_model": r.hash_of(files::ABUSE_MODEL),
        "score": c.score,
    }));
    r.stage("score", inputs, &[files::SCORES, files::DOCUMENTS, files::TOP_SEGMENTS], |r| {
        score_files(
            &r.path(files::SEGMENTS),
            &r.path(files::LABELS),
            &r.path(files::ABUSE_MODEL),
            Some(required(&c.paths.embeddings, "embeddings")?),
            &c.score,
            &r.out,
        )
    });
}
