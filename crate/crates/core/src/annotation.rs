//! Human validation: sampling pool, tranches with a qualifying example,
//! first-to-3 vote resolution, quotas, agreement reporting, and an HTTP API.
//!
//! Every state change is an [`Event`]; the service appends events to a log
//! before applying them, and a restarted service rebuilds its state by
//! replaying the log.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use axum::extract::{Path as UrlPath, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{AnnotationError, Error, Result};

pub const API_VERSION: &str = "v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnnotationConfig {
    pub tranche_size: usize,
    pub quota_tranches: usize,
    pub votes_to_resolve: usize,
    pub max_votes: usize,
    pub pool_size: usize,
    /// Scores in `(band_low, band_high)` are never sampled.
    pub band_low: f64,
    pub band_high: f64,
    pub seed: u64,
}

impl Default for AnnotationConfig {
    fn default() -> Self {
        AnnotationConfig {
            tranche_size: 5,
            quota_tranches: 6,
            votes_to_resolve: 3,
            max_votes: 5,
            pool_size: 5000,
            band_low: 0.4,
            band_high: 0.6,
            seed: 29,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolItem {
    pub segment_id: String,
    pub text: String,
    pub intent: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub abuse: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Qualifier {
    pub id: String,
    pub text: String,
    pub intentful: bool,
    #[serde(default)]
    pub abusive: Option<bool>,
}

impl Qualifier {
    fn passed_by(&self, a: &Answer) -> bool {
        a.intentful == self.intentful
            && match self.abusive {
                None => true,
                Some(x) => x == a.abusive,
            }
    }
}

/// The shipped bank of constructed examples with known labels.
pub fn default_qualifiers() -> Vec<Qualifier> {
    crate::io::parse_jsonl(include_str!("../data/qualifiers.jsonl").as_bytes(), "qualifiers.jsonl").expect("bundled qualifier bank parses")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolBuild {
    pub items: Vec<PoolItem>,
    pub eligible: usize,
    pub requested: usize,
    pub seed: u64,
}

/// Uniform sample without replacement of candidates whose intent score lies
/// in `[0, band_low]` or `[band_high, 1]`.
pub fn build_pool(candidates: &[PoolItem], size: usize, band_low: f64, band_high: f64, seed: u64) -> PoolBuild {
    let mut eligible: Vec<PoolItem> = candidates
        .iter()
        .filter(|c| c.intent <= band_low || c.intent >= band_high)
        .cloned()
        .collect();
    eligible.sort_by(|a, b| a.segment_id.cmp(&b.segment_id));
    let n = eligible.len();
    eligible.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    if n < size {
        log::warn!("only {n} candidates fall in the sampling bands; requested {size}");
    }
    eligible.truncate(size);
    PoolBuild {
        items: eligible,
        eligible: n,
        requested: size,
        seed,
    }
}

/// Side that first reaches `k` votes, scanning in order.
pub fn first_to(votes: &[bool], k: usize) -> Option<bool> {
    let (mut yes, mut no) = (0, 0);
    for &v in votes {
        if v {
            yes += 1;
        } else {
            no += 1;
        }
        if yes == k {
            return Some(true);
        }
        if no == k {
            return Some(false);
        }
    }
    None
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Answer {
    pub intentful: bool,
    pub abusive: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrancheStatus {
    Open,
    Accepted,
    Discarded,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tranche {
    pub tranche_id: String,
    pub volunteer_id: String,
    pub segment_ids: Vec<String>,
    pub qualifier_id: String,
    /// Where the qualifier sits among the `segment_ids.len() + 1` items.
    pub qualifier_position: usize,
    pub status: TrancheStatus,
}

impl Tranche {
    pub fn item_count(&self) -> usize {
        self.segment_ids.len() + 1
    }

    /// Segment id at item position `pos`, or `None` for the qualifier.
    pub fn segment_at(&self, pos: usize) -> Option<&str> {
        match pos.cmp(&self.qualifier_position) {
            std::cmp::Ordering::Less => Some(&self.segment_ids[pos]),
            std::cmp::Ordering::Equal => None,
            std::cmp::Ordering::Greater => Some(&self.segment_ids[pos - 1]),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct VoteState {
    pub segment_id: String,
    pub volunteers: Vec<String>,
    pub intent_votes: Vec<bool>,
    pub abuse_votes: Vec<bool>,
    pub resolved: Option<bool>,
    pub resolved_abuse: Option<bool>,
}

impl VoteState {
    pub fn vote_ratio(&self) -> Option<f64> {
        ratio(&self.intent_votes)
    }
}

fn ratio(votes: &[bool]) -> Option<f64> {
    if votes.is_empty() {
        None
    } else {
        Some(votes.iter().filter(|&&v| v).count() as f64 / votes.len() as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Event {
    PoolBuilt {
        seed: u64,
        items: Vec<PoolItem>,
        qualifiers: Vec<Qualifier>,
    },
    TrancheIssued {
        tranche: Tranche,
    },
    TrancheSubmitted {
        tranche_id: String,
        answers: Vec<Answer>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubmitOutcome {
    pub tranche_id: String,
    pub status: TrancheStatus,
    pub recorded: Vec<String>,
    /// Segments that were resolved by others while this tranche was open.
    pub refused: Vec<String>,
    pub newly_resolved: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
struct Volunteer {
    tranches: Vec<usize>,
    seen: HashSet<String>,
}

struct EventLog {
    path: PathBuf,
    file: File,
}

impl EventLog {
    fn append(&mut self, e: &Event) -> Result<()> {
        let mut line = serde_json::to_vec(e)?;
        line.push(b'\n');
        self.file.write_all(&line)?;
        self.file.flush()?;
        Ok(())
    }
}

pub struct AnnotationService {
    config: AnnotationConfig,
    pool_seed: u64,
    items: BTreeMap<String, PoolItem>,
    pool_order: Vec<String>,
    active: HashSet<String>,
    qualifiers: Vec<Qualifier>,
    votes: HashMap<String, VoteState>,
    outstanding: HashMap<String, usize>,
    tranches: Vec<Tranche>,
    tranche_index: HashMap<String, usize>,
    volunteers: HashMap<String, Volunteer>,
    log: Option<EventLog>,
}

impl AnnotationService {
    /// In-memory service over an already-built pool.
    pub fn new(config: AnnotationConfig, pool: PoolBuild, qualifiers: Vec<Qualifier>) -> Result<Self> {
        if qualifiers.is_empty() {
            return Err(AnnotationError::NoQualifiers.into());
        }
        let mut s = Self::empty(config);
        s.apply(&Event::PoolBuilt {
            seed: pool.seed,
            items: pool.items,
            qualifiers,
        });
        Ok(s)
    }

    fn empty(config: AnnotationConfig) -> Self {
        AnnotationService {
            config,
            pool_seed: 0,
            items: BTreeMap::new(),
            pool_order: vec![],
            active: HashSet::new(),
            qualifiers: vec![],
            votes: HashMap::new(),
            outstanding: HashMap::new(),
            tranches: vec![],
            tranche_index: HashMap::new(),
            volunteers: HashMap::new(),
            log: None,
        }
    }

    /// Opens a log-backed service: replays `log_path` if it has events,
    /// otherwise starts a new log with the given pool.
    pub fn open(
        config: AnnotationConfig,
        log_path: impl AsRef<Path>,
        pool: impl FnOnce() -> Result<(PoolBuild, Vec<Qualifier>)>,
    ) -> Result<Self> {
        let path = log_path.as_ref().to_path_buf();
        let existing = path.exists() && std::fs::metadata(&path)?.len() > 0;
        let mut service = if existing {
            Self::replay(config, &path)?
        } else {
            let (build, qualifiers) = pool()?;
            Self::new(config, build, qualifiers)?
        };
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        let file = OpenOptions::new().create(true).append(true).open(&path)?;
        let mut log = EventLog { path, file };
        if !existing {
            log.append(&service.pool_event())?;
        }
        service.log = Some(log);
        Ok(service)
    }

    /// Rebuilds state from an event log without attaching it for writing.
    pub fn replay(config: AnnotationConfig, path: &Path) -> Result<Self> {
        let origin = path.display().to_string();
        let mut s = Self::empty(config);
        for (i, line) in BufReader::new(File::open(path)?).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let e: Event = serde_json::from_str(&line).map_err(|err| Error::parse(&origin, i + 1, err.to_string()))?;
            s.apply(&e);
        }
        Ok(s)
    }

    pub fn log_path(&self) -> Option<&Path> {
        self.log.as_ref().map(|l| l.path.as_path())
    }

    fn pool_event(&self) -> Event {
        Event::PoolBuilt {
            seed: self.pool_seed,
            items: self.pool_order.iter().map(|id| self.items[id].clone()).collect(),
            qualifiers: self.qualifiers.clone(),
        }
    }

    pub fn qualifier(&self, id: &str) -> Option<&Qualifier> {
        self.qualifiers.iter().find(|q| q.id == id)
    }

    pub fn config(&self) -> &AnnotationConfig {
        &self.config
    }

    fn record(&mut self, e: Event) -> Result<Option<SubmitOutcome>> {
        if let Some(log) = self.log.as_mut() {
            log.append(&e)?;
        }
        Ok(self.apply(&e))
    }

    fn apply(&mut self, e: &Event) -> Option<SubmitOutcome> {
        match e {
            Event::PoolBuilt { seed, items, qualifiers } => {
                self.pool_seed = *seed;
                for it in items {
                    self.pool_order.push(it.segment_id.clone());
                    self.active.insert(it.segment_id.clone());
                    self.items.insert(it.segment_id.clone(), it.clone());
                }
                self.qualifiers = qualifiers.clone();
                None
            }
            Event::TrancheIssued { tranche } => {
                let idx = self.tranches.len();
                for s in &tranche.segment_ids {
                    *self.outstanding.entry(s.clone()).or_default() += 1;
                }
                let v = self.volunteers.entry(tranche.volunteer_id.clone()).or_default();
                v.tranches.push(idx);
                v.seen.extend(tranche.segment_ids.iter().cloned());
                self.tranche_index.insert(tranche.tranche_id.clone(), idx);
                self.tranches.push(tranche.clone());
                None
            }
            Event::TrancheSubmitted { tranche_id, answers } => {
                let idx = *self.tranche_index.get(tranche_id)?;
                let tranche = self.tranches[idx].clone();
                for s in &tranche.segment_ids {
                    if let Some(n) = self.outstanding.get_mut(s) {
                        *n = n.saturating_sub(1);
                    }
                }
                let qualifier = self.qualifiers.iter().find(|q| q.id == tranche.qualifier_id);
                let passed = qualifier.is_some_and(|q| q.passed_by(&answers[tranche.qualifier_position]));
                let mut out = SubmitOutcome {
                    tranche_id: tranche_id.clone(),
                    status: if passed {
                        TrancheStatus::Accepted
                    } else {
                        TrancheStatus::Discarded
                    },
                    recorded: vec![],
                    refused: vec![],
                    newly_resolved: vec![],
                };
                self.tranches[idx].status = out.status;
                if !passed {
                    return Some(out);
                }
                let k = self.config.votes_to_resolve;
                for (pos, a) in answers.iter().enumerate() {
                    let Some(seg) = tranche.segment_at(pos) else { continue };
                    let vs = self.votes.entry(seg.to_string()).or_insert_with(|| VoteState {
                        segment_id: seg.to_string(),
                        ..Default::default()
                    });
                    if vs.resolved.is_some() || vs.intent_votes.len() >= self.config.max_votes {
                        out.refused.push(seg.to_string());
                        continue;
                    }
                    vs.volunteers.push(tranche.volunteer_id.clone());
                    vs.intent_votes.push(a.intentful);
                    vs.abuse_votes.push(a.abusive);
                    out.recorded.push(seg.to_string());
                    if vs.resolved_abuse.is_none() {
                        vs.resolved_abuse = first_to(&vs.abuse_votes, k);
                    }
                    vs.resolved = first_to(&vs.intent_votes, k);
                    if vs.resolved.is_some() {
                        self.active.remove(seg);
                        out.newly_resolved.push(seg.to_string());
                    }
                }
                Some(out)
            }
        }
    }

    fn open_tranche(&self, volunteer: &str) -> Option<&Tranche> {
        let v = self.volunteers.get(volunteer)?;
        v.tranches
            .iter()
            .map(|&i| &self.tranches[i])
            .find(|t| t.status == TrancheStatus::Open)
    }

    /// Segments a volunteer could be given now: unresolved, unseen by them,
    /// and with room left once outstanding assignments are counted.
    pub fn eligible_for(&self, volunteer: &str) -> Vec<&str> {
        let seen = self.volunteers.get(volunteer).map(|v| &v.seen);
        self.pool_order
            .iter()
            .filter(|id| self.active.contains(*id))
            .filter(|id| !seen.is_some_and(|s| s.contains(*id)))
            .filter(|id| {
                let votes = self.votes.get(*id).map_or(0, |v| v.intent_votes.len());
                let pending = self.outstanding.get(*id).copied().unwrap_or(0);
                votes + pending < self.config.max_votes
            })
            .map(|s| s.as_str())
            .collect()
    }

    /// The volunteer's open tranche if there is one, otherwise a new one.
    pub fn next_tranche(&mut self, volunteer: &str) -> Result<Tranche> {
        if let Some(t) = self.open_tranche(volunteer) {
            return Ok(t.clone());
        }
        let issued = self.volunteers.get(volunteer).map_or(0, |v| v.tranches.len());
        if issued >= self.config.quota_tranches {
            return Err(AnnotationError::QuotaReached(volunteer.to_string()).into());
        }
        if self.qualifiers.is_empty() {
            return Err(AnnotationError::NoQualifiers.into());
        }
        let mut eligible: Vec<String> = self.eligible_for(volunteer).into_iter().map(str::to_string).collect();
        let size = self.config.tranche_size;
        if eligible.len() < size {
            return Err(AnnotationError::PoolExhausted(volunteer.to_string()).into());
        }
        let n = self.tranches.len() as u64;
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed ^ n.wrapping_mul(0x9e37_79b9_7f4a_7c15));
        let (picked, _) = eligible.partial_shuffle(&mut rng, size);
        let qualifier = &self.qualifiers[rng.random_range(0..self.qualifiers.len())];
        let tranche = Tranche {
            tranche_id: format!("t{:06}", n + 1),
            volunteer_id: volunteer.to_string(),
            segment_ids: picked.to_vec(),
            qualifier_id: qualifier.id.clone(),
            qualifier_position: rng.random_range(0..=size),
            status: TrancheStatus::Open,
        };
        self.record(Event::TrancheIssued { tranche: tranche.clone() })?;
        Ok(tranche)
    }

    pub fn submit(&mut self, tranche_id: &str, answers: Vec<Answer>) -> Result<SubmitOutcome> {
        let idx = *self
            .tranche_index
            .get(tranche_id)
            .ok_or_else(|| AnnotationError::UnknownTranche(tranche_id.to_string()))?;
        let t = &self.tranches[idx];
        if t.status != TrancheStatus::Open {
            return Err(AnnotationError::DuplicateSubmission(tranche_id.to_string()).into());
        }
        if answers.len() != t.item_count() {
            return Err(AnnotationError::AnswerCount {
                expected: t.item_count(),
                found: answers.len(),
            }
            .into());
        }
        let out = self.record(Event::TrancheSubmitted {
            tranche_id: tranche_id.to_string(),
            answers,
        })?;
        Ok(out.expect("submitted tranche exists"))
    }

    /// Text shown for each item of a tranche, qualifier included.
    pub fn view(&self, t: &Tranche) -> TrancheView {
        let number = self.volunteers[&t.volunteer_id]
            .tranches
            .iter()
            .position(|&i| self.tranches[i].tranche_id == t.tranche_id)
            .map_or(0, |p| p + 1);
        let items = (0..t.item_count())
            .map(|pos| ItemView {
                position: pos,
                text: match t.segment_at(pos) {
                    Some(seg) => self.items[seg].text.clone(),
                    None => self
                        .qualifiers
                        .iter()
                        .find(|q| q.id == t.qualifier_id)
                        .map(|q| q.text.clone())
                        .unwrap_or_default(),
                },
            })
            .collect();
        TrancheView {
            api: API_VERSION.into(),
            tranche_id: t.tranche_id.clone(),
            volunteer_id: t.volunteer_id.clone(),
            tranche_number: number,
            quota: self.config.quota_tranches,
            items,
        }
    }

    pub fn vote_state(&self, segment_id: &str) -> Option<&VoteState> {
        self.votes.get(segment_id)
    }

    pub fn vote_states(&self) -> impl Iterator<Item = &VoteState> {
        self.votes.values()
    }

    pub fn in_pool(&self, segment_id: &str) -> bool {
        self.active.contains(segment_id)
    }

    pub fn pool_size(&self) -> usize {
        self.pool_order.len()
    }

    pub fn tranche(&self, id: &str) -> Option<&Tranche> {
        self.tranche_index.get(id).map(|&i| &self.tranches[i])
    }

    pub fn progress(&self, volunteer: &str) -> VolunteerProgress {
        let mut p = VolunteerProgress {
            volunteer_id: volunteer.to_string(),
            issued: 0,
            accepted: 0,
            discarded: 0,
            open_tranche: None,
            quota: self.config.quota_tranches,
        };
        if let Some(v) = self.volunteers.get(volunteer) {
            for &i in &v.tranches {
                let t = &self.tranches[i];
                p.issued += 1;
                match t.status {
                    TrancheStatus::Accepted => p.accepted += 1,
                    TrancheStatus::Discarded => p.discarded += 1,
                    TrancheStatus::Open => p.open_tranche = Some(t.tranche_id.clone()),
                }
            }
        }
        p
    }

    pub fn report(&self) -> ServiceReport {
        let mut ids: Vec<&String> = self.votes.keys().collect();
        ids.sort();
        let mut intent_rows = Vec::new();
        let mut abuse_rows = Vec::new();
        for id in ids {
            let vs = &self.votes[id];
            let item = &self.items[id];
            intent_rows.push(AgreementRow {
                model: item.intent,
                votes: vs.intent_votes.clone(),
            });
            if let Some(a) = item.abuse {
                abuse_rows.push(AgreementRow {
                    model: a,
                    votes: vs.abuse_votes.clone(),
                });
            }
        }
        let k = self.config.votes_to_resolve;
        let count = |s: TrancheStatus| self.tranches.iter().filter(|t| t.status == s).count();
        ServiceReport {
            api: API_VERSION.into(),
            pool_size: self.pool_size(),
            remaining: self.active.len(),
            resolved: self.votes.values().filter(|v| v.resolved.is_some()).count(),
            tranches_issued: self.tranches.len(),
            accepted: count(TrancheStatus::Accepted),
            discarded: count(TrancheStatus::Discarded),
            open: count(TrancheStatus::Open),
            volunteers: self.volunteers.len(),
            intent: agreement(&intent_rows, k),
            abuse: agreement(&abuse_rows, k),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementRow {
    pub model: f64,
    pub votes: Vec<bool>,
}

/// Rows: model positive/negative; columns: human positive/negative.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub true_positive: usize,
    pub false_positive: usize,
    pub false_negative: usize,
    pub true_negative: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DimensionAgreement {
    pub segments: usize,
    pub binary_agreement: Option<f64>,
    pub weighted_agreement: Option<f64>,
    pub confusion: Confusion,
}

/// Agreement between model scores and resolved human votes. The model side
/// is `round(score)` (0.5 rounds up); binary agreement compares it with the
/// resolved side, weighted agreement is `1 - mean |score - vote ratio|`.
/// Unresolved rows are skipped.
pub fn agreement(rows: &[AgreementRow], votes_to_resolve: usize) -> DimensionAgreement {
    let mut c = Confusion::default();
    let mut agree = 0usize;
    let mut abs_diff = 0.0;
    let mut n = 0usize;
    for r in rows {
        let Some(human) = first_to(&r.votes, votes_to_resolve) else {
            continue;
        };
        let model = r.model >= 0.5;
        n += 1;
        agree += (model == human) as usize;
        abs_diff += (r.model - ratio(&r.votes).unwrap_or(0.0)).abs();
        match (model, human) {
            (true, true) => c.true_positive += 1,
            (true, false) => c.false_positive += 1,
            (false, true) => c.false_negative += 1,
            (false, false) => c.true_negative += 1,
        }
    }
    DimensionAgreement {
        segments: n,
        binary_agreement: (n > 0).then(|| agree as f64 / n as f64),
        weighted_agreement: (n > 0).then(|| 1.0 - abs_diff / n as f64),
        confusion: c,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServiceReport {
    pub api: String,
    pub pool_size: usize,
    pub remaining: usize,
    pub resolved: usize,
    pub tranches_issued: usize,
    pub accepted: usize,
    pub discarded: usize,
    pub open: usize,
    pub volunteers: usize,
    pub intent: DimensionAgreement,
    pub abuse: DimensionAgreement,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemView {
    pub position: usize,
    pub text: String,
}

/// What a volunteer sees; qualifier identity is not revealed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrancheView {
    pub api: String,
    pub tranche_id: String,
    pub volunteer_id: String,
    pub tranche_number: usize,
    pub quota: usize,
    pub items: Vec<ItemView>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VolunteerProgress {
    pub volunteer_id: String,
    pub issued: usize,
    pub accepted: usize,
    pub discarded: usize,
    pub open_tranche: Option<String>,
    pub quota: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IssueRequest {
    pub volunteer_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubmitRequest {
    pub tranche_id: String,
    pub answers: Vec<Answer>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiErrorBody {
    pub error: String,
    pub message: String,
}

pub struct ApiError(Error);

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        ApiError(e)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (status, kind) = match &self.0 {
            Error::Annotation(a) => match a {
                AnnotationError::QuotaReached(_) => (StatusCode::CONFLICT, "quota_reached"),
                AnnotationError::PoolExhausted(_) => (StatusCode::CONFLICT, "pool_exhausted"),
                AnnotationError::UnknownTranche(_) => (StatusCode::NOT_FOUND, "unknown_tranche"),
                AnnotationError::DuplicateSubmission(_) => (StatusCode::CONFLICT, "duplicate_submission"),
                AnnotationError::AnswerCount { .. } => (StatusCode::UNPROCESSABLE_ENTITY, "answer_count"),
                AnnotationError::NoQualifiers => (StatusCode::INTERNAL_SERVER_ERROR, "no_qualifiers"),
            },
            _ => (StatusCode::INTERNAL_SERVER_ERROR, "internal"),
        };
        let body = ApiErrorBody {
            error: kind.into(),
            message: self.0.to_string(),
        };
        (status, Json(body)).into_response()
    }
}

pub type SharedService = Arc<Mutex<AnnotationService>>;

fn lock(s: &SharedService) -> std::sync::MutexGuard<'_, AnnotationService> {
    s.lock().unwrap_or_else(|p| p.into_inner())
}

async fn issue_tranche(State(s): State<SharedService>, Json(req): Json<IssueRequest>) -> std::result::Result<Json<TrancheView>, ApiError> {
    let mut svc = lock(&s);
    let t = svc.next_tranche(&req.volunteer_id)?;
    Ok(Json(svc.view(&t)))
}

async fn submit_tranche(
    State(s): State<SharedService>,
    Json(req): Json<SubmitRequest>,
) -> std::result::Result<Json<SubmitOutcome>, ApiError> {
    Ok(Json(lock(&s).submit(&req.tranche_id, req.answers)?))
}

async fn report(State(s): State<SharedService>) -> Json<ServiceReport> {
    Json(lock(&s).report())
}

async fn progress(State(s): State<SharedService>, UrlPath(id): UrlPath<String>) -> Json<VolunteerProgress> {
    Json(lock(&s).progress(&id))
}

/// `POST /v1/tranches`, `POST /v1/submissions`, `GET /v1/report`,
/// `GET /v1/volunteers/{id}`.
pub fn router(service: SharedService) -> Router {
    Router::new()
        .route("/v1/tranches", post(issue_tranche))
        .route("/v1/submissions", post(submit_tranche))
        .route("/v1/report", get(report))
        .route("/v1/volunteers/{id}", get(progress))
        .with_state(service)
}

/// Serves the API on an already-bound listener until the task is cancelled.
pub async fn serve(service: SharedService, listener: tokio::net::TcpListener) -> Result<()> {
    log::info!("annotation service listening on {}", listener.local_addr()?);
    axum::serve(listener, router(service)).await?;
    Ok(())
}
