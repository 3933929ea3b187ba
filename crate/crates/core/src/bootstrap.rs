//! Co-training rounds: two learners propose hard labels over a shared label
//! snapshot, proposals are capped and merged, and merged labels are locked.

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::ngram::{ngram_round, NgramIndex, NgramLearnerConfig, Proposal};
use crate::seed::InitialLabel;
use crate::sequence::{amplify_extremes, train, SequenceModel, SequenceSource};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelSource {
    Template,
    Ngram,
    Deep,
    Merge,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub round: usize,
    pub value: f64,
    pub source: LabelSource,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelEntry {
    pub value: f64,
    pub locked: bool,
    pub history: Vec<HistoryEntry>,
}

impl LabelEntry {
    pub fn source(&self) -> LabelSource {
        self.history.last().map_or(LabelSource::Template, |h| h.source)
    }

    fn set(&mut self, round: usize, value: f64, source: LabelSource, lock: bool) {
        self.value = value;
        self.locked |= lock;
        self.history.push(HistoryEntry { round, value, source });
    }
}

/// One line of the label store.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelRecord {
    pub segment_id: String,
    pub value: f64,
    pub locked: bool,
    pub source: LabelSource,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelState {
    pub round: usize,
    pub segment_ids: Vec<String>,
    pub entries: Vec<LabelEntry>,
}

impl LabelState {
    /// Template labels become round-0 state; hard template labels start locked.
    pub fn from_initial(labels: &[InitialLabel]) -> Self {
        LabelState {
            round: 0,
            segment_ids: labels.iter().map(|l| l.segment_id.clone()).collect(),
            entries: labels
                .iter()
                .map(|l| LabelEntry {
                    value: l.value,
                    locked: l.value == 0.0 || l.value == 1.0,
                    history: vec![HistoryEntry {
                        round: 0,
                        value: l.value,
                        source: LabelSource::Template,
                    }],
                })
                .collect(),
        }
    }

    pub fn from_values(ids: Vec<String>, values: &[f64], locked: &[bool]) -> Self {
        LabelState {
            round: 0,
            segment_ids: ids,
            entries: values
                .iter()
                .zip(locked)
                .map(|(&value, &locked)| LabelEntry {
                    value,
                    locked,
                    history: vec![HistoryEntry {
                        round: 0,
                        value,
                        source: LabelSource::Template,
                    }],
                })
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn values(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.value).collect()
    }

    pub fn locked_count(&self) -> usize {
        self.entries.iter().filter(|e| e.locked).count()
    }

    /// Counts of labels at exactly 1 and exactly 0.
    pub fn cap(&self) -> RoundCap {
        RoundCap {
            n_p: self.entries.iter().filter(|e| e.value == 1.0).count(),
            n_n: self.entries.iter().filter(|e| e.value == 0.0).count(),
        }
    }

    pub fn histogram(&self) -> [usize; 10] {
        histogram(self.entries.iter().map(|e| e.value))
    }

    pub fn records(&self) -> Vec<LabelRecord> {
        self.segment_ids
            .iter()
            .zip(&self.entries)
            .map(|(id, e)| LabelRecord {
                segment_id: id.clone(),
                value: e.value,
                locked: e.locked,
                source: e.source(),
            })
            .collect()
    }

    pub fn from_records(records: Vec<LabelRecord>) -> Self {
        LabelState {
            round: 0,
            segment_ids: records.iter().map(|r| r.segment_id.clone()).collect(),
            entries: records
                .into_iter()
                .map(|r| LabelEntry {
                    value: r.value,
                    locked: r.locked,
                    history: vec![HistoryEntry {
                        round: 0,
                        value: r.value,
                        source: r.source,
                    }],
                })
                .collect(),
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        crate::io::write_jsonl(path, self.records().iter())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(Self::from_records(crate::io::read_jsonl(path)?))
    }
}

/// Ten equal-width bins over [0, 1]; 1.0 falls in the last bin.
pub fn histogram(values: impl Iterator<Item = f64>) -> [usize; 10] {
    let mut bins = [0; 10];
    for v in values {
        bins[((v * 10.0).floor() as usize).min(9)] += 1;
    }
    bins
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoundCap {
    pub n_p: usize,
    pub n_n: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CapOutcome {
    pub passed: Vec<Proposal>,
    pub dropped_locked: usize,
    pub dropped_over_cap: usize,
}

/// Drops proposals for locked segments, then keeps the `n_p` most
/// confident positives and `n_n` most confident negatives (ties by segment).
pub fn apply_cap(proposals: &[Proposal], state: &LabelState, cap: RoundCap) -> CapOutcome {
    let mut out = CapOutcome::default();
    let (mut pos, mut neg): (Vec<Proposal>, Vec<Proposal>) = (Vec::new(), Vec::new());
    for p in proposals {
        if state.entries[p.segment].locked {
            out.dropped_locked += 1;
        } else if p.value == 1.0 {
            pos.push(*p);
        } else {
            neg.push(*p);
        }
    }
    for (mut side, limit) in [(pos, cap.n_p), (neg, cap.n_n)] {
        side.sort_by(|a, b| b.confidence.total_cmp(&a.confidence).then(a.segment.cmp(&b.segment)));
        out.dropped_over_cap += side.len().saturating_sub(limit);
        side.truncate(limit);
        out.passed.extend(side);
    }
    out.passed.sort_by_key(|p| p.segment);
    out
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MergeOutcome {
    pub new_locked_pos: usize,
    pub new_locked_neg: usize,
    pub contradicted: Vec<usize>,
}

/// Applies capped proposals from two learners to `state` for `round`.
/// `scores` (the deep learner's amplified predictions) replace the values of
/// unlocked segments nobody proposed for.
pub fn merge(
    a: (&[Proposal], LabelSource),
    b: (&[Proposal], LabelSource),
    scores: Option<&[f64]>,
    state: &mut LabelState,
    round: usize,
) -> MergeOutcome {
    let n = state.len();
    let mut from_a: Vec<Option<f64>> = vec![None; n];
    let mut from_b: Vec<Option<f64>> = vec![None; n];
    for p in a.0 {
        from_a[p.segment] = Some(p.value);
    }
    for p in b.0 {
        from_b[p.segment] = Some(p.value);
    }
    let mut out = MergeOutcome::default();
    for (i, entry) in state.entries.iter_mut().enumerate() {
        if entry.locked {
            continue;
        }
        let adopted = match (from_a[i], from_b[i]) {
            (Some(x), Some(y)) if x == y => Some((x, LabelSource::Merge)),
            (Some(_), Some(_)) => {
                out.contradicted.push(i);
                continue;
            }
            (Some(x), None) => Some((x, a.1)),
            (None, Some(y)) => Some((y, b.1)),
            (None, None) => None,
        };
        match adopted {
            Some((v, source)) => {
                entry.set(round, v, source, true);
                if v == 1.0 {
                    out.new_locked_pos += 1;
                } else {
                    out.new_locked_neg += 1;
                }
            }
            None => {
                if let Some(s) = scores {
                    entry.set(round, s[i], LabelSource::Deep, false);
                }
            }
        }
    }
    state.round = round;
    out
}

/// What one learner produced for a round.
#[derive(Debug, Clone, Default)]
pub struct LearnerOutput {
    pub proposals: Vec<Proposal>,
    /// Soft scores for every segment, if the learner makes them.
    pub scores: Option<Vec<f64>>,
    pub detail: serde_json::Value,
}

pub trait CoLearner: Send {
    fn source(&self) -> LabelSource;

    /// Proposes hard labels from a label snapshot without changing any
    /// state that outlives the round.
    fn propose(&mut self, labels: &[f64]) -> Result<LearnerOutput>;

    /// Called once the round's merge has been applied.
    fn commit(&mut self) {}
}

pub struct NgramLearner {
    pub index: Arc<NgramIndex>,
    pub config: NgramLearnerConfig,
}

impl CoLearner for NgramLearner {
    fn source(&self) -> LabelSource {
        LabelSource::Ngram
    }

    fn propose(&mut self, labels: &[f64]) -> Result<LearnerOutput> {
        let (proposals, stats) = ngram_round(&self.index, labels, &self.config)?;
        Ok(LearnerOutput {
            proposals,
            scores: None,
            detail: serde_json::to_value(stats)?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeepLearnerConfig {
    pub amplify_threshold: f64,
    pub amplify_factor: f64,
    /// Amplified scores at or beyond this distance from the middle become
    /// hard proposals (`>= t` gives 1, `<= 1 - t` gives 0).
    pub hard_threshold: f64,
}

impl Default for DeepLearnerConfig {
    fn default() -> Self {
        DeepLearnerConfig {
            amplify_threshold: 0.9,
            amplify_factor: 0.10,
            hard_threshold: 0.99,
        }
    }
}

/// Retrains a copy of its model each round, warm-started from the last
/// committed weights.
pub struct DeepLearner<'a> {
    pub model: SequenceModel,
    pub data: &'a dyn SequenceSource,
    pub config: DeepLearnerConfig,
    pending: Option<SequenceModel>,
}

impl<'a> DeepLearner<'a> {
    pub fn new(model: SequenceModel, data: &'a dyn SequenceSource, config: DeepLearnerConfig) -> Self {
        DeepLearner {
            model,
            data,
            config,
            pending: None,
        }
    }
}

/// Hard proposals from amplified scores at confidence `|p - 0.5|`.
pub fn hard_proposals(scores: &[f64], hard_threshold: f64) -> Vec<Proposal> {
    scores
        .iter()
        .enumerate()
        .filter_map(|(segment, &p)| {
            let value = if p >= hard_threshold {
                1.0
            } else if p <= 1.0 - hard_threshold {
                0.0
            } else {
                return None;
            };
            Some(Proposal {
                segment,
                value,
                confidence: (p - 0.5).abs(),
            })
        })
        .collect()
}

impl CoLearner for DeepLearner<'_> {
    fn source(&self) -> LabelSource {
        LabelSource::Deep
    }

    fn propose(&mut self, labels: &[f64]) -> Result<LearnerOutput> {
        let mut model = self.model.clone();
        let report = train(&mut model, self.data, labels)?;
        let raw = model.predict(self.data)?;
        let scores = amplify_extremes(&raw, self.config.amplify_threshold, self.config.amplify_factor)?;
        let proposals = hard_proposals(&scores, self.config.hard_threshold);
        self.pending = Some(model);
        Ok(LearnerOutput {
            proposals,
            scores: Some(scores),
            detail: json!({
                "epochs": report.history.len(),
                "best_epoch": report.best_epoch,
                "history": report.history,
            }),
        })
    }

    fn commit(&mut self) {
        if let Some(m) = self.pending.take() {
            self.model = m;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnerStats {
    pub source: LabelSource,
    pub proposed_pos: usize,
    pub proposed_neg: usize,
    pub passed_pos: usize,
    pub passed_neg: usize,
    pub dropped_locked: usize,
    pub dropped_over_cap: usize,
    pub detail: serde_json::Value,
}

impl LearnerStats {
    fn new(source: LabelSource, out: &LearnerOutput, capped: &CapOutcome) -> Self {
        let count = |ps: &[Proposal], v: f64| ps.iter().filter(|p| p.value == v).count();
        LearnerStats {
            source,
            proposed_pos: count(&out.proposals, 1.0),
            proposed_neg: count(&out.proposals, 0.0),
            passed_pos: count(&capped.passed, 1.0),
            passed_neg: count(&capped.passed, 0.0),
            dropped_locked: capped.dropped_locked,
            dropped_over_cap: capped.dropped_over_cap,
            detail: out.detail.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundReport {
    pub round: usize,
    pub cap: RoundCap,
    pub new_locked_pos: usize,
    pub new_locked_neg: usize,
    pub locked_total: usize,
    pub contradictions: usize,
    pub contradicted: Vec<String>,
    pub histogram: [usize; 10],
    pub learners: Vec<LearnerStats>,
}

impl RoundReport {
    pub fn new_locks(&self) -> usize {
        self.new_locked_pos + self.new_locked_neg
    }
}

/// One round. Both learners run concurrently on the same snapshot; if
/// either fails, `state` is left exactly as it was and nothing is committed.
pub fn run_round(state: &mut LabelState, a: &mut dyn CoLearner, b: &mut dyn CoLearner) -> Result<RoundReport> {
    let snapshot = state.values();
    let cap = state.cap();
    let (ra, rb) = rayon::join(|| a.propose(&snapshot), || b.propose(&snapshot));
    let (out_a, out_b) = (ra?, rb?);
    for out in [&out_a, &out_b] {
        if let Some(s) = &out.scores {
            if s.len() != state.len() {
                return Err(Error::Config(format!("learner scored {} of {} segments", s.len(), state.len())));
            }
        }
        if out.proposals.iter().any(|p| p.segment >= state.len()) {
            return Err(Error::Config("learner proposed for an unknown segment".into()));
        }
    }
    let cap_a = apply_cap(&out_a.proposals, state, cap);
    let cap_b = apply_cap(&out_b.proposals, state, cap);
    let scores = out_a.scores.as_deref().or(out_b.scores.as_deref());
    let round = state.round + 1;
    let merged = merge((&cap_a.passed, a.source()), (&cap_b.passed, b.source()), scores, state, round);
    a.commit();
    b.commit();
    let report = RoundReport {
        round,
        cap,
        new_locked_pos: merged.new_locked_pos,
        new_locked_neg: merged.new_locked_neg,
        locked_total: state.locked_count(),
        contradictions: merged.contradicted.len(),
        contradicted: merged.contradicted.iter().map(|&i| state.segment_ids[i].clone()).collect(),
        histogram: state.histogram(),
        learners: vec![
            LearnerStats::new(a.source(), &out_a, &cap_a),
            LearnerStats::new(b.source(), &out_b, &cap_b),
        ],
    };
    log::info!(
        "round {round}: +{} positive, +{} negative locks, {} contradictions",
        report.new_locked_pos,
        report.new_locked_neg,
        report.contradictions
    );
    Ok(report)
}

/// Up to `rounds` rounds, stopping after the first round that locks nothing.
pub fn run(state: &mut LabelState, a: &mut dyn CoLearner, b: &mut dyn CoLearner, rounds: usize) -> Result<Vec<RoundReport>> {
    if rounds == 0 {
        return Err(Error::Config("at least one bootstrap round is required".into()));
    }
    let mut reports = Vec::new();
    for _ in 0..rounds {
        let r = run_round(state, a, b)?;
        let done = r.new_locks() == 0;
        reports.push(r);
        if done {
            break;
        }
    }
    Ok(reports)
}
