//! Abusive-intent fusion, windowed document scores and ranked listings.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::Segment;
use crate::{Error, Result};

pub const DEFAULT_WINDOW: usize = 3;

fn unit(what: &'static str, v: f64) -> Result<f64> {
    if (0.0..=1.0).contains(&v) {
        Ok(v)
    } else {
        Err(Error::OutOfRange { what, value: v })
    }
}

pub fn abusive_intent(abuse: f64, intent: f64) -> Result<f64> {
    Ok(unit("abuse score", abuse)? * unit("intent score", intent)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub segment_id: String,
    pub abuse: f64,
    pub intent: f64,
    pub product: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
}

impl ScoreRecord {
    pub fn new(segment_id: impl Into<String>, abuse: f64, intent: f64) -> Result<Self> {
        Ok(ScoreRecord {
            segment_id: segment_id.into(),
            abuse,
            intent,
            product: abusive_intent(abuse, intent)?,
            text: None,
        })
    }
}

/// Score records for aligned segment, abuse and intent slices.
pub fn score_segments(segments: &[Segment], abuse: &[f64], intent: &[f64]) -> Result<Vec<ScoreRecord>> {
    if abuse.len() != segments.len() || intent.len() != segments.len() {
        return Err(Error::Config(format!(
            "{} segments but {} abuse and {} intent scores",
            segments.len(),
            abuse.len(),
            intent.len()
        )));
    }
    segments
        .iter()
        .zip(abuse.iter().zip(intent))
        .map(|(s, (&a, &i))| {
            let mut r = ScoreRecord::new(&s.segment_id, a, i)?;
            r.text = Some(s.text.clone());
            Ok(r)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocumentScore {
    pub doc_id: String,
    pub window_scores: Vec<f64>,
    pub doc_score: f64,
    /// Index of the first best window; `None` for an empty document.
    pub argmax_window: Option<usize>,
}

fn max_of(xs: &[f64]) -> f64 {
    xs.iter().cloned().fold(0.0, f64::max)
}

/// Slides a `window`-segment window with stride 1 and scores each window as
/// (max abuse) x (max intent); documents shorter than the window get one
/// window over everything.
pub fn document_score(doc_id: &str, abuse: &[f64], intent: &[f64], window: usize) -> Result<DocumentScore> {
    if window == 0 {
        return Err(Error::Config("window must be positive".into()));
    }
    if abuse.len() != intent.len() {
        return Err(Error::Config(format!(
            "document {doc_id}: {} abuse vs {} intent scores",
            abuse.len(),
            intent.len()
        )));
    }
    for (&a, &i) in abuse.iter().zip(intent) {
        unit("abuse score", a)?;
        unit("intent score", i)?;
    }
    let n = abuse.len();
    let window_scores: Vec<f64> = if n == 0 {
        vec![]
    } else {
        let w = window.min(n);
        (0..=n - w).map(|s| max_of(&abuse[s..s + w]) * max_of(&intent[s..s + w])).collect()
    };
    let mut best: Option<(usize, f64)> = None;
    for (k, &v) in window_scores.iter().enumerate() {
        let better = match best {
            None => true,
            Some((_, b)) => v > b,
        };
        if better {
            best = Some((k, v));
        }
    }
    Ok(DocumentScore {
        doc_id: doc_id.to_string(),
        doc_score: best.map_or(0.0, |b| b.1),
        argmax_window: best.map(|b| b.0),
        window_scores,
    })
}

/// Groups records by document (ordered by position within the document)
/// and scores every document; output is sorted by `doc_id`.
pub fn document_scores(segments: &[Segment], records: &[ScoreRecord], window: usize) -> Result<Vec<DocumentScore>> {
    if segments.len() != records.len() {
        return Err(Error::Config("segments and score records differ in length".into()));
    }
    let mut docs: BTreeMap<&str, Vec<(usize, f64, f64)>> = BTreeMap::new();
    for (s, r) in segments.iter().zip(records) {
        docs.entry(&s.doc_id).or_default().push((s.index_in_doc, r.abuse, r.intent));
    }
    docs.into_par_iter()
        .map(|(doc, mut rows)| {
            rows.sort_by_key(|r| r.0);
            let abuse: Vec<f64> = rows.iter().map(|r| r.1).collect();
            let intent: Vec<f64> = rows.iter().map(|r| r.2).collect();
            document_score(doc, &abuse, &intent, window)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RankKey {
    #[default]
    Product,
    Abuse,
    Intent,
}

impl RankKey {
    fn of(self, r: &ScoreRecord) -> f64 {
        match self {
            RankKey::Product => r.product,
            RankKey::Abuse => r.abuse,
            RankKey::Intent => r.intent,
        }
    }
}

/// Top `top_k` records, descending by `key`, ties by segment id.
pub fn rank_report(records: &[ScoreRecord], key: RankKey, top_k: usize) -> Vec<&ScoreRecord> {
    let mut v: Vec<&ScoreRecord> = records.iter().collect();
    v.sort_by(|a, b| key.of(b).total_cmp(&key.of(a)).then_with(|| a.segment_id.cmp(&b.segment_id)));
    v.truncate(top_k);
    v
}

pub fn rank_documents(docs: &[DocumentScore], top_k: usize) -> Vec<&DocumentScore> {
    let mut v: Vec<&DocumentScore> = docs.iter().collect();
    v.sort_by(|a, b| b.doc_score.total_cmp(&a.doc_score).then_with(|| a.doc_id.cmp(&b.doc_id)));
    v.truncate(top_k);
    v
}

/// `abuse  intent  product  text` rows at three decimals.
pub fn format_ranked(rows: &[&ScoreRecord]) -> String {
    let mut out = String::from("abuse\tintent\tproduct\tsegment\n");
    for r in rows {
        let label = r.text.as_deref().unwrap_or(&r.segment_id);
        let _ = writeln!(out, "{:.3}\t{:.3}\t{:.3}\t{}", r.abuse, r.intent, r.product, label);
    }
    out
}

/// One line of the document report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocumentReportLine {
    pub doc_id: String,
    pub doc_score: f64,
    pub argmax_window: Option<usize>,
}

impl From<&DocumentScore> for DocumentReportLine {
    fn from(d: &DocumentScore) -> Self {
        DocumentReportLine {
            doc_id: d.doc_id.clone(),
            doc_score: d.doc_score,
            argmax_window: d.argmax_window,
        }
    }
}
