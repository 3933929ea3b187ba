//! Word n-gram occurrence index and the ratio-based n-gram learner.

use std::collections::{BTreeSet, HashMap};
use std::io::{BufRead, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::Segment;
use crate::{Error, Result};

pub const INDEX_FORMAT: &str = "abintent-ngram-index/1";
const SHARD: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NgramConfig {
    pub n_min: usize,
    pub n_max: usize,
    pub cap: usize,
}

impl Default for NgramConfig {
    fn default() -> Self {
        NgramConfig {
            n_min: 3,
            n_max: 6,
            cap: 500_000,
        }
    }
}

impl NgramConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_min == 0 || self.n_min > self.n_max {
            return Err(Error::Config(format!("n-gram range {}..={} is empty", self.n_min, self.n_max)));
        }
        if self.cap == 0 {
            return Err(Error::Config("n-gram cap must be positive".into()));
        }
        Ok(())
    }
}

/// A hard label proposed by one learner for one segment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Proposal {
    /// Position in the round's segment order.
    pub segment: usize,
    /// 1.0 or 0.0.
    pub value: f64,
    pub confidence: f64,
}

/// Capped map from n-gram to the sorted positions of the segments containing it.
#[derive(Debug, Clone, PartialEq)]
pub struct NgramIndex {
    pub config: NgramConfig,
    pub segment_ids: Vec<String>,
    grams: Vec<String>,
    postings: Vec<Vec<u32>>,
}

#[derive(Serialize, Deserialize)]
struct IndexHeader {
    format: String,
    n_min: usize,
    n_max: usize,
    cap: usize,
    segment_ids: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct IndexLine {
    gram: String,
    postings: Vec<u32>,
}

/// Distinct n-grams of one token sequence.
pub fn segment_ngrams(tokens: &[&str], n_min: usize, n_max: usize) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    for n in n_min..=n_max {
        for w in tokens.windows(n) {
            out.insert(w.join(" "));
        }
    }
    out
}

fn merge_postings(mut a: HashMap<String, Vec<u32>>, b: HashMap<String, Vec<u32>>) -> HashMap<String, Vec<u32>> {
    if a.len() < b.len() {
        return merge_postings(b, a);
    }
    for (gram, list) in b {
        a.entry(gram).or_default().extend(list);
    }
    a
}

impl NgramIndex {
    pub fn build(segments: &[Segment], config: NgramConfig) -> Result<Self> {
        config.validate()?;
        if segments.len() > u32::MAX as usize {
            return Err(Error::Config("too many segments for a u32 posting list".into()));
        }
        let merged = segments
            .par_chunks(SHARD)
            .enumerate()
            .map(|(shard, chunk)| {
                let mut local: HashMap<String, Vec<u32>> = HashMap::new();
                for (offset, seg) in chunk.iter().enumerate() {
                    let pos = (shard * SHARD + offset) as u32;
                    for gram in segment_ngrams(&seg.tokens(), config.n_min, config.n_max) {
                        local.entry(gram).or_default().push(pos);
                    }
                }
                local
            })
            .reduce(HashMap::new, merge_postings);

        let mut entries: Vec<(String, Vec<u32>)> = merged.into_iter().collect();
        for (_, list) in entries.iter_mut() {
            list.sort_unstable();
            list.dedup();
        }
        if entries.len() > config.cap {
            entries.par_sort_unstable_by(|a, b| b.1.len().cmp(&a.1.len()).then_with(|| a.0.cmp(&b.0)));
            entries.truncate(config.cap);
        }
        entries.par_sort_unstable_by(|a, b| a.0.cmp(&b.0));
        let (grams, postings) = entries.into_iter().unzip();
        Ok(NgramIndex {
            config,
            segment_ids: segments.iter().map(|s| s.segment_id.clone()).collect(),
            grams,
            postings,
        })
    }

    pub fn total_segments(&self) -> usize {
        self.segment_ids.len()
    }

    pub fn len(&self) -> usize {
        self.grams.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grams.is_empty()
    }

    /// Grams in lexicographic order.
    pub fn grams(&self) -> &[String] {
        &self.grams
    }

    pub fn postings(&self, gram_idx: usize) -> &[u32] {
        &self.postings[gram_idx]
    }

    pub fn find(&self, gram: &str) -> Option<usize> {
        self.grams.binary_search_by(|g| g.as_str().cmp(gram)).ok()
    }

    pub fn write(&self, mut w: impl Write) -> Result<()> {
        let header = IndexHeader {
            format: INDEX_FORMAT.into(),
            n_min: self.config.n_min,
            n_max: self.config.n_max,
            cap: self.config.cap,
            segment_ids: self.segment_ids.clone(),
        };
        serde_json::to_writer(&mut w, &header)?;
        writeln!(w)?;
        for (gram, postings) in self.grams.iter().zip(&self.postings) {
            serde_json::to_writer(
                &mut w,
                &IndexLine {
                    gram: gram.clone(),
                    postings: postings.clone(),
                },
            )?;
            writeln!(w)?;
        }
        Ok(())
    }

    pub fn read(reader: impl BufRead, origin: &str) -> Result<Self> {
        let mut lines = reader.lines().enumerate();
        let header: IndexHeader = match lines.next() {
            Some((_, line)) => serde_json::from_str(&line?).map_err(|e| Error::parse(origin, 1, e.to_string()))?,
            None => return Err(Error::parse(origin, 1, "missing index header")),
        };
        if header.format != INDEX_FORMAT {
            return Err(Error::parse(origin, 1, format!("unsupported index format `{}`", header.format)));
        }
        let config = NgramConfig {
            n_min: header.n_min,
            n_max: header.n_max,
            cap: header.cap,
        };
        let mut grams = Vec::new();
        let mut postings = Vec::new();
        for (i, line) in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let entry: IndexLine = serde_json::from_str(&line).map_err(|e| Error::parse(origin, i + 1, e.to_string()))?;
            if grams.last().is_some_and(|g: &String| g >= &entry.gram) {
                return Err(Error::parse(origin, i + 1, "grams out of order"));
            }
            if entry.postings.iter().any(|&p| p as usize >= header.segment_ids.len()) {
                return Err(Error::parse(origin, i + 1, "posting out of range"));
            }
            grams.push(entry.gram);
            postings.push(entry.postings);
        }
        Ok(NgramIndex {
            config,
            segment_ids: header.segment_ids,
            grams,
            postings,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let f = std::io::BufReader::new(std::fs::File::open(path)?);
        Self::read(f, &path.display().to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Intentful,
    NonIntentful,
    Neutral,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NgramScore {
    pub gram: String,
    pub intent_rate: f64,
    pub direction: Direction,
}

/// Class sizes of a label vector: values above and below 0.5.
pub fn class_counts(labels: &[f64]) -> (usize, usize) {
    let pos = labels.iter().filter(|&&v| v > 0.5).count();
    let neg = labels.iter().filter(|&&v| v < 0.5).count();
    (pos, neg)
}

pub fn default_smoothing(n_pos: usize, n_neg: usize) -> f64 {
    1.0 / (n_pos + n_neg) as f64
}

/// `(c_pos/n_pos + s) / (c_neg/n_neg + s)`; with `s = 0`, `0/0` is 1 and `x/0` is infinite.
pub fn intent_rate(c_pos: usize, n_pos: usize, c_neg: usize, n_neg: usize, smoothing: f64) -> f64 {
    let num = c_pos as f64 / n_pos as f64 + smoothing;
    let den = c_neg as f64 / n_neg as f64 + smoothing;
    if den == 0.0 {
        if num == 0.0 {
            1.0
        } else {
            f64::INFINITY
        }
    } else {
        num / den
    }
}

/// Rates for every indexed gram, in index order. `smoothing = None` uses
/// `1 / (N_pos + N_neg)`.
pub fn score_ngrams(index: &NgramIndex, labels: &[f64], smoothing: Option<f64>) -> Result<Vec<NgramScore>> {
    if labels.len() != index.total_segments() {
        return Err(Error::Config(format!(
            "{} labels for {} indexed segments",
            labels.len(),
            index.total_segments()
        )));
    }
    let (n_pos, n_neg) = class_counts(labels);
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::MissingClass {
            positives: n_pos,
            negatives: n_neg,
        });
    }
    let s = smoothing.unwrap_or_else(|| default_smoothing(n_pos, n_neg));
    if !(s >= 0.0 && s.is_finite()) {
        return Err(Error::OutOfRange {
            what: "smoothing",
            value: s,
        });
    }
    Ok(index
        .grams
        .par_iter()
        .zip(&index.postings)
        .map(|(gram, postings)| {
            let mut c_pos = 0;
            let mut c_neg = 0;
            for &p in postings {
                let v = labels[p as usize];
                if v > 0.5 {
                    c_pos += 1;
                } else if v < 0.5 {
                    c_neg += 1;
                }
            }
            NgramScore {
                gram: gram.clone(),
                intent_rate: intent_rate(c_pos, n_pos, c_neg, n_neg, s),
                direction: Direction::Neutral,
            }
        })
        .collect())
}

/// Number of grams in each tail: `floor((100 - percentile) / 100 * n)`.
pub fn selection_count(n: usize, percentile: f64) -> usize {
    (((100.0 - percentile) / 100.0) * n as f64 + 1e-9).floor() as usize
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    /// Positions into the score list.
    pub intentful: Vec<usize>,
    pub non_intentful: Vec<usize>,
    pub upper_threshold: Option<f64>,
    pub lower_threshold: Option<f64>,
    /// Some gram landed in both tails (all rates tied at the cut).
    pub degenerate: bool,
}

/// Marks the extreme tails: rates at or above the k-th largest and at or
/// below the k-th smallest, ties included.
pub fn select_predictive(scores: &mut [NgramScore], percentile: f64) -> Result<Selection> {
    if !(50.0..=100.0).contains(&percentile) {
        return Err(Error::OutOfRange {
            what: "percentile",
            value: percentile,
        });
    }
    let k = selection_count(scores.len(), percentile);
    if k == 0 {
        if scores.len() < 1000 {
            log::info!(
                "{} grams is too few for the {percentile} percentile; no grams selected",
                scores.len()
            );
        }
        return Ok(Selection {
            intentful: vec![],
            non_intentful: vec![],
            upper_threshold: None,
            lower_threshold: None,
            degenerate: false,
        });
    }
    let mut rates: Vec<f64> = scores.iter().map(|s| s.intent_rate).collect();
    rates.sort_unstable_by(|a, b| a.total_cmp(b));
    let low = rates[k - 1];
    let high = rates[rates.len() - k];
    let mut sel = Selection {
        intentful: vec![],
        non_intentful: vec![],
        upper_threshold: Some(high),
        lower_threshold: Some(low),
        degenerate: false,
    };
    for (i, s) in scores.iter_mut().enumerate() {
        let up = s.intent_rate >= high;
        let down = s.intent_rate <= low;
        if up {
            sel.intentful.push(i);
            s.direction = Direction::Intentful;
        }
        if down {
            sel.non_intentful.push(i);
            s.direction = Direction::NonIntentful;
        }
        sel.degenerate |= up && down;
    }
    if sel.degenerate {
        log::warn!("rate distribution is degenerate: some grams fall in both tails");
    }
    Ok(sel)
}

fn extremity(rate: f64, positive: bool) -> f64 {
    if positive {
        rate
    } else if rate == 0.0 {
        f64::INFINITY
    } else {
        1.0 / rate
    }
}

/// Segments containing only intentful grams get 1, only non-intentful grams
/// get 0; segments with both or neither get nothing. Confidence is the
/// largest extremity among the segment's selected grams.
pub fn propose_labels(index: &NgramIndex, scores: &[NgramScore], selection: &Selection) -> Vec<Proposal> {
    let n = index.total_segments();
    let mut pos: Vec<Option<f64>> = vec![None; n];
    let mut neg: Vec<Option<f64>> = vec![None; n];
    let mark = |hits: &mut Vec<Option<f64>>, grams: &[usize], positive: bool| {
        for &g in grams {
            let e = extremity(scores[g].intent_rate, positive);
            for &p in index.postings(g) {
                let slot = &mut hits[p as usize];
                *slot = Some(slot.map_or(e, |c: f64| c.max(e)));
            }
        }
    };
    mark(&mut pos, &selection.intentful, true);
    mark(&mut neg, &selection.non_intentful, false);
    pos.into_iter()
        .zip(neg)
        .enumerate()
        .filter_map(|(segment, hit)| match hit {
            (Some(c), None) => Some(Proposal {
                segment,
                value: 1.0,
                confidence: c,
            }),
            (None, Some(c)) => Some(Proposal {
                segment,
                value: 0.0,
                confidence: c,
            }),
            _ => None,
        })
        .collect()
}

/// Highest-rate grams, descending, ties by gram.
pub fn top_grams(scores: &[NgramScore], k: usize) -> Vec<&NgramScore> {
    let mut v: Vec<&NgramScore> = scores.iter().collect();
    v.sort_by(|a, b| b.intent_rate.total_cmp(&a.intent_rate).then_with(|| a.gram.cmp(&b.gram)));
    v.truncate(k);
    v
}

/// Tab-separated `gram<TAB>rate` lines with two decimals.
pub fn format_rate_table(rows: &[&NgramScore]) -> String {
    rows.iter().map(|s| format!("{}\t{:.2}\n", s.gram, s.intent_rate)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NgramLearnerConfig {
    pub percentile: f64,
    /// `None` selects `1 / (N_pos + N_neg)`.
    pub smoothing: Option<f64>,
}

impl Default for NgramLearnerConfig {
    fn default() -> Self {
        NgramLearnerConfig {
            percentile: 99.9,
            smoothing: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct NgramRoundStats {
    pub grams: usize,
    pub intentful: usize,
    pub non_intentful: usize,
    pub degenerate: bool,
}

/// Scores, selects and proposes against one label vector.
pub fn ngram_round(index: &NgramIndex, labels: &[f64], config: &NgramLearnerConfig) -> Result<(Vec<Proposal>, NgramRoundStats)> {
    let mut scores = score_ngrams(index, labels, config.smoothing)?;
    let sel = select_predictive(&mut scores, config.percentile)?;
    let stats = NgramRoundStats {
        grams: scores.len(),
        intentful: sel.intentful.len(),
        non_intentful: sel.non_intentful.len(),
        degenerate: sel.degenerate,
    };
    Ok((propose_labels(index, &scores, &sel), stats))
}
