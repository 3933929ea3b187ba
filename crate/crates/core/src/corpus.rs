//! Document ingestion: markup-aware cleaning, segmentation at sentence
//! boundaries and semicolons, and the character-reduction report.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::sync::LazyLock;

use rayon::prelude::*;
use regex::{Captures, Regex};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Stormfront,
    Wikipedia,
    Ironmarch,
    Manifesto,
    AbuseCorpus,
    #[default]
    Other,
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Source::Stormfront => "stormfront",
            Source::Wikipedia => "wikipedia",
            Source::Ironmarch => "ironmarch",
            Source::Manifesto => "manifesto",
            Source::AbuseCorpus => "abuse_corpus",
            Source::Other => "other",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawDocument {
    pub doc_id: String,
    #[serde(default)]
    pub source: Source,
    pub text: String,
    #[serde(default)]
    pub markup: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CleanDocument {
    pub doc_id: String,
    pub source: Source,
    pub cleaned_text: String,
    pub removed_chars: usize,
    pub original_chars: usize,
}

impl CleanDocument {
    pub fn from_raw(raw: &RawDocument) -> Self {
        let cleaned_text = clean_text(&raw.text, raw.markup);
        let original_chars = raw.text.chars().count();
        let cleaned_chars = cleaned_text.chars().count();
        CleanDocument {
            doc_id: raw.doc_id.clone(),
            source: raw.source,
            cleaned_text,
            // Cleaning only deletes or splits; the saturating guard covers
            // hashtags whose camel-case split outgrows the '#' it consumed.
            removed_chars: original_chars.saturating_sub(cleaned_chars),
            original_chars,
        }
    }
}

/// The atomic unit of labelling and scoring.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub segment_id: String,
    pub doc_id: String,
    pub index_in_doc: usize,
    pub text: String,
    #[serde(default)]
    pub token_count: usize,
    #[serde(default)]
    pub source: Source,
    /// The fragment was terminated by '?' in the cleaned text.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub question: bool,
}

impl Segment {
    pub fn tokens(&self) -> Vec<&str> {
        tokenize(&self.text)
    }
}

pub fn segment_id(doc_id: &str, index: usize) -> String {
    format!("{doc_id}:{index}")
}

static QUOTE_LINE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?im)^(?:[ \t]|<[^<>\n]*>)*quote:.*$").unwrap());
static TAG: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"<[^<>]*>").unwrap());
static ENTITY: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"&(#[0-9]+|#x[0-9a-fA-F]+|[a-zA-Z]+);").unwrap());
static HANDLE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"@[A-Za-z0-9_]+").unwrap());
static HASHTAG: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"#([A-Za-z0-9_]+)").unwrap());
static OPEN_TAG: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?i)^<([a-z][a-z0-9]*)\b([^<>]*)>").unwrap());

/// Cleans forum text. The result is a fixed point of the cleaning pass, so
/// `clean_text(&clean_text(x, m), m) == clean_text(x, m)`.
pub fn clean_text(raw: &str, markup: bool) -> String {
    let mut current = clean_pass(raw, markup);
    loop {
        let next = clean_pass(&current, markup);
        if next == current {
            return current;
        }
        current = next;
    }
}

fn clean_pass(raw: &str, markup: bool) -> String {
    let mut text = ascii_only(raw);
    if markup {
        text = strip_quote_elements(&text);
        text = QUOTE_LINE.replace_all(&text, "").into_owned();
        while TAG.is_match(&text) {
            text = TAG.replace_all(&text, " ").into_owned();
        }
        text = decode_entities(&text);
    }
    text = HANDLE.replace_all(&text, "").into_owned();
    text = HASHTAG
        .replace_all(&text, |caps: &Captures<'_>| split_camel_case(&caps[1]))
        .into_owned();
    text = collapse_repeats(&text, 2);
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Line breaks survive, other whitespace becomes a plain space, and
/// everything outside printable ASCII is dropped.
fn ascii_only(s: &str) -> String {
    s.chars()
        .filter_map(|c| {
            if c == '\n' {
                Some('\n')
            } else if c.is_whitespace() {
                Some(' ')
            } else if (' '..='~').contains(&c) {
                Some(c)
            } else {
                None
            }
        })
        .collect()
}

fn is_quote_element(name: &str, attrs: &str) -> bool {
    let name = name.to_ascii_lowercase();
    if matches!(name.as_str(), "blockquote" | "q" | "quote") {
        return true;
    }
    let attrs = attrs.to_ascii_lowercase();
    attrs.contains("class=") && attrs.contains("quote")
}

/// Removes quotation elements together with their content, honouring nesting
/// of same-named tags inside the quotation.
fn strip_quote_elements(s: &str) -> String {
    let bytes = s.as_bytes();
    let mut out = String::with_capacity(s.len());
    let mut i = 0;
    while i < s.len() {
        if bytes[i] == b'<' {
            if let Some(caps) = OPEN_TAG.captures(&s[i..]) {
                let name = caps[1].to_ascii_lowercase();
                let attrs = &caps[2];
                if is_quote_element(&name, attrs) && !attrs.trim_end().ends_with('/') {
                    i += caps[0].len();
                    i = skip_element_body(s, i, &name);
                    out.push(' ');
                    continue;
                }
            }
        }
        let ch = s[i..].chars().next().unwrap();
        out.push(ch);
        i += ch.len_utf8();
    }
    out
}

/// Returns the byte offset just past the close tag matching an already
/// consumed `<name ...>`; unterminated elements run to the end of input.
fn skip_element_body(s: &str, mut i: usize, name: &str) -> usize {
    let lower = s.to_ascii_lowercase();
    let open = format!("<{name}");
    let close = format!("</{name}");
    let mut depth = 1usize;
    while i < s.len() {
        let rest = &lower[i..];
        let next_open = rest.find(&open);
        let next_close = rest.find(&close);
        match (next_open, next_close) {
            (_, None) => return s.len(),
            (Some(o), Some(c)) if o < c => {
                let after = rest.as_bytes().get(o + open.len()).copied();
                if matches!(after, Some(b'>' | b' ' | b'\t' | b'/')) {
                    depth += 1;
                }
                i += o + open.len();
            }
            (_, Some(c)) => {
                let after = rest.as_bytes().get(c + close.len()).copied();
                if !matches!(after, Some(b'>' | b' ' | b'\t' | b'\n') | None) {
                    i += c + close.len();
                    continue;
                }
                let end = rest[c..].find('>').map(|e| c + e + 1).unwrap_or(rest.len());
                i += end;
                depth -= 1;
                if depth == 0 {
                    return i;
                }
            }
        }
    }
    s.len()
}

fn decode_entities(s: &str) -> String {
    let mut text = s.to_string();
    while ENTITY.is_match(&text) {
        text = ENTITY
            .replace_all(&text, |caps: &Captures<'_>| {
                match caps[1].to_ascii_lowercase().as_str() {
                    "amp" => "&",
                    "quot" => "\"",
                    "apos" | "#39" => "'",
                    "nbsp" | "lt" | "gt" => " ",
                    _ => "",
                }
                .to_string()
            })
            .into_owned();
    }
    text
}

/// Splits `WhitePride` into `White Pride` and `USAFirst` into `USA First`.
pub fn split_camel_case(word: &str) -> String {
    let chars: Vec<char> = word.chars().collect();
    let mut out = String::with_capacity(word.len() + 4);
    for (i, &c) in chars.iter().enumerate() {
        if i > 0 && c.is_ascii_uppercase() {
            let prev = chars[i - 1];
            let next_lower = chars.get(i + 1).is_some_and(|n| n.is_ascii_lowercase());
            if prev.is_ascii_lowercase() || prev.is_ascii_digit() || (prev.is_ascii_uppercase() && next_lower) {
                out.push(' ');
            }
        }
        out.push(c);
    }
    out
}

/// Replaces any run of one character longer than `max` by `max` copies.
pub fn collapse_repeats(s: &str, max: usize) -> String {
    let mut out = String::with_capacity(s.len());
    let mut prev = None;
    let mut run = 0;
    for c in s.chars() {
        if Some(c) == prev {
            run += 1;
        } else {
            prev = Some(c);
            run = 1;
        }
        if run <= max {
            out.push(c);
        }
    }
    out
}

pub const SEGMENT_DELIMITERS: [char; 4] = ['.', '!', '?', ';'];

/// Splits a cleaned document at '.', '!', '?' and ';'. Fragments are trimmed
/// and lowercased; empty fragments are discarded.
pub fn segment_document(doc: &CleanDocument) -> Vec<Segment> {
    let mut segments = Vec::new();
    let text = &doc.cleaned_text;
    let mut start = 0;
    let push = |fragment: &str, question: bool, segments: &mut Vec<Segment>| {
        let trimmed = fragment.trim();
        if trimmed.is_empty() {
            return;
        }
        let index = segments.len();
        let text = trimmed.to_lowercase();
        segments.push(Segment {
            segment_id: segment_id(&doc.doc_id, index),
            doc_id: doc.doc_id.clone(),
            index_in_doc: index,
            token_count: tokenize(&text).len(),
            text,
            source: doc.source,
            question,
        });
    };
    for (i, c) in text.char_indices() {
        if SEGMENT_DELIMITERS.contains(&c) {
            push(&text[start..i], c == '?', &mut segments);
            start = i + c.len_utf8();
        }
    }
    push(&text[start..], false, &mut segments);
    segments
}

/// Word tokens of a segment: maximal runs of ASCII letters and digits.
pub fn tokenize(text: &str) -> Vec<&str> {
    text.split(|c: char| !c.is_ascii_alphanumeric()).filter(|t| !t.is_empty()).collect()
}

/// Cleans and segments a corpus, rejecting duplicate document ids.
pub fn preprocess(docs: &[RawDocument]) -> Result<(Vec<CleanDocument>, Vec<Segment>)> {
    let mut seen = HashSet::with_capacity(docs.len());
    for (i, d) in docs.iter().enumerate() {
        if !seen.insert(d.doc_id.as_str()) {
            return Err(Error::parse("corpus", i + 1, format!("duplicate doc_id `{}`", d.doc_id)));
        }
    }
    let cleaned: Vec<CleanDocument> = docs.par_iter().map(CleanDocument::from_raw).collect();
    let segments = cleaned.par_iter().flat_map_iter(segment_document).collect();
    Ok((cleaned, segments))
}

/// One row of the before/after character table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReductionRow {
    pub source: Source,
    pub unprocessed: u64,
    pub processed: u64,
}

impl ReductionRow {
    pub fn removed_fraction(&self) -> f64 {
        if self.unprocessed == 0 {
            return 0.0;
        }
        self.unprocessed.saturating_sub(self.processed) as f64 / self.unprocessed as f64
    }

    /// Removed share as a percentage with one decimal, e.g. `44.2%`.
    pub fn removed_display(&self) -> String {
        format!("{:.1}%", self.removed_fraction() * 100.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ReportLine<'a> {
    source: Source,
    unprocessed: u64,
    processed: u64,
    removed: &'a str,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ReductionTable {
    pub rows: Vec<ReductionRow>,
}

impl ReductionTable {
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for row in &self.rows {
            let removed = row.removed_display();
            let line = ReportLine {
                source: row.source,
                unprocessed: row.unprocessed,
                processed: row.processed,
                removed: &removed,
            };
            out.push_str(&serde_json::to_string(&line).expect("report rows serialize"));
            out.push('\n');
        }
        out
    }
}

impl fmt::Display for ReductionTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<14} {:>14} {:>14} {:>8}", "dataset", "unprocessed", "processed", "removed")?;
        for r in &self.rows {
            writeln!(
                f,
                "{:<14} {:>14} {:>14} {:>8}",
                r.source.to_string(),
                r.unprocessed,
                r.processed,
                r.removed_display()
            )?;
        }
        Ok(())
    }
}

/// Per-source character totals before and after cleaning.
pub fn corpus_report(docs: &[CleanDocument]) -> ReductionTable {
    let mut by_source: BTreeMap<Source, (u64, u64)> = BTreeMap::new();
    for d in docs {
        let e = by_source.entry(d.source).or_default();
        e.0 += d.original_chars as u64;
        e.1 += d.cleaned_text.chars().count() as u64;
    }
    ReductionTable {
        rows: by_source
            .into_iter()
            .map(|(source, (unprocessed, processed))| ReductionRow {
                source,
                unprocessed,
                processed,
            })
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn doc(id: &str, text: &str) -> CleanDocument {
        CleanDocument {
            doc_id: id.into(),
            source: Source::Stormfront,
            cleaned_text: text.into(),
            removed_chars: 0,
            original_chars: text.chars().count(),
        }
    }

    fn texts(segs: &[Segment]) -> Vec<&str> {
        segs.iter().map(|s| s.text.as_str()).collect()
    }

    #[test]
    fn collapses_long_character_runs() {
        assert_eq!(clean_text("I am sooooo angry", false), "I am soo angry");
        assert_eq!(clean_text("noo", false), "noo");
        assert_eq!(clean_text("!!!!!", false), "!!");
    }

    #[test]
    fn hashtags_keep_content_split_on_case() {
        assert_eq!(clean_text("#WhitePride rally", false), "White Pride rally");
        assert_eq!(split_camel_case("USAFirst"), "USA First");
        assert_eq!(split_camel_case("lowercase"), "lowercase");
    }

    #[test]
    fn removes_handles_emoji_and_unicode() {
        assert_eq!(clean_text("@bob you \u{1F621} are na\u{EF}ve", false), "you are nave");
    }

    #[test]
    fn strips_quotations_and_tags_in_markup_mode() {
        let raw = "<div><blockquote>they <b>said</b> <blockquote>x</blockquote> this</blockquote>my reply &amp; more</div>";
        assert_eq!(clean_text(raw, true), "my reply & more");
        let vb = "<div>Quote:\nOriginally posted by someone</div>\nreal text";
        assert_eq!(clean_text(vb, true), "Originally posted by someone real text");
        let vb2 = "Quote: Originally posted by someone\nreal text";
        assert_eq!(clean_text(vb2, true), "real text");
        assert_eq!(clean_text("<div class=\"bbcode_quote\">q <div>in</div></div> kept", true), "kept");
        assert_eq!(clean_text("<q>a <quote>b</quote> c</q> d", true), "d");
    }

    #[test]
    fn markup_flag_off_keeps_angle_brackets() {
        assert_eq!(clean_text("a <b> c", false), "a <b> c");
        assert_eq!(clean_text("a <b> c", true), "a c");
    }

    #[test]
    fn splits_at_sentence_ends_and_semicolons() {
        assert_eq!(texts(&segment_document(&doc("d", "a; b. c"))), ["a", "b", "c"]);
        assert!(segment_document(&doc("d", "")).is_empty());
        let segs = segment_document(&doc("d", "we will win. they know it; we know it"));
        assert_eq!(texts(&segs), ["we will win", "they know it", "we know it"]);
        assert_eq!(segs[2].segment_id, "d:2");
        assert_eq!(segs[1].index_in_doc, 1);
    }

    #[test]
    fn segments_are_lowercased_and_flag_questions() {
        let segs = segment_document(&doc("d", "Will you fight? I will."));
        assert_eq!(texts(&segs), ["will you fight", "i will"]);
        assert!(segs[0].question);
        assert!(!segs[1].question);
        assert_eq!(segs[0].token_count, 3);
    }

    #[test]
    fn tokenizer_splits_contractions() {
        assert_eq!(
            tokenize("obama isn't a leftist, i'll"),
            ["obama", "isn", "t", "a", "leftist", "i", "ll"]
        );
    }

    #[test]
    fn report_percentages() {
        assert_eq!(corpus_report(&[]).rows.len(), 0);
        let t = corpus_report(&[doc("a", "abcdefghij")]);
        assert_eq!(t.rows[0].removed_display(), "0.0%");

        let mut a = doc("a", "abcdefgh");
        a.original_chars = 10;
        let b = doc("b", "abcdefghij");
        let t = corpus_report(&[a, b]);
        assert_eq!(t.rows.len(), 1);
        assert_eq!(t.rows[0].removed_display(), "10.0%");

        let manifesto = ReductionRow {
            source: Source::Manifesto,
            unprocessed: 98_642,
            processed: 96_782,
        };
        assert_eq!(manifesto.removed_display(), "1.9%");
    }

    #[test]
    fn duplicate_doc_ids_rejected() {
        let d = RawDocument {
            doc_id: "x".into(),
            source: Source::Other,
            text: "t".into(),
            markup: false,
        };
        assert!(preprocess(&[d.clone(), d]).is_err());
    }

    proptest! {
        #[test]
        fn cleaning_is_idempotent(s in "(?s).{0,80}", markup in any::<bool>()) {
            let once = clean_text(&s, markup);
            prop_assert_eq!(clean_text(&once, markup), once);
        }

        #[test]
        fn cleaning_idempotent_on_forum_like_text(
            s in r"(<(b|q|blockquote|div)>|</(b|q|blockquote|div)>|Quote:|\n|#[A-Za-z]{1,6}|@[a-z]{1,4}|&amp;|[a-zA-Z .;!?]{1,6}|\u{1F600}){0,20}"
        ) {
            let once = clean_text(&s, true);
            prop_assert_eq!(clean_text(&once, true), once.clone());
            prop_assert!(once.chars().all(|c| (' '..='~').contains(&c)));
        }

        #[test]
        fn segments_are_delimiter_free_ordered_and_accounted(s in "[a-z ;.!?]{0,60}") {
            let cleaned = clean_text(&s, false);
            let d = doc("p", &cleaned);
            let segs = segment_document(&d);
            let mut cursor = 0;
            let lower = cleaned.to_lowercase();
            for (i, seg) in segs.iter().enumerate() {
                prop_assert_eq!(seg.index_in_doc, i);
                prop_assert!(!seg.text.contains(SEGMENT_DELIMITERS));
                let at = lower[cursor..].find(&seg.text).map(|p| p + cursor);
                prop_assert!(at.is_some());
                cursor = at.unwrap() + seg.text.len();
            }
            let seg_chars: usize = segs.iter().map(|s| s.text.len()).sum();
            let delims = cleaned.chars().filter(|c| SEGMENT_DELIMITERS.contains(c)).count();
            let spaces: usize = cleaned
                .split(SEGMENT_DELIMITERS)
                .map(|f| f.len() - f.trim().len())
                .sum();
            prop_assert_eq!(seg_chars + delims + spaces, cleaned.len());
        }
    }
}
