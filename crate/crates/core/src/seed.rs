//! Intent-template matching over dependency parses and the initial
//! {1, 0, 0.5} labelling of segments.
//!
//! Two templates are recognised. In the short form the desire word is an
//! auxiliary of the action verb (`i will kill you`). In the long form the
//! action verb is an open clausal complement of the desire verb and carries
//! `to` as its auxiliary (`i want to leave the eu`). Both need a
//! first-person nominal subject, surface order pronoun < desire < action,
//! and optionally take a direct-object target and a noun-phrase adverbial
//! timing modifier on the action verb.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Segment, Source};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParseToken {
    pub index: usize,
    pub text: String,
    #[serde(default)]
    pub lemma: String,
    pub pos: String,
    pub head: usize,
    pub dep: String,
}

/// One line of the parse file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentParse {
    pub segment_id: String,
    pub tokens: Vec<ParseToken>,
    /// Auxiliary inversion reported by the parser (interrogative word order).
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub inverted: bool,
}

/// Checks head ranges, token numbering and the single-root requirement.
pub fn validate_parse(tokens: &[ParseToken]) -> std::result::Result<(), String> {
    let mut roots = 0;
    for (i, t) in tokens.iter().enumerate() {
        if t.index != i {
            return Err(format!("token {i} carries index {}", t.index));
        }
        if t.head >= tokens.len() {
            return Err(format!("token {i} has head {} out of range", t.head));
        }
        if t.head == i {
            roots += 1;
        }
    }
    if !tokens.is_empty() && roots != 1 {
        return Err(format!("expected exactly one root, found {roots}"));
    }
    Ok(())
}

/// Builds tokens from a compact notation, one token per whitespace-separated
/// item: `text[|lemma]/POS/dep/head`, e.g. `i/PRON/nsubj/2 'll|will/AUX/aux/2`.
pub fn parse_compact(spec: &str) -> Result<Vec<ParseToken>> {
    spec.split_whitespace()
        .enumerate()
        .map(|(index, item)| {
            let fields: Vec<&str> = item.split('/').collect();
            let [word, pos, dep, head] = fields.as_slice() else {
                return Err(Error::parse("compact parse", index + 1, format!("bad token `{item}`")));
            };
            let (text, lemma) = word.split_once('|').unwrap_or((word, word));
            let head = head
                .parse()
                .map_err(|_| Error::parse("compact parse", index + 1, format!("bad head in `{item}`")))?;
            Ok(ParseToken {
                index,
                text: text.to_string(),
                lemma: lemma.to_lowercase(),
                pos: pos.to_string(),
                head,
                dep: dep.to_string(),
            })
        })
        .collect()
}

pub fn read_parses(path: impl AsRef<Path>) -> Result<HashMap<String, SegmentParse>> {
    let parses: Vec<SegmentParse> = crate::io::read_jsonl(path)?;
    Ok(parses.into_iter().map(|p| (p.segment_id.clone(), p)).collect())
}

/// Dependency roles the templates are written against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    NominalSubject,
    Auxiliary,
    DirectObject,
    OpenClausalComplement,
    NpAdverbialModifier,
    Negation,
}

/// Maps the parser's dependency labels onto template roles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DepLabelMap(pub BTreeMap<String, Role>);

impl Default for DepLabelMap {
    fn default() -> Self {
        let pairs = [
            ("nsubj", Role::NominalSubject),
            ("aux", Role::Auxiliary),
            ("dobj", Role::DirectObject),
            ("obj", Role::DirectObject),
            ("xcomp", Role::OpenClausalComplement),
            ("npadvmod", Role::NpAdverbialModifier),
            ("obl:tmod", Role::NpAdverbialModifier),
            ("nmod:tmod", Role::NpAdverbialModifier),
            ("neg", Role::Negation),
        ];
        DepLabelMap(pairs.into_iter().map(|(k, v)| (k.to_string(), v)).collect())
    }
}

impl DepLabelMap {
    pub fn role(&self, dep: &str) -> Option<Role> {
        self.0.get(dep).or_else(|| self.0.get(&dep.to_ascii_lowercase())).copied()
    }
}

/// Words admitted to the desire slot.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DesireVerbs {
    /// Any verb found in the desire slot; used before the verb set is refined.
    Any,
    Set(BTreeSet<String>),
}

impl DesireVerbs {
    pub fn from_words<I: IntoIterator<Item = S>, S: Into<String>>(words: I) -> Self {
        DesireVerbs::Set(words.into_iter().map(Into::into).collect())
    }
}

const FIRST_PERSON: [&str; 2] = ["i", "we"];
const SECOND_THIRD_PERSON: [&str; 9] = ["you", "u", "ya", "ye", "he", "she", "it", "they", "thou"];
const NEGATORS: [&str; 5] = ["not", "n't", "nt", "never", "t"];
/// Modal forms that always occupy the short-form desire slot.
const SHORT_FORM_MODALS: [&str; 2] = ["will", "going"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateForm {
    Short,
    Long,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TemplateMatch {
    pub form: TemplateForm,
    pub pronoun_idx: usize,
    pub desire_idx: usize,
    pub action_idx: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub to_idx: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_idx: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timing_idx: Option<usize>,
}

impl TemplateMatch {
    fn order_key(&self) -> (usize, usize, usize) {
        (self.pronoun_idx, self.desire_idx, self.action_idx)
    }
}

/// A structural match together with whether its verbs carry a negation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Candidate {
    pub matched: TemplateMatch,
    pub negated: bool,
}

fn lower(s: &str) -> String {
    s.to_lowercase()
}

fn normalise_desire(w: &str) -> String {
    match w {
        "'ll" | "ll" | "wo" => "will".to_string(),
        "gonna" => "going".to_string(),
        _ => w.to_string(),
    }
}

/// Forms checked against the desire slot: the surface word and the lemma,
/// with contractions mapped onto full verbs (`'ll`, `ll`, `wo` -> `will`;
/// `gonna` -> `going`). Seeds such as `going` and `planning` are surface
/// forms whose lemmas differ.
fn desire_forms(t: &ParseToken) -> [String; 2] {
    let text = normalise_desire(&lower(&t.text));
    let lemma = if t.lemma.is_empty() || t.lemma.starts_with('-') {
        text.clone()
    } else {
        normalise_desire(&lower(&t.lemma))
    };
    [text, lemma]
}

fn is_verbal(t: &ParseToken) -> bool {
    matches!(t.pos.as_str(), "VERB" | "AUX")
}

fn is_to(t: &ParseToken) -> bool {
    t.text.eq_ignore_ascii_case("to")
}

#[derive(Debug, Clone, Default)]
pub struct TemplateMatcher {
    pub labels: DepLabelMap,
}

impl TemplateMatcher {
    pub fn new(labels: DepLabelMap) -> Self {
        TemplateMatcher { labels }
    }

    fn role(&self, t: &ParseToken) -> Option<Role> {
        self.labels.role(&t.dep)
    }

    fn children<'a>(&'a self, tokens: &'a [ParseToken], head: usize) -> impl Iterator<Item = &'a ParseToken> + 'a {
        tokens.iter().filter(move |t| t.head == head && t.index != head)
    }

    fn child_with_role(&self, tokens: &[ParseToken], head: usize, role: Role) -> Option<usize> {
        self.children(tokens, head).find(|t| self.role(t) == Some(role)).map(|t| t.index)
    }

    fn is_negator(&self, t: &ParseToken) -> bool {
        self.role(t) == Some(Role::Negation) || (matches!(t.dep.as_str(), "advmod" | "neg") && NEGATORS.contains(&lower(&t.text).as_str()))
    }

    fn negated(&self, tokens: &[ParseToken], verbs: &[usize]) -> bool {
        verbs.iter().any(|&v| self.children(tokens, v).any(|c| self.is_negator(c)))
    }

    fn first_person_subjects(&self, tokens: &[ParseToken], head: usize) -> Vec<usize> {
        self.children(tokens, head)
            .filter(|t| self.role(t) == Some(Role::NominalSubject) && FIRST_PERSON.contains(&lower(&t.text).as_str()))
            .map(|t| t.index)
            .collect()
    }

    fn admits_short_desire(&self, t: &ParseToken, desire: &DesireVerbs) -> bool {
        if is_to(t) || self.is_negator(t) {
            return false;
        }
        let forms = desire_forms(t);
        if forms.iter().any(|f| SHORT_FORM_MODALS.contains(&f.as_str())) {
            return true;
        }
        match desire {
            DesireVerbs::Any => is_verbal(t),
            DesireVerbs::Set(set) => forms.iter().any(|f| set.contains(f)),
        }
    }

    fn admits_long_desire(&self, t: &ParseToken, desire: &DesireVerbs) -> bool {
        match desire {
            DesireVerbs::Any => is_verbal(t),
            DesireVerbs::Set(set) => desire_forms(t).iter().any(|f| set.contains(f)),
        }
    }

    /// Every structural template instance, negated or not, in left-to-right order.
    pub fn candidates(&self, tokens: &[ParseToken], desire: &DesireVerbs) -> Vec<Candidate> {
        let mut out = Vec::new();
        for action in tokens.iter().filter(|t| is_verbal(t)) {
            let a = action.index;
            let target_idx = self.child_with_role(tokens, a, Role::DirectObject);
            let timing_idx = self.child_with_role(tokens, a, Role::NpAdverbialModifier);

            // short form: pronoun and desire both hang off the action verb
            for d in self.children(tokens, a) {
                if self.role(d) != Some(Role::Auxiliary) || !self.admits_short_desire(d, desire) {
                    continue;
                }
                for p in self.first_person_subjects(tokens, a) {
                    if p < d.index && d.index < a {
                        out.push(Candidate {
                            matched: TemplateMatch {
                                form: TemplateForm::Short,
                                pronoun_idx: p,
                                desire_idx: d.index,
                                action_idx: a,
                                to_idx: None,
                                target_idx,
                                timing_idx,
                            },
                            negated: self.negated(tokens, &[d.index, a]),
                        });
                    }
                }
            }

            // long form: action is the open clausal complement of the desire verb
            if self.role(action) != Some(Role::OpenClausalComplement) || action.head == a {
                continue;
            }
            let d = &tokens[action.head];
            if !self.admits_long_desire(d, desire) {
                continue;
            }
            let Some(to) = self
                .children(tokens, a)
                .find(|t| is_to(t) && self.role(t) == Some(Role::Auxiliary))
                .map(|t| t.index)
            else {
                continue;
            };
            let mut pronouns = self.first_person_subjects(tokens, a);
            pronouns.extend(self.first_person_subjects(tokens, d.index));
            for p in pronouns {
                if p < d.index && d.index < to && to < a {
                    out.push(Candidate {
                        matched: TemplateMatch {
                            form: TemplateForm::Long,
                            pronoun_idx: p,
                            desire_idx: d.index,
                            action_idx: a,
                            to_idx: Some(to),
                            target_idx,
                            timing_idx,
                        },
                        negated: self.negated(tokens, &[d.index, a]),
                    });
                }
            }
        }
        out.sort_by_key(|c| c.matched.order_key());
        out.dedup();
        out
    }

    /// The leftmost non-negated template instance.
    pub fn match_template(&self, tokens: &[ParseToken], desire: &DesireVerbs) -> Option<TemplateMatch> {
        self.candidates(tokens, desire).into_iter().find(|c| !c.negated).map(|c| c.matched)
    }

    /// Tokens sitting in a desire slot: admitted auxiliaries of a verb, or
    /// admitted verbs governing an open clausal complement.
    fn desire_slots(&self, tokens: &[ParseToken], desire: &DesireVerbs) -> Vec<usize> {
        tokens
            .iter()
            .filter(|t| {
                let aux_of_verb = self.role(t) == Some(Role::Auxiliary)
                    && t.head != t.index
                    && is_verbal(&tokens[t.head])
                    && self.admits_short_desire(t, desire);
                let governs_xcomp = self
                    .children(tokens, t.index)
                    .any(|c| self.role(c) == Some(Role::OpenClausalComplement))
                    && self.admits_long_desire(t, desire);
                aux_of_verb || governs_xcomp
            })
            .map(|t| t.index)
            .collect()
    }

    /// Whether a desire slot's subject is a second- or third-person pronoun.
    fn non_first_person_subject(&self, tokens: &[ParseToken], slots: &[usize]) -> bool {
        slots.iter().any(|&d| {
            let mut heads = vec![d];
            if self.role(&tokens[d]) == Some(Role::Auxiliary) {
                heads.push(tokens[d].head);
            }
            heads.extend(
                self.children(tokens, d)
                    .filter(|c| self.role(c) == Some(Role::OpenClausalComplement))
                    .map(|c| c.index),
            );
            heads.iter().any(|&h| {
                self.children(tokens, h)
                    .any(|c| self.role(c) == Some(Role::NominalSubject) && SECOND_THIRD_PERSON.contains(&lower(&c.text).as_str()))
            })
        })
    }

    pub fn initial_label(&self, segment: &Segment, parse: Option<&SegmentParse>, desire: &DesireVerbs) -> InitialLabel {
        let label = |reason| InitialLabel::new(&segment.segment_id, reason);
        if segment.source == Source::Wikipedia {
            return label(LabelReason::WikipediaContrast);
        }
        let Some(parse) = parse else {
            log::warn!("segment {} has no parse; labelled undetermined", segment.segment_id);
            return label(LabelReason::Undetermined);
        };
        if let Err(e) = validate_parse(&parse.tokens) {
            log::warn!("segment {} has an invalid parse ({e}); labelled undetermined", segment.segment_id);
            return label(LabelReason::Undetermined);
        }
        let tokens = &parse.tokens;
        let slots = self.desire_slots(tokens, desire);
        if slots.is_empty() {
            return label(LabelReason::Undetermined);
        }
        if segment.question || parse.inverted {
            return label(LabelReason::Question);
        }
        let candidates = self.candidates(tokens, desire);
        if candidates.iter().any(|c| !c.negated) {
            return label(LabelReason::TemplateMatch);
        }
        if !candidates.is_empty() {
            return label(LabelReason::Negation);
        }
        if self.non_first_person_subject(tokens, &slots) {
            return label(LabelReason::SecondOrThirdPerson);
        }
        label(LabelReason::Undetermined)
    }
}

/// Convenience wrapper using the default dependency-label map.
pub fn match_template(tokens: &[ParseToken], desire: &DesireVerbs) -> Option<TemplateMatch> {
    TemplateMatcher::default().match_template(tokens, desire)
}

/// Why a segment received its initial label; the reason fixes the value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelReason {
    TemplateMatch,
    Negation,
    Question,
    SecondOrThirdPerson,
    WikipediaContrast,
    Undetermined,
}

impl LabelReason {
    pub fn value(self) -> f64 {
        match self {
            LabelReason::TemplateMatch => 1.0,
            LabelReason::Undetermined => 0.5,
            _ => 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitialLabel {
    pub segment_id: String,
    pub value: f64,
    pub reason: LabelReason,
}

impl InitialLabel {
    pub fn new(segment_id: &str, reason: LabelReason) -> Self {
        InitialLabel {
            segment_id: segment_id.to_string(),
            value: reason.value(),
            reason,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LabelDistribution {
    pub total: usize,
    pub intentful: usize,
    pub non_intentful: usize,
    pub undetermined: usize,
    pub by_reason: BTreeMap<LabelReason, usize>,
}

impl LabelDistribution {
    pub fn from_labels(labels: &[InitialLabel]) -> Self {
        let mut d = LabelDistribution {
            total: labels.len(),
            ..Default::default()
        };
        for l in labels {
            *d.by_reason.entry(l.reason).or_default() += 1;
            match l.value {
                1.0 => d.intentful += 1,
                0.0 => d.non_intentful += 1,
                _ => d.undetermined += 1,
            }
        }
        d
    }

    fn frac(&self, n: usize) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            n as f64 / self.total as f64
        }
    }

    pub fn intentful_fraction(&self) -> f64 {
        self.frac(self.intentful)
    }

    pub fn non_intentful_fraction(&self) -> f64 {
        self.frac(self.non_intentful)
    }

    pub fn undetermined_fraction(&self) -> f64 {
        self.frac(self.undetermined)
    }
}

/// Labels every segment, in segment order, and summarises the classes.
pub fn label_corpus(
    matcher: &TemplateMatcher,
    segments: &[Segment],
    parses: &HashMap<String, SegmentParse>,
    desire: &DesireVerbs,
) -> (Vec<InitialLabel>, LabelDistribution) {
    let labels: Vec<InitialLabel> = segments
        .par_iter()
        .map(|s| matcher.initial_label(s, parses.get(&s.segment_id), desire))
        .collect();
    let dist = LabelDistribution::from_labels(&labels);
    (labels, dist)
}

/// Share of previously intentful segments that are still intentful. `None`
/// when there were no previous positives.
pub fn relabel_retention(old: &[InitialLabel], new: &[InitialLabel]) -> Result<Option<f64>> {
    let new_by_id: HashMap<&str, f64> = new.iter().map(|l| (l.segment_id.as_str(), l.value)).collect();
    let mut before = 0usize;
    let mut kept = 0usize;
    for l in old.iter().filter(|l| l.value == 1.0) {
        before += 1;
        match new_by_id.get(l.segment_id.as_str()) {
            Some(&1.0) => kept += 1,
            Some(_) => {}
            None => {
                return Err(Error::Config(format!(
                    "segment `{}` is missing from the new label map",
                    l.segment_id
                )))
            }
        }
    }
    Ok((before > 0).then(|| kept as f64 / before as f64))
}

/// Words tagged as verbs at least once, by text and by lemma.
pub fn verb_vocabulary<'a>(parses: impl IntoIterator<Item = &'a SegmentParse>) -> HashSet<String> {
    let mut out = HashSet::new();
    for p in parses {
        for t in p.tokens.iter().filter(|t| is_verbal(t)) {
            out.insert(lower(&t.text));
            if !t.lemma.is_empty() {
                out.insert(lower(&t.lemma));
            }
        }
    }
    out
}
