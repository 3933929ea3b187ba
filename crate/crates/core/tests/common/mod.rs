#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use abintent_core::abuse::SourceSpec;
use abintent_core::config::RunConfig;
use abintent_core::corpus::{RawDocument, Segment, Source};
use abintent_core::embedding::EmbeddingTable;
use abintent_core::seed::{parse_compact, SegmentParse};
use abintent_core::sequence::ModelConfig;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;

pub fn fixture_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

pub fn read_fixture<T: DeserializeOwned>(name: &str) -> Vec<T> {
    abintent_core::io::read_jsonl(fixture_path(name)).unwrap()
}

pub fn segment(id: &str, doc: &str, index: usize, text: &str) -> Segment {
    Segment {
        segment_id: id.into(),
        doc_id: doc.into(),
        index_in_doc: index,
        text: text.into(),
        token_count: text.split_whitespace().count(),
        source: Source::Stormfront,
        question: false,
    }
}

// ---- brute-force oracles ----

fn words(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    for c in text.chars() {
        if c.is_ascii_alphanumeric() {
            cur.push(c);
        } else if !cur.is_empty() {
            out.push(std::mem::take(&mut cur));
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

pub fn brute_grams(text: &str, n_min: usize, n_max: usize) -> BTreeSet<String> {
    let w = words(text);
    let mut out = BTreeSet::new();
    for start in 0..w.len() {
        for n in n_min..=n_max {
            if start + n <= w.len() {
                out.insert(w[start..start + n].join(" "));
            }
        }
    }
    out
}

/// Rate of every gram, straight from the definition.
pub fn brute_rates(texts: &[&str], labels: &[f64], n_min: usize, n_max: usize, smoothing: Option<f64>) -> BTreeMap<String, f64> {
    let n_pos = labels.iter().filter(|&&l| l > 0.5).count() as f64;
    let n_neg = labels.iter().filter(|&&l| l < 0.5).count() as f64;
    let s = smoothing.unwrap_or(1.0 / (n_pos + n_neg));
    let sets: Vec<BTreeSet<String>> = texts.iter().map(|t| brute_grams(t, n_min, n_max)).collect();
    let all: BTreeSet<&String> = sets.iter().flatten().collect();
    all.into_iter()
        .map(|g| {
            let mut cp = 0.0;
            let mut cn = 0.0;
            for (set, &l) in sets.iter().zip(labels) {
                if set.contains(g) {
                    if l > 0.5 {
                        cp += 1.0;
                    } else if l < 0.5 {
                        cn += 1.0;
                    }
                }
            }
            let num = cp / n_pos + s;
            let den = cn / n_neg + s;
            let r = if den == 0.0 {
                if num == 0.0 {
                    1.0
                } else {
                    f64::INFINITY
                }
            } else {
                num / den
            };
            (g.clone(), r)
        })
        .collect()
}

/// Grams at or above the k-th largest and at or below the k-th smallest
/// rate, with `k = floor((100 - p) / 100 * n)`.
pub fn brute_selection(rates: &BTreeMap<String, f64>, percentile: f64) -> (BTreeSet<String>, BTreeSet<String>) {
    let n = rates.len();
    let k = (((100.0 - percentile) / 100.0) * n as f64 + 1e-9).floor() as usize;
    if k == 0 {
        return Default::default();
    }
    let mut desc: Vec<f64> = rates.values().cloned().collect();
    desc.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let hi = desc[k - 1];
    let lo = desc[n - k];
    let up = rates.iter().filter(|(_, &r)| r >= hi).map(|(g, _)| g.clone()).collect();
    let down = rates.iter().filter(|(_, &r)| r <= lo).map(|(g, _)| g.clone()).collect();
    (up, down)
}

/// Segment -> proposed value: 1 when it holds only intentful selected
/// grams, 0 when only non-intentful ones.
pub fn brute_proposals(texts: &[&str], n_min: usize, n_max: usize, up: &BTreeSet<String>, down: &BTreeSet<String>) -> BTreeMap<usize, f64> {
    let mut out = BTreeMap::new();
    for (i, t) in texts.iter().enumerate() {
        let g = brute_grams(t, n_min, n_max);
        let has_up = g.iter().any(|x| up.contains(x));
        let has_down = g.iter().any(|x| down.contains(x));
        match (has_up, has_down) {
            (true, false) => {
                out.insert(i, 1.0);
            }
            (false, true) => {
                out.insert(i, 0.0);
            }
            _ => {}
        }
    }
    out
}

/// Max over every run of `min(3, n)` consecutive segments of
/// (max abuse in the run) x (max intent in the run).
pub fn window_oracle(abuse: &[f64], intent: &[f64]) -> f64 {
    let n = abuse.len();
    if n == 0 {
        return 0.0;
    }
    let w = n.min(3);
    let mut best = 0.0f64;
    for s in 0..n {
        if s + w > n {
            break;
        }
        let mut ma = 0.0f64;
        let mut mi = 0.0f64;
        for j in s..s + w {
            ma = ma.max(abuse[j]);
            mi = mi.max(intent[j]);
        }
        best = best.max(ma * mi);
    }
    best
}

/// Resolution by replaying prefixes: the first prefix holding three equal
/// votes decides.
pub fn first_to_3_oracle(votes: &[bool]) -> Option<bool> {
    (1..=votes.len()).find_map(|j| {
        let yes = votes[..j].iter().filter(|&&v| v).count();
        let no = j - yes;
        if yes == 3 {
            Some(true)
        } else if no == 3 {
            Some(false)
        } else {
            None
        }
    })
}

/// Candidates whose distance to the seed mean is below `mult` times the
/// largest seed distance.
pub fn cone_oracle(vectors: &BTreeMap<String, Vec<f32>>, seeds: &[String], mult: f64) -> BTreeSet<String> {
    let d = vectors[&seeds[0]].len();
    let mut mean = vec![0.0f64; d];
    for s in seeds {
        for (m, &x) in mean.iter_mut().zip(&vectors[s]) {
            *m += x as f64 / seeds.len() as f64;
        }
    }
    let dist = |v: &[f32]| -> f64 { v.iter().zip(&mean).map(|(&x, m)| (x as f64 - m).powi(2)).sum::<f64>().sqrt() };
    let radius = seeds.iter().map(|s| dist(&vectors[s])).fold(0.0, f64::max);
    let mut out: BTreeSet<String> = vectors
        .iter()
        .filter(|(_, v)| dist(v) < mult * radius)
        .map(|(w, _)| w.clone())
        .collect();
    out.extend(seeds.iter().cloned());
    out
}

// ---- synthetic data ----

pub fn random_table(words: &[&str], dim: usize, seed: u64) -> EmbeddingTable {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pairs: Vec<(&str, Vec<f32>)> = words
        .iter()
        .map(|w| (*w, (0..dim).map(|_| rng.random_range(-1.0f32..1.0)).collect()))
        .collect();
    EmbeddingTable::from_pairs(dim, pairs).unwrap()
}

pub fn tiny_model(dim: usize, max_tokens: usize, seed: u64) -> ModelConfig {
    ModelConfig {
        max_tokens,
        embedding_dim: dim,
        recurrent_units: 4,
        attention_dim: 8,
        dense_units: 4,
        learning_rate: 0.02,
        max_epochs: 8,
        patience: 2,
        batch_size: 16,
        seed,
        ..ModelConfig::default()
    }
}

/// Sentences with hand-written parses for the toy corpus.
pub const TOY_SENTENCES: [(&str, &str); 12] = [
    ("i will kill you", "i/PRON/nsubj/2 will/AUX/aux/2 kill/VERB/ROOT/2 you/PRON/dobj/2"),
    (
        "we will crush them",
        "we/PRON/nsubj/2 will/AUX/aux/2 crush/VERB/ROOT/2 them/PRON/dobj/2",
    ),
    (
        "i want to attack them",
        "i/PRON/nsubj/1 want/VERB/ROOT/1 to/PART/aux/3 attack/VERB/xcomp/1 them/PRON/dobj/3",
    ),
    (
        "we need to act now",
        "we/PRON/nsubj/1 need/VERB/ROOT/1 to/PART/aux/3 act/VERB/xcomp/1 now/ADV/npadvmod/3",
    ),
    (
        "i plan to strike them",
        "i/PRON/nsubj/1 plan/VERB/ROOT/1 to/PART/aux/3 strike/VERB/xcomp/1 them/PRON/dobj/3",
    ),
    ("you will lose", "you/PRON/nsubj/2 will/AUX/aux/2 lose/VERB/ROOT/2"),
    (
        "they want to leave",
        "they/PRON/nsubj/1 want/VERB/ROOT/1 to/PART/aux/3 leave/VERB/xcomp/1",
    ),
    (
        "i will not attack",
        "i/PRON/nsubj/3 will/AUX/aux/3 not/PART/neg/3 attack/VERB/ROOT/3",
    ),
    ("i hate the rain", "i/PRON/nsubj/1 hate/VERB/ROOT/1 the/DET/det/3 rain/NOUN/dobj/1"),
    (
        "the meeting was long",
        "the/DET/det/1 meeting/NOUN/nsubj/2 was|be/AUX/ROOT/2 long/ADJ/acomp/2",
    ),
    (
        "the river flows north",
        "the/DET/det/1 river/NOUN/nsubj/2 flows|flow/VERB/ROOT/2 north/ADV/advmod/2",
    ),
    (
        "the city has a museum",
        "the/DET/det/1 city/NOUN/nsubj/2 has|have/VERB/ROOT/2 a/DET/det/4 museum/NOUN/dobj/2",
    ),
];

pub const TOY_ABUSIVE: [&str; 6] = [
    "you stupid idiot",
    "filthy scum get lost",
    "you are a worthless idiot",
    "stupid filthy savages",
    "shut up you scum",
    "worthless stupid trash",
];

pub const TOY_CLEAN: [&str; 6] = [
    "have a nice day",
    "the river is calm",
    "thanks for the help",
    "the museum opens at noon",
    "we enjoyed the meeting",
    "the rain stopped today",
];

/// Writes a toy corpus, parses, embeddings and abuse source under `dir`
/// and returns a single-threaded config over them.
pub fn write_toy_inputs(dir: &Path) -> RunConfig {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut docs = Vec::new();
    let mut parses = Vec::new();
    for d in 0..24 {
        let source = if d % 4 == 3 { Source::Wikipedia } else { Source::Stormfront };
        let picks: Vec<usize> = (0..3)
            .map(|_| {
                if source == Source::Wikipedia {
                    rng.random_range(10..12)
                } else {
                    rng.random_range(0..10)
                }
            })
            .collect();
        let doc_id = format!("doc{d:02}");
        let text: Vec<&str> = picks.iter().map(|&i| TOY_SENTENCES[i].0).collect();
        docs.push(RawDocument {
            doc_id: doc_id.clone(),
            source,
            text: text.join(". ") + ".",
            markup: false,
        });
        for (k, &i) in picks.iter().enumerate() {
            parses.push(SegmentParse {
                segment_id: format!("{doc_id}:{k}"),
                tokens: parse_compact(TOY_SENTENCES[i].1).unwrap(),
                inverted: false,
            });
        }
    }
    abintent_core::io::write_jsonl(dir.join("corpus.jsonl"), &docs).unwrap();
    abintent_core::io::write_jsonl(dir.join("parses.jsonl"), &parses).unwrap();

    let mut vocab: BTreeSet<&str> = BTreeSet::new();
    for (s, _) in TOY_SENTENCES {
        vocab.extend(s.split_whitespace());
    }
    for s in TOY_ABUSIVE.iter().chain(&TOY_CLEAN) {
        vocab.extend(s.split_whitespace());
    }
    vocab.extend(["going", "about", "planning", "have", "will", "want", "need"]);
    let vocab: Vec<&str> = vocab.into_iter().collect();
    let table = random_table(&vocab, 6, 11);
    let mut f = std::fs::File::create(dir.join("embeddings.txt")).unwrap();
    table.write(&mut f).unwrap();

    let mut csv = String::from("id,comment,toxic\n");
    for i in 0..8 {
        for (j, t) in TOY_ABUSIVE.iter().enumerate() {
            csv.push_str(&format!("a{i}_{j},{t},1\n"));
        }
        for (j, t) in TOY_CLEAN.iter().enumerate() {
            csv.push_str(&format!("c{i}_{j},{t},0\n"));
        }
    }
    std::fs::write(dir.join("abuse.csv"), csv).unwrap();

    let mut c = RunConfig::default();
    c.paths.corpus = Some(dir.join("corpus.jsonl"));
    c.paths.parses = Some(dir.join("parses.jsonl"));
    c.paths.embeddings = Some(dir.join("embeddings.txt"));
    c.paths.output = dir.join("run");
    c.ngram.percentile = 90.0;
    c.model = tiny_model(6, 8, 3);
    c.abuse.model = tiny_model(6, 8, 4);
    c.abuse.sources = vec![SourceSpec {
        name: "toy".into(),
        path: dir.join("abuse.csv"),
        format: None,
        text_field: "comment".into(),
        label_fields: vec!["toxic".into()],
        id_field: Some("id".into()),
        markup: false,
    }];
    c.bootstrap.rounds = 3;
    c.threads = Some(1);
    c
}

pub const PLANTED_INTENT: [&str; 3] = ["we will make them pay", "i am going to hunt them", "we need to burn it down"];
pub const PLANTED_CALM: [&str; 3] = [
    "the weather report says rain",
    "the old museum was quiet",
    "a history of the river valley",
];
pub const FILLER: [&str; 24] = [
    "apple", "bridge", "cloud", "desk", "engine", "forest", "garden", "harbor", "island", "jacket", "kettle", "lamp", "mirror", "needle",
    "orange", "pencil", "quilt", "rocket", "saddle", "ticket", "umbrella", "violin", "window", "yarn",
];

/// `n` segments padded with filler words. Every fifth carries a planted
/// intent phrase; the rest carry a calm phrase, or with `blank` only the
/// second of each five does and the others are filler alone. The first
/// `seeded` segments of each planted kind start locked at 1 and 0;
/// everything else starts at 0.5.
pub fn planted_corpus(n: usize, seeded: usize, blank: bool, seed: u64) -> (Vec<Segment>, Vec<abintent_core::seed::InitialLabel>) {
    use abintent_core::seed::{InitialLabel, LabelReason};
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut segs = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    let (mut pos_seen, mut neg_seen) = (0, 0);
    for i in 0..n {
        let kind = match i % 5 {
            0 => 0,
            1 => 1,
            _ if blank => 2,
            _ => 1,
        };
        let mut words: Vec<&str> = Vec::new();
        match kind {
            0 => words.extend(PLANTED_INTENT[rng.random_range(0..3)].split(' ')),
            1 => words.extend(PLANTED_CALM[rng.random_range(0..3)].split(' ')),
            _ => {}
        }
        let extra = if kind < 2 { rng.random_range(2..5) } else { rng.random_range(5..9) };
        for _ in 0..extra {
            words.push(FILLER[rng.random_range(0..FILLER.len())]);
        }
        let id = format!("p{i:03}");
        segs.push(segment(&id, &id, 0, &words.join(" ")));
        let reason = match kind {
            0 if pos_seen < seeded => {
                pos_seen += 1;
                LabelReason::TemplateMatch
            }
            1 if neg_seen < seeded => {
                neg_seen += 1;
                LabelReason::WikipediaContrast
            }
            _ => LabelReason::Undetermined,
        };
        labels.push(InitialLabel::new(&id, reason));
    }
    (segs, labels)
}

pub fn planted_kind(i: usize, blank: bool) -> Option<f64> {
    match i % 5 {
        0 => Some(1.0),
        1 => Some(0.0),
        _ if blank => None,
        _ => Some(0.0),
    }
}

pub fn planted_vocabulary() -> Vec<&'static str> {
    let mut v: BTreeSet<&str> = FILLER.iter().copied().collect();
    for p in PLANTED_INTENT.iter().chain(&PLANTED_CALM) {
        v.extend(p.split(' '));
    }
    v.into_iter().collect()
}
