//! Word-vector table, cosine queries, and desire-verb expansion around the
//! seed-set mean.

use std::borrow::Cow;
use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const DEFAULT_DIMENSION: usize = 200;

pub const DEFAULT_SEED_VERBS: [&str; 7] = ["want", "need", "going", "have", "about", "planning", "will"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OovPolicy {
    #[default]
    ZeroVector,
    SubwordFallbackExternal,
}

/// Supplies vectors for out-of-vocabulary words, e.g. from a subword model.
pub trait SubwordFallback: Send + Sync {
    fn vector(&self, word: &str) -> Option<Vec<f32>>;
}

#[derive(Clone)]
pub struct EmbeddingTable {
    dimension: usize,
    words: Vec<String>,
    index: HashMap<String, usize>,
    data: Vec<f32>,
    oov_policy: OovPolicy,
    fallback: Option<Arc<dyn SubwordFallback>>,
}

impl fmt::Debug for EmbeddingTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("EmbeddingTable")
            .field("dimension", &self.dimension)
            .field("words", &self.words.len())
            .field("oov_policy", &self.oov_policy)
            .finish()
    }
}

/// A parsed table plus non-fatal findings from the file.
#[derive(Debug)]
pub struct Loaded {
    pub table: EmbeddingTable,
    pub warnings: Vec<String>,
}

impl EmbeddingTable {
    pub fn new(dimension: usize) -> Result<Self> {
        if dimension == 0 {
            return Err(Error::Config("embedding dimension must be positive".into()));
        }
        Ok(EmbeddingTable {
            dimension,
            words: Vec::new(),
            index: HashMap::new(),
            data: Vec::new(),
            oov_policy: OovPolicy::ZeroVector,
            fallback: None,
        })
    }

    /// Inserts or replaces a word. Returns `true` when the word was already present.
    pub fn insert(&mut self, word: &str, vector: &[f32]) -> Result<bool> {
        if vector.len() != self.dimension {
            return Err(Error::Config(format!(
                "vector for `{word}` has {} components, table dimension is {}",
                vector.len(),
                self.dimension
            )));
        }
        if let Some(&i) = self.index.get(word) {
            self.data[i * self.dimension..(i + 1) * self.dimension].copy_from_slice(vector);
            return Ok(true);
        }
        self.index.insert(word.to_string(), self.words.len());
        self.words.push(word.to_string());
        self.data.extend_from_slice(vector);
        Ok(false)
    }

    pub fn from_pairs<'a>(dimension: usize, pairs: impl IntoIterator<Item = (&'a str, Vec<f32>)>) -> Result<Self> {
        let mut t = Self::new(dimension)?;
        for (w, v) in pairs {
            t.insert(w, &v)?;
        }
        Ok(t)
    }

    pub fn with_oov_policy(mut self, policy: OovPolicy) -> Self {
        self.oov_policy = policy;
        self
    }

    pub fn with_fallback(mut self, fallback: Arc<dyn SubwordFallback>) -> Self {
        self.oov_policy = OovPolicy::SubwordFallbackExternal;
        self.fallback = Some(fallback);
        self
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn contains(&self, word: &str) -> bool {
        self.index.contains_key(word)
    }

    /// The stored vector, without applying the OOV policy.
    pub fn get(&self, word: &str) -> Option<&[f32]> {
        self.index.get(word).map(|&i| self.row(i))
    }

    fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dimension..(i + 1) * self.dimension]
    }

    /// Looks a word up, falling back per the OOV policy.
    pub fn resolve(&self, word: &str) -> Result<Cow<'_, [f32]>> {
        if let Some(v) = self.get(word) {
            return Ok(Cow::Borrowed(v));
        }
        match self.oov_policy {
            OovPolicy::ZeroVector => Ok(Cow::Owned(vec![0.0; self.dimension])),
            OovPolicy::SubwordFallbackExternal => self
                .fallback
                .as_ref()
                .and_then(|f| f.vector(word))
                .filter(|v| v.len() == self.dimension)
                .map(Cow::Owned)
                .ok_or_else(|| Error::Unresolvable(word.to_string())),
        }
    }

    /// Parses the text interchange format: a `<vocab_size> <dimension>` header
    /// followed by one `<word> <f1> ... <fd>` line per entry.
    pub fn read(reader: impl BufRead, origin: &str) -> Result<Loaded> {
        let mut lines = reader.lines().enumerate();
        let header = loop {
            match lines.next() {
                None => return Err(Error::parse(origin, 1, "missing header")),
                Some((_, line)) => {
                    let line = line?;
                    if !line.trim().is_empty() {
                        break line;
                    }
                }
            }
        };
        let fields: Vec<&str> = header.split_whitespace().collect();
        let (declared, dimension) = match fields.as_slice() {
            [v, d] => match (v.parse::<usize>(), d.parse::<usize>()) {
                (Ok(v), Ok(d)) if d > 0 => (v, d),
                _ => return Err(Error::parse(origin, 1, format!("malformed header `{header}`"))),
            },
            _ => return Err(Error::parse(origin, 1, format!("malformed header `{header}`"))),
        };

        let mut table = EmbeddingTable::new(dimension)?;
        let mut warnings = Vec::new();
        let mut buf = Vec::with_capacity(dimension);
        for (i, line) in lines {
            let line = line?;
            let lineno = i + 1;
            let mut parts = line.split_whitespace();
            let Some(word) = parts.next() else { continue };
            buf.clear();
            for p in parts {
                let x: f32 = p
                    .parse()
                    .map_err(|_| Error::parse(origin, lineno, format!("bad component `{p}`")))?;
                buf.push(x);
            }
            if buf.len() != dimension {
                return Err(Error::parse(
                    origin,
                    lineno,
                    format!("dimension mismatch: expected {dimension} components, found {}", buf.len()),
                ));
            }
            if table.insert(word, &buf)? {
                warnings.push(format!("{origin}:{lineno}: duplicate word `{word}`, last entry wins"));
            }
        }
        if table.len() != declared {
            warnings.push(format!("{origin}: header declares {declared} words, file holds {}", table.len()));
        }
        Ok(Loaded { table, warnings })
    }

    pub fn write(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "{} {}", self.len(), self.dimension)?;
        for (i, word) in self.words.iter().enumerate() {
            write!(w, "{word}")?;
            for x in self.row(i) {
                write!(w, " {x}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

pub fn load_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingTable> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::Artifact {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let loaded = EmbeddingTable::read(BufReader::new(file), &path.display().to_string())?;
    for w in &loaded.warnings {
        log::warn!("{w}");
    }
    Ok(loaded.table)
}

/// Cosine of two vectors; zero-norm input yields 0.
pub fn cosine(a: &[f32], b: &[f32]) -> f64 {
    let (mut dot, mut na, mut nb) = (0.0f64, 0.0f64, 0.0f64);
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (x as f64, y as f64);
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0)
}

pub fn cosine_similarity(w1: &str, w2: &str, table: &EmbeddingTable) -> Result<f64> {
    let a = table.resolve(w1)?;
    let b = table.resolve(w2)?;
    let zero = |v: &[f32]| v.iter().all(|&x| x == 0.0);
    if zero(&a) || zero(&b) {
        log::warn!("zero vector in similarity({w1}, {w2}); similarity defined as 0");
        return Ok(0.0);
    }
    Ok(cosine(&a, &b))
}

/// Top-`k` words by cosine to `word`, excluding the word itself. Ties go to
/// the lexicographically smaller word; `k` beyond the vocabulary returns the
/// full ranking.
pub fn nearest_neighbors(word: &str, k: usize, table: &EmbeddingTable) -> Result<Vec<(String, f64)>> {
    if k == 0 {
        return Err(Error::Config("k must be at least 1".into()));
    }
    let query = table.resolve(word)?;
    let mut scored: Vec<(&str, f64)> = table
        .words
        .par_iter()
        .enumerate()
        .filter(|(_, w)| w.as_str() != word)
        .map(|(i, w)| (w.as_str(), cosine(&query, table.row(i))))
        .collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    scored.truncate(k);
    Ok(scored.into_iter().map(|(w, s)| (w.to_string(), s)).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConeMetric {
    #[default]
    EuclideanToMean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConeConfig {
    pub seeds: Vec<String>,
    pub distance_multiplier: f64,
    pub metric: ConeMetric,
}

impl Default for ConeConfig {
    fn default() -> Self {
        ConeConfig {
            seeds: DEFAULT_SEED_VERBS.iter().map(|s| s.to_string()).collect(),
            distance_multiplier: 2.0,
            metric: ConeMetric::EuclideanToMean,
        }
    }
}

impl ConeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("cone seeds must be non-empty".into()));
        }
        if !(self.distance_multiplier.is_finite() && self.distance_multiplier > 0.0) {
            return Err(Error::Config(format!(
                "distance_multiplier must be positive, got {}",
                self.distance_multiplier
            )));
        }
        Ok(())
    }
}

/// The admission region around the seed mean: radius is the largest
/// seed-to-mean distance, and candidates strictly inside
/// `multiplier * radius` are admitted.
#[derive(Debug, Clone, PartialEq)]
pub struct SeedCone {
    pub mean: Vec<f64>,
    pub radius: f64,
    pub threshold: f64,
}

impl SeedCone {
    pub fn fit(config: &ConeConfig, table: &EmbeddingTable) -> Result<Self> {
        config.validate()?;
        let dim = table.dimension();
        let mut seed_vecs = Vec::with_capacity(config.seeds.len());
        for s in &config.seeds {
            seed_vecs.push(table.get(s).ok_or_else(|| Error::MissingSeed(s.clone()))?);
        }
        let mut mean = vec![0.0f64; dim];
        for v in &seed_vecs {
            for (m, &x) in mean.iter_mut().zip(v.iter()) {
                *m += x as f64;
            }
        }
        let n = seed_vecs.len() as f64;
        mean.iter_mut().for_each(|m| *m /= n);
        let radius = seed_vecs.iter().map(|v| euclidean_to(&mean, v)).fold(0.0f64, f64::max);
        Ok(SeedCone {
            mean,
            radius,
            threshold: config.distance_multiplier * radius,
        })
    }

    pub fn distance(&self, v: &[f32]) -> f64 {
        euclidean_to(&self.mean, v)
    }

    pub fn admits(&self, v: &[f32]) -> bool {
        self.distance(v) < self.threshold
    }
}

fn euclidean_to(mean: &[f64], v: &[f32]) -> f64 {
    mean.iter()
        .zip(v)
        .map(|(&m, &x)| {
            let d = x as f64 - m;
            d * d
        })
        .sum::<f64>()
        .sqrt()
}

/// Seeds plus every filtered candidate inside the seed cone.
pub fn expand_desire_verbs(
    config: &ConeConfig,
    table: &EmbeddingTable,
    candidate_filter: impl Fn(&str) -> bool + Sync,
) -> Result<BTreeSet<String>> {
    let cone = SeedCone::fit(config, table)?;
    let mut out: BTreeSet<String> = table
        .words
        .par_iter()
        .enumerate()
        .filter(|(i, w)| candidate_filter(w) && cone.admits(table.row(*i)))
        .map(|(_, w)| w.clone())
        .collect();
    out.extend(config.seeds.iter().cloned());
    Ok(out)
}

/// Minimal skip-gram with negative sampling, for building tables over toy
/// corpora. Production tables are trained externally and loaded.
#[derive(Debug, Clone)]
pub struct SkipGramTrainer {
    pub dimension: usize,
    pub window: usize,
    pub negatives: usize,
    pub epochs: usize,
    pub learning_rate: f32,
    pub min_count: usize,
    pub seed: u64,
}

impl Default for SkipGramTrainer {
    fn default() -> Self {
        SkipGramTrainer {
            dimension: 16,
            window: 3,
            negatives: 5,
            epochs: 20,
            learning_rate: 0.05,
            min_count: 1,
            seed: 7,
        }
    }
}

impl SkipGramTrainer {
    pub fn train<S: AsRef<str>>(&self, sentences: &[Vec<S>]) -> Result<EmbeddingTable> {
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for s in sentences {
            for w in s {
                *counts.entry(w.as_ref()).or_default() += 1;
            }
        }
        let mut vocab: Vec<&str> = counts.iter().filter(|(_, &c)| c >= self.min_count).map(|(&w, _)| w).collect();
        vocab.sort_unstable();
        let ids: HashMap<&str, usize> = vocab.iter().enumerate().map(|(i, &w)| (w, i)).collect();
        let dim = self.dimension;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut input: Vec<f32> = (0..vocab.len() * dim).map(|_| (rng.random::<f32>() - 0.5) / dim as f32).collect();
        let mut output = vec![0.0f32; vocab.len() * dim];

        // unigram^0.75 sampling table
        let mut cumulative = Vec::with_capacity(vocab.len());
        let mut total = 0.0f64;
        for w in &vocab {
            total += (counts[w] as f64).powf(0.75);
            cumulative.push(total);
        }
        let sample_negative = |rng: &mut ChaCha8Rng| {
            let x = rng.random::<f64>() * total;
            cumulative.partition_point(|&c| c < x).min(vocab.len() - 1)
        };

        let encoded: Vec<Vec<usize>> = sentences
            .iter()
            .map(|s| s.iter().filter_map(|w| ids.get(w.as_ref()).copied()).collect())
            .collect();
        let mut grad = vec![0.0f32; dim];
        for epoch in 0..self.epochs {
            let lr = self.learning_rate * (1.0 - epoch as f32 / self.epochs as f32).max(0.05);
            for sent in &encoded {
                for (pos, &center) in sent.iter().enumerate() {
                    let lo = pos.saturating_sub(self.window);
                    let hi = (pos + self.window + 1).min(sent.len());
                    for (ctx_pos, &context) in sent.iter().enumerate().take(hi).skip(lo) {
                        if ctx_pos == pos {
                            continue;
                        }
                        grad.iter_mut().for_each(|g| *g = 0.0);
                        for n in 0..=self.negatives {
                            let (target, label) = if n == 0 {
                                (context, 1.0f32)
                            } else {
                                let t = sample_negative(&mut rng);
                                if t == context {
                                    continue;
                                }
                                (t, 0.0)
                            };
                            let inp = &input[center * dim..(center + 1) * dim];
                            let out = &mut output[target * dim..(target + 1) * dim];
                            let dot: f32 = inp.iter().zip(out.iter()).map(|(a, b)| a * b).sum();
                            let g = (label - 1.0 / (1.0 + (-dot).exp())) * lr;
                            for k in 0..dim {
                                grad[k] += g * out[k];
                                out[k] += g * inp[k];
                            }
                        }
                        for (x, g) in input[center * dim..(center + 1) * dim].iter_mut().zip(&grad) {
                            *x += g;
                        }
                    }
                }
            }
        }
        let mut table = EmbeddingTable::new(dim)?;
        for (i, w) in vocab.iter().enumerate() {
            table.insert(w, &input[i * dim..(i + 1) * dim])?;
        }
        Ok(table)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn table(rows: &[(&str, &[f32])]) -> EmbeddingTable {
        EmbeddingTable::from_pairs(rows[0].1.len(), rows.iter().map(|(w, v)| (*w, v.to_vec()))).unwrap()
    }

    #[test]
    fn reads_text_vectors() {
        let loaded = EmbeddingTable::read("3 2\na 1 0\nb 0 1\nc 0.5 0.5\n".as_bytes(), "t").unwrap();
        assert_eq!(loaded.table.len(), 3);
        assert_eq!(loaded.table.dimension(), 2);
        assert!(loaded.warnings.is_empty());
    }

    #[test]
    fn empty_file_is_missing_header() {
        let err = EmbeddingTable::read("".as_bytes(), "t").unwrap_err();
        assert!(err.to_string().contains("missing header"), "{err}");
    }

    #[test]
    fn dimension_mismatch_names_line() {
        let err = EmbeddingTable::read("2 2\na 1 0\nb 0 1 2\n".as_bytes(), "t").unwrap_err();
        match err {
            Error::Parse { line, message, .. } => {
                assert_eq!(line, 3);
                assert!(message.contains("dimension mismatch"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn duplicate_lines_last_wins_with_warning() {
        let loaded = EmbeddingTable::read("2 2\na 1 0\na 0 1\n".as_bytes(), "t").unwrap();
        assert_eq!(loaded.table.get("a").unwrap(), &[0.0, 1.0]);
        assert_eq!(loaded.warnings.len(), 2); // duplicate + header count
        assert!(loaded.warnings[0].contains("duplicate word `a`"));
    }

    #[test]
    fn cosine_basics() {
        let t = table(&[("a", &[1.0, 0.0]), ("b", &[0.0, 1.0]), ("z", &[0.0, 0.0])]);
        assert!((cosine_similarity("a", "a", &t).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(cosine_similarity("a", "b", &t).unwrap(), 0.0);
        assert_eq!(cosine_similarity("a", "z", &t).unwrap(), 0.0);
        assert_eq!(cosine_similarity("a", "missing", &t).unwrap(), 0.0);
    }

    #[test]
    fn fallback_policy_without_hook_is_unresolvable() {
        let t = table(&[("a", &[1.0, 0.0])]).with_oov_policy(OovPolicy::SubwordFallbackExternal);
        assert!(matches!(cosine_similarity("a", "q", &t), Err(Error::Unresolvable(_))));

        struct Fixed;
        impl SubwordFallback for Fixed {
            fn vector(&self, _: &str) -> Option<Vec<f32>> {
                Some(vec![2.0, 0.0])
            }
        }
        let t = t.with_fallback(Arc::new(Fixed));
        assert!((cosine_similarity("a", "q", &t).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn neighbors_of_duplicate_vector() {
        let t = table(&[("a", &[0.3, 0.7]), ("b", &[0.3, 0.7])]);
        assert_eq!(nearest_neighbors("a", 1, &t).unwrap(), vec![("b".to_string(), 1.0)]);
        assert!(nearest_neighbors("a", 0, &t).is_err());
        assert_eq!(nearest_neighbors("a", 10, &t).unwrap().len(), 1);
    }

    #[test]
    fn neighbors_match_pairwise_enumeration() {
        let rows: [(&str, &[f32]); 5] = [
            ("p", &[1.0, 0.2, 0.0]),
            ("q", &[0.9, 0.1, 0.3]),
            ("r", &[-1.0, 0.5, 0.2]),
            ("s", &[0.2, 0.2, 0.9]),
            ("t", &[1.0, 0.2, 0.0]),
        ];
        let t = table(&rows);
        for (w, v) in rows {
            // oracle: explicit dot/norm formula over every other word
            let mut expect: Vec<(String, f64)> = rows
                .iter()
                .filter(|(o, _)| *o != w)
                .map(|(o, u)| {
                    let dot: f64 = v.iter().zip(u.iter()).map(|(a, b)| (*a as f64) * (*b as f64)).sum();
                    let n1: f64 = v.iter().map(|a| (*a as f64).powi(2)).sum::<f64>().sqrt();
                    let n2: f64 = u.iter().map(|a| (*a as f64).powi(2)).sum::<f64>().sqrt();
                    (o.to_string(), dot / (n1 * n2))
                })
                .collect();
            expect.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
            let got = nearest_neighbors(w, 4, &t).unwrap();
            for (g, e) in got.iter().zip(&expect) {
                assert_eq!(g.0, e.0);
                assert!((g.1 - e.1).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn cone_admission_on_two_seeds() {
        let t = table(&[
            ("s1", &[1.0, 0.0]),
            ("s2", &[0.0, 1.0]),
            ("far", &[2.0, 2.0]),
            ("near", &[0.6, 0.6]),
        ]);
        let cfg = ConeConfig {
            seeds: vec!["s1".into(), "s2".into()],
            ..ConeConfig::default()
        };
        let verbs = expand_desire_verbs(&cfg, &t, |_| true).unwrap();
        assert!(verbs.contains("near"));
        assert!(!verbs.contains("far"));
        assert!(verbs.contains("s1") && verbs.contains("s2"));

        let filtered = expand_desire_verbs(&cfg, &t, |w| w != "near").unwrap();
        assert!(!filtered.contains("near"));
    }

    #[test]
    fn cone_requires_seeds_in_table() {
        let t = table(&[("s1", &[1.0, 0.0])]);
        let cfg = ConeConfig {
            seeds: vec!["s1".into(), "nope".into()],
            ..ConeConfig::default()
        };
        assert!(matches!(expand_desire_verbs(&cfg, &t, |_| true), Err(Error::MissingSeed(w)) if w == "nope"));
        let bad = ConeConfig {
            seeds: vec!["s1".into()],
            distance_multiplier: 0.0,
            ..ConeConfig::default()
        };
        assert!(expand_desire_verbs(&bad, &t, |_| true).is_err());
    }

    #[test]
    fn skipgram_groups_shared_contexts() {
        let mut sentences = Vec::new();
        for _ in 0..60 {
            sentences.push(vec!["i", "want", "to", "fight", "them"]);
            sentences.push(vec!["i", "need", "to", "fight", "them"]);
            sentences.push(vec!["the", "blue", "sky", "was", "clear"]);
        }
        let t = SkipGramTrainer::default().train(&sentences).unwrap();
        let close = cosine_similarity("want", "need", &t).unwrap();
        let far = cosine_similarity("want", "sky", &t).unwrap();
        assert!(close > far, "want~need {close} vs want~sky {far}");
    }

    proptest! {
        #[test]
        fn cosine_symmetric_and_scale_invariant(
            a in prop::collection::vec(-5.0f32..5.0, 4),
            b in prop::collection::vec(-5.0f32..5.0, 4),
            scale in 0.01f32..100.0,
        ) {
            let scaled: Vec<f32> = a.iter().map(|x| x * scale).collect();
            prop_assert!((cosine(&a, &b) - cosine(&b, &a)).abs() < 1e-12);
            prop_assert!((cosine(&a, &b) - cosine(&scaled, &b)).abs() < 1e-5);
        }

        #[test]
        fn neighbors_prefix_property(vals in prop::collection::vec(prop::collection::vec(-1.0f32..1.0, 3), 3..12), k in 1usize..10) {
            let names: Vec<String> = (0..vals.len()).map(|i| format!("w{i}")).collect();
            let t = EmbeddingTable::from_pairs(3, names.iter().map(String::as_str).zip(vals.iter().cloned())).unwrap();
            let a = nearest_neighbors("w0", k, &t).unwrap();
            let b = nearest_neighbors("w0", k + 1, &t).unwrap();
            prop_assert_eq!(&b[..a.len()], &a[..]);
        }

        #[test]
        fn expansion_monotone_and_contains_seeds(
            vals in prop::collection::vec(prop::collection::vec(-1.0f32..1.0, 2), 4..20),
            m1 in 1.0f64..3.0,
            dm in 0.0f64..2.0,
        ) {
            let names: Vec<String> = (0..vals.len()).map(|i| format!("w{i}")).collect();
            let t = EmbeddingTable::from_pairs(2, names.iter().map(String::as_str).zip(vals.iter().cloned())).unwrap();
            let cfg = |m| ConeConfig { seeds: vec!["w0".into(), "w1".into(), "w2".into()], distance_multiplier: m, ..ConeConfig::default() };
            let small = expand_desire_verbs(&cfg(m1), &t, |_| true).unwrap();
            let large = expand_desire_verbs(&cfg(m1 + dm), &t, |_| true).unwrap();
            prop_assert!(small.is_subset(&large));
            for s in ["w0", "w1", "w2"] {
                prop_assert!(small.contains(s));
            }
        }
    }
}
