//! Labeled text corpora: loading, vocabularies, imbalancing, word-substitution
//! augmentation, class priors and batching.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::{index, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::SeedStream;

pub type ClassId = usize;

/// Reserved id for out-of-vocabulary tokens.
pub const UNKNOWN_ID: usize = 0;
pub const UNKNOWN_TOKEN: &str = "<unk>";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum View {
    Original,
    Augmented,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Example {
    pub tokens: Vec<String>,
    pub label: ClassId,
    pub view: View,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    examples: Vec<Example>,
    num_classes: usize,
    counts: Vec<usize>,
}

impl Dataset {
    pub fn new(examples: Vec<Example>, num_classes: usize) -> Result<Self> {
        if num_classes == 0 {
            return Err(Error::invalid("num_classes must be positive"));
        }
        let mut counts = vec![0; num_classes];
        for ex in &examples {
            if ex.label >= num_classes {
                return Err(Error::LabelOutOfRange {
                    label: ex.label,
                    num_classes,
                });
            }
            if ex.tokens.is_empty() {
                return Err(Error::invalid("example with no tokens"));
            }
            counts[ex.label] += 1;
        }
        Ok(Self {
            examples,
            num_classes,
            counts,
        })
    }

    pub fn examples(&self) -> &[Example] {
        &self.examples
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn labels(&self) -> Vec<ClassId> {
        self.examples.iter().map(|e| e.label).collect()
    }

    /// Concatenation of two datasets over the same label space.
    pub fn concat(&self, other: &Dataset) -> Result<Dataset> {
        if self.num_classes != other.num_classes {
            return Err(Error::invalid(format!(
                "cannot concatenate datasets with {} and {} classes",
                self.num_classes, other.num_classes
            )));
        }
        let mut examples = self.examples.clone();
        examples.extend_from_slice(&other.examples);
        Dataset::new(examples, self.num_classes)
    }

    /// Serializes back into the `label<TAB>text` corpus format.
    pub fn to_corpus_string(&self) -> String {
        let mut s = String::new();
        for ex in &self.examples {
            let _ = writeln!(s, "{}\t{}", ex.label, ex.tokens.join(" "));
        }
        s
    }
}

pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace().map(|t| t.to_lowercase()).collect()
}

/// Parses corpus text where each line is `label<TAB>text`. Blank lines are skipped.
pub fn parse_corpus(content: &str, num_classes: usize, origin: &Path) -> Result<Dataset> {
    let err = |line: usize, message: String| Error::Parse {
        path: origin.to_path_buf(),
        line,
        message,
    };
    let mut examples = Vec::new();
    for (i, raw) in content.lines().enumerate() {
        let line_no = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let (label, text) = raw
            .split_once('\t')
            .ok_or_else(|| err(line_no, "expected `label<TAB>text`".into()))?;
        let label: usize = label
            .trim()
            .parse()
            .map_err(|_| err(line_no, format!("invalid label {label:?}")))?;
        if label >= num_classes {
            return Err(err(
                line_no,
                format!("label {label} out of range for {num_classes} classes"),
            ));
        }
        let tokens = tokenize(text);
        if tokens.is_empty() {
            return Err(err(line_no, "empty text".into()));
        }
        examples.push(Example {
            tokens,
            label,
            view: View::Original,
        });
    }
    if examples.is_empty() {
        return Err(err(0, "corpus contains no examples".into()));
    }
    Dataset::new(examples, num_classes)
}

pub fn load_corpus(path: impl AsRef<Path>, num_classes: usize) -> Result<Dataset> {
    let path = path.as_ref();
    let content = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_corpus(&content, num_classes, path)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabulary {
    id_to_token: Vec<String>,
    #[serde(skip)]
    token_to_id: HashMap<String, usize>,
}

impl Vocabulary {
    /// Tokens with frequency `>= min_freq` get ids from 1, ordered by descending
    /// frequency then lexicographically.
    pub fn build(dataset: &Dataset, min_freq: usize) -> Result<Self> {
        if min_freq == 0 {
            return Err(Error::invalid("min_freq must be at least 1"));
        }
        if dataset.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let mut freq: HashMap<&str, usize> = HashMap::new();
        for ex in dataset.examples() {
            for t in &ex.tokens {
                *freq.entry(t.as_str()).or_default() += 1;
            }
        }
        let mut kept: Vec<(&str, usize)> = freq.into_iter().filter(|&(_, n)| n >= min_freq).collect();
        kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        let mut id_to_token = vec![UNKNOWN_TOKEN.to_string()];
        id_to_token.extend(kept.into_iter().map(|(t, _)| t.to_string()));
        Ok(Self::from_tokens(id_to_token))
    }

    fn from_tokens(id_to_token: Vec<String>) -> Self {
        let token_to_id = id_to_token
            .iter()
            .enumerate()
            .skip(1)
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Self {
            id_to_token,
            token_to_id,
        }
    }

    /// Rebuilds the lookup table after deserialization.
    pub fn reindex(self) -> Self {
        Self::from_tokens(self.id_to_token)
    }

    pub fn len(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn id(&self, token: &str) -> usize {
        self.token_to_id.get(token).copied().unwrap_or(UNKNOWN_ID)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.id_to_token.get(id).map(String::as_str)
    }

    pub fn encode(&self, tokens: &[String]) -> Vec<usize> {
        tokens.iter().map(|t| self.id(t)).collect()
    }
}

/// Word to replacement candidates.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SynonymLexicon {
    entries: BTreeMap<String, Vec<String>>,
}

impl SynonymLexicon {
    /// Keys and replacements are lowercased; a word listed as its own synonym is
    /// dropped, and entries left with no replacements are removed.
    pub fn new(entries: impl IntoIterator<Item = (String, Vec<String>)>) -> Self {
        let mut map: BTreeMap<String, Vec<String>> = BTreeMap::new();
        for (k, syns) in entries {
            let k = k.to_lowercase();
            let slot = map.entry(k.clone()).or_default();
            for s in syns {
                let s = s.trim().to_lowercase();
                if !s.is_empty() && s != k && !slot.contains(&s) {
                    slot.push(s);
                }
            }
        }
        map.retain(|_, v| !v.is_empty());
        Self { entries: map }
    }

    pub fn parse(content: &str, origin: &Path) -> Result<Self> {
        let mut entries = Vec::new();
        for (i, raw) in content.lines().enumerate() {
            if raw.trim().is_empty() {
                continue;
            }
            let (word, syns) = raw.split_once('\t').ok_or_else(|| Error::Parse {
                path: origin.to_path_buf(),
                line: i + 1,
                message: "expected `word<TAB>syn1,syn2,...`".into(),
            })?;
            let word = word.trim();
            if word.is_empty() || word.contains(char::is_whitespace) {
                return Err(Error::Parse {
                    path: origin.to_path_buf(),
                    line: i + 1,
                    message: format!("invalid word {word:?}"),
                });
            }
            entries.push((word.to_string(), syns.split(',').map(str::to_string).collect()));
        }
        Ok(Self::new(entries))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let content = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&content, path)
    }

    pub fn get(&self, word: &str) -> Option<&[String]> {
        self.entries.get(word).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn to_file_string(&self) -> String {
        let mut s = String::new();
        for (k, v) in &self.entries {
            let _ = writeln!(s, "{k}\t{}", v.join(","));
        }
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ImbalanceMode {
    /// `n_r = n_max · ir^(-r/(C-1))`: the largest/smallest ratio equals `ir`.
    Exponential,
    /// `n_r = n_max · ir^(-r)`: each rank shrinks by a factor of `ir`.
    PaperExample,
}

impl std::str::FromStr for ImbalanceMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "exponential" | "exp" => Ok(Self::Exponential),
            "paperexample" | "perclass" | "geometric" => Ok(Self::PaperExample),
            _ => Err(Error::invalid(format!("unknown imbalance mode {s:?}"))),
        }
    }
}

/// Per-class retention targets for an imbalanced variant, indexed by class id.
///
/// Classes are ranked by descending count (ties by class id); rank 0 keeps
/// `n_max` and later ranks decay according to `mode`. Every class keeps at least one.
pub fn imbalanced_targets(counts: &[usize], ir: f64, mode: ImbalanceMode) -> Result<Vec<usize>> {
    if !(ir >= 1.0) || !ir.is_finite() {
        return Err(Error::invalid(format!("imbalance ratio must be >= 1, got {ir}")));
    }
    if let Some(c) = counts.iter().position(|&n| n == 0) {
        return Err(Error::EmptyClass(c));
    }
    let c = counts.len();
    if c <= 1 {
        return Ok(counts.to_vec());
    }
    let mut order: Vec<usize> = (0..c).collect();
    order.sort_by(|&a, &b| counts[b].cmp(&counts[a]).then(a.cmp(&b)));
    let n_max = counts[order[0]] as f64;
    let mut targets = vec![0; c];
    for (rank, &class) in order.iter().enumerate() {
        let exponent = match mode {
            ImbalanceMode::Exponential => rank as f64 / (c - 1) as f64,
            ImbalanceMode::PaperExample => rank as f64,
        };
        let n = (n_max * ir.powf(-exponent)).round().max(1.0) as usize;
        targets[class] = n;
    }
    Ok(targets)
}

/// Builds an imbalanced training split by seeded subsampling without replacement.
pub fn make_imbalanced(dataset: &Dataset, ir: f64, mode: ImbalanceMode, seed: u64) -> Result<Dataset> {
    let targets = imbalanced_targets(dataset.counts(), ir, mode)?;
    let stream = SeedStream::new(seed).child("imbalance");
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); dataset.num_classes()];
    for (i, ex) in dataset.examples().iter().enumerate() {
        by_class[ex.label].push(i);
    }
    let mut keep = vec![false; dataset.len()];
    for (class, members) in by_class.iter().enumerate() {
        let want = targets[class];
        if want > members.len() {
            log::warn!(
                "class {class}: requested {want} examples but only {} available; keeping all",
                members.len()
            );
        }
        let n = want.min(members.len());
        let mut rng = stream.index(class as u64).rng();
        for j in index::sample(&mut rng, members.len(), n) {
            keep[members[j]] = true;
        }
    }
    let examples = dataset
        .examples()
        .iter()
        .zip(keep)
        .filter(|(_, k)| *k)
        .map(|(ex, _)| ex.clone())
        .collect();
    Dataset::new(examples, dataset.num_classes())
}

/// Returns one augmented copy of every example, each lexicon word independently
/// replaced with probability `rate` by a uniformly chosen synonym.
pub fn word_substitute(dataset: &Dataset, lexicon: &SynonymLexicon, rate: f64, seed: u64) -> Result<Dataset> {
    if !(0.0..=1.0).contains(&rate) {
        return Err(Error::invalid(format!("substitution rate must be in [0,1], got {rate}")));
    }
    let mut rng = SeedStream::new(seed).child("substitute").rng();
    let examples = dataset
        .examples()
        .iter()
        .map(|ex| {
            let tokens = ex
                .tokens
                .iter()
                .map(|t| match lexicon.get(t) {
                    Some(syns) if rate > 0.0 && rng.random_bool(rate) => {
                        syns[rng.random_range(0..syns.len())].clone()
                    }
                    _ => t.clone(),
                })
                .collect();
            Example {
                tokens,
                label: ex.label,
                view: View::Augmented,
            }
        })
        .collect();
    Dataset::new(examples, dataset.num_classes())
}

pub fn class_priors(dataset: &Dataset) -> Result<Vec<f64>> {
    priors_from_counts(dataset.counts())
}

pub fn priors_from_counts(counts: &[usize]) -> Result<Vec<f64>> {
    if let Some(c) = counts.iter().position(|&n| n == 0) {
        return Err(Error::EmptyClass(c));
    }
    let total: usize = counts.iter().sum();
    Ok(counts.iter().map(|&n| n as f64 / total as f64).collect())
}

/// Indices into a dataset plus their labels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Batch {
    pub indices: Vec<usize>,
    pub labels: Vec<ClassId>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// Permutation of `0..n` determined by `(seed, epoch)`.
pub fn epoch_permutation(n: usize, seed: u64, epoch: u64) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..n).collect();
    let mut rng = SeedStream::new(seed).child("shuffle").index(epoch).rng();
    perm.shuffle(&mut rng);
    perm
}

/// Shuffles the whole pool for this epoch and slices it into consecutive batches.
/// If `batch_size` exceeds the pool, one batch holds everything.
pub fn iter_batches(dataset: &Dataset, batch_size: usize, seed: u64, epoch: u64) -> Result<Vec<Batch>> {
    if batch_size < 2 {
        return Err(Error::invalid("batch_size must be at least 2"));
    }
    let perm = epoch_permutation(dataset.len(), seed, epoch);
    Ok(perm
        .chunks(batch_size)
        .map(|chunk| Batch {
            indices: chunk.to_vec(),
            labels: chunk.iter().map(|&i| dataset.examples()[i].label).collect(),
        })
        .collect())
}
