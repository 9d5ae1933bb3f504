//! Synthetic imbalanced text-classification benchmark.
//!
//! Each class owns a small vocabulary, part of which is borrowed from the next
//! class so vocabularies overlap. Documents mix class words with generic filler.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{make_imbalanced, word_substitute, Dataset, Example, ImbalanceMode, SynonymLexicon, View};
use crate::error::{Error, Result};
use crate::numerics::SeedStream;
use crate::trainer::TrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkSpec {
    pub num_classes: usize,
    /// Tokens per class vocabulary.
    pub class_vocab: usize,
    /// Share of each class vocabulary borrowed from the next class.
    pub overlap: f64,
    pub filler_vocab: usize,
    /// Probability that a token comes from the class vocabulary instead of filler.
    pub signal: f64,
    pub min_len: usize,
    pub max_len: usize,
    pub n_max: usize,
    pub ir: f64,
    pub test_per_class: usize,
    pub substitution_rate: f64,
}

impl Default for BenchmarkSpec {
    fn default() -> Self {
        Self {
            num_classes: 5,
            class_vocab: 40,
            overlap: 0.3,
            filler_vocab: 200,
            signal: 0.3,
            min_len: 6,
            max_len: 14,
            n_max: 500,
            ir: 50.0,
            test_per_class: 100,
            substitution_rate: 0.3,
        }
    }
}

/// Training settings used for this benchmark. The contrastive loss sums over
/// many positives per anchor, so its scale is two orders of magnitude above the
/// classification loss; `mu` brings the two branches to comparable size.
pub fn recommended_config() -> TrainConfig {
    TrainConfig {
        mu: 0.01,
        epochs: 40,
        ..TrainConfig::default()
    }
}

#[derive(Debug, Clone)]
pub struct Benchmark {
    /// Imbalanced originals.
    pub train: Dataset,
    /// One substituted copy of every training example.
    pub augmented: Dataset,
    /// Balanced.
    pub test: Dataset,
    pub lexicon: SynonymLexicon,
    pub class_vocabularies: Vec<Vec<String>>,
}

impl Benchmark {
    /// Originals followed by their augmented views.
    pub fn training_pool(&self) -> Result<Dataset> {
        self.train.concat(&self.augmented)
    }
}

fn own_word(class: usize, i: usize) -> String {
    format!("c{class}w{i}")
}

fn filler_word(i: usize) -> String {
    format!("f{i}")
}

pub fn class_vocabularies(spec: &BenchmarkSpec) -> Vec<Vec<String>> {
    let shared = (spec.class_vocab as f64 * spec.overlap).round() as usize;
    let own = spec.class_vocab - shared;
    (0..spec.num_classes)
        .map(|c| {
            let next = (c + 1) % spec.num_classes;
            let mut v: Vec<String> = (0..own).map(|i| own_word(c, i)).collect();
            v.extend((0..shared).map(|i| own_word(next, i)));
            v
        })
        .collect()
}

/// Each word maps to its two neighbours within the same group.
fn build_lexicon(vocabs: &[Vec<String>], filler: &[String], own: usize) -> SynonymLexicon {
    let mut entries = Vec::new();
    let mut ring = |words: &[String]| {
        let n = words.len();
        if n < 3 {
            return;
        }
        for i in 0..n {
            entries.push((words[i].clone(), vec![words[(i + 1) % n].clone(), words[(i + n - 1) % n].clone()]));
        }
    };
    for v in vocabs {
        ring(&v[..own]);
    }
    ring(filler);
    SynonymLexicon::new(entries)
}

fn document(vocab: &[String], filler: &[String], spec: &BenchmarkSpec, rng: &mut impl Rng) -> Vec<String> {
    let len = rng.random_range(spec.min_len..=spec.max_len);
    (0..len)
        .map(|_| {
            if rng.random_bool(spec.signal) {
                vocab[rng.random_range(0..vocab.len())].clone()
            } else {
                filler[rng.random_range(0..filler.len())].clone()
            }
        })
        .collect()
}

fn sample_split(spec: &BenchmarkSpec, vocabs: &[Vec<String>], filler: &[String], per_class: usize, stream: SeedStream) -> Result<Dataset> {
    let mut examples = Vec::with_capacity(per_class * spec.num_classes);
    for (c, vocab) in vocabs.iter().enumerate() {
        let mut rng = stream.index(c as u64).rng();
        for _ in 0..per_class {
            examples.push(Example {
                tokens: document(vocab, filler, spec, &mut rng),
                label: c,
                view: View::Original,
            });
        }
    }
    Dataset::new(examples, spec.num_classes)
}

pub fn generate(spec: &BenchmarkSpec, seed: u64) -> Result<Benchmark> {
    if spec.num_classes < 2 || spec.class_vocab == 0 || spec.filler_vocab == 0 || spec.min_len == 0 || spec.min_len > spec.max_len {
        return Err(Error::invalid("degenerate benchmark spec"));
    }
    if !(0.0..1.0).contains(&spec.overlap) || !(0.0..=1.0).contains(&spec.signal) {
        return Err(Error::invalid("overlap must be in [0,1) and signal in [0,1]"));
    }
    let root = SeedStream::new(seed).child("benchmark");
    let vocabs = class_vocabularies(spec);
    let filler: Vec<String> = (0..spec.filler_vocab).map(filler_word).collect();
    let own = spec.class_vocab - (spec.class_vocab as f64 * spec.overlap).round() as usize;
    let lexicon = build_lexicon(&vocabs, &filler, own);
    let balanced = sample_split(spec, &vocabs, &filler, spec.n_max, root.child("train"))?;
    let train = make_imbalanced(&balanced, spec.ir, ImbalanceMode::Exponential, root.child("imbalance").seed())?;
    let augmented = word_substitute(&train, &lexicon, spec.substitution_rate, root.child("augment").seed())?;
    let test = sample_split(spec, &vocabs, &filler, spec.test_per_class, root.child("test"))?;
    Ok(Benchmark {
        train,
        augmented,
        test,
        lexicon,
        class_vocabularies: vocabs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_shape() {
        let b = generate(&BenchmarkSpec::default(), 0).unwrap();
        assert_eq!(b.train.counts(), &[500, 188, 71, 27, 10]);
        assert_eq!(b.test.counts(), &[100; 5]);
        assert_eq!(b.augmented.len(), b.train.len());
        assert_eq!(b.training_pool().unwrap().len(), 2 * b.train.len());
    }

    #[test]
    fn vocabularies_overlap_by_share() {
        let spec = BenchmarkSpec::default();
        let v = class_vocabularies(&spec);
        for c in 0..spec.num_classes {
            let next = &v[(c + 1) % spec.num_classes];
            let shared = v[c].iter().filter(|w| next.contains(w)).count();
            assert_eq!(shared, 12);
            assert_eq!(v[c].len(), 40);
        }
    }

    #[test]
    fn deterministic() {
        let a = generate(&BenchmarkSpec::default(), 3).unwrap();
        let b = generate(&BenchmarkSpec::default(), 3).unwrap();
        assert_eq!(a.train, b.train);
        assert_eq!(a.augmented, b.augmented);
        assert_eq!(a.test, b.test);
    }

    #[test]
    fn synonyms_stay_in_group() {
        let b = generate(&BenchmarkSpec::default(), 0).unwrap();
        let syns = b.lexicon.get("c2w5").unwrap();
        assert!(syns.iter().all(|s| s.starts_with("c2w")));
        assert!(b.lexicon.get("f0").unwrap().iter().all(|s| s.starts_with('f')));
    }
}
