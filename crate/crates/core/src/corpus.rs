//! Dataset types, tokenization, n-gram extraction and sparse featurization.
//!
//! Everything here is a pure function of its inputs. Iteration order of a
//! [`Dataset`] is insertion order and vocabulary indices are assigned in
//! first-occurrence order, so featurization is bit-reproducible.

use std::collections::{BTreeSet, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    #[default]
    Organic,
    Synthetic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    #[default]
    Train,
    Validation,
    Test,
    Pool,
}

/// One labeled text instance.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub id: String,
    pub tokens: Vec<String>,
    pub label: usize,
    pub weight: f64,
    pub source: Source,
}

impl Example {
    pub fn new(id: impl Into<String>, tokens: Vec<String>, label: usize) -> Self {
        Self {
            id: id.into(),
            tokens,
            label,
            weight: 1.0,
            source: Source::Organic,
        }
    }

    pub fn from_text(id: impl Into<String>, text: &str, label: usize) -> Self {
        Self::new(id, tokenize(text), label)
    }

    pub fn with_source(mut self, source: Source) -> Self {
        self.source = source;
        self
    }

    pub fn with_weight(mut self, weight: f64) -> Self {
        self.weight = weight;
        self
    }
}

/// An ordered, validated collection of examples sharing one label space.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    examples: Vec<Example>,
    num_classes: usize,
    split: Split,
}

impl Dataset {
    pub fn new(examples: Vec<Example>, num_classes: usize, split: Split) -> Result<Self> {
        if num_classes < 2 {
            return Err(Error::InvalidConfig(format!(
                "num_classes must be at least 2, got {num_classes}"
            )));
        }
        let mut seen = HashSet::with_capacity(examples.len());
        for ex in &examples {
            validate_example(ex, num_classes)?;
            if !seen.insert(ex.id.as_str()) {
                return Err(Error::DuplicateId(ex.id.clone()));
            }
        }
        Ok(Self {
            examples,
            num_classes,
            split,
        })
    }

    pub fn empty(num_classes: usize, split: Split) -> Self {
        Self {
            examples: Vec::new(),
            num_classes: num_classes.max(2),
            split,
        }
    }

    pub fn examples(&self) -> &[Example] {
        &self.examples
    }

    pub fn into_examples(self) -> Vec<Example> {
        self.examples
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Example> {
        self.examples.iter()
    }

    pub fn weights(&self) -> Vec<f64> {
        self.examples.iter().map(|e| e.weight).collect()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.examples.iter().map(|e| e.label).collect()
    }

    /// Keeps examples for which `keep` returns true, preserving order.
    pub fn filtered(&self, mut keep: impl FnMut(usize, &Example) -> bool) -> Dataset {
        let examples = self
            .examples
            .iter()
            .enumerate()
            .filter(|(i, e)| keep(*i, e))
            .map(|(_, e)| e.clone())
            .collect();
        Dataset {
            examples,
            num_classes: self.num_classes,
            split: self.split,
        }
    }

    /// Concatenates two datasets with the same label space. Ids must stay unique.
    pub fn concat(&self, other: &Dataset, split: Split) -> Result<Dataset> {
        if self.num_classes != other.num_classes {
            return Err(Error::shape(
                format!("{} classes", self.num_classes),
                format!("{} classes", other.num_classes),
            ));
        }
        let mut examples = self.examples.clone();
        examples.extend(other.examples.iter().cloned());
        Dataset::new(examples, self.num_classes, split)
    }

    pub fn with_split(mut self, split: Split) -> Dataset {
        self.split = split;
        self
    }
}

impl<'a> IntoIterator for &'a Dataset {
    type Item = &'a Example;
    type IntoIter = std::slice::Iter<'a, Example>;

    fn into_iter(self) -> Self::IntoIter {
        self.examples.iter()
    }
}

fn validate_example(ex: &Example, num_classes: usize) -> Result<()> {
    let invalid = |reason: String| Error::InvalidExample {
        id: ex.id.clone(),
        reason,
    };
    if ex.tokens.is_empty() {
        return Err(invalid("no tokens".into()));
    }
    if ex.label >= num_classes {
        return Err(invalid(format!(
            "label {} out of range for {num_classes} classes",
            ex.label
        )));
    }
    if !(ex.weight.is_finite() && ex.weight >= 0.0) {
        return Err(invalid(format!(
            "weight {} is not a finite nonnegative number",
            ex.weight
        )));
    }
    Ok(())
}

/// Lowercases, splits on Unicode whitespace and strips leading/trailing ASCII
/// punctuation from each token. Tokens that end up empty are dropped.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|raw| raw.trim_matches(|c: char| c.is_ascii_punctuation()))
        .filter(|t| !t.is_empty())
        .map(|t| t.to_lowercase())
        .collect()
}

fn windows<'a>(tokens: &'a [String], n: usize) -> impl Iterator<Item = String> + 'a {
    assert!(n >= 1, "n-gram order must be at least 1");
    tokens.windows(n).map(|w| w.join(" "))
}

/// All distinct contiguous n-token windows, joined by a single space.
pub fn ngram_set(tokens: &[String], n: usize) -> BTreeSet<String> {
    windows(tokens, n).collect()
}

/// Maps n-gram strings to contiguous feature indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    index: HashMap<String, usize>,
    ngrams: Vec<String>,
    ngram_order: usize,
}

impl Vocabulary {
    /// Builds a vocabulary from n-grams listed in index order.
    pub fn from_ngrams(ngrams: Vec<String>, ngram_order: usize) -> Result<Self> {
        if ngram_order == 0 {
            return Err(Error::InvalidConfig("ngram_order must be at least 1".into()));
        }
        if ngrams.is_empty() {
            return Err(Error::EmptyVocabulary { min_count: 0 });
        }
        let mut index = HashMap::with_capacity(ngrams.len());
        for (i, g) in ngrams.iter().enumerate() {
            if g.split(' ').count() != ngram_order {
                return Err(Error::InvalidConfig(format!(
                    "n-gram {g:?} does not have order {ngram_order}"
                )));
            }
            if index.insert(g.clone(), i).is_some() {
                return Err(Error::InvalidConfig(format!("n-gram {g:?} listed twice")));
            }
        }
        Ok(Self {
            index,
            ngrams,
            ngram_order,
        })
    }

    pub fn get(&self, ngram: &str) -> Option<usize> {
        self.index.get(ngram).copied()
    }

    pub fn ngram_order(&self) -> usize {
        self.ngram_order
    }

    pub fn num_features(&self) -> usize {
        self.ngrams.len()
    }

    /// N-grams in index order.
    pub fn ngrams(&self) -> &[String] {
        &self.ngrams
    }
}

/// Builds a vocabulary from a training split. Indices follow first occurrence
/// over the ordered dataset; n-grams seen fewer than `min_count` times are dropped.
pub fn build_vocabulary(train: &Dataset, ngram_order: usize, min_count: usize) -> Result<Vocabulary> {
    if train.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if ngram_order == 0 {
        return Err(Error::InvalidConfig("ngram_order must be at least 1".into()));
    }
    let mut order: Vec<String> = Vec::new();
    let mut counts: HashMap<String, usize> = HashMap::new();
    for ex in train {
        for g in windows(&ex.tokens, ngram_order) {
            let c = counts.entry(g).or_insert_with_key(|k| {
                order.push(k.clone());
                0
            });
            *c += 1;
        }
    }
    let kept: Vec<String> = order.into_iter().filter(|g| counts[g] >= min_count).collect();
    if kept.is_empty() {
        return Err(Error::EmptyVocabulary { min_count });
    }
    Vocabulary::from_ngrams(kept, ngram_order)
}

/// A sparse feature vector stored as `(index, value)` pairs sorted by index.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FeatureVector {
    entries: Vec<(usize, f64)>,
}

impl FeatureVector {
    /// Builds a vector from arbitrary pairs; duplicates are summed and zeros dropped.
    pub fn from_pairs(mut pairs: Vec<(usize, f64)>) -> Self {
        pairs.sort_by_key(|&(i, _)| i);
        let mut entries: Vec<(usize, f64)> = Vec::with_capacity(pairs.len());
        for (i, v) in pairs {
            match entries.last_mut() {
                Some(last) if last.0 == i => last.1 += v,
                _ => entries.push((i, v)),
            }
        }
        entries.retain(|&(_, v)| v != 0.0);
        Self { entries }
    }

    pub fn from_dense(values: &[f64]) -> Self {
        Self {
            entries: values
                .iter()
                .enumerate()
                .filter(|(_, v)| **v != 0.0)
                .map(|(i, v)| (i, *v))
                .collect(),
        }
    }

    pub fn entries(&self) -> &[(usize, f64)] {
        &self.entries
    }

    pub fn is_zero(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    pub fn max_index(&self) -> Option<usize> {
        self.entries.last().map(|&(i, _)| i)
    }

    pub fn norm(&self) -> f64 {
        self.entries.iter().map(|(_, v)| v * v).sum::<f64>().sqrt()
    }

    /// Scales to unit L2 norm; the zero vector stays zero.
    pub fn normalized(mut self) -> Self {
        let norm = self.norm();
        if norm > 0.0 {
            for (_, v) in &mut self.entries {
                *v /= norm;
            }
        }
        self
    }

    pub fn to_dense(&self, len: usize) -> Vec<f64> {
        let mut out = vec![0.0; len];
        for &(i, v) in &self.entries {
            out[i] = v;
        }
        out
    }
}

/// Raw counts of in-vocabulary n-grams; out-of-vocabulary n-grams are dropped.
pub fn count_features(tokens: &[String], vocab: &Vocabulary) -> FeatureVector {
    let pairs = windows(tokens, vocab.ngram_order())
        .filter_map(|g| vocab.get(&g).map(|i| (i, 1.0)))
        .collect();
    FeatureVector::from_pairs(pairs)
}

/// Counts of in-vocabulary n-grams, L2-normalized.
pub fn featurize(ex: &Example, vocab: &Vocabulary) -> FeatureVector {
    count_features(&ex.tokens, vocab).normalized()
}
