//! On-disk formats.
//!
//! * Datasets are JSONL, one example per line:
//!   `{"id", "text" | "tokens" | "question"+"choices", "label", "weight"?, "source"?}`.
//!   A multiple-choice item is flattened into one example whose tokens are the
//!   question followed by every choice. `foo.jsonl` is described by a sidecar
//!   header `foo.header.json` holding `{"num_classes", "split"}`.
//! * Vocabularies are a JSON object `{ngram: index}`.
//! * Model parameters are JSON with a shape header and row-major weights.
//! * Influence reports are JSONL with reals printed to 17 significant digits.

use std::collections::HashMap;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::{tokenize, Dataset, Example, Source, Split, Vocabulary};
use crate::error::{Error, Result};
use crate::influence::{InfluenceRecord, Method};
use crate::model::ModelParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub num_classes: usize,
    #[serde(default)]
    pub split: Split,
}

/// `data/train.jsonl` → `data/train.header.json`
pub fn header_path(path: &Path) -> PathBuf {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    path.with_file_name(format!("{stem}.header.json"))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawExample {
    id: String,
    #[serde(default)]
    text: Option<String>,
    #[serde(default)]
    tokens: Option<Vec<String>>,
    #[serde(default)]
    question: Option<String>,
    #[serde(default)]
    choices: Option<Vec<String>>,
    label: usize,
    #[serde(default)]
    weight: Option<f64>,
    #[serde(default)]
    source: Option<Source>,
}

impl RawExample {
    fn into_example(self) -> std::result::Result<Example, String> {
        let tokens = match (self.text, self.tokens, self.question) {
            (Some(text), None, None) => tokenize(&text),
            (None, Some(tokens), None) => tokens,
            (None, None, Some(question)) => {
                let mut tokens = tokenize(&question);
                for choice in self.choices.iter().flatten() {
                    tokens.extend(tokenize(choice));
                }
                tokens
            }
            _ => return Err("exactly one of \"text\", \"tokens\" or \"question\" is required".into()),
        };
        let mut ex = Example::new(self.id, tokens, self.label);
        ex.weight = self.weight.unwrap_or(1.0);
        ex.source = self.source.unwrap_or_default();
        Ok(ex)
    }
}

#[derive(Serialize)]
struct OutExample<'a> {
    id: &'a str,
    tokens: &'a [String],
    label: usize,
    weight: f64,
    source: Source,
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|e| Error::io(path, e))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: e.line(),
        message: e.to_string(),
    })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_header(path: &Path) -> Result<Option<DatasetHeader>> {
    let hp = header_path(path);
    if !hp.exists() {
        return Ok(None);
    }
    read_json(&hp).map(Some)
}

fn read_examples(path: &Path) -> Result<Vec<Example>> {
    let reader = open(path)?;
    let mut examples = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        };
        let raw: RawExample = serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
        examples.push(raw.into_example().map_err(parse_err)?);
    }
    Ok(examples)
}

/// Reads a JSONL dataset. The class count comes from the sidecar header, or
/// from `num_classes` when the header is absent; if both are present they
/// must agree.
pub fn read_dataset(path: &Path, num_classes: Option<usize>) -> Result<Dataset> {
    let examples = read_examples(path)?;
    let header = read_header(path)?;
    let (k, split) = match (header, num_classes) {
        (Some(h), Some(k)) if h.num_classes != k => {
            return Err(Error::InvalidConfig(format!(
                "{} declares {} classes but {k} were expected",
                header_path(path).display(),
                h.num_classes
            )))
        }
        (Some(h), _) => (h.num_classes, h.split),
        (None, Some(k)) => (k, Split::Pool),
        (None, None) => {
            return Err(Error::InvalidConfig(format!(
                "missing dataset header {}",
                header_path(path).display()
            )))
        }
    };
    Dataset::new(examples, k, split)
}

/// Writes the dataset as JSONL with explicit tokens plus its header.
pub fn write_dataset(path: &Path, data: &Dataset) -> Result<()> {
    let mut w = create(path)?;
    for ex in data {
        let out = OutExample {
            id: &ex.id,
            tokens: &ex.tokens,
            label: ex.label,
            weight: ex.weight,
            source: ex.source,
        };
        serde_json::to_writer(&mut w, &out)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    write_json(
        &header_path(path),
        &DatasetHeader {
            num_classes: data.num_classes(),
            split: data.split(),
        },
    )
}

pub fn write_vocabulary(path: &Path, vocab: &Vocabulary) -> Result<()> {
    let mut w = create(path)?;
    let mut line = String::from("{");
    for (i, g) in vocab.ngrams().iter().enumerate() {
        if i > 0 {
            line.push(',');
        }
        line.push_str(&serde_json::to_string(g)?);
        line.push(':');
        line.push_str(&i.to_string());
    }
    line.push_str("}\n");
    w.write_all(line.as_bytes()).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads `{ngram: index}`. The n-gram order is recovered from the keys.
pub fn read_vocabulary(path: &Path) -> Result<Vocabulary> {
    let map: HashMap<String, usize> = read_json(path)?;
    let mut slots: Vec<Option<String>> = vec![None; map.len()];
    for (g, i) in map {
        match slots.get_mut(i) {
            Some(slot @ None) => *slot = Some(g),
            _ => {
                return Err(Error::InvalidConfig(format!(
                    "{}: vocabulary indices are not contiguous",
                    path.display()
                )))
            }
        }
    }
    let ngrams: Vec<String> = slots.into_iter().flatten().collect();
    let order = ngrams.first().map(|g| g.split(' ').count()).unwrap_or(1);
    Vocabulary::from_ngrams(ngrams, order)
}

pub fn write_params(path: &Path, params: &ModelParams) -> Result<()> {
    write_json(path, params)
}

pub fn read_params(path: &Path) -> Result<ModelParams> {
    let params: ModelParams = read_json(path)?;
    params.validate()?;
    Ok(params)
}

/// 17 significant digits; non-finite values become `null`.
fn exact_number(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        "null".into()
    }
}

#[derive(Deserialize)]
struct RawRecord {
    id: String,
    influence: Option<f64>,
    detrimental: bool,
    method: Method,
    residual: Option<f64>,
    #[serde(default = "yes")]
    converged: bool,
}

fn yes() -> bool {
    true
}

pub fn influence_record_line(rec: &InfluenceRecord) -> Result<String> {
    Ok(format!(
        "{{\"id\":{},\"influence\":{},\"detrimental\":{},\"method\":\"{}\",\"residual\":{},\"converged\":{}}}",
        serde_json::to_string(&rec.example_id)?,
        exact_number(rec.influence),
        rec.detrimental,
        rec.method,
        exact_number(rec.residual),
        rec.converged
    ))
}

pub fn write_influence_report(path: &Path, records: &[InfluenceRecord]) -> Result<()> {
    let mut w = create(path)?;
    for rec in records {
        writeln!(w, "{}", influence_record_line(rec)?).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_influence_report(path: &Path) -> Result<Vec<InfluenceRecord>> {
    let reader = open(path)?;
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(InfluenceRecord {
            example_id: raw.id,
            influence: raw.influence.unwrap_or(f64::NAN),
            method: raw.method,
            residual: raw.residual.unwrap_or(f64::NAN),
            converged: raw.converged,
            detrimental: raw.detrimental,
        });
    }
    Ok(out)
}

pub fn read_json_file<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    read_json(path)
}
