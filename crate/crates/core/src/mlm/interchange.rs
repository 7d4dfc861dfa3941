//! JSON-lines state files and the JSON head file.
//!
//! State file, one object per sentence:
//!
//! ```text
//! {"tokens":[ids or strings],"lang":"A" | ["A","B",...],"states":[[f32,...],...]}
//! ```
//!
//! An optional `"mask_states"` array (same shape as `"states"`) carries, for
//! each token, the state obtained with that token's word masked.
//!
//! Head file: `{"vocab":[...],"unembedding":[[f32,...],...],"bias":[f32,...]}`.
//!
//! Values are written as 32-bit floats and widened to 64 bits on load.

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::model::OutputHead;
use crate::classifier::{Side, TokenDataset};
use crate::embedding::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::pipeline::write_atomic;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TokenRef {
    Id(usize),
    Piece(String),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
enum LangField {
    Sentence(String),
    PerToken(Vec<String>),
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    tokens: Vec<TokenRef>,
    lang: LangField,
    states: Vec<Vec<f32>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    mask_states: Option<Vec<Vec<f32>>>,
}

/// Per-position last-layer states of one sentence.
#[derive(Debug, Clone, PartialEq)]
pub struct StateBundle {
    pub tokens: Vec<TokenRef>,
    /// One tag per token.
    pub lang: Vec<String>,
    pub states: EmbeddingMatrix,
    pub mask_states: Option<EmbeddingMatrix>,
}

impl StateBundle {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.states.dim()
    }

    fn to_record(&self) -> Record {
        let first = self.lang.first();
        let lang = match first {
            Some(t) if self.lang.iter().all(|x| x == t) => LangField::Sentence(t.clone()),
            _ => LangField::PerToken(self.lang.clone()),
        };
        Record {
            tokens: self.tokens.clone(),
            lang,
            states: to_f32(&self.states),
            mask_states: self.mask_states.as_ref().map(to_f32),
        }
    }
}

fn to_f32(m: &EmbeddingMatrix) -> Vec<Vec<f32>> {
    m.rows().map(|r| r.iter().map(|&x| x as f32).collect()).collect()
}

fn rows_to_matrix(rows: &[Vec<f32>], what: &str, fail: &dyn Fn(String) -> Error) -> Result<EmbeddingMatrix> {
    if rows.iter().flatten().any(|x| !x.is_finite()) {
        return Err(fail(format!("non-finite value in {what}")));
    }
    EmbeddingMatrix::from_f32_rows(rows).map_err(|e| fail(format!("{what}: {e}")))
}

pub fn write_states_jsonl(bundles: &[StateBundle]) -> Result<String> {
    let mut out = String::new();
    for b in bundles {
        out.push_str(&serde_json::to_string(&b.to_record())?);
        out.push('\n');
    }
    Ok(out)
}

/// Parse state records; `origin` names the source in diagnostics.
pub fn parse_states_jsonl(text: &str, origin: &str) -> Result<Vec<StateBundle>> {
    let mut out = Vec::new();
    let mut dim: Option<usize> = None;
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fail = |m: String| Error::format(origin, lineno, m);
        let rec: Record = serde_json::from_str(line).map_err(|e| fail(format!("column {}: {e}", e.column())))?;
        let n = rec.tokens.len();
        if n == 0 {
            return Err(fail("record has no tokens".into()));
        }
        if rec.states.len() != n {
            return Err(fail(format!("{} tokens but {} state rows", n, rec.states.len())));
        }
        let lang = match rec.lang {
            LangField::Sentence(t) => vec![t; n],
            LangField::PerToken(v) if v.len() == n => v,
            LangField::PerToken(v) => return Err(fail(format!("{} tokens but {} language tags", n, v.len()))),
        };
        let states = rows_to_matrix(&rec.states, "states", &fail)?;
        let mask_states = match rec.mask_states {
            None => None,
            Some(rows) if rows.len() == n => Some(rows_to_matrix(&rows, "mask_states", &fail)?),
            Some(rows) => return Err(fail(format!("{} tokens but {} mask_states rows", n, rows.len()))),
        };
        let d = *dim.get_or_insert(states.dim());
        if states.dim() != d || mask_states.as_ref().is_some_and(|m| m.dim() != d) {
            return Err(fail(format!("state dimension differs from the first record ({d})")));
        }
        out.push(StateBundle {
            tokens: rec.tokens,
            lang,
            states,
            mask_states,
        });
    }
    Ok(out)
}

pub fn export_states(bundles: &[StateBundle], path: &Path) -> Result<()> {
    write_atomic(path, write_states_jsonl(bundles)?.as_bytes())
}

pub fn import_states(path: &Path) -> Result<Vec<StateBundle>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_states_jsonl(&text, &path.display().to_string())
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct HeadFile {
    vocab: Vec<String>,
    unembedding: Vec<Vec<f32>>,
    bias: Vec<f32>,
}

pub fn write_head_json(head: &OutputHead) -> Result<String> {
    let file = HeadFile {
        vocab: head.vocab.clone(),
        unembedding: head
            .unembedding
            .rows()
            .into_iter()
            .map(|r| r.iter().map(|&x| x as f32).collect())
            .collect(),
        bias: head.bias.iter().map(|&x| x as f32).collect(),
    };
    Ok(serde_json::to_string(&file)?)
}

pub fn parse_head_json(text: &str, origin: &str) -> Result<OutputHead> {
    let file: HeadFile = serde_json::from_str(text)
        .map_err(|e| Error::format(origin, e.line(), format!("column {}: {e}", e.column())))?;
    let fail = |m: String| Error::format(origin, 1, m);
    let v = file.vocab.len();
    if v == 0 || file.unembedding.len() != v || file.bias.len() != v {
        return Err(fail(format!(
            "vocab has {v} entries, unembedding {} rows, bias {} values",
            file.unembedding.len(),
            file.bias.len()
        )));
    }
    let unembedding = rows_to_matrix(&file.unembedding, "unembedding", &fail)?;
    if file.bias.iter().any(|x| !x.is_finite()) {
        return Err(fail("non-finite value in bias".into()));
    }
    Ok(OutputHead {
        vocab: file.vocab,
        unembedding: unembedding.into_array(),
        bias: Array1::from_iter(file.bias.iter().map(|&x| f64::from(x))),
    })
}

pub fn export_head(head: &OutputHead, path: &Path) -> Result<()> {
    write_atomic(path, write_head_json(head)?.as_bytes())
}

pub fn import_head(path: &Path) -> Result<OutputHead> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_head_json(&text, &path.display().to_string())
}

/// Check that imported states can be fed to `head`.
pub fn check_compatible(bundles: &[StateBundle], head: &OutputHead, origin: &str) -> Result<()> {
    for (i, b) in bundles.iter().enumerate() {
        if b.dim() != head.dim() {
            return Err(Error::format(
                origin,
                i + 1,
                format!("state dimension {} does not match head dimension {}", b.dim(), head.dim()),
            ));
        }
    }
    Ok(())
}

/// Token rows tagged `l1` or `l2` (other tags are skipped) as a classifier
/// dataset. Mask states are attached only when every bundle carries them.
pub fn bundles_to_dataset(bundles: &[StateBundle], l1: &str, l2: &str) -> Result<TokenDataset> {
    let with_masks = !bundles.is_empty() && bundles.iter().all(|b| b.mask_states.is_some());
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut masks: Vec<Vec<f64>> = Vec::new();
    let mut labels = Vec::new();
    for b in bundles {
        for (t, tag) in b.lang.iter().enumerate() {
            let side = if tag == l1 {
                Side::L1
            } else if tag == l2 {
                Side::L2
            } else {
                continue;
            };
            rows.push(b.states.row(t).to_vec());
            if let Some(m) = &b.mask_states {
                masks.push(m.row(t).to_vec());
            }
            labels.push(side);
        }
    }
    if rows.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut data = TokenDataset::new(EmbeddingMatrix::from_rows(&rows)?, labels)?.with_label_names(l1, l2);
    if with_masks {
        data = data.with_mask_embeddings(EmbeddingMatrix::from_rows(&masks)?)?;
    }
    Ok(data)
}

/// Stack every state row (used for bulk statistics).
pub fn stack_states(bundles: &[StateBundle]) -> Result<EmbeddingMatrix> {
    let first = bundles.first().ok_or(Error::EmptyRecords)?;
    let n: usize = bundles.iter().map(StateBundle::len).sum();
    let mut out = Array2::zeros((n, first.dim()));
    let mut r = 0;
    for b in bundles {
        for row in b.states.rows() {
            out.row_mut(r).assign(&row);
            r += 1;
        }
    }
    Ok(EmbeddingMatrix::new(out))
}
