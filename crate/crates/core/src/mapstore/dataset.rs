//! Line-delimited JSON datasets, one record per line:
//!
//! ```text
//! {"id":"p003-i017","place_id":3,"split":"reference","caption":"...","embedding":[...]}
//! ```
//!
//! An optional `"text_embedding"` array overrides the hashed caption embedding.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::la::EmbeddingVector;
use crate::textembed::HashedBowEmbedder;
use crate::wire::{read_file, write_atomic};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Reference,
    Query,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetRecord {
    pub id: String,
    pub place_id: u32,
    pub split: Split,
    pub caption: String,
    pub image_embedding: EmbeddingVector,
    pub text_embedding: Option<EmbeddingVector>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Line {
    id: String,
    place_id: u32,
    split: Split,
    caption: String,
    embedding: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    text_embedding: Option<Vec<f64>>,
}

/// Records plus the caption embedding used for each (file-provided or hashed).
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub records: Vec<DatasetRecord>,
    pub text: Vec<EmbeddingVector>,
}

impl Dataset {
    /// Fills `text` from the records, hashing captions that carry no embedding.
    pub fn from_records(records: Vec<DatasetRecord>, embedder: &HashedBowEmbedder) -> Result<Self> {
        let text: Vec<EmbeddingVector> = records
            .iter()
            .map(|r| match &r.text_embedding {
                Some(t) => t.clone(),
                None => embedder.embed(&r.caption).vector,
            })
            .collect();
        if let Some(first) = records.first() {
            let d = first.image_embedding.dim();
            let td = text[0].dim();
            for (r, t) in records.iter().zip(&text) {
                if r.image_embedding.dim() != d {
                    return Err(Error::DimensionMismatch {
                        expected: d,
                        found: r.image_embedding.dim(),
                    });
                }
                if t.dim() != td {
                    return Err(Error::DimensionMismatch {
                        expected: td,
                        found: t.dim(),
                    });
                }
            }
        }
        Ok(Self { records, text })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn image_dim(&self) -> usize {
        self.records.first().map_or(0, |r| r.image_embedding.dim())
    }

    pub fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.len())
            .filter(|&i| self.records[i].split == split)
            .collect()
    }

    pub fn images(&self, idx: &[usize]) -> Vec<EmbeddingVector> {
        idx.iter()
            .map(|&i| self.records[i].image_embedding.clone())
            .collect()
    }

    pub fn texts(&self, idx: &[usize]) -> Vec<EmbeddingVector> {
        idx.iter().map(|&i| self.text[i].clone()).collect()
    }

    pub fn captions(&self, idx: &[usize]) -> Vec<&str> {
        idx.iter()
            .map(|&i| self.records[i].caption.as_str())
            .collect()
    }

    pub fn places(&self, idx: &[usize]) -> Vec<u32> {
        idx.iter().map(|&i| self.records[i].place_id).collect()
    }
}

fn parse_error(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

/// Parses dataset text. Line numbers in errors are 1-based.
pub fn parse_dataset(text: &str, path: &Path, embedder: &HashedBowEmbedder) -> Result<Dataset> {
    let mut records = Vec::new();
    let mut image_dim = None;
    let mut text_dim = None;
    for (i, raw) in text.lines().enumerate() {
        let lineno = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let l: Line =
            serde_json::from_str(raw).map_err(|e| parse_error(path, lineno, e.to_string()))?;
        let image = EmbeddingVector::new(l.embedding)
            .map_err(|e| parse_error(path, lineno, e.to_string()))?;
        let d = *image_dim.get_or_insert(image.dim());
        if image.dim() != d {
            return Err(parse_error(
                path,
                lineno,
                format!(
                    "embedding dimension mismatch: expected {d}, found {}",
                    image.dim()
                ),
            ));
        }
        let text_embedding = match l.text_embedding {
            Some(v) => Some(
                EmbeddingVector::new(v).map_err(|e| parse_error(path, lineno, e.to_string()))?,
            ),
            None => None,
        };
        let td = text_embedding
            .as_ref()
            .map_or(embedder.dim, EmbeddingVector::dim);
        let want = *text_dim.get_or_insert(td);
        if td != want {
            return Err(parse_error(
                path,
                lineno,
                format!("text embedding dimension mismatch: expected {want}, found {td}"),
            ));
        }
        records.push(DatasetRecord {
            id: l.id,
            place_id: l.place_id,
            split: l.split,
            caption: l.caption,
            image_embedding: image,
            text_embedding,
        });
    }
    if records.is_empty() {
        return Err(parse_error(path, 0, "no records"));
    }
    Dataset::from_records(records, embedder)
}

pub fn load_dataset(path: &Path, embedder: &HashedBowEmbedder) -> Result<Dataset> {
    let bytes = read_file(path)?;
    let text =
        String::from_utf8(bytes).map_err(|e| parse_error(path, 0, format!("not UTF-8: {e}")))?;
    parse_dataset(&text, path, embedder)
}

pub fn dataset_to_string(records: &[DatasetRecord]) -> String {
    let mut out = String::new();
    for r in records {
        let l = Line {
            id: r.id.clone(),
            place_id: r.place_id,
            split: r.split,
            caption: r.caption.clone(),
            embedding: r.image_embedding.as_slice().to_vec(),
            text_embedding: r.text_embedding.as_ref().map(|t| t.as_slice().to_vec()),
        };
        out.push_str(&serde_json::to_string(&l).expect("records serialize"));
        out.push('\n');
    }
    out
}

pub fn save_dataset(path: &Path, records: &[DatasetRecord]) -> Result<()> {
    write_atomic(path, dataset_to_string(records).as_bytes())
}
