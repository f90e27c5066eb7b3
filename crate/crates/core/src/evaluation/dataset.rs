//! JSONL ingestion. One example per line:
//!
//! ```json
//! {"id":"q1","question":"...","answers":["..."],"documents":[{"title":"...","text":"...","score":1.2,"is_oracle":true}]}
//! ```

use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::{EvalError, Result};
use crate::prompting::Document;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QAExample {
    pub id: String,
    pub question: String,
    pub answers: Vec<String>,
    #[serde(default)]
    pub documents: Vec<Document>,
}

impl QAExample {
    pub fn oracle_documents(&self) -> impl Iterator<Item = &Document> {
        self.documents.iter().filter(|d| d.is_oracle())
    }
}

fn read_jsonl<R: BufRead, T: DeserializeOwned>(
    reader: R,
) -> impl Iterator<Item = Result<(usize, T)>> {
    reader
        .lines()
        .enumerate()
        .filter_map(|(i, line)| {
            let line_no = i + 1;
            match line {
                Err(e) => Some(Err(EvalError::Ingest {
                    line: line_no,
                    message: e.to_string(),
                })),
                Ok(l) if l.trim().is_empty() => None,
                Ok(l) => Some(
                    serde_json::from_str(&l)
                        .map(|v| (line_no, v))
                        .map_err(|e| EvalError::Ingest {
                            line: line_no,
                            message: e.to_string(),
                        }),
                ),
            }
        })
}

/// Streams examples, reporting the line number of any malformed record.
pub fn read_dataset<R: BufRead>(reader: R) -> impl Iterator<Item = Result<QAExample>> {
    read_jsonl::<R, QAExample>(reader).map(|r| {
        let (line, ex) = r?;
        if ex.answers.is_empty() {
            return Err(EvalError::Ingest {
                line,
                message: format!("example {} has no gold answers", ex.id),
            });
        }
        if ex.question.trim().is_empty() {
            return Err(EvalError::Ingest {
                line,
                message: format!("example {} has an empty question", ex.id),
            });
        }
        if let Some(i) = ex.documents.iter().position(|d| d.content.is_empty()) {
            return Err(EvalError::Ingest {
                line,
                message: format!("example {}: document {i} has empty text", ex.id),
            });
        }
        Ok(ex)
    })
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|source| EvalError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Vec<QAExample>> {
    read_dataset(open(path.as_ref())?).collect()
}

/// Reads a JSONL file of bare documents.
pub fn read_documents(path: impl AsRef<Path>) -> Result<Vec<Document>> {
    read_jsonl::<_, Document>(open(path.as_ref())?)
        .map(|r| {
            let (line, d) = r?;
            if d.content.is_empty() {
                return Err(EvalError::Ingest {
                    line,
                    message: "document has empty text".into(),
                });
            }
            Ok(d)
        })
        .collect()
}
