//! Prompt construction for parallel per-document decoding, concatenated
//! decoding, and the closed-book (no document) conditioning.
//!
//! Layout, with exactly one blank line between blocks:
//!
//! ```text
//! Write a high-quality answer for the given question using only the provided search results.
//!
//! Document [1] (Title: ...) ...
//! Document [2] (Title: ...) ...
//!
//! Question: ...
//! Answer:
//! ```
//!
//! Parallel prompts hold a single unnumbered `Document (Title: ...)` block.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PromptError {
    #[error("question is empty")]
    EmptyQuestion,
    #[error("no documents to concatenate")]
    EmptyContext,
    #[error("document content is empty")]
    EmptyDocument,
}

/// A retrieved passage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Document {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub title: Option<String>,
    #[serde(rename = "text")]
    pub content: String,
    #[serde(default, rename = "score", skip_serializing_if = "Option::is_none")]
    pub retriever_score: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub is_oracle: Option<bool>,
}

impl Document {
    pub fn new(title: impl Into<String>, content: impl Into<String>) -> Self {
        Self {
            title: Some(title.into()),
            content: content.into(),
            retriever_score: None,
            is_oracle: None,
        }
    }

    pub fn untitled(content: impl Into<String>) -> Self {
        Self {
            title: None,
            content: content.into(),
            retriever_score: None,
            is_oracle: None,
        }
    }

    pub fn with_score(mut self, score: f64) -> Self {
        self.retriever_score = Some(score);
        self
    }

    pub fn oracle(mut self, is_oracle: bool) -> Self {
        self.is_oracle = Some(is_oracle);
        self
    }

    pub fn is_oracle(&self) -> bool {
        self.is_oracle.unwrap_or(false)
    }
}

/// Prompt strings. Slots: `{title}`, `{content}`, `{index}`, `{question}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PromptTemplate {
    pub instruction: String,
    pub document: String,
    pub untitled_document: String,
    pub indexed_document: String,
    pub indexed_untitled_document: String,
    pub question: String,
}

impl Default for PromptTemplate {
    fn default() -> Self {
        Self {
            instruction: "Write a high-quality answer for the given question using only the provided search results.".into(),
            document: "Document (Title: {title}) {content}".into(),
            untitled_document: "Document: {content}".into(),
            indexed_document: "Document [{index}] (Title: {title}) {content}".into(),
            indexed_untitled_document: "Document [{index}]: {content}".into(),
            question: "Question: {question}\nAnswer:".into(),
        }
    }
}

impl PromptTemplate {
    fn document_block(&self, doc: &Document, index: Option<usize>) -> String {
        let format = match (&doc.title, index) {
            (Some(_), None) => &self.document,
            (None, None) => &self.untitled_document,
            (Some(_), Some(_)) => &self.indexed_document,
            (None, Some(_)) => &self.indexed_untitled_document,
        };
        let mut block = format
            .replace("{title}", doc.title.as_deref().unwrap_or(""))
            .replace("{content}", &doc.content);
        if let Some(i) = index {
            block = block.replace("{index}", &i.to_string());
        }
        block
    }

    fn question_block(&self, question: &str) -> Result<String, PromptError> {
        if question.trim().is_empty() {
            return Err(PromptError::EmptyQuestion);
        }
        Ok(self.question.replace("{question}", question))
    }

    /// One document, for document-parallel decoding.
    pub fn parallel(&self, doc: &Document, question: &str) -> Result<String, PromptError> {
        if doc.content.is_empty() {
            return Err(PromptError::EmptyDocument);
        }
        Ok(format!(
            "{}\n\n{}\n\n{}",
            self.instruction,
            self.document_block(doc, None),
            self.question_block(question)?
        ))
    }

    /// All documents numbered `[1..K]` in the given order.
    pub fn concat(&self, docs: &[Document], question: &str) -> Result<String, PromptError> {
        if docs.is_empty() {
            return Err(PromptError::EmptyContext);
        }
        if docs.iter().any(|d| d.content.is_empty()) {
            return Err(PromptError::EmptyDocument);
        }
        let blocks: Vec<String> = docs
            .iter()
            .enumerate()
            .map(|(i, d)| self.document_block(d, Some(i + 1)))
            .collect();
        Ok(format!(
            "{}\n\n{}\n\n{}",
            self.instruction,
            blocks.join("\n"),
            self.question_block(question)?
        ))
    }

    pub fn closed_book(&self, question: &str) -> Result<String, PromptError> {
        Ok(format!("{}\n\n{}", self.instruction, self.question_block(question)?))
    }
}

pub fn build_parallel_prompt(doc: &Document, question: &str) -> Result<String, PromptError> {
    PromptTemplate::default().parallel(doc, question)
}

pub fn build_concat_prompt(docs: &[Document], question: &str) -> Result<String, PromptError> {
    PromptTemplate::default().concat(docs, question)
}

pub fn build_closed_book_prompt(question: &str) -> Result<String, PromptError> {
    PromptTemplate::default().closed_book(question)
}
