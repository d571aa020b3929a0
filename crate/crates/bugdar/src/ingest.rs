//! Walks a directory into context documents for the retrieval index.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use bugdar_core::retrieval::{ContextDoc, DocKind, Index, RetrievalError};
use thiserror::Error;
use walkdir::WalkDir;

use crate::store::{Store, StoreError};

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("{0}: not a readable directory")]
    NotADirectory(PathBuf),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error(transparent)]
    Store(#[from] StoreError),
}

/// A file left out of the index, with the reason.
pub type Skip = (PathBuf, String);

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct IngestSummary {
    pub counts: BTreeMap<DocKind, usize>,
    pub skipped: Vec<Skip>,
    pub index_size: usize,
}

impl IngestSummary {
    pub fn ingested(&self) -> usize {
        self.counts.values().sum()
    }

    /// `"2 design_doc, 1 historical_code"`, or `"0 documents"`.
    pub fn describe(&self) -> String {
        if self.ingested() == 0 {
            return "0 documents".into();
        }
        self.counts
            .iter()
            .filter(|(_, &n)| n > 0)
            .map(|(k, n)| format!("{n} {}", k.as_str()))
            .collect::<Vec<_>>()
            .join(", ")
    }
}

/// Reads every regular file under `dir`. Unreadable, non-UTF-8 and empty
/// files are skipped and reported.
pub fn collect_docs(dir: &Path, kind_override: Option<DocKind>) -> Result<(Vec<ContextDoc>, Vec<Skip>), IngestError> {
    if !dir.is_dir() {
        return Err(IngestError::NotADirectory(dir.to_path_buf()));
    }
    let mut docs = Vec::new();
    let mut skipped = Vec::new();
    for entry in WalkDir::new(dir).sort_by_file_name() {
        let entry = match entry {
            Ok(e) => e,
            Err(e) => {
                skipped.push((e.path().map(Path::to_path_buf).unwrap_or_default(), e.to_string()));
                continue;
            }
        };
        if entry.file_type().is_dir() {
            continue;
        }
        let path = entry.path();
        let rel = path.strip_prefix(dir).unwrap_or(path).to_string_lossy().replace('\\', "/");
        match std::fs::read_to_string(path) {
            Ok(text) if text.trim().is_empty() => skipped.push((path.to_path_buf(), "empty file".into())),
            Ok(text) => docs.push(ContextDoc {
                doc_id: rel.clone(),
                kind: kind_override.unwrap_or_else(|| DocKind::for_path(&rel)),
                source_path: path.to_string_lossy().into_owned(),
                text,
            }),
            Err(e) => skipped.push((path.to_path_buf(), e.to_string())),
        }
    }
    Ok((docs, skipped))
}

/// Ingests `dir` into the store's context index, replacing documents with
/// the same id.
pub fn ingest_dir(store: &Store, dir: &Path, kind_override: Option<DocKind>) -> Result<IngestSummary, IngestError> {
    let (docs, skipped) = collect_docs(dir, kind_override)?;
    let mut counts = BTreeMap::new();
    for d in &docs {
        *counts.entry(d.kind).or_insert(0) += 1;
    }
    let mut index = Index::default();
    index.ingest(store.load_context()?)?;
    index.ingest(docs)?;
    let all: Vec<ContextDoc> = index.docs().cloned().collect();
    store.save_context(&all)?;
    Ok(IngestSummary { counts, skipped, index_size: all.len() })
}

/// The stored context documents as a retrieval index.
pub fn load_index(store: &Store) -> Result<Index, IngestError> {
    let mut index = Index::default();
    index.ingest(store.load_context()?)?;
    Ok(index)
}
