//! Line-delimited record files under one directory.
//!
//! `reports.jsonl` and `ledger.jsonl` are append-only. The ledger file opens
//! with a header line carrying the opening balance. `context.jsonl` holds the
//! ingested documents and is rewritten on each ingest.

use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use bugdar_core::analysis::AnalysisReport;
use bugdar_core::gateway::{CreditLedger, LedgerEntry, LedgerError, RateCard, TokenUsage};
use bugdar_core::retrieval::ContextDoc;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const REPORTS_FILE: &str = "reports.jsonl";
pub const LEDGER_FILE: &str = "ledger.jsonl";
pub const CONTEXT_FILE: &str = "context.jsonl";

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}:{line}: {reason}")]
    Malformed { path: PathBuf, line: usize, reason: String },
    #[error("no report with id {0}")]
    UnknownReport(String),
    #[error(transparent)]
    Ledger(#[from] LedgerError),
}

#[derive(Serialize, Deserialize)]
struct LedgerHeader {
    opening_balance: u64,
}

/// The stored ledger as read, before any integrity judgement.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StoredLedger {
    pub opening_balance: u64,
    pub entries: Vec<LedgerEntry>,
}

impl StoredLedger {
    pub fn balance(&self) -> u64 {
        self.entries.last().map_or(self.opening_balance, |e| e.balance_after)
    }

    pub fn verify(&self) -> Result<CreditLedger, LedgerError> {
        CreditLedger::replay(self.opening_balance, self.entries.clone())
    }
}

#[derive(Debug)]
pub struct Store {
    root: PathBuf,
    write_lock: Mutex<()>,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> StoreError + '_ {
    move |source| StoreError::Io { path: path.to_path_buf(), source }
}

impl Store {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let root = root.into();
        fs::create_dir_all(&root).map_err(io_err(&root))?;
        Ok(Store { root, write_lock: Mutex::new(()) })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    fn append_lines(&self, name: &str, lines: &[String]) -> Result<(), StoreError> {
        let path = self.path(name);
        let mut file = OpenOptions::new().create(true).append(true).open(&path).map_err(io_err(&path))?;
        let mut buf = String::new();
        for line in lines {
            buf.push_str(line);
            buf.push('\n');
        }
        file.write_all(buf.as_bytes()).map_err(io_err(&path))?;
        file.sync_data().map_err(io_err(&path))
    }

    fn read_lines<T: for<'de> Deserialize<'de>>(&self, name: &str) -> Result<Vec<(usize, T)>, StoreError> {
        let path = self.path(name);
        let file = match File::open(&path) {
            Ok(f) => f,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(StoreError::Io { path, source: e }),
        };
        let mut out = Vec::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(io_err(&path))?;
            if line.trim().is_empty() {
                continue;
            }
            let value = serde_json::from_str(&line).map_err(|e| StoreError::Malformed {
                path: path.clone(),
                line: i + 1,
                reason: e.to_string(),
            })?;
            out.push((i + 1, value));
        }
        Ok(out)
    }

    pub fn persist(&self, report: &AnalysisReport) -> Result<String, StoreError> {
        let line = serde_json::to_string(report).expect("reports serialize");
        let _guard = self.write_lock.lock().expect("store lock");
        self.append_lines(REPORTS_FILE, &[line])?;
        Ok(report.report_id.clone())
    }

    pub fn reports(&self) -> Result<Vec<AnalysisReport>, StoreError> {
        Ok(self.read_lines(REPORTS_FILE)?.into_iter().map(|(_, r)| r).collect())
    }

    pub fn load(&self, report_id: &str) -> Result<AnalysisReport, StoreError> {
        self.reports()?
            .into_iter()
            .find(|r| r.report_id == report_id)
            .ok_or_else(|| StoreError::UnknownReport(report_id.into()))
    }

    /// Reads the ledger file, or an empty ledger at `default_opening` when
    /// none exists yet.
    pub fn read_ledger(&self, default_opening: u64) -> Result<StoredLedger, StoreError> {
        let path = self.path(LEDGER_FILE);
        let lines: Vec<(usize, serde_json::Value)> = self.read_lines(LEDGER_FILE)?;
        let mut iter = lines.into_iter();
        let opening_balance = match iter.next() {
            None => return Ok(StoredLedger { opening_balance: default_opening, entries: Vec::new() }),
            Some((line, v)) => {
                serde_json::from_value::<LedgerHeader>(v)
                    .map_err(|e| StoreError::Malformed {
                        path: path.clone(),
                        line,
                        reason: format!("ledger header: {e}"),
                    })?
                    .opening_balance
            }
        };
        let entries = iter
            .map(|(line, v)| {
                serde_json::from_value(v).map_err(|e| StoreError::Malformed {
                    path: path.clone(),
                    line,
                    reason: e.to_string(),
                })
            })
            .collect::<Result<_, _>>()?;
        Ok(StoredLedger { opening_balance, entries })
    }

    fn append_ledger(&self, opening_balance: u64, fresh_file: bool, entries: &[LedgerEntry]) -> Result<(), StoreError> {
        let mut lines = Vec::with_capacity(entries.len() + 1);
        if fresh_file {
            lines.push(serde_json::to_string(&LedgerHeader { opening_balance }).expect("header serializes"));
        }
        lines.extend(entries.iter().map(|e| serde_json::to_string(e).expect("entries serialize")));
        self.append_lines(LEDGER_FILE, &lines)
    }

    pub fn save_context(&self, docs: &[ContextDoc]) -> Result<(), StoreError> {
        let path = self.path(CONTEXT_FILE);
        let tmp = self.path(&format!("{CONTEXT_FILE}.tmp"));
        let mut buf = String::new();
        for doc in docs {
            buf.push_str(&serde_json::to_string(doc).expect("docs serialize"));
            buf.push('\n');
        }
        fs::write(&tmp, buf).map_err(io_err(&tmp))?;
        fs::rename(&tmp, &path).map_err(io_err(&path))
    }

    pub fn load_context(&self) -> Result<Vec<ContextDoc>, StoreError> {
        Ok(self.read_lines(CONTEXT_FILE)?.into_iter().map(|(_, d)| d).collect())
    }
}

/// The live credit account: an in-memory ledger mirrored to the store.
/// Debits are serialized through one lock.
#[derive(Debug)]
pub struct LedgerBook {
    ledger: Mutex<CreditLedger>,
    rates: RateCard,
}

impl LedgerBook {
    /// Loads and verifies the stored ledger; a corrupt ledger is refused.
    pub fn open(store: &Store, default_opening: u64, rates: RateCard) -> Result<Self, StoreError> {
        let stored = store.read_ledger(default_opening)?;
        let ledger = stored.verify()?;
        Ok(LedgerBook { ledger: Mutex::new(ledger), rates })
    }

    /// In-memory only; nothing is written.
    pub fn detached(opening_balance: u64, rates: RateCard) -> Self {
        LedgerBook { ledger: Mutex::new(CreditLedger::new(opening_balance)), rates }
    }

    pub fn rates(&self) -> &RateCard {
        &self.rates
    }

    pub fn balance(&self) -> u64 {
        self.ledger.lock().expect("ledger lock").balance
    }

    pub fn snapshot(&self) -> CreditLedger {
        self.ledger.lock().expect("ledger lock").clone()
    }

    /// Debits each `(model, usage)` pair in order, all or nothing, and
    /// appends the new entries to `store` when given.
    pub fn debit_all(
        &self,
        store: Option<&Store>,
        timestamp_ms: u64,
        charges: &[(String, TokenUsage)],
    ) -> Result<Vec<LedgerEntry>, StoreError> {
        let mut guard = self.ledger.lock().expect("ledger lock");
        let mut next = guard.clone();
        for (model, usage) in charges {
            next.debit(timestamp_ms, model, *usage, &self.rates)?;
        }
        let fresh: Vec<LedgerEntry> = next.entries[guard.entries.len()..].to_vec();
        if let Some(store) = store {
            if !fresh.is_empty() {
                let _w = store.write_lock.lock().expect("store lock");
                let fresh_file = !store.path(LEDGER_FILE).exists();
                store.append_ledger(next.opening_balance, fresh_file, &fresh)?;
            }
        }
        *guard = next;
        Ok(fresh)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use bugdar_core::diff::PullRequestRef;

    fn report(id: &str) -> AnalysisReport {
        AnalysisReport {
            report_id: id.into(),
            pr: PullRequestRef::local("x"),
            findings: vec![],
            chunk_count: 1,
            per_chunk_provenance: vec![],
            usage_total: TokenUsage::default(),
            elapsed_ms: 0,
            created_at_ms: 5,
            chunk_failures: vec![],
            note: None,
        }
    }

    #[test]
    fn persist_then_load() {
        let dir = tempfile::tempdir().unwrap();
        let store = Store::open(dir.path()).unwrap();
        store.persist(&report("a")).unwrap();
        store.persist(&report("b")).unwrap();
        assert_eq!(store.load("b").unwrap(), report("b"));
        assert!(matches!(store.load("zzz"), Err(StoreError::UnknownReport(_))));
    }

    #[test]
    fn ledger_round_trips_and_is_verified_on_open() {
        let dir = tempfile::tempdir().unwrap();
        let store = Store::open(dir.path()).unwrap();
        let rates = RateCard::default().with("m", 3, 12);
        let book = LedgerBook::open(&store, 1_000, rates.clone()).unwrap();
        assert_eq!(book.balance(), 1_000);
        book.debit_all(Some(&store), 1, &[("m".into(), TokenUsage::new(1_500, 200))]).unwrap();
        assert_eq!(book.balance(), 992);

        let reopened = LedgerBook::open(&store, 999_999, rates.clone()).unwrap();
        assert_eq!(reopened.balance(), 992);
        let stored = store.read_ledger(0).unwrap();
        assert_eq!(stored.opening_balance, 1_000);
        assert_eq!(stored.entries.len(), 1);

        let err = book.debit_all(Some(&store), 2, &[("m".into(), TokenUsage::new(1_000_000, 0))]).unwrap_err();
        assert!(matches!(err, StoreError::Ledger(LedgerError::InsufficientCredits { .. })));
        assert_eq!(store.read_ledger(0).unwrap().entries.len(), 1);
    }

    #[test]
    fn context_docs_are_replaced_wholesale() {
        let dir = tempfile::tempdir().unwrap();
        let store = Store::open(dir.path()).unwrap();
        assert!(store.load_context().unwrap().is_empty());
        let doc = ContextDoc {
            doc_id: "a.md".into(),
            source_path: "a.md".into(),
            kind: bugdar_core::retrieval::DocKind::DesignDoc,
            text: "hello".into(),
        };
        store.save_context(std::slice::from_ref(&doc)).unwrap();
        store.save_context(&[doc.clone(), doc.clone()]).unwrap();
        assert_eq!(store.load_context().unwrap(), vec![doc.clone(), doc]);
    }
}
