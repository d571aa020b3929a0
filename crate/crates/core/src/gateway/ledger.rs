use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::TokenUsage;
use crate::digest::sha256_hex;

/// Micro-credits per 1,000 tokens.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelRate {
    pub prompt_rate: u64,
    pub completion_rate: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RateCard(pub BTreeMap<String, ModelRate>);

impl RateCard {
    pub fn with(mut self, model_id: impl Into<String>, prompt_rate: u64, completion_rate: u64) -> Self {
        self.0.insert(model_id.into(), ModelRate { prompt_rate, completion_rate });
        self
    }

    pub fn get(&self, model_id: &str) -> Option<ModelRate> {
        self.0.get(model_id).copied()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LedgerError {
    #[error("no rate configured for model {0}")]
    UnknownModel(String),
    #[error("insufficient credits: balance {balance}, cost {cost}")]
    InsufficientCredits { balance: u64, cost: u64 },
    #[error("ledger corrupt at entry {seq}: {reason}")]
    Corrupt { seq: u64, reason: String },
}

fn ceil_per_thousand(tokens: u64, rate: u64) -> u64 {
    let product = u128::from(tokens) * u128::from(rate);
    product.div_ceil(1000) as u64
}

/// `ceil(prompt × prompt_rate / 1000) + ceil(completion × completion_rate / 1000)`.
pub fn cost_of(usage: &TokenUsage, model_id: &str, rates: &RateCard) -> Result<u64, LedgerError> {
    let rate = rates.get(model_id).ok_or_else(|| LedgerError::UnknownModel(model_id.into()))?;
    Ok(ceil_per_thousand(usage.prompt_tokens, rate.prompt_rate)
        + ceil_per_thousand(usage.completion_tokens, rate.completion_rate))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub seq: u64,
    pub timestamp_ms: u64,
    pub model_id: String,
    pub usage: TokenUsage,
    pub cost: u64,
    pub balance_after: u64,
    /// Chains this entry to its predecessor; see [`CreditLedger::verify`].
    pub digest: String,
}

fn entry_digest(
    prev: &str,
    seq: u64,
    timestamp_ms: u64,
    model_id: &str,
    usage: &TokenUsage,
    cost: u64,
    balance_after: u64,
) -> String {
    let fields = format!(
        "{seq}|{timestamp_ms}|{model_id}|{}|{}|{}|{cost}|{balance_after}",
        usage.prompt_tokens, usage.completion_tokens, usage.total_tokens
    );
    sha256_hex(&[prev.as_bytes(), fields.as_bytes()])
}

fn genesis_digest(opening_balance: u64) -> String {
    sha256_hex(&[b"opening", format!("{opening_balance}").as_bytes()])
}

/// Append-only credit account in integer micro-credits.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CreditLedger {
    pub opening_balance: u64,
    pub balance: u64,
    pub entries: Vec<LedgerEntry>,
}

impl CreditLedger {
    pub fn new(opening_balance: u64) -> Self {
        CreditLedger { opening_balance, balance: opening_balance, entries: Vec::new() }
    }

    fn head_digest(&self) -> String {
        self.entries.last().map_or_else(|| genesis_digest(self.opening_balance), |e| e.digest.clone())
    }

    /// Charges `cost_of(usage)` against the balance. On any error the ledger
    /// is left untouched.
    pub fn debit(
        &mut self,
        timestamp_ms: u64,
        model_id: &str,
        usage: TokenUsage,
        rates: &RateCard,
    ) -> Result<&LedgerEntry, LedgerError> {
        let cost = cost_of(&usage, model_id, rates)?;
        self.debit_cost(timestamp_ms, model_id, usage, cost)
    }

    pub fn debit_cost(
        &mut self,
        timestamp_ms: u64,
        model_id: &str,
        usage: TokenUsage,
        cost: u64,
    ) -> Result<&LedgerEntry, LedgerError> {
        if cost > self.balance {
            return Err(LedgerError::InsufficientCredits { balance: self.balance, cost });
        }
        let seq = self.entries.len() as u64;
        let balance_after = self.balance - cost;
        let digest = entry_digest(&self.head_digest(), seq, timestamp_ms, model_id, &usage, cost, balance_after);
        self.entries.push(LedgerEntry {
            seq,
            timestamp_ms,
            model_id: model_id.into(),
            usage,
            cost,
            balance_after,
            digest,
        });
        self.balance = balance_after;
        Ok(self.entries.last().expect("just pushed"))
    }

    /// Rebuilds a ledger from stored entries and checks it.
    pub fn replay(opening_balance: u64, entries: Vec<LedgerEntry>) -> Result<Self, LedgerError> {
        let balance = entries.last().map_or(opening_balance, |e| e.balance_after);
        let ledger = CreditLedger { opening_balance, balance, entries };
        ledger.verify()?;
        Ok(ledger)
    }

    /// Folds every entry's cost from the opening balance and checks each
    /// running balance, sequence number and chained digest, then the final
    /// balance.
    pub fn verify(&self) -> Result<(), LedgerError> {
        let mut balance = self.opening_balance;
        let mut prev = genesis_digest(self.opening_balance);
        for (i, entry) in self.entries.iter().enumerate() {
            let corrupt = |reason: String| LedgerError::Corrupt { seq: i as u64, reason };
            if entry.seq != i as u64 {
                return Err(corrupt(format!("sequence number {}", entry.seq)));
            }
            if !entry.usage.is_consistent() {
                return Err(corrupt("usage total disagrees with its parts".into()));
            }
            balance = balance
                .checked_sub(entry.cost)
                .ok_or_else(|| corrupt(format!("cost {} exceeds running balance {balance}", entry.cost)))?;
            if entry.balance_after != balance {
                return Err(corrupt(format!("running balance {} but replay gives {balance}", entry.balance_after)));
            }
            let expected = entry_digest(
                &prev,
                entry.seq,
                entry.timestamp_ms,
                &entry.model_id,
                &entry.usage,
                entry.cost,
                entry.balance_after,
            );
            if entry.digest != expected {
                return Err(corrupt("digest chain broken".into()));
            }
            prev = expected;
        }
        if balance != self.balance {
            return Err(LedgerError::Corrupt {
                seq: self.entries.len() as u64,
                reason: format!("final balance {} but replay gives {balance}", self.balance),
            });
        }
        Ok(())
    }
}
