//! Token estimation and greedy partitioning of diffs into context-sized
//! chunks.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diff::{FileDiff, Hunk, Language, LineKind};

/// Lines repeated from the previous slice when a hunk must be split.
pub const SPLIT_OVERLAP_LINES: usize = 5;

/// Prefix of the per-file header line in rendered chunks.
pub const FILE_HEADER_PREFIX: &str = "=== FILE: ";
pub const FILE_HEADER_SUFFIX: &str = " ===";

/// `ceil(bytes / 4)`.
pub fn estimate_tokens(text: &str) -> usize {
    bytes_to_tokens(text.len())
}

fn bytes_to_tokens(bytes: usize) -> usize {
    bytes.div_ceil(4)
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ChunkError {
    #[error("reserved tokens ({reserved}) must be below the context size ({max})")]
    NoRoom { max: usize, reserved: usize },
    #[error("line {line} of {path} needs {tokens} tokens, more than the {budget}-token budget")]
    OversizeLine { path: String, line: u64, tokens: usize, budget: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenBudget {
    pub max_context_tokens: usize,
    /// Prompt scaffolding, retrieved context and response headroom.
    pub reserved_tokens: usize,
}

impl TokenBudget {
    pub fn new(max_context_tokens: usize, reserved_tokens: usize) -> Result<Self, ChunkError> {
        let budget = TokenBudget { max_context_tokens, reserved_tokens };
        budget.validate()?;
        Ok(budget)
    }

    pub fn validate(&self) -> Result<(), ChunkError> {
        if self.reserved_tokens >= self.max_context_tokens {
            return Err(ChunkError::NoRoom { max: self.max_context_tokens, reserved: self.reserved_tokens });
        }
        Ok(())
    }

    /// Tokens left for diff content.
    pub fn effective(&self) -> usize {
        self.max_context_tokens.saturating_sub(self.reserved_tokens)
    }
}

/// A whole hunk, or a line-range slice of one, placed in a chunk.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChunkPiece {
    pub file_index: usize,
    pub hunk_index: usize,
    pub path: String,
    pub language: Language,
    /// Line range of the original hunk covered by this piece, when split.
    pub slice: Option<(usize, usize)>,
    /// Leading lines duplicated from the previous slice.
    pub overlap_lines: usize,
    pub hunk: Hunk,
    pub estimated_tokens: usize,
}

impl ChunkPiece {
    /// Lines of this piece that did not already appear in an earlier slice.
    pub fn fresh_lines(&self) -> &[crate::diff::ChangedLine] {
        &self.hunk.lines[self.overlap_lines..]
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Chunk {
    pub index: usize,
    pub pieces: Vec<ChunkPiece>,
    pub estimated_tokens: usize,
    pub overlap_lines: usize,
}

impl Chunk {
    /// Distinct file paths in first-appearance order.
    pub fn paths(&self) -> Vec<&str> {
        let mut out: Vec<&str> = Vec::new();
        for piece in &self.pieces {
            if !out.contains(&piece.path.as_str()) {
                out.push(&piece.path);
            }
        }
        out
    }

    pub fn languages(&self) -> Vec<Language> {
        let mut out = Vec::new();
        for piece in &self.pieces {
            if !out.contains(&piece.language) {
                out.push(piece.language);
            }
        }
        out
    }

    /// True when some piece of `path` spans new-side lines `start..=end`.
    pub fn covers(&self, path: &str, start: u64, end: u64) -> bool {
        self.pieces.iter().any(|p| p.path == path && p.hunk.new_span().is_some_and(|(lo, hi)| lo <= start && end <= hi))
    }

    /// Renders the chunk for an analyzer: one header per file, hunk headers,
    /// and each line prefixed by its new-side line number (blank for
    /// removed lines) and its change marker.
    pub fn render(&self) -> String {
        let mut out = String::new();
        let mut last_path: Option<&str> = None;
        for piece in &self.pieces {
            if last_path != Some(piece.path.as_str()) {
                if last_path.is_some() {
                    out.push('\n');
                }
                let _ = writeln!(out, "{FILE_HEADER_PREFIX}{}{FILE_HEADER_SUFFIX}", piece.path);
                last_path = Some(&piece.path);
            }
            out.push_str(&piece.hunk.render_header());
            out.push('\n');
            for (line, number) in piece.hunk.lines.iter().zip(piece.hunk.new_line_numbers()) {
                match number {
                    Some(n) => {
                        let _ = write!(out, "{n:>6}");
                    }
                    None => out.push_str("      "),
                }
                out.push(' ');
                out.push(line.kind.prefix());
                out.push(' ');
                out.push_str(&line.text);
                out.push('\n');
            }
        }
        out
    }
}

/// A line of rendered chunk text, as read back by analyzers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RenderedLine<'a> {
    pub path: &'a str,
    pub new_line: Option<u64>,
    pub kind: LineKind,
    pub text: &'a str,
}

/// Parses text produced by [`Chunk::render`]. Lines that do not follow the
/// rendered layout are skipped; returns an empty list when no file header is
/// present.
pub fn parse_rendered(text: &str) -> Vec<RenderedLine<'_>> {
    let mut out = Vec::new();
    let mut path: Option<&str> = None;
    for line in text.lines() {
        if let Some(p) = line.strip_prefix(FILE_HEADER_PREFIX).and_then(|r| r.strip_suffix(FILE_HEADER_SUFFIX)) {
            path = Some(p);
            continue;
        }
        let Some(path) = path else { continue };
        let (Some(number), Some(rest)) = (line.get(..6), line.get(6..)) else { continue };
        let bytes = rest.as_bytes();
        if bytes.len() < 3 || bytes[0] != b' ' || bytes[2] != b' ' {
            continue;
        }
        let kind = match bytes[1] {
            b'+' => LineKind::Added,
            b'-' => LineKind::Removed,
            b' ' => LineKind::Context,
            _ => continue,
        };
        let trimmed = number.trim();
        let new_line = if trimmed.is_empty() {
            None
        } else {
            match trimmed.parse() {
                Ok(n) => Some(n),
                Err(_) => continue,
            }
        };
        if new_line.is_none() != (kind == LineKind::Removed) {
            continue;
        }
        out.push(RenderedLine { path, new_line, kind, text: &rest[3..] });
    }
    out
}

fn hunk_bytes(hunk: &Hunk) -> usize {
    hunk.lines.iter().map(|l| l.rendered_len()).sum()
}

struct Packer {
    budget: usize,
    chunks: Vec<Chunk>,
    open: Vec<ChunkPiece>,
    open_tokens: usize,
}

impl Packer {
    fn close(&mut self) {
        if self.open.is_empty() {
            return;
        }
        let pieces = core::mem::take(&mut self.open);
        let overlap_lines = pieces[0].overlap_lines;
        self.chunks.push(Chunk { index: self.chunks.len(), pieces, estimated_tokens: self.open_tokens, overlap_lines });
        self.open_tokens = 0;
    }

    fn push(&mut self, piece: ChunkPiece) {
        if !self.open.is_empty() && self.open_tokens + piece.estimated_tokens > self.budget {
            self.close();
        }
        self.open_tokens += piece.estimated_tokens;
        self.open.push(piece);
    }
}

/// Line ranges `(start, end, overlap)` covering `hunk` such that each range
/// fits `budget`; consecutive ranges share up to [`SPLIT_OVERLAP_LINES`].
fn split_ranges(hunk: &Hunk, budget: usize) -> Vec<(usize, usize, usize)> {
    let costs: Vec<usize> = hunk.lines.iter().map(|l| l.rendered_len()).collect();
    let fits = |range: &[usize]| bytes_to_tokens(range.iter().sum()) <= budget;
    let n = costs.len();
    let mut out = Vec::new();
    let mut start = 0;
    let mut overlap = 0;
    loop {
        let mut end = start;
        let mut bytes = 0;
        while end < n && bytes_to_tokens(bytes + costs[end]) <= budget {
            bytes += costs[end];
            end += 1;
        }
        debug_assert!(end > start + overlap || end == n);
        out.push((start, end, overlap));
        if end == n {
            return out;
        }
        let mut k = SPLIT_OVERLAP_LINES.min(end - start);
        while k > 0 && !fits(&costs[end - k..=end]) {
            k -= 1;
        }
        start = end - k;
        overlap = k;
    }
}

fn check_lines(file: &FileDiff, hunk: &Hunk, budget: usize) -> Result<(), ChunkError> {
    let numbers = hunk.new_line_numbers().zip(hunk.old_line_numbers());
    for (line, (new_no, old_no)) in hunk.lines.iter().zip(numbers) {
        let tokens = bytes_to_tokens(line.rendered_len());
        if tokens > budget {
            return Err(ChunkError::OversizeLine {
                path: file.path().into(),
                line: new_no.or(old_no).unwrap_or(0),
                tokens,
                budget,
            });
        }
    }
    Ok(())
}

/// Greedy first-fit partition of `diffs` into chunks within `budget`.
///
/// Hunks are kept whole unless one alone exceeds the budget; such a hunk is
/// cut at line boundaries, each slice opening a new chunk and repeating the
/// last few lines of its predecessor. Binary files contribute nothing.
pub fn partition(diffs: &[FileDiff], budget: TokenBudget) -> Result<Vec<Chunk>, ChunkError> {
    budget.validate()?;
    let effective = budget.effective();
    for file in diffs.iter().filter(|f| !f.is_binary) {
        for hunk in &file.hunks {
            check_lines(file, hunk, effective)?;
        }
    }

    let mut packer = Packer { budget: effective, chunks: Vec::new(), open: Vec::new(), open_tokens: 0 };
    for (file_index, file) in diffs.iter().enumerate() {
        if file.is_binary {
            continue;
        }
        let path = file.path();
        for (hunk_index, hunk) in file.hunks.iter().enumerate() {
            if hunk.lines.is_empty() {
                continue;
            }
            let tokens = bytes_to_tokens(hunk_bytes(hunk));
            if tokens <= effective {
                packer.push(ChunkPiece {
                    file_index,
                    hunk_index,
                    path: path.into(),
                    language: file.language_hint,
                    slice: None,
                    overlap_lines: 0,
                    hunk: hunk.clone(),
                    estimated_tokens: tokens,
                });
                continue;
            }
            packer.close();
            let ranges = split_ranges(hunk, effective);
            let last = ranges.len() - 1;
            for (i, (start, end, overlap)) in ranges.into_iter().enumerate() {
                let slice = hunk.slice(start, end);
                let estimated_tokens = bytes_to_tokens(hunk_bytes(&slice));
                packer.open_tokens += estimated_tokens;
                packer.open.push(ChunkPiece {
                    file_index,
                    hunk_index,
                    path: path.into(),
                    language: file.language_hint,
                    slice: Some((start, end)),
                    overlap_lines: overlap,
                    hunk: slice,
                    estimated_tokens,
                });
                if i != last {
                    packer.close();
                }
            }
        }
    }
    packer.close();
    Ok(packer.chunks)
}

/// Human-readable one-liner for logs.
pub fn describe(chunks: &[Chunk]) -> String {
    let tokens: usize = chunks.iter().map(|c| c.estimated_tokens).sum();
    format!("{} chunk(s), ~{} tokens", chunks.len(), tokens)
}
