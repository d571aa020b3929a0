//! Pull-request coordinates and the unified-diff model.
//!
//! [`parse_unified_diff`] accepts both git-style diffs (`diff --git` with
//! extended header lines) and plain `---`/`+++` unified diffs. Mode lines are
//! ignored, binary sections become [`FileDiff`]s with `is_binary` set, and
//! `\ No newline at end of file` markers are kept as hunk metadata.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;
use core::iter::Sum;
use core::ops::{Add, AddAssign};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEV_NULL: &str = "/dev/null";
pub const NO_NEWLINE_MARKER: &str = "\\ No newline at end of file";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PullRequestError {
    #[error("pull request number must be at least 1")]
    ZeroNumber,
    #[error("{field} must be 40 lowercase hex characters, got {value:?}")]
    BadSha { field: &'static str, value: String },
    #[error("{0} must not be empty")]
    Empty(&'static str),
}

/// Coordinates of one pull request at a specific head commit.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawPullRequestRef")]
pub struct PullRequestRef {
    pub repo_owner: String,
    pub repo_name: String,
    pub number: u64,
    pub head_sha: String,
    pub base_sha: String,
}

#[derive(Deserialize)]
struct RawPullRequestRef {
    repo_owner: String,
    repo_name: String,
    number: u64,
    head_sha: String,
    base_sha: String,
}

impl TryFrom<RawPullRequestRef> for PullRequestRef {
    type Error = PullRequestError;

    fn try_from(raw: RawPullRequestRef) -> Result<Self, Self::Error> {
        PullRequestRef::new(raw.repo_owner, raw.repo_name, raw.number, raw.head_sha, raw.base_sha)
    }
}

fn is_sha(value: &str) -> bool {
    value.len() == 40 && value.bytes().all(|b| matches!(b, b'0'..=b'9' | b'a'..=b'f'))
}

impl PullRequestRef {
    pub fn new(
        repo_owner: impl Into<String>,
        repo_name: impl Into<String>,
        number: u64,
        head_sha: impl Into<String>,
        base_sha: impl Into<String>,
    ) -> Result<Self, PullRequestError> {
        let pr = PullRequestRef {
            repo_owner: repo_owner.into(),
            repo_name: repo_name.into(),
            number,
            head_sha: head_sha.into(),
            base_sha: base_sha.into(),
        };
        if pr.repo_owner.is_empty() {
            return Err(PullRequestError::Empty("repo_owner"));
        }
        if pr.repo_name.is_empty() {
            return Err(PullRequestError::Empty("repo_name"));
        }
        if pr.number == 0 {
            return Err(PullRequestError::ZeroNumber);
        }
        for (field, value) in [("head_sha", &pr.head_sha), ("base_sha", &pr.base_sha)] {
            if !is_sha(value) {
                return Err(PullRequestError::BadSha { field, value: value.clone() });
            }
        }
        Ok(pr)
    }

    /// Stand-in coordinates for a diff analyzed outside any repository host.
    /// The head SHA is derived from the diff text so reruns agree.
    pub fn local(diff_text: &str) -> Self {
        let digest = crate::digest::sha256_hex(&[diff_text.as_bytes()]);
        PullRequestRef {
            repo_owner: "local".into(),
            repo_name: "local".into(),
            number: 1,
            head_sha: digest[..40].into(),
            base_sha: "0".repeat(40),
        }
    }
}

impl fmt::Display for PullRequestRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}#{}", self.repo_owner, self.repo_name, self.number)
    }
}

/// Source language inferred from a file extension.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Language {
    Move,
    Solidity,
    Rust,
    Typescript,
    Python,
    Go,
    Other,
}

impl Language {
    pub fn from_path(path: &str) -> Self {
        let file_name = path.rsplit('/').next().unwrap_or(path);
        let Some((_, ext)) = file_name.rsplit_once('.') else {
            return Language::Other;
        };
        match ext.to_ascii_lowercase().as_str() {
            "move" => Language::Move,
            "sol" => Language::Solidity,
            "rs" => Language::Rust,
            "ts" | "tsx" => Language::Typescript,
            "py" => Language::Python,
            "go" => Language::Go,
            _ => Language::Other,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Language::Move => "move",
            Language::Solidity => "solidity",
            Language::Rust => "rust",
            Language::Typescript => "typescript",
            Language::Python => "python",
            Language::Go => "go",
            Language::Other => "other",
        }
    }
}

impl fmt::Display for Language {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LineKind {
    Added,
    Removed,
    Context,
}

impl LineKind {
    pub fn prefix(self) -> char {
        match self {
            LineKind::Added => '+',
            LineKind::Removed => '-',
            LineKind::Context => ' ',
        }
    }

    fn on_old_side(self) -> bool {
        !matches!(self, LineKind::Added)
    }

    fn on_new_side(self) -> bool {
        !matches!(self, LineKind::Removed)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChangedLine {
    pub kind: LineKind,
    pub text: String,
}

impl ChangedLine {
    pub fn new(kind: LineKind, text: impl Into<String>) -> Self {
        ChangedLine { kind, text: text.into() }
    }

    /// Byte length of the line as it appears in a diff body, prefix and
    /// newline included.
    pub fn rendered_len(&self) -> usize {
        self.text.len() + 2
    }
}

/// One `@@` region of a file diff.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Hunk {
    pub old_start: u64,
    pub old_len: u64,
    pub new_start: u64,
    pub new_len: u64,
    /// Text after the closing `@@`, usually a function signature.
    #[serde(default)]
    pub section: String,
    pub lines: Vec<ChangedLine>,
    /// Indices of lines followed by a `\ No newline at end of file` marker.
    #[serde(default)]
    pub no_newline_after: Vec<usize>,
}

impl Hunk {
    /// Builds a hunk whose header counts are derived from `lines`.
    pub fn from_lines(old_start: u64, new_start: u64, lines: Vec<ChangedLine>) -> Self {
        let old_len = lines.iter().filter(|l| l.kind.on_old_side()).count() as u64;
        let new_len = lines.iter().filter(|l| l.kind.on_new_side()).count() as u64;
        Hunk { old_start, old_len, new_start, new_len, section: String::new(), lines, no_newline_after: Vec::new() }
    }

    pub fn observed_old_len(&self) -> u64 {
        self.lines.iter().filter(|l| l.kind.on_old_side()).count() as u64
    }

    pub fn observed_new_len(&self) -> u64 {
        self.lines.iter().filter(|l| l.kind.on_new_side()).count() as u64
    }

    pub fn is_consistent(&self) -> bool {
        self.observed_old_len() == self.old_len && self.observed_new_len() == self.new_len
    }

    /// New-side line number of every line; `None` for removed lines.
    pub fn new_line_numbers(&self) -> impl Iterator<Item = Option<u64>> + '_ {
        let mut next = self.new_start;
        self.lines.iter().map(move |line| {
            if line.kind.on_new_side() {
                let n = next;
                next += 1;
                Some(n)
            } else {
                None
            }
        })
    }

    /// Old-side line number of every line; `None` for added lines.
    pub fn old_line_numbers(&self) -> impl Iterator<Item = Option<u64>> + '_ {
        let mut next = self.old_start;
        self.lines.iter().map(move |line| {
            if line.kind.on_old_side() {
                let n = next;
                next += 1;
                Some(n)
            } else {
                None
            }
        })
    }

    /// Inclusive new-side line span, or `None` when the hunk only removes.
    pub fn new_span(&self) -> Option<(u64, u64)> {
        (self.new_len > 0).then(|| (self.new_start, self.new_start + self.new_len - 1))
    }

    /// Sub-hunk over `lines[start..end]` with header counts recomputed.
    pub fn slice(&self, start: usize, end: usize) -> Hunk {
        let before = &self.lines[..start];
        let old_before = before.iter().filter(|l| l.kind.on_old_side()).count() as u64;
        let new_before = before.iter().filter(|l| l.kind.on_new_side()).count() as u64;
        let lines: Vec<ChangedLine> = self.lines[start..end].to_vec();
        let mut hunk = Hunk::from_lines(0, 0, lines);
        hunk.old_start = side_start(self.old_start, self.old_len, old_before, hunk.old_len);
        hunk.new_start = side_start(self.new_start, self.new_len, new_before, hunk.new_len);
        hunk.section = self.section.clone();
        hunk.no_newline_after =
            self.no_newline_after.iter().filter(|&&i| i >= start && i < end).map(|&i| i - start).collect();
        hunk
    }

    pub fn render_header(&self) -> String {
        let mut header = format!("@@ -{},{} +{},{} @@", self.old_start, self.old_len, self.new_start, self.new_len);
        if !self.section.is_empty() {
            header.push(' ');
            header.push_str(&self.section);
        }
        header
    }

    /// Renders the hunk body exactly as it appears in a unified diff.
    pub fn render_body(&self, out: &mut String) {
        for (i, line) in self.lines.iter().enumerate() {
            out.push(line.kind.prefix());
            out.push_str(&line.text);
            out.push('\n');
            if self.no_newline_after.contains(&i) {
                out.push_str(NO_NEWLINE_MARKER);
                out.push('\n');
            }
        }
    }

    pub fn render(&self, out: &mut String) {
        out.push_str(&self.render_header());
        out.push('\n');
        self.render_body(out);
    }
}

// Unified-diff convention: an empty side names the line before the change.
fn side_start(orig_start: u64, orig_len: u64, before: u64, len: u64) -> u64 {
    if orig_len == 0 {
        return orig_start;
    }
    let first = orig_start + before;
    if len == 0 {
        first.saturating_sub(1)
    } else {
        first
    }
}

/// One file's worth of changes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDiff {
    pub old_path: Option<String>,
    pub new_path: Option<String>,
    pub language_hint: Language,
    pub hunks: Vec<Hunk>,
    pub is_binary: bool,
}

impl FileDiff {
    pub fn new(old_path: Option<String>, new_path: Option<String>, hunks: Vec<Hunk>) -> Self {
        let language_hint = Language::from_path(new_path.as_deref().or(old_path.as_deref()).unwrap_or(""));
        FileDiff { old_path, new_path, language_hint, hunks, is_binary: false }
    }

    /// A new file whose every line is an addition.
    pub fn all_added(path: &str, content: &str) -> Self {
        let lines: Vec<ChangedLine> = content.lines().map(|l| ChangedLine::new(LineKind::Added, l)).collect();
        let hunks = if lines.is_empty() {
            Vec::new()
        } else {
            let mut hunk = Hunk::from_lines(0, 1, lines);
            if !content.ends_with('\n') {
                hunk.no_newline_after.push(hunk.lines.len() - 1);
            }
            alloc::vec![hunk]
        };
        FileDiff::new(None, Some(path.to_string()), hunks)
    }

    /// The path findings should point at: the new path unless deleted.
    pub fn path(&self) -> &str {
        self.new_path.as_deref().or(self.old_path.as_deref()).unwrap_or("")
    }

    pub fn render(&self, out: &mut String) {
        let old = self.old_path.as_deref();
        let new = self.new_path.as_deref();
        let left = old.or(new).unwrap_or("");
        let right = new.or(old).unwrap_or("");
        out.push_str(&format!("diff --git a/{left} b/{right}\n"));
        if self.is_binary {
            let a = old.map_or_else(|| DEV_NULL.to_string(), |p| format!("a/{p}"));
            let b = new.map_or_else(|| DEV_NULL.to_string(), |p| format!("b/{p}"));
            out.push_str(&format!("Binary files {a} and {b} differ\n"));
            return;
        }
        match old {
            Some(p) => out.push_str(&format!("--- a/{p}\n")),
            None => out.push_str("--- /dev/null\n"),
        }
        match new {
            Some(p) => out.push_str(&format!("+++ b/{p}\n")),
            None => out.push_str("+++ /dev/null\n"),
        }
        for hunk in &self.hunks {
            hunk.render(out);
        }
    }
}

pub fn render_unified_diff(diffs: &[FileDiff]) -> String {
    let mut out = String::new();
    for diff in diffs {
        diff.render(&mut out);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("diff parse error at line {line}: {kind}")]
pub struct DiffError {
    /// 1-based line number in the input.
    pub line: usize,
    pub kind: DiffErrorKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DiffErrorKind {
    #[error("malformed hunk header {0:?}")]
    BadHunkHeader(String),
    #[error("hunk found before any file header")]
    HunkWithoutFile,
    #[error("hunk body ended early: header declares -{old_len} +{new_len}, body has -{old_seen} +{new_seen}")]
    HunkTooShort { old_len: u64, new_len: u64, old_seen: u64, new_seen: u64 },
    #[error("hunk body has more {0} lines than its header declares")]
    HunkTooLong(&'static str),
    #[error("no-newline marker without a preceding line")]
    StrayMarker,
}

#[derive(Default)]
struct FileBuilder {
    old_path: Option<String>,
    new_path: Option<String>,
    from_git_header: bool,
    seen_file_header: bool,
    hunks: Vec<Hunk>,
    is_binary: bool,
}

impl FileBuilder {
    fn finish(self) -> Option<FileDiff> {
        if self.old_path.is_none() && self.new_path.is_none() {
            return None;
        }
        let mut diff = FileDiff::new(self.old_path, self.new_path, self.hunks);
        if self.is_binary {
            diff.is_binary = true;
            diff.hunks.clear();
        }
        Some(diff)
    }
}

fn strip_side_prefix(path: &str, prefix: &str) -> Option<String> {
    let path = path.split('\t').next().unwrap_or(path);
    if path == DEV_NULL {
        return None;
    }
    Some(path.strip_prefix(prefix).unwrap_or(path).to_string())
}

fn parse_git_header(rest: &str) -> (Option<String>, Option<String>) {
    // `a/<old> b/<new>`; prefer the split where both sides agree.
    let candidates: Vec<usize> = rest.match_indices(" b/").map(|(i, _)| i).collect();
    let pick = candidates
        .iter()
        .copied()
        .find(|&i| rest[..i].strip_prefix("a/") == Some(&rest[i + 3..]))
        .or_else(|| candidates.first().copied());
    match pick {
        Some(i) => {
            let old = rest[..i].strip_prefix("a/").unwrap_or(&rest[..i]);
            (Some(old.to_string()), Some(rest[i + 3..].to_string()))
        }
        None => (None, None),
    }
}

fn parse_range(s: &str) -> Option<(u64, u64)> {
    match s.split_once(',') {
        Some((start, len)) => Some((start.parse().ok()?, len.parse().ok()?)),
        None => Some((s.parse().ok()?, 1)),
    }
}

fn parse_hunk_header(line: &str) -> Option<Hunk> {
    let rest = line.strip_prefix("@@ -")?;
    let (old, rest) = rest.split_once(" +")?;
    let (new, rest) = rest.split_once(" @@")?;
    let (old_start, old_len) = parse_range(old)?;
    let (new_start, new_len) = parse_range(new)?;
    let section = rest.strip_prefix(' ').unwrap_or(rest).to_string();
    Some(Hunk { old_start, old_len, new_start, new_len, section, lines: Vec::new(), no_newline_after: Vec::new() })
}

fn parse_binary_line(line: &str) -> (Option<String>, Option<String>) {
    let rest = line.strip_prefix("Binary files ").and_then(|r| r.strip_suffix(" differ")).unwrap_or("");
    match rest.split_once(" and ") {
        Some((a, b)) => (strip_side_prefix(a, "a/"), strip_side_prefix(b, "b/")),
        None => (None, None),
    }
}

/// Parses unified diff text into per-file records.
pub fn parse_unified_diff(text: &str) -> Result<Vec<FileDiff>, DiffError> {
    let lines: Vec<&str> = {
        let mut v: Vec<&str> = text.split('\n').collect();
        if text.ends_with('\n') || text.is_empty() {
            v.pop();
        }
        v
    };

    let mut files = Vec::new();
    let mut current: Option<FileBuilder> = None;
    let mut in_binary_patch = false;
    let mut after_signature = false;
    let mut i = 0;

    let finish = |current: &mut Option<FileBuilder>, files: &mut Vec<FileDiff>| {
        if let Some(done) = current.take().and_then(FileBuilder::finish) {
            files.push(done);
        }
    };

    while i < lines.len() {
        let line = lines[i];
        let line_no = i + 1;

        if let Some(rest) = line.strip_prefix("diff --git ") {
            finish(&mut current, &mut files);
            let (old_path, new_path) = parse_git_header(rest);
            current = Some(FileBuilder { old_path, new_path, from_git_header: true, ..Default::default() });
            in_binary_patch = false;
            after_signature = false;
            i += 1;
            continue;
        }
        if in_binary_patch || after_signature {
            i += 1;
            continue;
        }

        if line.starts_with("--- ") && lines.get(i + 1).is_some_and(|next| next.starts_with("+++ ")) {
            let reuse =
                current.as_ref().is_some_and(|c| c.from_git_header && !c.seen_file_header && c.hunks.is_empty());
            if !reuse {
                finish(&mut current, &mut files);
                current = Some(FileBuilder::default());
            }
            let builder = current.as_mut().expect("file builder present");
            builder.old_path = strip_side_prefix(&line[4..], "a/");
            builder.new_path = strip_side_prefix(&lines[i + 1][4..], "b/");
            builder.seen_file_header = true;
            i += 2;
            continue;
        }

        if line.starts_with("@@ ") {
            let Some(builder) = current.as_mut() else {
                return Err(DiffError { line: line_no, kind: DiffErrorKind::HunkWithoutFile });
            };
            let mut hunk = parse_hunk_header(line)
                .ok_or_else(|| DiffError { line: line_no, kind: DiffErrorKind::BadHunkHeader(line.to_string()) })?;
            i = read_hunk_body(&lines, i + 1, line_no, &mut hunk)?;
            builder.hunks.push(hunk);
            continue;
        }

        if line.starts_with("Binary files ") || line == "GIT binary patch" {
            if current.is_none() {
                let (old_path, new_path) = parse_binary_line(line);
                current = Some(FileBuilder { old_path, new_path, ..Default::default() });
            }
            let builder = current.as_mut().expect("file builder present");
            builder.is_binary = true;
            in_binary_patch = line == "GIT binary patch";
            i += 1;
            continue;
        }

        if let Some(builder) = current.as_mut() {
            if builder.from_git_header && !builder.seen_file_header {
                if line.starts_with("new file mode") {
                    builder.old_path = None;
                } else if line.starts_with("deleted file mode") {
                    builder.new_path = None;
                } else if let Some(p) = line.strip_prefix("rename from ") {
                    builder.old_path = Some(p.to_string());
                } else if let Some(p) = line.strip_prefix("rename to ") {
                    builder.new_path = Some(p.to_string());
                }
            }
            if line == "-- " {
                // format-patch signature; everything up to the next file is trailer
                after_signature = true;
            } else if !builder.hunks.is_empty() {
                match line.chars().next() {
                    Some('+') => return Err(too_long(line_no, "added")),
                    Some('-') => return Err(too_long(line_no, "removed")),
                    Some(' ') => return Err(too_long(line_no, "context")),
                    _ => {}
                }
            }
        }
        i += 1;
    }
    finish(&mut current, &mut files);
    Ok(files)
}

fn too_long(line: usize, what: &'static str) -> DiffError {
    DiffError { line, kind: DiffErrorKind::HunkTooLong(what) }
}

/// Consumes body lines for `hunk` starting at `start`; returns the index of
/// the first line after the hunk.
fn read_hunk_body(lines: &[&str], start: usize, header_line: usize, hunk: &mut Hunk) -> Result<usize, DiffError> {
    let mut old_seen = 0u64;
    let mut new_seen = 0u64;
    let mut i = start;
    let short = |old_seen, new_seen, hunk: &Hunk| DiffError {
        line: header_line,
        kind: DiffErrorKind::HunkTooShort { old_len: hunk.old_len, new_len: hunk.new_len, old_seen, new_seen },
    };

    while old_seen < hunk.old_len || new_seen < hunk.new_len {
        let Some(&line) = lines.get(i) else {
            return Err(short(old_seen, new_seen, hunk));
        };
        let (kind, text) = match line.as_bytes().first() {
            None => (LineKind::Context, ""),
            Some(b' ') => (LineKind::Context, &line[1..]),
            Some(b'+') => (LineKind::Added, &line[1..]),
            Some(b'-') => (LineKind::Removed, &line[1..]),
            Some(b'\\') => {
                if hunk.lines.is_empty() {
                    return Err(DiffError { line: i + 1, kind: DiffErrorKind::StrayMarker });
                }
                hunk.no_newline_after.push(hunk.lines.len() - 1);
                i += 1;
                continue;
            }
            Some(_) => return Err(short(old_seen, new_seen, hunk)),
        };
        let old_side = kind.on_old_side();
        let new_side = kind.on_new_side();
        if (old_side && old_seen >= hunk.old_len) || (new_side && new_seen >= hunk.new_len) {
            // A body line the header has no room for: the header undercounts
            // one side while the other side is still open.
            let what = match kind {
                LineKind::Added => "added",
                LineKind::Removed => "removed",
                LineKind::Context => "context",
            };
            return Err(DiffError { line: i + 1, kind: DiffErrorKind::HunkTooLong(what) });
        }
        old_seen += old_side as u64;
        new_seen += new_side as u64;
        hunk.lines.push(ChangedLine::new(kind, text));
        i += 1;
    }
    if lines.get(i).is_some_and(|l| l.starts_with('\\')) {
        hunk.no_newline_after.push(hunk.lines.len() - 1);
        i += 1;
    }
    Ok(i)
}

/// Added/removed line counters over a set of diffs.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChangeStats {
    pub lines_added: u64,
    pub lines_removed: u64,
    pub lines_changed: u64,
}

impl ChangeStats {
    pub fn new(lines_added: u64, lines_removed: u64) -> Self {
        ChangeStats { lines_added, lines_removed, lines_changed: lines_added + lines_removed }
    }
}

impl Add for ChangeStats {
    type Output = ChangeStats;

    fn add(self, rhs: ChangeStats) -> ChangeStats {
        ChangeStats::new(self.lines_added + rhs.lines_added, self.lines_removed + rhs.lines_removed)
    }
}

impl AddAssign for ChangeStats {
    fn add_assign(&mut self, rhs: ChangeStats) {
        *self = *self + rhs;
    }
}

impl Sum for ChangeStats {
    fn sum<I: Iterator<Item = ChangeStats>>(iter: I) -> Self {
        iter.fold(ChangeStats::default(), Add::add)
    }
}

pub fn change_stats(diffs: &[FileDiff]) -> ChangeStats {
    let mut added = 0;
    let mut removed = 0;
    for line in diffs.iter().flat_map(|d| &d.hunks).flat_map(|h| &h.lines) {
        match line.kind {
            LineKind::Added => added += 1,
            LineKind::Removed => removed += 1,
            LineKind::Context => {}
        }
    }
    ChangeStats::new(added, removed)
}

/// Change totals pooled over several pull requests.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PooledStats {
    pub totals: ChangeStats,
    pub pr_count: u64,
}

/// Per-PR averages of added, removed and changed lines, rounded to two
/// decimals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerPrAverages {
    pub lines_added: f64,
    pub lines_removed: f64,
    pub lines_changed: f64,
}

impl PooledStats {
    pub fn new(totals: ChangeStats, pr_count: u64) -> Option<Self> {
        (pr_count >= 1).then_some(PooledStats { totals, pr_count })
    }

    pub fn averages(&self) -> PerPrAverages {
        let avg = |v: u64| round2(v as f64 / self.pr_count as f64);
        PerPrAverages {
            lines_added: avg(self.totals.lines_added),
            lines_removed: avg(self.totals.lines_removed),
            lines_changed: avg(self.totals.lines_changed),
        }
    }
}

pub(crate) fn round2(x: f64) -> f64 {
    libm::round(x * 100.0) / 100.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    const SHA_A: &str = "0123456789abcdef0123456789abcdef01234567";

    #[test]
    fn empty_input_yields_no_files() {
        assert_eq!(parse_unified_diff("").unwrap(), vec![]);
    }

    #[test]
    fn local_refs_are_valid_and_stable() {
        let a = PullRequestRef::local("diff one");
        let again = PullRequestRef::local("diff one");
        assert_eq!(a, again);
        assert_ne!(a.head_sha, PullRequestRef::local("diff two").head_sha);
        let checked = PullRequestRef::new(&a.repo_owner, &a.repo_name, a.number, &a.head_sha, &a.base_sha).unwrap();
        assert_eq!(checked, a);
    }

    #[test]
    fn minimal_diff_one_hunk() {
        let text = concat!(
            "diff --git a/src/lib.rs b/src/lib.rs\n",
            "index 83db48f..bf269f4 100644\n",
            "--- a/src/lib.rs\n",
            "+++ b/src/lib.rs\n",
            "@@ -1,2 +1,2 @@ fn main()\n",
            " keep\n",
            "-old\n",
            "+new\n"
        );
        let files = parse_unified_diff(text).unwrap();
        assert_eq!(files.len(), 1);
        let f = &files[0];
        assert_eq!(f.old_path.as_deref(), Some("src/lib.rs"));
        assert_eq!(f.language_hint, Language::Rust);
        assert_eq!(f.hunks.len(), 1);
        assert_eq!(f.hunks[0].section, "fn main()");
        assert!(f.hunks[0].is_consistent());
        assert_eq!(change_stats(&files), ChangeStats { lines_added: 1, lines_removed: 1, lines_changed: 2 });
    }

    #[test]
    fn undercounted_body_is_an_error_at_the_hunk() {
        let text = "--- a/x.py\n+++ b/x.py\n@@ -1,1 +1,3 @@\n ctx\n+one\n";
        let err = parse_unified_diff(text).unwrap_err();
        assert_eq!(err.line, 3);
        assert!(matches!(err.kind, DiffErrorKind::HunkTooShort { new_len: 3, new_seen: 2, .. }));
    }

    #[test]
    fn overcounted_body_is_an_error() {
        let text = "--- a/x.py\n+++ b/x.py\n@@ -1,1 +1,1 @@\n ctx\n+extra\n";
        let err = parse_unified_diff(text).unwrap_err();
        assert_eq!(err.line, 5);
        assert!(matches!(err.kind, DiffErrorKind::HunkTooLong("added")));
    }

    #[test]
    fn hunk_before_file_header() {
        let err = parse_unified_diff("@@ -1 +1 @@\n-a\n+b\n").unwrap_err();
        assert_eq!(err.kind, DiffErrorKind::HunkWithoutFile);
    }

    #[test]
    fn binary_sections_are_flagged_not_errors() {
        let text = "diff --git a/logo.png b/logo.png\n\
index 1111111..2222222 100644\n\
Binary files a/logo.png and b/logo.png differ\n\
diff --git a/blob.bin b/blob.bin\n\
new file mode 100644\n\
index 0000000..3333333\n\
GIT binary patch\n\
literal 12\n\
TcmZQzU|?coU|?ckWdDM$\n\
\n\
literal 0\n\
HcmV?d00001\n\
\n";
        let files = parse_unified_diff(text).unwrap();
        assert_eq!(files.len(), 2);
        assert!(files.iter().all(|f| f.is_binary && f.hunks.is_empty()));
        assert_eq!(files[1].old_path, None);
        assert_eq!(files[1].new_path.as_deref(), Some("blob.bin"));
    }

    #[test]
    fn new_deleted_and_renamed_files() {
        let text = "diff --git a/a.sol b/a.sol\n\
new file mode 100644\n\
--- /dev/null\n\
+++ b/a.sol\n\
@@ -0,0 +1,2 @@\n\
+x\n\
+y\n\
diff --git a/gone.go b/gone.go\n\
deleted file mode 100644\n\
--- a/gone.go\n\
+++ /dev/null\n\
@@ -1 +0,0 @@\n\
-z\n\
diff --git a/old.move b/new.move\n\
similarity index 100%\n\
rename from old.move\n\
rename to new.move\n\
old mode 100644\n\
new mode 100755\n";
        let files = parse_unified_diff(text).unwrap();
        assert_eq!(files.len(), 3);
        assert_eq!((files[0].old_path.as_deref(), files[0].new_path.as_deref()), (None, Some("a.sol")));
        assert_eq!(files[0].language_hint, Language::Solidity);
        assert_eq!((files[1].old_path.as_deref(), files[1].new_path.as_deref()), (Some("gone.go"), None));
        assert_eq!(files[1].path(), "gone.go");
        assert_eq!(files[2].old_path.as_deref(), Some("old.move"));
        assert_eq!(files[2].new_path.as_deref(), Some("new.move"));
        assert!(files[2].hunks.is_empty());
        assert_eq!(change_stats(&files), ChangeStats::new(2, 1));
    }

    #[test]
    fn plain_unified_diffs_with_timestamps() {
        let text = "--- a/one.ts\t2024-01-01 00:00:00\n\
+++ b/one.ts\t2024-01-02 00:00:00\n\
@@ -3 +3 @@\n\
-a\n\
+b\n\
--- two.tsx\n\
+++ two.tsx\n\
@@ -1,0 +1 @@\n\
+c\n";
        let files = parse_unified_diff(text).unwrap();
        assert_eq!(files.len(), 2);
        assert_eq!(files[0].new_path.as_deref(), Some("one.ts"));
        assert_eq!(files[1].new_path.as_deref(), Some("two.tsx"));
        assert_eq!(files[1].language_hint, Language::Typescript);
    }

    #[test]
    fn no_newline_markers_are_metadata() {
        let text = "--- a/f.py\n+++ b/f.py\n@@ -1 +1 @@\n-old\n\\ No newline at end of file\n+new\n\\ No newline at end of file\n";
        let files = parse_unified_diff(text).unwrap();
        let hunk = &files[0].hunks[0];
        assert_eq!(hunk.lines.len(), 2);
        assert_eq!(hunk.no_newline_after, vec![0, 1]);
        let mut body = String::new();
        hunk.render_body(&mut body);
        assert_eq!(body, "-old\n\\ No newline at end of file\n+new\n\\ No newline at end of file\n");
    }

    #[test]
    fn hunk_bodies_round_trip_byte_for_byte() {
        let body = " a\n-b\n+c\n+d\n e\n";
        let text = alloc::format!("--- a/f.rs\n+++ b/f.rs\n@@ -1,3 +1,4 @@\n{body}");
        let files = parse_unified_diff(&text).unwrap();
        let mut rendered = String::new();
        files[0].hunks[0].render_body(&mut rendered);
        assert_eq!(rendered, body);
    }

    #[test]
    fn empty_context_lines_are_accepted() {
        let text = "--- a/f.rs\n+++ b/f.rs\n@@ -1,3 +1,3 @@\n a\n\n-b\n+c\n";
        let files = parse_unified_diff(text).unwrap();
        assert_eq!(files[0].hunks[0].lines[1], ChangedLine::new(LineKind::Context, ""));
    }

    #[test]
    fn format_patch_preamble_and_signature_are_ignored() {
        let text = concat!(
            "From 1234 Mon Sep 17 00:00:00 2001\n",
            "Subject: [PATCH] fix\n",
            "\n",
            " indented commit text\n",
            "---\n",
            " f.py | 1 +\n",
            "\n",
            "diff --git a/f.py b/f.py\n",
            "--- a/f.py\n",
            "+++ b/f.py\n",
            "@@ -1 +1,2 @@\n",
            " x\n",
            "+y\n",
            "-- \n",
            "2.39.0\n"
        );
        let files = parse_unified_diff(text).unwrap();
        assert_eq!(files.len(), 1);
        assert_eq!(change_stats(&files), ChangeStats::new(1, 0));
    }

    #[test]
    fn language_hints_from_extension() {
        for (path, lang) in [
            ("sources/pool.move", Language::Move),
            ("Vault.sol", Language::Solidity),
            ("src/main.rs", Language::Rust),
            ("web/app.ts", Language::Typescript),
            ("web/App.tsx", Language::Typescript),
            ("tools/x.py", Language::Python),
            ("cmd/main.go", Language::Go),
            ("README.md", Language::Other),
            ("Makefile", Language::Other),
            ("dir.rs/file", Language::Other),
        ] {
            assert_eq!(Language::from_path(path), lang, "{path}");
        }
    }

    #[test]
    fn stats_examples() {
        assert_eq!(change_stats(&[]), ChangeStats::new(0, 0));
        let hunk = Hunk::from_lines(
            1,
            1,
            vec![
                ChangedLine::new(LineKind::Added, "a"),
                ChangedLine::new(LineKind::Added, "b"),
                ChangedLine::new(LineKind::Removed, "c"),
            ],
        );
        let diff = FileDiff::new(Some("f".into()), Some("f".into()), vec![hunk]);
        assert_eq!(change_stats(&[diff]), ChangeStats { lines_added: 2, lines_removed: 1, lines_changed: 3 });
    }

    #[test]
    fn pooled_averages_over_fourteen_prs() {
        let totals = ChangeStats::new(23_010, 634);
        assert_eq!(totals.lines_changed, 23_644);
        let avg = PooledStats::new(totals, 14).unwrap().averages();
        assert_eq!(avg.lines_added, 1643.57);
        assert_eq!(avg.lines_removed, 45.29);
        assert_eq!(avg.lines_changed, 1688.86);
        assert!(PooledStats::new(totals, 0).is_none());
    }

    #[test]
    fn slices_recompute_headers() {
        let hunk = Hunk::from_lines(
            10,
            20,
            vec![
                ChangedLine::new(LineKind::Context, "a"),
                ChangedLine::new(LineKind::Removed, "b"),
                ChangedLine::new(LineKind::Added, "c"),
                ChangedLine::new(LineKind::Added, "d"),
                ChangedLine::new(LineKind::Context, "e"),
            ],
        );
        let s = hunk.slice(2, 4);
        assert_eq!((s.old_start, s.old_len, s.new_start, s.new_len), (11, 0, 21, 2));
        assert!(s.is_consistent());
        let s = hunk.slice(1, 5);
        assert_eq!((s.old_start, s.old_len, s.new_start, s.new_len), (11, 2, 21, 3));
        assert_eq!(s.new_span(), Some((21, 23)));
    }

    #[test]
    fn pull_request_ref_validation() {
        assert!(PullRequestRef::new("o", "r", 1, SHA_A, SHA_A).is_ok());
        assert_eq!(PullRequestRef::new("o", "r", 0, SHA_A, SHA_A), Err(PullRequestError::ZeroNumber));
        let upper = SHA_A.to_ascii_uppercase();
        assert!(matches!(
            PullRequestRef::new("o", "r", 1, upper, SHA_A),
            Err(PullRequestError::BadSha { field: "head_sha", .. })
        ));
        assert!(PullRequestRef::new("o", "r", 1, SHA_A, "abc").is_err());
        let json = alloc::format!(
            r#"{{"repo_owner":"o","repo_name":"r","number":0,"head_sha":"{SHA_A}","base_sha":"{SHA_A}"}}"#
        );
        assert!(serde_json::from_str::<PullRequestRef>(&json).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn line_strategy() -> impl Strategy<Value = ChangedLine> {
            (
                prop_oneof![Just(LineKind::Added), Just(LineKind::Removed), Just(LineKind::Context)],
                "[a-zA-Z0-9 _(){};.=+-]{0,24}",
            )
                .prop_map(|(kind, text)| ChangedLine::new(kind, text))
        }

        fn hunk_strategy() -> impl Strategy<Value = Hunk> {
            (1u64..500, 1u64..500, proptest::collection::vec(line_strategy(), 1..12), "[a-z ]{0,8}").prop_map(
                |(old_start, new_start, lines, section)| {
                    let mut hunk = Hunk::from_lines(old_start, new_start, lines);
                    hunk.section = section.trim().into();
                    hunk
                },
            )
        }

        fn file_strategy() -> impl Strategy<Value = FileDiff> {
            (
                "[a-z]{1,6}/[a-z]{1,6}\\.(rs|sol|move|py|go|ts|txt)",
                0u8..4,
                proptest::collection::vec(hunk_strategy(), 0..4),
            )
                .prop_map(|(path, shape, hunks)| match shape {
                    0 => FileDiff::new(None, Some(path), hunks),
                    1 => FileDiff::new(Some(path), None, hunks),
                    2 => {
                        let mut f = FileDiff::new(Some(path.clone()), Some(path), Vec::new());
                        f.is_binary = true;
                        f
                    }
                    _ => FileDiff::new(Some(path.clone()), Some(path), hunks),
                })
        }

        proptest! {
            #[test]
            fn render_then_parse_is_identity(files in proptest::collection::vec(file_strategy(), 0..5)) {
                let rendered = render_unified_diff(&files);
                let parsed = parse_unified_diff(&rendered).unwrap();
                prop_assert_eq!(&parsed, &files);
                prop_assert_eq!(render_unified_diff(&parsed), rendered);
            }

            #[test]
            fn parsed_hunks_are_consistent(files in proptest::collection::vec(file_strategy(), 0..5)) {
                let parsed = parse_unified_diff(&render_unified_diff(&files)).unwrap();
                for hunk in parsed.iter().flat_map(|f| &f.hunks) {
                    prop_assert!(hunk.is_consistent());
                }
            }

            #[test]
            fn stats_are_additive(
                a in proptest::collection::vec(file_strategy(), 0..4),
                b in proptest::collection::vec(file_strategy(), 0..4),
            ) {
                let mut both = a.clone();
                both.extend(b.iter().cloned());
                prop_assert_eq!(change_stats(&both), change_stats(&a) + change_stats(&b));
            }
        }
    }
}
