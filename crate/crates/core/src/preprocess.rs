//! Job-log normalization.
//!
//! Every line goes through five rewriting rules, in order:
//!
//! 1. URLs, file paths, directory paths, durations and versions become
//!    placeholder tokens (`<URL>`, `<FILEPATH>`, `<DIRPATH>`, `<DURATION>`,
//!    `<VERSION>`).
//! 2. Whitespace-delimited tokens of at least four characters mixing letters
//!    and digits become `<ID>`.
//! 3. Characters other than ASCII letters, digits and `_` turn into spaces;
//!    placeholder tokens are kept intact.
//! 4. Purely numeric tokens are dropped unless they are an HTTP status or an
//!    exit code.
//! 5. Single-letter tokens trailing a longer line are dropped.
//!
//! At the log level, blank lines are then dropped and duplicate lines are
//! removed keeping the first occurrence.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::str::FromStr;
use std::sync::LazyLock;

use regex::{Captures, Regex};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A job log as captured from the CI runner, one statement per line.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawLog {
    lines: Vec<String>,
}

impl RawLog {
    /// Builds a log from lines; any embedded line break splits a line in two.
    pub fn from_lines<I, S>(lines: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut out = Vec::new();
        for line in lines {
            out.extend(split_text(line.as_ref()));
        }
        RawLog { lines: out }
    }

    /// Splits text on `\n`, dropping a trailing `\r` from each line. A final
    /// newline does not produce an extra empty line.
    pub fn from_text(text: &str) -> Self {
        RawLog {
            lines: split_text(text),
        }
    }

    pub fn lines(&self) -> &[String] {
        &self.lines
    }

    pub fn len(&self) -> usize {
        self.lines.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lines.is_empty()
    }

    /// Total characters over all lines, line breaks excluded.
    pub fn char_count(&self) -> usize {
        self.lines.iter().map(|l| l.chars().count()).sum()
    }

    pub fn to_text(&self) -> String {
        self.lines.join("\n")
    }
}

fn split_text(text: &str) -> Vec<String> {
    if text.is_empty() {
        return vec![String::new()];
    }
    let body = text.strip_suffix('\n').unwrap_or(text);
    body.split('\n')
        .map(|l| l.strip_suffix('\r').unwrap_or(l).to_string())
        .collect()
}

/// Normalized statements ready for encoding.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ProcessedLog {
    lines: Vec<String>,
}

impl ProcessedLog {
    /// Wraps lines that are already normalized; no rules are applied.
    pub fn from_lines<I, S>(lines: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        ProcessedLog {
            lines: lines.into_iter().map(Into::into).collect(),
        }
    }

    pub fn lines(&self) -> &[String] {
        &self.lines
    }

    pub fn len(&self) -> usize {
        self.lines.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lines.is_empty()
    }

    pub fn char_count(&self) -> usize {
        self.lines.iter().map(|l| l.chars().count()).sum()
    }

    /// Views the normalized lines as a raw log, e.g. to run them through
    /// preprocessing a second time.
    pub fn to_raw(&self) -> RawLog {
        RawLog {
            lines: self.lines.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Placeholder {
    Url,
    FilePath,
    DirPath,
    Duration,
    Version,
    Id,
}

impl Placeholder {
    pub const ALL: [Placeholder; 6] = [
        Placeholder::Url,
        Placeholder::FilePath,
        Placeholder::DirPath,
        Placeholder::Duration,
        Placeholder::Version,
        Placeholder::Id,
    ];

    pub fn default_token(self) -> &'static str {
        match self {
            Placeholder::Url => "<URL>",
            Placeholder::FilePath => "<FILEPATH>",
            Placeholder::DirPath => "<DIRPATH>",
            Placeholder::Duration => "<DURATION>",
            Placeholder::Version => "<VERSION>",
            Placeholder::Id => "<ID>",
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Placeholder::Url => "url",
            Placeholder::FilePath => "file_path",
            Placeholder::DirPath => "dir_path",
            Placeholder::Duration => "duration",
            Placeholder::Version => "version",
            Placeholder::Id => "id",
        }
    }
}

impl FromStr for Placeholder {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Placeholder::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown placeholder kind `{s}`")))
    }
}

/// Numeric contexts that survive the number-removal rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PreserveContext {
    /// A number in 100..=599 appearing after `HTTP`, `status` or `code`.
    HttpStatus,
    /// Any number appearing after `exit code` or `exit status`.
    ExitCode,
}

impl PreserveContext {
    pub fn as_str(self) -> &'static str {
        match self {
            PreserveContext::HttpStatus => "http_status",
            PreserveContext::ExitCode => "exit_code",
        }
    }
}

impl FromStr for PreserveContext {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "http_status" => Ok(PreserveContext::HttpStatus),
            "exit_code" => Ok(PreserveContext::ExitCode),
            _ => Err(Error::invalid(format!("unknown preserve context `{s}`"))),
        }
    }
}

impl fmt::Display for PreserveContext {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

pub const DEFAULT_MAX_CHARS: usize = 20_000;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreprocessConfig {
    placeholder_tokens: BTreeMap<Placeholder, String>,
    preserve_codes: BTreeSet<PreserveContext>,
    max_chars: usize,
    truncate: bool,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            placeholder_tokens: Placeholder::ALL
                .into_iter()
                .map(|p| (p, p.default_token().to_string()))
                .collect(),
            preserve_codes: [PreserveContext::HttpStatus, PreserveContext::ExitCode]
                .into_iter()
                .collect(),
            max_chars: DEFAULT_MAX_CHARS,
            truncate: false,
        }
    }
}

impl PreprocessConfig {
    /// Overrides a placeholder token. Tokens must look like `<NAME>` with a
    /// name made of ASCII letters and `_`, so normalized text stays stable
    /// under a second pass.
    pub fn with_placeholder(mut self, kind: Placeholder, token: &str) -> Result<Self> {
        let inner = token
            .strip_prefix('<')
            .and_then(|t| t.strip_suffix('>'))
            .filter(|t| !t.is_empty() && t.chars().all(|c| c.is_ascii_alphabetic() || c == '_'));
        if inner.is_none() {
            return Err(Error::invalid(format!("bad placeholder token `{token}`")));
        }
        self.placeholder_tokens.insert(kind, token.to_string());
        Ok(self)
    }

    pub fn with_preserve(mut self, contexts: impl IntoIterator<Item = PreserveContext>) -> Self {
        self.preserve_codes = contexts.into_iter().collect();
        self
    }

    /// Enables tail truncation: lines past the first `max_chars` characters
    /// of normalized output are dropped.
    pub fn with_truncation(mut self, max_chars: usize) -> Self {
        self.max_chars = max_chars;
        self.truncate = true;
        self
    }

    pub fn with_max_chars(mut self, max_chars: usize, truncate: bool) -> Self {
        self.max_chars = max_chars;
        self.truncate = truncate;
        self
    }

    pub fn token(&self, kind: Placeholder) -> &str {
        self.placeholder_tokens
            .get(&kind)
            .map(String::as_str)
            .unwrap_or_else(|| kind.default_token())
    }

    pub fn preserve_codes(&self) -> &BTreeSet<PreserveContext> {
        &self.preserve_codes
    }

    pub fn max_chars(&self) -> usize {
        self.max_chars
    }

    pub fn truncate(&self) -> bool {
        self.truncate
    }

    fn preserves(&self, ctx: PreserveContext) -> bool {
        self.preserve_codes.contains(&ctx)
    }

    fn tokens(&self) -> impl Iterator<Item = &str> {
        Placeholder::ALL.into_iter().map(|p| self.token(p))
    }
}

static URL_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"[A-Za-z][A-Za-z0-9+.\-]*://\S+").unwrap());
static PATH_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"[A-Za-z0-9_.~+\-]*(?:/[A-Za-z0-9_.~+\-@]+)+/?").unwrap());
static DURATION_RE: LazyLock<Regex> = LazyLock::new(|| {
    // ASCII boundaries: rule 3 later blanks non-ASCII letters, and a Unicode
    // boundary here would then appear only on a second pass.
    Regex::new(r"(?-u:\b)(?:[0-9]+(?:\.[0-9]+)?(?:ms|minutes|min|m|seconds|sec|s|hours|h))+(?-u:\b)").unwrap()
});
static VERSION_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?-u:\b)v?[0-9]+(?:\.[0-9]+)+(?-u:\b)").unwrap());

const HTTP_KEYWORDS: [&str; 3] = ["http", "status", "code"];

fn has_file_extension(segment: &str) -> bool {
    match segment.rsplit_once('.') {
        Some((_, ext)) => {
            !ext.is_empty()
                && ext.len() <= 10
                && ext.starts_with(|c: char| c.is_ascii_alphabetic())
                && ext.chars().all(|c| c.is_ascii_alphanumeric())
        }
        None => false,
    }
}

fn rule1_abstract(line: &str, config: &PreprocessConfig) -> String {
    let url = config.token(Placeholder::Url);
    let out = URL_RE.replace_all(line, |_: &Captures| url.to_string());
    let out = PATH_RE.replace_all(&out, |caps: &Captures| {
        let m = &caps[0];
        let last = m.rsplit('/').next().unwrap_or("");
        if !m.ends_with('/') && has_file_extension(last) {
            config.token(Placeholder::FilePath).to_string()
        } else if m.matches('/').count() >= 2 {
            config.token(Placeholder::DirPath).to_string()
        } else {
            m.to_string()
        }
    });
    let dur = config.token(Placeholder::Duration);
    let out = DURATION_RE.replace_all(&out, |_: &Captures| dur.to_string());
    let ver = config.token(Placeholder::Version);
    VERSION_RE
        .replace_all(&out, |_: &Captures| ver.to_string())
        .into_owned()
}

enum Piece<'a> {
    Token(&'a str),
    Text(&'a str),
}

/// Splits `s` into placeholder tokens and the text between them.
fn pieces<'a>(s: &'a str, config: &PreprocessConfig) -> Vec<Piece<'a>> {
    let mut out = Vec::new();
    let mut text_start = 0;
    let mut i = 0;
    while i < s.len() {
        if s.as_bytes()[i] == b'<' {
            if let Some(tok) = config.tokens().find(|t| s[i..].starts_with(t)) {
                if text_start < i {
                    out.push(Piece::Text(&s[text_start..i]));
                }
                out.push(Piece::Token(&s[i..i + tok.len()]));
                i += tok.len();
                text_start = i;
                continue;
            }
        }
        i += 1;
    }
    if text_start < s.len() {
        out.push(Piece::Text(&s[text_start..]));
    }
    out
}

fn is_identifier(token: &str, config: &PreprocessConfig) -> bool {
    let mut len = 0;
    let (mut letter, mut digit) = (false, false);
    for piece in pieces(token, config) {
        if let Piece::Text(t) = piece {
            for c in t.chars() {
                len += 1;
                letter |= c.is_ascii_alphabetic();
                digit |= c.is_ascii_digit();
            }
        }
    }
    len >= 4 && letter && digit
}

fn rule2_identifiers(line: &str, config: &PreprocessConfig) -> Vec<String> {
    line.split_whitespace()
        .map(|tok| {
            if is_identifier(tok, config) {
                config.token(Placeholder::Id).to_string()
            } else {
                tok.to_string()
            }
        })
        .collect()
}

fn rule3_strip(tokens: &[String], config: &PreprocessConfig) -> Vec<String> {
    let mut buf = String::new();
    for tok in tokens {
        for piece in pieces(tok, config) {
            match piece {
                Piece::Token(t) => {
                    buf.push(' ');
                    buf.push_str(t);
                    buf.push(' ');
                }
                Piece::Text(t) => buf.extend(t.chars().map(|c| {
                    if c.is_ascii_alphanumeric() || c == '_' {
                        c
                    } else {
                        ' '
                    }
                })),
            }
        }
        buf.push(' ');
    }
    buf.split_whitespace().map(str::to_string).collect()
}

fn rule4_numbers(tokens: Vec<String>, config: &PreprocessConfig) -> Vec<String> {
    let keep_http = config.preserves(PreserveContext::HttpStatus);
    let keep_exit = config.preserves(PreserveContext::ExitCode);
    let mut http_seen = false;
    let mut exit_seen = false;
    let mut out = Vec::with_capacity(tokens.len());
    for (idx, tok) in tokens.iter().enumerate() {
        if tok.bytes().all(|b| b.is_ascii_digit()) {
            let http_ok = keep_http
                && http_seen
                && tok.len() == 3
                && tok
                    .parse::<u16>()
                    .map(|v| (100..=599).contains(&v))
                    .unwrap_or(false);
            if http_ok || (keep_exit && exit_seen) {
                out.push(tok.clone());
            }
            continue;
        }
        let lower = tok.to_ascii_lowercase();
        http_seen |= HTTP_KEYWORDS.contains(&lower.as_str());
        if (lower == "code" || lower == "status")
            && idx > 0
            && tokens[idx - 1].eq_ignore_ascii_case("exit")
        {
            exit_seen = true;
        }
        out.push(tok.clone());
    }
    out
}

fn rule5_trailing_letters(mut tokens: Vec<String>) -> Vec<String> {
    while tokens.len() > 1 {
        let last = tokens.last().unwrap();
        if last.len() == 1 && last.as_bytes()[0].is_ascii_alphabetic() {
            tokens.pop();
        } else {
            break;
        }
    }
    tokens
}

/// Applies rules 1 through 5 to one line. The result may be empty.
pub fn preprocess_line(line: &str, config: &PreprocessConfig) -> String {
    let abstracted = rule1_abstract(line, config);
    let tokens = rule2_identifiers(&abstracted, config);
    let tokens = rule3_strip(&tokens, config);
    let tokens = rule4_numbers(tokens, config);
    rule5_trailing_letters(tokens).join(" ")
}

/// Normalizes a whole log: per-line rules, then blank-line removal and
/// global first-occurrence deduplication.
pub fn preprocess_log(log: &RawLog, config: &PreprocessConfig) -> ProcessedLog {
    let mut seen = HashSet::new();
    let mut lines = Vec::new();
    let mut chars = 0usize;
    for raw in &log.lines {
        let line = preprocess_line(raw, config);
        if line.is_empty() || seen.contains(&line) {
            continue;
        }
        if config.truncate {
            let n = line.chars().count();
            if chars + n > config.max_chars {
                break;
            }
            chars += n;
        }
        seen.insert(line.clone());
        lines.push(line);
    }
    ProcessedLog { lines }
}

/// Fraction of characters removed by preprocessing; 0 for an empty raw log.
pub fn reduction_percent(raw: &RawLog, processed: &ProcessedLog) -> f64 {
    let before = raw.char_count();
    if before == 0 {
        return 0.0;
    }
    1.0 - processed.char_count() as f64 / before as f64
}
