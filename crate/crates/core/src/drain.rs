//! Online log template mining with a fixed-depth parse tree.
//!
//! The tree has three kinds of level:
//!
//! ```text
//! root ── token count ── leading token ── ... ── leaf (template groups)
//! ```
//!
//! A message is routed by its token count, then by its first `depth - 2`
//! tokens. Inside the leaf it is compared against every template of the same
//! length; the best match above the similarity threshold absorbs it (mismatched
//! positions become `<*>`), otherwise the message seeds a new template with
//! the next dense event ID.

use std::collections::HashMap;
use std::fs::File;
use std::io::{self, BufRead, BufWriter, Write};
use std::path::{Path, PathBuf};

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::session::extract_block_id;

pub const WILDCARD: &str = "<*>";

/// Header layout of the LogHub HDFS corpus:
/// `081109 203615 148 INFO dfs.DataNode$PacketResponder: message...`
pub const HDFS_HEADER_PATTERN: &str =
    r"^(?P<date>\d{6})\s+(?P<time>\d{6})\s+(?P<pid>\d+)\s+(?P<level>[A-Z]+)\s+(?P<component>\S+?):\s+(?P<content>.*)$";

#[derive(Debug, Error)]
pub enum DrainError {
    #[error("line {line_number}: header pattern did not match or message body is empty")]
    HeaderMismatch { line_number: usize },
    #[error("token lists differ in length ({left} vs {right})")]
    LengthMismatch { left: usize, right: usize },
    #[error("invalid header pattern: {0}")]
    BadPattern(String),
    #[error("invalid parser settings: {0}")]
    BadConfig(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> DrainError + '_ {
    move |source| DrainError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn csv_err(path: &Path) -> impl FnOnce(csv::Error) -> DrainError + '_ {
    move |source| DrainError::Csv {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DrainConfig {
    pub depth: usize,
    pub sim_threshold: f64,
    pub max_children: usize,
    pub header_pattern: String,
}

impl Default for DrainConfig {
    fn default() -> Self {
        Self {
            depth: 4,
            sim_threshold: 0.4,
            max_children: 100,
            header_pattern: HDFS_HEADER_PATTERN.to_string(),
        }
    }
}

impl DrainConfig {
    pub fn validate(&self) -> Result<(), DrainError> {
        if self.depth < 3 {
            return Err(DrainError::BadConfig(format!("depth must be >= 3, got {}", self.depth)));
        }
        if !(self.sim_threshold > 0.0 && self.sim_threshold < 1.0) {
            return Err(DrainError::BadConfig(format!(
                "sim_threshold must lie in (0, 1), got {}",
                self.sim_threshold
            )));
        }
        if self.max_children == 0 {
            return Err(DrainError::BadConfig("max_children must be positive".into()));
        }
        Ok(())
    }
}

/// Compiled header layout. The pattern must define a `content` group.
#[derive(Clone, Debug)]
pub struct HeaderPattern {
    regex: Regex,
}

impl HeaderPattern {
    pub fn new(pattern: &str) -> Result<Self, DrainError> {
        let regex = Regex::new(pattern).map_err(|e| DrainError::BadPattern(e.to_string()))?;
        if !regex.capture_names().flatten().any(|n| n == "content") {
            return Err(DrainError::BadPattern("pattern has no `content` group".into()));
        }
        Ok(Self { regex })
    }

    pub fn hdfs() -> Self {
        Self::new(HDFS_HEADER_PATTERN).expect("built-in pattern compiles")
    }
}

/// A log line split into header and message.
#[derive(Clone, Debug, PartialEq)]
pub struct RawLogLine {
    pub line_number: usize,
    pub header: String,
    pub content: String,
}

/// Splits a raw line into `(header, content)`. Fails when the pattern does
/// not match or the message body is blank.
pub fn split_header(raw_line: &str, line_number: usize, pattern: &HeaderPattern) -> Result<RawLogLine, DrainError> {
    let line = raw_line.trim_end_matches(['\r', '\n']);
    let caps = pattern
        .regex
        .captures(line)
        .ok_or(DrainError::HeaderMismatch { line_number })?;
    let content = caps.name("content").map(|m| m.as_str().trim()).unwrap_or("");
    if content.is_empty() {
        return Err(DrainError::HeaderMismatch { line_number });
    }
    let start = caps.name("content").map_or(line.len(), |m| m.start());
    Ok(RawLogLine {
        line_number,
        header: line[..start].trim_end().to_string(),
        content: content.to_string(),
    })
}

/// True when some digit in `token` has only digits, `_`, `-`, `.` or the
/// token boundary on either side.
pub fn is_variable_token(token: &str) -> bool {
    let chars: Vec<char> = token.chars().collect();
    let ok = |c: char| c.is_ascii_digit() || matches!(c, '_' | '-' | '.');
    chars.iter().enumerate().any(|(i, &c)| {
        c.is_ascii_digit() && (i == 0 || ok(chars[i - 1])) && (i + 1 == chars.len() || ok(chars[i + 1]))
    })
}

/// Whitespace tokens of a message with numeric-bearing tokens masked.
pub fn mask_tokens(content: &str) -> Vec<String> {
    content
        .split_whitespace()
        .map(|t| {
            if is_variable_token(t) {
                WILDCARD.to_string()
            } else {
                t.to_string()
            }
        })
        .collect()
}

/// Header split plus masked content tokens.
pub fn preprocess(raw_line: &str, pattern: &HeaderPattern) -> Result<(String, Vec<String>), DrainError> {
    let line = split_header(raw_line, 0, pattern)?;
    Ok((line.header, mask_tokens(&line.content)))
}

/// Fraction of positions where the tokens agree or the template holds `<*>`.
pub fn seq_similarity(content: &[String], template: &[String]) -> Result<f64, DrainError> {
    if content.len() != template.len() {
        return Err(DrainError::LengthMismatch {
            left: content.len(),
            right: template.len(),
        });
    }
    if content.is_empty() {
        return Ok(1.0);
    }
    let matches = content
        .iter()
        .zip(template)
        .filter(|(c, t)| c == t || t.as_str() == WILDCARD)
        .count();
    Ok(matches as f64 / content.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventTemplate {
    pub event_id: u32,
    pub tokens: Vec<String>,
    pub match_count: u64,
}

impl EventTemplate {
    pub fn text(&self) -> String {
        self.tokens.join(" ")
    }

    pub fn wildcard_count(&self) -> usize {
        self.tokens.iter().filter(|t| t.as_str() == WILDCARD).count()
    }

    fn absorb(&mut self, tokens: &[String]) {
        for (t, c) in self.tokens.iter_mut().zip(tokens) {
            if t != c && t.as_str() != WILDCARD {
                *t = WILDCARD.to_string();
            }
        }
        self.match_count += 1;
    }
}

#[derive(Debug, Default)]
struct Node {
    children: HashMap<String, Node>,
    /// Event IDs of templates stored at this leaf, in creation order.
    templates: Vec<u32>,
}

/// Fixed-depth Drain parse tree. Single writer: `parse` takes `&mut self`.
#[derive(Debug)]
pub struct ParseTree {
    depth: usize,
    sim_threshold: f64,
    max_children: usize,
    by_length: HashMap<usize, Node>,
    templates: Vec<EventTemplate>,
}

impl ParseTree {
    pub fn new(config: &DrainConfig) -> Result<Self, DrainError> {
        config.validate()?;
        Ok(Self {
            depth: config.depth,
            sim_threshold: config.sim_threshold,
            max_children: config.max_children,
            by_length: HashMap::new(),
            templates: Vec::new(),
        })
    }

    /// Rebuilds a tree from an exported template table so that later lines
    /// can be mapped onto existing IDs.
    pub fn from_templates(config: &DrainConfig, table: &[EventTemplate]) -> Result<Self, DrainError> {
        let mut tree = Self::new(config)?;
        let mut sorted = table.to_vec();
        sorted.sort_by_key(|t| t.event_id);
        for (expected, t) in sorted.into_iter().enumerate() {
            if t.event_id as usize != expected {
                return Err(DrainError::BadConfig(format!(
                    "template table is not dense: expected id {expected}, found {}",
                    t.event_id
                )));
            }
            let leaf = tree.route(&t.tokens);
            leaf.templates.push(t.event_id);
            tree.templates.push(t);
        }
        Ok(tree)
    }

    pub fn templates(&self) -> &[EventTemplate] {
        &self.templates
    }

    pub fn template(&self, event_id: u32) -> Option<&EventTemplate> {
        self.templates.get(event_id as usize)
    }

    /// Walks (and grows) the internal levels for `tokens`, returning the leaf.
    fn route(&mut self, tokens: &[String]) -> &mut Node {
        let max_children = self.max_children;
        let levels = (self.depth - 2).min(tokens.len());
        let mut node = self.by_length.entry(tokens.len()).or_default();
        for token in &tokens[..levels] {
            let key = if node.children.contains_key(token.as_str()) {
                token.as_str()
            } else if node.children.contains_key(WILDCARD) {
                if node.children.len() < max_children {
                    token.as_str()
                } else {
                    WILDCARD
                }
            } else if node.children.len() + 1 < max_children {
                token.as_str()
            } else {
                WILDCARD
            };
            node = node.children.entry(key.to_string()).or_default();
        }
        node
    }

    /// Assigns `tokens` to a template, creating one if nothing in the leaf is
    /// similar enough. Returns the event ID.
    pub fn parse(&mut self, tokens: &[String]) -> u32 {
        let threshold = self.sim_threshold;
        let next_id = self.templates.len() as u32;
        // `route` borrows self mutably; collect the candidate IDs first.
        let candidates = self.route(tokens).templates.clone();
        let mut best: Option<(u32, f64)> = None;
        for id in candidates {
            let sim = seq_similarity(tokens, &self.templates[id as usize].tokens)
                .expect("leaf templates share the message length");
            if best.is_none_or(|(_, s)| sim > s) {
                best = Some((id, sim));
            }
        }
        match best {
            Some((id, sim)) if sim >= threshold => {
                self.templates[id as usize].absorb(tokens);
                id
            }
            _ => {
                self.route(tokens).templates.push(next_id);
                self.templates.push(EventTemplate {
                    event_id: next_id,
                    tokens: tokens.to_vec(),
                    match_count: 1,
                });
                next_id
            }
        }
    }
}

/// One row of `structured.csv`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StructuredRow {
    pub line_number: usize,
    pub event_id: u32,
    #[serde(default)]
    pub block_id: Option<String>,
}

/// A line the header pattern rejected.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Reject {
    pub line_number: usize,
    pub line: String,
}

/// Result of parsing a whole corpus.
#[derive(Debug)]
pub struct ParsedCorpus {
    pub tree: ParseTree,
    pub rows: Vec<StructuredRow>,
    pub rejects: Vec<Reject>,
    pub multi_block_lines: usize,
}

/// Parses every line of `reader`. Lines that fail header extraction are kept
/// as rejects; parsing continues.
pub fn parse_corpus<R: BufRead>(reader: R, config: &DrainConfig) -> Result<ParsedCorpus, DrainError> {
    let pattern = HeaderPattern::new(&config.header_pattern)?;
    let mut tree = ParseTree::new(config)?;
    let mut rows = Vec::new();
    let mut rejects = Vec::new();
    let mut multi_block_lines = 0;
    for (idx, line) in reader.lines().enumerate() {
        let line_number = idx + 1;
        let line = line.map_err(|source| DrainError::Io {
            path: PathBuf::from("<input>"),
            source,
        })?;
        let raw = match split_header(&line, line_number, &pattern) {
            Ok(raw) => raw,
            Err(DrainError::HeaderMismatch { .. }) => {
                rejects.push(Reject { line_number, line });
                continue;
            }
            Err(e) => return Err(e),
        };
        // block IDs are pulled from the unmasked message
        let block_id = extract_block_id(&raw.content);
        if block_id.is_some() && crate::session::count_block_ids(&raw.content) > 1 {
            multi_block_lines += 1;
            log::debug!("line {line_number}: several block IDs, keeping the first");
        }
        let event_id = tree.parse(&mask_tokens(&raw.content));
        rows.push(StructuredRow {
            line_number,
            event_id,
            block_id,
        });
    }
    Ok(ParsedCorpus {
        tree,
        rows,
        rejects,
        multi_block_lines,
    })
}

pub fn parse_file(path: &Path, config: &DrainConfig) -> Result<ParsedCorpus, DrainError> {
    let file = File::open(path).map_err(io_err(path))?;
    parse_corpus(io::BufReader::new(file), config)
}

/// `event_id,template_text,match_count`, sorted by event ID.
pub fn write_templates<W: Write>(out: W, templates: &[EventTemplate]) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["event_id", "template_text", "match_count"])?;
    let mut sorted: Vec<&EventTemplate> = templates.iter().collect();
    sorted.sort_by_key(|t| t.event_id);
    for t in sorted {
        w.write_record([t.event_id.to_string(), t.text(), t.match_count.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn export_templates(path: &Path, templates: &[EventTemplate]) -> Result<(), DrainError> {
    let file = File::create(path).map_err(io_err(path))?;
    write_templates(BufWriter::new(file), templates).map_err(csv_err(path))
}

#[derive(Deserialize)]
struct TemplateRecord {
    event_id: u32,
    template_text: String,
    match_count: u64,
}

pub fn read_templates<R: io::Read>(input: R) -> Result<Vec<EventTemplate>, csv::Error> {
    let mut r = csv::Reader::from_reader(input);
    r.deserialize::<TemplateRecord>()
        .map(|rec| {
            rec.map(|rec| EventTemplate {
                event_id: rec.event_id,
                tokens: rec.template_text.split(' ').map(str::to_string).collect(),
                match_count: rec.match_count,
            })
        })
        .collect()
}

pub fn import_templates(path: &Path) -> Result<Vec<EventTemplate>, DrainError> {
    let file = File::open(path).map_err(io_err(path))?;
    read_templates(io::BufReader::new(file)).map_err(csv_err(path))
}

/// `line_number,event_id,block_id` with an empty block ID when absent.
pub fn write_structured<W: Write>(out: W, rows: &[StructuredRow]) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["line_number", "event_id", "block_id"])?;
    for r in rows {
        w.write_record([
            r.line_number.to_string(),
            r.event_id.to_string(),
            r.block_id.clone().unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn export_structured(path: &Path, rows: &[StructuredRow]) -> Result<(), DrainError> {
    let file = File::create(path).map_err(io_err(path))?;
    write_structured(BufWriter::new(file), rows).map_err(csv_err(path))
}

pub fn import_structured(path: &Path) -> Result<Vec<StructuredRow>, DrainError> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut r = csv::Reader::from_reader(io::BufReader::new(file));
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(csv_err(path))?;
        let parse_num = |i: usize| -> Result<usize, DrainError> {
            rec.get(i).and_then(|v| v.parse().ok()).ok_or_else(|| {
                DrainError::BadConfig(format!("{}: malformed row {:?}", path.display(), rec))
            })
        };
        let block = rec.get(2).unwrap_or("");
        rows.push(StructuredRow {
            line_number: parse_num(0)?,
            event_id: parse_num(1)? as u32,
            block_id: (!block.is_empty()).then(|| block.to_string()),
        });
    }
    Ok(rows)
}

/// `rejects.log`: `line_number<TAB>raw line`.
pub fn export_rejects(path: &Path, rejects: &[Reject]) -> Result<(), DrainError> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    for r in rejects {
        writeln!(w, "{}\t{}", r.line_number, r.line).map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}
