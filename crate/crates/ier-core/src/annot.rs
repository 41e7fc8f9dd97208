//! The bracketed annotation format: parsing, serialization, corpus loading
//! and the executable-action filter.
//!
//! One utterance per line. A node is written `[LABEL : items ]` where items
//! are words or nested nodes; the opening bracket may be glued to the label
//! (`[IER`) or stand alone. `[`, `]` and `:` are only special as standalone
//! tokens or at the start of a token; anything else is a plain word, so
//! arbitrary text degrades to an unannotated utterance rather than an error.

use std::collections::HashSet;
use std::fmt;
use std::io::BufRead;

use serde::Deserialize;
use thiserror::Error;

use crate::model::{
    canonicalize_label, ActionType, AnnNode, AnnotatedUtterance, Child, NodeKind, Token,
};

/// Why a line was rejected.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ParseErrorKind {
    UnbalancedBracket,
    UnknownLabel,
    MultipleActions,
    EmptyNode,
    MultipleRoots,
}

impl fmt::Display for ParseErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ParseErrorKind::UnbalancedBracket => "unbalanced bracket",
            ParseErrorKind::UnknownLabel => "unknown label",
            ParseErrorKind::MultipleActions => "multiple actions",
            ParseErrorKind::EmptyNode => "empty node",
            ParseErrorKind::MultipleRoots => "multiple roots",
        };
        f.write_str(s)
    }
}

/// A rejected line: position plus category. Each bad line yields exactly one.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("line {line}, col {col}: {message} ({kind})")]
pub struct ParseError {
    /// 1-based line number; set by the corpus loader, 1 for single lines.
    pub line: usize,
    /// Byte offset of the offending token within the line.
    pub col: usize,
    pub kind: ParseErrorKind,
    pub message: String,
}

impl ParseError {
    fn new(kind: ParseErrorKind, col: usize, message: impl Into<String>) -> ParseError {
        ParseError {
            line: 1,
            col,
            kind,
            message: message.into(),
        }
    }
}

/// A loaded corpus plus where it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub utterances: Vec<AnnotatedUtterance>,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Provenance {
    pub source: String,
    pub format: String,
    pub utterances: usize,
    pub errors: usize,
    /// Generator seed and RNG name, for synthesized corpora.
    pub seed: Option<u64>,
    pub rng: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorpusFormat {
    BracketLines,
    Jsonl,
}

impl CorpusFormat {
    pub fn name(self) -> &'static str {
        match self {
            CorpusFormat::BracketLines => "bracket-lines",
            CorpusFormat::Jsonl => "jsonl",
        }
    }
}

#[derive(Debug, Error)]
pub enum LoadError {
    #[error("failed to read input: {0}")]
    Io(#[from] std::io::Error),
}

struct RawTok<'a> {
    text: &'a str,
    col: usize,
}

fn lex(line: &str) -> Vec<RawTok<'_>> {
    let mut toks = Vec::new();
    let mut start = None;
    for (i, ch) in line.char_indices() {
        if ch.is_whitespace() {
            if let Some(s) = start.take() {
                toks.push(RawTok {
                    text: &line[s..i],
                    col: s,
                });
            }
        } else if start.is_none() {
            start = Some(i);
        }
    }
    if let Some(s) = start {
        toks.push(RawTok {
            text: &line[s..],
            col: s,
        });
    }
    toks
}

enum FrameKind {
    Ier,
    Action(ActionType),
    Entity(crate::model::EntityLabel),
}

struct Frame {
    kind: FrameKind,
    children: Vec<Child>,
    has_action: bool,
    col: usize,
}

/// Parses one line of bracketed annotation into an utterance.
///
/// Words outside any node are kept as unannotated tokens; a line with no IER
/// node at all yields `root: None`. The returned utterance has an empty id;
/// loaders fill it in.
pub fn parse_line(text: &str) -> Result<AnnotatedUtterance, ParseError> {
    let raw = lex(text);
    let mut tokens: Vec<Token> = Vec::new();
    let mut root: Option<AnnNode> = None;
    let mut stack: Vec<Frame> = Vec::new();
    let mut i = 0usize;

    while i < raw.len() {
        let tok = &raw[i];
        let (opener_label, label_col) = if tok.text == "[" {
            // label comes from the next token
            match raw.get(i + 1) {
                Some(next) if !is_reserved(next.text) => {
                    i += 1;
                    (Some(next.text), raw[i].col)
                }
                Some(next) => {
                    return Err(ParseError::new(
                        ParseErrorKind::UnknownLabel,
                        next.col,
                        format!("expected a label after `[`, found `{}`", next.text),
                    ))
                }
                None => {
                    return Err(ParseError::new(
                        ParseErrorKind::UnbalancedBracket,
                        tok.col,
                        "`[` at end of line",
                    ))
                }
            }
        } else if let Some(rest) = tok.text.strip_prefix('[') {
            (Some(rest), tok.col)
        } else {
            (None, tok.col)
        };

        if let Some(label) = opener_label {
            // node opener: require a standalone `:` next
            match raw.get(i + 1) {
                Some(sep) if sep.text == ":" => {}
                _ => {
                    return Err(ParseError::new(
                        ParseErrorKind::UnbalancedBracket,
                        tok.col,
                        format!("expected `:` after label `{label}`"),
                    ))
                }
            }
            let kind = resolve_label(label, &stack, root.is_some(), label_col)?;
            if matches!(kind, FrameKind::Action(_)) {
                let ier = stack
                    .last_mut()
                    .expect("action placement already validated");
                if ier.has_action {
                    return Err(ParseError::new(
                        ParseErrorKind::MultipleActions,
                        label_col,
                        "IER already has an ACTION node",
                    ));
                }
                ier.has_action = true;
            }
            stack.push(Frame {
                kind,
                children: Vec::new(),
                has_action: false,
                col: tok.col,
            });
            i += 2; // skip label-or-opener and `:`
            continue;
        }

        if tok.text == "]" {
            let frame = stack.pop().ok_or_else(|| {
                ParseError::new(ParseErrorKind::UnbalancedBracket, tok.col, "unexpected `]`")
            })?;
            if frame.children.is_empty() {
                return Err(ParseError::new(
                    ParseErrorKind::EmptyNode,
                    frame.col,
                    "node has no words or children",
                ));
            }
            let node = AnnNode::new(
                match frame.kind {
                    FrameKind::Ier => NodeKind::Ier,
                    FrameKind::Action(a) => NodeKind::Action(a),
                    FrameKind::Entity(e) => NodeKind::Entity(e),
                },
                frame.children,
            );
            match stack.last_mut() {
                Some(parent) => parent.children.push(Child::Node(node)),
                None => root = Some(node), // only IER can reach top level
            }
        } else if tok.text == ":" {
            return Err(ParseError::new(
                ParseErrorKind::UnbalancedBracket,
                tok.col,
                "unexpected `:`",
            ));
        } else {
            let token = Token::new(tok.text, tokens.len());
            if let Some(frame) = stack.last_mut() {
                frame.children.push(Child::Word(token.clone()));
            }
            tokens.push(token);
        }
        i += 1;
    }

    if let Some(frame) = stack.last() {
        return Err(ParseError::new(
            ParseErrorKind::UnbalancedBracket,
            frame.col,
            "unclosed node at end of line",
        ));
    }

    Ok(AnnotatedUtterance {
        id: String::new(),
        tokens,
        root,
    })
}

fn is_reserved(tok: &str) -> bool {
    tok == "[" || tok == "]" || tok == ":"
}

/// Positional label resolution: at top level only IER is admissible; ACTION-*
/// only as a direct child of IER; entity labels anywhere inside the IER.
fn resolve_label(
    label: &str,
    stack: &[Frame],
    root_done: bool,
    col: usize,
) -> Result<FrameKind, ParseError> {
    let up = label.to_ascii_uppercase();
    if up == "IER" {
        if root_done || !stack.is_empty() {
            return Err(ParseError::new(
                ParseErrorKind::MultipleRoots,
                col,
                "a line may contain only one IER node",
            ));
        }
        return Ok(FrameKind::Ier);
    }
    if let Some(name) = up.strip_prefix("ACTION-") {
        let action = ActionType::parse(name).ok_or_else(|| {
            ParseError::new(
                ParseErrorKind::UnknownLabel,
                col,
                format!("unknown action `{name}`"),
            )
        })?;
        if !matches!(
            stack.last(),
            Some(Frame {
                kind: FrameKind::Ier,
                ..
            })
        ) {
            return Err(ParseError::new(
                ParseErrorKind::UnknownLabel,
                col,
                "ACTION nodes are only admissible as direct children of IER",
            ));
        }
        return Ok(FrameKind::Action(action));
    }
    if stack.is_empty() {
        return Err(ParseError::new(
            ParseErrorKind::UnknownLabel,
            col,
            format!("top-level nodes must be IER, found `{label}`"),
        ));
    }
    match canonicalize_label(label) {
        Ok(entity) => Ok(FrameKind::Entity(entity)),
        Err(_) => Err(ParseError::new(
            ParseErrorKind::UnknownLabel,
            col,
            format!("unknown label `{label}`"),
        )),
    }
}

/// Canonical single-line bracket text; `parse_line(serialize(u))` is
/// structurally equal to `u`. Utterances without a root serialize to their
/// plain tokens.
pub fn serialize(utt: &AnnotatedUtterance) -> String {
    let mut parts: Vec<String> = Vec::new();
    match &utt.root {
        None => parts.extend(utt.tokens.iter().map(|t| t.text.clone())),
        Some(root) => {
            let (start, end) = root.extent();
            parts.extend(utt.tokens[..start].iter().map(|t| t.text.clone()));
            parts.push(render(root));
            parts.extend(utt.tokens[end..].iter().map(|t| t.text.clone()));
        }
    }
    parts.join(" ")
}

fn render(node: &AnnNode) -> String {
    let label = match node.kind {
        NodeKind::Ier => "IER".to_string(),
        NodeKind::Action(a) => format!("ACTION-{}", a.name()),
        NodeKind::Entity(e) => e.name().to_string(),
    };
    let mut out = format!("[{label} :");
    for child in &node.children {
        out.push(' ');
        match child {
            Child::Word(t) => out.push_str(&t.text),
            Child::Node(n) => out.push_str(&render(n)),
        }
    }
    out.push_str(" ]");
    out
}

#[derive(Deserialize)]
struct JsonlRecord {
    id: Option<String>,
    text: Option<String>,
    ann: Option<String>,
}

/// Loads a corpus from UTF-8 text. Malformed lines become [`ParseError`]s,
/// not failures; only undecodable input is fatal.
///
/// bracket-lines: one utterance per line, blank lines and `#` comments
/// skipped, ids are 1-based line numbers. jsonl: one object per line with
/// fields `id`, `text` and optional `ann` (bracket string); records without
/// `ann` become unannotated utterances over whitespace-split `text`.
pub fn load_corpus<R: BufRead>(
    reader: R,
    format: CorpusFormat,
    source: &str,
) -> Result<(Corpus, Vec<ParseError>), LoadError> {
    let mut utterances = Vec::new();
    let mut errors = Vec::new();
    let mut seen_ids: HashSet<String> = HashSet::new();

    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line?;
        let line = line.trim_end_matches('\r');
        match format {
            CorpusFormat::BracketLines => {
                if line.trim().is_empty() || line.trim_start().starts_with('#') {
                    continue;
                }
                match parse_line(line) {
                    Ok(mut utt) => {
                        utt.id = lineno.to_string();
                        utterances.push(utt);
                    }
                    Err(mut e) => {
                        e.line = lineno;
                        errors.push(e);
                    }
                }
            }
            CorpusFormat::Jsonl => {
                if line.trim().is_empty() {
                    continue;
                }
                let record: JsonlRecord = match serde_json::from_str(line) {
                    Ok(r) => r,
                    Err(e) => {
                        // malformed JSON is a structural error in the line
                        errors.push(ParseError {
                            line: lineno,
                            col: e.column().saturating_sub(1),
                            kind: ParseErrorKind::UnbalancedBracket,
                            message: format!("invalid JSON object: {e}"),
                        });
                        continue;
                    }
                };
                let mut utt = match &record.ann {
                    Some(ann) => match parse_line(ann) {
                        Ok(u) => u,
                        Err(mut e) => {
                            e.line = lineno;
                            errors.push(e);
                            continue;
                        }
                    },
                    None => AnnotatedUtterance {
                        id: String::new(),
                        tokens: record
                            .text
                            .as_deref()
                            .unwrap_or("")
                            .split_whitespace()
                            .enumerate()
                            .map(|(i, w)| Token::new(w, i))
                            .collect(),
                        root: None,
                    },
                };
                utt.id = record.id.unwrap_or_else(|| lineno.to_string());
                utterances.push(utt);
            }
        }
    }

    // ids are unique within a corpus; duplicates get a line-number suffix
    for (idx, utt) in utterances.iter_mut().enumerate() {
        if !seen_ids.insert(utt.id.clone()) {
            utt.id = format!("{}#{}", utt.id, idx + 1);
            seen_ids.insert(utt.id.clone());
        }
    }

    let provenance = Provenance {
        source: source.to_string(),
        format: format.name().to_string(),
        utterances: utterances.len(),
        errors: errors.len(),
        seed: None,
        rng: None,
    };
    Ok((
        Corpus {
            utterances,
            provenance,
        },
        errors,
    ))
}

/// Per-reason removal counts from [`filter_executable`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct FilterCounts {
    pub removed_no_ier: usize,
    pub removed_other_action: usize,
    pub removed_no_action: usize,
}

impl FilterCounts {
    pub fn total(&self) -> usize {
        self.removed_no_ier + self.removed_other_action + self.removed_no_action
    }
}

/// Keeps only utterances with an executable action: drops comment lines
/// without an IER, IERs with no ACTION node, and IERs whose action is OTHER.
/// Survivor order is preserved. Idempotent.
pub fn filter_executable(corpus: &Corpus) -> (Corpus, FilterCounts) {
    let mut counts = FilterCounts::default();
    let mut kept = Vec::new();
    for utt in &corpus.utterances {
        if utt.root.is_none() {
            counts.removed_no_ier += 1;
            continue;
        }
        match utt.action() {
            None => counts.removed_no_action += 1,
            Some(ActionType::Other) => counts.removed_other_action += 1,
            Some(_) => kept.push(utt.clone()),
        }
    }
    let mut provenance = corpus.provenance.clone();
    provenance.utterances = kept.len();
    (
        Corpus {
            utterances: kept,
            provenance,
        },
        counts,
    )
}
