//! Core domain vocabulary: actions, entity labels, tokens, spans, annotation
//! trees and BIO tags. Everything here is an immutable value type.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// The 18 editing actions an utterance can request.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ActionType {
    Adjust,
    Delete,
    Crop,
    Add,
    Replace,
    Apply,
    Zoom,
    Rotate,
    Transform,
    Move,
    Clone,
    Select,
    Swap,
    Undo,
    Merge,
    Redo,
    Other,
    Scroll,
}

impl ActionType {
    /// All actions, in canonical order.
    pub const ALL: [ActionType; 18] = [
        ActionType::Adjust,
        ActionType::Delete,
        ActionType::Crop,
        ActionType::Add,
        ActionType::Replace,
        ActionType::Apply,
        ActionType::Zoom,
        ActionType::Rotate,
        ActionType::Transform,
        ActionType::Move,
        ActionType::Clone,
        ActionType::Select,
        ActionType::Swap,
        ActionType::Undo,
        ActionType::Merge,
        ActionType::Redo,
        ActionType::Other,
        ActionType::Scroll,
    ];

    /// Uppercase text name, as used in the annotation format (`ACTION-CROP`).
    pub fn name(self) -> &'static str {
        match self {
            ActionType::Adjust => "ADJUST",
            ActionType::Delete => "DELETE",
            ActionType::Crop => "CROP",
            ActionType::Add => "ADD",
            ActionType::Replace => "REPLACE",
            ActionType::Apply => "APPLY",
            ActionType::Zoom => "ZOOM",
            ActionType::Rotate => "ROTATE",
            ActionType::Transform => "TRANSFORM",
            ActionType::Move => "MOVE",
            ActionType::Clone => "CLONE",
            ActionType::Select => "SELECT",
            ActionType::Swap => "SWAP",
            ActionType::Undo => "UNDO",
            ActionType::Merge => "MERGE",
            ActionType::Redo => "REDO",
            ActionType::Other => "OTHER",
            ActionType::Scroll => "SCROLL",
        }
    }

    /// Case-insensitive parse of an action name.
    pub fn parse(raw: &str) -> Option<ActionType> {
        let up = raw.to_ascii_uppercase();
        ActionType::ALL.iter().copied().find(|a| a.name() == up)
    }

    /// Position in [`ActionType::ALL`].
    pub fn ordinal(self) -> usize {
        ActionType::ALL.iter().position(|a| *a == self).unwrap()
    }
}

impl fmt::Display for ActionType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// The five entity types that qualify an action.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EntityLabel {
    Attribute,
    Value,
    Object,
    Location,
    Intent,
}

/// Raised by [`canonicalize_label`] for names outside the alias table.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown entity label `{0}`")]
pub struct UnknownLabel(pub String);

impl EntityLabel {
    /// All labels, in canonical order.
    pub const ALL: [EntityLabel; 5] = [
        EntityLabel::Attribute,
        EntityLabel::Value,
        EntityLabel::Object,
        EntityLabel::Location,
        EntityLabel::Intent,
    ];

    /// Canonical uppercase name (the surface form a tagger emits).
    pub fn name(self) -> &'static str {
        match self {
            EntityLabel::Attribute => "ATTRIBUTE",
            EntityLabel::Value => "VALUE",
            EntityLabel::Object => "OBJECT",
            EntityLabel::Location => "LOCATION",
            EntityLabel::Intent => "INTENT",
        }
    }
}

impl fmt::Display for EntityLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Resolves an entity label or one of its aliases to the canonical label.
///
/// Matching is case-insensitive and `/` is normalized to `-`, so
/// `modifier/value`, `MODIFIER-VALUE` and `Value` all resolve to `VALUE`.
/// Accepted aliases: REGION -> LOCATION, MODIFIER-VALUE -> VALUE,
/// MODIFIER -> VALUE, INTENTION -> INTENT.
pub fn canonicalize_label(raw: &str) -> Result<EntityLabel, UnknownLabel> {
    let up = raw.to_ascii_uppercase().replace('/', "-");
    match up.as_str() {
        "ATTRIBUTE" => Ok(EntityLabel::Attribute),
        "VALUE" | "MODIFIER-VALUE" | "MODIFIER" => Ok(EntityLabel::Value),
        "OBJECT" => Ok(EntityLabel::Object),
        "LOCATION" | "REGION" => Ok(EntityLabel::Location),
        "INTENT" | "INTENTION" => Ok(EntityLabel::Intent),
        _ => Err(UnknownLabel(raw.to_string())),
    }
}

/// One word of an utterance with its 0-based position.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Token {
    pub text: String,
    pub index: usize,
}

impl Token {
    pub fn new(text: impl Into<String>, index: usize) -> Token {
        Token {
            text: text.into(),
            index,
        }
    }
}

/// A flat, labeled token span; `start` inclusive, `end` exclusive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Span {
    pub label: EntityLabel,
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(label: EntityLabel, start: usize, end: usize) -> Span {
        Span { label, start, end }
    }
}

/// What an annotation node is labeled as.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeKind {
    Ier,
    Action(ActionType),
    Entity(EntityLabel),
}

/// Ordered child of an annotation node: either a word token or a nested node.
#[derive(Debug, Clone, PartialEq)]
pub enum Child {
    Word(Token),
    Node(AnnNode),
}

/// A node of the annotation tree. The root is always an IER node; an IER
/// contains at most one ACTION node, always as a direct child; entity nodes
/// may nest inside the ACTION node and inside each other.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnNode {
    pub kind: NodeKind,
    pub children: Vec<Child>,
}

impl AnnNode {
    pub fn new(kind: NodeKind, children: Vec<Child>) -> AnnNode {
        AnnNode { kind, children }
    }

    /// Token extent `(start, end)` of the words under this node, end exclusive.
    /// Extents are contiguous and non-empty for valid trees.
    pub fn extent(&self) -> (usize, usize) {
        let mut lo = usize::MAX;
        let mut hi = 0usize;
        self.visit_words(&mut |t| {
            lo = lo.min(t.index);
            hi = hi.max(t.index + 1);
        });
        if lo == usize::MAX {
            (0, 0)
        } else {
            (lo, hi)
        }
    }

    fn visit_words(&self, f: &mut impl FnMut(&Token)) {
        for child in &self.children {
            match child {
                Child::Word(t) => f(t),
                Child::Node(n) => n.visit_words(f),
            }
        }
    }
}

/// A tokenized utterance with its annotation tree, when it has one.
///
/// Utterances without an IER (pure comments) keep their tokens but have no
/// root; the executable-action filter drops them before modeling.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnotatedUtterance {
    pub id: String,
    pub tokens: Vec<Token>,
    pub root: Option<AnnNode>,
}

impl AnnotatedUtterance {
    /// The action of the IER, if the root has a direct ACTION child.
    pub fn action(&self) -> Option<ActionType> {
        let root = self.root.as_ref()?;
        root.children.iter().find_map(|c| match c {
            Child::Node(AnnNode {
                kind: NodeKind::Action(a),
                ..
            }) => Some(*a),
            _ => None,
        })
    }

    /// All entity nodes flattened to spans, in depth-first tree order.
    /// Nested entities yield one span per node.
    pub fn entity_spans(&self) -> Vec<Span> {
        let mut out = Vec::new();
        if let Some(root) = &self.root {
            collect_entity_spans(root, &mut out);
        }
        out
    }

    /// Lowercased word texts, in order.
    pub fn words(&self) -> Vec<String> {
        self.tokens.iter().map(|t| t.text.clone()).collect()
    }

    /// Equality of tokens and tree, ignoring the id.
    pub fn structural_eq(&self, other: &AnnotatedUtterance) -> bool {
        self.tokens == other.tokens && self.root == other.root
    }
}

fn collect_entity_spans(node: &AnnNode, out: &mut Vec<Span>) {
    if let NodeKind::Entity(label) = node.kind {
        let (start, end) = node.extent();
        out.push(Span::new(label, start, end));
    }
    for child in &node.children {
        if let Child::Node(n) = child {
            collect_entity_spans(n, out);
        }
    }
}

/// One BIO tag. The label part is a string so that composite labels from
/// nested encoding (`ATTRIBUTE|VALUE`) fit the same alphabet.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum BioTag {
    O,
    B(String),
    I(String),
}

impl BioTag {
    pub fn begin(label: impl Into<String>) -> BioTag {
        BioTag::B(label.into())
    }

    pub fn inside(label: impl Into<String>) -> BioTag {
        BioTag::I(label.into())
    }

    /// Parses `O`, `B-<label>` or `I-<label>`.
    pub fn parse(s: &str) -> Option<BioTag> {
        if s == "O" {
            return Some(BioTag::O);
        }
        if let Some(rest) = s.strip_prefix("B-") {
            return (!rest.is_empty()).then(|| BioTag::B(rest.to_string()));
        }
        if let Some(rest) = s.strip_prefix("I-") {
            return (!rest.is_empty()).then(|| BioTag::I(rest.to_string()));
        }
        None
    }

    pub fn label(&self) -> Option<&str> {
        match self {
            BioTag::O => None,
            BioTag::B(l) | BioTag::I(l) => Some(l),
        }
    }
}

impl fmt::Display for BioTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BioTag::O => f.write_str("O"),
            BioTag::B(l) => write!(f, "B-{l}"),
            BioTag::I(l) => write!(f, "I-{l}"),
        }
    }
}

/// Per-token tag sequence; always exactly one tag per token.
pub type BioSequence = Vec<BioTag>;
