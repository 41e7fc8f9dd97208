//! Turns natural-language image edit requests into structured edit commands.
//!
//! The model is split in two levels: level 1 classifies which of the 18
//! editing actions an utterance asks for (multinomial logistic regression
//! over pooled utterance features); level 2 tags entity spans (attribute,
//! value, object, location, intent) with a linear-chain CRF over BIO tags.
//! Both learners are trained with the L-BFGS minimizer in [`optim`].
//!
//! Supporting pieces: a parser for the bracketed annotation format
//! ([`annot`]), BIO encoding/decoding with innermost or nested flattening
//! ([`bio`]), evaluation metrics including Krippendorff's alpha ([`eval`]),
//! and a seeded synthetic corpus generator for end-to-end runs without a
//! hand-annotated corpus ([`synth`]).

pub mod action;
pub mod annot;
pub mod bio;
pub mod crf;
pub mod eval;
pub mod features;
pub mod model;
pub mod optim;
pub mod pipeline;
pub mod synth;

pub use model::{
    ActionType, AnnNode, AnnotatedUtterance, BioSequence, BioTag, Child, EntityLabel, NodeKind,
    Span, Token,
};
