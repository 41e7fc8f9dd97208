//! BIO encoding of annotation trees and decoding of tag sequences back to
//! flat spans.
//!
//! Flattening keeps, per token, either the innermost enclosing entity label
//! or a composite of the innermost `max_depth` labels joined by `|`. A `B`
//! tag is emitted at every label change (IOB2): flattening destroys span
//! identity for partially covered outer entities, so maximal runs are the
//! only deterministic segmentation.

use crate::model::{
    canonicalize_label, AnnNode, AnnotatedUtterance, BioSequence, BioTag, Child, NodeKind, Span,
};

/// Tags each token with its innermost enclosing entity label. ACTION and IER
/// nodes are transparent: their tokens are O unless inside an entity.
pub fn encode_innermost(utt: &AnnotatedUtterance) -> BioSequence {
    let labels = token_label_stacks(utt)
        .into_iter()
        .map(|stack| stack.last().cloned())
        .collect::<Vec<_>>();
    runs_to_bio(&labels)
}

/// Tags each token with the composite of its enclosing entity labels,
/// outermost to innermost, truncated to the innermost `max_depth` labels.
/// With `max_depth == 1` this equals [`encode_innermost`].
pub fn encode_nested(utt: &AnnotatedUtterance, max_depth: usize) -> BioSequence {
    assert!(max_depth >= 1, "max_depth must be at least 1");
    let labels = token_label_stacks(utt)
        .into_iter()
        .map(|stack| {
            if stack.is_empty() {
                None
            } else {
                let keep = stack.len().saturating_sub(max_depth);
                Some(stack[keep..].join("|"))
            }
        })
        .collect::<Vec<_>>();
    runs_to_bio(&labels)
}

/// Per token, the stack of enclosing entity label names, outermost first.
fn token_label_stacks(utt: &AnnotatedUtterance) -> Vec<Vec<String>> {
    let mut stacks = vec![Vec::new(); utt.tokens.len()];
    if let Some(root) = &utt.root {
        let mut current = Vec::new();
        walk(root, &mut current, &mut stacks);
    }
    stacks
}

fn walk(node: &AnnNode, current: &mut Vec<String>, out: &mut Vec<Vec<String>>) {
    let pushed = if let NodeKind::Entity(label) = node.kind {
        current.push(label.name().to_string());
        true
    } else {
        false
    };
    for child in &node.children {
        match child {
            Child::Word(tok) => {
                if tok.index < out.len() {
                    out[tok.index] = current.clone();
                }
            }
            Child::Node(n) => walk(n, current, out),
        }
    }
    if pushed {
        current.pop();
    }
}

/// IOB2 over maximal runs: B wherever the label differs from the previous
/// position, I inside a run, O for unlabeled tokens.
fn runs_to_bio(labels: &[Option<String>]) -> BioSequence {
    let mut tags = Vec::with_capacity(labels.len());
    for (i, label) in labels.iter().enumerate() {
        match label {
            None => tags.push(BioTag::O),
            Some(l) => {
                let continues = i > 0 && labels[i - 1].as_deref() == Some(l.as_str());
                tags.push(if continues {
                    BioTag::inside(l.clone())
                } else {
                    BioTag::begin(l.clone())
                });
            }
        }
    }
    tags
}

/// Decodes a tag sequence into flat spans. Total on any input: an illegal I
/// (at the start, after O, or after a different label) is repaired to B and
/// opens a new span. Composite labels decode to their innermost label; spans
/// whose innermost label is not a known entity label are dropped.
pub fn decode(bio: &BioSequence) -> Vec<Span> {
    let mut spans = Vec::new();
    let mut open: Option<(String, usize)> = None;
    for (i, tag) in bio.iter().enumerate() {
        match tag {
            BioTag::O => {
                close(&mut open, i, &mut spans);
            }
            BioTag::B(label) => {
                close(&mut open, i, &mut spans);
                open = Some((label.clone(), i));
            }
            BioTag::I(label) => match &open {
                Some((l, _)) if l == label => {}
                _ => {
                    // repair: treat as B
                    close(&mut open, i, &mut spans);
                    open = Some((label.clone(), i));
                }
            },
        }
    }
    close(&mut open, bio.len(), &mut spans);
    spans
}

fn close(open: &mut Option<(String, usize)>, end: usize, spans: &mut Vec<Span>) {
    if let Some((label, start)) = open.take() {
        let innermost = label.rsplit('|').next().unwrap_or(&label);
        if let Ok(entity) = canonicalize_label(innermost) {
            spans.push(Span::new(entity, start, end));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annot::parse_line;
    use crate::model::EntityLabel;

    fn tag_strings(tags: &BioSequence) -> Vec<String> {
        tags.iter().map(|t| t.to_string()).collect()
    }

    #[test]
    fn crop_example_innermost() {
        let utt = parse_line("[IER : [ACTION-CROP : crop ] [LOCATION : the image ] ]").unwrap();
        assert_eq!(
            tag_strings(&encode_innermost(&utt)),
            ["O", "B-LOCATION", "I-LOCATION"]
        );
    }

    #[test]
    fn warmer_hue_innermost() {
        let utt = parse_line("[IER : [ACTION-ADD : add ] a [ATTRIBUTE : [VALUE : warmer ] hue ] ]")
            .unwrap();
        assert_eq!(
            tag_strings(&encode_innermost(&utt)),
            ["O", "O", "B-VALUE", "B-ATTRIBUTE"]
        );
    }

    #[test]
    fn action_only_utterance_is_all_o() {
        let utt = parse_line("[IER : [ACTION-ROTATE : rotate ] it ]").unwrap();
        assert_eq!(tag_strings(&encode_innermost(&utt)), ["O", "O"]);
    }

    #[test]
    fn warmer_hue_nested() {
        let utt = parse_line("[IER : [ACTION-ADD : add ] a [ATTRIBUTE : [VALUE : warmer ] hue ] ]")
            .unwrap();
        assert_eq!(
            tag_strings(&encode_nested(&utt, 2)),
            ["O", "O", "B-ATTRIBUTE|VALUE", "B-ATTRIBUTE"]
        );
        // depth 1 degenerates to innermost
        assert_eq!(encode_nested(&utt, 1), encode_innermost(&utt));
    }

    #[test]
    fn nested_truncates_to_innermost_depth() {
        let utt =
            parse_line("[IER : [ACTION-ADD : add ] [ATTRIBUTE : [VALUE : [OBJECT : x ] y ] z ] ]")
                .unwrap();
        let tags = tag_strings(&encode_nested(&utt, 2));
        assert_eq!(
            tags,
            ["O", "B-VALUE|OBJECT", "B-ATTRIBUTE|VALUE", "B-ATTRIBUTE"]
        );
        let full = tag_strings(&encode_nested(&utt, 3));
        assert_eq!(full[1], "B-ATTRIBUTE|VALUE|OBJECT");
    }

    #[test]
    fn decode_basic_and_repair() {
        let bio = vec![
            BioTag::O,
            BioTag::begin("LOCATION"),
            BioTag::inside("LOCATION"),
        ];
        assert_eq!(decode(&bio), vec![Span::new(EntityLabel::Location, 1, 3)]);

        let bio = vec![BioTag::inside("OBJECT"), BioTag::O];
        assert_eq!(decode(&bio), vec![Span::new(EntityLabel::Object, 0, 1)]);

        assert!(decode(&vec![BioTag::O, BioTag::O]).is_empty());

        // I after a different label opens a new span
        let bio = vec![BioTag::begin("OBJECT"), BioTag::inside("LOCATION")];
        assert_eq!(
            decode(&bio),
            vec![
                Span::new(EntityLabel::Object, 0, 1),
                Span::new(EntityLabel::Location, 1, 2)
            ]
        );

        // adjacent B tags are separate spans
        let bio = vec![BioTag::begin("OBJECT"), BioTag::begin("OBJECT")];
        assert_eq!(
            decode(&bio),
            vec![
                Span::new(EntityLabel::Object, 0, 1),
                Span::new(EntityLabel::Object, 1, 2)
            ]
        );
    }

    #[test]
    fn decode_composite_uses_innermost() {
        let bio = vec![BioTag::begin("ATTRIBUTE|VALUE"), BioTag::begin("ATTRIBUTE")];
        assert_eq!(
            decode(&bio),
            vec![
                Span::new(EntityLabel::Value, 0, 1),
                Span::new(EntityLabel::Attribute, 1, 2)
            ]
        );
    }

    #[test]
    fn flat_round_trip_matches_tree_spans() {
        let utt = parse_line(
            "[IER : [ACTION-ADJUST : increase ] [ATTRIBUTE : brightness ] [VALUE : slightly ] [LOCATION : the left side ] ]",
        )
        .unwrap();
        let decoded = decode(&encode_innermost(&utt));
        assert_eq!(decoded, utt.entity_spans());
    }

    #[test]
    fn encode_length_always_matches_tokens() {
        for line in [
            "plain words only",
            "[IER : [ACTION-CROP : crop ] [LOCATION : the image ] ]",
            "before [IER : [ACTION-ZOOM : zoom ] [OBJECT : the zebra ] ] after",
        ] {
            let utt = parse_line(line).unwrap();
            assert_eq!(encode_innermost(&utt).len(), utt.tokens.len());
            assert_eq!(encode_nested(&utt, 2).len(), utt.tokens.len());
        }
    }
}
