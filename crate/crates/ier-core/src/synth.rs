//! Seeded grammar-based generator of annotated utterances whose
//! distributional profile follows the corpus statistics the models are
//! meant to face: a heavily skewed action distribution, per-entity
//! inclusion rates, occasional nesting, and a small share of entity-less
//! requests.
//!
//! Generation is deterministic for a fixed (config, n, seed): every
//! utterance draws from its own ChaCha8 stream derived from the seed and
//! the utterance index, so corpora can also be produced in parallel or
//! resumed mid-way without changing the output.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::annot::{Corpus, Provenance};
use crate::model::{ActionType, AnnNode, AnnotatedUtterance, Child, EntityLabel, NodeKind, Token};

/// Distribution targets and the mode switch for [`generate`].
#[derive(Debug, Clone)]
pub struct SynthConfig {
    /// Probability of each action, indexed like [`ActionType::ALL`];
    /// sums to 1 within 1e-9.
    pub action_probs: Vec<f64>,
    /// Fraction of utterances containing at least one entity of each type.
    pub attribute_rate: f64,
    pub value_rate: f64,
    pub object_rate: f64,
    pub location_rate: f64,
    pub intent_rate: f64,
    /// Probability that an included attribute carries a nested value
    /// (`a warmer hue` style).
    pub nesting_rate: f64,
    /// Fraction of utterances with no entities at all.
    pub no_entity_rate: f64,
    /// Fraction of plain comment lines without an IER.
    pub comment_rate: f64,
    /// Share verbs across actions (zoom for both ZOOM and CROP, cut for
    /// both CROP and DELETE) so classifiers cannot reach 100%.
    pub hard_mode: bool,
}

impl Default for SynthConfig {
    fn default() -> SynthConfig {
        let mut action_probs = vec![0.20 / 14.0; 18];
        action_probs[ActionType::Adjust.ordinal()] = 0.44;
        action_probs[ActionType::Crop.ordinal()] = 0.12;
        action_probs[ActionType::Add.ordinal()] = 0.12;
        action_probs[ActionType::Delete.ordinal()] = 0.12;
        SynthConfig {
            action_probs,
            attribute_rate: 0.56,
            value_rate: 0.32,
            object_rate: 0.30,
            location_rate: 0.60,
            intent_rate: 0.29,
            nesting_rate: 0.04,
            no_entity_rate: 0.03,
            comment_rate: 0.0,
            hard_mode: false,
        }
    }
}

impl SynthConfig {
    /// Default distributions with shared verbs enabled.
    pub fn hard() -> SynthConfig {
        SynthConfig {
            hard_mode: true,
            ..SynthConfig::default()
        }
    }

    fn validate(&self) {
        assert_eq!(self.action_probs.len(), 18, "one probability per action");
        let sum: f64 = self.action_probs.iter().sum();
        assert!(
            (sum - 1.0).abs() <= 1e-9,
            "action probabilities sum to {sum}"
        );
        for &p in self.action_probs.iter().chain([
            &self.attribute_rate,
            &self.value_rate,
            &self.object_rate,
            &self.location_rate,
            &self.intent_rate,
            &self.nesting_rate,
            &self.no_entity_rate,
            &self.comment_rate,
        ]) {
            assert!((0.0..=1.0).contains(&p), "probability {p} outside [0, 1]");
        }
    }
}

/// Action pairs that share verbs in hard mode; classifier confusion is
/// expected to land on these.
pub fn shared_action_pairs() -> [(ActionType, ActionType); 2] {
    [
        (ActionType::Zoom, ActionType::Crop),
        (ActionType::Crop, ActionType::Delete),
    ]
}

const FRAMES: &[&[&str]] = &[
    &[],
    &[],
    &[],
    &["please"],
    &["could", "you"],
    &["can", "you"],
    &["would", "you"],
    &["kindly"],
];

fn verbs(action: ActionType, hard: bool) -> &'static [&'static str] {
    match (action, hard) {
        (ActionType::Adjust, _) => &[
            "increase", "decrease", "brighten", "darken", "adjust", "soften", "sharpen", "boost",
        ],
        (ActionType::Delete, false) => &["delete", "remove", "erase"],
        (ActionType::Delete, true) => &["delete", "remove", "erase", "cut"],
        (ActionType::Crop, false) => &["crop", "trim", "clip"],
        (ActionType::Crop, true) => &["crop", "trim", "clip", "zoom", "cut"],
        (ActionType::Add, _) => &["add", "insert", "include"],
        (ActionType::Replace, _) => &["replace", "substitute"],
        (ActionType::Apply, _) => &["apply", "use", "run"],
        (ActionType::Zoom, _) => &["zoom", "magnify"],
        (ActionType::Rotate, _) => &["rotate", "turn", "tilt"],
        (ActionType::Transform, _) => &["resize", "stretch", "flip"],
        (ActionType::Move, _) => &["move", "shift", "drag"],
        (ActionType::Clone, _) => &["clone", "duplicate", "copy"],
        (ActionType::Select, _) => &["select", "highlight", "isolate"],
        (ActionType::Swap, _) => &["swap", "switch"],
        (ActionType::Undo, _) => &["undo", "revert"],
        (ActionType::Merge, _) => &["merge", "combine"],
        (ActionType::Redo, _) => &["redo", "repeat"],
        (ActionType::Other, _) => &["fix", "retouch"],
        (ActionType::Scroll, _) => &["scroll", "pan"],
    }
}

const ATTRIBUTES: &[&str] = &[
    "brightness",
    "contrast",
    "saturation",
    "sharpness",
    "exposure",
    "warmth",
    "tint",
    "clarity",
    "vibrance",
    "hue",
];
const COMPARATIVES: &[&str] = &["warmer", "cooler", "brighter", "darker", "softer", "bolder"];
const VALUES: &[&[&str]] = &[
    &["slightly"],
    &["significantly"],
    &["a", "bit"],
    &["a", "lot"],
    &["completely"],
    &["somewhat"],
    &["by", "half"],
    &["a", "touch"],
];
const OBJECTS: &[&[&str]] = &[
    &["the", "dog"],
    &["the", "cat"],
    &["the", "sky"],
    &["the", "tree"],
    &["the", "car"],
    &["the", "bird"],
    &["his", "face"],
    &["her", "hat"],
    &["the", "building"],
    &["the", "mountain"],
];
const LOCATIONS: &[&[&str]] = &[
    &["the", "image"],
    &["the", "background"],
    &["the", "foreground"],
    &["the", "left", "side"],
    &["the", "right", "side"],
    &["the", "top", "corner"],
    &["the", "bottom", "edge"],
    &["the", "center"],
    &["the", "photo"],
    &["the", "picture"],
];
const INTENTS: &[&[&str]] = &[
    &["so", "it", "looks", "natural"],
    &["to", "make", "it", "pop"],
    &["for", "a", "cleaner", "look"],
    &["so", "it", "stands", "out"],
    &["to", "match", "the", "mood"],
    &["so", "it", "feels", "right"],
];
const FILLERS: &[&str] = &["this", "that", "everything"];
const COMMENTS: &[&[&str]] = &[
    &["nice", "photo"],
    &["love", "this", "picture"],
    &["great", "shot", "overall"],
    &["this", "one", "is", "my", "favorite"],
    &["what", "a", "lovely", "view"],
];

fn pick<'a, T: ?Sized>(rng: &mut ChaCha8Rng, items: &'a [&'a T]) -> &'a T {
    items[rng.gen_range(0..items.len())]
}

/// Generates `n` annotated utterances. Byte-identical output for identical
/// (cfg, n, seed); ids are `s1..sN` in order.
pub fn generate(cfg: &SynthConfig, n: usize, seed: u64) -> Corpus {
    cfg.validate();
    let utterances = (0..n)
        .map(|i| generate_one(cfg, seed, i))
        .collect::<Vec<_>>();
    Corpus {
        provenance: Provenance {
            source: "synth".to_string(),
            format: "generator".to_string(),
            utterances: utterances.len(),
            errors: 0,
            seed: Some(seed),
            rng: Some("chacha8".to_string()),
        },
        utterances,
    }
}

struct Assembler {
    tokens: Vec<Token>,
    children: Vec<Child>,
}

impl Assembler {
    fn new() -> Assembler {
        Assembler {
            tokens: Vec::new(),
            children: Vec::new(),
        }
    }

    fn word(&mut self, text: &str) -> Child {
        let tok = Token::new(text, self.tokens.len());
        self.tokens.push(tok.clone());
        Child::Word(tok)
    }

    fn plain(&mut self, text: &str) {
        let child = self.word(text);
        self.children.push(child);
    }

    fn entity(&mut self, label: EntityLabel, words: &[&str]) {
        let children = words.iter().map(|w| self.word(w)).collect();
        self.children
            .push(Child::Node(AnnNode::new(NodeKind::Entity(label), children)));
    }
}

fn generate_one(cfg: &SynthConfig, seed: u64, index: usize) -> AnnotatedUtterance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1 + index as u64);
    let id = format!("s{}", index + 1);

    if rng.gen::<f64>() < cfg.comment_rate {
        let words = pick(&mut rng, COMMENTS);
        let tokens = words
            .iter()
            .enumerate()
            .map(|(i, w)| Token::new(*w, i))
            .collect();
        return AnnotatedUtterance {
            id,
            tokens,
            root: None,
        };
    }

    // action draw from the cumulative distribution
    let mut u = rng.gen::<f64>();
    let mut action = *ActionType::ALL.last().expect("non-empty");
    for (a, &p) in ActionType::ALL.iter().zip(&cfg.action_probs) {
        if u < p {
            action = *a;
            break;
        }
        u -= p;
    }

    // entity inclusion; rates conditioned on the no-entity gate so that the
    // measured per-type rates match the configured ones
    let branch = 1.0 - cfg.no_entity_rate;
    let cond = |r: f64| {
        if branch > 0.0 {
            (r / branch).min(1.0)
        } else {
            0.0
        }
    };
    let (mut attr, mut obj, mut loc, mut intent, mut nested, mut value) =
        (false, false, false, false, false, false);
    if rng.gen::<f64>() >= cfg.no_entity_rate {
        attr = rng.gen::<f64>() < cond(cfg.attribute_rate);
        nested = attr && rng.gen::<f64>() < cfg.nesting_rate;
        // a nested value already counts toward the value rate
        let p_nested = cond(cfg.attribute_rate) * cfg.nesting_rate;
        let flat_rate = if p_nested < 1.0 {
            ((cond(cfg.value_rate) - p_nested) / (1.0 - p_nested)).clamp(0.0, 1.0)
        } else {
            0.0
        };
        value = !nested && rng.gen::<f64>() < flat_rate;
        obj = rng.gen::<f64>() < cond(cfg.object_rate);
        loc = rng.gen::<f64>() < cond(cfg.location_rate);
        intent = rng.gen::<f64>() < cond(cfg.intent_rate);
    }

    let mut asm = Assembler::new();
    for w in pick(&mut rng, FRAMES) {
        asm.plain(w);
    }
    let verb = pick(&mut rng, verbs(action, cfg.hard_mode));
    let verb_child = asm.word(verb);
    asm.children.push(Child::Node(AnnNode::new(
        NodeKind::Action(action),
        vec![verb_child],
    )));

    if attr {
        if nested {
            asm.plain("a");
            let comparative = pick(&mut rng, COMPARATIVES);
            let noun = pick(&mut rng, ATTRIBUTES);
            let inner_word = asm.word(comparative);
            let inner = AnnNode::new(NodeKind::Entity(EntityLabel::Value), vec![inner_word]);
            let noun_word = asm.word(noun);
            asm.children.push(Child::Node(AnnNode::new(
                NodeKind::Entity(EntityLabel::Attribute),
                vec![Child::Node(inner), noun_word],
            )));
        } else {
            asm.plain("the");
            let noun = pick(&mut rng, ATTRIBUTES);
            asm.entity(EntityLabel::Attribute, &[noun]);
        }
    }
    if obj {
        if attr {
            asm.plain("of");
        }
        let phrase = pick(&mut rng, OBJECTS);
        asm.entity(EntityLabel::Object, phrase);
    }
    if value {
        let phrase = pick(&mut rng, VALUES);
        asm.entity(EntityLabel::Value, phrase);
    }
    if loc {
        let bare_ok = !attr
            && !obj
            && matches!(
                action,
                ActionType::Crop | ActionType::Zoom | ActionType::Select | ActionType::Scroll
            );
        if !bare_ok {
            asm.plain(if rng.gen::<f64>() < 0.5 { "in" } else { "on" });
        }
        let phrase = pick(&mut rng, LOCATIONS);
        asm.entity(EntityLabel::Location, phrase);
    }
    if intent {
        let phrase = pick(&mut rng, INTENTS);
        asm.entity(EntityLabel::Intent, phrase);
    }
    if !attr && !obj && !value && !loc && !intent && rng.gen::<f64>() < 0.5 {
        let filler = pick(&mut rng, FILLERS);
        asm.plain(filler);
    }

    let root = AnnNode::new(NodeKind::Ier, asm.children);
    AnnotatedUtterance {
        id,
        tokens: asm.tokens,
        root: Some(root),
    }
}
