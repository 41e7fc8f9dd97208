//! End-to-end orchestration: preprocessing and splits, two-level training,
//! evaluation, and raw-text prediction into an executable edit command.
//!
//! Splits follow fixed ratios per mode (action: 75/25 train/test; entity:
//! 80/10/10 train/dev/test) over a seeded shuffle of the filtered corpus.
//! Split sizes floor the fractions and give the remainder to train, so
//! sizes are deterministic for any corpus size.

use std::sync::atomic::{AtomicU64, Ordering};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::action::{predict_action, train_action, ActionError, ActionModel, ActionTrainConfig};
use crate::annot::{filter_executable, Corpus, FilterCounts};
use crate::bio::{decode, encode_innermost, encode_nested};
use crate::crf::{predict_tags, train_crf, CrfError, CrfExample, CrfModel, CrfTrainConfig};
use crate::eval::{classification_report, span_f1, EvalError, Metrics};
use crate::features::{tokenize, EmbeddingTable, UtteranceFeaturizer};
use crate::model::{ActionType, AnnotatedUtterance, BioSequence, EntityLabel};

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("no utterances left after the executable-action filter")]
    EmptyAfterFilter,
    #[error("input text has no tokens")]
    EmptyInput,
    #[error(transparent)]
    Action(#[from] ActionError),
    #[error(transparent)]
    Crf(#[from] CrfError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

/// Which of the two split layouts to produce.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitMode {
    /// 75% train / 25% test.
    Action,
    /// 80% train / 10% dev / 10% test.
    Entity,
}

#[derive(Debug, Clone, Copy)]
pub struct SplitSpec {
    pub mode: SplitMode,
    pub seed: u64,
}

/// Filtered, shuffled, sliced corpus. `dev` is empty in action mode.
#[derive(Debug, Clone)]
pub struct CorpusSplits {
    pub train: Vec<AnnotatedUtterance>,
    pub dev: Vec<AnnotatedUtterance>,
    pub test: Vec<AnnotatedUtterance>,
    pub filter: FilterCounts,
}

/// Applies the executable-action filter, shuffles with the split seed, and
/// slices by the mode's fractions.
pub fn preprocess(corpus: &Corpus, spec: &SplitSpec) -> Result<CorpusSplits, PipelineError> {
    let (filtered, filter) = filter_executable(corpus);
    if filtered.utterances.is_empty() {
        return Err(PipelineError::EmptyAfterFilter);
    }
    let mut utterances = filtered.utterances;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    utterances.shuffle(&mut rng);

    let n = utterances.len();
    let (dev_n, test_n) = match spec.mode {
        SplitMode::Action => (0, n / 4),
        SplitMode::Entity => (n / 10, n / 10),
    };
    let train_n = n - dev_n - test_n;
    let mut iter = utterances.into_iter();
    let train: Vec<_> = iter.by_ref().take(train_n).collect();
    let dev: Vec<_> = iter.by_ref().take(dev_n).collect();
    let test: Vec<_> = iter.collect();
    Ok(CorpusSplits {
        train,
        dev,
        test,
        filter,
    })
}

/// How entity annotations are flattened to tags.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BioMode {
    Innermost,
    Nested { max_depth: usize },
}

impl BioMode {
    pub fn encode(self, utt: &AnnotatedUtterance) -> BioSequence {
        match self {
            BioMode::Innermost => encode_innermost(utt),
            BioMode::Nested { max_depth } => encode_nested(utt, max_depth),
        }
    }
}

/// Knobs for a full two-level run.
#[derive(Debug, Clone)]
pub struct TwoLevelConfig {
    pub action: ActionTrainConfig,
    pub crf: CrfTrainConfig,
    pub bio: BioMode,
}

impl Default for TwoLevelConfig {
    fn default() -> TwoLevelConfig {
        TwoLevelConfig {
            action: ActionTrainConfig::default(),
            crf: CrfTrainConfig::default(),
            bio: BioMode::Innermost,
        }
    }
}

/// Trains the level-1 classifier on a training split.
pub fn train_action_level(
    train: &[AnnotatedUtterance],
    embeddings: Option<&EmbeddingTable>,
    cfg: &ActionTrainConfig,
) -> Result<ActionModel, PipelineError> {
    let word_lists: Vec<Vec<String>> = train.iter().map(AnnotatedUtterance::words).collect();
    let featurizer = UtteranceFeaturizer::fit(word_lists.iter().map(Vec::as_slice), embeddings);
    let data: Vec<_> = train
        .iter()
        .zip(&word_lists)
        .map(|(u, words)| {
            let action = u
                .action()
                .expect("preprocess keeps only actionable utterances");
            (featurizer.transform(words, embeddings), action)
        })
        .collect();
    let (model, _) = train_action(&data, featurizer, cfg)?;
    Ok(model)
}

fn crf_examples(split: &[AnnotatedUtterance], bio: BioMode) -> Vec<CrfExample> {
    split
        .iter()
        .map(|u| CrfExample {
            tokens: u.words(),
            tags: bio.encode(u),
            action: u.action(),
        })
        .collect()
}

/// Trains the level-2 tagger on a training split with gold actions.
pub fn train_entity_level(
    train: &[AnnotatedUtterance],
    bio: BioMode,
    cfg: &CrfTrainConfig,
) -> Result<CrfModel, PipelineError> {
    let (model, _) = train_crf(&crf_examples(train, bio), cfg)?;
    Ok(model)
}

/// Picks the CRF regularizer over a grid by span F1 on the dev split; ties
/// go to the smaller lambda. Returns the chosen lambda and its model.
pub fn tune_entity_l2(
    train: &[AnnotatedUtterance],
    dev: &[AnnotatedUtterance],
    bio: BioMode,
    base: &CrfTrainConfig,
    grid: &[f64],
) -> Result<(f64, CrfModel), PipelineError> {
    assert!(!grid.is_empty(), "grid must be non-empty");
    let mut best: Option<(f64, f64, CrfModel)> = None;
    for &l2 in grid {
        let cfg = CrfTrainConfig { l2, ..base.clone() };
        let model = train_entity_level(train, bio, &cfg)?;
        let report = evaluate_entities(&model, dev, bio, ActionSource::Gold)?;
        let score = report.span_metrics.micro.f1;
        let better = best.as_ref().is_none_or(|(s, _, _)| score > *s);
        if better {
            best = Some((score, l2, model));
        }
    }
    let (_, l2, model) = best.expect("grid is non-empty");
    Ok((l2, model))
}

/// Where the level-2 action feature comes from at evaluation time.
pub enum ActionSource<'a> {
    Gold,
    Predicted {
        model: &'a ActionModel,
        embeddings: Option<&'a EmbeddingTable>,
    },
}

/// Evaluates level 1 on a split: weighted/micro/macro F1, accuracy, and the
/// confusion matrix over the labels occurring in gold or predictions.
pub fn evaluate_action(
    model: &ActionModel,
    test: &[AnnotatedUtterance],
    embeddings: Option<&EmbeddingTable>,
) -> Result<Metrics, PipelineError> {
    let mut gold = Vec::with_capacity(test.len());
    let mut pred = Vec::with_capacity(test.len());
    for utt in test {
        let gold_action = utt
            .action()
            .expect("preprocess keeps only actionable utterances");
        let feats = model.featurizer().transform(&utt.words(), embeddings);
        let (pred_action, _) = predict_action(model, &feats);
        gold.push(gold_action.name().to_string());
        pred.push(pred_action.name().to_string());
    }
    let labels: Vec<String> = ActionType::ALL
        .iter()
        .map(|a| a.name().to_string())
        .filter(|name| gold.contains(name) || pred.contains(name))
        .collect();
    Ok(classification_report(&gold, &pred, &labels)?)
}

/// Token-level and span-level scores for level 2.
#[derive(Debug, Clone, Serialize)]
pub struct EntityEvalReport {
    pub token_metrics: Metrics,
    pub span_metrics: Metrics,
}

/// Evaluates level 2 on a split, feeding it either gold actions or level-1
/// predictions. Span scoring decodes both gold and predicted tag sequences,
/// so both sides live in the same flattened space.
pub fn evaluate_entities(
    model: &CrfModel,
    test: &[AnnotatedUtterance],
    bio: BioMode,
    action_source: ActionSource<'_>,
) -> Result<EntityEvalReport, PipelineError> {
    let mut gold_tags: Vec<String> = Vec::new();
    let mut pred_tags: Vec<String> = Vec::new();
    let mut gold_spans = Vec::with_capacity(test.len());
    let mut pred_spans = Vec::with_capacity(test.len());
    for utt in test {
        let words = utt.words();
        let action = match &action_source {
            ActionSource::Gold => utt.action(),
            ActionSource::Predicted {
                model: action_model,
                embeddings,
            } => {
                let feats = action_model.featurizer().transform(&words, *embeddings);
                Some(predict_action(action_model, &feats).0)
            }
        };
        let gold = bio.encode(utt);
        let pred = predict_tags(model, &words, action)?;
        gold_spans.push(decode(&gold));
        pred_spans.push(decode(&pred));
        gold_tags.extend(gold.iter().map(|t| t.to_string()));
        pred_tags.extend(pred.iter().map(|t| t.to_string()));
    }
    let mut labels: Vec<String> = gold_tags
        .iter()
        .chain(pred_tags.iter())
        .cloned()
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .collect();
    if let Some(pos) = labels.iter().position(|l| l == "O") {
        let o = labels.remove(pos);
        labels.insert(0, o);
    }
    Ok(EntityEvalReport {
        token_metrics: classification_report(&gold_tags, &pred_tags, &labels)?,
        span_metrics: span_f1(&gold_spans, &pred_spans)?,
    })
}

/// One extracted entity of an [`EditCommand`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EntityMention {
    pub label: EntityLabel,
    pub start: usize,
    pub end: usize,
    pub text: String,
}

/// The executable output form: the action, its confidence, and the tagged
/// entity spans. Entities never overlap and lie within the utterance.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EditCommand {
    pub id: String,
    pub action: ActionType,
    pub confidence: f64,
    pub entities: Vec<EntityMention>,
}

/// A request the gate refused to pass to level 2.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AmbiguousRequest {
    pub id: String,
    pub action: ActionType,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum PredictOutcome {
    Command(EditCommand),
    Ambiguous(AmbiguousRequest),
}

/// Two-level predictor over raw text with a confidence gate between the
/// levels: when the top action probability falls below `tau`, the request
/// is reported as ambiguous and level 2 never runs. `tau = 0` disables the
/// gate; `tau >= 1` rejects everything (a softmax over two or more classes
/// cannot strictly exceed it).
pub struct Predictor {
    pub action_model: ActionModel,
    pub crf_model: CrfModel,
    pub embeddings: Option<EmbeddingTable>,
    pub tau: f64,
    level2_calls: AtomicU64,
}

impl Predictor {
    pub fn new(
        action_model: ActionModel,
        crf_model: CrfModel,
        embeddings: Option<EmbeddingTable>,
        tau: f64,
    ) -> Predictor {
        Predictor {
            action_model,
            crf_model,
            embeddings,
            tau,
            level2_calls: AtomicU64::new(0),
        }
    }

    /// How many times level 2 actually ran.
    pub fn level2_invocations(&self) -> u64 {
        self.level2_calls.load(Ordering::Relaxed)
    }

    /// Tokenize, classify the action, gate on confidence, then tag entities
    /// with the predicted action and decode them into an edit command.
    pub fn predict(&self, id: &str, text: &str) -> Result<PredictOutcome, PipelineError> {
        let tokens = tokenize(text);
        if tokens.is_empty() {
            return Err(PipelineError::EmptyInput);
        }
        let words: Vec<String> = tokens.into_iter().map(|t| t.text).collect();
        let feats = self
            .action_model
            .featurizer()
            .transform(&words, self.embeddings.as_ref());
        let (action, probs) = predict_action(&self.action_model, &feats);
        let confidence = probs.iter().fold(0.0f64, |m, &p| m.max(p));
        if confidence < self.tau || self.tau >= 1.0 {
            return Ok(PredictOutcome::Ambiguous(AmbiguousRequest {
                id: id.to_string(),
                action,
                confidence,
            }));
        }
        self.level2_calls.fetch_add(1, Ordering::Relaxed);
        let tags = predict_tags(&self.crf_model, &words, Some(action))?;
        let entities = decode(&tags)
            .into_iter()
            .map(|span| EntityMention {
                label: span.label,
                start: span.start,
                end: span.end,
                text: words[span.start..span.end].join(" "),
            })
            .collect();
        Ok(PredictOutcome::Command(EditCommand {
            id: id.to_string(),
            action,
            confidence,
            entities,
        }))
    }
}

/// One-shot prediction without keeping a [`Predictor`] around. Clones the
/// models; batch callers should construct a `Predictor` once instead.
pub fn predict_ier(
    action_model: &ActionModel,
    crf_model: &CrfModel,
    embeddings: Option<&EmbeddingTable>,
    text: &str,
    tau: f64,
) -> Result<PredictOutcome, PipelineError> {
    Predictor::new(
        action_model.clone(),
        crf_model.clone(),
        embeddings.cloned(),
        tau,
    )
    .predict("", text)
}

impl EditCommand {
    pub fn to_json(&self) -> String {
        #[derive(Serialize)]
        struct Entity<'a> {
            label: &'a str,
            start: usize,
            end: usize,
            text: &'a str,
        }
        #[derive(Serialize)]
        struct Line<'a> {
            id: &'a str,
            action: &'a str,
            confidence: f64,
            entities: Vec<Entity<'a>>,
        }
        serde_json::to_string(&Line {
            id: &self.id,
            action: self.action.name(),
            confidence: self.confidence,
            entities: self
                .entities
                .iter()
                .map(|e| Entity {
                    label: e.label.name(),
                    start: e.start,
                    end: e.end,
                    text: &e.text,
                })
                .collect(),
        })
        .expect("command serialization cannot fail")
    }
}

impl AmbiguousRequest {
    pub fn to_json(&self) -> String {
        #[derive(Serialize)]
        struct Line<'a> {
            id: &'a str,
            ambiguous: bool,
            action: &'a str,
            confidence: f64,
        }
        serde_json::to_string(&Line {
            id: &self.id,
            ambiguous: true,
            action: self.action.name(),
            confidence: self.confidence,
        })
        .expect("command serialization cannot fail")
    }
}
