//! Level 2: a linear-chain CRF over BIO tags with exact inference and
//! L-BFGS training.
//!
//! The chain factorizes into per-position emission scores, adjacent-tag
//! transition scores, and start/stop scores. All inference runs in log
//! space with max-shifted log-sum-exp. Training minimizes the negative
//! conditional log-likelihood plus (lambda/2)||w||^2; the gradient is
//! expected feature counts from forward-backward marginals minus gold
//! counts plus lambda*w.
//!
//! The level-1 hand-off is realized as the `act=` / `act|w=` features of
//! [`crate::features::crf_token_features`]: training sees gold actions,
//! prediction sees whatever action the caller supplies (typically the
//! level-1 prediction). The conjunction is toggleable for ablation.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{crf_token_features, FeatureDict};
use crate::model::{ActionType, BioSequence, BioTag};
use crate::optim::{lbfgs_minimize, LbfgsConfig, OptTrace, OptimError};

#[derive(Debug, Error)]
pub enum CrfError {
    #[error("training corpus is empty")]
    EmptyCorpus,
    #[error("training sequence {0} has no tokens")]
    EmptySequence(usize),
    #[error("gold tag `{0}` is outside the tag set")]
    UnknownTag(String),
    #[error("cannot tag an empty token sequence")]
    EmptyInput,
    #[error(transparent)]
    Optim(#[from] OptimError),
    #[error("model file is not a CRF model: {0}")]
    BadModelFile(String),
    #[error("failed to read or write model: {0}")]
    Io(#[from] std::io::Error),
    #[error("failed to decode model JSON: {0}")]
    Json(#[from] serde_json::Error),
}

/// Ordered tag alphabet; `O` is always index 0, the rest sorted by name so
/// the set is stable regardless of data order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TagSet {
    tags: Vec<String>,
}

impl TagSet {
    pub fn from_observed<'a, I: IntoIterator<Item = &'a str>>(observed: I) -> TagSet {
        let mut rest: Vec<String> = observed
            .into_iter()
            .filter(|t| *t != "O")
            .map(str::to_string)
            .collect();
        rest.sort();
        rest.dedup();
        let mut tags = vec!["O".to_string()];
        tags.append(&mut rest);
        TagSet { tags }
    }

    pub fn tags(&self) -> &[String] {
        &self.tags
    }

    pub fn len(&self) -> usize {
        self.tags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tags.is_empty()
    }

    pub fn index_of(&self, tag: &str) -> Option<usize> {
        self.tags.iter().position(|t| t == tag)
    }
}

/// Concrete scores for one sequence: emissions are length x tags, the rest
/// indexed by tag.
#[derive(Debug, Clone)]
pub struct Potentials {
    pub num_tags: usize,
    /// Row-major, `emission[t * num_tags + y]`.
    pub emission: Vec<f64>,
    /// `transition[prev * num_tags + next]`.
    pub transition: Vec<f64>,
    pub start: Vec<f64>,
    pub stop: Vec<f64>,
}

impl Potentials {
    pub fn len(&self) -> usize {
        self.emission.len() / self.num_tags
    }

    pub fn is_empty(&self) -> bool {
        self.emission.is_empty()
    }

    fn emit(&self, t: usize, y: usize) -> f64 {
        self.emission[t * self.num_tags + y]
    }

    fn trans(&self, prev: usize, next: usize) -> f64 {
        self.transition[prev * self.num_tags + next]
    }

    /// Left-to-right accumulation of one path's score; Viterbi scores are
    /// built with the same association, so the two agree exactly.
    pub fn path_score(&self, path: &[usize]) -> f64 {
        let mut score = self.start[path[0]] + self.emit(0, path[0]);
        for t in 1..path.len() {
            score += self.trans(path[t - 1], path[t]);
            score += self.emit(t, path[t]);
        }
        score + self.stop[path[path.len() - 1]]
    }
}

fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    max + values.iter().map(|&v| (v - max).exp()).sum::<f64>().ln()
}

/// Log of the sum over all tag paths of the exponentiated path score,
/// by the forward recursion.
pub fn log_partition(p: &Potentials) -> f64 {
    assert!(!p.is_empty(), "potentials need at least one position");
    let alpha = forward(p);
    let last = &alpha[(p.len() - 1) * p.num_tags..];
    let final_scores: Vec<f64> = last.iter().zip(&p.stop).map(|(a, f)| a + f).collect();
    log_sum_exp(&final_scores)
}

/// Forward messages, `alpha[t * T + y]` = log-sum over prefixes ending in y
/// (inclusive of emission at t and the start score).
fn forward(p: &Potentials) -> Vec<f64> {
    let (len, t_count) = (p.len(), p.num_tags);
    let mut alpha = vec![0.0; len * t_count];
    for (y, slot) in alpha.iter_mut().take(t_count).enumerate() {
        *slot = p.start[y] + p.emit(0, y);
    }
    let mut scratch = vec![0.0; t_count];
    for t in 1..len {
        for y in 0..t_count {
            for (prev, slot) in scratch.iter_mut().enumerate() {
                *slot = alpha[(t - 1) * t_count + prev] + p.trans(prev, y);
            }
            alpha[t * t_count + y] = log_sum_exp(&scratch) + p.emit(t, y);
        }
    }
    alpha
}

/// Backward messages, `beta[t * T + y]` = log-sum over suffixes starting
/// after position t (exclusive of emission at t, inclusive of the stop
/// score).
fn backward(p: &Potentials) -> Vec<f64> {
    let (len, t_count) = (p.len(), p.num_tags);
    let mut beta = vec![0.0; len * t_count];
    beta[(len - 1) * t_count..].copy_from_slice(&p.stop);
    let mut scratch = vec![0.0; t_count];
    for t in (0..len - 1).rev() {
        for y in 0..t_count {
            for (next, slot) in scratch.iter_mut().enumerate() {
                *slot = p.trans(y, next) + p.emit(t + 1, next) + beta[(t + 1) * t_count + next];
            }
            beta[t * t_count + y] = log_sum_exp(&scratch);
        }
    }
    beta
}

/// Per-position tag marginals P(y_t = y); each row sums to 1 within 1e-9.
pub fn marginals(p: &Potentials) -> Vec<Vec<f64>> {
    let (len, t_count) = (p.len(), p.num_tags);
    let alpha = forward(p);
    let beta = backward(p);
    let log_z = log_partition(p);
    (0..len)
        .map(|t| {
            (0..t_count)
                .map(|y| (alpha[t * t_count + y] + beta[t * t_count + y] - log_z).exp())
                .collect()
        })
        .collect()
}

/// Maximum-score path and its score. Ties prefer the lower tag index at
/// every backtracking decision; the returned score equals
/// `p.path_score(&path)` exactly.
pub fn viterbi(p: &Potentials) -> (Vec<usize>, f64) {
    assert!(!p.is_empty(), "potentials need at least one position");
    let (len, t_count) = (p.len(), p.num_tags);
    let mut delta = vec![f64::NEG_INFINITY; len * t_count];
    let mut back = vec![0usize; len * t_count];
    for (y, slot) in delta.iter_mut().take(t_count).enumerate() {
        *slot = p.start[y] + p.emit(0, y);
    }
    for t in 1..len {
        for y in 0..t_count {
            let mut best_prev = 0usize;
            let mut best = delta[(t - 1) * t_count] + p.trans(0, y);
            for prev in 1..t_count {
                let cand = delta[(t - 1) * t_count + prev] + p.trans(prev, y);
                if cand > best {
                    best = cand;
                    best_prev = prev;
                }
            }
            delta[t * t_count + y] = best + p.emit(t, y);
            back[t * t_count + y] = best_prev;
        }
    }
    let mut best_tag = 0usize;
    let mut best_score = delta[(len - 1) * t_count] + p.stop[0];
    for y in 1..t_count {
        let cand = delta[(len - 1) * t_count + y] + p.stop[y];
        if cand > best_score {
            best_score = cand;
            best_tag = y;
        }
    }
    let mut path = vec![0usize; len];
    path[len - 1] = best_tag;
    for t in (1..len).rev() {
        path[t - 1] = back[t * t_count + path[t]];
    }
    (path, best_score)
}

/// One training sequence: tokens, gold tags, and (optionally) the gold
/// action feeding the level-1 hand-off features.
#[derive(Debug, Clone)]
pub struct CrfExample {
    pub tokens: Vec<String>,
    pub tags: BioSequence,
    pub action: Option<ActionType>,
}

#[derive(Debug, Clone)]
pub struct CrfTrainConfig {
    /// L2 regularization strength.
    pub l2: f64,
    pub optimizer: LbfgsConfig,
    /// Emit `act=` / `act|w=` features from the provided actions.
    pub use_action_feature: bool,
}

impl Default for CrfTrainConfig {
    fn default() -> CrfTrainConfig {
        CrfTrainConfig {
            l2: 1.0,
            optimizer: LbfgsConfig::default(),
            use_action_feature: true,
        }
    }
}

/// A trained tagger. Weight layout: F*T emission weights (feature-major),
/// then T*T transitions, then T start and T stop scores.
#[derive(Debug, Clone, PartialEq)]
pub struct CrfModel {
    tags: TagSet,
    dict: FeatureDict,
    use_action_feature: bool,
    l2: f64,
    weights: Vec<f64>,
}

/// Feature ids per position for one sequence.
type SeqFeatures = Vec<Vec<usize>>;

impl CrfModel {
    pub fn tag_set(&self) -> &TagSet {
        &self.tags
    }

    pub fn dict(&self) -> &FeatureDict {
        &self.dict
    }

    pub fn use_action_feature(&self) -> bool {
        self.use_action_feature
    }

    pub fn l2(&self) -> f64 {
        self.l2
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    fn extract(&self, tokens: &[String], action: Option<ActionType>) -> SeqFeatures {
        let action = if self.use_action_feature {
            action
        } else {
            None
        };
        (0..tokens.len())
            .map(|i| {
                crf_token_features(tokens, i, action)
                    .iter()
                    .filter_map(|f| self.dict.lookup(f))
                    .collect()
            })
            .collect()
    }

    /// Builds potentials for a featurized sequence from the weight vector.
    pub fn potentials(&self, feats: &SeqFeatures) -> Potentials {
        build_potentials(&self.weights, feats, self.tags.len(), self.dict.len())
    }
}

fn build_potentials(
    weights: &[f64],
    feats: &SeqFeatures,
    num_tags: usize,
    num_features: usize,
) -> Potentials {
    let layout = Layout {
        num_tags,
        num_features,
    };
    let mut emission = vec![0.0; feats.len() * num_tags];
    for (t, ids) in feats.iter().enumerate() {
        let row = &mut emission[t * num_tags..(t + 1) * num_tags];
        for &f in ids {
            let base = layout.emission(f, 0);
            for (y, slot) in row.iter_mut().enumerate() {
                *slot += weights[base + y];
            }
        }
    }
    Potentials {
        num_tags,
        emission,
        transition: weights[layout.transition(0, 0)..layout.start(0)].to_vec(),
        start: weights[layout.start(0)..layout.stop(0)].to_vec(),
        stop: weights[layout.stop(0)..layout.total()].to_vec(),
    }
}

#[derive(Clone, Copy)]
struct Layout {
    num_tags: usize,
    num_features: usize,
}

impl Layout {
    fn emission(&self, f: usize, y: usize) -> usize {
        f * self.num_tags + y
    }

    fn transition(&self, prev: usize, next: usize) -> usize {
        self.num_features * self.num_tags + prev * self.num_tags + next
    }

    fn start(&self, y: usize) -> usize {
        self.num_features * self.num_tags + self.num_tags * self.num_tags + y
    }

    fn stop(&self, y: usize) -> usize {
        self.start(0) + self.num_tags + y
    }

    fn total(&self) -> usize {
        self.num_features * self.num_tags + self.num_tags * self.num_tags + 2 * self.num_tags
    }
}

/// Regularized NLL and gradient over a featurized batch. Exposed for the
/// finite-difference checks; [`train_crf`] drives it through L-BFGS.
pub fn nll_and_grad(
    weights: &[f64],
    batch: &[(SeqFeatures, Vec<usize>)],
    num_tags: usize,
    num_features: usize,
    l2: f64,
) -> (f64, Vec<f64>) {
    let layout = Layout {
        num_tags,
        num_features,
    };
    debug_assert_eq!(weights.len(), layout.total());
    let mut value = 0.0;
    let mut grad = vec![0.0; weights.len()];

    for (feats, gold) in batch {
        let p = build_potentials(weights, feats, num_tags, num_features);
        let len = p.len();
        let alpha = forward(&p);
        let beta = backward(&p);
        let log_z = {
            let last = &alpha[(len - 1) * num_tags..];
            let final_scores: Vec<f64> = last.iter().zip(&p.stop).map(|(a, f)| a + f).collect();
            log_sum_exp(&final_scores)
        };
        value += log_z - p.path_score(gold);

        // expected counts
        for t in 0..len {
            for y in 0..num_tags {
                let mu = (alpha[t * num_tags + y] + beta[t * num_tags + y] - log_z).exp();
                for &f in &feats[t] {
                    grad[layout.emission(f, y)] += mu;
                }
                if t == 0 {
                    grad[layout.start(y)] += mu;
                }
                if t == len - 1 {
                    grad[layout.stop(y)] += mu;
                }
            }
        }
        for t in 0..len.saturating_sub(1) {
            for prev in 0..num_tags {
                let a = alpha[t * num_tags + prev];
                for next in 0..num_tags {
                    let log_nu = a
                        + p.trans(prev, next)
                        + p.emit(t + 1, next)
                        + beta[(t + 1) * num_tags + next]
                        - log_z;
                    grad[layout.transition(prev, next)] += log_nu.exp();
                }
            }
        }

        // gold counts
        for (t, &y) in gold.iter().enumerate() {
            for &f in &feats[t] {
                grad[layout.emission(f, y)] -= 1.0;
            }
        }
        grad[layout.start(gold[0])] -= 1.0;
        grad[layout.stop(gold[len - 1])] -= 1.0;
        for t in 1..len {
            grad[layout.transition(gold[t - 1], gold[t])] -= 1.0;
        }
    }

    for (g, w) in grad.iter_mut().zip(weights) {
        value += 0.5 * l2 * w * w;
        *g += l2 * w;
    }
    (value, grad)
}

/// Trains a tagger from scratch: tag set and feature dictionary come from
/// the data, weights start at zero, so training is deterministic for fixed
/// data order and config.
pub fn train_crf(
    data: &[CrfExample],
    cfg: &CrfTrainConfig,
) -> Result<(CrfModel, OptTrace), CrfError> {
    if data.is_empty() {
        return Err(CrfError::EmptyCorpus);
    }
    for (i, ex) in data.iter().enumerate() {
        if ex.tokens.is_empty() {
            return Err(CrfError::EmptySequence(i));
        }
        debug_assert_eq!(
            ex.tokens.len(),
            ex.tags.len(),
            "tags must align with tokens"
        );
    }

    let tag_strings: Vec<String> = data
        .iter()
        .flat_map(|ex| ex.tags.iter().map(BioTag::to_string))
        .collect();
    let tags = TagSet::from_observed(tag_strings.iter().map(String::as_str));

    let mut dict = FeatureDict::new();
    let mut batch: Vec<(SeqFeatures, Vec<usize>)> = Vec::with_capacity(data.len());
    for ex in data {
        let action = if cfg.use_action_feature {
            ex.action
        } else {
            None
        };
        let feats: SeqFeatures = (0..ex.tokens.len())
            .map(|i| {
                crf_token_features(&ex.tokens, i, action)
                    .iter()
                    .map(|f| dict.intern(f))
                    .collect()
            })
            .collect();
        let gold = ex
            .tags
            .iter()
            .map(|t| {
                let s = t.to_string();
                tags.index_of(&s).ok_or(CrfError::UnknownTag(s))
            })
            .collect::<Result<Vec<usize>, _>>()?;
        batch.push((feats, gold));
    }

    let layout = Layout {
        num_tags: tags.len(),
        num_features: dict.len(),
    };
    let x0 = vec![0.0; layout.total()];
    let outcome = lbfgs_minimize(
        |w| nll_and_grad(w, &batch, tags.len(), dict.len(), cfg.l2),
        &x0,
        &cfg.optimizer,
    )?;

    Ok((
        CrfModel {
            tags,
            dict,
            use_action_feature: cfg.use_action_feature,
            l2: cfg.l2,
            weights: outcome.x,
        },
        outcome.trace,
    ))
}

/// Viterbi-decodes the tag sequence for raw tokens; output length equals
/// token count and uses only tags seen in training.
pub fn predict_tags(
    model: &CrfModel,
    tokens: &[String],
    action: Option<ActionType>,
) -> Result<BioSequence, CrfError> {
    if tokens.is_empty() {
        return Err(CrfError::EmptyInput);
    }
    let feats = model.extract(tokens, action);
    let p = model.potentials(&feats);
    let (path, _) = viterbi(&p);
    Ok(path
        .into_iter()
        .map(|y| BioTag::parse(&model.tags.tags()[y]).expect("tag set holds well-formed tags"))
        .collect())
}

#[derive(Serialize, Deserialize)]
struct CrfModelFile {
    format: String,
    version: u32,
    tags: Vec<String>,
    features: Vec<String>,
    use_action_feature: bool,
    l2: f64,
    weights: Vec<String>,
}

impl CrfModel {
    /// JSON snapshot with weights as decimal strings; exact round trip.
    pub fn to_json(&self) -> String {
        let file = CrfModelFile {
            format: "IER-CRF".to_string(),
            version: 1,
            tags: self.tags.tags().to_vec(),
            features: self.dict.names().to_vec(),
            use_action_feature: self.use_action_feature,
            l2: self.l2,
            weights: self.weights.iter().map(f64::to_string).collect(),
        };
        serde_json::to_string_pretty(&file).expect("model serialization cannot fail")
    }

    pub fn from_json(text: &str) -> Result<CrfModel, CrfError> {
        let file: CrfModelFile = serde_json::from_str(text)?;
        if file.format != "IER-CRF" || file.version != 1 {
            return Err(CrfError::BadModelFile(format!(
                "expected IER-CRF v1, found {} v{}",
                file.format, file.version
            )));
        }
        let weights = file
            .weights
            .iter()
            .map(|w| {
                w.parse::<f64>()
                    .map_err(|_| CrfError::BadModelFile(format!("bad weight `{w}`")))
            })
            .collect::<Result<Vec<f64>, _>>()?;
        let tags = TagSet { tags: file.tags };
        if tags.is_empty() || tags.tags()[0] != "O" {
            return Err(CrfError::BadModelFile("tag set must start with O".into()));
        }
        let dict = FeatureDict::from(file.features);
        let layout = Layout {
            num_tags: tags.len(),
            num_features: dict.len(),
        };
        if weights.len() != layout.total() {
            return Err(CrfError::BadModelFile(
                "weight vector length mismatch".into(),
            ));
        }
        Ok(CrfModel {
            tags,
            dict,
            use_action_feature: file.use_action_feature,
            l2: file.l2,
            weights,
        })
    }

    pub fn save(&self, path: &std::path::Path) -> Result<(), CrfError> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<CrfModel, CrfError> {
        CrfModel::from_json(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optim::grad_check;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn zero_potentials(len: usize, num_tags: usize) -> Potentials {
        Potentials {
            num_tags,
            emission: vec![0.0; len * num_tags],
            transition: vec![0.0; num_tags * num_tags],
            start: vec![0.0; num_tags],
            stop: vec![0.0; num_tags],
        }
    }

    fn random_potentials(rng: &mut StdRng, len: usize, num_tags: usize) -> Potentials {
        let mut p = zero_potentials(len, num_tags);
        for v in p
            .emission
            .iter_mut()
            .chain(p.transition.iter_mut())
            .chain(p.start.iter_mut())
            .chain(p.stop.iter_mut())
        {
            *v = rng.gen_range(-2.0..2.0);
        }
        p
    }

    /// Brute-force oracle: enumerate all num_tags^len paths.
    fn enumerate_paths(len: usize, num_tags: usize) -> Vec<Vec<usize>> {
        let mut paths = vec![vec![]];
        for _ in 0..len {
            let mut next = Vec::with_capacity(paths.len() * num_tags);
            for p in &paths {
                for y in 0..num_tags {
                    let mut q = p.clone();
                    q.push(y);
                    next.push(q);
                }
            }
            paths = next;
        }
        paths
    }

    fn brute_force_log_z(p: &Potentials) -> f64 {
        let scores: Vec<f64> = enumerate_paths(p.len(), p.num_tags)
            .iter()
            .map(|path| p.path_score(path))
            .collect();
        log_sum_exp(&scores)
    }

    /// Enumeration argmax with the same tie-break as Viterbi backtracking:
    /// among equal scores prefer the path whose reversed tag tuple is
    /// lexicographically smaller.
    fn brute_force_viterbi(p: &Potentials) -> (Vec<usize>, f64) {
        let mut best: Option<(Vec<usize>, f64)> = None;
        for path in enumerate_paths(p.len(), p.num_tags) {
            let score = p.path_score(&path);
            let better = match &best {
                None => true,
                Some((bp, bs)) => {
                    score > *bs || (score == *bs && path.iter().rev().lt(bp.iter().rev()))
                }
            };
            if better {
                best = Some((path, score));
            }
        }
        best.unwrap()
    }

    #[test]
    fn log_partition_one_position_two_tags_all_zero() {
        let p = zero_potentials(1, 2);
        assert!((log_partition(&p) - 2.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn log_partition_factorizes_with_emissions_only() {
        let mut rng = StdRng::seed_from_u64(11);
        let mut p = zero_potentials(4, 3);
        for v in p.emission.iter_mut() {
            *v = rng.gen_range(-1.0..1.0);
        }
        let expected: f64 = (0..4)
            .map(|t| log_sum_exp(&p.emission[t * 3..(t + 1) * 3]))
            .sum();
        assert!((log_partition(&p) - expected).abs() < 1e-10);
    }

    #[test]
    fn log_partition_matches_enumeration() {
        let mut rng = StdRng::seed_from_u64(13);
        let p = random_potentials(&mut rng, 5, 4);
        assert!((log_partition(&p) - brute_force_log_z(&p)).abs() <= 1e-8);
    }

    #[test]
    fn viterbi_all_zero_prefers_lowest_indices() {
        let p = zero_potentials(3, 2);
        let (path, score) = viterbi(&p);
        assert_eq!(path, vec![0, 0, 0]);
        assert_eq!(score, 0.0);
    }

    #[test]
    fn viterbi_emissions_only_is_positionwise_argmax() {
        let mut p = zero_potentials(3, 3);
        p.emission = vec![0.0, 2.0, 1.0, 3.0, 0.0, -1.0, 0.0, 0.0, 5.0];
        let (path, score) = viterbi(&p);
        assert_eq!(path, vec![1, 0, 2]);
        assert_eq!(score, 10.0);
        assert_eq!(score, p.path_score(&path));
    }

    #[test]
    fn viterbi_matches_enumeration() {
        let mut rng = StdRng::seed_from_u64(17);
        for _ in 0..20 {
            let len = rng.gen_range(1..=6);
            let num_tags = rng.gen_range(2..=3);
            let p = random_potentials(&mut rng, len, num_tags);
            let (path, score) = viterbi(&p);
            let (opath, oscore) = brute_force_viterbi(&p);
            assert_eq!(path, opath);
            assert!((score - oscore).abs() <= 1e-9);
            assert_eq!(score, p.path_score(&path));
        }
    }

    #[test]
    fn marginals_sum_to_one() {
        let mut rng = StdRng::seed_from_u64(19);
        let p = random_potentials(&mut rng, 6, 4);
        for row in marginals(&p) {
            let sum: f64 = row.iter().sum();
            assert!((sum - 1.0).abs() <= 1e-9);
            for m in row {
                assert!((-1e-12..=1.0 + 1e-12).contains(&m));
            }
        }
    }

    #[test]
    fn path_probabilities_normalize() {
        let mut rng = StdRng::seed_from_u64(23);
        let p = random_potentials(&mut rng, 4, 3);
        let log_z = log_partition(&p);
        let total: f64 = enumerate_paths(4, 3)
            .iter()
            .map(|path| (p.path_score(path) - log_z).exp())
            .sum();
        assert!((total - 1.0).abs() <= 1e-8);
    }

    fn toy_batch(
        rng: &mut StdRng,
        seqs: usize,
        num_features: usize,
        num_tags: usize,
    ) -> Vec<(Vec<Vec<usize>>, Vec<usize>)> {
        (0..seqs)
            .map(|_| {
                let len = rng.gen_range(1..=5);
                let feats = (0..len)
                    .map(|_| {
                        (0..num_features)
                            .filter(|_| rng.gen_bool(0.5))
                            .collect::<Vec<usize>>()
                    })
                    .collect();
                let gold = (0..len).map(|_| rng.gen_range(0..num_tags)).collect();
                (feats, gold)
            })
            .collect()
    }

    #[test]
    fn zero_weight_nll_is_length_times_log_tags() {
        let num_tags = 3;
        let num_features = 4;
        let batch = vec![(
            vec![vec![0, 2], vec![1], vec![3], vec![0]],
            vec![0, 1, 2, 0],
        )];
        let layout_len = num_features * num_tags + num_tags * num_tags + 2 * num_tags;
        let (value, _) = nll_and_grad(&vec![0.0; layout_len], &batch, num_tags, num_features, 0.0);
        assert!((value - 4.0 * (num_tags as f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = StdRng::seed_from_u64(29);
        for _ in 0..5 {
            let num_tags = rng.gen_range(2..=3);
            let num_features = rng.gen_range(2..=4);
            let batch = toy_batch(&mut rng, 3, num_features, num_tags);
            let layout_len = num_features * num_tags + num_tags * num_tags + 2 * num_tags;
            let x: Vec<f64> = (0..layout_len).map(|_| rng.gen_range(-0.5..0.5)).collect();
            let err = grad_check(
                |w| nll_and_grad(w, &batch, num_tags, num_features, 0.3),
                &x,
                1e-5,
            );
            assert!(err <= 1e-4, "max relative error {err}");
        }
    }

    #[test]
    fn regularizer_adds_the_expected_terms() {
        let mut rng = StdRng::seed_from_u64(31);
        let num_tags = 2;
        let num_features = 3;
        let batch = toy_batch(&mut rng, 2, num_features, num_tags);
        let layout_len = num_features * num_tags + num_tags * num_tags + 2 * num_tags;
        let x: Vec<f64> = (0..layout_len).map(|_| rng.gen_range(-0.5..0.5)).collect();
        let lambda = 0.7;
        let (v0, g0) = nll_and_grad(&x, &batch, num_tags, num_features, 0.0);
        let (v1, g1) = nll_and_grad(&x, &batch, num_tags, num_features, lambda);
        let sq: f64 = x.iter().map(|w| w * w).sum();
        assert!((v1 - v0 - 0.5 * lambda * sq).abs() < 1e-10);
        for ((a, b), w) in g0.iter().zip(&g1).zip(&x) {
            assert!((b - a - lambda * w).abs() < 1e-10);
        }
    }

    fn toy_grammar() -> Vec<CrfExample> {
        // each word carries exactly one tag
        let ex = |words: &[&str], tags: &[&str], action: ActionType| CrfExample {
            tokens: words.iter().map(|w| w.to_string()).collect(),
            tags: tags.iter().map(|t| BioTag::parse(t).unwrap()).collect(),
            action: Some(action),
        };
        vec![
            ex(
                &["crop", "the", "image"],
                &["O", "B-LOCATION", "I-LOCATION"],
                ActionType::Crop,
            ),
            ex(
                &["crop", "the", "photo"],
                &["O", "B-LOCATION", "I-LOCATION"],
                ActionType::Crop,
            ),
            ex(
                &["delete", "his", "dog"],
                &["O", "B-OBJECT", "I-OBJECT"],
                ActionType::Delete,
            ),
            ex(
                &["delete", "his", "cat"],
                &["O", "B-OBJECT", "I-OBJECT"],
                ActionType::Delete,
            ),
            ex(&["rotate", "it"], &["O", "O"], ActionType::Rotate),
        ]
    }

    #[test]
    fn toy_grammar_reaches_full_token_accuracy() {
        let data = toy_grammar();
        let (model, trace) = train_crf(&data, &CrfTrainConfig::default()).unwrap();
        for rec in &trace.iterations {
            assert!(rec.value <= rec.prev_value + 1e-12, "NLL increased");
        }
        for ex in &data {
            let pred = predict_tags(&model, &ex.tokens, ex.action).unwrap();
            assert_eq!(pred, ex.tags, "tokens {:?}", ex.tokens);
        }
        let pred = predict_tags(
            &model,
            &["crop", "the", "image"].map(str::to_string),
            Some(ActionType::Crop),
        )
        .unwrap();
        assert_eq!(
            pred.iter().map(BioTag::to_string).collect::<Vec<_>>(),
            ["O", "B-LOCATION", "I-LOCATION"]
        );
    }

    #[test]
    fn training_is_bitwise_deterministic() {
        let data = toy_grammar();
        let (m1, _) = train_crf(&data, &CrfTrainConfig::default()).unwrap();
        let (m2, _) = train_crf(&data, &CrfTrainConfig::default()).unwrap();
        assert_eq!(m1.weights, m2.weights);
        assert_eq!(m1.to_json(), m2.to_json());
    }

    #[test]
    fn prediction_is_pure_and_closed_over_the_tag_set() {
        let (model, _) = train_crf(&toy_grammar(), &CrfTrainConfig::default()).unwrap();
        let tokens: Vec<String> = ["unseen", "words", "entirely"].map(str::to_string).into();
        let a = predict_tags(&model, &tokens, None).unwrap();
        let b = predict_tags(&model, &tokens, None).unwrap();
        assert_eq!(a, b);
        for tag in &a {
            assert!(model.tag_set().index_of(&tag.to_string()).is_some());
        }
    }

    #[test]
    fn empty_inputs_are_errors() {
        assert!(matches!(
            train_crf(&[], &CrfTrainConfig::default()),
            Err(CrfError::EmptyCorpus)
        ));
        let (model, _) = train_crf(&toy_grammar(), &CrfTrainConfig::default()).unwrap();
        assert!(matches!(
            predict_tags(&model, &[], None),
            Err(CrfError::EmptyInput)
        ));
    }

    #[test]
    fn tag_set_is_closed_over_training_data() {
        // train_crf builds the tag set from its own data, so UnknownTag is
        // unreachable through it; the set stays closed to unseen tags
        let data = toy_grammar();
        let (model, _) = train_crf(&data, &CrfTrainConfig::default()).unwrap();
        assert!(model.tag_set().index_of("B-INTENT").is_none());
        assert!(model.tag_set().index_of("B-LOCATION").is_some());
    }

    #[test]
    fn json_round_trip_is_exact() {
        let (model, _) = train_crf(&toy_grammar(), &CrfTrainConfig::default()).unwrap();
        let loaded = CrfModel::from_json(&model.to_json()).unwrap();
        assert_eq!(model, loaded);
    }

    #[test]
    fn tag_set_is_stable_and_contains_o() {
        let tags = TagSet::from_observed(["B-X", "O", "B-A", "I-A", "B-X"]);
        assert_eq!(tags.tags(), &["O", "B-A", "B-X", "I-A"]);
        let same = TagSet::from_observed(["I-A", "B-X", "B-A"]);
        assert_eq!(tags.tags(), same.tags());
    }
}
