//! Level 1: multinomial logistic regression over pooled utterance features,
//! mapping an utterance to one of the 18 actions.
//!
//! The objective is the softmax negative log-likelihood plus an L2 penalty
//! on everything except the bias column; it is convex, so training starts
//! from zero weights and is fully deterministic.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{FeatureDict, FeatureVector, UtteranceFeaturizer};
use crate::model::ActionType;
use crate::optim::{lbfgs_minimize, LbfgsConfig, OptTrace, OptimError};

#[derive(Debug, Error)]
pub enum ActionError {
    #[error("training data has fewer than two distinct labels")]
    DegenerateData,
    #[error(transparent)]
    Optim(#[from] OptimError),
    #[error("model file is not an action model: {0}")]
    BadModelFile(String),
    #[error("failed to read or write model: {0}")]
    Io(#[from] std::io::Error),
    #[error("failed to decode model JSON: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone)]
pub struct ActionTrainConfig {
    /// L2 regularization strength on the non-bias weights.
    pub l2: f64,
    pub optimizer: LbfgsConfig,
    /// Weight examples by inverse class frequency. Off by default: the
    /// corpus skew is part of the task.
    pub class_weighting: bool,
}

impl Default for ActionTrainConfig {
    fn default() -> ActionTrainConfig {
        ActionTrainConfig {
            l2: 1.0,
            optimizer: LbfgsConfig::default(),
            class_weighting: false,
        }
    }
}

/// A trained action classifier: label list, feature dictionary, and a
/// K x (F+1) weight matrix whose last column is the bias.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionModel {
    labels: Vec<ActionType>,
    featurizer: UtteranceFeaturizer,
    weights: Vec<f64>,
}

impl ActionModel {
    pub fn labels(&self) -> &[ActionType] {
        &self.labels
    }

    pub fn featurizer(&self) -> &UtteranceFeaturizer {
        &self.featurizer
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    fn num_features(&self) -> usize {
        self.featurizer.dict.len()
    }

    fn scores(&self, feats: &FeatureVector) -> Vec<f64> {
        let stride = self.num_features() + 1;
        let mut scores = Vec::with_capacity(self.labels.len());
        for k in 0..self.labels.len() {
            let row = &self.weights[k * stride..(k + 1) * stride];
            let mut s = row[self.num_features()]; // bias
            for &(f, v) in &feats.pairs {
                s += row[f] * v;
            }
            scores.push(s);
        }
        scores
    }
}

/// Softmax with max-shift; probabilities sum to 1 within 1e-9.
pub fn softmax(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().fold(f64::NEG_INFINITY, |m, &s| m.max(s));
    let exps: Vec<f64> = scores.iter().map(|&s| (s - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// The softmax NLL objective and its gradient, shared by training and the
/// gradient-check tests.
pub fn softmax_nll_and_grad(
    weights: &[f64],
    data: &[(FeatureVector, usize)],
    num_labels: usize,
    num_features: usize,
    l2: f64,
    example_weights: Option<&[f64]>,
) -> (f64, Vec<f64>) {
    let stride = num_features + 1;
    debug_assert_eq!(weights.len(), num_labels * stride);
    let mut value = 0.0;
    let mut grad = vec![0.0; weights.len()];
    for (idx, (feats, gold)) in data.iter().enumerate() {
        let w = example_weights.map_or(1.0, |ws| ws[idx]);
        let mut scores = Vec::with_capacity(num_labels);
        for k in 0..num_labels {
            let row = &weights[k * stride..(k + 1) * stride];
            let mut s = row[num_features];
            for &(f, v) in &feats.pairs {
                s += row[f] * v;
            }
            scores.push(s);
        }
        let max = scores.iter().fold(f64::NEG_INFINITY, |m, &s| m.max(s));
        let log_sum = max + scores.iter().map(|&s| (s - max).exp()).sum::<f64>().ln();
        value += w * (log_sum - scores[*gold]);
        for k in 0..num_labels {
            let p = (scores[k] - log_sum).exp();
            let coeff = w * (p - if k == *gold { 1.0 } else { 0.0 });
            let row = &mut grad[k * stride..(k + 1) * stride];
            for &(f, v) in &feats.pairs {
                row[f] += coeff * v;
            }
            row[num_features] += coeff;
        }
    }
    // bias column stays unregularized
    for k in 0..num_labels {
        for f in 0..num_features {
            let wkf = weights[k * stride + f];
            value += 0.5 * l2 * wkf * wkf;
            grad[k * stride + f] += l2 * wkf;
        }
    }
    (value, grad)
}

/// Trains the classifier. Labels are the actions present in the data, in
/// canonical action order; initialization is zero, so training is
/// deterministic for fixed data and config.
pub fn train_action(
    data: &[(FeatureVector, ActionType)],
    featurizer: UtteranceFeaturizer,
    cfg: &ActionTrainConfig,
) -> Result<(ActionModel, OptTrace), ActionError> {
    let mut labels: Vec<ActionType> = ActionType::ALL
        .iter()
        .copied()
        .filter(|a| data.iter().any(|(_, y)| y == a))
        .collect();
    labels.dedup();
    if labels.len() < 2 {
        return Err(ActionError::DegenerateData);
    }

    let label_index = |a: ActionType| {
        labels
            .iter()
            .position(|l| *l == a)
            .expect("label seen during scan")
    };
    let examples: Vec<(FeatureVector, usize)> = data
        .iter()
        .map(|(f, y)| (f.clone(), label_index(*y)))
        .collect();

    let example_weights = cfg.class_weighting.then(|| {
        let mut counts = vec![0usize; labels.len()];
        for (_, y) in &examples {
            counts[*y] += 1;
        }
        let n = examples.len() as f64;
        let k = labels.len() as f64;
        examples
            .iter()
            .map(|(_, y)| n / (k * counts[*y] as f64))
            .collect::<Vec<f64>>()
    });

    let num_features = featurizer.dict.len();
    let num_labels = labels.len();
    let x0 = vec![0.0; num_labels * (num_features + 1)];
    let outcome = lbfgs_minimize(
        |w| {
            softmax_nll_and_grad(
                w,
                &examples,
                num_labels,
                num_features,
                cfg.l2,
                example_weights.as_deref(),
            )
        },
        &x0,
        &cfg.optimizer,
    )?;

    Ok((
        ActionModel {
            labels,
            featurizer,
            weights: outcome.x,
        },
        outcome.trace,
    ))
}

/// Predicts the action and the full probability vector (ordered like
/// `model.labels()`); ties go to the earlier label.
pub fn predict_action(model: &ActionModel, feats: &FeatureVector) -> (ActionType, Vec<f64>) {
    let probs = softmax(&model.scores(feats));
    let mut best = 0;
    for (k, &p) in probs.iter().enumerate() {
        if p > probs[best] {
            best = k;
        }
    }
    (model.labels[best], probs)
}

#[derive(Serialize, Deserialize)]
struct ActionModelFile {
    format: String,
    version: u32,
    labels: Vec<String>,
    features: Vec<String>,
    embed_dim: usize,
    weights: Vec<String>,
}

impl ActionModel {
    /// JSON snapshot with weights as decimal strings; the shortest
    /// round-tripping representation, so save/load is exact.
    pub fn to_json(&self) -> String {
        let file = ActionModelFile {
            format: "IER-ACTION".to_string(),
            version: 1,
            labels: self.labels.iter().map(|a| a.name().to_string()).collect(),
            features: self.featurizer.dict.names().to_vec(),
            embed_dim: self.featurizer.embed_dim,
            weights: self.weights.iter().map(f64::to_string).collect(),
        };
        serde_json::to_string_pretty(&file).expect("model serialization cannot fail")
    }

    pub fn from_json(text: &str) -> Result<ActionModel, ActionError> {
        let file: ActionModelFile = serde_json::from_str(text)?;
        if file.format != "IER-ACTION" || file.version != 1 {
            return Err(ActionError::BadModelFile(format!(
                "expected IER-ACTION v1, found {} v{}",
                file.format, file.version
            )));
        }
        let labels = file
            .labels
            .iter()
            .map(|l| {
                ActionType::parse(l)
                    .ok_or_else(|| ActionError::BadModelFile(format!("unknown action `{l}`")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let weights = file
            .weights
            .iter()
            .map(|w| {
                w.parse::<f64>()
                    .map_err(|_| ActionError::BadModelFile(format!("bad weight `{w}`")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let dict = FeatureDict::from(file.features);
        if weights.len() != labels.len() * (dict.len() + 1) {
            return Err(ActionError::BadModelFile(
                "weight matrix shape mismatch".into(),
            ));
        }
        Ok(ActionModel {
            labels,
            featurizer: UtteranceFeaturizer {
                dict,
                embed_dim: file.embed_dim,
            },
            weights,
        })
    }

    pub fn save(&self, path: &std::path::Path) -> Result<(), ActionError> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<ActionModel, ActionError> {
        ActionModel::from_json(&std::fs::read_to_string(path)?)
    }
}
