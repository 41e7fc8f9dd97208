//! Tokenization, word-vector loading, pooled utterance features for the
//! action classifier and token feature templates for the CRF.

use std::collections::HashMap;
use std::io::BufRead;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{ActionType, Token};

const SPLIT_PUNCT: &[char] = &['.', ',', '!', '?', ';', ':', '"', '\'', '(', ')'];

/// Lowercases, splits on whitespace, and splits leading/trailing punctuation
/// characters (`.,!?;:"'()`) into their own tokens. Internal punctuation
/// (as in `don't`) is kept.
pub fn tokenize(text: &str) -> Vec<Token> {
    let lowered = text.to_lowercase();
    let mut words: Vec<String> = Vec::new();
    for chunk in lowered.split_whitespace() {
        let mut core = chunk;
        let mut leading: Vec<String> = Vec::new();
        while let Some(ch) = core.chars().next() {
            if SPLIT_PUNCT.contains(&ch) {
                leading.push(ch.to_string());
                core = &core[ch.len_utf8()..];
            } else {
                break;
            }
        }
        let mut trailing: Vec<String> = Vec::new();
        while let Some(ch) = core.chars().next_back() {
            if SPLIT_PUNCT.contains(&ch) {
                trailing.push(ch.to_string());
                core = &core[..core.len() - ch.len_utf8()];
            } else {
                break;
            }
        }
        words.extend(leading);
        if !core.is_empty() {
            words.push(core.to_string());
        }
        words.extend(trailing.into_iter().rev());
    }
    words
        .into_iter()
        .enumerate()
        .map(|(i, w)| Token::new(w, i))
        .collect()
}

/// Word-embedding table in the plain text format `word v1 v2 ... vD`, one
/// entry per line. Lookups of absent words yield the zero vector.
#[derive(Debug, Clone)]
pub struct EmbeddingTable {
    dim: usize,
    vectors: HashMap<String, Vec<f64>>,
    zero: Vec<f64>,
}

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("failed to read input: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: expected {expected} values, found {found}")]
    DimensionMismatch {
        line: usize,
        expected: usize,
        found: usize,
    },
    #[error("line {line}: `{value}` is not a number")]
    Malformed { line: usize, value: String },
    #[error("empty embedding file")]
    Empty,
}

impl EmbeddingTable {
    /// Loads a table from text; the first line fixes the dimension and
    /// duplicate words keep their first occurrence.
    pub fn load<R: BufRead>(reader: R) -> Result<EmbeddingTable, EmbedError> {
        let mut dim = None;
        let mut vectors = HashMap::new();
        for (idx, line) in reader.lines().enumerate() {
            let lineno = idx + 1;
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let mut parts = line.split_whitespace();
            let word = parts.next().expect("non-empty line has a first field");
            let values = parts
                .map(|v| {
                    v.parse::<f64>()
                        .ok()
                        .filter(|x| x.is_finite())
                        .ok_or_else(|| EmbedError::Malformed {
                            line: lineno,
                            value: v.to_string(),
                        })
                })
                .collect::<Result<Vec<f64>, _>>()?;
            let expected = *dim.get_or_insert(values.len());
            if values.len() != expected || expected == 0 {
                return Err(EmbedError::DimensionMismatch {
                    line: lineno,
                    expected,
                    found: values.len(),
                });
            }
            vectors.entry(word.to_string()).or_insert(values);
        }
        let dim = dim.ok_or(EmbedError::Empty)?;
        Ok(EmbeddingTable {
            dim,
            vectors,
            zero: vec![0.0; dim],
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    /// The word's vector, or the zero vector for out-of-vocabulary words.
    pub fn lookup(&self, word: &str) -> &[f64] {
        self.vectors
            .get(word)
            .map(Vec::as_slice)
            .unwrap_or(&self.zero)
    }
}

/// Loads a word-vector table; see [`EmbeddingTable::load`].
pub fn load_word_vectors<R: BufRead>(reader: R) -> Result<EmbeddingTable, EmbedError> {
    EmbeddingTable::load(reader)
}

/// Arithmetic mean of the token vectors; OOV tokens contribute zero vectors
/// and an empty token list yields the zero vector.
pub fn embed_mean(tokens: &[Token], table: &EmbeddingTable) -> Vec<f64> {
    let mut mean = vec![0.0; table.dim()];
    if tokens.is_empty() {
        return mean;
    }
    for tok in tokens {
        for (m, v) in mean.iter_mut().zip(table.lookup(&tok.text)) {
            *m += v;
        }
    }
    let n = tokens.len() as f64;
    for m in &mut mean {
        *m /= n;
    }
    mean
}

/// Interning dictionary mapping feature strings to dense ids. Built on the
/// training set and frozen; unseen strings simply miss at lookup time.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct FeatureDict {
    names: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

impl FeatureDict {
    pub fn new() -> FeatureDict {
        FeatureDict::default()
    }

    pub fn intern(&mut self, name: &str) -> usize {
        if let Some(&id) = self.index.get(name) {
            return id;
        }
        let id = self.names.len();
        self.names.push(name.to_string());
        self.index.insert(name.to_string(), id);
        id
    }

    pub fn lookup(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }
}

impl From<Vec<String>> for FeatureDict {
    fn from(names: Vec<String>) -> FeatureDict {
        let index = names
            .iter()
            .enumerate()
            .map(|(i, n)| (n.clone(), i))
            .collect();
        FeatureDict { names, index }
    }
}

impl From<FeatureDict> for Vec<String> {
    fn from(dict: FeatureDict) -> Vec<String> {
        dict.names
    }
}

/// Sparse feature vector: (feature id, weight) pairs sorted by id.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FeatureVector {
    pub pairs: Vec<(usize, f64)>,
}

impl FeatureVector {
    pub fn new(mut pairs: Vec<(usize, f64)>) -> FeatureVector {
        pairs.sort_unstable_by_key(|(id, _)| *id);
        FeatureVector { pairs }
    }
}

/// Utterance-level featurizer for the action classifier: mean word embedding
/// (when a table is supplied) concatenated with binary bag-of-words
/// indicators over the training vocabulary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtteranceFeaturizer {
    pub dict: FeatureDict,
    pub embed_dim: usize,
}

impl UtteranceFeaturizer {
    /// Builds the feature dictionary from training utterances.
    pub fn fit<'a, I>(train_words: I, table: Option<&EmbeddingTable>) -> UtteranceFeaturizer
    where
        I: IntoIterator<Item = &'a [String]>,
    {
        let mut dict = FeatureDict::new();
        let embed_dim = table.map(EmbeddingTable::dim).unwrap_or(0);
        for i in 0..embed_dim {
            dict.intern(&format!("emb:{i}"));
        }
        for words in train_words {
            for w in words {
                dict.intern(&format!("bow:{w}"));
            }
        }
        UtteranceFeaturizer { dict, embed_dim }
    }

    /// Featurizes one utterance. `table` must have dimension `embed_dim`
    /// when the featurizer was fit with embeddings; passing `None` leaves
    /// the embedding block at zero.
    pub fn transform(&self, words: &[String], table: Option<&EmbeddingTable>) -> FeatureVector {
        let mut pairs: Vec<(usize, f64)> = Vec::new();
        if let (Some(table), true) = (table, self.embed_dim > 0) {
            assert_eq!(
                table.dim(),
                self.embed_dim,
                "embedding table dimension mismatch"
            );
            let tokens: Vec<Token> = words
                .iter()
                .enumerate()
                .map(|(i, w)| Token::new(w.clone(), i))
                .collect();
            let mean = embed_mean(&tokens, table);
            for (i, v) in mean.into_iter().enumerate() {
                if v != 0.0 {
                    pairs.push((i, v));
                }
            }
        }
        let mut seen = std::collections::HashSet::new();
        for w in words {
            if let Some(id) = self.dict.lookup(&format!("bow:{w}")) {
                if seen.insert(id) {
                    pairs.push((id, 1.0));
                }
            }
        }
        FeatureVector::new(pairs)
    }
}

/// Coarse character shape of a token.
fn shape(token: &str) -> &'static str {
    let mut any_alpha = false;
    let mut any_digit = false;
    let mut any_other = false;
    for ch in token.chars() {
        if ch.is_alphabetic() {
            any_alpha = true;
        } else if ch.is_numeric() {
            any_digit = true;
        } else {
            any_other = true;
        }
    }
    match (any_alpha, any_digit, any_other) {
        (true, false, false) => "alpha",
        (false, true, false) => "num",
        (false, false, true) => "punct",
        _ => "mixed",
    }
}

fn affix(token: &str, len: usize, from_start: bool) -> String {
    let chars: Vec<char> = token.chars().collect();
    let k = len.min(chars.len());
    if from_start {
        chars[..k].iter().collect()
    } else {
        chars[chars.len() - k..].iter().collect()
    }
}

/// Token feature templates for the CRF: bias, the token, its neighbors,
/// 1-3 character affixes, shape, position, and (when known) the utterance's
/// action plus an action/word conjunction. Deterministic, duplicate-free.
pub fn crf_token_features(words: &[String], i: usize, action: Option<ActionType>) -> Vec<String> {
    assert!(i < words.len(), "position out of bounds");
    let w = &words[i];
    let mut feats = Vec::with_capacity(14);
    feats.push("bias".to_string());
    feats.push(format!("w={w}"));
    feats.push(format!(
        "w-1={}",
        if i == 0 { "BOS" } else { &words[i - 1] }
    ));
    feats.push(format!(
        "w+1={}",
        if i + 1 == words.len() {
            "EOS"
        } else {
            &words[i + 1]
        }
    ));
    for k in 1..=3 {
        feats.push(format!("pre{k}={}", affix(w, k, true)));
        feats.push(format!("suf{k}={}", affix(w, k, false)));
    }
    feats.push(format!("shape={}", shape(w)));
    let pos = if i == 0 {
        "first"
    } else if i + 1 == words.len() {
        "last"
    } else {
        "mid"
    };
    feats.push(format!("pos={pos}"));
    if let Some(a) = action {
        feats.push(format!("act={}", a.name()));
        feats.push(format!("act|w={}|{w}", a.name()));
    }
    feats.dedup();
    feats
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    fn words(text: &str) -> Vec<String> {
        tokenize(text).into_iter().map(|t| t.text).collect()
    }

    #[test]
    fn tokenize_splits_edge_punctuation() {
        assert_eq!(words("Crop the image."), ["crop", "the", "image", "."]);
        assert_eq!(words(""), Vec::<String>::new());
        assert_eq!(words("don't crop!"), ["don't", "crop", "!"]);
        assert_eq!(
            words("\"(hello),\" she said"),
            ["\"", "(", "hello", ")", ",", "\"", "she", "said"]
        );
    }

    #[test]
    fn tokenize_idempotent_on_own_output() {
        for text in ["Crop the image.", "don't crop!", "a?! b,, (c)"] {
            let once = words(text);
            let again = words(&once.join(" "));
            assert_eq!(once, again);
        }
    }

    #[test]
    fn embeddings_load_and_lookup() {
        let table = EmbeddingTable::load(Cursor::new("the 0.1 0.2 0.3\ncat 1 0 -1")).unwrap();
        assert_eq!(table.dim(), 3);
        assert_eq!(table.len(), 2);
        assert_eq!(table.lookup("the"), &[0.1, 0.2, 0.3]);
        assert_eq!(table.lookup("absent"), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn embeddings_reject_ragged_lines() {
        let err = EmbeddingTable::load(Cursor::new("the 0.1 0.2\ncat 1 0 -1")).unwrap_err();
        assert!(matches!(
            err,
            EmbedError::DimensionMismatch {
                line: 2,
                expected: 2,
                found: 3
            }
        ));
        let err = EmbeddingTable::load(Cursor::new("the 0.1 x")).unwrap_err();
        assert!(matches!(err, EmbedError::Malformed { line: 1, .. }));
        // vectors must be finite reals
        let err = EmbeddingTable::load(Cursor::new("the 0.1 inf")).unwrap_err();
        assert!(matches!(err, EmbedError::Malformed { line: 1, .. }));
        let err = EmbeddingTable::load(Cursor::new("the NaN 1.0")).unwrap_err();
        assert!(matches!(err, EmbedError::Malformed { line: 1, .. }));
    }

    #[test]
    fn embeddings_keep_first_duplicate() {
        let table = EmbeddingTable::load(Cursor::new("a 1 2\na 3 4")).unwrap();
        assert_eq!(table.lookup("a"), &[1.0, 2.0]);
    }

    #[test]
    fn mean_pooling() {
        let table =
            EmbeddingTable::load(Cursor::new("the 0.1 0.2 0.3\na 1 0 -1\nb 0 0 1")).unwrap();
        let toks = |ws: &[&str]| -> Vec<Token> {
            ws.iter()
                .enumerate()
                .map(|(i, w)| Token::new(*w, i))
                .collect()
        };
        assert_eq!(embed_mean(&toks(&["the"]), &table), vec![0.1, 0.2, 0.3]);
        assert_eq!(embed_mean(&toks(&["a", "b"]), &table), vec![0.5, 0.0, 0.0]);
        assert_eq!(
            embed_mean(&toks(&["oov", "oov2"]), &table),
            vec![0.0, 0.0, 0.0]
        );
        assert_eq!(embed_mean(&[], &table), vec![0.0, 0.0, 0.0]);
    }

    #[test]
    fn crf_features_match_templates() {
        let w = vec!["crop".to_string(), "the".to_string(), "image".to_string()];
        let feats = crf_token_features(&w, 1, Some(ActionType::Crop));
        for expect in [
            "w=the",
            "w-1=crop",
            "w+1=image",
            "act=CROP",
            "act|w=CROP|the",
            "shape=alpha",
            "pos=mid",
        ] {
            assert!(feats.iter().any(|f| f == expect), "missing {expect}");
        }
        let first = crf_token_features(&w, 0, None);
        assert!(first.iter().any(|f| f == "w-1=BOS"));
        assert!(first.iter().any(|f| f == "pos=first"));
        assert!(!first.iter().any(|f| f.starts_with("act")));
        let last = crf_token_features(&w, 2, None);
        assert!(last.iter().any(|f| f == "w+1=EOS"));
        assert!(last.iter().any(|f| f == "pos=last"));
    }

    #[test]
    fn crf_features_no_duplicates_and_deterministic() {
        let w = vec![
            "a".to_string(),
            "12".to_string(),
            "!".to_string(),
            "a1!".to_string(),
        ];
        for i in 0..w.len() {
            let feats = crf_token_features(&w, i, Some(ActionType::Adjust));
            let set: std::collections::HashSet<_> = feats.iter().collect();
            assert_eq!(set.len(), feats.len());
            assert_eq!(feats, crf_token_features(&w, i, Some(ActionType::Adjust)));
        }
        assert!(crf_token_features(&w, 1, None)
            .iter()
            .any(|f| f == "shape=num"));
        assert!(crf_token_features(&w, 2, None)
            .iter()
            .any(|f| f == "shape=punct"));
        assert!(crf_token_features(&w, 3, None)
            .iter()
            .any(|f| f == "shape=mixed"));
    }

    #[test]
    fn featurizer_uses_training_vocabulary_only() {
        let train: Vec<Vec<String>> = vec![words("crop the image"), words("delete the dog")];
        let refs: Vec<&[String]> = train.iter().map(|v| v.as_slice()).collect();
        let fz = UtteranceFeaturizer::fit(refs.iter().copied(), None);
        let fv = fz.transform(&words("crop the zebra"), None);
        // "zebra" unseen -> dropped; "crop" and "the" present once each
        assert_eq!(fv.pairs.len(), 2);
        assert!(fv.pairs.iter().all(|&(_, v)| v == 1.0));
    }
}
