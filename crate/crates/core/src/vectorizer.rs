//! Frequency-ranked vocabulary and fixed-length integer encoding.

use std::collections::HashMap;

use thiserror::Error;

pub const PAD: usize = 0;
pub const OOV: usize = 1;
pub const PAD_TOKEN: &str = "<PAD>";
pub const OOV_TOKEN: &str = "<OOV>";

pub const DEFAULT_MAX_TOKENS: usize = 75_000;
pub const DEFAULT_SEQUENCE_LENGTH: usize = 1024;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum VectorizerError {
    #[error("corpus contains no tokens")]
    EmptyCorpus,
    #[error("invalid vectorizer config: {0}")]
    InvalidConfig(String),
    #[error("vocabulary line {line}: {reason}")]
    BadVocabulary { line: usize, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VectorizerConfig {
    pub max_tokens: usize,
    pub ngram_order: usize,
    pub sequence_length: usize,
}

impl Default for VectorizerConfig {
    fn default() -> Self {
        Self {
            max_tokens: DEFAULT_MAX_TOKENS,
            ngram_order: 1,
            sequence_length: DEFAULT_SEQUENCE_LENGTH,
        }
    }
}

impl VectorizerConfig {
    pub fn validate(&self) -> Result<(), VectorizerError> {
        if self.max_tokens < 3 {
            return Err(VectorizerError::InvalidConfig(format!(
                "max_tokens must be >= 3, got {}",
                self.max_tokens
            )));
        }
        if self.ngram_order == 0 {
            return Err(VectorizerError::InvalidConfig("ngram_order must be >= 1".into()));
        }
        if self.sequence_length == 0 {
            return Err(VectorizerError::InvalidConfig("sequence_length must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index_of: HashMap<String, usize>,
}

impl Vocabulary {
    /// Builds a vocabulary from ranked corpus tokens (reserved slots are
    /// prepended).
    fn from_ranked(ranked: impl IntoIterator<Item = String>) -> Self {
        let mut tokens = vec![PAD_TOKEN.to_string(), OOV_TOKEN.to_string()];
        tokens.extend(ranked);
        let index_of = tokens.iter().enumerate().skip(2).map(|(i, t)| (t.clone(), i)).collect();
        Self { tokens, index_of }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() <= 2
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn index_of(&self, token: &str) -> Option<usize> {
        self.index_of.get(token).copied()
    }

    pub fn token(&self, index: usize) -> Option<&str> {
        self.tokens.get(index).map(String::as_str)
    }

    /// One token per line; line number is the index.
    pub fn to_lines(&self) -> String {
        let mut s = String::new();
        for t in &self.tokens {
            s.push_str(t);
            s.push('\n');
        }
        s
    }

    pub fn from_lines(text: &str) -> Result<Self, VectorizerError> {
        let lines: Vec<&str> = text.lines().collect();
        if lines.len() < 2 || lines[0] != PAD_TOKEN || lines[1] != OOV_TOKEN {
            return Err(VectorizerError::BadVocabulary {
                line: 0,
                reason: "first two lines must be <PAD> and <OOV>".into(),
            });
        }
        let vocab = Self::from_ranked(lines[2..].iter().map(|s| s.to_string()));
        if vocab.index_of.len() != vocab.len() - 2 {
            return Err(VectorizerError::BadVocabulary {
                line: 0,
                reason: "duplicate token".into(),
            });
        }
        Ok(vocab)
    }
}

/// Unigrams of a text followed by its n-grams of increasing order.
fn features(text: &str, ngram_order: usize) -> Vec<String> {
    let words: Vec<&str> = text.split_whitespace().collect();
    let mut out: Vec<String> = words.iter().map(|w| w.to_string()).collect();
    for n in 2..=ngram_order {
        out.extend(words.windows(n).map(|w| w.join(" ")));
    }
    out
}

/// Counts tokens and n-grams over `corpus`, keeps the `max_tokens - 2` most
/// frequent (ties by first occurrence) after PAD and OOV.
pub fn build_vocabulary<S: AsRef<str>>(corpus: &[S], cfg: &VectorizerConfig) -> Result<Vocabulary, VectorizerError> {
    cfg.validate()?;
    // token -> (count, first occurrence)
    let mut counts: HashMap<String, (usize, usize)> = HashMap::new();
    let mut seen = 0usize;
    for text in corpus {
        for feature in features(text.as_ref(), cfg.ngram_order) {
            let entry = counts.entry(feature).or_insert((0, seen));
            entry.0 += 1;
            seen += 1;
        }
    }
    if counts.is_empty() {
        return Err(VectorizerError::EmptyCorpus);
    }
    let mut ranked: Vec<(String, (usize, usize))> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1 .0.cmp(&a.1 .0).then(a.1 .1.cmp(&b.1 .1)));
    ranked.truncate(cfg.max_tokens - 2);
    Ok(Vocabulary::from_ranked(ranked.into_iter().map(|(t, _)| t)))
}

/// Maps unigrams to ids (unknown -> OOV), truncates the tail and pads with
/// PAD to exactly `sequence_length`.
pub fn encode(vocab: &Vocabulary, text: &str, cfg: &VectorizerConfig) -> Vec<usize> {
    let mut ids: Vec<usize> = text
        .split_whitespace()
        .take(cfg.sequence_length)
        .map(|w| vocab.index_of(w).unwrap_or(OOV))
        .collect();
    ids.resize(cfg.sequence_length, PAD);
    ids
}
