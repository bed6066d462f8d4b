//! Two-stage text cleaning.
//!
//! Stage A normalizes Unicode, lowercases, keeps ASCII letters, whitespace
//! and a configurable punctuation set, spaces out punctuation and collapses
//! whitespace. Stage B drops `@handles` and everything except ASCII letters
//! and spaces. [`clean`] composes both and is the standardizer used by the
//! vectorizer.

use std::collections::BTreeSet;

use thiserror::Error;
use unicode_normalization::UnicodeNormalization;

pub const DEFAULT_PUNCTUATION: &str = ".,!?;:'\"()-";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CleanConfigError {
    #[error("punctuation set may not contain alphabetic or whitespace character {0:?}")]
    BadPunctuation(char),
    #[error("delimiter must be non-empty")]
    EmptyDelimiter,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CleanConfig {
    punctuation: BTreeSet<char>,
    delimiter: String,
    strip_handles: bool,
}

impl Default for CleanConfig {
    fn default() -> Self {
        Self {
            punctuation: DEFAULT_PUNCTUATION.chars().collect(),
            delimiter: " ".to_string(),
            strip_handles: true,
        }
    }
}

impl CleanConfig {
    pub fn new(
        punctuation: impl IntoIterator<Item = char>,
        delimiter: impl Into<String>,
        strip_handles: bool,
    ) -> Result<Self, CleanConfigError> {
        let punctuation: BTreeSet<char> = punctuation.into_iter().collect();
        if let Some(&c) = punctuation.iter().find(|c| c.is_alphabetic() || c.is_whitespace()) {
            return Err(CleanConfigError::BadPunctuation(c));
        }
        let delimiter = delimiter.into();
        if delimiter.is_empty() {
            return Err(CleanConfigError::EmptyDelimiter);
        }
        Ok(Self {
            punctuation,
            delimiter,
            strip_handles,
        })
    }

    pub fn is_punctuation(&self, c: char) -> bool {
        self.punctuation.contains(&c)
    }

    pub fn delimiter(&self) -> &str {
        &self.delimiter
    }

    pub fn strip_handles(&self) -> bool {
        self.strip_handles
    }
}

/// Characters whose runs (length >= 2) are ellipsis- or quote-like and
/// collapse to a single space.
fn is_collapsible(c: char) -> bool {
    c == '.' || c == '\''
}

pub fn clean_stage_a(raw: &str, cfg: &CleanConfig) -> String {
    let kept: Vec<char> = raw
        .nfkc()
        .flat_map(char::to_lowercase)
        .filter(|&c| c.is_ascii_alphabetic() || c.is_whitespace() || cfg.is_punctuation(c))
        .collect();

    // Runs of two or more periods or apostrophes become one space; every
    // other punctuation character becomes its own space-separated token.
    let mut spaced = String::with_capacity(kept.len() * 2);
    let mut i = 0;
    while i < kept.len() {
        let c = kept[i];
        if is_collapsible(c) {
            let run = kept[i..].iter().take_while(|&&d| d == c).count();
            if run >= 2 {
                spaced.push(' ');
                i += run;
                continue;
            }
        }
        if cfg.is_punctuation(c) {
            spaced.push(' ');
            spaced.push(c);
            spaced.push(' ');
        } else {
            spaced.push(c);
        }
        i += 1;
    }

    let mut out = String::with_capacity(spaced.len());
    for (n, word) in spaced.split_whitespace().enumerate() {
        if n > 0 {
            out.push_str(cfg.delimiter());
        }
        out.push_str(word);
    }
    out
}

pub fn clean_stage_b(text: &str, cfg: &CleanConfig) -> String {
    let without_handles: String = if cfg.strip_handles() {
        let mut kept = String::with_capacity(text.len());
        let mut in_handle = false;
        let mut at_token_start = true;
        for c in text.chars() {
            if c.is_whitespace() {
                in_handle = false;
                at_token_start = true;
                kept.push(c);
                continue;
            }
            if at_token_start {
                in_handle = c == '@';
                at_token_start = false;
            }
            if !in_handle {
                kept.push(c);
            }
        }
        kept
    } else {
        text.to_string()
    };

    let letters: String = without_handles
        .chars()
        .filter(|&c| c.is_ascii_alphabetic() || c == ' ')
        .collect();

    let mut out = String::with_capacity(letters.len());
    for word in letters.split(' ').filter(|w| !w.is_empty()) {
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(word);
    }
    out.make_ascii_lowercase();
    out
}

pub fn clean(raw: &str, cfg: &CleanConfig) -> String {
    clean_stage_b(&clean_stage_a(raw, cfg), cfg)
}
