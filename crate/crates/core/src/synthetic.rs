//! Seeded generator for a lexically separable two-class corpus.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{Label, LabeledCorpus, LabeledRecord};

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticConfig {
    pub per_class: usize,
    /// Words in each class pool.
    pub pool_size: usize,
    /// Fraction of each pool shared with the other class.
    pub overlap: f64,
    pub min_words: usize,
    pub max_words: usize,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            per_class: 600,
            pool_size: 40,
            overlap: 0.3,
            min_words: 6,
            max_words: 14,
            seed: 7,
        }
    }
}

/// Pronounceable lowercase word for index `i`; distinct for distinct `i`.
fn word(mut i: usize) -> String {
    const CONSONANTS: &[u8] = b"bdfgklmnprstvz";
    const VOWELS: &[u8] = b"aeiou";
    let mut w = String::new();
    loop {
        w.push(CONSONANTS[i % CONSONANTS.len()] as char);
        i /= CONSONANTS.len();
        w.push(VOWELS[i % VOWELS.len()] as char);
        i /= VOWELS.len();
        if i == 0 {
            break;
        }
        i -= 1;
    }
    w
}

/// Pools A and B; the first `overlap * pool_size` words are common to both.
pub fn word_pools(cfg: &SyntheticConfig) -> (Vec<String>, Vec<String>) {
    let shared = (cfg.overlap * cfg.pool_size as f64).round() as usize;
    let own = cfg.pool_size - shared;
    let common: Vec<String> = (0..shared).map(word).collect();
    let a = common.iter().cloned().chain((shared..shared + own).map(word)).collect();
    let b = common
        .iter()
        .cloned()
        .chain((shared + own..shared + 2 * own).map(word))
        .collect();
    (a, b)
}

/// Human texts draw from pool A, AI texts from pool B. Records are
/// interleaved in a seeded random order with ids `0..2 * per_class`.
pub fn separable_corpus(cfg: &SyntheticConfig) -> LabeledCorpus {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (a, b) = word_pools(cfg);
    let mut texts = Vec::with_capacity(2 * cfg.per_class);
    for (pool, label) in [(&a, Label::Human), (&b, Label::Ai)] {
        for _ in 0..cfg.per_class {
            let n = rng.gen_range(cfg.min_words..=cfg.max_words);
            let words: Vec<&str> = (0..n).map(|_| pool.choose(&mut rng).unwrap().as_str()).collect();
            texts.push((words.join(" "), label));
        }
    }
    texts.shuffle(&mut rng);
    texts
        .into_iter()
        .enumerate()
        .map(|(i, (text, label))| LabeledRecord::new(i as u64, text, label))
        .collect()
}

/// Splits off the last `test_fraction` of records after a seeded shuffle.
pub fn train_test_split(corpus: &LabeledCorpus, test_fraction: f64, seed: u64) -> (LabeledCorpus, LabeledCorpus) {
    let mut records = corpus.records().to_vec();
    records.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_test = (test_fraction * records.len() as f64).round() as usize;
    let test = records.split_off(records.len() - n_test);
    (records.into_iter().collect(), test.into_iter().collect())
}
