use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const DETS: &[&str] = &["the", "a", "every", "some", "this", "that"];
const ADJS: &[&str] = &[
    "old", "young", "quiet", "bright", "small", "large", "green", "cold", "warm", "distant", "gentle", "heavy",
    "narrow", "silver", "early", "broken",
];
const NOUNS: &[&str] = &[
    "farmer", "river", "village", "horse", "letter", "window", "teacher", "garden", "bridge", "ship", "market",
    "child", "storm", "road", "forest", "tower", "lamp", "soldier", "field", "door", "king", "bird", "stone", "wind",
];
const VERBS: &[&str] = &[
    "sees", "follows", "carries", "finds", "watches", "crosses", "opens", "reaches", "leaves", "holds", "guards",
    "answers", "visits", "builds", "loses",
];
const INTRANSITIVE: &[&str] = &["waits", "sleeps", "returns", "falls", "sings", "rests", "turns"];
const ADVERBS: &[&str] = &["slowly", "quietly", "again", "today", "alone", "early"];
const PREPS: &[&str] = &["near", "behind", "under", "across", "beside", "beyond", "along", "into"];
const CONJS: &[&str] = &["and", "but", "while", "because"];

/// Seeded sentences from a small English-like grammar.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusConfig {
    pub sentences: usize,
    pub min_words: usize,
    pub max_words: usize,
    pub seed: u64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig { sentences: 22_000, min_words: 4, max_words: 30, seed: 0 }
    }
}

fn pick<'a>(rng: &mut ChaCha8Rng, words: &[&'a str]) -> &'a str {
    words.choose(rng).expect("word lists are nonempty")
}

fn noun_phrase(rng: &mut ChaCha8Rng, out: &mut Vec<&str>) {
    out.push(pick(rng, DETS));
    if rng.gen_bool(0.5) {
        out.push(pick(rng, ADJS));
    }
    out.push(pick(rng, NOUNS));
}

fn clause(rng: &mut ChaCha8Rng, out: &mut Vec<&str>) {
    noun_phrase(rng, out);
    if rng.gen_bool(0.7) {
        out.push(pick(rng, VERBS));
        noun_phrase(rng, out);
    } else {
        out.push(pick(rng, INTRANSITIVE));
        if rng.gen_bool(0.5) {
            out.push(pick(rng, ADVERBS));
        }
    }
    if rng.gen_bool(0.4) {
        out.push(pick(rng, PREPS));
        noun_phrase(rng, out);
    }
}

fn sentence(rng: &mut ChaCha8Rng) -> Vec<&'static str> {
    let mut out = Vec::new();
    clause(rng, &mut out);
    while rng.gen_bool(0.3) {
        out.push(pick(rng, CONJS));
        clause(rng, &mut out);
    }
    out
}

/// `config.sentences` sentences whose word counts lie in
/// `[min_words, max_words]`.
pub fn generate_corpus(config: &CorpusConfig) -> Result<Vec<String>> {
    if config.min_words > config.max_words || config.max_words < 3 {
        return Err(Error::Config(format!(
            "sentence length range [{}, {}] is empty for this grammar",
            config.min_words, config.max_words
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut out = Vec::with_capacity(config.sentences);
    while out.len() < config.sentences {
        let s = sentence(&mut rng);
        if (config.min_words..=config.max_words).contains(&s.len()) {
            out.push(s.join(" "));
        }
    }
    Ok(out)
}

/// UTF-8 text with one sentence per line; lines outside the word-count range
/// are dropped.
pub fn load_corpus(path: impl AsRef<Path>, min_words: usize, max_words: usize) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path)?;
    Ok(text
        .lines()
        .map(|l| l.split_whitespace().collect::<Vec<_>>())
        .filter(|w| (min_words..=max_words).contains(&w.len()))
        .map(|w| w.join(" "))
        .collect())
}
