//! Text joint source-channel coding: a transformer codec whose transmit and
//! receive sides can each gain a Mamba refinement block, trained end to end
//! over AWGN and scored with corpus BLEU.

mod bleu;
mod corpus;
mod eval;
mod model;
mod train;

pub use bleu::{bleu, BleuReport};
pub use corpus::{generate_corpus, load_corpus, CorpusConfig};
pub use eval::{evaluate_over_snr, write_snr_csv, SnrRow};
pub use model::{receive_decode, transmit_encode, JscdModel, JscdModelConfig};
pub use train::{train_jscd, write_jscd_curve_csv, JscdCurveRow, JscdTrainConfig, TrainedJscd};

use std::collections::HashMap;

use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const START: usize = 1;
pub const END: usize = 2;
pub const UNKNOWN: usize = 3;
const RESERVED: [&str; 4] = ["<pad>", "<s>", "</s>", "<unk>"];

/// Word-level vocabulary. Ids `0..4` are reserved; the remaining words are
/// ordered by descending frequency, ties alphabetical.
#[derive(Clone, Debug, PartialEq)]
pub struct Vocab {
    words: Vec<String>,
    ids: HashMap<String, usize>,
}

impl Vocab {
    /// Words seen at least `min_freq` times in whitespace-split `sentences`.
    pub fn build<S: AsRef<str>>(sentences: &[S], min_freq: usize) -> Self {
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for s in sentences {
            for w in s.as_ref().split_whitespace() {
                *counts.entry(w).or_default() += 1;
            }
        }
        let mut kept: Vec<(&str, usize)> =
            counts.into_iter().filter(|&(w, c)| c >= min_freq.max(1) && !RESERVED.contains(&w)).collect();
        kept.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
        let words: Vec<String> =
            RESERVED.iter().map(|s| s.to_string()).chain(kept.into_iter().map(|(w, _)| w.to_string())).collect();
        let ids = words.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
        Vocab { words, ids }
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn id(&self, word: &str) -> usize {
        self.ids.get(word).copied().unwrap_or(UNKNOWN)
    }

    pub fn word(&self, id: usize) -> &str {
        self.words.get(id).map_or(RESERVED[UNKNOWN], String::as_str)
    }
}

/// Token ids framed by start and end markers, at most `cap` long.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct TokenSequence {
    ids: Vec<usize>,
}

impl TokenSequence {
    /// Checks markers, the cap and the id range.
    pub fn new(ids: Vec<usize>, cap: usize, vocab_size: usize) -> Result<Self> {
        if ids.len() > cap {
            return Err(Error::LengthCap { len: ids.len(), cap });
        }
        if ids.len() < 2 || ids[0] != START || *ids.last().expect("nonempty") != END {
            return Err(Error::InvalidArgument("sequence must be framed by start and end markers".into()));
        }
        if let Some(&bad) = ids.iter().find(|&&i| i >= vocab_size) {
            return Err(Error::InvalidArgument(format!("token id {bad} outside vocabulary of {vocab_size}")));
        }
        Ok(TokenSequence { ids })
    }

    pub fn ids(&self) -> &[usize] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Ids between the markers.
    pub fn content(&self) -> &[usize] {
        &self.ids[1..self.ids.len() - 1]
    }
}

/// Whitespace tokenization. Sentences longer than `cap` keep their first
/// `cap - 2` words and the end marker.
pub fn tokenize(text: &str, vocab: &Vocab, cap: usize) -> Result<TokenSequence> {
    if cap < 3 {
        return Err(Error::InvalidArgument(format!("cap {cap} leaves no room for words")));
    }
    let words: Vec<&str> = text.split_whitespace().collect();
    if words.is_empty() {
        return Err(Error::Empty("sentence"));
    }
    let mut ids = Vec::with_capacity(cap.min(words.len() + 2));
    ids.push(START);
    ids.extend(words.iter().take(cap - 2).map(|w| vocab.id(w)));
    ids.push(END);
    TokenSequence::new(ids, cap, vocab.len())
}

/// Words between the markers joined by single spaces; unknown ids print as
/// `<unk>`.
pub fn detokenize(seq: &TokenSequence, vocab: &Vocab) -> String {
    seq.content().iter().map(|&i| vocab.word(i)).collect::<Vec<_>>().join(" ")
}
