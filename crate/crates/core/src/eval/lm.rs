//! Interpolated maximum-likelihood 3-gram language model.
//!
//! Fixed interpolation weights (0.5, 0.3, 0.2) over the trigram, bigram
//! and unigram ML estimates, renormalized over the orders whose context
//! was actually observed. Unseen tokens score through a unigram floor of
//! `1 / (10 * |prediction set|)`; the rest of the unigram mass is scaled
//! down so every conditional still sums to one over the closed
//! prediction set (training tokens plus the end marker plus UNK).

use std::collections::HashMap;

use crate::vocab::UNK_TOKEN;
use crate::{Error, Result};

const WEIGHTS: (f64, f64, f64) = (0.5, 0.3, 0.2);

/// Internal id of the begin marker; never part of the prediction set.
const BOS: u32 = u32::MAX;

#[derive(Debug, Clone)]
pub struct NgramLM {
    index: HashMap<String, u32>,
    names: Vec<String>,
    unk: u32,
    eos: u32,
    unigram: Vec<u64>,
    total: u64,
    bigram: HashMap<(u32, u32), u64>,
    ctx1: HashMap<u32, u64>,
    trigram: HashMap<(u32, u32, u32), u64>,
    ctx2: HashMap<(u32, u32), u64>,
    /// Unigram probability reserved for UNK when it never occurred in
    /// training.
    unk_floor: f64,
    /// Every conditional is 1/n regardless of history (test fixture).
    forced_uniform: Option<usize>,
}

/// Train on tokenized sentences; an end-of-sentence prediction is added
/// to each.
pub fn train_lm(sentences: &[Vec<String>]) -> Result<NgramLM> {
    if sentences.is_empty() {
        return Err(Error::Input("language model corpus is empty".into()));
    }
    let mut index: HashMap<String, u32> = HashMap::new();
    let mut names: Vec<String> = Vec::new();
    let intern = |tok: &str, index: &mut HashMap<String, u32>, names: &mut Vec<String>| -> u32 {
        if let Some(&id) = index.get(tok) {
            return id;
        }
        let id = names.len() as u32;
        names.push(tok.to_string());
        index.insert(tok.to_string(), id);
        id
    };
    let eos = intern("</s>", &mut index, &mut names);

    let mut unigram: Vec<u64> = Vec::new();
    let mut total = 0u64;
    let mut bigram: HashMap<(u32, u32), u64> = HashMap::new();
    let mut ctx1: HashMap<u32, u64> = HashMap::new();
    let mut trigram: HashMap<(u32, u32, u32), u64> = HashMap::new();
    let mut ctx2: HashMap<(u32, u32), u64> = HashMap::new();

    for sentence in sentences {
        let mut padded: Vec<u32> = vec![BOS, BOS];
        for tok in sentence {
            padded.push(intern(tok, &mut index, &mut names));
        }
        padded.push(eos);
        unigram.resize(names.len(), 0);
        for i in 2..padded.len() {
            let (h2, h1, w) = (padded[i - 2], padded[i - 1], padded[i]);
            unigram[w as usize] += 1;
            total += 1;
            *bigram.entry((h1, w)).or_insert(0) += 1;
            *ctx1.entry(h1).or_insert(0) += 1;
            *trigram.entry((h2, h1, w)).or_insert(0) += 1;
            *ctx2.entry((h2, h1)).or_insert(0) += 1;
        }
    }

    // UNK joins the prediction set with floor mass unless the literal
    // token occurred in training.
    let unk = match index.get(UNK_TOKEN) {
        Some(&id) => id,
        None => {
            let id = names.len() as u32;
            names.push(UNK_TOKEN.to_string());
            index.insert(UNK_TOKEN.to_string(), id);
            unigram.push(0);
            id
        }
    };
    let unk_floor = if unigram[unk as usize] > 0 {
        0.0
    } else {
        1.0 / (10.0 * names.len() as f64)
    };

    Ok(NgramLM {
        index,
        names,
        unk,
        eos,
        unigram,
        total,
        bigram,
        ctx1,
        trigram,
        ctx2,
        unk_floor,
        forced_uniform: None,
    })
}

impl NgramLM {
    /// A model whose every conditional is uniform over `n` tokens.
    pub fn uniform(n: usize) -> Self {
        NgramLM {
            index: HashMap::new(),
            names: Vec::new(),
            unk: 0,
            eos: 0,
            unigram: Vec::new(),
            total: 0,
            bigram: HashMap::new(),
            ctx1: HashMap::new(),
            trigram: HashMap::new(),
            ctx2: HashMap::new(),
            unk_floor: 0.0,
            forced_uniform: Some(n),
        }
    }

    pub fn order(&self) -> usize {
        3
    }

    /// Tokens the model can predict (the closed set conditionals sum
    /// to one over).
    pub fn prediction_set(&self) -> &[String] {
        &self.names
    }

    fn id_or_unk(&self, tok: &str) -> u32 {
        self.index.get(tok).copied().unwrap_or(self.unk)
    }

    fn p_unigram(&self, w: u32) -> f64 {
        if self.unk_floor > 0.0 && w == self.unk {
            return self.unk_floor;
        }
        let ml = self.unigram[w as usize] as f64 / self.total as f64;
        (1.0 - self.unk_floor) * ml
    }

    fn conditional_ids(&self, h2: u32, h1: u32, w: u32) -> f64 {
        if let Some(n) = self.forced_uniform {
            return 1.0 / n as f64;
        }
        let c2 = self.ctx2.get(&(h2, h1)).copied().unwrap_or(0);
        let c1 = self.ctx1.get(&h1).copied().unwrap_or(0);
        let (mut w3, mut w2, w1) = WEIGHTS;
        if c2 == 0 {
            w3 = 0.0;
        }
        if c1 == 0 {
            w2 = 0.0;
        }
        let z = w3 + w2 + w1;
        let mut p = w1 / z * self.p_unigram(w);
        if c1 > 0 {
            let ml2 = self.bigram.get(&(h1, w)).copied().unwrap_or(0) as f64 / c1 as f64;
            p += w2 / z * ml2;
        }
        if c2 > 0 {
            let ml3 = self.trigram.get(&(h2, h1, w)).copied().unwrap_or(0) as f64 / c2 as f64;
            p += w3 / z * ml3;
        }
        p
    }

    /// p(w | h2 h1) with boundary markers written `<s>`; unknown tokens
    /// map to UNK.
    pub fn conditional(&self, h2: &str, h1: &str, w: &str) -> f64 {
        let hid = |t: &str| if t == "<s>" { BOS } else { self.id_or_unk(t) };
        self.conditional_ids(hid(h2), hid(h1), self.id_or_unk(w))
    }

    /// Sum of log-probabilities over the sentence's predictions
    /// (including the end marker) and the number of predictions.
    pub fn sentence_log_prob(&self, tokens: &[String]) -> (f64, usize) {
        if let Some(n) = self.forced_uniform {
            let steps = tokens.len() + 1;
            return (-(n as f64).ln() * steps as f64, steps);
        }
        let mut padded: Vec<u32> = vec![BOS, BOS];
        padded.extend(tokens.iter().map(|t| self.id_or_unk(t)));
        padded.push(self.eos);
        let mut total = 0.0;
        for i in 2..padded.len() {
            total += self
                .conditional_ids(padded[i - 2], padded[i - 1], padded[i])
                .ln();
        }
        (total, padded.len() - 2)
    }
}

/// exp of the mean negative log-probability per scored token (end
/// markers included) over all texts.
pub fn perplexity(lm: &NgramLM, texts: &[Vec<String>]) -> Result<f64> {
    if texts.is_empty() {
        return Err(Error::Input("perplexity over an empty text set".into()));
    }
    let mut log_sum = 0.0;
    let mut count = 0usize;
    for t in texts {
        let (lp, n) = lm.sentence_log_prob(t);
        log_sum += lp;
        count += n;
    }
    Ok((-log_sum / count as f64).exp())
}
