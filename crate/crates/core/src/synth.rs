//! Seeded synthetic corpora for tests and scaled-down experiments.
//! Real datasets arrive pre-tokenized from upstream pipelines; these
//! generators produce small corpora with known copy structure instead.

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use crate::corpus::ParallelCorpus;

fn source_word(i: usize) -> String {
    format!("src{i}")
}

fn translated_word(i: usize) -> String {
    format!("tgt{i}")
}

/// Pairs whose target equals the source verbatim. Sources are sampled
/// without replacement from `vocab_size` word types, lengths in
/// `[min_len, max_len]`.
pub fn copy_corpus(
    pairs: usize,
    vocab_size: usize,
    min_len: usize,
    max_len: usize,
    seed: u64,
) -> ParallelCorpus {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let vocab: Vec<String> = (0..vocab_size).map(source_word).collect();
    let mut out = Vec::with_capacity(pairs);
    for _ in 0..pairs {
        let len = rng.random_range(min_len..=max_len.min(vocab_size));
        let mut pool = vocab.clone();
        pool.shuffle(&mut rng);
        let source: Vec<String> = pool.into_iter().take(len).collect();
        out.push((source.clone(), source));
    }
    ParallelCorpus { pairs: out }
}

/// Pairs whose target alternates copied source tokens with novel tokens
/// drawn from a disjoint vocabulary, so copy supervision is 1 on even
/// target positions and 0 on odd ones.
pub fn half_copy_corpus(pairs: usize, vocab_size: usize, len: usize, seed: u64) -> ParallelCorpus {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(pairs);
    for _ in 0..pairs {
        let mut ids: Vec<usize> = (0..vocab_size).collect();
        ids.shuffle(&mut rng);
        let ids: Vec<usize> = ids.into_iter().take(len).collect();
        let source: Vec<String> = ids.iter().map(|&i| source_word(i)).collect();
        let target: Vec<String> = ids
            .iter()
            .enumerate()
            .map(|(pos, &i)| {
                if pos % 2 == 0 {
                    source_word(i)
                } else {
                    translated_word(i)
                }
            })
            .collect();
        out.push((source, target));
    }
    ParallelCorpus { pairs: out }
}

/// Corpus with an exact token-level copy rate: per pair, `copied`
/// target positions repeat the source token and the rest emit that
/// source token's fixed translation (a disjoint word type). The
/// realized copy rate is `copied / len` exactly.
pub fn rated_copy_corpus(
    pairs: usize,
    vocab_size: usize,
    len: usize,
    copied: usize,
    seed: u64,
) -> ParallelCorpus {
    assert!(copied <= len && len <= vocab_size);
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(pairs);
    for _ in 0..pairs {
        // membership must vary across pairs or alignment cannot tell
        // group members apart by co-occurrence
        let mut ids: Vec<usize> = (0..vocab_size).collect();
        ids.shuffle(&mut rng);
        ids.truncate(len);
        let source: Vec<String> = ids.iter().map(|&i| source_word(i)).collect();
        let mut copy_positions: Vec<usize> = (0..len).collect();
        copy_positions.shuffle(&mut rng);
        let copy_set: Vec<bool> = {
            let mut set = vec![false; len];
            for &p in copy_positions.iter().take(copied) {
                set[p] = true;
            }
            set
        };
        let target: Vec<String> = ids
            .iter()
            .zip(&copy_set)
            .map(|(&i, &copy)| if copy { source_word(i) } else { translated_word(i) })
            .collect();
        out.push((source, target));
    }
    ParallelCorpus { pairs: out }
}

/// Templated sentences with strong local n-gram structure, for
/// language-model checks.
pub fn patterned_sentences(count: usize, seed: u64) -> Vec<Vec<String>> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let subjects = ["engine", "parser", "worker", "cache", "scheduler"];
    let verbs = ["reads", "writes", "drops", "loads"];
    let objects = ["records", "frames", "blocks", "pages"];
    let tails = [
        vec!["from", "the", "queue"],
        vec!["into", "the", "pool"],
        vec!["without", "delay"],
    ];
    (0..count)
        .map(|_| {
            let mut s: Vec<String> = vec!["the".into()];
            s.push(subjects[rng.random_range(0..subjects.len())].into());
            s.push(verbs[rng.random_range(0..verbs.len())].into());
            s.push(objects[rng.random_range(0..objects.len())].into());
            for t in &tails[rng.random_range(0..tails.len())] {
                s.push(t.to_string());
            }
            s
        })
        .collect()
}
