//! Vocabulary construction and target-word coverage analysis.
//!
//! Four vocabularies matter here: the full target vocabulary, the source
//! (encoder) vocabulary, the small frequent-word table that supplements
//! alignment expansions, and the per-source restricted vocabulary the
//! generative decoder softmaxes over.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fs;
use std::path::Path;

use crate::alignment::AlignmentTable;
use crate::corpus::ParallelCorpus;
use crate::{Error, Result};

pub const PAD_ID: u32 = 0;
pub const UNK_ID: u32 = 1;
pub const BOS_ID: u32 = 2;
pub const EOS_ID: u32 = 3;

pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_TOKEN: &str = "<unk>";
pub const BOS_TOKEN: &str = "<s>";
pub const EOS_TOKEN: &str = "</s>";

const RESERVED: [&str; 4] = [PAD_TOKEN, UNK_TOKEN, BOS_TOKEN, EOS_TOKEN];

/// Bidirectional token/id mapping with reserved ids 0..=3 for
/// PAD, UNK, BOS, EOS.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocabulary {
    fn from_content_tokens(content: Vec<String>) -> Self {
        let mut tokens: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        tokens.extend(content);
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        Vocabulary { tokens, index }
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    /// Id of the token, with UNK for anything out of vocabulary.
    pub fn id_or_unk(&self, token: &str) -> u32 {
        self.id(token).unwrap_or(UNK_ID)
    }

    pub fn token(&self, id: u32) -> &str {
        &self.tokens[id as usize]
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    /// Total size including the four reserved tokens.
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false // reserved tokens are always present
    }

    /// Tokens after the reserved block, in id order.
    pub fn content_tokens(&self) -> &[String] {
        &self.tokens[RESERVED.len()..]
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// One token per line, line number = id, reserved tokens first.
    pub fn to_text(&self) -> String {
        let mut out = String::with_capacity(self.tokens.iter().map(|t| t.len() + 1).sum());
        for t in &self.tokens {
            out.push_str(t);
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let tokens: Vec<String> = text.lines().map(str::to_string).collect();
        if tokens.len() < RESERVED.len()
            || tokens[..RESERVED.len()] != RESERVED.map(str::to_string)
        {
            return Err(Error::Input(
                "vocabulary file must start with the reserved tokens".into(),
            ));
        }
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        Ok(Vocabulary { tokens, index })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Input(format!("cannot read vocabulary {}: {e}", path.display())))?;
        Self::from_text(&text)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Source,
    Target,
}

fn count_tokens(corpus: &ParallelCorpus, side: Side) -> HashMap<&str, u64> {
    let mut counts: HashMap<&str, u64> = HashMap::new();
    for (src, tgt) in &corpus.pairs {
        let seq = match side {
            Side::Source => src,
            Side::Target => tgt,
        };
        for t in seq {
            *counts.entry(t.as_str()).or_insert(0) += 1;
        }
    }
    counts
}

fn by_freq_then_lex(counts: &HashMap<&str, u64>) -> Vec<(String, u64)> {
    let mut items: Vec<(String, u64)> = counts
        .iter()
        .filter(|(t, _)| !RESERVED.contains(t))
        .map(|(t, &c)| (t.to_string(), c))
        .collect();
    items.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    items
}

/// Tokens with frequency >= `min_count`, ordered by descending frequency
/// then lexicographically, with the reserved block prepended.
pub fn build_vocab(corpus: &ParallelCorpus, side: Side, min_count: u64) -> Result<Vocabulary> {
    if corpus.is_empty() {
        return Err(Error::Input("vocabulary corpus is empty".into()));
    }
    let counts = count_tokens(corpus, side);
    let content = by_freq_then_lex(&counts)
        .into_iter()
        .filter(|(_, c)| *c >= min_count)
        .map(|(t, _)| t)
        .collect();
    Ok(Vocabulary::from_content_tokens(content))
}

/// The `size` most frequent target tokens, plus UNK (with the rest of the
/// reserved block, as all vocabularies carry it).
pub fn frequent_table(corpus: &ParallelCorpus, size: usize) -> Result<Vocabulary> {
    if size == 0 {
        return Err(Error::Input("frequent table size must be at least 1".into()));
    }
    let counts = count_tokens(corpus, Side::Target);
    let content = by_freq_then_lex(&counts)
        .into_iter()
        .take(size)
        .map(|(t, _)| t)
        .collect();
    Ok(Vocabulary::from_content_tokens(content))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    Alignment,
    Frequent,
}

/// Per-source restricted vocabulary: sorted target-vocabulary ids with a
/// provenance flag for each.
#[derive(Debug, Clone, PartialEq)]
pub struct RestrictedVocab {
    ids: Vec<u32>,
    provenance: Vec<Provenance>,
}

impl RestrictedVocab {
    pub fn ids(&self) -> &[u32] {
        &self.ids
    }

    pub fn provenance(&self, i: usize) -> Provenance {
        self.provenance[i]
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn contains(&self, id: u32) -> bool {
        self.ids.binary_search(&id).is_ok()
    }

    /// Extend with one extra id (sorted position preserved). Used by the
    /// generation pipeline to guarantee the end-of-sequence token is
    /// always producible.
    pub fn with_id(&self, id: u32, provenance: Provenance) -> RestrictedVocab {
        match self.ids.binary_search(&id) {
            Ok(_) => self.clone(),
            Err(pos) => {
                let mut ids = self.ids.clone();
                let mut prov = self.provenance.clone();
                ids.insert(pos, id);
                prov.insert(pos, provenance);
                RestrictedVocab {
                    ids,
                    provenance: prov,
                }
            }
        }
    }
}

/// Ids of `(expand(table, source) | frequent) & target vocabulary`, with
/// UNK always included.
pub fn restricted_vocab(
    source_tokens: &[String],
    table: &AlignmentTable,
    frequent: &Vocabulary,
    target: &Vocabulary,
) -> RestrictedVocab {
    let mut by_id: BTreeMap<u32, Provenance> = BTreeMap::new();
    by_id.insert(UNK_ID, Provenance::Frequent);
    for tok in frequent.content_tokens() {
        if let Some(id) = target.id(tok) {
            by_id.entry(id).or_insert(Provenance::Frequent);
        }
    }
    for tok in table.expand(source_tokens) {
        if let Some(id) = target.id(&tok) {
            by_id.insert(id, Provenance::Alignment);
        }
    }
    let (ids, provenance) = by_id.into_iter().unzip();
    RestrictedVocab { ids, provenance }
}

/// Which token set to measure target coverage against.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CoverageSpec {
    /// Source tokens only.
    Source,
    /// Source tokens plus alignment expansions.
    SourceAlign,
    /// Source tokens plus alignment expansions plus the frequent table.
    SourceAlignFrequent,
    /// The top-N target tokens by training frequency, source-independent.
    TopTarget(usize),
}

impl CoverageSpec {
    pub fn label(&self) -> String {
        match self {
            CoverageSpec::Source => "X".into(),
            CoverageSpec::SourceAlign => "X+A(X)".into(),
            CoverageSpec::SourceAlignFrequent => "X+A(X)+U".into(),
            CoverageSpec::TopTarget(n) => format!("V={n}"),
        }
    }
}

/// Artifacts coverage is measured against; all must be built from the
/// training split only.
pub struct CoverageInputs<'a> {
    pub table: &'a AlignmentTable,
    pub frequent: &'a Vocabulary,
    /// Target tokens ranked by training frequency (descending), for the
    /// top-N spec.
    pub ranked_target: &'a [String],
}

/// Percentage of test-set target tokens (by occurrence) contained in the
/// spec's token set, micro-averaged over all target tokens.
pub fn coverage_ratio(test: &ParallelCorpus, spec: CoverageSpec, inputs: &CoverageInputs) -> f64 {
    let mut hits: u64 = 0;
    let mut total: u64 = 0;
    let top_set: Option<HashSet<&str>> = match spec {
        CoverageSpec::TopTarget(n) => Some(
            inputs
                .ranked_target
                .iter()
                .take(n)
                .map(String::as_str)
                .collect(),
        ),
        _ => None,
    };
    for (src, tgt) in &test.pairs {
        let mut allowed: BTreeSet<String> = BTreeSet::new();
        match spec {
            CoverageSpec::Source
            | CoverageSpec::SourceAlign
            | CoverageSpec::SourceAlignFrequent => {
                allowed.extend(src.iter().cloned());
                if !matches!(spec, CoverageSpec::Source) {
                    allowed.extend(inputs.table.expand(src));
                }
                if matches!(spec, CoverageSpec::SourceAlignFrequent) {
                    allowed.extend(inputs.frequent.content_tokens().iter().cloned());
                    allowed.insert(UNK_TOKEN.to_string());
                }
            }
            CoverageSpec::TopTarget(_) => {}
        }
        for t in tgt {
            total += 1;
            let hit = match &top_set {
                Some(set) => set.contains(t.as_str()),
                None => allowed.contains(t),
            };
            if hit {
                hits += 1;
            }
        }
    }
    if total == 0 {
        return 0.0;
    }
    100.0 * hits as f64 / total as f64
}

/// Target tokens of the training corpus ranked by descending frequency
/// (lexicographic tie-break); feeds [`CoverageSpec::TopTarget`].
pub fn ranked_target_tokens(train: &ParallelCorpus) -> Vec<String> {
    let counts = count_tokens(train, Side::Target);
    by_freq_then_lex(&counts).into_iter().map(|(t, _)| t).collect()
}
