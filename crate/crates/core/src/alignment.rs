//! Lexical word alignment trained with expectation-maximization.
//!
//! This stands in for the external alignment tool: a Model-1-style EM
//! with a NULL source token, plus an optional diagonal positional prior
//! (off by default) for corpora where source and target run roughly in
//! parallel. The resulting table seeds the restricted generation
//! vocabulary.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::corpus::ParallelCorpus;
use crate::{Error, Result};

/// Probability of aligning a target word to no source word when the
/// diagonal prior is active (the uniform model needs no such constant:
/// NULL is just one more source position).
const NULL_ALIGN_PROB: f64 = 0.08;

/// Entries below this are dropped before pruning to bound table size.
const MIN_KEEP_PROB: f64 = 1e-4;

/// Ranked lexical translation table: source token -> [(target token, p(t|s))].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AlignmentTable {
    entries: std::collections::BTreeMap<String, Vec<(String, f64)>>,
    null_entries: Vec<(String, f64)>,
    /// Retained rank count; `None` until [`prune_top_k`] runs.
    k: Option<usize>,
}

impl AlignmentTable {
    pub fn is_pruned(&self) -> bool {
        self.k.is_some()
    }

    pub fn rank_limit(&self) -> Option<usize> {
        self.k
    }

    pub fn targets(&self, source: &str) -> Option<&[(String, f64)]> {
        self.entries.get(source).map(|v| v.as_slice())
    }

    pub fn sources(&self) -> impl Iterator<Item = &String> {
        self.entries.keys()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Union of ranked target tokens over the given source tokens.
    /// Unknown source tokens contribute nothing; the NULL token's
    /// targets are never included.
    pub fn expand(&self, source_tokens: &[String]) -> std::collections::BTreeSet<String> {
        let mut out = std::collections::BTreeSet::new();
        for tok in source_tokens {
            if let Some(targets) = self.entries.get(tok) {
                for (t, _) in targets {
                    out.insert(t.clone());
                }
            }
        }
        out
    }

    /// One line per entry: `source<TAB>target<TAB>probability` (6 decimal
    /// places), sorted by source then descending probability. The NULL
    /// token's distribution is internal and not serialized.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (src, targets) in &self.entries {
            for (tgt, p) in targets {
                let _ = writeln!(out, "{src}\t{tgt}\t{p:.6}");
            }
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text())?;
        Ok(())
    }

    /// Parse the text form. The result is treated as pruned (rank limit
    /// = longest list present) since files are written post-pruning.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut entries: std::collections::BTreeMap<String, Vec<(String, f64)>> =
            std::collections::BTreeMap::new();
        for (lineno, line) in text.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let mut parts = line.split('\t');
            let (Some(src), Some(tgt), Some(p)) = (parts.next(), parts.next(), parts.next())
            else {
                return Err(Error::Input(format!(
                    "alignment table line {}: expected source<TAB>target<TAB>probability",
                    lineno + 1
                )));
            };
            let p: f64 = p.parse().map_err(|_| {
                Error::Input(format!("alignment table line {}: bad probability", lineno + 1))
            })?;
            entries.entry(src.to_string()).or_default().push((tgt.to_string(), p));
        }
        let k = entries.values().map(Vec::len).max().unwrap_or(0);
        Ok(AlignmentTable {
            entries,
            null_entries: Vec::new(),
            k: Some(k.max(1)),
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| {
            Error::Input(format!("cannot read alignment table {}: {e}", path.display()))
        })?;
        Self::from_text(&text)
    }
}

/// EM-estimated lexical translation table plus the per-iteration corpus
/// log-likelihood trace (non-decreasing, up to float noise).
#[derive(Debug)]
pub struct AlignmentTraining {
    pub table: AlignmentTable,
    pub log_likelihoods: Vec<f64>,
}

/// Train the lexical table by EM. `diagonal_tension` switches on the
/// positional prior `exp(-tension * |i/n - j/m|)`; `None` is the plain
/// uniform alignment model.
pub fn train_alignment(
    corpus: &ParallelCorpus,
    iterations: usize,
    diagonal_tension: Option<f64>,
) -> Result<AlignmentTraining> {
    if corpus.is_empty() {
        return Err(Error::Input("alignment training corpus is empty".into()));
    }
    if iterations == 0 {
        return Err(Error::Input("alignment training needs at least one iteration".into()));
    }

    // Intern tokens for compact count tables. NULL is source id 0.
    let mut src_ids: HashMap<&str, usize> = HashMap::new();
    let mut tgt_ids: HashMap<&str, usize> = HashMap::new();
    let mut src_names: Vec<&str> = vec!["<null>"];
    let mut tgt_names: Vec<&str> = Vec::new();
    let mut pairs_ids: Vec<(Vec<usize>, Vec<usize>)> = Vec::with_capacity(corpus.len());
    for (src, tgt) in &corpus.pairs {
        let s: Vec<usize> = src
            .iter()
            .map(|t| {
                *src_ids.entry(t.as_str()).or_insert_with(|| {
                    src_names.push(t.as_str());
                    src_names.len() - 1
                })
            })
            .collect();
        let t: Vec<usize> = tgt
            .iter()
            .map(|t| {
                *tgt_ids.entry(t.as_str()).or_insert_with(|| {
                    tgt_names.push(t.as_str());
                    tgt_names.len() - 1
                })
            })
            .collect();
        pairs_ids.push((s, t));
    }

    // t(target | source), sparse per source id. Uniform initialization
    // over the full target vocabulary.
    let tgt_count = tgt_names.len();
    let uniform = 1.0 / tgt_count as f64;
    let mut table: Vec<HashMap<usize, f64>> = vec![HashMap::new(); src_names.len()];

    let t_prob = |table: &[HashMap<usize, f64>], s: usize, t: usize| -> f64 {
        table[s].get(&t).copied().unwrap_or(uniform)
    };

    let mut log_likelihoods = Vec::with_capacity(iterations);
    for _ in 0..iterations {
        let mut counts: Vec<HashMap<usize, f64>> = vec![HashMap::new(); src_names.len()];
        let mut totals: Vec<f64> = vec![0.0; src_names.len()];
        let mut ll = 0.0;

        for (src, tgt) in &pairs_ids {
            let n = src.len();
            // alignment prior over source positions 0..n (0 = NULL),
            // fixed across iterations so EM monotonicity holds
            let priors: Vec<f64> = match diagonal_tension {
                None => vec![1.0 / (n + 1) as f64; n + 1],
                Some(_) => Vec::new(), // filled per target position below
            };
            for (j, &t) in tgt.iter().enumerate() {
                let prior_at = |i: usize| -> f64 {
                    match diagonal_tension {
                        None => priors[i],
                        Some(tension) => {
                            if i == 0 {
                                NULL_ALIGN_PROB
                            } else {
                                let h = ((i as f64) / (n as f64)
                                    - ((j + 1) as f64) / (tgt.len() as f64))
                                    .abs();
                                let w = (-tension * h).exp();
                                let z: f64 = (1..=n)
                                    .map(|ii| {
                                        let hh = ((ii as f64) / (n as f64)
                                            - ((j + 1) as f64) / (tgt.len() as f64))
                                            .abs();
                                        (-tension * hh).exp()
                                    })
                                    .sum();
                                (1.0 - NULL_ALIGN_PROB) * w / z
                            }
                        }
                    }
                };
                // E-step: posterior over aligned source position
                let mut z = prior_at(0) * t_prob(&table, 0, t);
                for (pos, &s) in src.iter().enumerate() {
                    z += prior_at(pos + 1) * t_prob(&table, s, t);
                }
                ll += z.ln();
                let mut add = |s: usize, w: f64| {
                    *counts[s].entry(t).or_insert(0.0) += w;
                    totals[s] += w;
                };
                add(0, prior_at(0) * t_prob(&table, 0, t) / z);
                for (pos, &s) in src.iter().enumerate() {
                    add(s, prior_at(pos + 1) * t_prob(&table, s, t) / z);
                }
            }
        }
        log_likelihoods.push(ll);

        // M-step
        for s in 0..src_names.len() {
            if totals[s] > 0.0 {
                let mut dist = HashMap::with_capacity(counts[s].len());
                for (&t, &c) in &counts[s] {
                    dist.insert(t, c / totals[s]);
                }
                table[s] = dist;
            }
        }
    }

    // Materialize the ranked string table, sorted by probability
    // descending with lexicographic tie-break.
    let rank = |dist: &HashMap<usize, f64>| -> Vec<(String, f64)> {
        let mut v: Vec<(String, f64)> = dist
            .iter()
            .map(|(&t, &p)| (tgt_names[t].to_string(), p))
            .collect();
        v.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then_with(|| a.0.cmp(&b.0)));
        v
    };
    let mut entries = std::collections::BTreeMap::new();
    for (s, dist) in table.iter().enumerate().skip(1) {
        entries.insert(src_names[s].to_string(), rank(dist));
    }
    let null_entries = rank(&table[0]);

    Ok(AlignmentTraining {
        table: AlignmentTable {
            entries,
            null_entries,
            k: None,
        },
        log_likelihoods,
    })
}

/// Keep each source token's `k` highest-probability targets. Entries
/// below the keep threshold are dropped first; ties break
/// lexicographically by target token.
pub fn prune_top_k(table: &AlignmentTable, k: usize) -> Result<AlignmentTable> {
    if k == 0 {
        return Err(Error::Input("prune_top_k: k must be at least 1".into()));
    }
    let prune_list = |targets: &[(String, f64)]| -> Vec<(String, f64)> {
        let mut kept: Vec<(String, f64)> = targets
            .iter()
            .filter(|(_, p)| *p >= MIN_KEEP_PROB)
            .cloned()
            .collect();
        kept.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then_with(|| a.0.cmp(&b.0)));
        kept.truncate(k);
        kept
    };
    let entries = table
        .entries
        .iter()
        .map(|(s, targets)| (s.clone(), prune_list(targets)))
        .collect();
    Ok(AlignmentTable {
        entries,
        null_entries: prune_list(&table.null_entries),
        k: Some(k),
    })
}
