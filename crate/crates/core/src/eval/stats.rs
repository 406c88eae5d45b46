use std::collections::HashSet;
use std::fmt::Write as _;

use crate::vocab::UNK_TOKEN;
use crate::{Error, Result};

use super::rouge::RougeScore;

/// Text-quality summary of a batch of outputs. Perplexity is filled in
/// by callers that have a language model at hand.
#[derive(Debug, Clone, PartialEq)]
pub struct QualityReport {
    pub ppl: Option<f64>,
    pub mean_length: f64,
    pub unk_pct: f64,
    pub copy_pct: f64,
}

/// Mean token length, the share of UNK tokens, and the share of tokens
/// present in the paired source (by occurrence, not type).
pub fn quality_stats(outputs: &[Vec<String>], sources: &[Vec<String>]) -> Result<QualityReport> {
    if outputs.len() != sources.len() {
        return Err(Error::Input(format!(
            "quality_stats: {} outputs vs {} sources",
            outputs.len(),
            sources.len()
        )));
    }
    let mut tokens = 0u64;
    let mut unk = 0u64;
    let mut copied = 0u64;
    for (out, src) in outputs.iter().zip(sources) {
        let src_set: HashSet<&str> = src.iter().map(String::as_str).collect();
        for t in out {
            tokens += 1;
            if t == UNK_TOKEN {
                unk += 1;
            }
            if src_set.contains(t.as_str()) {
                copied += 1;
            }
        }
    }
    let denom = tokens.max(1) as f64;
    Ok(QualityReport {
        ppl: None,
        mean_length: tokens as f64 / outputs.len().max(1) as f64,
        unk_pct: 100.0 * unk as f64 / denom,
        copy_pct: 100.0 * copied as f64 / denom,
    })
}

/// First `min(k, len)` source tokens.
pub fn lead_baseline(source: &[String], k: usize) -> Vec<String> {
    source[..k.min(source.len())].to_vec()
}

/// Full metric report of the evaluation suite.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub rouge1: RougeScore,
    pub rouge2: RougeScore,
    pub quality: QualityReport,
}

impl EvalReport {
    /// TSV rows `metric<TAB>value`.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "ROUGE-1-f\t{:.4}", self.rouge1.f);
        let _ = writeln!(out, "ROUGE-2-f\t{:.4}", self.rouge2.f);
        match self.quality.ppl {
            Some(p) => {
                let _ = writeln!(out, "PPL\t{p:.4}");
            }
            None => {
                let _ = writeln!(out, "PPL\t-");
            }
        }
        let _ = writeln!(out, "Length\t{:.4}", self.quality.mean_length);
        let _ = writeln!(out, "UNK%\t{:.4}", self.quality.unk_pct);
        let _ = writeln!(out, "Copy%\t{:.4}", self.quality.copy_pct);
        out
    }
}
