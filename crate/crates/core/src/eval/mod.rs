//! Evaluation suite: ROUGE n-gram overlap, 3-gram language-model
//! perplexity, output quality statistics, and the leading-words
//! baseline.

mod lm;
mod rouge;
mod stats;

pub use lm::{perplexity, train_lm, NgramLM};
pub use rouge::{rouge_n, RougeScore};
pub use stats::{lead_baseline, quality_stats, EvalReport, QualityReport};

use crate::Result;

/// Score outputs against references (mean sentence-level ROUGE f) and
/// sources (copy statistics), with perplexity under the given model.
pub fn evaluate_outputs(
    outputs: &[Vec<String>],
    references: &[Vec<String>],
    sources: &[Vec<String>],
    lm: &NgramLM,
) -> Result<EvalReport> {
    if outputs.len() != references.len() {
        return Err(crate::Error::Input(format!(
            "evaluate: {} outputs vs {} references",
            outputs.len(),
            references.len()
        )));
    }
    let mean_f = |n: usize| -> (f64, f64, f64) {
        let mut p = 0.0;
        let mut r = 0.0;
        let mut f = 0.0;
        for (out, reference) in outputs.iter().zip(references) {
            let s = rouge_n(out, reference, n);
            p += s.precision;
            r += s.recall;
            f += s.f;
        }
        let count = outputs.len().max(1) as f64;
        (p / count, r / count, f / count)
    };
    let (p1, r1, f1) = mean_f(1);
    let (p2, r2, f2) = mean_f(2);
    let mut quality = quality_stats(outputs, sources)?;
    quality.ppl = Some(perplexity(lm, outputs)?);
    Ok(EvalReport {
        rouge1: RougeScore {
            precision: p1,
            recall: r1,
            f: f1,
        },
        rouge2: RougeScore {
            precision: p2,
            recall: r2,
            f: f2,
        },
        quality,
    })
}
