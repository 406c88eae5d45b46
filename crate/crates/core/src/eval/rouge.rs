use std::collections::HashMap;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RougeScore {
    pub precision: f64,
    pub recall: f64,
    pub f: f64,
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], u64> {
    let mut counts: HashMap<&[String], u64> = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

/// Clipped n-gram overlap between a candidate and a reference:
/// `f = 2 * sum_b min(N_cand(b), N_ref(b)) / (total_cand + total_ref)`,
/// the harmonic combination of clipped precision and recall. Empty
/// n-gram sets yield zero.
pub fn rouge_n(candidate: &[String], reference: &[String], n: usize) -> RougeScore {
    assert!(n >= 1, "rouge_n is defined for n >= 1");
    let cand = ngram_counts(candidate, n);
    let refr = ngram_counts(reference, n);
    let total_cand: u64 = cand.values().sum();
    let total_ref: u64 = refr.values().sum();
    let overlap: u64 = cand
        .iter()
        .map(|(gram, &c)| c.min(refr.get(gram).copied().unwrap_or(0)))
        .sum();
    let precision = if total_cand == 0 {
        0.0
    } else {
        overlap as f64 / total_cand as f64
    };
    let recall = if total_ref == 0 {
        0.0
    } else {
        overlap as f64 / total_ref as f64
    };
    let f = if total_cand + total_ref == 0 {
        0.0
    } else {
        2.0 * overlap as f64 / (total_cand + total_ref) as f64
    };
    RougeScore {
        precision,
        recall,
        f,
    }
}
