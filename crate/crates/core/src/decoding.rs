//! Greedy and beam search over the combined copy/generate distribution.
//!
//! Search is written against the [`StepScorer`] trait rather than the
//! network directly, so tests can drive it with hand-built step tables
//! and compare against exhaustive enumeration.

use std::cmp::Ordering;
use std::fmt::Write as _;

use crate::alignment::AlignmentTable;
use crate::model::{CoreModel, EncodedValues};
use crate::training::{prepare_source, PreparedSource, VocabSet};
use crate::vocab::{Vocabulary, BOS_ID, EOS_TOKEN};
use crate::{Error, Result};

/// Which head contributed more mass to an emitted token.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Copy,
    Generate,
}

impl Mode {
    pub fn label(&self) -> &'static str {
        match self {
            Mode::Copy => "copy",
            Mode::Generate => "generate",
        }
    }
}

/// One candidate token of a step: its combined probability plus the raw
/// per-head masses behind it.
#[derive(Debug, Clone)]
pub struct SupportScore {
    pub token: String,
    pub prob: f64,
    pub copy_mass: f64,
    pub gen_mass: f64,
}

/// Anything decodable: produces, per step, the scored support, the copy
/// gate, and the successor state.
pub trait StepScorer {
    type State: Clone;

    fn initial_state(&self) -> Result<Self::State>;

    fn eos_token(&self) -> &str;

    /// `y_prev` is `None` on the first step.
    fn step(
        &self,
        state: &Self::State,
        y_prev: Option<&str>,
    ) -> Result<(Vec<SupportScore>, f64, Self::State)>;
}

/// A finished or truncated decode. `tokens` excludes the end-of-sequence
/// marker; `step_log_probs` includes the step that emitted it, so
/// `score()` is the mean log-probability over all steps taken.
#[derive(Debug, Clone)]
pub struct Hypothesis {
    pub tokens: Vec<String>,
    pub log_prob: f64,
    pub step_log_probs: Vec<f64>,
    pub modes: Vec<Mode>,
    pub lambdas: Vec<f64>,
    pub finished: bool,
}

impl Hypothesis {
    fn empty() -> Self {
        Hypothesis {
            tokens: Vec::new(),
            log_prob: 0.0,
            step_log_probs: Vec::new(),
            modes: Vec::new(),
            lambdas: Vec::new(),
            finished: false,
        }
    }

    pub fn steps(&self) -> usize {
        self.step_log_probs.len()
    }

    /// Mean log-probability per step.
    pub fn score(&self) -> f64 {
        self.log_prob / self.steps().max(1) as f64
    }

    /// TSV trace: `position<TAB>token<TAB>mode<TAB>lambda`, one row per
    /// emitted token.
    pub fn trace_tsv(&self) -> String {
        let mut out = String::new();
        for (i, tok) in self.tokens.iter().enumerate() {
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{:.6}",
                i + 1,
                tok,
                self.modes[i].label(),
                self.lambdas[i]
            );
        }
        out
    }
}

/// Deterministic entry ordering: probability descending, then the copy
/// contribution (gate-weighted copy mass) descending, then token
/// ascending.
fn entry_cmp(a: &SupportScore, b: &SupportScore, gate: f64) -> Ordering {
    b.prob
        .total_cmp(&a.prob)
        .then_with(|| (gate * b.copy_mass).total_cmp(&(gate * a.copy_mass)))
        .then_with(|| a.token.cmp(&b.token))
}

/// Index of the winning entry under the tie rules above.
pub fn argmax_entry(entries: &[SupportScore], gate: f64) -> usize {
    let mut best = 0;
    for i in 1..entries.len() {
        if entry_cmp(&entries[i], &entries[best], gate) == Ordering::Less {
            best = i;
        }
    }
    best
}

fn mode_of(e: &SupportScore, gate: f64) -> Mode {
    if gate * e.copy_mass >= (1.0 - gate) * e.gen_mass {
        Mode::Copy
    } else {
        Mode::Generate
    }
}

fn extend(hyp: &Hypothesis, e: &SupportScore, gate: f64, eos: &str) -> Hypothesis {
    let mut next = hyp.clone();
    let lp = e.prob.ln();
    next.log_prob += lp;
    next.step_log_probs.push(lp);
    if e.token == eos {
        next.finished = true;
    } else {
        next.tokens.push(e.token.clone());
        next.modes.push(mode_of(e, gate));
        next.lambdas.push(gate);
    }
    next
}

/// Emit the argmax of the combined distribution until the
/// end-of-sequence token or `max_len` steps.
pub fn greedy_decode<M: StepScorer>(scorer: &M, max_len: usize) -> Result<Hypothesis> {
    if max_len == 0 {
        return Err(Error::Input("greedy_decode: max_len must be at least 1".into()));
    }
    let mut state = scorer.initial_state()?;
    let mut hyp = Hypothesis::empty();
    for _ in 0..max_len {
        let y_prev = hyp.tokens.last().map(String::as_str);
        let (entries, gate, next_state) = scorer.step(&state, y_prev)?;
        if entries.is_empty() {
            return Err(Error::Input("greedy_decode: empty support".into()));
        }
        let best = &entries[argmax_entry(&entries, gate)];
        hyp = extend(&hyp, best, gate, scorer.eos_token());
        if hyp.finished {
            break;
        }
        state = next_state;
    }
    Ok(hyp)
}

struct BeamItem<S> {
    hyp: Hypothesis,
    state: S,
}

/// Beam search; finished hypotheses are ranked by mean log-probability
/// per step. A width of 1 reproduces [`greedy_decode`] exactly.
pub fn beam_decode<M: StepScorer>(scorer: &M, beam_width: usize, max_len: usize) -> Result<Hypothesis> {
    if beam_width == 0 {
        return Err(Error::Input("beam_decode: beam_width must be at least 1".into()));
    }
    if max_len == 0 {
        return Err(Error::Input("beam_decode: max_len must be at least 1".into()));
    }
    let mut live = vec![BeamItem {
        hyp: Hypothesis::empty(),
        state: scorer.initial_state()?,
    }];
    let mut done: Vec<Hypothesis> = Vec::new();

    for _ in 0..max_len {
        if live.is_empty() {
            break;
        }
        let mut candidates: Vec<BeamItem<M::State>> = Vec::new();
        for item in &live {
            let y_prev = item.hyp.tokens.last().map(String::as_str);
            let (mut entries, gate, next_state) = scorer.step(&item.state, y_prev)?;
            entries.sort_by(|a, b| entry_cmp(a, b, gate));
            for e in entries.iter().take(beam_width) {
                let hyp = extend(&item.hyp, e, gate, scorer.eos_token());
                if hyp.finished {
                    done.push(hyp);
                } else {
                    candidates.push(BeamItem {
                        hyp,
                        state: next_state.clone(),
                    });
                }
            }
        }
        candidates.sort_by(|a, b| b.hyp.log_prob.total_cmp(&a.hyp.log_prob));
        candidates.truncate(beam_width);
        live = candidates;
    }

    let mut best: Option<Hypothesis> = None;
    for h in done.into_iter().chain(live.into_iter().map(|i| i.hyp)) {
        let replace = match &best {
            None => true,
            Some(b) => h.score() > b.score(),
        };
        if replace {
            best = Some(h);
        }
    }
    best.ok_or_else(|| Error::Input("beam_decode: no hypothesis produced".into()))
}

/// [`StepScorer`] over a trained network and one encoded source.
pub struct ModelScorer<'a> {
    model: &'a CoreModel,
    target: &'a Vocabulary,
    prepared: PreparedSource,
    encoded: EncodedValues,
}

impl<'a> ModelScorer<'a> {
    pub fn new(
        model: &'a CoreModel,
        vocabs: &'a VocabSet,
        table: &AlignmentTable,
        source_tokens: &[String],
    ) -> Result<Self> {
        let prepared = prepare_source(source_tokens, table, vocabs);
        let encoded =
            model.encode_to_values(&prepared.source_ids, source_tokens, &prepared.mask)?;
        Ok(ModelScorer {
            model,
            target: &vocabs.target,
            prepared,
            encoded,
        })
    }

    pub fn support_size(&self) -> usize {
        self.prepared.support.len()
    }

    pub fn restricted_size(&self) -> usize {
        self.prepared.restricted.len()
    }
}

impl StepScorer for ModelScorer<'_> {
    type State = crate::ndmath::Tensor;

    fn initial_state(&self) -> Result<Self::State> {
        Ok(self.encoded.initial_state.clone())
    }

    fn eos_token(&self) -> &str {
        EOS_TOKEN
    }

    fn step(
        &self,
        state: &Self::State,
        y_prev: Option<&str>,
    ) -> Result<(Vec<SupportScore>, f64, Self::State)> {
        let y_id = match y_prev {
            None => BOS_ID,
            Some(tok) => self.target.id_or_unk(tok),
        };
        let sv = self.model.step_values(
            &self.encoded,
            &self.prepared.meta,
            &self.prepared.support,
            &self.prepared.restricted,
            y_id,
            state,
        )?;
        let entries = self
            .prepared
            .support
            .entries
            .iter()
            .enumerate()
            .map(|(i, e)| SupportScore {
                token: e.token.clone(),
                prob: sv.combined[i],
                copy_mass: sv.copy_mass[i],
                gen_mass: sv.gen_mass[i],
            })
            .collect();
        Ok((entries, sv.copy_gate, sv.state))
    }
}
