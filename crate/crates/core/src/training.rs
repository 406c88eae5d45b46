//! Dual-loss training: token cross-entropy under the combined
//! distribution plus binary cross-entropy on the copy/rewrite gate,
//! optimized with gradient-clipped RmsProp over shuffled mini-batches
//! with teacher forcing.

use std::collections::{BTreeMap, HashSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;

use crate::alignment::AlignmentTable;
use crate::corpus::ParallelCorpus;
use crate::model::{CoreModel, ModelDims, SourceMeta, StepOutput, UnionSupport};
use crate::ndmath::{GradMap, Graph, NodeId, Parameters};
use crate::vocab::{
    restricted_vocab, Provenance, RestrictedVocab, Vocabulary, BOS_ID, EOS_ID, EOS_TOKEN, UNK_TOKEN,
};
use crate::{Error, Result};

/// Probabilities below this are clamped before the log.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub embedding_dim: usize,
    pub hidden_dim: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub k_alignments: usize,
    pub frequent_size: usize,
    pub epochs: usize,
    pub grad_clip_norm: f64,
    pub rmsprop_decay: f64,
    pub rmsprop_eps: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            embedding_dim: 256,
            hidden_dim: 512,
            learning_rate: 0.05,
            batch_size: 32,
            k_alignments: 10,
            frequent_size: 2000,
            epochs: 10,
            grad_clip_norm: 5.0,
            rmsprop_decay: 0.95,
            rmsprop_eps: 1e-6,
            seed: 42,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("embedding_dim", self.embedding_dim as f64),
            ("hidden_dim", self.hidden_dim as f64),
            ("batch_size", self.batch_size as f64),
            ("k_alignments", self.k_alignments as f64),
            ("frequent_size", self.frequent_size as f64),
            ("epochs", self.epochs as f64),
            ("grad_clip_norm", self.grad_clip_norm),
            ("rmsprop_decay", self.rmsprop_decay),
            ("rmsprop_eps", self.rmsprop_eps),
        ];
        for (name, v) in positive {
            if v <= 0.0 {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if self.learning_rate < 0.0 {
            return Err(Error::Config("learning_rate must be non-negative".into()));
        }
        Ok(())
    }
}

/// The vocabularies a training or decoding run needs.
#[derive(Debug, Clone)]
pub struct VocabSet {
    pub source: Vocabulary,
    pub target: Vocabulary,
    pub frequent: Vocabulary,
}

/// Binary copy supervision: 1 where the target token occurs anywhere in
/// the source (exact string match), else 0.
pub fn lambda_supervision(source: &[String], target: &[String]) -> Vec<f64> {
    let set: HashSet<&str> = source.iter().map(String::as_str).collect();
    target
        .iter()
        .map(|t| if set.contains(t.as_str()) { 1.0 } else { 0.0 })
        .collect()
}

/// Everything one pair needs for a forward pass, precomputed once. The
/// target sequence is extended with the end-of-sequence step, and the
/// restricted vocabulary always contains the end-of-sequence id so the
/// decoder can terminate.
#[derive(Debug, Clone)]
pub struct PreparedPair {
    pub source_tokens: Vec<String>,
    pub source_ids: Vec<u32>,
    pub mask: Vec<bool>,
    pub meta: SourceMeta,
    pub restricted: RestrictedVocab,
    pub support: UnionSupport,
    pub target_tokens: Vec<String>,
    /// Teacher-forced inputs: BOS then the gold tokens, length T+1.
    pub prev_ids: Vec<u32>,
    /// Union-support index of each gold token (UNK slot when the token
    /// is outside the union support), length T+1 including the EOS step.
    pub target_slots: Vec<usize>,
    /// Copy supervision per step, length T+1.
    pub lambda_star: Vec<f64>,
}

/// Source-side artifacts shared by training and decoding: encoder ids,
/// copy-support layout, restricted vocabulary (always including the
/// end-of-sequence id), and the union support.
pub struct PreparedSource {
    pub source_ids: Vec<u32>,
    pub mask: Vec<bool>,
    pub meta: SourceMeta,
    pub restricted: RestrictedVocab,
    pub support: UnionSupport,
}

pub fn prepare_source(
    source: &[String],
    table: &AlignmentTable,
    vocabs: &VocabSet,
) -> PreparedSource {
    let source_ids: Vec<u32> = source.iter().map(|t| vocabs.source.id_or_unk(t)).collect();
    let mask = vec![true; source.len()];
    let meta = SourceMeta::build(source, &mask);
    let restricted = restricted_vocab(source, table, &vocabs.frequent, &vocabs.target)
        .with_id(EOS_ID, Provenance::Frequent);
    let support = UnionSupport::build(&meta, &restricted, &vocabs.target);
    PreparedSource {
        source_ids,
        mask,
        meta,
        restricted,
        support,
    }
}

pub fn prepare_pair(
    source: &[String],
    target: &[String],
    table: &AlignmentTable,
    vocabs: &VocabSet,
) -> PreparedPair {
    let PreparedSource {
        source_ids,
        mask,
        meta,
        restricted,
        support,
    } = prepare_source(source, table, vocabs);

    let unk_slot = support.index_of(UNK_TOKEN).expect("UNK is always in support");
    let steps = target.len() + 1;
    let mut prev_ids = Vec::with_capacity(steps);
    let mut target_slots = Vec::with_capacity(steps);
    prev_ids.push(BOS_ID);
    for (t, tok) in target.iter().enumerate() {
        target_slots.push(support.index_of(tok).unwrap_or(unk_slot));
        if t + 1 < steps {
            prev_ids.push(vocabs.target.id_or_unk(tok));
        }
    }
    target_slots.push(support.index_of(EOS_TOKEN).expect("EOS is always in support"));

    let mut lambda_star = lambda_supervision(source, target);
    let eos_token = [EOS_TOKEN.to_string()];
    lambda_star.extend(lambda_supervision(source, &eos_token));

    PreparedPair {
        source_tokens: source.to_vec(),
        source_ids,
        mask,
        meta,
        restricted,
        support,
        target_tokens: target.to_vec(),
        prev_ids,
        target_slots,
        lambda_star,
    }
}

/// Loss node handles plus the count of probability clamps that fired.
pub struct LossNodes {
    pub eps1: NodeId,
    pub eps2: NodeId,
    pub eps: NodeId,
    pub clamped_steps: usize,
}

/// Cross-entropy of the gold tokens under the combined distributions,
/// plus binary cross-entropy of the gate against the copy supervision.
/// Sums over steps; batch averaging happens at the batch level.
pub fn step_loss(
    g: &mut Graph,
    steps: &[StepOutput],
    target_slots: &[usize],
    lambda_star: &[f64],
) -> Result<LossNodes> {
    if steps.len() != target_slots.len() || steps.len() != lambda_star.len() {
        return Err(Error::Input(format!(
            "step_loss: got {} steps, {} targets, {} supervision labels",
            steps.len(),
            target_slots.len(),
            lambda_star.len()
        )));
    }
    let mut clamped = 0usize;
    let mut nll_acc: Option<NodeId> = None;
    let mut gate_acc: Option<NodeId> = None;
    for (step, (&slot, &sup)) in steps.iter().zip(target_slots.iter().zip(lambda_star)) {
        let p = g.pick(step.combined, slot)?;
        if g.value(p).item() < PROB_FLOOR {
            clamped += 1;
        }
        let lp = g.ln_clamped(p, PROB_FLOOR);
        nll_acc = Some(match nll_acc {
            None => lp,
            Some(acc) => g.add(acc, lp)?,
        });

        let gate = step.copy_gate;
        if g.value(gate).item() < PROB_FLOOR || 1.0 - g.value(gate).item() < PROB_FLOOR {
            clamped += 1;
        }
        let ln_gate = g.ln_clamped(gate, PROB_FLOOR);
        let flipped = g.affine(gate, -1.0, 1.0);
        let ln_flip = g.ln_clamped(flipped, PROB_FLOOR);
        let pos = g.affine(ln_gate, sup, 0.0);
        let neg = g.affine(ln_flip, 1.0 - sup, 0.0);
        let term = g.add(pos, neg)?;
        gate_acc = Some(match gate_acc {
            None => term,
            Some(acc) => g.add(acc, term)?,
        });
    }
    let nll = nll_acc.ok_or_else(|| Error::Input("step_loss: no steps".into()))?;
    let gates = gate_acc.expect("same length");
    let eps1 = g.affine(nll, -1.0, 0.0);
    let eps2 = g.affine(gates, -1.0, 0.0);
    let eps = g.add(eps1, eps2)?;
    Ok(LossNodes {
        eps1,
        eps2,
        eps,
        clamped_steps: clamped,
    })
}

/// Scalar outcomes of one teacher-forced pair.
#[derive(Debug, Clone)]
pub struct PairRun {
    pub eps1: f64,
    pub eps2: f64,
    pub eps: f64,
    pub clamped_steps: usize,
    /// Gate value per step, including the end-of-sequence step last.
    pub gates: Vec<f64>,
}

/// Teacher-forced forward pass over one pair; backpropagates when
/// `want_grads` is set.
pub fn run_pair(
    model: &CoreModel,
    pair: &PreparedPair,
    want_grads: bool,
) -> Result<(PairRun, Option<GradMap>)> {
    let mut g = Graph::new();
    let bind = model.bind(&mut g);
    let enc = model.encode(
        &mut g,
        &bind,
        &pair.source_ids,
        &pair.source_tokens,
        &pair.mask,
    )?;
    let mut state = model.init_state(&mut g, &bind, &enc)?;
    let mut steps = Vec::with_capacity(pair.prev_ids.len());
    for &y_prev in &pair.prev_ids {
        let out = model.step(
            &mut g,
            &bind,
            &enc,
            &pair.meta,
            &pair.support,
            &pair.restricted,
            y_prev,
            state,
        )?;
        state = out.state;
        steps.push(out);
    }
    let gates: Vec<f64> = steps.iter().map(|s| g.value(s.copy_gate).item()).collect();
    let loss = step_loss(&mut g, &steps, &pair.target_slots, &pair.lambda_star)?;
    let run = PairRun {
        eps1: g.value(loss.eps1).item(),
        eps2: g.value(loss.eps2).item(),
        eps: g.value(loss.eps).item(),
        clamped_steps: loss.clamped_steps,
        gates,
    };
    let grads = if want_grads {
        Some(g.backward(loss.eps)?)
    } else {
        None
    };
    Ok((run, grads))
}

/// Running mean of squared gradients, one buffer per parameter.
#[derive(Debug, Clone, Default)]
pub struct RmsState {
    entries: BTreeMap<String, Vec<f64>>,
}

impl RmsState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, name: &str) -> Option<&[f64]> {
        self.entries.get(name).map(Vec::as_slice)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct RmsConfig {
    pub learning_rate: f64,
    pub decay: f64,
    pub eps: f64,
    pub clip_norm: f64,
}

impl From<&TrainConfig> for RmsConfig {
    fn from(cfg: &TrainConfig) -> Self {
        RmsConfig {
            learning_rate: cfg.learning_rate,
            decay: cfg.rmsprop_decay,
            eps: cfg.rmsprop_eps,
            clip_norm: cfg.grad_clip_norm,
        }
    }
}

/// One optimizer step. Gradients are clipped to the global norm first;
/// tensors absent from the map are treated as zero-gradient (their state
/// still decays). A non-finite gradient aborts the step untouched,
/// naming the parameter.
pub fn rmsprop_update<P: Parameters>(
    params: &mut P,
    grads: &GradMap,
    state: &mut RmsState,
    cfg: &RmsConfig,
) -> Result<()> {
    let mut shape_err: Option<Error> = None;
    let mut sq_norm = 0.0;
    params.visit(&mut |name, t| {
        if let Some(gt) = grads.get(name) {
            if gt.shape() != t.shape() {
                shape_err.get_or_insert_with(|| {
                    Error::Numeric(crate::ndmath::NdError::ShapeMismatch {
                        op: "rmsprop_update",
                        lhs: t.shape().to_vec(),
                        rhs: gt.shape().to_vec(),
                    })
                });
                return;
            }
            for &gv in gt.data() {
                if !gv.is_finite() {
                    shape_err.get_or_insert_with(|| {
                        Error::Numeric(crate::ndmath::NdError::NonFinite(format!(
                            "gradient of {name}"
                        )))
                    });
                    return;
                }
                sq_norm += gv * gv;
            }
        }
    });
    if let Some(e) = shape_err {
        return Err(e);
    }
    let norm = sq_norm.sqrt();
    let scale = if norm > cfg.clip_norm && norm > 0.0 {
        cfg.clip_norm / norm
    } else {
        1.0
    };

    params.visit_mut(&mut |name, t| {
        let mean_sq = state
            .entries
            .entry(name.to_string())
            .or_insert_with(|| vec![0.0; t.len()]);
        match grads.get(name) {
            Some(gt) => {
                let mut clipped = vec![0.0; t.len()];
                let data = t.data_mut();
                for i in 0..data.len() {
                    let gv = gt.data()[i] * scale;
                    clipped[i] = gv;
                    mean_sq[i] = cfg.decay * mean_sq[i] + (1.0 - cfg.decay) * gv * gv;
                    data[i] -= cfg.learning_rate * gv / (mean_sq[i] + cfg.eps).sqrt();
                }
                t.grad = Some(clipped);
            }
            None => {
                for m in mean_sq.iter_mut() {
                    *m *= cfg.decay;
                }
                t.grad = Some(vec![0.0; t.len()]);
            }
        }
    });
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    /// Mean per-pair token cross-entropy over the epoch.
    pub train_eps1: f64,
    /// Mean per-pair gate cross-entropy over the epoch.
    pub train_eps2: f64,
    pub val_eps: Option<f64>,
    pub clamped_steps: usize,
}

impl EpochMetrics {
    /// One training-log line: `epoch<TAB>eps1<TAB>eps2<TAB>val_eps`.
    pub fn tsv_line(&self) -> String {
        let val = match self.val_eps {
            Some(v) => format!("{v:.6}"),
            None => "-".to_string(),
        };
        format!(
            "{}\t{:.6}\t{:.6}\t{}",
            self.epoch, self.train_eps1, self.train_eps2, val
        )
    }
}

pub struct TrainOutcome {
    pub model: CoreModel,
    pub metrics: Vec<EpochMetrics>,
}

/// Mean of per-pair (eps1, eps2, eps, clamped) over prepared pairs,
/// forward passes only.
pub fn evaluate_loss(model: &CoreModel, pairs: &[PreparedPair]) -> Result<(f64, f64, f64)> {
    if pairs.is_empty() {
        return Err(Error::Input("loss evaluation over an empty corpus".into()));
    }
    let runs: Vec<PairRun> = pairs
        .par_iter()
        .map(|p| run_pair(model, p, false).map(|(r, _)| r))
        .collect::<Result<_>>()?;
    let n = runs.len() as f64;
    let e1 = runs.iter().map(|r| r.eps1).sum::<f64>() / n;
    let e2 = runs.iter().map(|r| r.eps2).sum::<f64>() / n;
    let e = runs.iter().map(|r| r.eps).sum::<f64>() / n;
    Ok((e1, e2, e))
}

/// Mean gate value over real target-token steps (the end-of-sequence
/// step is excluded: its supervision is generation, not copying).
pub fn mean_copy_gate(model: &CoreModel, pairs: &[PreparedPair]) -> Result<f64> {
    let mut total = 0.0;
    let mut count = 0usize;
    let runs: Vec<PairRun> = pairs
        .par_iter()
        .map(|p| run_pair(model, p, false).map(|(r, _)| r))
        .collect::<Result<_>>()?;
    for run in &runs {
        let steps = run.gates.len() - 1;
        total += run.gates[..steps].iter().sum::<f64>();
        count += steps;
    }
    Ok(total / count.max(1) as f64)
}

/// Mean gate value split by the copy supervision of each real step:
/// (mean over copied positions, mean over novel positions).
pub fn gate_means_by_supervision(
    model: &CoreModel,
    pairs: &[PreparedPair],
) -> Result<(f64, f64)> {
    let mut copied = (0.0, 0usize);
    let mut novel = (0.0, 0usize);
    let runs: Vec<PairRun> = pairs
        .par_iter()
        .map(|p| run_pair(model, p, false).map(|(r, _)| r))
        .collect::<Result<_>>()?;
    for (run, pair) in runs.iter().zip(pairs) {
        let steps = run.gates.len() - 1;
        for t in 0..steps {
            if pair.lambda_star[t] > 0.5 {
                copied.0 += run.gates[t];
                copied.1 += 1;
            } else {
                novel.0 += run.gates[t];
                novel.1 += 1;
            }
        }
    }
    Ok((
        copied.0 / copied.1.max(1) as f64,
        novel.0 / novel.1.max(1) as f64,
    ))
}

/// Teacher-forced training over shuffled mini-batches. Per-pair graphs
/// run in parallel inside a batch; gradients merge in pair order, so
/// results are independent of thread scheduling. `sink` runs once per
/// epoch (checkpointing, logging).
pub fn train(
    cfg: &TrainConfig,
    train_corpus: &ParallelCorpus,
    valid_corpus: Option<&ParallelCorpus>,
    table: &AlignmentTable,
    vocabs: &VocabSet,
    sink: &mut dyn FnMut(&EpochMetrics, &CoreModel) -> Result<()>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_corpus.is_empty() {
        return Err(Error::Input("training corpus is empty".into()));
    }
    let dims = ModelDims {
        source_vocab: vocabs.source.len(),
        target_vocab: vocabs.target.len(),
        embedding_dim: cfg.embedding_dim,
        hidden_dim: cfg.hidden_dim,
    };
    let mut model = CoreModel::new(dims, cfg.seed);

    let prepared: Vec<PreparedPair> = train_corpus
        .pairs
        .iter()
        .map(|(s, t)| prepare_pair(s, t, table, vocabs))
        .collect();
    let val_prepared: Option<Vec<PreparedPair>> = valid_corpus
        .filter(|c| !c.is_empty())
        .map(|c| {
            c.pairs
                .iter()
                .map(|(s, t)| prepare_pair(s, t, table, vocabs))
                .collect()
        });

    let mut rng = ChaCha12Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let mut rms = RmsState::new();
    let rms_cfg = RmsConfig::from(cfg);
    let mut metrics = Vec::with_capacity(cfg.epochs);

    let mut order: Vec<usize> = (0..prepared.len()).collect();
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_e1 = 0.0;
        let mut epoch_e2 = 0.0;
        let mut epoch_clamped = 0usize;
        for batch in order.chunks(cfg.batch_size) {
            let results: Vec<(PairRun, Option<GradMap>)> = batch
                .par_iter()
                .map(|&i| run_pair(&model, &prepared[i], true))
                .collect::<Result<_>>()?;
            let inv = 1.0 / batch.len() as f64;
            let mut merged = GradMap::new();
            for (run, grads) in &results {
                epoch_e1 += run.eps1;
                epoch_e2 += run.eps2;
                epoch_clamped += run.clamped_steps;
                for (name, g) in grads.as_ref().expect("grads requested") {
                    match merged.get_mut(name) {
                        None => {
                            merged.insert(name.clone(), g.clone());
                        }
                        Some(acc) => {
                            let data = acc.data_mut();
                            for (a, b) in data.iter_mut().zip(g.data()) {
                                *a += b;
                            }
                        }
                    }
                }
            }
            for g in merged.values_mut() {
                for v in g.data_mut() {
                    *v *= inv;
                }
            }
            rmsprop_update(&mut model.params, &merged, &mut rms, &rms_cfg)?;
        }
        let n = prepared.len() as f64;
        let val_eps = match &val_prepared {
            Some(vp) => Some(evaluate_loss(&model, vp)?.2),
            None => None,
        };
        let m = EpochMetrics {
            epoch,
            train_eps1: epoch_e1 / n,
            train_eps2: epoch_e2 / n,
            val_eps,
            clamped_steps: epoch_clamped,
        };
        sink(&m, &model)?;
        metrics.push(m);
    }
    Ok(TrainOutcome { model, metrics })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::alignment::{prune_top_k, train_alignment};
    use crate::model::ModelParams;
    use crate::ndmath::{finite_diff_check, Tensor};
    use crate::vocab::{build_vocab, frequent_table, Side};

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(str::to_string).collect()
    }

    fn tiny_setup(pairs: &[(&str, &str)]) -> (ParallelCorpus, AlignmentTable, VocabSet) {
        let corpus = ParallelCorpus::new(
            pairs.iter().map(|(s, t)| (toks(s), toks(t))).collect(),
        )
        .unwrap();
        let table = prune_top_k(&train_alignment(&corpus, 5, None).unwrap().table, 10).unwrap();
        let vocabs = VocabSet {
            source: build_vocab(&corpus, Side::Source, 1).unwrap(),
            target: build_vocab(&corpus, Side::Target, 1).unwrap(),
            frequent: frequent_table(&corpus, 5).unwrap(),
        };
        (corpus, table, vocabs)
    }

    #[test]
    fn lambda_supervision_cases() {
        assert_eq!(
            lambda_supervision(&toks("a b c"), &toks("a d")),
            vec![1.0, 0.0]
        );
        assert_eq!(
            lambda_supervision(&toks("a b"), &toks("a b")),
            vec![1.0, 1.0]
        );
        assert_eq!(
            lambda_supervision(&toks("a b"), &toks("x y z")),
            vec![0.0, 0.0, 0.0]
        );
    }

    #[test]
    fn step_loss_hand_case() {
        // single step: p(target) = 0.25, supervision = 1, gate = 0.8
        let mut g = Graph::new();
        let combined = g.leaf(&Tensor::from_vec(vec![0.25, 0.75]));
        let gate = g.leaf(&Tensor::scalar(0.8));
        let dummy = g.leaf(&Tensor::scalar(0.0));
        let step = StepOutput {
            attention: dummy,
            context: dummy,
            state: dummy,
            copy_dist: dummy,
            gen_dist: dummy,
            copy_gate: gate,
            combined,
        };
        let loss = step_loss(&mut g, &[step], &[0], &[1.0]).unwrap();
        let eps1 = g.value(loss.eps1).item();
        let eps2 = g.value(loss.eps2).item();
        let eps = g.value(loss.eps).item();
        assert!((eps1 - -(0.25f64.ln())).abs() < 1e-12);
        assert!((eps2 - -(0.8f64.ln())).abs() < 1e-12);
        assert!((eps - 1.6094379124341003).abs() < 1e-10);
        // exact additivity, bit for bit
        assert_eq!(eps.to_bits(), (eps1 + eps2).to_bits());
        assert_eq!(loss.clamped_steps, 0);
    }

    #[test]
    fn step_loss_gate_entropy_at_half() {
        let mut g = Graph::new();
        let dummy = g.leaf(&Tensor::scalar(0.0));
        let steps: Vec<StepOutput> = (0..3)
            .map(|_| {
                let combined = g.leaf(&Tensor::from_vec(vec![1.0]));
                let gate = g.leaf(&Tensor::scalar(0.5));
                StepOutput {
                    attention: dummy,
                    context: dummy,
                    state: dummy,
                    copy_dist: dummy,
                    gen_dist: dummy,
                    copy_gate: gate,
                    combined,
                }
            })
            .collect();
        let loss = step_loss(&mut g, &steps, &[0, 0, 0], &[1.0, 0.0, 1.0]).unwrap();
        // perfect token probability: eps1 = 0; gate at 0.5: eps2 = 3 ln 2
        assert!(g.value(loss.eps1).item().abs() < 1e-12);
        assert!((g.value(loss.eps2).item() - 3.0 * std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn step_loss_clamps_and_flags_zero_probability() {
        let mut g = Graph::new();
        let dummy = g.leaf(&Tensor::scalar(0.0));
        let combined = g.leaf(&Tensor::from_vec(vec![0.0, 1.0]));
        let gate = g.leaf(&Tensor::scalar(0.5));
        let step = StepOutput {
            attention: dummy,
            context: dummy,
            state: dummy,
            copy_dist: dummy,
            gen_dist: dummy,
            copy_gate: gate,
            combined,
        };
        let loss = step_loss(&mut g, &[step], &[0], &[1.0]).unwrap();
        assert_eq!(loss.clamped_steps, 1);
        let eps1 = g.value(loss.eps1).item();
        assert!(eps1.is_finite());
        assert!((eps1 - -(PROB_FLOOR.ln())).abs() < 1e-6);
    }

    #[test]
    fn gate_loss_is_minimized_at_the_supervision() {
        // frozen-network fixture: token probabilities fixed, only the
        // gate varies; the gate term is smallest when it matches the
        // supervision
        let eps2_at = |gate: f64, sup: f64| -> f64 {
            let mut g = Graph::new();
            let dummy = g.leaf(&Tensor::scalar(0.0));
            let combined = g.leaf(&Tensor::from_vec(vec![1.0]));
            let gate = g.leaf(&Tensor::scalar(gate));
            let step = StepOutput {
                attention: dummy,
                context: dummy,
                state: dummy,
                copy_dist: dummy,
                gen_dist: dummy,
                copy_gate: gate,
                combined,
            };
            let loss = step_loss(&mut g, &[step], &[0], &[sup]).unwrap();
            g.value(loss.eps2).item()
        };
        for sup in [0.0, 1.0] {
            let grid: Vec<f64> = (1..100).map(|i| i as f64 / 100.0).collect();
            let best = grid
                .iter()
                .copied()
                .min_by(|a, b| eps2_at(*a, sup).total_cmp(&eps2_at(*b, sup)))
                .unwrap();
            // minimum sits at the grid point nearest the label
            assert_eq!(best, if sup > 0.5 { 0.99 } else { 0.01 });
            // and strictly improves as the gate approaches the label
            assert!(eps2_at(0.9, sup) < eps2_at(0.5, sup) || sup < 0.5);
            assert!(eps2_at(0.1, sup) < eps2_at(0.5, sup) || sup > 0.5);
        }
    }

    #[test]
    fn rmsprop_hand_case() {
        #[derive(Clone)]
        struct One {
            w: Tensor,
        }
        impl Parameters for One {
            fn visit(&self, f: &mut dyn FnMut(&str, &Tensor)) {
                f("w", &self.w);
            }
            fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor)) {
                f("w", &mut self.w);
            }
        }
        let mut p = One {
            w: Tensor::from_vec(vec![1.0]).with_grad(),
        };
        let mut state = RmsState::new();
        let cfg = RmsConfig {
            learning_rate: 0.05,
            decay: 0.9,
            eps: 1e-6,
            clip_norm: 5.0,
        };
        let mut grads = GradMap::new();
        grads.insert("w".into(), Tensor::from_vec(vec![1.0]));
        rmsprop_update(&mut p, &grads, &mut state, &cfg).unwrap();
        let want_state: f64 = 0.1;
        let want_w = 1.0 - 0.05 / (want_state + 1e-6).sqrt();
        assert!((state.get("w").unwrap()[0] - want_state).abs() < 1e-15);
        assert!((p.w.data()[0] - want_w).abs() < 1e-12);

        // zero gradient: parameters fixed, state decays by the decay rate
        let grads = GradMap::new();
        rmsprop_update(&mut p, &grads, &mut state, &cfg).unwrap();
        assert!((p.w.data()[0] - want_w).abs() < 1e-15);
        assert!((state.get("w").unwrap()[0] - 0.9 * want_state).abs() < 1e-15);
    }

    #[test]
    fn rmsprop_rejects_non_finite_gradients() {
        #[derive(Clone)]
        struct One {
            w: Tensor,
        }
        impl Parameters for One {
            fn visit(&self, f: &mut dyn FnMut(&str, &Tensor)) {
                f("w", &self.w);
            }
            fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor)) {
                f("w", &mut self.w);
            }
        }
        let mut p = One {
            w: Tensor::from_vec(vec![1.0]).with_grad(),
        };
        let mut grads = GradMap::new();
        grads.insert("w".into(), Tensor::from_vec(vec![f64::NAN]));
        let err = rmsprop_update(
            &mut p,
            &grads,
            &mut RmsState::new(),
            &RmsConfig {
                learning_rate: 0.05,
                decay: 0.9,
                eps: 1e-6,
                clip_norm: 5.0,
            },
        )
        .unwrap_err();
        assert!(err.to_string().contains('w'), "{err}");
        assert_eq!(p.w.data()[0], 1.0);
    }

    #[test]
    fn pair_loss_is_independent_of_batch_composition() {
        let (corpus, table, vocabs) = tiny_setup(&[
            ("a b c", "a b"),
            ("c d", "d"),
            ("b d a", "b a d"),
        ]);
        let cfg = TrainConfig {
            embedding_dim: 4,
            hidden_dim: 5,
            batch_size: 3,
            epochs: 1,
            ..TrainConfig::default()
        };
        let dims = ModelDims {
            source_vocab: vocabs.source.len(),
            target_vocab: vocabs.target.len(),
            embedding_dim: cfg.embedding_dim,
            hidden_dim: cfg.hidden_dim,
        };
        let model = CoreModel::new(dims, 9);
        let prepared: Vec<PreparedPair> = corpus
            .pairs
            .iter()
            .map(|(s, t)| prepare_pair(s, t, &table, &vocabs))
            .collect();
        let solo: Vec<f64> = prepared
            .iter()
            .map(|p| run_pair(&model, p, false).unwrap().0.eps)
            .collect();
        let (_, _, batch_mean) = evaluate_loss(&model, &prepared).unwrap();
        let solo_mean = solo.iter().sum::<f64>() / solo.len() as f64;
        assert!((batch_mean - solo_mean).abs() < 1e-9);
    }

    #[test]
    fn full_step_gradients_pass_finite_difference_check() {
        let (_corpus, table, vocabs) = tiny_setup(&[("a b", "a x"), ("b c", "c")]);
        let pairs: Vec<PreparedPair> = [("a b", "a x"), ("b c", "c")]
            .iter()
            .map(|(s, t)| prepare_pair(&toks(s), &toks(t), &table, &vocabs))
            .collect();
        let dims = ModelDims {
            source_vocab: vocabs.source.len(),
            target_vocab: vocabs.target.len(),
            embedding_dim: 3,
            hidden_dim: 4,
        };
        let mut model = CoreModel::new(dims, 123);
        // check at a generic parameter point: the tiny default init range
        // attenuates encoder gradients below the finite-difference noise
        // floor, which says nothing about gradient correctness
        {
            use rand::SeedableRng;
            let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(77);
            model.params.visit_mut(&mut |_, t| {
                *t = Tensor::rand_uniform(t.shape(), -0.5, 0.5, &mut rng).with_grad();
            });
        }
        let loss_fn = |params: &ModelParams| -> Result<(f64, GradMap)> {
            let m = CoreModel::from_params(dims, params.clone());
            let mut total = 0.0;
            let mut merged = GradMap::new();
            for p in &pairs {
                let (run, grads) = run_pair(&m, p, true)?;
                total += run.eps / pairs.len() as f64;
                for (name, g) in grads.unwrap() {
                    let scaled: Vec<f64> =
                        g.data().iter().map(|v| v / pairs.len() as f64).collect();
                    match merged.get_mut(&name) {
                        None => {
                            merged.insert(name, Tensor::new(g.shape().to_vec(), scaled)?);
                        }
                        Some(acc) => {
                            for (a, b) in acc.data_mut().iter_mut().zip(&scaled) {
                                *a += b;
                            }
                        }
                    }
                }
            }
            Ok((total, merged))
        };
        let worst = finite_diff_check(&model.params, loss_fn, 1e-5, 3, 7).unwrap();
        assert!(worst < 1e-3, "max relative error {worst}");
    }

    #[test]
    fn zero_learning_rate_changes_nothing() {
        let (corpus, table, vocabs) = tiny_setup(&[("a b", "a"), ("b c", "c b")]);
        let cfg = TrainConfig {
            embedding_dim: 3,
            hidden_dim: 4,
            learning_rate: 0.0,
            batch_size: 2,
            epochs: 2,
            ..TrainConfig::default()
        };
        let out = train(&cfg, &corpus, None, &table, &vocabs, &mut |_, _| Ok(())).unwrap();
        let fresh = CoreModel::new(out.model.dims, cfg.seed);
        assert_eq!(out.model.params, fresh.params);
    }

    #[test]
    fn training_is_deterministic() {
        let (corpus, table, vocabs) = tiny_setup(&[
            ("a b c", "a c"),
            ("c d", "d"),
            ("b a", "a b"),
            ("d b", "b"),
        ]);
        let cfg = TrainConfig {
            embedding_dim: 3,
            hidden_dim: 4,
            batch_size: 2,
            epochs: 3,
            ..TrainConfig::default()
        };
        let run = || {
            train(&cfg, &corpus, Some(&corpus), &table, &vocabs, &mut |_, _| Ok(())).unwrap()
        };
        let one = run();
        let two = run();
        assert_eq!(one.model.params, two.model.params);
        assert_eq!(one.metrics, two.metrics);
    }

    #[test]
    fn training_loss_decreases_on_tiny_copy_task() {
        let pairs: Vec<(&str, &str)> = vec![("a b", "a b"), ("b c", "b c"), ("c a", "c a")];
        let (corpus, table, vocabs) = tiny_setup(&pairs);
        let cfg = TrainConfig {
            embedding_dim: 8,
            hidden_dim: 12,
            batch_size: 3,
            epochs: 30,
            ..TrainConfig::default()
        };
        let out = train(&cfg, &corpus, None, &table, &vocabs, &mut |_, _| Ok(())).unwrap();
        let first = out.metrics.first().unwrap();
        let last = out.metrics.last().unwrap();
        assert!(
            last.train_eps1 + last.train_eps2 < first.train_eps1 + first.train_eps2,
            "loss did not improve: {first:?} -> {last:?}"
        );
    }
}
