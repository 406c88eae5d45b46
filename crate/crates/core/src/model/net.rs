//! The network: bidirectional GRU encoder, additive attention, GRU
//! decoder, and the three output heads (copy distribution over source
//! positions, restricted generative distribution, copy/rewrite gate).
//!
//! All forward passes run on a caller-supplied [`Graph`]; training keeps
//! one graph per pair and backpropagates through it, decoding uses a
//! fresh throwaway graph per step.

use std::collections::BTreeMap;

use crate::ndmath::{Graph, NdError, NodeId, Tensor, DROP_SLOT};
use crate::vocab::{RestrictedVocab, Vocabulary};
use crate::{Error, Result};

use super::params::{GruParams, ModelDims, ModelParams};

/// Node handles for every parameter bound into one graph.
pub struct ParamBind {
    pub source_embed: NodeId,
    pub target_embed: NodeId,
    pub encoder_fwd: GruBind,
    pub encoder_bwd: GruBind,
    pub decoder: GruBind,
    pub att_state_w: NodeId,
    pub att_enc_w: NodeId,
    pub att_score_v: NodeId,
    pub readout_w: NodeId,
    pub readout_b: NodeId,
    pub output_rows: NodeId,
    pub mode_w: NodeId,
    pub init_w: NodeId,
}

pub struct GruBind {
    pub wx_update: NodeId,
    pub wh_update: NodeId,
    pub b_update: NodeId,
    pub wx_reset: NodeId,
    pub wh_reset: NodeId,
    pub b_reset: NodeId,
    pub wx_cand: NodeId,
    pub wh_cand: NodeId,
    pub b_cand: NodeId,
}

fn bind_gru(g: &mut Graph, prefix: &str, p: &GruParams) -> GruBind {
    GruBind {
        wx_update: g.param(&format!("{prefix}.wx_update"), &p.wx_update),
        wh_update: g.param(&format!("{prefix}.wh_update"), &p.wh_update),
        b_update: g.param(&format!("{prefix}.b_update"), &p.b_update),
        wx_reset: g.param(&format!("{prefix}.wx_reset"), &p.wx_reset),
        wh_reset: g.param(&format!("{prefix}.wh_reset"), &p.wh_reset),
        b_reset: g.param(&format!("{prefix}.b_reset"), &p.b_reset),
        wx_cand: g.param(&format!("{prefix}.wx_cand"), &p.wx_cand),
        wh_cand: g.param(&format!("{prefix}.wh_cand"), &p.wh_cand),
        b_cand: g.param(&format!("{prefix}.b_cand"), &p.b_cand),
    }
}

/// Encoded source sequence within one graph.
#[derive(Debug)]
pub struct EncodedSource {
    /// [n x 2H]; padded positions carry zero rows.
    pub states: NodeId,
    pub ids: Vec<u32>,
    pub tokens: Vec<String>,
    pub mask: Vec<bool>,
    /// Backward-direction state at position 1, seed of the decoder init.
    bwd_first: NodeId,
}

/// Copy-support layout of a source sequence: the distinct unmasked
/// surface tokens (sorted) and, per position, which distinct slot the
/// attention mass at that position belongs to.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceMeta {
    pub distinct: Vec<String>,
    pub pos_slots: Vec<usize>,
}

impl SourceMeta {
    pub fn build(tokens: &[String], mask: &[bool]) -> Self {
        let mut distinct: Vec<String> = tokens
            .iter()
            .zip(mask)
            .filter(|(_, &m)| m)
            .map(|(t, _)| t.clone())
            .collect();
        distinct.sort();
        distinct.dedup();
        let pos_slots = tokens
            .iter()
            .zip(mask)
            .map(|(t, &m)| {
                if m {
                    distinct.binary_search(t).expect("token present")
                } else {
                    DROP_SLOT
                }
            })
            .collect();
        SourceMeta {
            distinct,
            pos_slots,
        }
    }
}

/// One entry of the combined output support.
#[derive(Debug, Clone, PartialEq)]
pub struct UnionEntry {
    pub token: String,
    /// Id in the full target vocabulary, when the surface string is in it.
    pub target_id: Option<u32>,
    pub in_source: bool,
    pub in_restricted: bool,
}

/// Output support of the combined distribution: distinct source surface
/// tokens unioned with the restricted vocabulary's tokens, matched by
/// surface string and sorted lexicographically.
#[derive(Debug, Clone, PartialEq)]
pub struct UnionSupport {
    pub entries: Vec<UnionEntry>,
    /// distinct-source slot -> union index
    pub copy_slots: Vec<usize>,
    /// restricted-vocab slot -> union index
    pub gen_slots: Vec<usize>,
}

impl UnionSupport {
    pub fn build(meta: &SourceMeta, vg: &RestrictedVocab, target: &Vocabulary) -> Self {
        let mut by_token: BTreeMap<String, UnionEntry> = BTreeMap::new();
        for tok in &meta.distinct {
            by_token.insert(
                tok.clone(),
                UnionEntry {
                    token: tok.clone(),
                    target_id: target.id(tok),
                    in_source: true,
                    in_restricted: false,
                },
            );
        }
        for &id in vg.ids() {
            let tok = target.token(id).to_string();
            by_token
                .entry(tok.clone())
                .or_insert(UnionEntry {
                    token: tok,
                    target_id: Some(id),
                    in_source: false,
                    in_restricted: true,
                })
                .in_restricted = true;
        }
        let entries: Vec<UnionEntry> = by_token.into_values().collect();
        let index_of = |tok: &str| -> usize {
            entries
                .binary_search_by(|e| e.token.as_str().cmp(tok))
                .expect("member token")
        };
        let copy_slots = meta.distinct.iter().map(|t| index_of(t)).collect();
        let gen_slots = vg
            .ids()
            .iter()
            .map(|&id| index_of(target.token(id)))
            .collect();
        UnionSupport {
            entries,
            copy_slots,
            gen_slots,
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn index_of(&self, token: &str) -> Option<usize> {
        self.entries
            .binary_search_by(|e| e.token.as_str().cmp(token))
            .ok()
    }
}

/// Materialized encoder output, independent of any graph. Decoding
/// re-binds these values into a small throwaway graph per step.
#[derive(Debug, Clone)]
pub struct EncodedValues {
    pub states: Tensor,
    pub initial_state: Tensor,
    pub ids: Vec<u32>,
    pub tokens: Vec<String>,
    pub mask: Vec<bool>,
}

/// Materialized outputs of one decoder step, aligned to a
/// [`UnionSupport`]: combined probabilities plus the raw (ungated)
/// per-entry masses of each head.
#[derive(Debug, Clone)]
pub struct StepValues {
    pub state: Tensor,
    pub copy_gate: f64,
    pub attention: Vec<f64>,
    pub combined: Vec<f64>,
    pub copy_mass: Vec<f64>,
    pub gen_mass: Vec<f64>,
}

/// Node handles produced by one decoder step.
pub struct StepOutput {
    /// Attention weights over source positions, [n].
    pub attention: NodeId,
    /// Attention-weighted context, [2H].
    pub context: NodeId,
    /// Decoder state after this step, [H].
    pub state: NodeId,
    /// Copy distribution over distinct source tokens.
    pub copy_dist: NodeId,
    /// Generative distribution over the restricted vocabulary.
    pub gen_dist: NodeId,
    /// Probability of the copying mode, [1].
    pub copy_gate: NodeId,
    /// Combined distribution over the union support.
    pub combined: NodeId,
}

pub struct CoreModel {
    pub dims: ModelDims,
    pub params: ModelParams,
}

impl CoreModel {
    pub fn new(dims: ModelDims, seed: u64) -> Self {
        CoreModel {
            params: ModelParams::init(&dims, seed),
            dims,
        }
    }

    pub fn from_params(dims: ModelDims, params: ModelParams) -> Self {
        CoreModel { dims, params }
    }

    pub fn bind(&self, g: &mut Graph) -> ParamBind {
        let p = &self.params;
        ParamBind {
            source_embed: g.param("source_embed", &p.source_embed),
            target_embed: g.param("target_embed", &p.target_embed),
            encoder_fwd: bind_gru(g, "encoder_fwd", &p.encoder_fwd),
            encoder_bwd: bind_gru(g, "encoder_bwd", &p.encoder_bwd),
            decoder: bind_gru(g, "decoder", &p.decoder),
            att_state_w: g.param("att_state_w", &p.att_state_w),
            att_enc_w: g.param("att_enc_w", &p.att_enc_w),
            att_score_v: g.param("att_score_v", &p.att_score_v),
            readout_w: g.param("readout_w", &p.readout_w),
            readout_b: g.param("readout_b", &p.readout_b),
            output_rows: g.param("output_rows", &p.output_rows),
            mode_w: g.param("mode_w", &p.mode_w),
            init_w: g.param("init_w", &p.init_w),
        }
    }

    fn gru_step(&self, g: &mut Graph, p: &GruBind, x: NodeId, h: NodeId) -> Result<NodeId> {
        let zx = g.matmul(p.wx_update, x)?;
        let zh = g.matmul(p.wh_update, h)?;
        let zs = g.add(zx, zh)?;
        let zb = g.add(zs, p.b_update)?;
        let update = g.sigmoid(zb);

        let rx = g.matmul(p.wx_reset, x)?;
        let rh = g.matmul(p.wh_reset, h)?;
        let rs = g.add(rx, rh)?;
        let rb = g.add(rs, p.b_reset)?;
        let reset = g.sigmoid(rb);

        let gated = g.mul(reset, h)?;
        let cx = g.matmul(p.wx_cand, x)?;
        let ch = g.matmul(p.wh_cand, gated)?;
        let cs = g.add(cx, ch)?;
        let cb = g.add(cs, p.b_cand)?;
        let cand = g.tanh(cb);

        let keep_gate = g.affine(update, -1.0, 1.0);
        let kept = g.mul(keep_gate, h)?;
        let fresh = g.mul(update, cand)?;
        Ok(g.add(kept, fresh)?)
    }

    /// Run both encoder directions over the unpadded prefix and stack
    /// the concatenated states; padded positions carry zero rows.
    pub fn encode(
        &self,
        g: &mut Graph,
        bind: &ParamBind,
        ids: &[u32],
        tokens: &[String],
        mask: &[bool],
    ) -> Result<EncodedSource> {
        let n = ids.len();
        if n == 0 || tokens.len() != n || mask.len() != n {
            return Err(Error::Input(
                "encode: ids, tokens and mask must be equal-length and non-empty".into(),
            ));
        }
        let prefix = mask.iter().take_while(|&&m| m).count();
        if prefix == 0 || mask[prefix..].iter().any(|&m| m) {
            return Err(Error::Numeric(NdError::Contract(
                "encode: mask must be a non-empty prefix of unpadded positions".into(),
            )));
        }
        for &id in &ids[..prefix] {
            if id as usize >= self.dims.source_vocab {
                return Err(Error::Numeric(NdError::Contract(format!(
                    "encode: source id {id} out of vocabulary range {}",
                    self.dims.source_vocab
                ))));
            }
        }

        let h = self.dims.hidden_dim;
        let embeds: Vec<NodeId> = ids[..prefix]
            .iter()
            .map(|&id| g.row(bind.source_embed, id as usize))
            .collect::<std::result::Result<_, _>>()?;

        let zero_h = Tensor::zeros(&[h]);
        let mut fwd = Vec::with_capacity(prefix);
        let mut state = g.leaf(&zero_h);
        for &x in &embeds {
            state = self.gru_step(g, &bind.encoder_fwd, x, state)?;
            fwd.push(state);
        }
        let mut bwd = vec![NodeId(0); prefix];
        let mut state = g.leaf(&zero_h);
        for tau in (0..prefix).rev() {
            state = self.gru_step(g, &bind.encoder_bwd, embeds[tau], state)?;
            bwd[tau] = state;
        }

        let zero_row = Tensor::zeros(&[2 * h]);
        let mut rows = Vec::with_capacity(n);
        for tau in 0..n {
            if tau < prefix {
                rows.push(g.concat(&[fwd[tau], bwd[tau]])?);
            } else {
                rows.push(g.leaf(&zero_row));
            }
        }
        let states = g.stack_rows(&rows)?;
        Ok(EncodedSource {
            states,
            ids: ids.to_vec(),
            tokens: tokens.to_vec(),
            mask: mask.to_vec(),
            bwd_first: bwd[0],
        })
    }

    /// Initial decoder state from the backward encoder state at
    /// position 1.
    pub fn init_state(&self, g: &mut Graph, bind: &ParamBind, enc: &EncodedSource) -> Result<NodeId> {
        let proj = g.matmul(bind.init_w, enc.bwd_first)?;
        Ok(g.tanh(proj))
    }

    /// Additive attention over encoder states: weights and the weighted
    /// context vector.
    pub fn attend(
        &self,
        g: &mut Graph,
        bind: &ParamBind,
        s_prev: NodeId,
        enc: &EncodedSource,
    ) -> Result<(NodeId, NodeId)> {
        let proj_state = g.matmul(bind.att_state_w, s_prev)?;
        let proj_enc = g.matmul(enc.states, bind.att_enc_w)?;
        let summed = g.add(proj_enc, proj_state)?;
        let act = g.tanh(summed);
        let scores = g.matmul(act, bind.att_score_v)?;
        let attention = g.softmax_masked(scores, &enc.mask)?;
        let context = g.matmul(attention, enc.states)?;
        Ok((attention, context))
    }

    /// One decoder GRU step on [embedding(y_prev); context].
    pub fn decode_step(
        &self,
        g: &mut Graph,
        bind: &ParamBind,
        y_prev: u32,
        s_prev: NodeId,
        context: NodeId,
    ) -> Result<NodeId> {
        self.check_target_id(y_prev)?;
        let emb = g.row(bind.target_embed, y_prev as usize)?;
        let x = g.concat(&[emb, context])?;
        self.gru_step(g, &bind.decoder, x, s_prev)
    }

    fn check_target_id(&self, id: u32) -> Result<()> {
        if id as usize >= self.dims.target_vocab {
            return Err(Error::Numeric(NdError::Contract(format!(
                "target id {id} out of vocabulary range {}",
                self.dims.target_vocab
            ))));
        }
        Ok(())
    }

    /// Attention mass re-grouped per distinct surface token; repeated
    /// source tokens accumulate.
    pub fn copy_distribution(
        &self,
        g: &mut Graph,
        attention: NodeId,
        meta: &SourceMeta,
    ) -> Result<NodeId> {
        Ok(g.scatter_add(attention, &meta.pos_slots, meta.distinct.len())?)
    }

    /// Softmax over exactly the restricted vocabulary's output rows.
    pub fn generate_distribution(
        &self,
        g: &mut Graph,
        bind: &ParamBind,
        y_prev: u32,
        state: NodeId,
        context: NodeId,
        vg: &RestrictedVocab,
    ) -> Result<NodeId> {
        if vg.is_empty() {
            return Err(Error::Input("restricted vocabulary is empty".into()));
        }
        self.check_target_id(y_prev)?;
        let emb = g.row(bind.target_embed, y_prev as usize)?;
        let readout_in = g.concat(&[emb, state, context])?;
        let proj = g.matmul(bind.readout_w, readout_in)?;
        let readout = g.add(proj, bind.readout_b)?;
        let ids: Vec<usize> = vg.ids().iter().map(|&i| i as usize).collect();
        let rows = g.gather_rows(bind.output_rows, &ids)?;
        let logits = g.matmul(rows, readout)?;
        Ok(g.softmax_masked(logits, &vec![true; ids.len()])?)
    }

    /// Probability that this step copies rather than generates.
    pub fn predict_mode(&self, g: &mut Graph, bind: &ParamBind, state: NodeId) -> Result<NodeId> {
        let score = g.dot(bind.mode_w, state)?;
        Ok(g.sigmoid(score))
    }

    /// Gate-weighted mixture of the two distributions on the union
    /// support; tokens reachable both ways have their masses merged.
    pub fn combine(
        &self,
        g: &mut Graph,
        copy_gate: NodeId,
        copy_dist: NodeId,
        gen_dist: NodeId,
        support: &UnionSupport,
    ) -> Result<NodeId> {
        let weighted_copy = g.mul_scalar(copy_dist, copy_gate)?;
        let gen_gate = g.affine(copy_gate, -1.0, 1.0);
        let weighted_gen = g.mul_scalar(gen_dist, gen_gate)?;
        let from_copy = g.scatter_add(weighted_copy, &support.copy_slots, support.len())?;
        let from_gen = g.scatter_add(weighted_gen, &support.gen_slots, support.len())?;
        Ok(g.add(from_copy, from_gen)?)
    }

    /// Encode once and materialize the states and the initial decoder
    /// state as plain tensors.
    pub fn encode_to_values(
        &self,
        ids: &[u32],
        tokens: &[String],
        mask: &[bool],
    ) -> Result<EncodedValues> {
        let mut g = Graph::new();
        let bind = self.bind(&mut g);
        let enc = self.encode(&mut g, &bind, ids, tokens, mask)?;
        let s0 = self.init_state(&mut g, &bind, &enc)?;
        Ok(EncodedValues {
            states: g.value(enc.states).clone(),
            initial_state: g.value(s0).clone(),
            ids: ids.to_vec(),
            tokens: tokens.to_vec(),
            mask: mask.to_vec(),
        })
    }

    /// One inference step on a fresh graph over pre-encoded values; no
    /// gradients, constant memory per step.
    #[allow(clippy::too_many_arguments)]
    pub fn step_values(
        &self,
        enc: &EncodedValues,
        meta: &SourceMeta,
        support: &UnionSupport,
        vg: &RestrictedVocab,
        y_prev: u32,
        s_prev: &Tensor,
    ) -> Result<StepValues> {
        let mut g = Graph::new();
        let bind = self.bind(&mut g);
        let states = g.leaf(&enc.states);
        let bwd_unused = g.leaf(&Tensor::zeros(&[self.dims.hidden_dim]));
        let encoded = EncodedSource {
            states,
            ids: enc.ids.clone(),
            tokens: enc.tokens.clone(),
            mask: enc.mask.clone(),
            bwd_first: bwd_unused,
        };
        let sp = g.leaf(s_prev);
        let out = self.step(&mut g, &bind, &encoded, meta, support, vg, y_prev, sp)?;

        let mut copy_mass = vec![0.0; support.len()];
        for (slot, &u) in support.copy_slots.iter().enumerate() {
            copy_mass[u] += g.value(out.copy_dist).data()[slot];
        }
        let mut gen_mass = vec![0.0; support.len()];
        for (slot, &u) in support.gen_slots.iter().enumerate() {
            gen_mass[u] += g.value(out.gen_dist).data()[slot];
        }
        Ok(StepValues {
            state: g.value(out.state).clone(),
            copy_gate: g.value(out.copy_gate).item(),
            attention: g.value(out.attention).data().to_vec(),
            combined: g.value(out.combined).data().to_vec(),
            copy_mass,
            gen_mass,
        })
    }

    /// Full decoder step: attention, state update, all three heads, and
    /// the combined distribution.
    #[allow(clippy::too_many_arguments)]
    pub fn step(
        &self,
        g: &mut Graph,
        bind: &ParamBind,
        enc: &EncodedSource,
        meta: &SourceMeta,
        support: &UnionSupport,
        vg: &RestrictedVocab,
        y_prev: u32,
        s_prev: NodeId,
    ) -> Result<StepOutput> {
        let (attention, context) = self.attend(g, bind, s_prev, enc)?;
        let state = self.decode_step(g, bind, y_prev, s_prev, context)?;
        let copy_dist = self.copy_distribution(g, attention, meta)?;
        let gen_dist = self.generate_distribution(g, bind, y_prev, state, context, vg)?;
        let copy_gate = self.predict_mode(g, bind, state)?;
        let combined = self.combine(g, copy_gate, copy_dist, gen_dist, support)?;
        Ok(StepOutput {
            attention,
            context,
            state,
            copy_dist,
            gen_dist,
            copy_gate,
            combined,
        })
    }
}
