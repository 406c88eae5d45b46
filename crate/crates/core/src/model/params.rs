use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use crate::ndmath::{Parameters, Tensor};

/// Shape configuration of the network. Attention and readout widths
/// follow the hidden dimension.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelDims {
    pub source_vocab: usize,
    pub target_vocab: usize,
    pub embedding_dim: usize,
    pub hidden_dim: usize,
}

impl ModelDims {
    /// Encoder states are bidirectional concatenations.
    pub fn encoder_state_dim(&self) -> usize {
        2 * self.hidden_dim
    }

    /// Decoder GRU input: previous-token embedding plus attention context.
    pub fn decoder_input_dim(&self) -> usize {
        self.embedding_dim + self.encoder_state_dim()
    }

    /// Readout input: previous-token embedding, decoder state, context.
    pub fn readout_input_dim(&self) -> usize {
        self.embedding_dim + self.hidden_dim + self.encoder_state_dim()
    }
}

const INIT_RANGE: f64 = 0.08;

/// Gate weights for one GRU: per gate, an input matrix, a state matrix
/// and a bias.
#[derive(Debug, Clone, PartialEq)]
pub struct GruParams {
    pub wx_update: Tensor,
    pub wh_update: Tensor,
    pub b_update: Tensor,
    pub wx_reset: Tensor,
    pub wh_reset: Tensor,
    pub b_reset: Tensor,
    pub wx_cand: Tensor,
    pub wh_cand: Tensor,
    pub b_cand: Tensor,
}

impl GruParams {
    fn new(input_dim: usize, hidden_dim: usize, rng: &mut ChaCha12Rng) -> Self {
        let mat = |r: usize, c: usize, rng: &mut ChaCha12Rng| {
            Tensor::rand_uniform(&[r, c], -INIT_RANGE, INIT_RANGE, rng).with_grad()
        };
        let bias = |n: usize| Tensor::zeros(&[n]).with_grad();
        GruParams {
            wx_update: mat(hidden_dim, input_dim, rng),
            wh_update: mat(hidden_dim, hidden_dim, rng),
            b_update: bias(hidden_dim),
            wx_reset: mat(hidden_dim, input_dim, rng),
            wh_reset: mat(hidden_dim, hidden_dim, rng),
            b_reset: bias(hidden_dim),
            wx_cand: mat(hidden_dim, input_dim, rng),
            wh_cand: mat(hidden_dim, hidden_dim, rng),
            b_cand: bias(hidden_dim),
        }
    }

    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        f(&format!("{prefix}.wx_update"), &self.wx_update);
        f(&format!("{prefix}.wh_update"), &self.wh_update);
        f(&format!("{prefix}.b_update"), &self.b_update);
        f(&format!("{prefix}.wx_reset"), &self.wx_reset);
        f(&format!("{prefix}.wh_reset"), &self.wh_reset);
        f(&format!("{prefix}.b_reset"), &self.b_reset);
        f(&format!("{prefix}.wx_cand"), &self.wx_cand);
        f(&format!("{prefix}.wh_cand"), &self.wh_cand);
        f(&format!("{prefix}.b_cand"), &self.b_cand);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        f(&format!("{prefix}.wx_update"), &mut self.wx_update);
        f(&format!("{prefix}.wh_update"), &mut self.wh_update);
        f(&format!("{prefix}.b_update"), &mut self.b_update);
        f(&format!("{prefix}.wx_reset"), &mut self.wx_reset);
        f(&format!("{prefix}.wh_reset"), &mut self.wh_reset);
        f(&format!("{prefix}.b_reset"), &mut self.b_reset);
        f(&format!("{prefix}.wx_cand"), &mut self.wx_cand);
        f(&format!("{prefix}.wh_cand"), &mut self.wh_cand);
        f(&format!("{prefix}.b_cand"), &mut self.b_cand);
    }
}

/// Every trainable tensor of the network. Matrices initialize
/// uniform(-0.08, 0.08); biases start at zero.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub source_embed: Tensor,
    pub target_embed: Tensor,
    pub encoder_fwd: GruParams,
    pub encoder_bwd: GruParams,
    pub decoder: GruParams,
    /// Attention projection of the previous decoder state.
    pub att_state_w: Tensor,
    /// Attention projection of encoder states, stored [2H x H] so the
    /// whole state matrix multiplies through without a transpose.
    pub att_enc_w: Tensor,
    pub att_score_v: Tensor,
    /// Affine readout feeding the output rows.
    pub readout_w: Tensor,
    pub readout_b: Tensor,
    /// One row per target-vocabulary word; the restricted softmax
    /// gathers only the rows it needs.
    pub output_rows: Tensor,
    /// Weights of the copy/rewrite mode gate.
    pub mode_w: Tensor,
    /// Maps the backward encoder state at position 1 to the initial
    /// decoder state.
    pub init_w: Tensor,
}

impl ModelParams {
    pub fn init(dims: &ModelDims, seed: u64) -> Self {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let e = dims.embedding_dim;
        let h = dims.hidden_dim;
        let mat = |r: usize, c: usize, rng: &mut ChaCha12Rng| {
            Tensor::rand_uniform(&[r, c], -INIT_RANGE, INIT_RANGE, rng).with_grad()
        };
        let vec = |n: usize, rng: &mut ChaCha12Rng| {
            Tensor::rand_uniform(&[n], -INIT_RANGE, INIT_RANGE, rng).with_grad()
        };
        ModelParams {
            source_embed: mat(dims.source_vocab, e, &mut rng),
            target_embed: mat(dims.target_vocab, e, &mut rng),
            encoder_fwd: GruParams::new(e, h, &mut rng),
            encoder_bwd: GruParams::new(e, h, &mut rng),
            decoder: GruParams::new(dims.decoder_input_dim(), h, &mut rng),
            att_state_w: mat(h, h, &mut rng),
            att_enc_w: mat(dims.encoder_state_dim(), h, &mut rng),
            att_score_v: vec(h, &mut rng),
            readout_w: mat(h, dims.readout_input_dim(), &mut rng),
            readout_b: Tensor::zeros(&[h]).with_grad(),
            output_rows: mat(dims.target_vocab, h, &mut rng),
            mode_w: vec(h, &mut rng),
            init_w: mat(h, h, &mut rng),
        }
    }

    pub fn all_finite(&self) -> bool {
        let mut ok = true;
        self.visit(&mut |_, t| ok &= t.is_finite());
        ok
    }
}

impl Parameters for ModelParams {
    fn visit(&self, f: &mut dyn FnMut(&str, &Tensor)) {
        f("source_embed", &self.source_embed);
        f("target_embed", &self.target_embed);
        self.encoder_fwd.visit("encoder_fwd", f);
        self.encoder_bwd.visit("encoder_bwd", f);
        self.decoder.visit("decoder", f);
        f("att_state_w", &self.att_state_w);
        f("att_enc_w", &self.att_enc_w);
        f("att_score_v", &self.att_score_v);
        f("readout_w", &self.readout_w);
        f("readout_b", &self.readout_b);
        f("output_rows", &self.output_rows);
        f("mode_w", &self.mode_w);
        f("init_w", &self.init_w);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor)) {
        f("source_embed", &mut self.source_embed);
        f("target_embed", &mut self.target_embed);
        self.encoder_fwd.visit_mut("encoder_fwd", f);
        self.encoder_bwd.visit_mut("encoder_bwd", f);
        self.decoder.visit_mut("decoder", f);
        f("att_state_w", &mut self.att_state_w);
        f("att_enc_w", &mut self.att_enc_w);
        f("att_score_v", &mut self.att_score_v);
        f("readout_w", &mut self.readout_w);
        f("readout_b", &mut self.readout_b);
        f("output_rows", &mut self.output_rows);
        f("mode_w", &mut self.mode_w);
        f("init_w", &mut self.init_w);
    }
}
