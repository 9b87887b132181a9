//! Context encoders: late fusion over the concatenated history and a
//! single-hop memory network over per-round history, both with additive
//! query-guided attention over region features.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::ObjectFeatureSet;
use crate::diffcore::{run_rnn, CellKind, Graph, ParamId, ParamSet, RnnConfig, RnnParams, Shape, Var};
use crate::error::{Error, Result};
use crate::vocab::{TokenId, PAD, UNK};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderKind {
    LateFusion,
    MemoryNetwork,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttentionQuery {
    QuestionOnly,
    QuestionPlusCaption,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderConfig {
    pub kind: EncoderKind,
    pub hidden: usize,
    pub layers: usize,
    pub bidirectional: bool,
    pub embed_trainable: bool,
    pub attention_query: AttentionQuery,
    pub output_dim: usize,
}

impl EncoderConfig {
    pub fn late_fusion(hidden: usize) -> Self {
        EncoderConfig {
            kind: EncoderKind::LateFusion,
            hidden,
            layers: 2,
            bidirectional: false,
            embed_trainable: false,
            attention_query: AttentionQuery::QuestionOnly,
            output_dim: hidden,
        }
    }

    pub fn memory_network(hidden: usize) -> Self {
        EncoderConfig {
            kind: EncoderKind::MemoryNetwork,
            hidden,
            layers: 1,
            bidirectional: true,
            embed_trainable: true,
            attention_query: AttentionQuery::QuestionPlusCaption,
            output_dim: hidden,
        }
    }

    /// Late fusion runs LSTMs, the memory network GRUs.
    pub fn cell(&self) -> CellKind {
        match self.kind {
            EncoderKind::LateFusion => CellKind::Lstm,
            EncoderKind::MemoryNetwork => CellKind::Gru,
        }
    }

    pub fn rnn(&self) -> RnnConfig {
        RnnConfig {
            cell: self.cell(),
            hidden: self.hidden,
            layers: self.layers,
            bidirectional: self.bidirectional,
        }
    }

    /// Width of a single sequence encoding.
    pub fn seq_dim(&self) -> usize {
        self.rnn().output_dim()
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.layers == 0 || self.output_dim == 0 {
            return Err(Error::Config("encoder hidden, layers and output_dim must be >= 1".into()));
        }
        Ok(())
    }
}

/// Encoder output plus the attention distributions that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedContext {
    pub vector: Vec<f64>,
    pub attention_weights: Vec<f64>,
    pub memory_weights: Option<Vec<f64>>,
}

/// Graph handles for an encoder forward pass.
#[derive(Debug, Clone, Copy)]
pub struct ContextVars {
    pub vector: Var,
    pub attention_weights: Var,
    pub memory_weights: Option<Var>,
}

impl ContextVars {
    pub fn read(&self, g: &Graph<'_>) -> EncodedContext {
        EncodedContext {
            vector: g.value(self.vector).to_vec(),
            attention_weights: g.value(self.attention_weights).to_vec(),
            memory_weights: self.memory_weights.map(|m| g.value(m).to_vec()),
        }
    }
}

/// Embeds `ids` (PAD stripped, empty becomes a lone UNK) and runs the RNN.
pub fn encode_tokens(g: &mut Graph<'_>, ids: &[TokenId], embedding: Var, rnn: &RnnParams) -> Result<Var> {
    let mut rows = Vec::with_capacity(ids.len());
    for &id in ids.iter().filter(|&&id| id != PAD) {
        rows.push(g.row(embedding, id as usize)?);
    }
    if rows.is_empty() {
        rows.push(g.row(embedding, UNK as usize)?);
    }
    run_rnn(g, &rows, rnn)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AttentionParams {
    pub w_q: ParamId,
    pub w_f: ParamId,
    pub b: ParamId,
    pub w2: ParamId,
}

impl AttentionParams {
    pub fn init<R: Rng>(
        params: &mut ParamSet,
        prefix: &str,
        query_dim: usize,
        d_img: usize,
        width: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(AttentionParams {
            w_q: params.add_weight(format!("{prefix}.w_q"), width, query_dim, rng)?,
            w_f: params.add_weight(format!("{prefix}.w_f"), width, d_img, rng)?,
            b: params.add_bias(format!("{prefix}.b"), width)?,
            w2: params.add_weight(format!("{prefix}.w2"), 1, width, rng)?,
        })
    }
}

/// Returns `(attended, weights)` where
/// `weights = softmax_k(w2 . tanh(W_q q + W_f f_k + b))` and
/// `attended = sum_k weights_k f_k`.
pub fn attend_objects(
    g: &mut Graph<'_>,
    query: Var,
    features: &ObjectFeatureSet,
    p: &AttentionParams,
) -> Result<(Var, Var)> {
    let k = features.num_regions();
    if k == 0 {
        return Err(Error::NoRegions);
    }
    let f = g.constant(features.features.clone(), Shape::matrix(k, features.d_img))?;
    let (w_q, w_f, b, w2) = (g.param(p.w_q), g.param(p.w_f), g.param(p.b), g.param(p.w2));
    let proj = g.matmul_nt(f, w_f)?;
    let qp = g.matvec(w_q, query)?;
    let qp = g.add(qp, b)?;
    let hidden = g.add_row(proj, qp)?;
    let hidden = g.tanh(hidden);
    let scores = g.matvec(hidden, w2)?;
    let weights = g.softmax(scores)?;
    let attended = g.weighted_rows(f, weights)?;
    Ok((attended, weights))
}

/// Linear layer `W x + b`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

impl Linear {
    pub fn init<R: Rng>(params: &mut ParamSet, prefix: &str, out: usize, inp: usize, rng: &mut R) -> Result<Self> {
        Ok(Linear {
            w: params.add_weight(format!("{prefix}.w"), out, inp, rng)?,
            b: params.add_bias(format!("{prefix}.b"), out)?,
        })
    }

    pub fn apply(&self, g: &mut Graph<'_>, x: Var) -> Result<Var> {
        let (w, b) = (g.param(self.w), g.param(self.b));
        let y = g.matvec(w, x)?;
        g.add(y, b)
    }

    pub fn apply_tanh(&self, g: &mut Graph<'_>, x: Var) -> Result<Var> {
        let y = self.apply(g, x)?;
        Ok(g.tanh(y))
    }
}

/// Question-plus-caption image query `tanh(W_g [q ; c] + b_g)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CaptionQuery {
    pub caption_rnn: RnnParams,
    pub fuse: Linear,
}

impl CaptionQuery {
    fn init<R: Rng>(params: &mut ParamSet, prefix: &str, embed_dim: usize, cfg: &EncoderConfig, rng: &mut R) -> Result<Self> {
        let d = cfg.seq_dim();
        Ok(CaptionQuery {
            caption_rnn: RnnParams::init(params, &format!("{prefix}.c_rnn"), embed_dim, cfg.rnn(), rng)?,
            fuse: Linear::init(params, &format!("{prefix}.img_query"), d, 2 * d, rng)?,
        })
    }

    fn query(&self, g: &mut Graph<'_>, q: Var, caption: &[TokenId], embedding: Var) -> Result<Var> {
        let c = encode_tokens(g, caption, embedding, &self.caption_rnn)?;
        let qc = g.concat(&[q, c])?;
        self.fuse.apply_tanh(g, qc)
    }
}

fn image_query<R: Rng>(
    params: &mut ParamSet,
    prefix: &str,
    embed_dim: usize,
    cfg: &EncoderConfig,
    rng: &mut R,
) -> Result<Option<CaptionQuery>> {
    match cfg.attention_query {
        AttentionQuery::QuestionOnly => Ok(None),
        AttentionQuery::QuestionPlusCaption => Ok(Some(CaptionQuery::init(params, prefix, embed_dim, cfg, rng)?)),
    }
}

/// Inputs shared by both encoder families for one round.
#[derive(Debug, Clone, Copy)]
pub struct EncoderInput<'a> {
    pub question: &'a [TokenId],
    pub caption: &'a [TokenId],
    /// Caption and all earlier QA pairs, flattened (late fusion).
    pub history_concat: &'a [TokenId],
    /// Caption, then one entry per earlier QA pair (memory network).
    pub history_rounds: &'a [Vec<TokenId>],
    pub features: &'a ObjectFeatureSet,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LfParams {
    pub question_rnn: RnnParams,
    pub history_rnn: RnnParams,
    pub image_query: Option<CaptionQuery>,
    pub attention: AttentionParams,
    pub fuse: Linear,
}

impl LfParams {
    pub fn init<R: Rng>(
        params: &mut ParamSet,
        cfg: &EncoderConfig,
        embed_dim: usize,
        d_img: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let d = cfg.seq_dim();
        Ok(LfParams {
            question_rnn: RnnParams::init(params, "lf.q_rnn", embed_dim, cfg.rnn(), rng)?,
            history_rnn: RnnParams::init(params, "lf.h_rnn", embed_dim, cfg.rnn(), rng)?,
            image_query: image_query(params, "lf", embed_dim, cfg, rng)?,
            attention: AttentionParams::init(params, "lf.attn", d, d_img, cfg.hidden, rng)?,
            fuse: Linear::init(params, "lf.fuse", cfg.output_dim, 2 * d + d_img, rng)?,
        })
    }
}

/// `tanh(W [q ; h ; v] + b)` with `q`, `h` the question and concatenated
/// history encodings and `v` the attended image feature.
pub fn lf_encode(g: &mut Graph<'_>, input: &EncoderInput<'_>, embedding: Var, p: &LfParams) -> Result<ContextVars> {
    let q = encode_tokens(g, input.question, embedding, &p.question_rnn)?;
    let h = encode_tokens(g, input.history_concat, embedding, &p.history_rnn)?;
    let query = match &p.image_query {
        None => q,
        Some(cq) => cq.query(g, q, input.caption, embedding)?,
    };
    let (v, attention_weights) = attend_objects(g, query, input.features, &p.attention)?;
    let joint = g.concat(&[q, h, v])?;
    let vector = p.fuse.apply_tanh(g, joint)?;
    Ok(ContextVars {
        vector,
        attention_weights,
        memory_weights: None,
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MnParams {
    pub question_rnn: RnnParams,
    pub memory_rnn: RnnParams,
    pub memory_proj: Linear,
    pub image_query: Option<CaptionQuery>,
    pub attention: AttentionParams,
    pub fuse: Linear,
}

impl MnParams {
    pub fn init<R: Rng>(
        params: &mut ParamSet,
        cfg: &EncoderConfig,
        embed_dim: usize,
        d_img: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let d = cfg.seq_dim();
        Ok(MnParams {
            question_rnn: RnnParams::init(params, "mn.q_rnn", embed_dim, cfg.rnn(), rng)?,
            memory_rnn: RnnParams::init(params, "mn.m_rnn", embed_dim, cfg.rnn(), rng)?,
            memory_proj: Linear::init(params, "mn.m_proj", d, d, rng)?,
            image_query: image_query(params, "mn", embed_dim, cfg, rng)?,
            attention: AttentionParams::init(params, "mn.attn", d, d_img, cfg.hidden, rng)?,
            fuse: Linear::init(params, "mn.fuse", cfg.output_dim, 2 * d + d_img, rng)?,
        })
    }
}

/// Single-hop memory read: memories `m_j` are projected per-round history
/// encodings, `alpha = softmax(q . m_j / sqrt(d))`, `r = sum_j alpha_j m_j`,
/// and the output is `tanh(W [q ; q + r ; v] + b)`.
pub fn mn_encode(g: &mut Graph<'_>, input: &EncoderInput<'_>, embedding: Var, p: &MnParams) -> Result<ContextVars> {
    if input.history_rounds.is_empty() {
        return Err(Error::EmptySequence);
    }
    let q = encode_tokens(g, input.question, embedding, &p.question_rnn)?;
    let mut memories = Vec::with_capacity(input.history_rounds.len());
    for round in input.history_rounds {
        let m = encode_tokens(g, round, embedding, &p.memory_rnn)?;
        memories.push(p.memory_proj.apply(g, m)?);
    }
    let mem = g.stack(&memories)?;
    let d = g.shape(q).len() as f64;
    let scores = g.matvec(mem, q)?;
    let scores = g.scale(scores, 1.0 / d.sqrt());
    let memory_weights = g.softmax(scores)?;
    let read = g.weighted_rows(mem, memory_weights)?;

    let query = match &p.image_query {
        None => q,
        Some(cq) => cq.query(g, q, input.caption, embedding)?,
    };
    let (v, attention_weights) = attend_objects(g, query, input.features, &p.attention)?;
    let q_plus_r = g.add(q, read)?;
    let joint = g.concat(&[q, q_plus_r, v])?;
    let vector = p.fuse.apply_tanh(g, joint)?;
    Ok(ContextVars {
        vector,
        attention_weights,
        memory_weights: Some(memory_weights),
    })
}
