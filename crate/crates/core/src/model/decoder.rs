//! Discriminative decoding: candidate answers are encoded, scored against
//! the context vector and normalized with log-softmax.

use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::encoders::encode_tokens;
use crate::diffcore::{Graph, ParamId, ParamSet, RnnConfig, RnnParams, Shape, Value, Var};
use crate::error::{Error, Result};
use crate::vocab::TokenId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecoderVariant {
    /// `logits_i = context . cand_i`
    Dot,
    /// Gated tanh layer over `context * cand_i` (elementwise).
    Gated,
    /// `logits_i = w . tanh(a (context . cand_i) + b)`
    GatedScalar,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecoderConfig {
    pub variant: DecoderVariant,
    pub candidate_rnn: RnnConfig,
    pub score_width: usize,
}

impl DecoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.score_width == 0 {
            return Err(Error::Config("decoder score_width must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundScores {
    pub logits: Vec<f64>,
    pub log_probs: Vec<f64>,
}

#[derive(Debug, Clone, Copy)]
pub struct ScoreVars {
    pub logits: Var,
    pub log_probs: Var,
}

impl ScoreVars {
    fn from_logits(g: &mut Graph<'_>, logits: Var) -> Result<Self> {
        let log_probs = g.log_softmax(logits)?;
        Ok(ScoreVars { logits, log_probs })
    }

    pub fn read(&self, g: &Graph<'_>) -> RoundScores {
        RoundScores {
            logits: g.value(self.logits).to_vec(),
            log_probs: g.value(self.log_probs).to_vec(),
        }
    }
}

/// `logits_i = w . (tanh(W_g p_i + b_g) * sigmoid(W_s p_i + b_s)) + b` with
/// `p_i = context * cand_i`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GatedParams {
    pub w_g: ParamId,
    pub b_g: ParamId,
    pub w_s: ParamId,
    pub b_s: ParamId,
    pub w: ParamId,
    pub b: ParamId,
}

impl GatedParams {
    pub fn init<R: Rng>(params: &mut ParamSet, prefix: &str, width: usize, rng: &mut R) -> Result<Self> {
        Ok(GatedParams {
            w_g: params.add_weight(format!("{prefix}.w_g"), width, width, rng)?,
            b_g: params.add_bias(format!("{prefix}.b_g"), width)?,
            w_s: params.add_weight(format!("{prefix}.w_s"), width, width, rng)?,
            b_s: params.add_bias(format!("{prefix}.b_s"), width)?,
            w: params.add_weight(format!("{prefix}.w"), 1, width, rng)?,
            // A bias shared by every logit cancels in the log-softmax; it is
            // kept for the stated form but never trained.
            b: params.add(format!("{prefix}.b"), Value::zeros(Shape::vector(1), false))?,
        })
    }
}

/// `logits_i = w . tanh(a s_i + b)` with `s_i = context . cand_i`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GatedScalarParams {
    pub a: ParamId,
    pub b: ParamId,
    pub w: ParamId,
}

impl GatedScalarParams {
    pub fn init<R: Rng>(params: &mut ParamSet, prefix: &str, width: usize, rng: &mut R) -> Result<Self> {
        Ok(GatedScalarParams {
            a: params.add_weight(format!("{prefix}.a"), width, 1, rng)?,
            b: params.add_bias(format!("{prefix}.b"), width)?,
            w: params.add_weight(format!("{prefix}.w"), 1, width, rng)?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScoreParams {
    Dot,
    Gated(GatedParams),
    GatedScalar(GatedScalarParams),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DecoderParams {
    pub candidate_rnn: RnnParams,
    /// Bias-free: a bias shared by all candidate rows would only shift every
    /// dot-product logit by the same amount.
    pub proj: ParamId,
    pub score: ScoreParams,
}

impl DecoderParams {
    pub fn init<R: Rng>(params: &mut ParamSet, cfg: &DecoderConfig, embed_dim: usize, rng: &mut R) -> Result<Self> {
        let candidate_rnn = RnnParams::init(params, "dec.c_rnn", embed_dim, cfg.candidate_rnn, rng)?;
        let proj = params.add_weight("dec.proj.w", cfg.score_width, cfg.candidate_rnn.output_dim(), rng)?;
        let score = match cfg.variant {
            DecoderVariant::Dot => ScoreParams::Dot,
            DecoderVariant::Gated => ScoreParams::Gated(GatedParams::init(params, "dec.gate", cfg.score_width, rng)?),
            DecoderVariant::GatedScalar => {
                ScoreParams::GatedScalar(GatedScalarParams::init(params, "dec.gate", cfg.score_width, rng)?)
            }
        };
        Ok(DecoderParams {
            candidate_rnn,
            proj,
            score,
        })
    }

    pub fn score(&self, g: &mut Graph<'_>, context: Var, cands: Var) -> Result<ScoreVars> {
        match &self.score {
            ScoreParams::Dot => score_dot(g, context, cands),
            ScoreParams::Gated(p) => score_gated(g, context, cands, p),
            ScoreParams::GatedScalar(p) => score_gated_scalar(g, context, cands, p),
        }
    }
}

/// Encodes every candidate and stacks the projected encodings into an
/// `N x E` matrix. Identical candidates share one encoding.
pub fn encode_candidates(
    g: &mut Graph<'_>,
    candidates: &[Vec<TokenId>],
    embedding: Var,
    p: &DecoderParams,
) -> Result<Var> {
    if candidates.len() < 2 {
        return Err(Error::CandidateCount(format!("{} candidates, need at least 2", candidates.len())));
    }
    let mut seen: HashMap<&[TokenId], Var> = HashMap::new();
    let mut rows = Vec::with_capacity(candidates.len());
    for c in candidates {
        let row = match seen.get(c.as_slice()) {
            Some(&v) => v,
            None => {
                let enc = encode_tokens(g, c, embedding, &p.candidate_rnn)?;
                let w = g.param(p.proj);
                let v = g.matvec(w, enc)?;
                seen.insert(c, v);
                v
            }
        };
        rows.push(row);
    }
    g.stack(&rows)
}

pub fn score_dot(g: &mut Graph<'_>, context: Var, cands: Var) -> Result<ScoreVars> {
    let logits = g.matvec(cands, context)?;
    ScoreVars::from_logits(g, logits)
}

pub fn score_gated(g: &mut Graph<'_>, context: Var, cands: Var, p: &GatedParams) -> Result<ScoreVars> {
    let fused = g.mul_row(cands, context)?;
    let (w_g, b_g, w_s, b_s, w, b) = (
        g.param(p.w_g),
        g.param(p.b_g),
        g.param(p.w_s),
        g.param(p.b_s),
        g.param(p.w),
        g.param(p.b),
    );
    let act = g.matmul_nt(fused, w_g)?;
    let act = g.add_row(act, b_g)?;
    let act = g.tanh(act);
    let gate = g.matmul_nt(fused, w_s)?;
    let gate = g.add_row(gate, b_s)?;
    let gate = g.sigmoid(gate);
    let gated = g.mul(act, gate)?;
    let logits = g.matvec(gated, w)?;
    let logits = g.add_scalar(logits, b)?;
    ScoreVars::from_logits(g, logits)
}

pub fn score_gated_scalar(g: &mut Graph<'_>, context: Var, cands: Var, p: &GatedScalarParams) -> Result<ScoreVars> {
    let (a, b, w) = (g.param(p.a), g.param(p.b), g.param(p.w));
    let s = g.matvec(cands, context)?;
    let pre = g.outer(s, a);
    let pre = g.add_row(pre, b)?;
    let act = g.tanh(pre);
    let logits = g.matvec(act, w)?;
    ScoreVars::from_logits(g, logits)
}

/// Negative log-probability of the ground-truth candidate.
pub fn round_loss(g: &mut Graph<'_>, scores: &ScoreVars, gt_index: usize) -> Result<Var> {
    if gt_index >= g.shape(scores.log_probs).len() {
        return Err(Error::GtIndex);
    }
    let lp = g.pick(scores.log_probs, gt_index)?;
    Ok(g.neg(lp))
}
