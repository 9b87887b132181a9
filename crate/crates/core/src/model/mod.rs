//! The three ranking models: late fusion (`lf_rcnn`), memory network
//! (`mn_rcnn`) and memory network with gated scoring (`mn_rcnn_wt`).

pub mod decoder;
pub mod encoders;

pub use decoder::{
    encode_candidates, round_loss, score_dot, score_gated, score_gated_scalar, DecoderConfig, DecoderParams,
    DecoderVariant, GatedParams, GatedScalarParams, RoundScores, ScoreParams, ScoreVars,
};
pub use encoders::{
    attend_objects, encode_tokens, lf_encode, mn_encode, AttentionParams, AttentionQuery, ContextVars,
    EncodedContext, EncoderConfig, EncoderInput, EncoderKind, LfParams, Linear, MnParams,
};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Dialog, ObjectFeatureSet};
use crate::diffcore::{Graph, ParamId, ParamSet, Shape, Value, Var};
use crate::error::{Error, Result};
use crate::vocab::EmbeddingInit;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    LfRcnn,
    MnRcnn,
    MnRcnnWt,
}

impl ModelKind {
    pub const ALL: [ModelKind; 3] = [ModelKind::LfRcnn, ModelKind::MnRcnn, ModelKind::MnRcnnWt];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::LfRcnn => "lf_rcnn",
            ModelKind::MnRcnn => "mn_rcnn",
            ModelKind::MnRcnnWt => "mn_rcnn_wt",
        }
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown model '{s}' (expected lf_rcnn, mn_rcnn or mn_rcnn_wt)")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub d_img: usize,
    pub encoder: EncoderConfig,
    pub decoder: DecoderConfig,
}

impl ModelConfig {
    /// Default architecture for `kind` with hidden width `hidden` (and
    /// context width equal to it).
    pub fn new(kind: ModelKind, vocab_size: usize, embed_dim: usize, d_img: usize, hidden: usize) -> Self {
        let encoder = match kind {
            ModelKind::LfRcnn => EncoderConfig::late_fusion(hidden),
            ModelKind::MnRcnn | ModelKind::MnRcnnWt => EncoderConfig::memory_network(hidden),
        };
        let variant = match kind {
            ModelKind::MnRcnnWt => DecoderVariant::Gated,
            _ => DecoderVariant::Dot,
        };
        ModelConfig {
            kind,
            vocab_size,
            embed_dim,
            d_img,
            encoder,
            decoder: DecoderConfig {
                variant,
                candidate_rnn: encoder.rnn(),
                score_width: encoder.output_dim,
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        self.decoder.validate()?;
        if self.vocab_size < 2 || self.embed_dim == 0 || self.d_img == 0 {
            return Err(Error::Config("vocab_size >= 2, embed_dim >= 1 and d_img >= 1 required".into()));
        }
        if self.decoder.score_width != self.encoder.output_dim {
            return Err(Error::Config(format!(
                "decoder score_width {} differs from encoder output_dim {}",
                self.decoder.score_width, self.encoder.output_dim
            )));
        }
        let expected_encoder = match self.kind {
            ModelKind::LfRcnn => EncoderKind::LateFusion,
            _ => EncoderKind::MemoryNetwork,
        };
        if self.encoder.kind != expected_encoder {
            return Err(Error::Config(format!("{} requires a {:?} encoder", self.kind, expected_encoder)));
        }
        if self.kind == ModelKind::MnRcnnWt && self.decoder.variant == DecoderVariant::Dot {
            return Err(Error::Config("mn_rcnn_wt requires a gated decoder variant".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EncoderParams {
    Lf(LfParams),
    Mn(MnParams),
}

#[derive(Debug, Clone, Copy)]
pub struct RoundVars {
    pub context: ContextVars,
    pub scores: ScoreVars,
}

/// Parameters plus the layout that addresses them.
#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamSet,
    embedding: ParamId,
    encoder: EncoderParams,
    decoder: DecoderParams,
}

impl Model {
    fn build<R: Rng>(config: &ModelConfig, embedding: Value, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let mut params = ParamSet::new();
        let emb = params.add("embedding", embedding)?;
        let encoder = match config.encoder.kind {
            EncoderKind::LateFusion => {
                EncoderParams::Lf(LfParams::init(&mut params, &config.encoder, config.embed_dim, config.d_img, rng)?)
            }
            EncoderKind::MemoryNetwork => {
                EncoderParams::Mn(MnParams::init(&mut params, &config.encoder, config.embed_dim, config.d_img, rng)?)
            }
        };
        let decoder = DecoderParams::init(&mut params, &config.decoder, config.embed_dim, rng)?;
        Ok(Model {
            config: *config,
            params,
            embedding: emb,
            encoder,
            decoder,
        })
    }

    /// Fresh parameters. The embedding matrix is copied from `embedding`;
    /// its trainability follows the encoder config.
    pub fn init<R: Rng>(config: &ModelConfig, embedding: &EmbeddingInit, rng: &mut R) -> Result<Self> {
        if embedding.dim != config.embed_dim || embedding.rows() != config.vocab_size {
            return Err(Error::Config(format!(
                "embedding is {}x{}, model expects {}x{}",
                embedding.rows(),
                embedding.dim,
                config.vocab_size,
                config.embed_dim
            )));
        }
        let value = Value::new(
            embedding.matrix.clone(),
            Shape::matrix(config.vocab_size, config.embed_dim),
            config.encoder.embed_trainable,
        )?;
        Self::build(config, value, rng)
    }

    /// Rebinds previously saved parameters. Names and shapes must match the
    /// layout `config` produces.
    pub fn from_params(config: &ModelConfig, params: ParamSet) -> Result<Self> {
        let placeholder = Value::zeros(
            Shape::matrix(config.vocab_size, config.embed_dim),
            config.encoder.embed_trainable,
        );
        let mut model = Self::build(config, placeholder, &mut ChaCha8Rng::seed_from_u64(0))?;
        if params.len() != model.params.len() {
            return Err(Error::Checkpoint(format!(
                "{} parameter arrays, layout expects {}",
                params.len(),
                model.params.len()
            )));
        }
        for ((_, name, v), (_, want_name, want)) in params.iter().zip(model.params.iter()) {
            if name != want_name || v.shape != want.shape || v.requires_grad != want.requires_grad {
                return Err(Error::Checkpoint(format!(
                    "parameter '{name}' {} does not match layout '{want_name}' {}",
                    v.shape, want.shape
                )));
            }
        }
        model.params = params;
        Ok(model)
    }

    pub fn embedding(&self) -> ParamId {
        self.embedding
    }

    pub fn embedding_matrix(&self) -> &[f64] {
        &self.params.get(self.embedding).data
    }

    pub fn encoder_params(&self) -> &EncoderParams {
        &self.encoder
    }

    pub fn decoder_params(&self) -> &DecoderParams {
        &self.decoder
    }

    /// Builds the forward graph for one round. `g` must borrow `self.params`.
    pub fn forward(
        &self,
        g: &mut Graph<'_>,
        dialog: &Dialog,
        round: usize,
        features: &ObjectFeatureSet,
    ) -> Result<RoundVars> {
        let r = dialog
            .rounds
            .get(round)
            .ok_or_else(|| Error::shape(format!("round {round} of {}", dialog.rounds.len())))?;
        if features.d_img != self.config.d_img {
            return Err(Error::shape(format!(
                "image {} has feature width {}, model expects {}",
                features.image_id, features.d_img, self.config.d_img
            )));
        }
        let history_concat = dialog.history_concat(round);
        let history_rounds = dialog.history_rounds(round);
        let input = EncoderInput {
            question: &r.question,
            caption: &dialog.caption,
            history_concat: &history_concat,
            history_rounds: &history_rounds,
            features,
        };
        let emb = g.param(self.embedding);
        let context = match &self.encoder {
            EncoderParams::Lf(p) => lf_encode(g, &input, emb, p)?,
            EncoderParams::Mn(p) => mn_encode(g, &input, emb, p)?,
        };
        let cands = encode_candidates(g, &r.candidates, emb, &self.decoder)?;
        let scores = self.decoder.score(g, context.vector, cands)?;
        Ok(RoundVars { context, scores })
    }

    /// `-log p(gt)` for one round.
    pub fn loss(&self, g: &mut Graph<'_>, dialog: &Dialog, round: usize, features: &ObjectFeatureSet) -> Result<Var> {
        let vars = self.forward(g, dialog, round, features)?;
        round_loss(g, &vars.scores, dialog.rounds[round].gt_index)
    }

    pub fn score_round(&self, dialog: &Dialog, round: usize, features: &ObjectFeatureSet) -> Result<RoundScores> {
        let mut g = Graph::new(&self.params);
        let vars = self.forward(&mut g, dialog, round, features)?;
        Ok(vars.scores.read(&g))
    }

    pub fn encode(&self, dialog: &Dialog, round: usize, features: &ObjectFeatureSet) -> Result<EncodedContext> {
        let mut g = Graph::new(&self.params);
        let vars = self.forward(&mut g, dialog, round, features)?;
        Ok(vars.context.read(&g))
    }
}
