//! Training loop, checkpoints and prediction.

mod adam;
mod checkpoint;

use std::path::PathBuf;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use adam::{Adam, AdamSettings};
pub use checkpoint::{Checkpoint, EpochStats, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};

use crate::data::{batch_iter, Dataset, FeatureStore};
use crate::diffcore::{Graph, ParamGrads};
use crate::error::{Error, Result};
use crate::metrics::evaluate;
use crate::model::{Model, ModelConfig, ModelKind};
use crate::predictions::{PredictionSet, RoundPrediction};
use crate::vocab::{apply_remap, load_pretrained, EmbeddingInit, PretrainedVectors, Provenance, RemapTable, Vocabulary};

/// Input locations, recorded for reproducibility. The trainer itself only
/// sees loaded data.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainPaths {
    pub data: Option<PathBuf>,
    pub features: Option<PathBuf>,
    pub vocab: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
    pub remap: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub model: ModelKind,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub adam_betas: (f64, f64),
    pub adam_eps: f64,
    pub grad_clip_norm: f64,
    pub seed: u64,
    /// Evaluate on the training set every this many epochs (and after the
    /// last one). 0 evaluates only after the last epoch.
    pub eval_every: usize,
    pub hidden: usize,
    pub embed_dim: usize,
    /// Overrides the model's default embedding trainability.
    pub embed_trainable: Option<bool>,
    pub paths: TrainPaths,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            model: ModelKind::LfRcnn,
            epochs: 20,
            batch_size: 20,
            learning_rate: 1e-3,
            adam_betas: (0.9, 0.999),
            adam_eps: 1e-8,
            grad_clip_norm: 5.0,
            seed: 0,
            eval_every: 0,
            hidden: 8,
            embed_dim: 16,
            embed_trainable: None,
            paths: TrainPaths::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if self.epochs == 0 {
            return bad("epochs must be >= 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1");
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be finite and >= 0");
        }
        let (b1, b2) = self.adam_betas;
        if !((0.0..1.0).contains(&b1) && (0.0..1.0).contains(&b2)) {
            return bad("adam_betas must lie in [0, 1)");
        }
        if !(self.adam_eps > 0.0) || !(self.grad_clip_norm > 0.0) {
            return bad("adam_eps and grad_clip_norm must be > 0");
        }
        if self.hidden == 0 || self.embed_dim == 0 {
            return bad("hidden and embed_dim must be >= 1");
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamSettings {
        AdamSettings {
            learning_rate: self.learning_rate,
            betas: self.adam_betas,
            eps: self.adam_eps,
        }
    }

    /// Model layout for a vocabulary of `vocab_size` and `d_img`-wide features.
    pub fn model_config(&self, vocab_size: usize, d_img: usize) -> ModelConfig {
        let mut mc = ModelConfig::new(self.model, vocab_size, self.embed_dim, d_img, self.hidden);
        if let Some(t) = self.embed_trainable {
            mc.encoder.embed_trainable = t;
        }
        mc
    }
}

/// Seeded streams derived from `TrainConfig::seed`.
fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

const MODEL_STREAM: u64 = 0;
const SHUFFLE_STREAM: u64 = 1;
const EMBED_STREAM: u64 = 2;

/// Random embedding rows for runs without a vector file, drawn from the
/// run's seed.
pub fn random_embedding(cfg: &TrainConfig, vocab_len: usize) -> EmbeddingInit {
    let mc = cfg.model_config(vocab_len, 1);
    EmbeddingInit::random(vocab_len, cfg.embed_dim, mc.encoder.embed_trainable, &mut stream(cfg.seed, EMBED_STREAM))
}

/// Embedding rows from a vector file, with `table` applied to tokens the
/// file lacks. Rows for tokens still missing are drawn from the run's seed.
/// Returns the tokens left without a pretrained or remapped row.
pub fn pretrained_embedding(
    cfg: &TrainConfig,
    vocab: &Vocabulary,
    vectors: &PretrainedVectors,
    table: &RemapTable,
) -> Result<(EmbeddingInit, Vec<String>)> {
    if vectors.dim() != cfg.embed_dim {
        return Err(Error::Config(format!(
            "vector file has width {}, embed_dim is {}",
            vectors.dim(),
            cfg.embed_dim
        )));
    }
    let trainable = cfg.model_config(vocab.len(), 1).encoder.embed_trainable;
    let (init, missing) = load_pretrained(vectors, vocab, trainable, &mut stream(cfg.seed, EMBED_STREAM));
    let init = apply_remap(init, vocab, table, vectors)?;
    let still_missing = missing
        .into_iter()
        .filter(|t| vocab.get(t).is_some_and(|id| init.provenance[id as usize] == Provenance::Random))
        .collect();
    Ok((init, still_missing))
}

/// The model a run starts from.
pub fn init_model(cfg: &TrainConfig, vocab_len: usize, d_img: usize, embedding: &EmbeddingInit) -> Result<Model> {
    let mc = cfg.model_config(vocab_len, d_img);
    Model::init(&mc, embedding, &mut stream(cfg.seed, MODEL_STREAM))
}

pub struct TrainData<'a> {
    pub dataset: &'a Dataset,
    pub features: &'a FeatureStore,
    pub vocab: &'a Vocabulary,
    /// Initial embedding; random rows from the seed when absent.
    pub embedding: Option<EmbeddingInit>,
}

/// Loss and gradient of one batch: the mean of the per-round losses.
/// Rounds run in parallel and are summed in batch order.
pub fn batch_gradient(
    model: &Model,
    dataset: &Dataset,
    features: &FeatureStore,
    batch: &[crate::data::RoundRef],
) -> Result<(f64, ParamGrads)> {
    let parts = batch
        .par_iter()
        .map(|r| {
            let d = &dataset.dialogs[r.dialog];
            let f = features.get(d.image_id)?;
            let mut g = Graph::new(&model.params);
            let loss = model.loss(&mut g, d, r.round, f)?;
            Ok((g.scalar(loss), g.backward(loss)?))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut total = ParamGrads::empty(model.params.len());
    let mut loss = 0.0;
    for (l, g) in &parts {
        loss += l;
        total.add(g);
    }
    let n = batch.len() as f64;
    total.scale(1.0 / n);
    Ok((loss / n, total))
}

/// Runs `cfg.epochs` epochs and hands a checkpoint to `on_epoch` after each.
/// A non-finite loss or gradient stops training with `diverged@<step>`;
/// checkpoints already handed out are the last good state.
pub fn train(
    cfg: &TrainConfig,
    data: TrainData<'_>,
    mut on_epoch: impl FnMut(&Checkpoint) -> Result<()>,
) -> Result<Checkpoint> {
    cfg.validate()?;
    let TrainData {
        dataset,
        features,
        vocab,
        embedding,
    } = data;
    if dataset.dialogs.is_empty() {
        return Err(Error::Config("training set has no dialogs".into()));
    }
    features.check_pairing(dataset)?;
    let embedding = embedding.unwrap_or_else(|| random_embedding(cfg, vocab.len()));
    let mut model = init_model(cfg, vocab.len(), features.d_img, &embedding)?;
    let mut adam = Adam::new(cfg.adam(), &model.params);
    let mut shuffle = stream(cfg.seed, SHUFFLE_STREAM);
    let mut recorded = cfg.clone();
    recorded.paths.output_dir = None;

    let mut history = Vec::with_capacity(cfg.epochs);
    let mut last = None;
    for epoch in 1..=cfg.epochs {
        let mut loss_sum = 0.0;
        let mut rounds = 0usize;
        for batch in batch_iter(&dataset.dialogs, cfg.batch_size, shuffle.next_u64()) {
            let step = adam.steps() + 1;
            let (loss, mut grads) = match batch_gradient(&model, dataset, features, &batch) {
                Err(Error::NonFiniteLoss) => return Err(Error::Diverged { step }),
                other => other?,
            };
            if !loss.is_finite() || !grads.all_finite() {
                return Err(Error::Diverged { step });
            }
            grads.clip_global_norm(cfg.grad_clip_norm);
            adam.update(&mut model.params, &grads);
            loss_sum += loss * batch.len() as f64;
            rounds += batch.len();
        }
        let evaluate_now = epoch == cfg.epochs || (cfg.eval_every > 0 && epoch % cfg.eval_every == 0);
        let (train_r1, train_mrr) = if evaluate_now {
            let report = evaluate(&predict(&model, dataset, features)?, dataset)?;
            (Some(report.recall_at.r1), Some(report.mrr))
        } else {
            (None, None)
        };
        history.push(EpochStats {
            epoch,
            mean_loss: loss_sum / rounds as f64,
            train_r1,
            train_mrr,
        });
        let ckpt = Checkpoint {
            model: model.clone(),
            train: recorded.clone(),
            vocab: vocab.clone(),
            epoch,
            step: adam.steps(),
            history: history.clone(),
        };
        on_epoch(&ckpt)?;
        last = Some(ckpt);
    }
    Ok(last.expect("epochs >= 1"))
}

/// Log-probabilities for every round of `dataset`, ordered by
/// `(dialog_id, round)`. Rounds are scored in parallel.
pub fn predict(model: &Model, dataset: &Dataset, features: &FeatureStore) -> Result<PredictionSet> {
    for d in &dataset.dialogs {
        features.get(d.image_id)?;
    }
    let refs: Vec<(usize, usize)> = dataset
        .dialogs
        .iter()
        .enumerate()
        .flat_map(|(i, d)| (0..d.rounds.len()).map(move |t| (i, t)))
        .collect();
    let rounds = refs
        .par_iter()
        .map(|&(i, t)| {
            let d = &dataset.dialogs[i];
            let scores = model.score_round(d, t, features.get(d.image_id)?)?;
            Ok(RoundPrediction {
                dialog_id: d.dialog_id,
                round: t as u32 + 1,
                log_probs: scores.log_probs,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    PredictionSet::from_rounds(rounds)
}
